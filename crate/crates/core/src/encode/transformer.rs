use candle_core::{DType, Result, Tensor, D};
use candle_nn::VarBuilder;
use serde::Deserialize;

const NORM_EPS: f64 = 1e-12;
/// Added to attention scores at padded keys; `exp` of it underflows to exactly 0.
const MASK_PENALTY: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

/// The subset of a distilled-transformer `config.json` the forward pass needs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub max_position_embeddings: usize,
    #[serde(default)]
    pub pad_token_id: u32,
}

impl TransformerConfig {
    /// Every parameter name and shape, in load order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let mut out = vec![
            (
                "embeddings.word_embeddings.weight".to_string(),
                vec![self.vocab_size, d],
            ),
            (
                "embeddings.position_embeddings.weight".to_string(),
                vec![self.max_position_embeddings, d],
            ),
            ("embeddings.LayerNorm.weight".to_string(), vec![d]),
            ("embeddings.LayerNorm.bias".to_string(), vec![d]),
        ];
        for i in 0..self.n_layers {
            let p = format!("transformer.layer.{i}");
            for lin in ["q_lin", "k_lin", "v_lin", "out_lin"] {
                out.push((format!("{p}.attention.{lin}.weight"), vec![d, d]));
                out.push((format!("{p}.attention.{lin}.bias"), vec![d]));
            }
            for norm in ["sa_layer_norm", "output_layer_norm"] {
                out.push((format!("{p}.{norm}.weight"), vec![d]));
                out.push((format!("{p}.{norm}.bias"), vec![d]));
            }
            out.push((format!("{p}.ffn.lin1.weight"), vec![self.hidden_dim, d]));
            out.push((format!("{p}.ffn.lin1.bias"), vec![self.hidden_dim]));
            out.push((format!("{p}.ffn.lin2.weight"), vec![d, self.hidden_dim]));
            out.push((format!("{p}.ffn.lin2.bias"), vec![d]));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    fn load(vb: &VarBuilder, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: vb.get((output, input), "weight")?,
            b: vb.get(output, "bias")?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.broadcast_matmul(&self.w.t()?)?.broadcast_add(&self.b)
    }
}

/// Layer normalisation from elementary ops, so gradients reach every input.
#[derive(Debug, Clone)]
struct Norm {
    w: Tensor,
    b: Tensor,
}

impl Norm {
    fn load(vb: &VarBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            w: vb.get(dim, "weight")?,
            b: vb.get(dim, "bias")?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let centred = x.broadcast_sub(&x.mean_keepdim(D::Minus1)?)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        centred
            .broadcast_div(&(var + NORM_EPS)?.sqrt()?)?
            .broadcast_mul(&self.w)?
            .broadcast_add(&self.b)
    }
}

#[derive(Debug, Clone)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    sa_norm: Norm,
    lin1: Linear,
    lin2: Linear,
    out_norm: Norm,
}

/// Post-norm bidirectional transformer encoder with learned positions.
#[derive(Debug, Clone)]
pub struct DistilBert {
    config: TransformerConfig,
    word: Tensor,
    position: Tensor,
    emb_norm: Norm,
    blocks: Vec<Block>,
}

impl DistilBert {
    pub fn load(vb: VarBuilder, config: &TransformerConfig) -> Result<Self> {
        if config.n_heads == 0 || !config.dim.is_multiple_of(config.n_heads) {
            candle_core::bail!("dim {} is not divisible by {} heads", config.dim, config.n_heads);
        }
        let (d, h) = (config.dim, config.hidden_dim);
        let emb = vb.pp("embeddings");
        let word = emb.pp("word_embeddings").get((config.vocab_size, d), "weight")?;
        let position = emb
            .pp("position_embeddings")
            .get((config.max_position_embeddings, d), "weight")?;
        let emb_norm = Norm::load(&emb.pp("LayerNorm"), d)?;
        let blocks = (0..config.n_layers)
            .map(|i| {
                let l = vb.pp(format!("transformer.layer.{i}"));
                let a = l.pp("attention");
                Ok(Block {
                    q: Linear::load(&a.pp("q_lin"), d, d)?,
                    k: Linear::load(&a.pp("k_lin"), d, d)?,
                    v: Linear::load(&a.pp("v_lin"), d, d)?,
                    out: Linear::load(&a.pp("out_lin"), d, d)?,
                    sa_norm: Norm::load(&l.pp("sa_layer_norm"), d)?,
                    lin1: Linear::load(&l.pp("ffn").pp("lin1"), d, h)?,
                    lin2: Linear::load(&l.pp("ffn").pp("lin2"), h, d)?,
                    out_norm: Norm::load(&l.pp("output_layer_norm"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            word,
            position,
            emb_norm,
            blocks,
        })
    }

    /// Final hidden states `[b, L, dim]` for ids `[b, L]`. `mask` is `[b, L]`
    /// `f32` with 1 on real tokens; padded keys receive no attention.
    pub fn forward(&self, ids: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        let heads = self.config.n_heads;
        let hd = self.config.dim / heads;
        let words = self
            .word
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, l, self.config.dim))?;
        let pos = self.position.narrow(0, 0, l)?;
        let mut x = self.emb_norm.forward(&words.broadcast_add(&pos)?)?;
        let bias = match mask {
            Some(m) => Some(
                m.to_dtype(DType::F32)?
                    .affine(-MASK_PENALTY, MASK_PENALTY)?
                    .reshape((b, 1, 1, l))?,
            ),
            None => None,
        };
        let split = |t: Tensor| -> Result<Tensor> { t.reshape((b, l, heads, hd))?.transpose(1, 2)?.contiguous() };
        for blk in &self.blocks {
            let q = (split(blk.q.forward(&x)?)? / (hd as f64).sqrt())?;
            let k = split(blk.k.forward(&x)?)?;
            let v = split(blk.v.forward(&x)?)?;
            let mut scores = q.matmul(&k.t()?.contiguous()?)?;
            if let Some(bias) = &bias {
                scores = scores.broadcast_add(bias)?;
            }
            let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let ctx = weights
                .matmul(&v)?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b, l, self.config.dim))?;
            x = blk.sa_norm.forward(&(blk.out.forward(&ctx)? + &x)?)?;
            let hidden = blk.lin1.forward(&x)?;
            let hidden = match self.config.activation {
                Activation::Gelu => hidden.gelu_erf()?,
                Activation::Relu => hidden.relu()?,
            };
            x = blk.out_norm.forward(&(blk.lin2.forward(&hidden)? + &x)?)?;
        }
        Ok(x)
    }
}
