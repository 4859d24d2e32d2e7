use candle_core::{DType, Device, Result, Tensor, Var, D};
use candle_nn::{ops, VarMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Seeded parameter factory; every variable lands in `varmap`, trainable ones also in `trainable`.
pub(crate) struct Params<'a> {
    pub varmap: &'a VarMap,
    pub trainable: &'a mut Vec<Var>,
    pub rng: &'a mut ChaCha8Rng,
}

impl Params<'_> {
    fn register(&mut self, name: &str, t: Tensor, trainable: bool) -> Result<Tensor> {
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.varmap
            .data()
            .lock()
            .expect("varmap lock")
            .insert(name.to_string(), var.clone());
        if trainable {
            self.trainable.push(var);
        }
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], limit: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let vals: Vec<f32> = (0..n).map(|_| self.rng.random_range(-limit..=limit)).collect();
        let t = Tensor::from_vec(vals, shape, &Device::Cpu)?;
        self.register(name, t, true)
    }

    pub fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
        let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
        self.uniform(name, shape, limit)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::zeros(shape, DType::F32, &Device::Cpu)?;
        self.register(name, t, true)
    }

    pub fn constant(&mut self, name: &str, t: Tensor, trainable: bool) -> Result<Tensor> {
        self.register(name, t, trainable)
    }
}

/// Fully connected `x W + b`.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    w: Tensor,
    b: Tensor,
}

impl Dense {
    pub fn new(p: &mut Params, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: p.glorot(&format!("{name}.weight"), &[input, output], input, output)?,
            b: p.zeros(&format!("{name}.bias"), &[output])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.broadcast_add(&self.b)
    }
}

/// Single-direction LSTM. Positions whose mask is 0 carry the previous state through unchanged.
#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    b: Tensor,
    units: usize,
}

impl Lstm {
    pub fn new(p: &mut Params, name: &str, input: usize, units: usize) -> Result<Self> {
        let w_ih = p.glorot(&format!("{name}.w_ih"), &[input, 4 * units], input, 4 * units)?;
        let w_hh = p.glorot(&format!("{name}.w_hh"), &[units, 4 * units], units, 4 * units)?;
        // gate order i, f, g, o; forget gate starts open
        let mut bias = vec![0f32; 4 * units];
        bias[units..2 * units].fill(1.0);
        let b = p.constant(
            &format!("{name}.bias"),
            Tensor::from_vec(bias, 4 * units, &Device::Cpu)?,
            true,
        )?;
        Ok(Self { w_ih, w_hh, b, units })
    }

    /// Returns per-position states `[b, L, H]` and the final state `[b, H]`.
    pub fn forward(&self, xs: &Tensor, mask: &Tensor, reverse: bool) -> Result<(Tensor, Tensor)> {
        let (b, l, input) = xs.dims3()?;
        let h_units = self.units;
        let xw = xs
            .reshape((b * l, input))?
            .matmul(&self.w_ih)?
            .broadcast_add(&self.b)?
            .reshape((b, l, 4 * h_units))?;
        let mut h = Tensor::zeros((b, h_units), DType::F32, xs.device())?;
        let mut c = h.clone();
        let mut states = vec![None; l];
        let steps: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..l).rev())
        } else {
            Box::new(0..l)
        };
        for t in steps {
            let gates = (xw.narrow(1, t, 1)?.squeeze(1)? + h.matmul(&self.w_hh)?)?;
            let i = ops::sigmoid(&gates.narrow(1, 0, h_units)?)?;
            let f = ops::sigmoid(&gates.narrow(1, h_units, h_units)?)?;
            let g = gates.narrow(1, 2 * h_units, h_units)?.tanh()?;
            let o = ops::sigmoid(&gates.narrow(1, 3 * h_units, h_units)?)?;
            let c_new = ((&f * &c)? + (&i * &g)?)?;
            let h_new = (&o * c_new.tanh()?)?;
            let m = mask.narrow(1, t, 1)?;
            c = (&c + (c_new - &c)?.broadcast_mul(&m)?)?;
            h = (&h + (h_new - &h)?.broadcast_mul(&m)?)?;
            states[t] = Some(h.clone());
        }
        let states: Vec<Tensor> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        Ok((Tensor::stack(&states, 1)?, h))
    }
}

/// Additive attention: `score_t = v . tanh(W s_t + b)`, softmax over
/// unmasked positions, weighted sum of the states.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    w: Tensor,
    b: Tensor,
    v: Tensor,
}

impl AttentionPool {
    pub(crate) fn new(p: &mut Params, name: &str, input: usize, units: usize) -> Result<Self> {
        Ok(Self {
            w: p.glorot(&format!("{name}.w"), &[input, units], input, units)?,
            b: p.zeros(&format!("{name}.b"), &[units])?,
            v: p.glorot(&format!("{name}.v"), &[units, 1], units, 1)?,
        })
    }

    /// `w: [H, A]`, `b: [A]`, `v: [A, 1]`.
    pub fn from_tensors(w: Tensor, b: Tensor, v: Tensor) -> Self {
        Self { w, b, v }
    }

    /// `states: [b, L, H]`, `mask: [b, L]` (1 = attend). Returns `([b, H], weights [b, L])`.
    pub fn pool(&self, states: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, l, h) = states.dims3()?;
        let scores = states
            .reshape((b * l, h))?
            .matmul(&self.w)?
            .broadcast_add(&self.b)?
            .tanh()?
            .matmul(&self.v)?
            .reshape((b, l))?;
        let penalty = ((mask - 1.0)? * 1e9)?;
        let weights = ops::softmax(&(scores + penalty)?, D::Minus1)?;
        let pooled = states.broadcast_mul(&weights.unsqueeze(2)?)?.sum(1)?;
        Ok((pooled, weights))
    }
}

/// 1-d convolution over the sequence axis, `[b, L, C] -> [b, F, L - K + 1]`, rectified.
#[derive(Debug, Clone)]
pub(crate) struct Conv1d {
    w: Tensor,
    b: Tensor,
}

impl Conv1d {
    pub fn new(p: &mut Params, name: &str, channels: usize, filters: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            w: p.glorot(
                &format!("{name}.weight"),
                &[filters, channels, kernel],
                channels * kernel,
                filters * kernel,
            )?,
            b: p.zeros(&format!("{name}.bias"), &[filters])?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let x = xs.transpose(1, 2)?.contiguous()?;
        let y = x.conv1d(&self.w, 0, 1, 1, 1)?;
        y.broadcast_add(&self.b.reshape((1, (), 1))?)?.relu()
    }
}

/// Non-overlapping max pool over the last axis; a trailing partial window is dropped.
pub(crate) fn max_pool_last(x: &Tensor, window: usize) -> Result<Tensor> {
    let (b, f, l) = x.dims3()?;
    let out = l / window;
    x.narrow(2, 0, out * window)?.reshape((b, f, out, window))?.max(3)
}

/// Mean over positions with mask 1; `xs: [b, L, D]`, `mask: [b, L]`.
pub(crate) fn masked_mean(xs: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let summed = xs.broadcast_mul(&mask.unsqueeze(2)?)?.sum(1)?;
    let counts = mask.sum_keepdim(1)?.clamp(1.0, 1e30)?;
    summed.broadcast_div(&counts)
}

/// Inverted dropout with a host-side seeded mask.
pub(crate) fn dropout(x: &Tensor, rate: f32, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let n = x.elem_count();
    let mask: Vec<f32> = (0..n)
        .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    x.mul(&Tensor::from_vec(mask, x.shape(), x.device())?)
}
