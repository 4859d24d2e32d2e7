use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stancecred::corpus::{load_dataset, prepare, DatasetFormat};
use stancecred::experiment::{self, ExperimentConfig};
use stancecred::features::Backend;
use stancecred::models::Architecture;
use stancecred::scoring::{ScoreRequest, Scorer};

#[derive(Parser)]
#[command(
    name = "stancecred",
    version,
    about = "Fake-news classification with headline/body stance features"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.architecture=lstm`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// A run's `model/` directory; defaults to the latest run under `output.dir`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Transformer checkpoint to use instead of the one recorded at training time.
    #[arg(long)]
    encoder_dir: Option<PathBuf>,
    /// Probability at or above which an article is labelled FAKE.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and split the dataset.
    Ingest,
    /// Fit the featurizer and fill the embedding cache.
    Featurize,
    /// Train and evaluate one configuration.
    Train,
    /// Score a labelled CSV with a trained model.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        /// Labelled CSV; defaults to `data.path`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Stance feature on versus off on one split.
    Ablate,
    /// Stratified k-fold cross-validation (`split.k` folds).
    Crossval,
    /// Every backend crossed with every architecture.
    Grid {
        #[arg(long, value_delimiter = ',', default_values_t = Backend::ALL)]
        backends: Vec<Backend>,
        #[arg(long, value_delimiter = ',', default_values_t = Architecture::ALL)]
        architectures: Vec<Architecture>,
    },
    /// Label articles from a CSV, or a single `--title`/`--text` pair.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, conflicts_with_all = ["title", "text"])]
        input: Option<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(long, requires = "input")]
        output: Option<PathBuf>,
        #[arg(long, requires = "text")]
        title: Option<String>,
        #[arg(long, requires = "title")]
        text: Option<String>,
    },
    /// Serve a trained model over HTTP.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let text = match &g.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    Ok(ExperimentConfig::with_overrides(&text, &g.overrides)?)
}

fn model_dir(cfg: &ExperimentConfig, arg: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = arg {
        return Ok(p.clone());
    }
    let latest = cfg.output.dir.join("latest");
    let rel = std::fs::read_to_string(&latest)
        .with_context(|| format!("no --model given and {} is missing", latest.display()))?;
    Ok(cfg.output.dir.join(rel.trim()).join("model"))
}

fn scorer(cfg: &ExperimentConfig, m: &ModelArgs) -> Result<Scorer> {
    let dir = model_dir(cfg, &m.model)?;
    Scorer::load(&dir, m.encoder_dir.as_deref(), m.threshold).with_context(|| format!("loading {}", dir.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn predict_csv(scorer: &Scorer, input: &Path, output: Option<&Path>) -> Result<()> {
    let articles = load_dataset(input, DatasetFormat::Csv)?;
    let sink: Box<dyn std::io::Write> = match output {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["id", "label", "probability_fake", "stance"])?;
    for a in &articles {
        let req = ScoreRequest {
            title: a.title.clone(),
            text: a.body.clone(),
        };
        match scorer.score(&req) {
            Ok(r) => w.write_record([
                a.id.clone(),
                r.label.to_string(),
                r.probability_fake.to_string(),
                r.stance.to_string(),
            ])?,
            Err(e) => {
                log::warn!("{}: {e}", a.id);
                w.write_record([a.id.as_str(), "", "", ""])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Ingest => print_json(&experiment::ingest(&cfg)?),
        Command::Featurize => {
            let dir = experiment::featurize_corpus(&cfg)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Train => {
            let r = experiment::run_experiment(&cfg)?;
            println!("{}", r.run_dir.display());
            print_json(&r.test)
        }
        Command::Evaluate { model, data } => {
            let s = scorer(&cfg, &model)?;
            let path = data.unwrap_or_else(|| cfg.data.path.clone());
            let articles = prepare(&load_dataset(&path, DatasetFormat::Csv)?);
            let cache = cfg.encoder.resolved_cache_dir(&cfg.output.dir.join("cache"));
            print_json(&s.evaluate(&articles, &cache)?)
        }
        Command::Ablate => {
            let r = experiment::run_ablation(&cfg)?;
            print_json(&serde_json::json!({
                "stance_on_test_accuracy": r.stance_on.test.accuracy.value,
                "stance_off_test_accuracy": r.stance_off.test.accuracy.value,
                "delta": r.test_accuracy_delta,
            }))
        }
        Command::Crossval => {
            let r = experiment::run_crossval(&cfg)?;
            print_json(&r.mean)
        }
        Command::Grid {
            backends,
            architectures,
        } => {
            let r = experiment::run_grid(&cfg, &backends, &architectures)?;
            print!("{}", std::fs::read_to_string(&r.table_csv)?);
            if r.rows.iter().all(|row| row.result.is_none()) {
                bail!("every grid cell failed");
            }
            Ok(())
        }
        Command::Predict {
            model,
            input,
            output,
            title,
            text,
        } => {
            let s = scorer(&cfg, &model)?;
            match (input, title, text) {
                (Some(input), _, _) => predict_csv(&s, &input, output.as_deref()),
                (None, Some(title), Some(text)) => print_json(&s.score(&ScoreRequest { title, text })?),
                _ => bail!("give --input, or both --title and --text"),
            }
        }
        Command::Serve { model, host, port } => {
            let s = Arc::new(scorer(&cfg, &model)?);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("bad address {host}:{port}"))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(stancecred_serve::serve(s, addr))?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
