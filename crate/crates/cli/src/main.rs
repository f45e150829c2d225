use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use carp_core::corpus::{load_reviews, InputFormat, PreprocessConfig, SplitConfig};
use carp_core::evaluation::{summarize, t_test};
use carp_core::explain::{ratio_csv, ratio_report, render_text};
use carp_core::training::{sweep_configs, LogWriter, SweepParam};
use carp_core::{
    evaluate, explain, Checkpoint, ExplainOptions, PreparedDataset, RoutingKind, SplitKind,
    TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "carp", version, about = "Capsule-based review rating prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a review file into a dataset directory.
    Prepare(PrepareArgs),
    /// Train one model and write its best checkpoint.
    Train(TrainArgs),
    /// Test-set MSE over one or more checkpoints, as JSON.
    Eval(EvalArgs),
    /// Explain predictions for user-item pairs.
    Explain(ExplainArgs),
    /// Mean c_pos/c_neg per coupling rank, as CSV.
    RatioReport(RatioArgs),
    /// Train one model per value of a hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "amazon-jsonl")]
    format: InputFormat,
    #[arg(long)]
    out: PathBuf,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 300)]
    doc_cap: usize,
    /// Sentiment threshold; ratings above it are positive.
    #[arg(long, default_value_t = 3.0)]
    pi: f64,
    #[arg(long)]
    keep_stopwords: bool,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
}

/// Values given here override the config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    routing: Option<RoutingKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    keep_prob: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field {
                    cfg.$($target)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(routing => routing);
        set!(epochs => max_epochs);
        set!(patience => patience);
        set!(batch_size => batch_size);
        set!(learning_rate => learning_rate);
        set!(lambda => loss.lambda);
        set!(slots => slots);
        set!(iterations => iterations);
        set!(embed_dim => embed_dim);
        set!(filters => filters);
        set!(latent => latent);
        set!(keep_prob => keep_prob);
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Glob over checkpoint directories.
    #[arg(long)]
    runs: Option<String>,
    /// Second group of checkpoints for a two-sample t-test.
    #[arg(long)]
    compare: Option<String>,
    #[arg(long, default_value = "test")]
    split: SplitKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required = true)]
    user: Vec<String>,
    #[arg(long, required = true)]
    item: Vec<String>,
    #[arg(long, default_value_t = 30)]
    topk: usize,
    #[arg(long, default_value_t = 3)]
    top_units: usize,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
    /// Directory for explanations.json and explanations.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatioArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values; the usual grid when omitted.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => run_explain(a),
        Command::RatioReport(a) => ratio(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn load_data(dir: &Path) -> Result<PreparedDataset> {
    PreparedDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_checkpoint(dir: &Path, data: &PreparedDataset) -> Result<Checkpoint> {
    Checkpoint::load_for(dir, &data.meta.vocab_hash).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let corpus = load_reviews(&a.input, a.format)?;
    info!("{} reviews read from {}", corpus.len(), a.input.display());
    let pre = PreprocessConfig {
        vocab_size: a.vocab_size,
        doc_cap: a.doc_cap,
        remove_stopwords: !a.keep_stopwords,
        ..PreprocessConfig::default()
    };
    let split = SplitConfig {
        seed: a.seed,
        pi: a.pi,
        test_fraction: a.test_fraction,
        validation_fraction: a.validation_fraction,
    };
    let data = PreparedDataset::prepare(&corpus, &pre, &split)?;
    data.save(&a.out)?;
    println!("{}", serde_json::to_string_pretty(&data.stats)?);
    Ok(())
}

fn train_config(file: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Trains into `out` and returns the best checkpoint.
fn train_into(data: &PreparedDataset, cfg: &TrainConfig, out: &Path) -> Result<Checkpoint> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let mut log = LogWriter::create(&out.join("train_log.csv"))?;
    let mut write_err = None;
    let outcome = carp_core::train(data, cfg, |r| {
        info!(
            "epoch {:>3}  loss {:.5}  L_sqr {:.5}  L_stm {:.5}  val MSE {:.5}  {:.1}s",
            r.epoch, r.train_loss, r.sqr, r.stm, r.val_mse, r.seconds
        );
        if let Err(e) = log.write(r) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    outcome.best.save(out)?;
    info!(
        "best epoch {} (val MSE {:.5}){}",
        outcome.best.epoch,
        outcome.best.val_mse,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    Ok(outcome.best)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), &a.overrides)?;
    let data = load_data(&a.data)?;
    train_into(&data, &cfg, &a.out)?;
    Ok(())
}

fn expand(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob `{pattern}`"))? {
        let p = entry?;
        if p.join("manifest.json").is_file() {
            dirs.push(p);
        }
    }
    if dirs.is_empty() {
        bail!("no checkpoints match `{pattern}`");
    }
    Ok(dirs)
}

fn eval(a: EvalArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let mut dirs = a.checkpoint.clone();
    if let Some(p) = &a.runs {
        dirs.extend(expand(p)?);
    }
    if dirs.is_empty() {
        bail!("give --checkpoint or --runs");
    }
    let score = |dirs: &[PathBuf]| -> Result<Vec<_>> {
        dirs.iter()
            .map(|d| {
                let ck = load_checkpoint(d, &data)?;
                Ok(evaluate(&ck, &data, a.split, &d.display().to_string())?)
            })
            .collect()
    };
    let mut report = summarize(score(&dirs)?);
    if let Some(p) = &a.compare {
        let other = score(&expand(p)?)?;
        let xs: Vec<f64> = report.runs.iter().map(|r| r.mse).collect();
        let ys: Vec<f64> = other.iter().map(|r| r.mse).collect();
        report.comparison = Some(t_test(&xs, &ys)?);
    }
    emit(&(serde_json::to_string_pretty(&report)? + "\n"), a.out.as_deref())
}

fn run_explain(a: ExplainArgs) -> Result<()> {
    if a.user.len() != a.item.len() {
        bail!("--user and --item must be given the same number of times");
    }
    let data = load_data(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint, &data)?;
    let requests: Vec<(String, String)> = a.user.iter().cloned().zip(a.item.iter().cloned()).collect();
    let reference: Vec<(u32, u32)> = data.split.examples(SplitKind::Test).iter().map(|e| (e.user, e.item)).collect();
    let opts = ExplainOptions {
        top_k: a.topk,
        top_units: a.top_units,
    };
    let reports = explain(&ck.model, &data, &requests, &reference, &opts)?;
    let json = serde_json::to_string_pretty(&reports)? + "\n";
    let text: String = reports.iter().map(render_text).collect::<Vec<_>>().join("\n");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("explanations.json"), &json)?;
        fs::write(dir.join("explanations.txt"), &text)?;
    }
    print!("{}", if a.json { &json } else { &text });
    Ok(())
}

fn ratio(a: RatioArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint, &data)?;
    let rows = ratio_report(&ck.model, &data, a.split)?;
    emit(&ratio_csv(&rows)?, a.out.as_deref())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = train_config(a.config.as_deref(), &a.overrides)?;
    let values = if a.values.is_empty() { a.param.default_values() } else { a.values.clone() };
    let data = load_data(&a.data)?;
    let mut table = String::from("param,value,epoch,val_mse,test_mse\n");
    for (value, cfg) in sweep_configs(&base, a.param, &values)? {
        let dir = a.out.join(format!("{}={value}", a.param.as_str()));
        info!("{} = {value}", a.param.as_str());
        let best = train_into(&data, &cfg, &dir)?;
        let test = evaluate(&best, &data, SplitKind::Test, &dir.display().to_string())?;
        table.push_str(&format!(
            "{},{value},{},{},{}\n",
            a.param.as_str(),
            best.epoch,
            best.val_mse,
            test.mse
        ));
    }
    fs::write(a.out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}
