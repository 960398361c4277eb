use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dcs_core::experiment::{
    denoise_rows, fit, format_matrix, generate_synthetic, read_column, read_matrix, results_csv, run_experiment,
    ExperimentConfig,
};
use dcs_core::losses::LossKind;
use dcs_core::model::Checkpoint;
use dcs_core::verify::{all_asserted_passed, parse_selection, run_checks};
use dcs_core::weights::{estimate_c, estimate_k_mc, k_closed_form, DEFAULT_ORACLE_SAMPLES};
use dcs_core::{RngStream, SignalVec};

/// Environment variable consulted when neither a flag nor the config sets a seed.
const SEED_ENV: &str = "DCS_SEED";

#[derive(Parser)]
#[command(name = "dcs", version, about = "Denoising cosine-similarity loss toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the SN ratio and cosine weight of a masked pair.
    Estimate(EstimateArgs),
    /// Run Monte Carlo verification checks.
    Verify(VerifyArgs),
    /// Train an autoencoder on a noisy data file.
    Train(TrainArgs),
    /// Run the (loss, sigma, seed) grid of a config and write result rows.
    RunExperiment(RunArgs),
    /// Reconstruct every row of a data file with a trained model.
    Denoise(DenoiseArgs),
    /// Write a synthetic dataset as headerless CSV files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Noisy vector, one value per line.
    #[arg(long)]
    x: PathBuf,
    /// Masked counterpart, one value per line.
    #[arg(long = "x-tilde")]
    x_tilde: PathBuf,
    /// Optional 0/1 mask, one value per line; restricts both vectors to its support.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Monte Carlo draws for the weight.
    #[arg(long, default_value_t = DEFAULT_ORACLE_SAMPLES)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Check id, comma-separated ids, or `all`.
    #[arg(long, default_value = "all")]
    check: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Report file (JSON list); printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config file plus overrides shared by config-driven commands.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Noisy training rows (headerless CSV).
    #[arg(long)]
    data: PathBuf,
    /// Loss kind; defaults to the first entry of the config's `losses`.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Single seed; overrides the config's `seeds`.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; overrides the config's `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Result CSV; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Min-max rescale each reconstructed row to [0, 1].
    #[arg(long)]
    rescale: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for train/test noisy, clean and label files.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Flag, then config, then the environment.
fn resolve_seeds(flag: Option<Vec<u64>>, config: Option<Vec<u64>>) -> Result<Vec<u64>> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(vec![v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an integer"))?]),
        Err(_) => bail!("no seed given: pass --seed, set `seeds` in the config, or set {SEED_ENV}"),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    Ok(resolve_seeds(flag.map(|s| vec![s]), None)?[0])
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let mut x = read_column(&args.x)?;
    let mut xt = read_column(&args.x_tilde)?;
    if x.len() != xt.len() {
        bail!("x has {} values but x-tilde has {}", x.len(), xt.len());
    }
    if let Some(path) = &args.mask {
        let bits = read_column(path)?;
        if bits.len() != x.len() {
            bail!("mask has {} values but x has {}", bits.len(), x.len());
        }
        if bits.iter().any(|&b| b != 0.0 && b != 1.0) {
            bail!("mask values must be 0 or 1");
        }
        let keep = |v: Vec<f64>| -> Vec<f64> { v.into_iter().zip(&bits).filter(|(_, &b)| b == 1.0).map(|(a, _)| a).collect() };
        x = keep(x);
        xt = keep(xt);
    }
    let seed = resolve_seed(args.seed)?;
    let c_hat = estimate_c(&x, &xt)?;
    let k = estimate_k_mc(&mut RngStream::new(seed, 0), c_hat, x.len(), args.samples)?;
    let out = json!({
        "dim": x.len(),
        "c_hat": c_hat,
        "k_hat": k.k_hat,
        "std_error": k.std_error,
        "n_samples": k.n_samples,
        "k_closed_form": k_closed_form(c_hat),
        "seed": seed,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let ids = parse_selection(&args.check)?;
    let seed = resolve_seed(args.seed)?;
    let reports = run_checks(&ids, seed)?;
    for r in &reports {
        let status = match (r.asserted, r.passed) {
            (false, _) => "info",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        eprintln!(
            "{status:4}  {:<45} statistic={:.6e} threshold={:.6e} ({:?})",
            r.check_id, r.statistic, r.threshold, r.direction
        );
    }
    let text = serde_json::to_string_pretty(&reports)?;
    match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(all_asserted_passed(&reports))
}

fn to_signals(rows: Vec<Vec<f64>>) -> Result<Vec<SignalVec>> {
    Ok(rows.into_iter().map(SignalVec::new).collect::<dcs_core::Result<_>>()?)
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let data = to_signals(read_matrix(&args.data)?)?;
    let Some(first) = data.first() else {
        bail!("{} has no rows", args.data.display());
    };
    if first.dim() != cfg.dim() {
        bail!(
            "data rows have {} values but the config grid is {}x{} = {}",
            first.dim(),
            cfg.height,
            cfg.width,
            cfg.dim()
        );
    }
    let kind = args.loss.or(cfg.losses.first().copied()).context("no loss kind")?;
    let seed = resolve_seeds(args.seed.map(|s| vec![s]), cfg.seeds.clone())?[0];
    let (net, log) = fit(&cfg, kind, &data, seed)?;
    let mut ck = Checkpoint::from_model(&net);
    ck.config_hash = Some(cfg.hash());
    ck.save(&args.out)?;
    if let Some(last) = log.last() {
        eprintln!("trained {kind} for {} epochs; final loss {last:.6}", log.epoch_loss.len());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    cfg.seeds = Some(resolve_seeds(args.seed.map(|s| vec![s]).or(args.seeds), cfg.seeds.clone())?);
    let out = args.out.or(cfg.output.clone()).context("no output path: pass --out or set `output`")?;
    cfg.output = Some(out.clone());
    let result = run_experiment(&cfg)?;
    for d in &result.diagnostics {
        eprintln!("warning: {d}");
    }
    fs::write(&out, results_csv(&result.rows, &cfg.hash())).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn denoise(args: DenoiseArgs) -> Result<()> {
    let net = Checkpoint::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?
        .into_model()?;
    let rows = read_matrix(&args.input)?;
    let out = denoise_rows(&net, &rows, args.rescale)?;
    fs::write(&args.output, format_matrix(out.iter().map(Vec::as_slice)))?;
    Ok(())
}

fn write_rows(path: &Path, rows: &[SignalVec]) -> Result<()> {
    fs::write(path, format_matrix(rows.iter().map(SignalVec::as_slice)))?;
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let seed = resolve_seeds(args.seed.map(|s| vec![s]), cfg.seeds.clone())?[0];
    let task = generate_synthetic(&cfg, args.sigma, &dcs_core::experiment::data_stream(seed))?;
    for w in &task.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&args.out_dir)?;
    for (name, split) in [("train", &task.train), ("test", &task.test)] {
        write_rows(&args.out_dir.join(format!("{name}_noisy.csv")), &split.noisy)?;
        write_rows(&args.out_dir.join(format!("{name}_clean.csv")), split.clean.for_evaluation())?;
        let labels: String = split.labels.iter().map(|y| format!("{y}\n")).collect();
        fs::write(args.out_dir.join(format!("{name}_labels.csv")), labels)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(a) => estimate(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::Train(a) => train(a).map(|_| true),
        Command::RunExperiment(a) => run(a).map(|_| true),
        Command::Denoise(a) => denoise(a).map(|_| true),
        Command::Generate(a) => generate(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
