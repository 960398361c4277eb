use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::synth::{generate_synthetic, Dataset};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::{linear_probe, train, Autoencoder, TrainLog};
use crate::numerics::RngStream;
use crate::weights::cosine;

pub const METRICS: [&str; 3] = ["probe_accuracy", "denoise_cosine", "final_train_loss"];
pub const CSV_HEADER: &str = "loss,sigma,seed,metric,value";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub loss: LossKind,
    pub sigma: f64,
    pub seed: u64,
    pub metric: &'static str,
    pub value: f64,
}

/// Rows plus any warnings or divergence diagnostics raised along the way.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub diagnostics: Vec<String>,
}

/// Stream for a cell's data, shared by every loss at the same seed.
pub fn data_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0).derive_named("data")
}

/// Stream for a cell's initial weights and training draws.
pub fn model_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0).derive_named("model")
}

/// Trains a fresh autoencoder on the noisy training split only.
pub fn fit(
    cfg: &ExperimentConfig,
    kind: LossKind,
    noisy: &[crate::SignalVec],
    seed: u64,
) -> Result<(Autoencoder<f64>, TrainLog)> {
    let root = model_stream(seed);
    let net = Autoencoder::random(&cfg.layer_dims(), &cfg.activations(), &mut root.derive_named("init"))?;
    train(
        net,
        noisy,
        &cfg.loss_config(kind)?,
        &cfg.train_config(),
        &root.derive_named("train"),
    )
}

/// Linear-probe accuracy on frozen codes of the noisy inputs.
pub fn probe_accuracy(cfg: &ExperimentConfig, net: &Autoencoder<f64>, train: &Dataset, test: &Dataset) -> Result<f64> {
    let codes = |d: &Dataset| -> Result<Vec<Vec<f64>>> {
        d.noisy.iter().map(|x| Ok(net.encode(x)?.into_vec())).collect()
    };
    linear_probe(
        &codes(train)?,
        &train.labels,
        &codes(test)?,
        &test.labels,
        &cfg.probe_config(),
    )
}

/// Mean cosine between reconstructions and the clean signals.
pub fn denoise_cosine(net: &Autoencoder<f64>, data: &Dataset) -> Result<f64> {
    let clean = data.clean.for_evaluation();
    let mut total = 0.0;
    for (x, s) in data.noisy.iter().zip(clean) {
        total += cosine(net.reconstruct(x)?.as_slice(), s.as_slice());
    }
    Ok(total / data.len() as f64)
}

fn run_cell(cfg: &ExperimentConfig, kind: LossKind, sigma: f64, seed: u64) -> Result<(Vec<f64>, Vec<String>)> {
    let task = generate_synthetic(cfg, sigma, &data_stream(seed))?;
    let mut notes = task.warnings.clone();
    match fit(cfg, kind, &task.train.noisy, seed) {
        Ok((net, log)) => {
            let probe = probe_accuracy(cfg, &net, &task.train, &task.test)?;
            let cos = denoise_cosine(&net, &task.test)?;
            Ok((vec![probe, cos, log.last().unwrap_or(f64::NAN)], notes))
        }
        Err(e @ Error::Diverged { .. }) => {
            notes.push(format!("loss={kind} sigma={sigma} seed={seed}: {e}"));
            Ok((vec![f64::NAN; METRICS.len()], notes))
        }
        Err(e) => Err(e),
    }
}

/// Every `(loss, sigma, seed)` cell, run in parallel.
///
/// Rows come back ordered by the config's loss list, then its sigma list,
/// then its seed list, then metric. A diverged cell yields NaN metrics and
/// a diagnostic; other errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let seeds = cfg
        .seeds
        .as_deref()
        .ok_or_else(|| Error::Config("seeds must be set".into()))?;
    let cells: Vec<(LossKind, f64, u64)> = cfg
        .losses
        .iter()
        .flat_map(|&k| cfg.sigmas.iter().flat_map(move |&s| seeds.iter().map(move |&seed| (k, s, seed))))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(k, s, seed)| run_cell(cfg, k, s, seed))
        .collect::<Result<_>>()?;
    let mut out = ExperimentOutput::default();
    for (&(loss, sigma, seed), (values, notes)) in cells.iter().zip(results) {
        for (metric, value) in METRICS.iter().zip(values) {
            out.rows.push(ResultRow {
                loss,
                sigma,
                seed,
                metric,
                value,
            });
        }
        for n in notes {
            if !out.diagnostics.contains(&n) {
                out.diagnostics.push(n);
            }
        }
    }
    Ok(out)
}

/// CSV text with a `# config-hash:` comment line and fixed columns.
pub fn results_csv(rows: &[ResultRow], config_hash: &str) -> String {
    let mut out = format!("# config-hash: {config_hash}\n{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{:?},{},{},{:.16e}", r.loss, r.sigma, r.seed, r.metric, r.value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            seeds: Some(vec![0, 1]),
            n_train: 24,
            n_test: 12,
            height: 4,
            width: 4,
            classes: 2,
            hidden: vec![8, 3, 8],
            epochs: 2,
            batch_size: 8,
            sigmas: vec![0.3],
            losses: vec![LossKind::Cs, LossKind::Dcs],
            ..Default::default()
        }
    }

    #[test]
    fn rows_ordered_and_complete() {
        let cfg = tiny();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2 * 2 * METRICS.len());
        assert_eq!(out.rows[0].loss, LossKind::Cs);
        assert_eq!(out.rows[0].seed, 0);
        assert_eq!(out.rows[0].metric, "probe_accuracy");
        assert_eq!(out.rows.last().unwrap().loss, LossKind::Dcs);
        assert!(out.rows.iter().all(|r| r.value.is_finite()));
    }

    #[test]
    fn csv_is_deterministic() {
        let cfg = tiny();
        let a = results_csv(&run_experiment(&cfg).unwrap().rows, &cfg.hash());
        let b = results_csv(&run_experiment(&cfg).unwrap().rows, &cfg.hash());
        assert_eq!(a, b);
        assert!(a.starts_with(&format!("# config-hash: {}\n{CSV_HEADER}\n", cfg.hash())));
    }

    #[test]
    fn missing_seeds_rejected() {
        let cfg = ExperimentConfig { seeds: None, ..tiny() };
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn divergence_gives_nan_cell() {
        let cfg = ExperimentConfig {
            optimizer: crate::model::OptimizerKind::Sgd,
            learning_rate: 1e300,
            losses: vec![LossKind::Mse],
            ..tiny()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.rows.iter().all(|r| r.value.is_nan()));
        assert!(out.diagnostics.iter().any(|d| d.contains("diverged")), "{:?}", out.diagnostics);
    }
}
