//! Synthetic desk-scale experiments: config files, data generation, the
//! `(loss, sigma, seed)` grid runner and CSV input/output.

mod config;
mod io;
mod runner;
mod synth;

pub use config::{ExperimentConfig, MaskKind, NoiseKind};
pub use io::{denoise_rows, format_matrix, min_max_rescale, parse_matrix, read_column, read_matrix};
pub use runner::{
    data_stream, denoise_cosine, fit, model_stream, probe_accuracy, results_csv, run_experiment, ExperimentOutput,
    ResultRow, CSV_HEADER, METRICS,
};
pub use synth::{generate_synthetic, CleanSignals, Dataset, SyntheticTask};
