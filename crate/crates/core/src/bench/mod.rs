//! Datasets, experiment configuration, sweeps and online traces.

mod config;
mod datasets;
mod seeds;
mod sweep;

pub use config::{log_grid, DatasetSpec, ExperimentConfig, Method};
pub use datasets::{
    generate_synthetic, load_categorical_csv, mushroom_bundle, onehot_features, synthetic_categorical,
    synthetic_temperature, temperature_bundle, CategoricalData, DatasetBundle, FeatureSource,
    KernelRecipe, SpectralFamily,
};
pub use seeds::derive_seed;
pub use sweep::{
    default_online_schedule, default_sgd_schedule, fit_predict, grid_search, realization_observations,
    run_online, run_sweep, run_sweep_with, sample_count, solver_seed, write_trace_csv, ExperimentResult,
    KernelCache, OnlineTrace, SweepSummary, TracePoint,
};

use crate::error::{Error, Result};
use crate::io::read_matrix_csv;

/// Builds the dataset described by `spec`. `seed` drives the generators.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<DatasetBundle> {
    let bundle = match spec {
        DatasetSpec::Synthetic { n, l, graph_p, eta } => generate_synthetic(*n, *l, *graph_p, *eta, seed)?,
        DatasetSpec::Temperature { matrix, coords, eta } => {
            let f = read_matrix_csv(matrix)?;
            let c = read_matrix_csv(coords)?;
            temperature_bundle(
                f,
                c.as_ref(),
                8,
                10,
                *eta,
                format!("temperature({}, {})", matrix.display(), coords.display()),
            )?
        }
        DatasetSpec::SyntheticTemperature { stations, days } => synthetic_temperature(*stations, *days, seed)?,
        DatasetSpec::Mushroom { path, subsample } => {
            let data = load_categorical_csv(path)?;
            mushroom_bundle(&data, *subsample, seed, format!("mushroom({})", path.display()))?
        }
        DatasetSpec::SyntheticMushroom { records, subsample } => {
            let data = synthetic_categorical(*records, seed);
            mushroom_bundle(
                &data,
                *subsample,
                seed,
                format!("synthetic_mushroom(records={records}, seed={seed})"),
            )?
        }
    };
    bundle.validate().map_err(|e: Error| e.with_context("dataset"))?;
    Ok(bundle)
}
