use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use faer::Mat;

use crate::analysis::relative_error;
use crate::error::{Error, Result};
use crate::io::ResultRow;
use crate::kernels::{FeatureMap, KroneckerKernel};
use crate::sampling::{observe, uniform_sample, NoiseMode, NoiseSpec, ObservationSet};
use crate::solvers::{
    als_fit, factor_sgd_fit, factor_sgd_run, kkmcex_fit, orrmcex_run, rrmcex_fit, AlsOptions,
    OnlineOptions, SgdOptions, StepSchedule,
};

use super::config::{ExperimentConfig, Method};
use super::datasets::DatasetBundle;
use super::seeds::derive_seed;

const SEED_SAMPLE: u64 = 100;
const SEED_NOISE: u64 = 101;
const SEED_SOLVER: u64 = 102;
const SEED_SPLIT: u64 = 103;

/// Kernels and feature maps built once per kernel parameter.
pub struct KernelCache<'a> {
    dataset: &'a DatasetBundle,
    kernels: HashMap<u64, KroneckerKernel>,
    features: HashMap<(u64, usize), Arc<FeatureMap>>,
    build_time: Duration,
}

fn eta_key(eta: Option<f64>) -> u64 {
    eta.map_or(u64::MAX, f64::to_bits)
}

impl<'a> KernelCache<'a> {
    pub fn new(dataset: &'a DatasetBundle) -> Self {
        Self {
            dataset,
            kernels: HashMap::new(),
            features: HashMap::new(),
            build_time: Duration::ZERO,
        }
    }

    pub fn kernel(&mut self, eta: Option<f64>) -> Result<KroneckerKernel> {
        let key = eta_key(eta);
        if let Some(k) = self.kernels.get(&key) {
            return Ok(k.clone());
        }
        let start = Instant::now();
        let k = self.dataset.kernel(eta)?;
        self.build_time += start.elapsed();
        self.kernels.insert(key, k.clone());
        Ok(k)
    }

    pub fn features(&mut self, eta: Option<f64>, d: usize) -> Result<Arc<FeatureMap>> {
        let key = (eta_key(eta), d);
        if let Some(f) = self.features.get(&key) {
            return Ok(Arc::clone(f));
        }
        let kernel = self.kernel(eta)?;
        let start = Instant::now();
        let f = Arc::new(self.dataset.feature_map(&kernel, d)?);
        self.build_time += start.elapsed();
        self.features.insert(key, Arc::clone(&f));
        Ok(f)
    }

    /// Rebuilds the feature map for `(η, d)` and returns how long it took.
    /// The map replaces any cached one.
    pub fn rebuild_features(&mut self, eta: Option<f64>, d: usize) -> Result<Duration> {
        let kernel = self.kernel(eta)?;
        let start = Instant::now();
        let f = Arc::new(self.dataset.feature_map(&kernel, d)?);
        let took = start.elapsed();
        self.build_time += took;
        self.features.insert((eta_key(eta), d), f);
        Ok(took)
    }

    /// Total time spent building kernels and feature maps.
    pub fn build_time(&self) -> Duration {
        self.build_time
    }
}

/// Default online schedule: a slowly decaying step that starts just under
/// the stability limit `2/R²`, with `R²` the largest observed `‖φ‖²`.
pub fn default_online_schedule(features: &FeatureMap, obs: &ObservationSet) -> StepSchedule {
    let phi = features.phi();
    let r2 = obs
        .sampling()
        .vec_indices()
        .iter()
        .map(|&a| (0..phi.ncols()).map(|k| phi[(a, k)].powi(2)).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let n0 = 100.0 * obs.len().max(1) as f64;
    StepSchedule::Decay { c: 1.8 * n0 / r2, n0 }
}

/// Default factor-SGD schedule. Factor rows start with unit expected norm,
/// so a step of 0.5 is stable regardless of the data scale.
pub fn default_sgd_schedule(obs: &ObservationSet) -> StepSchedule {
    let n0 = 100.0 * obs.len().max(1) as f64;
    StepSchedule::Decay { c: 0.5 * n0, n0 }
}

/// Fits `method` on `obs` and returns the completed matrix.
pub fn fit_predict(
    method: Method,
    cache: &mut KernelCache<'_>,
    cfg: &ExperimentConfig,
    obs: &ObservationSet,
    mu: f64,
    eta: Option<f64>,
    seed: u64,
) -> Result<Mat<f64>> {
    Ok(match method {
        Method::Kkmcex => kkmcex_fit(&cache.kernel(eta)?, obs, mu)?.predict(),
        Method::Rrmcex => rrmcex_fit(&cache.features(eta, cfg.dim)?, obs, mu)?.predict(),
        Method::Orrmcex => {
            let features = cache.features(eta, cfg.dim)?;
            let options = OnlineOptions {
                schedule: cfg
                    .schedule
                    .unwrap_or_else(|| default_online_schedule(&features, obs)),
                epochs: cfg.epochs,
                seed,
                stride: None,
            };
            orrmcex_run(&features, obs, mu, &options, |_, _| {})?.predict()
        }
        Method::Als => {
            let k = cache.kernel(eta)?;
            let kernels = Some((Arc::new(k.kx().clone()), Arc::new(k.ky().clone())));
            let options = AlsOptions {
                max_iters: cfg.max_iters,
                rel_tol: cfg.rel_tol,
                ..AlsOptions::new(cfg.rank, mu, seed)
            };
            als_fit(obs, kernels, &options)?.model.predict()
        }
        Method::FactorSgd => {
            let options = SgdOptions {
                rank: cfg.rank,
                mu,
                schedule: cfg.schedule.unwrap_or_else(|| default_sgd_schedule(obs)),
                epochs: cfg.epochs,
                seed,
            };
            factor_sgd_fit(obs, &options)?.predict()
        }
    })
}

/// Seed handed to the solver (and grid search) for one realization.
pub fn solver_seed(base: u64, ps_index: usize, realization: usize) -> u64 {
    derive_seed(base, &[SEED_SOLVER, ps_index as u64, realization as u64])
}

/// Number of observed entries for a sampling percentage (at least one).
pub fn sample_count(ps: f64, n: usize, l: usize) -> usize {
    ((ps / 100.0 * (n * l) as f64).round() as usize).clamp(1, n * l)
}

fn noise_spec(mode: NoiseMode, seed: u64) -> NoiseSpec {
    NoiseSpec { mode, seed }
}

/// Observations for one realization of a sweep.
pub fn realization_observations(
    cfg: &ExperimentConfig,
    dataset: &DatasetBundle,
    ps_index: usize,
    realization: usize,
) -> Result<ObservationSet> {
    let ps = cfg.ps_grid[ps_index];
    let (n, l) = (dataset.n_rows(), dataset.n_cols());
    let path = [ps_index as u64, realization as u64];
    let s = uniform_sample(
        n,
        l,
        sample_count(ps, n, l),
        derive_seed(cfg.seed, &[SEED_SAMPLE, path[0], path[1]]),
    )?;
    let noise = noise_spec(cfg.noise, derive_seed(cfg.seed, &[SEED_NOISE, path[0], path[1]]));
    observe(dataset.f.as_ref(), &s, &noise)
}

/// Selects `(μ, η)` by validation error on a held-out part of `obs`.
/// Ties go to the larger `μ`. `η` is `None` for datasets with fixed kernels.
pub fn grid_search(
    cfg: &ExperimentConfig,
    cache: &mut KernelCache<'_>,
    obs: &ObservationSet,
    validation_fraction: f64,
    seed: u64,
) -> Result<(f64, Option<f64>)> {
    if cfg.mu_grid.is_empty() {
        return Err(Error::invalid("mu grid is empty"));
    }
    let etas = eta_candidates(cfg, cache.dataset);
    if cfg.mu_grid.len() == 1 && etas.len() == 1 {
        return Ok((cfg.mu_grid[0], etas[0]));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {validation_fraction} must lie in (0, 1)"
        )));
    }
    let (train, valid) = obs.split(validation_fraction, derive_seed(seed, &[SEED_SPLIT]))?;
    if valid.is_empty() || train.is_empty() {
        return Err(Error::invalid("validation split left an empty part"));
    }
    let denom = valid.values().iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut mus = cfg.mu_grid.clone();
    mus.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, f64, Option<f64>)> = None;
    for &eta in &etas {
        for &mu in &mus {
            let pred = fit_predict(cfg.method, cache, cfg, &train, mu, eta, derive_seed(seed, &[SEED_SOLVER]))
                .map_err(|e| e.with_context(format!("grid point mu={mu}, eta={eta:?}")))?;
            let err = valid
                .iter()
                .map(|(i, j, m)| (pred[(i, j)] - m).powi(2))
                .sum::<f64>()
                / denom;
            let better = match best {
                None => true,
                Some((b, bmu, _)) => err < b || (err == b && mu > bmu),
            };
            if better && err.is_finite() {
                best = Some((err, mu, eta));
            }
        }
    }
    let (_, mu, eta) = best.ok_or_else(|| Error::numerical("every grid point failed"))?;
    Ok((mu, eta))
}

fn eta_candidates(cfg: &ExperimentConfig, dataset: &DatasetBundle) -> Vec<Option<f64>> {
    if !dataset.has_eta() {
        return vec![None];
    }
    if cfg.eta_grid.is_empty() {
        vec![dataset.default_eta()]
    } else {
        cfg.eta_grid.iter().map(|&e| Some(e)).collect()
    }
}

/// Per-`P_s` average of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub method: String,
    pub ps: f64,
    pub nmse: f64,
    pub seconds: f64,
    pub mu: f64,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<SweepSummary>,
    /// Total time spent building kernels and features.
    pub kernel_seconds: f64,
    /// Per `P_s`, the estimates of every realization (when requested).
    pub estimates: Option<Vec<Vec<Mat<f64>>>>,
}

/// Runs every `(P_s, realization)` pair: fresh uniform sample, observation,
/// fit and prediction. Timing covers fit + predict, plus the feature map for
/// rrmcex and orrmcex. When the `μ` or `η`
/// grid has more than one point, the parameters are chosen per `P_s` by
/// [`grid_search`] on the first realization.
pub fn run_sweep(cfg: &ExperimentConfig, dataset: &DatasetBundle) -> Result<ExperimentResult> {
    run_sweep_with(cfg, dataset, false)
}

pub fn run_sweep_with(
    cfg: &ExperimentConfig,
    dataset: &DatasetBundle,
    keep_estimates: bool,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    dataset.validate()?;
    let mut cache = KernelCache::new(dataset);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut kept = Vec::new();
    for (pi, &ps) in cfg.ps_grid.iter().enumerate() {
        let mut chosen = None;
        let mut estimates = Vec::new();
        let (mut nmse_sum, mut secs_sum) = (0.0, 0.0);
        for r in 0..cfg.realizations {
            let ctx = |e: Error| e.with_context(format!("P_s = {ps}, realization {r}"));
            let obs = realization_observations(cfg, dataset, pi, r).map_err(ctx)?;
            let seed = solver_seed(cfg.seed, pi, r);
            let (mu, eta) = match chosen {
                Some(c) => c,
                None => {
                    let c = grid_search(cfg, &mut cache, &obs, cfg.validation_fraction, seed)
                        .map_err(ctx)?;
                    chosen = Some(c);
                    c
                }
            };
            // Kernels are prior information and stay off the clock. The
            // feature map is part of the feature-based solvers, so it is
            // rebuilt and timed with every fit.
            cache.kernel(eta).map_err(ctx)?;
            let feature_time = if matches!(cfg.method, Method::Rrmcex | Method::Orrmcex) {
                cache.rebuild_features(eta, cfg.dim).map_err(ctx)?
            } else {
                Duration::ZERO
            };
            let start = Instant::now();
            let pred = fit_predict(cfg.method, &mut cache, cfg, &obs, mu, eta, seed).map_err(ctx)?;
            let seconds = (start.elapsed() + feature_time).as_secs_f64();
            let nmse = relative_error(pred.as_ref(), dataset.f.as_ref()).map_err(ctx)?;
            nmse_sum += nmse;
            secs_sum += seconds;
            rows.push(ResultRow {
                method: cfg.method.to_string(),
                ps,
                realization: r,
                nmse,
                seconds,
                mu,
                eta,
            });
            if keep_estimates {
                estimates.push(pred);
            }
        }
        let (mu, eta) = chosen.expect("at least one realization");
        let nr = cfg.realizations as f64;
        summaries.push(SweepSummary {
            method: cfg.method.to_string(),
            ps,
            nmse: nmse_sum / nr,
            seconds: secs_sum / nr,
            mu,
            eta,
        });
        if keep_estimates {
            kept.push(estimates);
        }
    }
    Ok(ExperimentResult {
        rows,
        summaries,
        kernel_seconds: cache.build_time().as_secs_f64(),
        estimates: keep_estimates.then_some(kept),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: u64,
    /// Solver time so far, excluding the evaluations.
    pub seconds: f64,
    pub nmse: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineTrace {
    pub method: Method,
    pub mu: f64,
    pub eta: Option<f64>,
    pub schedule: StepSchedule,
    pub samples: usize,
    pub points: Vec<TracePoint>,
}

/// Streams the observations of one realization at `P_s = ps_grid[0]` through
/// the online solver, recording NMSE every `stride` iterations. Uses the
/// first `μ` and `η` of the grids.
pub fn run_online(cfg: &ExperimentConfig, dataset: &DatasetBundle) -> Result<OnlineTrace> {
    cfg.validate()?;
    dataset.validate()?;
    let mut cache = KernelCache::new(dataset);
    let obs = realization_observations(cfg, dataset, 0, 0)?;
    let mu = cfg.mu_grid[0];
    let eta = eta_candidates(cfg, dataset)[0];
    let seed = solver_seed(cfg.seed, 0, 0);
    let truth = dataset.f.as_ref();
    let mut points = Vec::new();
    let mut solver_time = Duration::ZERO;
    let mut eval_error = None;
    let mut last: Instant;
    let mut record = |iteration: u64, pred: Mat<f64>, solver_time: &mut Duration, last: &mut Instant| {
        *solver_time += last.elapsed();
        match relative_error(pred.as_ref(), truth) {
            Ok(nmse) => points.push(TracePoint {
                iteration,
                seconds: solver_time.as_secs_f64(),
                nmse,
            }),
            Err(e) => eval_error = Some(e),
        }
        *last = Instant::now();
    };
    let schedule = match cfg.method {
        Method::Orrmcex => {
            let features = cache.features(eta, cfg.dim)?;
            let schedule = cfg
                .schedule
                .unwrap_or_else(|| default_online_schedule(&features, &obs));
            let options = OnlineOptions {
                schedule,
                epochs: cfg.epochs,
                seed,
                stride: cfg.stride,
            };
            last = Instant::now();
            orrmcex_run(&features, &obs, mu, &options, |n, model| {
                record(n, model.predict(), &mut solver_time, &mut last)
            })?;
            schedule
        }
        Method::FactorSgd => {
            let schedule = cfg.schedule.unwrap_or_else(|| default_sgd_schedule(&obs));
            let options = SgdOptions {
                rank: cfg.rank,
                mu,
                schedule,
                epochs: cfg.epochs,
                seed,
            };
            last = Instant::now();
            factor_sgd_run(&obs, &options, cfg.stride, |n, model| {
                record(n, model.predict(), &mut solver_time, &mut last)
            })?;
            schedule
        }
        other => {
            return Err(Error::invalid(format!(
                "online runs support orrmcex and factor_sgd, not {other}"
            )))
        }
    };
    if let Some(e) = eval_error {
        return Err(e);
    }
    Ok(OnlineTrace {
        method: cfg.method,
        mu,
        eta,
        schedule,
        samples: obs.len(),
        points,
    })
}

/// Writes `iteration,seconds,nmse`; `omit_timing` leaves seconds empty.
pub fn write_trace_csv(path: &Path, trace: &OnlineTrace, omit_timing: bool) -> Result<()> {
    let io_err = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    let res = (|| {
        writeln!(out, "iteration,seconds,nmse")?;
        for p in &trace.points {
            let secs = if omit_timing { String::new() } else { p.seconds.to_string() };
            writeln!(out, "{},{},{}", p.iteration, secs, p.nmse)?;
        }
        out.flush()
    })();
    res.map_err(io_err)
}
