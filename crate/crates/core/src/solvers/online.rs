use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::FeatureMap;
use crate::sampling::ObservationSet;

use super::check_mu;
use super::rrmcex::RrmcexModel;

/// Step size as a function of the global iteration counter `n` (from 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `t_n = c / (n + n0)`.
    Decay { c: f64, n0: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant(t) => t >= 0.0 && t.is_finite(),
            StepSchedule::Decay { c, n0 } => c >= 0.0 && c.is_finite() && n0 > 0.0 && n0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid step schedule {self:?}")))
        }
    }

    pub fn step(&self, n: u64) -> f64 {
        match *self {
            StepSchedule::Constant(t) => t,
            StepSchedule::Decay { c, n0 } => c / (n as f64 + n0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOptions {
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub seed: u64,
    /// Hook is invoked every `stride` iterations (and always after the last one).
    pub stride: Option<u64>,
}

/// Streams the observations through [`RrmcexModel::sgd_step`], one entry per
/// iteration, reshuffling the order every epoch. Starts from `ξ = 0`.
///
/// `mu` is the batch regularization weight. Each step applies `mu / S`, so the
/// fixed point of the stream is the batch ridge solution for the same `mu`.
///
/// `hook(iteration, model)` receives the 1-based count of processed entries.
pub fn orrmcex_run<F>(
    features: &Arc<FeatureMap>,
    obs: &ObservationSet,
    mu: f64,
    options: &OnlineOptions,
    mut hook: F,
) -> Result<RrmcexModel>
where
    F: FnMut(u64, &RrmcexModel),
{
    check_mu(mu)?;
    options.schedule.validate()?;
    obs.check_finite()?;
    if features.n_rows() != obs.n_rows() || features.n_cols() != obs.n_cols() {
        return Err(Error::invalid("feature map shape does not match the observations"));
    }
    if options.stride == Some(0) {
        return Err(Error::invalid("stride must be positive"));
    }
    let mut model = RrmcexModel::zeros(Arc::clone(features), mu)?;
    if obs.is_empty() || options.epochs == 0 {
        return Ok(model);
    }
    let rows = features.gather_rows(&obs.sampling().vec_indices());
    let d = features.dim();
    let gathered: Vec<Vec<f64>> = (0..obs.len())
        .map(|r| (0..d).map(|k| rows[(r, k)]).collect())
        .collect();
    let mu_step = mu / obs.len() as f64;
    let values = obs.values();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let total = (options.epochs * obs.len()) as u64;
    let mut n: u64 = 0;
    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &r in &order {
            let t = options.schedule.step(n);
            model.sgd_step_row(&gathered[r], values[r], t, mu_step);
            n += 1;
            let due = options.stride.is_some_and(|s| n % s == 0);
            if due || n == total {
                hook(n, &model);
            }
        }
    }
    Ok(model)
}
