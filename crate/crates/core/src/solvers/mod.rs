//! Estimators: the closed-form Kronecker-kernel solver, its feature-map
//! (ridge regression) variant and online SGD form, and the factorization
//! baselines.

mod factor;
mod kkmcex;
mod online;
mod rrmcex;

pub use factor::{
    als_fit, factor_sgd_fit, factor_sgd_run, factor_sgd_step, factorization_objective, AlsFit, AlsOptions,
    FactorModel, SgdOptions,
};
pub use kkmcex::{kkmcex_fit, KkmcexModel};
pub use online::{orrmcex_run, OnlineOptions, StepSchedule};
pub use rrmcex::{rrmcex_fit, RrmcexModel};

use crate::error::{Error, Result};

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("regularization mu = {mu} must be positive")))
    }
}
