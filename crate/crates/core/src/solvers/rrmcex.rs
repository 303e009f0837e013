use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};
use crate::kernels::FeatureMap;
use crate::linalg;
use crate::sampling::{vec_index, ObservationSet};

use super::check_mu;

/// Ridge-regression estimator in a `d`-dimensional feature space.
#[derive(Debug, Clone)]
pub struct RrmcexModel {
    features: Arc<FeatureMap>,
    mu: f64,
    xi: Vec<f64>,
}

/// `ξ = (Φ_Ωᵀ Φ_Ω + μI)⁻¹ Φ_Ωᵀ m̄`, where `Φ_Ω` holds the sampled rows of `Φ`.
pub fn rrmcex_fit(features: &Arc<FeatureMap>, obs: &ObservationSet, mu: f64) -> Result<RrmcexModel> {
    check_mu(mu)?;
    obs.check_finite()?;
    check_shape(features, obs)?;
    let rows = features.gather_rows(&obs.sampling().vec_indices());
    let d = features.dim();
    let mut gram = rows.transpose() * &rows;
    for k in 0..d {
        gram[(k, k)] += mu;
    }
    let m = Mat::from_fn(obs.len(), 1, |r, _| obs.values()[r]);
    let rhs = rows.transpose() * &m;
    let xi = linalg::spd_solve(gram.as_ref(), rhs.as_ref())
        .map_err(|e| e.with_context(format!("RRMCEX solve with d = {d}")))?;
    Ok(RrmcexModel {
        features: Arc::clone(features),
        mu,
        xi: linalg::col_to_vec(xi.as_ref(), 0),
    })
}

fn check_shape(features: &FeatureMap, obs: &ObservationSet) -> Result<()> {
    if features.n_rows() != obs.n_rows() || features.n_cols() != obs.n_cols() {
        return Err(Error::invalid(format!(
            "feature map is for {}x{} matrices, observations are {}x{}",
            features.n_rows(),
            features.n_cols(),
            obs.n_rows(),
            obs.n_cols()
        )));
    }
    Ok(())
}

impl RrmcexModel {
    /// Model with the given coefficients; `ξ = 0` is the usual online start.
    pub fn new(features: Arc<FeatureMap>, mu: f64, xi: Vec<f64>) -> Result<Self> {
        check_mu(mu)?;
        if xi.len() != features.dim() {
            return Err(Error::invalid(format!(
                "coefficient vector has length {}, feature dimension is {}",
                xi.len(),
                features.dim()
            )));
        }
        Ok(Self { features, mu, xi })
    }

    pub fn zeros(features: Arc<FeatureMap>, mu: f64) -> Result<Self> {
        let d = features.dim();
        Self::new(features, mu, vec![0.0; d])
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// `unvec(Φ·ξ)`.
    pub fn predict(&self) -> Mat<f64> {
        let phi = self.features.phi();
        let xi = Mat::from_fn(self.xi.len(), 1, |k, _| self.xi[k]);
        let v = phi * &xi;
        let n = self.features.n_rows();
        Mat::from_fn(n, self.features.n_cols(), |i, j| v[(j * n + i, 0)])
    }

    /// One stochastic gradient step on entry `(i, j)` with value `m`:
    /// `ξ ← ξ − t[φ(φᵀξ − m) + μξ]`.
    pub fn sgd_step(&mut self, i: usize, j: usize, m: f64, t: f64, mu: f64) -> Result<()> {
        if i >= self.features.n_rows() || j >= self.features.n_cols() {
            return Err(Error::invalid(format!(
                "entry ({i}, {j}) outside a {}x{} matrix",
                self.features.n_rows(),
                self.features.n_cols()
            )));
        }
        let a = vec_index(i, j, self.features.n_rows())?;
        let phi = self.features.phi();
        let residual: f64 = (0..self.xi.len()).map(|k| phi[(a, k)] * self.xi[k]).sum::<f64>() - m;
        for (k, x) in self.xi.iter_mut().enumerate() {
            *x -= t * (phi[(a, k)] * residual + mu * *x);
        }
        Ok(())
    }

    /// Same update as [`sgd_step`](Self::sgd_step) with a pre-gathered feature row.
    pub(crate) fn sgd_step_row(&mut self, phi: &[f64], m: f64, t: f64, mu: f64) {
        let residual = linalg::dot(phi, &self.xi) - m;
        for (x, &p) in self.xi.iter_mut().zip(phi) {
            *x -= t * (p * residual + mu * *x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{SamplingSet, ObservationSet};

    fn orthonormal_features() -> Arc<FeatureMap> {
        // Columns e1+e2 and e3-e4 (scaled) on a 2x2 grid.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let phi = Mat::from_fn(4, 2, |r, c| match (r, c) {
            (0, 0) | (1, 0) | (2, 1) => h,
            (3, 1) => -h,
            _ => 0.0,
        });
        Arc::new(FeatureMap::explicit(phi, 2, 2).unwrap())
    }

    #[test]
    fn orthonormal_full_observation() {
        let features = orthonormal_features();
        let s = SamplingSet::full(2, 2).unwrap();
        let m = vec![1.0, 3.0, -2.0, 0.5];
        let obs = ObservationSet::new(s, m.clone()).unwrap();
        let mu = 0.5;
        let model = rrmcex_fit(&features, &obs, mu).unwrap();
        let phi = features.phi();
        for k in 0..2 {
            let proj: f64 = (0..4).map(|a| phi[(a, k)] * m[a]).sum();
            assert!((model.xi()[k] - proj / (1.0 + mu)).abs() < 1e-14);
        }
    }

    #[test]
    fn single_feature_scalar_formula() {
        let phi = Mat::from_fn(6, 1, |r, _| 0.3 * r as f64 - 0.4);
        let features = Arc::new(FeatureMap::explicit(phi.clone(), 3, 2).unwrap());
        let s = SamplingSet::new(3, 2, vec![(0, 0), (2, 1), (1, 1)]).unwrap();
        let m = vec![0.7, -1.2, 2.0];
        let obs = ObservationSet::new(s.clone(), m.clone()).unwrap();
        let mu = 0.3;
        let model = rrmcex_fit(&features, &obs, mu).unwrap();
        let idx = s.vec_indices();
        let num: f64 = idx.iter().zip(&m).map(|(&a, v)| phi[(a, 0)] * v).sum();
        let den: f64 = idx.iter().map(|&a| phi[(a, 0)].powi(2)).sum::<f64>() + mu;
        assert!((model.xi()[0] - num / den).abs() < 1e-14);
    }

    #[test]
    fn zero_xi_predicts_zero() {
        let model = RrmcexModel::zeros(orthonormal_features(), 1.0).unwrap();
        let p = model.predict();
        assert_eq!((p.nrows(), p.ncols()), (2, 2));
        assert_eq!(linalg::frob_sq(p.as_ref()), 0.0);
    }

    #[test]
    fn step_basics() {
        let features = orthonormal_features();
        let mut model = RrmcexModel::zeros(Arc::clone(&features), 1.0).unwrap();
        model.sgd_step(1, 0, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(model.xi(), &[0.0, 0.0]);
        model.sgd_step(1, 0, 2.0, 0.1, 1.0).unwrap();
        let phi = features.row(1);
        for k in 0..2 {
            assert!((model.xi()[k] - 0.1 * 2.0 * phi[k]).abs() < 1e-15);
        }
        assert!(model.sgd_step(2, 0, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn rejects_nonpositive_mu() {
        let features = orthonormal_features();
        let obs = ObservationSet::new(SamplingSet::full(2, 2).unwrap(), vec![0.0; 4]).unwrap();
        assert!(rrmcex_fit(&features, &obs, 0.0).is_err());
    }
}
