use faer::Mat;

use crate::error::{Error, Result};
use crate::kernels::KroneckerKernel;
use crate::linalg;
use crate::sampling::{ObservationSet, SamplingSet};

use super::check_mu;

/// Fitted Kronecker-kernel estimator. Only the coefficients on the sampled
/// positions are stored; the full coefficient vector is zero elsewhere.
#[derive(Debug, Clone)]
pub struct KkmcexModel {
    sampling: SamplingSet,
    mu: f64,
    dual_coeffs: Vec<f64>,
    kernel: KroneckerKernel,
}

/// Solves `(S·K_z·Sᵀ + μI)·c = m̄` by Cholesky on the `S×S` system.
pub fn kkmcex_fit(kernel: &KroneckerKernel, obs: &ObservationSet, mu: f64) -> Result<KkmcexModel> {
    check_mu(mu)?;
    obs.check_finite()?;
    let mut system = kernel.submatrix(obs.sampling())?;
    for k in 0..system.nrows() {
        system[(k, k)] += mu;
    }
    let dual_coeffs = linalg::spd_solve_vec(system.as_ref(), obs.values())
        .map_err(|e| e.with_context(format!("KKMCEX solve with {} observations", obs.len())))?;
    Ok(KkmcexModel {
        sampling: obs.sampling().clone(),
        mu,
        dual_coeffs,
        kernel: kernel.clone(),
    })
}

impl KkmcexModel {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sampling(&self) -> &SamplingSet {
        &self.sampling
    }

    pub fn dual_coeffs(&self) -> &[f64] {
        &self.dual_coeffs
    }

    pub fn kernel(&self) -> &KroneckerKernel {
        &self.kernel
    }

    /// Rebuilds a model from stored coefficients.
    pub fn from_parts(
        kernel: KroneckerKernel,
        sampling: SamplingSet,
        mu: f64,
        dual_coeffs: Vec<f64>,
    ) -> Result<Self> {
        check_mu(mu)?;
        if dual_coeffs.len() != sampling.len() {
            return Err(Error::invalid("coefficient count does not match the sampling set"));
        }
        if sampling.n_rows() != kernel.n_rows() || sampling.n_cols() != kernel.n_cols() {
            return Err(Error::invalid("sampling set does not match the kernel shape"));
        }
        Ok(Self {
            sampling,
            mu,
            dual_coeffs,
            kernel,
        })
    }

    /// `Sᵀ·c` as an `N×L` coefficient matrix (zero off the sampled positions).
    pub fn coefficient_matrix(&self) -> Mat<f64> {
        let mut g = Mat::zeros(self.kernel.n_rows(), self.kernel.n_cols());
        for (&(i, j), &c) in self.sampling.entries().iter().zip(&self.dual_coeffs) {
            g[(i, j)] = c;
        }
        g
    }

    /// Full-length coefficient vector `γ̂ = Sᵀ·c` in vectorization order.
    pub fn full_coefficients(&self) -> Vec<f64> {
        linalg::vectorize(self.coefficient_matrix().as_ref())
    }

    /// `unvec(K_z·Sᵀ·c)`, evaluated as `K_x·unvec(Sᵀc)·K_y`.
    pub fn predict(&self) -> Mat<f64> {
        self.kernel
            .apply(self.coefficient_matrix().as_ref())
            .expect("coefficient matrix shape matches the kernel")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{linear_kernel, KernelMatrix};
    use crate::sampling::{observe, uniform_sample, NoiseSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_kernel(n: usize, seed: u64) -> Arc<KernelMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
        Arc::new(linear_kernel(x.as_ref()).unwrap())
    }

    #[test]
    fn identity_kernels_shrink_observations() {
        let kk = KroneckerKernel::new(
            Arc::new(KernelMatrix::identity(3)),
            Arc::new(KernelMatrix::identity(2)),
        );
        let f = Mat::from_fn(3, 2, |i, j| (i as f64) - 2.0 * j as f64 + 0.5);
        let s = SamplingSet::full(3, 2).unwrap();
        let obs = observe(f.as_ref(), &s, &NoiseSpec::none()).unwrap();
        let mu = 0.25;
        let model = kkmcex_fit(&kk, &obs, mu).unwrap();
        for (c, v) in model.dual_coeffs().iter().zip(obs.values()) {
            assert!((c - v / (1.0 + mu)).abs() < 1e-14);
        }
    }

    #[test]
    fn coefficients_vanish_off_the_sample() {
        let kk = KroneckerKernel::new(random_kernel(4, 1), random_kernel(3, 2));
        let f = Mat::from_fn(4, 3, |i, j| (i * j) as f64 * 0.1 + 0.3);
        let s = uniform_sample(4, 3, 6, 5).unwrap();
        let obs = observe(f.as_ref(), &s, &NoiseSpec::none()).unwrap();
        let model = kkmcex_fit(&kk, &obs, 0.5).unwrap();
        let gamma = model.full_coefficients();
        let on: std::collections::HashSet<usize> = s.vec_indices().into_iter().collect();
        for (a, g) in gamma.iter().enumerate() {
            if !on.contains(&a) {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn large_mu_shrinks_to_zero() {
        let kk = KroneckerKernel::new(random_kernel(3, 4), random_kernel(3, 5));
        let f = Mat::from_fn(3, 3, |i, j| 1.0 + i as f64 + j as f64);
        let s = uniform_sample(3, 3, 5, 1).unwrap();
        let obs = observe(f.as_ref(), &s, &NoiseSpec::none()).unwrap();
        let pred = kkmcex_fit(&kk, &obs, 1e12).unwrap().predict();
        assert!(linalg::frob_sq(pred.as_ref()).sqrt() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let kk = KroneckerKernel::new(random_kernel(2, 1), random_kernel(2, 2));
        let s = uniform_sample(2, 2, 2, 1).unwrap();
        let obs = ObservationSet::new(s.clone(), vec![1.0, 2.0]).unwrap();
        assert!(kkmcex_fit(&kk, &obs, 0.0).is_err());
        assert!(kkmcex_fit(&kk, &obs, -1.0).is_err());
        let bad = ObservationSet::new(s, vec![1.0, f64::NAN]).unwrap();
        assert!(kkmcex_fit(&kk, &bad, 1.0).is_err());
    }
}
