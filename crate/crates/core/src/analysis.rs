//! Dense numerical checks of the estimator error theory, and the NMSE metric.
//!
//! Everything here materializes `NL×NL` matrices and is meant for small
//! instances only.

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::SamplingSet;

/// Slack allowed when comparing sorted eigenvalues against their bound.
pub const EIG_SLACK: f64 = 1e-10;

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("regularization mu = {mu} must be positive")))
    }
}

fn check_kernel(k: MatRef<'_, f64>, s: &SamplingSet) -> Result<()> {
    let nl = s.n_rows() * s.n_cols();
    if k.nrows() != nl || k.ncols() != nl {
        return Err(Error::invalid(format!(
            "kernel is {}x{}, sampling grid needs {nl}x{nl}",
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(())
}

/// `T̃ = K·Sᵀ(S·K·Sᵀ + μI)⁻¹·S·K`.
#[derive(Debug, Clone)]
pub struct NystromApprox {
    pub t_tilde: Mat<f64>,
    pub mu: f64,
}

impl NystromApprox {
    /// `K − T̃`.
    pub fn residual(&self, k: MatRef<'_, f64>) -> Mat<f64> {
        let mut r = Mat::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - self.t_tilde[(i, j)]);
        linalg::symmetrize(&mut r);
        r
    }
}

/// `K·Sᵀ` and the Cholesky solve of `(S K Sᵀ + μI)` against `S·K`.
fn sampled_blocks(k: MatRef<'_, f64>, s: &SamplingSet, mu: f64) -> Result<(Mat<f64>, Mat<f64>)> {
    let idx = s.vec_indices();
    let nl = k.nrows();
    let ks = Mat::from_fn(nl, idx.len(), |r, c| k[(r, idx[c])]);
    let mut a = Mat::from_fn(idx.len(), idx.len(), |r, c| k[(idx[r], idx[c])]);
    for d in 0..idx.len() {
        a[(d, d)] += mu;
    }
    let solved = linalg::spd_solve(a.as_ref(), ks.transpose())?;
    Ok((ks, solved))
}

pub fn regularized_nystrom(k: MatRef<'_, f64>, s: &SamplingSet, mu: f64) -> Result<NystromApprox> {
    check_mu(mu)?;
    check_kernel(k, s)?;
    let nl = k.nrows();
    if s.is_empty() {
        return Ok(NystromApprox {
            t_tilde: Mat::zeros(nl, nl),
            mu,
        });
    }
    let (ks, solved) = sampled_blocks(k, s, mu)?;
    let mut t = &ks * &solved;
    linalg::symmetrize(&mut t);
    Ok(NystromApprox { t_tilde: t, mu })
}

/// Monte-Carlo estimate of the estimator MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalMse {
    pub mse: f64,
    pub std_err: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseReport {
    pub bias_sq: f64,
    pub variance: f64,
    pub total: f64,
    pub empirical: Option<EmpiricalMse>,
}

/// Monte-Carlo settings; draws are generated in batches of `batch` with one
/// seeded stream per batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub draws: usize,
    pub seed: u64,
    pub batch: usize,
}

impl MonteCarlo {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self {
            draws,
            seed,
            batch: 10_000,
        }
    }
}

/// Bias and variance of the closed-form estimator `v̂ = K Sᵀ(SKSᵀ+μI)⁻¹(S K γ + e)`
/// of `v = Kγ`, with `e ~ N(0, ν² I)`:
/// `bias² = ‖(K − T̃)γ‖²`, `variance = (ν²/μ²)·Tr((K − T̃)² SᵀS)`.
pub fn mse_decomposition(
    k: MatRef<'_, f64>,
    s: &SamplingSet,
    gamma: &[f64],
    mu: f64,
    nu_sq: f64,
    monte_carlo: Option<MonteCarlo>,
) -> Result<MseReport> {
    check_mu(mu)?;
    check_kernel(k, s)?;
    if gamma.len() != k.nrows() {
        return Err(Error::invalid("gamma length does not match the kernel"));
    }
    if !(nu_sq >= 0.0 && nu_sq.is_finite()) {
        return Err(Error::invalid(format!("noise variance {nu_sq} must be nonnegative")));
    }
    let approx = regularized_nystrom(k, s, mu)?;
    let resid = approx.residual(k);
    let g = Mat::from_fn(gamma.len(), 1, |r, _| gamma[r]);
    let bias_vec = &resid * &g;
    let bias_sq = linalg::frob_sq(bias_vec.as_ref());
    let idx = s.vec_indices();
    // Tr((K−T̃)² SᵀS) = Σ_{a∈Ω} ‖(K−T̃)_{:,a}‖².
    let variance = nu_sq / (mu * mu)
        * idx
            .iter()
            .map(|&a| (0..resid.nrows()).map(|r| resid[(r, a)].powi(2)).sum::<f64>())
            .sum::<f64>();
    let empirical = match monte_carlo {
        None => None,
        Some(mc) => Some(empirical_mse(k, s, gamma, mu, nu_sq, &mc)?),
    };
    Ok(MseReport {
        bias_sq,
        variance,
        total: bias_sq + variance,
        empirical,
    })
}

/// Draws noisy observations `S K γ + e` and measures `‖v̂ − Kγ‖²` directly.
pub fn empirical_mse(
    k: MatRef<'_, f64>,
    s: &SamplingSet,
    gamma: &[f64],
    mu: f64,
    nu_sq: f64,
    mc: &MonteCarlo,
) -> Result<EmpiricalMse> {
    check_mu(mu)?;
    check_kernel(k, s)?;
    if mc.draws == 0 || mc.batch == 0 {
        return Err(Error::invalid("Monte-Carlo needs at least one draw"));
    }
    let nl = k.nrows();
    let g = Mat::from_fn(nl, 1, |r, _| gamma[r]);
    let v = k * &g;
    let idx = s.vec_indices();
    let sd = nu_sq.sqrt();
    let (ks, _) = if idx.is_empty() {
        (Mat::zeros(nl, 0), Mat::zeros(0, nl))
    } else {
        sampled_blocks(k, s, mu)?
    };
    let mut a = Mat::from_fn(idx.len(), idx.len(), |r, c| k[(idx[r], idx[c])]);
    for d in 0..idx.len() {
        a[(d, d)] += mu;
    }

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut done = 0;
    let mut batch_no = 0u64;
    while done < mc.draws {
        let count = mc.batch.min(mc.draws - done);
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        rng.set_stream(batch_no);
        let m = Mat::from_fn(idx.len(), count, |r, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v[(idx[r], 0)] + sd * z
        });
        let est = if idx.is_empty() {
            Mat::zeros(nl, count)
        } else {
            &ks * linalg::spd_solve(a.as_ref(), m.as_ref())?
        };
        for c in 0..count {
            let e: f64 = (0..nl).map(|r| (est[(r, c)] - v[(r, 0)]).powi(2)).sum();
            sum += e;
            sum_sq += e * e;
        }
        done += count;
        batch_no += 1;
    }
    let n = mc.draws as f64;
    let mean = sum / n;
    let var = if mc.draws > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(EmpiricalMse {
        mse: mean,
        std_err: (var / n).sqrt(),
        draws: mc.draws,
    })
}

/// `γ̃ = Lᵀγ` with `L` the eigenvectors of `K − T̃` in ascending eigenvalue order.
pub fn gamma_tilde(k: MatRef<'_, f64>, t_tilde: MatRef<'_, f64>, gamma: &[f64]) -> Result<Vec<f64>> {
    if k.nrows() != t_tilde.nrows() || k.ncols() != t_tilde.ncols() || gamma.len() != k.nrows() {
        return Err(Error::invalid("gamma_tilde inputs have inconsistent shapes"));
    }
    let mut r = Mat::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - t_tilde[(i, j)]);
    linalg::symmetrize(&mut r);
    let (_, vecs) = linalg::sym_eigen(r.as_ref())?;
    Ok((0..gamma.len())
        .map(|c| (0..gamma.len()).map(|a| vecs[(a, c)] * gamma[a]).sum())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Largest eigenvalue of `K`.
    pub sigma_max: f64,
    pub gamma_tilde: Vec<f64>,
    pub s_count: usize,
    pub mu: f64,
    pub nu_sq: f64,
}

impl BoundInputs {
    /// Assembles the inputs from a dense nonsingular kernel.
    pub fn from_instance(
        k: MatRef<'_, f64>,
        s: &SamplingSet,
        gamma: &[f64],
        mu: f64,
        nu_sq: f64,
    ) -> Result<Self> {
        let (vals, _) = linalg::sym_eigen(k)?;
        let sigma_max = vals.last().copied().unwrap_or(0.0);
        let sigma_min = vals.first().copied().unwrap_or(0.0);
        if !(sigma_max > 0.0) || sigma_min <= 1e-12 * sigma_max {
            return Err(Error::invalid(
                "the MSE bound requires a nonsingular kernel (bandlimited kernels are singular)",
            ));
        }
        let approx = regularized_nystrom(k, s, mu)?;
        Ok(Self {
            sigma_max,
            gamma_tilde: gamma_tilde(k, approx.t_tilde.as_ref(), gamma)?,
            s_count: s.len(),
            mu,
            nu_sq,
        })
    }
}

/// `μ²σ²/(σ+μ)²·Σ_{i≤S} γ̃ᵢ² + σ²·Σ_{i>S} γ̃ᵢ² + S·ν²σ²/μ²`.
pub fn mse_bound(inputs: &BoundInputs) -> Result<f64> {
    let (sigma, mu) = (inputs.sigma_max, inputs.mu);
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma_max must be positive"));
    }
    check_mu(mu)?;
    let s = inputs.s_count.min(inputs.gamma_tilde.len());
    let head: f64 = inputs.gamma_tilde[..s].iter().map(|g| g * g).sum();
    let tail: f64 = inputs.gamma_tilde[s..].iter().map(|g| g * g).sum();
    let shrink = mu * sigma / (sigma + mu);
    Ok(shrink * shrink * head
        + sigma * sigma * tail
        + inputs.s_count as f64 * inputs.nu_sq * sigma * sigma / (mu * mu))
}

/// Outcome of comparing the sorted spectrum of `K − T̃` against the diagonal
/// bound with `S` entries `μσ/(σ+μ)` and `NL − S` entries `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigBoundReport {
    /// Ascending eigenvalues of `K − T̃`.
    pub eigenvalues: Vec<f64>,
    /// Ascending bound diagonal.
    pub bound: Vec<f64>,
    /// `min_k (bound_k − λ_k)`; negative means the bound is exceeded.
    pub worst_margin: f64,
    pub violations: usize,
}

impl EigBoundReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

pub fn eig_bound_check(k: MatRef<'_, f64>, s: &SamplingSet, mu: f64) -> Result<EigBoundReport> {
    let approx = regularized_nystrom(k, s, mu)?;
    let (kvals, _) = linalg::sym_eigen(k)?;
    let sigma = kvals.last().copied().unwrap_or(0.0);
    let (eigenvalues, _) = linalg::sym_eigen(approx.residual(k).as_ref())?;
    let nl = k.nrows();
    let shrink = mu * sigma / (sigma + mu);
    let bound: Vec<f64> = (0..nl).map(|i| if i < s.len() { shrink } else { sigma }).collect();
    let mut worst_margin = f64::INFINITY;
    let mut violations = 0;
    for (l, b) in eigenvalues.iter().zip(&bound) {
        let margin = b - l;
        worst_margin = worst_margin.min(margin);
        if margin < -EIG_SLACK {
            violations += 1;
        }
    }
    Ok(EigBoundReport {
        eigenvalues,
        bound,
        worst_margin,
        violations,
    })
}

/// `‖F̂ − F‖²_F / ‖F‖²_F`.
pub fn relative_error(estimate: MatRef<'_, f64>, truth: MatRef<'_, f64>) -> Result<f64> {
    if estimate.nrows() != truth.nrows() || estimate.ncols() != truth.ncols() {
        return Err(Error::invalid(format!(
            "estimate is {}x{}, truth is {}x{}",
            estimate.nrows(),
            estimate.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let denom = linalg::frob_sq(truth);
    if denom == 0.0 {
        return Err(Error::invalid("NMSE is undefined for an all-zero truth matrix"));
    }
    let mut num = 0.0;
    for j in 0..truth.ncols() {
        for i in 0..truth.nrows() {
            num += (estimate[(i, j)] - truth[(i, j)]).powi(2);
        }
    }
    Ok(num / denom)
}

/// Mean of [`relative_error`] over realizations.
pub fn nmse(estimates: &[Mat<f64>], truth: MatRef<'_, f64>) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("NMSE needs at least one estimate"));
    }
    let mut total = 0.0;
    for e in estimates {
        total += relative_error(e.as_ref(), truth)?;
    }
    Ok(total / estimates.len() as f64)
}
