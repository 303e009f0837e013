use std::sync::Arc;

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg;
use crate::sampling::ObservationSet;

use super::check_mu;
use super::online::StepSchedule;

/// Low-rank factorization `F̂ = W·Hᵀ`.
#[derive(Debug, Clone)]
pub struct FactorModel {
    w: Mat<f64>,
    h: Mat<f64>,
    mu: f64,
    kernel_reg: Option<(Arc<KernelMatrix>, Arc<KernelMatrix>)>,
}

impl FactorModel {
    pub fn new(
        w: Mat<f64>,
        h: Mat<f64>,
        mu: f64,
        kernel_reg: Option<(Arc<KernelMatrix>, Arc<KernelMatrix>)>,
    ) -> Result<Self> {
        check_mu(mu)?;
        if w.ncols() == 0 || w.ncols() != h.ncols() {
            return Err(Error::invalid(format!(
                "factor ranks disagree or are zero: W has {} columns, H has {}",
                w.ncols(),
                h.ncols()
            )));
        }
        if let Some((kx, ky)) = &kernel_reg {
            if kx.side() != w.nrows() || ky.side() != h.nrows() {
                return Err(Error::invalid("kernel sides do not match the factor shapes"));
            }
        }
        Ok(Self { w, h, mu, kernel_reg })
    }

    /// Entries iid Gaussian with standard deviation `1/√p`.
    pub fn random_init(n_rows: usize, n_cols: usize, rank: usize, mu: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        let normal = Normal::new(0.0, 1.0 / (rank as f64).sqrt()).expect("positive deviation");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Mat::from_fn(n_rows, rank, |_, _| normal.sample(&mut rng));
        let h = Mat::from_fn(n_cols, rank, |_, _| normal.sample(&mut rng));
        Self::new(w, h, mu, None)
    }

    pub fn w(&self) -> &Mat<f64> {
        &self.w
    }

    pub fn h(&self) -> &Mat<f64> {
        &self.h
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kernel_reg(&self) -> Option<&(Arc<KernelMatrix>, Arc<KernelMatrix>)> {
        self.kernel_reg.as_ref()
    }

    pub fn predict(&self) -> Mat<f64> {
        &self.w * self.h.transpose()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank()).map(|k| self.w[(i, k)] * self.h[(j, k)]).sum()
    }
}

/// Options for [`als_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlsOptions {
    pub rank: usize,
    pub mu: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl AlsOptions {
    pub fn new(rank: usize, mu: f64, seed: u64) -> Self {
        Self {
            rank,
            mu,
            max_iters: 500,
            rel_tol: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlsFit {
    pub model: FactorModel,
    /// Objective at the initial point and after every half-step (W then H).
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Inverse of a kernel matrix via its eigendecomposition.
fn kernel_inverse(k: &KernelMatrix, which: &str) -> Result<Mat<f64>> {
    let (vals, vecs) = k.eigen()?;
    let max = vals.last().copied().unwrap_or(0.0);
    let min = vals.first().copied().unwrap_or(0.0);
    if max <= 0.0 || min <= 1e-12 * max {
        return Err(Error::invalid(format!(
            "{which} is singular (eigenvalues span [{min:e}, {max:e}]); the trace regularizer needs its inverse"
        )));
    }
    let n = k.side();
    let scaled = Mat::from_fn(n, n, |i, c| vecs[(i, c)] / vals[c]);
    let mut inv = &scaled * vecs.transpose();
    linalg::symmetrize(&mut inv);
    Ok(inv)
}

/// `‖P_Ω(M − WHᵀ)‖² + μ·tr(Wᵀ K_x⁻¹ W) + μ·tr(Hᵀ K_y⁻¹ H)`, with identity
/// inverses when no kernels are given.
pub fn factorization_objective(
    model: &FactorModel,
    obs: &ObservationSet,
    inverses: Option<(&Mat<f64>, &Mat<f64>)>,
) -> f64 {
    let fit: f64 = obs.iter().map(|(i, j, m)| (m - model.entry(i, j)).powi(2)).sum();
    let reg = match inverses {
        None => linalg::frob_sq(model.w.as_ref()) + linalg::frob_sq(model.h.as_ref()),
        Some((kxi, kyi)) => trace_quad(kxi, &model.w) + trace_quad(kyi, &model.h),
    };
    fit + model.mu * reg
}

/// `tr(Aᵀ·K·A)`.
fn trace_quad(k: &Mat<f64>, a: &Mat<f64>) -> f64 {
    let ka = k * a;
    let mut t = 0.0;
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            t += a[(r, c)] * ka[(r, c)];
        }
    }
    t
}

/// Per-row Gram matrices `Σ_j h_j h_jᵀ` and right-hand sides `Σ_j m_ij h_j`
/// for updating the rows of `target` with `other` fixed.
fn row_systems(
    obs: &ObservationSet,
    other: &Mat<f64>,
    n_target: usize,
    transpose: bool,
) -> (Vec<Mat<f64>>, Vec<Vec<f64>>) {
    let p = other.ncols();
    let mut grams = vec![Mat::<f64>::zeros(p, p); n_target];
    let mut rhs = vec![vec![0.0; p]; n_target];
    for (i, j, m) in obs.iter() {
        let (t, o) = if transpose { (j, i) } else { (i, j) };
        let g = &mut grams[t];
        for a in 0..p {
            let oa = other[(o, a)];
            rhs[t][a] += m * oa;
            for b in 0..p {
                g[(a, b)] += oa * other[(o, b)];
            }
        }
    }
    (grams, rhs)
}

/// Exact minimizer over one factor with the other fixed.
fn solve_factor(
    grams: &[Mat<f64>],
    rhs: &[Vec<f64>],
    p: usize,
    mu: f64,
    inverse: Option<&Mat<f64>>,
) -> Result<Mat<f64>> {
    let n = grams.len();
    match inverse {
        None => {
            let mut out = Mat::zeros(n, p);
            for (r, (g, b)) in grams.iter().zip(rhs).enumerate() {
                let mut sys = g.clone();
                for k in 0..p {
                    sys[(k, k)] += mu;
                }
                let x = linalg::spd_solve_vec(sys.as_ref(), b)?;
                for k in 0..p {
                    out[(r, k)] = x[k];
                }
            }
            Ok(out)
        }
        Some(kinv) => {
            // Unknowns ordered as vec(W): index k·n + r for entry (r, k).
            let size = n * p;
            let mut sys = Mat::zeros(size, size);
            for k in 0..p {
                for k2 in 0..p {
                    for r in 0..n {
                        sys[(k * n + r, k2 * n + r)] = grams[r][(k, k2)];
                    }
                }
                for c in 0..n {
                    for r in 0..n {
                        sys[(k * n + r, k * n + c)] += mu * kinv[(r, c)];
                    }
                }
            }
            let mut b = vec![0.0; size];
            for r in 0..n {
                for k in 0..p {
                    b[k * n + r] = rhs[r][k];
                }
            }
            let x = linalg::spd_solve_vec(sys.as_ref(), &b)?;
            Ok(linalg::unvectorize(&x, n, p))
        }
    }
}

/// Alternating least squares on the factorization objective. With kernels,
/// each half-step solves one `N·p` (or `L·p`) linear system; without, the
/// rows decouple. Starts from a seeded random `H` and updates `W` first.
pub fn als_fit(
    obs: &ObservationSet,
    kernels: Option<(Arc<KernelMatrix>, Arc<KernelMatrix>)>,
    options: &AlsOptions,
) -> Result<AlsFit> {
    check_mu(options.mu)?;
    obs.check_finite()?;
    if !(options.rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be nonnegative"));
    }
    let (n, l) = (obs.n_rows(), obs.n_cols());
    let mut model = FactorModel::random_init(n, l, options.rank, options.mu, options.seed)?;
    let inverses = match &kernels {
        None => None,
        Some((kx, ky)) => {
            if kx.side() != n || ky.side() != l {
                return Err(Error::invalid("kernel sides do not match the observation shape"));
            }
            Some((kernel_inverse(kx, "K_x")?, kernel_inverse(ky, "K_y")?))
        }
    };
    model.kernel_reg = kernels;
    let inv_refs = inverses.as_ref().map(|(a, b)| (a, b));
    let p = options.rank;

    let mut objectives = vec![factorization_objective(&model, obs, inv_refs)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        let start = *objectives.last().expect("nonempty");

        let (g, b) = row_systems(obs, &model.h, n, false);
        model.w = solve_factor(&g, &b, p, options.mu, inv_refs.map(|x| x.0))
            .map_err(|e| e.with_context(format!("ALS W-step, iteration {iterations}")))?;
        push_checked(&mut objectives, factorization_objective(&model, obs, inv_refs))?;

        let (g, b) = row_systems(obs, &model.w, l, true);
        model.h = solve_factor(&g, &b, p, options.mu, inv_refs.map(|x| x.1))
            .map_err(|e| e.with_context(format!("ALS H-step, iteration {iterations}")))?;
        push_checked(&mut objectives, factorization_objective(&model, obs, inv_refs))?;

        let end = *objectives.last().expect("nonempty");
        if start - end <= options.rel_tol * start.abs() {
            converged = true;
            break;
        }
    }
    Ok(AlsFit {
        model,
        objectives,
        iterations,
        converged,
    })
}

fn push_checked(objectives: &mut Vec<f64>, value: f64) -> Result<()> {
    let prev = *objectives.last().expect("nonempty");
    if !value.is_finite() {
        return Err(Error::numerical("ALS objective became non-finite"));
    }
    if value > prev + 1e-10 * prev.abs().max(1.0) {
        return Err(Error::Internal(format!(
            "ALS objective increased from {prev:e} to {value:e}"
        )));
    }
    objectives.push(value);
    Ok(())
}

/// Options for [`factor_sgd_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct SgdOptions {
    pub rank: usize,
    pub mu: f64,
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub seed: u64,
}

/// One update of rows `w_i`, `h_j` on entry value `m`:
/// `w_i ← w_i + t(e·h_j − μ_w·w_i)`, `h_j ← h_j + t(e·w_i − μ_h·h_j)`,
/// with `e = m − w_iᵀh_j` and both updates using the old rows.
pub fn factor_sgd_step(
    model: &mut FactorModel,
    i: usize,
    j: usize,
    m: f64,
    t: f64,
    mu_w: f64,
    mu_h: f64,
) -> Result<()> {
    if i >= model.w.nrows() || j >= model.h.nrows() {
        return Err(Error::invalid(format!(
            "entry ({i}, {j}) outside a {}x{} matrix",
            model.w.nrows(),
            model.h.nrows()
        )));
    }
    let e = m - model.entry(i, j);
    for k in 0..model.rank() {
        let wk = model.w[(i, k)];
        let hk = model.h[(j, k)];
        model.w[(i, k)] = wk + t * (e * hk - mu_w * wk);
        model.h[(j, k)] = hk + t * (e * wk - mu_h * hk);
    }
    Ok(())
}

/// SGD on the entrywise factorization objective with per-row weights
/// `μ/|Ω_i|` and `μ/|Ω_j|`, visiting the entries in a fresh random order
/// every epoch.
pub fn factor_sgd_fit(obs: &ObservationSet, options: &SgdOptions) -> Result<FactorModel> {
    factor_sgd_run(obs, options, None, |_, _| {})
}

/// [`factor_sgd_fit`] with an evaluation hook called every `stride` steps
/// and after the last one.
pub fn factor_sgd_run<F>(
    obs: &ObservationSet,
    options: &SgdOptions,
    stride: Option<u64>,
    mut hook: F,
) -> Result<FactorModel>
where
    F: FnMut(u64, &FactorModel),
{
    check_mu(options.mu)?;
    options.schedule.validate()?;
    obs.check_finite()?;
    if stride == Some(0) {
        return Err(Error::invalid("stride must be positive"));
    }
    let (n, l) = (obs.n_rows(), obs.n_cols());
    let mut model = FactorModel::random_init(n, l, options.rank, options.mu, options.seed)?;
    let (row_counts, col_counts) = obs.sampling().counts();
    let entries: Vec<(usize, usize, f64)> = obs.iter().collect();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    // Separate stream from the initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(1));
    let total = (options.epochs * entries.len()) as u64;
    let mut step: u64 = 0;
    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &r in &order {
            let (i, j, m) = entries[r];
            let t = options.schedule.step(step);
            let mu_w = options.mu / row_counts[i] as f64;
            let mu_h = options.mu / col_counts[j] as f64;
            factor_sgd_step(&mut model, i, j, m, t, mu_w, mu_h)?;
            step += 1;
            if stride.is_some_and(|s| step % s == 0) || step == total {
                hook(step, &model);
            }
        }
    }
    Ok(model)
}
