//! Shared fixtures and dense oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use kmcex::kernels::{KernelMatrix, KroneckerKernel};
use kmcex::sampling::{uniform_sample, ObservationSet, SamplingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `AAᵀ + ridge·I`: nonsingular when `ridge > 0`.
pub fn random_spd(n: usize, ridge: f64, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let a = gaussian(n, n, rng);
    let mut k = &a * a.transpose();
    for i in 0..n {
        k[(i, i)] += ridge;
    }
    k
}

/// Rank-deficient PSD matrix `AAᵀ` with `A` of width `rank`.
pub fn random_psd_rank(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let a = gaussian(n, rank, rng);
    &a * a.transpose()
}

pub fn kernel(m: Mat<f64>) -> Arc<KernelMatrix> {
    Arc::new(KernelMatrix::new(m).expect("valid kernel"))
}

pub fn kron_kernel(kx: Mat<f64>, ky: Mat<f64>) -> KroneckerKernel {
    KroneckerKernel::new(kernel(kx), kernel(ky))
}

pub fn random_obs(n: usize, l: usize, count: usize, rng: &mut ChaCha8Rng) -> ObservationSet {
    let s = uniform_sample(n, l, count, rng.random()).unwrap();
    let values = (0..s.len()).map(|_| StandardNormal.sample(rng)).collect();
    ObservationSet::new(s, values).unwrap()
}

pub fn observe_exact(f: MatRef<'_, f64>, s: &SamplingSet) -> ObservationSet {
    let values = s.entries().iter().map(|&(i, j)| f[(i, j)]).collect();
    ObservationSet::new(s.clone(), values).unwrap()
}

/// Column-major vectorization, written out independently of the library.
pub fn vec_of(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Kronecker product `a ⊗ b` from the definition.
pub fn kron(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |r, c| a[(r / p, c / q)] * b[(r % p, c % q)])
}

/// General dense solve by LU with partial pivoting.
pub fn lu_solve(a: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let rhs = Mat::from_fn(b.len(), 1, |r, _| b[r]);
    let x = a.partial_piv_lu().solve(&rhs);
    (0..b.len()).map(|r| x[(r, 0)]).collect()
}

/// Full-length coefficient vector from the NL×NL system
/// `(SᵀS·K + μI)γ = Sᵀm`.
pub fn dense_krr_gamma(k: MatRef<'_, f64>, obs: &ObservationSet, mu: f64) -> Vec<f64> {
    let nl = k.nrows();
    let n = obs.n_rows();
    let mut mask = vec![0.0; nl];
    let mut rhs = vec![0.0; nl];
    for (i, j, m) in obs.iter() {
        mask[j * n + i] = 1.0;
        rhs[j * n + i] = m;
    }
    let a = Mat::from_fn(nl, nl, |r, c| mask[r] * k[(r, c)] + if r == c { mu } else { 0.0 });
    lu_solve(a.as_ref(), &rhs)
}

pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|r| (0..a.ncols()).map(|c| a[(r, c)] * x[c]).sum()).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn rel_diff_mat(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    rel_diff(&vec_of(a), &vec_of(b))
}

/// Sorted eigenvalues from faer's symmetric eigensolver.
pub fn sorted_eigs(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("symmetric eigenvalues");
    v.sort_by(f64::total_cmp);
    v
}

/// `½(m − φᵀξ)² + ½μ‖ξ‖²`, whose negative gradient the step follows.
pub fn online_loss(phi: &[f64], xi: &[f64], m: f64, mu: f64) -> f64 {
    let pred: f64 = phi.iter().zip(xi).map(|(a, b)| a * b).sum();
    0.5 * (m - pred).powi(2) + 0.5 * mu * xi.iter().map(|x| x * x).sum::<f64>()
}

/// The entrywise factorization summand `(m − wᵀh)² + μ_w‖w‖² + μ_h‖h‖²`.
pub fn factor_loss(w: &[f64], h: &[f64], m: f64, mu_w: f64, mu_h: f64) -> f64 {
    let pred: f64 = w.iter().zip(h).map(|(a, b)| a * b).sum();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    (m - pred).powi(2) + mu_w * sq(w) + mu_h * sq(h)
}

/// Classical ALS on `‖P_Ω(M − WHᵀ)‖² + μ(‖W‖² + ‖H‖²)`, row by row, with
/// the masked least-squares problems written out densely.
pub fn plain_als(obs: &ObservationSet, h0: &Mat<f64>, mu: f64, iters: usize) -> Vec<f64> {
    let (n, l, p) = (obs.n_rows(), obs.n_cols(), h0.ncols());
    let dense = obs.to_dense();
    let mut mask = Mat::<f64>::zeros(n, l);
    for (i, j, _) in obs.iter() {
        mask[(i, j)] = 1.0;
    }
    let objective = |w: &Mat<f64>, h: &Mat<f64>| {
        let fit = (0..n)
            .flat_map(|i| (0..l).map(move |j| (i, j)))
            .map(|(i, j)| {
                let pred: f64 = (0..p).map(|k| w[(i, k)] * h[(j, k)]).sum();
                mask[(i, j)] * (dense[(i, j)] - pred).powi(2)
            })
            .sum::<f64>();
        let reg: f64 = (0..p)
            .map(|k| (0..n).map(|i| w[(i, k)].powi(2)).sum::<f64>() + (0..l).map(|j| h[(j, k)].powi(2)).sum::<f64>())
            .sum();
        fit + mu * reg
    };
    let update = |other: &Mat<f64>, rows: usize, entry: &dyn Fn(usize, usize) -> (f64, f64)| {
        let mut out = Mat::<f64>::zeros(rows, p);
        for a in 0..rows {
            let mut g = Mat::<f64>::zeros(p, p);
            let mut b = vec![0.0; p];
            for o in 0..other.nrows() {
                let (present, value) = entry(a, o);
                if present == 0.0 {
                    continue;
                }
                for x in 0..p {
                    b[x] += value * other[(o, x)];
                    for y in 0..p {
                        g[(x, y)] += other[(o, x)] * other[(o, y)];
                    }
                }
            }
            for x in 0..p {
                g[(x, x)] += mu;
            }
            let sol = lu_solve(g.as_ref(), &b);
            for x in 0..p {
                out[(a, x)] = sol[x];
            }
        }
        out
    };
    let mut h = h0.clone();
    let mut w = Mat::<f64>::zeros(n, p);
    let mut objs = vec![objective(&w, &h)];
    for _ in 0..iters {
        w = update(&h, n, &|i, j| (mask[(i, j)], dense[(i, j)]));
        objs.push(objective(&w, &h));
        h = update(&w, l, &|j, i| (mask[(i, j)], dense[(i, j)]));
        objs.push(objective(&w, &h));
    }
    objs
}
