mod common;

use common::*;
use faer::Mat;
use kmcex::analysis::*;
use kmcex::graphs::{build_laplacian, Graph};
use kmcex::kernels::{spectral_kernel, SpectralWeighting};
use kmcex::sampling::{uniform_sample, SamplingSet};
use rand::Rng;

fn path_diffusion(n: usize) -> Mat<f64> {
    let adj = Mat::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
    let lap = build_laplacian(&Graph::from_adjacency(adj).unwrap());
    spectral_kernel(&lap, &SpectralWeighting::Diffusion { eta: 1.0 })
        .unwrap()
        .into_inner()
}

/// `K·Sᵀ(SKSᵀ + μI)⁻¹S·K`, assembled from the selector matrix.
fn dense_nystrom(k: &Mat<f64>, s: &SamplingSet, mu: f64) -> Mat<f64> {
    let sel = s.selector_matrix();
    let mut inner = &sel * k * sel.transpose();
    for d in 0..inner.nrows() {
        inner[(d, d)] += mu;
    }
    let sk = &sel * k;
    let cols: Vec<Vec<f64>> = (0..sk.ncols())
        .map(|c| lu_solve(inner.as_ref(), &(0..sk.nrows()).map(|r| sk[(r, c)]).collect::<Vec<_>>()))
        .collect();
    let x = Mat::from_fn(sk.nrows(), sk.ncols(), |r, c| cols[c][r]);
    sk.transpose() * &x
}

#[test]
fn nystrom_matches_selector_formula() {
    let mut r = rng(31);
    for _ in 0..10 {
        let (n, l) = (r.random_range(1..=4), r.random_range(1..=4));
        let k = kron(random_spd(l, 0.2, &mut r).as_ref(), random_spd(n, 0.2, &mut r).as_ref());
        let s = uniform_sample(n, l, r.random_range(1..=n * l), r.random()).unwrap();
        let mu = r.random_range(0.01..3.0);
        let t = regularized_nystrom(k.as_ref(), &s, mu).unwrap().t_tilde;
        assert!(rel_diff_mat(t.as_ref(), dense_nystrom(&k, &s, mu).as_ref()) < 1e-10);
    }
}

#[test]
fn full_sampling_with_tiny_mu_reproduces_kernel() {
    let mut r = rng(32);
    let k = kron(random_spd(3, 0.5, &mut r).as_ref(), random_spd(3, 0.5, &mut r).as_ref());
    let t = regularized_nystrom(k.as_ref(), &SamplingSet::full(3, 3).unwrap(), 1e-10)
        .unwrap()
        .t_tilde;
    assert!(rel_diff_mat(t.as_ref(), k.as_ref()) <= 1e-6);
}

#[test]
fn residual_and_approximation_are_psd() {
    let mut r = rng(33);
    for _ in 0..30 {
        let (n, l) = (r.random_range(1..=5), r.random_range(1..=5));
        let k = kron(random_spd(l, 0.05, &mut r).as_ref(), random_spd(n, 0.05, &mut r).as_ref());
        let s = uniform_sample(n, l, r.random_range(0..=n * l), r.random()).unwrap();
        let approx = regularized_nystrom(k.as_ref(), &s, r.random_range(0.01..2.0)).unwrap();
        let scale = sorted_eigs(k.as_ref()).last().copied().unwrap();
        for m in [approx.t_tilde.clone(), approx.residual(k.as_ref())] {
            assert!(sorted_eigs(m.as_ref())[0] >= -1e-8 * scale);
        }
    }
}

#[test]
fn decomposition_matches_monte_carlo_on_grid() {
    let k = kron(path_diffusion(2).as_ref(), path_diffusion(4).as_ref());
    let mut r = rng(34);
    for trial in 0..2 {
        let s = uniform_sample(4, 2, 4, 10 + trial).unwrap();
        let gamma: Vec<f64> = vec_of(gaussian(8, 1, &mut r).as_ref());
        let mc = MonteCarlo::new(100_000, 50 + trial);
        let rep = mse_decomposition(k.as_ref(), &s, &gamma, 0.1, 0.25, Some(mc)).unwrap();
        let emp = rep.empirical.unwrap();
        assert!((emp.mse - rep.total).abs() <= 0.03 * rep.total, "{rep:?}");
        assert!((emp.mse - rep.total).abs() <= 3.0 * emp.std_err, "{rep:?}");
    }
}

#[test]
fn decomposition_trivial_cases() {
    let mut r = rng(35);
    let k = kron(random_spd(2, 0.5, &mut r).as_ref(), random_spd(3, 0.5, &mut r).as_ref());
    let s = uniform_sample(3, 2, 3, 1).unwrap();
    let gamma = vec_of(gaussian(6, 1, &mut r).as_ref());
    let rep = mse_decomposition(k.as_ref(), &s, &gamma, 0.5, 0.0, None).unwrap();
    assert_eq!(rep.variance, 0.0);
    assert_eq!(rep.total, rep.bias_sq);
    let rep = mse_decomposition(k.as_ref(), &s, &[0.0; 6], 0.5, 0.0, None).unwrap();
    assert_eq!(rep.total, 0.0);
    assert!(mse_decomposition(k.as_ref(), &s, &gamma, 0.0, 0.1, None).is_err());
}

#[test]
fn bias_shrinks_quadratically_in_mu_with_full_sampling() {
    let mut r = rng(36);
    let k = kron(random_spd(3, 0.5, &mut r).as_ref(), random_spd(2, 0.5, &mut r).as_ref());
    let s = SamplingSet::full(2, 3).unwrap();
    let gamma = vec_of(gaussian(6, 1, &mut r).as_ref());
    let bias = |mu: f64| mse_decomposition(k.as_ref(), &s, &gamma, mu, 0.0, None).unwrap().bias_sq;
    let mut mu = 1e-3;
    for _ in 0..4 {
        assert!(bias(mu) / bias(mu / 2.0) >= 3.9);
        mu /= 2.0;
    }
}

#[test]
fn gamma_tilde_matches_eigen_oracle() {
    let mut r = rng(37);
    let k = kron(random_spd(2, 0.3, &mut r).as_ref(), random_spd(3, 0.3, &mut r).as_ref());
    let s = uniform_sample(3, 2, 3, 7).unwrap();
    let approx = regularized_nystrom(k.as_ref(), &s, 0.2).unwrap();
    let resid = approx.residual(k.as_ref());
    let gamma = vec_of(gaussian(6, 1, &mut r).as_ref());
    let gt = gamma_tilde(k.as_ref(), approx.t_tilde.as_ref(), &gamma).unwrap();
    // Eigenvectors are defined up to sign, so compare |Lᵀγ| together with
    // the quadratic form Σ λ_k γ̃_k² = γᵀ(K − T̃)γ.
    let evd = resid.self_adjoint_eigen(faer::Side::Lower).unwrap();
    let u = evd.U();
    let vals: Vec<f64> = (0..6).map(|i| evd.S()[i]).collect();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    for (pos, &c) in order.iter().enumerate() {
        let proj: f64 = (0..6).map(|a| u[(a, c)] * gamma[a]).sum();
        assert!((proj.abs() - gt[pos].abs()).abs() < 1e-9);
    }
    let quad: f64 = (0..6).map(|i| (0..6).map(|j| gamma[i] * resid[(i, j)] * gamma[j]).sum::<f64>()).sum();
    let sorted: Vec<f64> = order.iter().map(|&c| vals[c]).collect();
    let via: f64 = sorted.iter().zip(&gt).map(|(l, g)| l * g * g).sum();
    assert!((quad - via).abs() < 1e-9 * quad.abs().max(1.0));
    let zero = gamma_tilde(k.as_ref(), approx.t_tilde.as_ref(), &[0.0; 6]).unwrap();
    assert!(zero.iter().all(|&g| g == 0.0));
}

#[test]
fn bound_dominates_decomposition_on_random_instances() {
    let mut r = rng(38);
    for _ in 0..60 {
        let (n, l) = (r.random_range(1..=4), r.random_range(1..=4));
        let k = kron(random_spd(l, 0.1, &mut r).as_ref(), random_spd(n, 0.1, &mut r).as_ref());
        let s = uniform_sample(n, l, r.random_range(0..=n * l), r.random()).unwrap();
        let gamma = vec_of(gaussian(n * l, 1, &mut r).as_ref());
        let (mu, nu_sq) = (r.random_range(0.01..5.0), r.random_range(0.0..1.0));
        let rep = mse_decomposition(k.as_ref(), &s, &gamma, mu, nu_sq, None).unwrap();
        let bound = mse_bound(&BoundInputs::from_instance(k.as_ref(), &s, &gamma, mu, nu_sq).unwrap()).unwrap();
        assert!(rep.total <= bound * (1.0 + 1e-12), "{} > {bound}", rep.total);
        assert!(eig_bound_check(k.as_ref(), &s, mu).unwrap().holds());
    }
}

#[test]
fn bound_index_bookkeeping() {
    let inputs = BoundInputs {
        sigma_max: 2.0,
        gamma_tilde: vec![1.0, 2.0, 3.0],
        s_count: 3,
        mu: 0.5,
        nu_sq: 0.1,
    };
    let shrink: f64 = 0.5 * 2.0 / 2.5;
    let expected = shrink * shrink * 14.0 + 3.0 * 0.1 * 4.0 / 0.25;
    assert!((mse_bound(&inputs).unwrap() - expected).abs() < 1e-12);
    let zero = BoundInputs {
        gamma_tilde: vec![0.0; 3],
        nu_sq: 0.0,
        ..inputs
    };
    assert_eq!(mse_bound(&zero).unwrap(), 0.0);
}

#[test]
fn bound_refuses_singular_kernels() {
    let mut r = rng(39);
    let k = kron(random_psd_rank(3, 1, &mut r).as_ref(), random_spd(2, 0.5, &mut r).as_ref());
    let s = uniform_sample(2, 3, 3, 1).unwrap();
    assert!(BoundInputs::from_instance(k.as_ref(), &s, &[1.0; 6], 0.1, 0.1).is_err());
}

#[test]
fn eig_bound_sampling_extremes() {
    let mut r = rng(40);
    let k = kron(random_spd(3, 0.2, &mut r).as_ref(), random_spd(3, 0.2, &mut r).as_ref());
    let empty = SamplingSet::new(3, 3, vec![]).unwrap();
    let rep = eig_bound_check(k.as_ref(), &empty, 0.3).unwrap();
    assert!(rep.holds());
    assert!(rep.worst_margin.abs() < 1e-10);
    let rep = eig_bound_check(k.as_ref(), &SamplingSet::full(3, 3).unwrap(), 0.3).unwrap();
    assert!(rep.holds());
    let sigma = sorted_eigs(k.as_ref())[8];
    assert!(rep.bound.iter().all(|&b| (b - 0.3 * sigma / (sigma + 0.3)).abs() < 1e-12));
}

#[test]
fn nmse_hand_computed() {
    let truth = Mat::from_fn(2, 2, |i, j| (i + 2 * j + 1) as f64);
    let a = Mat::from_fn(2, 2, |i, j| truth[(i, j)] + if i == j { 1.0 } else { 0.0 });
    let b = Mat::<f64>::zeros(2, 2);
    // ‖truth‖² = 1 + 4 + 9 + 16 = 30.
    let v = nmse(&[a, b], truth.as_ref()).unwrap();
    assert!((v - (2.0 / 30.0 + 1.0) / 2.0).abs() < 1e-15);
    assert_eq!(nmse(&[truth.clone()], truth.as_ref()).unwrap(), 0.0);
    assert!(nmse(&[truth.clone()], Mat::<f64>::zeros(2, 2).as_ref()).is_err());
}

#[test]
fn kronecker_spectrum_is_pairwise_products() {
    let mut r = rng(41);
    for _ in 0..20 {
        let (n, l) = (r.random_range(1..=5), r.random_range(1..=5));
        let kx = random_spd(n, 0.0, &mut r);
        let ky = random_spd(l, 0.0, &mut r);
        let kk = kron_kernel(kx.clone(), ky.clone());
        let ex = sorted_eigs(kx.as_ref());
        let ey = sorted_eigs(ky.as_ref());
        let mut products: Vec<f64> = ey.iter().flat_map(|a| ex.iter().map(move |b| a * b)).collect();
        products.sort_by(f64::total_cmp);
        let direct = sorted_eigs(kk.to_dense().as_ref());
        let scale = products.last().unwrap().abs().max(1.0);
        for (a, b) in direct.iter().zip(&products) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
    }
}
