//! Theory checks: the bias/variance decomposition against Monte-Carlo, the
//! closed-form MSE bound, and the eigenvalue domination of `K − T̃`.

use std::fmt::Write as _;
use std::process::ExitCode;

use kmcex::analysis::{eig_bound_check, mse_bound, mse_decomposition, BoundInputs, MonteCarlo};
use kmcex::bench::derive_seed;
use kmcex::linalg::{kron, spd_solve_vec, vectorize};
use kmcex::sampling::{uniform_sample, SamplingSet};
use kmcex::{Error, Mat, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{check_output, read_bundle, VerifyArgs};

/// Monte-Carlo agreement is judged in standard errors.
const MC_SIGMAS: f64 = 5.0;
/// Relative slack for `total ≤ bound`.
const BOUND_SLACK: f64 = 1e-9;
/// Largest `NL` a bundle may have for dense checks.
const MAX_DENSE: usize = 2500;

struct Instance {
    k: Mat<f64>,
    s: SamplingSet,
    gamma: Vec<f64>,
    mu: f64,
    nu_sq: f64,
}

struct Outcome {
    bias_sq: f64,
    variance: f64,
    empirical: f64,
    bound: f64,
    margin: f64,
    passed: bool,
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let a: Mat<f64> = Mat::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let mut k = &a * a.transpose();
    for i in 0..n {
        k[(i, i)] += 0.1;
    }
    k
}

fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let l = rng.random_range(1..=4);
    let kx = random_spd(n, &mut rng);
    let ky = random_spd(l, &mut rng);
    let count = rng.random_range(1..=n * l);
    let s = uniform_sample(n, l, count, rng.random())?;
    let gamma = (0..n * l).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mu = [1e-2, 1e-1, 1.0][rng.random_range(0..3)];
    Ok(Instance {
        k: kron(ky.as_ref(), kx.as_ref()),
        s,
        gamma,
        mu,
        nu_sq: 0.25,
    })
}

fn check(inst: &Instance, mc: MonteCarlo) -> Result<Outcome> {
    let report = mse_decomposition(inst.k.as_ref(), &inst.s, &inst.gamma, inst.mu, inst.nu_sq, Some(mc))?;
    let inputs = BoundInputs::from_instance(inst.k.as_ref(), &inst.s, &inst.gamma, inst.mu, inst.nu_sq)?;
    let bound = mse_bound(&inputs)?;
    let eig = eig_bound_check(inst.k.as_ref(), &inst.s, inst.mu)?;
    let emp = report.empirical.expect("Monte-Carlo was requested");
    let mc_ok = (emp.mse - report.total).abs() <= MC_SIGMAS * emp.std_err + 1e-12 * report.total.max(1.0);
    let bound_ok = report.total <= bound * (1.0 + BOUND_SLACK);
    Ok(Outcome {
        bias_sq: report.bias_sq,
        variance: report.variance,
        empirical: emp.mse,
        bound,
        margin: bound - report.total,
        passed: mc_ok && bound_ok && eig.holds(),
    })
}

/// The bundle's kernel, its sampling set, `γ = K⁻¹ vec(F)` and the noise
/// variance implied by `snr`.
fn bundle_instance(args: &VerifyArgs) -> Result<Option<Instance>> {
    let Some(dir) = &args.data else {
        return Ok(None);
    };
    if !(args.snr > 0.0 && args.snr.is_finite()) {
        return Err(Error::InvalidInput(format!("--snr {} must be positive", args.snr)));
    }
    if !(args.mu > 0.0 && args.mu.is_finite()) {
        return Err(Error::InvalidInput(format!("--mu {} must be positive", args.mu)));
    }
    let bundle = read_bundle(dir)?;
    let nl = bundle.kernel.dim();
    if nl > MAX_DENSE {
        return Err(Error::InvalidInput(format!(
            "bundle has NL = {nl}; dense checks are limited to {MAX_DENSE}"
        )));
    }
    let k = bundle.kernel.to_dense();
    let f = &bundle.truth;
    let v = vectorize(f.as_ref());
    let gamma = spd_solve_vec(k.as_ref(), &v).map_err(|e| e.with_context("solving K gamma = vec(F)"))?;
    let energy: f64 = v.iter().map(|x| x * x).sum();
    Ok(Some(Instance {
        k,
        s: bundle.obs.sampling().clone(),
        gamma,
        mu: args.mu,
        nu_sq: energy / (nl as f64 * args.snr),
    }))
}

pub(crate) fn run(args: &VerifyArgs) -> Result<ExitCode> {
    check_output(&args.out)?;
    if args.draws < 2 {
        return Err(Error::InvalidInput("--draws must be at least 2".into()));
    }
    let mut instances = Vec::new();
    for i in 0..args.instances {
        instances.push((format!("random{i}"), random_instance(derive_seed(args.seed, &[1, i as u64]))?));
    }
    if let Some(inst) = bundle_instance(args)? {
        instances.push(("bundle".to_string(), inst));
    }

    let mut csv = String::from("instance,bias_sq,variance,empirical_mse,bound,margin\n");
    let (mut passed, mut failed) = (0, 0);
    for (i, (name, inst)) in instances.iter().enumerate() {
        let mc = MonteCarlo::new(args.draws, derive_seed(args.seed, &[2, i as u64]));
        let o = check(inst, mc).map_err(|e| e.with_context(format!("instance {name}")))?;
        writeln!(
            csv,
            "{name},{},{},{},{},{}",
            o.bias_sq, o.variance, o.empirical, o.bound, o.margin
        )
        .expect("writing to a String cannot fail");
        if o.passed {
            passed += 1;
        } else {
            failed += 1;
            eprintln!("FAIL {name}: total {} bound {} empirical {}", o.bias_sq + o.variance, o.bound, o.empirical);
        }
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    println!("passed {passed}, failed {failed}");
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
