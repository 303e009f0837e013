//! `kmcex`: dataset generation, fitting, sweeps, online runs and theory checks.

mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use kmcex::bench::{
    self, grid_search, realization_observations, run_online, run_sweep, write_trace_csv,
    ExperimentConfig, KernelCache, Method,
};
use kmcex::io;
use kmcex::kernels::{features_from_eig, KernelMatrix, KroneckerKernel};
use kmcex::sampling::ObservationSet;
use kmcex::solvers::{
    als_fit, factor_sgd_fit, kkmcex_fit, orrmcex_run, rrmcex_fit, AlsOptions, OnlineOptions,
    SgdOptions,
};
use kmcex::{Error, Mat, Result};

#[derive(Parser)]
#[command(name = "kmcex", version, about = "Kernel matrix completion and extrapolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset bundle: truth, kernels and one sampled observation set.
    Synth(SynthArgs),
    /// Fit one method on a bundle written by `synth`.
    Fit(FitArgs),
    /// Run a P_s sweep and write the results CSV.
    Sweep(RunArgs),
    /// Stream observations through an online solver and write the NMSE trace.
    Online(RunArgs),
    /// Check the MSE decomposition, bound and eigenvalue domination.
    Verify(VerifyArgs),
    /// Pick (mu, eta) by validation error on the first realization.
    Gridsearch(RunArgs),
}

/// Options shared by every subcommand that reads an experiment config.
#[derive(Args)]
struct Overrides {
    /// Flat key = value experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    /// Sampling percentages, `a,b,c` or `log(lo, hi, n)`.
    #[arg(long)]
    ps: Option<String>,
    /// Regularization grid.
    #[arg(long)]
    mu: Option<String>,
    /// Kernel parameter grid.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Iterations between online trace points.
    #[arg(long)]
    stride: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    opts: Overrides,
    #[arg(long)]
    out: PathBuf,
    /// Leave the seconds column empty so output depends only on the inputs.
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    opts: Overrides,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    opts: Overrides,
    /// Bundle directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Completed matrix CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances to check.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Monte-Carlo draws per instance.
    #[arg(long, default_value_t = 20_000)]
    draws: usize,
    /// Also check this bundle (its kernels and sampling set).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Regularization used for the bundle check.
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    /// Noise level for the bundle check.
    #[arg(long, default_value_t = 1.0)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(&a).map(|_| ExitCode::SUCCESS),
        Command::Fit(a) => fit(&a).map(|_| ExitCode::SUCCESS),
        Command::Sweep(a) => sweep(&a).map(|_| ExitCode::SUCCESS),
        Command::Online(a) => online(&a).map(|_| ExitCode::SUCCESS),
        Command::Gridsearch(a) => gridsearch(&a).map(|_| ExitCode::SUCCESS),
        Command::Verify(a) => verify::run(&a),
    }
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig> {
    check_input(&o.config)?;
    let mut cfg = ExperimentConfig::from_file(&o.config)?;
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        match value {
            Some(v) => cfg.set(key, &v).map_err(|e| e.with_context(format!("--{key}"))),
            None => Ok(()),
        }
    };
    set("seed", o.seed.map(|v| v.to_string()))?;
    set("method", o.method.clone())?;
    set("ps", o.ps.clone())?;
    set("mu", o.mu.clone())?;
    set("eta", o.eta.clone())?;
    set("rank", o.rank.map(|v| v.to_string()))?;
    set("dim", o.dim.map(|v| v.to_string()))?;
    set("snr", o.snr.map(|v| v.to_string()))?;
    set("epochs", o.epochs.map(|v| v.to_string()))?;
    set("stride", o.stride.map(|v| v.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("input file {} does not exist", path.display())))
    }
}

/// The parent directory of an output file must exist.
fn check_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    match parent {
        Some(p) if !p.is_dir() => Err(Error::InvalidInput(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ if path.is_dir() => Err(Error::InvalidInput(format!("output {} is a directory", path.display()))),
        _ => Ok(()),
    }
}

struct BundlePaths {
    truth: PathBuf,
    kx: PathBuf,
    ky: PathBuf,
    obs: PathBuf,
}

impl BundlePaths {
    fn new(dir: &Path) -> Self {
        Self {
            truth: dir.join("truth.csv"),
            kx: dir.join("kx.csv"),
            ky: dir.join("ky.csv"),
            obs: dir.join("observations.csv"),
        }
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = load_config(&a.opts)?;
    if a.out.exists() && !a.out.is_dir() {
        return Err(Error::InvalidInput(format!("{} is not a directory", a.out.display())));
    }
    let dataset = bench::load_dataset(&cfg.dataset, cfg.seed)?;
    let eta = cfg.eta_grid.first().copied().or(dataset.default_eta());
    let kernel = dataset.kernel(eta)?;
    let obs = realization_observations(&cfg, &dataset, 0, 0)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let paths = BundlePaths::new(&a.out);
    let mut meta = vec![
        ("name", dataset.name.clone()),
        ("N", dataset.n_rows().to_string()),
        ("L", dataset.n_cols().to_string()),
        ("seed", cfg.seed.to_string()),
        ("P_s", cfg.ps_grid[0].to_string()),
    ];
    if let Some(e) = eta {
        meta.push(("eta", e.to_string()));
    }
    io::write_bundle(&paths.truth, &meta, dataset.f.as_ref())?;
    io::write_matrix_csv(&paths.kx, kernel.kx().matrix())?;
    io::write_matrix_csv(&paths.ky, kernel.ky().matrix())?;
    io::write_triplets_csv(&paths.obs, &obs)?;
    println!(
        "wrote {}x{} bundle with {} observations to {}",
        dataset.n_rows(),
        dataset.n_cols(),
        obs.len(),
        a.out.display()
    );
    Ok(())
}

struct Bundle {
    truth: Mat<f64>,
    kernel: KroneckerKernel,
    obs: ObservationSet,
}

fn read_bundle(dir: &Path) -> Result<Bundle> {
    let paths = BundlePaths::new(dir);
    for p in [&paths.truth, &paths.kx, &paths.ky, &paths.obs] {
        check_input(p)?;
    }
    let (_, truth) = io::read_bundle(&paths.truth)?;
    let kx = KernelMatrix::new(io::read_matrix_csv(&paths.kx)?)?;
    let ky = KernelMatrix::new(io::read_matrix_csv(&paths.ky)?)?;
    if kx.side() != truth.nrows() || ky.side() != truth.ncols() {
        return Err(Error::InvalidInput(format!(
            "kernels are {}x{} and {}x{} but the truth matrix is {}x{}",
            kx.side(),
            kx.side(),
            ky.side(),
            ky.side(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let obs = io::read_triplets_csv(&paths.obs, truth.nrows(), truth.ncols())?;
    Ok(Bundle {
        truth,
        kernel: KroneckerKernel::new(Arc::new(kx), Arc::new(ky)),
        obs,
    })
}

fn fit(a: &FitArgs) -> Result<()> {
    let cfg = load_config(&a.opts)?;
    check_output(&a.out)?;
    let bundle = read_bundle(&a.data)?;
    let mu = cfg.mu_grid[0];
    let seed = cfg.seed;
    let pred = match cfg.method {
        Method::Kkmcex => kkmcex_fit(&bundle.kernel, &bundle.obs, mu)?.predict(),
        Method::Rrmcex | Method::Orrmcex => {
            let d = cfg.dim.min(bundle.kernel.dim());
            let features = Arc::new(features_from_eig(bundle.kernel.kx(), bundle.kernel.ky(), d)?);
            if cfg.method == Method::Rrmcex {
                rrmcex_fit(&features, &bundle.obs, mu)?.predict()
            } else {
                let options = OnlineOptions {
                    schedule: cfg
                        .schedule
                        .unwrap_or_else(|| bench::default_online_schedule(&features, &bundle.obs)),
                    epochs: cfg.epochs,
                    seed,
                    stride: None,
                };
                orrmcex_run(&features, &bundle.obs, mu, &options, |_, _| {})?.predict()
            }
        }
        Method::Als => {
            let kernels = Some((
                Arc::new(bundle.kernel.kx().clone()),
                Arc::new(bundle.kernel.ky().clone()),
            ));
            let options = AlsOptions {
                max_iters: cfg.max_iters,
                rel_tol: cfg.rel_tol,
                ..AlsOptions::new(cfg.rank, mu, seed)
            };
            als_fit(&bundle.obs, kernels, &options)?.model.predict()
        }
        Method::FactorSgd => {
            let options = SgdOptions {
                rank: cfg.rank,
                mu,
                schedule: cfg
                    .schedule
                    .unwrap_or_else(|| bench::default_sgd_schedule(&bundle.obs)),
                epochs: cfg.epochs,
                seed,
            };
            factor_sgd_fit(&bundle.obs, &options)?.predict()
        }
    };
    io::write_matrix_csv(&a.out, pred.as_ref())?;
    let nmse = kmcex::analysis::relative_error(pred.as_ref(), bundle.truth.as_ref())?;
    println!("method={} mu={mu} nmse={nmse:e}", cfg.method);
    Ok(())
}

fn sweep(a: &RunArgs) -> Result<()> {
    let cfg = load_config(&a.opts)?;
    check_output(&a.out)?;
    let dataset = bench::load_dataset(&cfg.dataset, cfg.seed)?;
    let result = run_sweep(&cfg, &dataset)?;
    io::write_results_csv(&a.out, &result.rows, a.omit_timing)?;
    for s in &result.summaries {
        let eta = s.eta.map(|e| format!(" eta={e}")).unwrap_or_default();
        if a.omit_timing {
            println!("{} P_s={} nmse={:e} mu={}{eta}", s.method, s.ps, s.nmse, s.mu);
        } else {
            println!(
                "{} P_s={} nmse={:e} seconds={:.4} mu={}{eta}",
                s.method, s.ps, s.nmse, s.seconds, s.mu
            );
        }
    }
    if !a.omit_timing {
        println!("kernel and feature construction: {:.3} s", result.kernel_seconds);
    }
    Ok(())
}

fn online(a: &RunArgs) -> Result<()> {
    let cfg = load_config(&a.opts)?;
    check_output(&a.out)?;
    let dataset = bench::load_dataset(&cfg.dataset, cfg.seed)?;
    let trace = run_online(&cfg, &dataset)?;
    write_trace_csv(&a.out, &trace, a.omit_timing)?;
    if let Some(last) = trace.points.last() {
        println!(
            "{} after {} iterations ({} samples): nmse={:e}",
            trace.method, last.iteration, trace.samples, last.nmse
        );
    }
    Ok(())
}

fn gridsearch(a: &RunArgs) -> Result<()> {
    let cfg = load_config(&a.opts)?;
    check_output(&a.out)?;
    let dataset = bench::load_dataset(&cfg.dataset, cfg.seed)?;
    let obs = realization_observations(&cfg, &dataset, 0, 0)?;
    let mut cache = KernelCache::new(&dataset);
    let seed = bench::solver_seed(cfg.seed, 0, 0);
    let (mu, eta) = grid_search(&cfg, &mut cache, &obs, cfg.validation_fraction, seed)?;
    let eta_text = eta.map(|e| e.to_string()).unwrap_or_default();
    std::fs::write(&a.out, format!("mu,eta\n{mu},{eta_text}\n")).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    println!("mu={mu} eta={}", if eta_text.is_empty() { "-" } else { &eta_text });
    Ok(())
}
