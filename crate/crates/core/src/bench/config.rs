use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sampling::NoiseMode;
use crate::solvers::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Kkmcex,
    Rrmcex,
    Orrmcex,
    Als,
    FactorSgd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Kkmcex => "kkmcex",
            Method::Rrmcex => "rrmcex",
            Method::Orrmcex => "orrmcex",
            Method::Als => "als",
            Method::FactorSgd => "factor_sgd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kkmcex" => Ok(Method::Kkmcex),
            "rrmcex" => Ok(Method::Rrmcex),
            "orrmcex" => Ok(Method::Orrmcex),
            "als" => Ok(Method::Als),
            "factor_sgd" | "sgd" => Ok(Method::FactorSgd),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected kkmcex, rrmcex, orrmcex, als or factor_sgd)"
            ))),
        }
    }
}

/// Which dataset an experiment runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        l: usize,
        graph_p: f64,
        eta: f64,
    },
    /// Station × day matrix and station coordinates from CSV files.
    Temperature {
        matrix: PathBuf,
        coords: PathBuf,
        eta: f64,
    },
    SyntheticTemperature {
        stations: usize,
        days: usize,
    },
    /// Label-first categorical records, e.g. the UCI mushroom file.
    Mushroom {
        path: PathBuf,
        subsample: usize,
    },
    SyntheticMushroom {
        records: usize,
        subsample: usize,
    },
}

/// Experiment settings, read from flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetSpec,
    /// Sampling percentages `100·S/(NL)`.
    pub ps_grid: Vec<f64>,
    pub realizations: usize,
    pub mu_grid: Vec<f64>,
    /// Empty means the dataset's own kernel parameter.
    pub eta_grid: Vec<f64>,
    pub rank: usize,
    pub dim: usize,
    pub noise: NoiseMode,
    pub seed: u64,
    pub validation_fraction: f64,
    pub epochs: usize,
    /// `None` picks a step size from the data.
    pub schedule: Option<StepSchedule>,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Iterations between online trace points; `None` keeps only the last.
    pub stride: Option<u64>,
}

/// `count` points spaced logarithmically from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Kkmcex,
            dataset: DatasetSpec::Synthetic {
                n: 250,
                l: 250,
                graph_p: 0.03,
                eta: 1.0,
            },
            ps_grid: vec![10.0],
            realizations: 1,
            mu_grid: log_grid(1e-6, 1e2, 9),
            eta_grid: Vec::new(),
            rank: 10,
            dim: 250,
            noise: NoiseMode::None,
            seed: 0,
            validation_fraction: 0.2,
            epochs: 20,
            schedule: None,
            max_iters: 500,
            rel_tol: 1e-6,
            stride: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("'{key}': cannot parse '{value}'")))
}

/// Comma-separated numbers, or `log(lo, hi, count)`.
fn parse_grid(key: &str, value: &str) -> Result<Vec<f64>> {
    let v = value.trim();
    let grid = if let Some(inner) = v.strip_prefix("log(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("'{key}': log grid needs lo, hi, count")));
        }
        let lo: f64 = parse_num(key, parts[0])?;
        let hi: f64 = parse_num(key, parts[1])?;
        let count: usize = parse_num(key, parts[2])?;
        if !(lo > 0.0 && hi > 0.0) || count == 0 {
            return Err(Error::invalid(format!("'{key}': log grid needs positive bounds and count")));
        }
        log_grid(lo, hi, count)
    } else {
        v.split(',').map(|p| parse_num(key, p)).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid(format!("'{key}': grid must be nonempty and finite")));
    }
    Ok(grid)
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut dataset_keys = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if DATASET_KEYS.contains(&k) {
                dataset_keys.push((k.to_string(), v.to_string()));
            } else {
                cfg.set(k, v)
                    .map_err(|e| e.with_context(format!("config line {}", n + 1)))?;
            }
        }
        cfg.dataset = parse_dataset(&dataset_keys)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| e.with_context(path.display().to_string()))
    }

    /// Sets one non-dataset key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "method" => self.method = value.parse()?,
            "ps" => self.ps_grid = parse_grid(key, value)?,
            "realizations" => self.realizations = parse_num(key, value)?,
            "mu" => self.mu_grid = parse_grid(key, value)?,
            "eta" => self.eta_grid = parse_grid(key, value)?,
            "rank" => self.rank = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "snr" => self.noise = NoiseMode::TargetSnr(parse_num(key, value)?),
            "noise_var" => self.noise = NoiseMode::Variance(parse_num(key, value)?),
            "noise" if value == "none" => self.noise = NoiseMode::None,
            "validation_fraction" => self.validation_fraction = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "step" => self.schedule = Some(StepSchedule::Constant(parse_num(key, value)?)),
            "step_decay" => {
                let (c, n0) = value
                    .split_once(',')
                    .ok_or_else(|| Error::invalid("'step_decay': expected c, n0"))?;
                self.schedule = Some(StepSchedule::Decay {
                    c: parse_num(key, c)?,
                    n0: parse_num(key, n0)?,
                });
            }
            "max_iters" => self.max_iters = parse_num(key, value)?,
            "rel_tol" => self.rel_tol = parse_num(key, value)?,
            "stride" => {
                self.stride = match value {
                    "inf" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ps_grid.iter().any(|&p| !(p > 0.0 && p <= 100.0)) {
            return Err(Error::invalid("every P_s must lie in (0, 100]"));
        }
        if self.realizations == 0 {
            return Err(Error::invalid("realizations must be at least 1"));
        }
        if self.mu_grid.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::invalid("every mu must be positive"));
        }
        if self.eta_grid.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid("every eta must be positive"));
        }
        if self.rank == 0 || self.dim == 0 {
            return Err(Error::invalid("rank and dim must be at least 1"));
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        if self.stride == Some(0) {
            return Err(Error::invalid("stride must be positive"));
        }
        Ok(())
    }
}

const DATASET_KEYS: &[&str] = &[
    "dataset", "n", "l", "graph_p", "data_eta", "matrix", "coords", "stations", "days", "path",
    "records", "subsample",
];

fn parse_dataset(keys: &[(String, String)]) -> Result<DatasetSpec> {
    let get = |k: &str| keys.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let kind = get("dataset").unwrap_or("synthetic");
    let num = |k: &str, default: f64| -> Result<f64> { get(k).map_or(Ok(default), |v| parse_num(k, v)) };
    let count = |k: &str, default: usize| -> Result<usize> { get(k).map_or(Ok(default), |v| parse_num(k, v)) };
    let path = |k: &str| -> Result<PathBuf> {
        get(k)
            .map(PathBuf::from)
            .ok_or_else(|| Error::invalid(format!("dataset '{kind}' needs '{k}'")))
    };
    let allowed: &[&str] = match kind {
        "synthetic" => &["n", "l", "graph_p", "data_eta"],
        "temperature" => &["matrix", "coords", "data_eta"],
        "synthetic_temperature" => &["stations", "days"],
        "mushroom" => &["path", "subsample"],
        "synthetic_mushroom" => &["records", "subsample"],
        other => return Err(Error::invalid(format!("unknown dataset '{other}'"))),
    };
    if let Some((k, _)) = keys.iter().find(|(k, _)| k != "dataset" && !allowed.contains(&k.as_str())) {
        return Err(Error::invalid(format!("key '{k}' does not apply to dataset '{kind}'")));
    }
    Ok(match kind {
        "synthetic" => DatasetSpec::Synthetic {
            n: count("n", 250)?,
            l: count("l", 250)?,
            graph_p: num("graph_p", 0.03)?,
            eta: num("data_eta", 1.0)?,
        },
        "temperature" => DatasetSpec::Temperature {
            matrix: path("matrix")?,
            coords: path("coords")?,
            eta: num("data_eta", 1.0)?,
        },
        "synthetic_temperature" => DatasetSpec::SyntheticTemperature {
            stations: count("stations", 150)?,
            days: count("days", 365)?,
        },
        "mushroom" => DatasetSpec::Mushroom {
            path: path("path")?,
            subsample: count("subsample", 400)?,
        },
        _ => DatasetSpec::SyntheticMushroom {
            records: count("records", 2000)?,
            subsample: count("subsample", 400)?,
        },
    })
}
