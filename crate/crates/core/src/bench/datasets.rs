use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graphs::{
    band_graph, build_laplacian, erdos_renyi, geodesic_distances, heat_adjacency, knn_symmetric,
    Laplacian,
};
use crate::kernels::{
    features_from_eig, features_from_svd, pearson_kernel, spectral_kernel, standardize_rows,
    FeatureMap, KernelMatrix, KroneckerKernel, SpectralWeighting,
};

use super::seeds::derive_seed;

/// Laplacian-based kernel family whose parameter `eta` can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralFamily {
    Diffusion,
    RegularizedLaplacian,
}

impl SpectralFamily {
    pub fn weighting(&self, eta: f64) -> SpectralWeighting {
        match self {
            SpectralFamily::Diffusion => SpectralWeighting::Diffusion { eta },
            SpectralFamily::RegularizedLaplacian => SpectralWeighting::RegularizedLaplacian { eta },
        }
    }
}

/// How a dataset's kernels are obtained.
#[derive(Debug, Clone)]
pub enum KernelRecipe {
    /// Fixed kernels; `eta` grids do not apply.
    Fixed {
        kx: Arc<KernelMatrix>,
        ky: Arc<KernelMatrix>,
    },
    /// Kernels rebuilt from row/column Laplacians for every `eta`.
    Spectral {
        lx: Laplacian,
        ly: Laplacian,
        family: SpectralFamily,
        default_eta: f64,
    },
}

/// Where RRMCEX features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Top eigenpairs of `K_y ⊗ K_x`.
    Eig,
    /// Top singular triplets of `Y ⊗ X` built from the side feature matrices.
    Svd,
}

/// Ground truth plus everything needed to build kernels and features.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub f: Mat<f64>,
    pub kernels: KernelRecipe,
    pub row_features: Option<Mat<f64>>,
    pub col_features: Option<Mat<f64>>,
    pub feature_source: FeatureSource,
    /// Generator and seed, or the source files.
    pub provenance: String,
}

impl DatasetBundle {
    pub fn n_rows(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.f.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, l) = (self.n_rows(), self.n_cols());
        let (kn, kl) = match &self.kernels {
            KernelRecipe::Fixed { kx, ky } => (kx.side(), ky.side()),
            KernelRecipe::Spectral { lx, ly, .. } => (lx.side(), ly.side()),
        };
        if kn != n || kl != l {
            return Err(Error::invalid(format!(
                "dataset '{}' is {n}x{l} but its kernels are {kn}x{kn} and {kl}x{kl}",
                self.name
            )));
        }
        if self.feature_source == FeatureSource::Svd {
            match (&self.row_features, &self.col_features) {
                (Some(x), Some(y)) if x.nrows() == n && y.nrows() == l => {}
                _ => {
                    return Err(Error::invalid(
                        "SVD features need row and column feature matrices of matching height",
                    ))
                }
            }
        }
        Ok(())
    }

    /// Whether `eta` grids change the kernels.
    pub fn has_eta(&self) -> bool {
        matches!(self.kernels, KernelRecipe::Spectral { .. })
    }

    pub fn default_eta(&self) -> Option<f64> {
        match self.kernels {
            KernelRecipe::Spectral { default_eta, .. } => Some(default_eta),
            KernelRecipe::Fixed { .. } => None,
        }
    }

    /// Kronecker kernel at `eta` (ignored for fixed kernels).
    pub fn kernel(&self, eta: Option<f64>) -> Result<KroneckerKernel> {
        match &self.kernels {
            KernelRecipe::Fixed { kx, ky } => Ok(KroneckerKernel::new(Arc::clone(kx), Arc::clone(ky))),
            KernelRecipe::Spectral {
                lx,
                ly,
                family,
                default_eta,
            } => {
                let w = family.weighting(eta.unwrap_or(*default_eta));
                let kx = Arc::new(spectral_kernel(lx, &w)?);
                let ky = if lx == ly {
                    Arc::clone(&kx)
                } else {
                    Arc::new(spectral_kernel(ly, &w)?)
                };
                Ok(KroneckerKernel::new(kx, ky))
            }
        }
    }

    /// Rank-`d` feature map for RRMCEX.
    pub fn feature_map(&self, kernel: &KroneckerKernel, d: usize) -> Result<FeatureMap> {
        match self.feature_source {
            FeatureSource::Eig => features_from_eig(kernel.kx(), kernel.ky(), d),
            FeatureSource::Svd => {
                let (x, y) = match (&self.row_features, &self.col_features) {
                    (Some(x), Some(y)) => (x, y),
                    _ => return Err(Error::invalid("dataset has no side features for SVD features")),
                };
                features_from_svd(x.as_ref(), y.as_ref(), d)
            }
        }
    }
}

/// `F = K_x·Γ·K_y` with iid standard Gaussian `Γ`, diffusion kernels on two
/// independent `G(n, p)` graphs.
pub fn generate_synthetic(n: usize, l: usize, graph_p: f64, eta: f64, seed: u64) -> Result<DatasetBundle> {
    if n < 2 || l < 2 {
        return Err(Error::invalid("synthetic matrices need at least 2 rows and 2 columns"));
    }
    let gx = erdos_renyi(n, graph_p, derive_seed(seed, &[1]))?;
    let gy = erdos_renyi(l, graph_p, derive_seed(seed, &[2]))?;
    let lx = build_laplacian(&gx);
    let ly = build_laplacian(&gy);
    let w = SpectralWeighting::Diffusion { eta };
    let kx = spectral_kernel(&lx, &w)?;
    let ky = spectral_kernel(&ly, &w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let gamma: Mat<f64> = Mat::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let f = kx.matrix() * &gamma * ky.matrix();
    Ok(DatasetBundle {
        name: "synthetic".into(),
        f,
        kernels: KernelRecipe::Spectral {
            lx,
            ly,
            family: SpectralFamily::Diffusion,
            default_eta: eta,
        },
        row_features: None,
        col_features: None,
        feature_source: FeatureSource::Eig,
        provenance: format!("generate_synthetic(n={n}, l={l}, p={graph_p}, eta={eta}, seed={seed})"),
    })
}

/// Station/day recipe: stations joined to their `k` nearest neighbours by
/// coordinate distance, symmetrized, weighted by the heat kernel of the hop
/// distances; days joined to the `day_band` previous and following days.
/// `f` is stations × days, `coords` has one row of coordinates per station.
pub fn temperature_bundle(
    f: Mat<f64>,
    coords: MatRef<'_, f64>,
    k: usize,
    day_band: usize,
    eta: f64,
    provenance: String,
) -> Result<DatasetBundle> {
    let (n, l) = (f.nrows(), f.ncols());
    if coords.nrows() != n {
        return Err(Error::invalid(format!(
            "{} station coordinates for {n} stations",
            coords.nrows()
        )));
    }
    let dist = Mat::from_fn(n, n, |a, b| {
        (0..coords.ncols())
            .map(|c| (coords[(a, c)] - coords[(b, c)]).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    let knn = knn_symmetric(dist.as_ref(), k)?;
    let hops = geodesic_distances(&knn)?;
    let stations = heat_adjacency(hops.as_ref())?;
    let days = band_graph(l, day_band)?;
    Ok(DatasetBundle {
        name: "temperature".into(),
        f,
        kernels: KernelRecipe::Spectral {
            lx: build_laplacian(&stations),
            ly: build_laplacian(&days),
            family: SpectralFamily::Diffusion,
            default_eta: eta,
        },
        row_features: None,
        col_features: None,
        feature_source: FeatureSource::Eig,
        provenance,
    })
}

/// Stand-in with the temperature layout: stations scattered in a box, a
/// seasonal cycle shifted by latitude, and smooth station offsets.
pub fn synthetic_temperature(stations: usize, days: usize, seed: u64) -> Result<DatasetBundle> {
    if stations < 10 || days < 2 {
        return Err(Error::invalid("temperature stand-in needs at least 10 stations and 2 days"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[10]));
    let coords: Mat<f64> = Mat::from_fn(stations, 2, |_, c| {
        if c == 0 {
            rng.random_range(25.0..49.0)
        } else {
            rng.random_range(-124.0..-67.0)
        }
    });
    let weather: Vec<f64> = {
        // AR(1) day-to-day anomaly shared by nearby stations.
        let mut v = Vec::with_capacity(days);
        let mut a = 0.0;
        for _ in 0..days {
            let z: f64 = StandardNormal.sample(&mut rng);
            a = 0.8 * a + z;
            v.push(a);
        }
        v
    };
    let f = Mat::from_fn(stations, days, |s, d| {
        let lat = coords[(s, 0)];
        let lon = coords[(s, 1)];
        let phase = 2.0 * std::f64::consts::PI * (d as f64 - 15.0) / days as f64;
        let mean = 30.0 - 0.8 * (lat - 25.0);
        let amplitude = 8.0 + 0.4 * (lat - 25.0);
        let regional = (lon / 10.0).sin();
        mean - amplitude * phase.cos() + regional * weather[d]
    });
    temperature_bundle(
        f,
        coords.as_ref(),
        8,
        10,
        1.0,
        format!("synthetic_temperature(stations={stations}, days={days}, seed={seed})"),
    )
}

/// One binary column per `(attribute, category)` pair, categories numbered by
/// first appearance within each attribute.
pub fn onehot_features<S: AsRef<str>>(rows: &[Vec<S>]) -> Result<Mat<f64>> {
    let arity = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("one-hot encoding needs at least one row"))?;
    if arity == 0 {
        return Err(Error::invalid("rows have no attributes"));
    }
    let mut codes: Vec<HashMap<&str, usize>> = vec![HashMap::new(); arity];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != arity {
            return Err(Error::invalid(format!(
                "row {r} has {} attributes, expected {arity}",
                row.len()
            )));
        }
        for (a, v) in row.iter().enumerate() {
            let next = codes[a].len();
            codes[a].entry(v.as_ref()).or_insert(next);
        }
    }
    let offsets: Vec<usize> = codes
        .iter()
        .scan(0, |acc, c| {
            let o = *acc;
            *acc += c.len();
            Some(o)
        })
        .collect();
    let width = offsets[arity - 1] + codes[arity - 1].len();
    let mut x = Mat::zeros(rows.len(), width);
    for (r, row) in rows.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            x[(r, offsets[a] + codes[a][v.as_ref()])] = 1.0;
        }
    }
    Ok(x)
}

/// Labeled categorical records.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalData {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Reads comma-separated records whose first field is the class label.
/// Records containing `?` are dropped.
pub fn load_categorical_csv(path: &Path) -> Result<CategoricalData> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                message: "expected a label and at least one attribute".into(),
            });
        }
        if fields.contains(&"?") {
            continue;
        }
        labels.push(fields[0].to_string());
        rows.push(fields[1..].iter().map(|s| s.to_string()).collect());
    }
    Ok(CategoricalData { labels, rows })
}

/// Same-class matrix (`+1` same label, `−1` otherwise) over a seeded subsample
/// of `subsample` records; `K_x = K_y` is the Pearson kernel of the one-hot
/// rows, and features come from the SVD of the row-standardized encoding.
pub fn mushroom_bundle(data: &CategoricalData, subsample: usize, seed: u64, provenance: String) -> Result<DatasetBundle> {
    let total = data.rows.len();
    if total < 2 {
        return Err(Error::invalid("need at least two records"));
    }
    let m = subsample.min(total);
    let mut picked: Vec<usize> = if m == total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[20]));
        index::sample(&mut rng, total, m).into_vec()
    };
    picked.sort_unstable();
    let rows: Vec<&Vec<String>> = picked.iter().map(|&r| &data.rows[r]).collect();
    let rows: Vec<Vec<&str>> = rows.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
    let onehot = onehot_features(&rows)?;
    let kx = Arc::new(pearson_kernel(onehot.as_ref())?);
    let z = standardize_rows(onehot.as_ref())?;
    let f = Mat::from_fn(m, m, |a, b| {
        if data.labels[picked[a]] == data.labels[picked[b]] {
            1.0
        } else {
            -1.0
        }
    });
    Ok(DatasetBundle {
        name: "mushroom".into(),
        f,
        kernels: KernelRecipe::Fixed {
            kx: Arc::clone(&kx),
            ky: kx,
        },
        row_features: Some(z.clone()),
        col_features: Some(z),
        feature_source: FeatureSource::Svd,
        provenance,
    })
}

/// Stand-in for the mushroom records: 22 categorical attributes whose
/// category distributions depend on a binary class.
pub fn synthetic_categorical(records: usize, seed: u64) -> CategoricalData {
    const ATTRIBUTES: usize = 22;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[21]));
    let arities: Vec<usize> = (0..ATTRIBUTES).map(|_| rng.random_range(2..=9)).collect();
    let mut labels = Vec::with_capacity(records);
    let mut rows = Vec::with_capacity(records);
    for _ in 0..records {
        let class = rng.random_bool(0.5);
        labels.push(if class { "p" } else { "e" }.to_string());
        let row = arities
            .iter()
            .map(|&k| {
                // Class-dependent preferred category, otherwise uniform.
                let preferred = if class { 0 } else { k - 1 };
                let c = if rng.random_bool(0.6) { preferred } else { rng.random_range(0..k) };
                format!("c{c}")
            })
            .collect();
        rows.push(row);
    }
    CategoricalData { labels, rows }
}
