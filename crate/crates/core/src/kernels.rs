//! Kernel matrices, the lazily evaluated Kronecker kernel `K_z = K_y ⊗ K_x`,
//! and low-rank feature maps that approximate it.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::graphs::Laplacian;
use crate::linalg;
use crate::sampling::SamplingSet;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// Symmetric positive semidefinite similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    matrix: Mat<f64>,
}

impl KernelMatrix {
    /// Validates symmetry and positive semidefiniteness (smallest eigenvalue
    /// at least `−1e-8·max(1, λ_max)`).
    pub fn new(mut matrix: Mat<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::invalid(format!(
                "kernel matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        linalg::check_finite(matrix.as_ref(), "kernel matrix")?;
        let scale = (0..n).map(|i| matrix[(i, i)].abs()).fold(1.0, f64::max);
        if !linalg::is_symmetric(matrix.as_ref(), SYMMETRY_TOL * scale) {
            return Err(Error::invalid("kernel matrix is not symmetric"));
        }
        linalg::symmetrize(&mut matrix);
        let (vals, _) = linalg::sym_eigen(matrix.as_ref())?;
        let max = vals.last().copied().unwrap_or(0.0);
        if vals[0] < -PSD_TOL * max.max(1.0) {
            return Err(Error::invalid(format!(
                "kernel matrix is not positive semidefinite (smallest eigenvalue {:e})",
                vals[0]
            )));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix that is PSD by construction (Gram matrices, spectral
    /// filters), only enforcing exact symmetry.
    pub(crate) fn from_psd_unchecked(mut matrix: Mat<f64>) -> Self {
        linalg::symmetrize(&mut matrix);
        Self { matrix }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Mat::identity(n, n),
        }
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.matrix
    }

    pub fn eigen(&self) -> Result<(Vec<f64>, Mat<f64>)> {
        linalg::sym_eigen(self.matrix.as_ref())
    }
}

/// Spectral response applied to Laplacian eigenvalues. Kernels use the
/// reciprocal `1/r(λ)`, with suppressed frequencies mapped to zero.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralWeighting {
    /// `r(λ) = exp(ηλ)`.
    Diffusion { eta: f64 },
    /// `r(λ) = 1 + ηλ`.
    RegularizedLaplacian { eta: f64 },
    /// Unit gain on the listed (0-based, ascending-eigenvalue) indices, zero elsewhere.
    Bandlimited { pass_band: Vec<usize> },
}

impl SpectralWeighting {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            SpectralWeighting::Diffusion { eta } | SpectralWeighting::RegularizedLaplacian { eta } => {
                if !(*eta > 0.0) || !eta.is_finite() {
                    return Err(Error::invalid(format!("kernel parameter eta = {eta} must be positive")));
                }
            }
            SpectralWeighting::Bandlimited { pass_band } => {
                if pass_band.is_empty() {
                    return Err(Error::invalid("bandlimited kernel needs a nonempty pass band"));
                }
                if let Some(&bad) = pass_band.iter().find(|&&k| k >= n) {
                    return Err(Error::invalid(format!(
                        "pass-band index {bad} out of range for {n} eigenvalues"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `1/r(λ)` for the `index`-th ascending eigenvalue `lambda`.
    fn gain(&self, index: usize, lambda: f64) -> Result<f64> {
        let r = match self {
            SpectralWeighting::Diffusion { eta } => (eta * lambda).exp(),
            SpectralWeighting::RegularizedLaplacian { eta } => 1.0 + eta * lambda,
            SpectralWeighting::Bandlimited { pass_band } => {
                return Ok(if pass_band.contains(&index) { 1.0 } else { 0.0 });
            }
        };
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::numerical(format!(
                "spectral response r({lambda:e}) = {r:e} cannot be inverted"
            )));
        }
        Ok(1.0 / r)
    }
}

/// `K = Q·r†(Λ)·Qᵀ` from the Laplacian eigendecomposition.
pub fn spectral_kernel(lap: &Laplacian, weighting: &SpectralWeighting) -> Result<KernelMatrix> {
    let n = lap.side();
    weighting.validate(n)?;
    let (vals, q) = lap.eigen()?;
    let gains = vals
        .iter()
        .enumerate()
        .map(|(k, &l)| weighting.gain(k, l))
        .collect::<Result<Vec<_>>>()?;
    let scaled = Mat::from_fn(n, n, |i, k| q[(i, k)] * gains[k]);
    Ok(KernelMatrix::from_psd_unchecked(&scaled * q.transpose()))
}

/// Linear kernel `X·Xᵀ`.
pub fn linear_kernel(x: MatRef<'_, f64>) -> Result<KernelMatrix> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("feature matrix must have at least one row and column"));
    }
    linalg::check_finite(x, "feature matrix")?;
    Ok(KernelMatrix::from_psd_unchecked(x * x.transpose()))
}

/// Gaussian kernel `exp(−‖xᵢ − xⱼ‖² / (2η))`.
pub fn gaussian_kernel(x: MatRef<'_, f64>, eta: f64) -> Result<KernelMatrix> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("gaussian bandwidth eta = {eta} must be positive")));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("feature matrix must have at least one row and column"));
    }
    linalg::check_finite(x, "feature matrix")?;
    let n = x.nrows();
    let m = Mat::from_fn(n, n, |i, j| {
        let d2: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
        (-d2 / (2.0 * eta)).exp()
    });
    Ok(KernelMatrix::from_psd_unchecked(m))
}

/// Centers every row and scales it to unit Euclidean norm, so that the Gram
/// matrix of the result holds the Pearson correlations between rows.
pub fn standardize_rows(x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let (n, t) = (x.nrows(), x.ncols());
    if n == 0 || t == 0 {
        return Err(Error::invalid("feature matrix must have at least one row and column"));
    }
    linalg::check_finite(x, "feature matrix")?;
    let mut out = Mat::zeros(n, t);
    for i in 0..n {
        let mean = (0..t).map(|c| x[(i, c)]).sum::<f64>() / t as f64;
        let norm = (0..t).map(|c| (x[(i, c)] - mean).powi(2)).sum::<f64>().sqrt();
        if norm <= f64::EPSILON * (1.0 + mean.abs()) * t as f64 {
            return Err(Error::invalid(format!(
                "row {i} is constant; its correlation is undefined"
            )));
        }
        for c in 0..t {
            out[(i, c)] = (x[(i, c)] - mean) / norm;
        }
    }
    Ok(out)
}

/// Pearson correlation between the rows of `x`.
pub fn pearson_kernel(x: MatRef<'_, f64>) -> Result<KernelMatrix> {
    let z = standardize_rows(x)?;
    let mut k = &z * z.transpose();
    for i in 0..k.nrows() {
        k[(i, i)] = 1.0;
    }
    Ok(KernelMatrix::from_psd_unchecked(k))
}

/// `K_z = K_y ⊗ K_x`, held as its two factors.
///
/// Index `a` of the product space encodes the matrix entry `(a mod N, a div N)`
/// (column-major vectorization), so `K_z[a, b] = K_x[i, n]·K_y[j, l]` with
/// `a ↦ (i, j)` and `b ↦ (n, l)`.
#[derive(Debug, Clone)]
pub struct KroneckerKernel {
    kx: Arc<KernelMatrix>,
    ky: Arc<KernelMatrix>,
}

impl KroneckerKernel {
    pub fn new(kx: Arc<KernelMatrix>, ky: Arc<KernelMatrix>) -> Self {
        Self { kx, ky }
    }

    pub fn kx(&self) -> &KernelMatrix {
        &self.kx
    }

    pub fn ky(&self) -> &KernelMatrix {
        &self.ky
    }

    /// `N`, the side of `K_x` (rows of the data matrix).
    pub fn n_rows(&self) -> usize {
        self.kx.side()
    }

    /// `L`, the side of `K_y` (columns of the data matrix).
    pub fn n_cols(&self) -> usize {
        self.ky.side()
    }

    pub fn dim(&self) -> usize {
        self.n_rows() * self.n_cols()
    }

    pub fn entry(&self, a: usize, b: usize) -> Result<f64> {
        let dim = self.dim();
        if a >= dim || b >= dim {
            return Err(Error::invalid(format!(
                "kronecker index ({a}, {b}) out of range for dimension {dim}"
            )));
        }
        let n = self.n_rows();
        Ok(self.kx.matrix[(a % n, b % n)] * self.ky.matrix[(a / n, b / n)])
    }

    fn check_sampling(&self, s: &SamplingSet) -> Result<()> {
        if s.n_rows() != self.n_rows() || s.n_cols() != self.n_cols() {
            return Err(Error::invalid(format!(
                "sampling set is {}x{} but the kernel is {}x{}",
                s.n_rows(),
                s.n_cols(),
                self.n_rows(),
                self.n_cols()
            )));
        }
        Ok(())
    }

    /// `S·K_z·Sᵀ` in sampling order, from the factors in O(S²).
    pub fn submatrix(&self, s: &SamplingSet) -> Result<Mat<f64>> {
        self.check_sampling(s)?;
        let kx = self.kx.matrix();
        let ky = self.ky.matrix();
        let e = s.entries();
        Ok(Mat::from_fn(e.len(), e.len(), |p, q| {
            kx[(e[p].0, e[q].0)] * ky[(e[p].1, e[q].1)]
        }))
    }

    /// `K_z·Sᵀ`: the columns of `K_z` at the sampled vectorization indices.
    pub fn times_selector(&self, s: &SamplingSet) -> Result<Mat<f64>> {
        self.check_sampling(s)?;
        let n = self.n_rows();
        let kx = self.kx.matrix();
        let ky = self.ky.matrix();
        let e = s.entries();
        Ok(Mat::from_fn(self.dim(), e.len(), |r, c| {
            kx[(r % n, e[c].0)] * ky[(r / n, e[c].1)]
        }))
    }

    /// `unvec(K_z·vec(Γ)) = K_x·Γ·K_y` for an `N×L` coefficient matrix.
    pub fn apply(&self, coeffs: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if coeffs.nrows() != self.n_rows() || coeffs.ncols() != self.n_cols() {
            return Err(Error::invalid("coefficient matrix shape does not match the kernel"));
        }
        let left = self.kx.matrix() * coeffs;
        Ok(&left * self.ky.matrix())
    }

    /// Materializes `K_y ⊗ K_x`. Only sensible at small scale.
    pub fn to_dense(&self) -> Mat<f64> {
        linalg::kron(self.ky.matrix(), self.kx.matrix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureProvenance {
    Eig,
    Svd,
    Explicit,
}

impl FeatureProvenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureProvenance::Eig => "eig",
            FeatureProvenance::Svd => "svd",
            FeatureProvenance::Explicit => "explicit",
        }
    }
}

impl fmt::Display for FeatureProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureProvenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eig" => Ok(FeatureProvenance::Eig),
            "svd" => Ok(FeatureProvenance::Svd),
            "explicit" => Ok(FeatureProvenance::Explicit),
            other => Err(Error::invalid(format!("unknown feature provenance '{other}'"))),
        }
    }
}

/// Rank-`d` factor `Φ` with `Φ·Φᵀ ≈ K_z`; row `a` belongs to vectorization index `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: Mat<f64>,
    n_rows: usize,
    n_cols: usize,
    provenance: FeatureProvenance,
}

impl FeatureMap {
    pub fn explicit(phi: Mat<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::with_provenance(phi, n_rows, n_cols, FeatureProvenance::Explicit)
    }

    pub fn with_provenance(
        phi: Mat<f64>,
        n_rows: usize,
        n_cols: usize,
        provenance: FeatureProvenance,
    ) -> Result<Self> {
        if phi.nrows() != n_rows * n_cols || n_rows == 0 || n_cols == 0 {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows, expected {}x{} = {}",
                phi.nrows(),
                n_rows,
                n_cols,
                n_rows * n_cols
            )));
        }
        if phi.ncols() == 0 {
            return Err(Error::invalid("feature map needs at least one column"));
        }
        linalg::check_finite(phi.as_ref(), "feature matrix")?;
        Ok(Self {
            phi,
            n_rows,
            n_cols,
            provenance,
        })
    }

    pub fn phi(&self) -> MatRef<'_, f64> {
        self.phi.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn provenance(&self) -> FeatureProvenance {
        self.provenance
    }

    /// Feature vector of vectorization index `a`.
    pub fn row(&self, a: usize) -> Vec<f64> {
        (0..self.dim()).map(|c| self.phi[(a, c)]).collect()
    }

    /// Rows at the given vectorization indices, in order.
    pub fn gather_rows(&self, rows: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), self.dim(), |r, c| self.phi[(rows[r], c)])
    }

    /// `Φ·Φᵀ`; dense, for checks at small scale.
    pub fn gram(&self) -> Mat<f64> {
        &self.phi * self.phi.transpose()
    }
}

/// One candidate column of a product feature map: factor indices and weight.
struct ProductColumn {
    x_index: usize,
    y_index: usize,
    weight: f64,
}

/// Picks the `d` heaviest products, ties broken by `(y_index, x_index)`.
fn top_products(x_weights: &[f64], y_weights: &[f64], d: usize) -> Vec<ProductColumn> {
    let mut cols: Vec<ProductColumn> = y_weights
        .iter()
        .enumerate()
        .flat_map(|(b, &wy)| {
            x_weights.iter().enumerate().map(move |(a, &wx)| ProductColumn {
                x_index: a,
                y_index: b,
                weight: wx * wy,
            })
        })
        .collect();
    cols.sort_by(|p, q| {
        q.weight
            .total_cmp(&p.weight)
            .then(p.y_index.cmp(&q.y_index))
            .then(p.x_index.cmp(&q.x_index))
    });
    cols.truncate(d);
    cols
}

fn product_features(
    ux: MatRef<'_, f64>,
    uy: MatRef<'_, f64>,
    cols: &[ProductColumn],
    d: usize,
    scale: impl Fn(f64) -> f64,
) -> Mat<f64> {
    let n = ux.nrows();
    let l = uy.nrows();
    let mut phi = Mat::zeros(n * l, d);
    for (c, col) in cols.iter().enumerate() {
        let s = scale(col.weight);
        if s == 0.0 {
            continue;
        }
        for j in 0..l {
            let yv = s * uy[(j, col.y_index)];
            for i in 0..n {
                phi[(j * n + i, c)] = yv * ux[(i, col.x_index)];
            }
        }
    }
    phi
}

/// Mercer feature map from the top-`d` eigenpairs of `K_y ⊗ K_x`, obtained
/// from the factor eigendecompositions. Columns whose eigenvalue is zero
/// (rank-deficient requests) are left as zeros.
pub fn features_from_eig(kx: &KernelMatrix, ky: &KernelMatrix, d: usize) -> Result<FeatureMap> {
    let (n, l) = (kx.side(), ky.side());
    if d == 0 || d > n * l {
        return Err(Error::invalid(format!(
            "feature dimension {d} outside 1..={}",
            n * l
        )));
    }
    let (sx, qx) = kx.eigen()?;
    let (sy, qy) = ky.eigen()?;
    let sx: Vec<f64> = sx.into_iter().map(|v| v.max(0.0)).collect();
    let sy: Vec<f64> = sy.into_iter().map(|v| v.max(0.0)).collect();
    let cols = top_products(&sx, &sy, d);
    let phi = product_features(qx.as_ref(), qy.as_ref(), &cols, d, f64::sqrt);
    FeatureMap::with_provenance(phi, n, l, FeatureProvenance::Eig)
}

/// Feature map `U_d·D_d` from the top-`d` singular triplets of `Y ⊗ X`,
/// obtained from the thin SVDs of `X` and `Y`.
pub fn features_from_svd(x: MatRef<'_, f64>, y: MatRef<'_, f64>, d: usize) -> Result<FeatureMap> {
    let (n, tx) = (x.nrows(), x.ncols());
    let (l, ty) = (y.nrows(), y.ncols());
    if n == 0 || l == 0 || tx == 0 || ty == 0 {
        return Err(Error::invalid("feature matrices must be nonempty"));
    }
    let max_d = (n * l).min(tx * ty);
    if d == 0 || d > max_d {
        return Err(Error::invalid(format!("feature dimension {d} outside 1..={max_d}")));
    }
    linalg::check_finite(x, "row feature matrix")?;
    linalg::check_finite(y, "column feature matrix")?;
    let svd_x = x
        .thin_svd()
        .map_err(|e| Error::numerical(format!("SVD of row features failed: {e:?}")))?;
    let svd_y = y
        .thin_svd()
        .map_err(|e| Error::numerical(format!("SVD of column features failed: {e:?}")))?;
    let sx: Vec<f64> = (0..n.min(tx)).map(|k| svd_x.S().column_vector()[k]).collect();
    let sy: Vec<f64> = (0..l.min(ty)).map(|k| svd_y.S().column_vector()[k]).collect();
    let cols = top_products(&sx, &sy, d);
    let phi = product_features(svd_x.U(), svd_y.U(), &cols, d, |w| w);
    FeatureMap::with_provenance(phi, n, l, FeatureProvenance::Svd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_laplacian, Graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(n: usize, seed: u64) -> KernelMatrix {
        let x = random_matrix(n, n + 1, seed);
        linear_kernel(x.as_ref()).unwrap()
    }

    fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                m = m.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        m
    }

    #[test]
    fn diffusion_on_empty_graph_is_identity() {
        let lap = build_laplacian(&Graph::empty(4));
        let k = spectral_kernel(&lap, &SpectralWeighting::Diffusion { eta: 2.3 }).unwrap();
        assert!(max_abs_diff(k.matrix(), Mat::<f64>::identity(4, 4).as_ref()) < 1e-14);
    }

    #[test]
    fn diffusion_on_two_node_path() {
        let a = Mat::from_fn(2, 2, |i, j| if i != j { 1.0 } else { 0.0 });
        let lap = build_laplacian(&Graph::from_adjacency(a).unwrap());
        let k = spectral_kernel(&lap, &SpectralWeighting::Diffusion { eta: 1.0 }).unwrap();
        // Q = [[1,1],[1,−1]]/√2 with eigenvalues {0, 2}
        let e2 = (-2.0_f64).exp();
        let expected = Mat::from_fn(2, 2, |i, j| {
            if i == j {
                0.5 * (1.0 + e2)
            } else {
                0.5 * (1.0 - e2)
            }
        });
        assert!(max_abs_diff(k.matrix(), expected.as_ref()) < 1e-14);
    }

    #[test]
    fn regularized_laplacian_inverts_shifted_laplacian() {
        let a = Mat::from_fn(3, 3, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
        let lap = build_laplacian(&Graph::from_adjacency(a).unwrap());
        let eta = 0.7;
        let k = spectral_kernel(&lap, &SpectralWeighting::RegularizedLaplacian { eta }).unwrap();
        let shifted = Mat::from_fn(3, 3, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) + eta * lap.matrix()[(i, j)]
        });
        let prod = k.matrix() * &shifted;
        assert!(max_abs_diff(prod.as_ref(), Mat::<f64>::identity(3, 3).as_ref()) < 1e-12);
    }

    #[test]
    fn bandlimited_single_frequency_is_rank_one() {
        let g = crate::graphs::erdos_renyi(6, 0.6, 4).unwrap();
        let lap = build_laplacian(&g);
        let k = spectral_kernel(&lap, &SpectralWeighting::Bandlimited { pass_band: vec![0] }).unwrap();
        let (vals, _) = k.eigen().unwrap();
        let nonzero = vals.iter().filter(|v| v.abs() > 1e-10).count();
        assert_eq!(nonzero, 1);
        let (_, q) = lap.eigen().unwrap();
        let expected = Mat::from_fn(6, 6, |i, j| q[(i, 0)] * q[(j, 0)]);
        assert!(max_abs_diff(k.matrix(), expected.as_ref()) < 1e-12);
    }

    #[test]
    fn spectral_weighting_validation() {
        let lap = build_laplacian(&Graph::empty(3));
        assert!(spectral_kernel(&lap, &SpectralWeighting::Diffusion { eta: 0.0 }).is_err());
        assert!(spectral_kernel(&lap, &SpectralWeighting::Bandlimited { pass_band: vec![] }).is_err());
        assert!(spectral_kernel(&lap, &SpectralWeighting::Bandlimited { pass_band: vec![3] }).is_err());
    }

    #[test]
    fn linear_kernel_examples() {
        let k = linear_kernel(Mat::<f64>::identity(3, 3).as_ref()).unwrap();
        assert_eq!(k.matrix(), Mat::<f64>::identity(3, 3).as_ref());
        let ones = Mat::from_fn(4, 1, |_, _| 1.0);
        let k = linear_kernel(ones.as_ref()).unwrap();
        assert!(max_abs_diff(k.matrix(), Mat::from_fn(4, 4, |_, _| 1.0).as_ref()) == 0.0);

        let x = random_matrix(5, 3, 8);
        let k = linear_kernel(x.as_ref()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = (0..3).map(|c| x[(i, c)] * x[(j, c)]).sum();
                assert!((k.matrix()[(i, j)] - dot).abs() < 1e-14);
            }
        }
        assert!(KernelMatrix::new(k.into_inner()).is_ok());
    }

    #[test]
    fn gaussian_kernel_examples() {
        let same = Mat::from_fn(3, 2, |_, c| c as f64 + 0.5);
        let k = gaussian_kernel(same.as_ref(), 0.3).unwrap();
        assert!(max_abs_diff(k.matrix(), Mat::from_fn(3, 3, |_, _| 1.0).as_ref()) == 0.0);

        let x = random_matrix(3, 4, 2);
        let wide = gaussian_kernel(x.as_ref(), 1e12).unwrap();
        assert!(max_abs_diff(wide.matrix(), Mat::from_fn(3, 3, |_, _| 1.0).as_ref()) < 1e-10);

        let k = gaussian_kernel(x.as_ref(), 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut d2 = 0.0;
                for c in 0..4 {
                    d2 += (x[(i, c)] - x[(j, c)]) * (x[(i, c)] - x[(j, c)]);
                }
                assert!((k.matrix()[(i, j)] - (-d2 / 2.0).exp()).abs() < 1e-15);
            }
        }
        assert!(gaussian_kernel(x.as_ref(), 0.0).is_err());
        assert!(gaussian_kernel(x.as_ref(), -1.0).is_err());
    }

    fn textbook_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn pearson_kernel_examples() {
        let x = Mat::from_fn(3, 4, |i, c| {
            let base = [1.0, 4.0, 2.0, 7.0][c];
            match i {
                0 => base,
                1 => 2.0 * base + 3.0,
                _ => -base,
            }
        });
        let k = pearson_kernel(x.as_ref()).unwrap();
        assert!((k.matrix()[(0, 1)] - 1.0).abs() < 1e-14);
        assert!((k.matrix()[(0, 2)] + 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = loop {
            let b = Mat::from_fn(6, 10, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            let ok = (0..6).all(|i| {
                let s: f64 = (0..10).map(|c| b[(i, c)]).sum();
                s > 0.0 && s < 10.0
            });
            if ok {
                break b;
            }
        };
        let k = pearson_kernel(b.as_ref()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let ri = linalg::col_to_vec(b.transpose(), i);
                let rj = linalg::col_to_vec(b.transpose(), j);
                assert!((k.matrix()[(i, j)] - textbook_pearson(&ri, &rj)).abs() < 1e-12);
            }
            assert_eq!(k.matrix()[(i, i)], 1.0);
        }

        let constant = Mat::from_fn(2, 3, |i, c| if i == 0 { 5.0 } else { c as f64 });
        assert!(pearson_kernel(constant.as_ref()).is_err());
    }

    #[test]
    fn kernel_matrix_validation() {
        assert!(KernelMatrix::new(Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 })).is_err());
        assert!(KernelMatrix::new(Mat::from_fn(2, 2, |i, j| (i + 2 * j) as f64)).is_err());
        assert!(KernelMatrix::new(Mat::identity(3, 3)).is_ok());
    }

    #[test]
    fn kron_entry_identity_factors() {
        let kk = KroneckerKernel::new(
            Arc::new(KernelMatrix::identity(2)),
            Arc::new(KernelMatrix::identity(2)),
        );
        assert_eq!(kk.entry(0, 0).unwrap(), 1.0);
        assert_eq!(kk.entry(0, 1).unwrap(), 0.0);
        assert!(kk.entry(4, 0).is_err());
    }

    #[test]
    fn kron_entry_matches_dense_product_exhaustively() {
        for (n, l) in [(2, 2), (3, 2), (1, 4), (4, 3), (4, 4)] {
            let kx = random_kernel(n, n as u64);
            let ky = random_kernel(l, 10 + l as u64);
            // independent block construction of K_y ⊗ K_x
            let dense = Mat::from_fn(n * l, n * l, |r, c| {
                let (jr, ir) = (r / n, r % n);
                let (jc, ic) = (c / n, c % n);
                ky.matrix()[(jr, jc)] * kx.matrix()[(ir, ic)]
            });
            let kk = KroneckerKernel::new(Arc::new(kx), Arc::new(ky));
            for a in 0..n * l {
                for b in 0..n * l {
                    assert_eq!(kk.entry(a, b).unwrap(), dense[(a, b)]);
                    assert_eq!(kk.entry(a, b).unwrap(), kk.entry(b, a).unwrap());
                }
            }
        }
    }

    #[test]
    fn features_from_eig_diagonal_example() {
        let kx = KernelMatrix::new(Mat::from_fn(2, 2, |i, j| if i == j { [1.0, 2.0][i] } else { 0.0 })).unwrap();
        let ky = KernelMatrix::new(Mat::from_fn(2, 2, |i, j| if i == j { [3.0, 4.0][i] } else { 0.0 })).unwrap();
        let fm = features_from_eig(&kx, &ky, 2).unwrap();
        // K_y ⊗ K_x = diag(3, 6, 4, 8); the two largest products sit at
        // vectorization indices 3 and 1.
        let dense = linalg::kron(ky.matrix(), kx.matrix());
        let expected = Mat::from_fn(4, 4, |i, j| {
            if i == j && (dense[(i, i)] == 8.0 || dense[(i, i)] == 6.0) {
                dense[(i, i)]
            } else {
                0.0
            }
        });
        assert!(max_abs_diff(fm.gram().as_ref(), expected.as_ref()) < 1e-12);
        assert_eq!(expected[(1, 1)], 6.0);
        assert_eq!(expected[(3, 3)], 8.0);
        assert!(features_from_eig(&kx, &ky, 5).is_err());
        assert!(features_from_eig(&kx, &ky, 0).is_err());
    }

    #[test]
    fn features_from_eig_full_rank_reconstructs() {
        let kx = random_kernel(3, 1);
        let ky = random_kernel(4, 2);
        let fm = features_from_eig(&kx, &ky, 12).unwrap();
        let dense = linalg::kron(ky.matrix(), kx.matrix());
        let err = linalg::frob_sq((fm.gram() - &dense).as_ref()).sqrt();
        assert!(err <= 1e-8 * linalg::frob_sq(dense.as_ref()).sqrt());
        assert_eq!(fm.provenance(), FeatureProvenance::Eig);
    }

    #[test]
    fn features_from_svd_orthonormal_inputs() {
        // orthonormal columns: first columns of identity
        let x = Mat::from_fn(3, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = Mat::from_fn(4, 2, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
        let fm = features_from_svd(x.as_ref(), y.as_ref(), 4).unwrap();
        let g = fm.phi().transpose() * fm.phi();
        assert!(max_abs_diff(g.as_ref(), Mat::<f64>::identity(4, 4).as_ref()) < 1e-12);
    }

    #[test]
    fn features_from_svd_full_dimension() {
        let x = random_matrix(3, 2, 5);
        let y = random_matrix(2, 2, 6);
        let fm = features_from_svd(x.as_ref(), y.as_ref(), 4).unwrap();
        let yx = linalg::kron(y.as_ref(), x.as_ref());
        let dense = &yx * yx.transpose();
        assert!(max_abs_diff(fm.gram().as_ref(), dense.as_ref()) < 1e-8);
        assert!(features_from_svd(x.as_ref(), y.as_ref(), 5).is_err());
    }

    #[test]
    fn features_from_svd_rank_one_pads_with_zero_columns() {
        let x = Mat::from_fn(3, 2, |i, j| (i + 1) as f64 * (j + 1) as f64);
        let y = Mat::from_fn(2, 2, |i, j| (2 - i) as f64 * (j + 2) as f64);
        let one = features_from_svd(x.as_ref(), y.as_ref(), 1).unwrap();
        let full = features_from_svd(x.as_ref(), y.as_ref(), 4).unwrap();
        let yx = linalg::kron(y.as_ref(), x.as_ref());
        let dense = &yx * yx.transpose();
        assert!(max_abs_diff(one.gram().as_ref(), dense.as_ref()) < 1e-10);
        for c in 1..4 {
            let col_norm: f64 = (0..6).map(|r| full.phi()[(r, c)].powi(2)).sum();
            assert!(col_norm < 1e-20, "column {c} has norm² {col_norm}");
        }
    }
}
