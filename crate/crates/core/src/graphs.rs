//! Undirected weighted graphs, Laplacians, and the graph recipes used to seed
//! spectral kernels.

use std::collections::VecDeque;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Undirected graph stored as a dense symmetric adjacency matrix with zero
/// diagonal and nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Mat<f64>,
}

impl Graph {
    pub fn from_adjacency(adjacency: Mat<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || adjacency.ncols() != n {
            return Err(Error::invalid(format!(
                "adjacency must be square and nonempty, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("adjacency diagonal entry {i} is nonzero")));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::invalid(format!(
                        "adjacency entry ({i}, {j}) = {w} is not a finite nonnegative weight"
                    )));
                }
                if w != adjacency[(j, i)] {
                    return Err(Error::invalid(format!(
                        "adjacency is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { adjacency })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: Mat::zeros(n, n),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> MatRef<'_, f64> {
        self.adjacency.as_ref()
    }

    pub fn into_adjacency(self) -> Mat<f64> {
        self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] > 0.0
    }

    pub fn edge_count(&self) -> usize {
        let n = self.num_vertices();
        (0..n)
            .map(|i| (i + 1..n).filter(|&j| self.has_edge(i, j)).count())
            .sum()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vertices()).filter(move |&j| self.has_edge(i, j))
    }
}

/// Combinatorial Laplacian `L = diag(A·1) − A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: Mat<f64>,
}

impl Laplacian {
    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ascending eigenvalues and matching orthonormal eigenvectors.
    pub fn eigen(&self) -> Result<(Vec<f64>, Mat<f64>)> {
        linalg::sym_eigen(self.matrix.as_ref())
    }
}

pub fn build_laplacian(graph: &Graph) -> Laplacian {
    let a = graph.adjacency();
    let n = a.nrows();
    let mut matrix = Mat::zeros(n, n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            degree += a[(i, j)];
            matrix[(i, j)] = -a[(i, j)];
        }
        matrix[(i, i)] = degree;
    }
    Laplacian { matrix }
}

/// G(n, p) random graph with unit edge weights.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("graph needs at least one vertex"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                adjacency[(i, j)] = 1.0;
                adjacency[(j, i)] = 1.0;
            }
        }
    }
    Ok(Graph { adjacency })
}

fn check_distances(d: MatRef<'_, f64>) -> Result<()> {
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(Error::invalid("distance matrix must be square and nonempty"));
    }
    for i in 0..n {
        for j in 0..n {
            let v = d[(i, j)];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "distance ({i}, {j}) = {v} is not finite and nonnegative"
                )));
            }
            if v != d[(j, i)] {
                return Err(Error::invalid(format!("distances not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Connects every vertex to its `k` nearest neighbours, then symmetrizes as
/// `sign(Pᵀ + P)`. Distance ties resolve toward the lower vertex index.
pub fn knn_symmetric(distances: MatRef<'_, f64>, k: usize) -> Result<Graph> {
    check_distances(distances)?;
    let n = distances.nrows();
    if k >= n {
        return Err(Error::invalid(format!(
            "k = {k} neighbours requested but only {} other vertices exist",
            n - 1
        )));
    }
    let mut adjacency = Mat::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            distances[(i, a)]
                .total_cmp(&distances[(i, b)])
                .then(a.cmp(&b))
        });
        for &j in others.iter().take(k) {
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
    }
    Ok(Graph { adjacency })
}

/// All-pairs hop-count distances by breadth-first search. Any positive
/// weight counts as one hop.
pub fn geodesic_distances(graph: &Graph) -> Result<Mat<f64>> {
    let n = graph.num_vertices();
    let adjacency_lists: Vec<Vec<usize>> = (0..n).map(|i| graph.neighbors(i).collect()).collect();
    let mut out = Mat::zeros(n, n);
    let mut hops = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for source in 0..n {
        hops.fill(usize::MAX);
        hops[source] = 0;
        queue.clear();
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency_lists[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (target, &h) in hops.iter().enumerate() {
            if h == usize::MAX {
                return Err(Error::invalid(format!(
                    "graph is disconnected: vertex {target} unreachable from vertex {source}"
                )));
            }
            out[(source, target)] = h as f64;
        }
    }
    Ok(out)
}

/// Heat-kernel weights `exp(−n²·dᵢⱼ / Σdᵢⱼ)` with the diagonal zeroed, where
/// `n` is the number of vertices.
pub fn heat_adjacency(distances: MatRef<'_, f64>) -> Result<Graph> {
    check_distances(distances)?;
    let n = distances.nrows();
    let total: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| distances[(i, j)])
        .sum();
    if total <= 0.0 {
        return Err(Error::invalid("distance matrix sums to zero"));
    }
    let scale = (n * n) as f64 / total;
    let adjacency = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-scale * distances[(i, j)]).exp()
        }
    });
    Ok(Graph { adjacency })
}

/// Path-like band graph: vertex `i` links to every `j` with `0 < |i − j| ≤ half_width`.
pub fn band_graph(n: usize, half_width: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("graph needs at least one vertex"));
    }
    let adjacency = Mat::from_fn(n, n, |i, j| {
        let gap = i.abs_diff(j);
        if gap > 0 && gap <= half_width {
            1.0
        } else {
            0.0
        }
    });
    Ok(Graph { adjacency })
}
