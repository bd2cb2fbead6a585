//! Areal adjacency and the Leroux conditional autoregressive (LCAR) prior.
//!
//! An [`AdjacencyGraph`] holds a binary, symmetric neighbourhood structure
//! over `M` areas together with the eigenvalues of its graph Laplacian
//! `R = D - W`. The eigenvalues are computed once on construction, which
//! makes the log-determinant of the LCAR precision
//!
//! ```text
//! Q = (1/σ²) [ρ (D - W) + (1 - ρ) I]
//! ```
//!
//! an `O(M)` sum for any `ρ`. The quadratic form is accumulated over the edge
//! list, so evaluating the density never touches a dense matrix.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Areal neighbourhood structure with cached Laplacian spectrum.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    num_areas: usize,
    neighbors: Vec<Vec<usize>>,
    degrees: Vec<usize>,
    edges: Vec<(usize, usize)>,
    eigenvalues: Vec<f64>,
    components: Vec<usize>,
}

impl AdjacencyGraph {
    /// Builds a graph from undirected edges over `num_areas` areas.
    ///
    /// Each edge may be listed once in either orientation or twice (once per
    /// orientation). Self-loops and out-of-range indices are rejected.
    pub fn from_edges(num_areas: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_areas == 0 {
            return Err(Error::Validation(
                "graph must contain at least one area".into(),
            ));
        }
        let mut sets = vec![BTreeSet::new(); num_areas];
        for &(i, j) in edges {
            if i >= num_areas || j >= num_areas {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) references an area outside 0..{num_areas}"
                )));
            }
            if i == j {
                return Err(Error::Validation(format!("self-loop on area {i}")));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        let neighbors: Vec<Vec<usize>> =
            sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(Self::from_neighbor_lists(neighbors))
    }

    /// Builds a graph from per-area neighbour lists, which must already be
    /// symmetric.
    pub fn from_adjacency_lists(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let m = neighbors.len();
        if m == 0 {
            return Err(Error::Validation(
                "graph must contain at least one area".into(),
            ));
        }
        let mut sorted = Vec::with_capacity(m);
        for (i, list) in neighbors.iter().enumerate() {
            let set: BTreeSet<usize> = list.iter().copied().collect();
            if set.len() != list.len() {
                return Err(Error::Validation(format!(
                    "duplicate neighbour listed for area {i}"
                )));
            }
            for &j in &set {
                if j >= m {
                    return Err(Error::Validation(format!(
                        "area {i} lists neighbour {j} outside 0..{m}"
                    )));
                }
                if j == i {
                    return Err(Error::Validation(format!("self-loop on area {i}")));
                }
                if !neighbors[j].contains(&i) {
                    return Err(Error::Validation(format!(
                        "asymmetric adjacency: {i} lists {j} but {j} does not list {i}"
                    )));
                }
            }
            sorted.push(set.into_iter().collect());
        }
        Ok(Self::from_neighbor_lists(sorted))
    }

    fn from_neighbor_lists(neighbors: Vec<Vec<usize>>) -> Self {
        let num_areas = neighbors.len();
        let degrees: Vec<usize> = neighbors.iter().map(Vec::len).collect();
        let edges: Vec<(usize, usize)> = neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect();

        let laplacian = dense_laplacian(num_areas, &neighbors);
        let mut eigenvalues: Vec<f64> = laplacian
            .symmetric_eigenvalues()
            .iter()
            .map(|&v| v.max(0.0))
            .collect();
        eigenvalues.sort_by(f64::total_cmp);

        let components = component_sizes(&neighbors);
        if components.len() > 1 {
            log::warn!(
                "adjacency graph has {} connected components (sizes {:?})",
                components.len(),
                components
            );
        }
        let islands: Vec<usize> = (0..num_areas).filter(|&i| degrees[i] == 0).collect();
        if !islands.is_empty() && num_areas > 1 {
            log::warn!("areas without neighbours: {islands:?}");
        }

        Self {
            num_areas,
            neighbors,
            degrees,
            edges,
            eigenvalues,
            components,
        }
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    pub fn neighbors(&self, area: usize) -> &[usize] {
        &self.neighbors[area]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Eigenvalues of `D - W`, ascending.
    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Sizes of the connected components, in order of their smallest area.
    pub fn component_sizes(&self) -> &[usize] {
        &self.components
    }

    /// `Σᵢ log(ρλᵢ + 1 − ρ)`, the log-determinant of the unscaled precision.
    pub fn lcar_log_det(&self, rho: f64) -> f64 {
        self.eigenvalues
            .iter()
            .map(|&l| (rho * l + 1.0 - rho).ln())
            .sum()
    }

    /// `θᵀ[ρ(D − W) + (1 − ρ)I]θ`, accumulated over the edge list.
    pub fn lcar_quadratic(&self, theta: &[f64], rho: f64) -> f64 {
        let smooth: f64 = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let d = theta[i] - theta[j];
                d * d
            })
            .sum();
        let ridge: f64 = theta.iter().map(|t| t * t).sum();
        rho * smooth + (1.0 - rho) * ridge
    }

    /// Dense unscaled precision `ρ(D − W) + (1 − ρ)I`.
    pub fn lcar_precision(&self, rho: f64) -> DMatrix<f64> {
        let r = dense_laplacian(self.num_areas, &self.neighbors);
        r * rho + DMatrix::identity(self.num_areas, self.num_areas) * (1.0 - rho)
    }
}

fn dense_laplacian(m: usize, neighbors: &[Vec<usize>]) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(m, m);
    for (i, list) in neighbors.iter().enumerate() {
        r[(i, i)] = list.len() as f64;
        for &j in list {
            r[(i, j)] = -1.0;
        }
    }
    r
}

fn component_sizes(neighbors: &[Vec<usize>]) -> Vec<usize> {
    let m = neighbors.len();
    let mut seen = vec![false; m];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..m {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &w in &neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

/// Reads an edge-list adjacency file.
///
/// One edge per line as `i j` (0-based, whitespace separated); `#` starts a
/// comment. A line holding a single index declares an area without adding an
/// edge, which is how islands beyond the largest edge index are listed.
pub fn load_adjacency(path: impl AsRef<Path>) -> Result<AdjacencyGraph> {
    load_adjacency_with_areas(path, None)
}

/// As [`load_adjacency`], with an optional known number of areas. The graph
/// spans `max(num_areas, largest index + 1)` areas.
pub fn load_adjacency_with_areas(
    path: impl AsRef<Path>,
    num_areas: Option<usize>,
) -> Result<AdjacencyGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (declared, edges) = parse_edge_list(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })?;
    let m = num_areas.unwrap_or(0).max(declared);
    if let Some(expected) = num_areas {
        if declared > expected {
            return Err(Error::Validation(format!(
                "adjacency references {declared} areas but {expected} were expected"
            )));
        }
    }
    AdjacencyGraph::from_edges(m, &edges)
}

/// Parses edge-list text into `(areas spanned, directed edge list)`, after
/// checking that any edge given in both orientations is given consistently.
pub fn parse_edge_list(
    text: &str,
) -> std::result::Result<(usize, Vec<(usize, usize)>), (usize, String)> {
    let mut edges = Vec::new();
    let mut span = 0usize;
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| {
                (
                    lineno + 1,
                    format!("expected a non-negative integer, found {s:?}"),
                )
            })
        };
        match fields.as_slice() {
            [a] => {
                let a = parse(a)?;
                span = span.max(a + 1);
            }
            [a, b] => {
                let (a, b) = (parse(a)?, parse(b)?);
                span = span.max(a.max(b) + 1);
                if !seen.insert((a, b)) {
                    return Err((lineno + 1, format!("edge {a} {b} listed more than once")));
                }
                edges.push((a, b));
            }
            _ => {
                return Err((
                    lineno + 1,
                    format!("expected `i j`, found {} fields", fields.len()),
                ))
            }
        }
    }
    Ok((span, edges))
}

/// Writes a graph as an edge list, one `i j` line per undirected edge and a
/// lone index for every isolated area.
pub fn write_adjacency(graph: &AdjacencyGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# {} areas\n", graph.num_areas());
    for i in 0..graph.num_areas() {
        if graph.degrees()[i] == 0 {
            out.push_str(&format!("{i}\n"));
        }
    }
    for &(i, j) in graph.edges() {
        out.push_str(&format!("{i} {j}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn check_lcar_args(len: usize, rho: f64, sigma2: f64, graph: &AdjacencyGraph) -> Result<()> {
    if len != graph.num_areas() {
        return Err(Error::Dimension(format!(
            "theta has length {len}, graph has {} areas",
            graph.num_areas()
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("rho = {rho} is outside (0, 1)")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("sigma2 = {sigma2} must be positive")));
    }
    Ok(())
}

/// Log-density of `θ ~ LCAR(σ², ρ)`.
pub fn lcar_logdensity(
    theta: &[f64],
    rho: f64,
    sigma2: f64,
    graph: &AdjacencyGraph,
) -> Result<f64> {
    check_lcar_args(theta.len(), rho, sigma2, graph)?;
    Ok(lcar_logdensity_unchecked(theta, rho, sigma2, graph))
}

pub(crate) fn lcar_logdensity_unchecked(
    theta: &[f64],
    rho: f64,
    sigma2: f64,
    graph: &AdjacencyGraph,
) -> f64 {
    let m = graph.num_areas() as f64;
    -0.5 * m * (2.0 * PI * sigma2).ln() + 0.5 * graph.lcar_log_det(rho)
        - graph.lcar_quadratic(theta, rho) / (2.0 * sigma2)
}

/// Exact draw from `LCAR(σ², ρ)` seeded by `seed`.
pub fn lcar_sample(rho: f64, sigma2: f64, graph: &AdjacencyGraph, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lcar_sample_with(rho, sigma2, graph, &mut rng)
}

/// Exact LCAR draw from a caller-owned generator: with `Q = LLᵀ`, solving
/// `Lᵀx = z` for standard normal `z` gives `x ~ N(0, Q⁻¹)`.
pub fn lcar_sample_with<R: Rng + ?Sized>(
    rho: f64,
    sigma2: f64,
    graph: &AdjacencyGraph,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_lcar_args(graph.num_areas(), rho, sigma2, graph)?;
    let q = graph.lcar_precision(rho) / sigma2;
    let chol = q
        .cholesky()
        .ok_or_else(|| Error::Domain("LCAR precision is not positive definite".into()))?;
    let z = DVector::from_fn(graph.num_areas(), |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2x2() -> AdjacencyGraph {
        AdjacencyGraph::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap()
    }

    #[test]
    fn grid_laplacian_spectrum() {
        let g = grid2x2();
        assert_eq!(g.degrees(), &[2, 2, 2, 2]);
        // Dense oracle on the explicit Laplacian.
        let r = DMatrix::from_row_slice(
            4,
            4,
            &[
                2., -1., -1., 0., -1., 2., 0., -1., -1., 0., 2., -1., 0., -1., -1., 2.,
            ],
        );
        let mut oracle: Vec<f64> = r.symmetric_eigenvalues().iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (got, want) in g.laplacian_eigenvalues().iter().zip([0.0, 2.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in g.laplacian_eigenvalues().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node() {
        let (span, edges) = parse_edge_list("0\n").unwrap();
        let g = AdjacencyGraph::from_edges(span, &edges).unwrap();
        assert_eq!(g.degrees(), &[0]);
        assert_eq!(g.laplacian_eigenvalues(), &[0.0]);
    }

    #[test]
    fn rejects_self_loop() {
        let (span, edges) = parse_edge_list("0 1\n3 3\n").unwrap();
        assert!(matches!(
            AdjacencyGraph::from_edges(span, &edges),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_asymmetric_lists() {
        let lists = vec![vec![1], vec![]];
        assert!(matches!(
            AdjacencyGraph::from_adjacency_lists(lists),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn parse_errors_report_line() {
        let err = parse_edge_list("# header\n0 1\n1 x\n").unwrap_err();
        assert_eq!(err.0, 3);
        assert!(parse_edge_list("0 1 2\n").is_err());
        assert!(parse_edge_list("0 1\n0 1\n").is_err());
        // both orientations are fine
        assert!(parse_edge_list("0 1\n1 0\n").is_ok());
    }

    #[test]
    fn disconnected_components() {
        let g = AdjacencyGraph::from_edges(5, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(g.component_sizes(), &[2, 2, 1]);
        let zeros = g
            .laplacian_eigenvalues()
            .iter()
            .filter(|v| v.abs() < 1e-9)
            .count();
        assert_eq!(zeros, 3);
    }

    #[test]
    fn normalizing_constant_at_zero() {
        let g = grid2x2();
        let (rho, s2) = (0.3, 2.0);
        let got = lcar_logdensity(&[0.0; 4], rho, s2, &g).unwrap();
        let want = -2.0 * (2.0 * PI * s2).ln()
            + 0.5
                * [0.0, 2.0, 2.0, 4.0]
                    .iter()
                    .map(|l: &f64| (rho * l + 1.0 - rho).ln())
                    .sum::<f64>();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn iid_limit() {
        let g = grid2x2();
        let theta = [0.3, -1.2, 0.5, 2.0];
        let s2: f64 = 1.7;
        let got = lcar_logdensity(&theta, 1e-14, s2, &g).unwrap();
        let want: f64 = theta
            .iter()
            .map(|t| -0.5 * (2.0 * PI * s2).ln() - t * t / (2.0 * s2))
            .sum();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn domain_errors() {
        let g = grid2x2();
        assert!(matches!(
            lcar_logdensity(&[0.0; 3], 0.5, 1.0, &g),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            lcar_logdensity(&[0.0; 4], 1.0, 1.0, &g),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            lcar_logdensity(&[0.0; 4], 0.5, 0.0, &g),
            Err(Error::Domain(_))
        ));
        assert!(lcar_sample(0.0, 1.0, &g, 1).is_err());
    }

    #[test]
    fn sample_is_deterministic() {
        let g = grid2x2();
        assert_eq!(
            lcar_sample(0.5, 1.0, &g, 42).unwrap(),
            lcar_sample(0.5, 1.0, &g, 42).unwrap()
        );
        assert_ne!(
            lcar_sample(0.5, 1.0, &g, 42).unwrap(),
            lcar_sample(0.5, 1.0, &g, 43).unwrap()
        );
    }

    #[test]
    fn iid_limit_sample_variance() {
        let g = AdjacencyGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let mut sumsq = [0.0; 3];
        for _ in 0..n {
            let x = lcar_sample_with(1e-12, 4.0, &g, &mut rng).unwrap();
            for (s, v) in sumsq.iter_mut().zip(&x) {
                *s += v * v;
            }
        }
        // var(s²) = 2σ⁴ for a normal, so the standard error is 4·sqrt(2/n)
        let se = 4.0 * (2.0 / n as f64).sqrt();
        for s in sumsq {
            assert!((s / n as f64 - 4.0).abs() < 4.0 * se);
        }
    }
}
