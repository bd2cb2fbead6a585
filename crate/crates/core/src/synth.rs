//! Synthetic surveys with known parameters.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{lcar_sample_with, AdjacencyGraph};
use crate::model::{inv_logit, CutpointBlock, ModelSpec, ParameterState, SurveyDataset, Variant};

/// Rook-adjacency lattice; area `r · cols + c` sits in row `r`, column `c`.
pub fn grid_graph(rows: usize, cols: usize) -> Result<AdjacencyGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::Validation(format!(
            "grid must be at least 1x1, got {rows}x{cols}"
        )));
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let a = r * cols + c;
            if c + 1 < cols {
                edges.push((a, a + 1));
            }
            if r + 1 < rows {
                edges.push((a, a + cols));
            }
        }
    }
    AdjacencyGraph::from_edges(rows * cols, &edges)
}

/// Generating parameters and sampling design.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameters {
    /// Parameter values. `ire_phi` is drawn from `N(0, 1)` when it does not
    /// have one row per respondent.
    pub state: ParameterState,
    /// Draw `Φ` column by column from its LCAR prior instead of using
    /// `state.phi`.
    pub sample_phi: bool,
    /// Respondents per area.
    pub area_sizes: Vec<usize>,
    /// Probability of each cell, shared by all areas.
    pub cell_probs: Vec<f64>,
}

impl TrueParameters {
    /// Neutral parameters (see [`ParameterState::neutral`]) with `Φ` drawn
    /// from the prior, equal area sizes and equiprobable cells.
    pub fn neutral(spec: &ModelSpec, per_area: usize) -> Self {
        let d = spec.dims;
        Self {
            state: ParameterState::neutral(spec, 0),
            sample_phi: true,
            area_sizes: vec![per_area; d.areas],
            cell_probs: vec![1.0 / d.cells as f64; d.cells],
        }
    }

    pub fn num_respondents(&self) -> usize {
        self.area_sizes.iter().sum()
    }
}

/// A generated survey with the realized latent quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSurvey {
    pub data: SurveyDataset,
    /// Realized parameters after weighted centring with cut-point
    /// compensation.
    pub truth: ParameterState,
    pub theta: DMatrix<f64>,
    /// `n × K`, empty outside `CorrIre`.
    pub psi: DMatrix<f64>,
}

fn check(truth: &TrueParameters, spec: &ModelSpec, graph: &AdjacencyGraph) -> Result<()> {
    let d = spec.dims;
    if graph.num_areas() != d.areas || truth.area_sizes.len() != d.areas {
        return Err(Error::Dimension(
            "area count differs between spec, graph and design".into(),
        ));
    }
    if truth.cell_probs.len() != d.cells {
        return Err(Error::Dimension(format!(
            "{} cell probabilities for {} cells",
            truth.cell_probs.len(),
            d.cells
        )));
    }
    if truth.area_sizes.contains(&0) {
        return Err(Error::Validation(
            "every area needs at least one respondent".into(),
        ));
    }
    let mut st = truth.state.clone();
    if spec.variant.has_ire() && st.ire_phi.nrows() != truth.num_respondents() {
        st.ire_phi = DMatrix::zeros(truth.num_respondents(), d.variables);
    }
    st.check_dimensions(spec, truth.num_respondents())
}

fn sample_category<R: Rng + ?Sized>(rng: &mut R, eta: f64, cutpoints: &[f64]) -> usize {
    let u: f64 = rng.random();
    cutpoints
        .iter()
        .position(|&k| u < inv_logit(k + eta))
        .unwrap_or(cutpoints.len())
}

/// Draws a complete survey. Deterministic in `seed`.
pub fn generate_dataset(
    truth: &TrueParameters,
    spec: &ModelSpec,
    graph: &AdjacencyGraph,
    seed: u64,
) -> Result<SyntheticSurvey> {
    check(truth, spec, graph)?;
    let d = spec.dims;
    let k = d.variables;
    let n = truth.num_respondents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = truth.state.clone();

    if truth.sample_phi {
        for l in 0..k {
            let sigma2 = match spec.variant {
                Variant::Indep => state.sigma[l].powi(2),
                _ => 1.0,
            };
            let col = lcar_sample_with(state.rho[l], sigma2, graph, &mut rng)?;
            state
                .phi
                .set_column(l, &DMatrix::from_column_slice(d.areas, 1, &col).column(0));
        }
    }

    let cells = WeightedIndex::new(&truth.cell_probs)
        .map_err(|e| Error::Validation(format!("cell probabilities: {e}")))?;
    let mut cell_of = Vec::with_capacity(n);
    let mut area_of = Vec::with_capacity(n);
    for (m, &size) in truth.area_sizes.iter().enumerate() {
        for _ in 0..size {
            area_of.push(m);
            cell_of.push(cells.sample(&mut rng));
        }
    }

    state.center(spec, &truth.area_sizes)?;
    if spec.variant.has_ire() && state.ire_phi.nrows() != n {
        state.ire_phi = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    }

    let theta = state.theta();
    let psi = state.psi();
    let mut responses = Vec::with_capacity(n * k);
    for i in 0..n {
        let (z, m) = (cell_of[i], area_of[i]);
        for kk in 0..k {
            let mut eta = theta[(m, kk)];
            if spec.include_alpha {
                eta += state.alpha[(z, kk)];
            }
            if spec.variant.has_ire() {
                eta += psi[(i, kk)];
            }
            let kappa = state.cutpoints[spec.block_index(z, kk)].cutpoints();
            responses.push(Some(sample_category(&mut rng, eta, kappa) as u16));
        }
    }
    let data = SurveyDataset::new(
        k,
        d.categories,
        d.cells,
        d.areas,
        (1..=n).map(|i| i.to_string()).collect(),
        cell_of,
        area_of,
        responses,
    )?;
    Ok(SyntheticSurvey {
        data,
        truth: state,
        theta,
        psi,
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema("ragged matrix in truth record".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Serializable record of a generated survey's parameters and latents.
/// Matrices are stored as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: ModelSpec,
    pub seed: u64,
    pub area_sizes: Vec<usize>,
    pub cell_probs: Vec<f64>,
    pub cutpoints: Vec<CutpointBlock>,
    pub alpha: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub mixing: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_m: Option<f64>,
    pub ire_phi: Vec<Vec<f64>>,
    pub ire_mixing: Vec<Vec<f64>>,
    pub sigma_m_tilde: Option<f64>,
    pub theta: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub sigma_b: Vec<Vec<f64>>,
    pub sigma_tilde_b: Option<Vec<Vec<f64>>>,
}

impl TruthRecord {
    pub fn new(
        survey: &SyntheticSurvey,
        truth: &TrueParameters,
        spec: &ModelSpec,
        seed: u64,
    ) -> Self {
        let s = &survey.truth;
        Self {
            spec: spec.clone(),
            seed,
            area_sizes: truth.area_sizes.clone(),
            cell_probs: truth.cell_probs.clone(),
            cutpoints: s.cutpoints.clone(),
            alpha: rows(&s.alpha),
            phi: rows(&s.phi),
            mixing: rows(&s.mixing),
            rho: s.rho.clone(),
            sigma: s.sigma.clone(),
            sigma_m: s.sigma_m,
            ire_phi: rows(&s.ire_phi),
            ire_mixing: rows(&s.ire_mixing),
            sigma_m_tilde: s.sigma_m_tilde,
            theta: rows(&survey.theta),
            psi: rows(&survey.psi),
            sigma_b: rows(&s.sigma_b()),
            sigma_tilde_b: s.sigma_tilde_b().as_ref().map(rows),
        }
    }

    /// The realized parameter state.
    pub fn state(&self) -> Result<ParameterState> {
        let k = self.spec.dims.variables;
        let width = |r: &[Vec<f64>]| r.first().map_or(0, Vec::len);
        let st = ParameterState {
            cutpoints: self.cutpoints.clone(),
            alpha: from_rows(&self.alpha, width(&self.alpha))?,
            phi: from_rows(&self.phi, k)?,
            mixing: from_rows(&self.mixing, k)?,
            rho: self.rho.clone(),
            sigma: self.sigma.clone(),
            sigma_m: self.sigma_m,
            ire_phi: from_rows(&self.ire_phi, width(&self.ire_phi))?,
            ire_mixing: from_rows(&self.ire_mixing, width(&self.ire_mixing))?,
            sigma_m_tilde: self.sigma_m_tilde,
        };
        st.check_dimensions(&self.spec, self.area_sizes.iter().sum())?;
        Ok(st)
    }

    pub fn theta(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.theta, self.spec.dims.variables)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{category_probs, CutpointMode, Dimensions};

    fn spec(variant: Variant, k: usize, cells: usize, areas: usize) -> ModelSpec {
        ModelSpec::new(
            variant,
            CutpointMode::PerCell,
            false,
            Dimensions {
                categories: 4,
                variables: k,
                cells,
                areas,
            },
        )
        .unwrap()
    }

    #[test]
    fn grid_shapes() {
        let g = grid_graph(1, 1).unwrap();
        assert_eq!((g.num_areas(), g.edges().len()), (1, 0));
        assert_eq!(grid_graph(2, 2).unwrap().edges().len(), 4);
        let g = grid_graph(3, 3).unwrap();
        assert_eq!(g.edges().len(), 12);
        assert_eq!(g.degrees()[0], 2);
        assert_eq!(g.degrees()[4], 4);
        assert_eq!(g.degrees()[1], 3);
        assert!(grid_graph(0, 3).is_err());
    }

    #[test]
    fn neutral_truth_gives_uniform_frequencies() {
        let s = spec(Variant::Corr, 2, 1, 4);
        let g = grid_graph(2, 2).unwrap();
        let mut t = TrueParameters::neutral(&s, 25_000);
        t.sample_phi = false;
        let out = generate_dataset(&t, &s, &g, 5).unwrap();
        let mut counts = [[0usize; 4]; 2];
        for (i, k) in out.data.observed_pairs() {
            counts[k][out.data.response(i, k).unwrap()] += 1;
        }
        for row in counts {
            for c in row {
                assert!((c as f64 / 1e5 - 0.25).abs() < 0.005);
            }
        }
    }

    #[test]
    fn negative_theta_shifts_toward_last_category() {
        let s = spec(Variant::Indep, 1, 1, 2);
        let g = grid_graph(1, 2).unwrap();
        let mut t = TrueParameters::neutral(&s, 2000);
        t.sample_phi = false;
        t.state.phi = DMatrix::from_column_slice(2, 1, &[-3.0, 0.0]);
        let out = generate_dataset(&t, &s, &g, 9).unwrap();
        let first = |m: usize| {
            let r = out.data.respondents_in_area(m);
            r.iter()
                .filter(|&&i| out.data.response(i, 0) == Some(0))
                .count() as f64
                / r.len() as f64
        };
        let global = (0..out.data.num_respondents())
            .filter(|&i| out.data.response(i, 0) == Some(0))
            .count() as f64
            / out.data.num_respondents() as f64;
        assert!(first(0) < global);
        assert!(first(0) < first(1));
    }

    #[test]
    fn deterministic_and_centred() {
        let s = spec(Variant::CorrIre, 2, 3, 9);
        let g = grid_graph(3, 3).unwrap();
        let mut t = TrueParameters::neutral(&s, 30);
        t.area_sizes[4] = 3;
        t.cell_probs = vec![0.2, 0.5, 0.3];
        let a = generate_dataset(&t, &s, &g, 42).unwrap();
        let b = generate_dataset(&t, &s, &g, 42).unwrap();
        assert_eq!(a, b);
        for w in a.truth.weighted_sums(&t.area_sizes) {
            assert!(w.abs() < 1e-10);
        }
        assert_eq!(a.data.area_sizes(), t.area_sizes.as_slice());
        assert_eq!(a.psi.shape(), (a.data.num_respondents(), 2));
    }

    #[test]
    fn per_cell_frequencies_match_probabilities() {
        let s = spec(Variant::Corr, 2, 2, 2);
        let g = grid_graph(1, 2).unwrap();
        let mut t = TrueParameters::neutral(&s, 50_000);
        t.sample_phi = false;
        t.state.phi = DMatrix::from_row_slice(2, 2, &[0.8, -0.4, -0.8, 0.4]);
        t.state.mixing = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.9]);
        t.state.cutpoints = vec![
            CutpointBlock::from_simplex(vec![0.1, 0.4, 0.3, 0.2]).unwrap(),
            CutpointBlock::from_simplex(vec![0.3, 0.3, 0.2, 0.2]).unwrap(),
            CutpointBlock::from_simplex(vec![0.25, 0.25, 0.4, 0.1]).unwrap(),
            CutpointBlock::from_simplex(vec![0.6, 0.2, 0.1, 0.1]).unwrap(),
        ];
        let out = generate_dataset(&t, &s, &g, 3).unwrap();
        for z in 0..2 {
            for m in 0..2 {
                for k in 0..2 {
                    let members: Vec<usize> = out
                        .data
                        .respondents_in_area(m)
                        .iter()
                        .copied()
                        .filter(|&i| out.data.cell(i) == z)
                        .collect();
                    let n = members.len() as f64;
                    let kappa = out.truth.cutpoints[s.block_index(z, k)].cutpoints();
                    let pi = category_probs(out.theta[(m, k)], kappa).unwrap();
                    for (j, p) in pi.iter().enumerate() {
                        let c = members
                            .iter()
                            .filter(|&&i| out.data.response(i, k) == Some(j))
                            .count();
                        let se = (p * (1.0 - p) / n).sqrt();
                        assert!((c as f64 / n - p).abs() < 3.0 * se, "z{z} m{m} k{k} j{j}");
                    }
                }
            }
        }
    }

    #[test]
    fn truth_json_round_trip() {
        let s = spec(Variant::CorrIre, 2, 2, 4);
        let g = grid_graph(2, 2).unwrap();
        let t = TrueParameters::neutral(&s, 5);
        let out = generate_dataset(&t, &s, &g, 1).unwrap();
        let rec = TruthRecord::new(&out, &t, &s, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.json");
        rec.write_json(&p).unwrap();
        let back = TruthRecord::read_json(&p).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.state().unwrap(), out.truth);
        assert_eq!(back.theta().unwrap(), out.theta);
    }

    #[test]
    fn mismatched_design_is_rejected() {
        let s = spec(Variant::Corr, 2, 2, 4);
        let g = grid_graph(2, 2).unwrap();
        let mut t = TrueParameters::neutral(&s, 5);
        t.cell_probs = vec![1.0];
        assert!(matches!(
            generate_dataset(&t, &s, &g, 1),
            Err(Error::Dimension(_))
        ));
        let g3 = grid_graph(1, 3).unwrap();
        let t = TrueParameters::neutral(&s, 5);
        assert!(generate_dataset(&t, &s, &g3, 1).is_err());
    }
}
