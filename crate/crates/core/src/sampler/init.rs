use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::model::{
    logposterior, CutpointBlock, CutpointMode, ModelSpec, ParameterState, SurveyDataset,
};

const INIT_SD: f64 = 0.1;
const MAX_ATTEMPTS: usize = 100;
/// Cells with fewer responses than `SPARSE_PER_CATEGORY · J` are shrunk
/// halfway toward the variable's global frequencies.
const SPARSE_PER_CATEGORY: usize = 10;
const PSEUDO_COUNT: f64 = 0.5;

fn smoothed(counts: &[usize]) -> Option<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let denom = total as f64 + PSEUDO_COUNT * counts.len() as f64;
    Some(
        counts
            .iter()
            .map(|&c| (c as f64 + PSEUDO_COUNT) / denom)
            .collect(),
    )
}

/// Starting simplexes from empirical category frequencies.
pub(crate) fn empirical_cutpoints(
    spec: &ModelSpec,
    data: &SurveyDataset,
) -> Result<Vec<CutpointBlock>> {
    let d = spec.dims;
    let j = d.categories;
    let mut global = vec![vec![0usize; j]; d.variables];
    let mut per_cell = vec![vec![vec![0usize; j]; d.variables]; d.cells];
    for (i, k) in data.observed_pairs() {
        let y = data.response(i, k).expect("observed");
        global[k][y] += 1;
        per_cell[data.cell(i)][k][y] += 1;
    }
    let uniform = vec![1.0 / j as f64; j];
    let global_delta: Vec<Vec<f64>> = global
        .iter()
        .map(|c| smoothed(c).unwrap_or_else(|| uniform.clone()))
        .collect();
    (0..spec.num_cutpoint_blocks())
        .map(|b| {
            let delta = match (spec.cutpoint_mode, spec.block_owner(b)) {
                (CutpointMode::PerCell, (Some(z), k)) => {
                    let counts = &per_cell[z][k];
                    let total: usize = counts.iter().sum();
                    match smoothed(counts) {
                        None => global_delta[k].clone(),
                        Some(cell) if total < SPARSE_PER_CATEGORY * j => cell
                            .iter()
                            .zip(&global_delta[k])
                            .map(|(a, g)| 0.5 * a + 0.5 * g)
                            .collect(),
                        Some(cell) => cell,
                    }
                }
                (_, (_, k)) => global_delta[k].clone(),
            };
            let sum: f64 = delta.iter().sum();
            CutpointBlock::from_simplex(delta.iter().map(|x| x / sum).collect())
        })
        .collect()
}

/// Draws a starting point: empirical cut points, `Φ, Φ̃ ~ N(0, 0.1²)` with
/// `Φ` weighted-centred, `M = M̃ = 0.1·I`, `ρ = 0.5` and unit scales.
pub fn initialize_state<R: Rng + ?Sized>(
    spec: &ModelSpec,
    data: &SurveyDataset,
    graph: &AdjacencyGraph,
    rng: &mut R,
) -> Result<ParameterState> {
    let d = spec.dims;
    let n = data.num_respondents();
    let cutpoints = empirical_cutpoints(spec, data)?;
    let sizes = data.area_sizes();
    let total: usize = sizes.iter().sum();
    for _ in 0..MAX_ATTEMPTS {
        let mut state = ParameterState::neutral(spec, n);
        state.cutpoints = cutpoints.clone();
        state.phi = DMatrix::from_fn(d.areas, d.variables, |_, _| {
            INIT_SD * rng.sample::<f64, _>(StandardNormal)
        });
        if total > 0 {
            let means = state.weighted_sums(sizes);
            for (l, s) in means.into_iter().enumerate() {
                state.phi.column_mut(l).add_scalar_mut(-s / total as f64);
            }
        }
        if spec.variant.has_mixing() {
            state.mixing = DMatrix::identity(d.variables, d.variables) * INIT_SD;
        }
        if spec.variant.has_ire() {
            state.ire_phi = DMatrix::from_fn(n, d.variables, |_, _| {
                INIT_SD * rng.sample::<f64, _>(StandardNormal)
            });
            state.ire_mixing = DMatrix::identity(d.variables, d.variables) * INIT_SD;
        }
        if logposterior(&state, spec, data, graph)?.is_finite() {
            return Ok(state);
        }
    }
    Err(Error::Initialization(format!(
        "no finite log-posterior after {MAX_ATTEMPTS} attempts"
    )))
}
