//! Log-likelihood, log-prior and log-posterior of the three variants.

use super::cutpoints::log_category_prob;
use super::data::SurveyDataset;
use super::spec::{ModelSpec, Variant};
use super::state::ParameterState;
use crate::error::{Error, Result};
use crate::graph::{lcar_logdensity_unchecked, AdjacencyGraph};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Offset `α_{z_i k} + θ_{m_i k} + ψ_{ik}` added to every cut point of
/// respondent `i`, variable `k`.
pub fn linear_predictor(
    state: &ParameterState,
    spec: &ModelSpec,
    data: &SurveyDataset,
    respondent: usize,
    k: usize,
) -> Result<f64> {
    if respondent >= data.num_respondents() || k >= spec.dims.variables {
        return Err(Error::Dimension(format!(
            "respondent {respondent} / variable {k} out of range"
        )));
    }
    let m = data.area(respondent);
    let kk = spec.dims.variables;
    let mut eta: f64 = (0..kk)
        .map(|l| state.phi[(m, l)] * state.mixing[(l, k)])
        .sum();
    if spec.include_alpha {
        eta += state.alpha[(data.cell(respondent), k)];
    }
    if spec.variant.has_ire() {
        eta += (0..kk)
            .map(|l| state.ire_phi[(respondent, l)] * state.ire_mixing[(l, k)])
            .sum::<f64>();
    }
    Ok(eta)
}

/// Total log-likelihood and its pointwise terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihood {
    pub total: f64,
    /// `log p(y_ik)` for every non-missing pair, in the order of
    /// [`SurveyDataset::observed_pairs`].
    pub pointwise: Vec<f64>,
}

fn check_compatible(state: &ParameterState, spec: &ModelSpec, data: &SurveyDataset) -> Result<()> {
    let d = spec.dims;
    if data.num_variables() != d.variables
        || data.num_categories() != d.categories
        || data.num_cells() != d.cells
        || data.num_areas() != d.areas
    {
        return Err(Error::Dimension(format!(
            "dataset (K={}, J={}, Z={}, M={}) does not match model (K={}, J={}, Z={}, M={})",
            data.num_variables(),
            data.num_categories(),
            data.num_cells(),
            data.num_areas(),
            d.variables,
            d.categories,
            d.cells,
            d.areas
        )));
    }
    state.check_dimensions(spec, data.num_respondents())
}

pub fn loglik(
    state: &ParameterState,
    spec: &ModelSpec,
    data: &SurveyDataset,
) -> Result<LogLikelihood> {
    check_compatible(state, spec, data)?;
    let theta = state.theta();
    let psi = state.psi();
    let mut pointwise = Vec::with_capacity(data.num_observed());
    for (i, k) in data.observed_pairs() {
        let y = data.response(i, k).expect("observed pair");
        let mut eta = theta[(data.area(i), k)];
        if spec.include_alpha {
            eta += state.alpha[(data.cell(i), k)];
        }
        if spec.variant.has_ire() {
            eta += psi[(i, k)];
        }
        let block = &state.cutpoints[spec.block_index(data.cell(i), k)];
        pointwise.push(log_category_prob(eta, block.cutpoints(), y));
    }
    Ok(LogLikelihood {
        total: pointwise.iter().sum(),
        pointwise,
    })
}

fn normal_logpdf(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

/// Whether every constrained parameter lies inside its prior support.
pub fn in_support(state: &ParameterState, spec: &ModelSpec) -> bool {
    let upper = spec.sigma_upper;
    let scale_ok = |s: f64| s > 0.0 && s <= upper;
    state.cutpoints.iter().all(|b| b.in_support())
        && state.rho.iter().all(|&r| r > 0.0 && r < 1.0)
        && state.sigma.iter().all(|&s| scale_ok(s))
        && state.sigma_m.is_none_or(scale_ok)
        && state.sigma_m_tilde.is_none_or(scale_ok)
        && (!spec.include_alpha || state.alpha.row(0).iter().all(|&a| a == 0.0))
        && state.phi.iter().all(|x| x.is_finite())
        && state.mixing.iter().all(|x| x.is_finite())
        && state.alpha.iter().all(|x| x.is_finite())
        && state.ire_phi.iter().all(|x| x.is_finite())
        && state.ire_mixing.iter().all(|x| x.is_finite())
}

/// Log prior density; `−∞` outside the support.
///
/// Dirichlet(1) simplexes, uniform `ρ` and bounded-uniform scales contribute
/// only their support indicator; the flat prior on `α` contributes nothing.
pub fn logprior(state: &ParameterState, spec: &ModelSpec, graph: &AdjacencyGraph) -> f64 {
    if !in_support(state, spec) {
        return f64::NEG_INFINITY;
    }
    if state.phi.nrows() != graph.num_areas() {
        return f64::NEG_INFINITY;
    }
    let k = spec.dims.variables;
    let mut lp = 0.0;
    for l in 0..k {
        let col: Vec<f64> = state.phi.column(l).iter().copied().collect();
        let sigma2 = match spec.variant {
            Variant::Indep => state.sigma[l].powi(2),
            _ => 1.0,
        };
        lp += lcar_logdensity_unchecked(&col, state.rho[l], sigma2, graph);
    }
    if let Some(sm) = state.sigma_m {
        if spec.variant.has_mixing() {
            lp += state
                .mixing
                .iter()
                .map(|&x| normal_logpdf(x, sm))
                .sum::<f64>();
        }
    }
    if spec.variant.has_ire() {
        let n = state.ire_phi.len() as f64;
        lp += -0.5 * n * LN_2PI - 0.5 * state.ire_phi.iter().map(|x| x * x).sum::<f64>();
        let st = state.sigma_m_tilde.expect("checked by dimensions");
        lp += state
            .ire_mixing
            .iter()
            .map(|&x| normal_logpdf(x, st))
            .sum::<f64>();
    }
    lp
}

/// `loglik + logprior`, with `−∞` short-circuiting the likelihood.
pub fn logposterior(
    state: &ParameterState,
    spec: &ModelSpec,
    data: &SurveyDataset,
    graph: &AdjacencyGraph,
) -> Result<f64> {
    check_compatible(state, spec, data)?;
    let lp = logprior(state, spec, graph);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + loglik(state, spec, data)?.total)
}
