//! Adaptive Metropolis-within-Gibbs sampling with multi-chain orchestration.

mod archive;
mod chain;
mod config;
mod init;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use archive::{
    column_names, read_archive, write_archive, ArchiveManifest, ChainEntry, MANIFEST_FILE,
};
pub use config::SamplerConfig;
pub use init::initialize_state;

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::model::{loglik, ModelSpec, ParameterState, SurveyDataset};

/// One saved state with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub chain: usize,
    /// 0-based sweep index within the chain.
    pub iteration: usize,
    pub state: ParameterState,
    pub theta: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma_tilde_b: Option<DMatrix<f64>>,
    /// Pointwise log-likelihood over observed `(i, k)` pairs in row-major
    /// order; empty when not recorded.
    pub loglik: Vec<f64>,
}

impl Draw {
    pub fn new(chain: usize, iteration: usize, state: ParameterState, loglik: Vec<f64>) -> Self {
        Self {
            chain,
            iteration,
            theta: state.theta(),
            sigma_b: state.sigma_b(),
            sigma_tilde_b: state.sigma_tilde_b(),
            state,
            loglik,
        }
    }
}

/// Acceptance counts of one update family after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub block: String,
    pub attempts: u64,
    pub accepted: u64,
    pub rate: f64,
}

/// Output of a single chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain_id: usize,
    pub draws: Vec<Draw>,
    pub acceptance: Vec<AcceptanceReport>,
    /// Proposal scales in force when burn-in ended.
    pub scales_after_burn_in: Vec<f64>,
    /// Proposal scales after the last iteration.
    pub final_scales: Vec<f64>,
}

/// Merged output of all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub config: SamplerConfig,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// All draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// Recomputes the pointwise log-likelihood of every draw, e.g. after
    /// reading an archive.
    pub fn attach_loglik(&mut self, spec: &ModelSpec, data: &SurveyDataset) -> Result<()> {
        for chain in &mut self.chains {
            for d in &mut chain.draws {
                d.loglik = loglik(&d.state, spec, data)?.pointwise;
            }
        }
        Ok(())
    }

    /// Draws-by-observations log-likelihood matrix, if recorded.
    pub fn loglik_matrix(&self) -> Result<DMatrix<f64>> {
        let rows: Vec<&Draw> = self.iter().collect();
        let cols = rows.first().map_or(0, |d| d.loglik.len());
        if rows.is_empty() || cols == 0 {
            return Err(Error::Insufficient(
                "archive holds no pointwise log-likelihood".into(),
            ));
        }
        if rows.iter().any(|d| d.loglik.len() != cols) {
            return Err(Error::Dimension("ragged log-likelihood rows".into()));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r].loglik[c]))
    }
}

/// Runs one chain; deterministic in `(config.seed, chain_id)`.
pub fn run_chain(
    spec: &ModelSpec,
    data: &SurveyDataset,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainDraws> {
    config.validate()?;
    check_inputs(spec, data, graph)?;
    chain::execute(spec, data, graph, config, chain_id)
}

/// Runs `config.num_chains` chains in parallel and merges them in chain order.
pub fn run_chains(
    spec: &ModelSpec,
    data: &SurveyDataset,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    check_inputs(spec, data, graph)?;
    let chains = (0..config.num_chains)
        .into_par_iter()
        .map(|c| chain::execute(spec, data, graph, config, c))
        .collect::<Result<Vec<_>>>()?;
    for c in &chains {
        for a in &c.acceptance {
            log::debug!("chain {} {}: acceptance {:.3}", c.chain_id, a.block, a.rate);
        }
    }
    Ok(PosteriorDraws {
        config: config.clone(),
        chains,
    })
}

fn check_inputs(spec: &ModelSpec, data: &SurveyDataset, graph: &AdjacencyGraph) -> Result<()> {
    spec.validate()?;
    let d = spec.dims;
    if data.num_variables() != d.variables
        || data.num_categories() != d.categories
        || data.num_cells() != d.cells
        || data.num_areas() != d.areas
    {
        return Err(Error::Dimension(
            "dataset does not match the model dimensions".into(),
        ));
    }
    if graph.num_areas() != d.areas {
        return Err(Error::Dimension(format!(
            "graph has {} areas, model expects {}",
            graph.num_areas(),
            d.areas
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
