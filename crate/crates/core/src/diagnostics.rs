//! Convergence diagnostics and WAIC.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::sampler::PosteriorDraws;

/// Minimum draws per chain for R̂.
pub const MIN_DRAWS: usize = 10;
/// Gate thresholds.
pub const RHAT_MAX: f64 = 1.10;
pub const ESS_MIN: f64 = 100.0;

/// Per-chain sequences of one scalar functional.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTrace {
    chains: Vec<Vec<f64>>,
}

impl ScalarTrace {
    /// Requires at least one non-empty chain, equal lengths and finite values.
    pub fn new(chains: Vec<Vec<f64>>) -> Result<Self> {
        let len = chains.first().map_or(0, Vec::len);
        if len == 0 {
            return Err(Error::Insufficient("trace has no draws".into()));
        }
        if chains.iter().any(|c| c.len() != len) {
            return Err(Error::Dimension("chains differ in length".into()));
        }
        if chains.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("trace contains non-finite values".into()));
        }
        Ok(Self { chains })
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains[0].len()
    }

    pub fn chains(&self) -> &[Vec<f64>] {
        &self.chains
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn psrf(chains: &[&[f64]]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| sample_var(c, m))
        .sum::<f64>()
        / chains.len() as f64;
    let b_over_n = sample_var(&means, mean(&means));
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt().max(1.0)
}

fn check_rhat(trace: &ScalarTrace) -> Result<()> {
    let n = trace.draws_per_chain();
    if trace.num_chains() < 2 || n < MIN_DRAWS {
        return Err(Error::Insufficient(format!(
            "R-hat needs at least 2 chains of {MIN_DRAWS} draws, got {} of {n}",
            trace.num_chains()
        )));
    }
    Ok(())
}

/// Potential scale reduction over whole chains, floored at 1. Returns `+∞`
/// when every chain is constant but the chains disagree.
pub fn gelman_rubin(trace: &ScalarTrace) -> Result<f64> {
    check_rhat(trace)?;
    let chains: Vec<&[f64]> = trace.chains.iter().map(Vec::as_slice).collect();
    Ok(psrf(&chains))
}

/// Split-R̂: every chain is halved (dropping the middle draw of odd chains)
/// and the halves are treated as separate chains.
pub fn split_gelman_rubin(trace: &ScalarTrace) -> Result<f64> {
    check_rhat(trace)?;
    let n = trace.draws_per_chain();
    let half = n / 2;
    let halves: Vec<&[f64]> = trace
        .chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    Ok(psrf(&halves))
}

/// The R̂ used by the convergence gate: the larger of the whole-chain and
/// split statistics.
pub fn gate_rhat(trace: &ScalarTrace) -> Result<f64> {
    Ok(gelman_rubin(trace)?.max(split_gelman_rubin(trace)?))
}

/// Geyer initial-positive-sequence ESS of one chain, capped at its length.
/// A constant chain has ESS 0.
fn chain_ess(x: &[f64]) -> f64 {
    let n = x.len();
    let m = mean(x);
    let centred: Vec<f64> = x.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| -> f64 {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return 0.0;
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    if tau <= 0.0 {
        return n as f64;
    }
    (n as f64 / tau).min(n as f64)
}

/// Effective sample size, computed per chain and summed.
pub fn effective_sample_size(trace: &ScalarTrace) -> f64 {
    trace.chains.iter().map(|c| chain_ess(c)).sum()
}

/// WAIC and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub n_obs: usize,
}

/// WAIC from a draws × observations log-likelihood matrix.
pub fn waic(loglik: &DMatrix<f64>) -> Result<Waic> {
    let (s, n) = loglik.shape();
    if s < 2 {
        return Err(Error::Insufficient("WAIC needs at least 2 draws".into()));
    }
    if loglik.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(
            "log-likelihood matrix has non-finite entries".into(),
        ));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for col in loglik.column_iter() {
        let max = col.max();
        let lme = max + (col.iter().map(|x| (x - max).exp()).sum::<f64>() / s as f64).ln();
        lppd += lme;
        let m = col.mean();
        p_waic += col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s - 1) as f64;
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
        n_obs: n,
    })
}

/// R̂ and ESS of one monitored functional.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDiagnostic {
    pub functional: String,
    /// `None` when fewer than two chains (or too few draws) are available.
    pub rhat: Option<f64>,
    pub ess: f64,
    pub pass: bool,
}

/// Named traces of the identifiable functionals: cut points, cell effects,
/// `θ_mk`, `ρ_k` (sorted when fields are mixed), scales, and the entries `k ≤ l` of `Σ_b` and `Σ̃_b`.
/// Raw `Φ`, `M`, `Φ̃`, `M̃` entries are rotation-unidentified and excluded.
pub fn identifiable_traces(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
) -> Vec<(String, Vec<Vec<f64>>)> {
    let d = spec.dims;
    let k = d.variables;
    let mut out: Vec<(String, Box<dyn Fn(&crate::sampler::Draw) -> f64>)> = Vec::new();
    for b in 0..spec.num_cutpoint_blocks() {
        for j in 0..d.categories - 1 {
            out.push((
                format!("kappa[{},{}]", b + 1, j + 1),
                Box::new(move |dr| dr.state.cutpoints[b].cutpoints()[j]),
            ));
        }
    }
    if spec.include_alpha {
        for z in 1..d.cells {
            for kk in 0..k {
                out.push((
                    format!("alpha[{},{}]", z + 1, kk + 1),
                    Box::new(move |dr| dr.state.alpha[(z, kk)]),
                ));
            }
        }
    }
    for m in 0..d.areas {
        for kk in 0..k {
            out.push((
                format!("theta[{},{}]", m + 1, kk + 1),
                Box::new(move |dr| dr.theta[(m, kk)]),
            ));
        }
    }
    if spec.variant.has_mixing() {
        // ρ_l follows latent column l, and permuting columns of Φ with rows
        // of M and entries of ρ is a posterior symmetry: only the sorted
        // values are identified.
        for l in 0..k {
            out.push((
                format!("rho_sorted[{}]", l + 1),
                Box::new(move |dr| {
                    let mut r = dr.state.rho.clone();
                    r.sort_by(f64::total_cmp);
                    r[l]
                }),
            ));
        }
    } else {
        for l in 0..k {
            out.push((
                format!("rho[{}]", l + 1),
                Box::new(move |dr| dr.state.rho[l]),
            ));
        }
    }
    match spec.variant {
        Variant::Indep => {
            for l in 0..k {
                out.push((
                    format!("sigma[{}]", l + 1),
                    Box::new(move |dr| dr.state.sigma[l]),
                ));
            }
        }
        _ => {
            out.push((
                "sigma_M".into(),
                Box::new(|dr| dr.state.sigma_m.unwrap_or(f64::NAN)),
            ));
            for a in 0..k {
                for b in a..k {
                    out.push((
                        format!("Sigma_b[{},{}]", a + 1, b + 1),
                        Box::new(move |dr| dr.sigma_b[(a, b)]),
                    ));
                }
            }
        }
    }
    if spec.variant.has_ire() {
        out.push((
            "sigma_M_tilde".into(),
            Box::new(|dr| dr.state.sigma_m_tilde.unwrap_or(f64::NAN)),
        ));
        for a in 0..k {
            for b in a..k {
                out.push((
                    format!("Sigma_tilde_b[{},{}]", a + 1, b + 1),
                    Box::new(move |dr| dr.sigma_tilde_b.as_ref().map_or(f64::NAN, |s| s[(a, b)])),
                ));
            }
        }
    }
    out.into_iter()
        .map(|(name, f)| {
            let chains = draws
                .chains
                .iter()
                .map(|c| c.draws.iter().map(&f).collect())
                .collect();
            (name, chains)
        })
        .collect()
}

/// Diagnostics of every identifiable functional. A functional passes when
/// `R̂ ≤ 1.10` and `ESS ≥ 100`; without an R̂ it does not pass.
pub fn convergence_report(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
) -> Result<Vec<FunctionalDiagnostic>> {
    identifiable_traces(draws, spec)
        .into_iter()
        .map(|(functional, chains)| {
            let trace = ScalarTrace::new(chains)?;
            let rhat = gate_rhat(&trace).ok();
            let ess = effective_sample_size(&trace);
            let pass = rhat.is_some_and(|r| r <= RHAT_MAX) && ess >= ESS_MIN;
            Ok(FunctionalDiagnostic {
                functional,
                rhat,
                ess,
                pass,
            })
        })
        .collect()
}

/// Whether every functional passed.
pub fn gates_pass(report: &[FunctionalDiagnostic]) -> bool {
    report.iter().all(|r| r.pass)
}

#[derive(Serialize, Deserialize)]
struct DiagnosticRow {
    functional: String,
    rhat: Option<f64>,
    ess: f64,
    pass: bool,
}

/// Writes `functional,rhat,ess,pass`; a missing R̂ is an empty field.
pub fn write_diagnostics_csv(
    path: impl AsRef<Path>,
    report: &[FunctionalDiagnostic],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in report {
        w.serialize(DiagnosticRow {
            functional: r.functional.clone(),
            rhat: r.rhat,
            ess: r.ess,
            pass: r.pass,
        })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_diagnostics_csv(path: impl AsRef<Path>) -> Result<Vec<FunctionalDiagnostic>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize::<DiagnosticRow>()
        .map(|row| {
            let row = row?;
            Ok(FunctionalDiagnostic {
                functional: row.functional,
                rhat: row.rhat,
                ess: row.ess,
                pass: row.pass,
            })
        })
        .collect()
}

pub fn write_waic_json(path: impl AsRef<Path>, w: &Waic) -> Result<()> {
    let text = serde_json::to_string_pretty(w)?;
    fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_waic_json(path: impl AsRef<Path>) -> Result<Waic> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(serde_json::from_str(&text)?)
}
