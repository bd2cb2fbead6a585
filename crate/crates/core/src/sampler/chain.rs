//! One Metropolis-within-Gibbs chain.
//!
//! The engine keeps a per-observation cache of the offset `η̄_ik` and of
//! `log p(y_ik)`, so every update only revisits the observations it touches.
//! Cut-point compensation of the centring constraint is tracked lazily: the
//! true cut points move by `d_k` while a per-variable shift `s_k` absorbs the
//! same amount, so the effective cut points `κ̄ = κ − s_k` and `η̄ = η + s_k`
//! used by the likelihood stay fixed. Caches are rebuilt after every sweep.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::SamplerConfig;
use super::init::initialize_state;
use super::{AcceptanceReport, ChainDraws, Draw};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::model::{
    in_support, log_category_prob, CutpointBlock, ModelSpec, ParameterState, SurveyDataset, Variant,
};

const MIN_LOG_SCALE: f64 = -14.0;
const MAX_LOG_SCALE: f64 = 7.0;
const ADAPT_EXPONENT: f64 = 0.6;
const BLOCK_TARGET: f64 = 0.234;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Cutpoints,
    Alpha,
    Phi,
    Mixing,
    Rho,
    Sigma,
    SigmaM,
    IrePhi,
    IreMixing,
    SigmaMTilde,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Cutpoints => "cutpoints",
            Kind::Alpha => "alpha",
            Kind::Phi => "phi",
            Kind::Mixing => "mixing",
            Kind::Rho => "rho",
            Kind::Sigma => "sigma",
            Kind::SigmaM => "sigma_M",
            Kind::IrePhi => "ire_phi",
            Kind::IreMixing => "ire_mixing",
            Kind::SigmaMTilde => "sigma_M_tilde",
        }
    }
}

/// Adaptive log proposal scales for one family of update sites.
#[derive(Debug, Clone)]
struct Scales {
    log_scale: Vec<f64>,
    target: f64,
}

impl Scales {
    fn new(len: usize, initial: f64, target: f64) -> Self {
        Self {
            log_scale: vec![initial.ln(); len],
            target,
        }
    }

    fn get(&self, site: usize) -> f64 {
        self.log_scale[site].exp()
    }

    fn adapt(&mut self, site: usize, accepted: bool, step: f64) {
        let a = if accepted { 1.0 } else { 0.0 };
        let v = &mut self.log_scale[site];
        *v = (*v + step * (a - self.target)).clamp(MIN_LOG_SCALE, MAX_LOG_SCALE);
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    attempts: u64,
    accepted: u64,
}

pub(crate) struct Engine<'a> {
    spec: &'a ModelSpec,
    data: &'a SurveyDataset,
    graph: &'a AdjacencyGraph,
    config: &'a SamplerConfig,
    k: usize,
    n: usize,
    total_weight: f64,
    pub(crate) state: ParameterState,
    eff_cut: Vec<Vec<f64>>,
    shift: Vec<f64>,
    eta: Vec<f64>,
    ll: Vec<f64>,
    scales: BTreeMap<Kind, Scales>,
    tallies: BTreeMap<Kind, Tally>,
    rng: ChaCha8Rng,
    scratch: Vec<(usize, f64, f64)>,
    adapting: bool,
    step: f64,
    counting: bool,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        spec: &'a ModelSpec,
        data: &'a SurveyDataset,
        graph: &'a AdjacencyGraph,
        config: &'a SamplerConfig,
        chain_id: usize,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(chain_id as u64);
        let state = initialize_state(spec, data, graph, &mut rng)?;
        Self::with_state(spec, data, graph, config, state, rng)
    }

    pub(crate) fn with_state(
        spec: &'a ModelSpec,
        data: &'a SurveyDataset,
        graph: &'a AdjacencyGraph,
        config: &'a SamplerConfig,
        state: ParameterState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let d = spec.dims;
        let k = d.variables;
        let n = data.num_respondents();
        let t = config.target_acceptance;
        let block_target = |dim: usize| if dim >= 5 { BLOCK_TARGET } else { t };
        let mut scales = BTreeMap::new();
        scales.insert(
            Kind::Cutpoints,
            Scales::new(
                spec.num_cutpoint_blocks(),
                0.1,
                block_target(d.categories - 1),
            ),
        );
        scales.insert(Kind::Alpha, Scales::new(d.cells * k, 0.1, t));
        scales.insert(Kind::Phi, Scales::new(d.areas * k, 0.3, t));
        scales.insert(Kind::Mixing, Scales::new(k * k, 0.05, t));
        scales.insert(Kind::Rho, Scales::new(k, 0.5, t));
        scales.insert(Kind::Sigma, Scales::new(k, 0.2, t));
        scales.insert(Kind::SigmaM, Scales::new(1, 0.2, t));
        scales.insert(
            Kind::IrePhi,
            Scales::new(
                if spec.variant.has_ire() { n } else { 0 },
                0.5,
                block_target(k),
            ),
        );
        scales.insert(Kind::IreMixing, Scales::new(k * k, 0.05, t));
        scales.insert(Kind::SigmaMTilde, Scales::new(1, 0.2, t));

        state.check_dimensions(spec, n)?;
        if !in_support(&state, spec) {
            return Err(Error::Initialization(
                "initial state outside the prior support".into(),
            ));
        }
        let mut engine = Self {
            spec,
            data,
            graph,
            config,
            k,
            n,
            total_weight: data.area_sizes().iter().sum::<usize>() as f64,
            state,
            eff_cut: Vec::new(),
            shift: vec![0.0; k],
            eta: vec![0.0; n * k],
            ll: vec![0.0; n * k],
            scales,
            tallies: BTreeMap::new(),
            rng,
            scratch: Vec::new(),
            adapting: false,
            step: 0.0,
            counting: false,
        };
        engine.refresh();
        Ok(engine)
    }

    /// Rebuilds every cache from the state.
    fn refresh(&mut self) {
        let k = self.k;
        self.eff_cut = self
            .state
            .cutpoints
            .iter()
            .map(|b| b.cutpoints().to_vec())
            .collect();
        self.shift.iter_mut().for_each(|s| *s = 0.0);
        let theta = self.state.theta();
        let psi = self.state.psi();
        for i in 0..self.n {
            let (m, z) = (self.data.area(i), self.data.cell(i));
            for kk in 0..k {
                let mut e = theta[(m, kk)];
                if self.spec.include_alpha {
                    e += self.state.alpha[(z, kk)];
                }
                if self.spec.variant.has_ire() {
                    e += psi[(i, kk)];
                }
                self.eta[i * k + kk] = e;
                self.ll[i * k + kk] = self.obs_ll(i, kk, e);
            }
        }
    }

    #[inline]
    fn obs_ll(&self, i: usize, kk: usize, eta: f64) -> f64 {
        match self.data.response(i, kk) {
            Some(y) => {
                let b = self.spec.block_index(self.data.cell(i), kk);
                log_category_prob(eta, &self.eff_cut[b], y)
            }
            None => 0.0,
        }
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio.is_nan() {
            return false;
        }
        log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
    }

    fn record(&mut self, kind: Kind, site: usize, accepted: bool) {
        if self.adapting {
            let step = self.step;
            self.scales
                .get_mut(&kind)
                .expect("scale family")
                .adapt(site, accepted, step);
        }
        if self.counting {
            let t = self.tallies.entry(kind).or_default();
            t.attempts += 1;
            t.accepted += accepted as u64;
        }
    }

    fn scale(&self, kind: Kind, site: usize) -> f64 {
        self.scales[&kind].get(site)
    }

    /// Proposes the offset change `delta(i, k)` for the listed `(i, k)`
    /// observations and returns the log-likelihood difference; the proposed
    /// values stay in `scratch` for [`Self::commit`].
    fn propose_offsets(&mut self, pairs: impl Iterator<Item = (usize, f64)>) -> f64 {
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.clear();
        let mut diff = 0.0;
        for (idx, delta) in pairs {
            let (i, kk) = (idx / self.k, idx % self.k);
            let e = self.eta[idx] + delta;
            let l = self.obs_ll(i, kk, e);
            diff += l - self.ll[idx];
            scratch.push((idx, e, l));
        }
        self.scratch = scratch;
        diff
    }

    fn commit(&mut self) {
        for &(idx, e, l) in &self.scratch {
            self.eta[idx] = e;
            self.ll[idx] = l;
        }
    }

    // (1) cut-point blocks, random walk on additive log-ratio coordinates
    fn update_cutpoints(&mut self) {
        for b in 0..self.state.cutpoints.len() {
            let (cell, kk) = self.spec.block_owner(b);
            let s = self.scale(Kind::Cutpoints, b);
            let old = &self.state.cutpoints[b];
            let u: Vec<f64> = old
                .log_ratios()
                .iter()
                .map(|x| x + s * self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            let Ok(new) = CutpointBlock::from_log_ratios(&u) else {
                self.record(Kind::Cutpoints, b, false);
                continue;
            };
            let new_eff: Vec<f64> = new.cutpoints().iter().map(|c| c - self.shift[kk]).collect();
            let mut diff = new.log_ratio_jacobian() - old.log_ratio_jacobian();
            let members: &[usize] = match cell {
                Some(z) => self.data.respondents_in_cell(z),
                None => &[],
            };
            let k = self.k;
            let mut proposed = Vec::new();
            let mut visit = |i: usize, this: &Self| {
                if let Some(y) = this.data.response(i, kk) {
                    let idx = i * k + kk;
                    let l = log_category_prob(this.eta[idx], &new_eff, y);
                    proposed.push((idx, l));
                    l - this.ll[idx]
                } else {
                    0.0
                }
            };
            if cell.is_some() {
                for &i in members {
                    diff += visit(i, self);
                }
            } else {
                for i in 0..self.n {
                    diff += visit(i, self);
                }
            }
            let ok = self.accept(diff);
            if ok {
                for (idx, l) in proposed {
                    self.ll[idx] = l;
                }
                self.eff_cut[b] = new_eff;
                self.state.cutpoints[b] = new;
            }
            self.record(Kind::Cutpoints, b, ok);
        }
    }

    // (2) cell effects, corner constraint keeps the first cell at zero
    fn update_alpha(&mut self) {
        if !self.spec.include_alpha {
            return;
        }
        let k = self.k;
        for z in 1..self.spec.dims.cells {
            for kk in 0..k {
                let site = z * k + kk;
                let eps = self.scale(Kind::Alpha, site) * self.normal();
                let members = self.data.respondents_in_cell(z);
                let diff = self.propose_offsets(members.iter().map(|&i| (i * k + kk, eps)));
                let ok = self.accept(diff);
                if ok {
                    self.commit();
                    self.state.alpha[(z, kk)] += eps;
                }
                self.record(Kind::Alpha, site, ok);
            }
        }
    }

    fn lcar_sigma2(&self, l: usize) -> f64 {
        match self.spec.variant {
            Variant::Indep => self.state.sigma[l].powi(2),
            _ => 1.0,
        }
    }

    // (3) single-site moves on the weighted zero-sum hyperplane: φ_m += ε,
    // the whole column −= ε n_m / n, and cut points absorb the global shift
    fn update_phi(&mut self) {
        let k = self.k;
        let m_areas = self.spec.dims.areas;
        for l in 0..k {
            let rho = self.state.rho[l];
            let sigma2 = self.lcar_sigma2(l);
            for m in 0..m_areas {
                let site = m * k + l;
                let eps = self.scale(Kind::Phi, site) * self.normal();
                let n_m = self.data.area_sizes()[m] as f64;
                let c = if self.total_weight > 0.0 {
                    eps * n_m / self.total_weight
                } else {
                    0.0
                };

                let col = self.state.phi.column(l);
                let pm = col[m];
                let d_smooth: f64 = self
                    .graph
                    .neighbors(m)
                    .iter()
                    .map(|&j| 2.0 * eps * (pm - col[j]) + eps * eps)
                    .sum();
                let sum: f64 = col.iter().sum();
                let d_ridge = 2.0 * eps * pm - 2.0 * c * sum + eps * eps - 2.0 * c * eps
                    + m_areas as f64 * c * c;
                let mut diff = -(rho * d_smooth + (1.0 - rho) * d_ridge) / (2.0 * sigma2);

                let mut shifted: Vec<(usize, CutpointBlock)> = Vec::new();
                if c != 0.0 {
                    let mut failed = false;
                    for (b, block) in self.state.cutpoints.iter().enumerate() {
                        let kk = self.spec.block_owner(b).1;
                        let d = c * self.state.mixing[(l, kk)];
                        if d == 0.0 {
                            continue;
                        }
                        match block.shifted(d) {
                            Ok(nb) => {
                                diff += nb.cutpoint_jacobian() - block.cutpoint_jacobian();
                                shifted.push((b, nb));
                            }
                            Err(_) => {
                                failed = true;
                                break;
                            }
                        }
                    }
                    if failed {
                        self.record(Kind::Phi, site, false);
                        continue;
                    }
                }

                let mix: Vec<f64> = (0..k).map(|kk| eps * self.state.mixing[(l, kk)]).collect();
                let members = self.data.respondents_in_area(m);
                diff += self.propose_offsets(
                    members
                        .iter()
                        .flat_map(|&i| (0..k).map(move |kk| (i * k + kk, kk)))
                        .filter(|&(_, kk)| mix[kk] != 0.0)
                        .map(|(idx, kk)| (idx, mix[kk])),
                );
                let ok = self.accept(diff);
                if ok {
                    self.commit();
                    let mut col = self.state.phi.column_mut(l);
                    col.add_scalar_mut(-c);
                    col[m] += eps;
                    for (b, nb) in shifted {
                        self.state.cutpoints[b] = nb;
                    }
                    if c != 0.0 {
                        for kk in 0..k {
                            self.shift[kk] += c * self.state.mixing[(l, kk)];
                        }
                    }
                }
                self.record(Kind::Phi, site, ok);
            }
        }
    }

    // (4) entries of M
    fn update_mixing(&mut self) {
        if !self.spec.variant.has_mixing() {
            return;
        }
        let k = self.k;
        let sm = self.state.sigma_m.expect("mixing scale");
        for l in 0..k {
            for kk in 0..k {
                let site = l * k + kk;
                let eps = self.scale(Kind::Mixing, site) * self.normal();
                let old = self.state.mixing[(l, kk)];
                let new = old + eps;
                let mut diff = -(new * new - old * old) / (2.0 * sm * sm);
                let data = self.data;
                let phi = &self.state.phi;
                let pairs: Vec<(usize, f64)> = (0..self.n)
                    .map(|i| (i * k + kk, phi[(data.area(i), l)] * eps))
                    .collect();
                diff += self.propose_offsets(pairs.into_iter());
                let ok = self.accept(diff);
                if ok {
                    self.commit();
                    self.state.mixing[(l, kk)] = new;
                }
                self.record(Kind::Mixing, site, ok);
            }
        }
    }

    // (5) spatial autocorrelation on the logit scale
    fn update_rho(&mut self) {
        for l in 0..self.k {
            let col: Vec<f64> = self.state.phi.column(l).iter().copied().collect();
            let smooth: f64 = self
                .graph
                .edges()
                .iter()
                .map(|&(i, j)| (col[i] - col[j]).powi(2))
                .sum();
            let ridge: f64 = col.iter().map(|x| x * x).sum();
            let sigma2 = self.lcar_sigma2(l);
            let rho = self.state.rho[l];
            let x = (rho / (1.0 - rho)).ln() + self.scale(Kind::Rho, l) * self.normal();
            let new = 1.0 / (1.0 + (-x).exp());
            if !(new > 0.0 && new < 1.0) {
                self.record(Kind::Rho, l, false);
                continue;
            }
            let qf = |r: f64| r * smooth + (1.0 - r) * ridge;
            let diff = 0.5 * (self.graph.lcar_log_det(new) - self.graph.lcar_log_det(rho))
                - (qf(new) - qf(rho)) / (2.0 * sigma2)
                + (new * (1.0 - new)).ln()
                - (rho * (1.0 - rho)).ln();
            let ok = self.accept(diff);
            if ok {
                self.state.rho[l] = new;
            }
            self.record(Kind::Rho, l, ok);
        }
    }

    /// Log-scale random walk on a positive scale `s` whose conditional is
    /// `−count·log s − sumsq / (2s²)`, bounded above by `sigma_upper`.
    fn propose_scale(
        &mut self,
        kind: Kind,
        site: usize,
        current: f64,
        count: f64,
        sumsq: f64,
    ) -> f64 {
        let new = current * (self.scale(kind, site) * self.normal()).exp();
        if !(new > 0.0 && new <= self.spec.sigma_upper) {
            self.record(kind, site, false);
            return current;
        }
        let logp = |s: f64| -count * s.ln() - sumsq / (2.0 * s * s) + s.ln();
        let ok = self.accept(logp(new) - logp(current));
        self.record(kind, site, ok);
        if ok {
            new
        } else {
            current
        }
    }

    // (6) scale parameters
    fn update_scales(&mut self) {
        if self.config.hold_scales {
            return;
        }
        match self.spec.variant {
            Variant::Indep => {
                let m = self.spec.dims.areas as f64;
                for l in 0..self.k {
                    let col: Vec<f64> = self.state.phi.column(l).iter().copied().collect();
                    let qf = self.graph.lcar_quadratic(&col, self.state.rho[l]);
                    let cur = self.state.sigma[l];
                    self.state.sigma[l] = self.propose_scale(Kind::Sigma, l, cur, m, qf);
                }
            }
            _ => {
                let sumsq: f64 = self.state.mixing.iter().map(|x| x * x).sum();
                let cur = self.state.sigma_m.expect("mixing scale");
                let count = self.state.mixing.len() as f64;
                self.state.sigma_m = Some(self.propose_scale(Kind::SigmaM, 0, cur, count, sumsq));
            }
        }
        if self.spec.variant.has_ire() {
            let sumsq: f64 = self.state.ire_mixing.iter().map(|x| x * x).sum();
            let cur = self.state.sigma_m_tilde.expect("ire scale");
            let count = self.state.ire_mixing.len() as f64;
            self.state.sigma_m_tilde =
                Some(self.propose_scale(Kind::SigmaMTilde, 0, cur, count, sumsq));
        }
    }

    // (7) individual effects: K-dimensional row blocks of Φ̃, then M̃ entries
    fn update_ire(&mut self) {
        if !self.spec.variant.has_ire() {
            return;
        }
        let k = self.k;
        let mut delta = vec![0.0; k];
        for i in 0..self.n {
            let s = self.scale(Kind::IrePhi, i);
            for d in delta.iter_mut() {
                *d = s * self.rng.sample::<f64, _>(StandardNormal);
            }
            let mut diff = 0.0;
            for (l, d) in delta.iter().enumerate() {
                let old = self.state.ire_phi[(i, l)];
                diff -= 0.5 * ((old + d).powi(2) - old * old);
            }
            let mt = &self.state.ire_mixing;
            let dpsi: Vec<f64> = (0..k)
                .map(|kk| (0..k).map(|l| delta[l] * mt[(l, kk)]).sum())
                .collect();
            diff += self.propose_offsets((0..k).map(|kk| (i * k + kk, dpsi[kk])));
            let ok = self.accept(diff);
            if ok {
                self.commit();
                for (l, d) in delta.iter().enumerate() {
                    self.state.ire_phi[(i, l)] += d;
                }
            }
            self.record(Kind::IrePhi, i, ok);
        }

        let st = self.state.sigma_m_tilde.expect("ire scale");
        for l in 0..k {
            for kk in 0..k {
                let site = l * k + kk;
                let eps = self.scale(Kind::IreMixing, site) * self.normal();
                let old = self.state.ire_mixing[(l, kk)];
                let new = old + eps;
                let mut diff = -(new * new - old * old) / (2.0 * st * st);
                let phi_t = &self.state.ire_phi;
                let pairs: Vec<(usize, f64)> = (0..self.n)
                    .map(|i| (i * k + kk, phi_t[(i, l)] * eps))
                    .collect();
                diff += self.propose_offsets(pairs.into_iter());
                let ok = self.accept(diff);
                if ok {
                    self.commit();
                    self.state.ire_mixing[(l, kk)] = new;
                }
                self.record(Kind::IreMixing, site, ok);
            }
        }
    }

    /// One full sweep at iteration `t` (0-based).
    pub(crate) fn sweep(&mut self, t: usize) -> Result<()> {
        self.adapting = !self.config.adapt_during_burnin_only || t < self.config.burn_in;
        self.step = ((t + 1) as f64).powf(-ADAPT_EXPONENT);
        self.counting = t >= self.config.burn_in;
        self.update_cutpoints();
        self.update_alpha();
        self.update_phi();
        self.update_mixing();
        self.update_rho();
        self.update_scales();
        self.update_ire();
        // (8) exact re-centring; the hyperplane moves only accumulate rounding
        self.state.center(self.spec, self.data.area_sizes())?;
        self.refresh();
        Ok(())
    }

    /// Pointwise log-likelihood over observed pairs, in dataset order.
    pub(crate) fn pointwise_loglik(&self) -> Vec<f64> {
        self.data
            .observed_pairs()
            .map(|(i, kk)| self.ll[i * self.k + kk])
            .collect()
    }

    pub(crate) fn proposal_scales(&self) -> Vec<f64> {
        self.scales
            .values()
            .flat_map(|s| s.log_scale.iter().map(|x| x.exp()))
            .collect()
    }

    fn acceptance(&self) -> Vec<AcceptanceReport> {
        self.tallies
            .iter()
            .map(|(kind, t)| AcceptanceReport {
                block: kind.name().to_string(),
                attempts: t.attempts,
                accepted: t.accepted,
                rate: if t.attempts == 0 {
                    0.0
                } else {
                    t.accepted as f64 / t.attempts as f64
                },
            })
            .collect()
    }
}

pub(crate) fn execute(
    spec: &ModelSpec,
    data: &SurveyDataset,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainDraws> {
    let mut engine = Engine::new(spec, data, graph, config, chain_id)?;
    let mut draws = Vec::with_capacity(config.saved_per_chain());
    let mut scales_after_burn_in = Vec::new();
    for t in 0..config.iterations_per_chain {
        if t == config.burn_in {
            scales_after_burn_in = engine.proposal_scales();
        }
        engine.sweep(t)?;
        if t >= config.burn_in && (t - config.burn_in + 1).is_multiple_of(config.thin) {
            let state = engine.state.clone();
            draws.push(Draw::new(
                chain_id,
                t,
                state,
                if config.record_loglik {
                    engine.pointwise_loglik()
                } else {
                    Vec::new()
                },
            ));
        }
    }
    Ok(ChainDraws {
        chain_id,
        draws,
        acceptance: engine.acceptance(),
        scales_after_burn_in,
        final_scales: engine.proposal_scales(),
    })
}
