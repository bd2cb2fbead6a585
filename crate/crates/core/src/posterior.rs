//! Post-fit summaries: areal maps, correlation matrices, PCA, posterior
//! predictive checks and post-stratification.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{category_probs_unchecked, inv_logit, ModelSpec, SurveyDataset};
use crate::sampler::{Draw, PosteriorDraws};

/// Display thresholds for relevance maps.
pub const RELEVANCE_HIGH: f64 = 0.80;
pub const RELEVANCE_LOW: f64 = 0.20;
/// Credible level of every reported interval unless stated otherwise.
pub const DEFAULT_CREDIBLE_LEVEL: f64 = 0.95;
/// Gauss–Hermite nodes used to integrate individual effects.
const HERMITE_NODES: usize = 32;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "credible level must lie in (0, 1), got {level}"
        )))
    }
}

fn summarize(mut values: Vec<f64>, level: f64) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (
        mean,
        quantile_sorted(&values, tail),
        quantile_sorted(&values, 1.0 - tail),
    )
}

fn nonempty(draws: &PosteriorDraws) -> Result<Vec<&Draw>> {
    let all: Vec<&Draw> = draws.iter().collect();
    if all.is_empty() {
        return Err(Error::Insufficient("archive holds no draws".into()));
    }
    Ok(all)
}

/// Per-area, per-variable summaries of `θ_mk`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealSummary {
    pub mean: DMatrix<f64>,
    /// `P(θ_mk < 0)`, the fraction of draws with strictly negative `θ_mk`.
    pub relevance: DMatrix<f64>,
    /// Lower interval bound (the 2.5% quantile at the default level).
    pub q025: DMatrix<f64>,
    /// Upper interval bound (the 97.5% quantile at the default level).
    pub q975: DMatrix<f64>,
}

pub fn areal_summaries(draws: &PosteriorDraws) -> Result<ArealSummary> {
    areal_summaries_with_level(draws, DEFAULT_CREDIBLE_LEVEL)
}

pub fn areal_summaries_with_level(draws: &PosteriorDraws, level: f64) -> Result<ArealSummary> {
    check_level(level)?;
    let all = nonempty(draws)?;
    let (m, k) = all[0].theta.shape();
    let mut out = ArealSummary {
        mean: DMatrix::zeros(m, k),
        relevance: DMatrix::zeros(m, k),
        q025: DMatrix::zeros(m, k),
        q975: DMatrix::zeros(m, k),
    };
    for a in 0..m {
        for v in 0..k {
            let vals: Vec<f64> = all.iter().map(|d| d.theta[(a, v)]).collect();
            let neg = vals.iter().filter(|&&x| x < 0.0).count();
            out.relevance[(a, v)] = neg as f64 / vals.len() as f64;
            let (mean, lo, hi) = summarize(vals, level);
            out.mean[(a, v)] = mean;
            out.q025[(a, v)] = lo;
            out.q975[(a, v)] = hi;
        }
    }
    Ok(out)
}

/// Display class of a relevance value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevanceClass {
    /// `P(θ < 0)` above the upper threshold.
    High,
    /// `P(θ < 0)` below the lower threshold.
    Low,
    Neither,
}

/// Classifies every relevance value against `(low, high)` thresholds,
/// [`RELEVANCE_LOW`] and [`RELEVANCE_HIGH`] by default.
pub fn classify_relevance(summary: &ArealSummary, low: f64, high: f64) -> DMatrix<RelevanceClass> {
    summary.relevance.map(|p| {
        if p > high {
            RelevanceClass::High
        } else if p < low {
            RelevanceClass::Low
        } else {
            RelevanceClass::Neither
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ArealRow {
    area: usize,
    variable: usize,
    theta_mean: f64,
    relevance: f64,
    q025: f64,
    q975: f64,
}

impl ArealSummary {
    /// `area,variable,theta_mean,relevance,q025,q975` with 1-based indices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for a in 0..self.mean.nrows() {
            for v in 0..self.mean.ncols() {
                w.serialize(ArealRow {
                    area: a + 1,
                    variable: v + 1,
                    theta_mean: self.mean[(a, v)],
                    relevance: self.relevance[(a, v)],
                    q025: self.q025[(a, v)],
                    q975: self.q975[(a, v)],
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let rows: Vec<ArealRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        let m = rows.iter().map(|r| r.area).max().unwrap_or(0);
        let k = rows.iter().map(|r| r.variable).max().unwrap_or(0);
        if rows.len() != m * k || rows.iter().any(|r| r.area == 0 || r.variable == 0) {
            return Err(Error::Schema(
                "areal summary is not a complete area x variable table".into(),
            ));
        }
        let mut s = ArealSummary {
            mean: DMatrix::zeros(m, k),
            relevance: DMatrix::zeros(m, k),
            q025: DMatrix::zeros(m, k),
            q975: DMatrix::zeros(m, k),
        };
        for r in rows {
            let idx = (r.area - 1, r.variable - 1);
            s.mean[idx] = r.theta_mean;
            s.relevance[idx] = r.relevance;
            s.q025[idx] = r.q025;
            s.q975[idx] = r.q975;
        }
        Ok(s)
    }
}

/// Which covariance matrix a correlation report is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// `Σ_b = MᵀM`.
    Areal,
    /// `Σ̃_b = M̃ᵀM̃`.
    Individual,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "areal" | "spatial" => Ok(Level::Areal),
            "individual" | "ire" => Ok(Level::Individual),
            _ => Err(Error::Config(format!("unknown correlation level {s:?}"))),
        }
    }
}

/// Posterior correlation matrix with credible bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub level: Level,
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    /// The credible interval excludes zero.
    pub relevant: DMatrix<bool>,
    /// Draws used (draws with a zero variance are skipped).
    pub num_draws: usize,
}

fn to_correlation(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = cov.nrows();
    if (0..k).any(|i| !(cov[(i, i)] > 0.0)) {
        return None;
    }
    Some(DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).clamp(-1.0, 1.0)
        }
    }))
}

pub fn correlation_report(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    level: Level,
) -> Result<CorrelationReport> {
    correlation_report_with_level(draws, spec, level, DEFAULT_CREDIBLE_LEVEL)
}

pub fn correlation_report_with_level(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    level: Level,
    credible_level: f64,
) -> Result<CorrelationReport> {
    check_level(credible_level)?;
    let available = match level {
        Level::Areal => spec.variant.has_mixing(),
        Level::Individual => spec.variant.has_ire(),
    };
    if !available {
        return Err(Error::Schema(format!(
            "variant {} has no {level:?} covariance matrix",
            spec.variant
        )));
    }
    let all = nonempty(draws)?;
    let mut corrs = Vec::with_capacity(all.len());
    for d in &all {
        let cov = match level {
            Level::Areal => d.sigma_b.clone(),
            Level::Individual => d
                .sigma_tilde_b
                .clone()
                .ok_or_else(|| Error::Schema("draw lacks an individual covariance".into()))?,
        };
        match to_correlation(&cov) {
            Some(c) => corrs.push(c),
            None => log::warn!(
                "chain {} iteration {}: zero variance on the diagonal, draw skipped",
                d.chain,
                d.iteration
            ),
        }
    }
    if corrs.is_empty() {
        return Err(Error::Insufficient(
            "no draw has a positive-definite diagonal".into(),
        ));
    }
    let k = spec.dims.variables;
    let mut rep = CorrelationReport {
        level,
        mean: DMatrix::identity(k, k),
        lower: DMatrix::identity(k, k),
        upper: DMatrix::identity(k, k),
        relevant: DMatrix::from_element(k, k, false),
        num_draws: corrs.len(),
    };
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let (mean, lo, hi) =
                summarize(corrs.iter().map(|c| c[(i, j)]).collect(), credible_level);
            rep.mean[(i, j)] = mean;
            rep.lower[(i, j)] = lo;
            rep.upper[(i, j)] = hi;
            rep.relevant[(i, j)] = lo > 0.0 || hi < 0.0;
        }
    }
    Ok(rep)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrelationRow {
    row: usize,
    col: usize,
    mean: f64,
    q025: f64,
    q975: f64,
    relevant: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrelationJson {
    level: Level,
    num_draws: usize,
    mean: Vec<Vec<f64>>,
    q025: Vec<Vec<f64>>,
    q975: Vec<Vec<f64>>,
    relevant: Vec<Vec<bool>>,
}

fn rows_of<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl CorrelationReport {
    /// `row,col,mean,q025,q975,relevant` with 1-based indices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let k = self.mean.nrows();
        for i in 0..k {
            for j in 0..k {
                w.serialize(CorrelationRow {
                    row: i + 1,
                    col: j + 1,
                    mean: self.mean[(i, j)],
                    q025: self.lower[(i, j)],
                    q975: self.upper[(i, j)],
                    relevant: self.relevant[(i, j)],
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let j = CorrelationJson {
            level: self.level,
            num_draws: self.num_draws,
            mean: rows_of(&self.mean),
            q025: rows_of(&self.lower),
            q975: rows_of(&self.upper),
            relevant: rows_of(&self.relevant),
        };
        let text = serde_json::to_string_pretty(&j)?;
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let j: CorrelationJson = serde_json::from_str(&text)?;
        let k = j.mean.len();
        let f = |rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                return Err(Error::Schema("correlation matrix is not square".into()));
            }
            Ok(DMatrix::from_fn(k, k, |r, c| rows[r][c]))
        };
        if j.relevant.len() != k || j.relevant.iter().any(|r| r.len() != k) {
            return Err(Error::Schema("relevance matrix is not square".into()));
        }
        Ok(Self {
            level: j.level,
            mean: f(&j.mean)?,
            lower: f(&j.q025)?,
            upper: f(&j.q975)?,
            relevant: DMatrix::from_fn(k, k, |r, c| j.relevant[r][c]),
            num_draws: j.num_draws,
        })
    }
}

/// Principal components of the posterior-mean matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `K × c`; within each component the largest-magnitude loading is
    /// positive.
    pub loadings: DMatrix<f64>,
    /// `M × c` area scores.
    pub scores: DMatrix<f64>,
    /// Share of total variance per component.
    pub explained: Vec<f64>,
}

/// PCA of the `M × K` posterior means via SVD of the column-centred matrix,
/// optionally scaling columns to unit variance.
pub fn pca_of_spatial_means(
    summary: &ArealSummary,
    num_components: usize,
    scale: bool,
) -> Result<Pca> {
    pca(&summary.mean, num_components, scale)
}

/// PCA of an arbitrary `M × K` matrix; see [`pca_of_spatial_means`].
pub fn pca(x: &DMatrix<f64>, num_components: usize, scale: bool) -> Result<Pca> {
    let (m, k) = x.shape();
    if m < 2 {
        return Err(Error::Insufficient("PCA needs at least 2 areas".into()));
    }
    if num_components == 0 || num_components > k.min(m) {
        return Err(Error::Validation(format!(
            "num_components must lie in 1..={}, got {num_components}",
            k.min(m)
        )));
    }
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        if scale {
            let sd = (col.norm_squared() / (m - 1) as f64).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
    }
    let svd = c.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut loadings = DMatrix::zeros(k, num_components);
    let mut explained = Vec::with_capacity(num_components);
    for (col, &idx) in order.iter().take(num_components).enumerate() {
        let mut v: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        loadings.set_column(col, &nalgebra::DVector::from_vec(v));
        let s = svd.singular_values[idx];
        explained.push(if total > 0.0 { s * s / total } else { 0.0 });
    }
    let scores = &c * &loadings;
    Ok(Pca {
        loadings,
        scores,
        explained,
    })
}

/// One (area, variable, category) cell of a posterior predictive check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    /// 1-based area index.
    pub area: usize,
    /// 1-based variable index.
    pub variable: usize,
    /// 1-based category index.
    pub category: usize,
    pub predicted_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub observed: f64,
    pub covered: bool,
}

/// Predicted and observed percentages per (area, variable, category).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveReport {
    pub rows: Vec<PredictiveRow>,
    /// Draws × rows matrix of predicted percentages.
    pub per_draw: DMatrix<f64>,
}

impl PredictiveReport {
    /// Fraction of rows whose interval contains the observed percentage.
    pub fn coverage(&self) -> f64 {
        self.rows.iter().filter(|r| r.covered).count() as f64 / self.rows.len() as f64
    }
}

/// Linear predictor of respondent `i` for variable `k` in a draw.
fn eta(draw: &Draw, spec: &ModelSpec, data: &SurveyDataset, i: usize, k: usize) -> f64 {
    let s = &draw.state;
    let mut e = draw.theta[(data.area(i), k)];
    if spec.include_alpha {
        e += s.alpha[(data.cell(i), k)];
    }
    if spec.variant.has_ire() {
        e += (0..spec.dims.variables)
            .map(|l| s.ire_phi[(i, l)] * s.ire_mixing[(l, k)])
            .sum::<f64>();
    }
    e
}

/// Simulates one response per draw for every observed `(i, k)` in the
/// selected areas and aggregates category percentages per area. Respondents
/// with a missing `y_ik` are excluded from both the simulated and the
/// observed percentages. Deterministic in `seed`.
pub fn posterior_predictive_areal(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &SurveyDataset,
    area_filter: Option<&[usize]>,
    seed: u64,
) -> Result<PredictiveReport> {
    posterior_predictive_areal_with_level(
        draws,
        spec,
        data,
        area_filter,
        seed,
        DEFAULT_CREDIBLE_LEVEL,
    )
}

pub fn posterior_predictive_areal_with_level(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    data: &SurveyDataset,
    area_filter: Option<&[usize]>,
    seed: u64,
    level: f64,
) -> Result<PredictiveReport> {
    check_level(level)?;
    let all = nonempty(draws)?;
    let d = spec.dims;
    let (k, j) = (d.variables, d.categories);
    let areas: Vec<usize> = match area_filter {
        Some(f) => {
            if let Some(&bad) = f.iter().find(|&&a| a >= d.areas) {
                return Err(Error::Validation(format!("area {} out of range", bad + 1)));
            }
            f.to_vec()
        }
        None => (0..d.areas).collect(),
    };
    // (area, variable) groups with at least one observed response
    let mut groups: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for &m in &areas {
        for kk in 0..k {
            let members: Vec<usize> = data
                .respondents_in_area(m)
                .iter()
                .copied()
                .filter(|&i| data.response(i, kk).is_some())
                .collect();
            if !members.is_empty() {
                groups.push((m, kk, members));
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Insufficient(
            "no observed responses in the selected areas".into(),
        ));
    }
    let per_draw_rows: Vec<Vec<f64>> = all
        .par_iter()
        .enumerate()
        .map(|(r, draw)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut row = Vec::with_capacity(groups.len() * j);
            for (_, kk, members) in &groups {
                let mut counts = vec![0usize; j];
                for &i in members {
                    let e = eta(draw, spec, data, i, *kk);
                    let kappa =
                        draw.state.cutpoints[spec.block_index(data.cell(i), *kk)].cutpoints();
                    let u: f64 = rng.random();
                    let y = kappa
                        .iter()
                        .position(|&c| u < inv_logit(c + e))
                        .unwrap_or(j - 1);
                    counts[y] += 1;
                }
                let n = members.len() as f64;
                row.extend(counts.iter().map(|&c| 100.0 * c as f64 / n));
            }
            row
        })
        .collect();
    let per_draw = DMatrix::from_fn(all.len(), groups.len() * j, |r, c| per_draw_rows[r][c]);
    let mut rows = Vec::with_capacity(groups.len() * j);
    for (g, (m, kk, members)) in groups.iter().enumerate() {
        let n = members.len() as f64;
        for cat in 0..j {
            let col = g * j + cat;
            let (mean, lo, hi) = summarize(per_draw.column(col).iter().copied().collect(), level);
            let observed = 100.0
                * members
                    .iter()
                    .filter(|&&i| data.response(i, *kk) == Some(cat))
                    .count() as f64
                / n;
            rows.push(PredictiveRow {
                area: m + 1,
                variable: kk + 1,
                category: cat + 1,
                predicted_mean: mean,
                lower: lo,
                upper: hi,
                observed,
                covered: lo <= observed && observed <= hi,
            });
        }
    }
    Ok(PredictiveReport { rows, per_draw })
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    area: String,
    model: String,
    variable: usize,
    category: usize,
    predicted_mean: f64,
    lower: f64,
    upper: f64,
    observed: f64,
    covered: bool,
}

/// Writes one row per area, model and category, in the layout of a
/// model-comparison table: rows are grouped by area, then variable, then
/// model. `area_labels[m]` replaces the 1-based area index when given.
pub fn write_predictive_csv(
    path: impl AsRef<Path>,
    reports: &[(&str, &PredictiveReport)],
    area_labels: Option<&[String]>,
) -> Result<()> {
    let mut all: Vec<(usize, usize, usize, usize, &str, &PredictiveRow)> = Vec::new();
    for (mi, (name, rep)) in reports.iter().enumerate() {
        for row in &rep.rows {
            all.push((row.area, row.variable, mi, row.category, name, row));
        }
    }
    all.sort_by_key(|t| (t.0, t.1, t.2, t.3));
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for (_, _, _, _, name, row) in all {
        let area = match area_labels {
            Some(labels) => labels
                .get(row.area - 1)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("no label for area {}", row.area)))?,
            None => row.area.to_string(),
        };
        w.serialize(TableRow {
            area,
            model: name.to_string(),
            variable: row.variable,
            category: row.category,
            predicted_mean: row.predicted_mean,
            lower: row.lower,
            upper: row.upper,
            observed: row.observed,
            covered: row.covered,
        })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads a predictive table back as `(area label, model, row)` triples.
pub fn read_predictive_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String, PredictiveRow)>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize::<TableRow>()
        .enumerate()
        .map(|(line, t)| {
            let t = t?;
            let area = t.area.parse().unwrap_or(0);
            if t.variable == 0 || t.category == 0 {
                return Err(Error::Parse {
                    path: path.as_ref().to_path_buf(),
                    line: line + 2,
                    message: "indices are 1-based".into(),
                });
            }
            Ok((
                t.area,
                t.model,
                PredictiveRow {
                    area,
                    variable: t.variable,
                    category: t.category,
                    predicted_mean: t.predicted_mean,
                    lower: t.lower,
                    upper: t.upper,
                    observed: t.observed,
                    covered: t.covered,
                },
            ))
        })
        .collect()
}

/// Population counts `N_zm` per cell and area.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCounts {
    /// `Z × M`.
    pub counts: DMatrix<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PopulationRow {
    cell: usize,
    area: usize,
    count: f64,
}

impl PopulationCounts {
    pub fn new(counts: DMatrix<f64>) -> Result<Self> {
        if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::Validation(
                "population counts must be finite and non-negative".into(),
            ));
        }
        Ok(Self { counts })
    }

    /// Reads `cell,area,count` rows with 1-based indices; absent pairs are 0.
    pub fn read_csv(path: impl AsRef<Path>, cells: usize, areas: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let mut counts = DMatrix::zeros(cells, areas);
        for (line, row) in r.deserialize::<PopulationRow>().enumerate() {
            let row = row?;
            if row.cell == 0 || row.cell > cells || row.area == 0 || row.area > areas {
                return Err(Error::Parse {
                    path: path.as_ref().to_path_buf(),
                    line: line + 2,
                    message: format!("cell {} / area {} out of range", row.cell, row.area),
                });
            }
            counts[(row.cell - 1, row.area - 1)] += row.count;
        }
        Self::new(counts)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for z in 0..self.counts.nrows() {
            for m in 0..self.counts.ncols() {
                w.serialize(PopulationRow {
                    cell: z + 1,
                    area: m + 1,
                    count: self.counts[(z, m)],
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Expected category proportion in one (area, variable, category).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoststratRow {
    pub area: usize,
    pub variable: usize,
    pub category: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Probabilists' Gauss–Hermite rule for `E f(Z)`, `Z ~ N(0, 1)`, from the
/// eigen-decomposition of the Jacobi matrix.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jac);
    (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect()
}

/// Expected proportions `P_jkm = Σ_z N_zm π_jk(z, m) / Σ_z N_zm` per draw,
/// summarized by mean and credible interval. For models with individual effects
/// `π` is averaged over `ψ_k ~ N(0, Σ̃_b[k, k])` by Gauss–Hermite quadrature.
pub fn poststratify(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    population: &PopulationCounts,
) -> Result<Vec<PoststratRow>> {
    poststratify_with_level(draws, spec, population, DEFAULT_CREDIBLE_LEVEL)
}

pub fn poststratify_with_level(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    population: &PopulationCounts,
    level: f64,
) -> Result<Vec<PoststratRow>> {
    check_level(level)?;
    let all = nonempty(draws)?;
    let d = spec.dims;
    let (k, j) = (d.variables, d.categories);
    if population.counts.shape() != (d.cells, d.areas) {
        return Err(Error::Dimension(format!(
            "population table is {:?}, model needs {} cells x {} areas",
            population.counts.shape(),
            d.cells,
            d.areas
        )));
    }
    let totals: Vec<f64> = population.counts.column_iter().map(|c| c.sum()).collect();
    if let Some(m) = totals.iter().position(|&t| t <= 0.0) {
        return Err(Error::Validation(format!(
            "area {} has zero population",
            m + 1
        )));
    }
    let rule = gauss_hermite(HERMITE_NODES);
    let per_draw: Vec<Vec<f64>> = all
        .par_iter()
        .map(|draw| {
            let s = &draw.state;
            let sd: Vec<f64> = match &draw.sigma_tilde_b {
                Some(st) => (0..k).map(|kk| st[(kk, kk)].max(0.0).sqrt()).collect(),
                None => vec![0.0; k],
            };
            let mut out = vec![0.0; d.areas * k * j];
            for m in 0..d.areas {
                for z in 0..d.cells {
                    let w = population.counts[(z, m)] / totals[m];
                    if w == 0.0 {
                        continue;
                    }
                    for kk in 0..k {
                        let mut e = draw.theta[(m, kk)];
                        if spec.include_alpha {
                            e += s.alpha[(z, kk)];
                        }
                        let kappa = s.cutpoints[spec.block_index(z, kk)].cutpoints();
                        let base = (m * k + kk) * j;
                        if sd[kk] > 0.0 {
                            for &(x, wt) in &rule {
                                let p = category_probs_unchecked(e + sd[kk] * x, kappa);
                                for (c, pc) in p.iter().enumerate() {
                                    out[base + c] += w * wt * pc;
                                }
                            }
                        } else {
                            let p = category_probs_unchecked(e, kappa);
                            for (c, pc) in p.iter().enumerate() {
                                out[base + c] += w * pc;
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut rows = Vec::with_capacity(d.areas * k * j);
    for m in 0..d.areas {
        for kk in 0..k {
            for c in 0..j {
                let idx = (m * k + kk) * j + c;
                let (mean, lo, hi) = summarize(per_draw.iter().map(|v| v[idx]).collect(), level);
                rows.push(PoststratRow {
                    area: m + 1,
                    variable: kk + 1,
                    category: c + 1,
                    mean,
                    lower: lo,
                    upper: hi,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes `area,variable,category,mean,lower,upper` (expected proportions).
pub fn write_poststrat_csv(path: impl AsRef<Path>, rows: &[PoststratRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_poststrat_csv(path: impl AsRef<Path>) -> Result<Vec<PoststratRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
