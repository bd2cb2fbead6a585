//! Command-line front end: one TOML run configuration per invocation.
//!
//! Relative paths in the configuration are resolved against the directory
//! holding the configuration file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    convergence_report, gates_pass, waic, write_diagnostics_csv, write_waic_json,
};
use crate::error::{Error, Result};
use crate::graph::{load_adjacency, write_adjacency, AdjacencyGraph};
use crate::model::{
    CutpointBlock, CutpointMode, Dimensions, ModelSpec, SurveyDataset, Variant, DEFAULT_SIGMA_UPPER,
};
use crate::posterior::{
    areal_summaries_with_level, classify_relevance, correlation_report_with_level,
    pca_of_spatial_means, posterior_predictive_areal_with_level, poststratify_with_level,
    write_poststrat_csv, write_predictive_csv, Level, PopulationCounts, RelevanceClass,
    RELEVANCE_HIGH, RELEVANCE_LOW,
};
use crate::sampler::{
    read_archive, run_chains, write_archive, ArchiveManifest, PosteriorDraws, SamplerConfig,
};
use crate::synth::{generate_dataset, grid_graph, TrueParameters, TruthRecord};

/// Exit status when a fit completes but the convergence gates fail.
pub const EXIT_GATE_FAILED: u8 = 3;

pub const DATASET_FILE: &str = "dataset.csv";
pub const ADJACENCY_FILE: &str = "adjacency.txt";
pub const TRUTH_FILE: &str = "truth.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const WAIC_FILE: &str = "waic.json";
pub const AREAL_FILE: &str = "areal_summary.csv";
pub const RELEVANCE_FILE: &str = "relevance_map.csv";
pub const PREDICTIVE_FILE: &str = "predictive.csv";
pub const POSTSTRAT_FILE: &str = "poststrat.csv";

#[derive(Debug, Parser)]
#[command(
    name = "spord",
    version,
    about = "Multivariate spatial ordinal regression for survey data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `paths.output`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed; overrides `sampler.seed` and `simulate.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic survey with known parameters.
    Simulate,
    /// Run the sampler and write the draw archive and diagnostics.
    Fit,
    /// Recompute convergence diagnostics (and WAIC) for an archive.
    Diagnose,
    /// Areal summaries, relevance map, correlation reports and PCA.
    Summarize,
    /// Posterior predictive check aggregated by area.
    Predict,
    /// Post-stratified expected proportions.
    Poststratify,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Directory of a fitted archive; defaults to `output` as given in the
    /// file, before any `--output` override.
    pub archive: Option<PathBuf>,
    pub population: Option<PathBuf>,
    /// One area label per line, in area order.
    pub area_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub cutpoint_mode: CutpointMode,
    pub include_alpha: bool,
    pub sigma_upper: f64,
    pub categories: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Corr,
            cutpoint_mode: CutpointMode::Shared,
            include_alpha: false,
            sigma_upper: DEFAULT_SIGMA_UPPER,
            categories: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    pub adapt_during_burnin_only: bool,
    pub record_loglik: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            chains: d.num_chains,
            iterations: d.iterations_per_chain,
            burn_in: d.burn_in,
            thin: d.thin,
            seed: d.seed,
            target_acceptance: d.target_acceptance,
            adapt_during_burnin_only: d.adapt_during_burnin_only,
            record_loglik: d.record_loglik,
        }
    }
}

impl SamplerSection {
    pub fn to_config(&self) -> SamplerConfig {
        SamplerConfig {
            num_chains: self.chains,
            iterations_per_chain: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            target_acceptance: self.target_acceptance,
            adapt_during_burnin_only: self.adapt_during_burnin_only,
            hold_scales: false,
            record_loglik: self.record_loglik,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportsConfig {
    pub relevance_high: f64,
    pub relevance_low: f64,
    pub pca_components: usize,
    pub pca_scale: bool,
    pub credible_level: f64,
    /// 1-based areas for `predict`; all areas when absent.
    pub area_filter: Option<Vec<usize>>,
    /// Model column of the predictive table; defaults to the variant name.
    pub model_label: Option<String>,
}

impl Default for ReportsConfig {
    fn default() -> Self {
        Self {
            relevance_high: RELEVANCE_HIGH,
            relevance_low: RELEVANCE_LOW,
            pca_components: 2,
            pca_scale: false,
            credible_level: 0.95,
            area_filter: None,
            model_label: None,
        }
    }
}

/// Generating design for `simulate`. Unset parameters keep the neutral
/// values: uniform cut points, identity mixing, `ρ = 0.5`, unit scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Adjacency of the simulated areas; a `rows × cols` grid when absent.
    pub adjacency: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub per_area: usize,
    pub variables: usize,
    pub cells: usize,
    pub seed: u64,
    pub simplex: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub mixing: Option<Vec<Vec<f64>>>,
    pub ire_mixing: Option<Vec<Vec<f64>>>,
    pub alpha: Option<Vec<Vec<f64>>>,
    pub cell_probs: Option<Vec<f64>>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            adjacency: None,
            rows: 3,
            cols: 3,
            per_area: 20,
            variables: 2,
            cells: 1,
            seed: 1,
            simplex: None,
            rho: None,
            sigma: None,
            mixing: None,
            ire_mixing: None,
            alpha: None,
            cell_probs: None,
        }
    }
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub sampler: SamplerSection,
    pub reports: ReportsConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.dataset,
            &mut p.adjacency,
            &mut p.output,
            &mut p.archive,
            &mut p.population,
            &mut p.area_labels,
            &mut cfg.simulate.adjacency,
        ] {
            if let Some(rel) = slot.as_ref().filter(|r| r.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.reports;
        if !(0.0..=1.0).contains(&r.relevance_low) || !(0.0..=1.0).contains(&r.relevance_high) {
            return Err(Error::Config(
                "relevance thresholds must lie in [0, 1]".into(),
            ));
        }
        if r.relevance_low > r.relevance_high {
            return Err(Error::Config(
                "reports.relevance_low exceeds reports.relevance_high".into(),
            ));
        }
        if !(r.credible_level > 0.0 && r.credible_level < 1.0) {
            return Err(Error::Config(
                "reports.credible_level must lie in (0, 1)".into(),
            ));
        }
        if r.pca_components == 0 {
            return Err(Error::Config(
                "reports.pca_components must be at least 1".into(),
            ));
        }
        if r.area_filter.as_ref().is_some_and(|f| f.contains(&0)) {
            return Err(Error::Config("reports.area_filter is 1-based".into()));
        }
        if self.model.categories < 2 {
            return Err(Error::Config("model.categories must be at least 2".into()));
        }
        if !(self.model.sigma_upper > 0.0 && self.model.sigma_upper.is_finite()) {
            return Err(Error::Config(
                "model.sigma_upper must be positive and finite".into(),
            ));
        }
        self.sampler.to_config().validate()?;
        let s = &self.simulate;
        if s.rows == 0 || s.cols == 0 || s.per_area == 0 || s.variables == 0 || s.cells == 0 {
            return Err(Error::Config("simulate sizes must be positive".into()));
        }
        Ok(())
    }

    fn required(&self, slot: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        slot.clone()
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn existing(&self, slot: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = self.required(slot, key)?;
        if !p.exists() {
            return Err(Error::Config(format!(
                "`{key}` points to a missing path: {}",
                p.display()
            )));
        }
        Ok(p)
    }

    fn output_dir(&self) -> Result<PathBuf> {
        let p = self.required(&self.paths.output, "paths.output")?;
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn archive_dir(&self) -> Result<PathBuf> {
        match &self.paths.archive {
            Some(_) => self.existing(&self.paths.archive, "paths.archive"),
            None => self.existing(&self.paths.output, "paths.archive"),
        }
    }

    fn spec(&self, dims: Dimensions) -> Result<ModelSpec> {
        ModelSpec::new(
            self.model.variant,
            self.model.cutpoint_mode,
            self.model.include_alpha,
            dims,
        )?
        .with_sigma_upper(self.model.sigma_upper)
    }
}

/// Parses the command line and runs it, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Runs a parsed command; returns the process exit status.
pub fn run(cli: &Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.output {
        if cfg.paths.archive.is_none() {
            cfg.paths.archive = cfg.paths.output.take();
        }
        cfg.paths.output = Some(o.clone());
    }
    if let Some(s) = cli.seed {
        cfg.sampler.seed = s;
        cfg.simulate.seed = s;
    }
    cfg.validate()?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg).map(|_| 0),
        Command::Fit => cmd_fit(&cfg),
        Command::Diagnose => cmd_diagnose(&cfg).map(|_| 0),
        Command::Summarize => cmd_summarize(&cfg).map(|_| 0),
        Command::Predict => cmd_predict(&cfg).map(|_| 0),
        Command::Poststratify => cmd_poststratify(&cfg).map(|_| 0),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], r: usize, c: usize, key: &str) -> Result<DMatrix<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("`{key}` must be a {r}x{c} matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn sized<T: Clone>(v: &Option<Vec<T>>, n: usize, key: &str) -> Result<Option<Vec<T>>> {
    match v {
        Some(v) if v.len() != n => Err(Error::Config(format!(
            "`{key}` needs {n} entries, got {}",
            v.len()
        ))),
        other => Ok(other.clone()),
    }
}

/// Writes `dataset.csv`, `adjacency.txt` and `truth.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.simulate;
    let out = cfg.output_dir()?;
    let graph = match &s.adjacency {
        Some(_) => load_adjacency(cfg.existing(&s.adjacency, "simulate.adjacency")?)?,
        None => grid_graph(s.rows, s.cols)?,
    };
    let k = s.variables;
    let spec = cfg.spec(Dimensions {
        categories: cfg.model.categories,
        variables: k,
        cells: s.cells,
        areas: graph.num_areas(),
    })?;
    let mut truth = TrueParameters::neutral(&spec, s.per_area);
    let st = &mut truth.state;
    if let Some(delta) = sized(&s.simplex, cfg.model.categories, "simulate.simplex")? {
        let block = CutpointBlock::from_simplex(delta)?;
        st.cutpoints.iter_mut().for_each(|b| *b = block.clone());
    }
    if let Some(rho) = sized(&s.rho, k, "simulate.rho")? {
        st.rho = rho;
    }
    if let Some(m) = &s.mixing {
        if !spec.variant.has_mixing() {
            return Err(Error::Config(
                "simulate.mixing needs a correlated variant".into(),
            ));
        }
        st.mixing = rows_to_matrix(m, k, k, "simulate.mixing")?;
    }
    if let Some(sigma) = sized(&s.sigma, k, "simulate.sigma")? {
        if spec.variant != Variant::Indep {
            return Err(Error::Config(
                "simulate.sigma applies to the indep variant".into(),
            ));
        }
        st.sigma = sigma;
    }
    if let Some(m) = &s.ire_mixing {
        if !spec.variant.has_ire() {
            return Err(Error::Config(
                "simulate.ire_mixing needs the corr_ire variant".into(),
            ));
        }
        st.ire_mixing = rows_to_matrix(m, k, k, "simulate.ire_mixing")?;
    }
    if let Some(a) = &s.alpha {
        if !spec.include_alpha {
            return Err(Error::Config(
                "simulate.alpha needs model.include_alpha".into(),
            ));
        }
        st.alpha = rows_to_matrix(a, s.cells, k, "simulate.alpha")?;
    }
    if let Some(p) = sized(&s.cell_probs, s.cells, "simulate.cell_probs")? {
        truth.cell_probs = p;
    }
    let survey = generate_dataset(&truth, &spec, &graph, s.seed)?;
    survey.data.write_csv(out.join(DATASET_FILE))?;
    write_adjacency(&graph, out.join(ADJACENCY_FILE))?;
    TruthRecord::new(&survey, &truth, &spec, s.seed).write_json(out.join(TRUTH_FILE))?;
    log::info!(
        "simulated {} respondents in {} areas into {}",
        survey.data.num_respondents(),
        graph.num_areas(),
        out.display()
    );
    Ok(())
}

fn load_inputs(cfg: &RunConfig) -> Result<(AdjacencyGraph, SurveyDataset)> {
    let adjacency = cfg.existing(&cfg.paths.adjacency, "paths.adjacency")?;
    let dataset = cfg.existing(&cfg.paths.dataset, "paths.dataset")?;
    let graph = load_adjacency(adjacency)?;
    let data =
        SurveyDataset::read_csv(dataset, cfg.model.categories, None, Some(graph.num_areas()))?;
    Ok((graph, data))
}

fn run_config_json(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

/// Fits the configured model. Returns 0 when every convergence gate passes
/// and [`EXIT_GATE_FAILED`] otherwise; all artifacts are written either way.
pub fn cmd_fit(cfg: &RunConfig) -> Result<u8> {
    let (graph, data) = load_inputs(cfg)?;
    let out = cfg.output_dir()?;
    let spec = cfg.spec(Dimensions {
        categories: cfg.model.categories,
        variables: data.num_variables(),
        cells: data.num_cells(),
        areas: graph.num_areas(),
    })?;
    let sampler = cfg.sampler.to_config();
    log::info!(
        "fitting {} with {} chains x {} iterations",
        spec.variant,
        sampler.num_chains,
        sampler.iterations_per_chain
    );
    let draws = run_chains(&spec, &data, &graph, &sampler)?;
    write_archive(
        &out,
        &spec,
        data.num_respondents(),
        &draws,
        Some(run_config_json(cfg)?),
    )?;
    if sampler.record_loglik && data.num_observed() > 0 {
        write_waic_json(out.join(WAIC_FILE), &waic(&draws.loglik_matrix()?)?)?;
    }
    gate(&out, &draws, &spec)
}

fn gate(out: &Path, draws: &PosteriorDraws, spec: &ModelSpec) -> Result<u8> {
    let report = convergence_report(draws, spec)?;
    write_diagnostics_csv(out.join(DIAGNOSTICS_FILE), &report)?;
    if gates_pass(&report) {
        return Ok(0);
    }
    let failed: Vec<_> = report.iter().filter(|r| !r.pass).collect();
    eprintln!("convergence gates failed for {} functionals:", failed.len());
    for r in failed {
        let rhat = r.rhat.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        eprintln!("  {}: rhat {rhat}, ess {:.1}", r.functional, r.ess);
    }
    Ok(EXIT_GATE_FAILED)
}

fn load_archive(cfg: &RunConfig) -> Result<(ArchiveManifest, PosteriorDraws)> {
    read_archive(cfg.archive_dir()?)
}

fn load_matching_dataset(cfg: &RunConfig, manifest: &ArchiveManifest) -> Result<SurveyDataset> {
    let d = manifest.spec.dims;
    let data = SurveyDataset::read_csv(
        cfg.existing(&cfg.paths.dataset, "paths.dataset")?,
        d.categories,
        Some(d.cells),
        Some(d.areas),
    )?;
    if data.num_respondents() != manifest.num_respondents || data.num_variables() != d.variables {
        return Err(Error::Schema(format!(
            "dataset has {} respondents and {} variables, archive was fitted to {} and {}",
            data.num_respondents(),
            data.num_variables(),
            manifest.num_respondents,
            d.variables
        )));
    }
    Ok(data)
}

/// Writes `diagnostics.csv`, plus `waic.json` when `paths.dataset` is set.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let (manifest, mut draws) = load_archive(cfg)?;
    let out = cfg.output_dir()?;
    let report = convergence_report(&draws, &manifest.spec)?;
    write_diagnostics_csv(out.join(DIAGNOSTICS_FILE), &report)?;
    let failed = report.iter().filter(|r| !r.pass).count();
    println!("{} functionals, {failed} failing the gates", report.len());
    if cfg.paths.dataset.is_some() {
        let data = load_matching_dataset(cfg, &manifest)?;
        if data.num_observed() > 0 {
            draws.attach_loglik(&manifest.spec, &data)?;
            write_waic_json(out.join(WAIC_FILE), &waic(&draws.loglik_matrix()?)?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RelevanceRow {
    area: usize,
    variable: usize,
    relevance: f64,
    class: &'static str,
}

#[derive(Serialize, Deserialize)]
struct PcaJson {
    explained: Vec<f64>,
    /// `K` rows of `c` loadings.
    loadings: Vec<Vec<f64>>,
    /// `M` rows of `c` scores.
    scores: Vec<Vec<f64>>,
    scaled: bool,
}

/// Writes the areal summary, relevance map, available correlation reports
/// and, when there are at least two areas, the PCA of the posterior means.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<()> {
    let (manifest, draws) = load_archive(cfg)?;
    let out = cfg.output_dir()?;
    let spec = &manifest.spec;
    let r = &cfg.reports;
    let summary = areal_summaries_with_level(&draws, r.credible_level)?;
    summary.write_csv(out.join(AREAL_FILE))?;
    let classes = classify_relevance(&summary, r.relevance_low, r.relevance_high);
    let mut w = csv::Writer::from_path(out.join(RELEVANCE_FILE))?;
    for m in 0..classes.nrows() {
        for k in 0..classes.ncols() {
            w.serialize(RelevanceRow {
                area: m + 1,
                variable: k + 1,
                relevance: summary.relevance[(m, k)],
                class: match classes[(m, k)] {
                    RelevanceClass::High => "high",
                    RelevanceClass::Low => "low",
                    RelevanceClass::Neither => "neither",
                },
            })?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(out.join(RELEVANCE_FILE), e))?;
    for (level, name, available) in [
        (Level::Areal, "correlation_areal", spec.variant.has_mixing()),
        (
            Level::Individual,
            "correlation_individual",
            spec.variant.has_ire(),
        ),
    ] {
        if available {
            let rep = correlation_report_with_level(&draws, spec, level, r.credible_level)?;
            rep.write_csv(out.join(format!("{name}.csv")))?;
            rep.write_json(out.join(format!("{name}.json")))?;
        }
    }
    if spec.dims.areas >= 2 {
        let c = r
            .pca_components
            .min(spec.dims.variables)
            .min(spec.dims.areas);
        let pca = pca_of_spatial_means(&summary, c, r.pca_scale)?;
        let rows = |m: &DMatrix<f64>| {
            m.row_iter()
                .map(|row| row.iter().copied().collect())
                .collect()
        };
        let j = PcaJson {
            explained: pca.explained.clone(),
            loadings: rows(&pca.loadings),
            scores: rows(&pca.scores),
            scaled: r.pca_scale,
        };
        let path = out.join("pca.json");
        fs::write(&path, serde_json::to_string_pretty(&j)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_labels(path: &Path, areas: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if labels.len() != areas {
        return Err(Error::Validation(format!(
            "{} holds {} labels for {areas} areas",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

/// Writes `predictive.csv`.
pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let (manifest, draws) = load_archive(cfg)?;
    let data = load_matching_dataset(cfg, &manifest)?;
    let out = cfg.output_dir()?;
    let spec = &manifest.spec;
    let filter: Option<Vec<usize>> = cfg
        .reports
        .area_filter
        .as_ref()
        .map(|f| f.iter().map(|a| a - 1).collect());
    let rep = posterior_predictive_areal_with_level(
        &draws,
        spec,
        &data,
        filter.as_deref(),
        cfg.sampler.seed,
        cfg.reports.credible_level,
    )?;
    let labels = match &cfg.paths.area_labels {
        Some(_) => Some(read_labels(
            &cfg.existing(&cfg.paths.area_labels, "paths.area_labels")?,
            spec.dims.areas,
        )?),
        None => None,
    };
    let name = cfg
        .reports
        .model_label
        .clone()
        .unwrap_or_else(|| spec.variant.name().to_string());
    write_predictive_csv(
        out.join(PREDICTIVE_FILE),
        &[(&name, &rep)],
        labels.as_deref(),
    )?;
    println!("coverage {:.4}", rep.coverage());
    Ok(())
}

/// Writes `poststrat.csv` (expected proportions).
pub fn cmd_poststratify(cfg: &RunConfig) -> Result<()> {
    let (manifest, draws) = load_archive(cfg)?;
    let d = manifest.spec.dims;
    let pop = PopulationCounts::read_csv(
        cfg.existing(&cfg.paths.population, "paths.population")?,
        d.cells,
        d.areas,
    )?;
    let out = cfg.output_dir()?;
    let rows = poststratify_with_level(&draws, &manifest.spec, &pop, cfg.reports.credible_level)?;
    write_poststrat_csv(out.join(POSTSTRAT_FILE), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sampler.to_config(), SamplerConfig::default());
        assert_eq!(c.sampler.to_config().total_saved(), 1000);
    }

    #[test]
    fn full_config_parses() {
        let c = RunConfig::from_toml(
            r#"
            [paths]
            dataset = "d.csv"
            adjacency = "a.txt"
            output = "out"
            [model]
            variant = "corr_ire"
            cutpoint_mode = "per_cell"
            include_alpha = true
            sigma_upper = 10.0
            [sampler]
            chains = 2
            iterations = 500
            burn_in = 100
            thin = 2
            seed = 7
            [reports]
            relevance_high = 0.9
            relevance_low = 0.1
            pca_components = 3
            credible_level = 0.9
            area_filter = [1, 4]
            [simulate]
            rows = 2
            cols = 5
            mixing = [[1.0, 0.5], [0.0, 1.0]]
            "#,
        )
        .unwrap();
        assert_eq!(c.model.variant, Variant::CorrIre);
        assert_eq!(c.sampler.to_config().saved_per_chain(), 200);
        assert_eq!(c.reports.area_filter, Some(vec![1, 4]));
        assert_eq!(c.simulate.mixing.as_ref().unwrap()[0], vec![1.0, 0.5]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "[sampler]\nthin = 0",
            "[sampler]\nburn_in = 9000",
            "[reports]\nrelevance_low = 0.9\nrelevance_high = 0.5",
            "[reports]\ncredible_level = 1.5",
            "[reports]\narea_filter = [0]",
            "[model]\nvariant = \"other\"",
            "[model]\nunknown_key = 1",
            "[simulate]\nrows = 0",
        ] {
            assert!(
                matches!(RunConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn missing_keys_are_named() {
        let c = RunConfig::default();
        let err = cmd_fit(&c).unwrap_err().to_string();
        assert!(err.contains("paths.adjacency"), "{err}");
        let c = RunConfig {
            paths: PathsConfig {
                adjacency: Some("/nonexistent/adjacency.txt".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let err = cmd_fit(&c).unwrap_err().to_string();
        assert!(
            err.contains("paths.adjacency") && err.contains("missing path"),
            "{err}"
        );
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[paths]\ndataset = \"d.csv\"\noutput = \"/abs/out\"").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.paths.dataset, Some(dir.path().join("d.csv")));
        assert_eq!(c.paths.output, Some(PathBuf::from("/abs/out")));
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from([
            "spord", "fit", "--config", "c.toml", "--seed", "9", "--output", "o",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::Fit);
        assert_eq!(cli.seed, Some(9));
        assert!(Cli::try_parse_from(["spord", "explode"]).is_err());
    }
}
