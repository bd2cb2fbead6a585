//! Draw archive: one CSV per chain plus a JSON manifest.
//!
//! Values are written with the shortest round-trip `f64` representation, so
//! reading an archive back reproduces every state bit for bit. Index suffixes
//! in column names are 1-based.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{AcceptanceReport, ChainDraws, Draw, PosteriorDraws, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{CutpointBlock, ModelSpec, ParameterState, Variant};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub chain_id: usize,
    pub file: String,
    pub draws: usize,
    pub acceptance: Vec<AcceptanceReport>,
}

/// Everything needed to interpret the chain files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub sampler: SamplerConfig,
    pub num_respondents: usize,
    pub chains: Vec<ChainEntry>,
    /// The run configuration that produced the archive, if any.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
}

fn chain_file(chain: usize) -> String {
    format!("chain_{chain}.csv")
}

fn matrix_names(out: &mut Vec<String>, name: &str, rows: usize, cols: usize) {
    for r in 1..=rows {
        for c in 1..=cols {
            out.push(format!("{name}[{r},{c}]"));
        }
    }
}

/// Column names of a chain file for the given model.
pub fn column_names(spec: &ModelSpec, num_respondents: usize) -> Vec<String> {
    let d = spec.dims;
    let k = d.variables;
    let mut cols = vec!["chain".to_string(), "iteration".to_string()];
    matrix_names(&mut cols, "delta", spec.num_cutpoint_blocks(), d.categories);
    matrix_names(
        &mut cols,
        "kappa",
        spec.num_cutpoint_blocks(),
        d.categories - 1,
    );
    if spec.include_alpha {
        matrix_names(&mut cols, "alpha", d.cells, k);
    }
    matrix_names(&mut cols, "phi", d.areas, k);
    if spec.variant.has_mixing() {
        matrix_names(&mut cols, "M", k, k);
    }
    cols.extend((1..=k).map(|l| format!("rho[{l}]")));
    match spec.variant {
        Variant::Indep => cols.extend((1..=k).map(|l| format!("sigma[{l}]"))),
        _ => cols.push("sigma_M".into()),
    }
    if spec.variant.has_ire() {
        matrix_names(&mut cols, "phi_tilde", num_respondents, k);
        matrix_names(&mut cols, "M_tilde", k, k);
        cols.push("sigma_M_tilde".into());
    }
    matrix_names(&mut cols, "Sigma_b", k, k);
    if spec.variant.has_ire() {
        matrix_names(&mut cols, "Sigma_tilde_b", k, k);
    }
    cols
}

fn push_matrix(row: &mut Vec<String>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            row.push(m[(r, c)].to_string());
        }
    }
}

fn draw_row(spec: &ModelSpec, draw: &Draw) -> Vec<String> {
    let s = &draw.state;
    let mut row = vec![draw.chain.to_string(), draw.iteration.to_string()];
    for b in &s.cutpoints {
        row.extend(b.simplex().iter().map(f64::to_string));
    }
    for b in &s.cutpoints {
        row.extend(b.cutpoints().iter().map(f64::to_string));
    }
    if spec.include_alpha {
        push_matrix(&mut row, &s.alpha);
    }
    push_matrix(&mut row, &s.phi);
    if spec.variant.has_mixing() {
        push_matrix(&mut row, &s.mixing);
    }
    row.extend(s.rho.iter().map(f64::to_string));
    match spec.variant {
        Variant::Indep => row.extend(s.sigma.iter().map(f64::to_string)),
        _ => row.push(s.sigma_m.unwrap_or(f64::NAN).to_string()),
    }
    if spec.variant.has_ire() {
        push_matrix(&mut row, &s.ire_phi);
        push_matrix(&mut row, &s.ire_mixing);
        row.push(s.sigma_m_tilde.unwrap_or(f64::NAN).to_string());
    }
    push_matrix(&mut row, &draw.sigma_b);
    if let Some(st) = &draw.sigma_tilde_b {
        push_matrix(&mut row, st);
    }
    row
}

/// Writes every chain and the manifest into `dir`, creating it if needed.
pub fn write_archive(
    dir: impl AsRef<Path>,
    spec: &ModelSpec,
    num_respondents: usize,
    draws: &PosteriorDraws,
    run_config: Option<serde_json::Value>,
) -> Result<ArchiveManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = column_names(spec, num_respondents);
    let mut entries = Vec::new();
    for chain in &draws.chains {
        let file = chain_file(chain.chain_id);
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&header)?;
        for d in &chain.draws {
            w.write_record(draw_row(spec, d))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        entries.push(ChainEntry {
            chain_id: chain.chain_id,
            file,
            draws: chain.draws.len(),
            acceptance: chain.acceptance.clone(),
        });
    }
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        sampler: draws.config.clone(),
        num_respondents,
        chains: entries,
        run_config,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

struct Cursor<'r> {
    record: &'r csv::StringRecord,
    pos: usize,
    path: &'r Path,
    line: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Result<f64> {
        let field = self.record.get(self.pos).ok_or_else(|| Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: "row is shorter than the header".into(),
        })?;
        self.pos += 1;
        field.parse().map_err(|_| Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: format!("column {} is not a number: {field:?}", self.pos),
        })
    }

    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.next()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(
            rows,
            cols,
            &self.take(rows * cols)?,
        ))
    }
}

fn parse_row(spec: &ModelSpec, n: usize, cur: &mut Cursor) -> Result<Draw> {
    let d = spec.dims;
    let k = d.variables;
    let chain = cur.next()? as usize;
    let iteration = cur.next()? as usize;
    let blocks = spec.num_cutpoint_blocks();
    let deltas: Vec<Vec<f64>> = (0..blocks)
        .map(|_| cur.take(d.categories))
        .collect::<Result<_>>()?;
    let kappas: Vec<Vec<f64>> = (0..blocks)
        .map(|_| cur.take(d.categories - 1))
        .collect::<Result<_>>()?;
    let mut state = ParameterState::neutral(spec, n);
    state.cutpoints = deltas
        .into_iter()
        .zip(kappas)
        .map(|(dl, kp)| CutpointBlock::from_parts(dl, kp))
        .collect::<Result<_>>()?;
    if spec.include_alpha {
        state.alpha = cur.matrix(d.cells, k)?;
    }
    state.phi = cur.matrix(d.areas, k)?;
    if spec.variant.has_mixing() {
        state.mixing = cur.matrix(k, k)?;
    }
    state.rho = cur.take(k)?;
    match spec.variant {
        Variant::Indep => state.sigma = cur.take(k)?,
        _ => state.sigma_m = Some(cur.next()?),
    }
    if spec.variant.has_ire() {
        state.ire_phi = cur.matrix(n, k)?;
        state.ire_mixing = cur.matrix(k, k)?;
        state.sigma_m_tilde = Some(cur.next()?);
    }
    Ok(Draw::new(chain, iteration, state, Vec::new()))
}

/// Reads an archive written by [`write_archive`]. Derived columns are
/// recomputed from the states; pointwise log-likelihoods are not stored.
pub fn read_archive(dir: impl AsRef<Path>) -> Result<(ArchiveManifest, PosteriorDraws)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: ArchiveManifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "archive format {} is not supported",
            manifest.format_version
        )));
    }
    manifest.spec.validate()?;
    let n = manifest.num_respondents;
    let expected = column_names(&manifest.spec, n);
    let mut chains = Vec::new();
    for entry in &manifest.chains {
        let path: PathBuf = dir.join(&entry.file);
        let mut r = csv::Reader::from_path(&path)?;
        let header = r.headers()?.clone();
        if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(Error::Schema(format!(
                "{} does not match the manifest's model",
                path.display()
            )));
        }
        let mut draws = Vec::with_capacity(entry.draws);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut cur = Cursor {
                record: &rec,
                pos: 0,
                path: &path,
                line: line + 2,
            };
            draws.push(parse_row(&manifest.spec, n, &mut cur)?);
        }
        if draws.len() != entry.draws {
            return Err(Error::Schema(format!(
                "{} holds {} draws, manifest says {}",
                path.display(),
                draws.len(),
                entry.draws
            )));
        }
        chains.push(ChainDraws {
            chain_id: entry.chain_id,
            draws,
            acceptance: entry.acceptance.clone(),
            scales_after_burn_in: Vec::new(),
            final_scales: Vec::new(),
        });
    }
    let posterior = PosteriorDraws {
        config: manifest.sampler.clone(),
        chains,
    };
    Ok((manifest, posterior))
}
