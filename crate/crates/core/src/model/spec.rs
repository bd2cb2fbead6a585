use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_UPPER: f64 = 100.0;

/// Which of the three multivariate structures is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Independent LCAR fields per variable.
    Indep,
    /// Spatial fields mixed through `Θ = ΦM`.
    Corr,
    /// `Corr` plus individual random effects `Ψ = Φ̃M̃`.
    #[serde(rename = "corr_ire")]
    CorrIre,
}

impl Variant {
    pub fn has_mixing(self) -> bool {
        !matches!(self, Variant::Indep)
    }

    pub fn has_ire(self) -> bool {
        matches!(self, Variant::CorrIre)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Indep => "indep",
            Variant::Corr => "corr",
            Variant::CorrIre => "corr_ire",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '&'], "_").as_str() {
            "indep" => Ok(Variant::Indep),
            "corr" => Ok(Variant::Corr),
            "corr_ire" | "corrire" | "corr__ire" => Ok(Variant::CorrIre),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutpointMode {
    /// One cut-point vector per variable.
    Shared,
    /// One cut-point vector per (cell, variable).
    PerCell,
}

impl FromStr for CutpointMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "shared" => Ok(CutpointMode::Shared),
            "per_cell" | "percell" => Ok(CutpointMode::PerCell),
            other => Err(Error::Config(format!("unknown cut-point mode {other:?}"))),
        }
    }
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// `J`, categories per ordinal variable.
    pub categories: usize,
    /// `K`, ordinal variables.
    pub variables: usize,
    /// `Z`, covariate cells.
    pub cells: usize,
    /// `M`, areas.
    pub areas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub cutpoint_mode: CutpointMode,
    pub include_alpha: bool,
    pub sigma_upper: f64,
    pub dims: Dimensions,
}

impl ModelSpec {
    pub fn new(
        variant: Variant,
        cutpoint_mode: CutpointMode,
        include_alpha: bool,
        dims: Dimensions,
    ) -> Result<Self> {
        let spec = Self {
            variant,
            cutpoint_mode,
            include_alpha,
            sigma_upper: DEFAULT_SIGMA_UPPER,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_sigma_upper(mut self, sigma_upper: f64) -> Result<Self> {
        self.sigma_upper = sigma_upper;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.categories < 2 {
            return Err(Error::Config("need at least two categories".into()));
        }
        if d.variables == 0 || d.cells == 0 || d.areas == 0 {
            return Err(Error::Config(
                "variables, cells and areas must all be positive".into(),
            ));
        }
        if self.include_alpha && self.cutpoint_mode == CutpointMode::PerCell {
            return Err(Error::Config(
                "cell effects (alpha) cannot be combined with per-cell cut points".into(),
            ));
        }
        if !(self.sigma_upper > 0.0 && self.sigma_upper.is_finite()) {
            return Err(Error::Config(
                "sigma_upper must be a positive number".into(),
            ));
        }
        Ok(())
    }

    pub fn num_cutpoint_blocks(&self) -> usize {
        match self.cutpoint_mode {
            CutpointMode::Shared => self.dims.variables,
            CutpointMode::PerCell => self.dims.cells * self.dims.variables,
        }
    }

    /// Index of the cut-point block used by `(cell, variable)`.
    #[inline]
    pub fn block_index(&self, cell: usize, variable: usize) -> usize {
        match self.cutpoint_mode {
            CutpointMode::Shared => variable,
            CutpointMode::PerCell => cell * self.dims.variables + variable,
        }
    }

    /// `(cell, variable)` owning a block; the cell is `None` for shared blocks.
    pub fn block_owner(&self, block: usize) -> (Option<usize>, usize) {
        match self.cutpoint_mode {
            CutpointMode::Shared => (None, block),
            CutpointMode::PerCell => (
                Some(block / self.dims.variables),
                block % self.dims.variables,
            ),
        }
    }
}
