use nalgebra::DMatrix;

use super::cutpoints::CutpointBlock;
use super::spec::{ModelSpec, Variant};
use crate::error::{Error, Result};

/// One point in parameter space.
///
/// `phi` is `M × K`. For `Indep` it holds the spatial effects `θ` directly and
/// `mixing` is the fixed identity, so `Θ = ΦM` is one code path for all
/// variants. `alpha` is `Z × K` with a zero first row (corner constraint) and
/// is empty unless the spec includes cell effects. The IRE fields are empty
/// outside `CorrIre`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub cutpoints: Vec<CutpointBlock>,
    pub alpha: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
    pub rho: Vec<f64>,
    /// Per-variable LCAR scales (`Indep` only).
    pub sigma: Vec<f64>,
    /// Scale of the entries of `M` (`Corr`, `CorrIre`).
    pub sigma_m: Option<f64>,
    pub ire_phi: DMatrix<f64>,
    pub ire_mixing: DMatrix<f64>,
    pub sigma_m_tilde: Option<f64>,
}

impl ParameterState {
    /// A neutral state: uniform simplexes, zero effects, identity mixing,
    /// `ρ = 0.5` and unit scales.
    pub fn neutral(spec: &ModelSpec, num_respondents: usize) -> Self {
        let d = spec.dims;
        let k = d.variables;
        let has_ire = spec.variant.has_ire();
        Self {
            cutpoints: vec![CutpointBlock::uniform(d.categories); spec.num_cutpoint_blocks()],
            alpha: if spec.include_alpha {
                DMatrix::zeros(d.cells, k)
            } else {
                DMatrix::zeros(0, 0)
            },
            phi: DMatrix::zeros(d.areas, k),
            mixing: DMatrix::identity(k, k),
            rho: vec![0.5; k],
            sigma: if spec.variant == Variant::Indep {
                vec![1.0; k]
            } else {
                Vec::new()
            },
            sigma_m: spec.variant.has_mixing().then_some(1.0),
            ire_phi: if has_ire {
                DMatrix::zeros(num_respondents, k)
            } else {
                DMatrix::zeros(0, 0)
            },
            ire_mixing: if has_ire {
                DMatrix::identity(k, k)
            } else {
                DMatrix::zeros(0, 0)
            },
            sigma_m_tilde: has_ire.then_some(1.0),
        }
    }

    /// Spatial effects `Θ = ΦM` (`M × K`).
    pub fn theta(&self) -> DMatrix<f64> {
        &self.phi * &self.mixing
    }

    /// Individual effects `Ψ = Φ̃M̃` (`n × K`), empty outside `CorrIre`.
    pub fn psi(&self) -> DMatrix<f64> {
        if self.ire_phi.ncols() == 0 {
            DMatrix::zeros(0, 0)
        } else {
            &self.ire_phi * &self.ire_mixing
        }
    }

    /// Between-variable spatial covariance `MᵀM`.
    pub fn sigma_b(&self) -> DMatrix<f64> {
        self.mixing.transpose() * &self.mixing
    }

    /// Individual-level covariance `M̃ᵀM̃`, if present.
    pub fn sigma_tilde_b(&self) -> Option<DMatrix<f64>> {
        (self.ire_mixing.ncols() > 0).then(|| self.ire_mixing.transpose() * &self.ire_mixing)
    }

    /// Checks shapes against the spec and respondent count.
    pub fn check_dimensions(&self, spec: &ModelSpec, num_respondents: usize) -> Result<()> {
        let d = spec.dims;
        let k = d.variables;
        let mismatch = |what: &str| {
            Err(Error::Dimension(format!(
                "state field {what} has the wrong shape"
            )))
        };
        if self.cutpoints.len() != spec.num_cutpoint_blocks()
            || self
                .cutpoints
                .iter()
                .any(|b| b.num_categories() != d.categories)
        {
            return mismatch("cutpoints");
        }
        if spec.include_alpha && self.alpha.shape() != (d.cells, k) {
            return mismatch("alpha");
        }
        if self.phi.shape() != (d.areas, k) {
            return mismatch("phi");
        }
        if self.mixing.shape() != (k, k) {
            return mismatch("mixing");
        }
        if self.rho.len() != k {
            return mismatch("rho");
        }
        if spec.variant == Variant::Indep && self.sigma.len() != k {
            return mismatch("sigma");
        }
        if spec.variant.has_mixing() && self.sigma_m.is_none() {
            return mismatch("sigma_m");
        }
        if spec.variant.has_ire()
            && (self.ire_phi.shape() != (num_respondents, k)
                || self.ire_mixing.shape() != (k, k)
                || self.sigma_m_tilde.is_none())
        {
            return mismatch("ire");
        }
        Ok(())
    }

    /// `Σ_m n_m φ_{mk}` for each latent column.
    pub fn weighted_sums(&self, area_sizes: &[usize]) -> Vec<f64> {
        (0..self.phi.ncols())
            .map(|l| {
                area_sizes
                    .iter()
                    .enumerate()
                    .map(|(m, &n)| n as f64 * self.phi[(m, l)])
                    .sum()
            })
            .collect()
    }

    /// Removes the `n_m`-weighted mean from every column of `Φ` and moves the
    /// induced shift of `Θ` into the cut points, which leaves every linear
    /// predictor `κ + θ` unchanged. A no-op when no area has respondents.
    pub fn center(&mut self, spec: &ModelSpec, area_sizes: &[usize]) -> Result<()> {
        let total: usize = area_sizes.iter().sum();
        if total == 0 {
            return Ok(());
        }
        let means: Vec<f64> = self
            .weighted_sums(area_sizes)
            .into_iter()
            .map(|s| s / total as f64)
            .collect();
        self.shift_latent(spec, &means)
    }

    /// `φ_{·l} -= c_l` for every latent column with compensation
    /// `κ_{·k} += Σ_l c_l M_{lk}`.
    pub fn shift_latent(&mut self, spec: &ModelSpec, shifts: &[f64]) -> Result<()> {
        let k = spec.dims.variables;
        for (l, &c) in shifts.iter().enumerate() {
            if c != 0.0 {
                self.phi.column_mut(l).add_scalar_mut(-c);
            }
        }
        let comp: Vec<f64> = (0..k)
            .map(|kk| (0..k).map(|l| shifts[l] * self.mixing[(l, kk)]).sum())
            .collect();
        for (b, block) in self.cutpoints.iter_mut().enumerate() {
            let (_, var) = spec.block_owner(b);
            if comp[var] != 0.0 {
                *block = block.shifted(comp[var])?;
            }
        }
        Ok(())
    }
}
