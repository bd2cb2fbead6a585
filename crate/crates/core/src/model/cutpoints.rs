//! Cut points of the cumulative-logit link and the category probabilities
//! they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Logistic function `1 / (1 + e^{-x})`.
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log σ(x)`.
pub(crate) fn log_inv_logit(x: f64) -> f64 {
    -softplus(-x)
}

fn check_simplex(delta: &[f64]) -> Result<()> {
    if delta.len() < 2 {
        return Err(Error::Domain(format!(
            "simplex must have at least 2 components, got {}",
            delta.len()
        )));
    }
    if delta.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::Domain("simplex components must be positive".into()));
    }
    let sum: f64 = delta.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("simplex sums to {sum}, not 1")));
    }
    Ok(())
}

/// `κ_j = logit(δ_1 + … + δ_j)` for `j < J`.
///
/// The logit is evaluated as `log(head) − log(tail)` with the tail summed
/// directly, so small trailing components keep full precision.
pub fn cutpoints_from_simplex(delta: &[f64]) -> Result<Vec<f64>> {
    check_simplex(delta)?;
    Ok(kappa_unchecked(delta))
}

fn kappa_unchecked(delta: &[f64]) -> Vec<f64> {
    let j = delta.len();
    let mut tails = vec![0.0; j + 1];
    for r in (0..j).rev() {
        tails[r] = tails[r + 1] + delta[r];
    }
    let mut head = 0.0;
    (0..j - 1)
        .map(|r| {
            head += delta[r];
            head.ln() - tails[r + 1].ln()
        })
        .collect()
}

/// Category probabilities `π_j = γ_j − γ_{j−1}` with `γ_j = σ(κ_j + η)`.
pub fn category_probs(eta: f64, cutpoints: &[f64]) -> Result<Vec<f64>> {
    check_increasing(cutpoints)?;
    Ok(category_probs_unchecked(eta, cutpoints))
}

pub(crate) fn check_increasing(cutpoints: &[f64]) -> Result<()> {
    if cutpoints.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("cut points must be finite".into()));
    }
    if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain(
            "cut points must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub(crate) fn category_probs_unchecked(eta: f64, cutpoints: &[f64]) -> Vec<f64> {
    let j = cutpoints.len() + 1;
    let mut probs = Vec::with_capacity(j);
    let mut prev = 0.0;
    for &k in cutpoints {
        let g = inv_logit(k + eta);
        probs.push(g - prev);
        prev = g;
    }
    // upper tail via σ(−x) rather than 1 − σ(x)
    probs.push(inv_logit(-(cutpoints[j - 2] + eta)));
    probs
}

/// `log π_y` for 0-based category `y`, evaluated stably for any `η`.
pub fn log_category_prob(eta: f64, cutpoints: &[f64], y: usize) -> f64 {
    let last = cutpoints.len();
    if y == 0 {
        log_inv_logit(cutpoints[0] + eta)
    } else if y == last {
        log_inv_logit(-(cutpoints[last - 1] + eta))
    } else {
        // σ(a) − σ(b) = e^b (e^{a−b} − 1) / ((1 + e^a)(1 + e^b))
        let a = cutpoints[y] + eta;
        let b = cutpoints[y - 1] + eta;
        b + (a - b).exp_m1().ln() - softplus(a) - softplus(b)
    }
}

/// One cut-point vector together with the simplex it is derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutpointBlock {
    simplex: Vec<f64>,
    cutpoints: Vec<f64>,
}

impl CutpointBlock {
    pub fn from_simplex(delta: Vec<f64>) -> Result<Self> {
        let cutpoints = cutpoints_from_simplex(&delta)?;
        Ok(Self {
            simplex: delta,
            cutpoints,
        })
    }

    pub fn uniform(num_categories: usize) -> Self {
        Self::from_simplex(vec![1.0 / num_categories as f64; num_categories])
            .expect("uniform simplex is valid")
    }

    /// Inverts `κ = logit(cumsum δ)`.
    pub fn from_cutpoints(kappa: Vec<f64>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::Domain("need at least one cut point".into()));
        }
        check_increasing(&kappa)?;
        let simplex = category_probs_unchecked(0.0, &kappa);
        if simplex.iter().any(|&d| d <= 0.0) {
            return Err(Error::Domain(
                "cut points too close to resolve a simplex".into(),
            ));
        }
        Ok(Self {
            simplex,
            cutpoints: kappa,
        })
    }

    /// Reassembles a block from stored values, checking only support.
    pub fn from_parts(simplex: Vec<f64>, cutpoints: Vec<f64>) -> Result<Self> {
        let block = Self { simplex, cutpoints };
        if block.cutpoints.len() + 1 != block.simplex.len() || !block.in_support() {
            return Err(Error::Domain(
                "stored simplex and cut points are inconsistent".into(),
            ));
        }
        Ok(block)
    }

    /// Additive log-ratio coordinates `u_j = log(δ_j / δ_J)`.
    pub fn from_log_ratios(u: &[f64]) -> Result<Self> {
        let max = u.iter().copied().fold(0.0f64, f64::max);
        let mut w: Vec<f64> = u.iter().map(|x| (x - max).exp()).collect();
        w.push((-max).exp());
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        if w.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Domain(
                "log-ratio coordinates underflow the simplex".into(),
            ));
        }
        let cutpoints = kappa_unchecked(&w);
        check_increasing(&cutpoints)?;
        Ok(Self {
            simplex: w,
            cutpoints,
        })
    }

    pub fn log_ratios(&self) -> Vec<f64> {
        let last = self.simplex[self.simplex.len() - 1].ln();
        self.simplex[..self.simplex.len() - 1]
            .iter()
            .map(|d| d.ln() - last)
            .collect()
    }

    /// `log |∂δ_{1..J−1} / ∂u| = Σ_j log δ_j`.
    pub fn log_ratio_jacobian(&self) -> f64 {
        self.simplex.iter().map(|d| d.ln()).sum()
    }

    /// `log |∂δ_{1..J−1} / ∂κ| = Σ_j log γ_j(1 − γ_j)`.
    pub fn cutpoint_jacobian(&self) -> f64 {
        self.cutpoints
            .iter()
            .map(|&k| log_inv_logit(k) + log_inv_logit(-k))
            .sum()
    }

    /// Adds `shift` to every cut point.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::from_cutpoints(self.cutpoints.iter().map(|k| k + shift).collect())
    }

    pub fn simplex(&self) -> &[f64] {
        &self.simplex
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn num_categories(&self) -> usize {
        self.simplex.len()
    }

    pub fn in_support(&self) -> bool {
        check_simplex(&self.simplex).is_ok() && check_increasing(&self.cutpoints).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn quartile_cutpoints() {
        let k = cutpoints_from_simplex(&[0.25; 4]).unwrap();
        assert!((k[0] + 1.0986122886681098).abs() < 1e-15);
        assert!(k[1].abs() < 1e-15);
        assert!((k[2] - 1.0986122886681098).abs() < 1e-15);
        assert_eq!(cutpoints_from_simplex(&[0.5, 0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn uneven_simplex() {
        // logit(0.1) = −ln 9, logit(0.3) = ln(3/7), logit(0.6) = ln 1.5
        let k = cutpoints_from_simplex(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let want = [-(9.0f64).ln(), (3.0f64 / 7.0).ln(), (1.5f64).ln()];
        for (a, b) in k.iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            assert!((a - logit(b.exp() / (1.0 + b.exp()))).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_simplex() {
        assert!(cutpoints_from_simplex(&[0.5, 0.6]).is_err());
        assert!(cutpoints_from_simplex(&[1.0, 0.0]).is_err());
        assert!(cutpoints_from_simplex(&[1.0]).is_err());
    }

    #[test]
    fn uniform_probs_at_zero_offset() {
        let k = cutpoints_from_simplex(&[0.25; 4]).unwrap();
        for p in category_probs(0.0, &k).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn saturation() {
        let k = cutpoints_from_simplex(&[0.25; 4]).unwrap();
        let hi = category_probs(60.0, &k).unwrap();
        assert!((hi[0] - 1.0).abs() < 1e-12 && hi[3] < 1e-12);
        let lo = category_probs(-60.0, &k).unwrap();
        assert!((lo[3] - 1.0).abs() < 1e-12 && lo[0] < 1e-12);
    }

    #[test]
    fn binary_probs() {
        let p = category_probs(1.0, &[0.0]).unwrap();
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - s).abs() < 1e-15);
        assert!((p[0] - 0.731059).abs() < 1e-6);
        assert!((p[1] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn rejects_unordered_cutpoints() {
        assert!(category_probs(0.0, &[1.0, 0.0]).is_err());
        assert!(category_probs(0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn log_prob_matches_direct() {
        let k = [-1.3, 0.2, 2.5];
        for eta in [-3.0, -0.4, 0.0, 1.7, 4.0] {
            let p = category_probs(eta, &k).unwrap();
            for (y, py) in p.iter().enumerate() {
                assert!((log_category_prob(eta, &k, y) - py.ln()).abs() < 1e-12);
            }
        }
        // far tails stay finite
        assert!(log_category_prob(-800.0, &k, 0).is_finite());
        assert!(log_category_prob(800.0, &k, 3).is_finite());
        assert!(log_category_prob(800.0, &k, 1).is_finite());
    }

    #[test]
    fn block_roundtrips() {
        let b = CutpointBlock::from_simplex(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let c = CutpointBlock::from_cutpoints(b.cutpoints().to_vec()).unwrap();
        let d = CutpointBlock::from_log_ratios(&b.log_ratios()).unwrap();
        for i in 0..4 {
            assert!((b.simplex()[i] - c.simplex()[i]).abs() < 1e-14);
            assert!((b.simplex()[i] - d.simplex()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn shifted_moves_every_cutpoint() {
        let b = CutpointBlock::uniform(4);
        let s = b.shifted(0.7).unwrap();
        for (x, y) in b.cutpoints().iter().zip(s.cutpoints()) {
            assert!((y - x - 0.7).abs() < 1e-12);
        }
        assert!(s.in_support());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn probabilities_sum_to_one(
            eta in -30.0f64..30.0,
            raw in prop::collection::vec(0.01f64..5.0, 1..8),
            start in -10.0f64..10.0,
        ) {
            let mut acc = start;
            let k: Vec<f64> = raw.iter().map(|g| { acc += g; acc }).collect();
            let p = category_probs(eta, &k).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
