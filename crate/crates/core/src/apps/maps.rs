use serde::{Deserialize, Serialize};

/// Continuous piecewise-linear scalar maps used for costs, flow rates and
/// densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarMap {
    Linear { slope: f64 },
    /// `min(slope * t, cap)`.
    CappedLinear { slope: f64, cap: f64 },
    /// Cost whose marginal rate is `eta1` up to `lower`, `eta2` up to `upper`
    /// and `eta3` beyond.
    ThreePiece { eta1: f64, eta2: f64, eta3: f64, lower: f64, upper: f64 },
}

impl ScalarMap {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ScalarMap::Linear { slope } => slope * t,
            ScalarMap::CappedLinear { slope, cap } => (slope * t).min(cap),
            ScalarMap::ThreePiece { eta1, eta2, eta3, lower, upper } => {
                if t <= lower {
                    eta1 * t
                } else if t <= upper {
                    eta2 * (t - lower) + eta1 * lower
                } else {
                    eta3 * (t - upper) + eta2 * (upper - lower) + eta1 * lower
                }
            }
        }
    }

    /// Points where the slope changes.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            ScalarMap::Linear { .. } => Vec::new(),
            ScalarMap::CappedLinear { slope, cap } => {
                if slope != 0.0 {
                    vec![cap / slope]
                } else {
                    Vec::new()
                }
            }
            ScalarMap::ThreePiece { lower, upper, .. } => vec![lower, upper],
        }
    }

    /// `max |map(t)|` over `[lo, hi]`; exact because the map is piecewise linear.
    pub fn max_abs_on(&self, lo: f64, hi: f64) -> f64 {
        self.kinks()
            .into_iter()
            .filter(|k| *k > lo && *k < hi)
            .chain([lo, hi])
            .map(|t| self.eval(t).abs())
            .fold(0.0, f64::max)
    }

    /// `max map(t)` over `[lo, hi]`.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        self.kinks()
            .into_iter()
            .filter(|k| *k > lo && *k < hi)
            .chain([lo, hi])
            .map(|t| self.eval(t))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
