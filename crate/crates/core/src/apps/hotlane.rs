//! Congestion pricing for a high-occupancy/toll lane.
//!
//! In interval `i`, each of `d_i` drivers switches to the toll lane with
//! probability `p_i(x_i) = 1 / (1 + exp(alpha_i h_i + beta_i x_i + gamma_i))`.
//! The welfare is total bottleneck flow minus a penalty for switching-point
//! density above the critical level; the objective is its negation so that
//! minimizing `f` maximizes welfare.

use rand::RngCore;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::maps::ScalarMap;
use crate::error::{invalid, Result};
use crate::model::{EnumerableModel, FeasibleBox, MultiAgentModel, ProblemModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotLaneInterval {
    pub drivers: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Average time saving on the toll lane.
    pub savings: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotLaneSpec {
    pub intervals: Vec<HotLaneInterval>,
    pub hot_flow: ScalarMap,
    pub regular_flow: ScalarMap,
    pub density: ScalarMap,
    pub critical_density: f64,
    pub penalty: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl HotLaneSpec {
    /// Illustrative instance: capped-linear flows and a linear density. These
    /// functional forms are placeholders, not calibrated traffic data.
    pub fn illustrative(drivers: &[u64]) -> Self {
        let intervals = drivers
            .iter()
            .enumerate()
            .map(|(i, &d)| HotLaneInterval {
                drivers: d,
                alpha: -0.5,
                beta: 0.8 + 0.1 * i as f64,
                gamma: -1.0,
                savings: 2.0 + 0.5 * i as f64,
            })
            .collect();
        let cap = drivers.iter().copied().max().unwrap_or(1) as f64;
        Self {
            intervals,
            hot_flow: ScalarMap::CappedLinear { slope: 1.0, cap: 0.6 * cap },
            regular_flow: ScalarMap::CappedLinear { slope: 1.0, cap: 0.8 * cap },
            density: ScalarMap::Linear { slope: 0.5 },
            critical_density: 0.3 * cap,
            penalty: 2.0,
            x_min: 0.0,
            x_max: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(invalid("hot-lane spec needs at least one interval"));
        }
        if !(self.penalty >= 0.0) {
            return Err(invalid("penalty weight must be nonnegative"));
        }
        FeasibleBox::new(self.x_min, self.x_max, self.intervals.len())?;
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
pub struct HotLaneModel {
    spec: HotLaneSpec,
    feasible: FeasibleBox,
    c_max: f64,
}

impl HotLaneModel {
    pub fn new(spec: HotLaneSpec) -> Result<Self> {
        spec.validate()?;
        let feasible = FeasibleBox::new(spec.x_min, spec.x_max, spec.intervals.len())?;
        let n = spec.intervals.len() as f64;
        let mut flow = 0.0;
        let mut density = 0.0;
        for iv in &spec.intervals {
            let d = iv.drivers as f64;
            flow += (0..=iv.drivers)
                .map(|s| {
                    let s = s as f64;
                    spec.hot_flow.eval(s).abs() + spec.regular_flow.eval(d - s).abs()
                })
                .fold(0.0, f64::max);
            density += spec.density.max_on(0.0, d) / n;
        }
        let c_max = flow + spec.penalty * (density - spec.critical_density).max(0.0);
        Ok(Self { spec, feasible, c_max })
    }

    pub fn spec(&self) -> &HotLaneSpec {
        &self.spec
    }

    fn exponent(&self, k: usize, x: f64) -> f64 {
        let iv = &self.spec.intervals[k];
        iv.alpha * iv.savings + iv.beta * x + iv.gamma
    }

    /// Switching probability of interval `k`.
    pub fn switch_prob(&self, k: usize, x: f64) -> f64 {
        let z = self.exponent(k, x);
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    fn check_demand(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.spec.intervals.len() {
            return Err(invalid(format!(
                "demand sample must have {} entries, got {}",
                self.spec.intervals.len(),
                xi.len()
            )));
        }
        for (k, (s, iv)) in xi.iter().zip(&self.spec.intervals).enumerate() {
            if *s < 0.0 || *s > iv.drivers as f64 {
                return Err(invalid(format!("switchers in interval {k} outside 0..={}", iv.drivers)));
            }
        }
        Ok(())
    }

    /// Welfare: flows plus the (nonpositive) density penalty.
    pub fn welfare(&self, xi: &[f64]) -> f64 {
        let spec = &self.spec;
        let n = spec.intervals.len() as f64;
        let mut flow = 0.0;
        let mut density = 0.0;
        for (s, iv) in xi.iter().zip(&spec.intervals) {
            flow += spec.hot_flow.eval(*s) + spec.regular_flow.eval(iv.drivers as f64 - s);
            density += spec.density.eval(*s);
        }
        flow + spec.penalty * (spec.critical_density - density / n).min(0.0)
    }
}

impl ProblemModel for HotLaneModel {
    fn feasible_box(&self) -> &FeasibleBox {
        &self.feasible
    }

    fn objective(&self, _x: &[f64], xi: &[f64]) -> f64 {
        -self.welfare(xi)
    }

    fn objective_grad_x(&self, x: &[f64], _xi: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(self
            .spec
            .intervals
            .iter()
            .enumerate()
            .map(|(k, iv)| {
                let p = self.switch_prob(k, x[k]);
                Binomial::new(iv.drivers, p).expect("logistic probability in [0, 1]").sample(rng) as f64
            })
            .collect())
    }

    fn log_density(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.check_demand(xi)?;
        Ok(self
            .spec
            .intervals
            .iter()
            .enumerate()
            .map(|(k, iv)| {
                let z = self.exponent(k, x[k]);
                let s = xi[k];
                let d = iv.drivers as f64;
                // ln p = -softplus(z), ln(1 - p) = -softplus(-z)
                ln_binomial(iv.drivers, s.round() as u64) - s * softplus(z) - (d - s) * softplus(-z)
            })
            .sum())
    }

    fn score(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        self.check_demand(xi)?;
        Ok(self
            .spec
            .intervals
            .iter()
            .enumerate()
            .map(|(k, iv)| iv.beta * (iv.drivers as f64 * self.switch_prob(k, x[k]) - xi[k]))
            .collect())
    }

    fn f_max(&self) -> f64 {
        self.c_max
    }

    fn lipschitz_f(&self) -> f64 {
        0.0
    }

    fn score_bound(&self) -> f64 {
        let worst = self.spec.intervals.iter().map(|iv| iv.beta.abs() * iv.drivers as f64).fold(0.0, f64::max);
        self.spec.intervals.len() as f64 * worst
    }

    fn as_enumerable(&self) -> Option<&dyn EnumerableModel> {
        Some(self)
    }
}

impl EnumerableModel for HotLaneModel {
    fn support_size(&self) -> u128 {
        self.spec
            .intervals
            .iter()
            .try_fold(1u128, |acc, iv| acc.checked_mul(iv.drivers as u128 + 1))
            .unwrap_or(u128::MAX)
    }

    fn for_each_outcome(&self, visit: &mut dyn FnMut(&[f64])) {
        let caps: Vec<u64> = self.spec.intervals.iter().map(|iv| iv.drivers).collect();
        let mut buf = vec![0.0; caps.len()];
        loop {
            visit(&buf);
            let mut k = 0;
            loop {
                if k == caps.len() {
                    return;
                }
                if (buf[k] as u64) < caps[k] {
                    buf[k] += 1.0;
                    break;
                }
                buf[k] = 0.0;
                k += 1;
            }
        }
    }

    fn probability(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.log_density(x, xi).map(f64::exp).unwrap_or(0.0)
    }
}

impl MultiAgentModel for HotLaneModel {
    fn action_probs(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|k| self.switch_prob(k, x[k])).collect()
    }

    fn mean_demand(&self, x: &[f64]) -> Vec<f64> {
        self.spec
            .intervals
            .iter()
            .enumerate()
            .map(|(k, iv)| iv.drivers as f64 * self.switch_prob(k, x[k]))
            .collect()
    }

    fn sales(&self, _x: &[f64], _xi: &[f64]) -> f64 {
        0.0
    }

    fn sales_grad_at_mean(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn cost(&self, xi: &[f64]) -> f64 {
        -self.welfare(xi)
    }

    fn action_prob_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let p = self.switch_prob(k, x[k]);
                let mut row = vec![0.0; n];
                row[k] = -self.spec.intervals[k].beta * p * (1.0 - p);
                row
            })
            .collect()
    }

    fn phi_score(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        self.spec
            .intervals
            .iter()
            .enumerate()
            .map(|(k, iv)| {
                let p = self.switch_prob(k, x[k]);
                let s = xi[k];
                let rest = iv.drivers as f64 - s;
                let up = if s == 0.0 { 0.0 } else { s / p };
                let down = if rest == 0.0 { 0.0 } else { rest / (1.0 - p) };
                up - down
            })
            .collect()
    }

    fn c_max(&self) -> f64 {
        self.c_max
    }
}
