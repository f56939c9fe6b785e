//! Multiproduct pricing with multinomial-logit choice.
//!
//! Each of `m` buyers picks product `i` with probability
//! `p_i(x) = exp(gamma_i (alpha_i - x_i)) / (a_0 + sum_j exp(gamma_j (alpha_j - x_j)))`
//! or leaves with probability `p_0(x) = a_0 / (...)`. Demand samples are laid
//! out as `[xi_0, xi_1, .., xi_n]` with slot 0 holding the buyers who left.

use rand::RngCore;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use super::maps::ScalarMap;
use crate::error::{invalid, Result};
use crate::model::{EnumerableModel, FeasibleBox, MultiAgentModel, ProblemModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiproductSpec {
    pub buyers: u64,
    pub attractiveness: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub no_buy_weight: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Per-product cost `c_i`, normally [`ScalarMap::ThreePiece`].
    pub costs: Vec<ScalarMap>,
}

impl MultiproductSpec {
    pub fn products(&self) -> usize {
        self.attractiveness.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.products();
        if n == 0 {
            return Err(invalid("multiproduct spec needs at least one product"));
        }
        if self.sensitivity.len() != n || self.costs.len() != n {
            return Err(invalid(format!(
                "multiproduct spec has {n} attractiveness values but {} sensitivities and {} costs",
                self.sensitivity.len(),
                self.costs.len()
            )));
        }
        if let Some(i) = self.sensitivity.iter().position(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(invalid(format!("price sensitivity of product {} must be positive", i + 1)));
        }
        if !(self.no_buy_weight > 0.0) {
            return Err(invalid("no-buy weight must be positive"));
        }
        for (i, c) in self.costs.iter().enumerate() {
            if let ScalarMap::ThreePiece { lower, upper, .. } = *c {
                if !(0.0 <= lower && lower <= upper) {
                    return Err(invalid(format!("cost knots of product {} must satisfy 0 <= l <= u", i + 1)));
                }
            }
        }
        FeasibleBox::new(self.x_min, self.x_max, n)?;
        Ok(())
    }
}

/// Log of the logit utilities `[ln a_0, gamma_i (alpha_i - x_i)]` and their
/// log-sum-exp.
fn utilities(x: &[f64], spec: &MultiproductSpec) -> (Vec<f64>, f64) {
    let mut u = Vec::with_capacity(x.len() + 1);
    u.push(spec.no_buy_weight.ln());
    for ((xi, a), g) in x.iter().zip(&spec.attractiveness).zip(&spec.sensitivity) {
        u.push(g * (a - xi));
    }
    let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + u.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    (u, lse)
}

/// Choice probabilities `[p_0, p_1, .., p_n]`.
pub fn mnl_probs(x: &[f64], spec: &MultiproductSpec) -> Vec<f64> {
    let (u, lse) = utilities(x, spec);
    u.into_iter().map(|v| (v - lse).exp()).collect()
}

fn mnl_log_probs(x: &[f64], spec: &MultiproductSpec) -> Vec<f64> {
    let (u, lse) = utilities(x, spec);
    u.into_iter().map(|v| v - lse).collect()
}

/// Score of the multinomial law: component `k` is `gamma_k (m p_k(x) - xi_k)`.
pub fn mnl_score(x: &[f64], xi: &[f64], spec: &MultiproductSpec) -> Result<Vec<f64>> {
    check_demand(xi, spec)?;
    let p = mnl_probs(x, spec);
    let m = spec.buyers as f64;
    Ok((0..x.len()).map(|k| spec.sensitivity[k] * (m * p[k + 1] - xi[k + 1])).collect())
}

fn check_demand(xi: &[f64], spec: &MultiproductSpec) -> Result<()> {
    if xi.len() != spec.products() + 1 {
        return Err(invalid(format!(
            "demand sample must have {} slots (no-buy first), got {}",
            spec.products() + 1,
            xi.len()
        )));
    }
    let total: f64 = xi.iter().sum();
    if (total - spec.buyers as f64).abs() > 1e-9 {
        return Err(invalid(format!("demand sample sums to {total}, expected {} buyers", spec.buyers)));
    }
    Ok(())
}

/// Multinomial draw by sequential conditional binomials.
pub(crate) fn sample_multinomial(trials: u64, probs: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mut left = trials;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = left as f64;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
        let draw = Binomial::new(left, q).expect("probability clamped to [0, 1]").sample(rng);
        out[i] = draw as f64;
        left -= draw;
        mass -= p;
    }
    out
}

/// The multiproduct pricing problem as a [`ProblemModel`].
#[derive(Clone, Debug)]
pub struct MultiproductModel {
    spec: MultiproductSpec,
    feasible: FeasibleBox,
    c_max: f64,
}

impl MultiproductModel {
    pub fn new(spec: MultiproductSpec) -> Result<Self> {
        spec.validate()?;
        let feasible = FeasibleBox::new(spec.x_min, spec.x_max, spec.products())?;
        let m = spec.buyers as f64;
        let c_max = spec.costs.iter().map(|c| c.max_abs_on(0.0, m)).sum();
        Ok(Self { spec, feasible, c_max })
    }

    pub fn spec(&self) -> &MultiproductSpec {
        &self.spec
    }
}

impl ProblemModel for MultiproductModel {
    fn feasible_box(&self) -> &FeasibleBox {
        &self.feasible
    }

    fn objective(&self, x: &[f64], xi: &[f64]) -> f64 {
        -self.sales(x, xi) + self.cost(xi)
    }

    fn objective_grad_x(&self, _x: &[f64], xi: &[f64]) -> Vec<f64> {
        xi[1..].iter().map(|d| -d).collect()
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(sample_multinomial(self.spec.buyers, &mnl_probs(x, &self.spec), rng))
    }

    fn log_density(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        check_demand(xi, &self.spec)?;
        let lp = mnl_log_probs(x, &self.spec);
        let mut acc = ln_factorial(self.spec.buyers);
        for (d, l) in xi.iter().zip(&lp) {
            if *d > 0.0 {
                acc += d * l - ln_factorial(d.round() as u64);
            }
        }
        Ok(acc)
    }

    fn score(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        mnl_score(x, xi, &self.spec)
    }

    fn f_max(&self) -> f64 {
        let price = self.spec.x_min.abs().max(self.spec.x_max.abs());
        self.spec.buyers as f64 * price + self.c_max
    }

    fn lipschitz_f(&self) -> f64 {
        self.spec.buyers as f64
    }

    fn score_bound(&self) -> f64 {
        let gamma_max = self.spec.sensitivity.iter().cloned().fold(0.0, f64::max);
        self.spec.products() as f64 * self.spec.buyers as f64 * gamma_max
    }

    fn as_enumerable(&self) -> Option<&dyn EnumerableModel> {
        Some(self)
    }
}

impl EnumerableModel for MultiproductModel {
    fn support_size(&self) -> u128 {
        // compositions of m into n + 1 parts: C(m + n, n)
        let n = self.spec.products() as u128;
        let m = self.spec.buyers as u128;
        let mut acc: u128 = 1;
        for i in 1..=n {
            acc = match acc.checked_mul(m + i) {
                Some(v) => v / i,
                None => return u128::MAX,
            };
        }
        acc
    }

    fn for_each_outcome(&self, visit: &mut dyn FnMut(&[f64])) {
        let slots = self.spec.products() + 1;
        let mut buf = vec![0.0; slots];
        compositions(self.spec.buyers, 0, &mut buf, visit);
    }

    fn probability(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.log_density(x, xi).map(f64::exp).unwrap_or(0.0)
    }
}

fn compositions(left: u64, slot: usize, buf: &mut [f64], visit: &mut dyn FnMut(&[f64])) {
    if slot + 1 == buf.len() {
        buf[slot] = left as f64;
        visit(buf);
        return;
    }
    for take in 0..=left {
        buf[slot] = take as f64;
        compositions(left - take, slot + 1, buf, visit);
    }
}

impl MultiAgentModel for MultiproductModel {
    fn action_probs(&self, x: &[f64]) -> Vec<f64> {
        mnl_probs(x, &self.spec)
    }

    fn mean_demand(&self, x: &[f64]) -> Vec<f64> {
        let m = self.spec.buyers as f64;
        mnl_probs(x, &self.spec).into_iter().map(|p| m * p).collect()
    }

    fn sales(&self, x: &[f64], xi: &[f64]) -> f64 {
        x.iter().zip(&xi[1..]).map(|(p, d)| p * d).sum()
    }

    fn sales_grad_at_mean(&self, x: &[f64]) -> Vec<f64> {
        // d/dx_k [m sum_i x_i p_i(x)] = m p_k + m gamma_k p_k (sum_i x_i p_i - x_k)
        let p = mnl_probs(x, &self.spec);
        let m = self.spec.buyers as f64;
        let avg_price: f64 = x.iter().zip(&p[1..]).map(|(a, b)| a * b).sum();
        (0..x.len())
            .map(|k| {
                let pk = p[k + 1];
                m * pk + m * self.spec.sensitivity[k] * pk * (avg_price - x[k])
            })
            .collect()
    }

    fn cost(&self, xi: &[f64]) -> f64 {
        self.spec.costs.iter().zip(&xi[1..]).map(|(c, d)| c.eval(*d)).sum()
    }

    fn action_prob_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let p = mnl_probs(x, &self.spec);
        (0..x.len())
            .map(|k| {
                let g = self.spec.sensitivity[k];
                let pk = p[k + 1];
                p.iter()
                    .enumerate()
                    .map(|(j, pj)| if j == k + 1 { -g * pk * (1.0 - pk) } else { g * pj * pk })
                    .collect()
            })
            .collect()
    }

    fn phi_score(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let p = mnl_probs(x, &self.spec);
        xi.iter().zip(&p).map(|(d, pj)| if *d == 0.0 { 0.0 } else { d / pj }).collect()
    }

    fn c_max(&self) -> f64 {
        self.c_max
    }
}
