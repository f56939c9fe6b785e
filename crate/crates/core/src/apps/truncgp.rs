//! Pricing with demand predicted by a truncated Gaussian process.
//!
//! Item `i` has demand `xi_i` drawn from a normal with mean
//! `mu_i(x) = v_i(x)' a_i` and variance `h_i(x) = max(sigma_i^2 - v_i(x)' A_i v_i(x), floor)`,
//! truncated to `[0, cap_i]`, where `v_ij(x) = theta1_i exp(-|x - x_j|^2 / theta2_i)`
//! over shared training inputs `x_j`. Items are independent given `x`.
//!
//! The truncation mass is evaluated in closed form through the normal CDF.
//! Where the variance floor is active the variance is constant in `x`, so every
//! score term that involves its derivative vanishes there.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::maps::ScalarMap;
use super::normal;
use crate::error::{invalid, numeric, Result};
use crate::model::{FeasibleBox, ProblemModel};

/// Smallest admissible truncation mass before the model reports a numeric
/// domain error.
pub const MIN_MASS: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncGpItem {
    pub theta1: f64,
    pub theta2: f64,
    pub posterior_mean: Vec<f64>,
    /// Row-major `N x N`.
    pub posterior_matrix: Vec<Vec<f64>>,
    pub prior_scale: f64,
    pub demand_cap: f64,
    pub cost: ScalarMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncGpSpec {
    /// Training price vectors, each of length `n`.
    pub inputs: Vec<Vec<f64>>,
    pub items: Vec<TruncGpItem>,
    pub variance_floor: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl TruncGpSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.items.len();
        let big_n = self.inputs.len();
        if n == 0 || big_n == 0 {
            return Err(invalid("truncated-GP spec needs at least one item and one training point"));
        }
        if self.inputs.iter().any(|p| p.len() != n) {
            return Err(invalid(format!("every training input must have length {n}")));
        }
        if !(self.variance_floor > 0.0) {
            return Err(invalid("variance floor must be positive"));
        }
        for (i, it) in self.items.iter().enumerate() {
            if !(it.theta1 > 0.0 && it.theta2 > 0.0) {
                return Err(invalid(format!("kernel constants of item {i} must be positive")));
            }
            if it.posterior_mean.len() != big_n
                || it.posterior_matrix.len() != big_n
                || it.posterior_matrix.iter().any(|r| r.len() != big_n)
            {
                return Err(invalid(format!("posterior shapes of item {i} must match {big_n} training points")));
            }
            if !(it.demand_cap > 0.0) {
                return Err(invalid(format!("demand cap of item {i} must be positive")));
            }
        }
        FeasibleBox::new(self.x_min, self.x_max, n)?;
        Ok(())
    }
}

/// GP posterior precomputation: with `K_jl = theta1 exp(-|x_j - x_l|^2 / theta2)`,
/// returns `a = (K + noise I)^-1 y` and `A = (K + noise I)^-1`, so that the
/// posterior mean is `v(x)' a` and the posterior variance `sigma^2 - v(x)' A v(x)`.
pub fn gp_fit(inputs: &[Vec<f64>], outputs: &[f64], theta1: f64, theta2: f64, noise: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let big_n = inputs.len();
    if big_n == 0 || outputs.len() != big_n {
        return Err(invalid("gp_fit needs matching, nonempty inputs and outputs"));
    }
    let k = DMatrix::from_fn(big_n, big_n, |j, l| {
        let d2: f64 = inputs[j].iter().zip(&inputs[l]).map(|(a, b)| (a - b) * (a - b)).sum();
        theta1 * (-d2 / theta2).exp() + if j == l { noise } else { 0.0 }
    });
    let chol = k.cholesky().ok_or_else(|| numeric("GP kernel matrix is not positive definite"))?;
    let inv = chol.inverse();
    let a = &inv * DVector::from_column_slice(outputs);
    let matrix = (0..big_n).map(|j| (0..big_n).map(|l| inv[(j, l)]).collect()).collect();
    Ok((a.iter().copied().collect(), matrix))
}

/// Per-item predictive quantities at one price vector.
#[derive(Clone, Debug)]
pub struct ItemMoments {
    pub mean: f64,
    pub variance: f64,
    pub floor_active: bool,
    /// `d mean / d x_k`.
    pub d_mean: Vec<f64>,
    /// `d variance / d x_k` (zero where the floor is active).
    pub d_variance: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TruncGpModel {
    spec: TruncGpSpec,
    feasible: FeasibleBox,
    f_max: f64,
    score_bound: f64,
}

impl TruncGpModel {
    pub fn new(spec: TruncGpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.items.len();
        let feasible = FeasibleBox::new(spec.x_min, spec.x_max, n)?;
        let price = spec.x_min.abs().max(spec.x_max.abs());
        let f_max = spec
            .items
            .iter()
            .map(|it| price * it.demand_cap + it.cost.max_abs_on(0.0, it.demand_cap))
            .sum();
        let score_bound = Self::prop_bound(&spec);
        Ok(Self { spec, feasible, f_max, score_bound })
    }

    /// Closed-form score bound built from kernel, posterior and support
    /// constants. The price range is widened to cover training inputs that lie
    /// outside the box.
    fn prop_bound(spec: &TruncGpSpec) -> f64 {
        let n = spec.items.len() as f64;
        let big_n = spec.inputs.len() as f64;
        let t1 = spec.items.iter().map(|i| i.theta1).fold(0.0, f64::max);
        let t2 = spec.items.iter().map(|i| i.theta2).fold(f64::INFINITY, f64::min);
        let a = spec.items.iter().flat_map(|i| i.posterior_mean.iter()).map(|v| v.abs()).fold(0.0, f64::max);
        let big_a = spec
            .items
            .iter()
            .flat_map(|i| i.posterior_matrix.iter().flatten())
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        let cap = spec.items.iter().map(|i| i.demand_cap).fold(0.0, f64::max);
        let lo = spec.inputs.iter().flatten().cloned().fold(spec.x_min, f64::min);
        let hi = spec.inputs.iter().flatten().cloned().fold(spec.x_max, f64::max);
        let range = hi - lo;
        let delta = spec.variance_floor;
        let spread = cap + big_n * t1 * a;
        4.0 * n * n * big_n * t1 * range / (delta * t2)
            * (big_n * big_a * t1 + spread * (a + big_n * big_a * t1 * spread / delta))
    }

    pub fn spec(&self) -> &TruncGpSpec {
        &self.spec
    }

    pub fn moments(&self, item: usize, x: &[f64]) -> ItemMoments {
        let it = &self.spec.items[item];
        let n = x.len();
        let big_n = self.spec.inputs.len();
        let mut v = vec![0.0; big_n];
        let mut dv = vec![vec![0.0; n]; big_n]; // dv[j][k]
        for (j, xj) in self.spec.inputs.iter().enumerate() {
            let d2: f64 = x.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            v[j] = it.theta1 * (-d2 / it.theta2).exp();
            for k in 0..n {
                dv[j][k] = -2.0 * (x[k] - xj[k]) / it.theta2 * v[j];
            }
        }
        let mean: f64 = v.iter().zip(&it.posterior_mean).map(|(a, b)| a * b).sum();
        let d_mean: Vec<f64> = (0..n).map(|k| (0..big_n).map(|j| dv[j][k] * it.posterior_mean[j]).sum()).collect();
        // (A + A') v
        let sym_v: Vec<f64> = (0..big_n)
            .map(|s| (0..big_n).map(|t| (it.posterior_matrix[s][t] + it.posterior_matrix[t][s]) * v[t]).sum())
            .collect();
        let quad: f64 = (0..big_n).map(|s| v[s] * (0..big_n).map(|t| it.posterior_matrix[s][t] * v[t]).sum::<f64>()).sum();
        let raw = it.prior_scale * it.prior_scale - quad;
        let floor_active = raw < self.spec.variance_floor;
        let variance = if floor_active { self.spec.variance_floor } else { raw };
        let d_variance = if floor_active {
            vec![0.0; n]
        } else {
            (0..n).map(|k| -(0..big_n).map(|s| dv[s][k] * sym_v[s]).sum::<f64>()).collect()
        };
        ItemMoments { mean, variance, floor_active, d_mean, d_variance }
    }

    /// Truncation mass `C_i(x)`; errors when it underflows.
    pub fn truncation_mass(&self, item: usize, m: &ItemMoments) -> Result<f64> {
        let sd = m.variance.sqrt();
        let cap = self.spec.items[item].demand_cap;
        let c = normal::interval_mass(-m.mean / sd, (cap - m.mean) / sd);
        if !(c >= MIN_MASS) {
            return Err(numeric(format!(
                "truncation mass of item {item} is {c:e}: predicted mean {:.4} with sd {:.4} lies far outside [0, {cap}]",
                m.mean, sd
            )));
        }
        Ok(c)
    }

    /// Density of item `item`'s demand at `t`.
    pub fn item_density(&self, item: usize, x: &[f64], t: f64) -> Result<f64> {
        let m = self.moments(item, x);
        let c = self.truncation_mass(item, &m)?;
        let cap = self.spec.items[item].demand_cap;
        if !(0.0..=cap).contains(&t) {
            return Ok(0.0);
        }
        let sd = m.variance.sqrt();
        Ok(normal::pdf((t - m.mean) / sd) / (sd * c))
    }

    /// CDF of item `item`'s demand at `t`.
    pub fn item_cdf(&self, item: usize, x: &[f64], t: f64) -> Result<f64> {
        let m = self.moments(item, x);
        let c = self.truncation_mass(item, &m)?;
        let cap = self.spec.items[item].demand_cap;
        let sd = m.variance.sqrt();
        let t = t.clamp(0.0, cap);
        Ok((normal::interval_mass(-m.mean / sd, (t - m.mean) / sd) / c).clamp(0.0, 1.0))
    }

    fn check_demand(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.spec.items.len() {
            return Err(invalid(format!("demand sample must have {} entries, got {}", self.spec.items.len(), xi.len())));
        }
        for (i, (d, it)) in xi.iter().zip(&self.spec.items).enumerate() {
            if !(0.0..=it.demand_cap).contains(d) {
                return Err(invalid(format!("demand {d} of item {i} outside [0, {}]", it.demand_cap)));
            }
        }
        Ok(())
    }
}

impl ProblemModel for TruncGpModel {
    fn feasible_box(&self) -> &FeasibleBox {
        &self.feasible
    }

    fn objective(&self, x: &[f64], xi: &[f64]) -> f64 {
        let sales: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
        let cost: f64 = self.spec.items.iter().zip(xi).map(|(it, d)| it.cost.eval(*d)).sum();
        cost - sales
    }

    fn objective_grad_x(&self, _x: &[f64], xi: &[f64]) -> Vec<f64> {
        xi.iter().map(|d| -d).collect()
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        (0..self.spec.items.len())
            .map(|i| {
                let m = self.moments(i, x);
                self.truncation_mass(i, &m)?;
                let sd = m.variance.sqrt();
                let cap = self.spec.items[i].demand_cap;
                let z = normal::sample_truncated(-m.mean / sd, (cap - m.mean) / sd, rng);
                Ok((m.mean + sd * z).clamp(0.0, cap))
            })
            .collect()
    }

    fn log_density(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.check_demand(xi)?;
        let mut acc = 0.0;
        for (i, d) in xi.iter().enumerate() {
            let m = self.moments(i, x);
            let c = self.truncation_mass(i, &m)?;
            let r = d - m.mean;
            acc += -c.ln() - 0.5 * (2.0 * std::f64::consts::PI * m.variance).ln() - r * r / (2.0 * m.variance);
        }
        Ok(acc)
    }

    fn score(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        self.check_demand(xi)?;
        let n = x.len();
        let mut out = vec![0.0; n];
        for (i, d) in xi.iter().enumerate() {
            let m = self.moments(i, x);
            let c = self.truncation_mass(i, &m)?;
            let h = m.variance;
            let sd = h.sqrt();
            let cap = self.spec.items[i].demand_cap;
            let lo = -m.mean / sd;
            let hi = (cap - m.mean) / sd;
            let (pdf_lo, pdf_hi) = (normal::pdf(lo), normal::pdf(hi));
            let r = d - m.mean;
            for k in 0..n {
                let (dmu, dh) = (m.d_mean[k], m.d_variance[k]);
                // z = (bound - mu) / sqrt(h)
                let dlo = -dmu / sd - (-m.mean) * dh / (2.0 * h * sd);
                let dhi = -dmu / sd - (cap - m.mean) * dh / (2.0 * h * sd);
                let dc = pdf_hi * dhi - pdf_lo * dlo;
                let dg = r * dmu / h + r * r * dh / (2.0 * h * h);
                out[k] += -dc / c - 0.5 * dh / h + dg;
            }
        }
        Ok(out)
    }

    fn f_max(&self) -> f64 {
        self.f_max
    }

    fn lipschitz_f(&self) -> f64 {
        let cap = self.spec.items.iter().map(|i| i.demand_cap).fold(0.0, f64::max);
        self.spec.items.len() as f64 * cap
    }

    fn score_bound(&self) -> f64 {
        self.score_bound
    }
}

/// Small reproducible instance fitted to synthetic observations: demand falls
/// linearly in the own price and rises with the other items' prices.
pub fn illustrative_spec(items: usize, points: usize, seed: u64) -> Result<TruncGpSpec> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (x_min, x_max) = (0.5, 3.0);
    let inputs: Vec<Vec<f64>> =
        (0..points).map(|_| (0..items).map(|_| rng.random_range(x_min..x_max)).collect()).collect();
    let theta1 = 4.0;
    let theta2 = 2.0;
    let noise = 0.5;
    let mut out = Vec::with_capacity(items);
    for i in 0..items {
        let y: Vec<f64> = inputs
            .iter()
            .map(|p| {
                let others: f64 = p.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
                (6.0 - 1.5 * p[i] + 0.3 * others + rng.random_range(-0.3..0.3)).max(0.0)
            })
            .collect();
        let (a, big_a) = gp_fit(&inputs, &y, theta1, theta2, noise)?;
        out.push(TruncGpItem {
            theta1,
            theta2,
            posterior_mean: a,
            posterior_matrix: big_a,
            prior_scale: (theta1 + noise).sqrt(),
            demand_cap: 10.0,
            cost: ScalarMap::Linear { slope: 0.4 },
        });
    }
    Ok(TruncGpSpec { inputs, items: out, variance_floor: 0.2, x_min, x_max })
}
