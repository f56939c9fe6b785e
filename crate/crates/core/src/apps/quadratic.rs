//! Deterministic separable quadratic `f(x) = 0.5 * sum_i c_i (x_i - t_i)^2`.
//!
//! The demand law is a point mass at `xi = [0]`, so the score is zero and every
//! estimator returns the exact gradient. Used as a test fixture.

use rand::RngCore;

use crate::error::{invalid, Result};
use crate::model::{EnumerableModel, FeasibleBox, ProblemModel};

#[derive(Clone, Debug)]
pub struct QuadraticModel {
    curvature: Vec<f64>,
    target: Vec<f64>,
    feasible: FeasibleBox,
    f_max: f64,
    lipschitz: f64,
}

impl QuadraticModel {
    pub fn new(curvature: Vec<f64>, target: Vec<f64>, feasible: FeasibleBox) -> Result<Self> {
        if curvature.len() != feasible.dim || target.len() != feasible.dim {
            return Err(invalid("curvature and target must match the box dimension"));
        }
        if curvature.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid("curvatures must be positive"));
        }
        let reach: Vec<f64> =
            target.iter().map(|t| (t - feasible.lower).abs().max((t - feasible.upper).abs())).collect();
        let f_max = curvature.iter().zip(&reach).map(|(c, r)| 0.5 * c * r * r).sum();
        // bounds both |grad f| on the box and the curvature, so L_Ef is a valid smoothness constant
        let grad_bound = curvature.iter().zip(&reach).map(|(c, r)| (c * r).powi(2)).sum::<f64>().sqrt();
        let lipschitz = grad_bound.max(curvature.iter().cloned().fold(0.0, f64::max));
        Ok(Self { curvature, target, feasible, f_max, lipschitz })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.curvature)
            .zip(&self.target)
            .map(|((x, c), t)| 0.5 * c * (x - t) * (x - t))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.curvature).zip(&self.target).map(|((x, c), t)| c * (x - t)).collect()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

impl ProblemModel for QuadraticModel {
    fn feasible_box(&self) -> &FeasibleBox {
        &self.feasible
    }

    fn objective(&self, x: &[f64], _xi: &[f64]) -> f64 {
        self.value(x)
    }

    fn objective_grad_x(&self, x: &[f64], _xi: &[f64]) -> Vec<f64> {
        self.gradient(x)
    }

    fn sample(&self, _x: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }

    fn log_density(&self, _x: &[f64], _xi: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn score(&self, x: &[f64], _xi: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }

    fn f_max(&self) -> f64 {
        self.f_max
    }

    fn lipschitz_f(&self) -> f64 {
        self.lipschitz
    }

    fn score_bound(&self) -> f64 {
        0.0
    }

    fn as_enumerable(&self) -> Option<&dyn EnumerableModel> {
        Some(self)
    }
}

impl EnumerableModel for QuadraticModel {
    fn support_size(&self) -> u128 {
        1
    }

    fn for_each_outcome(&self, visit: &mut dyn FnMut(&[f64])) {
        visit(&[0.0]);
    }

    fn probability(&self, _x: &[f64], _xi: &[f64]) -> f64 {
        1.0
    }
}
