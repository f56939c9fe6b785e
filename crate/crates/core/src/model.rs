//! Problem abstraction: the feasible box, projection, the gradient mapping,
//! and the contracts every demand model implements.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box `[lower, upper]^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleBox {
    pub lower: f64,
    pub upper: f64,
    pub dim: usize,
}

impl FeasibleBox {
    pub fn new(lower: f64, upper: f64, dim: usize) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(invalid(format!("box bounds must satisfy lower < upper, got [{lower}, {upper}]")));
        }
        if dim == 0 {
            return Err(invalid("box dimension must be at least 1"));
        }
        Ok(Self { lower, upper, dim })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|&v| v >= self.lower && v <= self.upper)
    }

    /// Euclidean projection; for a box this is the coordinatewise clamp.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.iter().map(|&v| v.clamp(self.lower, self.upper)).collect())
    }

    pub(crate) fn project_in_place(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.clamp(self.lower, self.upper);
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!("expected a vector of length {}, got {}", self.dim, x.len())));
        }
        Ok(())
    }

    /// Largest Euclidean norm of a point in the box.
    pub fn max_norm(&self) -> f64 {
        let m = self.lower.abs().max(self.upper.abs());
        m * (self.dim as f64).sqrt()
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn project_box(x: &[f64], feasible: &FeasibleBox) -> Result<Vec<f64>> {
    feasible.project(x)
}

/// `(x - proj(x - eta * g)) / eta`.
pub fn gradient_mapping(x: &[f64], g: &[f64], eta: f64, feasible: &FeasibleBox) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(invalid(format!("gradient mapping needs eta > 0, got {eta}")));
    }
    feasible.check_dim(x)?;
    feasible.check_dim(g)?;
    let stepped: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - eta * gi).collect();
    let p = feasible.project(&stepped)?;
    Ok(x.iter().zip(&p).map(|(xi, pi)| (xi - pi) / eta).collect())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A stochastic program `min_x E_{xi ~ D(x)} f(x, xi)` over a box.
///
/// Implementations must be read-only after construction; sampling is driven
/// entirely by the RNG handed in.
pub trait ProblemModel: Send + Sync {
    fn dim(&self) -> usize {
        self.feasible_box().dim
    }

    fn feasible_box(&self) -> &FeasibleBox;

    /// `f(x, xi) = -s(x, xi) + c(xi)`.
    fn objective(&self, x: &[f64], xi: &[f64]) -> f64;

    fn objective_grad_x(&self, x: &[f64], xi: &[f64]) -> Vec<f64>;

    /// One draw from `D(x)`.
    fn sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    fn sample_batch(&self, x: &[f64], rng: &mut dyn RngCore, count: usize) -> Result<Vec<Vec<f64>>> {
        (0..count).map(|_| self.sample(x, rng)).collect()
    }

    /// `log Pr(xi | x)`, possibly shifted by a constant that does not depend on `x`.
    fn log_density(&self, x: &[f64], xi: &[f64]) -> Result<f64>;

    /// `grad_x Pr(xi | x) / Pr(xi | x)`.
    fn score(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>>;

    /// Upper bound on `|f|` over the box and the support.
    fn f_max(&self) -> f64;

    /// Lipschitz modulus `L_f` of `f` in `x`.
    fn lipschitz_f(&self) -> f64;

    /// Bound `M` on the norm of the score.
    fn score_bound(&self) -> f64;

    fn as_enumerable(&self) -> Option<&dyn EnumerableModel> {
        None
    }
}

/// Models whose demand support is finite and can be listed exhaustively.
pub trait EnumerableModel: ProblemModel {
    /// Number of outcomes, saturating at `u128::MAX`.
    fn support_size(&self) -> u128;

    fn for_each_outcome(&self, visit: &mut dyn FnMut(&[f64]));

    /// Exact probability mass `Pr(xi | x)`.
    fn probability(&self, x: &[f64], xi: &[f64]) -> f64;
}

/// Multi-agent structure: the revenue is linear in demand and the law of the
/// demand is `phi(p(x), xi)` for an action-probability vector `p(x)`.
pub trait MultiAgentModel: ProblemModel {
    /// `p(x)`, of length `P`.
    fn action_probs(&self, x: &[f64]) -> Vec<f64>;

    /// `E[xi]` in the same layout as a demand sample.
    fn mean_demand(&self, x: &[f64]) -> Vec<f64>;

    /// `s(x, xi)`, accepting real-valued demand.
    fn sales(&self, x: &[f64], xi: &[f64]) -> f64;

    /// Total derivative of `x -> s(x, E[xi](x))`.
    fn sales_grad_at_mean(&self, x: &[f64]) -> Vec<f64>;

    /// `c(xi)`, accepting real-valued demand.
    fn cost(&self, xi: &[f64]) -> f64;

    /// `dp/dx` as rows indexed by `x_k`: `jac[k][j] = d p_j / d x_k`.
    fn action_prob_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>>;

    /// `grad_p phi(p(x), xi) / phi(p(x), xi)`, of length `P`.
    fn phi_score(&self, x: &[f64], xi: &[f64]) -> Vec<f64>;

    /// Upper bound on `|c|` over the support.
    fn c_max(&self) -> f64;

    /// `-s(x, E[xi]) + c(E[xi])`.
    fn mean_demand_objective(&self, x: &[f64]) -> f64 {
        let mean = self.mean_demand(x);
        -self.sales(x, &mean) + self.cost(&mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box(dim: usize) -> FeasibleBox {
        FeasibleBox::new(0.0, 10.0, dim).unwrap()
    }

    #[test]
    fn project_clamps_each_coordinate() {
        let b = unit_box(3);
        assert_eq!(project_box(&[-1.0, 5.0, 12.0], &b).unwrap(), vec![0.0, 5.0, 10.0]);
        let b2 = unit_box(2);
        assert_eq!(project_box(&[3.0, 3.0], &b2).unwrap(), vec![3.0, 3.0]);
        let synth = FeasibleBox::new(0.01, 10.0, 1).unwrap();
        assert_eq!(project_box(&[0.009], &synth).unwrap(), vec![0.01]);
    }

    #[test]
    fn project_rejects_dimension_mismatch() {
        assert!(project_box(&[1.0, 2.0], &unit_box(3)).is_err());
    }

    #[test]
    fn box_rejects_bad_bounds() {
        assert!(FeasibleBox::new(1.0, 1.0, 2).is_err());
        assert!(FeasibleBox::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn gradient_mapping_cases() {
        let b = unit_box(2);
        let g = gradient_mapping(&[5.0, 5.0], &[0.3, -0.7], 1.0, &b).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] + 0.7).abs() < 1e-15);

        let b1 = unit_box(1);
        assert_eq!(gradient_mapping(&[0.0], &[1.0], 1.0, &b1).unwrap(), vec![0.0]);
        assert_eq!(gradient_mapping(&[4.0, 2.0], &[0.0, 0.0], 0.5, &b).unwrap(), vec![0.0, 0.0]);
        assert!(gradient_mapping(&[1.0], &[1.0], 0.0, &b1).is_err());
        assert!(gradient_mapping(&[1.0], &[1.0], -1.0, &b1).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(x in prop::collection::vec(-20.0f64..30.0, 4)) {
            let b = unit_box(4);
            let p = b.project(&x).unwrap();
            prop_assert!(b.contains(&p));
            prop_assert_eq!(b.project(&p).unwrap(), p);
        }

        #[test]
        fn projection_is_non_expansive(
            a in prop::collection::vec(-20.0f64..30.0, 3),
            c in prop::collection::vec(-20.0f64..30.0, 3),
        ) {
            let b = unit_box(3);
            let pa = b.project(&a).unwrap();
            let pc = b.project(&c).unwrap();
            let d_proj = norm(&pa.iter().zip(&pc).map(|(u, v)| u - v).collect::<Vec<_>>());
            let d = norm(&a.iter().zip(&c).map(|(u, v)| u - v).collect::<Vec<_>>());
            prop_assert!(d_proj <= d + 1e-12);
        }

        #[test]
        fn mapping_equals_gradient_inside(
            x in prop::collection::vec(2.0f64..8.0, 3),
            g in prop::collection::vec(-1.0f64..1.0, 3),
            eta in 0.01f64..1.0,
        ) {
            let b = unit_box(3);
            let m = gradient_mapping(&x, &g, eta, &b).unwrap();
            for (mi, gi) in m.iter().zip(&g) {
                prop_assert!((mi - gi).abs() < 1e-12);
            }
        }
    }
}
