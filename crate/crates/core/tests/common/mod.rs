#![allow(dead_code)]

use ddprice::apps::{HotLaneModel, HotLaneSpec, MultiproductModel, MultiproductSpec, ScalarMap};
use ddprice::ProblemModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(model: &dyn ProblemModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = model.feasible_box();
    (0..b.dim).map(|_| rng.random_range(b.lower..b.upper)).collect()
}

/// Central differences of `log Pr(xi | .)` at `x`.
pub fn fd_log_density(model: &dyn ProblemModel, x: &[f64], xi: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[k] += h;
            down[k] -= h;
            (model.log_density(&up, xi).unwrap() - model.log_density(&down, xi).unwrap()) / (2.0 * h)
        })
        .collect()
}

pub fn tiny_multiproduct() -> MultiproductModel {
    ddprice::harness::tiny_multiproduct()
}

pub fn tiny_hotlane() -> HotLaneModel {
    ddprice::harness::tiny_hotlane()
}

/// One product, `m` buyers, linear cost `slope * xi`.
pub fn single_product(m: u64, slope: f64, x_max: f64) -> MultiproductModel {
    MultiproductModel::new(MultiproductSpec {
        buyers: m,
        attractiveness: vec![2.0],
        sensitivity: vec![1.0],
        no_buy_weight: 1.0,
        x_min: 0.0,
        x_max,
        costs: vec![ScalarMap::Linear { slope }],
    })
    .unwrap()
}

pub fn hotlane(drivers: &[u64]) -> HotLaneModel {
    HotLaneModel::new(HotLaneSpec::illustrative(drivers)).unwrap()
}

pub fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
