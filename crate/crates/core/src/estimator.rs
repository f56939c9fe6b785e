//! Unbiased score-function gradient estimators and the running baseline.
//!
//! For a demand law `D(x)` with density `Pr(xi | x)`,
//!
//! ```text
//! g(x, xi, delta) = grad_x f(x, xi) + (f(x, xi) - delta) * grad_x Pr(xi | x) / Pr(xi | x)
//! ```
//!
//! has mean `grad_x E[f]` for every scalar `delta`. The multi-agent variant
//! replaces the sales part by the exact gradient of `s(x, E[xi])` and scores
//! only the cost through the action probabilities `p(x)`.
//!
//! Batches are split into fixed chunks of [`CHUNK`] draws; each draw uses its
//! own counter-derived stream and the chunk partials are combined with a fixed
//! pairwise tree, so results do not depend on the rayon pool size.

use rayon::prelude::*;

use crate::error::{invalid, numeric, Result};
use crate::model::{MultiAgentModel, ProblemModel};
use crate::rng::IterationStreams;

pub const CHUNK: usize = 64;
const PARALLEL_MIN: usize = 4 * CHUNK;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    /// Mean of the baseline target over the batch: `f` for the general
    /// estimator, `c` for the multi-agent one.
    pub batch_mean_f: f64,
    pub batch_size: usize,
}

/// Single-draw estimator `g(x, xi, delta)`.
pub fn score_gradient<M: ProblemModel + ?Sized>(model: &M, x: &[f64], xi: &[f64], delta: f64) -> Result<Vec<f64>> {
    let f = model.objective(x, xi);
    let score = model.score(x, xi)?;
    if let Some(bad) = score.iter().position(|s| !s.is_finite()) {
        return Err(numeric(format!("score component {bad} is not finite at the given point")));
    }
    let mut g = model.objective_grad_x(x, xi);
    for (gi, si) in g.iter_mut().zip(&score) {
        *gi += (f - delta) * si;
    }
    Ok(g)
}

/// Averages [`score_gradient`] over `batch` fresh draws from `D(x)`.
pub fn minibatch_gradient<M: ProblemModel + ?Sized>(
    model: &M,
    x: &[f64],
    delta: f64,
    batch: usize,
    streams: IterationStreams,
) -> Result<GradientEstimate> {
    if batch == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let n = x.len();
    // layout: [g_0 .. g_{n-1}, f]
    let sums = reduce_batch(batch, n + 1, |l, acc| {
        let mut rng = streams.sample(l as u64);
        let xi = model.sample(x, &mut rng)?;
        let f = model.objective(x, &xi);
        let g = score_gradient(model, x, &xi, delta)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi;
        }
        acc[n] += f;
        Ok(())
    })?;
    let inv = 1.0 / batch as f64;
    Ok(GradientEstimate {
        g: sums[..n].iter().map(|s| s * inv).collect(),
        batch_mean_f: sums[n] * inv,
        batch_size: batch,
    })
}

/// Multi-agent estimator averaged over `batch` draws:
/// `-grad s(x, E[xi]) + dp/dx * mean_l (c(xi_l) - delta) * grad_p phi / phi`.
pub fn specialized_gradient<M: MultiAgentModel + ?Sized>(
    model: &M,
    x: &[f64],
    delta: f64,
    batch: usize,
    streams: IterationStreams,
) -> Result<GradientEstimate> {
    if batch == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let width = model.action_probs(x).len();
    // layout: [w_0 .. w_{P-1}, c]
    let sums = reduce_batch(batch, width + 1, |l, acc| {
        let mut rng = streams.sample(l as u64);
        let xi = model.sample(x, &mut rng)?;
        let c = model.cost(&xi);
        let phi = model.phi_score(x, &xi);
        for (a, p) in acc.iter_mut().zip(&phi) {
            *a += (c - delta) * p;
        }
        acc[width] += c;
        Ok(())
    })?;
    let inv = 1.0 / batch as f64;
    let weights: Vec<f64> = sums[..width].iter().map(|s| s * inv).collect();
    let jac = model.action_prob_jacobian(x);
    let sales = model.sales_grad_at_mean(x);
    let g: Vec<f64> = jac
        .iter()
        .zip(&sales)
        .map(|(row, s)| -s + row.iter().zip(&weights).map(|(j, w)| j * w).sum::<f64>())
        .collect();
    if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
        return Err(numeric(format!("specialized gradient component {bad} is not finite")));
    }
    Ok(GradientEstimate { g, batch_mean_f: sums[width] * inv, batch_size: batch })
}

/// Sums `width`-long per-draw contributions over `count` draws with a
/// chunking and reduction order that is independent of the thread count.
pub(crate) fn reduce_batch<F>(count: usize, width: usize, draw: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let chunk_sum = |c: usize| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; width];
        let end = ((c + 1) * CHUNK).min(count);
        for l in c * CHUNK..end {
            draw(l, &mut acc)?;
        }
        Ok(acc)
    };
    let parts: Vec<Vec<f64>> = if count >= PARALLEL_MIN {
        (0..chunks).into_par_iter().map(chunk_sum).collect::<Result<_>>()?
    } else {
        (0..chunks).map(chunk_sum).collect::<Result<_>>()?
    };
    Ok(pairwise_sum(parts, width))
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Running baseline `delta_k` updated by online gradient descent on
/// `0.5 * (delta - E[f(x_k, xi)])^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineState {
    pub delta: f64,
    /// Index of the most recent update; the initial value has `k = 1`.
    pub k: usize,
}

impl BaselineState {
    pub fn new(delta: f64) -> Self {
        Self { delta, k: 1 }
    }
}

/// `delta' = (1 - zeta) * delta + zeta * v`.
pub fn ogd_update(state: BaselineState, v: f64, zeta_next: f64) -> Result<BaselineState> {
    if !(zeta_next > 0.0 && zeta_next <= 1.0) {
        return Err(invalid(format!("baseline step must lie in (0, 1], got {zeta_next}")));
    }
    Ok(BaselineState { delta: (1.0 - zeta_next) * state.delta + zeta_next * v, k: state.k + 1 })
}
