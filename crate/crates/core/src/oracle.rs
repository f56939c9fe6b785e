//! Brute-force references: exact expectations over finite supports, central
//! differences, quadrature for the truncated-GP model, and Monte Carlo
//! unbiasedness checks against an exact target.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::apps::normal;
use crate::apps::truncgp::TruncGpModel;
use crate::error::{invalid, numeric, Error, Result};
use crate::estimator::{reduce_batch, score_gradient};
use crate::model::{EnumerableModel, MultiAgentModel, ProblemModel};
use crate::rng::{IterationStreams, StreamKey};

/// Largest support [`enumerate_expectation`] will walk.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationReport {
    pub expectation: f64,
    pub gradient: Vec<f64>,
    pub outcome_count: usize,
    pub probabilities: Vec<f64>,
}

/// Exact `E[f]` and `grad E[f] = sum Pr * (grad_x f + f * score)` over the
/// whole support.
pub fn enumerate_expectation<M: EnumerableModel + ?Sized>(model: &M, x: &[f64]) -> Result<EnumerationReport> {
    model.feasible_box().check_dim(x)?;
    let count = model.support_size();
    if count > ENUMERATION_LIMIT {
        return Err(Error::SupportTooLarge { count, limit: ENUMERATION_LIMIT });
    }
    let n = x.len();
    let mut expectation = 0.0;
    let mut gradient = vec![0.0; n];
    let mut probabilities = Vec::with_capacity(count as usize);
    let mut failure = None;
    model.for_each_outcome(&mut |xi| {
        if failure.is_some() {
            return;
        }
        let p = model.probability(x, xi);
        probabilities.push(p);
        if p == 0.0 {
            return;
        }
        let f = model.objective(x, xi);
        expectation += p * f;
        match model.score(x, xi) {
            Ok(s) => {
                for ((g, d), si) in gradient.iter_mut().zip(model.objective_grad_x(x, xi)).zip(&s) {
                    *g += p * (d + f * si);
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(EnumerationReport { expectation, gradient, outcome_count: probabilities.len(), probabilities })
}

/// Exact `E[h(xi)]` for a vector-valued `h` over the whole support.
pub fn enumerate_mean<M, H>(model: &M, x: &[f64], width: usize, h: H) -> Result<Vec<f64>>
where
    M: EnumerableModel + ?Sized,
    H: Fn(&[f64]) -> Vec<f64>,
{
    let count = model.support_size();
    if count > ENUMERATION_LIMIT {
        return Err(Error::SupportTooLarge { count, limit: ENUMERATION_LIMIT });
    }
    let mut acc = vec![0.0; width];
    model.for_each_outcome(&mut |xi| {
        let p = model.probability(x, xi);
        if p > 0.0 {
            for (a, v) in acc.iter_mut().zip(h(xi)) {
                *a += p * v;
            }
        }
    });
    Ok(acc)
}

/// Central differences `(phi(x + h e_k) - phi(x - h e_k)) / 2h`.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut phi: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut p = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let up = phi(&p);
        p[k] = x[k] - h;
        let down = phi(&p);
        p[k] = x[k];
        let d = (up - down) / (2.0 * h);
        if !d.is_finite() {
            return Err(numeric(format!("non-finite evaluation in coordinate {k}")));
        }
        out.push(d);
    }
    Ok(out)
}

/// `E[f]` for the truncated-GP model by composite Gauss-Legendre quadrature
/// per item, with panel edges at the cost kinks.
pub fn truncgp_expectation(model: &TruncGpModel, x: &[f64], panels: usize, degree: usize) -> Result<f64> {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree).ok_or_else(|| invalid("degree must be positive"))?);
    let mut total = 0.0;
    for (i, item) in model.spec().items.iter().enumerate() {
        let m = model.moments(i, x);
        let c = model.truncation_mass(i, &m)?;
        let sd = m.variance.sqrt();
        let cap = item.demand_cap;
        let density = |t: f64| normal::pdf((t - m.mean) / sd) / (sd * c);
        let integrand = |t: f64| (-x[i] * t + item.cost.eval(t)) * density(t);
        for (lo, hi) in panel_edges(0.0, cap, &item.cost.kinks(), panels) {
            total += rule.integrate(lo, hi, integrand);
        }
    }
    Ok(total)
}

/// `int_0^cap` of item `item`'s density.
pub fn truncgp_density_mass(model: &TruncGpModel, item: usize, x: &[f64], panels: usize, degree: usize) -> Result<f64> {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree).ok_or_else(|| invalid("degree must be positive"))?);
    let m = model.moments(item, x);
    let c = model.truncation_mass(item, &m)?;
    let sd = m.variance.sqrt();
    let cap = model.spec().items[item].demand_cap;
    Ok(panel_edges(0.0, cap, &[], panels)
        .into_iter()
        .map(|(lo, hi)| rule.integrate(lo, hi, |t| normal::pdf((t - m.mean) / sd) / (sd * c)))
        .sum())
}

/// Central differences of [`truncgp_expectation`].
pub fn truncgp_gradient(model: &TruncGpModel, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut err = None;
    let g = finite_diff_gradient(
        |p| match truncgp_expectation(model, p, 64, 24) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e.to_string());
                f64::NAN
            }
        },
        x,
        h,
    );
    if let Some(e) = err {
        return Err(numeric(e));
    }
    g
}

fn panel_edges(lo: f64, hi: f64, kinks: &[f64], panels: usize) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = vec![lo, hi];
    cuts.extend(kinks.iter().copied().filter(|k| *k > lo && *k < hi));
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let per = panels.max(1).div_ceil(cuts.len() - 1).max(1);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let step = (w[1] - w[0]) / per as f64;
        for j in 0..per {
            let a = w[0] + step * j as f64;
            let b = if j + 1 == per { w[1] } else { a + step };
            out.push((a, b));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct UnbiasedReport {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub target: Vec<f64>,
    pub z: Vec<f64>,
    /// Empirical `E|g - target|^2`.
    pub mean_sq_error: f64,
    pub samples: usize,
    pub threshold: f64,
    pub passed: bool,
}

/// Monte Carlo statistics of single-draw estimates `draw(streams.sample(l))`
/// against `target`. Passes iff every `|z| <= threshold`.
pub fn check_estimates<F>(target: &[f64], samples: usize, threshold: f64, streams: IterationStreams, draw: F) -> Result<UnbiasedReport>
where
    F: Fn(u64, IterationStreams) -> Result<Vec<f64>> + Sync,
{
    if samples < 2 {
        return Err(invalid("unbiasedness check needs at least two samples"));
    }
    let n = target.len();
    // layout: [sum d_i .., sum d_i^2 ..] with d = g - target
    let sums = reduce_batch(samples, 2 * n, |l, acc| {
        let g = draw(l as u64, streams)?;
        for i in 0..n {
            let d = g[i] - target[i];
            acc[i] += d;
            acc[n + i] += d * d;
        }
        Ok(())
    })?;
    let nf = samples as f64;
    let mut mean = Vec::with_capacity(n);
    let mut std_error = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let md = sums[i] / nf;
        let var = ((sums[n + i] - sums[i] * sums[i] / nf) / (nf - 1.0)).max(0.0);
        let se = (var / nf).sqrt();
        // deviations at rounding level count as exact agreement
        let zi = if md.abs() <= 1e-9 * (1.0 + target[i].abs()) {
            0.0
        } else if se > 0.0 {
            md / se
        } else {
            f64::INFINITY
        };
        mean.push(target[i] + md);
        std_error.push(se);
        z.push(zi);
    }
    let mean_sq_error = sums[n..].iter().sum::<f64>() / nf;
    let passed = z.iter().all(|v| v.abs() <= threshold);
    Ok(UnbiasedReport { mean, std_error, target: target.to_vec(), z, mean_sq_error, samples, threshold, passed })
}

/// Target gradient for [`check_unbiased`]: a given vector (for example from
/// [`truncgp_gradient`]) or exact enumeration over a finite support.
pub enum Target<'a> {
    Exact(&'a [f64]),
    Enumerate,
}

fn resolve_target<M: ProblemModel + ?Sized>(model: &M, x: &[f64], target: Target) -> Result<Vec<f64>> {
    match target {
        Target::Exact(t) => Ok(t.to_vec()),
        Target::Enumerate => {
            let e = model.as_enumerable().ok_or_else(|| invalid("model has no finite support to enumerate"))?;
            Ok(enumerate_expectation(e, x)?.gradient)
        }
    }
}

/// Checks the general estimator `g(x, xi, delta)` with the given z threshold.
pub fn check_unbiased<M: ProblemModel + ?Sized>(
    model: &M,
    x: &[f64],
    delta: f64,
    samples: usize,
    threshold: f64,
    key: StreamKey,
    target: Target,
) -> Result<UnbiasedReport> {
    let t = resolve_target(model, x, target)?;
    check_estimates(&t, samples, threshold, key.iteration(0), |l, s| {
        let xi = model.sample(x, &mut s.sample(l))?;
        score_gradient(model, x, &xi, delta)
    })
}

/// Checks the multi-agent estimator with single-draw batches.
pub fn check_unbiased_specialized<M: MultiAgentModel + ?Sized>(
    model: &M,
    x: &[f64],
    delta: f64,
    samples: usize,
    threshold: f64,
    key: StreamKey,
    target: Target,
) -> Result<UnbiasedReport> {
    let t = resolve_target(model, x, target)?;
    let jac = model.action_prob_jacobian(x);
    let sales = model.sales_grad_at_mean(x);
    check_estimates(&t, samples, threshold, key.iteration(0), |l, s| {
        let xi = model.sample(x, &mut s.sample(l))?;
        let c = model.cost(&xi);
        let phi = model.phi_score(x, &xi);
        Ok(jac
            .iter()
            .zip(&sales)
            .map(|(row, sg)| -sg + row.iter().zip(&phi).map(|(j, p)| j * (c - delta) * p).sum::<f64>())
            .collect())
    })
}
