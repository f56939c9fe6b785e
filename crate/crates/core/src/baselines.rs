//! Comparison methods: ridge-regularized repeated gradient descent, SPSA,
//! projected descent on the mean-demand objective, and random search.

use std::time::Instant;

use rand::{Rng, RngCore};

use crate::error::{invalid, Result};
use crate::estimator::reduce_batch;
use crate::model::{MultiAgentModel, ProblemModel};
use crate::oracle::finite_diff_gradient;
use crate::record::{entry, finalize, RunControl, RunRecord, TraceRecorder};

fn check_start<M: ProblemModel + ?Sized>(model: &M, x0: &[f64], control: &RunControl) -> Result<()> {
    let b = model.feasible_box();
    b.check_dim(x0)?;
    if !b.contains(x0) {
        return Err(invalid("initial point must lie in the box"));
    }
    control.stop.validate()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2RgdOptions {
    /// Weight of the ridge term `alpha/2 * |x - x0|^2`.
    pub alpha: f64,
    pub step: f64,
    pub batch: usize,
}

impl Default for L2RgdOptions {
    fn default() -> Self {
        Self { alpha: 1.0, step: 0.01, batch: 100 }
    }
}

/// `x <- proj(x - eta * (mean grad_x f(x, xi) + alpha (x - x0)))` with
/// `xi ~ D(x)` held fixed within the step.
pub fn run_l2_rgd<M: ProblemModel + ?Sized>(
    model: &M,
    x0: &[f64],
    opts: &L2RgdOptions,
    control: &RunControl,
) -> Result<RunRecord> {
    let start = Instant::now();
    check_start(model, x0, control)?;
    if !(opts.alpha >= 0.0 && opts.step > 0.0 && opts.batch >= 1) {
        return Err(invalid("L2-RGD needs alpha >= 0, step > 0 and batch >= 1"));
    }
    let b = model.feasible_box();
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut recorder = TraceRecorder::new(control.trace_capacity);
    recorder.push(entry(0, x.clone(), None, start));
    let mut k = 0;
    while !control.stop.reached(k, start) {
        k += 1;
        let streams = control.streams.iteration(k as u64);
        let sums = reduce_batch(opts.batch, n + 1, |l, acc| {
            let mut rng = streams.sample(l as u64);
            let xi = model.sample(&x, &mut rng)?;
            for (a, g) in acc.iter_mut().zip(model.objective_grad_x(&x, &xi)) {
                *a += g;
            }
            acc[n] += model.objective(&x, &xi);
            Ok(())
        })?;
        let inv = 1.0 / opts.batch as f64;
        for i in 0..n {
            let g = sums[i] * inv + opts.alpha * (x[i] - x0[i]);
            x[i] -= opts.step * g;
        }
        b.project_in_place(&mut x);
        recorder.push(entry(k, x.clone(), Some(sums[n] * inv), start));
    }
    finalize(model, "l2-rgd", recorder.finish(), control, k, start, Vec::new())
}

/// Gain `a_k = 0.16 / (k + 101)^0.602` for 0-based `k`.
pub fn spsa_gain_a(k: usize) -> f64 {
    0.16 / (k as f64 + 101.0).powf(0.602)
}

/// Perturbation size `c_k = 1 / (k + 1)^0.101` for 0-based `k`.
pub fn spsa_gain_c(k: usize) -> f64 {
    1.0 / (k as f64 + 1.0).powf(0.101)
}

/// One simultaneous-perturbation estimate at `x` with size `c`:
/// `(f(x+, xi1) - f(x-, xi2)) / (2 c Delta_i)` with `x+-` the clipped points
/// `x +- c Delta` and independent demand draws at each.
pub fn spsa_gradient_estimate<M: ProblemModel + ?Sized>(
    model: &M,
    x: &[f64],
    c: f64,
    perturb_rng: &mut dyn RngCore,
    plus_rng: &mut dyn RngCore,
    minus_rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(invalid("SPSA perturbation must be positive"));
    }
    let b = model.feasible_box();
    let delta: Vec<f64> = (0..x.len()).map(|_| if perturb_rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut plus: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v + c * d).collect();
    let mut minus: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v - c * d).collect();
    b.project_in_place(&mut plus);
    b.project_in_place(&mut minus);
    let xi1 = model.sample(&plus, plus_rng)?;
    let xi2 = model.sample(&minus, minus_rng)?;
    let diff = model.objective(&plus, &xi1) - model.objective(&minus, &xi2);
    Ok(delta.iter().map(|d| diff / (2.0 * c * d)).collect())
}

pub fn run_spsa<M: ProblemModel + ?Sized>(model: &M, x0: &[f64], control: &RunControl) -> Result<RunRecord> {
    let start = Instant::now();
    check_start(model, x0, control)?;
    let b = model.feasible_box();
    let mut x = x0.to_vec();
    let mut recorder = TraceRecorder::new(control.trace_capacity);
    recorder.push(entry(0, x.clone(), None, start));
    let mut k = 0;
    while !control.stop.reached(k, start) {
        let streams = control.streams.iteration(k as u64 + 1);
        let g = spsa_gradient_estimate(
            model,
            &x,
            spsa_gain_c(k),
            &mut streams.sample(0),
            &mut streams.sample(1),
            &mut streams.sample(2),
        )?;
        let a = spsa_gain_a(k);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= a * gi;
        }
        b.project_in_place(&mut x);
        k += 1;
        recorder.push(entry(k, x.clone(), None, start));
    }
    finalize(model, "spsa", recorder.finish(), control, k, start, Vec::new())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsdAdOptions {
    /// Backtracking factor in `(0, 1)`.
    pub shrink: f64,
    pub initial_step: f64,
    /// Central-difference width.
    pub fd_step: f64,
    /// Steps below this end the run.
    pub min_step: f64,
}

impl Default for PsdAdOptions {
    fn default() -> Self {
        Self { shrink: 0.9, initial_step: 1.0, fd_step: 1e-6, min_step: 1e-12 }
    }
}

/// Projected descent with backtracking on `F(x) = -s(x, E[xi]) + c(E[xi])`.
///
/// Each iteration starts from the last accepted step and multiplies it by
/// `shrink` until the projected point lowers `F`. If the step falls below
/// `min_step` the iteration is recorded as a no-op and the run ends, since
/// the objective is deterministic.
pub fn run_psd_ad<M: MultiAgentModel + ?Sized>(
    model: &M,
    x0: &[f64],
    opts: &PsdAdOptions,
    control: &RunControl,
) -> Result<RunRecord> {
    let start = Instant::now();
    check_start(model, x0, control)?;
    if !(opts.shrink > 0.0 && opts.shrink < 1.0) {
        return Err(invalid(format!("shrink factor must lie in (0, 1), got {}", opts.shrink)));
    }
    if !(opts.initial_step > 0.0 && opts.fd_step > 0.0 && opts.min_step > 0.0) {
        return Err(invalid("PSD-AD step sizes must be positive"));
    }
    let b = model.feasible_box();
    let mut x = x0.to_vec();
    let mut fx = model.mean_demand_objective(&x);
    let mut step = opts.initial_step;
    let mut recorder = TraceRecorder::new(control.trace_capacity);
    recorder.push(entry(0, x.clone(), Some(fx), start));
    let mut warnings = Vec::new();
    let mut k = 0;
    while !control.stop.reached(k, start) {
        k += 1;
        let g = finite_diff_gradient(|p: &[f64]| model.mean_demand_objective(p), &x, opts.fd_step)?;
        let mut accepted = None;
        while step >= opts.min_step {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(v, gi)| v - step * gi).collect();
            b.project_in_place(&mut cand);
            let fc = model.mean_demand_objective(&cand);
            if fc < fx {
                accepted = Some((cand, fc));
                break;
            }
            step *= opts.shrink;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
                recorder.push(entry(k, x.clone(), Some(fx), start));
            }
            None => {
                recorder.push(entry(k, x.clone(), Some(fx), start));
                warnings.push(format!("no decrease found above step {:e} at k = {k}; stopped", opts.min_step));
                break;
            }
        }
    }
    finalize(model, "psd-ad", recorder.finish(), control, k, start, warnings)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSearchOptions {
    pub draws_per_eval: usize,
    /// Points evaluated before any random ones.
    pub seeds: Vec<Vec<f64>>,
}

impl Default for RandomSearchOptions {
    fn default() -> Self {
        Self { draws_per_eval: 100, seeds: Vec::new() }
    }
}

/// Evaluates candidates by Monte Carlo and keeps the incumbent. The trace
/// holds the sequence of incumbents, so the last entry is the best estimate.
pub fn run_random_search<M: ProblemModel + ?Sized>(
    model: &M,
    opts: &RandomSearchOptions,
    control: &RunControl,
) -> Result<RunRecord> {
    let start = Instant::now();
    control.stop.validate()?;
    if opts.draws_per_eval == 0 {
        return Err(invalid("random search needs at least one draw per evaluation"));
    }
    let b = model.feasible_box();
    for s in &opts.seeds {
        b.check_dim(s)?;
        if !b.contains(s) {
            return Err(invalid("seed candidates must lie in the box"));
        }
    }
    let mut recorder = TraceRecorder::new(control.trace_capacity);
    let mut best: Option<f64> = None;
    let mut k = 0;
    while k == 0 || !control.stop.reached(k, start) {
        k += 1;
        let streams = control.streams.iteration(k as u64);
        let cand = match opts.seeds.get(k - 1) {
            Some(s) => s.clone(),
            None => {
                let mut rng = streams.sample(u64::MAX);
                (0..b.dim).map(|_| rng.random_range(b.lower..=b.upper)).collect()
            }
        };
        let sum = reduce_batch(opts.draws_per_eval, 1, |l, acc| {
            let xi = model.sample(&cand, &mut streams.sample(l as u64))?;
            acc[0] += model.objective(&cand, &xi);
            Ok(())
        })?;
        let v = sum[0] / opts.draws_per_eval as f64;
        if best.is_none_or(|bv| v < bv) {
            best = Some(v);
            recorder.push(entry(k, cand, Some(v), start));
        }
    }
    finalize(model, "random-search", recorder.finish(), control, k, start, Vec::new())
}
