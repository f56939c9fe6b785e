//! Projected accelerated stochastic gradient method with a running baseline.
//!
//! Each iteration `k >= 1`:
//!
//! ```text
//! x_md  = (1 - alpha_k) x_ag + alpha_k x
//! g     = minibatch estimate at x_md with baseline delta_k and m_k draws
//! x     = proj(x - lambda_k g)
//! x_ag  = proj(x_md - beta_k g)
//! delta = (1 - zeta_{k+1}) delta + zeta_{k+1} * batch mean
//! ```
//!
//! [`run_psg`] uses the general estimator, [`run_psg_specialized`] the
//! multi-agent one with the batch mean of the cost as the baseline target.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;

use crate::error::{invalid, Result};
use crate::estimator::{minibatch_gradient, ogd_update, specialized_gradient, BaselineState, GradientEstimate};
use crate::model::{MultiAgentModel, ProblemModel};
use crate::record::{finalize, OutputPolicy, RunControl, RunRecord, TraceEntry, TraceRecorder};
use crate::rng::{method_id, IterationStreams};

/// The sequences `alpha_k, beta_k, lambda_k, m_k, zeta_k`, indexed from `k = 1`.
pub trait StepSchedule: Send + Sync {
    fn alpha(&self, k: usize) -> f64;
    fn beta(&self, k: usize) -> f64;
    fn lambda(&self, k: usize) -> f64;
    fn batch(&self, k: usize) -> usize;
    fn zeta(&self, k: usize) -> f64;
}

/// Checks the schedule at iteration `k`.
pub fn validate_step(s: &dyn StepSchedule, k: usize) -> Result<()> {
    let (a, b, l, m, z) = (s.alpha(k), s.beta(k), s.lambda(k), s.batch(k), s.zeta(k));
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid(format!("alpha_{k} = {a} must be positive and finite")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid(format!("beta_{k} = {b} must be positive and finite")));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(invalid(format!("lambda_{k} = {l} must be positive and finite")));
    }
    if m == 0 {
        return Err(invalid(format!("m_{k} must be at least 1")));
    }
    if !(z > 0.0 && z <= 1.0) {
        return Err(invalid(format!("zeta_{k} = {z} must lie in (0, 1]")));
    }
    Ok(())
}

/// `alpha_k = 2/(k+1)`, `beta_k = 1/(2 L_Ef)`, `lambda_k = k beta_k / 2`,
/// `m_k = ceil(num * k / (L_Ef * D^2))` (at least 1), `zeta_k = 1/k`, with
/// `L_Ef = L_f + f_max M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoreticalSchedule {
    pub l_ef: f64,
    pub numerator: f64,
    pub d_tilde: f64,
}

impl TheoreticalSchedule {
    /// General estimator: `num = (L_f + 2 f_max M)^2`.
    pub fn general(l_f: f64, f_max: f64, m: f64, d_tilde: f64) -> Result<Self> {
        Self::build(l_f, f_max, m, d_tilde, (l_f + 2.0 * f_max * m).powi(2))
    }

    /// Multi-agent estimator: `num = 4 (c_max M)^2`.
    pub fn specialized(l_f: f64, f_max: f64, m: f64, c_max: f64, d_tilde: f64) -> Result<Self> {
        if !(c_max >= 0.0 && c_max.is_finite()) {
            return Err(invalid(format!("c_max must be nonnegative, got {c_max}")));
        }
        Self::build(l_f, f_max, m, d_tilde, 4.0 * (c_max * m).powi(2))
    }

    /// From a model's declared constants.
    pub fn for_model<M: ProblemModel + ?Sized>(model: &M, d_tilde: f64) -> Result<Self> {
        Self::general(model.lipschitz_f(), model.f_max(), model.score_bound(), d_tilde)
    }

    fn build(l_f: f64, f_max: f64, m: f64, d_tilde: f64, numerator: f64) -> Result<Self> {
        for (name, v) in [("L_f", l_f), ("f_max", f_max), ("M", m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be nonnegative and finite, got {v}")));
            }
        }
        let l_ef = l_f + f_max * m;
        if !(l_ef > 0.0) {
            return Err(invalid("L_f + f_max * M must be positive"));
        }
        if !(d_tilde > 0.0 && d_tilde.is_finite()) {
            return Err(invalid(format!("D must be positive, got {d_tilde}")));
        }
        Ok(Self { l_ef, numerator, d_tilde })
    }
}

impl StepSchedule for TheoreticalSchedule {
    fn alpha(&self, k: usize) -> f64 {
        2.0 / (k as f64 + 1.0)
    }

    fn beta(&self, _k: usize) -> f64 {
        1.0 / (2.0 * self.l_ef)
    }

    fn lambda(&self, k: usize) -> f64 {
        k as f64 * self.beta(k) / 2.0
    }

    fn batch(&self, k: usize) -> usize {
        let m = (self.numerator * k as f64 / (self.l_ef * self.d_tilde * self.d_tilde)).ceil();
        if m.is_finite() && m >= 1.0 {
            m.min(usize::MAX as f64) as usize
        } else {
            1
        }
    }

    fn zeta(&self, k: usize) -> f64 {
        1.0 / k as f64
    }
}

/// `alpha_k = 10/(k+1)`, `beta_k = 0.1/(2m)`, `lambda_k = k beta_k / 2`,
/// `m_k = max(1, ceil(0.1 k m))`, `zeta_k = 1/k` for `m` buyers.
///
/// `alpha_k > 1` for `k <= 8`; the mixed point is then projected back into
/// the box and the run carries a warning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentSchedule {
    pub buyers: u64,
}

impl ExperimentSchedule {
    pub fn new(buyers: u64) -> Result<Self> {
        if buyers == 0 {
            return Err(invalid("experiment schedule needs at least one buyer"));
        }
        Ok(Self { buyers })
    }
}

impl StepSchedule for ExperimentSchedule {
    fn alpha(&self, k: usize) -> f64 {
        10.0 / (k as f64 + 1.0)
    }

    fn beta(&self, _k: usize) -> f64 {
        0.1 / (2.0 * self.buyers as f64)
    }

    fn lambda(&self, k: usize) -> f64 {
        k as f64 * self.beta(k) / 2.0
    }

    fn batch(&self, k: usize) -> usize {
        ((k as u128 * self.buyers as u128).div_ceil(10)).clamp(1, usize::MAX as u128) as usize
    }

    fn zeta(&self, k: usize) -> f64 {
        1.0 / k as f64
    }
}

/// Unnormalized output weights `Gamma_k^-1 beta_k (1 - L_Ef beta_k)` for
/// `k = 1..=n`, with `Gamma_1 = 1` and `Gamma_k = (1 - alpha_k) Gamma_{k-1}`.
pub fn output_weights(n: usize, schedule: &dyn StepSchedule, l_ef: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("output index needs at least one iteration"));
    }
    let mut log_gamma = 0.0f64;
    let mut logs = Vec::with_capacity(n);
    for k in 1..=n {
        if k >= 2 {
            let a = schedule.alpha(k);
            if !(a > 0.0 && a < 1.0) {
                return Err(invalid(format!("alpha_{k} = {a} must lie in (0, 1) for the output weights")));
            }
            log_gamma += (1.0 - a).ln();
        }
        let b = schedule.beta(k);
        let factor = 1.0 - l_ef * b;
        if !(b > 0.0) || !(factor > 4.0 * f64::EPSILON) {
            return Err(invalid(format!(
                "output weight at k = {k} is not positive: beta = {b}, 1 - L_Ef beta = {factor}"
            )));
        }
        logs.push(-log_gamma + b.ln() + factor.ln());
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(logs.into_iter().map(|l| (l - top).exp()).collect())
}

/// Draws `R` in `1..=n` with probability proportional to [`output_weights`].
pub fn sample_output_index(n: usize, schedule: &dyn StepSchedule, l_ef: f64, rng: &mut dyn RngCore) -> Result<usize> {
    let w = output_weights(n, schedule, l_ef)?;
    let dist = WeightedIndex::new(&w).map_err(|e| invalid(format!("output weights: {e}")))?;
    Ok(dist.sample(rng) + 1)
}

/// Handling of the baseline `delta_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeltaPolicy {
    /// Online update starting from `initial`.
    Ogd { initial: f64 },
    /// Held at a constant value.
    Fixed(f64),
}

impl DeltaPolicy {
    fn initial(&self) -> f64 {
        match *self {
            DeltaPolicy::Ogd { initial } | DeltaPolicy::Fixed(initial) => initial,
        }
    }
}

#[derive(Clone, Copy)]
pub struct PsgOptions<'a> {
    pub schedule: &'a dyn StepSchedule,
    pub delta: DeltaPolicy,
    pub control: RunControl,
}

/// Iterates of the method after `k` completed iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    pub x_ag: Vec<f64>,
    pub x_md: Vec<f64>,
    pub baseline: BaselineState,
    pub k: usize,
}

/// Outcome of one call to [`OptimizerState::step`].
#[derive(Clone, Debug)]
pub struct StepReport {
    pub estimate: GradientEstimate,
    /// Baseline used for this iteration's estimate.
    pub delta_used: f64,
    /// Whether the mixed point left the box and was projected.
    pub mixed_projected: bool,
}

impl OptimizerState {
    pub fn new(x0: Vec<f64>, delta0: f64) -> Self {
        Self { x: x0.clone(), x_ag: x0.clone(), x_md: x0, baseline: BaselineState::new(delta0), k: 0 }
    }

    /// Runs iteration `k + 1` with `estimate(x_md, delta, m_k, streams)`.
    pub fn step<M, F>(
        &mut self,
        model: &M,
        schedule: &dyn StepSchedule,
        delta_policy: DeltaPolicy,
        streams: IterationStreams,
        estimate: F,
    ) -> Result<StepReport>
    where
        M: ProblemModel + ?Sized,
        F: FnOnce(&[f64], f64, usize, IterationStreams) -> Result<GradientEstimate>,
    {
        let k = self.k + 1;
        validate_step(schedule, k)?;
        let b = model.feasible_box();
        let (alpha, beta, lambda, m) = (schedule.alpha(k), schedule.beta(k), schedule.lambda(k), schedule.batch(k));
        self.x_md = self.x_ag.iter().zip(&self.x).map(|(ag, x)| (1.0 - alpha) * ag + alpha * x).collect();
        let mixed_projected = !b.contains(&self.x_md);
        if mixed_projected {
            b.project_in_place(&mut self.x_md);
        }
        let delta_used = self.baseline.delta;
        let est = estimate(&self.x_md, delta_used, m, streams)?;
        for (xi, gi) in self.x.iter_mut().zip(&est.g) {
            *xi -= lambda * gi;
        }
        b.project_in_place(&mut self.x);
        self.x_ag = self.x_md.iter().zip(&est.g).map(|(md, gi)| md - beta * gi).collect();
        b.project_in_place(&mut self.x_ag);
        if let DeltaPolicy::Ogd { .. } = delta_policy {
            let zeta = schedule.zeta(k + 1);
            self.baseline = ogd_update(self.baseline, est.batch_mean_f, zeta)?;
        }
        self.k = k;
        Ok(StepReport { estimate: est, delta_used, mixed_projected })
    }
}

fn run_loop<M, F>(model: &M, method: &str, x0: &[f64], delta_bound: f64, opts: &PsgOptions, estimate: F) -> Result<RunRecord>
where
    M: ProblemModel + ?Sized,
    F: Fn(&[f64], f64, usize, IterationStreams) -> Result<GradientEstimate>,
{
    let start = Instant::now();
    let b = model.feasible_box();
    b.check_dim(x0)?;
    if !b.contains(x0) {
        return Err(invalid("initial point must lie in the box"));
    }
    let control = &opts.control;
    control.stop.validate()?;
    let delta0 = opts.delta.initial();
    if !delta0.is_finite() {
        return Err(invalid("initial baseline must be finite"));
    }
    if let DeltaPolicy::Ogd { initial } = opts.delta {
        if initial.abs() > delta_bound {
            return Err(invalid(format!("initial baseline {initial} outside [-{delta_bound}, {delta_bound}]")));
        }
    }

    let mut stop = control.stop;
    if let OutputPolicy::RandomIndex { l_ef } = control.output {
        let n = stop.max_iterations.ok_or_else(|| invalid("random output index needs an iteration cap"))?;
        if stop.budget.is_some() {
            return Err(invalid("random output index cannot be combined with a time budget"));
        }
        if n > 0 {
            let mut rng = control.streams.with_method(method_id::OUTPUT_INDEX).rng(0, 0);
            stop.max_iterations = Some(sample_output_index(n, opts.schedule, l_ef, &mut rng)?);
        }
    }

    let mut state = OptimizerState::new(x0.to_vec(), delta0);
    let mut recorder = TraceRecorder::new(control.trace_capacity);
    recorder.push(TraceEntry {
        k: 0,
        x: x0.to_vec(),
        x_prox: Some(x0.to_vec()),
        x_ag: Some(x0.to_vec()),
        value: None,
        delta: Some(delta0),
        elapsed: start.elapsed().as_secs_f64(),
    });
    let mut warned = false;
    let mut warnings = Vec::new();
    while !stop.reached(state.k, start) {
        let streams = control.streams.iteration(state.k as u64 + 1);
        let report = state.step(model, opts.schedule, opts.delta, streams, &estimate)?;
        if report.mixed_projected && !warned {
            warned = true;
            warnings.push(format!(
                "alpha_k > 1 moved the mixed point outside the box (first at k = {}); it was projected back",
                state.k
            ));
        }
        recorder.push(TraceEntry {
            k: state.k,
            x: state.x_md.clone(),
            x_prox: Some(state.x.clone()),
            x_ag: Some(state.x_ag.clone()),
            value: Some(report.estimate.batch_mean_f),
            delta: Some(report.delta_used),
            elapsed: start.elapsed().as_secs_f64(),
        });
    }
    let trace = recorder.finish();
    let iterations = state.k;
    finalize(model, method, trace, control, iterations, start, warnings)
}

/// Runs the method with the general score-function estimator.
pub fn run_psg<M: ProblemModel + ?Sized>(model: &M, x0: &[f64], opts: &PsgOptions) -> Result<RunRecord> {
    run_loop(model, "proposed-general", x0, model.f_max(), opts, |x, delta, m, streams| {
        minibatch_gradient(model, x, delta, m, streams)
    })
}

/// Runs the method with the multi-agent estimator.
pub fn run_psg_specialized<M: MultiAgentModel + ?Sized>(model: &M, x0: &[f64], opts: &PsgOptions) -> Result<RunRecord> {
    run_loop(model, "proposed", x0, model.c_max(), opts, |x, delta, m, streams| {
        specialized_gradient(model, x, delta, m, streams)
    })
}
