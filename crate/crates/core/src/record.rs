//! Run traces, stop rules and output selection shared by every method.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ProblemModel;
use crate::ner::compute_ner;
use crate::rng::StreamKey;

/// Default number of trace entries kept before thinning.
pub const TRACE_CAPACITY: usize = 1000;

/// Termination by iteration count, wall-clock budget, or whichever comes first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub max_iterations: Option<usize>,
    pub budget: Option<Duration>,
}

impl StopRule {
    pub fn iterations(n: usize) -> Self {
        Self { max_iterations: Some(n), budget: None }
    }

    pub fn budget(limit: Duration) -> Self {
        Self { max_iterations: None, budget: Some(limit) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations.is_none() && self.budget.is_none() {
            return Err(invalid("stop rule needs an iteration cap or a time budget"));
        }
        Ok(())
    }

    /// True once iteration `done` has completed and no further one may start.
    pub fn reached(&self, done: usize, start: Instant) -> bool {
        self.max_iterations.is_some_and(|n| done >= n) || self.budget.is_some_and(|b| start.elapsed() >= b)
    }
}

/// How the returned point is chosen from the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputPolicy {
    /// The final iterate.
    Last,
    /// Random index `R` drawn from the weights of [`crate::optimizer::output_weights`];
    /// only valid with an iteration cap.
    RandomIndex { l_ef: f64 },
    /// Smallest NER over the recorded trace, each evaluated with `samples`
    /// common random draws.
    BestNer { samples: usize },
}

impl OutputPolicy {
    pub fn tag(&self) -> &'static str {
        match self {
            OutputPolicy::Last => "last",
            OutputPolicy::RandomIndex { .. } => "random-index",
            OutputPolicy::BestNer { .. } => "best-ner",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    /// The point at which the iteration sampled demand (`x_md` for the
    /// accelerated method, the current iterate for the baselines).
    pub x: Vec<f64>,
    /// Proximal iterate `x_k` of the accelerated method.
    pub x_prox: Option<Vec<f64>>,
    /// Aggregated iterate `x_k^ag` of the accelerated method.
    pub x_ag: Option<Vec<f64>>,
    /// Batch mean of the objective (or of the cost for the multi-agent
    /// estimator); the deterministic objective for PSD-AD.
    pub value: Option<f64>,
    pub delta: Option<f64>,
    pub elapsed: f64,
}

/// Bounded trace: when full, every other entry is dropped and the sampling
/// stride doubles. The last pushed entry is always retained by [`TraceRecorder::finish`].
#[derive(Clone, Debug)]
pub struct TraceRecorder {
    capacity: usize,
    stride: usize,
    pushes: usize,
    entries: Vec<TraceEntry>,
    last: Option<TraceEntry>,
}

impl TraceRecorder {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(2), stride: 1, pushes: 0, entries: Vec::new(), last: None }
    }

    pub fn push(&mut self, entry: TraceEntry) {
        let keep = self.pushes % self.stride == 0;
        self.pushes += 1;
        if !keep {
            self.last = Some(entry);
            return;
        }
        self.last = None;
        if self.entries.len() == self.capacity {
            let kept: Vec<TraceEntry> = std::mem::take(&mut self.entries).into_iter().step_by(2).collect();
            self.entries = kept;
            self.stride *= 2;
            // the entry only survives if it lands on the new grid
            if (self.pushes - 1) % self.stride != 0 {
                self.last = Some(entry);
                return;
            }
        }
        self.entries.push(entry);
    }

    pub fn finish(mut self) -> Vec<TraceEntry> {
        if let Some(e) = self.last.take() {
            self.entries.push(e);
        }
        self.entries
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub trace: Vec<TraceEntry>,
    pub output: Vec<f64>,
    pub output_k: usize,
    pub policy: String,
    pub output_ner: Option<f64>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
}

fn same_vec(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        (None, None) => true,
        _ => false,
    }
}

fn same_opt_vec(a: &Option<Vec<f64>>, b: &Option<Vec<f64>>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => same_vec(x, y),
        (None, None) => true,
        _ => false,
    }
}

impl RunRecord {
    /// Bitwise equality of every field except wall-clock timings.
    pub fn same_numerics(&self, other: &RunRecord) -> bool {
        self.method == other.method
            && self.policy == other.policy
            && self.output_k == other.output_k
            && self.iterations == other.iterations
            && self.warnings == other.warnings
            && same_vec(&self.output, &other.output)
            && same_opt(self.output_ner, other.output_ner)
            && self.trace.len() == other.trace.len()
            && self.trace.iter().zip(&other.trace).all(|(a, b)| {
                a.k == b.k
                    && same_vec(&a.x, &b.x)
                    && same_opt_vec(&a.x_prox, &b.x_prox)
                    && same_opt_vec(&a.x_ag, &b.x_ag)
                    && same_opt(a.value, b.value)
                    && same_opt(a.delta, b.delta)
            })
    }

    /// Every recorded point lies in the model's box.
    pub fn trace_feasible<M: ProblemModel + ?Sized>(&self, model: &M) -> bool {
        let b = model.feasible_box();
        b.contains(&self.output)
            && self.trace.iter().all(|e| {
                b.contains(&e.x)
                    && e.x_prox.as_deref().is_none_or(|v| b.contains(v))
                    && e.x_ag.as_deref().is_none_or(|v| b.contains(v))
            })
    }
}

/// Common controls for every method.
#[derive(Clone, Copy, Debug)]
pub struct RunControl {
    pub stop: StopRule,
    pub output: OutputPolicy,
    pub streams: StreamKey,
    pub trace_capacity: usize,
}

impl RunControl {
    pub fn new(stop: StopRule, output: OutputPolicy, streams: StreamKey) -> Self {
        Self { stop, output, streams, trace_capacity: TRACE_CAPACITY }
    }
}

/// Picks the best-NER entry of `trace` (ties go to the earliest), or `None`
/// for an empty trace.
pub(crate) fn best_ner<M: ProblemModel + ?Sized>(
    model: &M,
    trace: &[TraceEntry],
    samples: usize,
    key: StreamKey,
) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in trace.iter().enumerate() {
        let v = compute_ner(model, &e.x, samples, key)?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    Ok(best)
}

/// Builds the record for a finished trace under `Last` or `BestNer`.
pub(crate) fn finalize<M: ProblemModel + ?Sized>(
    model: &M,
    method: &str,
    trace: Vec<TraceEntry>,
    control: &RunControl,
    iterations: usize,
    start: Instant,
    warnings: Vec<String>,
) -> Result<RunRecord> {
    let wall_seconds = start.elapsed().as_secs_f64();
    let last = trace.last().ok_or_else(|| invalid("empty trace"))?;
    let (output, output_k, output_ner) = match control.output {
        OutputPolicy::Last | OutputPolicy::RandomIndex { .. } => (last.x.clone(), last.k, None),
        OutputPolicy::BestNer { samples } => {
            let key = control.streams.with_method(crate::rng::method_id::NER);
            let (i, v) = best_ner(model, &trace, samples, key)?.expect("nonempty trace");
            (trace[i].x.clone(), trace[i].k, Some(v))
        }
    };
    Ok(RunRecord {
        method: method.to_string(),
        trace,
        output,
        output_k,
        policy: control.output.tag().to_string(),
        output_ner,
        iterations,
        wall_seconds,
        warnings,
    })
}

pub(crate) fn entry(k: usize, x: Vec<f64>, value: Option<f64>, start: Instant) -> TraceEntry {
    TraceEntry { k, x, x_prox: None, x_ag: None, value, delta: None, elapsed: start.elapsed().as_secs_f64() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(k: usize) -> TraceEntry {
        TraceEntry { k, x: vec![k as f64], x_prox: None, x_ag: None, value: None, delta: None, elapsed: 0.0 }
    }

    #[test]
    fn recorder_thins_and_keeps_last() {
        let mut r = TraceRecorder::new(4);
        for k in 0..=10 {
            r.push(e(k));
        }
        let ks: Vec<usize> = r.finish().iter().map(|t| t.k).collect();
        assert_eq!(ks, vec![0, 4, 8, 10]);
    }

    #[test]
    fn recorder_below_capacity_keeps_everything() {
        let mut r = TraceRecorder::new(100);
        for k in 0..50 {
            r.push(e(k));
        }
        assert_eq!(r.finish().len(), 50);
    }

    #[test]
    fn recorder_is_strictly_increasing() {
        for cap in [2, 3, 7, 16] {
            let mut r = TraceRecorder::new(cap);
            for k in 0..1000 {
                r.push(e(k));
            }
            let ks: Vec<usize> = r.finish().iter().map(|t| t.k).collect();
            assert!(ks.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(*ks.last().unwrap(), 999);
            assert!(ks.len() <= cap + 1);
        }
    }
}
