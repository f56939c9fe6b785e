//! Negative expected revenue: a Monte Carlo estimate of `E[-s + c]` at a price.

use crate::error::{invalid, Result};
use crate::estimator::reduce_batch;
use crate::model::ProblemModel;
use crate::rng::StreamKey;

/// Default number of draws per NER evaluation.
pub const NER_SAMPLES: usize = 1000;

/// Mean of `f(x, xi)` over `samples` draws from `D(x)`.
///
/// Draw `l` always uses stream `(key, iteration 0, sample l)`, so two prices
/// evaluated with the same key share common random numbers.
pub fn compute_ner<M: ProblemModel + ?Sized>(model: &M, x: &[f64], samples: usize, key: StreamKey) -> Result<f64> {
    if samples == 0 {
        return Err(invalid("NER needs at least one sample"));
    }
    model.feasible_box().check_dim(x)?;
    if !model.feasible_box().contains(x) {
        return Err(invalid("NER is only defined at feasible prices"));
    }
    let streams = key.iteration(0);
    let sum = reduce_batch(samples, 1, |l, acc| {
        let mut rng = streams.sample(l as u64);
        let xi = model.sample(x, &mut rng)?;
        acc[0] += model.objective(x, &xi);
        Ok(())
    })?;
    Ok(sum[0] / samples as f64)
}
