//! Price optimization when demand depends on the prices.
//!
//! The crate solves `min_{x in C} E_{xi ~ D(x)} f(x, xi)` over a box `C` with
//! score-function gradient estimators and a projected accelerated stochastic
//! gradient method, and ships the pricing models, comparison baselines,
//! brute-force oracles and the benchmark pipeline built on top of them.

pub mod apps;
pub mod baselines;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod ner;
pub mod optimizer;
pub mod oracle;
pub mod record;
pub mod rng;

pub use error::{Error, Result};
pub use estimator::{minibatch_gradient, ogd_update, score_gradient, specialized_gradient, BaselineState, GradientEstimate};
pub use model::{gradient_mapping, project_box, EnumerableModel, FeasibleBox, MultiAgentModel, ProblemModel};
pub use optimizer::{run_psg, run_psg_specialized, DeltaPolicy, ExperimentSchedule, PsgOptions, StepSchedule, TheoreticalSchedule};
pub use record::{OutputPolicy, RunControl, RunRecord, StopRule, TraceEntry};
pub use rng::{method_id, StreamKey};
