mod common;

use common::*;
use ddprice::apps::QuadraticModel;
use ddprice::model::{gradient_mapping, norm};
use ddprice::ner::compute_ner;
use ddprice::optimizer::{output_weights, sample_output_index};
use ddprice::{
    MultiAgentModel,
    run_psg, run_psg_specialized, DeltaPolicy, ExperimentSchedule, FeasibleBox, OutputPolicy, ProblemModel,
    PsgOptions, RunControl, StepSchedule, StopRule, StreamKey, TheoreticalSchedule,
};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn control(stop: StopRule, output: OutputPolicy, seed: u64) -> RunControl {
    RunControl::new(stop, output, StreamKey::new(seed, 0, 1))
}

fn quadratic() -> QuadraticModel {
    QuadraticModel::new(vec![1.0, 2.0, 0.5], vec![3.0, 6.0, 2.0], FeasibleBox::new(0.0, 10.0, 3).unwrap()).unwrap()
}

/// Fixed batch size on top of another schedule.
struct WithBatch<'a>(&'a dyn StepSchedule, usize);

impl StepSchedule for WithBatch<'_> {
    fn alpha(&self, k: usize) -> f64 {
        self.0.alpha(k)
    }
    fn beta(&self, k: usize) -> f64 {
        self.0.beta(k)
    }
    fn lambda(&self, k: usize) -> f64 {
        self.0.lambda(k)
    }
    fn batch(&self, _k: usize) -> usize {
        self.1
    }
    fn zeta(&self, k: usize) -> f64 {
        self.0.zeta(k)
    }
}

/// `beta_k = 1 / L` with the theoretical alpha.
struct EdgeBeta(f64);

impl StepSchedule for EdgeBeta {
    fn alpha(&self, k: usize) -> f64 {
        2.0 / (k as f64 + 1.0)
    }
    fn beta(&self, _k: usize) -> f64 {
        1.0 / self.0
    }
    fn lambda(&self, k: usize) -> f64 {
        k as f64 / (2.0 * self.0)
    }
    fn batch(&self, _k: usize) -> usize {
        1
    }
    fn zeta(&self, k: usize) -> f64 {
        1.0 / k as f64
    }
}

#[test]
fn quadratic_converges_to_minimizer() {
    let model = quadratic();
    let schedule = TheoreticalSchedule::for_model(&model, 1.0).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::iterations(500), OutputPolicy::Last, 1),
    };
    let rec = run_psg(&model, &[9.0, 1.0, 8.0], &opts).unwrap();
    let x = &rec.output;
    let g = gradient_mapping(x, &model.gradient(x), schedule.beta(rec.output_k), model.feasible_box()).unwrap();
    assert!(norm(&g) < 1e-3, "|G| = {}", norm(&g));
    for (a, t) in x.iter().zip(model.target()) {
        assert!((a - t).abs() < 1e-2);
    }
}

#[test]
fn zero_iterations_return_start() {
    let model = tiny_multiproduct();
    let schedule = ExperimentSchedule::new(3).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::iterations(0), OutputPolicy::Last, 2),
    };
    let x0 = [1.0, 2.0];
    for rec in [run_psg(&model, &x0, &opts).unwrap(), run_psg_specialized(&model, &x0, &opts).unwrap()] {
        assert_eq!(rec.output, x0.to_vec());
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.output_k, 0);
    }
    let best = PsgOptions { control: control(StopRule::iterations(0), OutputPolicy::BestNer { samples: 10 }, 2), ..opts };
    assert_eq!(run_psg(&model, &x0, &best).unwrap().output, x0.to_vec());
}

#[test]
fn infeasible_start_and_bad_baseline_are_rejected() {
    let model = tiny_multiproduct();
    let schedule = ExperimentSchedule::new(3).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::iterations(3), OutputPolicy::Last, 3),
    };
    assert!(run_psg(&model, &[0.0, 1.0], &opts).is_err());
    assert!(run_psg(&model, &[1.0], &opts).is_err());
    let far = PsgOptions { delta: DeltaPolicy::Ogd { initial: 2.0 * model.f_max() }, ..opts };
    assert!(run_psg(&model, &[1.0, 1.0], &far).is_err());
    let unbounded = PsgOptions { control: control(StopRule { max_iterations: None, budget: None }, OutputPolicy::Last, 3), ..opts };
    assert!(run_psg(&model, &[1.0, 1.0], &unbounded).is_err());
}

#[test]
fn experiment_schedule_run_is_feasible_and_deterministic() {
    let model = tiny_multiproduct();
    let schedule = ExperimentSchedule::new(3).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::iterations(200), OutputPolicy::BestNer { samples: 200 }, 4),
    };
    for run in [run_psg, run_psg_specialized::<ddprice::apps::MultiproductModel>] {
        let a = run(&model, &[0.5, 0.5], &opts).unwrap();
        let b = run(&model, &[0.5, 0.5], &opts).unwrap();
        assert!(a.trace_feasible(&model));
        assert!(a.same_numerics(&b));
        assert!(a.trace.windows(2).all(|w| w[0].k < w[1].k && w[0].elapsed <= w[1].elapsed));
    }
}

#[test]
fn baseline_stays_within_bound() {
    let model = tiny_hotlane();
    let schedule = ExperimentSchedule::new(9).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: model.f_max() },
        control: control(StopRule::iterations(100), OutputPolicy::Last, 5),
    };
    let rec = run_psg(&model, &[2.5, 2.5], &opts).unwrap();
    assert!(rec.trace.iter().all(|e| e.delta.unwrap().abs() <= model.f_max()));
    let opts = PsgOptions { delta: DeltaPolicy::Ogd { initial: -model.c_max() }, ..opts };
    let rec = run_psg_specialized(&model, &[2.5, 2.5], &opts).unwrap();
    assert!(rec.trace.iter().all(|e| e.delta.unwrap().abs() <= model.c_max()));
}

#[test]
fn fixed_baseline_never_moves() {
    let model = tiny_multiproduct();
    let schedule = ExperimentSchedule::new(3).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Fixed(-1.5),
        control: control(StopRule::iterations(20), OutputPolicy::Last, 6),
    };
    let rec = run_psg(&model, &[1.0, 1.0], &opts).unwrap();
    assert!(rec.trace.iter().all(|e| e.delta == Some(-1.5)));
}

#[test]
fn output_index_follows_weights() {
    let schedule = TheoreticalSchedule::general(1.0, 0.0, 0.0, 1.0).unwrap();
    let n = 20;
    let w = output_weights(n, &schedule, schedule.l_ef).unwrap();
    // Gamma_k = 2 / (k (k + 1)) and constant beta give weights proportional to k (k + 1)
    for k in 1..=n {
        assert!(approx(w[k - 1] / w[0], (k * (k + 1)) as f64 / 2.0, 1e-9));
    }
    let total: f64 = (1..=n).map(|k| (k * (k + 1)) as f64).sum();
    let draws = 100_000;
    let mut counts = vec![0u64; n];
    let mut r = rng(7);
    for _ in 0..draws {
        let idx = sample_output_index(n, &schedule, schedule.l_ef, &mut r).unwrap();
        counts[idx - 1] += 1;
    }
    let stat: f64 = (1..=n)
        .map(|k| {
            let e = draws as f64 * (k * (k + 1)) as f64 / total;
            (counts[k - 1] as f64 - e).powi(2) / e
        })
        .sum();
    assert!(stat <= ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.99), "chi2 = {stat}");
}

#[test]
fn output_index_edge_cases() {
    let schedule = TheoreticalSchedule::general(1.0, 0.0, 0.0, 1.0).unwrap();
    let mut r = rng(8);
    for _ in 0..20 {
        assert_eq!(sample_output_index(1, &schedule, schedule.l_ef, &mut r).unwrap(), 1);
    }
    assert!(output_weights(5, &EdgeBeta(2.0), 2.0).is_err());
    assert!(output_weights(0, &schedule, 1.0).is_err());
}

#[test]
fn random_index_policy_requires_iteration_cap() {
    let model = quadratic();
    let schedule = TheoreticalSchedule::for_model(&model, 1.0).unwrap();
    let l_ef = schedule.l_ef;
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Fixed(0.0),
        control: control(StopRule::budget(std::time::Duration::from_secs(1)), OutputPolicy::RandomIndex { l_ef }, 9),
    };
    assert!(run_psg(&model, &[1.0, 1.0, 1.0], &opts).is_err());
    let opts = PsgOptions { control: control(StopRule::iterations(50), OutputPolicy::RandomIndex { l_ef }, 9), ..opts };
    let rec = run_psg(&model, &[1.0, 1.0, 1.0], &opts).unwrap();
    assert!((1..=50).contains(&rec.output_k));
    assert_eq!(rec.iterations, rec.output_k);
    assert_eq!(rec.policy, "random-index");
}

/// `E[f] = -m p(x) (x - slope)` for the one-product fixture.
fn single_product_value(x: f64, m: f64, slope: f64) -> f64 {
    let e = (2.0 - x).exp();
    let p = e / (1.0 + e);
    -m * p * (x - slope)
}

#[test]
fn single_product_run_beats_start() {
    let model = single_product(20, 0.5, 10.0);
    let schedule = ExperimentSchedule::new(20).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::iterations(300), OutputPolicy::BestNer { samples: 1000 }, 10),
    };
    let x0 = [0.5];
    let grid_best = (0..=100_000).map(|i| single_product_value(i as f64 * 1e-4, 20.0, 0.5)).fold(f64::INFINITY, f64::min);
    for rec in [run_psg(&model, &x0, &opts).unwrap(), run_psg_specialized(&model, &x0, &opts).unwrap()] {
        let v = single_product_value(rec.output[0], 20.0, 0.5);
        assert!(v < single_product_value(0.5, 20.0, 0.5), "{v}");
        assert!(v <= 0.9 * grid_best, "{v} vs optimum {grid_best}");
    }
}

#[test]
fn specialized_tracks_general_with_large_batches() {
    let model = tiny_multiproduct();
    let base = ExperimentSchedule::new(3).unwrap();
    let schedule = WithBatch(&base, 10_000);
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::iterations(40), OutputPolicy::Last, 11),
    };
    let x0 = [0.5, 0.5];
    let a = run_psg(&model, &x0, &opts).unwrap();
    let b = run_psg_specialized(&model, &x0, &opts).unwrap();
    let key = StreamKey::new(11, 0, 100);
    let (na, nb) = (compute_ner(&model, &a.output, 100_000, key).unwrap(), compute_ner(&model, &b.output, 100_000, key).unwrap());
    assert!((na - nb).abs() <= 0.05 * na.abs().max(nb.abs()), "{na} vs {nb}");
}

#[test]
fn zero_cost_specialized_run_is_seed_independent() {
    let model = single_product(10, 0.0, 6.0);
    let schedule = ExperimentSchedule::new(10).unwrap();
    let run = |seed| {
        let opts = PsgOptions {
            schedule: &schedule,
            delta: DeltaPolicy::Ogd { initial: 0.0 },
            control: control(StopRule::iterations(50), OutputPolicy::Last, seed),
        };
        run_psg_specialized(&model, &[0.5], &opts).unwrap()
    };
    let (a, b) = (run(12), run(13));
    assert_eq!(a.output, b.output);
    assert!(a.trace.iter().zip(&b.trace).all(|(p, q)| p.x == q.x && p.x_ag == q.x_ag));
}

#[test]
fn budget_stop_rule_ends_run() {
    let model = tiny_multiproduct();
    let schedule = ExperimentSchedule::new(3).unwrap();
    let opts = PsgOptions {
        schedule: &schedule,
        delta: DeltaPolicy::Ogd { initial: 0.0 },
        control: control(StopRule::budget(std::time::Duration::from_millis(200)), OutputPolicy::Last, 14),
    };
    let rec = run_psg(&model, &[1.0, 1.0], &opts).unwrap();
    assert!(rec.iterations > 0);
    assert!(rec.wall_seconds < 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn iterates_stay_in_box(x0 in 0.1f64..5.0, x1 in 0.1f64..5.0, seed in 0u64..10_000, iters in 0usize..40) {
        let model = tiny_multiproduct();
        let schedule = ExperimentSchedule::new(3).unwrap();
        let opts = PsgOptions {
            schedule: &schedule,
            delta: DeltaPolicy::Ogd { initial: 0.0 },
            control: control(StopRule::iterations(iters), OutputPolicy::Last, seed),
        };
        prop_assert!(run_psg(&model, &[x0, x1], &opts).unwrap().trace_feasible(&model));
        prop_assert!(run_psg_specialized(&model, &[x0, x1], &opts).unwrap().trace_feasible(&model));
    }
}
