//! Instance generation, NER evaluation and budgeted method comparison.
//!
//! A benchmark is described by a TOML file:
//!
//! ```toml
//! seed = 1                 # root seed; overridden by DDPRICE_SEED
//! budget_seconds = 60.0    # per (instance, method) cell
//! # max_iterations = 500   # optional cap, may be combined with the budget
//! ner_samples = 1000
//! timings = true           # false leaves wall_seconds empty
//!
//! [generator]              # synthetic multiproduct instances
//! count = 5
//! n = 20
//! m = 200
//! seed = 100               # instance i uses seed + i
//! # prices_file = "prices.txt"
//!
//! [[instance]]             # instance files written by `ddprice gen`
//! path = "inst.toml"
//!
//! [[method]]
//! name = "proposed"        # baseline = "ogd" | "fixed" | "zero"
//! [[method]]
//! name = "l2-rgd"
//! alpha = 1.0
//! ```
//!
//! Results are one CSV row per (instance, method) in configuration order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::apps::{HotLaneModel, HotLaneSpec, MultiproductModel, MultiproductSpec, ScalarMap, TruncGpModel, TruncGpSpec};
use crate::baselines::{run_l2_rgd, run_psd_ad, run_random_search, run_spsa, L2RgdOptions, PsdAdOptions, RandomSearchOptions};
use crate::error::{Error, Result};
use crate::estimator::reduce_batch;
use crate::model::{MultiAgentModel, ProblemModel};
use crate::optimizer::{run_psg, run_psg_specialized, DeltaPolicy, ExperimentSchedule, PsgOptions};
use crate::record::{OutputPolicy, RunControl, RunRecord, StopRule, TRACE_CAPACITY};
use crate::rng::{method_id, StreamKey};

pub use crate::ner::{compute_ner, NER_SAMPLES};

/// Environment variable that overrides the root seed.
pub const SEED_ENV: &str = "DDPRICE_SEED";

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Root seed from [`SEED_ENV`] if set, else `fallback`.
pub fn root_seed(fallback: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub m: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_alpha_range")]
    pub alpha_range: (f64, f64),
    /// Cost rate `w_i` is drawn from `alpha_i * [lo, hi]`.
    #[serde(default = "default_cost_range")]
    pub cost_range: (f64, f64),
    /// `a_0 = no_buy_per_product * n`.
    #[serde(default = "default_no_buy")]
    pub no_buy_per_product: f64,
}

fn default_x_min() -> f64 {
    0.01
}
fn default_x_max() -> f64 {
    10.0
}
fn default_alpha_range() -> (f64, f64) {
    (0.01, 1.0)
}
fn default_cost_range() -> (f64, f64) {
    (0.25, 0.5)
}
fn default_no_buy() -> f64 {
    0.25
}

impl SyntheticConfig {
    pub fn new(n: usize, m: u64, seed: u64) -> Self {
        Self {
            n,
            m,
            seed,
            x_min: default_x_min(),
            x_max: default_x_max(),
            alpha_range: default_alpha_range(),
            cost_range: default_cost_range(),
            no_buy_per_product: default_no_buy(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config("generator needs n >= 1"));
        }
        let (a, b) = self.alpha_range;
        if !(0.0 < a && a <= b) {
            return Err(config("alpha_range must satisfy 0 < lo <= hi"));
        }
        let (c, d) = self.cost_range;
        if !(0.0 <= c && c <= d) {
            return Err(config("cost_range must satisfy 0 <= lo <= hi"));
        }
        if !(self.no_buy_per_product > 0.0) {
            return Err(config("no_buy_per_product must be positive"));
        }
        Ok(())
    }
}

/// Synthetic multiproduct instance: `alpha_i ~ U[alpha_range]`,
/// `gamma_i = 2 pi / (sqrt 6 alpha_i)`, `a_0 = 0.25 n`, cost rate
/// `w_i ~ U[0.25 alpha_i, 0.5 alpha_i]` with slopes `(2w, w, 3w)` and knots
/// `(0.5 m / n, 1.5 m / n)`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<MultiproductSpec> {
    cfg.validate()?;
    let mut rng = StreamKey::new(cfg.seed, 0, method_id::GENERATOR).rng(0, 0);
    let (lo, hi) = cfg.alpha_range;
    let alpha: Vec<f64> = (0..cfg.n).map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo }).collect();
    build_multiproduct(cfg, alpha, &mut rng)
}

/// Like [`gen_synthetic`] with `alpha_i` taken from observed prices.
pub fn gen_from_prices(cfg: &SyntheticConfig, prices: &[f64]) -> Result<MultiproductSpec> {
    if prices.is_empty() {
        return Err(config("price list is empty"));
    }
    if let Some(p) = prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(config(format!("prices must be positive, found {p}")));
    }
    let cfg = SyntheticConfig { n: prices.len(), ..cfg.clone() };
    cfg.validate()?;
    let mut rng = StreamKey::new(cfg.seed, 0, method_id::GENERATOR).rng(0, 0);
    build_multiproduct(&cfg, prices.to_vec(), &mut rng)
}

fn build_multiproduct(cfg: &SyntheticConfig, alpha: Vec<f64>, rng: &mut impl Rng) -> Result<MultiproductSpec> {
    let n = alpha.len();
    let m = cfg.m as f64;
    let (clo, chi) = cfg.cost_range;
    let costs = alpha
        .iter()
        .map(|a| {
            let w = if clo < chi { rng.random_range(clo * a..chi * a) } else { clo * a };
            ScalarMap::ThreePiece {
                eta1: 2.0 * w,
                eta2: w,
                eta3: 3.0 * w,
                lower: 0.5 * m / n as f64,
                upper: 1.5 * m / n as f64,
            }
        })
        .collect();
    let spec = MultiproductSpec {
        buyers: cfg.m,
        sensitivity: alpha.iter().map(|a| 2.0 * std::f64::consts::PI / (6f64.sqrt() * a)).collect(),
        attractiveness: alpha,
        no_buy_weight: cfg.no_buy_per_product * n as f64,
        x_min: cfg.x_min,
        x_max: cfg.x_max,
        costs,
    };
    spec.validate()?;
    Ok(spec)
}

/// One price per line; blank lines and `#` comments are skipped.
pub fn read_price_list(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|_| config(format!("{}:{}: cannot parse price {t:?}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// An instance file: one of the three pricing models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum InstanceSpec {
    Multiproduct(MultiproductSpec),
    HotLane(HotLaneSpec),
    TruncGp(TruncGpSpec),
}

impl InstanceSpec {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(format!("cannot serialize instance: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config(format!("malformed instance: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<Instance> {
        Ok(match self {
            InstanceSpec::Multiproduct(s) => Instance::Multiproduct(MultiproductModel::new(s.clone())?),
            InstanceSpec::HotLane(s) => Instance::HotLane(HotLaneModel::new(s.clone())?),
            InstanceSpec::TruncGp(s) => Instance::TruncGp(TruncGpModel::new(s.clone())?),
        })
    }
}

/// A constructed model.
#[derive(Clone, Debug)]
pub enum Instance {
    Multiproduct(MultiproductModel),
    HotLane(HotLaneModel),
    TruncGp(TruncGpModel),
}

impl Instance {
    pub fn problem(&self) -> &dyn ProblemModel {
        match self {
            Instance::Multiproduct(m) => m,
            Instance::HotLane(m) => m,
            Instance::TruncGp(m) => m,
        }
    }

    pub fn multi_agent(&self) -> Option<&dyn MultiAgentModel> {
        match self {
            Instance::Multiproduct(m) => Some(m),
            Instance::HotLane(m) => Some(m),
            Instance::TruncGp(_) => None,
        }
    }

    /// Scale `m` of the experiment schedule: buyers, total drivers, or total
    /// demand capacity.
    pub fn schedule_scale(&self) -> u64 {
        let s = match self {
            Instance::Multiproduct(m) => m.spec().buyers,
            Instance::HotLane(m) => m.spec().intervals.iter().map(|i| i.drivers).sum(),
            Instance::TruncGp(m) => m.spec().items.iter().map(|i| i.demand_cap).sum::<f64>().ceil() as u64,
        };
        s.max(1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineSetting {
    /// Running mean of observed costs, starting at `delta0`.
    #[default]
    Ogd,
    /// Mean cost at the start point over [`NER_SAMPLES`] draws, held fixed.
    Fixed,
    /// `delta = 0`.
    Zero,
}

fn default_rgd_alpha() -> f64 {
    1.0
}
fn default_rgd_step() -> f64 {
    0.01
}
fn default_rgd_batch() -> usize {
    100
}
fn default_shrink() -> f64 {
    0.9
}
fn default_draws() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    /// Accelerated method with the multi-agent estimator.
    Proposed {
        #[serde(default)]
        baseline: BaselineSetting,
        #[serde(default)]
        delta0: f64,
    },
    /// Accelerated method with the general score-function estimator.
    ProposedGeneral {
        #[serde(default)]
        baseline: BaselineSetting,
        #[serde(default)]
        delta0: f64,
    },
    L2Rgd {
        #[serde(default = "default_rgd_alpha")]
        alpha: f64,
        #[serde(default = "default_rgd_step")]
        step: f64,
        #[serde(default = "default_rgd_batch")]
        batch: usize,
    },
    Spsa,
    PsdAd {
        #[serde(default = "default_shrink")]
        shrink: f64,
    },
    RandomSearch {
        #[serde(default = "default_draws")]
        draws: usize,
    },
}

impl MethodConfig {
    /// Label used in result rows.
    pub fn label(&self) -> String {
        match self {
            MethodConfig::Proposed { baseline, .. } | MethodConfig::ProposedGeneral { baseline, .. } => {
                let base = if matches!(self, MethodConfig::Proposed { .. }) { "proposed" } else { "proposed-general" };
                match baseline {
                    BaselineSetting::Ogd => base.to_string(),
                    BaselineSetting::Fixed => format!("{base}-fixed-delta"),
                    BaselineSetting::Zero => format!("{base}-zero-delta"),
                }
            }
            MethodConfig::L2Rgd { alpha, .. } => format!("l2-rgd(alpha={alpha})"),
            MethodConfig::Spsa => "spsa".into(),
            MethodConfig::PsdAd { .. } => "psd-ad".into(),
            MethodConfig::RandomSearch { .. } => "random-search".into(),
        }
    }

    fn stream_id(&self) -> u64 {
        match self {
            MethodConfig::Proposed { .. } => method_id::PROPOSED,
            MethodConfig::ProposedGeneral { .. } => method_id::PROPOSED_GENERAL,
            MethodConfig::L2Rgd { .. } => method_id::L2_RGD,
            MethodConfig::Spsa => method_id::SPSA,
            MethodConfig::PsdAd { .. } => method_id::PSD_AD,
            MethodConfig::RandomSearch { .. } => method_id::RANDOM_SEARCH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default = "default_count")]
    pub count: usize,
    pub n: Option<usize>,
    pub m: u64,
    #[serde(default)]
    pub seed: u64,
    pub prices_file: Option<PathBuf>,
}

fn default_count() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    pub budget_seconds: Option<f64>,
    pub max_iterations: Option<usize>,
    #[serde(default = "default_ner_samples")]
    pub ner_samples: usize,
    #[serde(default = "default_trace_capacity")]
    pub trace_capacity: usize,
    #[serde(default = "default_true")]
    pub timings: bool,
    pub generator: Option<GeneratorSection>,
    #[serde(default, rename = "instance")]
    pub instances: Vec<InstanceFile>,
    #[serde(rename = "method")]
    pub methods: Vec<MethodConfig>,
}

fn default_ner_samples() -> usize {
    NER_SAMPLES
}
fn default_trace_capacity() -> usize {
    TRACE_CAPACITY
}
fn default_true() -> bool {
    true
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative instance and price paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for inst in &mut cfg.instances {
            if inst.path.is_relative() {
                inst.path = dir.join(&inst.path);
            }
        }
        if let Some(g) = &mut cfg.generator {
            if let Some(p) = &mut g.prices_file {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(config("at least one [[method]] is required"));
        }
        if self.generator.is_none() && self.instances.is_empty() {
            return Err(config("either [generator] or [[instance]] entries are required"));
        }
        if self.budget_seconds.is_none() && self.max_iterations.is_none() {
            return Err(config("set budget_seconds, max_iterations, or both"));
        }
        if let Some(b) = self.budget_seconds {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(config("budget_seconds must be a nonnegative number"));
            }
        }
        if self.ner_samples == 0 {
            return Err(config("ner_samples must be at least 1"));
        }
        if let Some(g) = &self.generator {
            if g.n.is_none() && g.prices_file.is_none() {
                return Err(config("[generator] needs n or prices_file"));
            }
        }
        Ok(())
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule { max_iterations: self.max_iterations, budget: self.budget_seconds.map(Duration::from_secs_f64) }
    }

    /// Instances in configuration order: generated ones first, then files.
    pub fn instances(&self) -> Result<Vec<(String, InstanceSpec)>> {
        let mut out = Vec::new();
        if let Some(g) = &self.generator {
            let prices = match &g.prices_file {
                Some(p) => Some(read_price_list(p)?),
                None => None,
            };
            for i in 0..g.count {
                let cfg = SyntheticConfig::new(g.n.unwrap_or(0), g.m, g.seed + i as u64);
                let spec = match &prices {
                    Some(p) => gen_from_prices(&cfg, p)?,
                    None => gen_synthetic(&cfg)?,
                };
                out.push((format!("synthetic-{}", g.seed + i as u64), InstanceSpec::Multiproduct(spec)));
            }
        }
        for f in &self.instances {
            let name = f.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.push((name, InstanceSpec::load(&f.path)?));
        }
        Ok(out)
    }
}

/// Settings for a single (instance, method) run.
#[derive(Clone, Copy, Debug)]
pub struct CellSettings {
    pub root_seed: u64,
    pub instance_id: u64,
    pub stop: StopRule,
    pub ner_samples: usize,
    pub trace_capacity: usize,
}

/// Mean of `c(xi)` at `x` over [`NER_SAMPLES`] draws.
fn mean_cost(model: &dyn MultiAgentModel, x: &[f64], key: StreamKey) -> Result<f64> {
    let streams = key.iteration(0);
    let s = reduce_batch(NER_SAMPLES, 1, |l, acc| {
        let xi = model.sample(x, &mut streams.sample(l as u64))?;
        acc[0] += model.cost(&xi);
        Ok(())
    })?;
    Ok(s[0] / NER_SAMPLES as f64)
}

/// Mean of `f(x, xi)` at `x` over [`NER_SAMPLES`] draws.
fn mean_objective(model: &dyn ProblemModel, x: &[f64], key: StreamKey) -> Result<f64> {
    compute_ner(model, x, NER_SAMPLES, key)
}

/// Runs one method on one instance from `x0 = 0.5 e` (clamped into the box)
/// and selects the best-NER iterate.
pub fn run_method(instance: &Instance, method: &MethodConfig, cell: &CellSettings) -> Result<RunRecord> {
    let model = instance.problem();
    let b = model.feasible_box();
    let x0 = b.project(&vec![0.5; b.dim])?;
    let streams = StreamKey::new(cell.root_seed, cell.instance_id, method.stream_id());
    let mut control = RunControl::new(cell.stop, OutputPolicy::BestNer { samples: cell.ner_samples }, streams);
    control.trace_capacity = cell.trace_capacity;
    let delta_key = streams.with_method(method_id::DELTA_INIT);
    let need_multi = || {
        instance
            .multi_agent()
            .ok_or_else(|| Error::InvalidArgument(format!("{} needs a multi-agent model", method.label())))
    };
    let mut record = match method {
        MethodConfig::Proposed { baseline, delta0 } => {
            let ma = need_multi()?;
            let schedule = ExperimentSchedule::new(instance.schedule_scale())?;
            let delta = match baseline {
                BaselineSetting::Ogd => DeltaPolicy::Ogd { initial: *delta0 },
                BaselineSetting::Fixed => DeltaPolicy::Fixed(mean_cost(ma, &x0, delta_key)?),
                BaselineSetting::Zero => DeltaPolicy::Fixed(0.0),
            };
            run_psg_specialized(ma, &x0, &PsgOptions { schedule: &schedule, delta, control })?
        }
        MethodConfig::ProposedGeneral { baseline, delta0 } => {
            let schedule = ExperimentSchedule::new(instance.schedule_scale())?;
            let delta = match baseline {
                BaselineSetting::Ogd => DeltaPolicy::Ogd { initial: *delta0 },
                BaselineSetting::Fixed => DeltaPolicy::Fixed(mean_objective(model, &x0, delta_key)?),
                BaselineSetting::Zero => DeltaPolicy::Fixed(0.0),
            };
            run_psg(model, &x0, &PsgOptions { schedule: &schedule, delta, control })?
        }
        MethodConfig::L2Rgd { alpha, step, batch } => {
            run_l2_rgd(model, &x0, &L2RgdOptions { alpha: *alpha, step: *step, batch: *batch }, &control)?
        }
        MethodConfig::Spsa => run_spsa(model, &x0, &control)?,
        MethodConfig::PsdAd { shrink } => {
            run_psd_ad(need_multi()?, &x0, &PsdAdOptions { shrink: *shrink, ..Default::default() }, &control)?
        }
        MethodConfig::RandomSearch { draws } => {
            run_random_search(model, &RandomSearchOptions { draws_per_eval: *draws, seeds: Vec::new() }, &control)?
        }
    };
    record.method = method.label();
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub method: String,
    pub ner: Option<f64>,
    pub wall_seconds: Option<f64>,
    pub iterations: Option<usize>,
    /// Selected price vector, `;`-separated.
    pub x: String,
    pub error: String,
}

/// Runs every configured (instance, method) cell in order. Cells that fail
/// still produce a row carrying the error.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let seed = root_seed(cfg.seed)?;
    let instances = cfg.instances()?;
    let mut rows = Vec::new();
    for (id, (name, spec)) in instances.iter().enumerate() {
        let built = spec.build();
        for method in &cfg.methods {
            let cell = CellSettings {
                root_seed: seed,
                instance_id: id as u64,
                stop: cfg.stop_rule(),
                ner_samples: cfg.ner_samples,
                trace_capacity: cfg.trace_capacity,
            };
            let result = built.as_ref().map_err(|e| Error::InvalidArgument(e.to_string())).and_then(|inst| run_method(inst, method, &cell));
            rows.push(match result {
                Ok(r) => BenchRow {
                    instance: name.clone(),
                    method: method.label(),
                    ner: r.output_ner,
                    wall_seconds: cfg.timings.then_some(r.wall_seconds),
                    iterations: Some(r.iterations),
                    x: r.output.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"),
                    error: String::new(),
                },
                Err(e) => BenchRow {
                    instance: name.clone(),
                    method: method.label(),
                    ner: None,
                    wall_seconds: None,
                    iterations: None,
                    x: String::new(),
                    error: error_tag(&e),
                },
            });
        }
    }
    Ok(rows)
}

fn error_tag(e: &Error) -> String {
    let kind = match e {
        Error::InvalidArgument(_) => "invalid-argument",
        Error::NumericDomain(_) => "numeric-domain",
        Error::SupportTooLarge { .. } => "support-too-large",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
    };
    format!("{kind}: {e}")
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_ner: Option<f64>,
    /// Sample standard deviation across instances.
    pub sd_ner: Option<f64>,
    pub instances: usize,
    pub errors: usize,
}

/// Mean and standard deviation of NER per method, in first-appearance order.
pub fn summarize(rows: &[BenchRow]) -> Vec<MethodSummary> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
    }
    order
        .into_iter()
        .map(|method| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.method == method).filter_map(|r| r.ner).collect();
            let errors = rows.iter().filter(|r| r.method == method && !r.error.is_empty()).count();
            let n = vals.len();
            let mean = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
            let sd = (n > 1).then(|| {
                let m = mean.unwrap();
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            MethodSummary { method, mean_ner: mean, sd_ner: sd, instances: n, errors }
        })
        .collect()
}

/// Text table with one `NER (SD)` line per method.
pub fn format_summary(summary: &[MethodSummary]) -> String {
    let width = summary.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>20}  {:>9}  {:>6}", "method", "NER (SD)", "instances", "errors");
    for s in summary {
        let cell = match (s.mean_ner, s.sd_ner) {
            (Some(m), Some(sd)) => format!("{m:.3} ({sd:.3})"),
            (Some(m), None) => format!("{m:.3} (-)"),
            _ => "-".into(),
        };
        let _ = writeln!(out, "{:<width$}  {:>20}  {:>9}  {:>6}", s.method, cell, s.instances, s.errors);
    }
    out
}


/// Two products, three buyers, three-piece costs.
pub fn tiny_multiproduct() -> MultiproductModel {
    MultiproductModel::new(MultiproductSpec {
        buyers: 3,
        attractiveness: vec![1.0, 1.5],
        sensitivity: vec![0.8, 1.2],
        no_buy_weight: 1.0,
        x_min: 0.1,
        x_max: 5.0,
        costs: vec![
            ScalarMap::ThreePiece { eta1: 0.4, eta2: 0.2, eta3: 0.6, lower: 1.0, upper: 2.0 },
            ScalarMap::ThreePiece { eta1: 0.6, eta2: 0.3, eta3: 0.9, lower: 1.0, upper: 2.0 },
        ],
    })
    .expect("valid tiny instance")
}

pub fn tiny_hotlane() -> HotLaneModel {
    HotLaneModel::new(HotLaneSpec::illustrative(&[4, 5])).expect("valid tiny instance")
}

pub fn tiny_truncgp() -> Result<TruncGpModel> {
    TruncGpModel::new(crate::apps::truncgp::illustrative_spec(2, 6, 11)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub samples: usize,
    pub seed: u64,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4);
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
        }
        out
    }
}

fn z_detail(r: &crate::oracle::UnbiasedReport) -> String {
    let zs: Vec<String> = r.z.iter().map(|z| format!("{z:+.2}")).collect();
    format!("z = [{}], threshold {}", zs.join(", "), r.threshold)
}

/// Oracle suite on desk-scale instances: exact enumeration against finite
/// differences, unbiasedness of both estimators for two baselines, and the
/// variance ceilings.
pub fn run_check_suite(samples: usize, seed: u64) -> Result<CheckReport> {
    use crate::oracle::{
        check_unbiased, check_unbiased_specialized, enumerate_expectation, finite_diff_gradient, truncgp_density_mass,
        truncgp_gradient, Target,
    };
    let mut rows = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| rows.push(CheckRow { name: name.into(), passed, detail });

    let mp = tiny_multiproduct();
    let hl = tiny_hotlane();
    let discrete: [(&str, &dyn MultiAgentModel, Vec<f64>); 2] =
        [("multiproduct", &mp, vec![1.3, 2.2]), ("hot-lane", &hl, vec![1.0, 2.5])];
    for (id, (name, model, x)) in discrete.into_iter().enumerate() {
        let e = model.as_enumerable().expect("enumerable");
        let rep = enumerate_expectation(e, &x)?;
        let total: f64 = rep.probabilities.iter().sum();
        push(&format!("{name}: probabilities sum to 1"), (total - 1.0).abs() < 1e-10, format!("sum = {total:.15}"));
        let fd = finite_diff_gradient(
            |p| enumerate_expectation(e, p).map(|r| r.expectation).unwrap_or(f64::NAN),
            &x,
            1e-5,
        )?;
        let rel = rep
            .gradient
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-12))
            .fold(0.0, f64::max);
        push(&format!("{name}: analytic vs finite-difference grad E[f]"), rel < 1e-5, format!("max rel diff {rel:.2e}"));
        let key = StreamKey::new(seed, id as u64, method_id::ORACLE);
        for (label, delta) in [("delta = 0", 0.0), ("delta = f_max", model.f_max())] {
            let r = check_unbiased(model, &x, delta, samples, 3.0, key, Target::Exact(&rep.gradient))?;
            push(&format!("{name}: general estimator unbiased, {label}"), r.passed, z_detail(&r));
            let bound = (model.lipschitz_f() + 2.0 * model.f_max() * model.score_bound()).powi(2);
            push(
                &format!("{name}: general variance ceiling, {label}"),
                r.mean_sq_error <= bound,
                format!("{:.3e} <= {bound:.3e}", r.mean_sq_error),
            );
        }
        let skey = key.with_method(method_id::ORACLE + 1000);
        for (label, delta) in [("delta = 0", 0.0), ("delta = c_max", model.c_max())] {
            let r = check_unbiased_specialized(model, &x, delta, samples, 3.0, skey, Target::Exact(&rep.gradient))?;
            push(&format!("{name}: specialized estimator unbiased, {label}"), r.passed, z_detail(&r));
            let bound = 4.0 * (model.c_max() * model.score_bound()).powi(2);
            push(
                &format!("{name}: specialized variance ceiling, {label}"),
                r.mean_sq_error <= bound,
                format!("{:.3e} <= {bound:.3e}", r.mean_sq_error),
            );
        }
    }

    let gp = tiny_truncgp()?;
    let x = vec![1.4, 2.0];
    for item in 0..gp.spec().items.len() {
        let mass = truncgp_density_mass(&gp, item, &x, 64, 24)?;
        push(&format!("truncated-GP: density of item {item} integrates to 1"), (mass - 1.0).abs() < 1e-6, format!("{mass:.12}"));
    }
    let target = truncgp_gradient(&gp, &x, 1e-5)?;
    let r = check_unbiased(&gp, &x, 0.0, samples, 3.0, StreamKey::new(seed, 2, method_id::ORACLE), Target::Exact(&target))?;
    push("truncated-GP: general estimator unbiased vs quadrature", r.passed, z_detail(&r));
    Ok(CheckReport { samples, seed, rows })
}
