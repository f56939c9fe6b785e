use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use ddprice::apps::{truncgp, HotLaneSpec};
use ddprice::harness::{
    self, format_summary, gen_from_prices, gen_synthetic, read_csv, read_price_list, run_check_suite, summarize,
    write_csv, BenchConfig, CellSettings, InstanceSpec, MethodConfig, SyntheticConfig,
};
use ddprice::{Error, StopRule};

#[derive(Parser)]
#[command(name = "ddprice", version, about = "Price optimization under decision-dependent demand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Multiproduct,
    HotLane,
    TruncGp,
}

#[derive(Subcommand)]
enum Command {
    /// Write an instance file.
    Gen {
        #[arg(long, value_enum, default_value = "multiproduct")]
        model: ModelKind,
        /// Products (multiproduct), intervals (hot lane) or items (truncated GP).
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Buyers (multiproduct) or drivers per interval (hot lane).
        #[arg(long, default_value_t = 200)]
        m: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take attractiveness constants from a price list, one per line.
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one method on one instance and print its record as JSON.
    Run {
        #[arg(long)]
        instance: PathBuf,
        /// Method table in the bench config syntax, e.g. `name = "l2-rgd"` or `name = "proposed"`.
        #[arg(long, default_value = "proposed")]
        method: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        budget_seconds: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = harness::NER_SAMPLES)]
        ner_samples: usize,
        /// Omit the trace from the output.
        #[arg(long)]
        brief: bool,
    },
    /// Run a benchmark config and write one CSV row per (instance, method).
    Bench {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite on desk-scale instances.
    Check {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Aggregate a bench CSV into NER mean and standard deviation per method.
    Summarize { csv: PathBuf },
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericDomain(_) => Failure::Numeric(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_method(text: &str) -> Result<MethodConfig, Failure> {
    let src = if text.contains('=') { text.to_string() } else { format!("name = {text:?}") };
    toml::from_str(&src).map_err(|e| Failure::Config(format!("method: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { model, n, m, seed, prices, out } => {
            let seed = harness::root_seed(seed)?;
            let spec = match model {
                ModelKind::Multiproduct => {
                    let cfg = SyntheticConfig::new(n, m, seed);
                    InstanceSpec::Multiproduct(match prices {
                        Some(p) => gen_from_prices(&cfg, &read_price_list(&p)?)?,
                        None => gen_synthetic(&cfg)?,
                    })
                }
                ModelKind::HotLane => InstanceSpec::HotLane(HotLaneSpec::illustrative(&vec![m; n])),
                ModelKind::TruncGp => InstanceSpec::TruncGp(truncgp::illustrative_spec(n, 8, seed)?),
            };
            output(&out)?.write_all(spec.to_toml()?.as_bytes())?;
        }
        Command::Run { instance, method, iterations, budget_seconds, seed, ner_samples, brief } => {
            let inst = InstanceSpec::load(&instance)?.build()?;
            let method = parse_method(&method)?;
            let stop = StopRule { max_iterations: iterations, budget: budget_seconds.map(Duration::from_secs_f64) };
            if iterations.is_none() && budget_seconds.is_none() {
                return Err(Failure::Config("give --iterations, --budget-seconds, or both".into()));
            }
            let cell = CellSettings {
                root_seed: harness::root_seed(seed)?,
                instance_id: 0,
                stop,
                ner_samples,
                trace_capacity: ddprice::record::TRACE_CAPACITY,
            };
            let mut record = harness::run_method(&inst, &method, &cell)?;
            if brief {
                record.trace.clear();
            }
            let text = serde_json::to_string_pretty(&record).map_err(|e| Failure::Config(e.to_string()))?;
            println!("{text}");
        }
        Command::Bench { config, out } => {
            let cfg = BenchConfig::load(&config)?;
            let rows = harness::run_benchmark(&cfg)?;
            write_csv(&rows, output(&out)?)?;
            eprint!("{}", format_summary(&summarize(&rows)));
        }
        Command::Check { samples, seed, json } => {
            let report = run_check_suite(samples, harness::root_seed(seed)?)?;
            print!("{}", report.table());
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Config(e.to_string()))?;
                std::fs::write(p, text)?;
            }
            if !report.passed() {
                return Err(Failure::Numeric("oracle checks failed".into()));
            }
        }
        Command::Summarize { csv } => {
            let rows = read_csv(File::open(&csv)?)?;
            print!("{}", format_summary(&summarize(&rows)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
