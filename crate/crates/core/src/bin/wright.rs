use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wright_core::counterfactual::RevenueTerms;
use wright_core::dag::{build_wright_dag, Dag, SeparationQuery};
use wright_core::dataset::Dataset;
use wright_core::error::{Error, ErrorClass, Result};
use wright_core::gmm::{InformationMode, OmegaKind};
use wright_core::harness::{self, EstimatorMethod, ExperimentConfig};
use wright_core::partialing::PartialMethod;
use wright_core::weak_id::RegionKind;

#[derive(Parser)]
#[command(name = "wright", version, about = "Demand and supply elasticities from shifter instruments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV; without it a dataset is simulated from the config
    #[arg(long)]
    data: Option<PathBuf>,
    /// Prepend a constant column to W when reading --data
    #[arg(long)]
    add_constant: bool,
    /// Sample size when simulating
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Clone)]
struct EstimatorArgs {
    #[arg(long, value_parser = parse::<EstimatorMethod>)]
    method: Option<EstimatorMethod>,
    #[arg(long)]
    k_steps: Option<usize>,
    /// full | limited
    #[arg(long, value_parser = parse::<InformationMode>)]
    mode: Option<InformationMode>,
    /// centered | uncentered | nw | nw:LAGS
    #[arg(long, value_parser = parse::<OmegaKind>)]
    omega: Option<OmegaKind>,
    /// ols | lasso
    #[arg(long, value_parser = parse_partial)]
    partial: Option<PartialMethod>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Estimate the elasticities; writes the fit as JSON
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimatorArgs,
    },
    /// Weak-identification robust confidence region on a grid; writes CSV
    Region {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimatorArgs,
        /// ar | clr
        #[arg(long = "region", default_value = "ar", value_parser = parse::<RegionKind>)]
        kind: RegionKind,
        /// Confidence level 1 - p
        #[arg(long)]
        level: Option<f64>,
        /// Points per axis
        #[arg(long)]
        grid: Option<usize>,
        /// Simulation draws per grid point (clr)
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Monte Carlo experiment; writes a JSON report
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        est: EstimatorArgs,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Include wall-clock timing (output is then not reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Tariff counterfactual; one row for --tau, else the welfare curve
    Counterfactual {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        alpha1: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta1: Option<f64>,
        /// Take the elasticities from a fit JSON written by `estimate`
        #[arg(long, conflicts_with_all = ["alpha1", "beta1"])]
        fit: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        tau_max: Option<f64>,
        #[arg(long)]
        tau_step: Option<f64>,
        /// cubic | quadratic
        #[arg(long, value_parser = parse::<RevenueTerms>)]
        terms: Option<RevenueTerms>,
    },
    /// d-separation query on a graph file or the built-in demand/supply graph
    Dsep {
        #[command(flatten)]
        common: Common,
        /// Edge-list file (`parent -> child` lines)
        #[arg(long, conflicts_with = "wright")]
        graph: Option<PathBuf>,
        /// Use the built-in demand/supply graph
        #[arg(long)]
        wright: bool,
        /// Include the control node W in the built-in graph
        #[arg(long, requires = "wright")]
        with_w: bool,
        /// Comma-separated node labels
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        z: Vec<String>,
    },
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse::<T>().map_err(|e| e.to_string())
}

fn parse_partial(s: &str) -> std::result::Result<PartialMethod, String> {
    match s {
        "ols" => Ok(PartialMethod::Ols),
        "lasso" => Ok(PartialMethod::Lasso),
        other => Err(format!("unknown partialing method `{other}`")),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_estimator(cfg: &mut ExperimentConfig, est: &EstimatorArgs) {
    let e = &mut cfg.estimator;
    if let Some(m) = est.method {
        e.method = m;
    }
    if let Some(k) = est.k_steps {
        e.k_steps = k;
    }
    if let Some(m) = est.mode {
        e.mode = m;
    }
    if let Some(o) = est.omega {
        e.omega_kind = o;
    }
    if let Some(p) = est.partial {
        e.partial = p;
    }
    if est.lambda.is_some() {
        e.lasso_lambda = est.lambda;
    }
}

fn dataset(cfg: &ExperimentConfig, data: &DataArgs, seed: u64) -> Result<Dataset> {
    match &data.data {
        Some(path) => harness::load_dataset(path, data.add_constant),
        None => harness::simulate(cfg, seed),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, n } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n {
                cfg.dgp.n = n;
            }
            cfg.validate()?;
            let seed = common.seed.unwrap_or(cfg.replication.base_seed);
            let text = harness::with_threads(common.threads, || harness::run_simulate(&cfg, seed))??;
            emit(&common.out, &text)
        }
        Command::Estimate { common, data, est } => {
            let mut cfg = load_config(&common)?;
            apply_estimator(&mut cfg, &est);
            if let Some(n) = data.n {
                cfg.dgp.n = n;
            }
            cfg.validate()?;
            let seed = common.seed.unwrap_or(cfg.replication.base_seed);
            let text = harness::with_threads(common.threads, || {
                harness::run_estimate(&dataset(&cfg, &data, seed)?, &cfg.estimator)
            })??;
            emit(&common.out, &text)
        }
        Command::Region { common, data, est, kind, level, grid, draws } => {
            let mut cfg = load_config(&common)?;
            apply_estimator(&mut cfg, &est);
            if let Some(n) = data.n {
                cfg.dgp.n = n;
            }
            if let Some(level) = level {
                cfg.estimator.p = 1.0 - level;
            }
            if let Some(g) = grid {
                cfg.estimator.region_grid = g;
            }
            if let Some(d) = draws {
                cfg.estimator.clr_draws = d;
            }
            cfg.validate()?;
            let seed = common.seed.unwrap_or(cfg.replication.base_seed);
            let text = harness::with_threads(common.threads, || {
                harness::run_region(&dataset(&cfg, &data, seed)?, &cfg.estimator, kind, seed)
            })??;
            emit(&common.out, &text)
        }
        Command::Montecarlo { common, est, reps, n, timing } => {
            let mut cfg = load_config(&common)?;
            apply_estimator(&mut cfg, &est);
            if let Some(r) = reps {
                cfg.replication.count = r;
            }
            if let Some(n) = n {
                cfg.dgp.n = n;
            }
            if let Some(s) = common.seed {
                cfg.replication.base_seed = s;
            }
            cfg.output.include_timing |= timing;
            cfg.validate()?;
            let text = harness::with_threads(common.threads, || harness::run_montecarlo(&cfg))??;
            emit(&common.out, &text)
        }
        Command::Counterfactual { common, alpha1, beta1, fit, tau, tau_max, tau_step, terms } => {
            let mut cfg = load_config(&common)?;
            let c = &mut cfg.counterfactual;
            if let Some(t) = tau_max {
                c.tau_max = t;
            }
            if let Some(t) = tau_step {
                c.tau_step = t;
            }
            if let Some(t) = terms {
                c.revenue_terms = t;
            }
            cfg.validate()?;
            let (a, b) = match (fit, alpha1, beta1) {
                (Some(path), _, _) => {
                    let t = harness::elasticities_from_fit_json(&std::fs::read_to_string(path)?)?;
                    (t.a, t.b)
                }
                (None, Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Config("give --alpha1 and --beta1, or --fit".into())),
            };
            let text = harness::run_counterfactual(a, b, tau, &cfg.counterfactual)?;
            emit(&common.out, &text)
        }
        Command::Dsep { common, graph, wright, with_w, x, y, z } => {
            let dag = match (graph, wright) {
                (Some(path), false) => Dag::parse(&std::fs::read_to_string(path)?)?,
                (None, true) => build_wright_dag(with_w),
                _ => return Err(Error::Config("give --graph FILE or --wright".into())),
            };
            let refs = |v: &[String]| v.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            let query = SeparationQuery {
                x: refs(&x),
                y: refs(&y),
                z: refs(&z),
            };
            emit(&common.out, &harness::run_dsep(&dag, &query)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}
