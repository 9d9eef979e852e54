//! Experiment plumbing behind the `wright` binary. Every `run_*` function
//! returns the exact bytes the CLI writes, so the binary and in-process
//! callers produce identical output.

mod config;
mod montecarlo;

pub use config::{
    CounterfactualConfig, DgpConfig, EstimatorConfig, EstimatorMethod, ExperimentConfig, OutputConfig,
    ReplicationConfig,
};
pub use montecarlo::{montecarlo, run_montecarlo, Coverage, MonteCarloReport, ReplicationResult};

use std::path::Path;

use serde::Serialize;

use crate::counterfactual::{apply_tariff_with, optimal_tariff, tau_grid, TariffScenario};
use crate::dag::{d_separated, enumerate_paths, Dag, SeparationQuery};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::gmm::{cue_ms, iterative_gmm_ms, CovarianceKernel, CueOptions, GmmFit, MomentSystem, Theta};
use crate::partialing::{lasso_partial_out, partial_out, PartialMethod, ResidualizedDataset};
use crate::structural::simulate_dataset;
use crate::weak_id::{ar_region, clr_region, ConfidenceRegion, RegionKind, ThetaGrid};

/// Runs `f` on a dedicated pool of `threads` workers (`None` uses the
/// global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    simulate_dataset(&cfg.dgp.params, &cfg.dgp.shifters, cfg.dgp.n, seed)
}

/// Dataset CSV for the configured design.
pub fn run_simulate(cfg: &ExperimentConfig, seed: u64) -> Result<String> {
    simulate(cfg, seed)?.to_csv_string()
}

pub fn residualize(data: &Dataset, cfg: &EstimatorConfig) -> Result<ResidualizedDataset> {
    match cfg.partial {
        PartialMethod::Ols => partial_out(data),
        PartialMethod::Lasso => lasso_partial_out(data, cfg.lasso_lambda),
    }
}

pub fn estimate_ms(ms: &MomentSystem, cfg: &EstimatorConfig) -> Result<GmmFit> {
    match cfg.method {
        EstimatorMethod::Gmm => iterative_gmm_ms(ms, cfg.gmm_options()),
        EstimatorMethod::Cue => cue_ms(
            ms,
            &cfg.theta_box,
            cfg.omega_kind,
            CueOptions {
                grid: cfg.cue_grid,
                tol: 1e-8,
            },
        ),
    }
}

pub fn estimate(data: &Dataset, cfg: &EstimatorConfig) -> Result<GmmFit> {
    estimate_ms(&MomentSystem::build(&residualize(data, cfg)?)?, cfg)
}

/// Fit as pretty JSON with a trailing newline.
pub fn run_estimate(data: &Dataset, cfg: &EstimatorConfig) -> Result<String> {
    Ok(estimate(data, cfg)?.to_json()? + "\n")
}

pub fn region(data: &Dataset, cfg: &EstimatorConfig, kind: RegionKind, seed: u64) -> Result<ConfidenceRegion> {
    if !cfg.omega_kind.is_iid() {
        return Err(Error::Config("confidence regions need an iid omega kind".into()));
    }
    let ms = MomentSystem::build(&residualize(data, cfg)?)?;
    let kernel = CovarianceKernel::new(&ms, cfg.omega_kind)?;
    let grid = ThetaGrid::spanning(&cfg.theta_box, cfg.region_grid, cfg.region_grid)?;
    match kind {
        RegionKind::Ar => ar_region(&ms, &kernel, &grid, cfg.p),
        RegionKind::Clr => clr_region(&ms, &kernel, &grid, &cfg.theta_box, cfg.p, &cfg.lr_options(seed)),
    }
}

/// Region CSV: `a_value,b_value,statistic,critical,member`.
pub fn run_region(data: &Dataset, cfg: &EstimatorConfig, kind: RegionKind, seed: u64) -> Result<String> {
    region(data, cfg, kind, seed)?.to_csv_string()
}

/// Elasticities from a fit JSON written by `run_estimate`.
pub fn elasticities_from_fit_json(text: &str) -> Result<Theta> {
    #[derive(serde::Deserialize)]
    struct Partial {
        theta_hat: Theta,
    }
    let p: Partial = serde_json::from_str(text).map_err(|e| Error::Config(format!("fit file: {e}")))?;
    Ok(p.theta_hat)
}

/// With `tau`, a single outcome row; otherwise the welfare curve over the
/// configured grid, sorted by `tau`.
pub fn run_counterfactual(alpha1: f64, beta1: f64, tau: Option<f64>, cfg: &CounterfactualConfig) -> Result<String> {
    match tau {
        Some(tau) => {
            let o = apply_tariff_with(&TariffScenario::new(alpha1, beta1, tau), cfg.revenue_terms)?;
            let mut w = csv::Writer::from_writer(vec![]);
            w.write_record([
                "tau",
                "pass_through_c",
                "delta_p",
                "delta_y",
                "p_star",
                "y_star",
                "cs_ratio",
                "revenue_ratio",
                "welfare_sum",
            ])?;
            w.write_record(
                [tau, o.pass_through_c, o.delta_p, o.delta_y, o.p_star, o.y_star, o.cs_change_ratio, o.revenue_ratio, o.welfare_sum]
                    .map(fmt_f64),
            )?;
            Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8"))
        }
        None => {
            let grid = tau_grid(cfg.tau_max, cfg.tau_step)?;
            optimal_tariff(alpha1, beta1, &grid, cfg.revenue_terms)?.to_csv_string()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DsepReport {
    pub query: SeparationQuery,
    pub separated: bool,
    /// Paths between each `x, y` pair, rendered with their status.
    pub paths: Vec<String>,
}

pub fn dsep(dag: &Dag, query: &SeparationQuery) -> Result<DsepReport> {
    let separated = d_separated(dag, query)?;
    let mut paths = vec![];
    for x in &query.x {
        for y in &query.y {
            for p in enumerate_paths(dag, x, y)? {
                let status = if p.is_blocked(dag, &query.z)? { "blocked" } else { "open" };
                let colliders = p.colliders();
                let note = if colliders.is_empty() {
                    String::new()
                } else {
                    format!(" collider: {}", colliders.join(", "))
                };
                paths.push(format!("{p}  [{status}{note}]"));
            }
        }
    }
    Ok(DsepReport {
        query: query.clone(),
        separated,
        paths,
    })
}

/// Plain-text verdict: `separated: true|false` followed by the paths.
pub fn run_dsep(dag: &Dag, query: &SeparationQuery) -> Result<String> {
    let r = dsep(dag, query)?;
    let mut out = format!("query: {}\nseparated: {}\npaths: {}\n", r.query, r.separated, r.paths.len());
    for p in &r.paths {
        out.push_str(&format!("  {p}\n"));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, add_constant: bool) -> Result<Dataset> {
    let d = Dataset::read_csv_path(path)?;
    Ok(if add_constant { d.with_constant() } else { d })
}
