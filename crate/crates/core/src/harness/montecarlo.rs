use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::{estimate_ms, residualize, simulate};
use crate::error::Result;
use crate::gmm::{cue_objective, MomentSystem, Theta};
use crate::rng::derive_seed;
use crate::stats::chi2_quantile;

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub theta_hat: Option<Theta>,
    pub std_errors: Option<Theta>,
    /// Whether the Wald intervals for `a` and `b` cover the truth.
    pub wald_covers: Option<[bool; 2]>,
    /// `S(θ0)`.
    pub ar_statistic: Option<f64>,
    pub ar_covers: Option<bool>,
    pub boundary_hit: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Coverage {
    pub wald_a: f64,
    pub wald_b: f64,
    pub ar: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub base_seed: u64,
    pub truth: Theta,
    pub level: f64,
    pub succeeded: usize,
    pub failed: usize,
    pub bias: Theta,
    pub sd: Theta,
    pub rmse: Theta,
    /// Among successful replications; each rate lies in `[0, 1]`.
    pub coverage: Coverage,
    /// `1 - coverage`, i.e. rejection of the true parameter.
    pub rejection: Coverage,
    pub per_replication: Vec<ReplicationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

fn replicate(cfg: &ExperimentConfig, index: usize, wald_z: f64, ar_crit: f64) -> ReplicationResult {
    let seed = derive_seed(cfg.replication.base_seed, index as u64);
    let truth = Theta::new(cfg.dgp.params.alpha1, cfg.dgp.params.beta1);
    let run = || -> Result<ReplicationResult> {
        let data = simulate(cfg, seed)?;
        let ms = MomentSystem::build(&residualize(&data, &cfg.estimator)?)?;
        let fit = estimate_ms(&ms, &cfg.estimator)?;
        let s0 = ms.n() as f64 * cue_objective(&ms, truth, cfg.estimator.omega_kind)?;
        let covers = |est: f64, se: f64, t: f64| (est - t).abs() <= wald_z * se;
        Ok(ReplicationResult {
            index,
            seed,
            theta_hat: Some(fit.theta_hat),
            std_errors: Some(fit.std_errors),
            wald_covers: Some([
                covers(fit.theta_hat.a, fit.std_errors.a, truth.a),
                covers(fit.theta_hat.b, fit.std_errors.b, truth.b),
            ]),
            ar_statistic: Some(s0),
            ar_covers: Some(s0 <= ar_crit),
            boundary_hit: Some(fit.boundary_hit),
            error: None,
        })
    };
    run().unwrap_or_else(|e| ReplicationResult {
        index,
        seed,
        theta_hat: None,
        std_errors: None,
        wald_covers: None,
        ar_statistic: None,
        ar_covers: None,
        boundary_hit: None,
        error: Some(e.to_string()),
    })
}

/// Replication `i` uses seed `derive_seed(base_seed, i)`; results are
/// collected in index order, so output does not depend on the pool size.
/// Failed replications are recorded and the run continues.
pub fn montecarlo(cfg: &ExperimentConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let start = Instant::now();
    let p = cfg.estimator.p;
    let wald_z = chi2_quantile(1.0 - p, 1.0).sqrt();
    let m = (cfg.dgp.shifters.dim_zd + cfg.dgp.shifters.dim_zs) as f64;
    let ar_crit = chi2_quantile(1.0 - p, m);
    let per_replication: Vec<ReplicationResult> = (0..cfg.replication.count)
        .into_par_iter()
        .map(|i| replicate(cfg, i, wald_z, ar_crit))
        .collect();

    let truth = Theta::new(cfg.dgp.params.alpha1, cfg.dgp.params.beta1);
    let ok: Vec<&ReplicationResult> = per_replication.iter().filter(|r| r.error.is_none()).collect();
    let k = ok.len() as f64;
    let pick = |f: &dyn Fn(&ReplicationResult) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
    let a: Vec<f64> = pick(&|r| r.theta_hat.unwrap().a);
    let b: Vec<f64> = pick(&|r| r.theta_hat.unwrap().b);
    let moments = |xs: &[f64], t: f64| {
        let mean = xs.iter().sum::<f64>() / k;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let mse = xs.iter().map(|x| (x - t).powi(2)).sum::<f64>() / k;
        (mean - t, var.sqrt(), mse.sqrt())
    };
    let (bias_a, sd_a, rmse_a) = moments(&a, truth.a);
    let (bias_b, sd_b, rmse_b) = moments(&b, truth.b);
    let rate = |f: &dyn Fn(&ReplicationResult) -> bool| ok.iter().filter(|r| f(r)).count() as f64 / k;
    let coverage = Coverage {
        wald_a: rate(&|r| r.wald_covers.unwrap()[0]),
        wald_b: rate(&|r| r.wald_covers.unwrap()[1]),
        ar: rate(&|r| r.ar_covers.unwrap()),
    };
    Ok(MonteCarloReport {
        replications: cfg.replication.count,
        base_seed: cfg.replication.base_seed,
        truth,
        level: 1.0 - p,
        succeeded: ok.len(),
        failed: per_replication.len() - ok.len(),
        bias: Theta::new(bias_a, bias_b),
        sd: Theta::new(sd_a, sd_b),
        rmse: Theta::new(rmse_a, rmse_b),
        rejection: Coverage {
            wald_a: 1.0 - coverage.wald_a,
            wald_b: 1.0 - coverage.wald_b,
            ar: 1.0 - coverage.ar,
        },
        coverage,
        per_replication,
        timing_seconds: cfg.output.include_timing.then(|| start.elapsed().as_secs_f64()),
    })
}

pub fn run_montecarlo(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(&montecarlo(cfg)?)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::estimate;

    #[test]
    fn single_replication_matches_estimate() {
        let mut cfg = ExperimentConfig::default();
        cfg.dgp.n = 200;
        cfg.replication.count = 1;
        let report = montecarlo(&cfg).unwrap();
        let data = simulate(&cfg, derive_seed(cfg.replication.base_seed, 0)).unwrap();
        let fit = estimate(&data, &cfg.estimator).unwrap();
        assert_eq!(report.per_replication[0].theta_hat, Some(fit.theta_hat));
        assert_eq!(report.succeeded, 1);
    }

    #[test]
    fn coverage_in_unit_interval_and_failures_recorded() {
        let mut cfg = ExperimentConfig::default();
        cfg.dgp.n = 100;
        cfg.replication.count = 20;
        let report = montecarlo(&cfg).unwrap();
        for c in [report.coverage.wald_a, report.coverage.wald_b, report.coverage.ar] {
            assert!((0.0..=1.0).contains(&c));
        }
        assert_eq!(report.per_replication.len(), 20);
        assert!(report.timing_seconds.is_none());

        // zero instrument loadings with zero shifter noise: every fit fails
        cfg.dgp.shifters.zd_sd = vec![0.0, 0.0];
        cfg.dgp.shifters.zs_sd = vec![0.0, 0.0];
        let report = montecarlo(&cfg).unwrap();
        assert_eq!(report.failed, 20);
        assert!(report.per_replication.iter().all(|r| r.error.is_some()));
    }
}
