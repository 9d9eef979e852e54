use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::counterfactual::RevenueTerms;
use crate::error::{Error, Result};
use crate::gmm::{GmmOptions, InformationMode, OmegaKind, ThetaBox};
use crate::partialing::PartialMethod;
use crate::structural::{ShifterSpec, StructuralParams};
use crate::weak_id::LrOptions;

/// Full experiment description. Every block has defaults, so `{}` is a
/// valid config: a strong-instrument design with two shifters per curve
/// and a constant control.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub estimator: EstimatorConfig,
    pub replication: ReplicationConfig,
    pub counterfactual: CounterfactualConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub params: StructuralParams,
    pub shifters: ShifterSpec,
    pub n: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let mut params = StructuralParams::elasticities(-0.8, 0.9);
        params.alpha2 = vec![1.0, 1.0];
        params.beta2 = vec![1.0, 1.0];
        params.alpha3 = vec![0.0];
        params.beta3 = vec![0.0];
        params.sigma_d = 1.0;
        params.sigma_s = 1.0;
        Self {
            params,
            shifters: ShifterSpec::independent(2, 2, 1, true),
            n: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMethod {
    Gmm,
    Cue,
}

impl std::str::FromStr for EstimatorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(Self::Gmm),
            "cue" => Ok(Self::Cue),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: EstimatorMethod,
    pub k_steps: usize,
    pub mode: InformationMode,
    pub omega_kind: OmegaKind,
    pub partial: PartialMethod,
    /// Fixed LASSO penalty; `None` uses the plug-in rule.
    pub lasso_lambda: Option<f64>,
    pub theta_box: ThetaBox,
    pub cue_grid: usize,
    /// Per-axis resolution of confidence-region grids.
    pub region_grid: usize,
    /// Per-axis grid for the per-draw CLR infimum.
    pub clr_draw_grid: usize,
    pub clr_draws: usize,
    /// Test size `p`; regions have level `1 - p`.
    pub p: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: EstimatorMethod::Gmm,
            k_steps: 2,
            mode: InformationMode::FullInformation,
            omega_kind: OmegaKind::IidCentered,
            partial: PartialMethod::Ols,
            lasso_lambda: None,
            theta_box: ThetaBox::default(),
            cue_grid: 61,
            region_grid: 61,
            clr_draw_grid: 31,
            clr_draws: 1000,
            p: 0.05,
        }
    }
}

impl EstimatorConfig {
    pub fn gmm_options(&self) -> GmmOptions {
        GmmOptions {
            k_steps: self.k_steps,
            mode: self.mode,
            omega_kind: self.omega_kind,
        }
    }

    pub fn lr_options(&self, seed: u64) -> LrOptions {
        LrOptions {
            grid: self.cue_grid,
            draw_grid: self.clr_draw_grid,
            tol: 1e-8,
            draws: self.clr_draws,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub count: usize,
    pub base_seed: u64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            count: 100,
            base_seed: 20260101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub tau_max: f64,
    pub tau_step: f64,
    pub revenue_terms: RevenueTerms,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            tau_max: 0.5,
            tau_step: 1e-3,
            revenue_terms: RevenueTerms::Cubic,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    /// Wall-clock timing makes reports non-reproducible, so it is opt-in.
    pub include_timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Io(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.dgp.params.validate_against(&self.dgp.shifters).map_err(cfg)?;
        if self.dgp.n < 2 {
            return Err(Error::Config("dgp.n must be at least 2".into()));
        }
        let e = &self.estimator;
        if e.k_steps < 1 {
            return Err(Error::Config("estimator.k_steps must be >= 1".into()));
        }
        e.theta_box.validate().map_err(cfg)?;
        if e.cue_grid < 2 || e.region_grid < 2 || e.clr_draw_grid < 2 {
            return Err(Error::Config("grid resolutions must be >= 2".into()));
        }
        if !(e.p > 0.0 && e.p < 1.0) {
            return Err(Error::Config("estimator.p must lie in (0, 1)".into()));
        }
        if let Some(l) = e.lasso_lambda {
            if !(l >= 0.0) {
                return Err(Error::Config("estimator.lasso_lambda must be >= 0".into()));
            }
        }
        if self.replication.count < 1 {
            return Err(Error::Config("replication.count must be >= 1".into()));
        }
        let c = &self.counterfactual;
        if !(c.tau_step > 0.0) || !(0.0..1.0).contains(&c.tau_max) {
            return Err(Error::Config("counterfactual grid needs tau_step > 0 and tau_max in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_override_and_rejections() {
        let cfg = ExperimentConfig::from_json(r#"{"dgp": {"n": 50}, "estimator": {"omega_kind": {"kind": "newey_west", "lags": 2}}}"#).unwrap();
        assert_eq!(cfg.dgp.n, 50);
        assert_eq!(cfg.estimator.omega_kind, OmegaKind::NeweyWest { lags: Some(2) });
        assert_eq!(cfg.dgp.params.alpha1, -0.8);
        assert!(matches!(ExperimentConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"replication": {"count": 0}}"#), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"dgp": {"params": {"alpha1": 1.0, "beta1": 1.0}}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
