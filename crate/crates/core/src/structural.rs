//! The structural demand/supply system in logs, its market-clearing
//! equilibrium, and a sampler for synthetic market data.
//!
//! Demand `D(p) = alpha1 p + U^d` and supply `S(p) = beta1 p + U^s` with
//!
//! ```text
//! U^d = alpha2' Zd + alpha3' W + k2_d K2 + sigma_d eps_d
//! U^s = beta2'  Zs + beta3'  W + k2_s K2 + sigma_s eps_s
//! ```
//!
//! The latent `K1` loads on the shifters (making `Zd`, `Zs`, `W` dependent),
//! the latent `K2` loads on both shocks. All latent draws are standard
//! Gaussian.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetShape, MarketObservation, Provenance};
use crate::error::{Error, Result};
use crate::rng;

/// Below this, `beta1 - alpha1` is treated as a degenerate system.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    pub alpha1: f64,
    pub beta1: f64,
    #[serde(default)]
    pub alpha2: Vec<f64>,
    #[serde(default)]
    pub beta2: Vec<f64>,
    #[serde(default)]
    pub alpha3: Vec<f64>,
    #[serde(default)]
    pub beta3: Vec<f64>,
    #[serde(default)]
    pub sigma_d: f64,
    #[serde(default)]
    pub sigma_s: f64,
}

impl StructuralParams {
    /// Scalar-elasticity system with no shifters and no noise.
    pub fn elasticities(alpha1: f64, beta1: f64) -> Self {
        Self {
            alpha1,
            beta1,
            alpha2: vec![],
            beta2: vec![],
            alpha3: vec![],
            beta3: vec![],
            sigma_d: 0.0,
            sigma_s: 0.0,
        }
    }

    pub fn gap(&self) -> f64 {
        self.beta1 - self.alpha1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1.is_finite() && self.beta1.is_finite()) {
            return Err(Error::invalid("elasticities must be finite"));
        }
        if self.gap().abs() < DEGENERACY_TOL {
            return Err(Error::DegenerateSystem { gap: self.gap().abs() });
        }
        if self.gap() < 0.0 {
            return Err(Error::invalid(format!(
                "beta1 - alpha1 must be positive, got {}",
                self.gap()
            )));
        }
        if !(self.sigma_d >= 0.0 && self.sigma_s >= 0.0) {
            return Err(Error::invalid("shock standard deviations must be >= 0"));
        }
        Ok(())
    }

    pub fn validate_against(&self, spec: &ShifterSpec) -> Result<()> {
        self.validate()?;
        spec.validate()?;
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::dims(format!("{name} has {got} entries, shifter spec needs {want}")))
            }
        };
        check("alpha2", self.alpha2.len(), spec.dim_zd)?;
        check("beta2", self.beta2.len(), spec.dim_zs)?;
        check("alpha3", self.alpha3.len(), spec.dim_w)?;
        check("beta3", self.beta3.len(), spec.dim_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShifterSpec {
    pub dim_zd: usize,
    pub dim_zs: usize,
    pub dim_w: usize,
    #[serde(default)]
    pub w_has_constant: bool,
    #[serde(default)]
    pub k1_loadings_zd: Vec<f64>,
    #[serde(default)]
    pub k1_loadings_zs: Vec<f64>,
    /// Loadings of `K1` on `W`; empty means all zero.
    #[serde(default)]
    pub k1_loadings_w: Vec<f64>,
    #[serde(default)]
    pub k2_loading_d: f64,
    #[serde(default)]
    pub k2_loading_s: f64,
    #[serde(default)]
    pub zd_sd: Vec<f64>,
    #[serde(default)]
    pub zs_sd: Vec<f64>,
    /// Idiosyncratic SDs of `W`; the constant slot, if any, is ignored.
    #[serde(default)]
    pub w_sd: Vec<f64>,
}

impl ShifterSpec {
    /// Independent unit-variance shifters, no latent factors.
    pub fn independent(dim_zd: usize, dim_zs: usize, dim_w: usize, w_has_constant: bool) -> Self {
        Self {
            dim_zd,
            dim_zs,
            dim_w,
            w_has_constant,
            k1_loadings_zd: vec![0.0; dim_zd],
            k1_loadings_zs: vec![0.0; dim_zs],
            k1_loadings_w: vec![],
            k2_loading_d: 0.0,
            k2_loading_s: 0.0,
            zd_sd: vec![1.0; dim_zd],
            zs_sd: vec![1.0; dim_zs],
            w_sd: vec![1.0; dim_w],
        }
    }

    pub fn shape(&self) -> DatasetShape {
        DatasetShape {
            dim_zd: self.dim_zd,
            dim_zs: self.dim_zs,
            dim_w: self.dim_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: &[f64], want: usize, may_be_empty: bool| {
            if v.len() != want && !(may_be_empty && v.is_empty()) {
                return Err(Error::dims(format!("{name} has {} entries, expected {want}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{name} contains non-finite values")));
            }
            Ok(())
        };
        check("k1_loadings_zd", &self.k1_loadings_zd, self.dim_zd, true)?;
        check("k1_loadings_zs", &self.k1_loadings_zs, self.dim_zs, true)?;
        check("k1_loadings_w", &self.k1_loadings_w, self.dim_w, true)?;
        check("zd_sd", &self.zd_sd, self.dim_zd, false)?;
        check("zs_sd", &self.zs_sd, self.dim_zs, false)?;
        check("w_sd", &self.w_sd, self.dim_w, false)?;
        if self.zd_sd.iter().chain(&self.zs_sd).chain(&self.w_sd).any(|&s| s < 0.0) {
            return Err(Error::invalid("shifter standard deviations must be >= 0"));
        }
        if self.w_has_constant && self.dim_w == 0 {
            return Err(Error::invalid("w_has_constant requires dim_w >= 1"));
        }
        Ok(())
    }
}

/// Log quantity demanded at log price `p`.
pub fn evaluate_demand(params: &StructuralParams, p: f64, u_d: f64) -> f64 {
    params.alpha1 * p + u_d
}

/// Log quantity supplied at log price `p`.
pub fn evaluate_supply(params: &StructuralParams, p: f64, u_s: f64) -> f64 {
    params.beta1 * p + u_s
}

/// Market-clearing log price and quantity for the given shocks.
pub fn solve_equilibrium(params: &StructuralParams, u_d: f64, u_s: f64) -> Result<(f64, f64)> {
    let gap = params.gap();
    if gap.abs() < DEGENERACY_TOL {
        return Err(Error::DegenerateSystem { gap: gap.abs() });
    }
    let p = (u_d - u_s) / gap;
    Ok((p, evaluate_demand(params, p, u_d)))
}

fn loading(v: &[f64], j: usize) -> f64 {
    v.get(j).copied().unwrap_or(0.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One simulated market. Draw order within the substream is fixed:
/// `K1, K2, Zd.., Zs.., W.., eps_d, eps_s`.
fn simulate_one(params: &StructuralParams, spec: &ShifterSpec, seed: u64, index: u64) -> Result<MarketObservation> {
    let mut rng = rng::substream(seed, index);
    let mut draw = || -> f64 { rng.sample(StandardNormal) };
    let k1 = draw();
    let k2 = draw();
    let zd: Vec<f64> = (0..spec.dim_zd)
        .map(|j| loading(&spec.k1_loadings_zd, j) * k1 + spec.zd_sd[j] * draw())
        .collect();
    let zs: Vec<f64> = (0..spec.dim_zs)
        .map(|j| loading(&spec.k1_loadings_zs, j) * k1 + spec.zs_sd[j] * draw())
        .collect();
    let w: Vec<f64> = (0..spec.dim_w)
        .map(|j| {
            let e = draw();
            if j == 0 && spec.w_has_constant {
                1.0
            } else {
                loading(&spec.k1_loadings_w, j) * k1 + spec.w_sd[j] * e
            }
        })
        .collect();
    let eps_d = draw();
    let eps_s = draw();

    let u_d = dot(&params.alpha2, &zd) + dot(&params.alpha3, &w) + spec.k2_loading_d * k2 + params.sigma_d * eps_d;
    let u_s = dot(&params.beta2, &zs) + dot(&params.beta3, &w) + spec.k2_loading_s * k2 + params.sigma_s * eps_s;
    let (p, y) = solve_equilibrium(params, u_d, u_s)?;
    Ok(MarketObservation { p, y, zd, zs, w })
}

/// Draw `n` independent markets. Observation `i` uses substream `i`, so the
/// output is identical for any thread count.
pub fn simulate_dataset(params: &StructuralParams, spec: &ShifterSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyInput("simulation needs n >= 1".into()));
    }
    params.validate_against(spec)?;
    let observations = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_one(params, spec, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(observations, spec.shape(), Some(seed), Provenance::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(alpha1: f64, beta1: f64) -> StructuralParams {
        StructuralParams::elasticities(alpha1, beta1)
    }

    #[test]
    fn demand_examples() {
        assert_eq!(evaluate_demand(&scalar(-1.0, 1.0), 0.0, 3.0), 3.0);
        assert_eq!(evaluate_demand(&scalar(0.0, 1.0), 5.0, 2.0), 2.0);
        assert!((evaluate_demand(&scalar(-0.8, 1.0), 1.5, 1.0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_examples() {
        assert_eq!(solve_equilibrium(&scalar(-1.0, 1.0), 2.0, 0.0).unwrap(), (1.0, 1.0));
        let (p, y) = solve_equilibrium(&scalar(-0.7, 0.4), 1.3, 1.3).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(y, 1.3);
        assert_eq!(solve_equilibrium(&scalar(-0.5, 1.5), 1.0, -1.0).unwrap(), (1.0, 0.5));
    }

    #[test]
    fn equilibrium_clears_market() {
        let params = scalar(-0.37, 1.91);
        let (p, y) = solve_equilibrium(&params, 0.8, -2.2).unwrap();
        assert!((evaluate_demand(&params, p, 0.8) - y).abs() < 1e-12);
        assert!((evaluate_supply(&params, p, -2.2) - y).abs() < 1e-12);
    }

    #[test]
    fn degenerate_system_rejected() {
        assert!(matches!(
            solve_equilibrium(&scalar(0.5, 0.5 + 1e-12), 1.0, 0.0),
            Err(Error::DegenerateSystem { .. })
        ));
    }

    #[test]
    fn zero_noise_rows_are_constant_zero() {
        let params = StructuralParams {
            alpha2: vec![0.0],
            beta2: vec![0.0],
            alpha3: vec![0.0],
            beta3: vec![0.0],
            ..scalar(-1.0, 1.0)
        };
        let mut spec = ShifterSpec::independent(1, 1, 1, false);
        spec.zd_sd = vec![0.0];
        spec.zs_sd = vec![0.0];
        spec.w_sd = vec![0.0];
        let data = simulate_dataset(&params, &spec, 5, 3).unwrap();
        assert_eq!(data.len(), 5);
        for obs in &data.observations {
            assert_eq!((obs.p, obs.y), (0.0, 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let params = StructuralParams {
            alpha2: vec![1.0, 2.0],
            ..scalar(-1.0, 1.0)
        };
        let spec = ShifterSpec::independent(1, 0, 0, false);
        assert!(matches!(
            simulate_dataset(&params, &spec, 3, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn constant_w_component() {
        let params = StructuralParams {
            alpha3: vec![0.5, 0.1],
            beta3: vec![-0.5, 0.2],
            sigma_d: 1.0,
            sigma_s: 1.0,
            ..scalar(-1.0, 1.0)
        };
        let spec = ShifterSpec::independent(0, 0, 2, true);
        let data = simulate_dataset(&params, &spec, 20, 11).unwrap();
        assert!(data.observations.iter().all(|o| o.w[0] == 1.0));
    }
}
