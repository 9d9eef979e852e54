//! Tariff counterfactuals in the log-linear system.
//!
//! A proportional tariff `τ` levied on producers shifts supply to
//! `S*(p) = S(p - τ)`. With `c = β1 / (β1 - α1)` the equilibrium moves by
//! `ΔP = cτ` and `ΔY = α1 ΔP`. Welfare terms are ratios to base revenue
//! `exp(Y + P)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::structural::DEGENERACY_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffScenario {
    pub tau: f64,
    pub alpha1: f64,
    pub beta1: f64,
    #[serde(default)]
    pub baseline_p: f64,
    #[serde(default)]
    pub baseline_y: f64,
}

impl TariffScenario {
    pub fn new(alpha1: f64, beta1: f64, tau: f64) -> Self {
        Self {
            tau,
            alpha1,
            beta1,
            baseline_p: 0.0,
            baseline_y: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_elasticities(self.alpha1, self.beta1)?;
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tariff rate {} must lie in [0, 1)", self.tau)));
        }
        if !self.baseline_p.is_finite() || !self.baseline_y.is_finite() {
            return Err(Error::invalid("baseline must be finite"));
        }
        Ok(())
    }
}

fn check_elasticities(alpha1: f64, beta1: f64) -> Result<()> {
    if !(alpha1 <= 0.0) || !(beta1 >= 0.0) || !alpha1.is_finite() || !beta1.is_finite() {
        return Err(Error::invalid(format!(
            "need alpha1 <= 0 <= beta1, got ({alpha1}, {beta1})"
        )));
    }
    let gap = beta1 - alpha1;
    if gap < DEGENERACY_TOL {
        return Err(Error::DegenerateSystem { gap });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualOutcome {
    pub pass_through_c: f64,
    pub delta_p: f64,
    pub delta_y: f64,
    pub p_star: f64,
    pub y_star: f64,
    pub cs_change_ratio: f64,
    pub revenue_ratio: f64,
    pub welfare_sum: f64,
}

/// Which terms of the revenue expansion enter the welfare sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueTerms {
    #[default]
    Cubic,
    Quadratic,
}

impl std::str::FromStr for RevenueTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(Self::Cubic),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(Error::Config(format!("unknown revenue terms `{other}`"))),
        }
    }
}

/// `c = β1 / (β1 - α1)`.
pub fn pass_through(alpha1: f64, beta1: f64) -> Result<f64> {
    check_elasticities(alpha1, beta1)?;
    Ok(beta1 / (beta1 - alpha1))
}

fn cs_ratio(alpha1: f64, c: f64, tau: f64) -> f64 {
    -c * tau - 0.5 * alpha1 * c * c * tau * tau
}

fn revenue_ratio(alpha1: f64, c: f64, tau: f64, terms: RevenueTerms) -> f64 {
    let quad = tau + c * (1.0 + alpha1) * tau * tau;
    match terms {
        RevenueTerms::Quadratic => quad,
        RevenueTerms::Cubic => quad + c * c * c * alpha1 * alpha1 * tau * tau * tau,
    }
}

pub fn apply_tariff(s: &TariffScenario) -> Result<CounterfactualOutcome> {
    apply_tariff_with(s, RevenueTerms::Cubic)
}

pub fn apply_tariff_with(s: &TariffScenario, terms: RevenueTerms) -> Result<CounterfactualOutcome> {
    s.validate()?;
    let c = pass_through(s.alpha1, s.beta1)?;
    let delta_p = c * s.tau;
    let delta_y = s.alpha1 * delta_p;
    let cs = cs_ratio(s.alpha1, c, s.tau);
    let rev = revenue_ratio(s.alpha1, c, s.tau, terms);
    Ok(CounterfactualOutcome {
        pass_through_c: c,
        delta_p,
        delta_y,
        p_star: s.baseline_p + delta_p,
        y_star: s.baseline_y + delta_y,
        cs_change_ratio: cs,
        revenue_ratio: rev,
        welfare_sum: cs + rev,
    })
}

/// Trapezoid consumer-surplus change from level quantities, as a ratio to
/// base revenue. Log changes are applied as proportional changes:
/// `Q* = Q (1 + ΔY)`, `P* = P (1 + ΔP)`.
pub fn consumer_surplus_change_exact(s: &TariffScenario) -> Result<f64> {
    s.validate()?;
    let c = pass_through(s.alpha1, s.beta1)?;
    let delta_p = c * s.tau;
    let delta_y = s.alpha1 * delta_p;
    let (q, p) = (s.baseline_y.exp(), s.baseline_p.exp());
    let q_star = q * (1.0 + delta_y);
    let p_star = p * (1.0 + delta_p);
    let cs = -0.5 * (q + q_star) * (p_star - p);
    Ok(cs / (q * p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareCurve {
    pub tau_grid: Vec<f64>,
    pub cs_ratio: Vec<f64>,
    pub revenue_ratio: Vec<f64>,
    pub welfare: Vec<f64>,
    pub argmax_tau: f64,
    pub argmax_value: f64,
    pub terms: RevenueTerms,
    /// Interior maximizer of the quadratic truncation, when it exists inside
    /// the grid range.
    pub quadratic_stationary_point: Option<f64>,
}

impl WelfareCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "cs_ratio", "revenue_ratio", "welfare_sum"])?;
        for i in 0..self.tau_grid.len() {
            w.write_record([
                fmt_f64(self.tau_grid[i]),
                fmt_f64(self.cs_ratio[i]),
                fmt_f64(self.revenue_ratio[i]),
                fmt_f64(self.welfare[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// `0, step, 2 step, ..., tau_max`.
pub fn tau_grid(tau_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(0.0..1.0).contains(&tau_max) {
        return Err(Error::invalid("tau grid needs step > 0 and 0 <= tau_max < 1"));
    }
    let k = (tau_max / step + 1e-9).floor() as usize;
    Ok((0..=k).map(|i| i as f64 * step).collect())
}

pub fn default_tau_grid() -> Vec<f64> {
    tau_grid(0.5, 1e-3).expect("valid default grid")
}

/// Stationary point of `(1 - c) τ + (c (1 + α1) - α1 c² / 2) τ²`, returned
/// only when it is a maximum.
pub fn quadratic_stationary_point(alpha1: f64, beta1: f64) -> Result<Option<f64>> {
    let c = pass_through(alpha1, beta1)?;
    let curvature = c * (1.0 + alpha1) - 0.5 * alpha1 * c * c;
    if curvature >= 0.0 {
        return Ok(None);
    }
    Ok(Some((1.0 - c) / (alpha1 * c * c - 2.0 * c * (1.0 + alpha1))))
}

/// Grid maximizer of the welfare sum; ties go to the smallest `τ`.
pub fn optimal_tariff(alpha1: f64, beta1: f64, grid: &[f64], terms: RevenueTerms) -> Result<WelfareCurve> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("tau grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("tau grid must be strictly increasing"));
    }
    let mut curve = WelfareCurve {
        tau_grid: grid.to_vec(),
        cs_ratio: Vec::with_capacity(grid.len()),
        revenue_ratio: Vec::with_capacity(grid.len()),
        welfare: Vec::with_capacity(grid.len()),
        argmax_tau: grid[0],
        argmax_value: f64::NEG_INFINITY,
        terms,
        quadratic_stationary_point: None,
    };
    for &tau in grid {
        let out = apply_tariff_with(&TariffScenario::new(alpha1, beta1, tau), terms)?;
        curve.cs_ratio.push(out.cs_change_ratio);
        curve.revenue_ratio.push(out.revenue_ratio);
        curve.welfare.push(out.welfare_sum);
        if out.welfare_sum > curve.argmax_value {
            curve.argmax_value = out.welfare_sum;
            curve.argmax_tau = tau;
        }
    }
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    curve.quadratic_stationary_point =
        quadratic_stationary_point(alpha1, beta1)?.filter(|t| (lo..=hi).contains(t));
    Ok(curve)
}
