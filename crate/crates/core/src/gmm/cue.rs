use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::estimate::{assemble_fit, solve_gmm, EstimatorKind, GmmFit, InformationMode, WeightingMatrix};
use super::kernel::CovarianceKernel;
use super::moments::{estimate_omega, MomentSystem, OmegaKind};
use super::{Theta, ThetaBox};
use crate::error::{Error, Result};
use crate::linalg::{self, small};
use crate::optim::minimize_on_box;
use crate::partialing::ResidualizedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueOptions {
    /// Grid points per axis for the coarse scan.
    pub grid: usize,
    /// Final compass step.
    pub tol: f64,
}

impl Default for CueOptions {
    fn default() -> Self {
        Self { grid: 61, tol: 1e-8 }
    }
}

/// `g' Ω^{-1} g` for a dense covariance, with the ridge fallback.
pub(crate) fn dense_quad_form(omega: &DMatrix<f64>, g: &[f64]) -> Option<(f64, bool)> {
    let m = omega.nrows();
    if m <= small::MAX_DIM {
        let flat: Vec<f64> = (0..m * m).map(|k| omega[(k / m, k % m)]).collect();
        return small::quad_form_inv(&flat, m, g);
    }
    let (inv, ridged) = linalg::covariance_inverse(omega).ok()?;
    let gv = nalgebra::DVector::from_column_slice(g);
    Some(((gv.transpose() * inv * &gv)[0], ridged))
}

/// Evaluates the continuous-updating criterion through the closed-form
/// kernel when one exists, or from the scores otherwise.
pub(crate) struct CueCriterion<'a> {
    ms: &'a MomentSystem,
    kind: OmegaKind,
    kernel: Option<CovarianceKernel>,
}

impl<'a> CueCriterion<'a> {
    pub(crate) fn new(ms: &'a MomentSystem, kind: OmegaKind) -> Result<Self> {
        let kernel = if kind.is_iid() {
            Some(CovarianceKernel::new(ms, kind)?)
        } else {
            None
        };
        Ok(Self { ms, kind, kernel })
    }

    /// `(ĝ' Ω(θ)^{-1} ĝ, ridged)`, `None` if Ω stays singular.
    pub(crate) fn eval(&self, theta: Theta) -> Option<(f64, bool)> {
        let g = self.ms.g_bar(theta);
        match &self.kernel {
            Some(k) => {
                let m = k.m();
                if m <= small::MAX_DIM {
                    let mut buf = [0.0f64; small::MAX_DIM * small::MAX_DIM];
                    k.omega_into(theta, theta, &mut buf[..m * m]);
                    small::quad_form_inv(&buf[..m * m], m, g.as_slice())
                } else {
                    dense_quad_form(&k.omega(theta, theta), g.as_slice())
                }
            }
            None => {
                let omega = estimate_omega(self.ms, theta, self.kind).ok()?;
                dense_quad_form(&omega, g.as_slice())
            }
        }
    }
}

/// Continuous-updating criterion `ĝ(θ)' Ω̂(θ)^{-1} ĝ(θ)` (the AR statistic
/// divided by `n`).
pub fn cue_objective(ms: &MomentSystem, theta: Theta, kind: OmegaKind) -> Result<f64> {
    CueCriterion::new(ms, kind)?
        .eval(theta)
        .map(|(v, _)| v)
        .ok_or_else(|| Error::Singular("score covariance singular after ridge".into()))
}

pub fn cue(resid: &ResidualizedDataset, bounds: &ThetaBox, kind: OmegaKind, opts: CueOptions) -> Result<GmmFit> {
    cue_ms(&MomentSystem::build(resid)?, bounds, kind, opts)
}

/// Continuous-updating GMM by grid scan and compass polish over `bounds`.
pub fn cue_ms(ms: &MomentSystem, bounds: &ThetaBox, kind: OmegaKind, opts: CueOptions) -> Result<GmmFit> {
    bounds.validate()?;
    if let Ok(w1) = WeightingMatrix::block_instrument_moments(ms) {
        if let Ok(t1) = solve_gmm(ms, &w1) {
            if !bounds.contains(t1) {
                log::warn!("step-1 estimate ({}, {}) lies outside the parameter box", t1.a, t1.b);
            }
        }
    }
    let crit = CueCriterion::new(ms, kind)?;
    let best = minimize_on_box(
        |t| crit.eval(t).map(|(v, _)| v).unwrap_or(f64::INFINITY),
        bounds,
        opts.grid,
        opts.tol,
    );
    if !best.value.is_finite() {
        return Err(Error::Singular("score covariance singular over the whole box".into()));
    }
    if best.boundary_hit {
        log::warn!("CUE optimum on the box boundary; identification may be weak");
    }
    let theta = best.theta;
    let omega = estimate_omega(ms, theta, kind)?;
    let weighting = WeightingMatrix::inverse_omega(&omega)?;
    let mut fit = assemble_fit(
        ms,
        EstimatorKind::Cue,
        theta,
        weighting,
        omega,
        vec![theta],
        InformationMode::FullInformation,
        kind,
        best.boundary_hit,
    )?;
    fit.objective = best.value;
    Ok(fit)
}
