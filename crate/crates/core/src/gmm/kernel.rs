use nalgebra::DMatrix;

use super::moments::{MomentSystem, OmegaKind};
use super::Theta;
use crate::error::{Error, Result};

/// Closed form for the cross covariance of the scores at two parameter
/// values, `Ω(θ, θ̄) = cov(g(X, θ), g(X, θ̄))`.
///
/// Scores are affine in `θ`, so with `g = g0 + t ∘ j` the covariance is a
/// bilinear function of the per-moment coefficients:
///
/// ```text
/// Ω_kl = C00_kl + t̄_l C0J_kl + t_k C0J_lk + t_k t̄_l CJJ_kl
/// ```
///
/// Evaluation costs `O(m²)` regardless of `n`.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    m: usize,
    m_demand: usize,
    c00: Vec<f64>,
    c0j: Vec<f64>,
    cjj: Vec<f64>,
}

impl CovarianceKernel {
    /// Only the iid kinds have a closed form.
    pub fn new(ms: &MomentSystem, kind: OmegaKind) -> Result<Self> {
        let centered = match kind {
            OmegaKind::IidCentered => true,
            OmegaKind::IidUncentered => false,
            OmegaKind::NeweyWest { .. } => {
                return Err(Error::invalid("covariance kernel requires an iid omega kind"))
            }
        };
        let n = ms.n() as f64;
        let m = ms.m();
        let prep = |x: &DMatrix<f64>| {
            let mut x = x.clone();
            if centered {
                for mut col in x.column_iter_mut() {
                    let mean = col.sum() / n;
                    col.add_scalar_mut(-mean);
                }
            }
            x
        };
        let g0 = prep(ms.g0_obs());
        let j = prep(ms.jac_obs());
        let flat = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let c = a.transpose() * b / n;
            let mut out = vec![0.0; m * m];
            for k in 0..m {
                for l in 0..m {
                    out[k * m + l] = c[(k, l)];
                }
            }
            out
        };
        Ok(Self {
            m,
            m_demand: ms.m_demand(),
            c00: flat(&g0, &g0),
            c0j: flat(&g0, &j),
            cjj: flat(&j, &j),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    fn coef(&self, k: usize, t: Theta) -> f64 {
        if k < self.m_demand {
            t.a
        } else {
            t.b
        }
    }

    /// Writes `Ω(θ, θ̄)` row-major into `out` (length `m²`).
    pub fn omega_into(&self, theta: Theta, theta_bar: Theta, out: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let tk = self.coef(k, theta);
            for l in 0..m {
                let tl = self.coef(l, theta_bar);
                out[k * m + l] = self.c00[k * m + l]
                    + tl * self.c0j[k * m + l]
                    + tk * self.c0j[l * m + k]
                    + tk * tl * self.cjj[k * m + l];
            }
        }
    }

    pub fn omega(&self, theta: Theta, theta_bar: Theta) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.m * self.m];
        self.omega_into(theta, theta_bar, &mut buf);
        DMatrix::from_row_slice(self.m, self.m, &buf)
    }
}
