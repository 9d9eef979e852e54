use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Theta;
use crate::error::{Error, Result};
use crate::linalg;
use crate::partialing::ResidualizedDataset;

/// Stacked demand/supply moment conditions on residualized data.
///
/// Observation `i` contributes
///
/// ```text
/// g(X_i, theta) = [ (y1_i - a p1_i) zs1_i ; (y2_i - b p2_i) zd2_i ]
///               = g(X_i, 0) + G(X_i) theta
/// ```
///
/// which is affine in `theta = (a, b)`. The per-observation pieces are kept
/// so scores can be evaluated at any `theta`.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    n: usize,
    m_demand: usize,
    m_supply: usize,
    /// `g(X_i, 0)`, one row per observation.
    g0_obs: DMatrix<f64>,
    /// Coefficient on `a` (demand rows) or `b` (supply rows) in `G(X_i)`.
    jac_obs: DMatrix<f64>,
    pub g0_bar: DVector<f64>,
    /// `m x 2` block-diagonal Jacobian.
    pub g_jacobian: DMatrix<f64>,
    /// Block-diagonal instrument second moments `diag(E zs1 zs1', E zd2 zd2')`.
    pub instrument_moments: DMatrix<f64>,
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

impl MomentSystem {
    pub fn build(resid: &ResidualizedDataset) -> Result<Self> {
        let n = resid.len();
        if n < 2 {
            return Err(Error::EmptyInput("moment system needs n >= 2".into()));
        }
        let md = resid.zs1.ncols();
        let ms = resid.zd2.ncols();
        if md == 0 || ms == 0 {
            return Err(Error::invalid(
                "both equations need at least one excluded instrument",
            ));
        }
        let m = md + ms;
        let mut g0_obs = DMatrix::zeros(n, m);
        let mut jac_obs = DMatrix::zeros(n, m);
        for i in 0..n {
            for k in 0..md {
                let z = resid.zs1[(i, k)];
                g0_obs[(i, k)] = resid.y1[i] * z;
                jac_obs[(i, k)] = -resid.p1[i] * z;
            }
            for k in 0..ms {
                let z = resid.zd2[(i, k)];
                g0_obs[(i, md + k)] = resid.y2[i] * z;
                jac_obs[(i, md + k)] = -resid.p2[i] * z;
            }
        }
        let g0_bar = column_means(&g0_obs);
        let jbar = column_means(&jac_obs);
        let mut g_jacobian = DMatrix::zeros(m, 2);
        for k in 0..m {
            g_jacobian[(k, usize::from(k >= md))] = jbar[k];
        }
        let nf = n as f64;
        let mut instrument_moments = DMatrix::zeros(m, m);
        instrument_moments
            .view_mut((0, 0), (md, md))
            .copy_from(&(resid.zs1.transpose() * &resid.zs1 / nf));
        instrument_moments
            .view_mut((md, md), (ms, ms))
            .copy_from(&(resid.zd2.transpose() * &resid.zd2 / nf));
        Ok(Self {
            n,
            m_demand: md,
            m_supply: ms,
            g0_obs,
            jac_obs,
            g0_bar,
            g_jacobian,
            instrument_moments: linalg::symmetrize(&instrument_moments),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Moment dimension.
    pub fn m(&self) -> usize {
        self.m_demand + self.m_supply
    }

    pub fn m_demand(&self) -> usize {
        self.m_demand
    }

    pub fn m_supply(&self) -> usize {
        self.m_supply
    }

    /// The parameter multiplying moment `k`.
    #[inline]
    pub fn coefficient(&self, k: usize, theta: Theta) -> f64 {
        if k < self.m_demand {
            theta.a
        } else {
            theta.b
        }
    }

    /// Diagonal of `G` flattened: `jbar_k` such that `g_k(theta) = g0_k + t_k jbar_k`.
    pub fn jacobian_diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.m(), |k, _| self.g_jacobian[(k, usize::from(k >= self.m_demand))])
    }

    /// `ĝ(theta) = ĝ(0) + Ĝ theta`.
    pub fn g_bar(&self, theta: Theta) -> DVector<f64> {
        &self.g0_bar + &self.g_jacobian * theta.to_vector()
    }

    /// Per-observation scores `g(X_i, theta)` as an `n x m` matrix.
    pub fn scores(&self, theta: Theta) -> DMatrix<f64> {
        let mut out = self.g0_obs.clone();
        for k in 0..self.m() {
            let t = self.coefficient(k, theta);
            out.column_mut(k).axpy(t, &self.jac_obs.column(k), 1.0);
        }
        out
    }

    pub fn score(&self, i: usize, theta: Theta) -> DVector<f64> {
        DVector::from_fn(self.m(), |k, _| {
            self.g0_obs[(i, k)] + self.coefficient(k, theta) * self.jac_obs[(i, k)]
        })
    }

    pub(crate) fn g0_obs(&self) -> &DMatrix<f64> {
        &self.g0_obs
    }

    pub(crate) fn jac_obs(&self) -> &DMatrix<f64> {
        &self.jac_obs
    }
}

/// Estimator of the long-run covariance of the scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OmegaKind {
    #[default]
    /// Sample covariance `V_n g(X_i, theta)`.
    IidCentered,
    /// Second moment `E_n g g'`.
    IidUncentered,
    /// Bartlett-kernel HAC on centered scores. `lags = None` uses
    /// `floor(4 (n/100)^(2/9))`.
    NeweyWest { lags: Option<usize> },
}

impl OmegaKind {
    pub fn is_iid(&self) -> bool {
        !matches!(self, OmegaKind::NeweyWest { .. })
    }
}

impl std::str::FromStr for OmegaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" | "iid_centered" => Ok(OmegaKind::IidCentered),
            "uncentered" | "iid_uncentered" => Ok(OmegaKind::IidUncentered),
            "nw" | "newey_west" => Ok(OmegaKind::NeweyWest { lags: None }),
            other => {
                let lags = other
                    .strip_prefix("nw:")
                    .or_else(|| other.strip_prefix("newey_west:"))
                    .and_then(|l| l.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown omega kind `{other}`")))?;
                Ok(OmegaKind::NeweyWest { lags: Some(lags) })
            }
        }
    }
}

pub fn newey_west_default_lags(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Covariance estimate of the scores at `theta`; always exactly symmetric.
pub fn estimate_omega(ms: &MomentSystem, theta: Theta, kind: OmegaKind) -> Result<DMatrix<f64>> {
    scores_covariance(&ms.scores(theta), kind)
}

pub(crate) fn scores_covariance(scores: &DMatrix<f64>, kind: OmegaKind) -> Result<DMatrix<f64>> {
    let n = scores.nrows();
    let nf = n as f64;
    let omega = match kind {
        OmegaKind::IidUncentered => scores.transpose() * scores / nf,
        OmegaKind::IidCentered => {
            let centered = center(scores);
            centered.transpose() * &centered / nf
        }
        OmegaKind::NeweyWest { lags } => {
            let lags = lags.unwrap_or_else(|| newey_west_default_lags(n));
            if n <= lags {
                return Err(Error::invalid(format!(
                    "Newey-West needs n > lags (n = {n}, lags = {lags})"
                )));
            }
            let c = center(scores);
            let mut omega = c.transpose() * &c / nf;
            for l in 1..=lags {
                let lead = c.rows(l, n - l);
                let lag = c.rows(0, n - l);
                let gamma = lead.transpose() * lag / nf;
                let weight = 1.0 - l as f64 / (lags as f64 + 1.0);
                omega += (&gamma + gamma.transpose()) * weight;
            }
            omega
        }
    };
    Ok(linalg::symmetrize(&omega))
}

fn center(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(x);
    let mut c = x.clone();
    for (k, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[k]);
    }
    c
}
