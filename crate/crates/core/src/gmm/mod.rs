//! GMM estimation of the demand and supply elasticities.

pub(crate) mod cue;
mod estimate;
mod kernel;
mod moments;

pub use cue::{cue, cue_ms, cue_objective, CueOptions};
pub use estimate::{
    indirect_least_squares, iterative_gmm, iterative_gmm_ms, sandwich_vcov, solve_gmm,
    EstimatorKind, GmmFit, GmmOptions, InformationMode, WeightingKind, WeightingMatrix,
};
pub use kernel::CovarianceKernel;
pub use moments::{estimate_omega, newey_west_default_lags, MomentSystem, OmegaKind};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A candidate `(a, b)` for the demand and supply elasticities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub a: f64,
    pub b: f64,
}

impl Theta {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.a, self.b])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn max_abs_diff(self, other: Theta) -> f64 {
        (self.a - other.a).abs().max((self.b - other.b).abs())
    }
}

/// Rectangular parameter space for `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lower: Theta,
    pub upper: Theta,
}

impl Default for ThetaBox {
    fn default() -> Self {
        Self {
            lower: Theta::new(-10.0, -10.0),
            upper: Theta::new(10.0, 10.0),
        }
    }
}

impl ThetaBox {
    pub fn new(lower: Theta, upper: Theta) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lower.a < self.upper.a
            && self.lower.b < self.upper.b
            && [self.lower.a, self.lower.b, self.upper.a, self.upper.b]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("theta box needs finite lower < upper on both axes"))
        }
    }

    pub fn contains(&self, t: Theta) -> bool {
        (self.lower.a..=self.upper.a).contains(&t.a) && (self.lower.b..=self.upper.b).contains(&t.b)
    }

    pub fn clamp(&self, t: Theta) -> Theta {
        Theta::new(
            t.a.clamp(self.lower.a, self.upper.a),
            t.b.clamp(self.lower.b, self.upper.b),
        )
    }

    pub fn width(&self) -> Theta {
        Theta::new(self.upper.a - self.lower.a, self.upper.b - self.lower.b)
    }

    /// Whether `t` sits on (or within `rel * width` of) an edge.
    pub fn on_boundary(&self, t: Theta, rel: f64) -> bool {
        let w = self.width();
        (t.a - self.lower.a).abs() <= rel * w.a
            || (self.upper.a - t.a).abs() <= rel * w.a
            || (t.b - self.lower.b).abs() <= rel * w.b
            || (self.upper.b - t.b).abs() <= rel * w.b
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::partialing::ResidualizedDataset;

    /// Residualized columns from a simple endogenous design with
    /// `a = -0.8`, `b = 0.9`.
    pub fn random_resid(seed: u64, n: usize, md: usize, ms: usize) -> ResidualizedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        let zs = DMatrix::from_fn(n, md, |_, _| g());
        let zd = DMatrix::from_fn(n, ms, |_, _| g());
        let mut p = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let ud = zd.row(i).sum() + g();
            let us = zs.row(i).sum() + g();
            p[i] = (ud - us) / 1.7;
            y[i] = -0.8 * p[i] + ud;
        }
        ResidualizedDataset::from_columns(y.clone(), p.clone(), zs, y, p, zd).unwrap()
    }
}
