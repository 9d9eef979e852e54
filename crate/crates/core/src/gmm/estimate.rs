use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use super::moments::{estimate_omega, MomentSystem, OmegaKind};
use super::Theta;
use crate::error::{Error, Result};
use crate::linalg;
use crate::partialing::ResidualizedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    Identity,
    BlockInstrumentMoments,
    InverseOmega,
    Custom,
}

/// Symmetric positive-definite GMM weighting matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingMatrix {
    matrix: DMatrix<f64>,
    kind: WeightingKind,
    ridged: bool,
}

impl WeightingMatrix {
    pub fn new(matrix: DMatrix<f64>, kind: WeightingKind) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::dims("weighting matrix must be square and non-empty"));
        }
        let scale = matrix.amax().max(1.0);
        if linalg::asymmetry(&matrix) > 1e-12 * scale {
            return Err(Error::invalid("weighting matrix is not symmetric"));
        }
        let matrix = linalg::symmetrize(&matrix);
        let min_eig = linalg::min_eigenvalue(&matrix);
        if !(min_eig > 0.0) {
            return Err(Error::RankDeficient {
                context: "weighting matrix".into(),
                eigenvalue: min_eig,
                largest: matrix.amax(),
            });
        }
        Ok(Self {
            matrix,
            kind,
            ridged: false,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            matrix: DMatrix::identity(m, m),
            kind: WeightingKind::Identity,
            ridged: false,
        }
    }

    /// Step-1 weighting `diag(E zs1 zs1', E zd2 zd2')^{-1}`; yields 2SLS.
    pub fn block_instrument_moments(ms: &MomentSystem) -> Result<Self> {
        let inv = linalg::spd_inverse(&ms.instrument_moments, "instrument second moments")?;
        Self::new(inv, WeightingKind::BlockInstrumentMoments)
    }

    /// Efficient weighting `omega^{-1}` (with ridge fallback).
    pub fn inverse_omega(omega: &DMatrix<f64>) -> Result<Self> {
        let (inv, ridged) = linalg::covariance_inverse(omega)?;
        let mut w = Self::new(inv, WeightingKind::InverseOmega)?;
        w.ridged = ridged;
        Ok(w)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> WeightingKind {
        self.kind
    }

    pub fn ridged(&self) -> bool {
        self.ridged
    }
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Serialize for WeightingMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("WeightingMatrix", 3)?;
        st.serialize_field("kind", &self.kind)?;
        st.serialize_field("ridged", &self.ridged)?;
        st.serialize_field("matrix", &rows(&self.matrix))?;
        st.end()
    }
}

/// `(theta, M)` with `theta = M ĝ(0)` and `M = -(G'AG)^{-1} G'A`.
fn closed_form(ms: &MomentSystem, w: &WeightingMatrix) -> Result<(Theta, DMatrix<f64>)> {
    if w.matrix.nrows() != ms.m() {
        return Err(Error::dims(format!(
            "weighting matrix is {0}x{0}, moment dimension is {1}",
            w.matrix.nrows(),
            ms.m()
        )));
    }
    let g = &ms.g_jacobian;
    let gta = g.transpose() * &w.matrix;
    let h = linalg::symmetrize(&(&gta * g));
    let eig = SymmetricEigen::new(h.clone());
    let largest = eig.eigenvalues.amax();
    let smallest = eig.eigenvalues.min();
    if !(smallest > linalg::EIG_RCOND * largest) {
        return Err(Error::RankDeficient {
            context: "G'AG (weak or failed identification)".into(),
            eigenvalue: smallest,
            largest,
        });
    }
    let h_inv = linalg::spd_inverse(&h, "G'AG")?;
    let m_mat = -(h_inv * gta);
    let theta = Theta::from_vector(&(&m_mat * &ms.g0_bar));
    Ok((theta, m_mat))
}

/// Closed-form GMM estimate `-(G'AG)^{-1} G'A ĝ(0)`.
pub fn solve_gmm(ms: &MomentSystem, w: &WeightingMatrix) -> Result<Theta> {
    closed_form(ms, w).map(|(t, _)| t)
}

/// `M Ω M' / n`.
pub fn sandwich_vcov(ms: &MomentSystem, w: &WeightingMatrix, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (_, m_mat) = closed_form(ms, w)?;
    Ok(linalg::symmetrize(&(&m_mat * omega * m_mat.transpose())) / ms.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationMode {
    /// Joint weighting across the demand and supply blocks.
    FullInformation,
    /// Block-diagonal weighting, equivalent to equation-by-equation GMM.
    LimitedInformation,
}

impl std::str::FromStr for InformationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_information" => Ok(Self::FullInformation),
            "limited" | "limited_information" => Ok(Self::LimitedInformation),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    IterativeGmm,
    Cue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    /// Number of steps; 2 reaches efficiency, 3 tends to help in small samples.
    pub k_steps: usize,
    pub mode: InformationMode,
    pub omega_kind: OmegaKind,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            k_steps: 2,
            mode: InformationMode::FullInformation,
            omega_kind: OmegaKind::IidCentered,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GmmFit {
    pub estimator: EstimatorKind,
    pub theta_hat: Theta,
    pub std_errors: Theta,
    pub vcov: [[f64; 2]; 2],
    #[serde(serialize_with = "ser_matrix")]
    pub omega_hat: DMatrix<f64>,
    pub weighting: WeightingMatrix,
    /// Estimates after each step (iterative GMM) or grid start and polished
    /// optimum (CUE).
    pub steps: Vec<Theta>,
    pub mode: InformationMode,
    pub omega_kind: OmegaKind,
    /// Criterion `ĝ' Â ĝ` at the estimate.
    pub objective: f64,
    pub boundary_hit: bool,
    pub n: usize,
    pub m: usize,
}

fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    rows(m).serialize(s)
}

impl GmmFit {
    pub fn vcov_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.vcov[0][0], self.vcov[0][1], self.vcov[1][0], self.vcov[1][1])
    }

    /// First-order conditions `Ĝ' Â ĝ(θ̂)` of the reported estimate.
    pub fn first_order_conditions(&self, ms: &MomentSystem) -> DVector<f64> {
        ms.g_jacobian.transpose() * self.weighting.matrix() * ms.g_bar(self.theta_hat)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_fit(
    ms: &MomentSystem,
    estimator: EstimatorKind,
    theta: Theta,
    weighting: WeightingMatrix,
    omega: DMatrix<f64>,
    steps: Vec<Theta>,
    mode: InformationMode,
    omega_kind: OmegaKind,
    boundary_hit: bool,
) -> Result<GmmFit> {
    let vcov = sandwich_vcov(ms, &weighting, &omega)?;
    let g = ms.g_bar(theta);
    let objective = (g.transpose() * weighting.matrix() * &g)[0];
    Ok(GmmFit {
        estimator,
        theta_hat: theta,
        std_errors: Theta::new(vcov[(0, 0)].max(0.0).sqrt(), vcov[(1, 1)].max(0.0).sqrt()),
        vcov: [[vcov[(0, 0)], vcov[(0, 1)]], [vcov[(1, 0)], vcov[(1, 1)]]],
        omega_hat: omega,
        weighting,
        steps,
        mode,
        omega_kind,
        objective,
        boundary_hit,
        n: ms.n(),
        m: ms.m(),
    })
}

fn zero_cross_blocks(omega: &mut DMatrix<f64>, md: usize) {
    let m = omega.nrows();
    for i in 0..md {
        for j in md..m {
            omega[(i, j)] = 0.0;
            omega[(j, i)] = 0.0;
        }
    }
}

/// Iterative GMM. Step 1 uses the block instrument-moment weighting (2SLS);
/// each later step re-weights with the inverse score covariance at the
/// previous estimate.
pub fn iterative_gmm(resid: &ResidualizedDataset, opts: GmmOptions) -> Result<GmmFit> {
    iterative_gmm_ms(&MomentSystem::build(resid)?, opts)
}

pub fn iterative_gmm_ms(ms: &MomentSystem, opts: GmmOptions) -> Result<GmmFit> {
    if opts.k_steps < 1 {
        return Err(Error::invalid("iterative GMM needs K >= 1"));
    }
    let mut weighting = WeightingMatrix::block_instrument_moments(ms)?;
    let mut theta = solve_gmm(ms, &weighting)?;
    let mut steps = vec![theta];
    for _ in 2..=opts.k_steps {
        let mut omega = estimate_omega(ms, theta, opts.omega_kind)?;
        if opts.mode == InformationMode::LimitedInformation {
            zero_cross_blocks(&mut omega, ms.m_demand());
        }
        weighting = WeightingMatrix::inverse_omega(&omega)?;
        theta = solve_gmm(ms, &weighting)?;
        steps.push(theta);
    }
    let omega = estimate_omega(ms, theta, opts.omega_kind)?;
    assemble_fit(
        ms,
        EstimatorKind::IterativeGmm,
        theta,
        weighting,
        omega,
        steps,
        opts.mode,
        opts.omega_kind,
        false,
    )
}

/// Ratio of the reduced-form slopes of `Y` and `P` on the single excluded
/// instrument, for each equation.
pub fn indirect_least_squares(resid: &ResidualizedDataset) -> Result<Theta> {
    if resid.zs1.ncols() != 1 || resid.zd2.ncols() != 1 {
        return Err(Error::invalid("indirect least squares needs one instrument per equation"));
    }
    let ratio = |y: &DVector<f64>, p: &DVector<f64>, z: DVector<f64>, which: &str| -> Result<f64> {
        let zz = z.dot(&z);
        if zz == 0.0 {
            return Err(Error::Singular(format!("{which} instrument is identically zero")));
        }
        let slope_y = y.dot(&z) / zz;
        let slope_p = p.dot(&z) / zz;
        if slope_p == 0.0 || !slope_p.is_finite() {
            return Err(Error::Singular(format!("{which} first-stage slope is zero")));
        }
        Ok(slope_y / slope_p)
    };
    Ok(Theta::new(
        ratio(&resid.y1, &resid.p1, resid.zs1.column(0).into_owned(), "demand")?,
        ratio(&resid.y2, &resid.p2, resid.zd2.column(0).into_owned(), "supply")?,
    ))
}
