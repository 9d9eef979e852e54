//! Inference that stays valid when the instruments are weak: the
//! Anderson-Rubin statistic and region, the quasi likelihood ratio, and
//! conditional critical values for the LR test obtained by simulation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::gmm::CovarianceKernel;
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::gmm::{MomentSystem, Theta, ThetaBox};
use crate::linalg::{self, small};
use crate::optim::minimize_on_box;
use crate::rng::{derive_seed, substream};
use crate::stats::chi2_quantile;

/// Evaluation grid over `(a, b)`; points are visited `a`-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    a_axis: Vec<f64>,
    b_axis: Vec<f64>,
}

impl ThetaGrid {
    /// Evenly spaced grid spanning `bounds`, endpoints included.
    pub fn spanning(bounds: &ThetaBox, res_a: usize, res_b: usize) -> Result<Self> {
        bounds.validate()?;
        if res_a < 2 || res_b < 2 {
            return Err(Error::invalid("grid resolution must be at least 2 per axis"));
        }
        let axis = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
            (0..k)
                .map(|i| if i + 1 == k { hi } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 })
                .collect()
        };
        Self::from_axes(
            axis(bounds.lower.a, bounds.upper.a, res_a),
            axis(bounds.lower.b, bounds.upper.b, res_b),
        )
    }

    pub fn from_axes(a_axis: Vec<f64>, b_axis: Vec<f64>) -> Result<Self> {
        for axis in [&a_axis, &b_axis] {
            if axis.len() < 2 {
                return Err(Error::invalid("grid resolution must be at least 2 per axis"));
            }
            if !axis.iter().all(|x| x.is_finite()) || axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid("grid axes must be finite and strictly increasing"));
            }
        }
        Ok(Self { a_axis, b_axis })
    }

    pub fn a_axis(&self) -> &[f64] {
        &self.a_axis
    }

    pub fn b_axis(&self) -> &[f64] {
        &self.b_axis
    }

    pub fn len(&self) -> usize {
        self.a_axis.len() * self.b_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<Theta> {
        self.a_axis
            .iter()
            .flat_map(|&a| self.b_axis.iter().map(move |&b| Theta::new(a, b)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Ar,
    Clr,
}

impl std::str::FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" => Ok(Self::Ar),
            "clr" => Ok(Self::Clr),
            other => Err(Error::Config(format!("unknown region method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionPoint {
    pub a: f64,
    pub b: f64,
    pub statistic: f64,
    pub critical: f64,
    pub member: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceRegion {
    pub grid: ThetaGrid,
    pub points: Vec<RegionPoint>,
    /// Coverage level `1 - p`.
    pub level: f64,
    pub kind: RegionKind,
    /// Grid points whose covariance needed the ridge.
    pub ridged_points: usize,
}

impl ConfidenceRegion {
    pub fn member_count(&self) -> usize {
        self.points.iter().filter(|p| p.member).count()
    }

    pub fn membership(&self) -> Vec<bool> {
        self.points.iter().map(|p| p.member).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a_value", "b_value", "statistic", "critical", "member"])?;
        for p in &self.points {
            w.write_record([
                fmt_f64(p.a),
                fmt_f64(p.b),
                fmt_f64(p.statistic),
                fmt_f64(p.critical),
                (p.member as u8).to_string(),
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

/// `g' Ω(θ, θ)^{-1} g` through the kernel, `None` when singular after ridge.
fn kernel_quad(kernel: &CovarianceKernel, theta: Theta, g: &[f64]) -> Option<(f64, bool)> {
    let m = kernel.m();
    if m <= small::MAX_DIM {
        let mut buf = [0.0f64; small::MAX_DIM * small::MAX_DIM];
        kernel.omega_into(theta, theta, &mut buf[..m * m]);
        small::quad_form_inv(&buf[..m * m], m, g)
    } else {
        crate::gmm::cue::dense_quad_form(&kernel.omega(theta, theta), g)
    }
}

fn check_kernel(ms: &MomentSystem, kernel: &CovarianceKernel) -> Result<()> {
    if kernel.m() != ms.m() {
        return Err(Error::dims("kernel and moment system disagree on m"));
    }
    Ok(())
}

/// `S(θ) = n ĝ(θ)' Ω(θ, θ)^{-1} ĝ(θ)` and whether the ridge was used.
pub fn ar_statistic_flagged(ms: &MomentSystem, kernel: &CovarianceKernel, theta: Theta) -> Result<(f64, bool)> {
    check_kernel(ms, kernel)?;
    let g = ms.g_bar(theta);
    kernel_quad(kernel, theta, g.as_slice())
        .map(|(q, r)| (ms.n() as f64 * q, r))
        .ok_or_else(|| Error::Singular(format!("score covariance at ({}, {}) after ridge", theta.a, theta.b)))
}

pub fn ar_statistic(ms: &MomentSystem, kernel: &CovarianceKernel, theta: Theta) -> Result<f64> {
    ar_statistic_flagged(ms, kernel, theta).map(|(s, _)| s)
}

/// Anderson-Rubin region `{θ : S(θ) ≤ χ²_{1-p}(m)}` on `grid`.
pub fn ar_region(ms: &MomentSystem, kernel: &CovarianceKernel, grid: &ThetaGrid, p: f64) -> Result<ConfidenceRegion> {
    check_level(p)?;
    let critical = chi2_quantile(1.0 - p, ms.m() as f64);
    let evals: Vec<(f64, bool)> = grid
        .points()
        .into_par_iter()
        .map(|t| ar_statistic_flagged(ms, kernel, t))
        .collect::<Result<_>>()?;
    let points = grid
        .points()
        .iter()
        .zip(&evals)
        .map(|(t, &(s, _))| RegionPoint {
            a: t.a,
            b: t.b,
            statistic: s,
            critical,
            member: s <= critical,
        })
        .collect();
    Ok(ConfidenceRegion {
        grid: grid.clone(),
        points,
        level: 1.0 - p,
        kind: RegionKind::Ar,
        ridged_points: evals.iter().filter(|e| e.1).count(),
    })
}

fn check_level(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("test level p = {p} must lie in (0, 1)")))
    }
}

/// Settings for the inner minimizations and the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrOptions {
    /// Grid per axis for the outer `inf_Θ S`.
    pub grid: usize,
    /// Grid per axis for the per-draw infimum.
    pub draw_grid: usize,
    pub tol: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for LrOptions {
    fn default() -> Self {
        Self {
            grid: 61,
            draw_grid: 31,
            tol: 1e-8,
            draws: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrStatistic {
    pub value: f64,
    pub ar: f64,
    pub infimum: f64,
    pub argmin: Theta,
    pub boundary_hit: bool,
}

/// `inf_Θ S` by grid and compass search.
pub fn ar_infimum(
    ms: &MomentSystem,
    kernel: &CovarianceKernel,
    bounds: &ThetaBox,
    opts: &LrOptions,
) -> Result<(Theta, f64, bool)> {
    check_kernel(ms, kernel)?;
    bounds.validate()?;
    let n = ms.n() as f64;
    let best = minimize_on_box(
        |t| {
            let g = ms.g_bar(t);
            kernel_quad(kernel, t, g.as_slice()).map(|(q, _)| n * q).unwrap_or(f64::INFINITY)
        },
        bounds,
        opts.grid,
        opts.tol,
    );
    if !best.value.is_finite() {
        return Err(Error::Singular("score covariance singular over the whole box".into()));
    }
    Ok((best.theta, best.value, best.boundary_hit))
}

/// `LR(θ) = S(θ) - inf_Θ S`, with the infimum capped at `S(θ)` so the
/// statistic is never negative.
pub fn lr_statistic(
    ms: &MomentSystem,
    kernel: &CovarianceKernel,
    theta: Theta,
    bounds: &ThetaBox,
    opts: &LrOptions,
) -> Result<LrStatistic> {
    let (argmin, inf, boundary_hit) = ar_infimum(ms, kernel, bounds, opts)?;
    Ok(lr_from_parts(ar_statistic(ms, kernel, theta)?, argmin, inf, boundary_hit))
}

fn lr_from_parts(s: f64, argmin: Theta, inf: f64, boundary_hit: bool) -> LrStatistic {
    let infimum = inf.min(s);
    LrStatistic {
        value: s - infimum,
        ar: s,
        infimum,
        argmin,
        boundary_hit,
    }
}

/// `ĥ(θ, θ0) = ĝ(θ) - Ω(θ, θ0) Ω(θ0, θ0)^{-1} ĝ(θ0)`.
pub fn conditioning_statistic(
    ms: &MomentSystem,
    kernel: &CovarianceKernel,
    theta: Theta,
    theta0: Theta,
) -> Result<DVector<f64>> {
    check_kernel(ms, kernel)?;
    let omega00_inv = linalg::spd_inverse(&kernel.omega(theta0, theta0), "Omega(theta0, theta0)")?;
    Ok(ms.g_bar(theta) - kernel.omega(theta, theta0) * omega00_inv * ms.g_bar(theta0))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClrSimulation {
    pub critical_value: f64,
    /// Per successful draw, `n ĝ*(θ0)' Ω00^{-1} ĝ*(θ0) - n inf`.
    pub lr_star_direct: Vec<f64>,
    /// Per successful draw, `ξ' Ω00^{-1} ξ - n inf`.
    pub lr_star_xi: Vec<f64>,
    pub failed_draws: usize,
}

/// Simulated `1 - p` quantile of `LR*(θ0)` holding `ĥ(·, θ0)` and the
/// kernel fixed.
///
/// Draw `r` uses its own generator keyed by `derive_seed(seed, r)`, so the
/// result does not depend on the thread pool.
pub fn clr_critical_value(
    ms: &MomentSystem,
    kernel: &CovarianceKernel,
    theta0: Theta,
    bounds: &ThetaBox,
    p: f64,
    opts: &LrOptions,
) -> Result<ClrSimulation> {
    check_kernel(ms, kernel)?;
    check_level(p)?;
    bounds.validate()?;
    if opts.draws < 100 {
        return Err(Error::invalid("CLR simulation needs at least 100 draws"));
    }
    let m = ms.m();
    let n = ms.n() as f64;
    let sqrt_n = n.sqrt();
    let omega00 = kernel.omega(theta0, theta0);
    let omega00_inv = linalg::spd_inverse(&omega00, "Omega(theta0, theta0)")?;
    let factor = linalg::psd_factor(&omega00);
    let g0 = ms.g_bar(theta0);
    let h_at_0 = &g0 - &omega00 * &omega00_inv * &g0;

    let results: Vec<Option<(f64, f64)>> = (0..opts.draws as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(derive_seed(opts.seed, r), 0);
            let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xi = &factor * z;
            // ĝ*(θ) = ĝ(θ) + Ω(θ, θ0) v
            let v = &omega00_inv * (&xi / sqrt_n - &g0);
            let mut cross = vec![0.0; m * m];
            let mut g = vec![0.0; m];
            let mut value = |t: Theta| -> f64 {
                kernel.omega_into(t, theta0, &mut cross);
                let gb = ms.g_bar(t);
                for k in 0..m {
                    let mut s = gb[k];
                    for l in 0..m {
                        s += cross[k * m + l] * v[l];
                    }
                    g[k] = s;
                }
                kernel_quad(kernel, t, &g).map(|(q, _)| n * q).unwrap_or(f64::INFINITY)
            };
            let at_theta0 = value(theta0);
            let inner = minimize_on_box(&mut value, bounds, opts.draw_grid, opts.tol);
            let inf = inner.value.min(at_theta0);
            let g_star_0 = &h_at_0 + &omega00 * &omega00_inv * &xi / sqrt_n;
            let direct = n * (g_star_0.transpose() * &omega00_inv * &g_star_0)[0] - inf;
            let via_xi = (xi.transpose() * &omega00_inv * &xi)[0] - inf;
            (direct.is_finite() && via_xi.is_finite()).then_some((direct, via_xi))
        })
        .collect();

    let failed_draws = results.iter().filter(|r| r.is_none()).count();
    if failed_draws * 100 > opts.draws {
        return Err(Error::Simulation(format!(
            "{failed_draws} of {} CLR draws failed",
            opts.draws
        )));
    }
    let (lr_star_direct, lr_star_xi): (Vec<f64>, Vec<f64>) = results.into_iter().flatten().unzip();
    let mut sorted = lr_star_xi.clone();
    sorted.sort_by(f64::total_cmp);
    let k = ((1.0 - p) * sorted.len() as f64).ceil() as usize;
    let critical_value = sorted[k.clamp(1, sorted.len()) - 1];
    Ok(ClrSimulation {
        critical_value,
        lr_star_direct,
        lr_star_xi,
        failed_draws,
    })
}

/// Conditional LR region: `LR(θ) ≤ c_{1-p}(θ)` with a simulated critical
/// value at every grid point. All points share the base seed.
pub fn clr_region(
    ms: &MomentSystem,
    kernel: &CovarianceKernel,
    grid: &ThetaGrid,
    bounds: &ThetaBox,
    p: f64,
    opts: &LrOptions,
) -> Result<ConfidenceRegion> {
    check_level(p)?;
    let (argmin, inf, boundary_hit) = ar_infimum(ms, kernel, bounds, opts)?;
    if boundary_hit {
        log::warn!("infimum of S on the box boundary; region may be unbounded");
    }
    let evals: Vec<(RegionPoint, bool)> = grid
        .points()
        .into_par_iter()
        .map(|t| {
            let (s, ridged) = ar_statistic_flagged(ms, kernel, t)?;
            let lr = lr_from_parts(s, argmin, inf, boundary_hit);
            let sim = clr_critical_value(ms, kernel, t, bounds, p, opts)?;
            Ok((
                RegionPoint {
                    a: t.a,
                    b: t.b,
                    statistic: lr.value,
                    critical: sim.critical_value,
                    member: lr.value <= sim.critical_value,
                },
                ridged,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(ConfidenceRegion {
        grid: grid.clone(),
        ridged_points: evals.iter().filter(|e| e.1).count(),
        points: evals.into_iter().map(|e| e.0).collect(),
        level: 1.0 - p,
        kind: RegionKind::Clr,
    })
}

/// Dense `m x m` Ω(θ, θ̄), for callers holding only the moment system.
pub fn cross_covariance(ms: &MomentSystem, kernel: &CovarianceKernel, theta: Theta, theta_bar: Theta) -> Result<DMatrix<f64>> {
    check_kernel(ms, kernel)?;
    Ok(kernel.omega(theta, theta_bar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::testutil::random_resid;
    use crate::gmm::{cue_ms, CueOptions, OmegaKind};
    use crate::partialing::ResidualizedDataset;

    fn system(seed: u64, n: usize, md: usize, ms: usize) -> (MomentSystem, CovarianceKernel) {
        let r = random_resid(seed, n, md, ms);
        let ms = MomentSystem::build(&r).unwrap();
        let k = CovarianceKernel::new(&ms, OmegaKind::IidCentered).unwrap();
        (ms, k)
    }

    #[test]
    fn ar_zero_where_moments_vanish() {
        let (ms, k) = system(51, 300, 1, 1);
        let fit = cue_ms(&ms, &ThetaBox::default(), OmegaKind::IidCentered, CueOptions::default()).unwrap();
        assert!(ar_statistic(&ms, &k, fit.theta_hat).unwrap() < 1e-9);
    }

    #[test]
    fn ar_invariant_to_instrument_scale() {
        let r = random_resid(52, 200, 2, 2);
        let mut scaled: ResidualizedDataset = r.clone();
        scaled.zs1 *= -3.7;
        let a = MomentSystem::build(&r).unwrap();
        let b = MomentSystem::build(&scaled).unwrap();
        let ka = CovarianceKernel::new(&a, OmegaKind::IidCentered).unwrap();
        let kb = CovarianceKernel::new(&b, OmegaKind::IidCentered).unwrap();
        for t in [Theta::new(-0.8, 0.9), Theta::new(2.0, -1.0)] {
            let (sa, sb) = (ar_statistic(&a, &ka, t).unwrap(), ar_statistic(&b, &kb, t).unwrap());
            assert!((sa - sb).abs() <= 1e-8 * sa.max(1.0));
        }
    }

    #[test]
    fn ar_critical_value_and_level_monotonicity() {
        let (ms, k) = system(53, 400, 1, 1);
        let grid = ThetaGrid::spanning(&ThetaBox::new(Theta::new(-3.0, -2.0), Theta::new(2.0, 3.0)).unwrap(), 21, 21).unwrap();
        let r95 = ar_region(&ms, &k, &grid, 0.05).unwrap();
        assert!((r95.points[0].critical - 5.991).abs() < 5e-4);
        let r90 = ar_region(&ms, &k, &grid, 0.10).unwrap();
        assert!(r90.member_count() > 0);
        for (a, b) in r90.points.iter().zip(&r95.points) {
            assert!(!a.member || b.member);
        }
        let csv = r95.to_csv_string().unwrap();
        assert!(csv.starts_with("a_value,b_value,statistic,critical,member\n"));
        assert_eq!(csv.lines().count(), 1 + 441);
    }

    #[test]
    fn lr_bounds() {
        let (ms, k) = system(54, 500, 2, 2);
        let opts = LrOptions::default();
        let bounds = ThetaBox::default();
        let (argmin, inf, _) = ar_infimum(&ms, &k, &bounds, &opts).unwrap();
        let at_min = lr_statistic(&ms, &k, argmin, &bounds, &opts).unwrap();
        assert!(at_min.value.abs() < 1e-8);
        for t in [Theta::new(-0.8, 0.9), Theta::new(1.0, 1.0)] {
            let lr = lr_statistic(&ms, &k, t, &bounds, &opts).unwrap();
            assert!(lr.value >= 0.0 && lr.value <= lr.ar);
            assert!((lr.ar - lr.value - inf.min(lr.ar)).abs() < 1e-12);
        }
    }

    #[test]
    fn exactly_identified_lr_equals_ar() {
        let (ms, k) = system(55, 400, 1, 1);
        let lr = lr_statistic(&ms, &k, Theta::new(0.3, 0.2), &ThetaBox::default(), &LrOptions::default()).unwrap();
        assert!((lr.value - lr.ar).abs() < 1e-8);
    }

    #[test]
    fn conditioning_statistic_identities() {
        let (ms, k) = system(56, 300, 2, 1);
        let t0 = Theta::new(-0.8, 0.9);
        assert!(conditioning_statistic(&ms, &k, t0, t0).unwrap().amax() < 1e-12);
        // orthogonal to the scores at θ0 in sample
        let t = Theta::new(0.4, -2.0);
        let o00 = k.omega(t0, t0);
        let proj = k.omega(t, t0) * linalg::spd_inverse(&o00, "t").unwrap();
        let g = ms.scores(t);
        let g0 = ms.scores(t0);
        let h = &g - &g0 * proj.transpose();
        let n = g.nrows() as f64;
        let center = |x: &DMatrix<f64>| {
            let mut x = x.clone();
            for mut c in x.column_iter_mut() {
                let mean = c.sum() / n;
                c.add_scalar_mut(-mean);
            }
            x
        };
        let cov = center(&h).transpose() * center(&g0) / n;
        assert!(cov.amax() < 1e-8);
    }

    #[test]
    fn clr_draw_forms_agree_and_are_deterministic() {
        let (ms, k) = system(57, 300, 2, 2);
        let opts = LrOptions { draws: 120, seed: 9, ..Default::default() };
        let bounds = ThetaBox::default();
        let t0 = Theta::new(-0.8, 0.9);
        let a = clr_critical_value(&ms, &k, t0, &bounds, 0.05, &opts).unwrap();
        let b = clr_critical_value(&ms, &k, t0, &bounds, 0.05, &opts).unwrap();
        assert_eq!(a.critical_value, b.critical_value);
        assert_eq!(a.lr_star_xi.len(), 120);
        for (d, x) in a.lr_star_direct.iter().zip(&a.lr_star_xi) {
            assert!((d - x).abs() < 1e-8);
            assert!(*x >= -1e-8);
        }
        assert!(clr_critical_value(&ms, &k, t0, &bounds, 0.05, &LrOptions { draws: 99, ..opts }).is_err());
    }

    #[test]
    fn clr_region_smallest_grid() {
        let (ms, k) = system(58, 200, 1, 1);
        let bounds = ThetaBox::default();
        let grid = ThetaGrid::spanning(&bounds, 2, 2).unwrap();
        let opts = LrOptions { draws: 100, grid: 21, draw_grid: 11, ..Default::default() };
        let region = clr_region(&ms, &k, &grid, &bounds, 0.05, &opts).unwrap();
        assert_eq!(region.points.len(), 4);
        for p in &region.points {
            assert_eq!(p.member, p.statistic <= p.critical);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(ThetaGrid::from_axes(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(ThetaGrid::from_axes(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        let g = ThetaGrid::spanning(&ThetaBox::default(), 3, 2).unwrap();
        assert_eq!(g.points()[1], Theta::new(-10.0, 10.0));
        assert_eq!(g.len(), 6);
    }
}
