//! Partialing out controls by best linear prediction.
//!
//! Block 1 residualizes `Y`, `P` and the supply shifters against `(W, Zd)`;
//! block 2 residualizes `Y`, `P` and the demand shifters against `(W, Zs)`.
//! Least squares uses a pseudoinverse so collinear controls are handled with
//! the minimum-norm solution. The LASSO variant targets high-dimensional `W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    /// One weight per regressor column, on the original scale.
    pub coefficients: Vec<f64>,
    /// Unpenalized intercept fitted by the LASSO when no constant column is
    /// present. Always 0 for least squares.
    pub intercept: f64,
    pub regressor_labels: Vec<String>,
    pub rank_deficient: bool,
    pub residuals: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialMethod {
    Ols,
    Lasso,
}

/// Residualized columns feeding the moment conditions.
#[derive(Debug, Clone)]
pub struct ResidualizedDataset {
    pub y1: DVector<f64>,
    pub p1: DVector<f64>,
    /// Supply shifters residualized against `(W, Zd)`; `n x dim_zs`.
    pub zs1: DMatrix<f64>,
    pub y2: DVector<f64>,
    pub p2: DVector<f64>,
    /// Demand shifters residualized against `(W, Zs)`; `n x dim_zd`.
    pub zd2: DMatrix<f64>,
    pub method: PartialMethod,
}

impl ResidualizedDataset {
    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    /// Raw columns used as-is (nothing partialed out).
    pub fn from_columns(
        y1: DVector<f64>,
        p1: DVector<f64>,
        zs1: DMatrix<f64>,
        y2: DVector<f64>,
        p2: DVector<f64>,
        zd2: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y1.len();
        if [p1.len(), zs1.nrows(), y2.len(), p2.len(), zd2.nrows()].iter().any(|&k| k != n) {
            return Err(Error::dims("residualized columns must share one row count"));
        }
        Ok(Self {
            y1,
            p1,
            zs1,
            y2,
            p2,
            zd2,
            method: PartialMethod::Ols,
        })
    }
}

fn default_labels(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("x{j}")).collect()
}

/// Least-squares projection of `v` on the columns of `m` (no implicit
/// intercept).
pub fn best_linear_predictor(v: &DVector<f64>, m: &DMatrix<f64>) -> Result<LinearProjection> {
    best_linear_predictor_labeled(v, m, default_labels(m.ncols()))
}

pub fn best_linear_predictor_labeled(
    v: &DVector<f64>,
    m: &DMatrix<f64>,
    labels: Vec<String>,
) -> Result<LinearProjection> {
    if v.is_empty() {
        return Err(Error::EmptyInput("projection needs at least one row".into()));
    }
    if m.nrows() != v.len() {
        return Err(Error::dims(format!(
            "response has {} rows, regressors have {}",
            v.len(),
            m.nrows()
        )));
    }
    let (coef, rank_deficient) = linalg::pinv_solve(m, v);
    let residuals = v - m * &coef;
    Ok(LinearProjection {
        coefficients: coef.iter().copied().collect(),
        intercept: 0.0,
        regressor_labels: labels,
        rank_deficient,
        residuals,
    })
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

type Engine<'a> = &'a dyn Fn(&DVector<f64>, &DMatrix<f64>) -> Result<LinearProjection>;

fn residualize_columns(
    cols: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
    engine: Engine,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(cols.nrows(), cols.ncols());
    for j in 0..cols.ncols() {
        let fit = engine(&cols.column(j).into_owned(), regressors)?;
        out.set_column(j, &fit.residuals);
    }
    Ok(out)
}

fn partial_with(
    data: &Dataset,
    engine: Engine,
    method: PartialMethod,
) -> Result<ResidualizedDataset> {
    let y = data.quantities();
    let p = data.prices();
    let w = data.w();
    let zd = data.zd();
    let zs = data.zs();
    let block1 = hstack(&w, &zd);
    let block2 = hstack(&w, &zs);
    Ok(ResidualizedDataset {
        y1: engine(&y, &block1)?.residuals,
        p1: engine(&p, &block1)?.residuals,
        zs1: residualize_columns(&zs, &block1, engine)?,
        y2: engine(&y, &block2)?.residuals,
        p2: engine(&p, &block2)?.residuals,
        zd2: residualize_columns(&zd, &block2, engine)?,
        method,
    })
}

/// Least-squares partialing of both blocks.
pub fn partial_out(data: &Dataset) -> Result<ResidualizedDataset> {
    partial_with(data, &|v, m| best_linear_predictor(v, m), PartialMethod::Ols)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Convergence threshold on the largest standardized coefficient change.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Plug-in penalty `1.1 * sd(v) * sqrt(2 ln(max(p, n)) / n)`.
pub fn default_lambda(v: &DVector<f64>, p: usize) -> f64 {
    let n = v.len() as f64;
    let mean = v.mean();
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let size = (p.max(v.len()) as f64).max(2.0);
    1.1 * sd * (2.0 * size.ln() / n).sqrt()
}

/// Coordinate-descent LASSO of `v` on `m` with an unpenalized intercept.
///
/// Minimizes `(1/2n)|v - c - m b|^2 + lambda |b_std|_1` where `b_std` are
/// the coefficients of the columns standardized to unit SD (divisor `n`).
/// Constant columns are never penalized; the first nonzero one absorbs the
/// intercept.
pub fn lasso_fit(v: &DVector<f64>, m: &DMatrix<f64>, lambda: f64) -> Result<LinearProjection> {
    lasso_fit_traced(v, m, lambda, LassoOptions::default()).map(|(fit, _)| fit)
}

/// As [`lasso_fit`], also returning the objective after every sweep.
pub fn lasso_fit_traced(
    v: &DVector<f64>,
    m: &DMatrix<f64>,
    lambda: f64,
    opts: LassoOptions,
) -> Result<(LinearProjection, Vec<f64>)> {
    let n = v.len();
    if n == 0 {
        return Err(Error::EmptyInput("lasso needs at least one row".into()));
    }
    if m.nrows() != n {
        return Err(Error::dims("lasso response and regressors differ in rows"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lasso penalty must be >= 0"));
    }
    let nf = n as f64;
    let k = m.ncols();
    let v_mean = v.mean();
    let means: Vec<f64> = (0..k).map(|j| m.column(j).mean()).collect();
    let sds: Vec<f64> = (0..k)
        .map(|j| (m.column(j).iter().map(|x| (x - means[j]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    let active: Vec<usize> = (0..k)
        .filter(|&j| sds[j] > 1e-12 * (1.0 + means[j].abs()))
        .collect();

    let x: Vec<DVector<f64>> = active
        .iter()
        .map(|&j| m.column(j).map(|e| (e - means[j]) / sds[j]))
        .collect();
    let mut b = vec![0.0; active.len()];
    let mut r = v.map(|e| e - v_mean);
    let objective = |r: &DVector<f64>, b: &[f64]| r.norm_squared() / (2.0 * nf) + lambda * b.iter().map(|c| c.abs()).sum::<f64>();
    let mut history = vec![objective(&r, &b)];

    let mut converged = active.is_empty();
    let mut last_change = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for (idx, xj) in x.iter().enumerate() {
            let old = b[idx];
            let z = xj.dot(&r) / nf + old;
            let new = soft_threshold(z, lambda);
            if new != old {
                r.axpy(old - new, xj, 1.0);
                b[idx] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        history.push(objective(&r, &b));
        last_change = max_change;
        converged = max_change < opts.tol;
    }

    let mut coefficients = vec![0.0; k];
    for (idx, &j) in active.iter().enumerate() {
        coefficients[j] = b[idx] / sds[j];
    }
    let mut intercept = v_mean - (0..k).map(|j| coefficients[j] * means[j]).sum::<f64>();
    if let Some(c) = (0..k).find(|&j| !active.contains(&j) && means[j] != 0.0) {
        coefficients[c] = intercept / means[c];
        intercept = 0.0;
    }
    if !converged {
        return Err(Error::NonConvergence {
            sweeps,
            last_change,
            last_iterate: coefficients,
        });
    }
    let beta = DVector::from_column_slice(&coefficients);
    let residuals = v - m * beta - DVector::repeat(n, intercept);
    Ok((
        LinearProjection {
            coefficients,
            intercept,
            regressor_labels: default_labels(k),
            rank_deficient: false,
            residuals,
        },
        history,
    ))
}

/// LASSO partialing of both blocks. `lambda = None` uses [`default_lambda`]
/// separately for each response.
pub fn lasso_partial_out(data: &Dataset, lambda: Option<f64>) -> Result<ResidualizedDataset> {
    partial_with(
        data,
        &|v, m| {
            let pen = lambda.unwrap_or_else(|| default_lambda(v, m.ncols()));
            lasso_fit(v, m, pen)
        },
        PartialMethod::Lasso,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetShape, MarketObservation, Provenance};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
    }

    /// Normal equations solved by full-pivot Gaussian elimination.
    #[allow(clippy::needless_range_loop)]
    fn normal_equation_oracle(v: &DVector<f64>, m: &DMatrix<f64>) -> Vec<f64> {
        let k = m.ncols();
        let xtx = m.transpose() * m;
        let xtv = m.transpose() * v;
        let mut a: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut row: Vec<f64> = (0..k).map(|j| xtx[(i, j)]).collect();
                row.push(xtv[i]);
                row
            })
            .collect();
        let mut perm: Vec<usize> = (0..k).collect();
        for col in 0..k {
            let (mut pr, mut pc, mut best) = (col, col, 0.0);
            for (r, row) in a.iter().enumerate().skip(col) {
                for (c, &val) in row.iter().enumerate().take(k).skip(col) {
                    if val.abs() > best {
                        best = val.abs();
                        pr = r;
                        pc = c;
                    }
                }
            }
            a.swap(col, pr);
            for row in a.iter_mut() {
                row.swap(col, pc);
            }
            perm.swap(col, pc);
            for r in 0..k {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let mut x = vec![0.0; k];
        for i in 0..k {
            x[perm[i]] = a[i][k] / a[i][i];
        }
        x
    }

    #[test]
    fn perfect_fit_has_zero_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 30, 3);
        let gamma = DVector::from_vec(vec![0.5, -2.0, 3.25]);
        let fit = best_linear_predictor(&(&m * &gamma), &m).unwrap();
        assert!(fit.residuals.amax() < 1e-12);
    }

    #[test]
    fn constant_regressor_on_centered_data() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.5]);
        let m = DMatrix::from_element(4, 1, 1.0);
        let fit = best_linear_predictor(&v, &m).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-15);
        assert!((&fit.residuals - &v).amax() < 1e-15);
    }

    #[test]
    fn matches_gaussian_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let m = random_matrix(&mut rng, 50, 3);
        let v = DVector::from_fn(50, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = best_linear_predictor(&v, &m).unwrap();
        let oracle = normal_equation_oracle(&v, &m);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn collinear_regressors_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random_matrix(&mut rng, 20, 2);
        let mut m = DMatrix::zeros(20, 3);
        m.columns_mut(0, 2).copy_from(&base);
        m.set_column(2, &(base.column(0) * 2.0));
        let v = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = best_linear_predictor(&v, &m).unwrap();
        assert!(fit.rank_deficient);
        assert!((m.transpose() * &fit.residuals).amax() / 20.0 < 1e-8);
    }

    #[test]
    fn empty_input_rejected() {
        let v = DVector::<f64>::zeros(0);
        let m = DMatrix::<f64>::zeros(0, 1);
        assert!(matches!(best_linear_predictor(&v, &m), Err(Error::EmptyInput(_))));
    }

    type Row = (f64, f64, Vec<f64>, Vec<f64>, Vec<f64>);

    fn toy_dataset(rows: Vec<Row>) -> Dataset {
        let shape = DatasetShape {
            dim_zd: rows[0].2.len(),
            dim_zs: rows[0].3.len(),
            dim_w: rows[0].4.len(),
        };
        let obs = rows
            .into_iter()
            .map(|(p, y, zd, zs, w)| MarketObservation { p, y, zd, zs, w })
            .collect();
        Dataset::new(obs, shape, None, Provenance::Ingested).unwrap()
    }

    #[test]
    fn nothing_to_partial_in_block_one() {
        let data = toy_dataset(vec![
            (1.0, 2.0, vec![], vec![0.3], vec![]),
            (-1.0, 0.5, vec![], vec![-0.7], vec![]),
            (0.2, 1.5, vec![], vec![0.1], vec![]),
        ]);
        let r = partial_out(&data).unwrap();
        assert_eq!(r.y1, data.quantities());
        assert_eq!(r.p1, data.prices());
        assert_eq!(r.zs1, data.zs());
    }

    #[test]
    fn shifter_spanned_by_w_is_zeroed() {
        let data = toy_dataset(vec![
            (1.0, 2.0, vec![0.4], vec![3.0], vec![1.0, 1.0]),
            (-1.0, 0.5, vec![-0.1], vec![-1.0], vec![1.0, -1.0]),
            (0.2, 1.5, vec![0.9], vec![5.0], vec![1.0, 2.0]),
            (0.7, -0.5, vec![0.2], vec![1.0], vec![1.0, 0.0]),
        ]);
        let r = partial_out(&data).unwrap();
        assert!(r.zs1.amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_linear_idempotent(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 40, 3);
            let v1 = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v2 = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r1 = best_linear_predictor(&v1, &m).unwrap().residuals;
            let r2 = best_linear_predictor(&v2, &m).unwrap().residuals;
            prop_assert!((m.transpose() * &r1).amax() / 40.0 <= 1e-8);
            let combo = best_linear_predictor(&(&v1 * a + &v2 * b), &m).unwrap().residuals;
            prop_assert!((combo - (&r1 * a + &r2 * b)).amax() <= 1e-10);
            let again = best_linear_predictor(&r1, &m).unwrap().residuals;
            prop_assert!((again - &r1).amax() <= 1e-10);
        }
    }

    fn standardized_column(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = x.mean();
        let sd = (x.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        x.map(|e| (e - mean) / sd)
    }

    #[test]
    fn lasso_zero_penalty_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200;
        let mut m = DMatrix::from_element(n, 4, 1.0);
        for j in 1..4 {
            let col = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.5 * j as f64);
            m.set_column(j, &col);
        }
        let v = DVector::from_fn(n, |i, _| 1.0 + 2.0 * m[(i, 1)] - m[(i, 3)] + rng.sample::<f64, _>(StandardNormal));
        let ols = best_linear_predictor(&v, &m).unwrap();
        let lasso = lasso_fit(&v, &m, 0.0).unwrap();
        for (a, b) in ols.coefficients.iter().zip(&lasso.coefficients) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((ols.residuals - lasso.residuals).amax() < 1e-6);
    }

    #[test]
    fn lasso_deadzone_kills_all_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100;
        let cols: Vec<DVector<f64>> = (0..3).map(|_| standardized_column(&mut rng, n)).collect();
        let m = DMatrix::from_columns(&cols);
        let v0 = DVector::from_fn(n, |i, _| 0.3 * m[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let v = v0.map(|e| e - v0.mean());
        let lambda_max = (0..3).map(|j| (m.column(j).dot(&v) / n as f64).abs()).fold(0.0, f64::max);
        let fit = lasso_fit(&v, &m, lambda_max * 1.000_001).unwrap();
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn lasso_univariate_soft_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 150;
        let x = standardized_column(&mut rng, n);
        let v = DVector::from_fn(n, |i, _| 0.4 * x[i] + rng.sample::<f64, _>(StandardNormal));
        let v = v.map(|e| e - v.mean());
        let m = DMatrix::from_columns(std::slice::from_ref(&x));
        let fit = lasso_fit(&v, &m, 0.1).unwrap();
        let z: f64 = x.dot(&v) / n as f64;
        let oracle = z.signum() * (z.abs() - 0.1).max(0.0);
        assert!((fit.coefficients[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn lasso_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 120;
        let mut m = random_matrix(&mut rng, n, 8);
        for i in 0..n {
            m[(i, 1)] += 0.8 * m[(i, 0)];
        }
        let v = DVector::from_fn(n, |i, _| m[(i, 0)] - 0.5 * m[(i, 4)] + rng.sample::<f64, _>(StandardNormal));
        let (_, hist) = lasso_fit_traced(&v, &m, 0.05, LassoOptions::default()).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-14 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn lasso_nonconvergence_carries_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_matrix(&mut rng, 50, 5);
        let v = DVector::from_fn(50, |i, _| m[(i, 0)] + m[(i, 1)]);
        let opts = LassoOptions { tol: 1e-30, max_sweeps: 3 };
        match lasso_fit_traced(&v, &m, 0.01, opts) {
            Err(Error::NonConvergence { sweeps, last_iterate, .. }) => {
                assert_eq!(sweeps, 3);
                assert_eq!(last_iterate.len(), 5);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
