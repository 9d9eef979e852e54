//! Derivative-free minimization over a rectangle: a coarse grid scan
//! followed by compass search from the best grid point.

use serde::Serialize;

use crate::gmm::{Theta, ThetaBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxMinimum {
    pub theta: Theta,
    pub value: f64,
    pub boundary_hit: bool,
    pub evaluations: usize,
}

/// Grid points per axis `grid` (at least 2); compass steps start at the
/// grid spacing and halve until both are below `tol`.
///
/// Non-finite objective values are treated as `+inf`.
pub fn minimize_on_box(f: impl FnMut(Theta) -> f64, bounds: &ThetaBox, grid: usize, tol: f64) -> BoxMinimum {
    let mut f = f;
    let mut evals = 0usize;
    let mut eval = |t: Theta| {
        evals += 1;
        let v = f(t);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let grid = grid.max(2);
    let w = bounds.width();
    let (ha, hb) = (w.a / (grid - 1) as f64, w.b / (grid - 1) as f64);
    let mut best = bounds.lower;
    let mut best_v = f64::INFINITY;
    for i in 0..grid {
        let a = bounds.lower.a + ha * i as f64;
        for j in 0..grid {
            let b = bounds.lower.b + hb * j as f64;
            let t = Theta::new(a, b);
            let v = eval(t);
            if v < best_v {
                best_v = v;
                best = t;
            }
        }
    }
    let (mut sa, mut sb) = (ha, hb);
    while sa > tol || sb > tol {
        let mut improved = false;
        for (da, db) in [(sa, 0.0), (-sa, 0.0), (0.0, sb), (0.0, -sb)] {
            let cand = bounds.clamp(Theta::new(best.a + da, best.b + db));
            if cand == best {
                continue;
            }
            let v = eval(cand);
            if v < best_v {
                best_v = v;
                best = cand;
                improved = true;
                break;
            }
        }
        if !improved {
            sa *= 0.5;
            sb *= 0.5;
        }
    }
    BoxMinimum {
        theta: best,
        value: best_v,
        boundary_hit: bounds.on_boundary(best, 1e-9),
        evaluations: evals,
    }
}
