//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wright_core::dag::Dag;
use wright_core::Dataset;

/// `[a | b | ...]` column concatenation.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let k: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut j = 0;
    for b in blocks {
        out.columns_mut(j, b.ncols()).copy_from(b);
        j += b.ncols();
    }
    out
}

pub fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// OLS coefficients via the normal equations.
pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let xtx = x.transpose() * x;
    xtx.lu().solve(&(x.transpose() * y)).expect("full-rank regressors")
}

/// Two-stage least squares `(X' Pz X)^{-1} X' Pz y`.
pub fn tsls(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DVector<f64> {
    let ztz_inv = (z.transpose() * z).try_inverse().expect("full-rank instruments");
    let xz = x.transpose() * z;
    let a = &xz * &ztz_inv * xz.transpose();
    let b = &xz * &ztz_inv * (z.transpose() * y);
    a.lu().solve(&b).expect("identified")
}

/// 2SLS elasticities on raw data with controls as included exogenous
/// regressors: demand `Y ~ P + W + Zd` instrumented by `Zs`, supply
/// `Y ~ P + W + Zs` instrumented by `Zd`.
pub fn tsls_with_controls(data: &Dataset) -> (f64, f64) {
    let (y, p) = (data.quantities(), data.prices());
    let (zd, zs, w) = (data.zd(), data.zs(), data.w());
    let pc = column(&p);
    let a = tsls(&y, &hcat(&[&pc, &w, &zd]), &hcat(&[&zs, &w, &zd]))[0];
    let b = tsls(&y, &hcat(&[&pc, &w, &zs]), &hcat(&[&zd, &w, &zs]))[0];
    (a, b)
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        p += 2.0 * if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// Random DAG on `n` nodes: a random permutation fixes the order, each
/// forward pair is an edge with probability `density`.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Dag {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let labels: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let mut dag = Dag::new();
    for l in &labels {
        dag.add_node(l, false).unwrap();
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                dag.add_edge(&labels[order[i]], &labels[order[j]]).unwrap();
            }
        }
    }
    dag
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn descendants_or_self(dag: &Dag, v: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([v]);
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        for &c in dag.children(u) {
            if seen.insert(c) {
                stack.push(c);
            }
        }
    }
    seen
}

/// Every simple undirected path from `x` to `y`, as node lists with edge
/// orientation (`true` = points along the path).
pub fn all_paths(dag: &Dag, x: usize, y: usize) -> Vec<(Vec<usize>, Vec<bool>)> {
    fn walk(
        dag: &Dag,
        y: usize,
        nodes: &mut Vec<usize>,
        dirs: &mut Vec<bool>,
        out: &mut Vec<(Vec<usize>, Vec<bool>)>,
    ) {
        let u = *nodes.last().unwrap();
        if u == y {
            out.push((nodes.clone(), dirs.clone()));
            return;
        }
        let steps = dag.children(u).iter().map(|&c| (c, true)).chain(dag.parents(u).iter().map(|&p| (p, false)));
        for (v, fwd) in steps.collect::<Vec<_>>() {
            if nodes.contains(&v) {
                continue;
            }
            nodes.push(v);
            dirs.push(fwd);
            walk(dag, y, nodes, dirs, out);
            nodes.pop();
            dirs.pop();
        }
    }
    let mut out = Vec::new();
    walk(dag, y, &mut vec![x], &mut Vec::new(), &mut out);
    out
}

pub fn path_blocked(dag: &Dag, nodes: &[usize], dirs: &[bool], z: &BTreeSet<usize>) -> bool {
    (1..nodes.len() - 1).any(|i| {
        let collider = dirs[i - 1] && !dirs[i];
        if collider {
            descendants_or_self(dag, nodes[i]).is_disjoint(z)
        } else {
            z.contains(&nodes[i])
        }
    })
}

/// d-separation by exhaustive path blocking.
pub fn separated_oracle(dag: &Dag, x: &[usize], y: &[usize], z: &BTreeSet<usize>) -> bool {
    x.iter().all(|&a| {
        y.iter()
            .all(|&b| all_paths(dag, a, b).iter().all(|(n, d)| path_blocked(dag, n, d, z)))
    })
}
