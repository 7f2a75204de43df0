#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Penalized least squares over natural cubic splines on `knots`, solved
/// densely in the truncated-power basis
/// `1, x, d_k(x) - d_{K-1}(x)` with
/// `d_k(x) = ((x - t_k)^3_+ - (x - t_K)^3_+) / (t_K - t_k)`.
pub struct DenseOracle {
    pub objective: f64,
    /// Fitted values at the data abscissae, `fitted[component][i]`.
    pub fitted: Vec<Vec<f64>>,
}

fn cube_plus(u: f64) -> f64 {
    if u > 0.0 {
        u * u * u
    } else {
        0.0
    }
}

fn basis(knots: &[f64], x: f64) -> Vec<f64> {
    let k = knots.len();
    let last = knots[k - 1];
    let d = |j: usize| (cube_plus(x - knots[j]) - cube_plus(x - last)) / (last - knots[j]);
    let mut out = vec![1.0, x];
    for j in 0..k - 2 {
        out.push(d(j) - d(k - 2));
    }
    out
}

fn basis_second(knots: &[f64], x: f64) -> Vec<f64> {
    let k = knots.len();
    let last = knots[k - 1];
    let plus = |u: f64| u.max(0.0);
    let d = |j: usize| 6.0 * (plus(x - knots[j]) - plus(x - last)) / (last - knots[j]);
    let mut out = vec![0.0, 0.0];
    for j in 0..k - 2 {
        out.push(d(j) - d(k - 2));
    }
    out
}

/// Gram matrix of second derivatives; Simpson's rule is exact for the
/// piecewise-quadratic integrands.
fn penalty_gram(knots: &[f64]) -> DMatrix<f64> {
    let p = knots.len();
    let mut omega = DMatrix::zeros(p, p);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        for (x, wt) in [(a, h / 6.0), ((a + b) / 2.0, 4.0 * h / 6.0), (b, h / 6.0)] {
            let s = basis_second(knots, x);
            for i in 0..p {
                for j in 0..p {
                    omega[(i, j)] += wt * s[i] * s[j];
                }
            }
        }
    }
    omega
}

pub fn dense_natural_spline_fit(
    xs: &[f64],
    ys: &[Vec<f64>],
    ws: &[f64],
    lambda: f64,
    knots: &[f64],
) -> DenseOracle {
    let n = xs.len();
    let p = knots.len();
    let ell = ys[0].len();
    let design = DMatrix::from_fn(n, p, |i, j| basis(knots, xs[i])[j]);
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(ws));
    let omega = penalty_gram(knots);
    let lhs = design.transpose() * &w * &design + &omega * lambda;
    let lu = lhs.lu();
    let mut objective = 0.0;
    let mut fitted = Vec::with_capacity(ell);
    for c in 0..ell {
        let y = DVector::from_fn(n, |i, _| ys[i][c]);
        let theta = lu.solve(&(design.transpose() * &w * &y)).expect("nonsingular system");
        let fit = &design * &theta;
        let resid = &y - &fit;
        let rss: f64 = (0..n).map(|i| ws[i] * resid[i] * resid[i]).sum();
        objective += rss + lambda * (theta.transpose() * &omega * &theta)[(0, 0)];
        fitted.push(fit.iter().copied().collect());
    }
    DenseOracle { objective, fitted }
}

/// Distinct sorted abscissae.
pub fn distinct_sorted(xs: &[f64]) -> Vec<f64> {
    let mut k = xs.to_vec();
    k.sort_by(f64::total_cmp);
    k.dedup();
    k
}
