//! Vector-valued cubic splines on `[0, 1]` and the weighted cubic smoothing
//! spline fit.
//!
//! A spline is stored by its knots and, per output component, the values and
//! second derivatives at the knots. Between knots it is the unique cubic
//! matching those; outside the knot range it continues linearly. Fitted
//! splines are natural (zero second derivative at the end knots).

use std::fmt::Write as _;

use crate::error::{check_unit, Error, Result};
use crate::quadrature::GaussLegendre;
use crate::regression::RegressionFn;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    knots: Vec<f64>,
    values: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// Weighted samples `(x_i, y_i, w_i)` with `y_i` in `R^ell`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoints {
    ell: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
}

impl WeightedPoints {
    pub fn new(xs: Vec<f64>, ys: Vec<Vec<f64>>, ws: Vec<f64>) -> Result<Self> {
        let ell = ys.first().map_or(0, Vec::len);
        if ys.iter().any(|y| y.len() != ell) {
            return Err(Error::InvalidParameter(
                "all responses must have the same dimension".into(),
            ));
        }
        Self::from_flat(ell, xs, ys.concat(), ws)
    }

    pub fn from_flat(ell: usize, xs: Vec<f64>, ys: Vec<f64>, ws: Vec<f64>) -> Result<Self> {
        if ell == 0 {
            return Err(Error::InvalidParameter("response dimension must be positive".into()));
        }
        if xs.len() != ws.len() || ys.len() != xs.len() * ell {
            return Err(Error::InvalidParameter(format!(
                "length mismatch: {} abscissae, {} responses of dim {ell}, {} weights",
                xs.len(),
                ys.len() / ell,
                ws.len()
            )));
        }
        for &x in &xs {
            check_unit(x, "abscissa")?;
        }
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("response values".into()));
        }
        if !(ws.iter().sum::<f64>() > 0.0) {
            return Err(Error::Degenerate("weights sum to zero".into()));
        }
        Ok(Self { ell, xs, ys, ws })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ws(&self) -> &[f64] {
        &self.ws
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.ell..(i + 1) * self.ell]
    }

    /// Merge points sharing an abscissa: weights add, responses are
    /// weight-averaged. Zero-weight groups are dropped. Output is sorted.
    pub fn aggregate(&self) -> WeightedPoints {
        self.aggregate_within(0.0)
    }

    /// Like [`aggregate`](Self::aggregate), but abscissae closer than `tol`
    /// to the first member of their group are merged too; the merged
    /// abscissa is the weighted mean of the group.
    pub fn aggregate_within(&self, tol: f64) -> WeightedPoints {
        let ell = self.ell;
        let mut order: Vec<usize> = (0..self.xs.len()).collect();
        order.sort_by(|&i, &j| self.xs[i].total_cmp(&self.xs[j]));
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        let mut acc = vec![0.0; ell];
        let mut start = 0;
        while start < order.len() {
            let x0 = self.xs[order[start]];
            let mut end = start;
            let mut wsum = 0.0;
            let mut xsum = 0.0;
            acc.fill(0.0);
            while end < order.len() && self.xs[order[end]] - x0 <= tol {
                let i = order[end];
                let w = self.ws[i];
                wsum += w;
                xsum += w * self.xs[i];
                for (a, &y) in acc.iter_mut().zip(self.y(i)) {
                    *a += w * y;
                }
                end += 1;
            }
            if wsum > 0.0 {
                let x = if tol == 0.0 { x0 } else { (xsum / wsum).clamp(x0, self.xs[order[end - 1]]) };
                xs.push(x);
                ys.extend(acc.iter().map(|a| a / wsum));
                ws.push(wsum);
            }
            start = end;
        }
        WeightedPoints { ell, xs, ys, ws }
    }

    /// `Σ_i w_i ‖y_i - f(x_i)‖²`.
    pub fn residual_sum(&self, f: &dyn RegressionFn) -> f64 {
        let mut fx = vec![0.0; self.ell];
        let mut total = 0.0;
        for (i, (&x, &w)) in self.xs.iter().zip(&self.ws).enumerate() {
            f.eval_into(x, &mut fx);
            let r2: f64 = self.y(i).iter().zip(&fx).map(|(y, v)| (y - v) * (y - v)).sum();
            total += w * r2;
        }
        total
    }
}

/// Penalized criterion minimized by [`fit_smoothing_spline`]:
/// `Σ w ‖y - f(x)‖² + λ ∫ ‖f''‖²`.
pub fn smoothing_objective(pts: &WeightedPoints, lambda: f64, f: &SplineFunction) -> f64 {
    pts.residual_sum(f) + lambda * f.curvature_norm_sq()
}

/// Abscissae closer than this fraction of the abscissa range share a knot.
pub const KNOT_MERGE_TOLERANCE: f64 = 1e-6;

/// Beyond this many distinct abscissae the fit uses a reduced knot set.
pub const MAX_KNOTS: usize = 256;

/// Fit the natural cubic smoothing spline, independently per component.
///
/// Abscissae within [`KNOT_MERGE_TOLERANCE`] times the range are merged
/// first. With at most [`MAX_KNOTS`] distinct abscissae the knots are those
/// abscissae and the minimizer is exact (Reinsch's banded formulation).
/// Larger inputs are fitted over natural splines with [`MAX_KNOTS`] knots at
/// evenly spaced order statistics of the abscissae: the all-knots system is
/// numerically singular there (its condition number grows like `n⁴`).
pub fn fit_smoothing_spline(pts: &WeightedPoints, lambda: f64) -> Result<SplineFunction> {
    let (lo, hi) = pts
        .xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let agg = pts.aggregate_within(KNOT_MERGE_TOLERANCE * (hi - lo).max(0.0));
    if agg.len() <= MAX_KNOTS {
        fit_smoothing_spline_exact(&agg, lambda)
    } else {
        let n = agg.len();
        let knots: Vec<f64> = (0..MAX_KNOTS)
            .map(|i| agg.xs[(i * (n - 1)) / (MAX_KNOTS - 1)])
            .collect();
        fit_on_knots(&agg, lambda, knots)
    }
}

/// Penalized least squares over natural cubic splines with the given knots,
/// which must cover every abscissa. The unknowns are the knot values `g`;
/// the interior second derivatives are `γ = R⁻¹ Qᵀ g` and the penalty is
/// `gᵀ Q R⁻¹ Qᵀ g`. Solved densely, so meant for a few hundred knots.
pub fn fit_on_knots(pts: &WeightedPoints, lambda: f64, knots: Vec<f64>) -> Result<SplineFunction> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing parameter must be positive, got {lambda}"
        )));
    }
    let k = knots.len();
    if k < 2 || knots.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::Degenerate("need at least 2 strictly increasing knots".into()));
    }
    if pts.xs.iter().any(|&x| x < knots[0] || x > knots[k - 1]) {
        return Err(Error::InvalidParameter("knots must cover all abscissae".into()));
    }
    let ell = pts.ell;
    let h: Vec<f64> = knots.windows(2).map(|p| p[1] - p[0]).collect();

    // gamma_map: row r = second derivative at knot r as a function of g.
    let mut gamma_map = vec![vec![0.0; k]; k];
    if k > 2 {
        let m = k - 2;
        // Thomas factorization of R (tridiagonal, SPD)
        let diag: Vec<f64> = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
        let off: Vec<f64> = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
        let mut c_prime = vec![0.0; m];
        let mut d_prime = vec![0.0; m];
        for col in 0..k {
            // column `col` of Qᵀ: entries for interior rows j (knot j+1)
            let qt = |j: usize| -> f64 {
                let i = j + 1;
                if col + 1 == i {
                    1.0 / h[i - 1]
                } else if col == i {
                    -1.0 / h[i - 1] - 1.0 / h[i]
                } else if col == i + 1 {
                    1.0 / h[i]
                } else {
                    0.0
                }
            };
            for j in 0..m {
                let sub = if j > 0 { off[j - 1] } else { 0.0 };
                let denom = diag[j] - sub * if j > 0 { c_prime[j - 1] } else { 0.0 };
                c_prime[j] = if j + 1 < m { off[j] / denom } else { 0.0 };
                d_prime[j] = (qt(j) - sub * if j > 0 { d_prime[j - 1] } else { 0.0 }) / denom;
            }
            let mut next = 0.0;
            for j in (0..m).rev() {
                let v = d_prime[j] - c_prime[j] * next;
                gamma_map[j + 1][col] = v;
                next = v;
            }
        }
    }

    // Data term accumulated per interval in z = (g_j, g_{j+1}, γ_j, γ_{j+1}).
    let mut hess = vec![[[0.0f64; 4]; 4]; k - 1];
    let mut lin = vec![vec![[0.0f64; 4]; k - 1]; ell];
    for (i, (&x, &w)) in pts.xs.iter().zip(&pts.ws).enumerate() {
        let j = knots.partition_point(|&t| t <= x).clamp(1, k - 1) - 1;
        let hj = h[j];
        let a = (knots[j + 1] - x) / hj;
        let b = 1.0 - a;
        let phi = [a, b, (a * a * a - a) * hj * hj / 6.0, (b * b * b - b) * hj * hj / 6.0];
        for r in 0..4 {
            for c in 0..4 {
                hess[j][r][c] += w * phi[r] * phi[c];
            }
        }
        for (comp, l) in lin.iter_mut().enumerate() {
            let y = pts.ys[i * ell + comp];
            for r in 0..4 {
                l[j][r] += w * y * phi[r];
            }
        }
    }

    let mut normal = vec![0.0; k * k];
    let mut rows: [Vec<f64>; 4] = Default::default();
    for j in 0..k - 1 {
        rows[0] = unit(k, j);
        rows[1] = unit(k, j + 1);
        rows[2] = gamma_map[j].clone();
        rows[3] = gamma_map[j + 1].clone();
        let hj = &hess[j];
        // Σ_rc H_rc e_r e_cᵀ; first combine columns to halve the work
        let mut combo = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
        for r in 0..4 {
            for c in 0..4 {
                if hj[r][c] != 0.0 {
                    for (v, e) in combo[r].iter_mut().zip(&rows[c]) {
                        *v += hj[r][c] * e;
                    }
                }
            }
        }
        for r in 0..4 {
            for (p, &er) in rows[r].iter().enumerate() {
                if er == 0.0 {
                    continue;
                }
                let dst = &mut normal[p * k..(p + 1) * k];
                for (d, v) in dst.iter_mut().zip(&combo[r]) {
                    *d += er * v;
                }
            }
        }
    }
    // penalty λ Q Γ: (Qᵀ g) is the vector of second divided differences
    for col in 0..k {
        for i in 1..k - 1 {
            let qi = [1.0 / h[i - 1], -1.0 / h[i - 1] - 1.0 / h[i], 1.0 / h[i]];
            let g = gamma_map[i][col];
            if g == 0.0 {
                continue;
            }
            normal[(i - 1) * k + col] += lambda * qi[0] * g;
            normal[i * k + col] += lambda * qi[1] * g;
            normal[(i + 1) * k + col] += lambda * qi[2] * g;
        }
    }
    // symmetrize against rounding
    for r in 0..k {
        for c in 0..r {
            let v = 0.5 * (normal[r * k + c] + normal[c * k + r]);
            normal[r * k + c] = v;
            normal[c * k + r] = v;
        }
    }
    let chol = dense_cholesky(&mut normal, k)?;
    let mut values = Vec::with_capacity(ell);
    let mut second = Vec::with_capacity(ell);
    for l in &lin {
        let mut rhs = vec![0.0; k];
        for j in 0..k - 1 {
            let rows_j = [&unit(k, j), &unit(k, j + 1), &gamma_map[j], &gamma_map[j + 1]];
            for r in 0..4 {
                if l[j][r] == 0.0 {
                    continue;
                }
                for (v, e) in rhs.iter_mut().zip(rows_j[r].iter()) {
                    *v += l[j][r] * e;
                }
            }
        }
        let g = chol_solve(&chol, k, rhs);
        let gamma: Vec<f64> = gamma_map.iter().map(|row| row.iter().zip(&g).map(|(a, b)| a * b).sum()).collect();
        values.push(g);
        second.push(gamma);
    }
    SplineFunction::from_parts(knots, values, second)
}

fn unit(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

/// In-place lower Cholesky factor of a dense SPD matrix (row-major).
fn dense_cholesky(a: &mut [f64], k: usize) -> Result<&[f64]> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Internal(format!("normal matrix not positive definite at {j}")));
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / d;
        }
    }
    Ok(a)
}

fn chol_solve(l: &[f64], k: usize, mut b: Vec<f64>) -> Vec<f64> {
    for i in 0..k {
        let mut v = b[i];
        for p in 0..i {
            v -= l[i * k + p] * b[p];
        }
        b[i] = v / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for p in i + 1..k {
            v -= l[p * k + i] * b[p];
        }
        b[i] = v / l[i * k + i];
    }
    b
}

/// Fit with knots at exactly the distinct abscissae of `pts` (no merging).
pub fn fit_smoothing_spline_exact(pts: &WeightedPoints, lambda: f64) -> Result<SplineFunction> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing parameter must be positive, got {lambda}"
        )));
    }
    let agg = pts.aggregate();
    let n = agg.xs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 distinct abscissae with positive weight, got {n}"
        )));
    }
    let ell = agg.ell;
    let t = &agg.xs;
    let w = &agg.ws;
    let h: Vec<f64> = t.windows(2).map(|p| p[1] - p[0]).collect();

    if n == 2 {
        let values = (0..ell).map(|j| vec![agg.ys[j], agg.ys[ell + j]]).collect();
        let second = vec![vec![0.0; 2]; ell];
        return Ok(SplineFunction {
            knots: t.clone(),
            values,
            second,
        });
    }

    // Q has columns for interior knots 1..n-1 with entries at rows i-1, i, i+1.
    let m = n - 2;
    let q = |i: usize| -> [f64; 3] {
        let a = 1.0 / h[i - 1];
        let c = 1.0 / h[i];
        [a, -a - c, c]
    };
    let mut diag = vec![0.0; m];
    let mut off1 = vec![0.0; m.saturating_sub(1)];
    let mut off2 = vec![0.0; m.saturating_sub(2)];
    for j in 0..m {
        let i = j + 1;
        let qi = q(i);
        diag[j] = (h[i - 1] + h[i]) / 3.0
            + lambda * (qi[0] * qi[0] / w[i - 1] + qi[1] * qi[1] / w[i] + qi[2] * qi[2] / w[i + 1]);
        if j + 1 < m {
            let qn = q(i + 1);
            // rows shared by columns i and i+1: i and i+1
            off1[j] = h[i] / 6.0 + lambda * (qi[1] * qn[0] / w[i] + qi[2] * qn[1] / w[i + 1]);
        }
        if j + 2 < m {
            let qn = q(i + 2);
            off2[j] = lambda * qi[2] * qn[0] / w[i + 1];
        }
    }
    let chol = BandedCholesky::factor(diag, off1, off2)?;

    let mut values = Vec::with_capacity(ell);
    let mut second = Vec::with_capacity(ell);
    let mut rhs = vec![0.0; m];
    for comp in 0..ell {
        let y: Vec<f64> = (0..n).map(|i| agg.ys[i * ell + comp]).collect();
        for (j, r) in rhs.iter_mut().enumerate() {
            let i = j + 1;
            let qi = q(i);
            *r = qi[0] * y[i - 1] + qi[1] * y[i] + qi[2] * y[i + 1];
        }
        let gamma = chol.solve(&rhs);
        // g = y - λ W^{-1} Q γ
        let mut g = y;
        for (j, &gj) in gamma.iter().enumerate() {
            let i = j + 1;
            let qi = q(i);
            g[i - 1] -= lambda * qi[0] * gj / w[i - 1];
            g[i] -= lambda * qi[1] * gj / w[i];
            g[i + 1] -= lambda * qi[2] * gj / w[i + 1];
        }
        let mut full = Vec::with_capacity(n);
        full.push(0.0);
        full.extend_from_slice(&gamma);
        full.push(0.0);
        values.push(g);
        second.push(full);
    }
    Ok(SplineFunction {
        knots: t.clone(),
        values,
        second,
    })
}

/// Cholesky factor of a symmetric positive definite pentadiagonal matrix.
struct BandedCholesky {
    // L has unit-free layout: l0 diagonal, l1 first sub-diagonal, l2 second.
    l0: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl BandedCholesky {
    fn factor(diag: Vec<f64>, off1: Vec<f64>, off2: Vec<f64>) -> Result<Self> {
        let m = diag.len();
        let mut l0 = vec![0.0; m];
        let mut l1 = vec![0.0; m.saturating_sub(1)];
        let mut l2 = vec![0.0; m.saturating_sub(2)];
        for i in 0..m {
            // L[i][i-2], L[i][i-1]
            if i >= 2 {
                l2[i - 2] = off2[i - 2] / l0[i - 2];
            }
            if i >= 1 {
                let mut v = off1[i - 1];
                if i >= 2 {
                    v -= l2[i - 2] * l1[i - 2];
                }
                l1[i - 1] = v / l0[i - 1];
            }
            let mut d = diag[i];
            if i >= 1 {
                d -= l1[i - 1] * l1[i - 1];
            }
            if i >= 2 {
                d -= l2[i - 2] * l2[i - 2];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Internal(format!(
                    "smoothing system not positive definite at row {i}"
                )));
            }
            l0[i] = d.sqrt();
        }
        Ok(Self { l0, l1, l2 })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = b.len();
        let mut z = vec![0.0; m];
        for i in 0..m {
            let mut v = b[i];
            if i >= 1 {
                v -= self.l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                v -= self.l2[i - 2] * z[i - 2];
            }
            z[i] = v / self.l0[i];
        }
        for i in (0..m).rev() {
            let mut v = z[i];
            if i + 1 < m {
                v -= self.l1[i] * z[i + 1];
            }
            if i + 2 < m {
                v -= self.l2[i] * z[i + 2];
            }
            z[i] = v / self.l0[i];
        }
        z
    }
}

impl SplineFunction {
    /// Build from knots and, per component, knot values and second
    /// derivatives.
    pub fn from_parts(knots: Vec<f64>, values: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidParameter("a spline needs at least 2 knots".into()));
        }
        if knots.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::InvalidParameter("knots must be strictly increasing".into()));
        }
        check_unit(knots[0], "first knot")?;
        check_unit(knots[knots.len() - 1], "last knot")?;
        if values.is_empty() || values.len() != second.len() {
            return Err(Error::InvalidParameter("component count mismatch".into()));
        }
        let n = knots.len();
        if values.iter().chain(&second).any(|v| v.len() != n) {
            return Err(Error::InvalidParameter("coefficient length differs from knot count".into()));
        }
        if values.iter().chain(&second).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spline coefficients".into()));
        }
        Ok(Self {
            knots,
            values,
            second,
        })
    }

    /// Natural cubic interpolant of `values` (per component) at `knots`.
    pub fn interpolate(knots: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(Error::Degenerate("interpolation needs at least 2 knots".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|p| p[1] - p[0]).collect();
        let mut second = Vec::with_capacity(values.len());
        for v in &values {
            if v.len() != n {
                return Err(Error::InvalidParameter("value count differs from knot count".into()));
            }
            let mut gamma = vec![0.0; n];
            if n > 2 {
                // tridiagonal R γ = Q^T g, Thomas algorithm
                let m = n - 2;
                let mut diag: Vec<f64> = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
                let off: Vec<f64> = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
                let mut rhs: Vec<f64> = (0..m)
                    .map(|j| (v[j + 2] - v[j + 1]) / h[j + 1] - (v[j + 1] - v[j]) / h[j])
                    .collect();
                for j in 1..m {
                    let r = off[j - 1] / diag[j - 1];
                    diag[j] -= r * off[j - 1];
                    rhs[j] -= r * rhs[j - 1];
                }
                gamma[m] = rhs[m - 1] / diag[m - 1];
                for j in (0..m - 1).rev() {
                    gamma[j + 1] = (rhs[j] - off[j] * gamma[j + 2]) / diag[j];
                }
            }
            second.push(gamma);
        }
        Self::from_parts(knots, values, second)
    }

    /// The linear map `x -> intercept + slope x` as a two-knot spline.
    pub fn linear(intercept: &[f64], slope: &[f64]) -> Result<Self> {
        let values = intercept
            .iter()
            .zip(slope)
            .map(|(&c, &s)| vec![c, c + s])
            .collect::<Vec<_>>();
        let ell = values.len();
        Self::from_parts(vec![0.0, 1.0], values, vec![vec![0.0; 2]; ell])
    }

    pub fn ell(&self) -> usize {
        self.values.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_values(&self, component: usize) -> &[f64] {
        &self.values[component]
    }

    pub fn knot_second_derivatives(&self, component: usize) -> &[f64] {
        &self.second[component]
    }

    pub fn is_natural(&self) -> bool {
        let n = self.knots.len();
        self.second.iter().all(|s| s[0] == 0.0 && s[n - 1] == 0.0)
    }

    /// Value at `x ∈ [0, 1]`.
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>> {
        check_unit(x, "x")?;
        Ok(self.eval(x))
    }

    /// `derivative`-th derivative (0, 1 or 2) at `x ∈ [0, 1]`.
    pub fn derivative(&self, x: f64, derivative: usize) -> Result<Vec<f64>> {
        check_unit(x, "x")?;
        if derivative > 2 {
            return Err(Error::InvalidParameter(format!(
                "derivative order {derivative} unsupported"
            )));
        }
        Ok((0..self.ell())
            .map(|c| self.component_derivs(c, x)[derivative])
            .collect())
    }

    /// Value, first and second derivative of one component.
    fn component_derivs(&self, c: usize, x: f64) -> [f64; 3] {
        let t = &self.knots;
        let n = t.len();
        let g = &self.values[c];
        let s = &self.second[c];
        if x <= t[0] {
            let h = t[1] - t[0];
            let slope = (g[1] - g[0]) / h - h * (2.0 * s[0] + s[1]) / 6.0;
            return [g[0] + slope * (x - t[0]), slope, 0.0];
        }
        if x >= t[n - 1] {
            let h = t[n - 1] - t[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h * (s[n - 2] + 2.0 * s[n - 1]) / 6.0;
            return [g[n - 1] + slope * (x - t[n - 1]), slope, 0.0];
        }
        let i = t.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - x) / h;
        let b = (x - t[i]) / h;
        let value = a * g[i] + b * g[i + 1] + ((a * a * a - a) * s[i] + (b * b * b - b) * s[i + 1]) * h * h / 6.0;
        let slope = (g[i + 1] - g[i]) / h - (3.0 * a * a - 1.0) * h * s[i] / 6.0
            + (3.0 * b * b - 1.0) * h * s[i + 1] / 6.0;
        let curv = a * s[i] + b * s[i + 1];
        [value, slope, curv]
    }

    /// `Σ_j ∫ (f_j'')²`, exact: `f''` is piecewise linear inside the knot
    /// range and zero outside.
    pub fn curvature_norm_sq(&self) -> f64 {
        let h: Vec<f64> = self.knots.windows(2).map(|p| p[1] - p[0]).collect();
        self.second
            .iter()
            .map(|s| {
                h.iter()
                    .enumerate()
                    .map(|(i, &hi)| hi / 3.0 * (s[i] * s[i] + s[i] * s[i + 1] + s[i + 1] * s[i + 1]))
                    .sum::<f64>()
            })
            .sum()
    }

    /// `Σ_{α ≤ order} ‖f^{(α)}‖²_{L²[0,1]}` summed over components; exact up to
    /// rounding (Gauss rule of sufficient degree on every polynomial piece).
    fn sobolev_sq(&self, order: usize) -> f64 {
        let gl = GaussLegendre::new(4);
        let mut breaks = Vec::with_capacity(self.knots.len() + 2);
        if self.knots[0] > 0.0 {
            breaks.push(0.0);
        }
        breaks.extend_from_slice(&self.knots);
        if self.knots[self.knots.len() - 1] < 1.0 {
            breaks.push(1.0);
        }
        let mut total = 0.0;
        for c in 0..self.ell() {
            for p in breaks.windows(2) {
                total += gl.integrate(p[0], p[1], |x| {
                    let d = self.component_derivs(c, x);
                    d[..=order].iter().map(|v| v * v).sum()
                });
            }
        }
        total
    }

    /// Sobolev norm `‖f‖_{W^{s,2}}` for `s ∈ {0, 1, 2}`.
    pub fn sobolev_norm(&self, s: usize) -> Result<f64> {
        if s > 2 {
            return Err(Error::InvalidParameter(format!(
                "Sobolev order {s} unsupported for cubic splines (max 2)"
            )));
        }
        Ok(self.sobolev_sq(s).sqrt())
    }

    /// Complexity `I(f) = ‖f‖_{W^{s,2}}^{1/υ}`.
    pub fn sobolev_complexity(&self, s: usize, upsilon: f64) -> Result<f64> {
        if !(upsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("upsilon must be positive, got {upsilon}")));
        }
        Ok(self.sobolev_norm(s)?.powf(1.0 / upsilon))
    }

    /// Plain-text serialization, full precision.
    ///
    /// ```text
    /// natural-cubic-spline v1
    /// ell <ell>
    /// knots <n>
    /// <t_1>
    /// ...
    /// component <j>
    /// <value at t_1> <second derivative at t_1>
    /// ...
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "natural-cubic-spline v1");
        let _ = writeln!(out, "ell {}", self.ell());
        let _ = writeln!(out, "knots {}", self.knots.len());
        for t in &self.knots {
            let _ = writeln!(out, "{t:.17e}");
        }
        for c in 0..self.ell() {
            let _ = writeln!(out, "component {c}");
            for (v, s) in self.values[c].iter().zip(&self.second[c]) {
                let _ = writeln!(out, "{v:.17e} {s:.17e}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("unexpected end of input, expected {what}")))
        };
        let header = next("header")?;
        if header != "natural-cubic-spline v1" {
            return Err(Error::Parse(format!("unknown header {header:?}")));
        }
        let field = |line: &str, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("expected `{key} <int>`, got {line:?}")))
        };
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("invalid number {s:?}")))
        };
        let ell = field(next("ell")?, "ell")?;
        let n = field(next("knots")?, "knots")?;
        let mut knots = Vec::with_capacity(n);
        for _ in 0..n {
            knots.push(num(next("knot")?)?);
        }
        let mut values = Vec::with_capacity(ell);
        let mut second = Vec::with_capacity(ell);
        for c in 0..ell {
            let idx = field(next("component")?, "component")?;
            if idx != c {
                return Err(Error::Parse(format!("expected component {c}, got {idx}")));
            }
            let mut v = Vec::with_capacity(n);
            let mut s = Vec::with_capacity(n);
            for _ in 0..n {
                let line = next("coefficients")?;
                let mut parts = line.split_whitespace();
                let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::Parse(format!("expected two numbers, got {line:?}")));
                };
                v.push(num(a)?);
                s.push(num(b)?);
            }
            values.push(v);
            second.push(s);
        }
        Self::from_parts(knots, values, second)
    }

    /// Evaluate at many points; row-major output.
    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        crate::regression::tabulate(self, xs)
    }

    fn eval(&self, x: f64) -> Vec<f64> {
        (0..self.ell()).map(|c| self.component_derivs(c, x)[0]).collect()
    }
}

impl RegressionFn for SplineFunction {
    fn dim(&self) -> usize {
        self.ell()
    }

    fn eval_into(&self, x: f64, out: &mut [f64]) {
        let t = &self.knots;
        let n = t.len();
        if x <= t[0] || x >= t[n - 1] {
            for (c, o) in out.iter_mut().enumerate() {
                *o = self.component_derivs(c, x)[0];
            }
            return;
        }
        let i = t.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - x) / h;
        let b = (x - t[i]) / h;
        let ca = (a * a * a - a) * h * h / 6.0;
        let cb = (b * b * b - b) * h * h / 6.0;
        for (c, o) in out.iter_mut().enumerate() {
            let g = &self.values[c];
            let s = &self.second[c];
            *o = a * g[i] + b * g[i + 1] + ca * s[i] + cb * s[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_points(n: usize) -> WeightedPoints {
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let ys = xs.iter().map(|&x| vec![0.3 + 2.0 * x, -x]).collect();
        let ws = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        WeightedPoints::new(xs, ys, ws).unwrap()
    }

    #[test]
    fn reproduces_a_line() {
        let pts = line_points(9);
        for lambda in [1e-6, 1.0, 1e6] {
            let f = fit_smoothing_spline(&pts, lambda).unwrap();
            assert!(f.is_natural());
            for i in 0..=1000 {
                let x = i as f64 / 1000.0;
                let v = f.evaluate(x).unwrap();
                assert!((v[0] - (0.3 + 2.0 * x)).abs() < 1e-9);
                assert!((v[1] + x).abs() < 1e-9);
            }
            assert!(f.curvature_norm_sq() < 1e-18);
        }
    }

    #[test]
    fn huge_lambda_gives_weighted_regression_line() {
        let xs: Vec<f64> = vec![0.05, 0.2, 0.33, 0.5, 0.61, 0.8, 0.97];
        let ys: Vec<Vec<f64>> = xs.iter().map(|&x: &f64| vec![(6.0 * x).sin()]).collect();
        let ws = vec![1.0, 2.0, 0.5, 1.5, 1.0, 3.0, 0.7];
        let pts = WeightedPoints::new(xs.clone(), ys.clone(), ws.clone()).unwrap();
        let f = fit_smoothing_spline(&pts, 1e10).unwrap();
        let sw: f64 = ws.iter().sum();
        let mx = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
        let my = ys.iter().zip(&ws).map(|(y, w)| y[0] * w).sum::<f64>() / sw;
        let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - mx) * (y[0] - my)).sum();
        let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let expected = my + slope * (x - mx);
            assert!((f.evaluate(x).unwrap()[0] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn two_points_interpolate() {
        let pts = WeightedPoints::new(vec![0.2, 0.7], vec![vec![1.0], vec![2.0]], vec![1.0, 1.0]).unwrap();
        let f = fit_smoothing_spline(&pts, 0.1).unwrap();
        assert!((f.evaluate(0.45).unwrap()[0] - 1.5).abs() < 1e-14);
        assert!((f.evaluate(0.0).unwrap()[0] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let pts = WeightedPoints::new(vec![0.3, 0.3], vec![vec![1.0], vec![2.0]], vec![1.0, 1.0]).unwrap();
        assert!(matches!(fit_smoothing_spline(&pts, 1.0), Err(Error::Degenerate(_))));
        let pts = WeightedPoints::new(vec![0.3, 0.4], vec![vec![1.0], vec![2.0]], vec![1.0, 0.0]).unwrap();
        assert!(matches!(fit_smoothing_spline(&pts, 1.0), Err(Error::Degenerate(_))));
        assert!(WeightedPoints::new(vec![1.3], vec![vec![1.0]], vec![1.0]).is_err());
        assert!(WeightedPoints::new(vec![0.3], vec![vec![1.0]], vec![-1.0]).is_err());
        assert!(WeightedPoints::new(vec![0.3], vec![vec![1.0]], vec![0.0]).is_err());
        assert!(fit_smoothing_spline(&line_points(4), 0.0).is_err());
    }

    #[test]
    fn knot_values_and_continuity() {
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).fract()).collect();
        let ys = xs.iter().map(|&x| vec![(7.0 * x).cos()]).collect();
        let pts = WeightedPoints::new(xs, ys, vec![1.0; 12]).unwrap();
        let f = fit_smoothing_spline(&pts, 1e-3).unwrap();
        for (i, &t) in f.knots().iter().enumerate() {
            assert!((f.evaluate(t).unwrap()[0] - f.knot_values(0)[i]).abs() < 1e-12);
            if i > 0 && i + 1 < f.knots().len() {
                for order in 0..=2 {
                    let l = f.derivative(t - 1e-12, order).unwrap()[0];
                    let r = f.derivative(t + 1e-12, order).unwrap()[0];
                    assert!((l - r).abs() < 1e-9, "order {order} jump {}", l - r);
                }
            }
        }
    }

    #[test]
    fn curvature_of_constructed_cubic() {
        // f''(u) = u on [0, 1]
        let f = SplineFunction::from_parts(vec![0.0, 1.0], vec![vec![0.0, 1.0 / 6.0]], vec![vec![0.0, 1.0]]).unwrap();
        assert!((f.curvature_norm_sq() - 1.0 / 3.0).abs() < 1e-15);
        assert!(!f.is_natural());
    }

    #[test]
    fn sobolev_of_ramp() {
        let f = SplineFunction::linear(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((f.sobolev_norm(1).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!((f.sobolev_norm(0).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        let zero = SplineFunction::linear(&[0.0], &[0.0]).unwrap();
        assert_eq!(zero.sobolev_norm(2).unwrap(), 0.0);
        assert!(f.sobolev_norm(3).is_err());
        assert!((f.sobolev_complexity(1, 0.5).unwrap() - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn interpolant_hits_values() {
        let knots = vec![0.0, 0.1, 0.45, 0.7, 1.0];
        let vals: Vec<f64> = knots.iter().map(|&x: &f64| x.exp()).collect();
        let f = SplineFunction::interpolate(knots.clone(), vec![vals.clone()]).unwrap();
        assert!(f.is_natural());
        for (t, v) in knots.iter().zip(&vals) {
            assert!((f.evaluate(*t).unwrap()[0] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let pts = line_points(6);
        let xs: Vec<f64> = pts.xs().to_vec();
        let ys = xs.iter().map(|&x| vec![(5.0 * x).sin(), x * x]).collect();
        let f = fit_smoothing_spline(&WeightedPoints::new(xs, ys, vec![1.0; 6]).unwrap(), 0.01).unwrap();
        let back = SplineFunction::from_text(&f.to_text()).unwrap();
        assert_eq!(f, back);
        assert!(SplineFunction::from_text("garbage").is_err());
    }
}
