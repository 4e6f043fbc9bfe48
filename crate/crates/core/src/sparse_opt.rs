//! Convex solvers over real nonnegative coefficients with complex dictionaries.
//!
//! * [`nonneg_lasso`]: `min ‖y − D·x‖² + λ·Σx` s.t. `x ≥ 0`, by monotone
//!   accelerated projected gradient with an active-set polishing step.
//! * [`select_lambda_lcurve`]: corner of the (log residual, log ℓ1) curve.
//! * [`stls_alternating`]: sparse total least squares
//!   `min ‖r − (Ψ + Γ)·p‖² + ‖Γ‖_F² + λ·Σp`, alternating a lasso step in `p`
//!   with the closed-form rank-one step `Γ = u·pᵀ / (1 + ‖p‖²)`,
//!   `u = r − Ψ·p`.
//!
//! For real `x` the smooth part has gradient `2·Re(Dᴴ(Dx − y))`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coeffs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

/// Linear map from real coefficient vectors to complex measurements.
trait RealOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = D·x`
    fn apply(&self, x: &[f64], out: &mut [Complex64]);
    /// `out_j = Re(d_jᴴ·r)`
    fn adjoint_re(&self, r: &[Complex64], out: &mut [f64]);
    fn column(&self, j: usize) -> Vec<Complex64>;
}

struct Dense<'a>(&'a DMatrix<Complex64>);

impl RealOperator for Dense<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    fn ncols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &[f64], out: &mut [Complex64]) {
        let rows = self.0.nrows();
        let data = self.0.as_slice();
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = &data[j * rows..(j + 1) * rows];
            for (o, d) in out.iter_mut().zip(col) {
                o.re += d.re * xj;
                o.im += d.im * xj;
            }
        }
    }

    fn adjoint_re(&self, r: &[Complex64], out: &mut [f64]) {
        let rows = self.0.nrows();
        let data = self.0.as_slice();
        for (j, o) in out.iter_mut().enumerate() {
            let col = &data[j * rows..(j + 1) * rows];
            *o = col
                .iter()
                .zip(r)
                .map(|(d, v)| d.re * v.re + d.im * v.im)
                .sum();
        }
    }

    fn column(&self, j: usize) -> Vec<Complex64> {
        self.0.column(j).iter().copied().collect()
    }
}

/// `Ψ + left·rightᵀ`, never materialized.
struct RankOneUpdated<'a> {
    base: Dense<'a>,
    left: &'a [Complex64],
    right: &'a [f64],
}

impl RealOperator for RankOneUpdated<'_> {
    fn nrows(&self) -> usize {
        self.base.nrows()
    }

    fn ncols(&self) -> usize {
        self.base.ncols()
    }

    fn apply(&self, x: &[f64], out: &mut [Complex64]) {
        self.base.apply(x, out);
        let s: f64 = self.right.iter().zip(x).map(|(b, x)| b * x).sum();
        if s != 0.0 {
            for (o, a) in out.iter_mut().zip(self.left) {
                *o += a * s;
            }
        }
    }

    fn adjoint_re(&self, r: &[Complex64], out: &mut [f64]) {
        self.base.adjoint_re(r, out);
        let s: f64 = self
            .left
            .iter()
            .zip(r)
            .map(|(a, v)| a.re * v.re + a.im * v.im)
            .sum();
        if s != 0.0 {
            for (o, b) in out.iter_mut().zip(self.right) {
                *o += b * s;
            }
        }
    }

    fn column(&self, j: usize) -> Vec<Complex64> {
        let b = self.right[j];
        self.base
            .column(j)
            .into_iter()
            .zip(self.left)
            .map(|(d, a)| d + a * b)
            .collect()
    }
}

/// `λ_max(Re(DᴴD))`, the squared norm of `D` restricted to real inputs,
/// by power iteration from the all-ones vector.
fn real_norm_sq(op: &dyn RealOperator) -> f64 {
    let n = op.ncols();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut dx = vec![Complex64::new(0.0, 0.0); op.nrows()];
    let mut y = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..1000 {
        op.apply(&x, &mut dx);
        op.adjoint_re(&dx, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / norm);
        if (next - estimate).abs() <= 1e-10 * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Squared operator norm of a dictionary on real inputs.
pub fn dictionary_norm_sq(dict: &DMatrix<Complex64>) -> f64 {
    real_norm_sq(&Dense(dict))
}

fn objective(residual: &[Complex64], x: &[f64], lambda: f64) -> f64 {
    residual.iter().map(|r| r.norm_sqr()).sum::<f64>() + lambda * x.iter().sum::<f64>()
}

fn residual(op: &dyn RealOperator, x: &[f64], y: &[Complex64], dx: &mut [Complex64]) {
    op.apply(x, dx);
    dx.iter_mut().zip(y).for_each(|(d, t)| *d -= t);
}

fn re_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u.re * v.re + u.im * v.im).sum()
}

/// Cholesky solve that refuses numerically singular systems.
fn spd_solve(gram: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let chol = gram.cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 1e-7 * hi) {
        return None;
    }
    Some(chol.solve(&rhs))
}

/// Outcome of an active-set pass.
struct Refined {
    x: Vec<f64>,
    optimal: bool,
}

/// Lawson–Hanson active-set refinement of a feasible point.
///
/// On `x ≥ 0` the lasso objective is the quadratic
/// `xᵀGx − 2(c − λ/2)ᵀx + ‖y‖²` with `G = Re(DᴴD)`, `c = Re(Dᴴy)`, so the
/// NNLS active-set iteration applies. `optimal` is set when the KKT
/// conditions hold to `slack`. Returns `None` when a reduced Gram system is
/// numerically singular.
fn active_set_refine(
    op: &dyn RealOperator,
    x0: &[f64],
    y: &[Complex64],
    lambda: f64,
    slack: f64,
) -> Option<Refined> {
    let n = op.ncols();
    let max_support = 2 * op.nrows();
    let mut x = x0.to_vec();
    let mut passive: Vec<usize> = (0..n).filter(|&j| x[j] > 0.0).collect();
    let warm_ok = passive.len() <= max_support && {
        let cols: Vec<Vec<Complex64>> = passive.iter().map(|&j| op.column(j)).collect();
        let k = cols.len();
        let gram = DMatrix::from_fn(k, k, |a, b| re_dot(&cols[a], &cols[b]));
        spd_solve(gram, DVector::zeros(k)).is_some()
    };
    if !warm_ok {
        // Warm support is rank deficient: restart from the origin.
        x.iter_mut().for_each(|v| *v = 0.0);
        passive.clear();
    }
    let mut columns: Vec<Vec<Complex64>> = passive.iter().map(|&j| op.column(j)).collect();
    let mut r = vec![Complex64::new(0.0, 0.0); op.nrows()];
    let mut grad = vec![0.0; n];
    let mut removed: Vec<usize> = Vec::new();

    for _ in 0..(2 * max_support + 10) {
        // Minimize on the passive set, backtracking to stay feasible.
        removed.clear();
        loop {
            let k = passive.len();
            if k == 0 {
                break;
            }
            let gram = DMatrix::from_fn(k, k, |a, b| re_dot(&columns[a], &columns[b]));
            let rhs = DVector::from_iterator(k, columns.iter().map(|c| re_dot(c, y) - lambda / 2.0));
            let Some(z) = spd_solve(gram, rhs) else {
                // Singular reduced system: x is still feasible, stop here.
                return Some(Refined { x, optimal: false });
            };
            if z.iter().all(|&v| v > 0.0) {
                for (&j, &v) in passive.iter().zip(z.iter()) {
                    x[j] = v;
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (&j, &v) in passive.iter().zip(z.iter()) {
                if v <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - v));
                }
            }
            for (&j, &v) in passive.iter().zip(z.iter()) {
                x[j] += alpha * (v - x[j]);
            }
            let floor = 1e-12 * passive.iter().fold(0.0f64, |a, &j| a.max(x[j]));
            let mut keep_p = Vec::with_capacity(k);
            let mut keep_c = Vec::with_capacity(k);
            for (j, c) in passive.drain(..).zip(columns.drain(..)) {
                if x[j] > floor {
                    keep_p.push(j);
                    keep_c.push(c);
                } else {
                    x[j] = 0.0;
                    removed.push(j);
                }
            }
            passive = keep_p;
            columns = keep_c;
        }

        residual(op, &x, y, &mut r);
        op.adjoint_re(&r, &mut grad);
        let mut entering = None;
        let mut worst = -slack;
        for j in 0..n {
            if x[j] == 0.0 {
                let d = 2.0 * grad[j] + lambda;
                if d < worst {
                    worst = d;
                    entering = Some(j);
                }
            }
        }
        match entering {
            None => return Some(Refined { x, optimal: true }),
            // Re-entry of a coordinate the last solve just dropped: the
            // reduced systems are too ill-conditioned to make progress.
            Some(j) if removed.contains(&j) || passive.len() >= max_support => {
                return Some(Refined { x, optimal: false });
            }
            Some(j) => {
                passive.push(j);
                columns.push(op.column(j));
            }
        }
    }
    Some(Refined { x, optimal: false })
}

const REFINE_EVERY: usize = 25;
const REFINE_OFFSET: usize = 5;

/// Core solver; `norm_sq` is `λ_max(Re(DᴴD))` or an upper bound on it.
fn solve(
    op: &dyn RealOperator,
    norm_sq: f64,
    y: &[Complex64],
    lambda: f64,
    opts: &LassoOptions,
    x0: &[f64],
) -> Result<LassoSolution> {
    let n = op.ncols();
    let m = op.nrows();
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            what: "measurement length",
            expected: m,
            actual: y.len(),
        });
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial coefficient length",
            expected: n,
            actual: x0.len(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("penalty must be finite and >= 0, got {lambda}")));
    }

    // KKT slack relative to the gradient scale at the origin.
    let mut grad = vec![0.0; n];
    op.adjoint_re(y, &mut grad);
    let scale = 2.0 * grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let kkt_slack = 1e-10 * scale.max(lambda).max(f64::MIN_POSITIVE);

    let mut x: Vec<f64> = x0.iter().map(|v| v.max(0.0)).collect();
    let mut r = vec![Complex64::new(0.0, 0.0); m];
    residual(op, &x, y, &mut r);
    let mut fx = objective(&r, &x, lambda);
    let mut trace = vec![fx];

    if norm_sq <= 0.0 {
        // Zero dictionary: the penalty alone decides, x = 0.
        let x = vec![0.0; n];
        residual(op, &x, y, &mut r);
        let f = objective(&r, &x, lambda);
        trace.push(f);
        return Ok(LassoSolution {
            coeffs: x,
            objective: f,
            iterations: 0,
            converged: true,
            objective_trace: trace,
        });
    }
    let step = 1.0 / (2.0 * norm_sq * 1.01);

    let mut yv = x.clone();
    let mut ry = r.clone();
    let mut z = vec![0.0; n];
    let mut rz = vec![Complex64::new(0.0, 0.0); m];
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=opts.max_iter {
        iterations = k;
        op.adjoint_re(&ry, &mut grad);
        for j in 0..n {
            z[j] = (yv[j] - step * (2.0 * grad[j] + lambda)).max(0.0);
        }
        residual(op, &z, y, &mut rz);
        let fz = objective(&rz, &z, lambda);
        if !fz.is_finite() {
            return Err(Error::Numerical(format!("lasso objective became {fz}")));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let accepted = fz <= fx;
        let x_prev = x.clone();
        let f_prev = fx;
        if accepted {
            x.copy_from_slice(&z);
            r.copy_from_slice(&rz);
            fx = fz;
        }
        let a = t / t_next;
        let b = (t - 1.0) / t_next;
        for j in 0..n {
            yv[j] = x[j] + a * (z[j] - x[j]) + b * (x[j] - x_prev[j]);
        }
        t = t_next;
        residual(op, &yv, y, &mut ry);

        let mut done = accepted && (f_prev - fx) <= opts.tol * f_prev.abs().max(f64::MIN_POSITIVE);

        if k % REFINE_EVERY == REFINE_OFFSET || done || k == opts.max_iter {
            if let Some(Refined { x: xp, optimal }) = active_set_refine(op, &x, y, lambda, kkt_slack) {
                let mut rp = vec![Complex64::new(0.0, 0.0); m];
                residual(op, &xp, y, &mut rp);
                let fp = objective(&rp, &xp, lambda);
                if fp <= fx {
                    x = xp;
                    r = rp;
                    fx = fp;
                    yv.copy_from_slice(&x);
                    ry.copy_from_slice(&r);
                    t = 1.0;
                    done |= optimal;
                }
            }
        }
        trace.push(fx);
        if done {
            converged = true;
            break;
        }
    }

    Ok(LassoSolution {
        coeffs: x,
        objective: fx,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Nonnegative ℓ2-ℓ1 minimization from a zero start.
pub fn nonneg_lasso(
    dict: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    nonneg_lasso_from(dict, y, lambda, opts, &vec![0.0; dict.ncols()], None)
}

/// Nonnegative lasso with a warm start and an optional precomputed
/// [`dictionary_norm_sq`].
pub fn nonneg_lasso_from(
    dict: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    lambda: f64,
    opts: &LassoOptions,
    x0: &[f64],
    norm_sq: Option<f64>,
) -> Result<LassoSolution> {
    let op = Dense(dict);
    let norm_sq = norm_sq.unwrap_or_else(|| real_norm_sq(&op));
    solve(&op, norm_sq, y.as_slice(), lambda, opts, x0)
}

/// `2·max(Re(Dᴴy))₊`: the smallest penalty whose solution is zero.
pub fn lambda_max(dict: &DMatrix<Complex64>, y: &DVector<Complex64>) -> f64 {
    let mut g = vec![0.0; dict.ncols()];
    Dense(dict).adjoint_re(y.as_slice(), &mut g);
    2.0 * g.iter().fold(0.0f64, |a, &v| a.max(v))
}

/// `count` log-spaced penalties over `[min_ratio, 1]·λ₀`, ascending.
pub fn default_lambda_grid(
    dict: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    count: usize,
    min_ratio: f64,
) -> Vec<f64> {
    let mut lam0 = lambda_max(dict, y);
    if !(lam0 > 0.0) {
        lam0 = 1.0;
    }
    log_grid(lam0 * min_ratio, lam0, count)
}

pub(crate) fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcurvePoint {
    pub lambda: f64,
    pub residual_norm: f64,
    pub l1_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub index: usize,
    /// Set when the curve has no usable corner; `lambda` is then the median
    /// grid value.
    pub degenerate: bool,
    pub points: Vec<LcurvePoint>,
    pub solution: LassoSolution,
}

/// Signed three-point (Menger) curvature; positive for the L-curve corner
/// when points are ordered by increasing λ.
fn menger_curvature(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)) -> f64 {
    let cross = (p2.0 - p1.0) * (p3.1 - p2.1) - (p2.1 - p1.1) * (p3.0 - p2.0);
    let d12 = (p2.0 - p1.0).hypot(p2.1 - p1.1);
    let d23 = (p3.0 - p2.0).hypot(p3.1 - p2.1);
    let d13 = (p3.0 - p1.0).hypot(p3.1 - p1.1);
    let denom = d12 * d23 * d13;
    if denom > 0.0 {
        2.0 * cross / denom
    } else {
        f64::NAN
    }
}

/// L-curve corner over an ascending penalty grid. Solves along the path from
/// the largest penalty down, warm-starting each solve.
pub fn select_lambda_lcurve(
    dict: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    lambda_grid: &[f64],
    opts: &LassoOptions,
    norm_sq: Option<f64>,
) -> Result<LambdaSelection> {
    if lambda_grid.len() < 3 {
        return Err(Error::domain(format!(
            "L-curve needs at least 3 penalties, got {}",
            lambda_grid.len()
        )));
    }
    if lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite())
        || lambda_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::domain("penalty grid must be positive and strictly ascending"));
    }
    let op = Dense(dict);
    let norm_sq = norm_sq.unwrap_or_else(|| real_norm_sq(&op));

    let mut solutions: Vec<Option<LassoSolution>> = vec![None; lambda_grid.len()];
    let mut warm = vec![0.0; dict.ncols()];
    for i in (0..lambda_grid.len()).rev() {
        let sol = solve(&op, norm_sq, y.as_slice(), lambda_grid[i], opts, &warm)?;
        warm.copy_from_slice(&sol.coeffs);
        solutions[i] = Some(sol);
    }
    let solutions: Vec<LassoSolution> = solutions.into_iter().map(Option::unwrap).collect();

    let mut rbuf = vec![Complex64::new(0.0, 0.0); dict.nrows()];
    let points: Vec<LcurvePoint> = lambda_grid
        .iter()
        .zip(&solutions)
        .map(|(&lambda, sol)| {
            residual(&op, &sol.coeffs, y.as_slice(), &mut rbuf);
            LcurvePoint {
                lambda,
                residual_norm: rbuf.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
                l1_norm: sol.coeffs.iter().sum(),
            }
        })
        .collect();

    let logged: Vec<(usize, (f64, f64))> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p.residual_norm.ln(), p.l1_norm.ln())))
        .filter(|(_, (a, b))| a.is_finite() && b.is_finite())
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for w in logged.windows(3) {
        let kappa = menger_curvature(w[0].1, w[1].1, w[2].1);
        if kappa.is_nan() {
            continue;
        }
        // `>=` while scanning upward breaks ties toward the larger penalty.
        if best.is_none_or(|(_, b)| kappa >= b) {
            best = Some((w[1].0, kappa));
        }
    }

    let (index, degenerate) = match best {
        Some((i, _)) => (i, false),
        None => (lambda_grid.len() / 2, true),
    };
    Ok(LambdaSelection {
        lambda: lambda_grid[index],
        index,
        degenerate,
        points,
        solution: solutions[index].clone(),
    })
}

/// Rank-one perturbation `Γ = left·rightᵀ` with real `right`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOnePerturbation {
    pub left: DVector<Complex64>,
    pub right: DVector<f64>,
}

impl RankOnePerturbation {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            left: DVector::zeros(rows),
            right: DVector::zeros(cols),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.left.norm_squared() * self.right.norm_squared()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let right = self.right.map(|v| Complex64::new(v, 0.0));
        &self.left * right.transpose()
    }
}

/// Minimizer of `‖r − (Ψ + Γ)·p‖² + ‖Γ‖_F²` over `Γ`:
/// `Γ = u·pᵀ / (1 + ‖p‖²)` with `u = r − Ψ·p`.
pub fn gamma_update(
    psi: &DMatrix<Complex64>,
    r4: &DVector<Complex64>,
    p: &[f64],
) -> RankOnePerturbation {
    let mut u = vec![Complex64::new(0.0, 0.0); psi.nrows()];
    Dense(psi).apply(p, &mut u);
    let denom = 1.0 + p.iter().map(|v| v * v).sum::<f64>();
    let left = DVector::from_iterator(u.len(), u.iter().zip(r4.iter()).map(|(a, r)| (r - a) / denom));
    RankOnePerturbation {
        left,
        right: DVector::from_column_slice(p),
    }
}

/// `‖r − (Ψ + Γ)·p‖² + ‖Γ‖_F² + λ·Σ|p|`.
pub fn stls_objective(
    psi: &DMatrix<Complex64>,
    r4: &DVector<Complex64>,
    p: &[f64],
    gamma: &RankOnePerturbation,
    lambda: f64,
) -> f64 {
    let op = RankOneUpdated {
        base: Dense(psi),
        left: gamma.left.as_slice(),
        right: gamma.right.as_slice(),
    };
    let mut r = vec![Complex64::new(0.0, 0.0); psi.nrows()];
    residual(&op, p, r4.as_slice(), &mut r);
    r.iter().map(|z| z.norm_sqr()).sum::<f64>()
        + gamma.frobenius_norm_sq()
        + lambda * p.iter().map(|v| v.abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlsOptions {
    /// Stop once `‖p⁽ⁱ⁾ − p⁽ⁱ⁻¹⁾‖₂ < epsilon`.
    pub epsilon: f64,
    pub max_iter: usize,
    pub lasso: LassoOptions,
}

impl Default for StlsOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iter: 30,
            lasso: LassoOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StlsSolution {
    pub coeffs: Vec<f64>,
    pub gamma_left: DVector<Complex64>,
    pub gamma_right: DVector<f64>,
    /// Objective at the start and after each full (p, Γ) iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl StlsSolution {
    pub fn gamma(&self) -> RankOnePerturbation {
        RankOnePerturbation {
            left: self.gamma_left.clone(),
            right: self.gamma_right.clone(),
        }
    }
}

/// Alternating descent for sparse total least squares, starting from
/// `Γ = 0` and warm-starting every lasso step from the previous `p`.
pub fn stls_alternating(
    psi: &DMatrix<Complex64>,
    r4: &DVector<Complex64>,
    lambda: f64,
    opts: &StlsOptions,
    p_init: &[f64],
    psi_norm_sq: Option<f64>,
) -> Result<StlsSolution> {
    if p_init.len() != psi.ncols() {
        return Err(Error::DimensionMismatch {
            what: "initial coefficient length",
            expected: psi.ncols(),
            actual: p_init.len(),
        });
    }
    if r4.len() != psi.nrows() {
        return Err(Error::DimensionMismatch {
            what: "measurement length",
            expected: psi.nrows(),
            actual: r4.len(),
        });
    }
    let psi_norm = psi_norm_sq
        .unwrap_or_else(|| dictionary_norm_sq(psi))
        .sqrt();

    let mut p: Vec<f64> = p_init.iter().map(|v| v.max(0.0)).collect();
    let mut gamma = RankOnePerturbation::zero(psi.nrows(), psi.ncols());
    let start = stls_objective(psi, r4, &p, &gamma, lambda);
    if !start.is_finite() {
        return Err(Error::Numerical(format!("STLS objective is {start}")));
    }
    let mut trace = vec![start];
    let mut converged = false;
    let mut iterations = 0;

    for i in 1..=opts.max_iter {
        iterations = i;
        let op = RankOneUpdated {
            base: Dense(psi),
            left: gamma.left.as_slice(),
            right: gamma.right.as_slice(),
        };
        let bound = psi_norm + gamma.left.norm() * gamma.right.norm();
        let sol = solve(&op, bound * bound, r4.as_slice(), lambda, &opts.lasso, &p)?;
        let change = sol
            .coeffs
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        p = sol.coeffs;
        gamma = gamma_update(psi, r4, &p);
        let f = stls_objective(psi, r4, &p, &gamma, lambda);
        if !f.is_finite() {
            return Err(Error::Numerical(format!("STLS objective is {f}")));
        }
        trace.push(f);
        if change < opts.epsilon {
            converged = true;
            break;
        }
    }

    Ok(StlsSolution {
        coeffs: p,
        gamma_left: gamma.left,
        gamma_right: gamma.right,
        objective_trace: trace,
        iterations,
        converged,
    })
}
