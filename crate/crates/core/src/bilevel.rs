//! Box-constrained minimization of reduced objectives.
//!
//! The outer problems are two- or four-dimensional, smooth, and kept away
//! from the box walls by a rational barrier, so inequality constraints
//! never activate: a damped Newton iteration with Armijo backtracking is
//! the whole solver. When an oracle supplies no Hessian the iteration
//! falls back to damped BFGS. All linear algebra runs in coordinates
//! scaled by the box widths; s and α live on wildly different scales.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

/// Rational barrier Σᵢ 1/((xᵢ−loᵢ)(hiᵢ−xᵢ)) times a scale factor.
///
/// Each term diverges at its walls and is strongly convex on the open
/// interval, with its minimum at the midpoint.
#[derive(Debug, Clone)]
pub struct BarrierFn {
    bounds: Vec<(f64, f64)>,
    scale: f64,
}

/// Value and derivatives of a barrier at an interior point.
#[derive(Debug, Clone)]
pub struct BarrierEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

impl BarrierFn {
    pub fn new(bounds: Vec<(f64, f64)>, scale: f64) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("barrier needs at least one axis".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("bad barrier interval [{lo},{hi}]")));
            }
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Config(format!("bad barrier scale {scale}")));
        }
        Ok(Self { bounds, scale })
    }

    /// Two-parameter denoising barrier on [0,0.5]×[0,250], scale 5e-5.
    pub fn denoise2d() -> Self {
        Self::new(vec![(0.0, 0.5), (0.0, 250.0)], 5e-5).unwrap()
    }

    /// Four-parameter decomposition barrier on
    /// [0,0.5]×[0.01,1e4]×[−1,0]×[0,1e5], scale 3e-7.
    pub fn decompose4d() -> Self {
        Self::new(
            vec![(0.0, 0.5), (0.01, 1e4), (-1.0, 0.0), (0.0, 1e5)],
            3e-7,
        )
        .unwrap()
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_interior(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x > lo && x < hi)
    }

    /// Analytic value/gradient/Hessian, or `None` on or outside the walls
    /// (the infinite-value signal).
    pub fn eval(&self, p: &[f64]) -> Option<BarrierEval> {
        assert_eq!(p.len(), self.dim());
        let d = self.dim();
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = DMatrix::zeros(d, d);
        for (i, (&x, &(lo, hi))) in p.iter().zip(&self.bounds).enumerate() {
            let q = (x - lo) * (hi - x);
            if q <= 0.0 || !x.is_finite() {
                return None;
            }
            if self.scale == 0.0 {
                continue;
            }
            let dq = lo + hi - 2.0 * x;
            value += self.scale / q;
            grad[i] = -self.scale * dq / (q * q);
            hess[(i, i)] = self.scale * (2.0 * dq * dq / (q * q * q) + 2.0 / (q * q));
        }
        Some(BarrierEval { value, grad, hess })
    }
}

/// Free-function form of [`BarrierFn::eval`].
pub fn barrier_eval(b: &BarrierFn, params: &[f64]) -> Option<BarrierEval> {
    b.eval(params)
}

/// One objective evaluation handed to the solver. A missing Hessian makes
/// the solver accumulate a BFGS approximation instead.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Option<DMatrix<f64>>,
}

/// Oracle over parameter vectors.
pub trait BilevelObjective: Sync {
    fn dim(&self) -> usize;

    /// Value only (used heavily by the line search); return `f64::INFINITY`
    /// outside the admissible region.
    fn value(&self, p: &[f64]) -> f64;

    /// Value with derivatives at an interior point.
    fn eval(&self, p: &[f64]) -> EvalPoint;
}

#[derive(Debug, Clone)]
pub struct SqpConfig {
    /// Starting point; defaults to the box center.
    pub init: Option<Vec<f64>>,
    /// Convergence threshold on the box-width-scaled gradient norm.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Smallest admitted Hessian eigenvalue before damping kicks in.
    pub hessian_floor: f64,
    /// Line-search failure threshold.
    pub max_halvings: usize,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self {
            init: None,
            grad_tol: 1e-8,
            max_iter: 200,
            armijo_c1: 1e-4,
            shrink: 0.5,
            hessian_floor: 1e-10,
            max_halvings: 60,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub params: Vec<f64>,
    pub value: f64,
    /// Box-width-scaled gradient norm.
    pub grad_norm: f64,
}

/// Trace and verdict of a bilevel run.
#[derive(Debug, Clone)]
pub struct OptimReport {
    pub iterates: Vec<IterateRecord>,
    pub converged: bool,
    pub final_params: Vec<f64>,
    pub final_value: f64,
    /// Scaled gradient norm at the final iterate (interior optimum: the
    /// full KKT residual).
    pub kkt_residual: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Per-axis distance to the nearest wall relative to the box width.
    pub boundary_proximity: Vec<f64>,
}

/// Minimize `obj` over the open box via damped Newton (or BFGS) steps with
/// Armijo backtracking. Every accepted iterate is strictly interior.
pub fn solve_bilevel(
    obj: &dyn BilevelObjective,
    bounds: &[(f64, f64)],
    cfg: &SqpConfig,
) -> Result<OptimReport> {
    let start = Instant::now();
    let d = obj.dim();
    if bounds.len() != d {
        return Err(Error::Config(format!(
            "objective dimension {d} vs {} box axes",
            bounds.len()
        )));
    }
    let widths: Vec<f64> = bounds.iter().map(|&(lo, hi)| hi - lo).collect();
    let mut x: Vec<f64> = match &cfg.init {
        Some(p) if p.len() == d => p.clone(),
        Some(p) => {
            return Err(Error::Config(format!(
                "init has {} entries, expected {d}",
                p.len()
            )))
        }
        None => bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
    };

    let mut point = obj.eval(&x);
    if !point.value.is_finite() {
        return Err(Error::Config(format!(
            "objective not finite at the initial point {x:?}"
        )));
    }

    let mut bfgs: Option<DMatrix<f64>> = None;
    let mut prev_scaled: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iter {
        iterations = iter;
        let grad_s = DVector::from_iterator(d, point.grad.iter().zip(&widths).map(|(g, w)| g * w));
        let grad_norm = grad_s.norm();
        iterates.push(IterateRecord {
            params: x.clone(),
            value: point.value,
            grad_norm,
        });
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }

        // Hessian in scaled coordinates: analytic when provided, else BFGS.
        let h_scaled = match &point.hess {
            Some(h) => {
                let mut hs = h.clone();
                for i in 0..d {
                    for j in 0..d {
                        hs[(i, j)] *= widths[i] * widths[j];
                    }
                }
                hs
            }
            None => {
                let b = bfgs.get_or_insert_with(|| DMatrix::identity(d, d));
                if let Some((x_prev, g_prev)) = prev_scaled.take() {
                    let xs = DVector::from_iterator(d, x.iter().zip(&widths).map(|(v, w)| v / w));
                    bfgs_update(b, &(xs - x_prev), &(grad_s.clone() - g_prev));
                }
                b.clone()
            }
        };
        let h_damped = damp_to_positive(&h_scaled, cfg.hessian_floor);

        // Newton direction in original coordinates.
        let dir_s = h_damped
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&grad_s)))
            .unwrap_or_else(|| -&grad_s);
        let dir: Vec<f64> = dir_s.iter().zip(&widths).map(|(v, w)| v * w).collect();
        let slope: f64 = point.grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

        // Cap the step inside the open box before backtracking.
        let mut t = 1.0f64;
        for i in 0..d {
            let (lo, hi) = bounds[i];
            if dir[i] > 0.0 {
                t = t.min(0.99 * (hi - x[i]) / dir[i]);
            } else if dir[i] < 0.0 {
                t = t.min(0.99 * (x[i] - lo) / -dir[i]);
            }
        }
        if !(t > 0.0) {
            t = 1.0;
        }

        let mut accepted = None;
        for halving in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + t * d).collect();
            let fval = obj.value(&trial);
            if fval.is_finite() && fval <= point.value + cfg.armijo_c1 * t * slope {
                accepted = Some(trial);
                break;
            }
            if halving == cfg.max_halvings {
                break;
            }
            t *= cfg.shrink;
        }
        let Some(next) = accepted else {
            return Err(Error::LineSearchStall {
                iteration: iter,
                halvings: cfg.max_halvings,
                best_value: point.value,
                best_params: x,
            });
        };

        if point.hess.is_none() {
            let xs = DVector::from_iterator(d, x.iter().zip(&widths).map(|(v, w)| v / w));
            prev_scaled = Some((xs, grad_s));
        }
        x = next;
        point = obj.eval(&x);
        iterations = iter + 1;
    }

    if !converged && iterations == cfg.max_iter {
        // Record the state reached at the iteration cap.
        let grad_s: f64 = point
            .grad
            .iter()
            .zip(&widths)
            .map(|(g, w)| (g * w) * (g * w))
            .sum::<f64>()
            .sqrt();
        iterates.push(IterateRecord {
            params: x.clone(),
            value: point.value,
            grad_norm: grad_s,
        });
    }

    let last = iterates.last().expect("at least one iterate");
    let proximity = x
        .iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| ((v - lo).min(hi - v)) / (hi - lo))
        .collect();
    Ok(OptimReport {
        converged,
        final_params: x.clone(),
        final_value: last.value,
        kkt_residual: last.grad_norm,
        iterations,
        wall_time: start.elapsed(),
        boundary_proximity: proximity,
        iterates,
    })
}

/// Shift eigenvalues up so the smallest one reaches `floor`.
fn damp_to_positive(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let d = h.nrows();
    if h.iter().any(|v| !v.is_finite()) {
        return DMatrix::identity(d, d);
    }
    let sym = 0.5 * (h + h.transpose());
    let eig = sym.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig >= floor {
        sym
    } else {
        sym + DMatrix::identity(d, d) * (floor - min_eig)
    }
}

/// Powell-damped BFGS update of the approximation `b`.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let s_norm = s.norm();
    if s_norm < 1e-300 {
        return;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 0.0 || !sbs.is_finite() {
        return;
    }
    let sy = s.dot(y);
    let y_eff = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy_eff = s.dot(&y_eff);
    if sy_eff <= 0.0 {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &y_eff * y_eff.transpose() / sy_eff;
}

/// Exhaustive lattice minimization, the brute-force oracle for
/// [`solve_bilevel`]. The lattice includes the box endpoints; objectives
/// with a barrier evaluate to +∞ there and never win. Ties resolve to the
/// first lattice point in row-major order.
pub fn grid_search(
    value: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &[(f64, f64)],
    resolution: &[usize],
) -> Result<(Vec<f64>, f64)> {
    if bounds.len() != resolution.len() || bounds.is_empty() {
        return Err(Error::Config("bounds/resolution length mismatch".into()));
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::Argument("grid resolution must be >= 2 per axis".into()));
    }
    let total: usize = resolution.iter().product();
    let decode = |mut idx: usize| -> Vec<f64> {
        let mut p = vec![0.0; bounds.len()];
        for ax in (0..bounds.len()).rev() {
            let r = resolution[ax];
            let i = idx % r;
            idx /= r;
            let (lo, hi) = bounds[ax];
            p[ax] = lo + (hi - lo) * i as f64 / (r - 1) as f64;
        }
        p
    };
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| value(&decode(idx)))
        .collect();
    let mut best_idx = 0;
    let mut best = f64::INFINITY;
    for (idx, &v) in values.iter().enumerate() {
        if v < best {
            best = v;
            best_idx = idx;
        }
    }
    Ok((decode(best_idx), best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct BarrierOnly(BarrierFn);

    impl BilevelObjective for BarrierOnly {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn value(&self, p: &[f64]) -> f64 {
            self.0.eval(p).map_or(f64::INFINITY, |e| e.value)
        }
        fn eval(&self, p: &[f64]) -> EvalPoint {
            let e = self.0.eval(p).expect("interior point");
            EvalPoint {
                value: e.value,
                grad: e.grad,
                hess: Some(e.hess),
            }
        }
    }

    struct Quadratic {
        center: Vec<f64>,
        diag: Vec<f64>,
    }

    impl BilevelObjective for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn value(&self, p: &[f64]) -> f64 {
            p.iter()
                .zip(&self.center)
                .zip(&self.diag)
                .map(|((x, c), d)| d * (x - c) * (x - c))
                .sum()
        }
        fn eval(&self, p: &[f64]) -> EvalPoint {
            let grad = p
                .iter()
                .zip(&self.center)
                .zip(&self.diag)
                .map(|((x, c), d)| 2.0 * d * (x - c))
                .collect();
            let mut hess = DMatrix::zeros(2, 2);
            hess[(0, 0)] = 2.0 * self.diag[0];
            hess[(1, 1)] = 2.0 * self.diag[1];
            EvalPoint {
                value: self.value(p),
                grad,
                hess: Some(hess),
            }
        }
    }

    #[test]
    fn barrier_value_at_midpoint_is_literal() {
        let b = BarrierFn::denoise2d().with_scale(1.0);
        let e = b.eval(&[0.25, 125.0]).unwrap();
        // 1/(0.25·0.25) + 1/(125·125) = 16 + 1/15625
        assert_relative_eq!(e.value, 16.000064, max_relative = 1e-12);
        assert!(e.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn barrier_infinite_outside() {
        let b = BarrierFn::denoise2d();
        assert!(b.eval(&[0.0, 10.0]).is_none());
        assert!(b.eval(&[0.6, 10.0]).is_none());
        assert!(b.eval(&[0.2, 250.0]).is_none());
        assert!(b.is_interior(&[0.2, 10.0]));
        assert!(!b.is_interior(&[0.2, -1.0]));
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let b = BarrierFn::decompose4d();
        let points = [
            [0.1, 50.0, -0.3, 1000.0],
            [0.4, 9000.0, -0.8, 90000.0],
            [0.25, 5000.0, -0.5, 50000.0],
        ];
        for p in points {
            let e = b.eval(&p).unwrap();
            for i in 0..4 {
                let h = 1e-6 * (b.bounds()[i].1 - b.bounds()[i].0);
                let mut hi = p;
                hi[i] += h;
                let mut lo = p;
                lo[i] -= h;
                let fd = (b.eval(&hi).unwrap().value - b.eval(&lo).unwrap().value) / (2.0 * h);
                assert_relative_eq!(e.grad[i], fd, max_relative = 1e-6, epsilon = 1e-12);
                let fd2 = (b.eval(&hi).unwrap().value - 2.0 * e.value
                    + b.eval(&lo).unwrap().value)
                    / (h * h);
                assert_relative_eq!(e.hess[(i, i)], fd2, max_relative = 1e-4, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pure_barrier_converges_to_midpoint() {
        let b = BarrierFn::denoise2d();
        let report = solve_bilevel(
            &BarrierOnly(b.clone()),
            b.bounds(),
            &SqpConfig::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert_relative_eq!(report.final_params[0], 0.25, epsilon = 1e-6);
        assert_relative_eq!(report.final_params[1], 125.0, epsilon = 1e-3);
        // Accepted steps never increase the objective.
        for w in report.iterates.windows(2) {
            assert!(w[1].value <= w[0].value + 1e-15);
        }
    }

    #[test]
    fn quadratic_converges_in_few_iterations() {
        let obj = Quadratic {
            center: vec![0.3, 80.0],
            diag: vec![4.0, 0.01],
        };
        let report = solve_bilevel(
            &obj,
            &[(0.0, 0.5), (0.0, 250.0)],
            &SqpConfig::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 3, "took {} iterations", report.iterations);
        assert_relative_eq!(report.final_params[0], 0.3, epsilon = 1e-9);
        assert_relative_eq!(report.final_params[1], 80.0, epsilon = 1e-6);
    }

    #[test]
    fn stall_reports_line_search_failure() {
        // Gradient always points uphill for the reported value: no step can
        // satisfy Armijo.
        struct Hostile;
        impl BilevelObjective for Hostile {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _p: &[f64]) -> f64 {
                f64::INFINITY
            }
            fn eval(&self, _p: &[f64]) -> EvalPoint {
                EvalPoint {
                    value: 1.0,
                    grad: vec![1.0],
                    hess: Some(DMatrix::identity(1, 1)),
                }
            }
        }
        let err = solve_bilevel(&Hostile, &[(0.0, 1.0)], &SqpConfig::default()).unwrap_err();
        assert!(matches!(err, Error::LineSearchStall { .. }));
    }

    #[test]
    fn grid_search_finds_barrier_midpoint() {
        let b = BarrierFn::denoise2d();
        let obj = BarrierOnly(b.clone());
        let (best, val) = grid_search(
            |p| obj.value(p),
            b.bounds(),
            &[101, 101],
        )
        .unwrap();
        // Lattice spacing 0.005 / 2.5; the midpoint lies on the lattice.
        assert!((best[0] - 0.25).abs() <= 0.005 + 1e-12);
        assert!((best[1] - 125.0).abs() <= 2.5 + 1e-12);
        assert!(val.is_finite());
    }

    #[test]
    fn solver_at_least_as_good_as_lattice() {
        let obj = Quadratic {
            center: vec![0.21, 93.0],
            diag: vec![1.0, 1e-4],
        };
        let bounds = [(0.0, 0.5), (0.0, 250.0)];
        let report = solve_bilevel(&obj, &bounds, &SqpConfig::default()).unwrap();
        let (_, lattice_best) = grid_search(|p| obj.value(p), &bounds, &[41, 41]).unwrap();
        assert!(report.final_value <= lattice_best + 1e-6);
    }

    #[test]
    fn grid_search_rejects_degenerate_resolution() {
        assert!(grid_search(|_| 0.0, &[(0.0, 1.0)], &[1]).is_err());
    }
}
