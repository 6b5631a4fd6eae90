//! Thin wrappers over argmin's derivative-free solvers, plus the bounded
//! coordinate maps used by the fits.

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;

use crate::error::{Error, Result};

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

struct Closure<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Closure<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let v = (self.0)(p);
        // NaN would poison the simplex ordering
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

struct Scalar<F>(F);

impl<F: Fn(f64) -> f64> CostFunction for Scalar<F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, p: &f64) -> std::result::Result<f64, argmin::core::Error> {
        let v = (self.0)(*p);
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

fn wrap(e: argmin::core::Error) -> Error {
    Error::Numerical(format!("optimizer failed: {e}"))
}

/// Nelder-Mead from `start` with an axis-aligned initial simplex of edge `step`.
pub(crate) fn nelder_mead<F>(f: F, start: &[f64], step: f64, max_iters: u64, tol: f64) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    if start.is_empty() {
        let value = f(start);
        return Ok(Minimum { x: Vec::new(), value, converged: true });
    }
    let mut simplex = vec![start.to_vec()];
    for i in 0..start.len() {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(tol).map_err(wrap)?;
    let res = Executor::new(Closure(f), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(wrap)?;
    let state = res.state();
    let converged = !matches!(state.get_termination_reason(), Some(TerminationReason::MaxItersReached));
    let x = state.get_best_param().cloned().unwrap_or_else(|| start.to_vec());
    Ok(Minimum { x, value: state.get_best_cost(), converged })
}

/// Brent minimization on `[lo, hi]`.
pub(crate) fn brent<F>(f: F, lo: f64, hi: f64, tol: f64, max_iters: u64) -> Result<Minimum>
where
    F: Fn(f64) -> f64,
{
    let solver = BrentOpt::new(lo, hi).set_tolerance(tol, 1e-12);
    let res = Executor::new(Scalar(f), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(wrap)?;
    let state = res.state();
    let converged = !matches!(state.get_termination_reason(), Some(TerminationReason::MaxItersReached));
    let x = state.get_best_param().copied().unwrap_or(0.5 * (lo + hi));
    Ok(Minimum { x: vec![x], value: state.get_best_cost(), converged })
}

/// Maps the real line onto `[lo, hi]` on a logarithmic scale.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LogBounds {
    llo: f64,
    lhi: f64,
}

impl LogBounds {
    /// `lo` may be zero; the map then starts at `floor`.
    pub fn new(lo: f64, hi: f64, floor: f64) -> Self {
        let lo = lo.max(floor).min(hi);
        LogBounds { llo: lo.ln(), lhi: hi.ln() }
    }

    pub fn to_value(self, x: f64) -> f64 {
        let s = 0.5 * (1.0 + (0.5 * x).tanh());
        (self.llo + (self.lhi - self.llo) * s).exp()
    }
}

/// Least-squares non-negative amplitudes for a handful of basis vectors, by
/// enumerating active sets. Returns the amplitudes and the residual sum of
/// squares.
pub(crate) fn nnls_small(basis: &[&[f64]], y: &[f64], weights: Option<&[f64]>) -> (Vec<f64>, f64) {
    let k = basis.len();
    assert!(k <= 4, "enumeration is only meant for tiny bases");
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|&j| mask & (1 << j) != 0).collect();
        let m = active.len();
        let mut a = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut b = nalgebra::DVector::<f64>::zeros(m);
        for (r, &p) in active.iter().enumerate() {
            for (c, &q) in active.iter().enumerate() {
                a[(r, c)] = (0..y.len()).map(|i| w(i) * basis[p][i] * basis[q][i]).sum();
            }
            b[r] = (0..y.len()).map(|i| w(i) * basis[p][i] * y[i]).sum();
        }
        let sol = if m == 0 {
            Some(nalgebra::DVector::zeros(0))
        } else {
            a.clone().cholesky().map(|c| c.solve(&b))
        };
        let Some(sol) = sol else { continue };
        if sol.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            continue;
        }
        let mut amps = vec![0.0; k];
        for (r, &p) in active.iter().enumerate() {
            amps[p] = sol[r];
        }
        let rss: f64 = (0..y.len())
            .map(|i| {
                let m: f64 = (0..k).map(|j| amps[j] * basis[j][i]).sum();
                w(i) * (y[i] - m).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|b| rss < b.1) {
            best = Some((amps, rss));
        }
    }
    best.unwrap_or_else(|| (vec![0.0; k], y.iter().enumerate().map(|(i, v)| w(i) * v * v).sum()))
}
