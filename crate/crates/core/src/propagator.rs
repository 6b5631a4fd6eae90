//! Time evolution of ladder states, fluorescence and detector-response
//! convolution.
//!
//! Two propagation routes are available. Small systems use a dense matrix
//! exponential. Everything else goes through uniformization on the sparse
//! generator: with `q ≥ max |A_jj|`, `e^{At} = Σ_k Pois(k; qt) (I + A/q)^k`,
//! every term is non-negative, and the truncation error is bounded by the
//! Poisson tail. The horizon is cut into segments with `qΔt ≤ 64`, `q` is
//! recomputed per segment over the states that still hold population, and all
//! output times inside a segment are read off the same power sequence. Since
//! every ladder transition moves to a smaller index, states above the highest
//! populated index stay empty and are skipped.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ladder::{
    build_rate_matrix, emission_weight, initial_state, Generator, InitialStateSpec, LadderIndex, LadderState,
    RateParams, SpinProjection,
};
use crate::Error;

/// Largest uniformization parameter `qΔt` handled in one segment.
const SEGMENT_LAMBDA: f64 = 64.0;
/// Poisson tail mass left out of each segment.
const TAIL_TOLERANCE: f64 = 1e-16;
/// Ladder entries below this are treated as empty when pruning.
const PRUNE_FLOOR: f64 = 1e-16;
/// `Auto` switches from the dense exponential to uniformization above this
/// extended dimension.
pub const DENSE_AUTO_LIMIT: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

/// Output times of a propagation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
    pub spacing: Spacing,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_points: usize, spacing: Spacing) -> Result<Self> {
        let grid = TimeGrid {
            t_start,
            t_end,
            n_points,
            spacing,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn linear(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        Self::new(t_start, t_end, n_points, Spacing::Linear)
    }

    pub fn log(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        Self::new(t_start, t_end, n_points, Spacing::Log)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start < 0.0 {
            return invalid(format!("time grid start {} must be finite and >= 0", self.t_start));
        }
        if self.t_end <= self.t_start {
            return invalid(format!("time grid end {} must exceed start {}", self.t_end, self.t_start));
        }
        if self.n_points < 2 {
            return invalid("time grid needs at least 2 points");
        }
        if self.spacing == Spacing::Log && self.t_start <= 0.0 {
            return invalid("log-spaced time grid needs a positive start");
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = self.n_points;
        let last = (n - 1) as f64;
        match self.spacing {
            Spacing::Linear => {
                let step = (self.t_end - self.t_start) / last;
                (0..n).map(|i| if i + 1 == n { self.t_end } else { self.t_start + step * i as f64 }).collect()
            }
            Spacing::Log => {
                let (a, b) = (self.t_start.ln(), self.t_end.ln());
                (0..n)
                    .map(|i| if i + 1 == n { self.t_end } else { (a + (b - a) * i as f64 / last).exp() })
                    .collect()
            }
        }
    }
}

/// Propagation route.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Dense exponential for small generators, uniformization otherwise.
    #[default]
    Auto,
    DenseExpm,
    Uniformization,
}

impl Propagation {
    fn resolve(self, dim: usize) -> Propagation {
        match self {
            Propagation::Auto if dim <= DENSE_AUTO_LIMIT => Propagation::DenseExpm,
            Propagation::Auto => Propagation::Uniformization,
            other => other,
        }
    }
}

/// Detector response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum IrfSpec {
    /// Gaussian with the given full width at half maximum, seconds.
    Gaussian { fwhm: f64 },
    /// Sampled kernel on spacing `dt`; `values[zero_index]` sits at zero delay.
    Measured { dt: f64, values: Vec<f64>, zero_index: usize },
}

impl IrfSpec {
    pub fn gaussian(fwhm: f64) -> Self {
        IrfSpec::Gaussian { fwhm }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IrfSpec::Gaussian { fwhm } => {
                if !fwhm.is_finite() || *fwhm < 0.0 {
                    return invalid(format!("IRF FWHM must be finite and >= 0, got {fwhm}"));
                }
            }
            IrfSpec::Measured { dt, values, zero_index } => {
                if !dt.is_finite() || *dt <= 0.0 {
                    return invalid("measured IRF spacing must be positive");
                }
                if values.is_empty() || *zero_index >= values.len() {
                    return invalid("measured IRF needs samples and a zero index inside them");
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return invalid("measured IRF samples must be finite and non-negative");
                }
                if values.iter().sum::<f64>() <= 0.0 {
                    return invalid("measured IRF has zero area");
                }
            }
        }
        Ok(())
    }

    /// Unit-sum kernel on spacing `dt` and the position of zero delay.
    pub fn kernel(&self, dt: f64) -> Result<(Vec<f64>, usize)> {
        self.validate()?;
        match self {
            IrfSpec::Gaussian { fwhm } => {
                let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
                let half = (6.0 * sigma / dt).ceil() as usize;
                if sigma == 0.0 || half == 0 {
                    return Ok((vec![1.0], 0));
                }
                let mut k: Vec<f64> = (0..=2 * half)
                    .map(|i| {
                        let t = (i as f64 - half as f64) * dt;
                        (-0.5 * (t / sigma).powi(2)).exp()
                    })
                    .collect();
                let s: f64 = k.iter().sum();
                k.iter_mut().for_each(|v| *v /= s);
                Ok((k, half))
            }
            IrfSpec::Measured { dt: kdt, values, zero_index } => {
                if ((kdt - dt) / dt).abs() > 1e-6 {
                    return invalid(format!("measured IRF spacing {kdt} differs from trace spacing {dt}"));
                }
                let s: f64 = values.iter().sum();
                Ok((values.iter().map(|v| v / s).collect(), *zero_index))
            }
        }
    }
}

/// States sampled along a time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LadderState>,
}

/// Photon rate samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FluorescenceTrace {
    pub times: Vec<f64>,
    pub rates: Vec<f64>,
    /// Free-form description of what produced the trace.
    pub label: String,
}

impl FluorescenceTrace {
    pub fn new(times: Vec<f64>, rates: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if times.len() != rates.len() {
            return invalid("trace times and rates differ in length");
        }
        Ok(FluorescenceTrace {
            times,
            rates,
            label: label.into(),
        })
    }

    /// Trapezoidal integral of the rates.
    pub fn integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.rates.windows(2))
            .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
            .sum()
    }

    /// Common spacing of a uniform grid.
    pub fn uniform_step(&self) -> Result<f64> {
        uniform_step(&self.times)
    }
}

pub(crate) fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return invalid("a uniform grid needs at least two points");
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return invalid("time grid must be increasing");
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return invalid("time grid is not uniform");
        }
    }
    Ok(dt)
}

/// Photon emission rate `γ(n_nc + Σ w₁(J, M) P(J, M))`.
pub fn fluorescence(state: &LadderState, params: &RateParams) -> f64 {
    let collective: f64 = state
        .index()
        .iter()
        .map(|(i, j, m)| emission_weight(j, m) * state.populations[i])
        .sum();
    params.gamma * (state.n_nc + collective)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return invalid("output times must be finite and non-negative");
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("output times must be sorted");
    }
    Ok(())
}

/// Evaluate linear functionals `c · e^{At} v0` at each time in `times`.
///
/// Returns one row per functional. Times must be sorted and non-negative.
pub fn observe(
    gen: &Generator,
    v0: &[f64],
    times: &[f64],
    functionals: &[Vec<f64>],
    method: Propagation,
) -> Result<Vec<Vec<f64>>> {
    if v0.len() != gen.dim() || functionals.iter().any(|c| c.len() != gen.dim()) {
        return invalid("state or functional length does not match the generator");
    }
    check_times(times)?;
    match method.resolve(gen.dim()) {
        Propagation::DenseExpm => {
            let mut out = vec![Vec::with_capacity(times.len()); functionals.len()];
            dense_walk(gen, v0, times, |_, v| {
                for (row, c) in out.iter_mut().zip(functionals) {
                    row.push(dot(c, v));
                }
            })?;
            Ok(out)
        }
        _ => Ok(Uniformizer::forward(gen).run(v0, times, functionals, false)?.0),
    }
}

/// Full extended state vectors `e^{At} v0` at each time.
pub fn propagate_vectors(gen: &Generator, v0: &[f64], times: &[f64], method: Propagation) -> Result<Vec<Vec<f64>>> {
    if v0.len() != gen.dim() {
        return invalid("state length does not match the generator");
    }
    check_times(times)?;
    match method.resolve(gen.dim()) {
        Propagation::DenseExpm => {
            let mut out = Vec::with_capacity(times.len());
            dense_walk(gen, v0, times, |_, v| out.push(v.to_vec()))?;
            Ok(out)
        }
        _ => Ok(Uniformizer::forward(gen).run(v0, times, &[], true)?.1),
    }
}

/// Backward propagation `e^{Aᵀt} c` of a functional, at each time.
///
/// `e^{Aᵀt} c · x` equals `c · e^{At} x` for every starting vector `x`, so one
/// backward pass serves many initial states.
pub fn propagate_adjoint(gen: &Generator, functional: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if functional.len() != gen.dim() {
        return invalid("functional length does not match the generator");
    }
    check_times(times)?;
    Ok(Uniformizer::adjoint(gen).run(functional, times, &[], true)?.1)
}

/// Evolve a ladder state along a grid.
pub fn evolve(gen: &Generator, v0: &LadderState, grid: &TimeGrid, method: Propagation) -> Result<Trajectory> {
    grid.validate()?;
    if v0.index().as_ref() != gen.index().as_ref() || v0.sigma != gen.sigma() {
        return invalid("initial state and generator disagree on index or spin projection");
    }
    let times = grid.points();
    let vectors = propagate_vectors(gen, &v0.to_vector(), &times, method)?;
    let mut states = Vec::with_capacity(times.len());
    for (t, v) in times.iter().zip(vectors) {
        let mut s = LadderState::from_vector(gen.index(), v0.sigma, &v);
        s.clamp_roundoff().map_err(|e| e.context(format!("at t = {t:e} s")))?;
        states.push(s);
    }
    Ok(Trajectory { times, states })
}

/// Fluorescence of an evolving state sampled on `times`.
pub fn fluorescence_series(
    gen: &Generator,
    v0: &LadderState,
    times: &[f64],
    method: Propagation,
) -> Result<FluorescenceTrace> {
    let c = gen.fluorescence_functional();
    let mut rows = observe(gen, &v0.to_vector(), times, &[c], method)?;
    let rates = clamp_rates(rows.pop().unwrap_or_default())?;
    FluorescenceTrace::new(
        times.to_vec(),
        rates,
        format!("N={} sigma={}", gen.index().max_spins(), gen.sigma()),
    )
}

pub(crate) fn clamp_rates(mut rates: Vec<f64>) -> Result<Vec<f64>> {
    let scale = rates.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    for r in &mut rates {
        if !r.is_finite() {
            return Err(Error::Numerical("non-finite fluorescence".into()));
        }
        if *r < 0.0 {
            if *r < -1e-12 * scale.max(1.0) {
                return Err(Error::Numerical(format!("negative fluorescence {r}")));
            }
            *r = 0.0;
        }
    }
    Ok(rates)
}

/// Maximum over time of the fluorescence of a fully excited domain of `n`
/// spins without dephasing or intersystem crossing.
pub fn peak_rate_scaling(n: usize, params: &RateParams) -> Result<f64> {
    Ok(peak_rate(n, params)?.1)
}

/// `(t_peak, F_peak)` for the fully excited domain.
pub fn peak_rate(n: usize, params: &RateParams) -> Result<(f64, f64)> {
    params.validate()?;
    if params.gamma_d_0 != 0.0 || params.gamma_d_1 != 0.0 || params.gamma_isc_0 != 0.0 || params.gamma_isc_1 != 0.0 {
        return invalid("peak scaling is defined without dephasing and intersystem crossing");
    }
    let index = std::sync::Arc::new(LadderIndex::new(n)?);
    let gen = build_rate_matrix(&index, params, SpinProjection::Zero)?;
    let v0 = initial_state(&index, &InitialStateSpec::AllUp, SpinProjection::Zero)?.to_vector();
    let c = gen.fluorescence_functional();
    let rate_at = |t: f64| -> Result<f64> {
        Ok(observe(&gen, &v0, &[t], std::slice::from_ref(&c), Propagation::Auto)?[0][0])
    };

    // the burst is over well within a few single-spin lifetimes / N
    let horizon = 4.0 * ((n as f64).ln() + 2.0) / (n as f64 * params.gamma);
    let samples = 400;
    let times: Vec<f64> = (0..=samples).map(|i| horizon * i as f64 / samples as f64).collect();
    let rates = observe(&gen, &v0, &times, std::slice::from_ref(&c), Propagation::Auto)?.remove(0);
    let best = rates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if best == 0 {
        return Ok((0.0, rates[0]));
    }
    let step = horizon / samples as f64;
    let (mut a, mut b) = ((best as f64 - 1.0) * step, ((best + 1) as f64 * step).min(horizon));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (rate_at(x1)?, rate_at(x2)?);
    for _ in 0..60 {
        if (b - a) <= 1e-10 * b {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = rate_at(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = rate_at(x1)?;
        }
    }
    let (t, f) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    Ok(if f >= rates[best] { (t, f) } else { (times[best], rates[best]) })
}

/// Convolve a trace on a uniform grid with the detector response.
///
/// Signal before the first sample is taken as zero.
pub fn convolve_irf(trace: &FluorescenceTrace, irf: &IrfSpec) -> Result<FluorescenceTrace> {
    let dt = trace.uniform_step()?;
    let (kernel, zero) = irf.kernel(dt)?;
    let rates = convolve_samples(&trace.rates, &kernel, zero);
    FluorescenceTrace::new(trace.times.clone(), rates, trace.label.clone())
}

/// `out[i] = Σ_k kernel[k] · x[i − (k − zero)]`, zero outside `x`.
pub(crate) fn convolve_samples(x: &[f64], kernel: &[f64], zero: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for (k, &w) in kernel.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let shift = k as isize - zero as isize;
        for (i, o) in out.iter_mut().enumerate() {
            let src = i as isize - shift;
            if src >= 0 && (src as usize) < n {
                *o += w * x[src as usize];
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense_walk(gen: &Generator, v0: &[f64], times: &[f64], mut visit: impl FnMut(f64, &[f64])) -> Result<()> {
    let a = gen.to_dense();
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut v = DVector::from_column_slice(v0);
    let mut t = 0.0;
    for &target in times {
        let dt = target - t;
        if dt > 0.0 {
            let e = cache.entry(dt.to_bits()).or_insert_with(|| (&a * dt).exp());
            v = &*e * v;
            t = target;
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("dense propagation diverged at t = {target:e}")));
        }
        visit(target, v.as_slice());
    }
    Ok(())
}

/// Uniformization engine for the forward or transposed generator.
struct Uniformizer<'a> {
    gen: &'a Generator,
    transpose: bool,
}

impl<'a> Uniformizer<'a> {
    fn forward(gen: &'a Generator) -> Self {
        Uniformizer { gen, transpose: false }
    }

    fn adjoint(gen: &'a Generator) -> Self {
        Uniformizer { gen, transpose: true }
    }

    /// Columns that can hold population from now on: ladder states above the
    /// floor, everything they feed, and the bookkeeping slots. Ladder entries
    /// outside the set are zeroed. Returns the set and its largest exit rate.
    fn active_set(&self, v: &mut [f64]) -> (Vec<usize>, f64) {
        let gen = self.gen;
        let ladder = gen.ladder_dim();
        let d = gen.diagonal();
        if self.transpose {
            let q = d.iter().fold(0.0_f64, |m, x| m.max(-x));
            return ((0..gen.dim()).collect(), q);
        }
        let mut marked = vec![false; ladder];
        let mut active = Vec::new();
        let mut q = 0.0_f64;
        // targets always have smaller indices, so one descending sweep suffices
        for i in (0..ladder).rev() {
            if !marked[i] && v[i].abs() > PRUNE_FLOOR {
                marked[i] = true;
            }
            if marked[i] {
                active.push(i);
                q = q.max(-d[i]);
                for &(r, _) in gen.column(i) {
                    if r < ladder {
                        marked[r] = true;
                    }
                }
            } else {
                v[i] = 0.0;
            }
        }
        for j in ladder..gen.dim() {
            active.push(j);
            q = q.max(-d[j]);
        }
        (active, q)
    }

    /// `y = (I + A/q) x` on the active columns; `y` is zero elsewhere.
    fn step(&self, x: &[f64], y: &mut [f64], active: &[usize], inv_q: f64) {
        let gen = self.gen;
        let d = gen.diagonal();
        if self.transpose {
            for j in 0..gen.dim() {
                let mut acc = d[j] * x[j];
                for &(r, a) in gen.column(j) {
                    acc += a * x[r];
                }
                y[j] = x[j] + inv_q * acc;
            }
            return;
        }
        for &j in active {
            y[j] = x[j];
        }
        for &j in active {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let s = inv_q * xj;
            y[j] += d[j] * s;
            for &(r, a) in gen.column(j) {
                y[r] += a * s;
            }
        }
    }

    /// Propagate `v0` through `times`, returning functional rows and, when
    /// `keep_states`, the full vectors at each time.
    fn run(
        &self,
        v0: &[f64],
        times: &[f64],
        functionals: &[Vec<f64>],
        keep_states: bool,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let dim = self.gen.dim();
        let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(times.len()); functionals.len()];
        let mut states = Vec::new();
        let mut v = v0.to_vec();
        let mut t = 0.0_f64;
        let mut next = 0usize;
        let mut work = vec![0.0; dim];

        while next < times.len() {
            // outputs sitting exactly at the current time
            while next < times.len() && times[next] <= t {
                for (row, c) in rows.iter_mut().zip(functionals) {
                    row.push(dot(c, &v));
                }
                if keep_states {
                    states.push(v.clone());
                }
                next += 1;
            }
            if next == times.len() {
                break;
            }

            let (active, q) = self.active_set(&mut v);
            if q == 0.0 {
                // nothing moves any more
                t = f64::INFINITY;
                continue;
            }

            let reach = t + SEGMENT_LAMBDA / q;
            let seg_end = if keep_states {
                times[next].min(reach)
            } else {
                times[times.len() - 1].min(reach)
            };
            let lambda = q * (seg_end - t);
            let weights = poisson_weights(lambda);
            let k_max = weights.len() - 1;

            // power sequence x_k = (I + A/q)^k v, scalars per functional
            let mut scalars: Vec<Vec<f64>> = vec![Vec::with_capacity(k_max + 1); functionals.len()];
            let mut v_end = vec![0.0; dim];
            let mut x = std::mem::take(&mut v);
            let inv_q = 1.0 / q;
            for (k, &w) in weights.iter().enumerate() {
                for (s, c) in scalars.iter_mut().zip(functionals) {
                    s.push(active.iter().map(|&j| c[j] * x[j]).sum());
                }
                for &j in &active {
                    v_end[j] += w * x[j];
                }
                if k == k_max {
                    break;
                }
                self.step(&x, &mut work, &active, inv_q);
                std::mem::swap(&mut x, &mut work);
            }

            // Pois(k; rλ) = Pois(k; λ) r^k e^{(1−r)λ}, so each output is a
            // polynomial in r over the segment-end products
            let weighted: Vec<Vec<f64>> = scalars
                .iter()
                .map(|s| s.iter().zip(&weights).map(|(a, b)| a * b).collect())
                .collect();
            while next < times.len() && times[next] <= seg_end {
                let r = ((times[next] - t) / (seg_end - t)).min(1.0);
                let lift = ((1.0 - r) * lambda).exp();
                for (row, c) in rows.iter_mut().zip(&weighted) {
                    let poly = c.iter().rev().fold(0.0, |acc, &x| acc * r + x);
                    row.push(lift * poly);
                }
                if keep_states {
                    // segments end on output times when states are kept
                    states.push(v_end.clone());
                }
                next += 1;
            }

            if v_end.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("uniformization diverged near t = {seg_end:e}")));
            }
            v = v_end;
            t = seg_end;
        }
        Ok((rows, states))
    }
}

/// Poisson weights `Pois(k; λ)` up to the point where the remaining tail is
/// below tolerance.
fn poisson_weights(lambda: f64) -> Vec<f64> {
    let mut w = vec![(-lambda).exp()];
    let mut k = 0usize;
    loop {
        let next = w[k] * lambda / (k + 1) as f64;
        k += 1;
        w.push(next);
        let kf = k as f64;
        if kf > lambda {
            let ratio = lambda / (kf + 1.0);
            if next * ratio / (1.0 - ratio) < TAIL_TOLERANCE {
                break;
            }
        }
        if k > 100_000 {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder::{HalfInt, Slot};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn h(t: i32) -> HalfInt {
        HalfInt::from_twice(t)
    }

    fn setup(n: usize, params: RateParams, spec: InitialStateSpec) -> (Generator, LadderState) {
        let index = Arc::new(LadderIndex::new(n).unwrap());
        let gen = build_rate_matrix(&index, &params, SpinProjection::Zero).unwrap();
        let s = initial_state(&index, &spec, SpinProjection::Zero).unwrap();
        (gen, s)
    }

    #[test]
    fn single_spin_decay_both_routes() {
        let gamma = 2e8;
        let (gen, s) = setup(1, RateParams::radiative_only(gamma), InitialStateSpec::AllUp);
        let grid = TimeGrid::linear(0.0, 5e-8, 51).unwrap();
        for method in [Propagation::DenseExpm, Propagation::Uniformization] {
            let traj = evolve(&gen, &s, &grid, method).unwrap();
            for (t, st) in traj.times.iter().zip(&traj.states) {
                let want = (-gamma * t).exp();
                let got = st.population(h(1), h(1));
                assert!((got - want).abs() <= 1e-9 * want.max(1e-300), "{method:?} t={t} {got} {want}");
            }
        }
    }

    #[test]
    fn zero_generator_is_identity() {
        // a fully relaxed state does not move
        let (gen, mut s) = setup(3, RateParams::radiative_only(1e8), InitialStateSpec::AllUp);
        s.populations.iter_mut().for_each(|p| *p = 0.0);
        s.set_population(h(3), h(-3), 1.0).unwrap();
        let grid = TimeGrid::linear(0.0, 1e-6, 5).unwrap();
        for method in [Propagation::DenseExpm, Propagation::Uniformization] {
            let traj = evolve(&gen, &s, &grid, method).unwrap();
            for st in &traj.states {
                for (a, b) in st.populations.iter().zip(&s.populations) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn two_spin_cascade() {
        let gamma = 1e8;
        let (gen, s) = setup(2, RateParams::radiative_only(gamma), InitialStateSpec::AllUp);
        let grid = TimeGrid::linear(0.0, 5e-8, 101).unwrap();
        for method in [Propagation::DenseExpm, Propagation::Uniformization] {
            let traj = evolve(&gen, &s, &grid, method).unwrap();
            for (t, st) in traj.times.iter().zip(&traj.states) {
                let want = 2.0 * gamma * t * (-2.0 * gamma * t).exp();
                assert!((st.population(h(2), h(0)) - want).abs() < 1e-12);
                assert_eq!(st.population(h(1), h(1)), 0.0);
            }
        }
    }

    #[test]
    fn fluorescence_examples() {
        let params = RateParams::radiative_only(3.0);
        let index = Arc::new(LadderIndex::new(2).unwrap());
        let mut s = LadderState::empty(&index, SpinProjection::Zero);
        s.set_population(h(1), h(1), 1.0).unwrap();
        assert_relative_eq!(fluorescence(&s, &params), 3.0);
        let mut s = LadderState::empty(&index, SpinProjection::Zero);
        s.set_population(h(2), h(0), 1.0).unwrap();
        assert_relative_eq!(fluorescence(&s, &params), 6.0);
        let mut s = LadderState::empty(&index, SpinProjection::Zero);
        s.n_nc = 3.0;
        assert_relative_eq!(fluorescence(&s, &params), 9.0);
    }

    #[test]
    fn routes_agree_with_dephasing_and_isc() {
        let params = RateParams {
            gamma: 5e7,
            gamma_isc_0: 1e7,
            gamma_isc_1: 6e7,
            gamma_d_0: 2e8,
            gamma_d_1: 2e9,
        };
        let index = Arc::new(LadderIndex::new(6).unwrap());
        for sigma in SpinProjection::ALL {
            let gen = build_rate_matrix(&index, &params, sigma).unwrap();
            let s = initial_state(&index, &InitialStateSpec::MaximallyMixedTopLadder, sigma).unwrap();
            let times: Vec<f64> = (0..60).map(|i| i as f64 * 1.3e-9).collect();
            let c = gen.fluorescence_functional();
            let dense = observe(&gen, &s.to_vector(), &times, &[c.clone()], Propagation::DenseExpm).unwrap();
            let unif = observe(&gen, &s.to_vector(), &times, &[c], Propagation::Uniformization).unwrap();
            for (a, b) in dense[0].iter().zip(&unif[0]) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn adjoint_matches_forward() {
        let params = RateParams::with_bulk_isc(4e7, 1.5e8, 2e9);
        let index = Arc::new(LadderIndex::new(5).unwrap());
        let gen = build_rate_matrix(&index, &params, SpinProjection::PlusMinusOne).unwrap();
        let s = initial_state(&index, &InitialStateSpec::MaximallyMixedTopLadder, SpinProjection::PlusMinusOne)
            .unwrap()
            .to_vector();
        let mut e = vec![0.0; gen.dim()];
        e[gen.slot(Slot::Emitted)] = 1.0;
        let times = [1e-9, 4e-9, 2e-8];
        let fwd = observe(&gen, &s, &times, &[e.clone()], Propagation::Uniformization).unwrap();
        let adj = propagate_adjoint(&gen, &e, &times).unwrap();
        for (f, u) in fwd[0].iter().zip(&adj) {
            assert_relative_eq!(*f, dot(u, &s), max_relative = 1e-12);
        }
    }

    #[test]
    fn emitted_photons_equal_initial_excitation() {
        for n in 1..=10 {
            let (gen, s) = setup(n, RateParams::radiative_only(1e8), InitialStateSpec::MaximallyMixedTopLadder);
            let times: Vec<f64> = (0..=4000).map(|i| i as f64 * 5e-11).collect();
            let trace = fluorescence_series(&gen, &s, &times, Propagation::Auto).unwrap();
            let emitted = trace.integral();
            assert_relative_eq!(emitted, s.excitations(), max_relative = 0.01);
        }
    }

    #[test]
    fn burst_is_delayed_for_four_or_more() {
        let params = RateParams::radiative_only(1e8);
        for n in [1usize, 2, 3] {
            let (t, f) = peak_rate(n, &params).unwrap();
            if n == 1 {
                assert_eq!(t, 0.0);
                assert_relative_eq!(f, 1e8, max_relative = 1e-12);
            }
        }
        for n in [4usize, 10, 20] {
            assert!(peak_rate(n, &params).unwrap().0 > 0.0);
        }
        assert!(peak_rate_scaling(2, &params).unwrap() >= 2e8 * (1.0 - 1e-12));
        let r = peak_rate_scaling(40, &params).unwrap() / peak_rate_scaling(20, &params).unwrap();
        assert!((r / 4.0 - 1.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn tail_slope_is_single_spin_rate() {
        let params = RateParams::with_bulk_isc(3e7, 2e8, 2.5e9);
        let index = Arc::new(LadderIndex::new(8).unwrap());
        let gen = build_rate_matrix(&index, &params, SpinProjection::PlusMinusOne).unwrap();
        let s = initial_state(&index, &InitialStateSpec::MaximallyMixedTopLadder, SpinProjection::PlusMinusOne)
            .unwrap();
        let rate = params.single_spin_rate(SpinProjection::PlusMinusOne);
        let times: Vec<f64> = (0..200).map(|i| 8.0 / rate + i as f64 * 0.02 / rate).collect();
        let trace = fluorescence_series(&gen, &s, &times, Propagation::Auto).unwrap();
        let slope = (trace.rates[199].ln() - trace.rates[0].ln()) / (times[199] - times[0]);
        assert_relative_eq!(-slope, rate, max_relative = 1e-3);
    }

    #[test]
    fn gaussian_irf_width() {
        let dt = 4e-12;
        let times: Vec<f64> = (0..400).map(|i| i as f64 * dt).collect();
        let mut rates = vec![0.0; 400];
        rates[200] = 1.0;
        let trace = FluorescenceTrace::new(times, rates, "delta").unwrap();
        let out = convolve_irf(&trace, &IrfSpec::gaussian(110e-12)).unwrap();
        let peak = out.rates.iter().cloned().fold(0.0, f64::max);
        let above = out.rates.iter().filter(|&&r| r >= peak / 2.0).count() as f64 * dt;
        assert!((above - 110e-12).abs() <= dt, "width {above}");
        assert_relative_eq!(out.rates.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn narrow_irf_is_identity() {
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 1e-11).collect();
        let rates: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let trace = FluorescenceTrace::new(times, rates.clone(), "x").unwrap();
        let out = convolve_irf(&trace, &IrfSpec::gaussian(0.0)).unwrap();
        assert_eq!(out.rates, rates);
    }

    #[test]
    fn irf_rejects_nonuniform_grid() {
        let trace = FluorescenceTrace::new(vec![0.0, 1.0, 3.0], vec![1.0; 3], "x").unwrap();
        assert!(matches!(
            convolve_irf(&trace, &IrfSpec::gaussian(0.1)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn irf_keeps_exponential_tail_slope() {
        let tau = 5e-9;
        let dt = 1.6e-11;
        let times: Vec<f64> = (0..3000).map(|i| i as f64 * dt).collect();
        // onset well inside the grid so the kernel is not cut at the left edge
        let onset = 100.0 * dt;
        let rates: Vec<f64> = times.iter().map(|&t| if t < onset { 0.0 } else { (-(t - onset) / tau).exp() }).collect();
        let trace = FluorescenceTrace::new(times.clone(), rates, "exp").unwrap();
        let out = convolve_irf(&trace, &IrfSpec::gaussian(110e-12)).unwrap();
        let (i, j) = (1000, 2500);
        let slope = (out.rates[j].ln() - out.rates[i].ln()) / (times[j] - times[i]);
        assert_relative_eq!(-slope * tau, 1.0, max_relative = 1e-3);
        let total: f64 = out.rates.iter().sum();
        let orig: f64 = trace.rates.iter().sum();
        assert_relative_eq!(total, orig, max_relative = 1e-6);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::linear(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::linear(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::log(0.0, 1.0, 3).is_err());
        let g = TimeGrid::log(1e-3, 1.0, 4).unwrap().points();
        assert_relative_eq!(g[1], 1e-2, max_relative = 1e-12);
        assert_eq!(g[3], 1.0);
    }
}
