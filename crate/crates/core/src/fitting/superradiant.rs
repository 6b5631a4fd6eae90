use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_value, solve_amplitudes, sum_squares};
use super::tail::{fit_error, tail_fit_gamma};
use super::trace::convolved_on_bins;
use super::{DecayTrace, FitConfig, FitLoss, FitResult};
use crate::ensemble::{ensemble_from_gaussian, DomainEnsemble, GaussianDomainSpec, TraceCache};
use crate::error::{invalid, Error, Result};
use crate::ladder::{bulk_isc_0, bulk_isc_1, InitialStateSpec, RateParams, SpinProjection};
use crate::propagator::{IrfSpec, Propagation};
use crate::units::{mhz_to_rate, ns};

/// Smallest dephasing rate the search resolves, rad/s.
const DEPHASING_FLOOR: f64 = 2.0 * std::f64::consts::PI * 1e5;

/// A point in the collective model's parameter space. Rates in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperradiantParams {
    /// Largest domain size.
    pub n_max: usize,
    pub gamma: f64,
    pub gamma_d_0: f64,
    pub gamma_d_1: f64,
    /// Fraction of emitters in `m_s = 0`.
    pub p0: f64,
    /// Intersystem-crossing rates for `σ = 0` and `σ = ±1`.
    pub isc: (f64, f64),
    /// Domain-size variance as a multiple of `n_max`.
    pub variance_ratio: f64,
}

impl SuperradiantParams {
    /// Rates given as ordinary frequencies in MHz, bulk intersystem crossing
    /// and variance `n_max / 2`.
    pub fn from_mhz(n_max: usize, gamma: f64, gamma_d_0: f64, gamma_d_1: f64, p0: f64) -> Self {
        SuperradiantParams {
            n_max,
            gamma: mhz_to_rate(gamma),
            gamma_d_0: mhz_to_rate(gamma_d_0),
            gamma_d_1: mhz_to_rate(gamma_d_1),
            p0,
            isc: (bulk_isc_0(), bulk_isc_1()),
            variance_ratio: 0.5,
        }
    }

    pub fn rate_params(&self) -> RateParams {
        RateParams {
            gamma: self.gamma,
            gamma_isc_0: self.isc.0,
            gamma_isc_1: self.isc.1,
            gamma_d_0: self.gamma_d_0,
            gamma_d_1: self.gamma_d_1,
        }
    }

    pub fn domain_spec(&self) -> GaussianDomainSpec {
        GaussianDomainSpec::capped(self.n_max, self.variance_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 || self.n_max > crate::ladder::MAX_SPINS {
            return invalid(format!("n_max {} outside 1..={}", self.n_max, crate::ladder::MAX_SPINS));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return invalid(format!("p0 {} outside [0, 1]", self.p0));
        }
        self.rate_params().validate()?;
        self.domain_spec().validate()
    }

    /// Domain ensemble with the same Gaussian shape for both projections.
    pub fn ensemble(&self) -> Result<DomainEnsemble> {
        let spec = self.domain_spec();
        match self.p0 {
            p if p >= 1.0 => DomainEnsemble::from_weights(spec.weights()?.into_iter().map(|(n, w)| ((SpinProjection::Zero, n), w))),
            p if p <= 0.0 => DomainEnsemble::from_weights(spec.weights()?.into_iter().map(|(n, w)| ((SpinProjection::PlusMinusOne, n), w))),
            p => ensemble_from_gaussian(&spec, &spec, p),
        }
    }
}

/// IRF-convolved model fluorescence on the bins of a histogram, with a memo of
/// per-projection traces.
#[derive(Debug)]
pub struct ForwardModel {
    centers: Vec<f64>,
    dt: f64,
    irf: IrfSpec,
    model_times: Vec<f64>,
    initial: InitialStateSpec,
    cache: TraceCache,
}

impl ForwardModel {
    pub fn new(edges: &[f64], irf: &IrfSpec, initial: InitialStateSpec) -> Result<Self> {
        let dt = crate::propagator::uniform_step(edges)?;
        let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let model_times: Vec<f64> = centers.iter().copied().filter(|&t| t >= 0.0).collect();
        if model_times.is_empty() {
            return invalid("no bins after the excitation pulse");
        }
        irf.validate()?;
        Ok(ForwardModel {
            centers,
            dt,
            irf: irf.clone(),
            model_times,
            initial,
            cache: TraceCache::default(),
        })
    }

    pub fn for_trace(trace: &DecayTrace, initial: InitialStateSpec) -> Result<Self> {
        Self::new(&trace.bin_edges, &trace.irf, initial)
    }

    /// Convolved photon rate of one projection per unit population.
    pub fn basis(&self, sigma: SpinProjection, p: &SuperradiantParams) -> Result<Vec<f64>> {
        let comps = p.domain_spec().weights()?;
        let raw = self
            .cache
            .projection(&comps, &p.rate_params(), &self.initial, sigma, &self.model_times, Propagation::Auto)?;
        convolved_on_bins(&self.centers, self.dt, &self.irf, &raw)
    }

    /// Convolved total photon rate on the bins, `p0 F₀ + (1 − p0) F₁`.
    pub fn expected(&self, p: &SuperradiantParams) -> Result<Vec<f64>> {
        p.validate()?;
        let b0 = self.basis(SpinProjection::Zero, p)?;
        let b1 = self.basis(SpinProjection::PlusMinusOne, p)?;
        Ok(b0.iter().zip(&b1).map(|(a, b)| p.p0 * a + (1.0 - p.p0) * b).collect())
    }
}

struct Context<'a> {
    y: &'a [f64],
    bg: f64,
    gamma: f64,
    config: &'a FitConfig,
    model: &'a ForwardModel,
    /// Natural-log bounds of the two dephasing rates.
    bounds: [(f64, f64); 2],
}

#[derive(Clone, Debug)]
struct Candidate {
    n: usize,
    gamma_d: [f64; 2],
    /// Amplitudes of the two projections on the common basis scale.
    amps: [f64; 2],
    scale: f64,
    loss: f64,
    converged: bool,
}

impl Context<'_> {
    fn params(&self, n: usize, gamma_d: [f64; 2], p0: f64) -> SuperradiantParams {
        SuperradiantParams {
            n_max: n,
            gamma: self.gamma,
            gamma_d_0: gamma_d[0],
            gamma_d_1: gamma_d[1],
            p0,
            isc: self.config.isc,
            variance_ratio: self.config.variance_ratio,
        }
    }

    fn free_dims(&self, n: usize) -> Vec<usize> {
        if n == 1 {
            // a lone spin has no collective ladder to dephase
            return Vec::new();
        }
        let f = &self.config.fixed;
        [f.gamma_d_0, f.gamma_d_1]
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    fn default_rates(&self) -> [f64; 2] {
        let f = &self.config.fixed;
        [
            f.gamma_d_0.unwrap_or_else(|| (0.5 * (self.bounds[0].0 + self.bounds[0].1)).exp()),
            f.gamma_d_1.unwrap_or_else(|| (0.5 * (self.bounds[1].0 + self.bounds[1].1)).exp()),
        ]
    }

    fn rates_from(&self, dims: &[usize], x: &[f64]) -> [f64; 2] {
        let mut r = self.default_rates();
        for (&d, &v) in dims.iter().zip(x) {
            r[d] = v.clamp(self.bounds[d].0, self.bounds[d].1).exp();
        }
        r
    }

    /// Normalized bases of both projections and their common scale.
    fn bases(&self, n: usize, gamma_d: [f64; 2]) -> Result<([Vec<f64>; 2], f64)> {
        let [mut b0, mut b1] = self.raw_bases(n, gamma_d)?;
        let scale = b0.iter().chain(&b1).cloned().fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(Error::Numerical("model emits no light".into()));
        }
        b0.iter_mut().chain(b1.iter_mut()).for_each(|v| *v /= scale);
        Ok(([b0, b1], scale))
    }

    /// Best amplitudes for fixed bases, honouring the polarization bounds.
    fn amplitudes(&self, b: &[Vec<f64>; 2]) -> ([f64; 2], f64) {
        let (plo, phi) = self.config.polarization_bounds;
        let pinned = self.config.fixed.p0;
        if pinned.is_none() {
            let (a, v) = solve_amplitudes(&[&b[0], &b[1]], self.y, self.bg, self.config.loss);
            let total = a[0] + a[1];
            let p = if total > 0.0 { a[0] / total } else { 0.5 * (plo + phi) };
            if (plo..=phi).contains(&p) {
                return ([a[0], a[1]], v);
            }
        }
        let p = pinned.unwrap_or_else(|| {
            let (a, _) = solve_amplitudes(&[&b[0], &b[1]], self.y, self.bg, self.config.loss);
            (a[0] / (a[0] + a[1])).clamp(plo, phi)
        });
        let mix: Vec<f64> = b[0].iter().zip(&b[1]).map(|(x, y)| p * x + (1.0 - p) * y).collect();
        let (a, v) = solve_amplitudes(&[&mix], self.y, self.bg, self.config.loss);
        ([p * a[0], (1.0 - p) * a[0]], v)
    }

    fn objective(&self, n: usize, gamma_d: [f64; 2]) -> f64 {
        match self.bases(n, gamma_d) {
            Ok((b, _)) => self.amplitudes(&b).1,
            Err(_) => f64::INFINITY,
        }
    }

    fn candidate(&self, n: usize, gamma_d: [f64; 2], converged: bool) -> Result<Candidate> {
        let (b, scale) = self.bases(n, gamma_d)?;
        let (amps, loss) = self.amplitudes(&b);
        Ok(Candidate { n, gamma_d, amps, scale, loss, converged })
    }

    /// Searches the free log-rates: a coarse grid over the whole box (both
    /// orderings of the two rates, hence both mirrored basins), then a
    /// compass search that recentres on improvement and halves its step
    /// otherwise. Each trial changes one projection at a time along the axes,
    /// so most bases come from the memo.
    fn fit_at(&self, n: usize) -> Result<Candidate> {
        let dims = self.free_dims(n);
        if dims.is_empty() {
            return self.candidate(n, self.default_rates(), true);
        }
        let f = |u: &[f64]| self.objective(n, self.rates_from(&dims, u));
        let axes: Vec<Vec<f64>> = dims
            .iter()
            .map(|&d| {
                let (lo, hi) = self.bounds[d];
                (0..COARSE_POINTS).map(|i| lo + (hi - lo) * i as f64 / (COARSE_POINTS - 1) as f64).collect()
            })
            .collect();
        let grid = cartesian(&axes);
        let values: Vec<f64> = grid.iter().map(|u| f(u)).collect();
        let spacing: Vec<f64> = axes.iter().map(|a| a[1] - a[0]).collect();
        let neighbours = |i: usize, j: usize| {
            i != j && (0..spacing.len()).all(|d| (grid[i][d] - grid[j][d]).abs() < 1.5 * spacing[d])
        };
        let mut starts: Vec<usize> = (0..grid.len())
            .filter(|&i| values[i].is_finite() && (0..grid.len()).all(|j| !neighbours(i, j) || values[j] >= values[i]))
            .collect();
        starts.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        starts.truncate(MAX_STARTS);
        if starts.is_empty() {
            return Err(Error::Numerical(format!("no finite loss for n_max = {n}")));
        }
        let mut best: Option<(Vec<f64>, f64, bool)> = None;
        for &i in &starts {
            let (u, v, converged) = self.compass_search(&f, &dims, grid[i].clone(), values[i], spacing.clone());
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((u, v, converged));
            }
        }
        let (best_u, _, converged) = best.expect("at least one start");
        self.candidate(n, self.rates_from(&dims, &best_u), converged)
    }

    /// Compass search from `u` with initial `step`: recentres on any
    /// improvement, halves the step otherwise.
    fn compass_search(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        dims: &[usize],
        mut best_u: Vec<f64>,
        mut best_v: f64,
        mut step: Vec<f64>,
    ) -> (Vec<f64>, f64, bool) {
        let mut last_halving = best_v;
        for _ in 0..self.config.max_iters {
            let mut moved = false;
            for trial in compass(&best_u, &step) {
                let clamped: Vec<f64> = trial
                    .iter()
                    .zip(dims)
                    .map(|(&u, &d)| u.clamp(self.bounds[d].0, self.bounds[d].1))
                    .collect();
                let v = f(&clamped);
                if v < best_v {
                    best_v = v;
                    best_u = clamped;
                    moved = true;
                }
            }
            if moved {
                continue;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
            let gain = last_halving - best_v;
            last_halving = best_v;
            let fine = step.iter().all(|&s| s < 1e-3);
            if step.iter().all(|&s| s < 1e-8) || (fine && gain <= 1e-9 * best_v.abs() + 1e-6) {
                return (best_u, best_v, true);
            }
        }
        (best_u, best_v, false)
    }

    fn raw_bases(&self, n: usize, gamma_d: [f64; 2]) -> Result<[Vec<f64>; 2]> {
        let p = self.params(n, gamma_d, 0.5);
        Ok([
            self.model.basis(SpinProjection::Zero, &p)?,
            self.model.basis(SpinProjection::PlusMinusOne, &p)?,
        ])
    }

    /// Gauss-Newton covariance of the free continuous parameters.
    fn covariance(&self, c: &Candidate) -> Option<(Vec<String>, DMatrix<f64>)> {
        let r = self.raw_bases(c.n, c.gamma_d).ok()?;
        let a = [c.amps[0] / c.scale, c.amps[1] / c.scale];
        let amp = a[0] + a[1];
        if !(amp > 0.0) {
            return None;
        }
        let p0 = a[0] / amp;
        let m: Vec<f64> = r[0].iter().zip(&r[1]).map(|(x, y)| a[0] * x + a[1] * y).collect();
        let mut labels = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for d in self.free_dims(c.n) {
            let h = 1e-3 * c.gamma_d[d];
            let mut moved = c.gamma_d;
            moved[d] += h;
            let rm = self.raw_bases(c.n, moved).ok()?;
            cols.push(rm[d].iter().zip(&r[d]).map(|(x, y)| a[d] * (x - y) / h).collect());
            labels.push(if d == 0 { "gamma_d_0" } else { "gamma_d_1" }.to_string());
        }
        if self.config.fixed.p0.is_none() {
            labels.push("p0".into());
            cols.push(r[0].iter().zip(&r[1]).map(|(x, y)| amp * (x - y)).collect());
        }
        labels.push("amplitude".into());
        cols.push(r[0].iter().zip(&r[1]).map(|(x, y)| p0 * x + (1.0 - p0) * y).collect());
        let k = cols.len();
        let dof = self.y.len().saturating_sub(k).max(1) as f64;
        let weights: Vec<f64> = match self.config.loss {
            FitLoss::LeastSquares => vec![1.0; m.len()],
            FitLoss::PoissonNll => m.iter().map(|v| 1.0 / (v + self.bg).max(1.0)).collect(),
        };
        let mut info = DMatrix::<f64>::zeros(k, k);
        for p in 0..k {
            for q in 0..=p {
                let v: f64 = (0..m.len()).map(|i| weights[i] * cols[p][i] * cols[q][i]).sum();
                info[(p, q)] = v;
                info[(q, p)] = v;
            }
        }
        let mut cov = info.try_inverse()?;
        if self.config.loss == FitLoss::LeastSquares {
            cov *= sum_squares(self.y, self.bg, &m) / dof;
        }
        cov.iter().all(|v| v.is_finite()).then_some((labels, cov))
    }
}

const COARSE_POINTS: usize = 12;
/// Grid minima refined by the compass search.
const MAX_STARTS: usize = 3;

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect()
    })
}

/// Axis points at one and two steps, plus the diagonal corners at one step.
fn compass(center: &[f64], step: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for d in 0..center.len() {
        for k in [-2.0, -1.0, 1.0, 2.0] {
            let mut p = center.to_vec();
            p[d] += k * step[d];
            out.push(p);
        }
    }
    if center.len() == 2 {
        for (a, b) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            out.push(vec![center[0] + a * step[0], center[1] + b * step[1]]);
        }
    }
    out
}

fn search_sizes(config: &FitConfig) -> (Vec<usize>, usize) {
    if let Some(n) = config.fixed.n_max {
        return (vec![n], 0);
    }
    let (lo, hi) = config.n_range;
    let span = hi - lo;
    if span <= 10 {
        return ((lo..=hi).collect(), 0);
    }
    let step = span.div_ceil(8);
    let mut v: Vec<usize> = (lo..=hi).step_by(step).collect();
    v.push(hi);
    v.push((lo + hi) / 2);
    v.sort_unstable();
    v.dedup();
    (v, step)
}

/// Fits the collective model to a decay histogram.
///
/// The radiative rate is pinned by a tail fit unless fixed in the config.
/// The largest domain size is searched on a coarse-to-fine integer grid; at
/// each size the dephasing rates are searched in log coordinates while the projection amplitudes (hence `p0`) are solved
/// exactly for every trial.
pub fn fit_superradiant(trace: &DecayTrace, config: &FitConfig) -> Result<FitResult> {
    trace.validate()?;
    config.validate()?;
    if trace.n_bins() < 100 {
        return invalid(format!("trace has {} bins, need at least 100", trace.n_bins()));
    }
    let bg = trace.background_level();
    let peak_t = trace.centers()[trace.peak_index()];
    let end = *trace.bin_edges.last().expect("validated");
    let mut warnings = Vec::new();
    let gamma = match config.fixed.gamma {
        Some(g) => g,
        None => {
            let window = config.tail_window.unwrap_or((peak_t + ns(10.0), end));
            tail_fit_gamma(trace, window, config.isc)?
        }
    };
    let slowest = gamma + config.isc.0.min(config.isc.1);
    let lifetimes = (end - peak_t) * slowest;
    if lifetimes < 5.0 {
        warnings.push(format!("trace spans {lifetimes:.1} tail lifetimes after the peak, fewer than 5"));
    }
    let model = ForwardModel::for_trace(trace, config.initial_state.clone())?;
    let ctx = Context {
        y: &trace.counts,
        bg,
        gamma,
        config,
        model: &model,
        bounds: config.dephasing_bounds.map(|(lo, hi)| (lo.max(DEPHASING_FLOOR).min(hi).ln(), hi.ln())),
    };

    let (coarse, step) = search_sizes(config);
    let initial_residual = ctx.objective(config.fixed.n_max.unwrap_or((config.n_range.0 + config.n_range.1) / 2), ctx.default_rates());
    let run = |sizes: &[usize]| -> Vec<(usize, Result<Candidate>)> { sizes.par_iter().map(|&n| (n, ctx.fit_at(n))).collect() };
    let mut done = run(&coarse);
    let pick = |all: &[(usize, Result<Candidate>)]| -> Option<Candidate> {
        all.iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.n.cmp(&b.n)))
            .cloned()
    };
    if step > 1 {
        if let Some(b) = pick(&done) {
            let (lo, hi) = config.n_range;
            let fine: Vec<usize> = (b.n.saturating_sub(step - 1).max(lo)..=(b.n + step - 1).min(hi))
                .filter(|n| !coarse.contains(n))
                .collect();
            done.extend(run(&fine));
        }
    }
    for (n, r) in &done {
        if let Err(e) = r {
            warnings.push(format!("n_max = {n} failed: {e}"));
        }
    }
    let Some(best) = pick(&done) else {
        return fit_error("every domain size failed to evaluate");
    };

    let amp = best.amps[0] + best.amps[1];
    let p0 = if amp > 0.0 { best.amps[0] / amp } else { config.fixed.p0.unwrap_or(0.5) };
    let (b, _) = ctx.bases(best.n, best.gamma_d)?;
    let m: Vec<f64> = b[0].iter().zip(&b[1]).map(|(x, y)| best.amps[0] * x + best.amps[1] * y).collect();
    let residual = loss_value(config.loss, &trace.counts, bg, &m);
    if config.fixed.n_max.is_none() && (best.n == config.n_range.1 || (best.n == config.n_range.0 && config.n_range.0 > 1)) {
        warnings.push(format!("n_max = {} sits on the bound of n_range", best.n));
    }
    if best.n == 1 {
        warnings.push("dephasing rates are not identifiable for n_max = 1".into());
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("background".to_string(), bg);
    parameters.insert("amplitude".to_string(), amp);
    parameters.insert("rate_scale".to_string(), best.scale);
    let cov = ctx.covariance(&best);
    if cov.is_none() {
        warnings.push("covariance estimate unavailable (singular information matrix)".into());
    }
    let (covariance_labels, covariance_estimate) = match cov {
        Some((l, c)) => (l, Some(c)),
        None => (Vec::new(), None),
    };
    let result = FitResult {
        model: "superradiant".into(),
        n_max: best.n,
        gamma,
        gamma_d_0: best.gamma_d[0],
        gamma_d_1: best.gamma_d[1],
        p0,
        loss: config.loss,
        residual,
        initial_residual,
        sum_squares: sum_squares(&trace.counts, bg, &m),
        parameters,
        per_model_scores: BTreeMap::from([("superradiant".to_string(), residual)]),
        covariance_labels,
        covariance_estimate,
        curve: m.iter().map(|v| v + bg).collect(),
        warnings,
    };
    if !best.converged {
        return Err(Error::Fit {
            message: format!("local search at n_max = {} hit its iteration budget", best.n),
            best: Some(Box::new(result)),
        });
    }
    Ok(result)
}
