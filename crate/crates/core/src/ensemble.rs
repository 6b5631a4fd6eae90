//! Mixtures of spin projections and domain sizes.
//!
//! Every domain of a given projection follows the same generator, and the
//! ladders of an `n`-spin domain are a subset of those of any larger index.
//! A whole projection can therefore be propagated once, on the index of its
//! largest domain, starting from the weighted sum of all top-ladder states.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ladder::{build_rate_matrix, InitialStateSpec, LadderIndex, LadderState, RateParams, SpinProjection};
use crate::propagator::{clamp_rates, observe, FluorescenceTrace, Propagation, TimeGrid};

/// Measured or assumed domain sizes per projection.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSets {
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
}

/// Probability of each `(σ, N)` domain, weighted by spin count.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainEnsemble {
    weights: BTreeMap<(SpinProjection, usize), f64>,
}

impl DomainEnsemble {
    /// Build from explicit weights; they must be non-negative and sum to 1.
    pub fn from_weights(weights: impl IntoIterator<Item = ((SpinProjection, usize), f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((sigma, n), w) in weights {
            if n == 0 {
                return invalid("domain sizes must be at least 1");
            }
            if !w.is_finite() || w < 0.0 {
                return invalid(format!("weight for N={n} is {w}"));
            }
            if w > 0.0 {
                *map.entry((sigma, n)).or_insert(0.0) += w;
            }
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("ensemble weights sum to {total}, expected 1"));
        }
        Ok(DomainEnsemble { weights: map })
    }

    /// All weight on one domain.
    pub fn single(sigma: SpinProjection, n: usize) -> Result<Self> {
        Self::from_weights([((sigma, n), 1.0)])
    }

    pub fn weights(&self) -> &BTreeMap<(SpinProjection, usize), f64> {
        &self.weights
    }

    pub fn weight(&self, sigma: SpinProjection, n: usize) -> f64 {
        self.weights.get(&(sigma, n)).copied().unwrap_or(0.0)
    }

    /// `(N, p)` pairs of one projection, ascending in `N`.
    pub fn components(&self, sigma: SpinProjection) -> Vec<(usize, f64)> {
        self.weights
            .iter()
            .filter(|((s, _), _)| *s == sigma)
            .map(|(&(_, n), &w)| (n, w))
            .collect()
    }

    /// Fraction of spins in `m_s = 0`.
    pub fn p0(&self) -> f64 {
        let p: f64 = self.components(SpinProjection::Zero).iter().map(|(_, w)| w).sum();
        p.clamp(0.0, 1.0)
    }

    pub fn max_size(&self) -> usize {
        self.weights.keys().map(|&(_, n)| n).max().unwrap_or(0)
    }

    /// `a · self + (1 − a) · other`.
    pub fn mix(&self, other: &DomainEnsemble, a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return invalid(format!("mixing coefficient {a} outside [0, 1]"));
        }
        let lhs = self.weights.iter().map(|(k, w)| (*k, a * w));
        let rhs = other.weights.iter().map(|(k, w)| (*k, (1.0 - a) * w));
        let mut map: BTreeMap<_, f64> = BTreeMap::new();
        for (k, w) in lhs.chain(rhs) {
            *map.entry(k).or_insert(0.0) += w;
        }
        let total: f64 = map.values().sum();
        map.values_mut().for_each(|w| *w /= total);
        Self::from_weights(map)
    }
}

/// Spin-count-weighted probabilities: a domain of `n` spins contributes `n`
/// spins out of the total over both sets.
pub fn ensemble_from_sets(sets: &DomainSets) -> Result<DomainEnsemble> {
    if sets.s0.is_empty() && sets.s1.is_empty() {
        return invalid("at least one domain set must be non-empty");
    }
    if sets.s0.iter().chain(&sets.s1).any(|&n| n == 0) {
        return invalid("domain sizes must be at least 1");
    }
    let total: usize = sets.s0.iter().chain(&sets.s1).sum();
    let mut map: BTreeMap<(SpinProjection, usize), f64> = BTreeMap::new();
    for (sigma, set) in [(SpinProjection::Zero, &sets.s0), (SpinProjection::PlusMinusOne, &sets.s1)] {
        for &n in set {
            *map.entry((sigma, n)).or_insert(0.0) += n as f64 / total as f64;
        }
    }
    // exact re-normalization guards against accumulated rounding
    let s: f64 = map.values().sum();
    map.values_mut().for_each(|w| *w /= s);
    DomainEnsemble::from_weights(map)
}

/// Discretized Gaussian distribution of domain sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDomainSpec {
    pub mean: f64,
    pub variance: f64,
    pub max_size: usize,
}

impl GaussianDomainSpec {
    /// Mean `n`, variance `ratio · n`, extending four standard deviations past
    /// the mean but never above `cap`.
    pub fn centred(n: usize, variance_ratio: f64, cap: usize) -> Self {
        let mean = n as f64;
        let variance = variance_ratio * mean;
        let reach = (4.0 * variance.sqrt()).ceil() as usize;
        GaussianDomainSpec {
            mean,
            variance,
            max_size: (n + reach).min(cap).max(n.min(cap)),
        }
    }

    /// Mean `n`, variance `ratio · n`, truncated to `[1, n]` so that `n` is
    /// the largest domain present.
    pub fn capped(n: usize, variance_ratio: f64) -> Self {
        GaussianDomainSpec {
            mean: n as f64,
            variance: variance_ratio * n as f64,
            max_size: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0) || !self.mean.is_finite() {
            return invalid(format!("Gaussian mean must be positive, got {}", self.mean));
        }
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return invalid(format!("Gaussian variance must be positive, got {}", self.variance));
        }
        if self.max_size == 0 || self.mean > self.max_size as f64 {
            return invalid(format!("Gaussian mean {} exceeds cap {}", self.mean, self.max_size));
        }
        Ok(())
    }

    /// Unit-sum weights for `N = 1..=max_size`, evaluated at integer `N`.
    pub fn weights(&self) -> Result<Vec<(usize, f64)>> {
        self.validate()?;
        let mut w: Vec<(usize, f64)> = (1..=self.max_size)
            .map(|n| (n, (-(n as f64 - self.mean).powi(2) / (2.0 * self.variance)).exp()))
            .collect();
        let total: f64 = w.iter().map(|x| x.1).sum();
        if total == 0.0 {
            // variance so small every sample underflowed
            let nearest = (self.mean.round() as usize).clamp(1, self.max_size);
            return Ok(vec![(nearest, 1.0)]);
        }
        w.retain(|x| x.1 > 0.0);
        w.iter_mut().for_each(|x| x.1 /= total);
        Ok(w)
    }
}

/// Gaussian domain sizes per projection, scaled so that `p0 = pol_target`.
pub fn ensemble_from_gaussian(
    spec0: &GaussianDomainSpec,
    spec1: &GaussianDomainSpec,
    pol_target: f64,
) -> Result<DomainEnsemble> {
    if !(pol_target > 0.0 && pol_target < 1.0) {
        return invalid(format!("polarization target {pol_target} must lie strictly between 0 and 1"));
    }
    let w0 = spec0.weights()?;
    let w1 = spec1.weights()?;
    let entries = w0
        .into_iter()
        .map(|(n, w)| ((SpinProjection::Zero, n), w * pol_target))
        .chain(w1.into_iter().map(|(n, w)| ((SpinProjection::PlusMinusOne, n), w * (1.0 - pol_target))));
    let mut map: BTreeMap<_, f64> = entries.collect();
    let s: f64 = map.values().sum();
    map.values_mut().for_each(|w| *w /= s);
    DomainEnsemble::from_weights(map)
}

/// Starting vector for one projection on the index of its largest domain.
pub fn projection_initial_state(
    index: &Arc<LadderIndex>,
    components: &[(usize, f64)],
    spec: &InitialStateSpec,
    sigma: SpinProjection,
) -> Result<LadderState> {
    let mut state = LadderState::empty(index, sigma);
    for &(n, w) in components {
        let top = spec.top_ladder_weights(n)?;
        state.add_top_ladder(n, &top, w)?;
    }
    Ok(state)
}

fn projection_trace(
    components: &[(usize, f64)],
    params: &RateParams,
    spec: &InitialStateSpec,
    sigma: SpinProjection,
    times: &[f64],
    method: Propagation,
) -> Result<Vec<f64>> {
    let Some(max_n) = components.iter().map(|c| c.0).max() else {
        return Ok(vec![0.0; times.len()]);
    };
    let run = || -> Result<Vec<f64>> {
        let index = Arc::new(LadderIndex::new(max_n)?);
        let gen = build_rate_matrix(&index, params, sigma)?;
        let v0 = projection_initial_state(&index, components, spec, sigma)?;
        let c = gen.fluorescence_functional();
        Ok(observe(&gen, &v0.to_vector(), times, &[c], method)?.remove(0))
    };
    run().map_err(|e| e.context(format!("sigma={sigma}, largest domain N={max_n}")))
}

/// `F(t) = Σ_σ Σ_N p(σ, N) F_{σ,N}(t)`, one propagation per projection.
pub fn total_fluorescence(
    ensemble: &DomainEnsemble,
    params: &RateParams,
    spec: &InitialStateSpec,
    grid: &TimeGrid,
) -> Result<FluorescenceTrace> {
    grid.validate()?;
    total_fluorescence_at(ensemble, params, spec, &grid.points(), Propagation::Auto)
}

/// As [`total_fluorescence`] on explicit sorted times.
pub fn total_fluorescence_at(
    ensemble: &DomainEnsemble,
    params: &RateParams,
    spec: &InitialStateSpec,
    times: &[f64],
    method: Propagation,
) -> Result<FluorescenceTrace> {
    params.validate()?;
    let c0 = ensemble.components(SpinProjection::Zero);
    let c1 = ensemble.components(SpinProjection::PlusMinusOne);
    let (f0, f1) = rayon::join(
        || projection_trace(&c0, params, spec, SpinProjection::Zero, times, method),
        || projection_trace(&c1, params, spec, SpinProjection::PlusMinusOne, times, method),
    );
    let rates: Vec<f64> = f0?.iter().zip(f1?).map(|(a, b)| a + b).collect();
    FluorescenceTrace::new(times.to_vec(), clamp_rates(rates)?, "ensemble")
}

/// Reference route: propagate every `(σ, N)` domain on its own index and sum.
pub fn total_fluorescence_per_domain(
    ensemble: &DomainEnsemble,
    params: &RateParams,
    spec: &InitialStateSpec,
    times: &[f64],
    method: Propagation,
) -> Result<FluorescenceTrace> {
    use rayon::prelude::*;
    params.validate()?;
    let parts: Vec<Vec<f64>> = ensemble
        .weights()
        .par_iter()
        .map(|(&(sigma, n), &w)| {
            let f = projection_trace(&[(n, 1.0)], params, spec, sigma, times, method)?;
            Ok(f.into_iter().map(|x| w * x).collect())
        })
        .collect::<Result<_>>()?;
    let mut rates = vec![0.0; times.len()];
    for p in parts {
        rates.iter_mut().zip(p).for_each(|(r, x)| *r += x);
    }
    FluorescenceTrace::new(times.to_vec(), clamp_rates(rates)?, "ensemble per domain")
}

/// Memo of per-projection traces keyed by quantized inputs.
///
/// Safe for concurrent use; when it grows past its capacity it is cleared
/// rather than evicted entry by entry.
#[derive(Debug)]
pub struct TraceCache {
    map: DashMap<u64, Arc<Vec<f64>>>,
    capacity: usize,
}

impl Default for TraceCache {
    fn default() -> Self {
        Self::new(256)
    }
}

/// Drop the low mantissa bits so values equal to ~1e-10 relative share a key.
fn quantize(x: f64) -> u64 {
    x.to_bits() & !((1u64 << 20) - 1)
}

impl TraceCache {
    pub fn new(capacity: usize) -> Self {
        TraceCache {
            map: DashMap::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&self) {
        self.map.clear();
    }

    fn key(
        components: &[(usize, f64)],
        params: &RateParams,
        spec: &InitialStateSpec,
        sigma: SpinProjection,
        times: &[f64],
    ) -> u64 {
        let mut h = DefaultHasher::new();
        sigma.hash(&mut h);
        for x in [params.gamma, params.isc(sigma), params.dephasing(sigma)] {
            quantize(x).hash(&mut h);
        }
        for &(n, w) in components {
            n.hash(&mut h);
            quantize(w).hash(&mut h);
        }
        match spec {
            InitialStateSpec::MaximallyMixedTopLadder => 0u8.hash(&mut h),
            InitialStateSpec::AllUp => 1u8.hash(&mut h),
            InitialStateSpec::Custom(w) => {
                2u8.hash(&mut h);
                w.iter().for_each(|x| x.to_bits().hash(&mut h));
            }
        }
        times.len().hash(&mut h);
        times.iter().for_each(|t| t.to_bits().hash(&mut h));
        h.finish()
    }

    /// Fluorescence of one projection, computed once per distinct input.
    pub fn projection(
        &self,
        components: &[(usize, f64)],
        params: &RateParams,
        spec: &InitialStateSpec,
        sigma: SpinProjection,
        times: &[f64],
        method: Propagation,
    ) -> Result<Arc<Vec<f64>>> {
        let key = Self::key(components, params, spec, sigma, times);
        if let Some(hit) = self.map.get(&key) {
            return Ok(Arc::clone(&hit));
        }
        let trace = Arc::new(projection_trace(components, params, spec, sigma, times, method)?);
        if self.map.len() >= self.capacity {
            self.map.clear();
        }
        self.map.insert(key, Arc::clone(&trace));
        Ok(trace)
    }

    /// Cached [`total_fluorescence_at`].
    pub fn total(
        &self,
        ensemble: &DomainEnsemble,
        params: &RateParams,
        spec: &InitialStateSpec,
        times: &[f64],
        method: Propagation,
    ) -> Result<FluorescenceTrace> {
        params.validate()?;
        let mut rates = vec![0.0; times.len()];
        for sigma in SpinProjection::ALL {
            let comps = ensemble.components(sigma);
            if comps.is_empty() {
                continue;
            }
            let f = self.projection(&comps, params, spec, sigma, times, method)?;
            rates.iter_mut().zip(f.iter()).for_each(|(r, x)| *r += x);
        }
        FluorescenceTrace::new(times.to_vec(), clamp_rates(rates)?, "ensemble")
    }
}
