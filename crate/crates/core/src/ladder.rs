//! Dicke-ladder state space and its rate-equation generator.
//!
//! A domain of `N` collectively coupled spins is described by populations
//! `P(J, M)` over every collective subspace `J ∈ {1/2, 1, …, N/2}` with
//! `M ∈ {−J, …, J}`, plus a scalar count of excited non-collective spins.
//! Half-integers are stored as twice their value ([`HalfInt`]) so indexing
//! never compares floating-point quantum numbers.
//!
//! The generator acting on a state vector has three processes:
//!
//! * collective decay `(J, M) → (J, M−1)` at `γ·w₁(J, M)` with
//!   `w₁ = J(J+1) − M(M−1)`;
//! * local dephasing with projection `(J, M) → (J−½, M−½)` at
//!   `2J·γ_d·(1 − (M/J)²)`, which also feeds one spin into the
//!   non-collective pool;
//! * intersystem crossing `(J, M) → (J−½, M−½)` at `(J+M)·γ_isc`.
//!
//! The state vector carries four bookkeeping slots after the ladder
//! populations (see [`Slot`]): the non-collective excited count, a dark sink
//! that receives intersystem crossing out of the smallest ladder, and two
//! accumulators for emitted photons and excitations lost to the dark channel.
//! Probability (ladder + dark sink) and excitation number (ladder excitations
//! + non-collective + both accumulators) are exact linear invariants.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::units::mhz_to_rate;

/// Largest domain size accepted by [`LadderIndex::new`].
pub const MAX_SPINS: usize = 100;

/// Bulk intersystem-crossing rate for `m_s = 0`, 2π × 1.8 MHz.
pub fn bulk_isc_0() -> f64 {
    mhz_to_rate(1.8)
}

/// Bulk intersystem-crossing rate for `m_s = ±1`, 2π × 9.4 MHz.
pub fn bulk_isc_1() -> f64 {
    mhz_to_rate(9.4)
}

/// Bulk optical decay rate, 2π × 12.2 MHz.
pub fn bulk_gamma() -> f64 {
    mhz_to_rate(12.2)
}

/// A half-integer stored as twice its value: `J = 3/2` is `HalfInt(3)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

/// Electron spin projection of a domain. `±1` are treated as one population.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpinProjection {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    PlusMinusOne,
}

impl SpinProjection {
    pub const ALL: [SpinProjection; 2] = [SpinProjection::Zero, SpinProjection::PlusMinusOne];
}

impl fmt::Display for SpinProjection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpinProjection::Zero => f.write_str("0"),
            SpinProjection::PlusMinusOne => f.write_str("±1"),
        }
    }
}

/// Physical rates of the model, all angular frequencies in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// Radiative decay rate of a single emitter.
    pub gamma: f64,
    pub gamma_isc_0: f64,
    pub gamma_isc_1: f64,
    /// Local dephasing rate for `m_s = 0`.
    pub gamma_d_0: f64,
    /// Local dephasing rate for `m_s = ±1`.
    pub gamma_d_1: f64,
}

impl RateParams {
    /// Radiative rate only, no dephasing and no intersystem crossing.
    pub fn radiative_only(gamma: f64) -> Self {
        RateParams {
            gamma,
            gamma_isc_0: 0.0,
            gamma_isc_1: 0.0,
            gamma_d_0: 0.0,
            gamma_d_1: 0.0,
        }
    }

    /// `γ` and the two dephasing rates, with bulk intersystem-crossing rates.
    pub fn with_bulk_isc(gamma: f64, gamma_d_0: f64, gamma_d_1: f64) -> Self {
        RateParams {
            gamma,
            gamma_isc_0: bulk_isc_0(),
            gamma_isc_1: bulk_isc_1(),
            gamma_d_0,
            gamma_d_1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("gamma", self.gamma),
            ("gamma_isc_0", self.gamma_isc_0),
            ("gamma_isc_1", self.gamma_isc_1),
            ("gamma_d_0", self.gamma_d_0),
            ("gamma_d_1", self.gamma_d_1),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("rate {name} must be finite and non-negative, got {v}"));
            }
        }
        if self.gamma <= 0.0 {
            return invalid("radiative rate gamma must be positive");
        }
        Ok(())
    }

    pub fn isc(&self, sigma: SpinProjection) -> f64 {
        match sigma {
            SpinProjection::Zero => self.gamma_isc_0,
            SpinProjection::PlusMinusOne => self.gamma_isc_1,
        }
    }

    pub fn dephasing(&self, sigma: SpinProjection) -> f64 {
        match sigma {
            SpinProjection::Zero => self.gamma_d_0,
            SpinProjection::PlusMinusOne => self.gamma_d_1,
        }
    }

    /// Late-time decay rate of an isolated emitter, `γ + γ_isc(σ)`.
    pub fn single_spin_rate(&self, sigma: SpinProjection) -> f64 {
        self.gamma + self.isc(sigma)
    }
}

/// Bijection between `(J, M)` pairs and contiguous vector positions.
///
/// Ladders are stored in ascending `J`, and within a ladder in ascending `M`,
/// so every transition of the generator moves to a strictly smaller index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LadderIndex {
    max_spins: usize,
    /// `offsets[k]` is the first position of the ladder with `2J = k + 1`;
    /// the final entry equals the dimension.
    offsets: Vec<usize>,
    coords: Vec<(HalfInt, HalfInt)>,
}

impl LadderIndex {
    pub fn new(max_spins: usize) -> Result<Self> {
        if max_spins == 0 {
            return domain("domain size must be at least 1");
        }
        if max_spins > MAX_SPINS {
            return domain(format!("domain size {max_spins} exceeds the supported cap {MAX_SPINS}"));
        }
        let mut offsets = Vec::with_capacity(max_spins + 1);
        let mut coords = Vec::new();
        for two_j in 1..=max_spins as i32 {
            offsets.push(coords.len());
            for two_m in (-two_j..=two_j).step_by(2) {
                coords.push((HalfInt(two_j), HalfInt(two_m)));
            }
        }
        offsets.push(coords.len());
        Ok(LadderIndex {
            max_spins,
            offsets,
            coords,
        })
    }

    pub fn max_spins(&self) -> usize {
        self.max_spins
    }

    /// Number of ladder populations, `(N² + 3N)/2`.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Position of `(J, M)`, or `None` if the pair is not part of the index.
    pub fn position(&self, j: HalfInt, m: HalfInt) -> Option<usize> {
        let (tj, tm) = (j.twice(), m.twice());
        if tj < 1 || tj as usize > self.max_spins || tm.abs() > tj || (tj - tm) % 2 != 0 {
            return None;
        }
        Some(self.offsets[tj as usize - 1] + ((tj + tm) / 2) as usize)
    }

    pub fn coords(&self, pos: usize) -> (HalfInt, HalfInt) {
        self.coords[pos]
    }

    /// Positions of the ladder with the given `J`, ordered by ascending `M`.
    pub fn ladder(&self, j: HalfInt) -> Range<usize> {
        let k = j.twice() as usize;
        assert!(k >= 1 && k <= self.max_spins, "J = {j} outside index");
        self.offsets[k - 1]..self.offsets[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, HalfInt, HalfInt)> + '_ {
        self.coords.iter().enumerate().map(|(i, &(j, m))| (i, j, m))
    }
}

/// `w₁(J, M) = J(J+1) − M(M−1) = (J+M)(J−M+1)`, the collective emission
/// weight of `|J, M⟩`.
pub fn emission_weight(j: HalfInt, m: HalfInt) -> f64 {
    let (tj, tm) = (i64::from(j.twice()), i64::from(m.twice()));
    (((tj + tm) / 2) * ((tj - tm + 2) / 2)) as f64
}

/// `2J·(1 − (M/J)²)`, the dephasing-with-projection weight of `|J, M⟩`.
pub fn dephasing_weight(j: HalfInt, m: HalfInt) -> f64 {
    let (tj, tm) = (f64::from(j.twice()), f64::from(m.twice()));
    (tj * tj - tm * tm) / tj
}

/// Number of excitations `J + M`.
pub fn excitations(j: HalfInt, m: HalfInt) -> f64 {
    f64::from((j.twice() + m.twice()) / 2)
}

/// Collective emission rate `γ(J(J+1) − M(M−1))` out of `|J, M⟩`.
pub fn collective_rate(j: HalfInt, m: HalfInt, gamma: f64) -> Result<f64> {
    if j.twice() < 1 {
        return domain(format!("J = {j} must be at least 1/2"));
    }
    if m.twice().abs() > j.twice() || (j.twice() - m.twice()) % 2 != 0 {
        return domain(format!("M = {m} is not a projection of J = {j}"));
    }
    Ok(gamma * emission_weight(j, m))
}

/// Bookkeeping slots appended after the ladder populations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    NonCollective = 0,
    Dark = 1,
    Emitted = 2,
    IscLoss = 3,
}

pub const EXTRA_SLOTS: usize = 4;

/// Sparse time-independent generator `A` of `dv/dt = A v` on the extended
/// state vector of one spin projection.
#[derive(Clone, Debug)]
pub struct Generator {
    index: Arc<LadderIndex>,
    params: RateParams,
    sigma: SpinProjection,
    /// Off-diagonal entries per source column: `(row, rate)`, all positive.
    columns: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
}

impl Generator {
    pub fn index(&self) -> &Arc<LadderIndex> {
        &self.index
    }

    pub fn params(&self) -> &RateParams {
        &self.params
    }

    pub fn sigma(&self) -> SpinProjection {
        self.sigma
    }

    /// Ladder dimension (without bookkeeping slots).
    pub fn ladder_dim(&self) -> usize {
        self.index.dim()
    }

    /// Full state-vector length including bookkeeping slots.
    pub fn dim(&self) -> usize {
        self.index.dim() + EXTRA_SLOTS
    }

    pub fn slot(&self, slot: Slot) -> usize {
        self.index.dim() + slot as usize
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn column(&self, col: usize) -> &[(usize, f64)] {
        &self.columns[col]
    }

    /// Largest exit rate `max |A_jj|`.
    pub fn max_exit_rate(&self) -> f64 {
        self.diagonal.iter().fold(0.0_f64, |m, d| m.max(-d))
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            y[j] += self.diagonal[j] * xj;
            for &(r, a) in &self.columns[j] {
                y[r] += a * xj;
            }
        }
    }

    /// `y = Aᵀ x`.
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = self.diagonal[j] * x[j];
            for &(r, a) in &self.columns[j] {
                acc += a * x[r];
            }
            *yj = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(j, j)] = self.diagonal[j];
            for &(r, v) in &self.columns[j] {
                a[(r, j)] += v;
            }
        }
        a
    }

    /// Linear functional giving the fluorescence rate `F = c · v`.
    pub fn fluorescence_functional(&self) -> Vec<f64> {
        let gamma = self.params.gamma;
        let mut c = vec![0.0; self.dim()];
        for (i, j, m) in self.index.iter() {
            c[i] = gamma * emission_weight(j, m);
        }
        c[self.slot(Slot::NonCollective)] = gamma;
        c
    }
}

/// Assemble the generator for one spin projection.
///
/// Transitions that would leave the index are dropped except intersystem
/// crossing out of `J = 1/2`, which is routed to the dark sink; dephasing out
/// of `J = 1/2` has zero weight.
pub fn build_rate_matrix(
    index: &Arc<LadderIndex>,
    params: &RateParams,
    sigma: SpinProjection,
) -> Result<Generator> {
    params.validate()?;
    let ladder_dim = index.dim();
    let n = ladder_dim + EXTRA_SLOTS;
    let nc = ladder_dim + Slot::NonCollective as usize;
    let dark = ladder_dim + Slot::Dark as usize;
    let emitted = ladder_dim + Slot::Emitted as usize;
    let isc_loss = ladder_dim + Slot::IscLoss as usize;

    let gamma = params.gamma;
    let g_isc = params.isc(sigma);
    let g_d = params.dephasing(sigma);

    let mut columns = vec![Vec::new(); n];
    let mut diagonal = vec![0.0; n];

    for (pos, j, m) in index.iter() {
        let col = &mut columns[pos];
        let mut exit = 0.0;

        let collective = gamma * emission_weight(j, m);
        if collective > 0.0 {
            let target = index
                .position(j, HalfInt(m.twice() - 2))
                .expect("collective decay stays within the ladder");
            col.push((target, collective));
            col.push((emitted, collective));
            exit += collective;
        }

        let lower = index.position(HalfInt(j.twice() - 1), HalfInt(m.twice() - 1));

        let dephase = g_d * dephasing_weight(j, m);
        if dephase > 0.0 {
            let target = lower.expect("dephasing from |M| < J always has a smaller ladder");
            col.push((target, dephase));
            col.push((nc, dephase));
            exit += dephase;
        }

        let isc = g_isc * excitations(j, m);
        if isc > 0.0 {
            match lower {
                Some(target) => col.push((target, isc)),
                None => {
                    debug_assert_eq!(j.twice(), 1);
                    col.push((dark, isc));
                }
            }
            col.push((isc_loss, isc));
            exit += isc;
        }

        diagonal[pos] = -exit;
    }

    let nc_col = &mut columns[nc];
    if gamma > 0.0 {
        nc_col.push((emitted, gamma));
    }
    if g_isc > 0.0 {
        nc_col.push((isc_loss, g_isc));
    }
    diagonal[nc] = -(gamma + g_isc);

    Ok(Generator {
        index: Arc::clone(index),
        params: *params,
        sigma,
        columns,
        diagonal,
    })
}

/// How the top ladder `J = N/2` is populated at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "weights")]
pub enum InitialStateSpec {
    /// Every `M` of the top ladder equally populated, `1/(N+1)` each.
    MaximallyMixedTopLadder,
    /// All spins excited, `P(N/2, N/2) = 1`.
    AllUp,
    /// Explicit weights over `M = −J, …, J` in ascending order.
    Custom(Vec<f64>),
}

impl Default for InitialStateSpec {
    fn default() -> Self {
        InitialStateSpec::MaximallyMixedTopLadder
    }
}

impl InitialStateSpec {
    /// Top-ladder weights for a domain of `n` spins, ascending in `M`.
    pub fn top_ladder_weights(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            InitialStateSpec::MaximallyMixedTopLadder => Ok(vec![1.0 / (n as f64 + 1.0); n + 1]),
            InitialStateSpec::AllUp => {
                let mut w = vec![0.0; n + 1];
                w[n] = 1.0;
                Ok(w)
            }
            InitialStateSpec::Custom(w) => {
                if w.len() != n + 1 {
                    return invalid(format!(
                        "custom initial weights need {} entries for N = {n}, got {}",
                        n + 1,
                        w.len()
                    ));
                }
                if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
                    return invalid("custom initial weights must be finite and non-negative");
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return invalid(format!("custom initial weights sum to {total}, expected 1"));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Populations of one spin projection at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderState {
    index: Arc<LadderIndex>,
    pub sigma: SpinProjection,
    /// `P(J, M)` laid out by [`LadderIndex`].
    pub populations: Vec<f64>,
    /// Expected number of excited non-collective spins.
    pub n_nc: f64,
    /// Probability that intersystem crossing emptied the last collective spin.
    pub dark: f64,
    /// Photons emitted so far, `∫ F dt / 1`.
    pub emitted: f64,
    /// Excitations lost to intersystem crossing so far.
    pub isc_lost: f64,
}

impl LadderState {
    pub fn empty(index: &Arc<LadderIndex>, sigma: SpinProjection) -> Self {
        LadderState {
            index: Arc::clone(index),
            sigma,
            populations: vec![0.0; index.dim()],
            n_nc: 0.0,
            dark: 0.0,
            emitted: 0.0,
            isc_lost: 0.0,
        }
    }

    /// Unpack an extended state vector produced by a [`Generator`].
    pub fn from_vector(index: &Arc<LadderIndex>, sigma: SpinProjection, v: &[f64]) -> Self {
        let d = index.dim();
        assert_eq!(v.len(), d + EXTRA_SLOTS, "state vector length mismatch");
        LadderState {
            index: Arc::clone(index),
            sigma,
            populations: v[..d].to_vec(),
            n_nc: v[d + Slot::NonCollective as usize],
            dark: v[d + Slot::Dark as usize],
            emitted: v[d + Slot::Emitted as usize],
            isc_lost: v[d + Slot::IscLoss as usize],
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.populations.len() + EXTRA_SLOTS);
        v.extend_from_slice(&self.populations);
        v.extend_from_slice(&[self.n_nc, self.dark, self.emitted, self.isc_lost]);
        v
    }

    pub fn index(&self) -> &Arc<LadderIndex> {
        &self.index
    }

    pub fn population(&self, j: HalfInt, m: HalfInt) -> f64 {
        self.index.position(j, m).map_or(0.0, |p| self.populations[p])
    }

    pub fn set_population(&mut self, j: HalfInt, m: HalfInt, value: f64) -> Result<()> {
        match self.index.position(j, m) {
            Some(p) => {
                self.populations[p] = value;
                Ok(())
            }
            None => domain(format!("(J, M) = ({j}, {m}) is not in the index")),
        }
    }

    /// Add a domain of `n` spins with top-ladder weights, scaled by `weight`.
    pub fn add_top_ladder(&mut self, n: usize, weights: &[f64], weight: f64) -> Result<()> {
        if n == 0 || n > self.index.max_spins() {
            return domain(format!(
                "domain size {n} does not fit an index of {} spins",
                self.index.max_spins()
            ));
        }
        assert_eq!(weights.len(), n + 1);
        let range = self.index.ladder(HalfInt(n as i32));
        for (p, w) in self.populations[range].iter_mut().zip(weights) {
            *p += weight * w;
        }
        Ok(())
    }

    /// Probability held by the ladders, excluding the dark sink.
    pub fn ladder_probability(&self) -> f64 {
        self.populations.iter().sum()
    }

    /// Ladder probability plus the dark sink; conserved by the generator.
    pub fn total_probability(&self) -> f64 {
        self.ladder_probability() + self.dark
    }

    /// Excitations still present: collective `Σ (J+M) P` plus non-collective.
    pub fn excitations(&self) -> f64 {
        self.index
            .iter()
            .map(|(i, j, m)| excitations(j, m) * self.populations[i])
            .sum::<f64>()
            + self.n_nc
    }

    /// Present excitations plus those already emitted or lost; conserved.
    pub fn bookkept_excitations(&self) -> f64 {
        self.excitations() + self.emitted + self.isc_lost
    }

    /// Clamp round-off negatives in `[-1e-12, 0)` to zero; larger negative
    /// values are reported as an integration failure.
    pub fn clamp_roundoff(&mut self) -> Result<()> {
        let slots = self
            .populations
            .iter_mut()
            .chain([&mut self.n_nc, &mut self.dark, &mut self.emitted, &mut self.isc_lost]);
        for v in slots {
            if !v.is_finite() {
                return Err(crate::Error::Numerical(format!("non-finite population {v}")));
            }
            if *v < 0.0 {
                if *v < -1e-12 {
                    return Err(crate::Error::Numerical(format!("negative population {v}")));
                }
                *v = 0.0;
            }
        }
        Ok(())
    }
}

/// Initial state of a domain of `index.max_spins()` spins.
pub fn initial_state(
    index: &Arc<LadderIndex>,
    spec: &InitialStateSpec,
    sigma: SpinProjection,
) -> Result<LadderState> {
    let n = index.max_spins();
    let weights = spec.top_ladder_weights(n)?;
    let mut state = LadderState::empty(index, sigma);
    state.add_top_ladder(n, &weights, 1.0)?;
    Ok(state)
}

/// Rate at which spins leave the collective ladders for the non-collective
/// pool: `γ_d Σ 2J (1 − (M/J)²) P(J, M)`.
pub fn dephasing_outflux(state: &LadderState, params: &RateParams) -> f64 {
    let g_d = params.dephasing(state.sigma);
    if g_d == 0.0 {
        return 0.0;
    }
    g_d * state
        .index
        .iter()
        .map(|(i, j, m)| dephasing_weight(j, m) * state.populations[i])
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn h(twice: i32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    fn idx(n: usize) -> Arc<LadderIndex> {
        Arc::new(LadderIndex::new(n).unwrap())
    }

    #[test]
    fn index_dimensions() {
        assert_eq!(LadderIndex::new(1).unwrap().dim(), 2);
        assert_eq!(LadderIndex::new(2).unwrap().dim(), 5);
        assert_eq!(LadderIndex::new(50).unwrap().dim(), 1325);
        assert_eq!(LadderIndex::new(70).unwrap().dim(), 2555);
    }

    #[test]
    fn index_rejects_out_of_range() {
        assert!(matches!(LadderIndex::new(0), Err(crate::Error::Domain(_))));
        assert!(matches!(LadderIndex::new(MAX_SPINS + 1), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn n2_enumeration_by_hand() {
        let index = LadderIndex::new(2).unwrap();
        let pairs: Vec<_> = index.iter().map(|(_, j, m)| (j.twice(), m.twice())).collect();
        assert_eq!(pairs, vec![(1, -1), (1, 1), (2, -2), (2, 0), (2, 2)]);
        assert_eq!(index.position(h(2), h(0)), Some(3));
        assert_eq!(index.position(h(2), h(1)), None);
        assert_eq!(index.position(h(3), h(1)), None);
    }

    #[test]
    fn collective_rate_examples() {
        let g = 1.7;
        assert_relative_eq!(collective_rate(h(1), h(1), g).unwrap(), g);
        assert_eq!(collective_rate(h(2), h(-2), g).unwrap(), 0.0);
        assert_relative_eq!(collective_rate(h(50), h(0), g).unwrap(), 650.0 * g);
        assert!(matches!(collective_rate(h(2), h(4), g), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn bottom_of_ladder_absorbs() {
        for tj in 1..=80 {
            assert_eq!(collective_rate(h(tj), h(-tj), 3.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_spin_generator() {
        let index = idx(1);
        let gen = build_rate_matrix(&index, &RateParams::radiative_only(2.0), SpinProjection::Zero).unwrap();
        let a = gen.to_dense();
        let up = index.position(h(1), h(1)).unwrap();
        let down = index.position(h(1), h(-1)).unwrap();
        assert_eq!(a[(up, up)], -2.0);
        assert_eq!(a[(down, up)], 2.0);
        assert_eq!(a[(down, down)], 0.0);
        assert_eq!(a[(gen.slot(Slot::Emitted), up)], 2.0);
    }

    #[test]
    fn n2_cascade_structure() {
        let index = idx(2);
        let gen = build_rate_matrix(&index, &RateParams::radiative_only(1.0), SpinProjection::Zero).unwrap();
        let a = gen.to_dense();
        let p = |tj, tm| index.position(h(tj), h(tm)).unwrap();
        assert_eq!(a[(p(2, 0), p(2, 2))], 2.0);
        assert_eq!(a[(p(2, -2), p(2, 0))], 2.0);
        // nothing flows from J = 1 into J = 1/2 without dephasing or intersystem crossing
        for (r, jr, _) in index.iter() {
            for (c, jc, _) in index.iter() {
                if jr.twice() == 1 && jc.twice() == 2 {
                    assert_eq!(a[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn initial_state_examples() {
        let s = initial_state(&idx(2), &InitialStateSpec::MaximallyMixedTopLadder, SpinProjection::Zero).unwrap();
        for tm in [-2, 0, 2] {
            assert_relative_eq!(s.population(h(2), h(tm)), 1.0 / 3.0);
        }
        assert_eq!(s.n_nc, 0.0);
        let s = initial_state(&idx(1), &InitialStateSpec::AllUp, SpinProjection::Zero).unwrap();
        assert_eq!(s.population(h(1), h(1)), 1.0);
        let s = initial_state(&idx(3), &InitialStateSpec::Custom(vec![0.0, 0.0, 0.0, 1.0]), SpinProjection::Zero)
            .unwrap();
        let all_up = initial_state(&idx(3), &InitialStateSpec::AllUp, SpinProjection::Zero).unwrap();
        assert_eq!(s, all_up);
    }

    #[test]
    fn custom_weights_validated() {
        let bad_len = initial_state(&idx(3), &InitialStateSpec::Custom(vec![0.5, 0.5]), SpinProjection::Zero);
        assert!(matches!(bad_len, Err(crate::Error::Validation(_))));
        let bad_sum = initial_state(
            &idx(1),
            &InitialStateSpec::Custom(vec![0.5, 0.6]),
            SpinProjection::Zero,
        );
        assert!(matches!(bad_sum, Err(crate::Error::Validation(_))));
    }

    #[test]
    fn dephasing_outflux_examples() {
        let params = RateParams {
            gamma_d_0: 3.0,
            ..RateParams::radiative_only(1.0)
        };
        let index = idx(4);
        let mut edge = LadderState::empty(&index, SpinProjection::Zero);
        edge.set_population(h(4), h(4), 0.5).unwrap();
        edge.set_population(h(3), h(-3), 0.5).unwrap();
        assert_eq!(dephasing_outflux(&edge, &params), 0.0);

        let index = idx(2);
        let mut s = LadderState::empty(&index, SpinProjection::Zero);
        s.set_population(h(2), h(0), 1.0).unwrap();
        assert_relative_eq!(dephasing_outflux(&s, &params), 2.0 * 3.0);
        assert_eq!(dephasing_outflux(&s, &RateParams::radiative_only(1.0)), 0.0);
    }

    #[test]
    fn isc_out_of_smallest_ladder_goes_dark() {
        let index = idx(1);
        let params = RateParams {
            gamma_isc_0: 0.5,
            ..RateParams::radiative_only(1.0)
        };
        let gen = build_rate_matrix(&index, &params, SpinProjection::Zero).unwrap();
        let a = gen.to_dense();
        let up = index.position(h(1), h(1)).unwrap();
        assert_eq!(a[(gen.slot(Slot::Dark), up)], 0.5);
        assert_eq!(a[(up, up)], -1.5);
    }

    fn arb_params() -> impl Strategy<Value = RateParams> {
        (0.1f64..10.0, 0.0f64..5.0, 0.0f64..5.0, 0.0f64..50.0, 0.0f64..50.0).prop_map(
            |(gamma, i0, i1, d0, d1)| RateParams {
                gamma,
                gamma_isc_0: i0,
                gamma_isc_1: i1,
                gamma_d_0: d0,
                gamma_d_1: d1,
            },
        )
    }

    proptest! {
        #[test]
        fn index_is_a_bijection(n in 1usize..=40) {
            let index = LadderIndex::new(n).unwrap();
            prop_assert_eq!(index.dim(), (n * n + 3 * n) / 2);
            for (pos, j, m) in index.iter() {
                prop_assert_eq!(index.position(j, m), Some(pos));
            }
        }

        #[test]
        fn generator_conserves_probability_and_excitations(
            n in 1usize..=12,
            params in arb_params(),
            pm in any::<bool>(),
        ) {
            let sigma = if pm { SpinProjection::PlusMinusOne } else { SpinProjection::Zero };
            let index = idx(n);
            let gen = build_rate_matrix(&index, &params, sigma).unwrap();
            let a = gen.to_dense();
            let dim = gen.dim();
            let mut prob = vec![0.0; dim];
            let mut exc = vec![0.0; dim];
            for (i, j, m) in index.iter() {
                prob[i] = 1.0;
                exc[i] = excitations(j, m);
            }
            prob[gen.slot(Slot::Dark)] = 1.0;
            for s in [Slot::NonCollective, Slot::Emitted, Slot::IscLoss] {
                exc[gen.slot(s)] = 1.0;
            }
            for col in 0..dim {
                let p: f64 = (0..dim).map(|r| prob[r] * a[(r, col)]).sum();
                let e: f64 = (0..dim).map(|r| exc[r] * a[(r, col)]).sum();
                let scale = a.column(col).amax().max(1.0);
                prop_assert!(p.abs() <= 1e-12 * scale, "probability leak {} in column {}", p, col);
                prop_assert!(e.abs() <= 1e-12 * scale, "excitation leak {} in column {}", e, col);
            }
            for r in 0..dim {
                for c in 0..dim {
                    if r == c {
                        prop_assert!(a[(r, c)] <= 0.0);
                    } else {
                        prop_assert!(a[(r, c)] >= 0.0);
                    }
                }
            }
        }

        #[test]
        fn apply_matches_dense(n in 1usize..=8, params in arb_params()) {
            let index = idx(n);
            let gen = build_rate_matrix(&index, &params, SpinProjection::Zero).unwrap();
            let a = gen.to_dense();
            let x: Vec<f64> = (0..gen.dim()).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
            let mut y = vec![0.0; gen.dim()];
            let mut yt = vec![0.0; gen.dim()];
            gen.apply(&x, &mut y);
            gen.apply_transpose(&x, &mut yt);
            let xv = nalgebra::DVector::from_vec(x);
            let ref_y = &a * &xv;
            let ref_yt = a.transpose() * &xv;
            for i in 0..gen.dim() {
                prop_assert!((y[i] - ref_y[i]).abs() <= 1e-12 * (1.0 + ref_y[i].abs()));
                prop_assert!((yt[i] - ref_yt[i]).abs() <= 1e-12 * (1.0 + ref_yt[i].abs()));
            }
        }
    }
}
