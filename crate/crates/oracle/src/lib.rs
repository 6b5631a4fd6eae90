//! Brute-force reference engine for small domains.
//!
//! Every spin is kept explicitly: two levels (ground, excited) or three when
//! intersystem crossing is on (ground, excited, shelved). The density matrix
//! evolves under a Lindblad master equation with a collective lowering jump
//! `√γ S⁻`, local dephasing jumps `√(γ_d/2) σᶻ_j` and local shelving jumps
//! `√γ_isc |s⟩⟨e|_j`. The superoperator is dense and exponentiated exactly,
//! so this only scales to a handful of spins.
//!
//! Nothing here reuses the rate-equation machinery of `nvsr-core`; only its
//! parameter and coordinate types are shared, so the two engines can be
//! compared.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use nvsr_core::error::{Error, Result};
use nvsr_core::ladder::{HalfInt, InitialStateSpec, LadderIndex, RateParams, SpinProjection};
use nvsr_core::propagator::TimeGrid;

/// Largest domain the exact engine accepts.
pub const MAX_EXACT_SPINS: usize = 4;
/// Largest domain when the shelved level is needed (3^N states per spin
/// configuration).
pub const MAX_EXACT_SPINS_WITH_ISC: usize = 3;

const GROUND: usize = 0;
const EXCITED: usize = 1;
const SHELVED: usize = 2;

fn capability<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Capability(msg.into()))
}

fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

/// Normalization of the symmetric Dicke state `|J = N/2, M⟩` written as an
/// equal superposition of product states, `√((J+M)!(J−M)!/(2J)!)`.
pub fn dicke_state_coefficients(n: usize, m: HalfInt) -> Result<f64> {
    if n == 0 {
        return domain("a Dicke state needs at least one spin");
    }
    let two_j = n as i32;
    let two_m = m.twice();
    if two_m.abs() > two_j || (two_j - two_m) % 2 != 0 {
        return domain(format!("M = {m} is not a projection of J = {}", HalfInt::from_twice(two_j)));
    }
    let up = ((two_j + two_m) / 2) as u32;
    let down = ((two_j - two_m) / 2) as u32;
    let ln_fact = |k: u32| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    Ok((0.5 * (ln_fact(up) + ln_fact(down) - ln_fact(n as u32))).exp())
}

/// Which Hilbert space a [`DickeBasisOperator`] acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DickeSpace {
    /// The `N + 1` states `|N/2, M⟩`, ascending in `M`.
    TopLadder,
    /// Every ladder `J = N/2, (N−1)/2, …, 1/2` in the ordering of
    /// [`LadderIndex`], `(N² + 3N)/2` states.
    AllLadders,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorRole {
    Raising,
    Lowering,
    Sz,
    /// `√γ S⁻`.
    Jump,
    /// Population generator of collective decay: `Ṗ = G P`.
    Generator,
}

/// A collective operator written out in the Dicke basis.
#[derive(Clone, Debug)]
pub struct DickeBasisOperator {
    pub space: DickeSpace,
    pub role: OperatorRole,
    pub matrix: DMatrix<f64>,
}

impl DickeBasisOperator {
    /// `gamma` only enters the jump and generator roles.
    pub fn new(n: usize, space: DickeSpace, role: OperatorRole, gamma: f64) -> Result<Self> {
        let index = LadderIndex::new(n)?;
        let coords: Vec<(HalfInt, HalfInt)> = match space {
            DickeSpace::TopLadder => {
                let j = HalfInt::from_twice(n as i32);
                index.ladder(j).map(|p| index.coords(p)).collect()
            }
            DickeSpace::AllLadders => index.iter().map(|(_, j, m)| (j, m)).collect(),
        };
        let dim = coords.len();
        let pos = |j: HalfInt, m: HalfInt| coords.iter().position(|&c| c == (j, m));
        // ⟨J, M−1| S⁻ |J, M⟩ = √((J+M)(J−M+1))
        let mut lower = DMatrix::zeros(dim, dim);
        for (c, &(j, m)) in coords.iter().enumerate() {
            if let Some(r) = pos(j, HalfInt::from_twice(m.twice() - 2)) {
                let (jv, mv) = (j.value(), m.value());
                lower[(r, c)] = ((jv + mv) * (jv - mv + 1.0)).sqrt();
            }
        }
        let matrix = match role {
            OperatorRole::Lowering => lower,
            OperatorRole::Raising => lower.transpose(),
            OperatorRole::Sz => DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                dim,
                coords.iter().map(|&(_, m)| m.value()),
            )),
            OperatorRole::Jump => lower * gamma.sqrt(),
            OperatorRole::Generator => {
                let mut g = lower.map(|x| gamma * x * x);
                for c in 0..dim {
                    let out: f64 = (0..dim).map(|r| g[(r, c)]).sum();
                    g[(c, c)] -= out;
                }
                g
            }
        };
        Ok(DickeBasisOperator { space, role, matrix })
    }
}

/// Weights on `(J, M)` sectors of the full spin space; degenerate copies of a
/// sector share its weight evenly.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalState {
    pub entries: Vec<(HalfInt, HalfInt, f64)>,
}

impl DiagonalState {
    pub fn top_ladder(n: usize, spec: &InitialStateSpec) -> Result<Self> {
        let w = spec.top_ladder_weights(n)?;
        let two_j = n as i32;
        Ok(DiagonalState {
            entries: w
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(k, &x)| (HalfInt::from_twice(two_j), HalfInt::from_twice(-two_j + 2 * k as i32), x))
                .collect(),
        })
    }
}

/// Dense superoperator engine for one spin projection.
pub struct ExactEngine {
    n: usize,
    levels: usize,
    dim: usize,
    gamma: f64,
    lowering: DMatrix<f64>,
    emission: DMatrix<f64>,
    superop: DMatrix<f64>,
    /// Orthonormal bases of the `(2J, 2M)` sectors of the unshelved subspace.
    sectors: BTreeMap<(i32, i32), DMatrix<f64>>,
    propagators: RefCell<BTreeMap<u64, DMatrix<f64>>>,
}

impl ExactEngine {
    pub fn new(n: usize, params: &RateParams, sigma: SpinProjection) -> Result<Self> {
        params.validate()?;
        if n == 0 {
            return domain("at least one spin is needed");
        }
        if n > MAX_EXACT_SPINS {
            return capability(format!("exact evolution supports at most {MAX_EXACT_SPINS} spins, got {n}"));
        }
        let isc = params.isc(sigma);
        let dephasing = params.dephasing(sigma);
        let levels: usize = if isc > 0.0 { 3 } else { 2 };
        if levels == 3 && n > MAX_EXACT_SPINS_WITH_ISC {
            return capability(format!(
                "exact evolution with intersystem crossing supports at most {MAX_EXACT_SPINS_WITH_ISC} spins, got {n}"
            ));
        }
        let dim = levels.pow(n as u32);
        let digits = |state: usize| -> Vec<usize> { (0..n).map(|j| (state / levels.pow(j as u32)) % levels).collect() };
        let site_op = |site: usize, from: usize, to: usize| {
            let mut op = DMatrix::zeros(dim, dim);
            for s in 0..dim {
                let d = digits(s);
                if d[site] == from {
                    let t = s + to * levels.pow(site as u32) - from * levels.pow(site as u32);
                    op[(t, s)] = 1.0;
                }
            }
            op
        };
        let mut lowering = DMatrix::zeros(dim, dim);
        for j in 0..n {
            lowering += site_op(j, EXCITED, GROUND);
        }
        let emission = lowering.transpose() * &lowering;

        let mut jumps = vec![&lowering * params.gamma.sqrt()];
        if dephasing > 0.0 {
            for j in 0..n {
                let mut z = DMatrix::zeros(dim, dim);
                for s in 0..dim {
                    z[(s, s)] = match digits(s)[j] {
                        EXCITED => 1.0,
                        GROUND => -1.0,
                        _ => 0.0,
                    };
                }
                jumps.push(z * (0.5 * dephasing).sqrt());
            }
        }
        if levels == 3 {
            for j in 0..n {
                jumps.push(site_op(j, EXCITED, SHELVED) * isc.sqrt());
            }
        }
        let superop = lindbladian(&jumps, dim);
        let sectors = sectors(n, dim, &lowering, &digits);
        Ok(ExactEngine {
            n,
            levels,
            dim,
            gamma: params.gamma,
            lowering,
            emission,
            superop,
            sectors,
            propagators: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn spins(&self) -> usize {
        self.n
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels_per_spin(&self) -> usize {
        self.levels
    }

    /// Collective lowering operator `S⁻` on the spin space.
    pub fn lowering(&self) -> &DMatrix<f64> {
        &self.lowering
    }

    /// The Lindblad superoperator acting on column-stacked density matrices.
    pub fn superoperator(&self) -> &DMatrix<f64> {
        &self.superop
    }

    /// Density matrix with the given sector weights.
    pub fn diagonal_state(&self, state: &DiagonalState) -> Result<DMatrix<f64>> {
        let mut rho = DMatrix::zeros(self.dim, self.dim);
        let mut total = 0.0;
        for &(j, m, w) in &state.entries {
            if !(w >= 0.0) || !w.is_finite() {
                return domain("sector weights must be finite and non-negative");
            }
            let Some(basis) = self.sectors.get(&(j.twice(), m.twice())) else {
                return domain(format!("({j}, {m}) is not a sector of {} spins", self.n));
            };
            let copies = basis.ncols() as f64;
            rho += basis * basis.transpose() * (w / copies);
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("sector weights sum to {total}, expected 1"));
        }
        Ok(rho)
    }

    fn propagator(&self, dt: f64) -> DMatrix<f64> {
        let mut cache = self.propagators.borrow_mut();
        cache.entry(dt.to_bits()).or_insert_with(|| (&self.superop * dt).exp()).clone()
    }

    /// `ρ(t)` at each time of `times` (non-decreasing, starting at or after 0).
    pub fn evolve(&self, rho0: &DMatrix<f64>, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        if rho0.nrows() != self.dim || rho0.ncols() != self.dim {
            return domain("density matrix has the wrong shape");
        }
        let mut out = Vec::with_capacity(times.len());
        let mut v = nalgebra::DVector::from_column_slice(rho0.as_slice());
        let mut t_prev = 0.0;
        for &t in times {
            if !(t >= t_prev) || !t.is_finite() {
                return domain("times must be finite, non-negative and non-decreasing");
            }
            if t > t_prev {
                v = self.propagator(t - t_prev) * v;
            }
            t_prev = t;
            out.push(DMatrix::from_column_slice(self.dim, self.dim, v.as_slice()));
        }
        Ok(out)
    }

    /// Weight of the `(J, M)` sector.
    pub fn population(&self, rho: &DMatrix<f64>, j: HalfInt, m: HalfInt) -> f64 {
        match self.sectors.get(&(j.twice(), m.twice())) {
            Some(b) => (b.transpose() * rho * b).trace(),
            None => 0.0,
        }
    }

    /// `⟨S⁺S⁻⟩`.
    pub fn emission(&self, rho: &DMatrix<f64>) -> f64 {
        (&self.emission * rho).trace()
    }

    /// Photon rate `γ ⟨S⁺S⁻⟩`.
    pub fn fluorescence(&self, rho: &DMatrix<f64>) -> f64 {
        self.gamma * self.emission(rho)
    }

    /// Weight left in the shelved level summed over spins.
    pub fn shelved(&self, rho: &DMatrix<f64>) -> f64 {
        if self.levels < 3 {
            return 0.0;
        }
        (0..self.dim)
            .map(|s| {
                let k = (0..self.n).filter(|&j| (s / 3usize.pow(j as u32)) % 3 == SHELVED).count();
                k as f64 * rho[(s, s)]
            })
            .sum()
    }

    /// `Tr[S⁺S⁺S⁻S⁻ ρ] / ⟨S⁺S⁻⟩²`.
    pub fn g2_zero(&self, rho: &DMatrix<f64>) -> Result<f64> {
        let den = self.emission(rho);
        if !(den > 0.0) {
            return domain("state carries no collective excitation");
        }
        let l2 = &self.lowering * &self.lowering;
        Ok((l2.transpose() * &l2 * rho).trace() / (den * den))
    }

    /// Two-time coherence after a photon at `t = 0` by quantum regression:
    /// `Tr[S⁺S⁻ e^{𝓛t}(S⁻ρS⁺)] / (⟨S⁺S⁻⟩(0) ⟨S⁺S⁻⟩(t))`.
    pub fn g2_delayed(&self, rho0: &DMatrix<f64>, times: &[f64]) -> Result<Vec<f64>> {
        let n0 = self.emission(rho0);
        if !(n0 > 0.0) {
            return domain("state carries no collective excitation");
        }
        let jumped = &self.lowering * rho0 * self.lowering.transpose();
        let plain = self.evolve(rho0, times)?;
        let after = self.evolve(&jumped, times)?;
        Ok(plain
            .iter()
            .zip(&after)
            .map(|(p, a)| {
                let nt = self.emission(p);
                if nt > 0.0 {
                    self.emission(a) / (n0 * nt)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// `Σ_k L_k ⊗ L_k − ½ (I ⊗ K + K ⊗ I)`, `K = Σ_k L_kᵀ L_k`, for real jumps
/// and column-stacked `ρ`.
fn lindbladian(jumps: &[DMatrix<f64>], dim: usize) -> DMatrix<f64> {
    let eye = DMatrix::<f64>::identity(dim, dim);
    let mut k = DMatrix::zeros(dim, dim);
    let mut out = DMatrix::zeros(dim * dim, dim * dim);
    for l in jumps {
        out += l.kronecker(l);
        k += l.transpose() * l;
    }
    out -= (eye.kronecker(&k) + k.kronecker(&eye)) * 0.5;
    out
}

/// Sector bases from `S² = S⁺S⁻ + S_z² − S_z` restricted to configurations
/// without shelved spins, one block per excitation number.
fn sectors(
    n: usize,
    dim: usize,
    lowering: &DMatrix<f64>,
    digits: &dyn Fn(usize) -> Vec<usize>,
) -> BTreeMap<(i32, i32), DMatrix<f64>> {
    let mut out: BTreeMap<(i32, i32), Vec<nalgebra::DVector<f64>>> = BTreeMap::new();
    let emission = lowering.transpose() * lowering;
    for k in 0..=n {
        let block: Vec<usize> = (0..dim)
            .filter(|&s| {
                let d = digits(s);
                d.iter().all(|&x| x != SHELVED) && d.iter().filter(|&&x| x == EXCITED).count() == k
            })
            .collect();
        let mz = k as f64 - 0.5 * n as f64;
        let b = block.len();
        let mut s2 = DMatrix::zeros(b, b);
        for (r, &p) in block.iter().enumerate() {
            for (c, &q) in block.iter().enumerate() {
                s2[(r, c)] = emission[(p, q)];
            }
            s2[(r, r)] += mz * mz - mz;
        }
        let eig = SymmetricEigen::new(s2);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            let j = 0.5 * (-1.0 + (1.0 + 4.0 * lambda.max(0.0)).sqrt());
            let two_j = (2.0 * j).round() as i32;
            let mut v = nalgebra::DVector::zeros(dim);
            for (r, &p) in block.iter().enumerate() {
                v[p] = eig.eigenvectors[(r, i)];
            }
            out.entry((two_j, (2.0 * mz).round() as i32)).or_default().push(v);
        }
    }
    out.into_iter().map(|(key, vs)| (key, DMatrix::from_columns(&vs))).collect()
}

/// Sampled exact evolution.
#[derive(Clone, Debug)]
pub struct ExactTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<f64>>,
    /// `γ⟨S⁺S⁻⟩` at each time.
    pub fluorescence: Vec<f64>,
}

/// Exact density-matrix evolution of `n ≤ 4` spins from a sector-diagonal
/// state.
pub fn lindblad_evolve_exact(
    n: usize,
    params: &RateParams,
    sigma: SpinProjection,
    rho0: &DiagonalState,
    grid: &TimeGrid,
) -> Result<ExactTrajectory> {
    grid.validate()?;
    let engine = ExactEngine::new(n, params, sigma)?;
    let rho = engine.diagonal_state(rho0)?;
    let times = grid.points();
    let states = engine.evolve(&rho, &times)?;
    let fluorescence = states.iter().map(|r| engine.fluorescence(r)).collect();
    Ok(ExactTrajectory { times, states, fluorescence })
}

/// `g²(0)` by direct operator traces on the spin space.
pub fn brute_force_g2(n: usize, rho0: &DiagonalState) -> Result<f64> {
    let engine = ExactEngine::new(n, &RateParams::radiative_only(1.0), SpinProjection::Zero)?;
    let rho = engine.diagonal_state(rho0)?;
    engine.g2_zero(&rho)
}
