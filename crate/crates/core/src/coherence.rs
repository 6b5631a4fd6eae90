//! Second-order photon coherence.
//!
//! Within the diagonal sector a photon detection maps `P(J, M+1)` to
//! `w₁(J, M+1) P(J, M+1)` at `(J, M)`. The delayed correlation follows the
//! conditioned vector under the same generator; the time-integrated form is
//! read off the emitted-photon accumulator, so no quadrature is involved.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{projection_initial_state, DomainEnsemble, GaussianDomainSpec};
use crate::error::{domain, Result};
use crate::ladder::{
    build_rate_matrix, emission_weight, Generator, HalfInt, InitialStateSpec, LadderIndex, LadderState, RateParams,
    Slot, SpinProjection,
};
use crate::propagator::{observe, propagate_adjoint, Propagation, TimeGrid};

/// Default half-width of the correlation window: half of a 20 MHz pulse period.
pub const DEFAULT_WINDOW: f64 = 25e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G2Kind {
    ZeroDelay,
    Delayed,
    TimeIntegrated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2Curve {
    pub delays: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: G2Kind,
}

/// `g²(0) = 2 − 2/N` for a fully excited domain.
pub fn g2_zero_allup(n: usize) -> Result<f64> {
    if n == 0 {
        return domain("g2 needs at least one spin");
    }
    Ok(2.0 - 2.0 / n as f64)
}

/// `g²(0) = 6(N−1)(N+3) / (5N(N+2))` for the uniformly mixed top ladder.
pub fn g2_zero_mixed(n: usize) -> Result<f64> {
    if n == 0 {
        return domain("g2 needs at least one spin");
    }
    let n = n as f64;
    Ok(6.0 * (n - 1.0) * (n + 3.0) / (5.0 * n * (n + 2.0)))
}

/// `Σ p(σ, N) g²_mixed(N)` over the ensemble.
pub fn g2_zero_ensemble(ensemble: &DomainEnsemble) -> f64 {
    ensemble
        .weights()
        .iter()
        .map(|(&(_, n), &w)| w * g2_zero_mixed(n).expect("ensemble sizes are positive"))
        .sum()
}

/// Ensemble `g²(0)` for Gaussian domain sizes with mean `mean` and variance
/// `mean / 2`, truncated at `N ≥ 1`.
pub fn g2_zero_gaussian(mean: f64) -> Result<f64> {
    let variance = 0.5 * mean;
    let spec = GaussianDomainSpec {
        mean,
        variance,
        max_size: (mean + 8.0 * variance.sqrt()).ceil().max(1.0) as usize,
    };
    Ok(spec
        .weights()?
        .iter()
        .map(|&(n, w)| w * g2_zero_mixed(n).expect("sizes are positive"))
        .sum())
}

/// `w₂(J, M) = w₁(J, M) · w₁(J, M−1)`.
fn pair_weight(j: HalfInt, m: HalfInt) -> f64 {
    if m.twice() == -j.twice() {
        return 0.0;
    }
    emission_weight(j, m) * emission_weight(j, HalfInt::from_twice(m.twice() - 2))
}

/// `Σ P w₂ / (Σ P w₁)²` over every ladder of the state.
pub fn g2_zero_from_state(state: &LadderState) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, j, m) in state.index().iter() {
        let p = state.populations[i];
        num += p * pair_weight(j, m);
        den += p * emission_weight(j, m);
    }
    if den <= 0.0 {
        return domain("state carries no collective excitation");
    }
    Ok(num / (den * den))
}

/// Extended vector after one collective photon: `(J, M) ← w₁(J, M+1) P(J, M+1)`.
pub fn photon_jump(gen: &Generator, v: &[f64]) -> Vec<f64> {
    let index = gen.index();
    let mut out = vec![0.0; gen.dim()];
    for (i, j, m) in index.iter() {
        if let Some(src) = index.position(j, HalfInt::from_twice(m.twice() + 2)) {
            out[i] = emission_weight(j, HalfInt::from_twice(m.twice() + 2)) * v[src];
        }
    }
    out
}

fn check_start(state: &LadderState) -> Result<f64> {
    if state.n_nc != 0.0 {
        return domain("correlations start from a state without non-collective excitations");
    }
    let n0: f64 = state
        .index()
        .iter()
        .map(|(i, j, m)| emission_weight(j, m) * state.populations[i])
        .sum();
    if n0 <= 0.0 {
        return domain("state carries no collective excitation");
    }
    Ok(n0)
}

/// Delayed coherence after a photon at `t = 0`:
/// `g²(t) = ⟨S⁺S⁻⟩_{jumped}(t) / (⟨S⁺S⁻⟩(0) ⟨S⁺S⁻⟩(t))`.
///
/// Both factors describe the same excitation pulse, so the curve is only
/// meaningful on the burst time scale.
pub fn g2_delayed(state0: &LadderState, params: &RateParams, delays: &TimeGrid) -> Result<G2Curve> {
    delays.validate()?;
    let n0 = check_start(state0)?;
    let gen = build_rate_matrix(state0.index(), params, state0.sigma)?;
    let x = state0.to_vector();
    let jx = photon_jump(&gen, &x);
    let times = delays.points();
    let c = gen.fluorescence_functional();
    let num = observe(&gen, &jx, &times, std::slice::from_ref(&c), Propagation::Auto)?.remove(0);
    let den = observe(&gen, &x, &times, std::slice::from_ref(&c), Propagation::Auto)?.remove(0);
    let gamma = params.gamma;
    let values = num
        .iter()
        .zip(&den)
        .map(|(a, b)| {
            let d = n0 * b / gamma;
            if d > 0.0 {
                (a / gamma / d).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(G2Curve {
        delays: times,
        values,
        kind: G2Kind::Delayed,
    })
}

fn check_taus(taus: &[f64], window: f64) -> Result<()> {
    for &tau in taus {
        if !(tau > 0.0) || tau > window {
            return domain(format!("integration half-width {tau:e} s outside (0, {window:e}]"));
        }
    }
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return domain("integration half-widths must be sorted");
    }
    Ok(())
}

fn emitted_functional(gen: &Generator) -> Vec<f64> {
    let mut e = vec![0.0; gen.dim()];
    e[gen.slot(Slot::Emitted)] = 1.0;
    e
}

/// Time-integrated coherence: correlated over uncorrelated photon pairs whose
/// second photon falls within `τ` of the first, for each `τ` in `taus`.
pub fn g2_time_integrated(state0: &LadderState, params: &RateParams, taus: &[f64], window: f64) -> Result<G2Curve> {
    check_taus(taus, window)?;
    let n0 = check_start(state0)?;
    let gen = build_rate_matrix(state0.index(), params, state0.sigma)?;
    let x = state0.to_vector();
    let jx = photon_jump(&gen, &x);
    let e = emitted_functional(&gen);
    let num = observe(&gen, &jx, taus, std::slice::from_ref(&e), Propagation::Auto)?.remove(0);
    let den = observe(&gen, &x, taus, std::slice::from_ref(&e), Propagation::Auto)?.remove(0);
    let values = num.iter().zip(&den).map(|(a, b)| (a / (n0 * b)).max(0.0)).collect();
    Ok(G2Curve {
        delays: taus.to_vec(),
        values,
        kind: G2Kind::TimeIntegrated,
    })
}

/// `Σ p(σ, N) g̅²_N(τ)` with each domain started in `spec`.
///
/// One backward pass per projection gives the emitted-photon functional for
/// every domain size at once.
pub fn g2_time_integrated_ensemble(
    ensemble: &DomainEnsemble,
    params: &RateParams,
    spec: &InitialStateSpec,
    taus: &[f64],
    window: f64,
) -> Result<G2Curve> {
    check_taus(taus, window)?;
    params.validate()?;
    let mut values = vec![0.0; taus.len()];
    for sigma in SpinProjection::ALL {
        let comps = ensemble.components(sigma);
        let Some(max_n) = comps.iter().map(|c| c.0).max() else {
            continue;
        };
        let index = Arc::new(LadderIndex::new(max_n)?);
        let gen = build_rate_matrix(&index, params, sigma)?;
        let adj = propagate_adjoint(&gen, &emitted_functional(&gen), taus)?;
        for &(n, w) in &comps {
            let state = projection_initial_state(&index, &[(n, 1.0)], spec, sigma)?;
            let n0 = check_start(&state)?;
            let x = state.to_vector();
            let jx = photon_jump(&gen, &x);
            for (val, u) in values.iter_mut().zip(&adj) {
                let num: f64 = u.iter().zip(&jx).map(|(a, b)| a * b).sum();
                let den: f64 = u.iter().zip(&x).map(|(a, b)| a * b).sum();
                *val += w * (num / (n0 * den)).max(0.0);
            }
        }
    }
    Ok(G2Curve {
        delays: taus.to_vec(),
        values,
        kind: G2Kind::TimeIntegrated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{ensemble_from_gaussian, DomainEnsemble};
    use crate::ladder::initial_state;
    use crate::units::{mhz_to_rate, ns};
    use approx::assert_relative_eq;

    fn h(t: i32) -> HalfInt {
        HalfInt::from_twice(t)
    }

    fn state(n: usize, spec: InitialStateSpec, sigma: SpinProjection) -> LadderState {
        let index = Arc::new(LadderIndex::new(n).unwrap());
        initial_state(&index, &spec, sigma).unwrap()
    }

    #[test]
    fn closed_forms() {
        assert_eq!(g2_zero_allup(1).unwrap(), 0.0);
        assert_eq!(g2_zero_allup(2).unwrap(), 1.0);
        assert!((g2_zero_allup(1_000_000).unwrap() - 2.0).abs() < 1e-5);
        assert_eq!(g2_zero_mixed(1).unwrap(), 0.0);
        assert_relative_eq!(g2_zero_mixed(2).unwrap(), 0.75);
        assert!((g2_zero_mixed(1_000_000).unwrap() - 1.2).abs() < 1e-5);
        assert!(g2_zero_allup(0).is_err());
        assert!(g2_zero_mixed(0).is_err());
    }

    #[test]
    fn state_sums_match_closed_forms() {
        for n in 1..=60 {
            let up = g2_zero_from_state(&state(n, InitialStateSpec::AllUp, SpinProjection::Zero)).unwrap();
            assert!((up - g2_zero_allup(n).unwrap()).abs() < 1e-12, "N={n}");
            let mixed =
                g2_zero_from_state(&state(n, InitialStateSpec::MaximallyMixedTopLadder, SpinProjection::Zero)).unwrap();
            assert!((mixed - g2_zero_mixed(n).unwrap()).abs() < 1e-12, "N={n}");
        }
        let index = Arc::new(LadderIndex::new(1).unwrap());
        let mut s = LadderState::empty(&index, SpinProjection::Zero);
        s.set_population(h(1), h(1), 1.0).unwrap();
        assert_eq!(g2_zero_from_state(&s).unwrap(), 0.0);
        let ground = LadderState::empty(&index, SpinProjection::Zero);
        assert!(g2_zero_from_state(&ground).is_err());
    }

    #[test]
    fn ensemble_sums() {
        let single = DomainEnsemble::single(SpinProjection::Zero, 1).unwrap();
        assert_eq!(g2_zero_ensemble(&single), 0.0);
        let mix = DomainEnsemble::from_weights([
            ((SpinProjection::Zero, 1), 0.9),
            ((SpinProjection::PlusMinusOne, 10), 0.1),
        ])
        .unwrap();
        assert_relative_eq!(g2_zero_ensemble(&mix), 0.1 * g2_zero_mixed(10).unwrap(), max_relative = 1e-12);
        let g = g2_zero_gaussian(50.0).unwrap();
        assert!((1.1..=1.2).contains(&g), "{g}");
    }

    #[test]
    fn gaussian_curve_monotone_and_bounded() {
        let mut last = -1.0;
        for mean in 1..=200 {
            let g = g2_zero_gaussian(mean as f64).unwrap();
            assert!(g > last && g < 1.2, "mean {mean}: {g}");
            last = g;
        }
    }

    #[test]
    fn delayed_starts_at_zero_delay_value() {
        let params = RateParams::with_bulk_isc(mhz_to_rate(7.9), mhz_to_rate(20.0), mhz_to_rate(450.0));
        let s = state(50, InitialStateSpec::MaximallyMixedTopLadder, SpinProjection::Zero);
        let grid = TimeGrid::linear(0.0, ns(2.0), 11).unwrap();
        let curve = g2_delayed(&s, &params, &grid).unwrap();
        assert!((curve.values[0] - g2_zero_from_state(&s).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn single_emitter_is_antibunched() {
        let params = RateParams::with_bulk_isc(mhz_to_rate(12.0), 0.0, 0.0);
        let s = state(1, InitialStateSpec::AllUp, SpinProjection::Zero);
        let grid = TimeGrid::linear(0.0, ns(50.0), 6).unwrap();
        let curve = g2_delayed(&s, &params, &grid).unwrap();
        assert!(curve.values.iter().all(|&v| v == 0.0));
        let ti = g2_time_integrated(&s, &params, &[ns(0.5), ns(5.0)], DEFAULT_WINDOW).unwrap();
        assert!(ti.values.iter().all(|&v| v < 1.0));
    }

    #[test]
    fn integrated_tends_to_zero_delay_value() {
        let params = RateParams::with_bulk_isc(mhz_to_rate(5.0), mhz_to_rate(30.0), mhz_to_rate(300.0));
        let s = state(7, InitialStateSpec::MaximallyMixedTopLadder, SpinProjection::Zero);
        let ti = g2_time_integrated(&s, &params, &[1e-15], DEFAULT_WINDOW).unwrap();
        assert_relative_eq!(ti.values[0], g2_zero_from_state(&s).unwrap(), max_relative = 1e-5);
        assert!(g2_time_integrated(&s, &params, &[0.0], DEFAULT_WINDOW).is_err());
        assert!(g2_time_integrated(&s, &params, &[ns(30.0)], DEFAULT_WINDOW).is_err());
    }

    #[test]
    fn ensemble_route_matches_per_domain() {
        let params = RateParams::with_bulk_isc(mhz_to_rate(7.9), mhz_to_rate(20.0), mhz_to_rate(450.0));
        let g = GaussianDomainSpec::centred(6, 0.5, 30);
        let e = ensemble_from_gaussian(&g, &g, 0.5).unwrap();
        let taus = [ns(0.2), ns(1.0), ns(5.0)];
        let spec = InitialStateSpec::MaximallyMixedTopLadder;
        let fast = g2_time_integrated_ensemble(&e, &params, &spec, &taus, DEFAULT_WINDOW).unwrap();
        let mut slow = [0.0; 3];
        for (&(sigma, n), &w) in e.weights() {
            let s = state(n, spec.clone(), sigma);
            let c = g2_time_integrated(&s, &params, &taus, DEFAULT_WINDOW).unwrap();
            for k in 0..3 {
                slow[k] += w * c.values[k];
            }
        }
        for k in 0..3 {
            assert_relative_eq!(fast.values[k], slow[k], max_relative = 1e-9);
        }
    }
}
