use super::loss::solve_amplitudes;
use super::{DecayTrace, FitLoss};
use crate::error::{invalid, Error, Result};
use crate::optimize::brent;
use crate::units::ns;

pub(crate) fn fit_error<T>(message: impl Into<String>) -> Result<T> {
    Err(Error::Fit {
        message: message.into(),
        best: None,
    })
}

/// Rate range searched by the exponential fits, rad/s or 1/s.
const RATE_LO: f64 = 1e4;
const RATE_HI: f64 = 1e12;

/// Best common rate `Γ` for the basis `exp(−(Γ + offset_k) t)` with free
/// non-negative amplitudes, by a log grid scan followed by Brent refinement.
fn profile_rate(t: &[f64], y: &[f64], bg: f64, offsets: &[f64], loss: FitLoss) -> Result<(f64, f64)> {
    let eval = |lr: f64| -> f64 {
        let rate = lr.exp();
        let basis: Vec<Vec<f64>> = offsets.iter().map(|o| t.iter().map(|&t| (-(rate + o) * t).exp()).collect()).collect();
        let refs: Vec<&[f64]> = basis.iter().map(|b| b.as_slice()).collect();
        solve_amplitudes(&refs, y, bg, loss).1
    };
    let (llo, lhi) = (RATE_LO.ln(), RATE_HI.ln());
    let steps = 48;
    let grid: Vec<f64> = (0..=steps).map(|i| llo + (lhi - llo) * i as f64 / steps as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| eval(g)).collect();
    let best = (0..vals.len()).fold(0, |b, i| if vals[i] < vals[b] { i } else { b });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(steps)];
    let m = brent(eval, lo, hi, 1e-10, 200)?;
    let (x, v) = if m.value <= vals[best] { (m.x[0], m.value) } else { (grid[best], vals[best]) };
    if x <= llo + 1e-6 || x >= lhi - 1e-6 {
        return fit_error(format!("exponential rate ran to the search bound ({:.3e} /s)", x.exp()));
    }
    Ok((x.exp(), v))
}

/// Bins whose centres lie in `window`, as (time since window start, counts).
fn window_bins(trace: &DecayTrace, window: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    trace
        .centers()
        .into_iter()
        .zip(&trace.counts)
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .map(|(t, c)| (t - window.0, *c))
        .unzip()
}

fn significant_bins(y: &[f64], bg: f64) -> usize {
    let noise = 3.0 * bg.max(1.0).sqrt();
    y.iter().filter(|&&c| c - bg > noise).count()
}

/// Single-exponential decay rate of the late tail.
pub fn tail_rate(trace: &DecayTrace, window: (f64, f64)) -> Result<f64> {
    tail_fit_gamma(trace, window, (0.0, 0.0))
}

/// Radiative rate from the late tail, modelled as non-collective emission
/// from both spin projections: `a₀ e^{−(γ+isc₀)t} + a₁ e^{−(γ+isc₁)t}`.
pub fn tail_fit_gamma(trace: &DecayTrace, window: (f64, f64), isc: (f64, f64)) -> Result<f64> {
    trace.validate()?;
    if !(window.0 < window.1) {
        return invalid(format!("tail window ({}, {}) is empty", window.0, window.1));
    }
    let bg = trace.background_level();
    let (t, y) = window_bins(trace, window);
    let n = significant_bins(&y, bg);
    if n < 10 {
        return fit_error(format!("tail window holds {n} bins above background, need at least 10"));
    }
    let offsets: Vec<f64> = if (isc.0 - isc.1).abs() <= 1e-12 * isc.0.abs().max(1.0) {
        vec![isc.0]
    } else {
        vec![isc.0, isc.1]
    };
    let (gamma, _) = profile_rate(&t, &y, bg, &offsets, FitLoss::PoissonNll)
        .map_err(|e| e.context("tail fit"))?;
    Ok(gamma)
}

/// 1/e time of a single exponential fitted over the first `width` after the
/// peak.
pub fn lifetime_window(trace: &DecayTrace, width: f64) -> Result<f64> {
    trace.validate()?;
    if !(width > 0.0) {
        return invalid("lifetime window must be positive");
    }
    let bg = trace.background_level();
    let peak = trace.peak_index();
    if !(trace.counts[peak] - bg > 0.0) {
        return fit_error("no peak above background");
    }
    let start = trace.centers()[peak];
    let (t, y) = window_bins(trace, (start, start + width));
    if t.len() < 5 {
        return fit_error(format!("only {} bins in the lifetime window, need 5", t.len()));
    }
    let (rate, _) = profile_rate(&t, &y, bg, &[0.0], FitLoss::PoissonNll).map_err(|e| e.context("lifetime fit"))?;
    Ok(1.0 / rate)
}

/// [`lifetime_window`] over the first nanosecond.
pub fn lifetime_1e(trace: &DecayTrace) -> Result<f64> {
    lifetime_window(trace, ns(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{synthesize_trace, BinLayout};
    use crate::propagator::IrfSpec;
    use crate::units::{mhz_to_rate, ps};

    fn exp_trace(tau: f64, irf_fwhm: f64, seed: Option<u64>) -> DecayTrace {
        let layout = BinLayout { t_start: ns(-5.0), bin_width: ps(16.0), n_bins: 20_000 };
        let raw: Vec<f64> = layout.centers().iter().filter(|t| **t >= 0.0).map(|&t| (-t / tau).exp()).collect();
        let irf = IrfSpec::gaussian(irf_fwhm);
        let shape = super::super::trace::convolved_on_bins(&layout.centers(), ps(16.0), &irf, &raw).unwrap();
        synthesize_trace(&shape, &layout.edges(), &irf, 1e5, 0.0, seed, "exp").unwrap()
    }

    #[test]
    fn lifetime_of_pure_exponentials() {
        for tau_ns in [0.5, 1.0, 3.6, 10.0, 25.0, 50.0] {
            let tau = ns(tau_ns);
            let l = lifetime_1e(&exp_trace(tau, 0.0, None)).unwrap();
            assert!((l / tau - 1.0).abs() < 0.02, "tau {tau_ns}: {l}");
        }
        let l = lifetime_1e(&exp_trace(ns(25.0), ps(110.0), None)).unwrap();
        assert!((l / ns(25.0) - 1.0).abs() < 0.02, "{l}");
        let three = lifetime_window(&exp_trace(ns(5.0), ps(110.0), None), ns(3.0)).unwrap();
        assert!((three / ns(5.0) - 1.0).abs() < 0.02, "{three}");
    }

    #[test]
    fn tail_rate_recovers_exponential() {
        let tr = exp_trace(ns(12.0), ps(110.0), Some(5));
        let r = tail_rate(&tr, (ns(10.0), ns(300.0))).unwrap();
        assert!((r * ns(12.0) - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn tail_subtracts_isc() {
        let gamma = mhz_to_rate(4.8);
        let isc = (mhz_to_rate(1.8), mhz_to_rate(9.4));
        let layout = BinLayout { t_start: ns(-5.0), bin_width: ps(16.0), n_bins: 20_000 };
        let raw: Vec<f64> = layout
            .centers()
            .iter()
            .filter(|t| **t >= 0.0)
            .map(|&t| 0.5 * (-(gamma + isc.0) * t).exp() + 0.5 * (-(gamma + isc.1) * t).exp())
            .collect();
        let irf = IrfSpec::gaussian(ps(110.0));
        let shape = super::super::trace::convolved_on_bins(&layout.centers(), ps(16.0), &irf, &raw).unwrap();
        let tr = synthesize_trace(&shape, &layout.edges(), &irf, 1e5, 2.0, Some(1), "t").unwrap();
        let g = tail_fit_gamma(&tr, (ns(10.0), ns(300.0)), isc).unwrap();
        assert!((g / gamma - 1.0).abs() < 0.05, "{}", crate::units::rate_to_mhz(g));
    }

    #[test]
    fn flat_background_fails() {
        let layout = BinLayout { t_start: 0.0, bin_width: ps(16.0), n_bins: 5000 };
        let tr = synthesize_trace(&vec![1.0; 5000], &layout.edges(), &IrfSpec::gaussian(0.0), 100.0, 0.0, Some(2), "flat").unwrap();
        assert!(matches!(tail_rate(&tr, (ns(10.0), ns(80.0))), Err(Error::Context { .. }) | Err(Error::Fit { .. })));
        let empty = DecayTrace { background: Some(100.0), ..tr };
        assert!(matches!(tail_rate(&empty, (ns(10.0), ns(80.0))).unwrap_err().root(), Error::Fit { .. }));
    }
}
