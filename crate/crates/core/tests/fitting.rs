use nvsr_core::error::Error;
use nvsr_core::fitting::*;
use nvsr_core::propagator::IrfSpec;
use nvsr_core::units::{mhz_to_rate, ns, ps, rate_to_mhz};

fn layout(span_ns: f64, bin_ps: f64) -> BinLayout {
    let n_bins = ((span_ns + 5.0) * 1000.0 / bin_ps).round() as usize;
    BinLayout { t_start: ns(-5.0), bin_width: ps(bin_ps), n_bins }
}

fn synthetic(p: &SuperradiantParams, span_ns: f64, seed: Option<u64>, background: f64) -> DecayTrace {
    let l = layout(span_ns, 16.0);
    let irf = IrfSpec::gaussian(ps(110.0));
    let model = ForwardModel::new(&l.edges(), &irf, Default::default()).unwrap();
    let expected = model.expected(p).unwrap();
    synthesize_trace(&expected, &l.edges(), &irf, 1e5, background, seed, "synthetic").unwrap()
}

fn exponential(tau_ns: f64, seed: Option<u64>) -> DecayTrace {
    let l = layout(8.0 * tau_ns, 16.0);
    let expected: Vec<f64> = l
        .centers()
        .iter()
        .map(|&t| if t < 0.0 { 0.0 } else { (-t / ns(tau_ns)).exp() })
        .collect();
    synthesize_trace(&expected, &l.edges(), &IrfSpec::gaussian(0.0), 1e5, 2.0, seed, "exp").unwrap()
}

#[test]
fn nd3_round_trip_with_noise() {
    let truth = SuperradiantParams::from_mhz(10, 3.3, 39.0, 420.0, 0.50);
    let trace = synthetic(&truth, 160.0, Some(7), 2.0);
    let config = FitConfig { n_range: (6, 14), ..Default::default() };
    let r = fit_superradiant(&trace, &config).unwrap();
    assert!(r.n_max.abs_diff(10) <= 2, "n_max {}", r.n_max);
    assert!((rate_to_mhz(r.gamma) / 3.3 - 1.0).abs() < 0.1, "gamma {}", rate_to_mhz(r.gamma));
    assert!((rate_to_mhz(r.gamma_d_0) / 39.0 - 1.0).abs() < 0.3, "d0 {}", rate_to_mhz(r.gamma_d_0));
    assert!((rate_to_mhz(r.gamma_d_1) / 420.0 - 1.0).abs() < 0.3, "d1 {}", rate_to_mhz(r.gamma_d_1));
    assert!((r.p0 - 0.5).abs() < 0.1, "p0 {}", r.p0);
    assert!(r.residual <= r.initial_residual);
    assert!(r.residual >= 0.0);
    assert_eq!(r.curve.len(), trace.n_bins());
    assert!(r.covariance_estimate.is_some());
}

#[test]
fn fit_is_deterministic() {
    let truth = SuperradiantParams::from_mhz(7, 4.8, 20.0, 260.0, 0.51);
    let trace = synthetic(&truth, 120.0, Some(11), 2.0);
    let config = FitConfig { n_range: (6, 8), ..Default::default() };
    let a = fit_superradiant(&trace, &config).unwrap();
    let b = fit_superradiant(&trace, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_spin_is_flagged_unidentifiable() {
    let truth = SuperradiantParams::from_mhz(1, 4.0, 30.0, 300.0, 0.5);
    let trace = synthetic(&truth, 200.0, Some(3), 2.0);
    let config = FitConfig { n_range: (1, 4), ..Default::default() };
    let r = fit_superradiant(&trace, &config).unwrap();
    assert_eq!(r.n_max, 1);
    assert!(r.warnings.iter().any(|w| w.contains("not identifiable")), "{:?}", r.warnings);
}

#[test]
fn nd1_polarization_recovered() {
    let truth = SuperradiantParams::from_mhz(2, 2.5, 27.0, 270.0, 0.56);
    let trace = synthetic(&truth, 250.0, Some(5), 2.0);
    let config = FitConfig { n_range: (1, 6), ..Default::default() };
    let r = fit_superradiant(&trace, &config).unwrap();
    assert!((0.46..=0.66).contains(&r.p0), "p0 {}", r.p0);
}

#[test]
fn noiseless_trace_is_identified_exactly() {
    let truth = SuperradiantParams::from_mhz(5, 4.0, 30.0, 300.0, 0.5);
    let trace = synthetic(&truth, 120.0, None, 0.0);
    let config = FitConfig {
        n_range: (2, 9),
        loss: FitLoss::LeastSquares,
        fixed: FixedParams { gamma: Some(truth.gamma), ..Default::default() },
        ..Default::default()
    };
    let r = fit_superradiant(&trace, &config).unwrap();
    assert_eq!(r.n_max, 5);
    let peak = trace.counts.iter().cloned().fold(0.0, f64::max);
    assert!(r.residual < 1e-8 * peak * peak, "residual {} vs peak {}", r.residual, peak);
    assert!(r.residual <= r.initial_residual);
}

#[test]
fn pinned_parameters_stay_pinned() {
    let truth = SuperradiantParams::from_mhz(4, 4.0, 30.0, 300.0, 0.5);
    let trace = synthetic(&truth, 120.0, Some(2), 2.0);
    let fixed = FixedParams {
        n_max: Some(4),
        gamma: Some(mhz_to_rate(4.0)),
        gamma_d_0: Some(mhz_to_rate(30.0)),
        gamma_d_1: None,
        p0: Some(0.5),
    };
    let config = FitConfig { n_range: (1, 8), fixed, ..Default::default() };
    let r = fit_superradiant(&trace, &config).unwrap();
    assert_eq!(r.n_max, 4);
    assert_eq!(r.gamma, mhz_to_rate(4.0));
    assert_eq!(r.gamma_d_0, mhz_to_rate(30.0));
    assert_eq!(r.p0, 0.5);
    assert!((rate_to_mhz(r.gamma_d_1) / 300.0 - 1.0).abs() < 0.3);
}

#[test]
fn invalid_config_rejected() {
    let truth = SuperradiantParams::from_mhz(2, 4.0, 30.0, 300.0, 0.5);
    let trace = synthetic(&truth, 120.0, Some(2), 2.0);
    let bad = FitConfig { n_range: (5, 2), ..Default::default() };
    assert!(matches!(fit_superradiant(&trace, &bad).unwrap_err().root(), Error::Validation(_)));
    let bad = FitConfig { polarization_bounds: (0.2, 1.5), ..Default::default() };
    assert!(matches!(fit_superradiant(&trace, &bad).unwrap_err().root(), Error::Validation(_)));
}

#[test]
fn compare_models_ties_on_exponential() {
    let trace = exponential(12.0, Some(9));
    let config = FitConfig { n_range: (1, 3), ..Default::default() };
    let cmp = compare_models(&trace, &config).unwrap();
    assert_eq!(cmp.scores.len(), 3, "{:?}", cmp.errors);
    let best = cmp.scores.values().cloned().fold(f64::INFINITY, f64::min);
    let n = trace.n_bins() as f64;
    for (name, s) in &cmp.scores {
        // deviance noise scale is about sqrt(2 n)
        assert!(s - best < 5.0 * (2.0 * n).sqrt(), "{name}: {s} vs {best}");
    }
}

#[test]
fn compare_models_rejects_empty_trace() {
    let l = layout(50.0, 16.0);
    let trace = DecayTrace::new(l.edges(), vec![0.0; l.n_bins], IrfSpec::gaussian(ps(110.0)), None, "empty").unwrap();
    let err = compare_models(&trace, &FitConfig::default()).unwrap_err();
    assert!(matches!(err.root(), Error::Validation(_)));
}

#[test]
fn lifetime_estimator_spans_experimental_range() {
    for tau in [0.5_f64, 2.0, 10.0, 50.0] {
        let l = layout(8.0 * tau.max(5.0), 16.0);
        let expected: Vec<f64> = l
            .centers()
            .iter()
            .map(|&t| if t < 0.0 { 0.0 } else { (-t / ns(tau)).exp() })
            .collect();
        let trace = synthesize_trace(&expected, &l.edges(), &IrfSpec::gaussian(0.0), 1e6, 0.0, None, "exp").unwrap();
        let window = if tau > 5.0 { ns(3.0) } else { ns(1.0) };
        let fitted = lifetime_window(&trace, window).unwrap();
        assert!((fitted / ns(tau) - 1.0).abs() < 0.02, "tau {tau}: {}", fitted / ns(1.0));
    }
}

#[test]
fn tail_rate_of_flat_background_fails() {
    let l = layout(100.0, 16.0);
    let trace = DecayTrace::new(l.edges(), vec![5.0; l.n_bins], IrfSpec::gaussian(0.0), Some(5.0), "flat").unwrap();
    assert!(matches!(tail_fit_gamma(&trace, (ns(10.0), ns(100.0)), (0.0, 0.0)).unwrap_err().root(), Error::Fit { .. }));
}
