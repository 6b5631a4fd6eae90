use std::collections::BTreeMap;

use super::loss::{solve_amplitudes, sum_squares};
use super::trace::convolved_on_bins;
use super::{DecayTrace, FitLoss, FitResult};
use crate::error::{invalid, Error, Result};
use crate::optimize::{nelder_mead, LogBounds};

/// Rate bounds of the baseline exponentials, 1/s.
const RATE_BOUNDS: (f64, f64) = (1e6, 2e11);
const MAX_ITERS: u64 = 600;

/// A nonlinear family whose linear amplitudes are solved exactly.
struct Family<'a> {
    trace: &'a DecayTrace,
    loss: FitLoss,
    centers: Vec<f64>,
    dt: f64,
    bg: f64,
    /// Raw basis functions on the non-negative bin centres for a coordinate vector.
    shapes: Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Sync + 'a>,
}

impl<'a> Family<'a> {
    fn new(trace: &'a DecayTrace, loss: FitLoss, shapes: Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Sync + 'a>) -> Result<Self> {
        trace.validate()?;
        if trace.n_bins() < 10 {
            return invalid(format!("trace has {} bins, need at least 10", trace.n_bins()));
        }
        let dt = trace.bin_width()?;
        let centers = trace.centers();
        if centers.iter().all(|&t| t < 0.0) {
            return invalid("no bins after the excitation pulse");
        }
        Ok(Family {
            bg: trace.background_level(),
            trace,
            loss,
            centers,
            dt,
            shapes,
        })
    }

    /// Normalized convolved bases and their peak scales.
    fn bases(&self, x: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut scales = Vec::new();
        for raw in (self.shapes)(x) {
            let mut b = convolved_on_bins(&self.centers, self.dt, &self.trace.irf, &raw).ok()?;
            let s = b.iter().cloned().fold(0.0, f64::max);
            if !(s > 0.0) || !s.is_finite() {
                return None;
            }
            b.iter_mut().for_each(|v| *v /= s);
            out.push(b);
            scales.push(s);
        }
        Some((out, scales))
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match self.bases(x) {
            Some((b, _)) => {
                let refs: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
                solve_amplitudes(&refs, &self.trace.counts, self.bg, self.loss).1
            }
            None => f64::INFINITY,
        }
    }

    /// Multi-start Nelder-Mead; returns the best coordinates, amplitudes (in
    /// counts at each basis peak), model and bookkeeping.
    fn fit(&self, starts: &[Vec<f64>], name: &str) -> Result<Fitted> {
        let mut best_start = starts[0].clone();
        let mut best_val = f64::INFINITY;
        let initial = self.objective(&starts[0]);
        for s in starts {
            let v = self.objective(s);
            if v < best_val {
                best_val = v;
                best_start = s.clone();
            }
        }
        if !best_val.is_finite() {
            return Err(Error::Numerical(format!("{name}: no finite loss at any starting point")));
        }
        let m = nelder_mead(|x| self.objective(x), &best_start, 0.5, MAX_ITERS, 1e-10 * (1.0 + best_val.abs()))?;
        let (x, converged) = if m.value <= best_val { (m.x, m.converged) } else { (best_start, m.converged) };
        let (b, _) = self.bases(&x).ok_or_else(|| Error::Numerical(format!("{name}: model vanished")))?;
        let refs: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
        let (amps, residual) = solve_amplitudes(&refs, &self.trace.counts, self.bg, self.loss);
        let mut model = vec![0.0; self.trace.n_bins()];
        for (bv, a) in b.iter().zip(&amps) {
            model.iter_mut().zip(bv).for_each(|(m, v)| *m += a * v);
        }
        Ok(Fitted { x, amps, model, residual, initial, converged })
    }

    fn result(&self, name: &str, f: &Fitted, parameters: BTreeMap<String, f64>) -> Result<FitResult> {
        let mut parameters = parameters;
        parameters.insert("background".into(), self.bg);
        let result = FitResult {
            model: name.into(),
            n_max: 0,
            gamma: 0.0,
            gamma_d_0: 0.0,
            gamma_d_1: 0.0,
            p0: 0.0,
            loss: self.loss,
            residual: f.residual,
            initial_residual: f.initial,
            sum_squares: sum_squares(&self.trace.counts, self.bg, &f.model),
            parameters,
            per_model_scores: BTreeMap::from([(name.to_string(), f.residual)]),
            covariance_labels: Vec::new(),
            covariance_estimate: None,
            curve: f.model.iter().map(|v| v + self.bg).collect(),
            warnings: Vec::new(),
        };
        if f.converged {
            Ok(result)
        } else {
            Err(Error::Fit {
                message: format!("{name} fit hit its iteration budget"),
                best: Some(Box::new(result)),
            })
        }
    }
}

struct Fitted {
    x: Vec<f64>,
    amps: Vec<f64>,
    model: Vec<f64>,
    residual: f64,
    initial: f64,
    converged: bool,
}

fn rate_bounds() -> LogBounds {
    LogBounds::new(RATE_BOUNDS.0, RATE_BOUNDS.1, RATE_BOUNDS.0)
}

/// One IRF-convolved exponential on the background.
pub fn fit_single_exponential(trace: &DecayTrace, loss: FitLoss) -> Result<FitResult> {
    let rb = rate_bounds();
    let times: Vec<f64> = trace.centers().into_iter().filter(|&t| t >= 0.0).collect();
    let fam = Family::new(
        trace,
        loss,
        Box::new(move |x: &[f64]| {
            let r = rb.to_value(x[0]);
            vec![times.iter().map(|&t| (-r * t).exp()).collect()]
        }),
    )?;
    let starts: Vec<Vec<f64>> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|&v| vec![v]).collect();
    let f = fam.fit(&starts, "single_exponential")?;
    let params = BTreeMap::from([
        ("rate".to_string(), rb.to_value(f.x[0])),
        ("amplitude".to_string(), f.amps[0]),
    ]);
    fam.result("single_exponential", &f, params)
}

/// Two IRF-convolved exponentials with non-negative amplitudes.
///
/// Reported as `rate_fast >= rate_slow`.
pub fn fit_biexponential(trace: &DecayTrace, loss: FitLoss) -> Result<FitResult> {
    let rb = rate_bounds();
    let times: Vec<f64> = trace.centers().into_iter().filter(|&t| t >= 0.0).collect();
    let fam = Family::new(
        trace,
        loss,
        Box::new(move |x: &[f64]| {
            x.iter()
                .map(|&c| {
                    let r = rb.to_value(c);
                    times.iter().map(|&t| (-r * t).exp()).collect()
                })
                .collect()
        }),
    )?;
    let levels = [-2.5, -1.0, 0.0, 1.0, 2.5];
    let starts: Vec<Vec<f64>> = levels
        .iter()
        .flat_map(|&a| levels.iter().filter(move |&&b| b > a).map(move |&b| vec![a, b]))
        .collect();
    let f = fam.fit(&starts, "biexponential")?;
    let r = [rb.to_value(f.x[0]), rb.to_value(f.x[1])];
    let (fast, slow) = if r[0] >= r[1] { (0, 1) } else { (1, 0) };
    let params = BTreeMap::from([
        ("rate_fast".to_string(), r[fast]),
        ("rate_slow".to_string(), r[slow]),
        ("amplitude_fast".to_string(), f.amps[fast]),
        ("amplitude_slow".to_string(), f.amps[slow]),
    ]);
    fam.result("biexponential", &f, params)
}

/// `I₀ exp(−t/τ) exp(−a √(t/τ))`, the √t quenching law of dipole-dipole
/// energy transfer. `coupling` fixes `a`; `None` fits it (`a >= 0`).
pub fn fit_deformed_exponential(trace: &DecayTrace, coupling: Option<f64>, loss: FitLoss) -> Result<FitResult> {
    if let Some(a) = coupling {
        if !(a >= 0.0) || !a.is_finite() {
            return invalid(format!("coupling must be finite and >= 0, got {a}"));
        }
    }
    let rb = rate_bounds();
    let times: Vec<f64> = trace.centers().into_iter().filter(|&t| t >= 0.0).collect();
    let fam = Family::new(
        trace,
        loss,
        Box::new(move |x: &[f64]| {
            let r = rb.to_value(x[0]);
            let a = coupling.unwrap_or_else(|| x[1] * x[1]);
            vec![times.iter().map(|&t| (-r * t - a * (r * t).sqrt()).exp()).collect()]
        }),
    )?;
    let rates = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let starts: Vec<Vec<f64>> = match coupling {
        Some(_) => rates.iter().map(|&r| vec![r]).collect(),
        None => rates.iter().flat_map(|&r| [0.0, 0.7, 1.5, 3.0].map(|a| vec![r, a])).collect(),
    };
    let f = fam.fit(&starts, "deformed_exponential")?;
    let params = BTreeMap::from([
        ("tau".to_string(), 1.0 / rb.to_value(f.x[0])),
        ("coupling".to_string(), coupling.unwrap_or_else(|| f.x[1] * f.x[1])),
        ("amplitude".to_string(), f.amps[0]),
    ]);
    fam.result("deformed_exponential", &f, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{synthesize_trace, BinLayout};
    use crate::propagator::IrfSpec;
    use crate::units::{ns, ps};

    fn trace_of(f: impl Fn(f64) -> f64, seed: Option<u64>) -> DecayTrace {
        let layout = BinLayout { t_start: ns(-3.0), bin_width: ps(32.0), n_bins: 3000 };
        let irf = IrfSpec::gaussian(ps(110.0));
        let raw: Vec<f64> = layout.centers().into_iter().filter(|&t| t >= 0.0).map(f).collect();
        let shape = convolved_on_bins(&layout.centers(), ps(32.0), &irf, &raw).unwrap();
        synthesize_trace(&shape, &layout.edges(), &irf, 1e4, 0.0, seed, "t").unwrap()
    }

    #[test]
    fn biexponential_recovers_known_sum() {
        let tr = trace_of(|t| 0.7 * (-t / ns(1.5)).exp() + 0.3 * (-t / ns(12.0)).exp(), None);
        let f = fit_biexponential(&tr, FitLoss::LeastSquares).unwrap();
        let p = &f.parameters;
        assert!((p["rate_fast"] * ns(1.5) - 1.0).abs() < 0.01, "{p:?}");
        assert!((p["rate_slow"] * ns(12.0) - 1.0).abs() < 0.01, "{p:?}");
        assert!(f.residual <= f.initial_residual);
    }

    #[test]
    fn biexponential_on_single_exponential_degenerates() {
        let tr = trace_of(|t| (-t / ns(4.0)).exp(), None);
        let f = fit_biexponential(&tr, FitLoss::LeastSquares).unwrap();
        let p = &f.parameters;
        let weak = p["amplitude_fast"].min(p["amplitude_slow"]) / p["amplitude_fast"].max(p["amplitude_slow"]);
        let close = (p["rate_fast"] / p["rate_slow"] - 1.0).abs();
        assert!(weak < 1e-3 || close < 1e-2, "{p:?}");
        assert!(f.sum_squares < 1e-8 * 1e4 * 1e4, "{} {p:?}", f.sum_squares);
    }

    #[test]
    fn deformed_zero_coupling_is_exponential() {
        let tr = trace_of(|t| (-t / ns(4.0)).exp(), Some(9));
        let d = fit_deformed_exponential(&tr, Some(0.0), FitLoss::PoissonNll).unwrap();
        let s = fit_single_exponential(&tr, FitLoss::PoissonNll).unwrap();
        assert!((d.residual - s.residual).abs() <= 1e-6 * s.residual, "{} {}", d.residual, s.residual);
        assert!((d.parameters["tau"] / ns(4.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn deformed_recovers_coupling_and_is_optimal() {
        let tau = ns(6.0);
        let tr = trace_of(|t| (-t / tau - 1.2 * (t / tau).sqrt()).exp(), None);
        let free = fit_deformed_exponential(&tr, None, FitLoss::LeastSquares).unwrap();
        assert!((free.parameters["coupling"] - 1.2).abs() < 0.02, "{:?}", free.parameters);
        let mut last = free.residual;
        for a in [1.6, 2.2, 3.0] {
            let r = fit_deformed_exponential(&tr, Some(a), FitLoss::LeastSquares).unwrap().residual;
            assert!(r >= last, "coupling {a}: {r} < {last}");
            last = r;
        }
        assert!(fit_deformed_exponential(&tr, Some(-1.0), FitLoss::LeastSquares).is_err());
    }
}
