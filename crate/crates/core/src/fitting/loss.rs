use super::FitLoss;
use crate::optimize::nnls_small;

const MU_FLOOR: f64 = 1e-12;

/// Loss between counts `y` and a background-free model `m` on a flat
/// background `bg`.
///
/// Least squares compares `m` with `max(y − bg, 0)`; the Poisson deviance
/// compares `m + bg` with `y`. Both are zero for a perfect match.
pub fn loss_value(loss: FitLoss, y: &[f64], bg: f64, m: &[f64]) -> f64 {
    match loss {
        FitLoss::LeastSquares => sum_squares(y, bg, m),
        FitLoss::PoissonNll => y
            .iter()
            .zip(m)
            .map(|(&y, &m)| {
                let mu = (m + bg).max(MU_FLOOR);
                let t = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (mu - y + t)
            })
            .sum(),
    }
}

pub(crate) fn sum_squares(y: &[f64], bg: f64, m: &[f64]) -> f64 {
    y.iter().zip(m).map(|(&y, &m)| ((y - bg).max(0.0) - m).powi(2)).sum()
}

fn combine(basis: &[&[f64]], a: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; basis[0].len()];
    for (b, &w) in basis.iter().zip(a) {
        m.iter_mut().zip(b.iter()).for_each(|(m, b)| *m += w * b);
    }
    m
}

/// Non-negative amplitudes minimizing the loss for a fixed basis, and the
/// loss reached.
pub(crate) fn solve_amplitudes(basis: &[&[f64]], y: &[f64], bg: f64, loss: FitLoss) -> (Vec<f64>, f64) {
    let target: Vec<f64> = y.iter().map(|v| (v - bg).max(0.0)).collect();
    let (ls, _) = nnls_small(basis, &target, None);
    match loss {
        FitLoss::LeastSquares => {
            let m = combine(basis, &ls);
            let v = loss_value(loss, y, bg, &m);
            (ls, v)
        }
        FitLoss::PoissonNll => poisson_newton(basis, y, bg, ls),
    }
}

/// Projected Newton iterations on the Poisson deviance, from `start`.
fn poisson_newton(basis: &[&[f64]], y: &[f64], bg: f64, start: Vec<f64>) -> (Vec<f64>, f64) {
    let k = basis.len();
    let scale = start.iter().cloned().fold(0.0, f64::max).max(1e-300);
    // strictly positive start keeps every bin with counts reachable
    let mut a: Vec<f64> = start.iter().map(|&x| x.max(1e-3 * scale)).collect();
    let mut m = combine(basis, &a);
    let mut f = loss_value(FitLoss::PoissonNll, y, bg, &m);
    let start_m = combine(basis, &start);
    let f_start = loss_value(FitLoss::PoissonNll, y, bg, &start_m);
    for _ in 0..100 {
        let mut g = nalgebra::DVector::<f64>::zeros(k);
        let mut h = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 0..y.len() {
            let mu = (m[i] + bg).max(MU_FLOOR);
            for p in 0..k {
                g[p] += 2.0 * basis[p][i] * (1.0 - y[i] / mu);
                for q in 0..k {
                    h[(p, q)] += 2.0 * y[i] * basis[p][i] * basis[q][i] / (mu * mu);
                }
            }
        }
        for p in 0..k {
            h[(p, p)] += 1e-12 * h[(p, p)].abs().max(1e-300);
        }
        let Some(step) = h.clone().cholesky().map(|c| -c.solve(&g)) else { break };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..k).map(|p| (a[p] + t * step[p]).max(0.0)).collect();
            let tm = combine(basis, &trial);
            let tf = loss_value(FitLoss::PoissonNll, y, bg, &tm);
            if tf < f {
                let done = (f - tf) <= 1e-13 * f.abs().max(1.0);
                a = trial;
                m = tm;
                f = tf;
                improved = !done;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if f_start <= f {
        (start, f_start)
    } else {
        (a, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_vanish_on_exact_model() {
        let m = [1.0, 4.0, 9.0];
        let y = [3.0, 6.0, 11.0];
        assert_eq!(loss_value(FitLoss::LeastSquares, &y, 2.0, &m), 0.0);
        assert!(loss_value(FitLoss::PoissonNll, &y, 2.0, &m).abs() < 1e-12);
        assert!(loss_value(FitLoss::PoissonNll, &y, 2.0, &[1.0, 5.0, 9.0]) > 0.0);
    }

    #[test]
    fn poisson_amplitudes_recover_truth() {
        let b0: Vec<f64> = (0..200).map(|i| (-(i as f64) / 20.0).exp()).collect();
        let b1: Vec<f64> = (0..200).map(|i| (-(i as f64) / 90.0).exp()).collect();
        let y: Vec<f64> = (0..200).map(|i| 500.0 * b0[i] + 80.0 * b1[i] + 3.0).collect();
        for loss in [FitLoss::LeastSquares, FitLoss::PoissonNll] {
            let (a, v) = solve_amplitudes(&[&b0, &b1], &y, 3.0, loss);
            assert!((a[0] - 500.0).abs() < 1e-6 && (a[1] - 80.0).abs() < 1e-6, "{loss:?} {a:?}");
            assert!(v.abs() < 1e-8);
        }
    }
}
