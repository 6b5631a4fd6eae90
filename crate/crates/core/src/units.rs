//! Unit conversions between the file/CLI boundary and internal SI values.
//!
//! Boundary quantities are ordinary frequencies in MHz (ν = γ/2π), times in
//! ns or ps and lengths in nm. Internally every rate is an angular frequency
//! in rad/s and every time is in seconds.

use std::f64::consts::TAU;

pub fn mhz_to_rate(nu_mhz: f64) -> f64 {
    TAU * nu_mhz * 1e6
}

pub fn rate_to_mhz(rate: f64) -> f64 {
    rate / (TAU * 1e6)
}

pub fn ns(t_ns: f64) -> f64 {
    t_ns * 1e-9
}

pub fn to_ns(t: f64) -> f64 {
    t * 1e9
}

pub fn ps(t_ps: f64) -> f64 {
    t_ps * 1e-12
}

pub fn to_ps(t: f64) -> f64 {
    t * 1e12
}

pub fn nm(x_nm: f64) -> f64 {
    x_nm * 1e-9
}

pub fn to_nm(x: f64) -> f64 {
    x * 1e9
}

/// Reciprocal lifetime in 1/ns from a decay rate in 1/s.
pub fn rate_per_ns(rate: f64) -> f64 {
    rate * 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn megahertz_round_trip() {
        let r = mhz_to_rate(7.9);
        assert_relative_eq!(r, 2.0 * std::f64::consts::PI * 7.9e6, max_relative = 1e-15);
        assert_relative_eq!(rate_to_mhz(r), 7.9, max_relative = 1e-15);
    }

    #[test]
    fn time_and_length() {
        assert_relative_eq!(to_ns(ns(1.1)), 1.1, max_relative = 1e-15);
        assert_relative_eq!(ps(110.0), 1.1e-10, max_relative = 1e-15);
        assert_relative_eq!(to_ps(ps(16.0)), 16.0, max_relative = 1e-15);
        assert_relative_eq!(to_nm(nm(12.0)), 12.0, max_relative = 1e-15);
        assert_relative_eq!(rate_per_ns(1e9), 1.0);
    }
}
