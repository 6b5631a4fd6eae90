//! Closed-form auxiliary relations: lifetime ratio from intersystem
//! crossing, static dipole-dipole coupling and mean emitter separation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Ratio of total excited-state lifetimes `T_±1 / T_0 = (1 + f0)/(1 + f1)`,
/// where `f_σ` is the intersystem-crossing rate in units of the radiative rate.
pub fn isc_lifetime_ratio(f0: f64, f1: f64) -> Result<f64> {
    if !(f0 >= 0.0 && f1 >= 0.0) || !f0.is_finite() || !f1.is_finite() {
        return domain(format!("rate fractions must be finite and >= 0, got {f0}, {f1}"));
    }
    Ok((1.0 + f0) / (1.0 + f1))
}

/// Two point dipoles in a dielectric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipoleGeometry {
    /// Distance between the dipoles, metres.
    pub separation: f64,
    pub d1: Vector3<f64>,
    pub d2: Vector3<f64>,
    /// Unit vector along the separation.
    pub n_hat: Vector3<f64>,
    /// Fraction of emission into the zero-phonon line.
    pub branching_b: f64,
    pub refractive_n: f64,
    /// Vacuum wavelength of the transition, metres.
    pub wavelength: f64,
    /// Radiative rate, rad/s.
    pub gamma: f64,
}

impl DipoleGeometry {
    /// Diamond defaults: `b = 0.03`, `n = 2.4`, `λ₀ = 639 nm`.
    pub fn diamond(separation: f64, d1: Vector3<f64>, d2: Vector3<f64>, n_hat: Vector3<f64>, gamma: f64) -> Self {
        DipoleGeometry {
            separation,
            d1,
            d2,
            n_hat,
            branching_b: 0.03,
            refractive_n: 2.4,
            wavelength: 639e-9,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d1", self.d1), ("d2", self.d2), ("n_hat", self.n_hat)] {
            if (v.norm() - 1.0).abs() > 1e-9 {
                return invalid(format!("{name} must be a unit vector, norm is {}", v.norm()));
            }
        }
        if !(self.branching_b >= 0.0 && self.refractive_n > 0.0 && self.wavelength > 0.0 && self.gamma >= 0.0) {
            return invalid("branching, refractive index, wavelength and rate must be physical");
        }
        Ok(())
    }
}

/// `d̂₁·d̂₂ − 3(d̂₁·n̂)(d̂₂·n̂)`.
pub fn angular_factor(d1: &Vector3<f64>, d2: &Vector3<f64>, n_hat: &Vector3<f64>) -> f64 {
    d1.dot(d2) - 3.0 * d1.dot(n_hat) * d2.dot(n_hat)
}

/// Static dipole-dipole coupling `3γb / (4 (n k₀ Δr)³) × angular factor`,
/// in rad/s.
pub fn dipole_dipole_strength(geom: &DipoleGeometry) -> Result<f64> {
    if !(geom.separation > 0.0) || !geom.separation.is_finite() {
        return domain(format!("separation must be positive, got {}", geom.separation));
    }
    geom.validate()?;
    let k0 = 2.0 * std::f64::consts::PI / geom.wavelength;
    let x = geom.refractive_n * k0 * geom.separation;
    Ok(3.0 * geom.gamma * geom.branching_b / (4.0 * x.powi(3)) * angular_factor(&geom.d1, &geom.d2, &geom.n_hat))
}

/// How a number density is turned into a typical spacing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationConvention {
    /// `ρ^(−1/3)`: edge of the cube holding one emitter.
    CubeRoot,
    /// `(3 / 4πρ)^(1/3)`: radius of the sphere holding one emitter.
    WignerSeitz,
    /// `(2/ρ)^(1/3)`: edge of the cube holding one pair.
    #[default]
    PairVolume,
}

/// Typical emitter spacing in metres for a density in m⁻³.
pub fn mean_separation(density: f64, convention: SeparationConvention) -> Result<f64> {
    if !(density > 0.0) || !density.is_finite() {
        return domain(format!("density must be positive, got {density}"));
    }
    let volume = match convention {
        SeparationConvention::CubeRoot => 1.0 / density,
        SeparationConvention::WignerSeitz => 3.0 / (4.0 * std::f64::consts::PI * density),
        SeparationConvention::PairVolume => 2.0 / density,
    };
    Ok(volume.cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{mhz_to_rate, nm};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn x() -> Vector3<f64> {
        Vector3::x()
    }

    #[test]
    fn lifetime_ratio_examples() {
        assert_eq!(isc_lifetime_ratio(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(isc_lifetime_ratio(0.4, 0.0).unwrap(), 1.4);
        let r = isc_lifetime_ratio(1.8 / 12.2, 9.4 / 12.2).unwrap();
        assert_relative_eq!(r, 14.0 / 21.6, max_relative = 1e-12);
        assert!(isc_lifetime_ratio(-0.1, 0.0).is_err());
    }

    #[test]
    fn coupling_at_ten_nanometres() {
        let g = DipoleGeometry::diamond(nm(10.0), x(), x(), Vector3::z(), mhz_to_rate(5.0));
        let v = dipole_dipole_strength(&g).unwrap();
        assert_relative_eq!(v, mhz_to_rate(8.56), max_relative = 0.01);
        let far = DipoleGeometry { separation: nm(20.0), ..g };
        assert_relative_eq!(dipole_dipole_strength(&far).unwrap(), v / 8.0, max_relative = 1e-12);
        assert_relative_eq!(dipole_dipole_strength(&far).unwrap(), mhz_to_rate(1.07), max_relative = 0.01);
    }

    #[test]
    fn orthogonal_dipoles_do_not_couple() {
        let g = DipoleGeometry::diamond(nm(10.0), x(), Vector3::y(), Vector3::z(), mhz_to_rate(5.0));
        assert_eq!(dipole_dipole_strength(&g).unwrap(), 0.0);
        let zero = DipoleGeometry { separation: 0.0, ..g };
        assert!(matches!(dipole_dipole_strength(&zero), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn separation_conventions() {
        let rho = 1e24;
        assert_relative_eq!(mean_separation(rho, SeparationConvention::CubeRoot).unwrap(), nm(10.0), max_relative = 1e-12);
        let pair = mean_separation(rho, SeparationConvention::default()).unwrap();
        assert!((pair - nm(12.0)).abs() < nm(1.0), "{pair}");
        let ws = mean_separation(rho, SeparationConvention::WignerSeitz).unwrap();
        assert_relative_eq!(ws, 6.2035e-9, max_relative = 1e-4);
        let dense = mean_separation(3e24, SeparationConvention::CubeRoot).unwrap();
        assert_relative_eq!(dense, 3e24f64.powf(-1.0 / 3.0), max_relative = 1e-12);
        for c in [SeparationConvention::CubeRoot, SeparationConvention::WignerSeitz, SeparationConvention::PairVolume] {
            let a = mean_separation(rho, c).unwrap();
            let b = mean_separation(rho / 8.0, c).unwrap();
            assert_relative_eq!(b, 2.0 * a, max_relative = 1e-12);
        }
    }

    fn unit() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
            let r = (1.0 - z * z).sqrt();
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
    }

    proptest! {
        #[test]
        fn angular_factor_bounded(a in unit(), b in unit(), n in unit()) {
            let f = angular_factor(&a, &b, &n);
            prop_assert!((-2.0 - 1e-12..=2.0 + 1e-12).contains(&f));
        }

        #[test]
        fn coupling_scales_as_inverse_cube(r in 1e-9f64..1e-7, s in 1.1f64..5.0, g in 1e6f64..1e9) {
            let base = DipoleGeometry::diamond(r, Vector3::x(), Vector3::x(), Vector3::z(), g);
            let v = dipole_dipole_strength(&base).unwrap();
            let moved = dipole_dipole_strength(&DipoleGeometry { separation: r * s, ..base }).unwrap();
            prop_assert!((moved * s.powi(3) / v - 1.0).abs() < 1e-10);
            let faster = dipole_dipole_strength(&DipoleGeometry { gamma: 2.0 * g, branching_b: 0.06, ..base }).unwrap();
            prop_assert!((faster / v - 4.0).abs() < 1e-10);
        }

        #[test]
        fn ratio_monotone(f0 in 0.0f64..5.0, f1 in 0.0f64..5.0, d in 0.01f64..1.0) {
            prop_assert!(isc_lifetime_ratio(f0 + d, f1).unwrap() > isc_lifetime_ratio(f0, f1).unwrap());
            prop_assert!(isc_lifetime_ratio(f0, f1 + d).unwrap() < isc_lifetime_ratio(f0, f1).unwrap());
        }
    }
}
