use std::f64::consts::PI;

/// Vacuum constants in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub mu0: f64,
    pub eps0: f64,
    pub c0: f64,
}

const MU0: f64 = 1.256_637_062_12e-6;
const EPS0: f64 = 8.854_187_812_8e-12;

impl PhysicalConstants {
    pub const SI: PhysicalConstants = PhysicalConstants {
        mu0: MU0,
        eps0: EPS0,
        // 1/sqrt(MU0*EPS0); checked against the closed form in tests
        c0: 299_792_458.000_006_5,
    };

    pub fn eta0(&self) -> f64 {
        (self.mu0 / self.eps0).sqrt()
    }

    /// Angular frequency for a vacuum wavelength given in micrometers.
    pub fn omega_from_wavelength_um(&self, wavelength_um: f64) -> f64 {
        2.0 * PI * self.c0 / (wavelength_um * 1e-6)
    }

    /// Vacuum wavenumber squared, `w^2 mu0 eps0`, in 1/m^2.
    pub fn k0_sqr(&self, omega: f64) -> f64 {
        omega * omega * self.mu0 * self.eps0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c0_consistent_with_mu0_eps0() {
        let c = PhysicalConstants::SI;
        let closed = 1.0 / (c.mu0 * c.eps0).sqrt();
        assert!((c.c0 - closed).abs() / closed < 4.0 * f64::EPSILON);
    }

    #[test]
    fn wavenumber_from_wavelength() {
        let c = PhysicalConstants::SI;
        let w = c.omega_from_wavelength_um(1.55);
        let k0 = c.k0_sqr(w).sqrt();
        assert!((k0 - 2.0 * PI / 1.55e-6).abs() / k0 < 1e-12);
    }
}
