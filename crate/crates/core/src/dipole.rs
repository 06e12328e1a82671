//! Dipole diffusion profile.
//!
//! Multiple scattering below a flat semi-infinite medium is modelled by a real
//! source at depth `z_r` and a mirrored virtual source at height `z_v`. The
//! resulting radially symmetric reflectance profile `R_d(r)` is what the rest
//! of the pipeline factors and precomputes. All lengths are millimetres and
//! coefficients are mm⁻¹. Colour channels are treated as three independent
//! scalar materials.

use alloc::format;

use crate::error::{Error, Result};
use crate::math::{exp, sqrt, Rgb, PI};

/// Editable translucent material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalMaterial {
    /// Reduced scattering coefficient `(1 - g) σ_s` per channel, mm⁻¹.
    pub sigma_s_prime: Rgb,
    /// Absorption coefficient per channel, mm⁻¹.
    pub sigma_a: Rgb,
    /// Mean scattering cosine.
    pub g: f64,
    /// Relative index of refraction.
    pub eta: f64,
}

impl OpticalMaterial {
    pub fn new(sigma_s_prime: Rgb, sigma_a: Rgb, g: f64, eta: f64) -> Result<Self> {
        let m = OpticalMaterial { sigma_s_prime, sigma_a, g, eta };
        m.validate()?;
        Ok(m)
    }

    /// Same coefficients on all three channels.
    pub fn gray(sigma_s_prime: f64, sigma_a: f64, eta: f64) -> Result<Self> {
        Self::new([sigma_s_prime; 3], [sigma_a; 3], 0.0, eta)
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            let (s, a) = (self.sigma_s_prime[c], self.sigma_a[c]);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidMaterial(format!(
                    "sigma_s_prime[{c}] = {s} must be positive and finite"
                )));
            }
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidMaterial(format!(
                    "sigma_a[{c}] = {a} must be positive and finite"
                )));
            }
        }
        if !(1.0..=3.0).contains(&self.eta) {
            return Err(Error::InvalidMaterial(format!("eta = {} outside [1, 3]", self.eta)));
        }
        if !(self.g > -1.0 && self.g < 1.0) {
            return Err(Error::InvalidMaterial(format!("g = {} outside (-1, 1)", self.g)));
        }
        Ok(())
    }

    /// Raw scattering coefficient `σ'_s / (1 - g)`.
    pub fn sigma_s(&self, channel: usize) -> f64 {
        self.sigma_s_prime[channel] / (1.0 - self.g)
    }
}

/// Constants of the dipole configuration for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleDerived {
    pub sigma_t_prime: f64,
    pub alpha_prime: f64,
    pub sigma_tr: f64,
    pub z_r: f64,
    pub z_v: f64,
    pub a_boundary: f64,
    pub f_dr: f64,
}

/// Diffuse Fresnel reflectance fit `-1.440/η² + 0.710/η + 0.668 + 0.0636η`.
pub fn fdr(eta: f64) -> f64 {
    -1.440 / (eta * eta) + 0.710 / eta + 0.668 + 0.0636 * eta
}

/// Dipole constants for channel `channel` of `material`.
pub fn derive_dipole(material: &OpticalMaterial, channel: usize) -> DipoleDerived {
    assert!(channel < 3, "channel index {channel} out of range");
    DipoleDerived::from_coefficients(
        material.sigma_s_prime[channel],
        material.sigma_a[channel],
        material.eta,
    )
}

impl DipoleDerived {
    /// Builds the constants from scalar coefficients.
    ///
    /// Uses `σ'_t = σ'_s + σ_a` and `σ_tr = sqrt(3 σ_a σ'_t)`.
    pub fn from_coefficients(sigma_s_prime: f64, sigma_a: f64, eta: f64) -> Self {
        debug_assert!(sigma_s_prime > 0.0 && sigma_a >= 0.0);
        let f_dr = fdr(eta);
        assert!(f_dr < 1.0, "diffuse Fresnel reflectance {f_dr} >= 1 for eta {eta}");
        let sigma_t_prime = sigma_s_prime + sigma_a;
        let alpha_prime = sigma_s_prime / sigma_t_prime;
        let sigma_tr = sqrt(3.0 * sigma_a * sigma_t_prime);
        let z_r = 1.0 / sigma_t_prime;
        let a_boundary = (1.0 + f_dr) / (1.0 - f_dr);
        let z_v = z_r * (1.0 + 4.0 * a_boundary / 3.0);
        DipoleDerived { sigma_t_prime, alpha_prime, sigma_tr, z_r, z_v, a_boundary, f_dr }
    }

    /// Diffuse reflectance profile `R_d(r)` in mm⁻².
    pub fn eval_rd(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0, "negative distance {r}");
        let r2 = r * r;
        let d_r = sqrt(r2 + self.z_r * self.z_r);
        let d_v = sqrt(r2 + self.z_v * self.z_v);
        let real = self.z_r * (self.sigma_tr + 1.0 / d_r) * exp(-self.sigma_tr * d_r) / (d_r * d_r);
        let virt = self.z_v * (self.sigma_tr + 1.0 / d_v) * exp(-self.sigma_tr * d_v) / (d_v * d_v);
        self.alpha_prime / (4.0 * PI) * (real + virt)
    }
}

/// `1 - F_r` for unpolarised light entering a dielectric of relative index
/// `eta` at incidence cosine `cos_theta`. Returns 0 under total internal
/// reflection.
pub fn fresnel_transmittance(eta: f64, cos_theta: f64) -> f64 {
    let cos_i = cos_theta.clamp(0.0, 1.0);
    let sin2_i = (1.0 - cos_i * cos_i).max(0.0);
    let sin2_t = sin2_i / (eta * eta);
    if sin2_t >= 1.0 {
        return 0.0;
    }
    let cos_t = sqrt(1.0 - sin2_t);
    let r_par = (eta * cos_i - cos_t) / (eta * cos_i + cos_t);
    let r_perp = (cos_i - eta * cos_t) / (cos_i + eta * cos_t);
    let reflectance = 0.5 * (r_par * r_par + r_perp * r_perp);
    (1.0 - reflectance).clamp(0.0, 1.0)
}
