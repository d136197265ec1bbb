//! Second-order autoregressive oscillation kernels.
//!
//! A latent oscillation is an AR(2) process whose characteristic polynomial
//! has the complex-conjugate roots `M exp(±2πiψ)`. It is parameterized by the
//! peak location `psi` (cycles/sample, in `(0, 0.5)`) and the log-modulus
//! `log_mod = log M > 0`; small `log_mod` gives a sharp, quasi-periodic peak.
//!
//! The spectral density is divided by the process variance and rescaled so
//! that it integrates to one over `[0, 0.5]` (one-sided normalization).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest denominator allowed before dividing.
const DENOM_FLOOR: f64 = 1e-300;

/// One latent AR(2) oscillation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar2Kernel {
    pub psi: f64,
    pub log_mod: f64,
}

/// Lag coefficients of `Z(t) = phi1 Z(t-1) + phi2 Z(t-2) + e(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ar2Coeffs {
    pub phi1: f64,
    pub phi2: f64,
}

impl Ar2Kernel {
    pub fn new(psi: f64, log_mod: f64) -> Result<Self> {
        let kernel = Ar2Kernel { psi, log_mod };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi > 0.0 && self.psi < 0.5) {
            return Err(Error::Domain(format!(
                "peak location psi = {} outside (0, 0.5)",
                self.psi
            )));
        }
        if !(self.log_mod > 0.0 && self.log_mod.is_finite()) {
            return Err(Error::Domain(format!(
                "log-modulus L = {} must be positive and finite",
                self.log_mod
            )));
        }
        Ok(())
    }

    /// Root modulus `M = exp(L)`.
    pub fn modulus(&self) -> f64 {
        self.log_mod.exp()
    }

    pub fn coeffs(&self) -> Ar2Coeffs {
        let r = (-self.log_mod).exp();
        Ar2Coeffs {
            phi1: 2.0 * r * (2.0 * PI * self.psi).cos(),
            phi2: -r * r,
        }
    }

    /// Precomputes the frequency-independent pieces of the density.
    pub fn density_eval(&self) -> KernelEval {
        KernelEval::new(self)
    }
}

impl Ar2Coeffs {
    /// Inverse of [`ar2_coeffs`]. Fails unless the roots are complex and
    /// strictly outside the unit circle.
    pub fn to_kernel(&self) -> Result<Ar2Kernel> {
        if !(self.phi2 < 0.0 && self.phi2 > -1.0) {
            return Err(Error::Domain(format!("phi2 = {} outside (-1, 0)", self.phi2)));
        }
        if self.phi1 * self.phi1 + 4.0 * self.phi2 >= 0.0 {
            return Err(Error::Domain("characteristic roots are real, no spectral peak".into()));
        }
        let log_mod = -0.5 * (-self.phi2).ln();
        let cos_arg = (self.phi1 * log_mod.exp() / 2.0).clamp(-1.0, 1.0);
        Ar2Kernel::new(cos_arg.acos() / (2.0 * PI), log_mod)
    }

    /// Moduli of the two roots of `1 - phi1 z - phi2 z^2`.
    pub fn root_moduli(&self) -> [f64; 2] {
        // Roots of -phi2 z^2 - phi1 z + 1; conjugate pairs share |z|^2 = -1/phi2.
        let disc = self.phi1 * self.phi1 + 4.0 * self.phi2;
        if disc < 0.0 {
            let m = (-1.0 / self.phi2).sqrt();
            [m, m]
        } else {
            let s = disc.sqrt();
            let denom = -2.0 * self.phi2;
            [((self.phi1 + s) / denom).abs(), ((self.phi1 - s) / denom).abs()]
        }
    }
}

/// Maps `(psi, L)` to the AR(2) lag coefficients.
pub fn ar2_coeffs(kernel: &Ar2Kernel) -> Result<Ar2Coeffs> {
    kernel.validate()?;
    Ok(kernel.coeffs())
}

/// Normalized spectral density `g(omega; psi, L)` on `[0, 0.5]`.
pub fn kernel_density(kernel: &Ar2Kernel, omega: f64) -> Result<f64> {
    kernel.validate()?;
    if !(0.0..=0.5).contains(&omega) {
        return Err(Error::Domain(format!("frequency {omega} outside [0, 0.5]")));
    }
    Ok(kernel.density_eval().at(omega))
}

/// Autocorrelation `gamma(h)` of the unit-variance AR(2) oscillation.
pub fn kernel_autocov(kernel: &Ar2Kernel, lag: usize) -> f64 {
    let Ar2Coeffs { phi1, phi2 } = kernel.coeffs();
    let mut prev2 = 1.0;
    if lag == 0 {
        return prev2;
    }
    let mut prev1 = phi1 / (1.0 - phi2);
    for _ in 2..=lag {
        let next = phi1 * prev1 + phi2 * prev2;
        prev2 = prev1;
        prev1 = next;
    }
    prev1
}

/// Frequency-independent factors of `g`.
///
/// The denominator `|1 - phi1 e^{-iθ} - phi2 e^{-2iθ}|^2` factors into
/// `[(1-r)^2 + 4r sin^2(π(ψ-ω))] [(1-r)^2 + 4r sin^2(π(ψ+ω))]`, which stays
/// accurate next to a sharp peak where the expanded cosine form cancels.
#[derive(Clone, Copy, Debug)]
pub struct KernelEval {
    scale: f64,
    one_minus_r_sq: f64,
    four_r: f64,
    sin_psi: f64,
    cos_psi: f64,
}

impl KernelEval {
    pub fn new(kernel: &Ar2Kernel) -> Self {
        let r = (-kernel.log_mod).exp();
        let one_minus_r = -(-kernel.log_mod).exp_m1();
        let one_minus_r_sq = one_minus_r * one_minus_r;
        let four_r = 4.0 * r;
        let (sin_psi, cos_psi) = (PI * kernel.psi).sin_cos();
        // (1 + r^2)^2 - 4 cos^2(2πψ) r^2, factored the same way as the denominator.
        let numer = (one_minus_r_sq + four_r * sin_psi * sin_psi) * (one_minus_r_sq + four_r * cos_psi * cos_psi);
        let one_minus_r2 = -(-2.0 * kernel.log_mod).exp_m1();
        let scale = 2.0 * one_minus_r2 * numer / (1.0 + r * r);
        KernelEval {
            scale,
            one_minus_r_sq,
            four_r,
            sin_psi,
            cos_psi,
        }
    }

    pub fn at(&self, omega: f64) -> f64 {
        let (s, c) = (PI * omega).sin_cos();
        self.at_trig(s, c)
    }

    /// Evaluates with `sin(πω)` and `cos(πω)` supplied by the caller.
    #[inline]
    pub fn at_trig(&self, sin_omega: f64, cos_omega: f64) -> f64 {
        let minus = self.sin_psi * cos_omega - self.cos_psi * sin_omega;
        let plus = self.sin_psi * cos_omega + self.cos_psi * sin_omega;
        let d1 = self.one_minus_r_sq + self.four_r * minus * minus;
        let d2 = self.one_minus_r_sq + self.four_r * plus * plus;
        self.scale / (d1 * d2).max(DENOM_FLOOR)
    }
}
