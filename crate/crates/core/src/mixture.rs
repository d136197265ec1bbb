//! The observation model `X(t) = Λ Z(t) + q(t)` and its dependence measures.
//!
//! Each channel is a weighted combination of `K` unit-variance AR(2)
//! oscillations plus white noise. Rows of the weight matrix `Λ` have unit sum
//! of squares, so `λ_ij²` is the share of channel `i`'s signal variance
//! carried by oscillation `j`.
//!
//! Conventions:
//! - `noise_var` is the flat one-sided spectral level of `q(t)` and enters
//!   only the diagonal of the spectral matrix; in the time domain it enters
//!   the lag-0 autocovariance only.
//! - Channel and kernel indices are zero-based.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kernel_autocov, Ar2Kernel};

/// Tolerance on `Σ_j λ_ij² = 1` accepted when building a model.
pub const ROW_NORM_TOL: f64 = 1e-10;

/// `K` oscillation kernels, an `n × K` weight matrix and a noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    kernels: Vec<Ar2Kernel>,
    weights: Array2<f64>,
    noise_var: f64,
}

/// Spectral matrix `S_XX(ω)` at one frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMatrix {
    pub freq: f64,
    pub values: Array2<Complex64>,
}

/// Joint lag-`h` covariance of `(Z, X)`, latent block first.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCovariance {
    pub lag: usize,
    pub n_latent: usize,
    pub blocks: Array2<f64>,
}

impl MixtureModel {
    /// Builds a model and reorders kernels (with their weight columns) by
    /// ascending `psi`, ties broken by ascending `log_mod`.
    pub fn new(kernels: Vec<Ar2Kernel>, weights: Array2<f64>, noise_var: f64) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Dimension("a model needs at least one kernel".into()));
        }
        if weights.ncols() != kernels.len() {
            return Err(Error::Dimension(format!(
                "weight matrix has {} columns for {} kernels",
                weights.ncols(),
                kernels.len()
            )));
        }
        if weights.nrows() == 0 {
            return Err(Error::Dimension("weight matrix has no rows".into()));
        }
        for kernel in &kernels {
            kernel.validate()?;
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Domain(format!("noise level {noise_var} must be >= 0")));
        }
        for (i, row) in weights.rows().into_iter().enumerate() {
            if row.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                return Err(Error::Domain(format!("row {i} has a weight outside [0, 1]")));
            }
            let norm: f64 = row.iter().map(|w| w * w).sum();
            if (norm - 1.0).abs() > ROW_NORM_TOL {
                return Err(Error::Domain(format!(
                    "row {i} squared weights sum to {norm}, expected 1"
                )));
            }
        }
        let mut order: Vec<usize> = (0..kernels.len()).collect();
        order.sort_by(|&a, &b| {
            let (ka, kb) = (kernels[a], kernels[b]);
            ka.psi.total_cmp(&kb.psi).then(ka.log_mod.total_cmp(&kb.log_mod))
        });
        let sorted_kernels = order.iter().map(|&j| kernels[j]).collect();
        let sorted_weights = weights.select(ndarray::Axis(1), &order);
        Ok(MixtureModel {
            kernels: sorted_kernels,
            weights: sorted_weights,
            noise_var,
        })
    }

    pub fn kernels(&self) -> &[Ar2Kernel] {
        &self.kernels
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn n_channels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_kernels(&self) -> usize {
        self.kernels.len()
    }

    fn check_channel(&self, index: usize) -> Result<()> {
        if index >= self.n_channels() {
            return Err(Error::IndexOutOfRange {
                what: "channel",
                index,
                len: self.n_channels(),
            });
        }
        Ok(())
    }

    fn check_kernel(&self, index: usize) -> Result<()> {
        if index >= self.n_kernels() {
            return Err(Error::IndexOutOfRange {
                what: "kernel",
                index,
                len: self.n_kernels(),
            });
        }
        Ok(())
    }

    fn kernel_values(&self, omega: f64) -> Array1<f64> {
        self.kernels.iter().map(|k| k.density_eval().at(omega)).collect()
    }

    /// Serializes to the JSON model document (bit-exact round trip).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_model()
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&omega) {
        return Err(Error::Domain(format!("frequency {omega} outside [0, 0.5]")));
    }
    Ok(())
}

/// `S_XX(ω) = Λ diag(g_1(ω), …, g_K(ω)) Λᵀ + σ² I`.
pub fn spectral_matrix(model: &MixtureModel, omega: f64) -> Result<SpectralMatrix> {
    check_omega(omega)?;
    let g = model.kernel_values(omega);
    let scaled = &model.weights * &g;
    let mut values = scaled.dot(&model.weights.t());
    values.diag_mut().mapv_inplace(|v| v + model.noise_var);
    Ok(SpectralMatrix {
        freq: omega,
        values: values.mapv(|v| Complex64::new(v, 0.0)),
    })
}

/// Entry `(m, l)` of the spectral matrix, computed directly.
pub fn cross_spectrum(model: &MixtureModel, m: usize, l: usize, omega: f64) -> Result<Complex64> {
    model.check_channel(m)?;
    model.check_channel(l)?;
    check_omega(omega)?;
    let mut total = 0.0;
    for (j, kernel) in model.kernels.iter().enumerate() {
        let w = model.weights[[m, j]] * model.weights[[l, j]];
        if w != 0.0 {
            total += w * kernel.density_eval().at(omega);
        }
    }
    if m == l {
        total += model.noise_var;
    }
    Ok(Complex64::new(total, 0.0))
}

/// Squared coherence `|S_ml|² / (S_mm S_ll)`.
pub fn coherence(model: &MixtureModel, m: usize, l: usize, omega: f64) -> Result<f64> {
    let s_ml = cross_spectrum(model, m, l, omega)?;
    if m == l {
        return Ok(1.0);
    }
    let s_mm = cross_spectrum(model, m, m, omega)?.re;
    let s_ll = cross_spectrum(model, l, l, omega)?.re;
    let denom = s_mm * s_ll;
    if !(denom > 0.0) {
        return Err(Error::NonFinite(format!(
            "auto-spectra vanish at frequency {omega} for channels {m}, {l}"
        )));
    }
    Ok((s_ml.norm_sqr() / denom).min(1.0))
}

/// Block covariance `[Σ_ZZ, Σ_ZZ Λᵀ; Λ Σ_ZZ, Λ Σ_ZZ Λᵀ + (σ²/2) 1{h=0} I]`.
///
/// `σ²` is the flat one-sided spectral level of the noise, so its variance
/// is `∫₀^0.5 σ² dω = σ²/2`, matching [`spectral_matrix`].
pub fn autocovariance(model: &MixtureModel, lag: usize) -> BlockCovariance {
    let k = model.n_kernels();
    let n = model.n_channels();
    let gamma: Array1<f64> = model.kernels.iter().map(|kern| kernel_autocov(kern, lag)).collect();
    let lambda_gamma = &model.weights * &gamma;
    let signal = lambda_gamma.dot(&model.weights.t());
    let mut blocks = Array2::zeros((k + n, k + n));
    for j in 0..k {
        blocks[[j, j]] = gamma[j];
    }
    for i in 0..n {
        for j in 0..k {
            blocks[[k + i, j]] = lambda_gamma[[i, j]];
            blocks[[j, k + i]] = lambda_gamma[[i, j]];
        }
        for l in 0..n {
            blocks[[k + i, k + l]] = signal[[i, l]];
        }
        if lag == 0 {
            blocks[[k + i, k + i]] += 0.5 * model.noise_var;
        }
    }
    BlockCovariance {
        lag,
        n_latent: k,
        blocks,
    }
}

impl BlockCovariance {
    /// The `n × n` signal block `Σ_XX(h)`.
    pub fn signal_block(&self) -> Array2<f64> {
        self.blocks
            .slice(ndarray::s![self.n_latent.., self.n_latent..])
            .to_owned()
    }

    /// The `n × K` block `Cov(X_i(t), Z_j(t+h))`.
    pub fn cross_block(&self) -> Array2<f64> {
        self.blocks
            .slice(ndarray::s![self.n_latent.., ..self.n_latent])
            .to_owned()
    }
}

/// `Φ_j(ω) = φ_1 e^{-i2πω} + φ_2 e^{-i4πω}` for kernel `j`.
pub fn transfer_poly(model: &MixtureModel, kernel: usize, omega: f64) -> Result<Complex64> {
    model.check_kernel(kernel)?;
    Ok(kernel_transfer(&model.kernels[kernel], omega))
}

pub(crate) fn kernel_transfer(kernel: &Ar2Kernel, omega: f64) -> Complex64 {
    let c = kernel.coeffs();
    let theta = 2.0 * PI * omega;
    Complex64::from_polar(c.phi1, -theta) + Complex64::from_polar(c.phi2, -2.0 * theta)
}

/// Partial directed coherence magnitude from oscillation `kernel` to channel `channel`.
pub fn pdc_latent_to_signal(model: &MixtureModel, channel: usize, kernel: usize, omega: f64) -> Result<f64> {
    model.check_channel(channel)?;
    model.check_kernel(kernel)?;
    let phi = kernel_transfer(&model.kernels[kernel], omega);
    let column_norm: f64 = model.weights.column(kernel).iter().map(|w| w * w).sum();
    let denom = phi.norm_sqr() * column_norm + (Complex64::new(1.0, 0.0) - phi).norm_sqr();
    Ok(model.weights[[channel, kernel]] * phi.norm() / denom.sqrt())
}

/// Latent-to-latent PDC: `|1 - Φ_j(ω)|` over the column norm on the
/// diagonal, `0` between distinct oscillations (their lag matrices are
/// diagonal). Together with [`pdc_latent_to_signal`] it completes the
/// unit-norm column of oscillation `from`.
pub fn pdc_latent_to_latent(model: &MixtureModel, from: usize, to: usize, omega: f64) -> Result<f64> {
    model.check_kernel(from)?;
    model.check_kernel(to)?;
    if from != to {
        return Ok(0.0);
    }
    let phi = kernel_transfer(&model.kernels[from], omega);
    let column_norm: f64 = model.weights.column(from).iter().map(|w| w * w).sum();
    let one_minus = (Complex64::new(1.0, 0.0) - phi).norm_sqr();
    Ok((one_minus / (phi.norm_sqr() * column_norm + one_minus)).sqrt())
}

/// Signal-to-signal PDC: channels interact only through shared oscillations,
/// so the value is `1` on the diagonal and `0` elsewhere.
pub fn pdc_signal_to_signal(model: &MixtureModel, from: usize, to: usize, _omega: f64) -> Result<f64> {
    model.check_channel(from)?;
    model.check_channel(to)?;
    Ok(if from == to { 1.0 } else { 0.0 })
}

/// On-disk model layout. `lambda` is row-major `n × K`; `noise_var` is the
/// flat one-sided spectral level of the channel noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(rename = "K")]
    pub k: usize,
    pub psi: Vec<f64>,
    pub log_mod: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub noise_var: f64,
}

impl From<&MixtureModel> for ModelDocument {
    fn from(model: &MixtureModel) -> Self {
        ModelDocument {
            k: model.n_kernels(),
            psi: model.kernels.iter().map(|k| k.psi).collect(),
            log_mod: model.kernels.iter().map(|k| k.log_mod).collect(),
            lambda: model.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
            noise_var: model.noise_var,
        }
    }
}

impl ModelDocument {
    pub fn into_model(self) -> Result<MixtureModel> {
        if self.psi.len() != self.k || self.log_mod.len() != self.k {
            return Err(Error::Dimension(format!(
                "K = {} but {} psi and {} log_mod values",
                self.k,
                self.psi.len(),
                self.log_mod.len()
            )));
        }
        let n = self.lambda.len();
        let mut weights = Array2::zeros((n, self.k));
        for (i, row) in self.lambda.iter().enumerate() {
            if row.len() != self.k {
                return Err(Error::Dimension(format!(
                    "lambda row {i} has {} entries, expected {}",
                    row.len(),
                    self.k
                )));
            }
            for (j, &w) in row.iter().enumerate() {
                weights[[i, j]] = w;
            }
        }
        let kernels = self
            .psi
            .iter()
            .zip(&self.log_mod)
            .map(|(&psi, &log_mod)| Ar2Kernel::new(psi, log_mod))
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(kernels, weights, self.noise_var)
    }
}
