//! Simulation scenarios, their exact spectra, and the integrated absolute
//! error (IAE) harness.
//!
//! Every latent process is an ARMA recursion
//! `Z(t) = Σ a_k Z(t-k) + ε(t) + Σ b_k ε(t-k)` with standard Gaussian
//! innovations, rescaled to unit variance so that the mixing rows are
//! square roots of variance shares. Channels are `X = Λ Z + σ ε`.
//!
//! Spectra here are one-sided: they integrate over `[0, 0.5]` to the
//! variance, matching the scale of `spectral_matrix` for a fitted model.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Ar2Kernel;
use crate::mixture::SpectralMatrix;
use crate::whittle::{FourierData, MultiChannelSeries};

/// Samples discarded from the start of every simulated latent.
pub const GENERATION_BURNIN: usize = 1000;

/// Default number of points of the evaluation grid on `[0, 0.5]`.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// One latent oscillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentSpec {
    /// AR(2) with peak `psi` and log-modulus `log_mod`.
    Ar2 { psi: f64, log_mod: f64 },
    /// General ARMA; `ar[k-1]` multiplies `Z(t-k)`, `ma[k-1]` multiplies `ε(t-k)`.
    Arma {
        #[serde(default)]
        ar: Vec<f64>,
        #[serde(default)]
        ma: Vec<f64>,
    },
}

impl LatentSpec {
    /// `(ar, ma)` coefficient lists.
    pub fn arma(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match *self {
            LatentSpec::Ar2 { psi, log_mod } => {
                let c = Ar2Kernel::new(psi, log_mod)?.coeffs();
                Ok((vec![c.phi1, c.phi2], Vec::new()))
            }
            LatentSpec::Arma { ref ar, ref ma } => Ok((ar.clone(), ma.clone())),
        }
    }
}

/// A mixing experiment: latents, variance shares and channel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub latents: Vec<LatentSpec>,
    /// `n × K` rows of variance shares; the mixing matrix is their square root.
    pub variance_shares: Vec<Vec<f64>>,
    /// Standard deviation of the channel noise.
    pub noise_sd: f64,
}

impl Scenario {
    /// Four sharp AR(2) peaks at `.005, .03, .06, .3` mixed into seven channels.
    pub fn ar2_mixture() -> Self {
        let latents = [0.005, 0.03, 0.06, 0.3]
            .into_iter()
            .map(|psi| LatentSpec::Ar2 { psi, log_mod: 0.03 })
            .collect();
        Scenario {
            name: "ar2mix".into(),
            latents,
            variance_shares: vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.4, 0.0, 0.6, 0.0],
                vec![0.0, 0.7, 0.0, 0.3],
                vec![0.0, 0.0, 0.3, 0.7],
            ],
            noise_sd: 0.1,
        }
    }

    /// Latents outside the AR(2) family: a seasonal AR(12), an MA(4), and
    /// low- and high-frequency AR(1)s, mixed into seven channels.
    pub fn misspecified() -> Self {
        let mut ar12 = vec![0.0; 12];
        ar12[3] = 0.9;
        ar12[7] = 0.7;
        ar12[11] = -0.63;
        Scenario {
            name: "misspec".into(),
            latents: vec![
                LatentSpec::Arma { ar: ar12, ma: vec![] },
                LatentSpec::Arma {
                    ar: vec![],
                    ma: vec![0.6, -0.3, -0.6, -0.3],
                },
                LatentSpec::Arma {
                    ar: vec![0.8],
                    ma: vec![],
                },
                LatentSpec::Arma {
                    ar: vec![-0.8],
                    ma: vec![],
                },
            ],
            variance_shares: vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.4, 0.6],
                vec![0.0, 0.6, 0.4, 0.0],
                vec![0.0, 0.5, 0.0, 0.5],
            ],
            noise_sd: 0.1,
        }
    }

    /// Built-in scenarios by name: `ar2mix` and `misspec`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "ar2mix" => Ok(Self::ar2_mixture()),
            "misspec" => Ok(Self::misspecified()),
            other => Err(Error::Config(format!(
                "unknown scenario {other:?} (built-in: ar2mix, misspec)"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn n_channels(&self) -> usize {
        self.variance_shares.len()
    }

    pub fn n_latents(&self) -> usize {
        self.latents.len()
    }

    /// Checks shapes, unit row sums, stationarity and noise level.
    pub fn validate(&self) -> Result<()> {
        let k = self.n_latents();
        if k == 0 || self.n_channels() == 0 {
            return Err(Error::Config(format!(
                "scenario {}: no latents or no channels",
                self.name
            )));
        }
        for (i, row) in self.variance_shares.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!(
                    "scenario {}: share row {} has {} entries, expected {k}",
                    self.name,
                    i + 1,
                    row.len()
                )));
            }
            if row.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::Config(format!(
                    "scenario {}: share row {} has entries outside [0, 1]",
                    self.name,
                    i + 1
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "scenario {}: share row {} sums to {total}, expected 1",
                    self.name,
                    i + 1
                )));
            }
        }
        for (j, latent) in self.latents.iter().enumerate() {
            let (ar, ma) = latent.arma()?;
            if ar.iter().chain(&ma).any(|c| !c.is_finite()) {
                return Err(Error::Config(format!("latent {}: non-finite coefficient", j + 1)));
            }
            if !is_stationary(&ar) {
                return Err(Error::Config(format!(
                    "scenario {}: latent {} is not stationary",
                    self.name,
                    j + 1
                )));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// The `n × K` mixing matrix `Λ`.
    pub fn mixing(&self) -> Array2<f64> {
        let (n, k) = (self.n_channels(), self.n_latents());
        Array2::from_shape_fn((n, k), |(i, j)| self.variance_shares[i][j].sqrt())
    }

    pub fn true_spectrum(&self) -> Result<TrueSpectrum> {
        self.validate()?;
        let latents = self
            .latents
            .iter()
            .map(|l| {
                let (ar, ma) = l.arma()?;
                let variance = arma_variance(&ar, &ma);
                Ok(LatentProcess { ar, ma, variance })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrueSpectrum {
            latents,
            mixing: self.mixing(),
            noise_var: self.noise_sd * self.noise_sd,
            channel_scale: vec![1.0; self.n_channels()],
        })
    }

    /// Draws a `len × n` series. Deterministic in `seed`.
    pub fn simulate(&self, len: usize, seed: u64) -> Result<MultiChannelSeries> {
        let truth = self.true_spectrum()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (self.n_channels(), self.n_latents());
        let mixing = self.mixing();
        let mut latent_paths = Array2::<f64>::zeros((len, k));
        for (j, latent) in truth.latents.iter().enumerate() {
            let path = latent.simulate(len, &mut rng);
            let sd = latent.variance.sqrt();
            for (t, z) in path.into_iter().enumerate() {
                latent_paths[[t, j]] = z / sd;
            }
        }
        let mut samples = latent_paths.dot(&mixing.t());
        for t in 0..len {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                samples[[t, i]] += self.noise_sd * e;
            }
        }
        MultiChannelSeries::new(samples, None)
    }
}

/// `len` samples of the first built-in scenario and its true spectrum.
pub fn gen_scenario1(len: usize, seed: u64) -> Result<(MultiChannelSeries, TrueSpectrum)> {
    generate(&Scenario::ar2_mixture(), len, seed)
}

/// `len` samples of the misspecified scenario and its true spectrum.
pub fn gen_scenario2(len: usize, seed: u64) -> Result<(MultiChannelSeries, TrueSpectrum)> {
    generate(&Scenario::misspecified(), len, seed)
}

fn generate(scenario: &Scenario, len: usize, seed: u64) -> Result<(MultiChannelSeries, TrueSpectrum)> {
    if len < 256 || len % 2 != 0 {
        return Err(Error::InvalidSeries(format!(
            "scenario length {len} must be even and at least 256"
        )));
    }
    Ok((scenario.simulate(len, seed)?, scenario.true_spectrum()?))
}

/// Independent per-replicate seeds derived from one master seed.
pub fn replicate_seed(master: u64, replicate: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replicate);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq)]
struct LatentProcess {
    ar: Vec<f64>,
    ma: Vec<f64>,
    variance: f64,
}

impl LatentProcess {
    fn simulate(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let total = len + GENERATION_BURNIN;
        let eps: Vec<f64> = (0..total).map(|_| StandardNormal.sample(rng)).collect();
        let mut z = vec![0.0; total];
        for t in 0..total {
            let mut v = eps[t];
            for (k, b) in self.ma.iter().enumerate() {
                if t > k {
                    v += b * eps[t - k - 1];
                }
            }
            for (k, a) in self.ar.iter().enumerate() {
                if t > k {
                    v += a * z[t - k - 1];
                }
            }
            z[t] = v;
        }
        z.split_off(GENERATION_BURNIN)
    }

    /// One-sided density of the unit-variance process.
    fn density(&self, omega: f64) -> f64 {
        2.0 * arma_spectrum(&self.ar, &self.ma, omega) / self.variance
    }
}

/// Two-sided spectral density of an ARMA process with unit innovation
/// variance: `|1 + Σ b_k e^{-i2πωk}|² / |1 - Σ a_k e^{-i2πωk}|²`.
pub fn arma_spectrum(ar: &[f64], ma: &[f64], omega: f64) -> f64 {
    let poly = |coeffs: &[f64], sign: f64| {
        coeffs.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (k, c)| {
            acc + sign * c * Complex64::from_polar(1.0, -2.0 * PI * omega * (k + 1) as f64)
        })
    };
    poly(ma, 1.0).norm_sqr() / poly(ar, -1.0).norm_sqr()
}

/// Variance of a causal ARMA process with unit innovations, from its
/// MA(∞) weights.
pub fn arma_variance(ar: &[f64], ma: &[f64]) -> f64 {
    const MAX_TERMS: usize = 2_000_000;
    const WINDOW: usize = 512;
    let mut weights: Vec<f64> = Vec::with_capacity(4096);
    let mut total = 0.0;
    let mut window_sum = 0.0;
    for j in 0..MAX_TERMS {
        let mut w = if j == 0 {
            1.0
        } else {
            ma.get(j - 1).copied().unwrap_or(0.0)
        };
        for (k, a) in ar.iter().enumerate() {
            if j > k {
                w += a * weights[j - k - 1];
            }
        }
        weights.push(w);
        total += w * w;
        window_sum += w * w;
        if (j + 1) % WINDOW == 0 {
            if j > ma.len() + ar.len() && window_sum <= 1e-17 * total {
                break;
            }
            window_sum = 0.0;
        }
    }
    total
}

/// Step-down (Schur–Cohn) test: all reflection coefficients inside the unit interval.
pub fn is_stationary(ar: &[f64]) -> bool {
    let mut a: Vec<f64> = ar.to_vec();
    while a.last() == Some(&0.0) {
        a.pop();
    }
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let p = a.len();
        let denom = 1.0 - k * k;
        a = (0..p - 1).map(|i| (a[i] + k * a[p - 2 - i]) / denom).collect();
    }
    true
}

/// Closed-form spectral matrix of a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueSpectrum {
    latents: Vec<LatentProcess>,
    mixing: Array2<f64>,
    noise_var: f64,
    channel_scale: Vec<f64>,
}

impl TrueSpectrum {
    pub fn n_channels(&self) -> usize {
        self.mixing.nrows()
    }

    /// One-sided density of latent `j` (unit variance).
    pub fn latent_density(&self, j: usize, omega: f64) -> f64 {
        self.latents[j].density(omega)
    }

    /// `S(ω) = C (Λ diag(f_j(ω)) Λᵀ + 2σ² I) C` with `C` the channel scaling.
    pub fn eval(&self, omega: f64) -> Array2<Complex64> {
        let f: Vec<f64> = (0..self.latents.len()).map(|j| self.latent_density(j, omega)).collect();
        let n = self.n_channels();
        Array2::from_shape_fn((n, n), |(a, b)| {
            let mut v: f64 = (0..f.len())
                .map(|j| self.mixing[[a, j]] * self.mixing[[b, j]] * f[j])
                .sum();
            if a == b {
                v += 2.0 * self.noise_var;
            }
            Complex64::new(v * self.channel_scale[a] * self.channel_scale[b], 0.0)
        })
    }

    pub fn on_grid(&self, grid: &[f64]) -> Vec<SpectralMatrix> {
        grid.iter()
            .map(|&freq| SpectralMatrix {
                freq,
                values: self.eval(freq),
            })
            .collect()
    }

    /// Channel variances, `Σ_j λ_ij² + σ²` before scaling.
    pub fn channel_variances(&self) -> Vec<f64> {
        (0..self.n_channels())
            .map(|i| {
                let v = self.mixing.row(i).iter().map(|l| l * l).sum::<f64>() + self.noise_var;
                v * self.channel_scale[i] * self.channel_scale[i]
            })
            .collect()
    }

    /// The spectrum of the channels scaled to unit variance, i.e. the
    /// target of a fit to standardized data.
    pub fn standardized(&self) -> TrueSpectrum {
        let variances = self.channel_variances();
        TrueSpectrum {
            channel_scale: self
                .channel_scale
                .iter()
                .zip(&variances)
                .map(|(c, v)| c / v.sqrt())
                .collect(),
            ..self.clone()
        }
    }
}

/// `points` equispaced frequencies covering `[0, 0.5]`, endpoints included.
pub fn frequency_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2, "a grid needs at least two points");
    (0..points).map(|i| 0.5 * i as f64 / (points - 1) as f64).collect()
}

fn check_grid(estimate: &[SpectralMatrix]) -> Result<()> {
    if estimate.len() < 2 {
        return Err(Error::GridMismatch("need at least two grid points".into()));
    }
    if estimate.windows(2).any(|w| !(w[1].freq > w[0].freq)) {
        return Err(Error::GridMismatch("grid must be strictly increasing".into()));
    }
    let (first, last) = (estimate[0].freq, estimate[estimate.len() - 1].freq);
    if first.abs() > 1e-12 || (last - 0.5).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid spans [{first}, {last}], expected [0, 0.5]"
        )));
    }
    Ok(())
}

/// `Σ_{i≤j} ∫₀^0.5 |Ŝ_ij(ω) - S_ij(ω)| dω` by the trapezoid rule.
pub fn iae_between(a: &[SpectralMatrix], b: &[SpectralMatrix]) -> Result<f64> {
    check_grid(a)?;
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.freq != y.freq) {
        return Err(Error::GridMismatch("estimates are on different grids".into()));
    }
    let n = a[0].values.nrows();
    if a.iter().chain(b).any(|s| s.values.dim() != (n, n)) {
        return Err(Error::Dimension("spectral matrices differ in size".into()));
    }
    let error_at = |x: &SpectralMatrix, y: &SpectralMatrix| {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..=i {
                total += (x.values[[i, j]] - y.values[[i, j]]).norm();
            }
        }
        total
    };
    let errors: Vec<f64> = a.iter().zip(b).map(|(x, y)| error_at(x, y)).collect();
    Ok(a.windows(2)
        .zip(errors.windows(2))
        .map(|(f, e)| 0.5 * (f[1].freq - f[0].freq) * (e[0] + e[1]))
        .sum())
}

/// IAE of an estimate against the truth evaluated on the estimate's grid.
pub fn iae(estimate: &[SpectralMatrix], truth: &TrueSpectrum) -> Result<f64> {
    check_grid(estimate)?;
    if estimate[0].values.nrows() != truth.n_channels() {
        return Err(Error::Dimension(format!(
            "estimate has {} channels, truth has {}",
            estimate[0].values.nrows(),
            truth.n_channels()
        )));
    }
    let grid: Vec<f64> = estimate.iter().map(|s| s.freq).collect();
    iae_between(estimate, &truth.on_grid(&grid))
}

/// Cross-periodogram `2 d(ω) d(ω)*`, averaged over `2h + 1` neighbouring
/// Fourier frequencies (truncated at the ends). The factor 2 puts it on the
/// one-sided scale of the model spectra.
pub fn periodogram_baseline(data: &FourierData, halfwidth: usize) -> Vec<SpectralMatrix> {
    let (m_total, n) = data.coeffs.dim();
    let raw: Vec<Array2<Complex64>> = (0..m_total)
        .map(|m| {
            let d = data.coeff(m);
            Array2::from_shape_fn((n, n), |(i, j)| 2.0 * d[i] * d[j].conj())
        })
        .collect();
    (0..m_total)
        .map(|m| {
            let lo = m.saturating_sub(halfwidth);
            let hi = (m + halfwidth).min(m_total - 1);
            let mut values = Array2::<Complex64>::zeros((n, n));
            for p in &raw[lo..=hi] {
                values += p;
            }
            values /= Complex64::new((hi - lo + 1) as f64, 0.0);
            SpectralMatrix {
                freq: data.freqs[m],
                values,
            }
        })
        .collect()
}

/// Linear interpolation of an estimate onto `grid`, held constant beyond
/// its first and last frequencies.
pub fn interpolate(estimate: &[SpectralMatrix], grid: &[f64]) -> Result<Vec<SpectralMatrix>> {
    if estimate.is_empty() {
        return Err(Error::GridMismatch("nothing to interpolate".into()));
    }
    if estimate.windows(2).any(|w| !(w[1].freq > w[0].freq)) {
        return Err(Error::GridMismatch("source grid must be strictly increasing".into()));
    }
    Ok(grid
        .iter()
        .map(|&freq| {
            let upper = estimate.partition_point(|s| s.freq < freq);
            let values = if upper == 0 {
                estimate[0].values.clone()
            } else if upper == estimate.len() {
                estimate[upper - 1].values.clone()
            } else {
                let (a, b) = (&estimate[upper - 1], &estimate[upper]);
                let w = (freq - a.freq) / (b.freq - a.freq);
                a.values.mapv(|v| v * (1.0 - w)) + b.values.mapv(|v| v * w)
            };
            SpectralMatrix { freq, values }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_density;
    use crate::whittle::{dft, standardize};

    #[test]
    fn scenario_one_mixing_row_five() {
        let m = Scenario::ar2_mixture().mixing();
        let row: Vec<f64> = m.row(4).to_vec();
        assert_eq!(row, vec![0.4f64.sqrt(), 0.0, 0.6f64.sqrt(), 0.0]);
        assert_eq!(m.dim(), (7, 4));
    }

    #[test]
    fn builtin_scenarios_validate() {
        Scenario::ar2_mixture().validate().unwrap();
        Scenario::misspecified().validate().unwrap();
        assert!(Scenario::builtin("nope").is_err());
    }

    #[test]
    fn stationarity_test() {
        assert!(is_stationary(&[0.8]));
        assert!(is_stationary(&[-0.8]));
        assert!(!is_stationary(&[1.0]));
        assert!(!is_stationary(&[0.5, 0.6]));
        let mut seasonal = vec![0.0; 12];
        seasonal[3] = 0.9;
        seasonal[7] = 0.7;
        seasonal[11] = -0.63;
        assert!(is_stationary(&seasonal));
        let ar2 = Ar2Kernel::new(0.005, 0.03).unwrap().coeffs();
        assert!(is_stationary(&[ar2.phi1, ar2.phi2]));
        assert!(is_stationary(&[]));
    }

    #[test]
    fn arma_variance_closed_forms() {
        assert!((arma_variance(&[0.8], &[]) - 1.0 / (1.0 - 0.64)).abs() < 1e-10);
        assert!((arma_variance(&[], &[0.6, -0.3, -0.6, -0.3]) - (1.0 + 0.36 + 0.09 + 0.36 + 0.09)).abs() < 1e-12);
        // AR(2): gamma0 = (1 - phi2) / ((1 + phi2)((1 - phi2)^2 - phi1^2)).
        let c = Ar2Kernel::new(0.06, 0.03).unwrap().coeffs();
        let exact = (1.0 - c.phi2) / ((1.0 + c.phi2) * ((1.0 - c.phi2).powi(2) - c.phi1 * c.phi1));
        assert!((arma_variance(&[c.phi1, c.phi2], &[]) / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ar2_latent_density_is_the_kernel() {
        let truth = Scenario::ar2_mixture().true_spectrum().unwrap();
        for &omega in &[0.001, 0.005, 0.1, 0.3, 0.49] {
            let k = kernel_density(&Ar2Kernel::new(0.005, 0.03).unwrap(), omega).unwrap();
            let f = truth.latent_density(0, omega);
            assert!((f / k - 1.0).abs() < 1e-8, "{omega}: {f} vs {k}");
        }
    }

    #[test]
    fn true_spectrum_integrates_to_variances() {
        for scenario in [Scenario::ar2_mixture(), Scenario::misspecified()] {
            let truth = scenario.true_spectrum().unwrap();
            let variances = truth.channel_variances();
            let grid = frequency_grid(200_001);
            let mut integral = vec![0.0; variances.len()];
            let mut prev = truth.eval(0.0);
            for w in grid.windows(2) {
                let next = truth.eval(w[1]);
                for (i, acc) in integral.iter_mut().enumerate() {
                    *acc += 0.5 * (w[1] - w[0]) * (prev[[i, i]].re + next[[i, i]].re);
                }
                prev = next;
            }
            for (i, (got, v)) in integral.iter().zip(&variances).enumerate() {
                assert!(
                    (got / v - 1.0).abs() < 1e-4,
                    "{}: channel {i}: {got} vs {v}",
                    scenario.name
                );
                assert!((v - 1.01).abs() < 1e-12);
            }
            let unit = truth.standardized().channel_variances();
            assert!(unit.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn ar1_shapes() {
        let grid = frequency_grid(200);
        let low: Vec<f64> = grid.iter().map(|&w| arma_spectrum(&[0.8], &[], w)).collect();
        let high: Vec<f64> = grid.iter().map(|&w| arma_spectrum(&[-0.8], &[], w)).collect();
        assert!(low.windows(2).all(|p| p[1] < p[0]));
        assert!(high.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn simulation_is_deterministic() {
        let (a, _) = gen_scenario1(512, 7).unwrap();
        let (b, _) = gen_scenario1(512, 7).unwrap();
        let (c, _) = gen_scenario1(512, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (d, _) = gen_scenario2(256, 1).unwrap();
        assert_eq!(d.samples().dim(), (256, 7));
        assert!(gen_scenario1(255, 1).is_err());
        assert!(gen_scenario1(128, 1).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::misspecified();
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
        let custom = r#"
            name = "pair"
            noise_sd = 0.2
            variance_shares = [[0.5, 0.5], [1.0, 0.0]]
            [[latents]]
            kind = "ar2"
            psi = 0.1
            log_mod = 0.05
            [[latents]]
            kind = "arma"
            ar = [0.5]
        "#;
        let parsed = Scenario::from_toml_str(custom).unwrap();
        assert_eq!(parsed.n_channels(), 2);
        let bad = custom.replace("[0.5, 0.5]", "[0.5, 0.6]");
        assert!(Scenario::from_toml_str(&bad).is_err());
        let explosive = custom.replace("ar = [0.5]", "ar = [1.5]");
        assert!(Scenario::from_toml_str(&explosive).is_err());
    }

    #[test]
    fn iae_of_truth_is_zero_and_constant_offset_is_half() {
        let truth = Scenario::ar2_mixture().true_spectrum().unwrap();
        let grid = frequency_grid(DEFAULT_GRID_POINTS);
        let exact = truth.on_grid(&grid);
        assert_eq!(iae(&exact, &truth).unwrap(), 0.0);
        let mut shifted = exact.clone();
        for s in &mut shifted {
            s.values[[2, 2]] += Complex64::new(3.0, 0.0);
        }
        assert!((iae(&shifted, &truth).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(iae(&exact[1..], &truth), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn baseline_raw_is_rank_one_and_parseval_holds() {
        let (series, _) = gen_scenario1(512, 3).unwrap();
        let series = standardize(&series).unwrap();
        let data = dft(&series);
        let raw = periodogram_baseline(&data, 0);
        let t = series.len();
        for ch in 0..7 {
            let x = series.samples().column(ch);
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let nyquist: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| if i % 2 == 0 { -v } else { *v })
                .sum::<f64>()
                .powi(2)
                / t as f64;
            let periodogram: f64 = raw.iter().map(|s| s.values[[ch, ch]].re / 2.0).sum();
            assert!((periodogram - (energy - nyquist) / 2.0).abs() < 1e-8 * energy);
        }
        // Rank one: every 2×2 minor vanishes.
        for s in raw.iter().take(20) {
            let v = &s.values;
            let minor = v[[0, 0]] * v[[1, 1]] - v[[0, 1]] * v[[1, 0]];
            assert!(minor.norm() < 1e-10 * (v[[0, 0]].norm() * v[[1, 1]].norm()).max(1e-300));
        }
    }

    #[test]
    fn interpolation_hits_nodes_and_clamps() {
        let src: Vec<SpectralMatrix> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&f| SpectralMatrix {
                freq: f,
                values: Array2::from_elem((1, 1), Complex64::new(10.0 * f, 0.0)),
            })
            .collect();
        let out = interpolate(&src, &[0.0, 0.1, 0.3, 0.5]).unwrap();
        let vals: Vec<f64> = out.iter().map(|s| s.values[[0, 0]].re).collect();
        assert_eq!(vals[0], 1.0);
        assert_eq!(vals[1], 1.0);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        assert_eq!(vals[3], 4.0);
    }

    #[test]
    fn replicate_seeds_differ() {
        let seeds: Vec<u64> = (0..50).map(|r| replicate_seed(11, r)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_eq!(replicate_seed(11, 3), seeds[3]);
    }
}
