//! Data ingestion, standardization, Fourier transform and the multivariate
//! Whittle log-likelihood.
//!
//! Series are read from CSV (rows = time, columns = channels, optional
//! header). The DFT keeps the Fourier frequencies `m/T`, `m = 1..T/2-1`,
//! with coefficients `d(ω_m) = T^{-1/2} Σ_{t=1..T} X(t) exp(-2πi ω_m t)`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::hermitian_logdet_quad;
use crate::mixture::{spectral_matrix, MixtureModel};

/// Minimum accepted series length.
pub const MIN_LEN: usize = 16;

/// A `T × n` real multichannel series.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelSeries {
    samples: Array2<f64>,
    sampling_rate: Option<f64>,
}

/// Fourier coefficients at `ω_m = m/T`, `m = 1..T/2-1`; `coeffs` is `M × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierData {
    pub freqs: Vec<f64>,
    pub coeffs: Array2<Complex64>,
    pub series_len: usize,
}

impl MultiChannelSeries {
    /// Validates length (even, at least 16), channel count and finiteness.
    pub fn new(samples: Array2<f64>, sampling_rate: Option<f64>) -> Result<Self> {
        let (t, n) = samples.dim();
        if n == 0 {
            return Err(Error::InvalidSeries("series has no channels".into()));
        }
        if t < MIN_LEN || t % 2 != 0 {
            return Err(Error::InvalidSeries(format!(
                "series length {t} must be even and at least {MIN_LEN}"
            )));
        }
        if let Some((idx, _)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at row {}, channel {}",
                idx / n + 1,
                idx % n + 1
            )));
        }
        if let Some(rate) = sampling_rate {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::InvalidSeries(format!("sampling rate {rate} must be positive")));
            }
        }
        Ok(MultiChannelSeries { samples, sampling_rate })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn sampling_rate(&self) -> Option<f64> {
        self.sampling_rate
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    /// Reads CSV; a first row that does not parse as numbers is a header.
    pub fn from_csv_reader<R: Read>(reader: R, sampling_rate: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut values = Vec::new();
        let mut width = None;
        let mut rows = 0;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let row_number = line + 1;
            if line == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
                width = Some(record.len());
                continue;
            }
            let expected = *width.get_or_insert(record.len());
            if record.len() != expected {
                return Err(Error::RaggedRow {
                    row: row_number,
                    found: record.len(),
                    expected,
                });
            }
            for (column, field) in record.iter().enumerate() {
                let v = field.parse::<f64>().map_err(|e| Error::Parse {
                    row: row_number,
                    column: column + 1,
                    message: e.to_string(),
                })?;
                values.push(v);
            }
            rows += 1;
        }
        let n = width.unwrap_or(0);
        let samples = Array2::from_shape_vec((rows, n), values).map_err(|e| Error::InvalidSeries(e.to_string()))?;
        Self::new(samples, sampling_rate)
    }

    pub fn from_csv_path(path: &Path, sampling_rate: Option<f64>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), sampling_rate)
    }

    /// Writes CSV with a `ch1,…,chn` header and shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.n_channels()).map(|i| format!("ch{i}")).collect();
        wtr.write_record(&header)?;
        for row in self.samples.rows() {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Centers each column and scales it to unit sample variance (divisor `T - 1`).
pub fn standardize_columns(samples: &Array2<f64>) -> Result<Array2<f64>> {
    let t = samples.nrows();
    if t < 2 {
        return Err(Error::InvalidSeries("need at least two samples".into()));
    }
    let mut out = samples.clone();
    for (channel, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / t as f64;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / (t - 1) as f64;
        if !(var > 0.0) || var.sqrt() <= 1e-12 * mean.abs() {
            return Err(Error::ConstantChannel { channel: channel + 1 });
        }
        let sd = var.sqrt();
        col.mapv_inplace(|v| v / sd);
        // A second centering pass removes the rounding left by the first.
        let residual = col.sum() / t as f64;
        col.mapv_inplace(|v| v - residual);
    }
    Ok(out)
}

/// Per-channel mean 0 and sample variance 1.
pub fn standardize(series: &MultiChannelSeries) -> Result<MultiChannelSeries> {
    Ok(MultiChannelSeries {
        samples: standardize_columns(&series.samples)?,
        sampling_rate: series.sampling_rate,
    })
}

/// Fourier coefficients at `m = 1..T/2-1`.
pub fn dft(series: &MultiChannelSeries) -> FourierData {
    let (t, n) = series.samples.dim();
    let n_freq = t / 2 - 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(t);
    let scale = 1.0 / (t as f64).sqrt();
    let mut coeffs = Array2::zeros((n_freq, n));
    let mut buffer = vec![Complex64::default(); t];
    for (ch, col) in series.samples.axis_iter(Axis(1)).enumerate() {
        for (b, &x) in buffer.iter_mut().zip(col.iter()) {
            *b = Complex64::new(x, 0.0);
        }
        fft.process(&mut buffer);
        for m in 1..=n_freq {
            // Time runs from t = 1, so shift the FFT phase by one sample.
            let shift = Complex64::from_polar(scale, -2.0 * PI * m as f64 / t as f64);
            coeffs[[m - 1, ch]] = buffer[m] * shift;
        }
    }
    FourierData {
        freqs: (1..=n_freq).map(|m| m as f64 / t as f64).collect(),
        coeffs,
        series_len: t,
    }
}

impl FourierData {
    pub fn n_channels(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }

    pub fn coeff(&self, m: usize) -> ArrayView1<'_, Complex64> {
        self.coeffs.row(m)
    }

    /// Reorders channels; `order[i]` is the source channel of output channel `i`.
    pub fn permute_channels(&self, order: &[usize]) -> FourierData {
        FourierData {
            freqs: self.freqs.clone(),
            coeffs: self.coeffs.select(Axis(1), order),
            series_len: self.series_len,
        }
    }
}

/// `-Σ_m {log|S(ω_m)| + d(ω_m)* S(ω_m)⁻¹ d(ω_m)}` for an arbitrary Hermitian
/// `S` supplied per frequency index.
pub fn whittle_loglik_with<F>(data: &FourierData, mut spectrum: F) -> Result<f64>
where
    F: FnMut(usize, f64) -> Result<Array2<Complex64>>,
{
    let n = data.n_channels();
    let mut total = 0.0;
    let mut d = vec![Complex64::default(); n];
    for (m, &freq) in data.freqs.iter().enumerate() {
        let s = spectrum(m, freq)?;
        if s.dim() != (n, n) {
            return Err(Error::Dimension(format!(
                "spectral matrix is {:?}, data has {n} channels",
                s.dim()
            )));
        }
        for (dst, src) in d.iter_mut().zip(data.coeff(m).iter()) {
            *dst = *src;
        }
        let (logdet, quad) = hermitian_logdet_quad(&s, &d).ok_or(Error::NotPositiveDefinite { freq })?;
        total -= logdet + quad;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("Whittle log-likelihood".into()));
    }
    Ok(total)
}

/// Whittle log-likelihood of a mixture model.
///
/// The kernels are one-sided densities (integrating to one over `[0, 0.5]`),
/// while `d(ω_m)` has covariance equal to the two-sided spectrum. The
/// likelihood therefore evaluates the Whittle formula at `S_XX(ω)/2`, which
/// makes unit-variance oscillations fit with their true bandwidth.
pub fn whittle_loglik(data: &FourierData, model: &MixtureModel) -> Result<f64> {
    if model.n_channels() != data.n_channels() {
        return Err(Error::Dimension(format!(
            "model has {} channels, data has {}",
            model.n_channels(),
            data.n_channels()
        )));
    }
    whittle_loglik_with(data, |_, freq| {
        Ok(spectral_matrix(model, freq)?.values.mapv(|v| v * 0.5))
    })
}
