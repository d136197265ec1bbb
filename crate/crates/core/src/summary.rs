//! Post-processing of chain traces: likelihood filtering, clustering of
//! component draws, pointwise-mean spectra and frequency-band tables.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Ar2Kernel;
use crate::mixture::{spectral_matrix, MixtureModel, SpectralMatrix};
use crate::sampler::ChainTrace;

/// A post-burn-in sweep kept by the likelihood filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainedSample {
    /// Position of the chain in the input list.
    pub chain: usize,
    /// Position of the snapshot within that chain.
    pub index: usize,
}

/// One row per (retained sweep, component): `[ψ, L, λ_1 .. λ_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedSamples {
    pub rows: Array2<f64>,
    /// Retained sweep of every row.
    pub sources: Vec<RetainedSample>,
    pub retained: Vec<RetainedSample>,
    /// Pooled log-likelihood quantile; retained sweeps lie strictly above it.
    pub threshold: f64,
    /// Smallest and largest `K` among retained sweeps.
    pub k_range: (usize, usize),
}

impl StackedSamples {
    pub fn n_channels(&self) -> usize {
        self.rows.ncols() - 2
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`x[(N-1)p]`, the common default).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pools the post-burn-in log-likelihoods of all chains, keeps the sweeps
/// strictly above their `quantile`, and stacks one row per component.
/// Snapshots with `iteration <= burnin` are discarded.
pub fn filter_top(traces: &[ChainTrace], burnin: usize, quantile_level: f64) -> Result<StackedSamples> {
    if traces.is_empty() {
        return Err(Error::EmptyRetention("no traces".into()));
    }
    if !(0.0..1.0).contains(&quantile_level) {
        return Err(Error::Config(format!("quantile {quantile_level} must lie in [0, 1)")));
    }
    let n = traces[0].n_channels;
    let mut pooled = Vec::new();
    let mut candidates = Vec::new();
    for (c, trace) in traces.iter().enumerate() {
        if trace.n_channels != n {
            return Err(Error::Dimension(format!(
                "chain {c} has {} channels, expected {n}",
                trace.n_channels
            )));
        }
        let last = trace.snapshots.last().map_or(0, |s| s.iteration);
        if burnin >= last {
            return Err(Error::Config(format!(
                "burn-in {burnin} leaves no sweeps in chain {} ({last} iterations)",
                trace.chain_id
            )));
        }
        for (i, s) in trace.snapshots.iter().enumerate() {
            if s.iteration > burnin {
                pooled.push(s.loglik);
                candidates.push(RetainedSample { chain: c, index: i });
            }
        }
    }
    let threshold = quantile(&pooled, quantile_level);
    let retained: Vec<RetainedSample> = candidates
        .into_iter()
        .zip(&pooled)
        .filter(|(_, &ll)| ll > threshold)
        .map(|(r, _)| r)
        .collect();
    if retained.is_empty() {
        return Err(Error::EmptyRetention(format!(
            "no sweep has log-likelihood above the {quantile_level} quantile {threshold}"
        )));
    }
    let mut data = Vec::new();
    let mut sources = Vec::new();
    let (mut k_min, mut k_max) = (usize::MAX, 0);
    for r in &retained {
        let s = &traces[r.chain].snapshots[r.index];
        k_min = k_min.min(s.k);
        k_max = k_max.max(s.k);
        for j in 0..s.k {
            data.push(s.psi[j]);
            data.push(s.log_mod[j]);
            data.extend((0..n).map(|i| s.lambda[i * s.k + j]));
            sources.push(*r);
        }
    }
    let rows = Array2::from_shape_vec((sources.len(), n + 2), data).expect("rows of n + 2 columns");
    Ok(StackedSamples {
        rows,
        sources,
        retained,
        threshold,
        k_range: (k_min, k_max),
    })
}

/// Model-selection criterion for the number of clusters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Integrated completed likelihood: BIC penalized by the assignment entropy.
    #[default]
    Icl,
    Bic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub criterion: Criterion,
    pub restarts: usize,
    pub variance_floor: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            criterion: Criterion::Icl,
            restarts: 10,
            variance_floor: 1e-8,
            max_iterations: 1000,
            seed: 0,
        }
    }
}

/// Diagonal-covariance Gaussian mixture fitted by EM.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    /// `G × d`.
    pub means: Array2<f64>,
    /// `G × d`.
    pub variances: Array2<f64>,
    pub loglik: f64,
    /// Posterior membership probabilities, `N × G`.
    pub responsibilities: Array2<f64>,
}

impl GaussianMixture {
    pub fn n_params(&self) -> usize {
        let (g, d) = self.means.dim();
        (g - 1) + 2 * g * d
    }

    /// `2 loglik - p ln N` (larger is better).
    pub fn bic(&self) -> f64 {
        let n = self.responsibilities.nrows() as f64;
        2.0 * self.loglik - self.n_params() as f64 * n.ln()
    }

    /// BIC plus twice the sum of `z ln z` over memberships (larger is better).
    pub fn icl(&self) -> f64 {
        let entropy: f64 = self
            .responsibilities
            .iter()
            .filter(|&&z| z > 0.0)
            .map(|&z| z * z.ln())
            .sum();
        self.bic() + 2.0 * entropy
    }

    pub fn score(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Icl => self.icl(),
            Criterion::Bic => self.bic(),
        }
    }

    /// Most probable cluster of every row.
    pub fn assignments(&self) -> Vec<usize> {
        self.responsibilities
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (g, &z)| if z > best.1 { (g, z) } else { best },
                    )
                    .0
            })
            .collect()
    }
}

fn log_normal_diag(x: ArrayView1<f64>, mean: ArrayView1<f64>, var: ArrayView1<f64>) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_3;
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((&x, &m), &v)| -0.5 * (LN_2PI + v.ln() + (x - m) * (x - m) / v))
        .sum()
}

/// One EM run from a k-means++ style start.
fn em_run(data: &Array2<f64>, g: usize, config: &ClusterConfig, rng: &mut ChaCha8Rng) -> GaussianMixture {
    let (n, d) = data.dim();
    let floor = config.variance_floor;
    let global_mean = data.mean_axis(ndarray::Axis(0)).expect("nonempty data");
    let global_var: Vec<f64> = (0..d)
        .map(|c| {
            let m = global_mean[c];
            (data.column(c).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).max(floor)
        })
        .collect();
    // Seeds: first uniformly, then proportional to scaled squared distance.
    let mut means = Array2::zeros((g, d));
    let first = rng.random_range(0..n);
    means.row_mut(0).assign(&data.row(first));
    let mut dist = vec![f64::INFINITY; n];
    for c in 1..g {
        let prev = means.row(c - 1).to_owned();
        for (i, row) in data.rows().into_iter().enumerate() {
            let d2: f64 = (0..d).map(|q| (row[q] - prev[q]).powi(2) / global_var[q]).sum();
            dist[i] = dist[i].min(d2);
        }
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        means.row_mut(c).assign(&data.row(pick));
    }
    let mut variances = Array2::from_shape_fn((g, d), |(_, q)| global_var[q]);
    let mut weights = vec![1.0 / g as f64; g];
    let mut resp = Array2::zeros((n, g));
    let mut loglik = f64::NEG_INFINITY;
    for _ in 0..config.max_iterations {
        // E step.
        let mut total = 0.0;
        for i in 0..n {
            let row = data.row(i);
            let mut logs = vec![0.0; g];
            for c in 0..g {
                logs[c] = weights[c].ln() + log_normal_diag(row, means.row(c), variances.row(c));
            }
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse;
            for c in 0..g {
                resp[[i, c]] = (logs[c] - lse).exp();
            }
        }
        let converged = (total - loglik).abs() <= 1e-10 * total.abs().max(1.0);
        loglik = total;
        if converged {
            break;
        }
        // M step.
        for c in 0..g {
            let nk: f64 = resp.column(c).sum();
            if nk <= 1e-12 {
                // Re-seed an empty component on a random row.
                let i = rng.random_range(0..n);
                means.row_mut(c).assign(&data.row(i));
                for q in 0..d {
                    variances[[c, q]] = global_var[q];
                }
                weights[c] = 1.0 / n as f64;
                continue;
            }
            weights[c] = nk / n as f64;
            for q in 0..d {
                let m = (0..n).map(|i| resp[[i, c]] * data[[i, q]]).sum::<f64>() / nk;
                let v = (0..n).map(|i| resp[[i, c]] * (data[[i, q]] - m).powi(2)).sum::<f64>() / nk;
                means[[c, q]] = m;
                variances[[c, q]] = v.max(floor);
            }
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
    }
    GaussianMixture {
        weights,
        means,
        variances,
        loglik,
        responsibilities: resp,
    }
}

/// Best of `config.restarts` EM runs with `g` components.
pub fn fit_gaussian_mixture(data: &Array2<f64>, g: usize, config: &ClusterConfig) -> Result<GaussianMixture> {
    if data.nrows() == 0 || g == 0 || g > data.nrows() {
        return Err(Error::Config(format!(
            "cannot fit {g} clusters to {} rows",
            data.nrows()
        )));
    }
    let runs: Vec<GaussianMixture> = (0..config.restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(((g as u64) << 32) | r);
            em_run(data, g, config, &mut rng)
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.loglik > best.loglik { run } else { best })
        .expect("at least one restart"))
}

/// Summary of one cluster of component draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Zero-based position after ordering by mean `ψ`.
    pub cluster: usize,
    pub count: usize,
    /// Cycles per sample.
    pub psi_mean: f64,
    pub psi_sd: f64,
    pub log_mod_mean: f64,
    pub log_mod_sd: f64,
    pub weight_mean: Vec<f64>,
    pub weight_sd: Vec<f64>,
}

impl ClusterReport {
    pub fn max_weight(&self) -> f64 {
        self.weight_mean.iter().cloned().fold(0.0, f64::max)
    }

    pub fn psi_hz(&self, sampling_rate: f64) -> f64 {
        self.psi_mean * sampling_rate
    }

    pub fn psi_sd_hz(&self, sampling_rate: f64) -> f64 {
        self.psi_sd * sampling_rate
    }

    pub fn band(&self, sampling_rate: f64) -> Band {
        Band::of_hz(self.psi_hz(sampling_rate))
    }
}

/// Clusters the stacked component draws with a diagonal Gaussian mixture,
/// trying every cluster count between the smallest and largest `K` among
/// retained sweeps, and reports member statistics ordered by mean `ψ`.
pub fn cluster_components(samples: &StackedSamples, config: &ClusterConfig) -> Result<Vec<ClusterReport>> {
    let rows = &samples.rows;
    if rows.nrows() < 2 {
        return Err(Error::EmptyRetention(format!(
            "clustering needs at least 2 rows, got {}",
            rows.nrows()
        )));
    }
    let distinct = rows
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<BTreeSet<_>>()
        .len();
    let (lo, hi) = samples.k_range;
    let hi = hi.min(distinct).max(1);
    let lo = lo.clamp(1, hi);
    let mut best: Option<(f64, GaussianMixture)> = None;
    for g in lo..=hi {
        let fit = fit_gaussian_mixture(rows, g, config)?;
        let score = fit.score(config.criterion);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, fit));
        }
    }
    let (_, fit) = best.expect("at least one candidate");
    Ok(reports_from_assignments(rows, &fit.assignments()))
}

/// Member statistics of hard-assigned clusters, ordered by mean `ψ`.
pub fn reports_from_assignments(rows: &Array2<f64>, labels: &[usize]) -> Vec<ClusterReport> {
    let n = rows.ncols() - 2;
    let groups = labels.iter().max().map_or(0, |m| m + 1);
    let mut reports: Vec<ClusterReport> = (0..groups)
        .filter_map(|g| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
            if members.is_empty() {
                return None;
            }
            let stat = |col: usize| {
                let vals: Vec<f64> = members.iter().map(|&i| rows[[i, col]]).collect();
                // Keep the mean inside the members' range despite rounding.
                let (lo, hi) = vals
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let mean = (vals.iter().sum::<f64>() / vals.len() as f64).clamp(lo, hi);
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                (mean, sd)
            };
            let (psi_mean, psi_sd) = stat(0);
            let (log_mod_mean, log_mod_sd) = stat(1);
            let (weight_mean, weight_sd) = (0..n).map(|i| stat(2 + i)).unzip();
            Some(ClusterReport {
                cluster: 0,
                count: members.len(),
                psi_mean,
                psi_sd,
                log_mod_mean,
                log_mod_sd,
                weight_mean,
                weight_sd,
            })
        })
        .collect();
    reports.sort_by(|a, b| a.psi_mean.total_cmp(&b.psi_mean));
    for (i, r) in reports.iter_mut().enumerate() {
        r.cluster = i;
    }
    reports
}

/// Pointwise mean of the spectral matrices of the retained sweeps.
pub fn mean_spectral_matrix(
    traces: &[ChainTrace],
    retained: &[RetainedSample],
    grid: &[f64],
) -> Result<Vec<SpectralMatrix>> {
    if retained.is_empty() {
        return Err(Error::EmptyRetention("no retained sweeps to average".into()));
    }
    let models = retained
        .iter()
        .map(|r| {
            traces
                .get(r.chain)
                .and_then(|t| t.snapshots.get(r.index))
                .ok_or_else(|| Error::Config(format!("retained sample {r:?} not in traces")))?
                .to_model()
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / models.len() as f64;
    grid.par_iter()
        .map(|&freq| {
            let mut acc: Option<SpectralMatrix> = None;
            for model in &models {
                let s = spectral_matrix(model, freq)?;
                match acc.as_mut() {
                    Some(a) => a.values += &s.values,
                    None => acc = Some(s),
                }
            }
            let mut mean = acc.expect("nonempty");
            mean.values.mapv_inplace(|v| v * scale);
            Ok(mean)
        })
        .collect()
}

/// Assembles a point-estimate model from cluster means: one kernel per
/// cluster whose maximum channel weight is at least `min_weight` (all
/// clusters if none qualifies), weight rows rescaled to unit sum of squares.
pub fn model_from_clusters(reports: &[ClusterReport], noise_var: f64, min_weight: f64) -> Result<MixtureModel> {
    let mut chosen: Vec<&ClusterReport> = reports.iter().filter(|r| r.max_weight() >= min_weight).collect();
    if chosen.is_empty() {
        chosen = reports.iter().collect();
    }
    let first = chosen
        .first()
        .ok_or_else(|| Error::EmptyRetention("no clusters to assemble a model from".into()))?;
    let n = first.weight_mean.len();
    let kernels = chosen
        .iter()
        .map(|r| Ar2Kernel {
            psi: r.psi_mean,
            log_mod: r.log_mod_mean,
        })
        .collect();
    let mut weights = Array2::from_shape_fn((n, chosen.len()), |(i, j)| chosen[j].weight_mean[i].max(0.0));
    for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain(format!(
                "channel {i} has zero weight on every kept cluster"
            )));
        }
        row.mapv_inplace(|w| (w / norm).min(1.0));
    }
    MixtureModel::new(kernels, weights, noise_var)
}

/// Mean noise level over the retained sweeps.
pub fn mean_noise_var(traces: &[ChainTrace], retained: &[RetainedSample]) -> f64 {
    retained
        .iter()
        .map(|r| traces[r.chain].snapshots[r.index].noise_var)
        .sum::<f64>()
        / retained.len().max(1) as f64
}

/// Classical EEG frequency bands, half-open in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
    /// 60 Hz and above.
    Above,
}

/// Band edges in Hz: `[0, 4, 8, 12, 30, 60)`.
pub const BAND_EDGES: [f64; 6] = [0.0, 4.0, 8.0, 12.0, 30.0, 60.0];

impl Band {
    pub const ALL: [Band; 6] = [
        Band::Delta,
        Band::Theta,
        Band::Alpha,
        Band::Beta,
        Band::Gamma,
        Band::Above,
    ];

    /// A frequency exactly on an edge belongs to the upper band.
    pub fn of_hz(hz: f64) -> Band {
        let upper = BAND_EDGES.partition_point(|&e| e <= hz);
        Band::ALL[upper.clamp(1, Band::ALL.len()) - 1]
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Delta => "Delta",
            Band::Theta => "Theta",
            Band::Alpha => "Alpha",
            Band::Beta => "Beta",
            Band::Gamma => "Gamma",
            Band::Above => "Above",
        }
    }
}

/// Cluster reports of one trial, labelled by task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub task: String,
    pub clusters: Vec<ClusterReport>,
}

/// One line of a band table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: Band,
    pub task: String,
    pub psi_hz: f64,
    pub log_mod: f64,
    pub lambda: f64,
    pub trials: usize,
}

pub const BAND_TABLE_HEADER: &str = "Band,Task,psi_bar (Hz),L_bar,lambda_bar,# Trials";

/// Mean weight over the channels the cluster loads (mean weight at least
/// `min_weight`).
pub fn loaded_weight(report: &ClusterReport, min_weight: f64) -> f64 {
    let loaded: Vec<f64> = report
        .weight_mean
        .iter()
        .cloned()
        .filter(|&w| w >= min_weight)
        .collect();
    if loaded.is_empty() {
        0.0
    } else {
        loaded.iter().sum::<f64>() / loaded.len() as f64
    }
}

/// Groups clusters with maximum channel weight at least `min_weight` by
/// (band, task). Each row averages `ψ` (in Hz), `L` and the loaded weight
/// over its clusters and counts the distinct trials contributing.
pub fn band_table(trials: &[TrialReport], sampling_rate: f64, min_weight: f64) -> Result<Vec<BandRow>> {
    if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
        return Err(Error::Config(format!("sampling rate {sampling_rate} must be positive")));
    }
    let mut tasks: Vec<&str> = Vec::new();
    for t in trials {
        if !tasks.contains(&t.task.as_str()) {
            tasks.push(&t.task);
        }
    }
    let mut rows = Vec::new();
    for band in Band::ALL {
        for &task in &tasks {
            let mut members = Vec::new();
            let mut contributing = BTreeSet::new();
            for (t, trial) in trials.iter().enumerate().filter(|(_, t)| t.task == task) {
                for c in &trial.clusters {
                    if c.max_weight() >= min_weight && c.band(sampling_rate) == band {
                        members.push(c);
                        contributing.insert(t);
                    }
                }
            }
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f64;
            rows.push(BandRow {
                band,
                task: task.to_string(),
                psi_hz: members.iter().map(|c| c.psi_hz(sampling_rate)).sum::<f64>() / m,
                log_mod: members.iter().map(|c| c.log_mod_mean).sum::<f64>() / m,
                lambda: members.iter().map(|c| loaded_weight(c, min_weight)).sum::<f64>() / m,
                trials: contributing.len(),
            });
        }
    }
    Ok(rows)
}

/// Renders a band table as CSV with the fixed header.
pub fn band_table_csv(rows: &[BandRow]) -> String {
    let mut out = String::from(BAND_TABLE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{:.4},{:.2},{}\n",
            r.band.label(),
            r.task,
            r.psi_hz,
            r.log_mod,
            r.lambda,
            r.trials
        ));
    }
    out
}
