//! Proposal distributions for components created by birth–death moves.
//!
//! A new peak location is drawn from a mixture of its prior and a
//! data-driven density proportional to the smoothed pooled periodogram,
//! restricted to the target subinterval; a new log-modulus from a mixture
//! of its prior and a log-uniform law on a bounded range. Both densities
//! are exact, so they enter the acceptance ratio of birth and death alike.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::priors::PriorConfig;
use crate::whittle::FourierData;

/// Mixture weights and ranges of the component proposal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentProposal {
    /// Weight of the periodogram-shaped density for `ψ` (the rest is the prior).
    pub psi_profile_weight: f64,
    /// Box half-width, in Fourier frequencies, of the profile smoothing.
    pub profile_halfwidth: usize,
    /// Weight of the log-uniform density for `L` (the rest is the prior).
    pub log_mod_range_weight: f64,
    /// Support `[lo, hi]` of the log-uniform density for `L`.
    pub log_mod_range: [f64; 2],
}

impl Default for ComponentProposal {
    fn default() -> Self {
        ComponentProposal {
            psi_profile_weight: 0.5,
            profile_halfwidth: 3,
            log_mod_range_weight: 0.5,
            log_mod_range: [1e-3, 1.0],
        }
    }
}

impl ComponentProposal {
    pub fn validate(&self) -> crate::error::Result<()> {
        let unit = |w: f64| (0.0..=1.0).contains(&w);
        let [lo, hi] = self.log_mod_range;
        if !unit(self.psi_profile_weight) || !unit(self.log_mod_range_weight) {
            return Err(crate::error::Error::Config(
                "proposal mixture weights must lie in [0, 1]".into(),
            ));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(crate::error::Error::Config(
                "log_mod_range needs 0 < lo < hi < inf".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-constant density on `[0, 0.5]`: one cell per Fourier
/// frequency, cell edges halfway between neighbouring frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProfile {
    /// Cell edges, `edges[0] = 0`, last `= 0.5`.
    edges: Vec<f64>,
    /// Density level on each cell.
    level: Vec<f64>,
    /// Integral of the level up to each edge.
    cumulative: Vec<f64>,
}

impl SpectralProfile {
    /// Builds a profile from cell centres and nonnegative levels. Levels are
    /// floored at a small fraction of their mean so every cell has mass.
    pub fn new(centres: &[f64], levels: &[f64]) -> Self {
        assert_eq!(centres.len(), levels.len());
        assert!(!centres.is_empty(), "profile needs at least one cell");
        let mut edges = Vec::with_capacity(centres.len() + 1);
        edges.push(0.0);
        for w in centres.windows(2) {
            edges.push(0.5 * (w[0] + w[1]));
        }
        edges.push(0.5);
        let mean = levels.iter().sum::<f64>() / levels.len() as f64;
        let floor = if mean > 0.0 { 1e-3 * mean } else { 1.0 };
        let level: Vec<f64> = levels.iter().map(|&v| v.max(floor)).collect();
        let mut cumulative = Vec::with_capacity(edges.len());
        cumulative.push(0.0);
        for (c, w) in edges.windows(2).enumerate() {
            let last = cumulative[c];
            cumulative.push(last + level[c] * (w[1] - w[0]));
        }
        SpectralProfile {
            edges,
            level,
            cumulative,
        }
    }

    /// Smoothed pooled periodogram `Σ_i |d_i(ω_m)|²`.
    pub fn from_data(data: &FourierData, halfwidth: usize) -> Self {
        let m_total = data.n_freqs();
        let pooled: Vec<f64> = (0..m_total)
            .map(|m| data.coeff(m).iter().map(|c| c.norm_sqr()).sum())
            .collect();
        let smoothed: Vec<f64> = (0..m_total)
            .map(|m| {
                let lo = m.saturating_sub(halfwidth);
                let hi = (m + halfwidth).min(m_total - 1);
                pooled[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        Self::new(&data.freqs, &smoothed)
    }

    fn cell(&self, x: f64) -> usize {
        let c = self.edges.partition_point(|&e| e <= x);
        c.clamp(1, self.level.len()) - 1
    }

    fn integral_to(&self, x: f64) -> f64 {
        let c = self.cell(x);
        self.cumulative[c] + self.level[c] * (x - self.edges[c])
    }

    /// Log density restricted and renormalized to `(lo, hi)`.
    pub fn log_density(&self, x: f64, lo: f64, hi: f64) -> f64 {
        if !(lo < x && x < hi) {
            return f64::NEG_INFINITY;
        }
        (self.level[self.cell(x)] / (self.integral_to(hi) - self.integral_to(lo))).ln()
    }

    /// Draws from the restricted density by inverting its CDF.
    pub fn sample<R: Rng>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let (a, b) = (self.integral_to(lo), self.integral_to(hi));
        loop {
            let target = a + rng.random::<f64>() * (b - a);
            let c = (self.cumulative.partition_point(|&v| v <= target)).clamp(1, self.level.len()) - 1;
            let x = self.edges[c] + (target - self.cumulative[c]) / self.level[c];
            if lo < x && x < hi {
                return x;
            }
        }
    }
}

/// `log(w e^a + (1-w) e^b)` with the conventions `0·(-inf) = 0`.
fn log_mix(w: f64, a: f64, b: f64) -> f64 {
    let terms = [(w, a), (1.0 - w, b)];
    let max = terms
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let total: f64 = terms
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|&(w, v)| w * (v - max).exp())
        .sum();
    max + total.ln()
}

/// Draws and scores new components.
#[derive(Clone, Debug)]
pub(crate) struct ComponentSampler {
    pub(crate) config: ComponentProposal,
    pub(crate) profile: Option<SpectralProfile>,
}

impl ComponentSampler {
    /// `1 / (L log(hi/lo))` on `[lo, hi]`.
    fn log_uniform_density(&self, l: f64) -> f64 {
        let [lo, hi] = self.config.log_mod_range;
        if l >= lo && l <= hi {
            -l.ln() - (hi / lo).ln().ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn profile_weight(&self) -> f64 {
        if self.profile.is_some() {
            self.config.psi_profile_weight
        } else {
            0.0
        }
    }

    /// Draws `(ψ, L)` for subinterval `(lo, hi)` and returns its log density.
    pub(crate) fn draw<R: Rng>(&self, priors: &PriorConfig, lo: f64, hi: f64, rng: &mut R) -> (f64, f64, f64) {
        let psi = match &self.profile {
            Some(profile) if rng.random::<f64>() < self.profile_weight() => profile.sample(lo, hi, rng),
            _ => priors.sample_psi(lo, hi, rng),
        };
        let l = if rng.random::<f64>() < self.config.log_mod_range_weight {
            let [a, b] = self.config.log_mod_range;
            loop {
                let l = a * (b / a).powf(rng.random::<f64>());
                if l >= a && l <= b {
                    break l;
                }
            }
        } else {
            priors.sample_log_mod(rng)
        };
        (psi, l, self.log_density(priors, psi, l, lo, hi))
    }

    pub(crate) fn log_density(&self, priors: &PriorConfig, psi: f64, l: f64, lo: f64, hi: f64) -> f64 {
        let log_psi = match &self.profile {
            Some(profile) => log_mix(
                self.profile_weight(),
                profile.log_density(psi, lo, hi),
                priors.log_psi(psi, lo, hi),
            ),
            None => priors.log_psi(psi, lo, hi),
        };
        let log_l = log_mix(
            self.config.log_mod_range_weight,
            self.log_uniform_density(l),
            priors.log_log_mod(l),
        );
        log_psi + log_l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile() -> SpectralProfile {
        let centres: Vec<f64> = (1..50).map(|m| m as f64 / 100.0).collect();
        let levels: Vec<f64> = centres
            .iter()
            .map(|w| 1.0 + 50.0 * (-((w - 0.2) / 0.02f64).powi(2)).exp())
            .collect();
        SpectralProfile::new(&centres, &levels)
    }

    #[test]
    fn restricted_density_integrates_to_one() {
        let p = profile();
        for &(lo, hi) in &[(0.0, 0.5), (0.13, 0.27), (0.199, 0.2001)] {
            // The density is constant between cell edges, so the midpoint
            // rule on the pieces is exact.
            let mut cuts: Vec<f64> = p.edges.iter().cloned().filter(|&e| lo < e && e < hi).collect();
            cuts.insert(0, lo);
            cuts.push(hi);
            let total: f64 = cuts
                .windows(2)
                .map(|w| p.log_density(0.5 * (w[0] + w[1]), lo, hi).exp() * (w[1] - w[0]))
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "({lo}, {hi}): {total}");
        }
    }

    #[test]
    fn samples_follow_the_density() {
        let p = profile();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lo, hi) = (0.1, 0.3);
        let draws: Vec<f64> = (0..200_000).map(|_| p.sample(lo, hi, &mut rng)).collect();
        assert!(draws.iter().all(|&x| lo < x && x < hi));
        for &(a, b) in &[(0.1, 0.15), (0.18, 0.22), (0.25, 0.3)] {
            let freq = draws.iter().filter(|&&x| a < x && x <= b).count() as f64 / draws.len() as f64;
            let n = 10_000;
            let h = (b - a) / n as f64;
            let mass: f64 = (0..n)
                .map(|i| p.log_density(a + (i as f64 + 0.5) * h, lo, hi).exp() * h)
                .sum();
            assert!((freq - mass).abs() < 5e-3, "[{a}, {b}]: {freq} vs {mass}");
        }
    }

    #[test]
    fn component_density_matches_draws() {
        let priors = PriorConfig::default();
        let sampler = ComponentSampler {
            config: ComponentProposal::default(),
            profile: Some(profile()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Mass of L in [0.01, 0.1]: half log-uniform, half Jeffreys(1e-4).
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let (_, l, q) = sampler.draw(&priors, 0.1, 0.3, &mut rng);
                assert!(q.is_finite());
                (0.01..=0.1).contains(&l)
            })
            .count() as f64
            / n as f64;
        let expected = 0.5 * (10f64.ln() / 1000f64.ln()) + 0.5 * (1e-4 / 0.01 - 1e-4 / 0.1);
        assert!((hits - expected).abs() < 5e-3, "{hits} vs {expected}");
    }

    #[test]
    fn scored_density_matches_draws() {
        // Importance weights between the proposal and the prior average to
        // one in both directions only if the scored density is the law of
        // the draws.
        let priors = PriorConfig::default();
        let sampler = ComponentSampler {
            config: ComponentProposal::default(),
            profile: Some(profile()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (lo, hi) = (0.1, 0.3);
        let n = 400_000;
        let (mut prior_over_q, mut q_over_prior) = (0.0, 0.0);
        for _ in 0..n {
            let (psi, l, q) = sampler.draw(&priors, lo, hi, &mut rng);
            prior_over_q += (priors.log_psi(psi, lo, hi) + priors.log_log_mod(l) - q).exp();
            let (psi, l) = (priors.sample_psi(lo, hi, &mut rng), priors.sample_log_mod(&mut rng));
            q_over_prior +=
                (sampler.log_density(&priors, psi, l, lo, hi) - priors.log_psi(psi, lo, hi) - priors.log_log_mod(l))
                    .exp();
        }
        let (a, b) = (prior_over_q / n as f64, q_over_prior / n as f64);
        assert!((a - 1.0).abs() < 0.02, "E_q[p/q] = {a}");
        assert!((b - 1.0).abs() < 0.02, "E_p[q/p] = {b}");
    }

    #[test]
    fn log_mix_handles_empty_terms() {
        assert_eq!(log_mix(0.0, f64::NEG_INFINITY, 0.5), 0.5);
        assert_eq!(log_mix(1.0, 0.25, f64::NEG_INFINITY), 0.25);
        assert_eq!(log_mix(0.5, f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((log_mix(0.5, 0.0, 0.0)).abs() < 1e-15);
    }
}
