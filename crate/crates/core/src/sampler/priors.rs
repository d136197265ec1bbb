//! Prior distributions of the sampler.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Prior on a peak location within its subinterval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsiPrior {
    #[default]
    Uniform,
    /// `Beta(2, 2)` rescaled to the subinterval.
    Beta22,
}

/// Prior on the log-modulus `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LogModPrior {
    /// `p(L) ∝ L⁻²` on `[min, ∞)`, i.e. density `min / L²`.
    Jeffreys { min: f64 },
    /// `U(0, max)`.
    Uniform { max: f64 },
}

impl Default for LogModPrior {
    fn default() -> Self {
        LogModPrior::Jeffreys { min: 1e-4 }
    }
}

/// What plays the role of the sample size in the DP prior on `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EffectiveCount {
    /// The current number of components.
    #[default]
    Components,
    /// A fixed count, e.g. the number of Fourier frequencies.
    Fixed { n: usize },
}

/// Prior on the number of components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KPrior {
    /// `p(K | α) ∝ α^K Γ(α)/Γ(α + N) |s(N, K)|` with `N` the effective count.
    DirichletProcess { count: EffectiveCount },
    /// Discrete uniform on `1..=max`.
    Uniform { max: usize },
}

impl Default for KPrior {
    fn default() -> Self {
        KPrior::DirichletProcess {
            count: EffectiveCount::Components,
        }
    }
}

/// Prior `p(σ²) ∝ 1/σ²` on `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub min: f64,
    pub max: f64,
}

impl Default for NoisePrior {
    fn default() -> Self {
        NoisePrior { min: 1e-6, max: 1e3 }
    }
}

/// All prior settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub psi: PsiPrior,
    pub log_mod: LogModPrior,
    pub k: KPrior,
    /// Shape of the `Γ(a, b)` prior on the DP precision.
    pub alpha_shape: f64,
    /// Rate of the `Γ(a, b)` prior on the DP precision.
    pub alpha_rate: f64,
    /// Stick-breaking truncation level `v`.
    pub truncation: usize,
    pub noise: NoisePrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            psi: PsiPrior::Uniform,
            log_mod: LogModPrior::default(),
            k: KPrior::default(),
            alpha_shape: 0.1,
            alpha_rate: 0.1,
            truncation: 50,
            noise: NoisePrior::default(),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.alpha_shape) || !positive(self.alpha_rate) {
            return Err(Error::Config("DP precision prior needs positive shape and rate".into()));
        }
        if self.truncation == 0 {
            return Err(Error::Config("truncation level must be positive".into()));
        }
        match self.log_mod {
            LogModPrior::Jeffreys { min } if !positive(min) => {
                return Err(Error::Config("Jeffreys lower bound must be positive".into()))
            }
            LogModPrior::Uniform { max } if !positive(max) => {
                return Err(Error::Config("uniform log-modulus bound must be positive".into()))
            }
            _ => {}
        }
        if let KPrior::Uniform { max: 0 } = self.k {
            return Err(Error::Config("uniform K prior needs max >= 1".into()));
        }
        if let KPrior::DirichletProcess {
            count: EffectiveCount::Fixed { n: 0 },
        } = self.k
        {
            return Err(Error::Config("effective count must be positive".into()));
        }
        if !(positive(self.noise.min) && self.noise.max > self.noise.min && self.noise.max.is_finite()) {
            return Err(Error::Config("noise prior needs 0 < min < max < inf".into()));
        }
        Ok(())
    }

    /// Largest admissible number of components.
    pub fn k_max(&self) -> usize {
        let cap = match self.k {
            KPrior::Uniform { max } => max,
            KPrior::DirichletProcess {
                count: EffectiveCount::Fixed { n },
            } => n,
            KPrior::DirichletProcess { .. } => usize::MAX,
        };
        cap.min(self.truncation)
    }

    pub fn log_psi(&self, psi: f64, lo: f64, hi: f64) -> f64 {
        if !(lo < psi && psi < hi) {
            return f64::NEG_INFINITY;
        }
        let width = hi - lo;
        match self.psi {
            PsiPrior::Uniform => -width.ln(),
            PsiPrior::Beta22 => {
                let u = (psi - lo) / width;
                (6.0 * u * (1.0 - u)).ln() - width.ln()
            }
        }
    }

    pub fn sample_psi<R: Rng>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        loop {
            let u = match self.psi {
                PsiPrior::Uniform => rng.random::<f64>(),
                PsiPrior::Beta22 => Beta::new(2.0, 2.0).expect("valid shape").sample(rng),
            };
            let psi = lo + u * (hi - lo);
            if lo < psi && psi < hi {
                return psi;
            }
        }
    }

    pub fn log_log_mod(&self, l: f64) -> f64 {
        match self.log_mod {
            LogModPrior::Jeffreys { min } if l >= min && l.is_finite() => min.ln() - 2.0 * l.ln(),
            LogModPrior::Uniform { max } if l > 0.0 && l < max => -max.ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn sample_log_mod<R: Rng>(&self, rng: &mut R) -> f64 {
        loop {
            // `random` draws from [0, 1); map to (0, 1] for the inverse CDF.
            let u = 1.0 - rng.random::<f64>();
            let l = match self.log_mod {
                LogModPrior::Jeffreys { min } => min / u,
                LogModPrior::Uniform { max } => max * (1.0 - u),
            };
            if self.log_log_mod(l).is_finite() {
                return l;
            }
        }
    }

    pub fn log_noise(&self, s2: f64) -> f64 {
        if s2 >= self.noise.min && s2 <= self.noise.max {
            -s2.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Log density of the interior cutoffs given `K`: uniform order
    /// statistics on `(0, 0.5)`, `(K-1)! / 0.5^(K-1)`.
    pub fn log_partition(&self, k: usize) -> f64 {
        ln_gamma(k as f64) + (k as f64 - 1.0) * 2f64.ln()
    }
}

/// Log prior weight of `K` components given `α`, up to terms constant in
/// both `K` and `α` (`-inf` outside the support).
pub struct KPriorTable {
    prior: KPrior,
    k_max: usize,
    log_stirling: Vec<f64>,
}

impl KPriorTable {
    pub fn new(priors: &PriorConfig) -> Self {
        let k_max = priors.k_max();
        let log_stirling = match priors.k {
            KPrior::DirichletProcess {
                count: EffectiveCount::Fixed { n },
            } => log_unsigned_stirling_first(n, k_max.min(n)),
            _ => Vec::new(),
        };
        KPriorTable {
            prior: priors.k,
            k_max,
            log_stirling,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn log_weight(&self, k: usize, alpha: f64) -> f64 {
        if k == 0 || k > self.k_max {
            return f64::NEG_INFINITY;
        }
        match self.prior {
            KPrior::Uniform { .. } => 0.0,
            KPrior::DirichletProcess {
                count: EffectiveCount::Components,
            } => {
                let kf = k as f64;
                kf * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + kf)
            }
            KPrior::DirichletProcess {
                count: EffectiveCount::Fixed { n },
            } => {
                let nf = n as f64;
                k as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + nf) + self.log_stirling[k]
            }
        }
    }
}

/// `log |s(n, k)|` for `k = 0..=k_max` (index 0 is `-inf` for `n >= 1`).
pub fn log_unsigned_stirling_first(n: usize, k_max: usize) -> Vec<f64> {
    // |s(m+1, k)| = m |s(m, k)| + |s(m, k-1)|, carried in log space.
    let mut row = vec![f64::NEG_INFINITY; k_max + 1];
    row[0] = 0.0;
    for m in 0..n {
        let log_m = (m as f64).ln();
        for k in (0..=k_max).rev() {
            let stay = if m == 0 { f64::NEG_INFINITY } else { log_m + row[k] };
            let step = if k == 0 { f64::NEG_INFINITY } else { row[k - 1] };
            row[k] = log_add(stay, step);
        }
    }
    row
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}
