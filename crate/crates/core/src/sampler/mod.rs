//! Metropolis-within-Gibbs sampler for the oscillation mixture.
//!
//! One sweep updates, in order: the number of components (birth–death),
//! the partition cutoffs, peak locations, log-moduli, sticks, atoms, the
//! noise level and the DP precision. Chains are deterministic given the
//! seed and chain id; independent chains run in parallel.

mod birth_death;
mod chain;
pub mod priors;
pub mod proposal;
pub mod state;
pub mod target;
pub mod trace;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chain::{alpha_mixture, AlphaMixture, Coordinate, MoveStats, Sampler};
pub use priors::{EffectiveCount, KPrior, LogModPrior, NoisePrior, PriorConfig, PsiPrior};
pub use proposal::{ComponentProposal, SpectralProfile};
pub use state::{atom_bin, weights_from_sticks, ChainState};
pub use target::{Change, FlatTarget, FnTarget, Target, WhittleTarget};
pub use trace::{ChainTrace, Snapshot};

use crate::error::{Error, Result};
use crate::whittle::FourierData;

/// Random-walk proposal scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalScales {
    /// Peak-location step as a fraction of the subinterval width.
    pub psi_fraction: f64,
    /// Log-scale step for `L`.
    pub log_mod: f64,
    /// Log-scale step for the noise level.
    pub noise: f64,
    /// Logit-scale step for sticks.
    pub stick: f64,
    /// Logit-scale step for atoms.
    pub atom: f64,
    /// Cutoff step as a fraction of the gap between neighbouring peaks.
    pub cutoff_fraction: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            psi_fraction: 0.2,
            log_mod: 0.15,
            noise: 0.15,
            stick: 0.3,
            atom: 0.3,
            cutoff_fraction: 0.2,
        }
    }
}

/// How a birth or death fills in the kernel parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BirthDeathMode {
    /// Every component touched by the move is redrawn from its prior.
    Redraw,
    /// The selected component keeps its parameters; only the component
    /// created by a birth (or removed by a death) is drawn from the prior.
    #[default]
    KeepSelected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BirthDeathConfig {
    pub mode: BirthDeathMode,
    /// Move active atoms along with their bins when `K` changes, so the
    /// weights of untouched components are preserved.
    pub relocate_atoms: bool,
    /// How new components are drawn.
    pub proposal: ComponentProposal,
}

impl Default for BirthDeathConfig {
    fn default() -> Self {
        BirthDeathConfig {
            mode: BirthDeathMode::KeepSelected,
            relocate_atoms: true,
            proposal: ComponentProposal::default(),
        }
    }
}

/// Starting point of every chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub k: usize,
    pub log_mod: f64,
    pub noise_var: f64,
    pub alpha: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            k: 3,
            log_mod: 0.5,
            noise_var: 0.1,
            alpha: 1.0,
        }
    }
}

/// Which blocks a sweep updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateSet {
    pub birth_death: bool,
    pub cutoffs: bool,
    pub psi: bool,
    pub log_mod: bool,
    pub sticks: bool,
    pub atoms: bool,
    pub noise: bool,
    pub alpha: bool,
    /// Exchange the atoms of two components, per channel and for all
    /// channels at once, so channels can change oscillation without the
    /// ordered peaks crossing.
    pub swaps: bool,
}

impl Default for UpdateSet {
    fn default() -> Self {
        UpdateSet {
            birth_death: true,
            cutoffs: true,
            psi: true,
            log_mod: true,
            sticks: true,
            atoms: true,
            noise: true,
            alpha: true,
            swaps: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    #[default]
    Metropolis,
    /// Accept only proposals that do not lower the log-likelihood; a
    /// plumbing check, not a sampler.
    HillClimb,
}

/// Random number generator identity, recorded for reproducibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RngAlgorithm {
    /// ChaCha with 8 rounds; the chain id selects the stream.
    #[default]
    Chacha8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    /// Keep every `thin`-th sweep in the trace.
    pub thin: usize,
    pub priors: PriorConfig,
    pub proposals: ProposalScales,
    pub birth_death: BirthDeathConfig,
    pub init: InitConfig,
    /// Sticks whose remaining mass, and atoms whose weight, fall below this
    /// get no individual random-walk step; instead each channel's inactive
    /// sticks and atoms are redrawn jointly from the prior in one step.
    /// Zero updates everything individually.
    pub active_threshold: f64,
    pub updates: UpdateSet,
    pub acceptance: AcceptanceRule,
    pub rng: RngAlgorithm,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 50_000,
            thin: 1,
            priors: PriorConfig::default(),
            proposals: ProposalScales::default(),
            birth_death: BirthDeathConfig::default(),
            init: InitConfig::default(),
            active_threshold: 1e-3,
            updates: UpdateSet::default(),
            acceptance: AcceptanceRule::default(),
            rng: RngAlgorithm::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.birth_death.proposal.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        let p = &self.proposals;
        for (name, v) in [
            ("psi_fraction", p.psi_fraction),
            ("log_mod", p.log_mod),
            ("noise", p.noise),
            ("stick", p.stick),
            ("atom", p.atom),
            ("cutoff_fraction", p.cutoff_fraction),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("proposal scale {name} must be >= 0")));
            }
        }
        if !(self.active_threshold >= 0.0 && self.active_threshold < 1.0) {
            return Err(Error::Config("active_threshold must lie in [0, 1)".into()));
        }
        let init = &self.init;
        if init.k == 0 || init.k > self.priors.k_max() {
            return Err(Error::Config(format!(
                "initial K = {} outside 1..={}",
                init.k,
                self.priors.k_max()
            )));
        }
        if !(init.log_mod > 0.0 && init.alpha > 0.0) {
            return Err(Error::Config("initial log_mod and alpha must be positive".into()));
        }
        if self.priors.log_noise(init.noise_var) == f64::NEG_INFINITY {
            return Err(Error::Config("initial noise level outside its prior support".into()));
        }
        if self.priors.log_log_mod(init.log_mod) == f64::NEG_INFINITY {
            return Err(Error::Config("initial log_mod outside its prior support".into()));
        }
        Ok(())
    }
}

/// Runs one chain on Fourier data.
pub fn run_chain(data: &FourierData, config: &SamplerConfig, seed: u64, chain_id: u64) -> Result<ChainTrace> {
    if data.n_freqs() == 0 {
        return Err(Error::InvalidSeries("no Fourier frequencies".into()));
    }
    let target = WhittleTarget::new(data);
    let mut sampler = Sampler::new(target, data.n_channels(), config.clone(), seed, chain_id)?;
    sampler.set_psi_profile(Some(SpectralProfile::from_data(
        data,
        config.birth_death.proposal.profile_halfwidth,
    )));
    sampler.run(config.iterations)
}

/// Runs `chains` independent chains (ids `0..chains`) on the current rayon pool.
pub fn run_chains(data: &FourierData, config: &SamplerConfig, seed: u64, chains: usize) -> Result<Vec<ChainTrace>> {
    (0..chains as u64)
        .into_par_iter()
        .map(|id| run_chain(data, config, seed, id))
        .collect()
}
