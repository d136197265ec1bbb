//! The chain driver and the fixed-dimension updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::priors::{EffectiveCount, KPrior, KPriorTable};
use super::proposal::{ComponentSampler, SpectralProfile};
use super::state::{atom_bin, logit, softplus, ChainState};
use super::target::{Change, Target};
use super::trace::{ChainTrace, Snapshot};
use super::{AcceptanceRule, SamplerConfig};
use crate::error::Result;

/// A coordinate updated by a single random-walk Metropolis step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Psi(usize),
    LogMod(usize),
    /// Stick `h` of channel `i`.
    Stick(usize, usize),
    /// Atom `h` of channel `i`.
    Atom(usize, usize),
    Noise,
}

/// Proposal and acceptance counts per move type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub psi: [u64; 2],
    pub log_mod: [u64; 2],
    pub stick: [u64; 2],
    pub atom: [u64; 2],
    pub noise: [u64; 2],
    pub cutoff: [u64; 2],
    pub birth: [u64; 2],
    pub death: [u64; 2],
    #[serde(default)]
    pub swap: [u64; 2],
    /// Joint prior refreshes of the inactive sticks and atoms.
    #[serde(default)]
    pub tail: [u64; 2],
}

impl MoveStats {
    pub(crate) fn record(slot: &mut [u64; 2], accepted: bool) {
        slot[0] += 1;
        slot[1] += accepted as u64;
    }

    /// Acceptance rate of a `[proposed, accepted]` pair.
    pub fn rate(slot: [u64; 2]) -> f64 {
        if slot[0] == 0 {
            f64::NAN
        } else {
            slot[1] as f64 / slot[0] as f64
        }
    }
}

/// Two-component gamma mixture of the auxiliary-variable DP precision update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaMixture {
    /// Probability of the first component.
    pub weight: f64,
    pub shape_first: f64,
    pub shape_second: f64,
    pub rate: f64,
}

/// Mixture for `α | η, K` with `Γ(shape, rate)` prior (already including
/// any stick terms), `k` components and effective count `n_eff`.
pub fn alpha_mixture(shape: f64, rate: f64, k: usize, n_eff: usize, eta: f64) -> AlphaMixture {
    let rate = rate - eta.ln();
    let kf = k as f64;
    let odds = (shape + kf - 1.0) / (n_eff as f64 * rate);
    AlphaMixture {
        weight: odds / (1.0 + odds),
        shape_first: shape + kf,
        shape_second: shape + kf - 1.0,
        rate,
    }
}

/// Reflects `x` into `[lo, hi]`.
pub(crate) fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * width);
    if y > width {
        y = 2.0 * width - y;
    }
    lo + y
}

/// One Metropolis-within-Gibbs chain over a likelihood target.
pub struct Sampler<T: Target> {
    pub(crate) state: ChainState,
    pub(crate) target: T,
    pub(crate) config: SamplerConfig,
    pub(crate) k_prior: KPriorTable,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) stats: MoveStats,
    pub(crate) components: ComponentSampler,
    seed: u64,
    chain_id: u64,
}

impl<T: Target> Sampler<T> {
    /// Builds the configured initial state with the stream `chain_id` of `seed`.
    pub fn new(target: T, n_channels: usize, config: SamplerConfig, seed: u64, chain_id: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain_id);
        let init = config.init;
        let state = ChainState::initial(
            n_channels,
            config.priors.truncation,
            init.k,
            init.log_mod,
            init.noise_var,
            init.alpha,
            &mut rng,
        )?;
        Self::with_state(target, state, config, rng, seed, chain_id)
    }

    /// Starts from an explicit state.
    pub fn with_state(
        mut target: T,
        state: ChainState,
        config: SamplerConfig,
        rng: ChaCha8Rng,
        seed: u64,
        chain_id: u64,
    ) -> Result<Self> {
        config.validate()?;
        state.validate()?;
        target.reset(&state)?;
        Ok(Sampler {
            k_prior: KPriorTable::new(&config.priors),
            components: ComponentSampler {
                config: config.birth_death.proposal,
                profile: None,
            },
            state,
            target,
            config,
            rng,
            stats: MoveStats::default(),
            seed,
            chain_id,
        })
    }

    /// Sets the data-driven density used to place new peaks; `None` draws
    /// them from the prior only.
    pub fn set_psi_profile(&mut self, profile: Option<SpectralProfile>) {
        self.components.profile = profile;
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn loglik(&self) -> f64 {
        self.target.loglik()
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub(crate) fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Metropolis decision for a proposal whose log target ratio is
    /// `log_ratio` and whose log-likelihoods are `new` and `old`.
    pub(crate) fn decide(&mut self, log_ratio: f64, new: f64, old: f64) -> bool {
        match self.config.acceptance {
            AcceptanceRule::Metropolis => {
                if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
                    return false;
                }
                if log_ratio >= 0.0 {
                    return true;
                }
                let u: f64 = self.rng.random();
                u.ln() < log_ratio
            }
            AcceptanceRule::HillClimb => log_ratio > f64::NEG_INFINITY && new >= old,
        }
    }

    /// Evaluates a proposal already written into the state, then accepts it
    /// or asks the caller to roll back. `log_extra` holds prior and Jacobian terms.
    fn finish(&mut self, change: Change, log_extra: f64) -> Result<bool> {
        let old = self.target.loglik();
        if log_extra == f64::NEG_INFINITY {
            return Ok(false);
        }
        let new = self.target.propose(&self.state, change)?;
        let accepted = self.decide(new - old + log_extra, new, old);
        if accepted {
            self.target.accept();
        } else {
            self.target.reject();
        }
        Ok(accepted)
    }

    /// One random-walk Metropolis step on a single coordinate.
    pub fn mh_update_continuous(&mut self, which: Coordinate) -> Result<bool> {
        let accepted = match which {
            Coordinate::Psi(j) => self.update_psi(j)?,
            Coordinate::LogMod(j) => self.update_log_mod(j)?,
            Coordinate::Stick(i, h) => self.update_stick(i, h)?,
            Coordinate::Atom(i, h) => self.update_atom(i, h)?,
            Coordinate::Noise => self.update_noise()?,
        };
        Ok(accepted)
    }

    fn update_psi(&mut self, j: usize) -> Result<bool> {
        let (lo, hi) = (self.state.cutoffs[j], self.state.cutoffs[j + 1]);
        let old = self.state.psi[j];
        let step = self.config.proposals.psi_fraction * (hi - lo) * self.normal();
        let new = reflect(old + step, lo, hi);
        let priors = &self.config.priors;
        let log_extra = priors.log_psi(new, lo, hi) - priors.log_psi(old, lo, hi);
        self.state.psi[j] = new;
        let accepted = self.finish(Change::Kernel(j), log_extra)?;
        if !accepted {
            self.state.psi[j] = old;
        }
        MoveStats::record(&mut self.stats.psi, accepted);
        Ok(accepted)
    }

    fn update_log_mod(&mut self, j: usize) -> Result<bool> {
        let old = self.state.log_mod[j];
        let new = old * (self.config.proposals.log_mod * self.normal()).exp();
        let priors = &self.config.priors;
        // Log-scale walk: the Jacobian adds log(new/old).
        let log_extra = priors.log_log_mod(new) - priors.log_log_mod(old) + (new / old).ln();
        self.state.log_mod[j] = new;
        let accepted = self.finish(Change::Kernel(j), log_extra)?;
        if !accepted {
            self.state.log_mod[j] = old;
        }
        MoveStats::record(&mut self.stats.log_mod, accepted);
        Ok(accepted)
    }

    fn update_noise(&mut self) -> Result<bool> {
        let old = self.state.noise_var;
        let new = old * (self.config.proposals.noise * self.normal()).exp();
        let priors = &self.config.priors;
        let log_extra = priors.log_noise(new) - priors.log_noise(old) + (new / old).ln();
        self.state.noise_var = new;
        let accepted = self.finish(Change::Noise, log_extra)?;
        if !accepted {
            self.state.noise_var = old;
        }
        MoveStats::record(&mut self.stats.noise, accepted);
        Ok(accepted)
    }

    /// Log density of a stick on the logit scale: `Beta(1, α)` plus Jacobian.
    fn log_stick(&self, x: f64) -> f64 {
        -softplus(-x) - self.state.alpha * softplus(x)
    }

    fn update_stick(&mut self, i: usize, h: usize) -> Result<bool> {
        if h + 1 >= self.state.truncation() {
            return Ok(false);
        }
        let old = self.state.stick_logits[[i, h]];
        let new = old + self.config.proposals.stick * self.normal();
        let log_extra = self.log_stick(new) - self.log_stick(old);
        self.state.stick_logits[[i, h]] = new;
        self.state.refresh_stick_weights(i);
        let accepted = self.finish(Change::WeightsRow(i), log_extra)?;
        if !accepted {
            self.state.stick_logits[[i, h]] = old;
            self.state.refresh_stick_weights(i);
        }
        MoveStats::record(&mut self.stats.stick, accepted);
        Ok(accepted)
    }

    fn update_atom(&mut self, i: usize, h: usize) -> Result<bool> {
        // Uniform atom on the logit scale: log Θ + log(1 - Θ).
        let log_atom = |y: f64| -softplus(-y) - softplus(y);
        let old = self.state.atom_logits[[i, h]];
        let new = old + self.config.proposals.atom * self.normal();
        let log_extra = log_atom(new) - log_atom(old);
        let k = self.state.k();
        let same_bin = atom_bin(self.state.atom(i, h), k) == atom_bin(super::state::sigmoid(new), k);
        self.state.atom_logits[[i, h]] = new;
        let accepted = if same_bin {
            // The weights are unchanged, so the likelihood ratio is one.
            let ll = self.target.loglik();
            self.decide(log_extra, ll, ll)
        } else {
            self.finish(Change::WeightsRow(i), log_extra)?
        };
        if !accepted {
            self.state.atom_logits[[i, h]] = old;
        }
        MoveStats::record(&mut self.stats.atom, accepted);
        Ok(accepted)
    }

    /// Moves interior cutoff `j` (1..K-1) between its neighbouring peaks.
    /// The likelihood does not depend on the cutoffs.
    pub fn update_cutoff(&mut self, j: usize) -> bool {
        let s = &self.state;
        let (lo, hi) = (s.psi[j - 1], s.psi[j]);
        let old = s.cutoffs[j];
        let step = self.config.proposals.cutoff_fraction * (hi - lo) * self.normal();
        let new = reflect(old + step, lo, hi);
        let s = &self.state;
        let priors = &self.config.priors;
        let log_target =
            |b: f64| priors.log_psi(s.psi[j - 1], s.cutoffs[j - 1], b) + priors.log_psi(s.psi[j], b, s.cutoffs[j + 1]);
        let log_ratio = log_target(new) - log_target(old);
        let ll = self.target.loglik();
        let accepted = self.decide(log_ratio, ll, ll);
        if accepted {
            self.state.cutoffs[j] = new;
        }
        MoveStats::record(&mut self.stats.cutoff, accepted);
        accepted
    }

    /// Exchanges the atoms of components `a` and `b` in `channel`, or in every
    /// channel when `channel` is `None`; with `with_log_mod` the two
    /// log-moduli are exchanged as well. Atoms keep their offset inside the
    /// bin, so the map is its own inverse with unit Jacobian and the prior
    /// is unchanged: the acceptance ratio is the likelihood ratio.
    pub fn update_swap(&mut self, channel: Option<usize>, a: usize, b: usize, with_log_mod: bool) -> Result<bool> {
        let k = self.state.k();
        if a == b || a >= k || b >= k {
            return Ok(false);
        }
        let saved = self.state.atom_logits.clone();
        let channels = match channel {
            Some(i) => i..i + 1,
            None => 0..self.state.n_channels(),
        };
        let shift = (b as f64 - a as f64) / k as f64;
        let mut moved = false;
        let mut valid = true;
        'outer: for i in channels {
            for h in 0..self.state.truncation() {
                let theta = self.state.atom(i, h);
                let bin = atom_bin(theta, k);
                let (next, want) = if bin == a {
                    (theta + shift, b)
                } else if bin == b {
                    (theta - shift, a)
                } else {
                    continue;
                };
                if !(next > 0.0 && next < 1.0) || atom_bin(next, k) != want {
                    valid = false;
                    break 'outer;
                }
                self.state.atom_logits[[i, h]] = logit(next);
                moved = true;
            }
        }
        if !valid || !moved {
            self.state.atom_logits = saved;
            return Ok(false);
        }
        if with_log_mod {
            self.state.log_mod.swap(a, b);
        }
        let change = match channel {
            Some(i) if !with_log_mod => Change::WeightsRow(i),
            _ => Change::Full,
        };
        let accepted = self.finish(change, 0.0)?;
        if !accepted {
            self.state.atom_logits = saved;
            if with_log_mod {
                self.state.log_mod.swap(a, b);
            }
        }
        MoveStats::record(&mut self.stats.swap, accepted);
        Ok(accepted)
    }

    /// Redraws sticks `from..v-1` of channel `i` jointly from their
    /// `Beta(1, α)` prior, accepted on the likelihood ratio alone. These
    /// sticks carry less than the active threshold of mass, so the move is
    /// almost always accepted and keeps the tail (and with it `α`) mixing.
    fn refresh_stick_tail(&mut self, i: usize, from: usize) -> Result<bool> {
        let v = self.state.truncation();
        let saved: Vec<f64> = (from..v - 1).map(|h| self.state.stick_logits[[i, h]]).collect();
        let inv_alpha = 1.0 / self.state.alpha;
        for h in from..v - 1 {
            // β = 1 - U^(1/α), drawn directly on the logit scale.
            let log_u = loop {
                let u: f64 = self.rng.random();
                if u > 0.0 {
                    break u.ln();
                }
            };
            let x = log_u * inv_alpha;
            let log_beta = if x > -std::f64::consts::LN_2 {
                (-x.exp_m1()).ln()
            } else {
                (-x.exp()).ln_1p()
            };
            // The clamp only bites for α below ~1e-300.
            self.state.stick_logits[[i, h]] = (log_beta - x).min(700.0);
        }
        self.state.refresh_stick_weights(i);
        let accepted = self.finish(Change::WeightsRow(i), 0.0)?;
        if !accepted {
            for (h, x) in (from..v - 1).zip(saved) {
                self.state.stick_logits[[i, h]] = x;
            }
            self.state.refresh_stick_weights(i);
        }
        MoveStats::record(&mut self.stats.tail, accepted);
        Ok(accepted)
    }

    /// Redraws the atoms of channel `i` whose weight is below the active
    /// threshold jointly from their uniform prior, accepted on the
    /// likelihood ratio alone.
    fn refresh_atom_tail(&mut self, i: usize) -> Result<bool> {
        let eps = self.config.active_threshold;
        let inactive: Vec<usize> = (0..self.state.truncation())
            .filter(|&h| self.state.stick_weights[[i, h]] < eps)
            .collect();
        if inactive.is_empty() {
            return Ok(false);
        }
        let saved: Vec<f64> = inactive.iter().map(|&h| self.state.atom_logits[[i, h]]).collect();
        for &h in &inactive {
            let theta = loop {
                let u: f64 = self.rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            self.state.atom_logits[[i, h]] = logit(theta);
        }
        let accepted = self.finish(Change::WeightsRow(i), 0.0)?;
        if !accepted {
            for (&h, x) in inactive.iter().zip(saved) {
                self.state.atom_logits[[i, h]] = x;
            }
        }
        MoveStats::record(&mut self.stats.tail, accepted);
        Ok(accepted)
    }

    fn random_pair(&mut self) -> (usize, usize) {
        let k = self.state.k();
        let a = self.rng.random_range(0..k);
        let mut b = self.rng.random_range(0..k - 1);
        if b >= a {
            b += 1;
        }
        (a, b)
    }

    /// Auxiliary-variable update of the DP precision. The sticks carry a
    /// `Beta(1, α)` prior, so they contribute `n(v-1)` to the shape and
    /// `Σ -log(1 - β)` to the rate.
    pub fn update_alpha(&mut self) {
        let priors = &self.config.priors;
        let s = &self.state;
        let free = s.truncation() - 1;
        let mut shape = priors.alpha_shape + (s.n_channels() * free) as f64;
        let mut rate = priors.alpha_rate;
        for row in s.stick_logits.rows() {
            rate += row.iter().take(free).map(|&x| softplus(x)).sum::<f64>();
        }
        let k = s.k();
        let n_eff = match priors.k {
            KPrior::Uniform { .. } => None,
            KPrior::DirichletProcess {
                count: EffectiveCount::Components,
            } => Some(k),
            KPrior::DirichletProcess {
                count: EffectiveCount::Fixed { n },
            } => Some(n),
        };
        if let Some(n_eff) = n_eff {
            let eta: f64 = Beta::new(s.alpha + 1.0, n_eff as f64)
                .expect("positive Beta parameters")
                .sample(&mut self.rng);
            let mix = alpha_mixture(shape, rate, k, n_eff, eta.max(f64::MIN_POSITIVE));
            shape = if self.rng.random::<f64>() < mix.weight {
                mix.shape_first
            } else {
                mix.shape_second
            };
            rate = mix.rate;
        }
        let draw: f64 = Gamma::new(shape, 1.0 / rate)
            .expect("positive Gamma parameters")
            .sample(&mut self.rng);
        self.state.alpha = draw.max(f64::MIN_POSITIVE);
    }

    /// One full sweep over all blocks.
    pub fn sweep(&mut self) -> Result<()> {
        let updates = self.config.updates;
        if updates.birth_death {
            self.birth_death_move()?;
        }
        if updates.cutoffs {
            for j in 1..self.state.k() {
                self.update_cutoff(j);
            }
        }
        if updates.psi {
            for j in 0..self.state.k() {
                self.update_psi(j)?;
            }
        }
        if updates.log_mod {
            for j in 0..self.state.k() {
                self.update_log_mod(j)?;
            }
        }
        let eps = self.config.active_threshold;
        let v = self.state.truncation();
        if updates.sticks && v > 1 {
            let log_eps = eps.ln();
            for i in 0..self.state.n_channels() {
                // Remaining mass only shrinks along the row, so the active
                // sticks form a prefix; whether stick h is in it depends on
                // earlier sticks only.
                let mut log_rest = 0.0;
                let mut h = 0;
                while h + 1 < v && log_rest >= log_eps {
                    self.update_stick(i, h)?;
                    log_rest -= softplus(self.state.stick_logits[[i, h]]);
                    h += 1;
                }
                if h + 1 < v {
                    self.refresh_stick_tail(i, h)?;
                }
            }
        }
        if updates.atoms {
            for i in 0..self.state.n_channels() {
                for h in 0..v {
                    if self.state.stick_weights[[i, h]] >= eps {
                        self.update_atom(i, h)?;
                    }
                }
                if eps > 0.0 {
                    self.refresh_atom_tail(i)?;
                }
            }
        }
        if updates.swaps && self.state.k() > 1 {
            let (a, b) = self.random_pair();
            let with_log_mod = self.rng.random::<bool>();
            self.update_swap(None, a, b, with_log_mod)?;
            for i in 0..self.state.n_channels() {
                let (a, b) = self.random_pair();
                self.update_swap(Some(i), a, b, false)?;
            }
        }
        if updates.noise {
            self.update_noise()?;
        }
        if updates.alpha {
            self.update_alpha();
        }
        if cfg!(debug_assertions) {
            self.state.validate()?;
        }
        Ok(())
    }

    pub fn snapshot(&self, iteration: usize) -> Snapshot {
        Snapshot::from_state(iteration, &self.state, self.target.loglik())
    }

    /// Runs `iterations` sweeps, recording every `thin`-th.
    pub fn run(&mut self, iterations: usize) -> Result<ChainTrace> {
        let thin = self.config.thin;
        let mut snapshots = Vec::with_capacity(iterations / thin);
        for it in 1..=iterations {
            self.sweep()?;
            if it % thin == 0 {
                snapshots.push(self.snapshot(it));
            }
        }
        Ok(ChainTrace {
            chain_id: self.chain_id,
            seed: self.seed,
            n_channels: self.state.n_channels(),
            thin,
            snapshots,
            stats: self.stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::target::FlatTarget;

    #[test]
    fn reflection_stays_inside() {
        assert!((reflect(1.2, 0.0, 1.0) - 0.8).abs() < 1e-15);
        assert!((reflect(-0.3, 0.0, 1.0) - 0.3).abs() < 1e-15);
        assert!((reflect(2.3, 0.0, 1.0) - 0.3).abs() < 1e-12);
        assert_eq!(reflect(0.4, 0.0, 1.0), 0.4);
    }

    #[test]
    fn alpha_mixture_components() {
        let eta: f64 = 0.25;
        let mix = alpha_mixture(0.1, 0.1, 4, 4, eta);
        assert_eq!(mix.shape_first, 4.1);
        assert!((mix.shape_second - 3.1).abs() < 1e-15);
        assert!((mix.rate - (0.1 - eta.ln())).abs() < 1e-15);
        let odds = 3.1 / (4.0 * (0.1 - eta.ln()));
        assert!((mix.weight - odds / (1.0 + odds)).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_always_accepted_and_changes_nothing() {
        let mut config = SamplerConfig {
            iterations: 1,
            ..SamplerConfig::default()
        };
        config.proposals.psi_fraction = 0.0;
        config.proposals.log_mod = 0.0;
        config.proposals.noise = 0.0;
        config.proposals.stick = 0.0;
        config.proposals.atom = 0.0;
        let mut sampler = Sampler::new(FlatTarget, 2, config, 5, 0).unwrap();
        let before = sampler.state().clone();
        for which in [
            Coordinate::Psi(1),
            Coordinate::LogMod(0),
            Coordinate::Stick(1, 3),
            Coordinate::Atom(0, 7),
            Coordinate::Noise,
        ] {
            assert!(sampler.mh_update_continuous(which).unwrap());
        }
        assert_eq!(sampler.state(), &before);
    }

    #[test]
    fn alpha_stays_positive() {
        let config = SamplerConfig {
            iterations: 1,
            ..SamplerConfig::default()
        };
        let mut sampler = Sampler::new(FlatTarget, 1, config, 9, 0).unwrap();
        for _ in 0..100_000 {
            sampler.update_alpha();
            assert!(sampler.state().alpha() > 0.0);
        }
    }
}
