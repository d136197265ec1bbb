//! Trans-dimensional moves on the number of components.
//!
//! A subinterval of the partition is chosen uniformly; with probability
//! one half it is split at a uniform new cutoff (birth), otherwise one of
//! its interior edges is deleted and it merges with that neighbour (death).
//! Freshly created kernel parameters come from `ComponentSampler`. The
//! acceptance ratio is assembled explicitly as
//! `Δloglik + Δlog prior + log q(reverse) - log q(forward)`, where the prior
//! covers `K`, the partition and all kernel parameters.
//!
//! With atom relocation enabled, the active atoms of every channel keep
//! pointing at the same components after `K` changes: atoms are redrawn
//! uniformly inside the renumbered bins, and atoms of a split bin go to
//! the upper half with a per-channel probability `u ~ U(0, 1)`. The
//! proposal density of those draws enters the ratio (a Beta-binomial term
//! per channel and the bin-width factors).

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::chain::{MoveStats, Sampler};
use super::state::{atom_bin, logit, ChainState};
use super::target::{Change, Target};
use super::BirthDeathMode;
use crate::error::Result;

/// Number of interior edges of component `j` among `k`.
fn edges(j: usize, k: usize) -> f64 {
    (j > 0) as u32 as f64 + (j + 1 < k) as u32 as f64
}

/// `log(m! (s-m)! / (s+1)!)`: the probability of one particular split of
/// `s` atoms with `m` going up, integrated over a uniform split fraction.
fn log_beta_binomial(s: usize, m: usize) -> f64 {
    ln_gamma(m as f64 + 1.0) + ln_gamma((s - m) as f64 + 1.0) - ln_gamma(s as f64 + 2.0)
}

impl<T: Target> Sampler<T> {
    /// Log prior of `K`, the partition and every kernel parameter.
    pub(crate) fn log_structural_prior(&self, state: &ChainState) -> f64 {
        let priors = &self.config.priors;
        let k = state.k();
        let mut total = self.k_prior.log_weight(k, state.alpha) + priors.log_partition(k);
        for j in 0..k {
            total += priors.log_psi(state.psi[j], state.cutoffs[j], state.cutoffs[j + 1])
                + priors.log_log_mod(state.log_mod[j]);
        }
        total
    }

    fn draw_component(&mut self, lo: f64, hi: f64) -> (f64, f64, f64) {
        self.components.draw(&self.config.priors, lo, hi, &mut self.rng)
    }

    fn log_draw_density(&self, psi: f64, l: f64, lo: f64, hi: f64) -> f64 {
        self.components.log_density(&self.config.priors, psi, l, lo, hi)
    }

    fn active_atom(&self, i: usize, h: usize) -> bool {
        self.state.stick_weights[[i, h]] >= self.config.active_threshold
    }

    fn place_atom(&mut self, i: usize, h: usize, bin: usize, k: usize) {
        loop {
            let theta = (bin as f64 + self.rng.random::<f64>()) / k as f64;
            if theta > 0.0 && theta < 1.0 && atom_bin(theta, k) == bin {
                self.state.atom_logits[[i, h]] = logit(theta);
                return;
            }
        }
    }

    /// Relocates active atoms for a split of bin `j` out of `k` bins.
    /// Returns `(log q forward, log q reverse)` of the atom draws.
    fn relocate_split(&mut self, j: usize, k: usize) -> (f64, f64) {
        let mut fwd = 0.0;
        let mut n_active = 0usize;
        for i in 0..self.state.n_channels() {
            let up_prob: f64 = self.rng.random();
            let (mut split, mut up) = (0usize, 0usize);
            for h in 0..self.state.truncation() {
                if !self.active_atom(i, h) {
                    continue;
                }
                n_active += 1;
                let old = atom_bin(self.state.atom(i, h), k);
                let new = if old < j {
                    old
                } else if old > j {
                    old + 1
                } else {
                    split += 1;
                    if self.rng.random::<f64>() < up_prob {
                        up += 1;
                        j + 1
                    } else {
                        j
                    }
                };
                self.place_atom(i, h, new, k + 1);
            }
            fwd += log_beta_binomial(split, up);
        }
        let active = n_active as f64;
        (fwd + active * ((k + 1) as f64).ln(), active * (k as f64).ln())
    }

    /// Relocates active atoms for a merge of bins `a` and `a + 1` out of `k`.
    /// Returns `(log q forward, log q reverse)` of the atom draws.
    fn relocate_merge(&mut self, a: usize, k: usize) -> (f64, f64) {
        let mut rev = 0.0;
        let mut n_active = 0usize;
        for i in 0..self.state.n_channels() {
            let (mut merged, mut up) = (0usize, 0usize);
            for h in 0..self.state.truncation() {
                if !self.active_atom(i, h) {
                    continue;
                }
                n_active += 1;
                let old = atom_bin(self.state.atom(i, h), k);
                let new = if old <= a {
                    old
                } else if old == a + 1 {
                    up += 1;
                    a
                } else {
                    old - 1
                };
                if old == a || old == a + 1 {
                    merged += 1;
                }
                self.place_atom(i, h, new, k - 1);
            }
            rev += log_beta_binomial(merged, up);
        }
        let active = n_active as f64;
        (active * ((k - 1) as f64).ln(), rev + active * (k as f64).ln())
    }

    /// Split subinterval `j` into two.
    fn birth(&mut self, j: usize) -> Result<bool> {
        let k = self.state.k();
        if k + 1 > self.k_prior.k_max() {
            MoveStats::record(&mut self.stats.birth, false);
            return Ok(false);
        }
        let saved = self.state.clone();
        let prior_old = self.log_structural_prior(&saved);
        let (lo, hi) = (saved.cutoffs[j], saved.cutoffs[j + 1]);
        let cut = loop {
            let c = lo + self.rng.random::<f64>() * (hi - lo);
            if c > lo && c < hi {
                break c;
            }
        };
        let (psi_old, l_old) = (saved.psi[j], saved.log_mod[j]);
        let ln_half = 0.5f64.ln();
        let mut log_fwd = ln_half - (k as f64).ln() - (hi - lo).ln();
        let mut log_rev = ln_half - ((k + 1) as f64).ln();
        let (left, right) = match self.config.birth_death.mode {
            BirthDeathMode::Redraw => {
                let (pa, la, qa) = self.draw_component(lo, cut);
                let (pb, lb, qb) = self.draw_component(cut, hi);
                log_fwd += qa + qb;
                log_rev += (1.0 / edges(j, k + 1) + 1.0 / edges(j + 1, k + 1)).ln()
                    + self.log_draw_density(psi_old, l_old, lo, hi);
                ((pa, la), (pb, lb))
            }
            BirthDeathMode::KeepSelected => {
                if psi_old == cut {
                    MoveStats::record(&mut self.stats.birth, false);
                    return Ok(false);
                }
                let keep_left = psi_old < cut;
                let (new_lo, new_hi) = if keep_left { (cut, hi) } else { (lo, cut) };
                let (p, l, q) = self.draw_component(new_lo, new_hi);
                log_fwd += q;
                let kept_index = if keep_left { j } else { j + 1 };
                log_rev += -edges(kept_index, k + 1).ln();
                if keep_left {
                    ((psi_old, l_old), (p, l))
                } else {
                    ((p, l), (psi_old, l_old))
                }
            }
        };
        {
            let s = &mut self.state;
            s.cutoffs.insert(j + 1, cut);
            s.psi[j] = left.0;
            s.log_mod[j] = left.1;
            s.psi.insert(j + 1, right.0);
            s.log_mod.insert(j + 1, right.1);
        }
        if self.config.birth_death.relocate_atoms {
            let (fwd, rev) = self.relocate_split(j, k);
            log_fwd += fwd;
            log_rev += rev;
        }
        let accepted = self.settle(saved, prior_old, log_rev - log_fwd)?;
        MoveStats::record(&mut self.stats.birth, accepted);
        Ok(accepted)
    }

    /// Delete one interior edge of subinterval `j`, merging it with a neighbour.
    fn death(&mut self, j: usize) -> Result<bool> {
        let k = self.state.k();
        if k == 1 {
            MoveStats::record(&mut self.stats.death, false);
            return Ok(false);
        }
        let saved = self.state.clone();
        let prior_old = self.log_structural_prior(&saved);
        let e_j = edges(j, k);
        let use_left = if j == 0 {
            false
        } else if j + 1 == k {
            true
        } else {
            self.rng.random::<bool>()
        };
        let a = if use_left { j - 1 } else { j };
        let (lo, cut, hi) = (saved.cutoffs[a], saved.cutoffs[a + 1], saved.cutoffs[a + 2]);
        let ln_half = 0.5f64.ln();
        let mut log_fwd = ln_half - (k as f64).ln();
        let mut log_rev = ln_half - ((k - 1) as f64).ln() - (hi - lo).ln();
        let merged = match self.config.birth_death.mode {
            BirthDeathMode::Redraw => {
                let (p, l, q) = self.draw_component(lo, hi);
                log_fwd += (1.0 / edges(a, k) + 1.0 / edges(a + 1, k)).ln() + q;
                log_rev += self.log_draw_density(saved.psi[a], saved.log_mod[a], lo, cut)
                    + self.log_draw_density(saved.psi[a + 1], saved.log_mod[a + 1], cut, hi);
                (p, l)
            }
            BirthDeathMode::KeepSelected => {
                log_fwd -= e_j.ln();
                let other = if j == a { a + 1 } else { a };
                let (o_lo, o_hi) = (saved.cutoffs[other], saved.cutoffs[other + 1]);
                log_rev += self.log_draw_density(saved.psi[other], saved.log_mod[other], o_lo, o_hi);
                (saved.psi[j], saved.log_mod[j])
            }
        };
        {
            let s = &mut self.state;
            s.cutoffs.remove(a + 1);
            s.psi.remove(a + 1);
            s.log_mod.remove(a + 1);
            s.psi[a] = merged.0;
            s.log_mod[a] = merged.1;
        }
        if self.config.birth_death.relocate_atoms {
            let (fwd, rev) = self.relocate_merge(a, k);
            log_fwd += fwd;
            log_rev += rev;
        }
        let accepted = self.settle(saved, prior_old, log_rev - log_fwd)?;
        MoveStats::record(&mut self.stats.death, accepted);
        Ok(accepted)
    }

    /// Accepts or rolls back a dimension change already written to the state.
    fn settle(&mut self, saved: ChainState, prior_old: f64, log_proposal: f64) -> Result<bool> {
        let log_prior = self.log_structural_prior(&self.state) - prior_old;
        if !log_prior.is_finite() || !log_proposal.is_finite() {
            self.state = saved;
            return Ok(false);
        }
        let old = self.target.loglik();
        let new = self.target.propose(&self.state, Change::Full)?;
        let accepted = self.decide(new - old + log_prior + log_proposal, new, old);
        if accepted {
            self.target.accept();
        } else {
            self.target.reject();
            self.state = saved;
        }
        Ok(accepted)
    }

    /// One birth or death attempt on a uniformly chosen subinterval.
    pub fn birth_death_move(&mut self) -> Result<bool> {
        let j = self.rng.random_range(0..self.state.k());
        if self.rng.random::<bool>() {
            self.birth(j)
        } else {
            self.death(j)
        }
    }
}
