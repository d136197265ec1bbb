//! Sampler state: stick-breaking weights, atoms, partition and kernels.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::kernel::Ar2Kernel;
use crate::mixture::MixtureModel;

/// `log(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Zero-based bin of an atom: bin `k` is `(k/K, (k+1)/K]`.
#[inline]
pub fn atom_bin(theta: f64, k: usize) -> usize {
    let scaled = (theta * k as f64).ceil() as usize;
    scaled.clamp(1, k) - 1
}

/// Full state of one chain.
///
/// Sticks and atoms are stored on the logit scale so random-walk proposals
/// never leave `(0, 1)`. The last stick of every channel is fixed at one so
/// each row of stick weights sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub(crate) stick_logits: Array2<f64>,
    pub(crate) atom_logits: Array2<f64>,
    pub(crate) stick_weights: Array2<f64>,
    pub(crate) cutoffs: Vec<f64>,
    pub(crate) psi: Vec<f64>,
    pub(crate) log_mod: Vec<f64>,
    pub(crate) noise_var: f64,
    pub(crate) alpha: f64,
}

impl ChainState {
    /// Builds a state from explicit parts. `sticks` are the stick-breaking
    /// fractions (the last column is ignored and treated as one) and `atoms`
    /// the atom locations in `(0, 1)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        sticks: &Array2<f64>,
        atoms: &Array2<f64>,
        cutoffs: Vec<f64>,
        psi: Vec<f64>,
        log_mod: Vec<f64>,
        noise_var: f64,
        alpha: f64,
    ) -> Result<Self> {
        if sticks.dim() != atoms.dim() || sticks.ncols() == 0 || sticks.nrows() == 0 {
            return Err(Error::Dimension(
                "sticks and atoms must be the same nonempty shape".into(),
            ));
        }
        let v = sticks.ncols();
        let mut stick_logits = sticks.mapv(logit);
        stick_logits.column_mut(v - 1).fill(f64::INFINITY);
        let mut state = ChainState {
            stick_weights: Array2::zeros(sticks.dim()),
            stick_logits,
            atom_logits: atoms.mapv(logit),
            cutoffs,
            psi,
            log_mod,
            noise_var,
            alpha,
        };
        for i in 0..state.n_channels() {
            state.refresh_stick_weights(i);
        }
        state.validate()?;
        Ok(state)
    }

    /// Initial state: `k` equal subintervals with `psi` at their midpoints,
    /// sticks drawn from `Beta(1, alpha)` and uniform atoms.
    pub fn initial<R: Rng>(
        n_channels: usize,
        truncation: usize,
        k: usize,
        log_mod: f64,
        noise_var: f64,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 || k > truncation {
            return Err(Error::Config(format!(
                "initial component count {k} must lie in 1..={truncation}"
            )));
        }
        let beta = Beta::new(1.0, alpha).map_err(|e| Error::Config(e.to_string()))?;
        let mut sticks = Array2::zeros((n_channels, truncation));
        let mut atoms = Array2::zeros((n_channels, truncation));
        for i in 0..n_channels {
            for h in 0..truncation {
                let b: f64 = beta.sample(rng);
                sticks[[i, h]] = b.clamp(1e-12, 1.0 - 1e-12);
                atoms[[i, h]] = rng.random_range(1e-12..1.0);
            }
        }
        let width = 0.5 / k as f64;
        let cutoffs = (0..=k).map(|j| if j == k { 0.5 } else { j as f64 * width }).collect();
        let psi = (0..k).map(|j| (j as f64 + 0.5) * width).collect();
        Self::from_parts(&sticks, &atoms, cutoffs, psi, vec![log_mod; k], noise_var, alpha)
    }

    pub fn n_channels(&self) -> usize {
        self.stick_logits.nrows()
    }

    pub fn truncation(&self) -> usize {
        self.stick_logits.ncols()
    }

    pub fn k(&self) -> usize {
        self.psi.len()
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn log_mod(&self) -> &[f64] {
        &self.log_mod
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kernel(&self, j: usize) -> Ar2Kernel {
        Ar2Kernel {
            psi: self.psi[j],
            log_mod: self.log_mod[j],
        }
    }

    /// Stick-breaking fractions `β` (`n × v`, last column one).
    pub fn sticks(&self) -> Array2<f64> {
        self.stick_logits.mapv(sigmoid)
    }

    /// Stick weights `V` (`n × v`, rows sum to one).
    pub fn stick_weights(&self) -> &Array2<f64> {
        &self.stick_weights
    }

    /// Atom locations `Θ` in `(0, 1)`.
    pub fn atoms(&self) -> Array2<f64> {
        self.atom_logits.mapv(sigmoid)
    }

    pub(crate) fn atom(&self, i: usize, h: usize) -> f64 {
        sigmoid(self.atom_logits[[i, h]])
    }

    pub(crate) fn refresh_stick_weights(&mut self, i: usize) {
        let v = self.truncation();
        let mut log_rest: f64 = 0.0;
        for h in 0..v {
            let x = self.stick_logits[[i, h]];
            if h + 1 == v {
                self.stick_weights[[i, h]] = log_rest.exp();
            } else {
                self.stick_weights[[i, h]] = (log_rest - softplus(-x)).exp();
                log_rest -= softplus(x);
            }
        }
    }

    /// Row `i` of `Λ` for the current `K`, written into `out`.
    pub fn weight_row_into(&self, i: usize, out: &mut [f64]) {
        let k = self.k();
        out[..k].fill(0.0);
        for h in 0..self.truncation() {
            let w = self.stick_weights[[i, h]];
            if w > 0.0 {
                out[atom_bin(self.atom(i, h), k)] += w;
            }
        }
        for x in out[..k].iter_mut() {
            *x = x.sqrt();
        }
    }

    /// The `n × K` weight matrix `Λ`.
    pub fn weights(&self) -> Array2<f64> {
        let mut lambda = Array2::zeros((self.n_channels(), self.k()));
        let mut row = vec![0.0; self.k()];
        for i in 0..self.n_channels() {
            self.weight_row_into(i, &mut row);
            lambda.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
        }
        lambda
    }

    /// Mixture model implied by the state (kernels in ascending `psi`).
    pub fn to_model(&self) -> Result<MixtureModel> {
        let kernels = (0..self.k()).map(|j| self.kernel(j)).collect();
        MixtureModel::new(kernels, renormalize_rows(self.weights()), self.noise_var)
    }

    /// Checks every structural invariant of the state.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.log_mod.len() != k || self.cutoffs.len() != k + 1 {
            return Err(Error::Domain("inconsistent component count".into()));
        }
        if self.cutoffs[0] != 0.0 || self.cutoffs[k] != 0.5 {
            return Err(Error::Domain("partition must span [0, 0.5] exactly".into()));
        }
        for j in 0..k {
            if !(self.cutoffs[j] < self.cutoffs[j + 1]) {
                return Err(Error::Domain(format!("partition not increasing at {j}")));
            }
            if !(self.cutoffs[j] < self.psi[j] && self.psi[j] < self.cutoffs[j + 1]) {
                return Err(Error::Domain(format!(
                    "psi[{j}] = {} outside its subinterval",
                    self.psi[j]
                )));
            }
            self.kernel(j).validate()?;
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Domain("noise level must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Domain("DP precision must be positive".into()));
        }
        let mut row = vec![0.0; k];
        for i in 0..self.n_channels() {
            self.weight_row_into(i, &mut row);
            let norm: f64 = row.iter().map(|l| l * l).sum();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("weight row {i} has squared norm {norm}")));
            }
        }
        Ok(())
    }
}

/// Rescales rows to unit sum of squares, absorbing rounding from the stick products.
pub(crate) fn renormalize_rows(mut lambda: Array2<f64>) -> Array2<f64> {
    for mut row in lambda.rows_mut() {
        let norm = row.iter().map(|l| l * l).sum::<f64>().sqrt();
        row.mapv_inplace(|l| (l / norm).min(1.0));
    }
    lambda
}

/// `Λ = sqrt(p)` with `p_ik = Σ_h V_ih 1{(k-1)/K < Θ_ih ≤ k/K}`.
pub fn weights_from_sticks(stick_weights: &Array2<f64>, atoms: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut p = Array2::zeros((stick_weights.nrows(), k));
    for ((i, h), &w) in stick_weights.indexed_iter() {
        p[[i, atom_bin(atoms[[i, h]], k)]] += w;
    }
    p.mapv_inplace(f64::sqrt);
    p
}
