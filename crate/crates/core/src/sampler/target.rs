//! Log-likelihood targets evaluated by the sampler.
//!
//! A target keeps the log-likelihood of the committed state. The sampler
//! mutates the state, asks for the log-likelihood of the proposal with a
//! hint about what changed, and then accepts or rejects it.

// The factorization loops index several arrays in lockstep, as in the formulas.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernel::KernelEval;
use crate::linalg::{ldl_in_place, ldl_quad};
use crate::sampler::state::ChainState;
use crate::whittle::FourierData;

/// What a proposal changed relative to the committed state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Change {
    /// Peak location or bandwidth of one kernel.
    Kernel(usize),
    /// One row of the weight matrix (sticks or atoms of that channel).
    WeightsRow(usize),
    /// The noise level.
    Noise,
    /// Anything else, including a change of `K`.
    Full,
}

pub trait Target {
    /// Recomputes from scratch and commits; returns the log-likelihood.
    fn reset(&mut self, state: &ChainState) -> Result<f64>;
    /// Log-likelihood of the committed state.
    fn loglik(&self) -> f64;
    /// Log-likelihood of `state`, which differs from the committed state as described by `change`.
    fn propose(&mut self, state: &ChainState, change: Change) -> Result<f64>;
    fn accept(&mut self);
    fn reject(&mut self);
}

/// Empty data: the posterior equals the prior.
#[derive(Clone, Debug, Default)]
pub struct FlatTarget;

impl Target for FlatTarget {
    fn reset(&mut self, _: &ChainState) -> Result<f64> {
        Ok(0.0)
    }
    fn loglik(&self) -> f64 {
        0.0
    }
    fn propose(&mut self, _: &ChainState, _: Change) -> Result<f64> {
        Ok(0.0)
    }
    fn accept(&mut self) {}
    fn reject(&mut self) {}
}

/// A log-likelihood given by a closure over the full state.
pub struct FnTarget<F> {
    f: F,
    current: f64,
    pending: f64,
}

impl<F: FnMut(&ChainState) -> f64> FnTarget<F> {
    pub fn new(f: F) -> Self {
        FnTarget {
            f,
            current: 0.0,
            pending: 0.0,
        }
    }
}

impl<F: FnMut(&ChainState) -> f64> Target for FnTarget<F> {
    fn reset(&mut self, state: &ChainState) -> Result<f64> {
        self.current = (self.f)(state);
        Ok(self.current)
    }
    fn loglik(&self) -> f64 {
        self.current
    }
    fn propose(&mut self, state: &ChainState, _: Change) -> Result<f64> {
        self.pending = (self.f)(state);
        Ok(self.pending)
    }
    fn accept(&mut self) {
        self.current = self.pending;
    }
    fn reject(&mut self) {}
}

/// Smallest kernel value kept in the cache, so `1/g` stays finite.
const KERNEL_FLOOR: f64 = 1e-280;
/// Frequencies evaluated together.
const LANES: usize = 4;
/// Rescale the running determinant product outside this range.
const PRODUCT_LIMIT: f64 = 1e150;

#[derive(Clone, Debug, Default)]
struct Cache {
    k: usize,
    /// `Λ`, row-major `n × K`.
    lambda: Vec<f64>,
    /// Halved kernel values, frequency-major `M × K`.
    half_g: Vec<f64>,
    /// `Λᵀ d`, real and imaginary parts, frequency-major `M × K`.
    u_re: Vec<f64>,
    u_im: Vec<f64>,
    /// `ΛᵀΛ`, `K × K`.
    gram: Vec<f64>,
    /// Half the noise level.
    half_noise: f64,
}

#[derive(Clone, Debug)]
enum Undo {
    None,
    Kernel {
        j: usize,
        column: Vec<f64>,
    },
    Row {
        i: usize,
        row: Vec<f64>,
        u_re: Vec<f64>,
        u_im: Vec<f64>,
        gram: Vec<f64>,
    },
    Noise(f64),
    Full(Box<Cache>),
}

/// Whittle log-likelihood of the mixture implied by a chain state.
///
/// With `C = S_XX/2 = s I + Λ E Λᵀ` (`s = σ²/2`, `E = diag(g)/2`) every
/// frequency needs only a `K × K` factorization:
/// `log|C| = (n-K) log s + Σ log e_k + log|M|` and
/// `d*C⁻¹d = (d*d - u*M⁻¹u)/s` with `M = s E⁻¹ + ΛᵀΛ`, `u = Λᵀd`.
/// Caches of `g`, `Λᵀd` and `ΛᵀΛ` make single-kernel and single-row
/// proposals cost `O(M K²)` plus the factorizations.
pub struct WhittleTarget {
    n: usize,
    n_freq: usize,
    freqs: Vec<f64>,
    sin_w: Vec<f64>,
    cos_w: Vec<f64>,
    d_re: Vec<f64>,
    d_im: Vec<f64>,
    d_norm: Vec<f64>,
    cache: Cache,
    undo: Undo,
    current: f64,
    pending: f64,
    scratch_row: Vec<f64>,
}

impl WhittleTarget {
    pub fn new(data: &FourierData) -> Self {
        let n = data.n_channels();
        let n_freq = data.n_freqs();
        let mut d_re = Vec::with_capacity(n * n_freq);
        let mut d_im = Vec::with_capacity(n * n_freq);
        let mut d_norm = Vec::with_capacity(n_freq);
        for m in 0..n_freq {
            let mut norm = 0.0;
            for c in data.coeff(m) {
                d_re.push(c.re);
                d_im.push(c.im);
                norm += c.norm_sqr();
            }
            d_norm.push(norm);
        }
        let (sin_w, cos_w) = data.freqs.iter().map(|&w| (PI * w).sin_cos()).unzip();
        WhittleTarget {
            n,
            n_freq,
            freqs: data.freqs.clone(),
            sin_w,
            cos_w,
            d_re,
            d_im,
            d_norm,
            cache: Cache::default(),
            undo: Undo::None,
            current: f64::NAN,
            pending: f64::NAN,
            scratch_row: Vec::new(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n
    }

    fn fill_kernel(&mut self, state: &ChainState, j: usize) {
        let k = self.cache.k;
        let eval = KernelEval::new(&state.kernel(j));
        for m in 0..self.n_freq {
            let g = eval.at_trig(self.sin_w[m], self.cos_w[m]);
            self.cache.half_g[m * k + j] = (0.5 * g).max(KERNEL_FLOOR);
        }
    }

    fn rebuild(&mut self, state: &ChainState) {
        let (n, k, nf) = (self.n, state.k(), self.n_freq);
        let c = &mut self.cache;
        c.k = k;
        c.half_noise = 0.5 * state.noise_var();
        c.lambda.resize(n * k, 0.0);
        for i in 0..n {
            state.weight_row_into(i, &mut c.lambda[i * k..(i + 1) * k]);
        }
        c.half_g.resize(nf * k, 0.0);
        c.u_re.clear();
        c.u_re.resize(nf * k, 0.0);
        c.u_im.clear();
        c.u_im.resize(nf * k, 0.0);
        for m in 0..nf {
            for i in 0..n {
                let (dr, di) = (self.d_re[m * n + i], self.d_im[m * n + i]);
                for j in 0..k {
                    let l = c.lambda[i * k + j];
                    c.u_re[m * k + j] += l * dr;
                    c.u_im[m * k + j] += l * di;
                }
            }
        }
        c.gram.clear();
        c.gram.resize(k * k, 0.0);
        for i in 0..n {
            for a in 0..k {
                for b in 0..k {
                    c.gram[a * k + b] += c.lambda[i * k + a] * c.lambda[i * k + b];
                }
            }
        }
        for j in 0..k {
            self.fill_kernel(state, j);
        }
    }

    /// Frequencies are processed `LANES` at a time with their `K × K`
    /// factorizations run in lockstep; common `K` get a monomorphized
    /// kernel so the loops unroll and vectorize. The last block repeats its
    /// final frequency in the unused lanes.
    fn evaluate(&mut self) -> Result<f64> {
        let (n, k, nf) = (self.n, self.cache.k, self.n_freq);
        let c = &self.cache;
        let s = c.half_noise;
        let block_fn: BlockFn = match k {
            1 => block_terms::<1>,
            2 => block_terms::<2>,
            3 => block_terms::<3>,
            4 => block_terms::<4>,
            5 => block_terms::<5>,
            6 => block_terms::<6>,
            7 => block_terms::<7>,
            8 => block_terms::<8>,
            9 => block_terms::<9>,
            10 => block_terms::<10>,
            11 => block_terms::<11>,
            12 => block_terms::<12>,
            13 => block_terms::<13>,
            14 => block_terms::<14>,
            15 => block_terms::<15>,
            16 => block_terms::<16>,
            _ => block_terms_dyn,
        };
        let mut total = 0.0;
        let mut log_acc = 0.0;
        let mut product = [1.0; LANES];
        let mut idx = [0usize; LANES];
        for block in (0..nf).step_by(LANES) {
            let width = LANES.min(nf - block);
            for (l, slot) in idx.iter_mut().enumerate() {
                *slot = block + l.min(width - 1);
            }
            let (quad, det) = block_fn(c, s, &idx).map_err(|lane| Error::NotPositiveDefinite {
                freq: self.freqs[idx[lane]],
            })?;
            for l in 0..width {
                total += (self.d_norm[block + l] - quad[l]) / s;
                product[l] *= det[l];
            }
            if product.iter().any(|&p| !(p > 1.0 / PRODUCT_LIMIT && p < PRODUCT_LIMIT)) {
                for p in &mut product {
                    log_acc += p.ln();
                    *p = 1.0;
                }
            }
        }
        log_acc += product.iter().map(|p| p.ln()).sum::<f64>();
        let logdet = (n as f64 - k as f64) * s.ln() * nf as f64 + log_acc;
        let ll = -(logdet + total);
        if !ll.is_finite() {
            return Err(Error::NonFinite("Whittle log-likelihood".into()));
        }
        Ok(ll)
    }

    fn restore(&mut self) {
        let k = self.cache.k;
        match std::mem::replace(&mut self.undo, Undo::None) {
            Undo::None => {}
            Undo::Kernel { j, column } => {
                for (m, v) in column.into_iter().enumerate() {
                    self.cache.half_g[m * k + j] = v;
                }
            }
            Undo::Row {
                i,
                row,
                u_re,
                u_im,
                gram,
            } => {
                self.cache.lambda[i * k..(i + 1) * k].copy_from_slice(&row);
                self.cache.u_re = u_re;
                self.cache.u_im = u_im;
                self.cache.gram = gram;
            }
            Undo::Noise(s) => self.cache.half_noise = s,
            Undo::Full(cache) => self.cache = *cache,
        }
    }
}

type Lanes = [f64; LANES];
/// `(u*M⁻¹u, Π e_k D_kk)` per lane, or the first lane whose `M` is not
/// positive definite.
type BlockFn = fn(&Cache, f64, &[usize; LANES]) -> std::result::Result<(Lanes, Lanes), usize>;

fn block_terms<const K: usize>(c: &Cache, s: f64, idx: &[usize; LANES]) -> std::result::Result<(Lanes, Lanes), usize> {
    let gram: &[f64] = &c.gram[..K * K];
    let lane_slice = |v: &[f64], l: usize| -> [f64; K] { v[idx[l] * K..idx[l] * K + K].try_into().expect("K entries") };
    let e: [[f64; K]; LANES] = std::array::from_fn(|l| lane_slice(&c.half_g, l));
    let mut m = [[[0.0; LANES]; K]; K];
    let mut y_re = [[0.0; LANES]; K];
    let mut y_im = [[0.0; LANES]; K];
    for l in 0..LANES {
        let re = lane_slice(&c.u_re, l);
        let im = lane_slice(&c.u_im, l);
        for a in 0..K {
            y_re[a][l] = re[a];
            y_im[a][l] = im[a];
        }
    }
    for a in 0..K {
        for b in 0..a {
            m[a][b] = [gram[a * K + b]; LANES];
        }
        for l in 0..LANES {
            m[a][a][l] = gram[a * K + a] + s / e[l][a];
        }
    }
    let mut quad = [0.0; LANES];
    let mut det = [1.0; LANES];
    for j in 0..K {
        let mut v = [[0.0; LANES]; K];
        let mut d = m[j][j];
        for p in 0..j {
            for l in 0..LANES {
                v[p][l] = m[j][p][l] * m[p][p][l];
                d[l] -= m[j][p][l] * v[p][l];
            }
        }
        if let Some(lane) = d.iter().position(|&x| !(x > 0.0)) {
            return Err(lane);
        }
        m[j][j] = d;
        let mut inv_d = [0.0; LANES];
        for l in 0..LANES {
            inv_d[l] = 1.0 / d[l];
        }
        for i in (j + 1)..K {
            let mut acc = m[i][j];
            for p in 0..j {
                for l in 0..LANES {
                    acc[l] -= m[i][p][l] * v[p][l];
                }
            }
            for l in 0..LANES {
                m[i][j][l] = acc[l] * inv_d[l];
            }
        }
        for p in 0..j {
            for l in 0..LANES {
                y_re[j][l] -= m[j][p][l] * y_re[p][l];
                y_im[j][l] -= m[j][p][l] * y_im[p][l];
            }
        }
        for l in 0..LANES {
            quad[l] += (y_re[j][l] * y_re[j][l] + y_im[j][l] * y_im[j][l]) * inv_d[l];
            det[l] *= e[l][j] * d[l];
        }
    }
    Ok((quad, det))
}

/// Same as [`block_terms`] for any `K`, with heap scratch.
fn block_terms_dyn(c: &Cache, s: f64, idx: &[usize; LANES]) -> std::result::Result<(Lanes, Lanes), usize> {
    let k = c.k;
    let mut quad = [0.0; LANES];
    let mut det = [1.0; LANES];
    let mut m = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (l, &f) in idx.iter().enumerate() {
        let e = &c.half_g[f * k..(f + 1) * k];
        m.copy_from_slice(&c.gram);
        for j in 0..k {
            m[j * k + j] += s / e[j];
        }
        if !ldl_in_place(&mut m, k) {
            return Err(l);
        }
        for j in 0..k {
            det[l] *= e[j] * m[j * k + j];
        }
        b.copy_from_slice(&c.u_re[f * k..(f + 1) * k]);
        quad[l] = ldl_quad(&m, k, &mut b);
        b.copy_from_slice(&c.u_im[f * k..(f + 1) * k]);
        quad[l] += ldl_quad(&m, k, &mut b);
    }
    Ok((quad, det))
}

impl Target for WhittleTarget {
    fn reset(&mut self, state: &ChainState) -> Result<f64> {
        if state.n_channels() != self.n {
            return Err(Error::Dimension(format!(
                "state has {} channels, data has {}",
                state.n_channels(),
                self.n
            )));
        }
        self.undo = Undo::None;
        self.rebuild(state);
        self.current = self.evaluate()?;
        Ok(self.current)
    }

    fn loglik(&self) -> f64 {
        self.current
    }

    fn propose(&mut self, state: &ChainState, change: Change) -> Result<f64> {
        self.restore();
        let k = self.cache.k;
        let change = if state.k() != k { Change::Full } else { change };
        match change {
            Change::Kernel(j) => {
                let column = (0..self.n_freq).map(|m| self.cache.half_g[m * k + j]).collect();
                self.undo = Undo::Kernel { j, column };
                self.fill_kernel(state, j);
            }
            Change::WeightsRow(i) => {
                let n = self.n;
                self.scratch_row.resize(k, 0.0);
                state.weight_row_into(i, &mut self.scratch_row);
                let c = &mut self.cache;
                let old: Vec<f64> = c.lambda[i * k..(i + 1) * k].to_vec();
                self.undo = Undo::Row {
                    i,
                    row: old.clone(),
                    u_re: c.u_re.clone(),
                    u_im: c.u_im.clone(),
                    gram: c.gram.clone(),
                };
                let new = &self.scratch_row;
                let delta: Vec<f64> = new.iter().zip(&old).map(|(a, b)| a - b).collect();
                for m in 0..self.n_freq {
                    let (dr, di) = (self.d_re[m * n + i], self.d_im[m * n + i]);
                    for j in 0..k {
                        c.u_re[m * k + j] += delta[j] * dr;
                        c.u_im[m * k + j] += delta[j] * di;
                    }
                }
                for a in 0..k {
                    for b in 0..k {
                        c.gram[a * k + b] += new[a] * new[b] - old[a] * old[b];
                    }
                }
                c.lambda[i * k..(i + 1) * k].copy_from_slice(new);
            }
            Change::Noise => {
                self.undo = Undo::Noise(self.cache.half_noise);
                self.cache.half_noise = 0.5 * state.noise_var();
            }
            Change::Full => {
                self.undo = Undo::Full(Box::new(self.cache.clone()));
                self.rebuild(state);
            }
        }
        self.pending = self.evaluate()?;
        Ok(self.pending)
    }

    fn accept(&mut self) {
        self.undo = Undo::None;
        self.current = self.pending;
    }

    fn reject(&mut self) {
        self.restore();
    }
}
