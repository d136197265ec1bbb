//! Chain traces and their on-disk format.
//!
//! A trace file starts with one `# {json}` header line describing the layout,
//! followed by one CSV row per recorded sweep:
//! `iteration,K,loglik,noise_var,alpha,psi_1..psi_K,log_mod_1..log_mod_K,lambda_11..lambda_nK`
//! where the weights are row-major `n × K`. Rows have `5 + K(n + 2)` fields.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::chain::MoveStats;
use super::state::{renormalize_rows, ChainState};
use crate::error::{Error, Result};
use crate::kernel::Ar2Kernel;
use crate::mixture::MixtureModel;

const FORMAT: &str = "oscmix-trace";
const VERSION: u32 = 1;
const LAYOUT: &str = "iteration,K,loglik,noise_var,alpha,psi[K],log_mod[K],lambda[n*K] (row-major)";

/// The recorded state after one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub k: usize,
    pub psi: Vec<f64>,
    pub log_mod: Vec<f64>,
    /// Row-major `n × K`.
    pub lambda: Vec<f64>,
    pub noise_var: f64,
    pub alpha: f64,
    pub loglik: f64,
}

impl Snapshot {
    pub fn from_state(iteration: usize, state: &ChainState, loglik: f64) -> Self {
        Snapshot {
            iteration,
            k: state.k(),
            psi: state.psi().to_vec(),
            log_mod: state.log_mod().to_vec(),
            lambda: state.weights().into_raw_vec_and_offset().0,
            noise_var: state.noise_var(),
            alpha: state.alpha(),
            loglik,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.lambda.len() / self.k
    }

    pub fn weights(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n_channels(), self.k), self.lambda.clone()).expect("snapshot weights are n × K")
    }

    pub fn kernel(&self, j: usize) -> Ar2Kernel {
        Ar2Kernel {
            psi: self.psi[j],
            log_mod: self.log_mod[j],
        }
    }

    pub fn to_model(&self) -> Result<MixtureModel> {
        let kernels = (0..self.k).map(|j| self.kernel(j)).collect();
        MixtureModel::new(kernels, renormalize_rows(self.weights()), self.noise_var)
    }
}

/// All recorded sweeps of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub chain_id: u64,
    pub seed: u64,
    pub n_channels: usize,
    pub thin: usize,
    pub snapshots: Vec<Snapshot>,
    pub stats: MoveStats,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    layout: String,
    n_channels: usize,
    chain_id: u64,
    seed: u64,
    thin: usize,
    stats: MoveStats,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn logliks(&self) -> impl Iterator<Item = f64> + '_ {
        self.snapshots.iter().map(|s| s.loglik)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            layout: LAYOUT.into(),
            n_channels: self.n_channels,
            chain_id: self.chain_id,
            seed: self.seed,
            thin: self.thin,
            stats: self.stats,
        };
        writeln!(writer, "# {}", serde_json::to_string(&header)?)?;
        let mut line = String::new();
        for s in &self.snapshots {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(line, "{},{},{},{},{}", s.iteration, s.k, s.loglik, s.noise_var, s.alpha);
            for v in s.psi.iter().chain(&s.log_mod).chain(&s.lambda) {
                let _ = write!(line, ",{v}");
            }
            writeln!(writer, "{line}")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Trace {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = BufReader::new(reader).lines();
        let first = lines.next().ok_or_else(|| fail("empty trace file".into()))??;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| fail("missing header line".into()))?;
        let header: Header = serde_json::from_str(json).map_err(|e| fail(e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(fail(format!(
                "unsupported trace format {} v{}",
                header.format, header.version
            )));
        }
        let n = header.n_channels;
        let mut snapshots = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = idx + 2;
            let fields: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .ok_or_else(|| fail(format!("row {row}: missing field {}", i + 1)))?
                    .parse::<f64>()
                    .map_err(|e| fail(format!("row {row}, field {}: {e}", i + 1)))
            };
            let iteration = fields[0]
                .parse::<usize>()
                .map_err(|e| fail(format!("row {row}: {e}")))?;
            let k = num(1)? as usize;
            let expected = 5 + k * (n + 2);
            if k == 0 || fields.len() != expected {
                return Err(fail(format!(
                    "row {row}: {} fields, expected {expected} for K = {k}",
                    fields.len()
                )));
            }
            let block = |start: usize, len: usize| -> Result<Vec<f64>> { (start..start + len).map(num).collect() };
            snapshots.push(Snapshot {
                iteration,
                k,
                loglik: num(2)?,
                noise_var: num(3)?,
                alpha: num(4)?,
                psi: block(5, k)?,
                log_mod: block(5 + k, k)?,
                lambda: block(5 + 2 * k, n * k)?,
            });
        }
        Ok(ChainTrace {
            chain_id: header.chain_id,
            seed: header.seed,
            n_channels: n,
            thin: header.thin,
            snapshots,
            stats: header.stats,
        })
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Trace {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::read(file, path)
    }
}
