//! Bayesian spectral estimation for multichannel time series.
//!
//! Each channel is modelled as a weighted combination of latent AR(2)
//! oscillations plus white noise. The number of oscillations, their peak
//! locations and bandwidths, and the per-channel weights are inferred by a
//! Metropolis-within-Gibbs sampler over the multivariate Whittle likelihood,
//! with a Dirichlet-process (stick-breaking) prior on the weights.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kernel;
pub mod linalg;
pub mod mixture;
pub mod sampler;
pub mod sim;
pub mod summary;
pub mod whittle;

pub use error::{Error, Result};
pub use kernel::{ar2_coeffs, kernel_autocov, kernel_density, Ar2Coeffs, Ar2Kernel};
pub use mixture::{
    autocovariance, coherence, cross_spectrum, pdc_latent_to_latent, pdc_latent_to_signal, pdc_signal_to_signal,
    spectral_matrix, transfer_poly, BlockCovariance, MixtureModel, SpectralMatrix,
};
pub use sampler::{run_chain, run_chains, ChainTrace, SamplerConfig};
pub use sim::{gen_scenario1, gen_scenario2, iae, periodogram_baseline, Scenario, TrueSpectrum};
pub use summary::{
    band_table, band_table_csv, cluster_components, filter_top, mean_spectral_matrix, model_from_clusters, Band,
    BandRow, ClusterConfig, ClusterReport, StackedSamples, TrialReport,
};
pub use whittle::{dft, standardize, whittle_loglik, whittle_loglik_with, FourierData, MultiChannelSeries};
