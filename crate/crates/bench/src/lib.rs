//! Shared fixtures for the criterion benches.

use oscmix_core::sim::LatentSpec;
use oscmix_core::{dft, gen_scenario1, standardize, Ar2Kernel, FourierData, MixtureModel, Scenario};

/// Fourier data of a standardized scenario-1 series of length `len`.
pub fn scenario1_data(len: usize, seed: u64) -> FourierData {
    let (series, _) = gen_scenario1(len, seed).expect("scenario 1 simulates");
    dft(&standardize(&series).expect("channels vary"))
}

/// The scenario-1 generating model, with the noise level as a one-sided spectrum.
pub fn scenario1_model() -> MixtureModel {
    let scenario = Scenario::ar2_mixture();
    let kernels = scenario
        .latents
        .iter()
        .map(|l| match *l {
            LatentSpec::Ar2 { psi, log_mod } => Ar2Kernel { psi, log_mod },
            _ => unreachable!("scenario 1 has only AR(2) latents"),
        })
        .collect();
    let noise_var = 2.0 * scenario.noise_sd.powi(2);
    MixtureModel::new(kernels, scenario.mixing(), noise_var).expect("scenario 1 is a valid mixture")
}
