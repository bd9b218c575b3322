//! Monostatic target sensing through a reconfigurable intelligent surface.
//!
//! The echo received at a multi-antenna base station over `Q` subcarriers,
//! `M` symbols and `K` RIS configurations forms a third-order tensor with a
//! Tucker structure. Two alternating-least-squares stages separate the
//! factors, and ESPRIT turns the recovered Vandermonde responses into the
//! target's delay, Doppler shift and departure spatial frequencies.
//!
//! ```no_run
//! use ris_sensing::{add_noise_at_snr, run_pipeline, EstimatorSettings, Scenario, ScenarioConfig};
//!
//! let cfg = ScenarioConfig::desk();
//! let scenario = Scenario::draw(&cfg, 7)?;
//! let echo = add_noise_at_snr(&scenario.clean, 20.0, 8)?;
//! let out = run_pipeline(&echo.noisy, &scenario, &EstimatorSettings::default())?;
//! println!("tau = {:.3e} s, nu = {:.1} Hz", out.estimate.tau, out.estimate.nu);
//! # Ok::<(), ris_sensing::Error>(())
//! ```

pub mod config;
pub mod error;
pub mod esprit;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod pipeline;
pub mod selftest;
pub mod signal;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use config::{Codebook, ScenarioConfig, TargetParameters};
pub use error::{Error, Result};
pub use esprit::{esprit_1d, esprit_2d, extract_parameters, ParameterErrors, SensingEstimate, SpatialFrequencies};
pub use estimation::{
    als_stage1, als_stage2, check_identifiability, AlsSettings, EstimatorSettings, Stage1Estimate, Stage2Estimate,
};
pub use harness::{
    complexity_estimate, run_sweep, run_trial, write_results, ComplexityReport, ExperimentSpec, RmseRecord,
    SweepVariable,
};
pub use linalg::{ComplexMatrix, ComplexVector};
pub use pipeline::{run_pipeline, PipelineOutput, Scenario};
pub use signal::{add_noise_at_snr, generate_echo_tensor, EchoData, RisCodebook};
pub use tensor::{fold, mode_product, unfold, ComplexTensor3, Mode};
