//! End-to-end estimation: scenario synthesis, both ALS stages and ESPRIT.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::config::{spatial_frequencies, ScenarioConfig, TargetParameters};
use crate::error::Result;
use crate::esprit::{extract_parameters, SensingEstimate};
use crate::estimation::{
    als_stage1, als_stage2, normalize_core_gauge, tensorize_f, EstimatorSettings, Stage1Estimate, Stage2Estimate,
};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::signal::{
    build_bs_ris_channel, build_codebook, generate_echo_tensor, generate_pilots, path_gain_magnitude, seeded_rng,
    RisCodebook,
};
use crate::tensor::ComplexTensor3;

/// Everything known about one realization: the truth, the probing design
/// and the noiseless echo.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub target: TargetParameters,
    pub codebook: RisCodebook,
    pub pilots: ComplexTensor3,
    /// BS–RIS channel, known from the deployment geometry.
    pub h: ComplexMatrix,
    pub alpha: Complex64,
    pub clean: ComplexTensor3,
}

impl Scenario {
    pub fn new(cfg: &ScenarioConfig, target: TargetParameters, alpha: Complex64, pilot_seed: u64) -> Result<Self> {
        cfg.validate()?;
        target.validate(cfg)?;
        let codebook = build_codebook(cfg);
        let pilots = generate_pilots(cfg, pilot_seed);
        let clean = generate_echo_tensor(cfg, &target, &codebook, &pilots, alpha)?;
        Ok(Self {
            h: build_bs_ris_channel(target.eta, target.mu_a, target.psi_a, cfg),
            cfg: cfg.clone(),
            target,
            codebook,
            pilots,
            alpha,
            clean,
        })
    }

    /// Random realization: angles uniform on `[0, π/2]`, the round-trip
    /// delay of the configured geometry, a Doppler shift with
    /// `|ν T_s| ∈ [0.05, 0.45]` and a gain with uniform phase.
    pub fn draw(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let target = draw_target(cfg, &mut rng);
        let alpha = Complex64::from_polar(path_gain_magnitude(cfg)?, rng.random_range(-PI..PI));
        let pilot_seed = rng.random();
        Self::new(cfg, target, alpha, pilot_seed)
    }
}

pub fn draw_target(cfg: &ScenarioConfig, rng: &mut impl Rng) -> TargetParameters {
    let mut angle = || rng.random_range(0.0..=FRAC_PI_2);
    let (theta_d, phi_d, theta_a, phi_a, kappa) = (angle(), angle(), angle(), angle(), angle());
    let (mu_d, psi_d) = spatial_frequencies(theta_d, phi_d);
    let (mu_a, psi_a) = spatial_frequencies(theta_a, phi_a);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let nu = sign * rng.random_range(0.05..0.45) / cfg.t_s;
    TargetParameters {
        tau: cfg.round_trip_delay(),
        nu,
        mu_d,
        psi_d,
        mu_a,
        psi_a,
        eta: PI * kappa.cos(),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub estimate: SensingEstimate,
    pub stage1: Stage1Estimate,
    pub stage2: Stage2Estimate,
    /// Gauge-normalized core estimate `α vec(p pᵀ)`.
    pub core: ComplexVector,
}

/// Runs both ALS stages on `y` and extracts the target parameters. The
/// probing design (codebook, pilots) and the BS–RIS channel come from
/// `scenario`; its truth is only used to fill in the estimate's errors.
pub fn run_pipeline(y: &ComplexTensor3, scenario: &Scenario, settings: &EstimatorSettings) -> Result<PipelineOutput> {
    settings.validate()?;
    let cfg = &scenario.cfg;
    let stage1 = als_stage1(y, &scenario.codebook, &settings.stage1)?;
    let f_tensor = tensorize_f(&stage1.f_hat, cfg.m, cfg.q)?;
    let stage2 = als_stage2(&f_tensor, &scenario.pilots, &settings.stage2)?;
    let core = normalize_core_gauge(
        &stage1,
        &stage2,
        &scenario.h,
        &scenario.pilots,
        &scenario.codebook,
        settings.stage1.pinv_tol,
    )?;
    let estimate = extract_parameters(&stage2.d_hat, &stage2.c_hat, &core, cfg)?.with_truth(&scenario.target, cfg);
    Ok(PipelineOutput {
        estimate,
        stage1,
        stage2,
        core,
    })
}
