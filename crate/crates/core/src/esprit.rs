//! Single-snapshot ESPRIT and the mapping from estimated responses back to
//! delay, Doppler and departure spatial frequencies.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, TargetParameters};
use crate::error::{Error, Result};
use crate::linalg::{dominant_rank1, svd, unvectorize, ComplexMatrix, ComplexVector};

/// Maps an angle into `(−π, π]`.
pub fn wrap_to_pi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Distance between `a` and `b` on a circle of circumference `period`.
pub fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Phase step of a length-≥2 vector that is (nearly) `s·zᵖ`: the LS
/// solution of `x[1..] ≈ z x[..P−1]`.
fn shift_phase(x: &[Complex64]) -> Result<f64> {
    let (head, tail) = (&x[..x.len() - 1], &x[1..]);
    let num: Complex64 = head.iter().zip(tail).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = head.iter().map(|a| a.norm_sqr()).sum();
    if den == 0.0 || num.norm_sqr() == 0.0 {
        return Err(Error::Degenerate("shift-invariance equation has no signal".into()));
    }
    Ok((num / den).arg())
}

/// Frequency `ω` of `x[p] ≈ s·e^{jωp}` from one snapshot.
///
/// The snapshot is smoothed into a `P₁ × (P − P₁ + 1)` Hankel matrix with
/// `P₁ = ⌊P/2⌋ + 1`; the shift invariance of its dominant left singular
/// vector gives `e^{jω}`.
pub fn esprit_1d(x: &ComplexVector) -> Result<f64> {
    let p = x.len();
    if p < 3 {
        return Err(Error::InsufficientLength { len: p, min: 3 });
    }
    if x.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Degenerate("ESPRIT on a zero vector".into()));
    }
    let p1 = p / 2 + 1;
    let hankel = ComplexMatrix::from_fn(p1, p - p1 + 1, |i, j| x[i + j]);
    let u = svd(&hankel).u.column(0).into_owned();
    shift_phase(u.as_slice())
}

/// Departure spatial frequencies; `None` along an axis with one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialFrequencies {
    pub mu: Option<f64>,
    pub psi: Option<f64>,
}

/// Recovers `(μ, ψ)` from an estimate of `vec(p pᵀ)`, `p = p_y(μ) ⊗ p_z(ψ)`.
///
/// The symmetric part of the `N × N` reshaping is factored as rank one;
/// the factor, laid out as an `N_z × N_y` grid, is itself the rank-1
/// matrix `p_z p_yᵀ`, whose singular vectors carry the two frequencies.
pub fn esprit_2d(vec_p: &ComplexVector, n_y: usize, n_z: usize) -> Result<SpatialFrequencies> {
    let n = n_y * n_z;
    if vec_p.len() != n * n {
        return Err(Error::dim(format!(
            "expected a vector of length (N_y·N_z)² = {}, got {}",
            n * n,
            vec_p.len()
        )));
    }
    let pm = unvectorize(vec_p, n, n)?;
    let sym = (&pm + pm.transpose()) * Complex64::new(0.5, 0.0);
    let p_hat = dominant_rank1(&sym)?.u;

    let grid = ComplexMatrix::from_fn(n_z, n_y, |nz, ny| p_hat[ny * n_z + nz]);
    let factors = dominant_rank1(&grid)?;
    let psi = if n_z >= 2 {
        Some(wrap_to_pi(-shift_phase(factors.u.as_slice())?))
    } else {
        None
    };
    let mu = if n_y >= 2 {
        let p_y = factors.v.conjugate();
        Some(wrap_to_pi(-shift_phase(p_y.as_slice())?))
    } else {
        None
    };
    Ok(SpatialFrequencies { mu, psi })
}

/// Relative errors `|x − x̂| / |x|`, with `x − x̂` taken modulo the
/// period of the corresponding steering model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    pub tau: f64,
    pub nu: f64,
    pub mu_d: Option<f64>,
    pub psi_d: Option<f64>,
}

impl ParameterErrors {
    pub fn max(&self) -> f64 {
        [Some(self.tau), Some(self.nu), self.mu_d, self.psi_d]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingEstimate {
    /// Delay (s), in `[0, 1/Δf)`.
    pub tau: f64,
    /// Doppler (Hz), in `[−1/(2T_s), 1/(2T_s))`.
    pub nu: f64,
    pub mu_d: Option<f64>,
    pub psi_d: Option<f64>,
    /// Elevation of departure, when the back-mapping is defined.
    pub theta_d: Option<f64>,
    /// Azimuth of departure, when the back-mapping is defined.
    pub phi_d: Option<f64>,
    pub errors: Option<ParameterErrors>,
}

fn relative(diff: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / truth.abs()
    }
}

impl SensingEstimate {
    pub fn compare(&self, truth: &TargetParameters, cfg: &ScenarioConfig) -> ParameterErrors {
        ParameterErrors {
            tau: relative(circular_distance(self.tau, truth.tau, 1.0 / cfg.delta_f), truth.tau),
            nu: relative(circular_distance(self.nu, truth.nu, 1.0 / cfg.t_s), truth.nu),
            mu_d: self
                .mu_d
                .map(|m| relative(circular_distance(m, truth.mu_d, 2.0 * PI), truth.mu_d)),
            psi_d: self
                .psi_d
                .map(|p| relative(circular_distance(p, truth.psi_d, 2.0 * PI), truth.psi_d)),
        }
    }

    pub fn with_truth(mut self, truth: &TargetParameters, cfg: &ScenarioConfig) -> Self {
        self.errors = Some(self.compare(truth, cfg));
        self
    }
}

/// Inverts `μ = π sinθ sinφ`, `ψ = π cosθ`.
pub fn departure_angles(mu: f64, psi: f64) -> Option<(f64, f64)> {
    let c = psi / PI;
    if !(-1.0..=1.0).contains(&c) {
        return None;
    }
    let theta = c.acos();
    let s = theta.sin();
    if s == 0.0 {
        return None;
    }
    let arg = mu / (PI * s);
    if !(-1.0..=1.0).contains(&arg) {
        return None;
    }
    Some((theta, arg.asin()))
}

/// Turns the stage-2 responses and the stage-1 core into physical
/// estimates. Delay responses carry phase `−2πΔfτ` per subcarrier and
/// Doppler responses `+2πT_sν` per symbol.
pub fn extract_parameters(
    d_hat: &ComplexVector,
    c_hat: &ComplexVector,
    vec_p_hat: &ComplexVector,
    cfg: &ScenarioConfig,
) -> Result<SensingEstimate> {
    let omega_c = esprit_1d(c_hat)?;
    let omega_d = esprit_1d(d_hat)?;
    let period = 1.0 / cfg.delta_f;
    let tau = (-omega_c / (2.0 * PI * cfg.delta_f)).rem_euclid(period);
    // half-open [−π, π) so that ν stays in [−1/(2T_s), 1/(2T_s))
    let omega_d = if omega_d >= PI { omega_d - 2.0 * PI } else { omega_d };
    let nu = omega_d / (2.0 * PI * cfg.t_s);

    let sf = esprit_2d(vec_p_hat, cfg.n_y, cfg.n_z)?;
    let angles = match (sf.mu, sf.psi) {
        (Some(mu), Some(psi)) => departure_angles(mu, psi),
        _ => None,
    };
    Ok(SensingEstimate {
        tau,
        nu,
        mu_d: sf.mu,
        psi_d: sf.psi,
        theta_d: angles.map(|a| a.0),
        phi_d: angles.map(|a| a.1),
        errors: None,
    })
}
