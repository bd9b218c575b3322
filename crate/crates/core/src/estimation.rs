//! Two-stage alternating least squares.
//!
//! Stage 1 fits the echo tensor `𝓨 = 𝓟 ×₁ H ×₂ F ×₃ (W ⋄ W)ᵀ` for the BS
//! channel `H`, the effective factor `F` and the `N²` diagonal of the core.
//! Stage 2 reshapes `F̂` into `𝓕 = 𝓧 ×₁ Hᵀ ×₂ D(d) ×₃ D(c)` and fits the
//! Doppler and delay responses `d`, `c` with the pilots `𝓧` known.
//!
//! Every block update is an exact least-squares solve, so the fit error
//! never increases after the first sweep.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_norm_sq, khatri_rao_lstsq, kronecker, pseudoinverse, ComplexMatrix, ComplexVector, DEFAULT_PINV_TOL,
};
use crate::signal::{complex_gaussian, pilot_matrix, seeded_rng, RisCodebook};
use crate::tensor::{unfold, ComplexTensor3, Mode};

/// Iteration controls for one ALS stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsSettings {
    pub max_iters: usize,
    /// Stop once `|e(i) − e(i−1)| < delta · ‖data‖²_F`.
    pub delta: f64,
    /// Relative singular-value cutoff for every pseudoinverse.
    pub pinv_tol: f64,
    /// Seed for the random initial factors.
    pub seed: u64,
    /// Independent random starts; the run with the lowest final error wins.
    pub restarts: usize,
}

impl Default for AlsSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            delta: 1e-8,
            pinv_tol: DEFAULT_PINV_TOL,
            seed: 0,
            restarts: 1,
        }
    }
}

impl AlsSettings {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.pinv_tol >= 0.0 && self.pinv_tol < 1.0) {
            return Err(Error::Config(format!(
                "pinv_tol must be in [0, 1), got {}",
                self.pinv_tol
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Settings for both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub stage1: AlsSettings,
    pub stage2: AlsSettings,
}

impl Default for EstimatorSettings {
    /// Stage 1 is exact after a couple of sweeps on clean data. Stage 2
    /// converges linearly, and its tail directly sets the delay accuracy,
    /// so it runs to a much tighter threshold with a few random starts to
    /// step around the occasional poor local minimum.
    fn default() -> Self {
        Self {
            stage1: AlsSettings::default(),
            stage2: AlsSettings {
                delta: 1e-20,
                restarts: 3,
                ..AlsSettings::default()
            },
        }
    }
}

impl EstimatorSettings {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Estimate {
    /// `L × N`.
    pub h_hat: ComplexMatrix,
    /// `MQ × N`.
    pub f_hat: ComplexMatrix,
    /// Estimated diagonal of `[𝓟]₍₃₎`, length `N²`.
    pub vec_p_hat: ComplexVector,
    /// `e(i) = ‖𝓨 − 𝓨̂(i)‖²_F` after each sweep.
    pub error_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖𝓨‖²_F`.
    pub data_energy: f64,
}

impl Stage1Estimate {
    pub fn relative_error(&self) -> f64 {
        self.error_history.last().copied().unwrap_or(f64::NAN) / self.data_energy
    }

    /// Model tensor `𝓨̂` for the current factors.
    pub fn reconstruct(&self, codebook: &RisCodebook) -> Result<ComplexTensor3> {
        stage1_model(&self.h_hat, &self.f_hat, &self.vec_p_hat, &codebook.omega())
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Estimate {
    /// Doppler response estimate, length `M`.
    pub d_hat: ComplexVector,
    /// Delay response estimate, length `Q`.
    pub c_hat: ComplexVector,
    /// `L × N`.
    pub h_hat: ComplexMatrix,
    /// `e(i) = ‖𝓕 − 𝓕̂(i)‖²_F` after each sweep.
    pub error_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖𝓕‖²_F`.
    pub data_energy: f64,
}

impl Stage2Estimate {
    pub fn relative_error(&self) -> f64 {
        self.error_history.last().copied().unwrap_or(f64::NAN) / self.data_energy
    }
}

fn random_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

fn random_vector(rng: &mut impl rand::Rng, len: usize) -> ComplexVector {
    ComplexVector::from_fn(len, |_, _| complex_gaussian(rng))
}

/// Seed of the `r`-th restart; restart 0 uses the configured seed itself.
fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        crate::harness::mix_seed(&[seed, r as u64])
    }
}

fn stage1_model(
    h: &ComplexMatrix,
    f: &ComplexMatrix,
    vec_p: &ComplexVector,
    omega: &ComplexMatrix,
) -> Result<ComplexTensor3> {
    let mut scaled = omega.clone();
    for (mut col, p) in scaled.column_iter_mut().zip(vec_p.iter()) {
        col *= *p;
    }
    let y3 = scaled * kronecker(f, h).transpose();
    crate::tensor::fold(&y3, Mode::Three, [h.nrows(), f.nrows(), omega.nrows()])
}

/// `Z₁` with `[𝓨]₍₁₎ = H Z₁`: row `n_H` is the column-major flattening of
/// `F S_{n_H}ᵀ`, where `S = Ω D(vec P)` and `S_{n_H}` keeps its columns
/// `n_F·N + n_H`.
fn mode1_design(f: &ComplexMatrix, s: &ComplexMatrix, n: usize) -> ComplexMatrix {
    let (mq, k) = (f.nrows(), s.nrows());
    let mut z = ComplexMatrix::zeros(n, mq * k);
    for nh in 0..n {
        let s_nh = ComplexMatrix::from_fn(k, n, |kk, nf| s[(kk, nf * n + nh)]);
        let block = f * s_nh.transpose();
        for (j, v) in block.as_slice().iter().enumerate() {
            z[(nh, j)] = *v;
        }
    }
    z
}

/// `Z₂` with `[𝓨]₍₂₎ = F Z₂`: row `n_F` is the column-major flattening of
/// `H (S[:, n_F·N .. n_F·N + N])ᵀ`.
fn mode2_design(h: &ComplexMatrix, s: &ComplexMatrix, n: usize) -> ComplexMatrix {
    let (l, k) = (h.nrows(), s.nrows());
    let mut z = ComplexMatrix::zeros(n, l * k);
    for nf in 0..n {
        let block = h * s.columns(nf * n, n).transpose();
        for (j, v) in block.as_slice().iter().enumerate() {
            z[(nf, j)] = *v;
        }
    }
    z
}

fn check_finite(stage: u8, iteration: usize, e: f64) -> Result<()> {
    if e.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { stage, iteration })
    }
}

/// Checks `K ≥ N²` and `MQ ≥ L`, below which the stage-1 subproblems have
/// no unique solution.
pub fn check_identifiability(l: usize, n: usize, mq: usize, k: usize) -> Result<()> {
    if k < n * n {
        return Err(Error::Identifiability(format!(
            "K = {k} blocks cannot resolve N² = {} core entries",
            n * n
        )));
    }
    if mq < l {
        return Err(Error::Identifiability(format!(
            "MQ = {mq} pilots cannot resolve L = {l} BS antennas"
        )));
    }
    Ok(())
}

/// Stage-1 Tucker-3 fit of the `L × MQ × K` echo tensor.
pub fn als_stage1(y: &ComplexTensor3, codebook: &RisCodebook, settings: &AlsSettings) -> Result<Stage1Estimate> {
    settings.validate()?;
    let [l, mq, k] = y.dims();
    let n = codebook.n();
    if codebook.k() != k {
        return Err(Error::dim(format!(
            "echo tensor has {k} blocks but the codebook has {} columns",
            codebook.k()
        )));
    }
    check_identifiability(l, n, mq, k)?;
    let data_energy = y.frobenius_norm_sq();
    if data_energy == 0.0 {
        return Err(Error::Degenerate("echo tensor is identically zero".into()));
    }

    let omega = codebook.omega();
    let y1 = unfold(y, Mode::One);
    let y2 = unfold(y, Mode::Two);
    let y3 = unfold(y, Mode::Three);

    let mut best: Option<Stage1Estimate> = None;
    for r in 0..settings.restarts {
        let mut rng = seeded_rng(restart_seed(settings.seed, r));
        let mut h = random_matrix(&mut rng, l, n);
        let mut f = random_matrix(&mut rng, mq, n);
        let mut vec_p = random_vector(&mut rng, n * n);

        let mut history = Vec::new();
        let mut converged = false;
        for it in 1..=settings.max_iters {
            let s = scale_columns(&omega, &vec_p);
            h = &y1 * pseudoinverse(&mode1_design(&f, &s, n), settings.pinv_tol);
            f = &y2 * pseudoinverse(&mode2_design(&h, &s, n), settings.pinv_tol);
            let a = kronecker(&f, &h);
            vec_p = khatri_rao_lstsq(&a, &omega, &y3, settings.pinv_tol)?;

            let e = frobenius_norm_sq(&(&y3 - scale_columns(&omega, &vec_p) * a.transpose()));
            check_finite(1, it, e)?;
            let done = history
                .last()
                .is_some_and(|&prev: &f64| (prev - e).abs() < settings.delta * data_energy);
            history.push(e);
            if done {
                converged = true;
                break;
            }
        }
        let est = Stage1Estimate {
            h_hat: h,
            f_hat: f,
            vec_p_hat: vec_p,
            iterations: history.len(),
            error_history: history,
            converged,
            data_energy,
        };
        if best
            .as_ref()
            .map_or(true, |b| est.relative_error() < b.relative_error())
        {
            best = Some(est);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn scale_columns(m: &ComplexMatrix, v: &ComplexVector) -> ComplexMatrix {
    let mut out = m.clone();
    for (mut col, s) in out.column_iter_mut().zip(v.iter()) {
        col *= *s;
    }
    out
}

/// Reshapes `F̂` (`MQ × N`, Doppler index fastest) into `𝓕 ∈ C^{N×M×Q}`
/// with `𝓕[n, m, q] = F̂[q·M + m, n]`.
pub fn tensorize_f(f_hat: &ComplexMatrix, m: usize, q: usize) -> Result<ComplexTensor3> {
    if f_hat.nrows() != m * q {
        return Err(Error::dim(format!(
            "F has {} rows, expected M·Q = {}",
            f_hat.nrows(),
            m * q
        )));
    }
    Ok(ComplexTensor3::from_fn([f_hat.ncols(), m, q], |n, mm, qq| {
        f_hat[(qq * m + mm, n)]
    }))
}

/// Inverse of [`tensorize_f`].
pub fn flatten_f(f: &ComplexTensor3) -> ComplexMatrix {
    unfold(f, Mode::One).transpose()
}

/// Stage-2 fit of `𝓕 = 𝓧 ×₁ Hᵀ ×₂ D(d) ×₃ D(c)`, updating `d`, `c` and
/// `H` in turn.
pub fn als_stage2(
    f_tensor: &ComplexTensor3,
    pilots: &ComplexTensor3,
    settings: &AlsSettings,
) -> Result<Stage2Estimate> {
    settings.validate()?;
    let [n, m, q] = f_tensor.dims();
    let [l, pm, pq] = pilots.dims();
    if (pm, pq) != (m, q) {
        return Err(Error::dim(format!(
            "pilots are {:?} but the reshaped factor is {:?}",
            pilots.dims(),
            f_tensor.dims()
        )));
    }
    let data_energy = f_tensor.frobenius_norm_sq();
    if data_energy == 0.0 {
        return Err(Error::Degenerate("reshaped factor is identically zero".into()));
    }

    let f1 = unfold(f_tensor, Mode::One);
    let f2 = unfold(f_tensor, Mode::Two);
    let f3 = unfold(f_tensor, Mode::Three);
    let x1 = pilot_matrix(pilots);
    let x2 = unfold(pilots, Mode::Two);
    let x3 = unfold(pilots, Mode::Three);
    let eye_m = ComplexMatrix::identity(m, m);
    let eye_q = ComplexMatrix::identity(q, q);

    let mut best: Option<Stage2Estimate> = None;
    for r in 0..settings.restarts {
        let mut rng = seeded_rng(restart_seed(settings.seed, r));
        let mut d = random_vector(&mut rng, m);
        let mut c = random_vector(&mut rng, q);
        let mut h = random_matrix(&mut rng, l, n);

        let mut history = Vec::new();
        let mut converged = false;
        for it in 1..=settings.max_iters {
            let ht = h.transpose();
            let b_d = &x2 * kronecker(&ComplexMatrix::from_diagonal(&c), &ht).transpose();
            d = khatri_rao_lstsq(&b_d.transpose(), &eye_m, &f2, settings.pinv_tol)?;
            let b_c = &x3 * kronecker(&ComplexMatrix::from_diagonal(&d), &ht).transpose();
            c = khatri_rao_lstsq(&b_c.transpose(), &eye_q, &f3, settings.pinv_tol)?;

            let g = scale_pilot_columns(&x1, &c, &d);
            h = (&f1 * pseudoinverse(&g, settings.pinv_tol)).transpose();

            let e = frobenius_norm_sq(&(&f1 - h.transpose() * &g));
            check_finite(2, it, e)?;
            let done = history
                .last()
                .is_some_and(|&prev: &f64| (prev - e).abs() < settings.delta * data_energy);
            history.push(e);
            if done {
                converged = true;
                break;
            }
        }
        let est = Stage2Estimate {
            d_hat: d,
            c_hat: c,
            h_hat: h,
            iterations: history.len(),
            error_history: history,
            converged,
            data_energy,
        };
        if best
            .as_ref()
            .map_or(true, |b| est.relative_error() < b.relative_error())
        {
            best = Some(est);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `[𝓧]₍₁₎ (D(c) ⊗ D(d))ᵀ`: pilot column `q·M + m` scaled by `c[q]·d[m]`.
fn scale_pilot_columns(x1: &ComplexMatrix, c: &ComplexVector, d: &ComplexVector) -> ComplexMatrix {
    let m = d.len();
    let mut g = x1.clone();
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col *= c[j / m] * d[j % m];
    }
    g
}

/// Removes the stage-1 column scalings from the core estimate.
///
/// With `H = Ĥ Λ_h` and `F = F̂ Λ_f`, the estimated core entry
/// `n_F·N + n_H` carries the factor `λ_f[n_F] λ_h[n_H]`. `Λ_h` is fitted
/// column by column against the known BS–RIS channel, and `Λ_f` against
/// `D(c ⊗ d) Xᵀ H` rebuilt from the stage-2 responses, normalized so that
/// `c[0] = d[0] = 1`. The result is then projected onto the row space of
/// `(W ⋄ W)ᵀ`: components outside it never reach the data, so only the
/// projection is determined by the measurements (for a Sidon codebook
/// that projection is the symmetric part of `P`).
pub fn normalize_core_gauge(
    stage1: &Stage1Estimate,
    stage2: &Stage2Estimate,
    h_known: &ComplexMatrix,
    pilots: &ComplexTensor3,
    codebook: &RisCodebook,
    pinv_tol: f64,
) -> Result<ComplexVector> {
    let n = stage1.h_hat.ncols();
    if h_known.shape() != stage1.h_hat.shape() {
        return Err(Error::dim(format!(
            "known channel is {:?}, estimate is {:?}",
            h_known.shape(),
            stage1.h_hat.shape()
        )));
    }
    let unit_first = |v: &ComplexVector, what: &str| {
        if v[0].norm_sqr() == 0.0 {
            Err(Error::Degenerate(format!("first entry of the {what} estimate is zero")))
        } else {
            Ok(v / v[0])
        }
    };
    let d = unit_first(&stage2.d_hat, "Doppler")?;
    let c = unit_first(&stage2.c_hat, "delay")?;
    let f_model = scale_pilot_rows(&pilot_matrix(pilots).transpose(), &c, &d) * h_known;
    if f_model.shape() != stage1.f_hat.shape() {
        return Err(Error::dim(format!(
            "stage-2 responses imply F of shape {:?}, stage 1 estimated {:?}",
            f_model.shape(),
            stage1.f_hat.shape()
        )));
    }
    let lambda_h = column_scales(h_known, &stage1.h_hat, "H")?;
    let lambda_f = column_scales(&f_model, &stage1.f_hat, "F")?;

    let normalized = ComplexVector::from_fn(n * n, |idx, _| {
        stage1.vec_p_hat[idx] / (lambda_f[idx / n] * lambda_h[idx % n])
    });
    let omega = codebook.omega();
    Ok(pseudoinverse(&omega, pinv_tol) * (&omega * normalized))
}

/// Row `q·M + m` of `xt` scaled by `c[q]·d[m]`.
fn scale_pilot_rows(xt: &ComplexMatrix, c: &ComplexVector, d: &ComplexVector) -> ComplexMatrix {
    let m = d.len();
    let mut out = xt.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= c[i / m] * d[i % m];
    }
    out
}

/// Least-squares `λ[j] = argmin ‖truth[:, j] − λ est[:, j]‖`.
fn column_scales(truth: &ComplexMatrix, est: &ComplexMatrix, what: &str) -> Result<Vec<Complex64>> {
    est.column_iter()
        .zip(truth.column_iter())
        .map(|(e, t)| {
            let energy = e.norm_squared();
            if energy == 0.0 {
                Err(Error::Degenerate(format!("a column of the {what} estimate is zero")))
            } else {
                Ok(e.dotc(&t) / energy)
            }
        })
        .collect()
}

/// Ground truth against which the scaling relations are checked.
#[derive(Debug, Clone)]
pub struct ScalingReference {
    pub h: ComplexMatrix,
    pub f: ComplexMatrix,
    /// `α vec(p pᵀ)`.
    pub vec_p: ComplexVector,
    pub d: ComplexVector,
    pub c: ComplexVector,
}

/// Scaling factors and the relative residuals of the ambiguity relations
/// `H = Ĥ Λ_h`, `F = F̂ Λ_f`, `vec P = D(λ_f ⊗ λ_h)⁻¹ vec P̂`, `d = λ_ν d̂`
/// and `c = λ_τ ĉ`.
#[derive(Debug, Clone)]
pub struct ScalingDiagnostics {
    pub lambda_h: Vec<Complex64>,
    pub lambda_f: Vec<Complex64>,
    pub lambda_nu: Complex64,
    pub lambda_tau: Complex64,
    pub residual_h: f64,
    pub residual_f: f64,
    pub residual_p: f64,
    pub residual_d: f64,
    pub residual_c: f64,
}

impl ScalingDiagnostics {
    pub fn max_residual(&self) -> f64 {
        [
            self.residual_h,
            self.residual_f,
            self.residual_p,
            self.residual_d,
            self.residual_c,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn rel(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn resolve_scaling(
    stage1: &Stage1Estimate,
    stage2: &Stage2Estimate,
    reference: &ScalingReference,
    codebook: &RisCodebook,
) -> Result<ScalingDiagnostics> {
    let n = stage1.h_hat.ncols();
    let lambda_h = column_scales(&reference.h, &stage1.h_hat, "H")?;
    let lambda_f = column_scales(&reference.f, &stage1.f_hat, "F")?;
    let scalar = |truth: Complex64, est: Complex64, what: &str| {
        if est.norm_sqr() == 0.0 {
            Err(Error::Degenerate(format!("first entry of the {what} estimate is zero")))
        } else {
            Ok(truth / est)
        }
    };
    let lambda_nu = scalar(reference.d[0], stage2.d_hat[0], "Doppler")?;
    let lambda_tau = scalar(reference.c[0], stage2.c_hat[0], "delay")?;

    let h_fixed = ComplexMatrix::from_fn(stage1.h_hat.nrows(), n, |i, j| stage1.h_hat[(i, j)] * lambda_h[j]);
    let f_fixed = ComplexMatrix::from_fn(stage1.f_hat.nrows(), n, |i, j| stage1.f_hat[(i, j)] * lambda_f[j]);
    let p_fixed = ComplexVector::from_fn(n * n, |idx, _| {
        stage1.vec_p_hat[idx] / (lambda_f[idx / n] * lambda_h[idx % n])
    });
    // only the part of the core seen through (W ⋄ W)ᵀ is determined
    let omega = codebook.omega();
    let p_seen = &omega * (p_fixed - &reference.vec_p);

    Ok(ScalingDiagnostics {
        residual_h: rel((h_fixed - &reference.h).norm(), reference.h.norm()),
        residual_f: rel((f_fixed - &reference.f).norm(), reference.f.norm()),
        residual_p: rel(p_seen.norm(), (&omega * &reference.vec_p).norm()),
        residual_d: rel((&stage2.d_hat * lambda_nu - &reference.d).norm(), reference.d.norm()),
        residual_c: rel((&stage2.c_hat * lambda_tau - &reference.c).norm(), reference.c.norm()),
        lambda_h,
        lambda_f,
        lambda_nu,
        lambda_tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ScenarioConfig, TargetParameters};
    use crate::linalg::elementwise_divide;
    use crate::linalg::{kronecker_vec, unvectorize};
    use crate::signal::{
        add_noise_at_snr, build_bs_ris_channel, build_codebook, delay_steering, doppler_steering, effective_factor,
        generate_echo_tensor, generate_pilots, target_response,
    };
    use crate::testutil::{assert_close, c, random_matrix as rmat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Case {
        cfg: ScenarioConfig,
        target: TargetParameters,
        codebook: RisCodebook,
        pilots: ComplexTensor3,
        y: ComplexTensor3,
        alpha: Complex64,
    }

    fn case(cfg: ScenarioConfig) -> Case {
        let target = TargetParameters {
            tau: 1e-7,
            nu: -2.1e4,
            mu_d: 1.1,
            psi_d: 0.7,
            mu_a: -0.4,
            psi_a: 2.0,
            eta: 1.3,
        };
        let codebook = build_codebook(&cfg);
        let pilots = generate_pilots(&cfg, 17);
        let alpha = Complex64::from_polar(3e-13, 0.8);
        let y = generate_echo_tensor(&cfg, &target, &codebook, &pilots, alpha).unwrap();
        Case {
            cfg,
            target,
            codebook,
            pilots,
            y,
            alpha,
        }
    }

    fn small() -> Case {
        case(ScenarioConfig {
            l: 2,
            n_y: 2,
            n_z: 2,
            q: 4,
            m: 4,
            k: 16,
            ..ScenarioConfig::desk()
        })
    }

    #[test]
    fn design_matrices_match_mode_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 3;
        let h = rmat(&mut rng, 2, n);
        let f = rmat(&mut rng, 5, n);
        let omega = rmat(&mut rng, 9, n * n);
        let p = crate::testutil::random_vector(&mut rng, n * n);
        let y = stage1_model(&h, &f, &p, &omega).unwrap();
        let s = scale_columns(&omega, &p);
        assert_close(&(&h * mode1_design(&f, &s, n)), &unfold(&y, Mode::One), 1e-12);
        assert_close(&(&f * mode2_design(&h, &s, n)), &unfold(&y, Mode::Two), 1e-12);
    }

    #[test]
    fn stage1_noiseless_is_exact_and_deterministic() {
        let cs = small();
        let s = AlsSettings::default().with_seed(3);
        let est = als_stage1(&cs.y, &cs.codebook, &s).unwrap();
        assert!(est.relative_error() < 1e-10, "fit {}", est.relative_error());
        let again = als_stage1(&cs.y, &cs.codebook, &s).unwrap();
        assert_eq!(est.error_history, again.error_history);

        let h = build_bs_ris_channel(cs.target.eta, cs.target.mu_a, cs.target.psi_a, &cs.cfg);
        let lambda = elementwise_divide(&h.rows(0, 1).into_owned(), &est.h_hat.rows(0, 1).into_owned()).unwrap();
        let fixed = &est.h_hat * ComplexMatrix::from_diagonal(&lambda.transpose().column(0).into_owned());
        assert_close(&fixed, &h, 1e-8);
    }

    #[test]
    fn identifiability_guard() {
        let cs = small();
        let short = RisCodebook {
            w: cs.codebook.w.columns(0, 15).into_owned(),
        };
        let y = ComplexTensor3::from_fn([2, 16, 15], |i, j, k| cs.y[(i, j, k)]);
        assert!(matches!(
            als_stage1(&y, &short, &AlsSettings::default()),
            Err(Error::Identifiability(_))
        ));
        let y = ComplexTensor3::from_fn([3, 2, 16], |_, _, _| c(1.0, 0.0));
        assert!(matches!(
            als_stage1(&y, &cs.codebook, &AlsSettings::default()),
            Err(Error::Identifiability(_))
        ));
    }

    #[test]
    fn settings_validation() {
        assert!(AlsSettings {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AlsSettings {
            delta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AlsSettings {
            restarts: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        EstimatorSettings::default().validate().unwrap();
    }

    #[test]
    fn tensorize_roundtrip_and_structure() {
        let cs = small();
        let h = build_bs_ris_channel(cs.target.eta, cs.target.mu_a, cs.target.psi_a, &cs.cfg);
        let f = effective_factor(&cs.cfg, &cs.target, &cs.pilots, &h);
        let ft = tensorize_f(&f, cs.cfg.m, cs.cfg.q).unwrap();
        assert_eq!(ft.dims(), [4, 4, 4]);
        assert_eq!(flatten_f(&ft), f);
        assert!(matches!(tensorize_f(&f, 3, 4), Err(Error::Dimension(_))));

        let cv = delay_steering(cs.target.tau, cs.cfg.q, cs.cfg.delta_f);
        let dv = doppler_steering(cs.target.nu, cs.cfg.m, cs.cfg.t_s);
        let cd = kronecker(&ComplexMatrix::from_diagonal(&cv), &ComplexMatrix::from_diagonal(&dv));
        let want = h.transpose() * pilot_matrix(&cs.pilots) * cd.transpose();
        assert_close(&unfold(&ft, Mode::One), &want, 1e-12);

        let mut dz = doppler_steering(0.0, cs.cfg.m, cs.cfg.t_s);
        dz[2] = c(0.0, 0.0);
        let cdz = kronecker_vec(&cv, &dz);
        let fz = ComplexMatrix::from_diagonal(&cdz) * pilot_matrix(&cs.pilots).transpose() * &h;
        let f2 = unfold(&tensorize_f(&fz, cs.cfg.m, cs.cfg.q).unwrap(), Mode::Two);
        assert!(f2.row(2).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn stage2_noiseless_recovers_responses() {
        let cs = small();
        let h = build_bs_ris_channel(cs.target.eta, cs.target.mu_a, cs.target.psi_a, &cs.cfg);
        let f = effective_factor(&cs.cfg, &cs.target, &cs.pilots, &h);
        let ft = tensorize_f(&f, cs.cfg.m, cs.cfg.q).unwrap();
        let est = als_stage2(&ft, &cs.pilots, &EstimatorSettings::default().stage2.with_seed(9)).unwrap();
        assert!(est.relative_error() < 1e-10);
        let dv = doppler_steering(cs.target.nu, cs.cfg.m, cs.cfg.t_s);
        let cv = delay_steering(cs.target.tau, cs.cfg.q, cs.cfg.delta_f);
        for mm in 0..cs.cfg.m {
            assert!((est.d_hat[mm] / est.d_hat[0] - dv[mm] / dv[0]).norm() < 1e-8);
        }
        for qq in 0..cs.cfg.q {
            assert!((est.c_hat[qq] / est.c_hat[0] - cv[qq] / cv[0]).norm() < 1e-8);
        }
    }

    fn is_non_increasing(h: &[f64], slack: f64) -> bool {
        h.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    #[test]
    fn noisy_histories_are_monotone() {
        let cs = small();
        let noisy = add_noise_at_snr(&cs.y, 10.0, 4).unwrap().noisy;
        let s1 = als_stage1(&noisy, &cs.codebook, &AlsSettings::default().with_seed(1)).unwrap();
        assert!(is_non_increasing(&s1.error_history, 1e-12 * s1.data_energy));
        let ft = tensorize_f(&s1.f_hat, cs.cfg.m, cs.cfg.q).unwrap();
        let s2 = als_stage2(&ft, &cs.pilots, &AlsSettings::default().with_seed(2)).unwrap();
        assert!(is_non_increasing(&s2.error_history, 1e-12 * s2.data_energy));
    }

    #[test]
    fn gauge_transformation_leaves_model_unchanged() {
        let cs = small();
        let est = als_stage1(&cs.y, &cs.codebook, &AlsSettings::default().with_seed(5)).unwrap();
        let base = est.reconstruct(&cs.codebook).unwrap();
        let lh = [c(2.0, 1.0), c(-0.5, 0.3), c(0.1, -1.0), c(3.0, 0.0)];
        let lf = [c(0.2, 0.4), c(1.0, 1.0), c(-2.0, 0.5), c(0.0, 0.7)];
        let n = 4;
        let moved = Stage1Estimate {
            h_hat: ComplexMatrix::from_fn(est.h_hat.nrows(), n, |i, j| est.h_hat[(i, j)] * lh[j]),
            f_hat: ComplexMatrix::from_fn(est.f_hat.nrows(), n, |i, j| est.f_hat[(i, j)] * lf[j]),
            vec_p_hat: ComplexVector::from_fn(n * n, |idx, _| est.vec_p_hat[idx] / (lf[idx / n] * lh[idx % n])),
            ..est.clone()
        };
        let y2 = moved.reconstruct(&cs.codebook).unwrap();
        let diff = y2.sub(&base).unwrap().frobenius_norm_sq().sqrt();
        assert!(diff < 1e-12 * base.frobenius_norm_sq().sqrt());
    }

    fn reference(cs: &Case) -> ScalingReference {
        let h = build_bs_ris_channel(cs.target.eta, cs.target.mu_a, cs.target.psi_a, &cs.cfg);
        let f = effective_factor(&cs.cfg, &cs.target, &cs.pilots, &h);
        let p = target_response(&cs.cfg, &cs.target);
        ScalingReference {
            vec_p: kronecker_vec(&p, &p) * cs.alpha,
            d: doppler_steering(cs.target.nu, cs.cfg.m, cs.cfg.t_s),
            c: delay_steering(cs.target.tau, cs.cfg.q, cs.cfg.delta_f),
            h,
            f,
        }
    }

    #[test]
    fn normalized_core_is_symmetric_outer_product() {
        let cs = small();
        let settings = EstimatorSettings::default();
        let est = als_stage1(&cs.y, &cs.codebook, &settings.stage1.with_seed(8)).unwrap();
        let ft = tensorize_f(&est.f_hat, cs.cfg.m, cs.cfg.q).unwrap();
        let s2 = als_stage2(&ft, &cs.pilots, &settings.stage2.with_seed(9)).unwrap();
        let r = reference(&cs);
        let p = normalize_core_gauge(&est, &s2, &r.h, &cs.pilots, &cs.codebook, DEFAULT_PINV_TOL).unwrap();
        let pm = unvectorize(&p, 4, 4).unwrap();
        assert_close(&pm, &pm.transpose(), 1e-8);
        assert!((&p - &r.vec_p).norm() < 1e-8 * r.vec_p.norm());
    }

    #[test]
    fn scaling_relations_hold_noiseless() {
        let cs = small();
        let settings = EstimatorSettings::default();
        let s1 = als_stage1(&cs.y, &cs.codebook, &settings.stage1.with_seed(2)).unwrap();
        let ft = tensorize_f(&s1.f_hat, cs.cfg.m, cs.cfg.q).unwrap();
        let s2 = als_stage2(&ft, &cs.pilots, &settings.stage2.with_seed(3)).unwrap();
        let r = reference(&cs);
        let diag = resolve_scaling(&s1, &s2, &r, &cs.codebook).unwrap();
        assert!(diag.max_residual() < 1e-8, "{diag:?}");

        let rot = Complex64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let turned = Stage2Estimate {
            d_hat: &s2.d_hat * rot,
            ..s2.clone()
        };
        let diag2 = resolve_scaling(&s1, &turned, &r, &cs.codebook).unwrap();
        assert!((diag2.lambda_nu - diag.lambda_nu / rot).norm() < 1e-12 * diag.lambda_nu.norm());
        assert!((diag2.residual_d - diag.residual_d).abs() < 1e-12);
    }

    #[test]
    fn scaling_is_identity_on_truth() {
        let cs = small();
        let r = reference(&cs);
        let s1 = Stage1Estimate {
            h_hat: r.h.clone(),
            f_hat: r.f.clone(),
            vec_p_hat: r.vec_p.clone(),
            error_history: vec![0.0],
            iterations: 1,
            converged: true,
            data_energy: 1.0,
        };
        let s2 = Stage2Estimate {
            d_hat: r.d.clone(),
            c_hat: r.c.clone(),
            h_hat: r.h.clone(),
            error_history: vec![0.0],
            iterations: 1,
            converged: true,
            data_energy: 1.0,
        };
        let diag = resolve_scaling(&s1, &s2, &r, &cs.codebook).unwrap();
        assert!(diag
            .lambda_h
            .iter()
            .chain(&diag.lambda_f)
            .all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        assert_eq!(diag.lambda_nu, c(1.0, 0.0));
        assert_eq!(diag.max_residual(), 0.0);

        let mut zeroed = s1.clone();
        zeroed.h_hat.column_mut(1).fill(c(0.0, 0.0));
        assert!(matches!(
            resolve_scaling(&zeroed, &s2, &r, &cs.codebook),
            Err(Error::Degenerate(_))
        ));
    }
}
