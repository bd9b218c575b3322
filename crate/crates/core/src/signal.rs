//! Echo synthesis for a single point target observed through an RIS.
//!
//! The BS transmits pilots `x_{q,m}` on subcarrier `q` of symbol `m`; the
//! RIS reflects them towards the target with phase profile `w_k` in block
//! `k`, and the echo returns along the same path. Stacking the `M·Q`
//! pilots of a block column-wise (Doppler index fastest) and the `K` blocks
//! along the third mode gives an `L × MQ × K` Tucker-3 tensor.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Codebook, ScenarioConfig, TargetParameters};
use crate::error::{Error, Result};
use crate::linalg::{diag, khatri_rao, kronecker, kronecker_vec, ComplexMatrix, ComplexVector};
use crate::tensor::{fold, unfold, ComplexTensor3, Mode};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One draw of a unit-variance circular complex Gaussian.
pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn exponential(len: usize, step: f64) -> ComplexVector {
    ComplexVector::from_fn(len, |i, _| Complex64::from_polar(1.0, step * i as f64))
}

/// ULA response `[1, e^{-jη}, …, e^{-j(L-1)η}]`.
pub fn ula_steering(eta: f64, l: usize) -> ComplexVector {
    exponential(l, -eta)
}

/// UPA response `b_y(μ) ⊗ b_z(ψ)`; element `n_y·N_z + n_z`.
pub fn upa_steering(mu: f64, psi: f64, n_y: usize, n_z: usize) -> ComplexVector {
    kronecker_vec(&ula_steering(mu, n_y), &ula_steering(psi, n_z))
}

/// Frequency-domain response of a delay: element `q` is `e^{-j2π q Δf τ}`.
pub fn delay_steering(tau: f64, q: usize, delta_f: f64) -> ComplexVector {
    exponential(q, -2.0 * PI * delta_f * tau)
}

/// Slow-time response of a Doppler shift: element `m` is `e^{+j2π m T_s ν}`.
pub fn doppler_steering(nu: f64, m: usize, t_s: f64) -> ComplexVector {
    exponential(m, 2.0 * PI * t_s * nu)
}

/// Radar-equation magnitude of the round-trip complex gain.
pub fn path_gain_magnitude(cfg: &ScenarioConfig) -> Result<f64> {
    for (name, v) in [
        ("P_t", cfg.p_t),
        ("G1", cfg.g1),
        ("G2", cfg.g2),
        ("F1sq", cfg.f1sq),
        ("F2sq", cfg.f2sq),
        ("d_x", cfg.d_x),
        ("d_y", cfg.d_y),
        ("lambda", cfg.lambda),
        ("sigma_RCS", cfg.sigma_rcs),
        ("d1", cfg.d1),
        ("d2", cfg.d2),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let num =
        cfg.p_t * (cfg.g1 * cfg.g2 * cfg.f1sq * cfg.f2sq * cfg.d_x * cfg.d_y * cfg.lambda).powi(2) * cfg.sigma_rcs;
    let den = (4.0 * PI).powi(5) * (cfg.d1 * cfg.d2).powi(4);
    Ok((num / den).sqrt())
}

/// RIS phase-shift matrix `W = [w_1, …, w_K]`, one unit-modulus column per block.
#[derive(Debug, Clone, PartialEq)]
pub struct RisCodebook {
    pub w: ComplexMatrix,
}

impl RisCodebook {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    /// `(W ⋄ W)ᵀ`, the `K × N²` mode-3 factor of the echo tensor.
    pub fn omega(&self) -> ComplexMatrix {
        khatri_rao(&self.w, &self.w)
            .expect("W has matching column counts with itself")
            .transpose()
    }
}

fn dft_rows(rows: &[usize], k: usize, size: usize) -> RisCodebook {
    let w = ComplexMatrix::from_fn(rows.len(), k, |n, col| {
        let phase = -2.0 * PI * ((rows[n] * col) % size) as f64 / size as f64;
        Complex64::from_polar(1.0, phase)
    });
    RisCodebook { w }
}

/// First `N` rows of the `D`-point DFT matrix, `D = max(N, K)`, truncated
/// to `K` columns.
///
/// The rows of `(W ⋄ W)ᵀ` only depend on `n₁ + n₂`, so this codebook
/// observes at most `2N − 1` combinations of the `N²` core entries.
pub fn build_dft_codebook(n: usize, k: usize) -> RisCodebook {
    let rows: Vec<usize> = (0..n).collect();
    dft_rows(&rows, k, n.max(k))
}

/// Greedy Sidon sequence `0, 1, 3, 7, 12, 20, …`: all pairwise sums
/// `s_a + s_b` (`a ≤ b`) are distinct.
pub fn sidon_sequence(n: usize) -> Vec<usize> {
    let mut s: Vec<usize> = Vec::with_capacity(n);
    let mut sums = std::collections::HashSet::new();
    let mut cand = 0;
    while s.len() < n {
        let fits = !sums.contains(&(2 * cand)) && s.iter().all(|&a| !sums.contains(&(a + cand)));
        if fits {
            for &a in &s {
                sums.insert(a + cand);
            }
            sums.insert(2 * cand);
            s.push(cand);
        }
        cand += 1;
    }
    s
}

/// DFT codebook whose rows sit at Sidon frequencies of a
/// `D = max(K, 2·s_max + 1)`-point DFT. Every symmetric pair of core
/// entries then gets its own Vandermonde row in `(W ⋄ W)ᵀ`, so the
/// observable rank is `N(N+1)/2` once `K` reaches it.
pub fn build_sidon_codebook(n: usize, k: usize) -> RisCodebook {
    let rows = sidon_sequence(n);
    let smax = rows.last().copied().unwrap_or(0);
    dft_rows(&rows, k, k.max(2 * smax + 1))
}

pub fn build_codebook(cfg: &ScenarioConfig) -> RisCodebook {
    match cfg.codebook {
        Codebook::Dft => build_dft_codebook(cfg.n(), cfg.k),
        Codebook::SidonDft => build_sidon_codebook(cfg.n(), cfg.k),
    }
}

/// BS–RIS channel `H = a(η) b(μ_A, ψ_A)ᵀ`, `L × N`.
pub fn build_bs_ris_channel(eta: f64, mu_a: f64, psi_a: f64, cfg: &ScenarioConfig) -> ComplexMatrix {
    let a = ula_steering(eta, cfg.l);
    let b = upa_steering(mu_a, psi_a, cfg.n_y, cfg.n_z);
    &a * b.transpose()
}

/// Pilot tensor `𝓧 ∈ C^{L×M×Q}`, i.i.d. unit-variance circular Gaussian.
pub fn generate_pilots(cfg: &ScenarioConfig, seed: u64) -> ComplexTensor3 {
    let mut rng = seeded_rng(seed);
    ComplexTensor3::from_fn([cfg.l, cfg.m, cfg.q], |_, _, _| complex_gaussian(&mut rng))
}

/// `X = [𝓧]₍₁₎`: column `q·M + m` holds `x_{q,m}`.
pub fn pilot_matrix(pilots: &ComplexTensor3) -> ComplexMatrix {
    unfold(pilots, Mode::One)
}

/// Effective BS-side factor `F(τ, ν) = D(c(τ) ⊗ d(ν)) Xᵀ H`, `MQ × N`.
pub fn effective_factor(
    cfg: &ScenarioConfig,
    target: &TargetParameters,
    pilots: &ComplexTensor3,
    h: &ComplexMatrix,
) -> ComplexMatrix {
    let cd = kronecker_vec(
        &delay_steering(target.tau, cfg.q, cfg.delta_f),
        &doppler_steering(target.nu, cfg.m, cfg.t_s),
    );
    diag(&cd) * pilot_matrix(pilots).transpose() * h
}

/// RIS–target response `p(μ_D, ψ_D)`.
pub fn target_response(cfg: &ScenarioConfig, target: &TargetParameters) -> ComplexVector {
    upa_steering(target.mu_d, target.psi_d, cfg.n_y, cfg.n_z)
}

/// Noiseless echo tensor `𝓨 ∈ C^{L×MQ×K}` assembled from its mode-3
/// unfolding `(W ⋄ W)ᵀ D(α vec(p pᵀ)) (F ⊗ H)ᵀ`.
pub fn generate_echo_tensor(
    cfg: &ScenarioConfig,
    target: &TargetParameters,
    codebook: &RisCodebook,
    pilots: &ComplexTensor3,
    alpha: Complex64,
) -> Result<ComplexTensor3> {
    let n = cfg.n();
    if codebook.n() != n || codebook.k() != cfg.k {
        return Err(Error::dim(format!(
            "codebook is {}x{}, scenario needs {}x{}",
            codebook.n(),
            codebook.k(),
            n,
            cfg.k
        )));
    }
    if pilots.dims() != [cfg.l, cfg.m, cfg.q] {
        return Err(Error::dim(format!(
            "pilot tensor is {:?}, scenario needs {:?}",
            pilots.dims(),
            [cfg.l, cfg.m, cfg.q]
        )));
    }
    if cfg.k < n * n {
        warn!("K = {} < N² = {}: the core cannot be identified", cfg.k, n * n);
    }
    if cfg.mq() < cfg.l {
        warn!("MQ = {} < L = {}: the BS channel cannot be identified", cfg.mq(), cfg.l);
    }

    let h = build_bs_ris_channel(target.eta, target.mu_a, target.psi_a, cfg);
    let f = effective_factor(cfg, target, pilots, &h);
    let p = target_response(cfg, target);
    let vec_p = kronecker_vec(&p, &p) * alpha;
    let y3 = codebook.omega() * diag(&vec_p) * kronecker(&f, &h).transpose();
    fold(&y3, Mode::Three, [cfg.l, cfg.mq(), cfg.k])
}

/// Clean and noisy observations of one trial.
#[derive(Debug, Clone)]
pub struct EchoData {
    pub clean: ComplexTensor3,
    pub noisy: ComplexTensor3,
    /// Per-entry noise power `‖𝓩‖²_F / (L·MQ·K)`.
    pub noise_variance: f64,
    /// Realized `‖𝓨‖²_F / ‖𝓩‖²_F` (linear).
    pub realized_snr: f64,
}

/// Adds circular Gaussian noise scaled so that `‖𝓨‖²_F / ‖𝓩‖²_F` equals
/// the requested SNR exactly for this realization.
pub fn add_noise_at_snr(clean: &ComplexTensor3, snr_db: f64, seed: u64) -> Result<EchoData> {
    let signal = clean.frobenius_norm_sq();
    if signal == 0.0 {
        return Err(Error::Degenerate("cannot set an SNR on a zero signal".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("SNR must be finite, got {snr_db} dB")));
    }
    let mut rng = seeded_rng(seed);
    let raw = ComplexTensor3::from_fn(clean.dims(), |_, _, _| complex_gaussian(&mut rng));
    let target = 10f64.powf(snr_db / 10.0);
    let scale = (signal / (raw.frobenius_norm_sq() * target)).sqrt();
    let noise = raw.scale(Complex64::new(scale, 0.0));
    let noise_energy = noise.frobenius_norm_sq();
    let entries = clean.as_slice().len() as f64;
    Ok(EchoData {
        noisy: clean.add(&noise)?,
        clean: clean.clone(),
        noise_variance: noise_energy / entries,
        realized_snr: signal / noise_energy,
    })
}
