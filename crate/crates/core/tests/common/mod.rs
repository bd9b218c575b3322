//! Shared oracles for the integration tests.

use std::f64::consts::PI;

use num_complex::Complex64;
use ris_sensing::config::{ScenarioConfig, TargetParameters};
use ris_sensing::signal::RisCodebook;
use ris_sensing::ComplexTensor3;

fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Direct per-sample evaluation of
/// `y_{q,m,k} = α a bᵀ D(w_k) p · pᵀ D(w_k) b aᵀ x_{q,m} [c]_q [d]_m`,
/// with every steering entry written out from its phase formula.
pub fn scalar_echo(
    cfg: &ScenarioConfig,
    t: &TargetParameters,
    w: &RisCodebook,
    x: &ComplexTensor3,
    alpha: Complex64,
) -> ComplexTensor3 {
    let n = cfg.n_y * cfg.n_z;
    let a = |l: usize| cis(-t.eta * l as f64);
    let upa = |mu: f64, psi: f64, idx: usize| cis(-(mu * (idx / cfg.n_z) as f64 + psi * (idx % cfg.n_z) as f64));
    let b = |idx: usize| upa(t.mu_a, t.psi_a, idx);
    let p = |idx: usize| upa(t.mu_d, t.psi_d, idx);
    let c = |q: usize| cis(-2.0 * PI * q as f64 * cfg.delta_f * t.tau);
    let d = |m: usize| cis(2.0 * PI * m as f64 * cfg.t_s * t.nu);

    let mut y = ComplexTensor3::zeros([cfg.l, cfg.m * cfg.q, cfg.k]);
    for l in 0..cfg.l {
        for q in 0..cfg.q {
            for m in 0..cfg.m {
                for k in 0..cfg.k {
                    let mut ris_return = Complex64::new(0.0, 0.0);
                    for n1 in 0..n {
                        for n2 in 0..n {
                            ris_return += b(n1) * w.w[(n1, k)] * p(n1) * p(n2) * w.w[(n2, k)] * b(n2);
                        }
                    }
                    let mut tx = Complex64::new(0.0, 0.0);
                    for l2 in 0..cfg.l {
                        tx += a(l2) * x[(l2, m, q)];
                    }
                    y[(l, q * cfg.m + m, k)] = alpha * a(l) * ris_return * tx * c(q) * d(m);
                }
            }
        }
    }
    y
}
