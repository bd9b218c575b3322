//! Embedded invariant suite, runnable from the command line to check a
//! build: tensor identities, ESPRIT exactness and noiseless recovery.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use crate::config::ScenarioConfig;
use crate::esprit::{circular_distance, esprit_1d, esprit_2d};
use crate::estimation::EstimatorSettings;
use crate::linalg::{
    diag, khatri_rao, kronecker, kronecker_vec, pseudoinverse, vectorize, ComplexMatrix, ComplexVector,
    DEFAULT_PINV_TOL,
};
use crate::pipeline::{run_pipeline, Scenario};
use crate::signal::{complex_gaussian, seeded_rng, upa_steering};
use crate::tensor::{diagonal_core, fold, mode_product, unfold, ComplexTensor3, Mode};

/// Deliberate defects for checking that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Swaps the first two columns of every unfolding the suite computes.
    CorruptUnfold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst relative deviation seen.
    pub worst: f64,
}

impl fmt::Display for InvariantResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} (worst {:.2e})", self.name, self.worst)
    }
}

const TOL: f64 = 1e-10;
const INSTANCES: usize = 20;

struct Suite {
    fault: Option<Fault>,
    rng: rand_chacha::ChaCha8Rng,
}

impl Suite {
    fn unfold(&self, t: &ComplexTensor3, mode: Mode) -> ComplexMatrix {
        let mut m = unfold(t, mode);
        if self.fault == Some(Fault::CorruptUnfold) && m.ncols() >= 2 {
            m.swap_columns(0, 1);
        }
        m
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut self.rng))
    }

    fn vector(&mut self, len: usize) -> ComplexVector {
        ComplexVector::from_fn(len, |_, _| complex_gaussian(&mut self.rng))
    }

    fn tensor(&mut self, dims: [usize; 3]) -> ComplexTensor3 {
        ComplexTensor3::from_fn(dims, |_, _, _| complex_gaussian(&mut self.rng))
    }

    fn dims(&mut self) -> [usize; 3] {
        use rand::Rng;
        [
            self.rng.random_range(2..6),
            self.rng.random_range(2..6),
            self.rng.random_range(2..6),
        ]
    }
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

fn unfold_roundtrip(s: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let dims = s.dims();
        let t = s.tensor(dims);
        for mode in Mode::ALL {
            let back = fold(&s.unfold(&t, mode), mode, dims).expect("unfolding has the right shape");
            worst = worst.max(rel(
                back.sub(&t).unwrap().frobenius_norm_sq().sqrt(),
                t.frobenius_norm_sq().sqrt(),
            ));
        }
    }
    worst
}

fn unfold_index_formulas(s: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let dims = s.dims();
        let [n1, n2, _] = dims;
        let t = s.tensor(dims);
        let (u1, u2, u3) = (
            s.unfold(&t, Mode::One),
            s.unfold(&t, Mode::Two),
            s.unfold(&t, Mode::Three),
        );
        for ((i1, i2, i3), &x) in (0..dims[2])
            .flat_map(|k| (0..n2).flat_map(move |j| (0..n1).map(move |i| (i, j, k))))
            .zip(t.as_slice())
        {
            for y in [u1[(i1, i3 * n2 + i2)], u2[(i2, i3 * n1 + i1)], u3[(i3, i2 * n1 + i1)]] {
                worst = worst.max((y - x).norm());
            }
        }
    }
    worst
}

fn tucker_unfoldings(s: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES / 4 {
        let n = 3;
        let (h, f, om, v) = (s.matrix(2, n), s.matrix(5, n), s.matrix(10, n * n), s.vector(n * n));
        let core = diagonal_core(&v).unwrap();
        let y = mode_product(
            &mode_product(&mode_product(&core, &h, Mode::One).unwrap(), &f, Mode::Two).unwrap(),
            &om,
            Mode::Three,
        )
        .unwrap();
        let scale = y.frobenius_norm_sq().sqrt();
        let expected = [
            &h * s.unfold(&core, Mode::One) * kronecker(&om, &f).transpose(),
            &f * s.unfold(&core, Mode::Two) * kronecker(&om, &h).transpose(),
            &om * diag(&v) * kronecker(&f, &h).transpose(),
        ];
        for (m, mode) in expected.iter().zip(Mode::ALL) {
            worst = worst.max(rel((s.unfold(&y, mode) - m).norm(), scale));
        }
    }
    worst
}

fn vec_diagonal_identity(s: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (a, b, c) = (s.matrix(4, 3), s.vector(3), s.matrix(3, 5));
        let lhs = vectorize(&(&a * diag(&b) * &c));
        let rhs = khatri_rao(&c.transpose(), &a).unwrap() * &b;
        worst = worst.max(rel((&lhs - rhs).norm(), lhs.norm()));
        let b_full = s.matrix(3, 3);
        let lhs = vectorize(&(&a * &b_full * &c));
        let rhs = kronecker(&c.transpose(), &a) * vectorize(&b_full);
        worst = worst.max(rel((&lhs - rhs).norm(), lhs.norm()));
    }
    worst
}

fn khatri_rao_row_identity(s: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (a, b) = (s.vector(4), s.matrix(3, 4));
        let row = ComplexMatrix::from_row_slice(1, a.len(), a.as_slice());
        let lhs = khatri_rao(&row, &b).unwrap();
        let rhs = &b * diag(&a);
        worst = worst.max(rel((&lhs - &rhs).norm(), rhs.norm()));
    }
    worst
}

fn penrose_conditions(s: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let a = s.matrix(6, 2) * s.matrix(2, 4);
        let p = pseudoinverse(&a, DEFAULT_PINV_TOL);
        let scale = a.norm() * p.norm();
        for d in [
            (&a * &p * &a - &a).norm() / a.norm(),
            (&p * &a * &p - &p).norm() / p.norm(),
            (&a * &p - (&a * &p).adjoint()).norm() / scale,
            (&p * &a - (&p * &a).adjoint()).norm() / scale,
        ] {
            worst = worst.max(d);
        }
    }
    worst
}

fn esprit_1d_exact(_: &mut Suite) -> f64 {
    let mut worst = 0.0f64;
    for len in [4, 8, 16, 64] {
        for i in 0..64 {
            let omega = -PI + 2.0 * PI * (i as f64 + 0.5) / 64.0;
            let x = ComplexVector::from_fn(len, |p, _| Complex64::from_polar(2.0, omega * p as f64));
            let d = esprit_1d(&x).map_or(f64::INFINITY, |est| circular_distance(est, omega, 2.0 * PI));
            worst = worst.max(d);
        }
    }
    worst
}

fn esprit_2d_exact(s: &mut Suite) -> f64 {
    use rand::Rng;
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (mu, psi) = (s.rng.random_range(-3.0..3.0), s.rng.random_range(-3.0..3.0));
        let p = upa_steering(mu, psi, 3, 4);
        let d = esprit_2d(&kronecker_vec(&p, &p), 3, 4)
            .ok()
            .and_then(|e| e.mu.zip(e.psi))
            .map_or(f64::INFINITY, |(m, q)| {
                circular_distance(m, mu, 2.0 * PI).max(circular_distance(q, psi, 2.0 * PI))
            });
        worst = worst.max(d);
    }
    worst
}

fn noiseless_recovery(_: &mut Suite) -> f64 {
    let cfg = ScenarioConfig::desk();
    (0..3)
        .map(|seed| {
            Scenario::draw(&cfg, seed)
                .and_then(|sc| run_pipeline(&sc.clean, &sc, &EstimatorSettings::default()))
                .ok()
                .and_then(|out| out.estimate.errors)
                .map_or(f64::INFINITY, |e| e.max())
        })
        .fold(0.0, f64::max)
}

type Check = fn(&mut Suite) -> f64;

const CHECKS: [(&str, Check, f64); 9] = [
    ("unfold: fold inverts unfold", unfold_roundtrip, 1e-12),
    ("unfold: index formulas of all three modes", unfold_index_formulas, 0.0),
    ("unfold: Tucker unfoldings", tucker_unfoldings, 1e-12),
    ("vec(A D(b) C) and vec(ABC) identities", vec_diagonal_identity, 1e-12),
    ("transposed-vector Khatri-Rao identity", khatri_rao_row_identity, 1e-12),
    ("pseudoinverse Penrose conditions", penrose_conditions, 1e-10),
    ("ESPRIT 1D exactness", esprit_1d_exact, TOL),
    ("ESPRIT 2D exactness", esprit_2d_exact, TOL),
    ("noiseless end-to-end recovery", noiseless_recovery, 1e-6),
];

/// Runs every invariant; a check passes when its worst deviation is within
/// tolerance.
pub fn run_selftest(fault: Option<Fault>) -> Vec<InvariantResult> {
    let mut suite = Suite {
        fault,
        rng: seeded_rng(0x5e1f),
    };
    CHECKS
        .iter()
        .map(|&(name, check, tol)| {
            let worst = check(&mut suite);
            InvariantResult {
                name,
                passed: worst <= tol,
                worst,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_build_passes() {
        for r in run_selftest(None) {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn corrupted_unfolding_is_caught() {
        let results = run_selftest(Some(Fault::CorruptUnfold));
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.name.starts_with("unfold")), "{failed:?}");
        assert!(results
            .iter()
            .filter(|r| !r.name.starts_with("unfold"))
            .all(|r| r.passed));
    }
}
