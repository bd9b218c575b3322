//! Dense complex matrix kernels: structured products, vectorization and an
//! SVD-backed Moore-Penrose pseudoinverse.
//!
//! Matrices are `nalgebra` dense matrices of `Complex64`. Indexing is the
//! usual `(row, col)`; `vectorize` stacks columns, so that
//! `vec(A B C) = (Cᵀ ⊗ A) vec(B)` and `vec(A D(b) C) = (Cᵀ ⋄ A) b` hold.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use ndarray_linalg::{JobSvd, SVDDC};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Singular values below `tol * σ_max` are treated as zero by [`pseudoinverse`].
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

/// Kronecker product `A ⊗ B`; block `(i, j)` of the result is `A[i, j] · B`.
pub fn kronecker(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = ComplexMatrix::zeros(ra * rb, ca * cb);
    for j in 0..ca {
        for i in 0..ra {
            let s = a[(i, j)];
            if s == Complex64::new(0.0, 0.0) {
                continue;
            }
            for l in 0..cb {
                for k in 0..rb {
                    out[(i * rb + k, j * cb + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors.
pub fn kronecker_vec(a: &ComplexVector, b: &ComplexVector) -> ComplexVector {
    let mut out = ComplexVector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (k, &bk) in b.iter().enumerate() {
            out[i * b.len() + k] = ai * bk;
        }
    }
    out
}

/// Khatri-Rao (column-wise Kronecker) product `A ⋄ B`.
pub fn khatri_rao(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    Ok(ComplexMatrix::from_fn(ra * rb, a.ncols(), |row, r| {
        a[(row / rb, r)] * b[(row % rb, r)]
    }))
}

/// Element-wise division `A ⊘ B`.
pub fn elementwise_divide(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "element-wise division of {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let d = b[(i, j)];
            if d.norm_sqr() == 0.0 {
                return Err(Error::Singular { row: i, col: j });
            }
            out[(i, j)] /= d;
        }
    }
    Ok(out)
}

/// `D(v)`: square diagonal matrix holding `v`.
pub fn diag(v: &ComplexVector) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(v)
}

/// Column-stacking vectorization: `vec(M)[j * rows + i] = M[i, j]`.
pub fn vectorize(m: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &ComplexVector, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::dim(format!(
            "cannot reshape a length-{} vector into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn frobenius_norm_sq(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Thin SVD `M = U diag(σ) Vᴴ` with singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v: ComplexMatrix,
}

impl SvdFactors {
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > tol * smax && s > 0.0)
            .count()
    }
}

/// Thin SVD through LAPACK's divide-and-conquer driver.
pub fn svd(m: &ComplexMatrix) -> SvdFactors {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return SvdFactors {
            u: ComplexMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v: ComplexMatrix::zeros(cols, 0),
        };
    }
    let a = Array2::from_shape_fn((rows, cols), |(i, j)| m[(i, j)]);
    let (u, sigma, vt) = a.svddc(JobSvd::Some).expect("LAPACK SVD failed to converge");
    let u = u.expect("U requested");
    let vt = vt.expect("Vᴴ requested");

    // LAPACK already sorts descending; keep the guarantee explicit.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    SvdFactors {
        u: ComplexMatrix::from_fn(rows, k, |i, r| u[(i, order[r])]),
        singular_values: order.iter().map(|&r| sigma[r].max(0.0)).collect(),
        v: ComplexMatrix::from_fn(cols, k, |j, r| vt[(order[r], j)].conj()),
    }
}

/// Moore-Penrose pseudoinverse. Singular values at or below `tol · σ_max`
/// are discarded, so rank-deficient inputs yield the minimum-norm solution
/// operator.
pub fn pseudoinverse(m: &ComplexMatrix, tol: f64) -> ComplexMatrix {
    let f = svd(m);
    let (rows, cols) = m.shape();
    let mut out = ComplexMatrix::zeros(cols, rows);
    let smax = f.singular_values.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return out;
    }
    for (r, &s) in f.singular_values.iter().enumerate() {
        if s <= tol * smax {
            break;
        }
        let v_r = f.v.column(r) / Complex64::new(s, 0.0);
        out.ger(
            Complex64::new(1.0, 0.0),
            &v_r,
            &f.u.column(r).conjugate(),
            Complex64::new(1.0, 0.0),
        );
    }
    out
}

/// Leading singular triple of a matrix.
#[derive(Debug, Clone)]
pub struct RankOne {
    pub u: ComplexVector,
    pub sigma: f64,
    pub v: ComplexVector,
}

/// Best rank-1 approximation `σ u vᴴ` in the Frobenius sense.
pub fn dominant_rank1(m: &ComplexMatrix) -> Result<RankOne> {
    if m.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Degenerate("rank-1 extraction from a zero matrix".into()));
    }
    let f = svd(m);
    Ok(RankOne {
        u: f.u.column(0).into_owned(),
        sigma: f.singular_values[0],
        v: f.v.column(0).into_owned(),
    })
}

/// Least-squares solve of `vec(Y) ≈ (A ⋄ B) x`, i.e. `Y ≈ B D(x) Aᵀ`.
///
/// Uses `(A ⋄ B)† = ((AᴴA) ∘ (BᴴB))† (A ⋄ B)ᴴ`, so the tall Khatri-Rao
/// system matrix is never formed. `Y` is `rows(B) × rows(A)`.
pub fn khatri_rao_lstsq(a: &ComplexMatrix, b: &ComplexMatrix, y: &ComplexMatrix, tol: f64) -> Result<ComplexVector> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "khatri_rao_lstsq needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if y.shape() != (b.nrows(), a.nrows()) {
        return Err(Error::dim(format!(
            "khatri_rao_lstsq right-hand side is {:?}, expected {:?}",
            y.shape(),
            (b.nrows(), a.nrows())
        )));
    }
    let gram = (a.adjoint() * a).component_mul(&(b.adjoint() * b));
    let by = b.adjoint() * y;
    let rhs = ComplexVector::from_fn(a.ncols(), |r, _| {
        by.row(r)
            .iter()
            .zip(a.column(r).iter())
            .map(|(p, q)| p * q.conj())
            .sum()
    });
    Ok(pseudoinverse(&gram, tol) * rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_close, c, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kronecker_of_identities_is_identity() {
        let i2 = ComplexMatrix::identity(2, 2);
        assert_eq!(kronecker(&i2, &i2), ComplexMatrix::identity(4, 4));
    }

    #[test]
    fn kronecker_of_steering_pairs() {
        let (mu, psi) = (0.7_f64, -1.3_f64);
        let a = ComplexVector::from_vec(vec![c(1.0, 0.0), Complex64::from_polar(1.0, -mu)]);
        let b = ComplexVector::from_vec(vec![c(1.0, 0.0), Complex64::from_polar(1.0, -psi)]);
        let k = kronecker_vec(&a, &b);
        let expected = [
            c(1.0, 0.0),
            Complex64::from_polar(1.0, -psi),
            Complex64::from_polar(1.0, -mu),
            Complex64::from_polar(1.0, -(mu + psi)),
        ];
        for (x, y) in k.iter().zip(expected) {
            assert!((x - y).norm() < 1e-15);
        }
        let km = kronecker(
            &ComplexMatrix::from_column_slice(2, 1, a.as_slice()),
            &ComplexMatrix::from_column_slice(2, 1, b.as_slice()),
        );
        assert_eq!(km.column(0).into_owned(), k);
    }

    #[test]
    fn kronecker_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let k = kronecker(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..3 {
                    for q in 0..2 {
                        let want = a[(i, j)] * b[(p, q)];
                        assert!((k[(i * 3 + p, j * 2 + q)] - want).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn khatri_rao_single_column_is_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 1);
        let b = random_matrix(&mut rng, 4, 1);
        assert_close(&khatri_rao(&a, &b).unwrap(), &kronecker(&a, &b), 1e-15);
    }

    #[test]
    fn khatri_rao_columns_are_kroneckers() {
        let w = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)]);
        let kr = khatri_rao(&w, &w).unwrap();
        assert_eq!(kr.shape(), (4, 2));
        for r in 0..2 {
            let col = w.column(r).into_owned();
            assert_eq!(kr.column(r).into_owned(), kronecker_vec(&col, &col));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 3, 4);
        let kr = khatri_rao(&a, &b).unwrap();
        for r in 0..4 {
            let mut e = ComplexVector::zeros(4);
            e[r] = c(1.0, 0.0);
            let lhs = &kr * &e;
            let rhs = kronecker_vec(&(&a * &e), &(&b * &e));
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn khatri_rao_rejects_column_mismatch() {
        let a = ComplexMatrix::zeros(2, 3);
        let b = ComplexMatrix::zeros(2, 2);
        assert!(matches!(khatri_rao(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 3, 2);
        let ones = elementwise_divide(&a, &a).unwrap();
        assert_close(&ones, &ComplexMatrix::from_element(3, 2, c(1.0, 0.0)), 1e-15);

        let x = ComplexMatrix::from_row_slice(1, 2, &[c(2.0, 0.0), c(4.0, 0.0)]);
        let y = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(2.0, 0.0)]);
        assert_eq!(
            elementwise_divide(&x, &y).unwrap(),
            ComplexMatrix::from_row_slice(1, 2, &[c(2.0, 0.0), c(2.0, 0.0)])
        );

        let b = random_matrix(&mut rng, 3, 2);
        let back = elementwise_divide(&a, &b).unwrap().component_mul(&b);
        assert_close(&back, &a, 1e-14);

        let mut z = b.clone();
        z[(1, 1)] = c(0.0, 0.0);
        assert!(matches!(
            elementwise_divide(&a, &z),
            Err(Error::Singular { row: 1, col: 1 })
        ));
    }

    #[test]
    fn pinv_simple_cases() {
        let i3 = ComplexMatrix::identity(3, 3);
        assert_close(&pseudoinverse(&i3, DEFAULT_PINV_TOL), &i3, 1e-14);

        let d = ComplexMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let want = ComplexMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_close(&pseudoinverse(&d, DEFAULT_PINV_TOL), &want, 1e-15);

        let zero = ComplexMatrix::zeros(2, 3);
        assert_eq!(pseudoinverse(&zero, DEFAULT_PINV_TOL), ComplexMatrix::zeros(3, 2));
    }

    #[test]
    fn pinv_penrose_conditions_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_matrix(&mut rng, 8, 3);
        let p = pseudoinverse(&a, DEFAULT_PINV_TOL);
        assert_close(&(&a * &p * &a), &a, 1e-12);
        assert_close(&(&p * &a * &p), &p, 1e-12);
        let ap = &a * &p;
        assert_close(&ap.adjoint(), &ap, 1e-12);
        let pa = &p * &a;
        assert_close(&pa.adjoint(), &pa, 1e-12);
    }

    #[test]
    fn pinv_rank_deficient_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let l = random_matrix(&mut rng, 4, 2);
        let r = random_matrix(&mut rng, 2, 7);
        let a = &l * &r;
        let p = pseudoinverse(&a, DEFAULT_PINV_TOL);
        assert_eq!(p.shape(), (7, 4));
        assert_close(&(&a * &p * &a), &a, 1e-10);
        assert_close(&(&p * &a * &p), &p, 1e-10);
    }

    #[test]
    fn svd_is_sorted_and_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 6, 4);
        let f = svd(&a);
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.singular_values.iter().all(|&s| s >= 0.0));
        assert_close(&(f.u.adjoint() * &f.u), &ComplexMatrix::identity(4, 4), 1e-10);
        assert_close(&(f.v.adjoint() * &f.v), &ComplexMatrix::identity(4, 4), 1e-10);
        let s = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
            4,
            f.singular_values.iter().map(|&s| c(s, 0.0)),
        ));
        assert_close(&(&f.u * s * f.v.adjoint()), &a, 1e-12);
    }

    #[test]
    fn svd_of_rank_one_hankel() {
        // a tall rank-one Hankel matrix of a pure tone
        let w0 = 0.8921271425879511_f64;
        let amp = c(1.34464609408663, -0.717497666430972);
        let x: Vec<Complex64> = (0..16)
            .map(|i| amp * Complex64::from_polar(1.0, w0 * i as f64))
            .collect();
        let h = ComplexMatrix::from_fn(9, 8, |i, j| x[i + j]);
        let f = svd(&h);
        let s = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
            8,
            f.singular_values.iter().map(|&s| c(s, 0.0)),
        ));
        assert_close(&(&f.u * s * f.v.adjoint()), &h, 1e-13);
        let u0 = f.u.column(0);
        for i in 1..9 {
            assert!(((u0[i] / u0[i - 1]).arg() - w0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank1_recovers_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_matrix(&mut rng, 5, 1);
        let m = &p * p.transpose();
        let r = dominant_rank1(&m).unwrap();
        let pv = p.column(0).into_owned();
        assert!(((r.u.dotc(&pv)).norm() - pv.norm()).abs() < 1e-10);
        assert!((r.sigma - pv.norm() * pv.norm()).abs() < 1e-10);

        let a = random_matrix(&mut rng, 3, 1);
        let b = random_matrix(&mut rng, 4, 1);
        let r = dominant_rank1(&(&a * b.adjoint())).unwrap();
        assert!((r.sigma - a.norm() * b.norm()).abs() < 1e-12);

        let d = ComplexMatrix::from_row_slice(2, 2, &[c(3.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!((dominant_rank1(&d).unwrap().sigma - 3.0).abs() < 1e-14);

        assert!(matches!(
            dominant_rank1(&ComplexMatrix::zeros(2, 2)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn vec_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let cm = random_matrix(&mut rng, 2, 4);
        let lhs = vectorize(&(&a * &b * &cm));
        let rhs = kronecker(&cm.transpose(), &a) * vectorize(&b);
        assert!((lhs - rhs).norm() < 1e-13);

        let bv = crate::testutil::random_vector(&mut rng, 3);
        let cm = random_matrix(&mut rng, 3, 4);
        let lhs = vectorize(&(&a * diag(&bv) * &cm));
        let rhs = khatri_rao(&cm.transpose(), &a).unwrap() * &bv;
        assert!((lhs - rhs).norm() < 1e-13);

        let m = random_matrix(&mut rng, 3, 5);
        assert_eq!(unvectorize(&vectorize(&m), 3, 5).unwrap(), m);
        assert!(matches!(unvectorize(&vectorize(&m), 4, 4), Err(Error::Dimension(_))));
        // column stacking
        assert_eq!(vectorize(&m)[2 * 3 + 1], m[(1, 2)]);
    }

    #[test]
    fn structured_lstsq_matches_explicit_pinv() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 5, 4);
        let y = random_matrix(&mut rng, 5, 6);
        let fast = khatri_rao_lstsq(&a, &b, &y, DEFAULT_PINV_TOL).unwrap();
        let explicit = pseudoinverse(&khatri_rao(&a, &b).unwrap(), DEFAULT_PINV_TOL) * vectorize(&y);
        assert!((fast - explicit).norm() < 1e-10);
    }
}
