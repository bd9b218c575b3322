//! Dense third-order complex tensors with fixed unfolding conventions.
//!
//! Entry `(i1, i2, i3)` lives at `i1 + I1 * (i2 + I2 * i3)`. The unfoldings
//! order their columns so that for `𝓣 = 𝓖 ×₁ A ×₂ B ×₃ C`
//!
//! ```text
//! [𝓣]₍₁₎ = A [𝓖]₍₁₎ (C ⊗ B)ᵀ     column = i3·I2 + i2
//! [𝓣]₍₂₎ = B [𝓖]₍₂₎ (C ⊗ A)ᵀ     column = i3·I1 + i1
//! [𝓣]₍₃₎ = C [𝓖]₍₃₎ (B ⊗ A)ᵀ     column = i2·I1 + i1
//! ```

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector};

/// Unfolding mode. Converts from the 1-based integers used on the command
/// line and in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(Error::InvalidMode(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    dims: [usize; 3],
    data: Vec<Complex64>,
}

impl ComplexTensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                for i1 in 0..dims[0] {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self { dims, data }
    }

    /// Wraps storage laid out as `i1 + I1 * (i2 + I2 * i3)`.
    pub fn from_vec(dims: [usize; 3], data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::dim(format!(
                "{} entries cannot fill a {}x{}x{} tensor",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::dim(format!(
                "tensor shapes {:?} and {:?} differ",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    #[inline]
    fn offset(&self, i1: usize, i2: usize, i3: usize) -> usize {
        debug_assert!(i1 < self.dims[0] && i2 < self.dims[1] && i3 < self.dims[2]);
        i1 + self.dims[0] * (i2 + self.dims[1] * i3)
    }
}

impl Index<(usize, usize, usize)> for ComplexTensor3 {
    type Output = Complex64;

    fn index(&self, (i1, i2, i3): (usize, usize, usize)) -> &Complex64 {
        &self.data[self.offset(i1, i2, i3)]
    }
}

impl IndexMut<(usize, usize, usize)> for ComplexTensor3 {
    fn index_mut(&mut self, (i1, i2, i3): (usize, usize, usize)) -> &mut Complex64 {
        let k = self.offset(i1, i2, i3);
        &mut self.data[k]
    }
}

/// Shape of the mode-`n` unfolding of a tensor with the given dims.
pub fn unfolding_shape(dims: [usize; 3], mode: Mode) -> (usize, usize) {
    let [i1, i2, i3] = dims;
    match mode {
        Mode::One => (i1, i2 * i3),
        Mode::Two => (i2, i1 * i3),
        Mode::Three => (i3, i1 * i2),
    }
}

/// Maps a tensor index to its `(row, col)` position in the mode-`n` unfolding.
#[inline]
fn unfolding_position(dims: [usize; 3], mode: Mode, i1: usize, i2: usize, i3: usize) -> (usize, usize) {
    match mode {
        Mode::One => (i1, i3 * dims[1] + i2),
        Mode::Two => (i2, i3 * dims[0] + i1),
        Mode::Three => (i3, i2 * dims[0] + i1),
    }
}

pub fn unfold(t: &ComplexTensor3, mode: Mode) -> ComplexMatrix {
    let dims = t.dims;
    let (rows, cols) = unfolding_shape(dims, mode);
    if mode == Mode::One {
        // storage order already is the column-major mode-1 unfolding
        return ComplexMatrix::from_column_slice(rows, cols, &t.data);
    }
    let mut out = ComplexMatrix::zeros(rows, cols);
    for i3 in 0..dims[2] {
        for i2 in 0..dims[1] {
            for i1 in 0..dims[0] {
                let pos = unfolding_position(dims, mode, i1, i2, i3);
                out[pos] = t.data[i1 + dims[0] * (i2 + dims[1] * i3)];
            }
        }
    }
    out
}

pub fn fold(m: &ComplexMatrix, mode: Mode, dims: [usize; 3]) -> Result<ComplexTensor3> {
    let expected = unfolding_shape(dims, mode);
    if m.shape() != expected {
        return Err(Error::dim(format!(
            "a {:?} matrix is not the mode-{} unfolding of a {:?} tensor (expected {:?})",
            m.shape(),
            mode.axis() + 1,
            dims,
            expected
        )));
    }
    if mode == Mode::One {
        return ComplexTensor3::from_vec(dims, m.as_slice().to_vec());
    }
    Ok(ComplexTensor3::from_fn(dims, |i1, i2, i3| {
        m[unfolding_position(dims, mode, i1, i2, i3)]
    }))
}

/// `𝓣 ×ₙ A`: multiplies every mode-`n` fiber by `A`.
pub fn mode_product(t: &ComplexTensor3, a: &ComplexMatrix, mode: Mode) -> Result<ComplexTensor3> {
    let axis = mode.axis();
    if a.ncols() != t.dims[axis] {
        return Err(Error::dim(format!(
            "mode-{} product needs {} columns, matrix has {}",
            axis + 1,
            t.dims[axis],
            a.ncols()
        )));
    }
    let mut dims = t.dims;
    dims[axis] = a.nrows();
    fold(&(a * unfold(t, mode)), mode, dims)
}

/// Core tensor whose mode-3 unfolding is `D(v)`, for `v` of length `N²`:
/// an `N × N × N²` tensor with `𝓟[i, j, j·N + i] = v[j·N + i]`.
pub fn diagonal_core(v: &ComplexVector) -> Result<ComplexTensor3> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() {
        return Err(Error::dim(format!(
            "diagonal core needs a square length, got {}",
            v.len()
        )));
    }
    let mut t = ComplexTensor3::zeros([n, n, n * n]);
    for j in 0..n {
        for i in 0..n {
            t[(i, j, j * n + i)] = v[j * n + i];
        }
    }
    Ok(t)
}
