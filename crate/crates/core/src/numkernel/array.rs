use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Arithmetic mode of a model instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// 64-bit; used for gradient checks and bit-exact reproducibility tests.
    Verify64,
    /// 32-bit; used for experiment runs.
    Fast32,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Verify64 => "verify64",
            Precision::Fast32 => "fast32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "verify64" | "f64" | "64" => Some(Precision::Verify64),
            "fast32" | "f32" | "32" => Some(Precision::Fast32),
            _ => None,
        }
    }
}

/// Floating-point element type of the kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    /// `c = alpha * a·b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must be in
    /// bounds of its buffer. [`gemm`] checks this before calling.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Fast32;
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Verify64;
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A read-only strided matrix view: element (i, j) lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, F> {
    pub data: &'a [F],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> MatRef<'a, F> {
    /// Row-major `rows × cols` starting at `offset`.
    pub fn rows(data: &'a [F], offset: usize, row_stride: usize) -> Self {
        MatRef {
            data,
            offset,
            rs: row_stride,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix whose rows are `row_stride` apart.
    pub fn transposed(data: &'a [F], offset: usize, row_stride: usize) -> Self {
        MatRef {
            data,
            offset,
            rs: 1,
            cs: row_stride,
        }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c[m×n] (row stride ldc, at c_offset) = a[m×k]·b[k×n] + beta·c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, F>,
    b: MatRef<'_, F>,
    beta: F,
    c: &mut [F],
    c_offset: usize,
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[c_offset + i * ldc..c_offset + i * ldc + n] {
                *v = *v * beta;
            }
        }
        return;
    }
    assert!(a.last_index(m, k) < a.data.len(), "gemm: lhs out of bounds");
    assert!(b.last_index(k, n) < b.data.len(), "gemm: rhs out of bounds");
    assert!(c_offset + (m - 1) * ldc + n <= c.len(), "gemm: output out of bounds");
    // SAFETY: extents checked against every buffer above.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            ldc as isize,
            1,
        );
    }
}

pub(crate) fn ensure_finite<F: Scalar>(data: &[F], what: &str) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        bail!(Numeric, "{what}: non-finite value {} at index {pos}", data[pos]);
    }
    Ok(())
}

/// Contiguous row-major array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> DenseArray<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            bail!(Dimension, "shape {shape:?} must have positive extents");
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(Dimension, "shape {shape:?} needs {n} values, got {}", data.len());
        }
        Ok(DenseArray { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| F::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Product of all leading axes (number of rows when viewed as a matrix).
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            bail!(Dimension, "cannot reshape {:?} into {shape:?}", self.shape);
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        ensure_finite(&self.data, what)
    }
}

/// A value paired with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBuffer<F> {
    pub value: DenseArray<F>,
    pub grad: DenseArray<F>,
}

impl<F: Scalar> DualBuffer<F> {
    pub fn new(value: DenseArray<F>) -> Self {
        let grad = DenseArray::zeros(value.shape());
        DualBuffer { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(DenseArray::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(DenseArray::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DenseArray::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn zero_grad_clears_accumulator() {
        let mut buf = DualBuffer::new(DenseArray::<f32>::from_fn(&[3], |i| i as f32));
        buf.grad.fill(2.5);
        buf.zero_grad();
        assert!(buf.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(buf.grad.shape(), buf.value.shape());
    }

    #[test]
    fn gemm_handles_transposed_views() {
        // a = [[1,2],[3,4]], b = a^T  ->  a·a^T = [[5,11],[11,25]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, MatRef::rows(&a, 0, 2), MatRef::transposed(&a, 0, 2), 0.0, &mut c, 0, 2);
        assert_eq!(c, [5.0, 11.0, 11.0, 25.0]);
    }

    #[test]
    fn non_finite_is_reported() {
        let a = DenseArray::<f64>::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(a.check_finite("x"), Err(crate::Error::Numeric(_))));
    }
}
