//! Dense row-major arrays and the handful of numeric kernels the
//! reconstruction network needs: matrix products, spatial-size-preserving
//! 2D convolution, ReLU, their analytic gradients, and a central
//! finite-difference gradient checker.
//!
//! Every kernel is generic over [`Scalar`] and instantiated at `f32` for
//! the production path and at `f64` where difference quotients need the
//! extra headroom (gradient checks, one-time construction numerics).

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Element type of a tensor. Implemented for `f32` and `f64` only.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense multi-dimensional array, contiguous row-major storage.
#[derive(Clone, PartialEq)]
pub struct TensorBase<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

/// The production element type: 32-bit floats.
pub type Tensor = TensorBase<f32>;
/// Double-precision twin used by gradient checks and construction math.
pub type Tensor64 = TensorBase<f64>;

impl<S: Scalar> fmt::Debug for TensorBase<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<S: Scalar> TensorBase<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {expect} values, got {}",
                data.len()
            )));
        }
        Ok(TensorBase { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        TensorBase {
            shape,
            data: vec![S::ZERO; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let n: usize = shape.iter().product();
        TensorBase {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        TensorBase {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Same buffer under a new shape; element count must match.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> TensorBase<T> {
        TensorBase {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| T::from_f64(v.to_f64()))
                .collect(),
        }
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Shape(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

impl Tensor {
    /// Lossless promotion to the double-precision twin.
    pub fn widen(&self) -> Tensor64 {
        self.cast()
    }
}

impl Tensor64 {
    /// Rounding demotion to the production type.
    pub fn narrow(&self) -> Tensor {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// A parameter tensor paired with a gradient of identical shape.
#[derive(Clone, Debug)]
pub struct GradPair<S: Scalar = f32> {
    pub value: TensorBase<S>,
    pub grad: TensorBase<S>,
}

impl<S: Scalar> GradPair<S> {
    pub fn new(value: TensorBase<S>, grad: TensorBase<S>) -> Result<Self> {
        if value.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match value shape {:?}",
                grad.shape(),
                value.shape()
            )));
        }
        Ok(GradPair { value, grad })
    }
}

/// Fixed-formula dot product: eight partial lanes, combined pairwise.
/// The lane structure vectorizes and is independent of call context,
/// so results are bit-stable for a given input.
#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let pa = &a[i * 8..i * 8 + 8];
        let pb = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] += pa[l] * pb[l];
        }
    }
    for i in chunks * 8..a.len() {
        lanes[i % 8] += a[i] * b[i];
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[2] + lanes[6]);
    let s1 = (lanes[1] + lanes[5]) + (lanes[3] + lanes[7]);
    s0 + s1
}

/// Standard matrix product of an `r x k` and a `k x c` matrix.
pub fn matmul<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> Result<TensorBase<S>> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (r, k) = (a.shape[0], a.shape[1]);
    let (k2, c) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {r}x{k} vs {k2}x{c}"
        )));
    }
    let mut out = TensorBase::zeros(vec![r, c]);
    for i in 0..r {
        let row_a = &a.data[i * k..(i + 1) * k];
        let row_out = &mut out.data[i * c..(i + 1) * c];
        for (kk, &aik) in row_a.iter().enumerate() {
            let row_b = &b.data[kk * c..(kk + 1) * c];
            for (o, &bv) in row_out.iter_mut().zip(row_b) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `A x` for an `r x k` matrix and a length-`k` vector.
pub fn matvec<S: Scalar>(a: &TensorBase<S>, x: &[S]) -> Result<Vec<S>> {
    a.expect_rank(2, "matvec lhs")?;
    let (r, k) = (a.shape[0], a.shape[1]);
    if x.len() != k {
        return Err(Error::Shape(format!(
            "matvec: matrix is {r}x{k}, vector has length {}",
            x.len()
        )));
    }
    Ok((0..r)
        .map(|i| dot(&a.data[i * k..(i + 1) * k], x))
        .collect())
}

/// `x^T A` for a length-`r` vector and an `r x k` matrix.
pub fn vecmat<S: Scalar>(x: &[S], a: &TensorBase<S>) -> Result<Vec<S>> {
    a.expect_rank(2, "vecmat rhs")?;
    let (r, k) = (a.shape[0], a.shape[1]);
    if x.len() != r {
        return Err(Error::Shape(format!(
            "vecmat: vector has length {}, matrix is {r}x{k}",
            x.len()
        )));
    }
    let mut out = vec![S::ZERO; k];
    for (i, &xi) in x.iter().enumerate() {
        let row = &a.data[i * k..(i + 1) * k];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += xi * v;
        }
    }
    Ok(out)
}

/// Rank-1 update `acc += x y^T`; `acc` must be `len(x) x len(y)`.
pub fn outer_acc<S: Scalar>(x: &[S], y: &[S], acc: &mut TensorBase<S>) {
    debug_assert_eq!(acc.shape(), &[x.len(), y.len()]);
    let c = y.len();
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut acc.data[i * c..(i + 1) * c];
        for (o, &yv) in row.iter_mut().zip(y) {
            *o += xi * yv;
        }
    }
}

/// Elementwise `max(0, x)`.
pub fn relu<S: Scalar>(x: &TensorBase<S>) -> TensorBase<S> {
    x.map(|v| if v > S::ZERO { v } else { S::ZERO })
}

/// Gradient of ReLU: masks `upstream` where the activation was not
/// positive. `reference` may be either the ReLU input or its output;
/// the two masks coincide.
pub fn relu_backward<S: Scalar>(
    reference: &TensorBase<S>,
    upstream: &TensorBase<S>,
) -> Result<TensorBase<S>> {
    if reference.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "relu_backward: upstream {:?} vs forward {:?}",
            upstream.shape(),
            reference.shape()
        )));
    }
    let data = reference
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&r, &g)| if r > S::ZERO { g } else { S::ZERO })
        .collect();
    Ok(TensorBase {
        shape: upstream.shape.clone(),
        data,
    })
}

/// Gradients of `matmul(a, b)`: `dA = dC B^T`, `dB = A^T dC`.
pub fn matmul_backward<S: Scalar>(
    a: &TensorBase<S>,
    b: &TensorBase<S>,
    upstream: &TensorBase<S>,
) -> Result<(TensorBase<S>, TensorBase<S>)> {
    let (r, k) = (a.shape[0], a.shape[1]);
    let (_, c) = (b.shape[0], b.shape[1]);
    if upstream.shape() != [r, c] {
        return Err(Error::Shape(format!(
            "matmul_backward: upstream {:?}, expected [{r}, {c}]",
            upstream.shape()
        )));
    }
    // dA[i][kk] = dot(dC row i, B row kk)
    let mut da = TensorBase::zeros(vec![r, k]);
    for i in 0..r {
        let g_row = &upstream.data[i * c..(i + 1) * c];
        let da_row = &mut da.data[i * k..(i + 1) * k];
        for (kk, o) in da_row.iter_mut().enumerate() {
            *o = dot(g_row, &b.data[kk * c..(kk + 1) * c]);
        }
    }
    // dB[kk][j] = sum_i A[i][kk] dC[i][j]
    let mut db = TensorBase::zeros(vec![k, c]);
    for i in 0..r {
        let g_row = &upstream.data[i * c..(i + 1) * c];
        let a_row = &a.data[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let db_row = &mut db.data[kk * c..(kk + 1) * c];
            for (o, &g) in db_row.iter_mut().zip(g_row) {
                *o += aik * g;
            }
        }
    }
    Ok((da, db))
}

fn conv_check<S: Scalar>(
    input: &TensorBase<S>,
    kernels: &TensorBase<S>,
    bias: &TensorBase<S>,
) -> Result<(usize, usize, usize, usize, usize)> {
    input.expect_rank(3, "conv2d input")?;
    kernels.expect_rank(4, "conv2d kernels")?;
    bias.expect_rank(1, "conv2d bias")?;
    let (h, w, cin) = (input.shape[0], input.shape[1], input.shape[2]);
    let (kh, kw, kci, cout) = (
        kernels.shape[0],
        kernels.shape[1],
        kernels.shape[2],
        kernels.shape[3],
    );
    if kh != kw {
        return Err(Error::Config(format!(
            "conv2d kernels must be square, got {kh}x{kw}"
        )));
    }
    if kh % 2 == 0 {
        return Err(Error::Config(format!(
            "conv2d kernel size must be odd, got {kh}"
        )));
    }
    if kci != cin {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {cin}, kernels expect {kci}"
        )));
    }
    if bias.shape[0] != cout {
        return Err(Error::Shape(format!(
            "conv2d bias length {} does not match {cout} output channels",
            bias.shape[0]
        )));
    }
    Ok((h, w, cin, kh, cout))
}

/// Output-channel count below which the kernels are transposed so the
/// inner loops can run along the contiguous input-channel axis instead.
const NARROW_COUT: usize = 8;

#[inline(always)]
fn axpy_const<S: Scalar, const N: usize>(acc: &mut [S], row: &[S], v: S) {
    let acc: &mut [S; N] = (&mut acc[..N]).try_into().unwrap();
    let row: &[S; N] = (&row[..N]).try_into().unwrap();
    for i in 0..N {
        acc[i] += v * row[i];
    }
}

/// `acc += v * row`, dispatching common widths to fixed-size code the
/// compiler unrolls and vectorizes fully.
#[inline(always)]
fn axpy<S: Scalar>(acc: &mut [S], row: &[S], v: S) {
    debug_assert_eq!(acc.len(), row.len());
    match acc.len() {
        64 => axpy_const::<S, 64>(acc, row, v),
        32 => axpy_const::<S, 32>(acc, row, v),
        16 => axpy_const::<S, 16>(acc, row, v),
        _ => {
            for (a, &r) in acc.iter_mut().zip(row) {
                *a += v * r;
            }
        }
    }
}

/// Kernels rearranged from `[k][k][cin][cout]` to `[k][k][cout][cin]`.
fn transpose_kernels<S: Scalar>(kernels: &TensorBase<S>) -> Vec<S> {
    let (k, cin, cout) = (kernels.shape[0], kernels.shape[2], kernels.shape[3]);
    let mut out = vec![S::ZERO; kernels.data.len()];
    for tap in 0..k * k {
        for ci in 0..cin {
            for co in 0..cout {
                out[(tap * cout + co) * cin + ci] = kernels.data[(tap * cin + ci) * cout + co];
            }
        }
    }
    out
}

/// Spatial-size-preserving 2D convolution in the cross-correlation
/// convention, zero padding of (k-1)/2 on each border.
///
/// `input` is `h x w x cin`, `kernels` is `k x k x cin x cout`,
/// `bias` is `cout`; output is `h x w x cout`.
pub fn conv2d_same<S: Scalar>(
    input: &TensorBase<S>,
    kernels: &TensorBase<S>,
    bias: &TensorBase<S>,
) -> Result<TensorBase<S>> {
    let (h, w, cin, k, cout) = conv_check(input, kernels, bias)?;
    let pad = (k - 1) / 2;
    let mut out = TensorBase::zeros(vec![h, w, cout]);
    let transposed = if cout < NARROW_COUT {
        Some(transpose_kernels(kernels))
    } else {
        None
    };
    // Per-pixel accumulator; keeps the tap loop out of the output buffer.
    let mut acc = vec![S::ZERO; cout];
    for y in 0..h {
        let dy_lo = pad.saturating_sub(y);
        let dy_hi = k.min(h + pad - y);
        for x in 0..w {
            let dx_lo = pad.saturating_sub(x);
            let dx_hi = k.min(w + pad - x);
            acc.copy_from_slice(&bias.data);
            for dy in dy_lo..dy_hi {
                let iy = y + dy - pad;
                for dx in dx_lo..dx_hi {
                    let ix = x + dx - pad;
                    let in_px = &input.data[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let tap = dy * k + dx;
                    match &transposed {
                        // Few output channels: reduce along cin.
                        Some(kt) => {
                            for (co, ov) in acc.iter_mut().enumerate() {
                                let kk = &kt[(tap * cout + co) * cin
                                    ..(tap * cout + co + 1) * cin];
                                *ov += dot(in_px, kk);
                            }
                        }
                        // Wide output: accumulate along cout.
                        None => {
                            for (ci, &v) in in_px.iter().enumerate() {
                                let kk = &kernels.data
                                    [(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
                                axpy(&mut acc, kk, v);
                            }
                        }
                    }
                }
            }
            out.data[(y * w + x) * cout..(y * w + x + 1) * cout].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_same`] with respect to input, kernels and bias.
/// Kernel and bias gradients are accumulated into the provided buffers;
/// the input gradient is returned.
pub fn conv2d_same_backward_acc<S: Scalar>(
    input: &TensorBase<S>,
    kernels: &TensorBase<S>,
    upstream: &TensorBase<S>,
    dkernels: &mut TensorBase<S>,
    dbias: &mut TensorBase<S>,
) -> Result<TensorBase<S>> {
    let (h, w, cin, k, cout) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        kernels.shape[0],
        kernels.shape[3],
    );
    if upstream.shape() != [h, w, cout] {
        return Err(Error::Shape(format!(
            "conv2d backward: upstream {:?}, expected [{h}, {w}, {cout}]",
            upstream.shape()
        )));
    }
    if dkernels.shape() != kernels.shape() || dbias.shape() != [cout] {
        return Err(Error::Shape(
            "conv2d backward: accumulator shapes do not match parameters".into(),
        ));
    }
    let pad = (k - 1) / 2;
    let mut dinput = TensorBase::zeros(vec![h, w, cin]);
    let narrow = if cout < NARROW_COUT {
        // Work in the transposed layout and fold back at the end.
        Some((
            transpose_kernels(kernels),
            vec![S::ZERO; kernels.data.len()],
        ))
    } else {
        None
    };
    let (mut kt, mut dkt) = match narrow {
        Some((kt, dkt)) => (kt, dkt),
        None => (Vec::new(), Vec::new()),
    };
    for y in 0..h {
        let dy_lo = pad.saturating_sub(y);
        let dy_hi = k.min(h + pad - y);
        for x in 0..w {
            let dx_lo = pad.saturating_sub(x);
            let dx_hi = k.min(w + pad - x);
            let g = &upstream.data[(y * w + x) * cout..(y * w + x + 1) * cout];
            for (o, &gv) in dbias.data.iter_mut().zip(g) {
                *o += gv;
            }
            for dy in dy_lo..dy_hi {
                let iy = y + dy - pad;
                for dx in dx_lo..dx_hi {
                    let ix = x + dx - pad;
                    let in_px = &input.data[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let din_px =
                        &mut dinput.data[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let tap = dy * k + dx;
                    if kt.is_empty() {
                        for ci in 0..cin {
                            let base = (tap * cin + ci) * cout;
                            let kk = &kernels.data[base..base + cout];
                            let dk = &mut dkernels.data[base..base + cout];
                            axpy(dk, g, in_px[ci]);
                            din_px[ci] += dot(kk, g);
                        }
                    } else {
                        for (co, &gv) in g.iter().enumerate() {
                            let base = (tap * cout + co) * cin;
                            let kk = &kt[base..base + cin];
                            let dk = &mut dkt[base..base + cin];
                            for ((o, &kv), (dkv, &iv)) in din_px
                                .iter_mut()
                                .zip(kk)
                                .zip(dk.iter_mut().zip(in_px))
                            {
                                *o += kv * gv;
                                *dkv += iv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    if !dkt.is_empty() {
        for tap in 0..k * k {
            for co in 0..cout {
                for ci in 0..cin {
                    dkernels.data[(tap * cin + ci) * cout + co] +=
                        dkt[(tap * cout + co) * cin + ci];
                }
            }
        }
        kt.clear();
    }
    Ok(dinput)
}

/// Convenience wrapper returning fresh gradient tensors.
pub fn conv2d_same_backward<S: Scalar>(
    input: &TensorBase<S>,
    kernels: &TensorBase<S>,
    upstream: &TensorBase<S>,
) -> Result<(TensorBase<S>, TensorBase<S>, TensorBase<S>)> {
    let mut dk = TensorBase::zeros(kernels.shape().to_vec());
    let mut db = TensorBase::zeros(vec![kernels.shape()[3]]);
    let din = conv2d_same_backward_acc(input, kernels, upstream, &mut dk, &mut db)?;
    Ok((din, dk, db))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// Central-difference check of `analytic` against the numerical gradient
/// of `f` at `x`, over the given coordinates.
///
/// The relative error for each coordinate is
/// `|a - n| / max(|a|, |n|, 1e-8)`; the report carries the worst one.
/// The divisor uses the actually realized step `(x+h) - (x-h)` after
/// rounding to `S`, which removes the step-representation error.
pub fn finite_diff_check_coords<S: Scalar, F>(
    mut f: F,
    x: &TensorBase<S>,
    analytic: &TensorBase<S>,
    step: f64,
    tol: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: FnMut(&TensorBase<S>) -> Result<f64>,
{
    if analytic.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "finite_diff_check: gradient {:?} vs point {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    let mut probe = x.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst_coord = 0;
    for &i in coords {
        let orig = x.data[i];
        let plus = S::from_f64(orig.to_f64() + step);
        let minus = S::from_f64(orig.to_f64() - step);
        let realized = plus.to_f64() - minus.to_f64();
        if realized == 0.0 {
            return Err(Error::Eval(format!(
                "finite_diff_check: step {step} vanishes at coordinate {i}"
            )));
        }
        probe.data[i] = plus;
        let f_plus = f(&probe)?;
        probe.data[i] = minus;
        let f_minus = f(&probe)?;
        probe.data[i] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::Eval(format!(
                "finite_diff_check: non-finite evaluation at coordinate {i}"
            )));
        }
        let numeric = (f_plus - f_minus) / realized;
        let a = analytic.data[i].to_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
    }
    Ok(GradCheckReport {
        pass: max_rel_err <= tol,
        max_rel_err,
        worst_coord,
    })
}

/// [`finite_diff_check_coords`] over every coordinate of `x`.
pub fn finite_diff_check<S: Scalar, F>(
    f: F,
    x: &TensorBase<S>,
    analytic: &TensorBase<S>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&TensorBase<S>) -> Result<f64>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_coords(f, x, analytic, step, tol, &coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[3, 3], &[2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 0.0, 1.0, 7.0]);
        let eye = Tensor::from_fn(vec![3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&eye, &a).unwrap().data(), a.data());
        assert_eq!(matmul(&a, &eye).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_identity_kernel() {
        let input = Tensor::from_fn(vec![4, 5, 1], |i| i as f32 * 0.3 - 2.0);
        let kernels = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d_same(&input, &kernels, &bias).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_zero_kernel_bias_constant() {
        let input = Tensor::from_fn(vec![3, 3, 2], |i| i as f32);
        let kernels = Tensor::zeros(vec![3, 3, 2, 4]);
        let bias = t(&[4], &[0.5, -1.0, 2.0, 0.0]);
        let out = conv2d_same(&input, &kernels, &bias).unwrap();
        for px in 0..9 {
            assert_eq!(&out.data()[px * 4..px * 4 + 4], bias.data());
        }
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let input = Tensor::zeros(vec![4, 4, 1]);
        let kernels = Tensor::zeros(vec![2, 2, 1, 1]);
        let bias = Tensor::zeros(vec![1]);
        assert!(matches!(
            conv2d_same(&input, &kernels, &bias),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros(vec![4, 4, 2]);
        let kernels = Tensor::zeros(vec![3, 3, 3, 1]);
        let bias = Tensor::zeros(vec![1]);
        assert!(matches!(
            conv2d_same(&input, &kernels, &bias),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn relu_basics() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let y = t(&[3], &[0.5, 1.0, 3.0]);
        assert_eq!(relu(&y).data(), y.data());
    }

    #[test]
    fn relu_grad_mask() {
        let x = t(&[2], &[-2.0, 3.0]);
        let g = t(&[2], &[5.0, 7.0]);
        let dx = relu_backward(&x, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 7.0]);
    }

    #[test]
    fn grad_pair_shape_invariant() {
        let v = Tensor::zeros(vec![2, 3]);
        assert!(GradPair::new(v.clone(), Tensor::zeros(vec![2, 3])).is_ok());
        assert!(GradPair::new(v, Tensor::zeros(vec![3, 2])).is_err());
    }

    #[test]
    fn fd_check_sum_function() {
        let x = Tensor64::from_fn(vec![5], |i| i as f64 * 0.7 - 1.3);
        let analytic = Tensor64::filled(vec![5], 1.0);
        let report =
            finite_diff_check(|p| Ok(p.sum_f64()), &x, &analytic, 1e-4, 1e-6).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn fd_check_norm_squared() {
        let x = Tensor64::new(vec![2], vec![1.0, 2.0]).unwrap();
        let analytic = Tensor64::new(vec![2], vec![2.0, 4.0]).unwrap();
        let report = finite_diff_check(
            |p| Ok(p.data().iter().map(|v| v * v).sum()),
            &x,
            &analytic,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn fd_check_rejects_non_finite() {
        let x = Tensor64::filled(vec![1], 1.0);
        let analytic = Tensor64::filled(vec![1], 1.0);
        let res = finite_diff_check(|_| Ok(f64::NAN), &x, &analytic, 1e-3, 1e-4);
        assert!(matches!(res, Err(Error::Eval(_))));
    }

    #[test]
    fn reshape_checks_count() {
        let x = Tensor::zeros(vec![2, 3]);
        assert!(x.clone().reshape(vec![3, 2]).is_ok());
        assert!(Tensor::zeros(vec![2, 3]).reshape(vec![4, 2]).is_err());
    }
}
