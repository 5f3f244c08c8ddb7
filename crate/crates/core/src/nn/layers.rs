//! Forward and backward kernels for every layer kind.
//!
//! Activations are single-sample tensors laid out `(channels, spatial...)`
//! with one, two or three spatial axes. Two-dimensional layers run through
//! the three-dimensional kernels with a unit leading spatial axis.
//!
//! Every reduction runs in a fixed order that depends only on the operand
//! shapes, so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Real, TensorOf};

/// Convolution kernel extent along every convolved axis.
pub const CONV_KERNEL: usize = 3;

/// Upper bound on im2col scratch elements per chunk.
const COL_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeometry {
    cin: usize,
    cout: usize,
    /// (depth, height, width); depth is 1 for 2D inputs.
    dims: [usize; 3],
    kernel: [usize; 3],
}

impl ConvGeometry {
    fn new<T: Real>(x: &TensorOf<T>, kernels: &TensorOf<T>, bias: &TensorOf<T>) -> Result<Self> {
        let xs = x.shape();
        let ks = kernels.shape();
        let (dims, kernel) = match xs.len() {
            3 => ([1, xs[1], xs[2]], [1, CONV_KERNEL, CONV_KERNEL]),
            4 => ([xs[1], xs[2], xs[3]], [CONV_KERNEL; 3]),
            r => {
                return Err(Error::ShapeMismatch(format!(
                    "convolution input must have rank 3 or 4, got {r}"
                )))
            }
        };
        let expected_rank = xs.len() + 1;
        if ks.len() != expected_rank
            || ks[1] != xs[0]
            || ks[2..].iter().any(|&k| k != CONV_KERNEL)
        {
            return Err(Error::ShapeMismatch(format!(
                "kernel {ks:?} does not fit input {xs:?}"
            )));
        }
        if bias.shape() != [ks[0]] {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} for {} output channels",
                bias.shape(),
                ks[0]
            )));
        }
        Ok(Self {
            cin: xs[0],
            cout: ks[0],
            dims,
            kernel,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.dims.iter().product()
    }

    fn rows(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.k() * self.dims[2])).clamp(1, self.rows())
    }

    /// Calls `f(k, row_index_in_chunk, source_row_offset, shift)` for each
    /// column-matrix row segment; `source_row_offset` is `None` when the
    /// source row lies in the padding.
    fn for_each_segment(
        &self,
        r0: usize,
        r1: usize,
        mut f: impl FnMut(usize, usize, Option<usize>, isize),
    ) {
        let [d, h, w] = self.dims;
        let [kd, kh, kw] = self.kernel;
        let (pd, ph, pw) = ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        let mut k = 0;
        for ci in 0..self.cin {
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let shift = c as isize - pw;
                        for (ri, r) in (r0..r1).enumerate() {
                            let sd = (r / h) as isize + a as isize - pd;
                            let sh = (r % h) as isize + b as isize - ph;
                            let src = if sd < 0 || sd >= d as isize || sh < 0 || sh >= h as isize {
                                None
                            } else {
                                Some(((ci * d + sd as usize) * h + sh as usize) * w)
                            };
                            f(k, ri, src, shift);
                        }
                        k += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], r0: usize, r1: usize, col: &mut [T]) {
        let w = self.dims[2];
        let pc = (r1 - r0) * w;
        self.for_each_segment(r0, r1, |k, ri, src, shift| {
            let row = &mut col[k * pc + ri * w..k * pc + (ri + 1) * w];
            let Some(s) = src else {
                row.fill(T::zero());
                return;
            };
            let src = &x[s..s + w];
            match shift {
                0 => row.copy_from_slice(src),
                -1 => {
                    row[0] = T::zero();
                    row[1..].copy_from_slice(&src[..w - 1]);
                }
                _ => {
                    row[..w - 1].copy_from_slice(&src[1..]);
                    row[w - 1] = T::zero();
                }
            }
        });
    }

    fn col2im_add<T: Real>(&self, col: &[T], r0: usize, r1: usize, dx: &mut [T]) {
        let w = self.dims[2];
        let pc = (r1 - r0) * w;
        self.for_each_segment(r0, r1, |k, ri, src, shift| {
            let Some(s) = src else { return };
            let row = &col[k * pc + ri * w..k * pc + (ri + 1) * w];
            let dst = &mut dx[s..s + w];
            match shift {
                0 => dst.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v),
                -1 => dst[..w - 1]
                    .iter_mut()
                    .zip(&row[1..])
                    .for_each(|(d, &v)| *d = *d + v),
                _ => dst[1..]
                    .iter_mut()
                    .zip(&row[..w - 1])
                    .for_each(|(d, &v)| *d = *d + v),
            }
        });
    }
}

/// Stride-1 convolution with zero padding 1 on every convolved axis.
///
/// `x` is `(cin, [d,] h, w)`, `kernels` is `(cout, cin, 3, 3[, 3])`. The output
/// keeps the spatial extents of the input.
pub fn conv_forward<T: Real>(
    x: &TensorOf<T>,
    kernels: &TensorOf<T>,
    bias: &TensorOf<T>,
) -> Result<TensorOf<T>> {
    let g = ConvGeometry::new(x, kernels, bias)?;
    let (k, p, w) = (g.k(), g.positions(), g.dims[2]);
    let mut y = vec![T::zero(); g.cout * p];
    let step = g.rows_per_chunk();
    let mut col = vec![T::zero(); k * step * w];
    let mut r0 = 0;
    while r0 < g.rows() {
        let r1 = (r0 + step).min(g.rows());
        let pc = (r1 - r0) * w;
        g.im2col(x.data(), r0, r1, &mut col[..k * pc]);
        T::gemm(
            g.cout,
            k,
            pc,
            kernels.data(),
            (k, 1),
            &col[..k * pc],
            (pc, 1),
            T::zero(),
            &mut y[r0 * w..],
            (p, 1),
        );
        r0 = r1;
    }
    for (co, row) in y.chunks_exact_mut(p).enumerate() {
        let b = bias.data()[co];
        row.iter_mut().for_each(|v| *v = *v + b);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = g.cout;
    TensorOf::new(&shape, y)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub dx: Option<TensorOf<T>>,
    pub dkernels: TensorOf<T>,
    pub dbias: TensorOf<T>,
}

pub fn conv_backward<T: Real>(
    x: &TensorOf<T>,
    kernels: &TensorOf<T>,
    dy: &TensorOf<T>,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let cout = kernels.shape().first().copied().unwrap_or(0);
    let bias_shape = TensorOf::<T>::zeros(&[cout.max(1)])?;
    let g = ConvGeometry::new(x, kernels, &bias_shape)?;
    let mut y_shape = x.shape().to_vec();
    y_shape[0] = g.cout;
    if dy.shape() != y_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?}, expected {y_shape:?}",
            dy.shape()
        )));
    }
    let (k, p, w) = (g.k(), g.positions(), g.dims[2]);
    let dyd = dy.data();
    let dbias: Vec<T> = dyd
        .chunks_exact(p)
        .map(|row| row.iter().fold(T::zero(), |s, &v| s + v))
        .collect();
    let mut dk = vec![T::zero(); g.cout * k];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let step = g.rows_per_chunk();
    let mut col = vec![T::zero(); k * step * w];
    let mut r0 = 0;
    while r0 < g.rows() {
        let r1 = (r0 + step).min(g.rows());
        let pc = (r1 - r0) * w;
        g.im2col(x.data(), r0, r1, &mut col[..k * pc]);
        // dk += dy[:, chunk] · colᵀ
        T::gemm(
            g.cout,
            pc,
            k,
            &dyd[r0 * w..],
            (p, 1),
            &col[..k * pc],
            (1, pc),
            T::one(),
            &mut dk,
            (k, 1),
        );
        if let Some(dx) = dx.as_mut() {
            // dcol = kernelsᵀ · dy[:, chunk]
            T::gemm(
                k,
                g.cout,
                pc,
                kernels.data(),
                (1, k),
                &dyd[r0 * w..],
                (p, 1),
                T::zero(),
                &mut col[..k * pc],
                (pc, 1),
            );
            g.col2im_add(&col[..k * pc], r0, r1, dx);
        }
        r0 = r1;
    }
    Ok(ConvGrads {
        dx: dx.map(|d| TensorOf::new(x.shape(), d)).transpose()?,
        dkernels: TensorOf::new(kernels.shape(), dk)?,
        dbias: TensorOf::new(&[g.cout], dbias)?,
    })
}

/// Output extent of a pooling window with stride equal to the kernel.
pub fn pooled_extent(n: usize, k: usize, end_pad: bool) -> usize {
    if end_pad {
        n.div_ceil(k)
    } else {
        n / k
    }
}

/// Max pooling with stride equal to the kernel. With `end_pad` every axis is
/// padded at the end with −∞ up to a multiple of the kernel.
///
/// Returns the pooled tensor and, per output element, the flat input index of
/// the selected maximum (first maximum in scan order on ties).
pub fn maxpool_forward<T: Real>(
    x: &TensorOf<T>,
    kernel: &[usize],
    end_pad: bool,
) -> Result<(TensorOf<T>, Vec<u32>)> {
    let xs = x.shape();
    if xs.len() < 2 || xs.len() > 4 || kernel.len() != xs.len() - 1 || kernel.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "pool kernel {kernel:?} does not fit input {xs:?}"
        )));
    }
    // pad to (c, d, h, w)
    let mut dims = [1usize; 3];
    let mut ks = [1usize; 3];
    let off = 3 - kernel.len();
    dims[off..].copy_from_slice(&xs[1..]);
    ks[off..].copy_from_slice(kernel);
    let out: Vec<usize> = (0..3).map(|a| pooled_extent(dims[a], ks[a], end_pad)).collect();
    if out.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "pooling {xs:?} with kernel {kernel:?} leaves an empty axis"
        )));
    }
    let c = xs[0];
    let [d, h, w] = dims;
    let xd = x.data();
    let mut y = Vec::with_capacity(c * out.iter().product::<usize>());
    let mut arg = Vec::with_capacity(y.capacity());
    for ci in 0..c {
        for od in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for a in od * ks[0]..((od + 1) * ks[0]).min(d) {
                        for b in oh * ks[1]..((oh + 1) * ks[1]).min(h) {
                            for e in ow * ks[2]..((ow + 1) * ks[2]).min(w) {
                                let i = ((ci * d + a) * h + b) * w + e;
                                if best_i == usize::MAX || xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    let mut shape = vec![c];
    shape.extend_from_slice(&out[off..]);
    Ok((TensorOf::new(&shape, y)?, arg))
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[u32],
    dy: &TensorOf<T>,
) -> Result<TensorOf<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} output gradients for {} pooling windows",
            dy.len(),
            argmax.len()
        )));
    }
    let mut dx = TensorOf::zeros(input_shape)?;
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i as usize] = d[i as usize] + g;
    }
    Ok(dx)
}

/// `y = W x + b` with `W` of shape (out, in).
pub fn dense_forward<T: Real>(
    x: &TensorOf<T>,
    weight: &TensorOf<T>,
    bias: &TensorOf<T>,
) -> Result<TensorOf<T>> {
    let (out, inp) = dense_dims(x, weight)?;
    if bias.shape() != [out] {
        return Err(Error::ShapeMismatch(format!(
            "dense bias {:?} for {out} outputs",
            bias.shape()
        )));
    }
    let xd = x.data();
    let y: Vec<T> = weight
        .data()
        .chunks_exact(inp)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(xd).fold(T::zero(), |s, (&w, &v)| s + w * v) + b)
        .collect();
    TensorOf::new(&[out], y)
}

fn dense_dims<T: Real>(x: &TensorOf<T>, weight: &TensorOf<T>) -> Result<(usize, usize)> {
    match *weight.shape() {
        [out, inp] if inp == x.len() => Ok((out, inp)),
        _ => Err(Error::ShapeMismatch(format!(
            "dense weight {:?} for input of {} features",
            weight.shape(),
            x.len()
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub dx: Option<TensorOf<T>>,
    pub dweight: TensorOf<T>,
    pub dbias: TensorOf<T>,
}

pub fn dense_backward<T: Real>(
    x: &TensorOf<T>,
    weight: &TensorOf<T>,
    dy: &TensorOf<T>,
    need_dx: bool,
) -> Result<DenseGrads<T>> {
    let (out, inp) = dense_dims(x, weight)?;
    if dy.len() != out {
        return Err(Error::ShapeMismatch(format!(
            "{} output gradients for {out} outputs",
            dy.len()
        )));
    }
    let xd = x.data();
    let mut dw = Vec::with_capacity(out * inp);
    for &g in dy.data() {
        dw.extend(xd.iter().map(|&v| g * v));
    }
    let dx = if need_dx {
        let mut dx = vec![T::zero(); inp];
        for (row, &g) in weight.data().chunks_exact(inp).zip(dy.data()) {
            dx.iter_mut().zip(row).for_each(|(d, &w)| *d = *d + w * g);
        }
        Some(TensorOf::new(x.shape(), dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        dx,
        dweight: TensorOf::new(weight.shape(), dw)?,
        dbias: TensorOf::new(&[out], dy.data().to_vec())?,
    })
}

/// In-place ReLU; returns the mask of positive inputs.
pub fn relu_forward<T: Real>(x: &mut TensorOf<T>) -> Vec<bool> {
    x.data_mut()
        .iter_mut()
        .map(|v| {
            let on = *v > T::zero();
            if !on {
                *v = T::zero();
            }
            on
        })
        .collect()
}

pub fn relu_backward<T: Real>(mask: &[bool], dy: &mut TensorOf<T>) -> Result<()> {
    if mask.len() != dy.len() {
        return Err(Error::ShapeMismatch("relu mask length".into()));
    }
    for (g, &on) in dy.data_mut().iter_mut().zip(mask) {
        if !on {
            *g = T::zero();
        }
    }
    Ok(())
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Real>(x: &mut TensorOf<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
}

/// Backward through the sigmoid given its outputs.
pub fn sigmoid_backward<T: Real>(y: &TensorOf<T>, dy: &mut TensorOf<T>) -> Result<()> {
    if y.len() != dy.len() {
        return Err(Error::ShapeMismatch("sigmoid output length".into()));
    }
    for (g, &p) in dy.data_mut().iter_mut().zip(y.data()) {
        *g = *g * p * (T::one() - p);
    }
    Ok(())
}

#[derive(Debug)]
pub enum DropoutMode<'a> {
    Train(&'a mut RngStream),
    Eval,
}

/// Inverted dropout. In train mode each element is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`. Returns the applied per-element
/// factors (`None` in eval mode or at rate 0).
pub fn dropout_forward<T: Real>(
    x: &mut TensorOf<T>,
    rate: f32,
    mode: DropoutMode<'_>,
) -> Option<Vec<T>> {
    let DropoutMode::Train(rng) = mode else {
        return None;
    };
    if rate <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate as f64));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.uniform01() >= rate as f64 {
                keep
            } else {
                T::zero()
            }
        })
        .collect();
    x.data_mut()
        .iter_mut()
        .zip(&mask)
        .for_each(|(v, &m)| *v = *v * m);
    Some(mask)
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, dy: &mut TensorOf<T>) -> Result<()> {
    let Some(mask) = mask else { return Ok(()) };
    if mask.len() != dy.len() {
        return Err(Error::ShapeMismatch("dropout mask length".into()));
    }
    dy.data_mut()
        .iter_mut()
        .zip(mask)
        .for_each(|(g, &m)| *g = *g * m);
    Ok(())
}
