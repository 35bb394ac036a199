//! Raw compute kernels: strided GEMM, convolution forward/backward.

use rayon::prelude::*;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Images per weight-gradient partial sum. Partials are added in group
/// order, so the result does not depend on the worker count.
const WEIGHT_GRAD_GROUP: usize = 8;

/// Convolution forward algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvAlgo {
    /// Lowers each image to a column matrix and runs one GEMM per image.
    #[default]
    Im2col,
    /// Straight nested loops. Slow; the summation order is fixed as
    /// channel, kernel row, kernel column, then the bias is added.
    Direct,
}

/// Strided matrix view: `len` elements reachable, element (i, j) lives at
/// `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `cols x rows` buffer.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: 1,
            cs: rows,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = a * b + beta * c`.
///
/// Panics if a layout reaches past its slice or the inner dimensions differ.
pub fn gemm<T: Element>(
    a: &[T],
    la: MatLayout,
    b: &[T],
    lb: MatLayout,
    beta: T,
    c: &mut [T],
    lc: MatLayout,
) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    assert_eq!(la.rows, lc.rows, "gemm output rows");
    assert_eq!(lb.cols, lc.cols, "gemm output cols");
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    if la.cols == 0 {
        for i in 0..lc.rows {
            for j in 0..lc.cols {
                let idx = i * lc.rs + j * lc.cs;
                c[idx] = beta * c[idx];
            }
        }
        return;
    }
    assert!(la.max_index() < a.len(), "gemm lhs out of bounds");
    assert!(lb.max_index() < b.len(), "gemm rhs out of bounds");
    assert!(lc.max_index() < c.len(), "gemm output out of bounds");
    // SAFETY: every reachable index was bounds-checked above.
    unsafe {
        T::gemm_raw(
            la.rows,
            la.cols,
            lb.cols,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Validated geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new<T: Element>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        if input.rank() != 4 {
            return Err(Error::dim(OP, "input rank", 4, input.rank()));
        }
        if weight.rank() != 4 {
            return Err(Error::dim(OP, "weight rank", 4, weight.rank()));
        }
        let &[batch, in_channels, height, width] = input.shape() else {
            unreachable!()
        };
        let &[out_channels, w_in, kernel_h, kernel_w] = weight.shape() else {
            unreachable!()
        };
        if w_in != in_channels {
            return Err(Error::dim(OP, "input channels (axis 1)", w_in, in_channels));
        }
        if bias.len() != out_channels {
            return Err(Error::dim(OP, "bias length", out_channels, bias.len()));
        }
        if stride == 0 {
            return Err(Error::Input("conv2d stride must be >= 1".into()));
        }
        let out_h = conv_out_len(height, kernel_h, stride, padding)
            .ok_or_else(|| Error::dim(OP, "input height (axis 2)", kernel_h, height + 2 * padding))?;
        let out_w = conv_out_len(width, kernel_w, stride, padding)
            .ok_or_else(|| Error::dim(OP, "input width (axis 3)", kernel_w, width + 2 * padding))?;
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_image(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_image(&self) -> usize {
        self.out_channels * self.out_plane()
    }

    /// Input coordinate read by output `(oh, ow)` at kernel tap `(kh, kw)`.
    #[inline]
    fn source(&self, oh: usize, ow: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let ih = (oh * self.stride + kh).checked_sub(self.padding)?;
        let iw = (ow * self.stride + kw).checked_sub(self.padding)?;
        (ih < self.height && iw < self.width).then_some((ih, iw))
    }
}

/// Lowers one image into `cols`, laid out `[patch_len, out_h * out_w]`.
fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let chan = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..g.kernel_h {
            for kw in 0..g.kernel_w {
                let row = (c * g.kernel_h + kh) * g.kernel_w + kw;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        dst[oh * g.out_w + ow] = match g.source(oh, ow, kh, kw) {
                            Some((ih, iw)) => chan[ih * g.width + iw],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one image.
fn col2im_add<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let chan = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..g.kernel_h {
            for kw in 0..g.kernel_w {
                let row = (c * g.kernel_h + kh) * g.kernel_w + kw;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        if let Some((ih, iw)) = g.source(oh, ow, kh, kw) {
                            let idx = ih * g.width + iw;
                            chan[idx] = chan[idx] + src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    algo: ConvAlgo,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, weight, bias, stride, padding)?;
    let mut out = vec![T::zero(); g.batch * g.out_image()];
    match algo {
        ConvAlgo::Im2col => conv_im2col(&g, input.data(), weight.data(), bias.data(), &mut out),
        ConvAlgo::Direct => conv_direct(&g, input.data(), weight.data(), bias.data(), &mut out),
    }
    Tensor::new([g.batch, g.out_channels, g.out_h, g.out_w], out)
}

fn conv_im2col<T: Element>(g: &ConvGeometry, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let plane = g.out_plane();
    let patch = g.patch_len();
    out.par_chunks_mut(g.out_image())
        .enumerate()
        .for_each_init(
            || vec![T::zero(); patch * plane],
            |cols, (n, dst)| {
                im2col(g, &x[n * g.in_image()..(n + 1) * g.in_image()], cols);
                for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
                    row.fill(b[o]);
                }
                gemm(
                    w,
                    MatLayout::row_major(g.out_channels, patch),
                    cols,
                    MatLayout::row_major(patch, plane),
                    T::one(),
                    dst,
                    MatLayout::row_major(g.out_channels, plane),
                );
            },
        );
}

fn conv_direct<T: Element>(g: &ConvGeometry, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    for n in 0..g.batch {
        let img = &x[n * g.in_image()..(n + 1) * g.in_image()];
        for o in 0..g.out_channels {
            for oh in 0..g.out_h {
                for ow in 0..g.out_w {
                    let mut acc = T::zero();
                    for c in 0..g.in_channels {
                        for kh in 0..g.kernel_h {
                            for kw in 0..g.kernel_w {
                                if let Some((ih, iw)) = g.source(oh, ow, kh, kw) {
                                    let xv = img[(c * g.height + ih) * g.width + iw];
                                    let wv = w[((o * g.in_channels + c) * g.kernel_h + kh)
                                        * g.kernel_w
                                        + kw];
                                    acc = acc + xv * wv;
                                }
                            }
                        }
                    }
                    out[n * g.out_image() + (o * g.out_h + oh) * g.out_w + ow] = acc + b[o];
                }
            }
        }
    }
}

/// Gradients of a convolution. Each slot is computed only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input, weight, bias, stride, padding)?;
    let plane = g.out_plane();
    let patch = g.patch_len();
    let [need_input, need_weight, need_bias] = need;
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();

    let mut dx = need_input.then(|| vec![T::zero(); input.len()]);
    let db = need_bias.then(|| {
        let mut db = vec![T::zero(); g.out_channels];
        for n in 0..g.batch {
            let img = &dy[n * g.out_image()..(n + 1) * g.out_image()];
            for (o, row) in img.chunks_exact(plane).enumerate() {
                db[o] = db[o] + row.iter().copied().sum::<T>();
            }
        }
        db
    });

    let dw = need_weight.then(|| {
        let groups = g.batch.div_ceil(WEIGHT_GRAD_GROUP);
        let partials: Vec<Vec<T>> = (0..groups)
            .into_par_iter()
            .map(|gi| {
                let mut part = vec![T::zero(); weight.len()];
                let mut cols = vec![T::zero(); patch * plane];
                for n in gi * WEIGHT_GRAD_GROUP..((gi + 1) * WEIGHT_GRAD_GROUP).min(g.batch) {
                    im2col(&g, &x[n * g.in_image()..(n + 1) * g.in_image()], &mut cols);
                    // dW[o, j] += sum_p dY[o, p] * cols[j, p]
                    gemm(
                        &dy[n * g.out_image()..(n + 1) * g.out_image()],
                        MatLayout::row_major(g.out_channels, plane),
                        &cols,
                        MatLayout::transposed(plane, patch),
                        T::one(),
                        &mut part,
                        MatLayout::row_major(g.out_channels, patch),
                    );
                }
                part
            })
            .collect();
        let mut parts = partials.into_iter();
        let mut dw = parts.next().unwrap_or_else(|| vec![T::zero(); weight.len()]);
        for part in parts {
            for (a, b) in dw.iter_mut().zip(part) {
                *a = *a + b;
            }
        }
        dw
    });
    if let Some(dx) = dx.as_mut() {
        dx.par_chunks_mut(g.in_image())
            .enumerate()
            .for_each_init(
                || vec![T::zero(); patch * plane],
                |cols, (n, dx_n)| {
                    // dcols[j, p] = sum_o W[o, j] * dY[o, p]
                    gemm(
                        w,
                        MatLayout::transposed(patch, g.out_channels),
                        &dy[n * g.out_image()..(n + 1) * g.out_image()],
                        MatLayout::row_major(g.out_channels, plane),
                        T::zero(),
                        cols,
                        MatLayout::row_major(patch, plane),
                    );
                    col2im_add(&g, cols, dx_n);
                },
            );
    }

    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        weight: dw.map(|d| Tensor::new(weight.shape().to_vec(), d)).transpose()?,
        bias: db.map(|d| Tensor::new(bias.shape().to_vec(), d)).transpose()?,
    })
}

/// `input [N, F] * weight[G, F]^T + bias[G]`.
pub fn linear_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, f, g) = linear_dims(input, weight, bias)?;
    let mut out = Vec::with_capacity(n * g);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(
        input.data(),
        MatLayout::row_major(n, f),
        weight.data(),
        MatLayout::transposed(f, g),
        T::one(),
        &mut out,
        MatLayout::row_major(n, g),
    );
    Tensor::new([n, g], out)
}

pub(crate) fn linear_dims<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    if input.rank() != 2 {
        return Err(Error::dim(OP, "input rank", 2, input.rank()));
    }
    if weight.rank() != 2 {
        return Err(Error::dim(OP, "weight rank", 2, weight.rank()));
    }
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (g, wf) = (weight.shape()[0], weight.shape()[1]);
    if wf != f {
        return Err(Error::dim(OP, "input features (axis 1)", wf, f));
    }
    if bias.len() != g {
        return Err(Error::dim(OP, "bias length", g, bias.len()));
    }
    Ok((n, f, g))
}
