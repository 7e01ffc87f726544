//! Strided and transposed 2-D convolutions lowered to GEMM via im2col.

use rand::Rng;

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a strided convolution from a `(c, h, w)` map to `(out_h, out_w)`.
///
/// A transposed convolution reuses the same geometry with input and output
/// swapped: its output is the large `(h, w)` side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output side length of a strided convolution.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output side length of a transposed convolution: `(in - 1) s - 2p + k + op`.
pub fn conv_transpose_out_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    ((input.checked_sub(1)?) * stride + kernel + output_padding).checked_sub(2 * padding)
}

/// Unfolds one sample into columns `col_offset..col_offset + out_plane` of a
/// `rows x ld` matrix.
pub(crate) fn im2col(src: &[f32], g: &ConvGeom, cols: &mut [f32], ld: usize, col_offset: usize) {
    let k = g.k;
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ld + col_offset..row * ld + col_offset + g.out_plane()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.s + ki) as isize - g.p as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.s + kj) as isize - g.p as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the sample, accumulating.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, ld: usize, col_offset: usize, dst: &mut [f32]) {
    let k = g.k;
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ld + col_offset..row * ld + col_offset + g.out_plane()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.s + ki) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                        let ix = (ox * g.s + kj) as isize - g.p as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// NCHW -> `[C, N * H * W]` channel-major matrix.
pub(crate) fn to_channel_major(t: &Tensor) -> Vec<f32> {
    let s = t.shape();
    let plane = s.plane();
    let ld = s.n * plane;
    let mut out = vec![0.0; t.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = &t.data()[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
            out[c * ld + n * plane..c * ld + (n + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub(crate) fn from_channel_major(m: &[f32], shape: Shape) -> Tensor {
    let plane = shape.plane();
    let ld = shape.n * plane;
    let mut out = Tensor::zeros(shape);
    let data = out.data_mut();
    for n in 0..shape.n {
        for c in 0..shape.c {
            data[(n * shape.c + c) * plane..(n * shape.c + c + 1) * plane]
                .copy_from_slice(&m[c * ld + n * plane..c * ld + (n + 1) * plane]);
        }
    }
    out
}

fn add_bias(t: &mut Tensor, bias: &[f32]) {
    let s = t.shape();
    let plane = s.plane();
    for (i, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let b = bias[i % s.c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad(dy: &Tensor, grad: &mut [f32]) {
    let s = dy.shape();
    for (i, chunk) in dy.data().chunks(s.plane()).enumerate() {
        grad[i % s.c] += chunk.iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
}

/// Xavier/Glorot uniform bound for the given fans.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

pub(crate) fn xavier_fill<R: Rng>(rng: &mut R, len: usize, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let a = xavier_bound(fan_in, fan_out);
    (0..len).map(|_| rng.random_range(-a..=a)).collect()
}

/// Strided 2-D convolution; weight layout `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Self {
        let kk = kernel * kernel;
        let weight = xavier_fill(
            rng,
            out_channels * in_channels * kk,
            in_channels * kk,
            out_channels * kk,
        );
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias: with_bias.then(|| vec![0.0; out_channels]),
        }
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::shape("Conv2d input channels", self.in_channels, input.c));
        }
        let oh = conv_out_len(input.h, self.kernel, self.stride, self.padding);
        let ow = conv_out_len(input.w, self.kernel, self.stride, self.padding);
        match (oh, ow) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.out_channels, h, w)),
            _ => Err(Error::shape(
                "Conv2d spatial extent",
                format!("at least {} after padding", self.kernel),
                input,
            )),
        }
    }

    fn geom(&self, input: Shape, out: Shape) -> ConvGeom {
        ConvGeom {
            c: input.c,
            h: input.h,
            w: input.w,
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            out_h: out.h,
            out_w: out.w,
        }
    }

    fn unfold(&self, x: &Tensor, g: &ConvGeom) -> Vec<f32> {
        let n = x.batch();
        let ld = n * g.out_plane();
        let mut cols = vec![0.0; g.rows() * ld];
        for i in 0..n {
            im2col(x.sample(i), g, &mut cols, ld, i * g.out_plane());
        }
        cols
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.out_shape(x.shape())?;
        let g = self.geom(x.shape(), out_shape);
        let cols = self.unfold(x, &g);
        let ld = x.batch() * g.out_plane();
        let mut out = vec![0.0; self.out_channels * ld];
        gemm(self.out_channels, g.rows(), ld, &self.weight, false, &cols, false, &mut out, false);
        let mut y = from_channel_major(&out, out_shape);
        if let Some(b) = &self.bias {
            add_bias(&mut y, b);
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad_w: &mut [f32], grad_b: Option<&mut [f32]>) -> Tensor {
        let g = self.geom(x.shape(), dy.shape());
        let cols = self.unfold(x, &g);
        let ld = x.batch() * g.out_plane();
        let dy_m = to_channel_major(dy);
        gemm(self.out_channels, ld, g.rows(), &dy_m, false, &cols, true, grad_w, true);
        if let Some(gb) = grad_b {
            accumulate_bias_grad(dy, gb);
        }
        let mut dcols = cols;
        gemm(g.rows(), self.out_channels, ld, &self.weight, true, &dy_m, false, &mut dcols, false);
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..x.batch() {
            col2im(&dcols, &g, ld, i * g.out_plane(), dx.sample_mut(i));
        }
        dx
    }
}

/// Transposed 2-D convolution; weight layout `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        with_bias: bool,
    ) -> Self {
        let kk = kernel * kernel;
        let weight = xavier_fill(
            rng,
            in_channels * out_channels * kk,
            out_channels * kk,
            in_channels * kk,
        );
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            weight,
            bias: with_bias.then(|| vec![0.0; out_channels]),
        }
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::shape(
                "ConvTranspose2d input channels",
                self.in_channels,
                input.c,
            ));
        }
        let f = |len| {
            conv_transpose_out_len(len, self.kernel, self.stride, self.padding, self.output_padding)
        };
        match (f(input.h), f(input.w)) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.out_channels, h, w)),
            _ => Err(Error::shape("ConvTranspose2d spatial extent", "nonempty output", input)),
        }
    }

    fn geom(&self, input: Shape, out: Shape) -> ConvGeom {
        ConvGeom {
            c: out.c,
            h: out.h,
            w: out.w,
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            out_h: input.h,
            out_w: input.w,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.out_shape(x.shape())?;
        let g = self.geom(x.shape(), out_shape);
        let ld = x.batch() * g.out_plane();
        let x_m = to_channel_major(x);
        let mut cols = vec![0.0; g.rows() * ld];
        gemm(g.rows(), self.in_channels, ld, &self.weight, true, &x_m, false, &mut cols, false);
        let mut y = Tensor::zeros(out_shape);
        for i in 0..x.batch() {
            col2im(&cols, &g, ld, i * g.out_plane(), y.sample_mut(i));
        }
        if let Some(b) = &self.bias {
            add_bias(&mut y, b);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad_w: &mut [f32], grad_b: Option<&mut [f32]>) -> Tensor {
        let g = self.geom(x.shape(), dy.shape());
        let ld = x.batch() * g.out_plane();
        let mut dcols = vec![0.0; g.rows() * ld];
        for i in 0..x.batch() {
            im2col(dy.sample(i), &g, &mut dcols, ld, i * g.out_plane());
        }
        if let Some(gb) = grad_b {
            accumulate_bias_grad(dy, gb);
        }
        let x_m = to_channel_major(x);
        gemm(self.in_channels, ld, g.rows(), &x_m, false, &dcols, true, grad_w, true);
        let mut dx_m = vec![0.0; self.in_channels * ld];
        gemm(self.in_channels, g.rows(), ld, &self.weight, false, &dcols, false, &mut dx_m, false);
        from_channel_major(&dx_m, x.shape())
    }
}
