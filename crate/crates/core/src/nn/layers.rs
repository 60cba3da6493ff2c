//! Convolution, transposed convolution, and leaky-rectifier layers.
//!
//! Both convolution flavours share one index map between a "coarse" and a
//! "fine" plane, `fine = coarse * stride + tap - pad`. A convolution reads the
//! fine plane (its input) into the coarse plane (its output); a transposed
//! convolution is the exact adjoint and scatters coarse into fine. The map is
//! materialized as an im2col matrix so every pass becomes one matrix product.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::tensor::Tensor;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Coarse indices `lo..hi` whose fine index `c * stride + offset` is in bounds.
#[derive(Debug, Clone, Copy)]
struct Span {
    lo: usize,
    hi: usize,
    offset: isize,
}

fn span(tap: usize, pad: usize, stride: usize, coarse: usize, fine: usize) -> Span {
    let offset = tap as isize - pad as isize;
    let s = stride as isize;
    let lo = if offset < 0 {
        ((-offset) + s - 1) / s
    } else {
        0
    };
    let last = fine as isize - 1 - offset;
    let hi = if last < 0 {
        0
    } else {
        (last / s + 1).min(coarse as isize)
    };
    Span {
        lo: lo as usize,
        hi: (hi.max(lo)) as usize,
        offset,
    }
}

/// Geometry of one coarse/fine pairing.
#[derive(Debug, Clone, Copy)]
struct Geom {
    channels: usize,
    k: usize,
    stride: usize,
    pad: usize,
    fine: (usize, usize),
    coarse: (usize, usize),
}

impl Geom {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.coarse.0 * self.coarse.1
    }

    /// Calls `f(row, coarse_index, fine_index)` over every in-bounds entry,
    /// one contiguous coarse run at a time.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (fh, fw) = self.fine;
        let (ch, cw) = self.coarse;
        for c in 0..self.channels {
            for ky in 0..self.k {
                let sy = span(ky, self.pad, self.stride, ch, fh);
                for kx in 0..self.k {
                    let sx = span(kx, self.pad, self.stride, cw, fw);
                    if sx.lo >= sx.hi {
                        continue;
                    }
                    let row = (c * self.k + ky) * self.k + kx;
                    for cy in sy.lo..sy.hi {
                        let fy = ((cy * self.stride) as isize + sy.offset) as usize;
                        let fstart = c * fh * fw
                            + fy * fw
                            + ((sx.lo * self.stride) as isize + sx.offset) as usize;
                        f(row, cy * cw + sx.lo, fstart, sx.hi - sx.lo);
                    }
                }
            }
        }
    }
}

/// Fine planes `[channels, fh, fw]` to the `[channels*k*k, ch*cw]` matrix.
fn im2col(fine: &[f64], g: Geom, cols: &mut [f64]) {
    cols.iter_mut().for_each(|v| *v = 0.0);
    let n = g.cols();
    let stride = g.stride;
    g.for_each_run(|row, cstart, fstart, len| {
        let dst = &mut cols[row * n + cstart..row * n + cstart + len];
        if stride == 1 {
            dst.copy_from_slice(&fine[fstart..fstart + len]);
        } else {
            for (i, d) in dst.iter_mut().enumerate() {
                *d = fine[fstart + i * stride];
            }
        }
    });
}

/// Adjoint of [`im2col`]: accumulates the matrix back onto fine planes.
fn col2im(cols: &[f64], g: Geom, fine: &mut [f64]) {
    let n = g.cols();
    let stride = g.stride;
    g.for_each_run(|row, cstart, fstart, len| {
        let src = &cols[row * n + cstart..row * n + cstart + len];
        if stride == 1 {
            for (f, c) in fine[fstart..fstart + len].iter_mut().zip(src) {
                *f += c;
            }
        } else {
            for (i, c) in src.iter().enumerate() {
                fine[fstart + i * stride] += c;
            }
        }
    });
}

/// `c = beta * c + op(a) * op(b)` for row-major matrices, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the assertion above keeps every strided access inside the
    // slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_bias(y: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in y.chunks_exact_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad(gb: &mut [f64], gy: &Tensor) {
    let (n, c, h, w) = gy.dims4();
    for b in 0..n {
        for (oc, g) in gb.iter_mut().enumerate().take(c) {
            *g += gy.data()[(b * c + oc) * h * w..(b * c + oc + 1) * h * w]
                .iter()
                .sum::<f64>();
        }
    }
}

fn sample(t: &Tensor, b: usize) -> &[f64] {
    let per = t.numel() / t.shape()[0];
    &t.data()[b * per..(b + 1) * per]
}

fn sample_mut(t: &mut Tensor, b: usize) -> &mut [f64] {
    let per = t.numel() / t.shape()[0];
    &mut t.data_mut()[b * per..(b + 1) * per]
}

fn he_uniform<R: Rng + ?Sized>(t: &mut Tensor, fan_in: f64, rng: &mut R) {
    let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

fn check_input(x: &Tensor, channels: usize, layer: &str) -> Result<()> {
    if x.shape().len() != 4 || x.shape()[1] != channels {
        return Err(Error::LayerShape {
            layer: layer.into(),
            reason: format!(
                "expected [batch, {channels}, h, w] input, got {:?}",
                x.shape()
            ),
        });
    }
    Ok(())
}

/// 2-D cross-correlation with square kernel, zero padding, and bias.
/// Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            cache: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        he_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }

    /// Output side for an input side, or `None` if the kernel does not fit.
    pub fn output_side(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn geom(&self, h: usize, w: usize, oh: usize, ow: usize) -> Geom {
        Geom {
            channels: self.in_channels,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            fine: (h, w),
            coarse: (oh, ow),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.in_channels, "conv2d")?;
        let (n, _, h, w) = x.dims4();
        let (oh, ow) = match (self.output_side(h), self.output_side(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::LayerShape {
                    layer: "conv2d".into(),
                    reason: format!("kernel {} does not fit input {h}x{w}", self.kernel),
                })
            }
        };
        let g = self.geom(h, w, oh, ow);
        let mut y = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        let mut cols = vec![0.0; g.rows() * g.cols()];
        for b in 0..n {
            im2col(sample(x, b), g, &mut cols);
            let out = sample_mut(&mut y, b);
            gemm(
                self.out_channels,
                g.rows(),
                g.cols(),
                self.weight.data(),
                false,
                &cols,
                false,
                0.0,
                out,
            );
            add_bias(out, self.bias.data(), oh * ow);
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or(Error::BackwardBeforeForward)?;
        let (n, _, h, w) = x.dims4();
        let (_, _, oh, ow) = gy.dims4();
        let g = self.geom(h, w, oh, ow);
        let mut gx = Tensor::zeros(x.shape());
        accumulate_bias_grad(self.bias.grad_mut(), gy);
        let cout = self.out_channels;
        let mut cols = vec![0.0; g.rows() * g.cols()];
        let mut gcols = vec![0.0; g.rows() * g.cols()];
        let (wts, gw) = self.weight.data_and_grad_mut();
        for b in 0..n {
            let gyb = sample(gy, b);
            im2col(sample(&x, b), g, &mut cols);
            gemm(cout, g.cols(), g.rows(), gyb, false, &cols, true, 1.0, gw);
            gemm(
                g.rows(),
                cout,
                g.cols(),
                wts,
                true,
                gyb,
                false,
                0.0,
                &mut gcols,
            );
            col2im(&gcols, g, sample_mut(&mut gx, b));
        }
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Transposed convolution (adjoint of [`Conv2d`] with the same geometry) plus
/// bias. Weight layout `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Self {
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            output_pad,
            weight: Tensor::zeros(&[in_channels, out_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            cache: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let taps_per_output =
            (self.kernel * self.kernel) as f64 / (self.stride * self.stride) as f64;
        let fan_in = self.in_channels as f64 * taps_per_output.max(1.0);
        he_uniform(&mut self.weight, fan_in, rng);
        self.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn output_side(&self, input: usize) -> Option<usize> {
        let full = (input.checked_sub(1)?) * self.stride + self.kernel + self.output_pad;
        full.checked_sub(2 * self.pad).filter(|&s| s > 0)
    }

    fn geom(&self, h: usize, w: usize, oh: usize, ow: usize) -> Geom {
        Geom {
            channels: self.out_channels,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            fine: (oh, ow),
            coarse: (h, w),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.in_channels, "conv_transpose2d")?;
        let (n, _, h, w) = x.dims4();
        let (oh, ow) = match (self.output_side(h), self.output_side(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::LayerShape {
                    layer: "conv_transpose2d".into(),
                    reason: format!("invalid geometry for input {h}x{w}"),
                })
            }
        };
        let g = self.geom(h, w, oh, ow);
        let mut y = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        let mut cols = vec![0.0; g.rows() * g.cols()];
        for b in 0..n {
            gemm(
                g.rows(),
                self.in_channels,
                g.cols(),
                self.weight.data(),
                true,
                sample(x, b),
                false,
                0.0,
                &mut cols,
            );
            let out = sample_mut(&mut y, b);
            col2im(&cols, g, out);
            add_bias(out, self.bias.data(), oh * ow);
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or(Error::BackwardBeforeForward)?;
        let (n, _, h, w) = x.dims4();
        let (_, _, oh, ow) = gy.dims4();
        let g = self.geom(h, w, oh, ow);
        let mut gx = Tensor::zeros(x.shape());
        accumulate_bias_grad(self.bias.grad_mut(), gy);
        let cin = self.in_channels;
        let mut gcols = vec![0.0; g.rows() * g.cols()];
        let (wts, gw) = self.weight.data_and_grad_mut();
        for b in 0..n {
            im2col(sample(gy, b), g, &mut gcols);
            let xb = sample(&x, b);
            gemm(cin, g.cols(), g.rows(), xb, false, &gcols, true, 1.0, gw);
            gemm(
                cin,
                g.rows(),
                g.cols(),
                wts,
                false,
                &gcols,
                false,
                0.0,
                sample_mut(&mut gx, b),
            );
        }
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct LeakyRelu {
    positive: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn forward(&mut self, mut x: Tensor) -> Tensor {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        for (v, &pos) in x.data_mut().iter_mut().zip(&mask) {
            if !pos {
                *v *= LEAKY_SLOPE;
            }
        }
        self.positive = Some(mask);
        x
    }

    pub fn backward(&mut self, mut gy: Tensor) -> Result<Tensor> {
        let mask = self.positive.take().ok_or(Error::BackwardBeforeForward)?;
        for (g, &pos) in gy.data_mut().iter_mut().zip(&mask) {
            if !pos {
                *g *= LEAKY_SLOPE;
            }
        }
        Ok(gy)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.positive = None;
    }
}
