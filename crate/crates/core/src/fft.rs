//! Discrete Fourier transforms on complex buffers.
//!
//! Conventions used throughout the crate:
//!
//! * forward transform is unnormalized, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`;
//! * inverse transform carries the full `1/N` (`1/N^2` in 2-D) factor;
//! * buffers are in transform-native order (DC at index 0).
//!
//! Under this convention a unit plane wave on an `n x n` grid transforms to a
//! DC bin equal to `n^2`, which is how the delta term of the weak-object model
//! is realized everywhere.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; every other length
//! goes through Bluestein's chirp-z reformulation on a padded radix-2 plan.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// A reusable 1-D transform plan for a fixed length.
#[derive(Debug, Clone)]
pub struct Fft1d {
    len: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

#[derive(Debug, Clone)]
struct Radix2 {
    len: usize,
    /// `exp(-2 pi i k / len)` for `k < len / 2`.
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Bluestein {
    len: usize,
    inner: Radix2,
    /// `exp(-i pi k^2 / len)` for `k < len`.
    chirp: Vec<Complex64>,
    /// Forward transform of the conjugate chirp, wrapped to the padded length.
    kernel_spectrum: Vec<Complex64>,
}

impl Radix2 {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -2.0 * PI * k as f64 / len as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        Radix2 {
            len,
            twiddles,
            bitrev,
        }
    }

    /// Unnormalized transform in place.
    fn process(&self, data: &mut [Complex64], dir: Direction) {
        let n = self.len;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let step = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if dir == Direction::Inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}

impl Bluestein {
    fn new(len: usize) -> Self {
        let padded = (2 * len - 1).next_power_of_two();
        let inner = Radix2::new(padded);
        let two_len = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|k| {
                // k^2 mod 2N keeps the argument small for large k.
                let k2 = ((k as u128 * k as u128) % two_len) as f64;
                let angle = -PI * k2 / len as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); padded];
        kernel[0] = chirp[0].conj();
        for k in 1..len {
            kernel[k] = chirp[k].conj();
            kernel[padded - k] = chirp[k].conj();
        }
        inner.process(&mut kernel, Direction::Forward);
        Bluestein {
            len,
            inner,
            chirp,
            kernel_spectrum: kernel,
        }
    }

    fn process(&self, data: &mut [Complex64], dir: Direction) {
        let n = self.len;
        let m = self.inner.len;
        let chirp = |k: usize| match dir {
            Direction::Forward => self.chirp[k],
            Direction::Inverse => self.chirp[k].conj(),
        };
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..n {
            work[k] = data[k] * chirp(k);
        }
        self.inner.process(&mut work, Direction::Forward);
        match dir {
            Direction::Forward => {
                for (w, h) in work.iter_mut().zip(&self.kernel_spectrum) {
                    *w *= h;
                }
            }
            Direction::Inverse => {
                // The inverse needs the conjugate kernel; its spectrum is the
                // index-reversed conjugate of the forward kernel spectrum.
                let spectrum = &self.kernel_spectrum;
                for (i, w) in work.iter_mut().enumerate() {
                    *w *= spectrum[(m - i) % m].conj();
                }
            }
        }
        self.inner.process(&mut work, Direction::Inverse);
        let scale = 1.0 / m as f64;
        for k in 0..n {
            data[k] = work[k] * scale * chirp(k);
        }
    }
}

impl Fft1d {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "transform length must be positive");
        let kind = if len.is_power_of_two() {
            PlanKind::Radix2(Radix2::new(len))
        } else {
            PlanKind::Bluestein(Bluestein::new(len))
        };
        Fft1d { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized transform in place. `data.len()` must equal the plan length.
    pub fn process(&self, data: &mut [Complex64], dir: Direction) {
        assert_eq!(data.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Radix2(p) => p.process(data, dir),
            PlanKind::Bluestein(p) => p.process(data, dir),
        }
    }
}

/// Square 2-D transform plan, row-major `n x n` buffers.
#[derive(Debug, Clone)]
pub struct Fft2d {
    n: usize,
    plan: Fft1d,
}

impl Fft2d {
    pub fn new(n: usize) -> Self {
        Fft2d {
            n,
            plan: Fft1d::new(n),
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, Direction::Forward);
    }

    /// Inverse transform in place, including the `1/n^2` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, Direction::Inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], dir: Direction) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "buffer is not n x n");
        for row in data.chunks_exact_mut(n) {
            self.plan.process(row, dir);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                column[r] = data[r * n + c];
            }
            self.plan.process(&mut column, dir);
            for r in 0..n {
                data[r * n + c] = column[r];
            }
        }
    }

    /// Forward transform of a real buffer.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }
}

/// Signed frequency index of transform-native bin `k` on a length-`n` axis.
#[inline]
pub fn signed_index(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn naive_dft(x: &[Complex64], dir: Direction) -> Vec<Complex64> {
        let n = x.len();
        let sign = if dir == Direction::Forward { -1.0 } else { 1.0 };
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .fold(Complex64::new(0.0, 0.0), |acc, (j, &v)| {
                        let angle = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                        acc + v * Complex64::new(angle.cos(), angle.sin())
                    })
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                Complex64::new(
                    (0.37 * t).sin() + 0.1 * t,
                    (1.3 * t).cos() - 0.05 * t * t / n as f64,
                )
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_many_lengths() {
        for n in [1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 17, 30, 32, 64, 100] {
            let x = signal(n);
            for dir in [Direction::Forward, Direction::Inverse] {
                let mut y = x.clone();
                Fft1d::new(n).process(&mut y, dir);
                let want = naive_dft(&x, dir);
                for (a, b) in y.iter().zip(&want) {
                    assert!((a - b).norm() < 1e-9 * n as f64, "n={n} {dir:?}");
                }
            }
        }
    }

    #[test]
    fn agrees_with_rustfft() {
        let mut planner = FftPlanner::<f64>::new();
        for n in [64, 96, 256] {
            let x = signal(n);
            let mut ours = x.clone();
            Fft1d::new(n).process(&mut ours, Direction::Forward);
            let mut theirs = x.clone();
            planner.plan_fft_forward(n).process(&mut theirs);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn roundtrip_2d_and_dc_convention() {
        for n in [8, 10, 32] {
            let plan = Fft2d::new(n);
            let ones = vec![1.0; n * n];
            let spec = plan.forward_real(&ones);
            assert!((spec[0].re - (n * n) as f64).abs() < 1e-9);
            assert!(spec[1..].iter().all(|c| c.norm() < 1e-9));

            let x: Vec<f64> = (0..n * n)
                .map(|i| ((i * 7919) % 31) as f64 / 31.0)
                .collect();
            let back = plan.inverse_real(plan.forward_real(&x));
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn signed_index_layout() {
        let idx: Vec<isize> = (0..8).map(|k| signed_index(k, 8)).collect();
        assert_eq!(idx, [0, 1, 2, 3, -4, -3, -2, -1]);
        let idx: Vec<isize> = (0..5).map(|k| signed_index(k, 5)).collect();
        assert_eq!(idx, [0, 1, 2, -2, -1]);
    }
}
