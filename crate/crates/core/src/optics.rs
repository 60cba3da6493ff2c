//! Lensless phase-imaging physics: Fresnel propagation of a phase-only object,
//! its weak-object linearization, and the weak object transfer function (WOTF).
//!
//! Propagation is done in transfer-function form on a periodic grid with
//! `H(u, v) = exp(-i pi lambda z (u^2 + v^2))`, normalized so `H(0, 0) = 1` and a
//! unit plane wave maps to unit intensity. With the unnormalized forward FFT
//! (see [`crate::fft`]) the weak-object model reads
//!
//! ```text
//! G(u, v) = n^2 delta(u, v) + 2 sin(pi lambda z (u^2 + v^2)) F(u, v)
//! ```
//!
//! i.e. the delta term is the DC bin carrying `n^2`.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::fft::{signed_index, Fft2d};
use crate::grid::{Grid, IntensityMap, PhaseMap, TransferGrid};
use crate::{Error, Result};

/// Wavelength, defocus distance, pixel pitch, and grid side of the simulated
/// lensless imager. Lengths are in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct OpticalConfig {
    pub wavelength: f64,
    pub defocus: f64,
    pub pixel_pitch: f64,
    pub grid_n: usize,
}

impl Default for OpticalConfig {
    /// Desk scale: [`paper_scale`](Self::paper_scale) shrunk to a 32 x 32
    /// grid (12.5 mm defocus).
    fn default() -> Self {
        Self::paper_scale().rescaled_to_grid(32)
    }
}

impl OpticalConfig {
    /// 256 x 256 grid, 20 um pixels, 633 nm illumination, 100 mm defocus.
    pub fn paper_scale() -> Self {
        OpticalConfig {
            wavelength: 633e-9,
            defocus: 0.1,
            pixel_pitch: 20e-6,
            grid_n: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("wavelength", self.wavelength),
            ("defocus", self.defocus),
            ("pixel_pitch", self.pixel_pitch),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, "must be finite and strictly positive"));
            }
        }
        if self.grid_n < 8 || !self.grid_n.is_multiple_of(2) {
            return Err(Error::config("grid_n", "must be even and at least 8"));
        }
        Ok(())
    }

    /// `lambda z / (pitch^2 n)`: the chirp of the transfer function advances by
    /// this many half-cycles per frequency sample at the Nyquist edge. Values
    /// above ~1 mean the WOTF is undersampled near the edge of the band.
    pub fn sampling_ratio(&self) -> f64 {
        self.wavelength * self.defocus / (self.pixel_pitch * self.pixel_pitch * self.grid_n as f64)
    }

    /// Same physics on a different grid side, with the defocus scaled so the
    /// [`sampling_ratio`](Self::sampling_ratio) is preserved.
    pub fn rescaled_to_grid(&self, grid_n: usize) -> Self {
        OpticalConfig {
            defocus: self.defocus * grid_n as f64 / self.grid_n as f64,
            grid_n,
            ..*self
        }
    }

    /// Frequency sample spacing `1 / (n * pitch)` in cycles/m.
    pub fn frequency_spacing(&self) -> f64 {
        1.0 / (self.grid_n as f64 * self.pixel_pitch)
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.pixel_pitch
    }

    /// `lambda z rho^2` for radial frequency squared `rho^2`.
    #[inline]
    pub fn fresnel_argument(&self, rho2: f64) -> f64 {
        self.wavelength * self.defocus * rho2
    }

    /// Radius (cycles/m) of the `k`-th WOTF null, `sqrt(k / (lambda z))`.
    pub fn null_frequency(&self, k: u32) -> f64 {
        (k as f64 / (self.wavelength * self.defocus)).sqrt()
    }

    /// Theoretical WOTF value at `(u, v)`.
    #[inline]
    pub fn wotf_at(&self, u: f64, v: f64) -> f64 {
        (PI * self.fresnel_argument(u * u + v * v)).sin()
    }

    /// `u^2 + v^2` for every transform-native bin.
    fn native_rho2(&self) -> Vec<f64> {
        let n = self.grid_n;
        let du = self.frequency_spacing();
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            let v = signed_index(r, n) as f64 * du;
            for c in 0..n {
                let u = signed_index(c, n) as f64 * du;
                out.push(u * u + v * v);
            }
        }
        out
    }

    fn native_fresnel(&self) -> Vec<Complex64> {
        self.native_rho2()
            .into_iter()
            .map(|rho2| Complex64::from_polar(1.0, -PI * self.fresnel_argument(rho2)))
            .collect()
    }

    fn native_wotf(&self) -> Vec<f64> {
        self.native_rho2()
            .into_iter()
            .map(|rho2| (PI * self.fresnel_argument(rho2)).sin())
            .collect()
    }
}

/// DC-centered `(u, v)` coordinate grids.
pub fn frequency_grid(config: &OpticalConfig) -> (TransferGrid<f64>, TransferGrid<f64>) {
    let (n, du) = (config.grid_n, config.frequency_spacing());
    (
        TransferGrid::from_fn(n, du, |u, _| u),
        TransferGrid::from_fn(n, du, |_, v| v),
    )
}

/// Free-space transfer function `exp(-i pi lambda z (u^2 + v^2))`, DC-centered.
pub fn fresnel_transfer(config: &OpticalConfig) -> TransferGrid<Complex64> {
    TransferGrid::from_fn(config.grid_n, config.frequency_spacing(), |u, v| {
        Complex64::from_polar(1.0, -PI * config.fresnel_argument(u * u + v * v))
    })
}

/// Weak object transfer function `sin(pi lambda z (u^2 + v^2))`, DC-centered.
pub fn wotf(config: &OpticalConfig) -> TransferGrid<f64> {
    TransferGrid::from_fn(config.grid_n, config.frequency_spacing(), |u, v| {
        config.wotf_at(u, v)
    })
}

/// Exact detector intensity `|IFFT(FFT(exp(i f)) H)|^2` of a phase object.
pub fn propagate(phase: &PhaseMap, config: &OpticalConfig) -> Result<IntensityMap> {
    let n = config.grid_n;
    phase.grid().expect_square(n)?;
    let plan = Fft2d::new(n);
    let mut field: Vec<Complex64> = phase
        .grid()
        .as_slice()
        .iter()
        .map(|&f| Complex64::from_polar(1.0, f))
        .collect();
    plan.forward(&mut field);
    for (e, h) in field.iter_mut().zip(config.native_fresnel()) {
        *e *= h;
    }
    plan.inverse(&mut field);
    let intensity = field.iter().map(|e| e.norm_sqr()).collect();
    Ok(IntensityMap(Grid::from_vec(n, n, intensity)?))
}

/// Weak-object intensity: `IFFT(n^2 delta + 2 W F)`.
pub fn linearized_forward(phase: &PhaseMap, config: &OpticalConfig) -> Result<IntensityMap> {
    let n = config.grid_n;
    phase.grid().expect_square(n)?;
    let plan = Fft2d::new(n);
    let mut spectrum = plan.forward_real(phase.grid().as_slice());
    for (s, w) in spectrum.iter_mut().zip(config.native_wotf()) {
        *s *= 2.0 * w;
    }
    spectrum[0] += (n * n) as f64;
    let values = plan.inverse_real(spectrum);
    // Linearized intensity can dip below zero for strong objects; it is a model
    // output, not a physical measurement, so it is not clamped.
    Ok(IntensityMap(Grid::from_vec(n, n, values)?))
}

/// `||propagate - linearized_forward|| / ||propagate||` for one phase map.
pub fn linearization_residual(phase: &PhaseMap, config: &OpticalConfig) -> Result<f64> {
    let exact = propagate(phase, config)?;
    let approx = linearized_forward(phase, config)?;
    Ok(approx.grid().relative_l2_error(exact.grid()))
}

/// Applies the Fresnel transfer to an arbitrary complex field (native layout in
/// and out). Exposed for unitarity checks.
pub fn propagate_field(field: &mut [Complex64], config: &OpticalConfig) -> Result<()> {
    let n = config.grid_n;
    if field.len() != n * n {
        return Err(Error::GridMismatch {
            expected: n,
            rows: field.len() / n.max(1),
            cols: n,
        });
    }
    let plan = Fft2d::new(n);
    plan.forward(field);
    for (e, h) in field.iter_mut().zip(config.native_fresnel()) {
        *e *= h;
    }
    plan.inverse(field);
    Ok(())
}

/// Native-layout WOTF, shared with reconstruction and diagnostics.
pub(crate) fn native_wotf(config: &OpticalConfig) -> Vec<f64> {
    config.native_wotf()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, z: f64) -> OpticalConfig {
        OpticalConfig {
            wavelength: 633e-9,
            defocus: z,
            pixel_pitch: 20e-6,
            grid_n: n,
        }
    }

    #[test]
    fn frequency_axes() {
        let c = cfg(8, 0.1);
        let (u, v) = frequency_grid(&c);
        assert!((c.frequency_spacing() - 6250.0).abs() < 1e-9);
        assert_eq!(u.at(4, 4), 0.0);
        assert_eq!(v.at(4, 4), 0.0);
        assert!((u.at(0, 0).abs() - 25_000.0).abs() < 1e-9);
        assert!((u.at(0, 5) - 6250.0).abs() < 1e-9);
        assert!((v.at(5, 0) - 6250.0).abs() < 1e-9);
    }

    #[test]
    fn fresnel_special_values() {
        let c = cfg(8, 0.1);
        let h = fresnel_transfer(&c);
        assert_eq!(h.at(4, 4), Complex64::new(1.0, 0.0));
        assert!(h.values().iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        // lambda z rho^2 = 1 gives -1; = 0.5 gives -i.
        let unit = |arg: f64| Complex64::from_polar(1.0, -PI * arg);
        assert!((unit(1.0) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert!((unit(0.5) - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn wotf_special_values() {
        // Pick z so that lambda z du^2 = 0.5: the first off-axis sample sits on
        // the WOTF peak and (1,1) sits on the first null.
        let mut c = cfg(16, 1.0);
        let du = c.frequency_spacing();
        c.defocus = 0.5 / (c.wavelength * du * du);
        let w = wotf(&c);
        let ctr = w.center();
        assert_eq!(w.at(ctr, ctr), 0.0);
        assert!((w.at(ctr, ctr + 1) - 1.0).abs() < 1e-12);
        assert!(w.at(ctr + 1, ctr + 1).abs() < 1e-12);
    }

    #[test]
    fn zero_phase_is_plane_wave() {
        let c = cfg(16, 0.1);
        let g = propagate(&PhaseMap::zeros(16), &c).unwrap();
        assert!(g.grid().as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let g = linearized_forward(&PhaseMap::zeros(16), &c).unwrap();
        assert!(g.grid().as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn in_focus_phase_object_is_invisible() {
        let c = cfg(16, 1e-30);
        let phase = PhaseMap(Grid::from_fn(16, 16, |r, col| {
            ((r * 5 + col * 3) % 7) as f64 * 0.2
        }));
        let g = propagate(&phase, &c).unwrap();
        assert!(g.grid().as_slice().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let c = cfg(16, 0.1);
        let err = propagate(&PhaseMap::zeros(8), &c).unwrap_err();
        assert!(matches!(err, Error::GridMismatch { expected: 16, .. }));
        assert!(linearized_forward(&PhaseMap::zeros(8), &c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OpticalConfig::default().validate().is_ok());
        assert!(cfg(10, 0.1).validate().is_ok());
        assert!(cfg(7, 0.1).validate().is_err());
        assert!(cfg(6, 0.1).validate().is_err());
        assert!(cfg(16, 0.0).validate().is_err());
        assert!(cfg(16, f64::NAN).validate().is_err());
    }

    #[test]
    fn rescaling_preserves_sampling_ratio() {
        let paper = OpticalConfig::paper_scale();
        let desk = paper.rescaled_to_grid(32);
        assert!((paper.sampling_ratio() - desk.sampling_ratio()).abs() < 1e-12);
        assert!((desk.defocus - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn propagate_field_preserves_power() {
        let c = cfg(16, 0.1);
        let mut field: Vec<Complex64> = (0..256)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let before: f64 = field.iter().map(|z| z.norm_sqr()).sum();
        propagate_field(&mut field, &c).unwrap();
        let after: f64 = field.iter().map(|z| z.norm_sqr()).sum();
        assert!(((after - before) / before).abs() < 1e-10);
        assert!(propagate_field(&mut [Complex64::new(0.0, 0.0); 10], &c).is_err());
    }
}
