//! Learned-WOTF extraction and the star-pattern null test.
//!
//! The learned transfer function of a reconstructor is the per-frequency
//! average of `(G - n^2 delta) / F_hat` over a set of measurements, with the
//! same DC convention as [`crate::optics`]. For an ideal reconstructor on
//! weak-object data it equals `2 sin(pi lambda z (u^2 + v^2))`.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write as _;

use num_complex::Complex64;

use crate::fft::Fft2d;
use crate::grid::{Grid, IntensityMap, PhaseMap, TransferGrid};
use crate::optics::OpticalConfig;
use crate::recon::Reconstruct;
use crate::{Error, Result};

/// Default mask: a frequency is used for an image when `|F_hat|` exceeds this
/// fraction of the RMS spectral magnitude of that image's estimate.
pub const DEFAULT_MASK_THRESHOLD: f64 = 1e-6;

/// Default clip range for profiles.
pub const PROFILE_CLIP: (f64, f64) = (-3.0, 3.0);

/// Averaged transfer ratio on the centered frequency grid. Invalid samples
/// hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct LwotfResult {
    pub grid: TransferGrid<f64>,
    /// Number of images that contributed at each centered sample.
    pub counts: Vec<usize>,
    pub n_images: usize,
}

impl LwotfResult {
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.counts[row * self.grid.side() + col] > 0
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0).collect()
    }
}

/// LWOTF from measurements and matching phase estimates.
pub fn lwotf_from_estimates(
    measurements: &[IntensityMap],
    estimates: &[PhaseMap],
    optics: &OpticalConfig,
    mask_threshold: f64,
) -> Result<LwotfResult> {
    if measurements.is_empty() {
        return Err(Error::Empty("no measurements for LWOTF"));
    }
    if measurements.len() != estimates.len() {
        return Err(Error::ShapeMismatch {
            context: "lwotf estimates",
            expected: vec![measurements.len()],
            found: vec![estimates.len()],
        });
    }
    if !(mask_threshold >= 0.0) {
        return Err(Error::config("mask_threshold", "must be non-negative"));
    }
    let n = optics.grid_n;
    let plan = Fft2d::new(n);
    let mut sum = vec![Complex64::new(0.0, 0.0); n * n];
    let mut counts = vec![0usize; n * n];
    for (g, f) in measurements.iter().zip(estimates) {
        g.grid().expect_square(n)?;
        f.grid().expect_square(n)?;
        let mut gs = plan.forward_real(g.grid().as_slice());
        gs[0] -= (n * n) as f64;
        let fs = plan.forward_real(f.grid().as_slice());
        let rms = (fs.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n) as f64).sqrt();
        let floor = mask_threshold * rms;
        for k in 1..n * n {
            let mag = fs[k].norm();
            if mag > floor && mag > 0.0 {
                sum[k] += gs[k] / fs[k];
                counts[k] += 1;
            }
        }
    }
    let native: Vec<f64> = sum
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s.re / c as f64 } else { f64::NAN })
        .collect();
    let spacing = optics.frequency_spacing();
    Ok(LwotfResult {
        grid: TransferGrid::from_native(n, spacing, &native),
        counts: TransferGrid::from_native(n, spacing, &counts)
            .values()
            .to_vec(),
        n_images: measurements.len(),
    })
}

/// LWOTF of a reconstructor over a set of measurements.
pub fn extract_lwotf(
    recon: &mut dyn Reconstruct,
    measurements: &[IntensityMap],
    optics: &OpticalConfig,
    mask_threshold: f64,
) -> Result<LwotfResult> {
    let estimates = measurements
        .iter()
        .map(|g| recon.reconstruct(g))
        .collect::<Result<Vec<_>>>()?;
    lwotf_from_estimates(measurements, &estimates, optics, mask_threshold)
}

/// The ideal transfer ratio `2 sin(pi lambda z (u^2 + v^2))`, centered.
pub fn theoretical_ratio(optics: &OpticalConfig) -> TransferGrid<f64> {
    TransferGrid::from_fn(optics.grid_n, optics.frequency_spacing(), |u, v| {
        2.0 * optics.wotf_at(u, v)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProfilePoint {
    /// Signed radial frequency along the diagonal (cycles/m).
    pub freq_per_m: f64,
    pub value: f64,
}

/// Cuts through DC along both diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalProfiles {
    /// Top-left to bottom-right.
    pub main: Vec<ProfilePoint>,
    /// Bottom-left to top-right.
    pub anti: Vec<ProfilePoint>,
}

/// Samples both diagonals of a centered grid, clipping values to `clip` and
/// skipping `NaN` samples.
pub fn diagonal_profile(grid: &TransferGrid<f64>, clip: (f64, f64)) -> DiagonalProfiles {
    let n = grid.side();
    let c = grid.center() as isize;
    let point = |row: usize, col: usize| {
        let (u, v) = grid.frequency(row, col);
        let signed = if u < 0.0 { -1.0 } else { 1.0 } * (u * u + v * v).sqrt();
        (signed, grid.at(row, col))
    };
    let collect = |anti: bool| {
        (0..n)
            .filter_map(|i| {
                let row = if anti {
                    (2 * c - i as isize).rem_euclid(n as isize) as usize
                } else {
                    i
                };
                let (f, v) = point(row, i);
                (!v.is_nan()).then(|| ProfilePoint {
                    freq_per_m: f,
                    value: v.clamp(clip.0, clip.1),
                })
            })
            .collect::<Vec<_>>()
    };
    let mut main = collect(false);
    let mut anti = collect(true);
    main.sort_by(|a, b| a.freq_per_m.total_cmp(&b.freq_per_m));
    anti.sort_by(|a, b| a.freq_per_m.total_cmp(&b.freq_per_m));
    DiagonalProfiles { main, anti }
}

pub const PROFILE_CSV_HEADER: &str = "freq_per_m,value";

pub fn profile_csv(points: &[ProfilePoint]) -> String {
    let mut out = String::from(PROFILE_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(out, "{:.16e},{:.16e}", p.freq_per_m, p.value);
    }
    out
}

/// RMS difference from `2 sin(...)` over valid samples with radial frequency
/// in `[band.0, band.1]` (cycles/m), DC excluded.
pub fn lwotf_fidelity(
    lwotf: &LwotfResult,
    optics: &OpticalConfig,
    band: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = band;
    if !(lo >= 0.0 && hi > lo && hi <= optics.nyquist() * core::f64::consts::SQRT_2) {
        return Err(Error::config(
            "band",
            "must satisfy 0 <= lo < hi <= sqrt(2) * Nyquist",
        ));
    }
    let g = &lwotf.grid;
    let n = g.side();
    let (mut acc, mut count) = (0.0, 0usize);
    for r in 0..n {
        for c in 0..n {
            if (r, c) == (g.center(), g.center()) || !lwotf.is_valid(r, c) {
                continue;
            }
            let (u, v) = g.frequency(r, c);
            let rho = (u * u + v * v).sqrt();
            if rho < lo || rho > hi {
                continue;
            }
            let d = g.at(r, c) - 2.0 * optics.wotf_at(u, v);
            acc += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyValidBand { lo, hi });
    }
    Ok((acc / count as f64).sqrt())
}

/// Azimuthal profile of a star.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StarProfile {
    /// `(1 + cos(P theta)) / 2`
    Sinusoidal,
    /// `1` where `cos(P theta) >= 0`, else `0`.
    Binary,
}

/// Radial grating `depth * s(P theta)` confined to an annulus with raised
/// cosine edges. Radii are in pixels from the grid center `(n/2, n/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StarPattern {
    pub periods: u32,
    pub profile: StarProfile,
    pub depth: f64,
    /// Inner edge; `None` uses the smallest radius where the azimuthal fringe
    /// period is still 2.5 pixels.
    pub inner_radius: Option<f64>,
    /// Outer edge; `None` uses `n/2 - taper - 2`.
    pub outer_radius: Option<f64>,
    /// Width of the raised-cosine edges.
    pub taper: f64,
}

impl StarPattern {
    pub fn new(periods: u32, profile: StarProfile, depth: f64) -> Self {
        StarPattern {
            periods,
            profile,
            depth,
            inner_radius: None,
            outer_radius: None,
            taper: 4.0,
        }
    }

    /// Smallest radius with an azimuthal fringe period of at least 2.5 px.
    pub fn min_resolvable_radius(&self) -> f64 {
        2.5 * self.periods as f64 / (2.0 * PI)
    }

    /// `(inner, outer)` edges of the full-depth region on an `n`-grid.
    pub fn annulus(&self, n: usize) -> Result<(f64, f64)> {
        if self.periods < 4 {
            return Err(Error::config("periods", "must be at least 4"));
        }
        if !(self.depth > 0.0 && self.depth <= 0.1 * PI + 1e-12) {
            return Err(Error::config("depth", "must lie in (0, 0.1 pi]"));
        }
        if !(self.taper >= 0.0 && self.taper.is_finite()) {
            return Err(Error::config("taper", "must be finite and non-negative"));
        }
        let floor = self.min_resolvable_radius();
        let inner = self.inner_radius.unwrap_or(floor + self.taper);
        let outer = self
            .outer_radius
            .unwrap_or(n as f64 / 2.0 - self.taper - 2.0);
        let aliasing = |reason: String| Error::StarAliasing {
            periods: self.periods,
            reason,
        };
        if inner - self.taper < floor - 1e-9 {
            return Err(aliasing(format!(
                "inner edge {:.2} px minus taper is below the 2.5 px fringe limit at {floor:.2} px",
                inner
            )));
        }
        if outer <= inner {
            return Err(aliasing(format!(
                "no room for the star: resolvable region starts at {inner:.2} px, grid allows up to {outer:.2} px"
            )));
        }
        Ok((inner, outer))
    }

    fn envelope(&self, r: f64, inner: f64, outer: f64) -> f64 {
        let ramp = |t: f64| 0.5 - 0.5 * (PI * t.clamp(0.0, 1.0)).cos();
        let t = self.taper.max(1e-12);
        let rise = if r >= inner {
            1.0
        } else {
            ramp((r - (inner - t)) / t)
        };
        let fall = if r <= outer {
            1.0
        } else {
            ramp(((outer + t) - r) / t)
        };
        rise * fall
    }
}

/// Rasterizes a star on the optics grid.
pub fn make_star(star: &StarPattern, optics: &OpticalConfig) -> Result<PhaseMap> {
    let n = optics.grid_n;
    let (inner, outer) = star.annulus(n)?;
    let c = (n / 2) as f64;
    let p = star.periods as f64;
    let grid = Grid::from_fn(n, n, |row, col| {
        let (y, x) = (row as f64 - c, col as f64 - c);
        let r = (x * x + y * y).sqrt();
        let env = star.envelope(r, inner, outer);
        if env == 0.0 {
            return 0.0;
        }
        let phase = p * y.atan2(x);
        let s = match star.profile {
            StarProfile::Sinusoidal => 0.5 * (1.0 + phase.cos()),
            StarProfile::Binary => {
                if phase.cos() >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        star.depth * env * s
    });
    PhaseMap::new(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NullRadius {
    pub k: u32,
    pub radius_m: f64,
}

/// `r_k = (P / 2 pi) sqrt(lambda z / k)` for `k = 1..=k_max`, keeping only
/// radii inside the grid (below half its width).
pub fn predict_null_radii(optics: &OpticalConfig, periods: u32, k_max: u32) -> Vec<NullRadius> {
    let half_width = optics.grid_n as f64 / 2.0 * optics.pixel_pitch;
    (1..=k_max)
        .map(|k| NullRadius {
            k,
            radius_m: periods as f64 / (2.0 * PI)
                * (optics.wavelength * optics.defocus / k as f64).sqrt(),
        })
        .filter(|r| r.radius_m < half_width)
        .collect()
}

pub const RADII_CSV_HEADER: &str = "k,radius_m";

pub fn radii_csv(radii: &[NullRadius]) -> String {
    let mut out = String::from(RADII_CSV_HEADER);
    out.push('\n');
    for r in radii {
        let _ = writeln!(out, "{},{:.16e}", r.k, r.radius_m);
    }
    out
}

/// Settings of the fringe-flip detector. Radii in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct DetectConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub radial_step: f64,
    /// Sign changes count only after the signal crosses this fraction of its
    /// peak magnitude on the other side.
    pub hysteresis: f64,
    /// Below this peak fringe amplitude the measurement is considered flat.
    pub min_contrast: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            r_min: 0.0,
            r_max: f64::INFINITY,
            radial_step: 0.25,
            hysteresis: 0.05,
            min_contrast: 1e-9,
        }
    }
}

impl DetectConfig {
    /// Detector restricted to the full-depth annulus of `star`.
    pub fn for_star(star: &StarPattern, n: usize) -> Result<Self> {
        let (inner, outer) = star.annulus(n)?;
        Ok(DetectConfig {
            r_min: inner,
            r_max: outer,
            ..Default::default()
        })
    }
}

/// Signed fringe amplitude per radius: the measurement is correlated with
/// `cos(P theta)` and `sin(P theta)` around each circle and the resulting
/// `(c, s)` track is projected on its principal axis.
pub fn fringe_amplitude(g: &Grid, periods: u32, cfg: &DetectConfig) -> Result<Vec<(f64, f64)>> {
    let n = g.rows();
    g.expect_square(n)?;
    if !(cfg.radial_step > 0.0) {
        return Err(Error::config("radial_step", "must be positive"));
    }
    let ctr = (n / 2) as f64;
    let r_hi = cfg.r_max.min(ctr - 1.0);
    let p = periods as f64;
    let mut track: Vec<(f64, f64, f64)> = Vec::new();
    let mut r = cfg.r_min.max(cfg.radial_step);
    while r <= r_hi {
        let m = ((4.0 * PI * r).ceil() as usize).max(8 * periods as usize);
        let (mut cs, mut sn) = (0.0, 0.0);
        for j in 0..m {
            let th = 2.0 * PI * j as f64 / m as f64;
            let v = g
                .bilinear(ctr + r * th.sin(), ctr + r * th.cos())
                .unwrap_or(0.0);
            cs += v * (p * th).cos();
            sn += v * (p * th).sin();
        }
        track.push((r, 2.0 * cs / m as f64, 2.0 * sn / m as f64));
        r += cfg.radial_step;
    }
    if track.is_empty() {
        return Err(Error::config("r_min", "empty radial range"));
    }
    let (mut cc, mut cs2, mut ss) = (0.0, 0.0, 0.0);
    for &(_, c, s) in &track {
        cc += c * c;
        cs2 += c * s;
        ss += s * s;
    }
    let angle = 0.5 * (2.0 * cs2).atan2(cc - ss);
    let (ax, ay) = (angle.cos(), angle.sin());
    Ok(track
        .into_iter()
        .map(|(r, c, s)| (r, c * ax + s * ay))
        .collect())
}

/// Radii (metres, descending) where the azimuthal fringe pattern of a star
/// measurement flips sign.
pub fn detect_discontinuities(
    g: &IntensityMap,
    periods: u32,
    optics: &OpticalConfig,
    cfg: &DetectConfig,
) -> Result<Vec<f64>> {
    g.grid().expect_square(optics.grid_n)?;
    detect_sign_flips(g.grid(), periods, optics.pixel_pitch, cfg)
}

/// Sign flips of the azimuthal `P`-fold component of any star-centered grid
/// (a measurement or a reconstruction), as radii in metres, descending.
pub fn detect_sign_flips(
    g: &Grid,
    periods: u32,
    pixel_pitch: f64,
    cfg: &DetectConfig,
) -> Result<Vec<f64>> {
    let amp = fringe_amplitude(g, periods, cfg)?;
    let peak = amp.iter().fold(0.0f64, |m, &(_, a)| m.max(a.abs()));
    if !(peak > cfg.min_contrast) {
        return Err(Error::NoFringeContrast);
    }
    let h = cfg.hysteresis * peak;
    let mut radii = Vec::new();
    // Index of the last sample at or beyond +h (state +1) or -h (state -1).
    let mut state = 0i8;
    let mut anchor = 0usize;
    for (i, &(_, a)) in amp.iter().enumerate() {
        let now = if a >= h {
            1
        } else if a <= -h {
            -1
        } else {
            0
        };
        if now == 0 {
            continue;
        }
        if state != 0 && now != state {
            // Last sign change between the anchor and here.
            let mut cross = None;
            for t in (anchor..i).rev() {
                let (a0, a1) = (amp[t].1, amp[t + 1].1);
                if (a0 >= 0.0) != (a1 >= 0.0) {
                    let (r0, r1) = (amp[t].0, amp[t + 1].0);
                    cross = Some(r0 + (r1 - r0) * a0 / (a0 - a1));
                    break;
                }
            }
            if let Some(rc) = cross {
                radii.push(rc * pixel_pitch);
            }
        }
        state = now;
        anchor = i;
    }
    radii.sort_by(|a, b| b.total_cmp(a));
    Ok(radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{linearized_forward, propagate};
    use crate::rng::{seeded, standard_normal};
    use core::f64::consts::SQRT_2;

    fn random_phase(n: usize, seed: u64, max: f64) -> PhaseMap {
        let mut rng = seeded(seed);
        let g = Grid::from_fn(n, n, |_, _| standard_normal(&mut rng));
        let (lo, hi) = g.min_max();
        PhaseMap(g.map(|v| (v - lo) / (hi - lo) * max))
    }

    #[test]
    fn exact_estimates_on_linearized_data_give_twice_the_wotf() {
        let optics = OpticalConfig::default();
        let phases: Vec<PhaseMap> = (0..3).map(|s| random_phase(32, s, 0.1 * PI)).collect();
        let meas: Vec<IntensityMap> = phases
            .iter()
            .map(|f| linearized_forward(f, &optics).unwrap())
            .collect();
        let l = lwotf_from_estimates(&meas, &phases, &optics, DEFAULT_MASK_THRESHOLD).unwrap();
        let theory = theoretical_ratio(&optics);
        let rmse = lwotf_fidelity(
            &l,
            &optics,
            (0.0, optics.nyquist() * core::f64::consts::SQRT_2),
        )
        .unwrap();
        assert!(rmse < 1e-10, "{rmse:e}");
        let c = l.grid.center();
        assert!(!l.is_valid(c, c));
        assert!((l.grid.at(c, c + 3) - theory.at(c, c + 3)).abs() < 1e-10);
    }

    #[test]
    fn single_image_is_the_raw_ratio() {
        let optics = OpticalConfig::default();
        let f = random_phase(32, 7, 0.3);
        let est = PhaseMap(f.grid().map(|v| 0.8 * v + 0.01));
        let g = propagate(&f, &optics).unwrap();
        let l = lwotf_from_estimates(
            core::slice::from_ref(&g),
            core::slice::from_ref(&est),
            &optics,
            0.0,
        )
        .unwrap();
        let plan = Fft2d::new(32);
        let mut gs = plan.forward_real(g.grid().as_slice());
        gs[0] -= 1024.0;
        let fs = plan.forward_real(est.grid().as_slice());
        let want = (gs[5 * 32 + 2] / fs[5 * 32 + 2]).re;
        assert!((l.grid.at(16 + 5, 16 + 2) - want).abs() < 1e-12);
    }

    #[test]
    fn zero_estimate_leaves_an_empty_band() {
        let optics = OpticalConfig::default();
        let g = propagate(&random_phase(32, 1, 0.3), &optics).unwrap();
        let l = lwotf_from_estimates(
            &[g],
            &[PhaseMap::zeros(32)],
            &optics,
            DEFAULT_MASK_THRESHOLD,
        )
        .unwrap();
        assert!(l.counts.iter().all(|&c| c == 0));
        assert!(matches!(
            lwotf_fidelity(&l, &optics, (0.0, optics.nyquist())),
            Err(Error::EmptyValidBand { .. })
        ));
    }

    #[test]
    fn profile_of_theory() {
        let mut optics = OpticalConfig {
            grid_n: 32,
            ..OpticalConfig::default()
        };
        // Put lambda z (u^2 + v^2) = 1/2 at diagonal offset (3, 3).
        let du = optics.frequency_spacing();
        optics.defocus = 0.5 / (optics.wavelength * 18.0 * du * du);
        let theory = theoretical_ratio(&optics);
        let p = diagonal_profile(&theory, PROFILE_CLIP);
        assert_eq!(p.main.len(), 32);
        let dc = p.main.iter().find(|q| q.freq_per_m == 0.0).unwrap();
        assert_eq!(dc.value, 0.0);
        let peak = p.main.iter().fold(f64::MIN, |m, q| m.max(q.value));
        assert!((peak - 2.0).abs() < 1e-12);
        // Radial symmetry: both diagonals agree where both exist.
        for q in &p.main {
            if let Some(o) = p
                .anti
                .iter()
                .find(|o| (o.freq_per_m - q.freq_per_m).abs() < 1e-6)
            {
                assert!((o.value - q.value).abs() < 1e-12);
            }
        }
        let wild = theory.map(|v| v * 10.0);
        assert!(diagonal_profile(&wild, PROFILE_CLIP)
            .main
            .iter()
            .all(|q| q.value.abs() <= 3.0));
        assert!(profile_csv(&p.main).starts_with("freq_per_m,value\n"));
    }

    #[test]
    fn null_radii_reference_and_scaling() {
        let optics = OpticalConfig {
            defocus: 0.15,
            grid_n: 512,
            ..OpticalConfig::paper_scale()
        };
        let r = predict_null_radii(&optics, 50, 8);
        assert!((r[0].radius_m - 2.452e-3).abs() < 1e-6, "{}", r[0].radius_m);
        assert!((r[3].radius_m - r[0].radius_m / 2.0).abs() < 1e-15);
        assert!(r.windows(2).all(|w| w[0].radius_m > w[1].radius_m));
        let far = OpticalConfig {
            defocus: 0.6,
            ..optics
        };
        let r4 = predict_null_radii(&far, 50, 8);
        assert!((r4[0].radius_m - 2.0 * r[0].radius_m).abs() < 1e-15);
        let small = OpticalConfig {
            grid_n: 64,
            ..optics
        };
        assert!(predict_null_radii(&small, 50, 3).is_empty());
        assert!(radii_csv(&r).starts_with("k,radius_m\n1,"));
    }

    fn star_optics() -> OpticalConfig {
        OpticalConfig {
            defocus: 0.15,
            grid_n: 256,
            ..OpticalConfig::paper_scale()
        }
    }

    #[test]
    fn star_values_and_period_count() {
        let optics = star_optics();
        let star = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
        let f = make_star(&star, &optics).unwrap();
        let (lo, hi) = f.grid().min_max();
        assert!(lo >= 0.0 && hi <= 0.1 * PI + 1e-15);
        // Zero crossings of the modulation on a circle.
        let r = 60.0;
        let c = 128.0;
        let m = 4000;
        let vals: Vec<f64> = (0..m)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / m as f64;
                f.grid()
                    .bilinear(c + r * th.sin(), c + r * th.cos())
                    .unwrap()
                    - 0.05 * PI
            })
            .collect();
        let flips = (0..m)
            .filter(|&j| (vals[j] >= 0.0) != (vals[(j + 1) % m] >= 0.0))
            .count();
        assert_eq!(flips, 100);
    }

    #[test]
    fn local_frequency_matches_windowed_estimate() {
        let optics = star_optics();
        let star = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
        let f = make_star(&star, &optics).unwrap();
        let (r, c) = (80.0, 128.0);
        // 64 samples spaced 0.5 px along an arc, Hann window, zero-padded DFT.
        let m = 64;
        let ds = 0.5;
        let samples: Vec<f64> = (0..m)
            .map(|j| {
                let th = 0.3 + j as f64 * ds / r;
                let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / (m - 1) as f64).cos();
                w * (f
                    .grid()
                    .bilinear(c + r * th.sin(), c + r * th.cos())
                    .unwrap()
                    - 0.05 * PI)
            })
            .collect();
        let (mut best, mut best_p) = (0.0, 0.0);
        for i in 1..2000 {
            let nu = i as f64 * 1e-3 / ds * 0.5;
            let (mut re, mut im) = (0.0, 0.0);
            for (j, s) in samples.iter().enumerate() {
                let a = 2.0 * PI * nu * j as f64 * ds;
                re += s * a.cos();
                im += s * a.sin();
            }
            let p = re * re + im * im;
            if p > best {
                best = p;
                best_p = nu;
            }
        }
        let want = 50.0 / (2.0 * PI * r);
        assert!((best_p - want).abs() / want < 0.02, "{best_p} vs {want}");
    }

    #[test]
    fn aliasing_and_validation() {
        let optics = OpticalConfig {
            grid_n: 32,
            ..star_optics()
        };
        let star = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
        assert!(matches!(
            make_star(&star, &optics),
            Err(Error::StarAliasing { .. })
        ));
        let mut tight = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
        tight.inner_radius = Some(10.0);
        assert!(matches!(
            make_star(&tight, &star_optics()),
            Err(Error::StarAliasing { .. })
        ));
        assert!(make_star(
            &StarPattern::new(3, StarProfile::Binary, 0.1),
            &star_optics()
        )
        .is_err());
        assert!(make_star(
            &StarPattern::new(50, StarProfile::Binary, 1.0),
            &star_optics()
        )
        .is_err());
    }

    #[test]
    fn flat_measurement_has_no_contrast() {
        let optics = star_optics();
        let g = IntensityMap(Grid::filled(256, 256, 1.0));
        let err = detect_discontinuities(&g, 50, &optics, &DetectConfig::default()).unwrap_err();
        assert_eq!(err, Error::NoFringeContrast);
    }

    #[test]
    fn nearly_in_focus_star_has_no_flips() {
        let optics = OpticalConfig {
            defocus: 1e-4,
            ..star_optics()
        };
        let star = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
        let g = propagate(&make_star(&star, &optics).unwrap(), &optics).unwrap();
        let cfg = DetectConfig::for_star(&star, 256).unwrap();
        assert!(detect_discontinuities(&g, 50, &optics, &cfg)
            .unwrap()
            .is_empty());
    }

    fn coarse_star_optics(z: f64) -> OpticalConfig {
        OpticalConfig {
            defocus: z,
            grid_n: 128,
            pixel_pitch: 70e-6,
            ..OpticalConfig::paper_scale()
        }
    }

    fn detected(z: f64) -> (Vec<f64>, Vec<NullRadius>, (f64, f64)) {
        let optics = coarse_star_optics(z);
        let star = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
        let g = propagate(&make_star(&star, &optics).unwrap(), &optics).unwrap();
        let cfg = DetectConfig::for_star(&star, 128).unwrap();
        let det = detect_discontinuities(&g, 50, &optics, &cfg).unwrap();
        (
            det,
            predict_null_radii(&optics, 50, 64),
            star.annulus(128).unwrap(),
        )
    }

    #[test]
    fn detected_flips_sit_on_predicted_nulls() {
        let (det, pred, (inner, outer)) = detected(0.15);
        let pitch = 70e-6;
        let inside: Vec<_> = pred
            .iter()
            .filter(|p| p.radius_m / pitch >= inner && p.radius_m / pitch <= outer)
            .collect();
        assert!(!inside.is_empty());
        for p in &inside {
            let best = det
                .iter()
                .map(|d| (d - p.radius_m).abs())
                .fold(f64::MAX, f64::min);
            assert!(best < pitch, "null k={} off by {:.2} px", p.k, best / pitch);
        }
        // No spurious flips between consecutive nulls, one at each end.
        for w in inside.windows(2) {
            let between = det
                .iter()
                .filter(|&&d| d < w[0].radius_m + pitch && d > w[1].radius_m - pitch)
                .count();
            assert_eq!(between, 2, "{det:?}");
        }
    }

    #[test]
    fn doubling_defocus_scales_radii_by_root_two() {
        let (near, _, _) = detected(0.15);
        let (far, _, _) = detected(0.30);
        for r in &near {
            let best = far
                .iter()
                .map(|f| f / r)
                .min_by(|a, b| (a - SQRT_2).abs().total_cmp(&(b - SQRT_2).abs()))
                .unwrap();
            assert!((best / SQRT_2 - 1.0).abs() < 0.02, "ratio {best}");
        }
    }
}
