//! Phase reconstructors: the regularized WOTF inverse and the trained network.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec::Vec;

use crate::fft::Fft2d;
use crate::grid::{Grid, IntensityMap, PhaseMap};
use crate::nn::{encode_measurement, Network, Tensor};
use crate::optics::{native_wotf, OpticalConfig};
use crate::{Error, Result};

/// Regularization for measurements simulated with the linearized model.
pub const EPS_LINEARIZED: f64 = 1e-6;
/// Regularization for measurements from the exact (nonlinear) model.
pub const EPS_NONLINEAR: f64 = 1e-3;

/// Anything that turns a measurement into a phase estimate.
pub trait Reconstruct {
    fn reconstruct(&mut self, measurement: &IntensityMap) -> Result<PhaseMap>;

    /// Grid side the reconstructor accepts.
    fn grid_n(&self) -> usize;
}

/// `F_hat = 2W (G - n^2 delta) / ((2W)^2 + eps)`, with a precomputed filter.
#[derive(Debug, Clone)]
pub struct TikhonovInverse {
    optics: OpticalConfig,
    eps: f64,
    plan: Fft2d,
    filter: Vec<f64>,
}

impl TikhonovInverse {
    pub fn new(optics: &OpticalConfig, eps: f64) -> Result<Self> {
        optics.validate()?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config("eps", "must be positive and finite"));
        }
        let filter = native_wotf(optics)
            .into_iter()
            .map(|w| 2.0 * w / (4.0 * w * w + eps))
            .collect();
        Ok(TikhonovInverse {
            optics: *optics,
            eps,
            plan: Fft2d::new(optics.grid_n),
            filter,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn optics(&self) -> &OpticalConfig {
        &self.optics
    }
}

impl Reconstruct for TikhonovInverse {
    fn reconstruct(&mut self, measurement: &IntensityMap) -> Result<PhaseMap> {
        let n = self.optics.grid_n;
        measurement.grid().expect_square(n)?;
        let mut spectrum = self.plan.forward_real(measurement.grid().as_slice());
        spectrum[0] -= (n * n) as f64;
        for (s, f) in spectrum.iter_mut().zip(&self.filter) {
            *s *= f;
        }
        PhaseMap::new(Grid::from_vec(n, n, self.plan.inverse_real(spectrum))?)
    }

    fn grid_n(&self) -> usize {
        self.optics.grid_n
    }
}

/// One-shot regularized inverse.
pub fn tikhonov_inverse(
    measurement: &IntensityMap,
    optics: &OpticalConfig,
    eps: f64,
) -> Result<PhaseMap> {
    TikhonovInverse::new(optics, eps)?.reconstruct(measurement)
}

/// Trained network followed by the affine scale correction `a * net(g) + b`.
#[derive(Debug, Clone)]
pub struct NeuralReconstructor {
    pub net: Network,
    pub a: f64,
    pub b: f64,
}

impl NeuralReconstructor {
    pub fn new(net: Network, (a, b): (f64, f64)) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::config("affine", "a and b must be finite"));
        }
        Ok(NeuralReconstructor { net, a, b })
    }

    /// Raw network outputs for several measurements at once.
    pub fn raw_batch(&mut self, measurements: &[&Grid]) -> Result<Vec<Grid>> {
        if measurements.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = self.net.config().clone();
        let n = cfg.input_side;
        let mut data = Vec::with_capacity(measurements.len() * n * n);
        for g in measurements {
            data.extend(encode_measurement(g, &cfg)?);
        }
        let x = Tensor::from_vec(&[measurements.len(), 1, n, n], data)?;
        let y = self.net.infer(&x)?;
        y.data()
            .chunks_exact(n * n)
            .map(|c| Grid::from_vec(n, n, c.to_vec()))
            .collect()
    }
}

impl Reconstruct for NeuralReconstructor {
    fn reconstruct(&mut self, measurement: &IntensityMap) -> Result<PhaseMap> {
        let raw = self.raw_batch(&[measurement.grid()])?.remove(0);
        let (a, b) = (self.a, self.b);
        PhaseMap::new(raw.map(|v| a * v + b))
    }

    fn grid_n(&self) -> usize {
        self.net.config().input_side
    }
}

/// `a * net(g) + b` for a single measurement.
pub fn neural_reconstruct(
    measurement: &IntensityMap,
    net: &Network,
    affine: (f64, f64),
) -> Result<PhaseMap> {
    NeuralReconstructor::new(net.clone(), affine)?.reconstruct(measurement)
}

/// Least-squares `(a, b)` with `truth ~ a * estimate + b`, pooled over every
/// pixel of every pair.
pub fn fit_affine_scale(estimates: &[Grid], truths: &[Grid]) -> Result<(f64, f64)> {
    if estimates.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            context: "affine fit pairs",
            expected: alloc::vec![truths.len()],
            found: alloc::vec![estimates.len()],
        });
    }
    if estimates.len() < 2 {
        return Err(Error::Empty("affine fit needs at least two pairs"));
    }
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (e, t) in estimates.iter().zip(truths) {
        if !e.same_shape(t) {
            return Err(Error::ShapeMismatch {
                context: "affine fit pair",
                expected: alloc::vec![t.rows(), t.cols()],
                found: alloc::vec![e.rows(), e.cols()],
            });
        }
        n += e.len() as f64;
        sx += e.as_slice().iter().sum::<f64>();
        sy += t.as_slice().iter().sum::<f64>();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (e, t) in estimates.iter().zip(truths) {
        for (x, y) in e.as_slice().iter().zip(t.as_slice()) {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
    }
    if !(sxx > 0.0) {
        return Err(Error::Degenerate(
            "estimates are constant; affine scale is undefined",
        ));
    }
    let a = sxy / sxx;
    Ok((a, my - a * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::mae;
    use crate::nn::{npcc, NetworkConfig};
    use crate::optics::linearized_forward;
    use crate::rng::{seeded, standard_normal};
    use alloc::vec;
    use core::f64::consts::PI;

    fn optics() -> OpticalConfig {
        OpticalConfig {
            grid_n: 64,
            ..OpticalConfig::paper_scale().rescaled_to_grid(64)
        }
    }

    /// Random real phase whose spectrum lives only where `|W| >= floor`.
    fn null_free_phase(cfg: &OpticalConfig, seed: u64, floor: f64) -> PhaseMap {
        let n = cfg.grid_n;
        let plan = Fft2d::new(n);
        let mut rng = seeded(seed);
        let noise: Vec<f64> = (0..n * n).map(|_| standard_normal(&mut rng)).collect();
        let mut spec = plan.forward_real(&noise);
        for (s, w) in spec.iter_mut().zip(native_wotf(cfg)) {
            if w.abs() < floor {
                *s = 0.0.into();
            }
        }
        let g = Grid::from_vec(n, n, plan.inverse_real(spec)).unwrap();
        let peak = g.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        PhaseMap(g.map(|v| v * 0.1 * PI / peak))
    }

    #[test]
    fn flat_measurement_gives_zero_phase() {
        let cfg = optics();
        let g = IntensityMap(Grid::filled(64, 64, 1.0));
        let f = tikhonov_inverse(&g, &cfg, 1e-3).unwrap();
        assert!(f.max_abs() < 1e-14);
    }

    #[test]
    fn recovers_null_free_phase_from_linearized_data() {
        let cfg = optics();
        for seed in 0..5 {
            let f = null_free_phase(&cfg, seed, 0.2);
            let g = linearized_forward(&f, &cfg).unwrap();
            let est = tikhonov_inverse(&g, &cfg, EPS_LINEARIZED).unwrap();
            let err = est.grid().relative_l2_error(f.grid());
            assert!(err < 1e-3, "seed {seed}: {err:e}");
        }
    }

    #[test]
    fn error_shrinks_monotonically_with_eps() {
        let cfg = optics();
        let f = null_free_phase(&cfg, 9, 0.05);
        let g = linearized_forward(&f, &cfg).unwrap();
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&eps| {
                tikhonov_inverse(&g, &cfg, eps)
                    .unwrap()
                    .grid()
                    .relative_l2_error(f.grid())
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn null_frequencies_are_zeroed() {
        // Choose z so that lambda z du^2 = 1/2: the (1, 1) bin is the first null.
        let mut cfg = OpticalConfig {
            grid_n: 16,
            ..OpticalConfig::default()
        };
        let du = cfg.frequency_spacing();
        cfg.defocus = 0.5 / (cfg.wavelength * du * du);
        let g = IntensityMap(Grid::from_fn(16, 16, |r, c| {
            1.0 + 0.01 * (2.0 * PI * (r + c) as f64 / 16.0).cos()
        }));
        let est = tikhonov_inverse(&g, &cfg, 1e-6).unwrap();
        // sin(pi) is ~1e-16 in floating point, not exactly zero.
        assert!(est.max_abs() < 1e-9, "{}", est.max_abs());
    }

    #[test]
    fn linear_in_the_measurement() {
        let cfg = optics();
        let f1 = null_free_phase(&cfg, 1, 0.0);
        let f2 = null_free_phase(&cfg, 2, 0.0);
        let g1 = linearized_forward(&f1, &cfg).unwrap();
        let g2 = linearized_forward(&f2, &cfg).unwrap();
        let sum = Grid::from_vec(
            64,
            64,
            g1.grid()
                .as_slice()
                .iter()
                .zip(g2.grid().as_slice())
                .map(|(a, b)| a + b - 1.0)
                .collect(),
        )
        .unwrap();
        let mut inv = TikhonovInverse::new(&cfg, 1e-3).unwrap();
        let r1 = inv.reconstruct(&g1).unwrap();
        let r2 = inv.reconstruct(&g2).unwrap();
        let r12 = inv.reconstruct(&IntensityMap(sum)).unwrap();
        for ((a, b), c) in r1
            .grid()
            .as_slice()
            .iter()
            .zip(r2.grid().as_slice())
            .zip(r12.grid().as_slice())
        {
            assert!((a + b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_eps_and_grid() {
        let cfg = optics();
        assert!(TikhonovInverse::new(&cfg, 0.0).is_err());
        assert!(TikhonovInverse::new(&cfg, f64::NAN).is_err());
        let g = IntensityMap(Grid::filled(32, 32, 1.0));
        assert!(matches!(
            tikhonov_inverse(&g, &cfg, 1e-3),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn affine_fit_exact_cases() {
        let t: Vec<Grid> = (0..3)
            .map(|k| Grid::from_fn(4, 4, |r, c| (r * 4 + c + k) as f64 * 0.1))
            .collect();
        let (a, b) = fit_affine_scale(&t, &t).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && b.abs() < 1e-12);
        let e: Vec<Grid> = t.iter().map(|g| g.map(|v| 2.0 * v + 3.0)).collect();
        let (a, b) = fit_affine_scale(&e, &t).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b + 1.5).abs() < 1e-12);
        let flat = vec![Grid::filled(4, 4, 1.0); 3];
        assert!(matches!(
            fit_affine_scale(&flat, &t),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_affine_scale(&t[..1], &t[..1]).is_err());
    }

    #[test]
    fn affine_fit_recovers_planted_values_under_noise() {
        let mut rng = seeded(4);
        let (a0, b0) = (0.7, -0.2);
        let est: Vec<Grid> = (0..20)
            .map(|_| Grid::from_fn(32, 32, |_, _| standard_normal(&mut rng)))
            .collect();
        let mut truths = Vec::new();
        for e in &est {
            let (lo, hi) = e.min_max();
            let sigma = 0.01 * a0 * (hi - lo);
            truths.push(Grid::from_fn(32, 32, |r, c| {
                a0 * e[(r, c)] + b0 + sigma * standard_normal(&mut rng)
            }));
        }
        let (a, b) = fit_affine_scale(&est, &truths).unwrap();
        assert!(((a - a0) / a0).abs() < 0.01, "{a}");
        assert!(((b - b0) / b0).abs() < 0.01, "{b}");
    }

    #[test]
    fn least_squares_beats_perturbed_maps() {
        let mut rng = seeded(8);
        let est: Vec<Grid> = (0..4)
            .map(|_| Grid::from_fn(8, 8, |_, _| standard_normal(&mut rng)))
            .collect();
        let truths: Vec<Grid> = est
            .iter()
            .map(|e| e.map(|v| 0.3 * v + 0.1 + 0.05 * (v * 7.0).sin()))
            .collect();
        let (a, b) = fit_affine_scale(&est, &truths).unwrap();
        let sse = |a: f64, b: f64| -> f64 {
            est.iter()
                .zip(&truths)
                .flat_map(|(e, t)| {
                    e.as_slice()
                        .iter()
                        .zip(t.as_slice())
                        .map(move |(x, y)| (a * x + b - y).powi(2))
                })
                .sum()
        };
        let best = sse(a, b);
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            assert!(sse(a + da, b + db) > best);
        }
    }

    #[test]
    fn neural_affine_keeps_pcc_and_identity_is_raw() {
        let ncfg = NetworkConfig {
            base_channels: 2,
            input_side: 16,
            ..Default::default()
        };
        let net = Network::build(&ncfg, 3).unwrap();
        let g = IntensityMap(Grid::from_fn(16, 16, |r, c| {
            1.0 + 0.1 * ((r * c) as f64 * 0.3).sin()
        }));
        let truth = Grid::from_fn(16, 16, |r, c| ((r + 2 * c) as f64 * 0.2).cos());
        let raw = neural_reconstruct(&g, &net, (1.0, 0.0)).unwrap();
        let direct = NeuralReconstructor::new(net.clone(), (1.0, 0.0))
            .unwrap()
            .raw_batch(&[g.grid()])
            .unwrap();
        assert_eq!(raw.grid(), &direct[0]);
        let scaled = neural_reconstruct(&g, &net, (2.5, -0.7)).unwrap();
        let p0 = npcc(raw.grid().as_slice(), truth.as_slice()).unwrap();
        let p1 = npcc(scaled.grid().as_slice(), truth.as_slice()).unwrap();
        assert!((p0 - p1).abs() < 1e-12);
        assert!(mae(raw.grid(), &truth).unwrap() != mae(scaled.grid(), &truth).unwrap());
        assert!(NeuralReconstructor::new(net, (f64::INFINITY, 0.0)).is_err());
    }
}
