use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use wotf_core::datasets::{calibrate_to_phase, texture_image};
use wotf_core::diagnostics::lwotf_from_estimates;
use wotf_core::optics::{fresnel_transfer, linearization_residual, linearized_forward, propagate};
use wotf_core::rng::seeded;
use wotf_core::{Grid, OpticalConfig, PhaseMap};

/// Periodic Fresnel propagation by direct summation: the impulse response is
/// built from the transfer function with a naive inverse DFT, then convolved
/// in the spatial domain.
fn brute_force_intensity(phase: &Grid, cfg: &OpticalConfig) -> Grid {
    let n = cfg.grid_n;
    let du = 1.0 / (n as f64 * cfg.pixel_pitch);
    let signed = |k: usize| {
        if k < n.div_ceil(2) {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    let mut h = vec![Complex64::new(0.0, 0.0); n * n];
    for (my, mx) in (0..n).flat_map(|y| (0..n).map(move |x| (y, x))) {
        let mut acc = Complex64::new(0.0, 0.0);
        for ky in 0..n {
            for kx in 0..n {
                let (u, v) = (signed(kx) * du, signed(ky) * du);
                let tf = Complex64::from_polar(
                    1.0,
                    -PI * cfg.wavelength * cfg.defocus * (u * u + v * v),
                );
                let arg = 2.0 * PI * (kx * mx + ky * my) as f64 / n as f64;
                acc += tf * Complex64::from_polar(1.0, arg);
            }
        }
        h[my * n + mx] = acc / (n * n) as f64;
    }
    Grid::from_fn(n, n, |y, x| {
        let mut acc = Complex64::new(0.0, 0.0);
        for sy in 0..n {
            for sx in 0..n {
                let k = ((y + n - sy) % n) * n + (x + n - sx) % n;
                acc += Complex64::from_polar(1.0, phase[(sy, sx)]) * h[k];
            }
        }
        acc.norm_sqr()
    })
}

fn grating_config() -> (OpticalConfig, f64) {
    let base = OpticalConfig::default();
    let u0 = 4.0 / (32.0 * base.pixel_pitch);
    let cfg = OpticalConfig {
        grid_n: 32,
        defocus: 0.5 / (base.wavelength * u0 * u0),
        ..base
    };
    (cfg, u0)
}

#[test]
fn weak_grating_matches_direct_fresnel_summation() {
    let (cfg, u0) = grating_config();
    let a = 0.05 * PI;
    let f = Grid::from_fn(32, 32, |_, c| {
        a * (2.0 * PI * u0 * c as f64 * cfg.pixel_pitch).cos()
    });
    let fast = propagate(&PhaseMap::new(f.clone()).unwrap(), &cfg).unwrap();
    let slow = brute_force_intensity(&f, &cfg);
    for (x, y) in fast.grid().as_slice().iter().zip(slow.as_slice()) {
        assert!((x - y).abs() < 1e-10, "{x} vs {y}");
    }
    // At WOTF = 1 the contrast is 2a cos(2 pi u0 x) up to second order in a.
    for c in 0..32 {
        let want = 1.0 + 2.0 * a * (2.0 * PI * u0 * c as f64 * cfg.pixel_pitch).cos();
        assert!((fast.grid()[(5, c)] - want).abs() < a * a * 2.0, "col {c}");
    }
}

#[test]
fn random_phase_matches_direct_fresnel_summation() {
    let cfg = OpticalConfig {
        grid_n: 16,
        ..OpticalConfig::default()
    };
    let f = calibrate_to_phase(&texture_image(3, 16), 0.8).unwrap();
    let fast = propagate(&f, &cfg).unwrap();
    let slow = brute_force_intensity(f.grid(), &cfg);
    assert!(fast.grid().relative_l2_error(&slow) < 1e-12);
}

#[test]
fn linearization_residual_is_small_and_quadratic() {
    let cfg = OpticalConfig::default();
    for seed in 0..5 {
        let img = texture_image(seed, 32);
        let res: Vec<f64> = [0.1 * PI, 0.05 * PI, 0.025 * PI]
            .iter()
            .map(|&m| linearization_residual(&calibrate_to_phase(&img, m).unwrap(), &cfg).unwrap())
            .collect();
        assert!(res[0] < 0.05, "seed {seed}: {}", res[0]);
        for w in res.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.2..=0.3).contains(&ratio), "seed {seed}: ratio {ratio}");
        }
    }
}

#[test]
fn doubling_defocus_squares_the_transfer() {
    let cfg = OpticalConfig::default();
    let twice = OpticalConfig {
        defocus: 2.0 * cfg.defocus,
        ..cfg
    };
    let (h, h2) = (fresnel_transfer(&cfg), fresnel_transfer(&twice));
    for (a, b) in h.values().iter().zip(h2.values()) {
        assert!((a * a - b).norm() < 1e-12);
    }
}

#[test]
fn grating_on_a_null_is_invisible_to_the_linear_model() {
    let (mut cfg, u0) = grating_config();
    cfg.defocus *= 2.0;
    let f = Grid::from_fn(32, 32, |r, _| {
        0.1 * (2.0 * PI * u0 * r as f64 * cfg.pixel_pitch).sin()
    });
    let g = linearized_forward(&PhaseMap::new(f).unwrap(), &cfg).unwrap();
    assert!(g.grid().as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn true_phases_on_exact_data_stay_close_to_the_weak_object_ratio() {
    let cfg = OpticalConfig::default();
    // Flat-spectrum phases keep every frequency well above the second-order terms.
    let mut rng = seeded(12);
    let phases: Vec<PhaseMap> = (0..8)
        .map(|_| PhaseMap::new(Grid::from_fn(32, 32, |_, _| rng.gen_range(0.0..0.1 * PI))).unwrap())
        .collect();
    let meas: Vec<_> = phases.iter().map(|f| propagate(f, &cfg).unwrap()).collect();
    let l = lwotf_from_estimates(&meas, &phases, &cfg, 1e-6).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..32 {
        for c in 0..32 {
            if !l.is_valid(r, c) {
                continue;
            }
            let (u, v) = l.grid.frequency(r, c);
            let t = 2.0 * cfg.wotf_at(u, v);
            num += (l.grid.at(r, c) - t).powi(2);
            den += t * t;
        }
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.05, "{rel}");
}
