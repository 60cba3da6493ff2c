//! Affine registration by maximizing normalized mutual information.
//!
//! Coordinates are `(x, y) = (col, row)` in pixels. The linear part acts about
//! the image center, so an affine map sends `p` to `A (p - c) + c + t`.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::Grid;
use crate::{Error, Result};

/// Default joint-histogram resolution.
pub const NMI_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// Rotation by `theta` (radians, counter-clockwise in `(x, y)`), isotropic
    /// scale, then translation.
    pub fn similarity(theta: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = theta.sin_cos();
        AffineParams {
            a11: scale * c,
            a12: -scale * s,
            a21: scale * s,
            a22: scale * c,
            tx,
            ty,
        }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.det();
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::config("affine", "parameters must be finite"));
        }
        if !(d.abs() > 1e-6) {
            return Err(Error::SingularMatrix(d));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a11, self.a12, self.a21, self.a22, self.tx, self.ty]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        AffineParams {
            a11: v[0],
            a12: v[1],
            a21: v[2],
            a22: v[3],
            tx: v[4],
            ty: v[5],
        }
    }

    /// Forward map of a point relative to `center`.
    pub fn apply(&self, (x, y): (f64, f64), center: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (x - center.0, y - center.1);
        (
            self.a11 * dx + self.a12 * dy + center.0 + self.tx,
            self.a21 * dx + self.a22 * dy + center.1 + self.ty,
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        self.validate()?;
        let d = self.det();
        let (b11, b12, b21, b22) = (self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d);
        Ok(AffineParams {
            a11: b11,
            a12: b12,
            a21: b21,
            a22: b22,
            tx: -(b11 * self.tx + b12 * self.ty),
            ty: -(b21 * self.tx + b22 * self.ty),
        })
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &AffineParams) -> Self {
        AffineParams {
            a11: self.a11 * first.a11 + self.a12 * first.a21,
            a12: self.a11 * first.a12 + self.a12 * first.a22,
            a21: self.a21 * first.a11 + self.a22 * first.a21,
            a22: self.a21 * first.a12 + self.a22 * first.a22,
            tx: self.a11 * first.tx + self.a12 * first.ty + self.tx,
            ty: self.a21 * first.tx + self.a22 * first.ty + self.ty,
        }
    }
}

/// Pivot used for the linear part on a `rows x cols` image.
pub fn image_center(rows: usize, cols: usize) -> (f64, f64) {
    ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0)
}

/// Mean distance the four image corners move under `p`.
pub fn mean_corner_displacement(p: &AffineParams, rows: usize, cols: usize) -> f64 {
    let c = image_center(rows, cols);
    let (w, h) = (cols as f64 - 1.0, rows as f64 - 1.0);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|&q| {
            let m = p.apply(q, c);
            ((m.0 - q.0).powi(2) + (m.1 - q.1).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 4.0
}

/// Resamples `img` so that the content at `q` moves to `p(q)`. Samples that
/// map outside the source are zero.
pub fn warp_affine(img: &Grid, p: &AffineParams) -> Result<Grid> {
    let inv = p.inverse()?;
    let c = image_center(img.rows(), img.cols());
    Ok(Grid::from_fn(img.rows(), img.cols(), |row, col| {
        let (x, y) = inv.apply((col as f64, row as f64), c);
        img.bilinear(y, x).unwrap_or(0.0)
    }))
}

fn bin_indices(g: &Grid, n_bins: usize) -> Result<Vec<usize>> {
    let (lo, hi) = g.min_max();
    if !(hi > lo) {
        return Err(Error::Degenerate("constant image has no entropy"));
    }
    let scale = n_bins as f64 / (hi - lo);
    Ok(g.as_slice()
        .iter()
        .map(|&v| (((v - lo) * scale) as usize).min(n_bins - 1))
        .collect())
}

fn entropy(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `(H(A) + H(B)) / H(A, B)` from a joint histogram of min-max normalized
/// intensities. Lies in `[1, 2]`.
pub fn nmi(a: &Grid, b: &Grid, n_bins: usize) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "nmi",
            expected: vec![a.rows(), a.cols()],
            found: vec![b.rows(), b.cols()],
        });
    }
    if n_bins < 2 {
        return Err(Error::config("n_bins", "must be at least 2"));
    }
    let (ia, ib) = (bin_indices(a, n_bins)?, bin_indices(b, n_bins)?);
    let mut joint = vec![0u64; n_bins * n_bins];
    let mut ha = vec![0u64; n_bins];
    let mut hb = vec![0u64; n_bins];
    for (&x, &y) in ia.iter().zip(&ib) {
        joint[x * n_bins + y] += 1;
        ha[x] += 1;
        hb[y] += 1;
    }
    let total = ia.len() as f64;
    Ok((entropy(&ha, total) + entropy(&hb, total)) / entropy(&joint, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SimplexConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_iter: usize,
    /// Stop when every vertex is within this distance of the best one...
    pub x_tol: f64,
    /// ...and their objective values are within this of the best value.
    pub f_tol: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        SimplexConfig {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_iter: 2000,
            x_tol: 1e-10,
            f_tol: 1e-14,
        }
    }
}

impl SimplexConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reflection > 0.0) {
            return Err(Error::config("reflection", "must be positive"));
        }
        if !(self.expansion > 1.0) {
            return Err(Error::config("expansion", "must exceed 1"));
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::config("contraction", "must lie in (0, 1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::config("shrink", "must lie in (0, 1)"));
        }
        if !(self.x_tol >= 0.0 && self.f_tol >= 0.0) {
            return Err(Error::config("x_tol", "tolerances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best objective value after each iteration (index 0 is the start).
    pub history: Vec<f64>,
}

/// Minimizes `f` starting from the simplex `x0, x0 + steps[i] e_i`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    cfg: &SimplexConfig,
) -> Result<SimplexResult> {
    cfg.validate()?;
    let d = x0.len();
    if d == 0 {
        return Err(Error::Empty("no parameters to optimize"));
    }
    if steps.len() != d {
        return Err(Error::ShapeMismatch {
            context: "simplex steps",
            expected: vec![d],
            found: vec![steps.len()],
        });
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteObjective(x.to_vec()))
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    pts.push(x0.to_vec());
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals = pts.iter().map(|p| eval(p)).collect::<Result<Vec<_>>>()?;

    let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    let mut order: Vec<usize> = (0..=d).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        let (best, worst, second) = (order[0], order[d], order[d - 1.min(d)]);
        history.push(vals[best]);

        let spread_x = pts
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[best])
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0f64, f64::max);
        let spread_f = vals.iter().map(|v| v - vals[best]).fold(0.0f64, f64::max);
        if iterations >= cfg.max_iter || (spread_x <= cfg.x_tol && spread_f <= cfg.f_tol) {
            return Ok(SimplexResult {
                x: pts[best].clone(),
                value: vals[best],
                iterations,
                evaluations: evals,
                history,
            });
        }
        iterations += 1;

        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (c, x) in centroid.iter_mut().zip(&pts[i]) {
                *c += x / d as f64;
            }
        }
        let xr = blend(&centroid, &pts[worst], -cfg.reflection);
        let fr = eval(&xr)?;
        if fr < vals[best] {
            let xe = blend(&centroid, &pts[worst], -cfg.reflection * cfg.expansion);
            let fe = eval(&xe)?;
            if fe < fr {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[worst] {
            let xc = blend(&centroid, &xr, cfg.contraction);
            let fc = eval(&xc)?;
            (xc, fc)
        } else {
            let xc = blend(&centroid, &pts[worst], cfg.contraction);
            let fc = eval(&xc)?;
            (xc, fc)
        };
        if fc < vals[worst].min(fr) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        let anchor = pts[best].clone();
        for &i in &order[1..] {
            pts[i] = blend(&anchor, &pts[i], cfg.shrink);
            vals[i] = eval(&pts[i])?;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct RegisterConfig {
    pub n_bins: usize,
    pub translation_spread: f64,
    pub linear_spread: f64,
    /// Independent runs from the identity, each with a differently oriented
    /// initial simplex; the best result is kept.
    pub starts: usize,
    /// Extra runs restarted from the best point so far.
    pub restarts: usize,
    pub simplex: SimplexConfig,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        RegisterConfig {
            n_bins: NMI_BINS,
            translation_spread: 2.0,
            linear_spread: 0.02,
            starts: 4,
            restarts: 3,
            simplex: SimplexConfig {
                max_iter: 600,
                x_tol: 1e-3,
                f_tol: 1e-9,
                ..SimplexConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub params: AffineParams,
    pub nmi: f64,
    /// Best-vertex objective (negative NMI) per iteration, one entry per
    /// simplex run in the order they were made.
    pub runs: Vec<Vec<f64>>,
}

/// Step signs for the initial simplexes: `+`, `-`, then alternating patterns.
fn start_orientations(count: usize) -> Vec<[f64; 6]> {
    (0..count.max(1))
        .map(|k| {
            let mut s = [1.0; 6];
            for (i, v) in s.iter_mut().enumerate() {
                let flip = match k % 4 {
                    0 => false,
                    1 => true,
                    2 => i % 2 == 1,
                    _ => i % 2 == 0,
                };
                if flip {
                    *v = -1.0;
                }
            }
            s
        })
        .collect()
}

/// Finds the map that best aligns `moving` onto `fixed`, starting from the
/// identity.
pub fn register(moving: &Grid, fixed: &Grid, cfg: &RegisterConfig) -> Result<Registration> {
    if !moving.same_shape(fixed) {
        return Err(Error::ShapeMismatch {
            context: "register",
            expected: vec![fixed.rows(), fixed.cols()],
            found: vec![moving.rows(), moving.cols()],
        });
    }
    if !(cfg.translation_spread > 0.0 && cfg.linear_spread > 0.0) {
        return Err(Error::config("spread", "must be positive"));
    }
    let scale = [
        cfg.linear_spread,
        cfg.linear_spread,
        cfg.linear_spread,
        cfg.linear_spread,
        cfg.translation_spread,
        cfg.translation_spread,
    ];
    let origin = AffineParams::IDENTITY.to_array();
    let unscale = |z: &[f64]| {
        let v: Vec<f64> = (0..6).map(|i| origin[i] + scale[i] * z[i]).collect();
        AffineParams::from_slice(&v)
    };
    let objective = |z: &[f64]| -> f64 {
        let p = unscale(z);
        match warp_affine(moving, &p).and_then(|w| nmi(&w, fixed, cfg.n_bins)) {
            Ok(v) => -v,
            // A singular or fully out-of-frame map is never a good match.
            Err(Error::SingularMatrix(_)) | Err(Error::Degenerate(_)) => 0.0,
            Err(_) => f64::NAN,
        }
    };
    nmi(moving, fixed, cfg.n_bins)?;

    let mut z = vec![0.0; 6];
    let mut best = f64::INFINITY;
    let mut runs = Vec::new();
    let mut record = |run: SimplexResult, z: &mut Vec<f64>, best: &mut f64| {
        if run.value < *best {
            *best = run.value;
            *z = run.x;
        }
        runs.push(run.history);
    };
    // Every start is the identity; the simplex orientations differ.
    for signs in start_orientations(cfg.starts) {
        let run = nelder_mead(objective, &[0.0; 6], &signs, &cfg.simplex)?;
        record(run, &mut z, &mut best);
    }
    for _ in 0..cfg.restarts {
        let before = best;
        let run = nelder_mead(objective, &z.clone(), &[1.0; 6], &cfg.simplex)?;
        record(run, &mut z, &mut best);
        if !(best < before - cfg.simplex.f_tol) {
            break;
        }
    }
    Ok(Registration {
        params: unscale(&z),
        nmi: -best,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::texture_image;
    use crate::evaluation::pcc;
    use crate::rng::seeded;
    use rand::Rng;

    fn texture(seed: u64, n: usize) -> Grid {
        texture_image(seed, n).to_grid()
    }

    #[test]
    fn identity_warp_is_exact() {
        let g = texture(1, 32);
        assert_eq!(warp_affine(&g, &AffineParams::IDENTITY).unwrap(), g);
    }

    #[test]
    fn translation_round_trip() {
        let g = texture(2, 32);
        let there = AffineParams::similarity(0.0, 1.0, 3.0, 0.0);
        let back = AffineParams::similarity(0.0, 1.0, -3.0, 0.0);
        let w = warp_affine(&warp_affine(&g, &there).unwrap(), &back).unwrap();
        for r in 0..32 {
            for c in 0..29 {
                assert!((w[(r, c)] - g[(r, c)]).abs() < 1e-12);
            }
            for c in 29..32 {
                assert_eq!(w[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn warp_moves_content_forward() {
        let mut g = Grid::zeros(16, 16);
        g[(5, 4)] = 1.0;
        let w = warp_affine(&g, &AffineParams::similarity(0.0, 1.0, 2.0, 3.0)).unwrap();
        assert_eq!(w[(8, 6)], 1.0);
    }

    #[test]
    fn rotation_round_trip_keeps_interior() {
        let g = texture(3, 64);
        let t = 3f64.to_radians();
        let w = warp_affine(
            &warp_affine(&g, &AffineParams::similarity(t, 1.0, 0.0, 0.0)).unwrap(),
            &AffineParams::similarity(-t, 1.0, 0.0, 0.0),
        )
        .unwrap();
        let crop = |x: &Grid| Grid::from_fn(40, 40, |r, c| x[(r + 12, c + 12)]);
        assert!(pcc(&crop(&w), &crop(&g)).unwrap() > 0.99);
    }

    #[test]
    fn inverse_and_composition() {
        let p = AffineParams::similarity(0.05, 1.02, 1.5, -2.0);
        let i = p.inverse().unwrap();
        assert!(mean_corner_displacement(&i.after(&p), 32, 32) < 1e-12);
        assert!(mean_corner_displacement(&p.after(&i), 32, 32) < 1e-12);
        let q = AffineParams {
            a11: 1.0,
            a12: 2.0,
            a21: 0.5,
            a22: 1.0,
            tx: 0.0,
            ty: 0.0,
        };
        assert!(matches!(
            warp_affine(&texture(1, 8), &q),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn nmi_reference_cases() {
        let a = texture(4, 64);
        assert!((nmi(&a, &a, 64).unwrap() - 2.0).abs() < 1e-12);
        // 64 levels, one per bin, and a permutation of them.
        let q = a.map(|v| (v / 4.0).floor());
        let mut perm: Vec<f64> = (0..64).map(f64::from).collect();
        perm.swap(0, 63);
        perm.swap(5, 40);
        perm.reverse();
        let remapped = q.map(|v| perm[v as usize]);
        assert!((nmi(&q, &remapped, 64).unwrap() - 2.0).abs() < 1e-12);
        let b = texture(5, 64);
        assert!((nmi(&a, &b, 64).unwrap() - nmi(&b, &a, 64).unwrap()).abs() < 1e-12);
        let qb = b.map(|v| (v / 4.0).floor());
        let (x, y) = (
            nmi(&q, &qb, 64).unwrap(),
            nmi(&remapped, &qb.map(|v| perm[v as usize]), 64).unwrap(),
        );
        assert!((x - y).abs() < 1e-12);
        assert!(nmi(&a, &Grid::filled(64, 64, 3.0), 64).is_err());
    }

    #[test]
    fn independent_noise_is_near_one() {
        let mut rng = seeded(9);
        let a = Grid::from_fn(256, 256, |_, _| rng.gen::<f64>());
        let b = Grid::from_fn(256, 256, |_, _| rng.gen::<f64>());
        let v = nmi(&a, &b, 64).unwrap();
        assert!((1.0..1.05).contains(&v), "{v}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [0.3, -0.2, 0.5, 0.1, -0.4, 0.25];
        let bowl = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let mut rng = seeded(11);
        for _ in 0..5 {
            let start: Vec<f64> = target
                .iter()
                .map(|t| t + rng.gen_range(-0.4..0.4))
                .collect();
            let r = nelder_mead(bowl, &start, &[0.1; 6], &SimplexConfig::default()).unwrap();
            for (x, t) in r.x.iter().zip(&target) {
                assert!((x - t).abs() < 1e-6, "{:?}", r.x);
            }
            assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn optimal_start_is_kept() {
        let bowl = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
        let r = nelder_mead(bowl, &[0.0; 3], &[0.5; 3], &SimplexConfig::default()).unwrap();
        assert!(r.value <= 0.0);
    }

    #[test]
    fn rosenbrock_embedded() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], &SimplexConfig::default()).unwrap();
        assert!(
            r.value < 1e-8 && r.iterations <= 2000,
            "{} after {}",
            r.value,
            r.iterations
        );
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |x: &[f64]| if x[0] > 0.05 { f64::NAN } else { x[0] };
        assert!(matches!(
            nelder_mead(f, &[0.0], &[0.1], &SimplexConfig::default()),
            Err(Error::NonFiniteObjective(_))
        ));
        let bad = SimplexConfig {
            expansion: 0.5,
            ..Default::default()
        };
        assert!(nelder_mead(|x| x[0], &[0.0], &[0.1], &bad).is_err());
    }

    #[test]
    fn self_registration_is_identity() {
        let g = texture(6, 64);
        let r = register(&g, &g, &RegisterConfig::default()).unwrap();
        assert!(
            r.params.tx.abs() < 0.1 && r.params.ty.abs() < 0.1,
            "{:?}",
            r.params
        );
    }

    #[test]
    fn planted_shift_is_recovered() {
        let fixed = texture(7, 64);
        let planted = AffineParams::similarity(0.0, 1.0, 3.0, -2.0);
        let moving = warp_affine(&fixed, &planted).unwrap();
        let r = register(&moving, &fixed, &RegisterConfig::default()).unwrap();
        let residual = r.params.after(&planted);
        assert!(
            mean_corner_displacement(&residual, 64, 64) < 0.5,
            "{:?}",
            r.params
        );
        assert!(r.runs.len() >= 4);
        for run in &r.runs {
            assert!(run.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn planted_rotation_and_scale_are_recovered() {
        let fixed = texture(8, 64);
        let planted = AffineParams::similarity(2f64.to_radians(), 1.02, 0.0, 0.0);
        let moving = warp_affine(&fixed, &planted).unwrap();
        let r = register(&moving, &fixed, &RegisterConfig::default()).unwrap();
        let want = planted.inverse().unwrap();
        let (a, b) = (r.params.to_array(), want.to_array());
        let diff: f64 = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (0..4).map(|i| b[i] * b[i]).sum::<f64>().sqrt();
        assert!(diff / norm < 0.01, "{:?}", r.params);
    }
}
