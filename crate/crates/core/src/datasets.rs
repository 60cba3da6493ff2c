//! 8-bit images, per-image Shannon entropy, entropy-controlled synthetic
//! datasets, and the grayscale-to-weak-phase calibration.
//!
//! Two generators stand in for corpora at opposite ends of the entropy scale:
//! band-limited random textures (high entropy, generic prior) and sparse
//! near-binary glyphs (low entropy, strong prior). A [`DatasetManifest`] records
//! how to regenerate every image from `(descriptor, seed)`.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::fft::{signed_index, Fft2d};
use crate::grid::{Grid, PhaseMap};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::{Error, Result};

/// Number of symbols in the 8-bit alphabet.
pub const ALPHABET: usize = 256;
/// Upper bound of per-image entropy, `log2(256)`.
pub const MAX_ENTROPY_BITS: f64 = 8.0;

const SPLIT_STREAM: u64 = 0x0053_504c_4954;

/// Grayscale image over the alphabet `{0, ..., 255}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("image has a zero dimension"));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch {
                context: "image pixels",
                expected: vec![height, width],
                found: vec![pixels.len()],
            });
        }
        Ok(Image8 {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    /// Count of each symbol.
    pub fn histogram(&self) -> [u64; ALPHABET] {
        let mut h = [0u64; ALPHABET];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }

    pub fn to_grid(&self) -> Grid {
        Grid::from_fn(self.height, self.width, |r, c| {
            self.pixels[r * self.width + c] as f64
        })
    }

    /// Min-max scales a real grid onto `0..=255`. A constant grid maps to 0.
    pub fn from_grid_scaled(grid: &Grid) -> Self {
        let (lo, hi) = grid.min_max();
        let span = hi - lo;
        let pixels = grid
            .as_slice()
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        Image8 {
            width: grid.cols(),
            height: grid.rows(),
            pixels,
        }
    }
}

/// Shannon entropy in bits of the empirical pixel-value distribution.
///
/// One bin per alphabet symbol; empty bins contribute nothing.
pub fn image_entropy(img: &Image8) -> Result<f64> {
    let total = img.pixels.len();
    if total == 0 {
        return Err(Error::Empty("image has no pixels"));
    }
    Ok(entropy_of_counts(&img.histogram(), total as u64))
}

pub(crate) fn entropy_of_counts(counts: &[u64], total: u64) -> f64 {
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    // -0.0 for a constant image
    h.max(0.0)
}

/// Dataset-level entropy summary.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntropyReport {
    pub per_image_bits: Vec<f64>,
    /// Counts over `n_bins` equal bins spanning `[0, 8]` bits.
    pub histogram: Vec<u64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

impl EntropyReport {
    pub fn from_entropies(per_image_bits: Vec<f64>, n_bins: usize) -> Result<Self> {
        if per_image_bits.is_empty() {
            return Err(Error::Empty("no images in dataset"));
        }
        if n_bins == 0 {
            return Err(Error::config("n_bins", "must be positive"));
        }
        let n = per_image_bits.len() as f64;
        let mean = per_image_bits.iter().sum::<f64>() / n;
        let var = per_image_bits
            .iter()
            .map(|h| (h - mean) * (h - mean))
            .sum::<f64>()
            / n;
        let mut histogram = vec![0u64; n_bins];
        for &h in &per_image_bits {
            let bin = ((h / MAX_ENTROPY_BITS) * n_bins as f64).floor() as usize;
            histogram[bin.min(n_bins - 1)] += 1;
        }
        Ok(EntropyReport {
            per_image_bits,
            histogram,
            mean,
            std_dev: var.sqrt(),
        })
    }

    pub fn from_images<'a>(
        images: impl IntoIterator<Item = &'a Image8>,
        n_bins: usize,
    ) -> Result<Self> {
        let bits = images
            .into_iter()
            .map(image_entropy)
            .collect::<Result<Vec<_>>>()?;
        Self::from_entropies(bits, n_bins)
    }
}

/// Linear one-to-one map `0 -> 0`, `255 -> max_phase`.
pub fn calibrate_to_phase(img: &Image8, max_phase: f64) -> Result<PhaseMap> {
    if !(max_phase > 0.0 && max_phase <= PI) {
        return Err(Error::config("max_phase", "must lie in (0, pi]"));
    }
    let scale = max_phase / 255.0;
    Ok(PhaseMap(Grid::from_fn(img.height, img.width, |r, c| {
        img.pixels[r * img.width + c] as f64 * scale
    })))
}

/// Inverse of [`calibrate_to_phase`], rounding to the nearest symbol.
pub fn phase_to_image(phase: &PhaseMap, max_phase: f64) -> Image8 {
    let g = phase.grid();
    let pixels = g
        .as_slice()
        .iter()
        .map(|&v| (v / max_phase * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image8 {
        width: g.cols(),
        height: g.rows(),
        pixels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DatasetKind {
    /// Band-limited random fields, contrast-stretched.
    Texture,
    /// Sparse thick strokes on a dark background.
    Glyph,
    /// Images ingested from files.
    External,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Texture => "texture",
            DatasetKind::Glyph => "glyph",
            DatasetKind::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EntrySource {
    Generated { seed: u64 },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestEntry {
    pub id: String,
    pub source: EntrySource,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorDescriptor {
    pub kind: DatasetKind,
    pub grid_n: usize,
    pub count: usize,
}

/// Ordered dataset description. Generated entries are regenerated on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetManifest {
    pub version: u32,
    pub descriptor: GeneratorDescriptor,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

/// Split fractions for train and validation; the remainder is test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
        }
    }
}

/// Deterministic split assignment for `count` items.
pub fn assign_splits(count: usize, seed: u64, ratios: SplitRatios) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seeded(derive_seed(seed, SPLIT_STREAM)));
    let n_train = ((count as f64 * ratios.train).round() as usize).clamp(1.min(count), count);
    let n_val = ((count as f64 * ratios.validation).round() as usize).min(count - n_train);
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    splits
}

impl DatasetManifest {
    /// Manifest for a synthetic dataset with the default split ratios.
    pub fn generated(kind: DatasetKind, seed: u64, count: usize, grid_n: usize) -> Result<Self> {
        Self::generated_with_splits(kind, seed, count, grid_n, SplitRatios::default())
    }

    pub fn generated_with_splits(
        kind: DatasetKind,
        seed: u64,
        count: usize,
        grid_n: usize,
        ratios: SplitRatios,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("count", "must be at least 1"));
        }
        if grid_n < 4 {
            return Err(Error::config("grid_n", "must be at least 4"));
        }
        if kind == DatasetKind::External {
            return Err(Error::config(
                "kind",
                "external datasets are built from files",
            ));
        }
        let splits = assign_splits(count, seed, ratios);
        let entries = splits
            .into_iter()
            .enumerate()
            .map(|(i, split)| ManifestEntry {
                id: format!("{}-{:05}", kind.name(), i),
                source: EntrySource::Generated {
                    seed: derive_seed(seed, i as u64),
                },
                split,
            })
            .collect();
        Ok(DatasetManifest {
            version: MANIFEST_VERSION,
            descriptor: GeneratorDescriptor {
                kind,
                grid_n,
                count,
            },
            seed,
            entries,
        })
    }

    /// Manifest over external files, in the given order.
    pub fn external(paths: Vec<String>, grid_n: usize, seed: u64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Empty("no input files"));
        }
        let count = paths.len();
        let splits = assign_splits(count, seed, SplitRatios::default());
        let entries = paths
            .into_iter()
            .zip(splits)
            .enumerate()
            .map(|(i, (path, split))| ManifestEntry {
                id: format!("external-{i:05}"),
                source: EntrySource::File { path },
                split,
            })
            .collect();
        Ok(DatasetManifest {
            version: MANIFEST_VERSION,
            descriptor: GeneratorDescriptor {
                kind: DatasetKind::External,
                grid_n,
                count,
            },
            seed,
            entries,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Renders a generated entry; `None` for file-backed entries.
    pub fn render(&self, entry: &ManifestEntry) -> Option<Image8> {
        match entry.source {
            EntrySource::Generated { seed } => Some(match self.descriptor.kind {
                DatasetKind::Texture => texture_image(seed, self.descriptor.grid_n),
                DatasetKind::Glyph => glyph_image(seed, self.descriptor.grid_n),
                DatasetKind::External => return None,
            }),
            EntrySource::File { .. } => None,
        }
    }

    /// Checks the manifest invariants: unique ids and matching count.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Empty("manifest has no entries"));
        }
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("entries", "duplicate image id"));
        }
        if self.entries.len() != self.descriptor.count {
            return Err(Error::config(
                "descriptor.count",
                "does not match number of entries",
            ));
        }
        Ok(())
    }
}

/// `count` texture images from a seed; convenience over the manifest path.
pub fn gen_texture_dataset(seed: u64, count: usize, grid_n: usize) -> Result<DatasetManifest> {
    DatasetManifest::generated(DatasetKind::Texture, seed, count, grid_n)
}

pub fn gen_glyph_dataset(seed: u64, count: usize, grid_n: usize) -> Result<DatasetManifest> {
    DatasetManifest::generated(DatasetKind::Glyph, seed, count, grid_n)
}

/// Gaussian-filtered white noise with a random cutoff, min-max stretched.
pub fn texture_image(seed: u64, n: usize) -> Image8 {
    let mut rng = seeded(seed);
    // Cutoff as a fraction of the Nyquist index.
    let cutoff = rng.gen_range(0.12..0.5) * (n as f64 / 2.0);
    let plan = Fft2d::new(n);
    let mut field: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(standard_normal(&mut rng), 0.0))
        .collect();
    plan.forward(&mut field);
    for r in 0..n {
        let fy = signed_index(r, n) as f64;
        for c in 0..n {
            let fx = signed_index(c, n) as f64;
            let rho2 = (fx * fx + fy * fy) / (cutoff * cutoff);
            field[r * n + c] *= (-rho2).exp();
        }
    }
    plan.inverse(&mut field);
    let grid = Grid::from_fn(n, n, |r, c| field[r * n + c].re);
    Image8::from_grid_scaled(&grid)
}

/// A few thick strokes at full intensity on a zero background, with a
/// one-level anti-aliased rim.
pub fn glyph_image(seed: u64, n: usize) -> Image8 {
    let mut rng = seeded(seed);
    let nf = n as f64;
    let n_strokes = rng.gen_range(1..=2);
    let thickness = rng.gen_range(0.07..0.11) * nf;
    let mut segments: Vec<[(f64, f64); 2]> = Vec::new();
    for _ in 0..n_strokes {
        let n_points = rng.gen_range(2..=3);
        let mut prev = (
            rng.gen_range(0.25..0.75) * nf,
            rng.gen_range(0.25..0.75) * nf,
        );
        for _ in 1..n_points {
            let angle = rng.gen_range(0.0..2.0 * PI);
            let len = rng.gen_range(0.2..0.4) * nf;
            let next = (
                (prev.0 + len * angle.cos()).clamp(0.15 * nf, 0.85 * nf),
                (prev.1 + len * angle.sin()).clamp(0.15 * nf, 0.85 * nf),
            );
            segments.push([prev, next]);
            prev = next;
        }
    }
    let half = thickness / 2.0;
    let pixels = (0..n * n)
        .map(|i| {
            let p = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
            let d = segments
                .iter()
                .map(|s| point_segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            if d <= half {
                255
            } else if d <= half + 0.75 {
                128
            } else {
                0
            }
        })
        .collect();
    Image8 {
        width: n,
        height: n,
        pixels,
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}
