//! Reconstruction scores and the cross-domain generalization matrix.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::datasets::{calibrate_to_phase, DatasetManifest, Image8, Split};
use crate::grid::{Grid, IntensityMap, PhaseMap};
use crate::nn::npcc;
use crate::optics::{propagate, OpticalConfig};
use crate::recon::Reconstruct;
use crate::rng::{seeded, standard_normal};
use crate::{Error, Result};

/// Pearson correlation, defined as `-npcc` so both share one implementation.
pub fn pcc(est: &Grid, truth: &Grid) -> Result<f64> {
    check_same(est, truth)?;
    npcc(est.as_slice(), truth.as_slice()).map(|v| -v)
}

/// Mean absolute pixel difference.
pub fn mae(est: &Grid, truth: &Grid) -> Result<f64> {
    check_same(est, truth)?;
    if est.is_empty() {
        return Err(Error::Empty("mae of empty grids"));
    }
    let s: f64 = est
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / est.len() as f64)
}

fn check_same(a: &Grid, b: &Grid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "score",
            expected: alloc::vec![b.rows(), b.cols()],
            found: alloc::vec![a.rows(), a.cols()],
        });
    }
    Ok(())
}

/// Mean, population standard deviation, and count.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to summarize"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Stats {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// A measurement with its ground-truth phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub measurement: IntensityMap,
    pub truth: PhaseMap,
}

/// Optional additive Gaussian detector noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NoiseModel {
    /// Standard deviation in units of the unit-plane-wave intensity.
    pub sigma: f64,
    pub seed: u64,
}

/// Calibrates images to phase, propagates them, and optionally adds noise
/// (clamped at zero intensity).
pub fn simulate<'a>(
    images: impl IntoIterator<Item = (String, &'a Image8)>,
    optics: &OpticalConfig,
    max_phase: f64,
    noise: Option<NoiseModel>,
) -> Result<Vec<Sample>> {
    let mut rng = noise.map(|m| seeded(m.seed));
    let sigma = noise.map_or(0.0, |m| m.sigma);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(
            "noise.sigma",
            "must be finite and non-negative",
        ));
    }
    images
        .into_iter()
        .map(|(id, img)| {
            let truth = calibrate_to_phase(img, max_phase)?;
            let mut g = propagate(&truth, optics)?;
            if let Some(rng) = rng.as_mut() {
                for v in g.0.as_mut_slice() {
                    *v = (*v + sigma * standard_normal(rng)).max(0.0);
                }
            }
            Ok(Sample {
                id,
                measurement: g,
                truth,
            })
        })
        .collect()
}

/// Regenerates one split of a synthetic manifest and simulates it.
pub fn simulate_split(
    manifest: &DatasetManifest,
    split: Split,
    optics: &OpticalConfig,
    max_phase: f64,
    noise: Option<NoiseModel>,
) -> Result<Vec<Sample>> {
    let images = manifest
        .split(split)
        .map(|e| {
            manifest
                .render(e)
                .map(|img| (e.id.clone(), img))
                .ok_or_else(|| {
                    Error::config(
                        "manifest",
                        format!("entry {} is file-backed; load it first", e.id),
                    )
                })
        })
        .collect::<Result<Vec<_>>>()?;
    simulate(
        images.iter().map(|(id, img)| (id.clone(), img)),
        optics,
        max_phase,
        noise,
    )
}

/// Named collection of test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub name: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellScore {
    pub train_set: String,
    pub test_set: String,
    pub pcc: Stats,
    pub mae: Stats,
}

/// Scores one reconstructor on one set. Any failing sample aborts with its id.
pub fn score(model: &str, recon: &mut dyn Reconstruct, set: &TestSet) -> Result<CellScore> {
    let fail = |sample: &str, e: Error| Error::Evaluation {
        model: model.to_string(),
        test_set: set.name.clone(),
        sample: sample.to_string(),
        reason: e.to_string(),
    };
    if set.samples.is_empty() {
        return Err(Error::Empty("test set has no samples"));
    }
    let mut pccs = Vec::with_capacity(set.samples.len());
    let mut maes = Vec::with_capacity(set.samples.len());
    for s in &set.samples {
        let est = recon
            .reconstruct(&s.measurement)
            .map_err(|e| fail(&s.id, e))?;
        pccs.push(pcc(est.grid(), s.truth.grid()).map_err(|e| fail(&s.id, e))?);
        maes.push(mae(est.grid(), s.truth.grid()).map_err(|e| fail(&s.id, e))?);
    }
    Ok(CellScore {
        train_set: model.to_string(),
        test_set: set.name.clone(),
        pcc: Stats::from_values(&pccs)?,
        mae: Stats::from_values(&maes)?,
    })
}

/// Every model scored on every test set; rows follow `models`, columns `tests`.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreTable {
    pub cells: Vec<CellScore>,
}

pub fn cross_domain_matrix(
    models: &mut [(String, &mut dyn Reconstruct)],
    tests: &[TestSet],
) -> Result<ScoreTable> {
    let mut cells = Vec::with_capacity(models.len() * tests.len());
    for (name, recon) in models.iter_mut() {
        for set in tests {
            cells.push(score(name, &mut **recon, set)?);
        }
    }
    Ok(ScoreTable { cells })
}

pub const SCORE_CSV_HEADER: &str = "train_set,test_set,metric,mean,std,n";

impl ScoreTable {
    pub fn cell(&self, train_set: &str, test_set: &str) -> Option<&CellScore> {
        self.cells
            .iter()
            .find(|c| c.train_set == train_set && c.test_set == test_set)
    }

    /// Two rows per cell (`pcc`, `mae`), values printed with 17 significant
    /// digits so the text is a faithful, reproducible rendering.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCORE_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            for (metric, s) in [("pcc", c.pcc), ("mae", c.mae)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.16e},{:.16e},{}",
                    c.train_set, c.test_set, metric, s.mean, s.std, s.n
                );
            }
        }
        out
    }

    /// Human-readable matrix: rows are training sets, columns test sets.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<&str> = Vec::new();
        let mut cols: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !rows.contains(&c.train_set.as_str()) {
                rows.push(&c.train_set);
            }
            if !cols.contains(&c.test_set.as_str()) {
                cols.push(&c.test_set);
            }
        }
        let width = 34;
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "train \\ test");
        for col in &cols {
            let _ = write!(out, "{col:<width$}");
        }
        out.push('\n');
        for row in &rows {
            let _ = write!(out, "{row:<16}");
            for col in &cols {
                let text = match self.cell(row, col) {
                    Some(c) => format!(
                        "PCC {:.3}±{:.3} MAE {:.3}±{:.3}",
                        c.pcc.mean, c.pcc.std, c.mae.mean, c.mae.std
                    ),
                    None => "-".into(),
                };
                let _ = write!(out, "{text:<width$}");
            }
            out.push('\n');
        }
        out
    }
}
