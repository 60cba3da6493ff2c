//! Shared experiment steps: domain data, training, fitted models, LWOTF and
//! star experiments. Used by the subcommands and by the acceptance checks.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use wotf_core::datasets::{DatasetKind, DatasetManifest, Image8, Split, SplitRatios};
use wotf_core::diagnostics::{
    detect_discontinuities, detect_sign_flips, extract_lwotf, lwotf_fidelity, make_star,
    DetectConfig, LwotfResult, StarPattern,
};
use wotf_core::evaluation::{pcc, simulate, simulate_split, Sample, TestSet};
use wotf_core::nn::{encode_checkpoint, train, Network, TrainConfig, TrainReport, TrainingPair};
use wotf_core::optics::propagate;
use wotf_core::recon::{fit_affine_scale, NeuralReconstructor, Reconstruct, TikhonovInverse};
use wotf_core::rng::{derive_seed, seeded};
use wotf_core::{Grid, IntensityMap, OpticalConfig, PhaseMap};

use crate::config::ExperimentConfig;
use crate::error::{ProbeError, Result};
use crate::formats::write_atomic;

/// Seed streams derived from the experiment seed.
const STREAM_TEXTURE: u64 = 1;
const STREAM_GLYPH: u64 = 2;
const STREAM_HELD_OUT: u64 = 3;
const STREAM_MODEL: u64 = 100;

pub const DOMAINS: [DatasetKind; 2] = [DatasetKind::Texture, DatasetKind::Glyph];

/// Worker threads: `WOTF_PROBE_THREADS` if set, else the available cores.
pub fn worker_count() -> usize {
    std::env::var("WOTF_PROBE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` over `items` on up to `threads` workers; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every item processed"))
        .collect()
}

fn stream(kind: DatasetKind) -> u64 {
    match kind {
        DatasetKind::Texture => STREAM_TEXTURE,
        DatasetKind::Glyph => STREAM_GLYPH,
        DatasetKind::External => STREAM_HELD_OUT,
    }
}

pub fn domain_seed(cfg: &ExperimentConfig, kind: DatasetKind) -> u64 {
    derive_seed(cfg.seed, stream(kind))
}

pub fn domain_manifest(cfg: &ExperimentConfig, kind: DatasetKind) -> Result<DatasetManifest> {
    Ok(DatasetManifest::generated_with_splits(
        kind,
        domain_seed(cfg, kind),
        cfg.datasets.images_per_domain,
        cfg.optics.grid_n,
        SplitRatios {
            train: cfg.datasets.train_fraction,
            validation: cfg.datasets.validation_fraction,
        },
    )?)
}

/// Simulated train/validation/test samples of one synthetic domain.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub name: String,
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: TestSet,
}

pub fn simulate_domain(cfg: &ExperimentConfig, kind: DatasetKind) -> Result<DomainData> {
    let manifest = domain_manifest(cfg, kind)?;
    let sim = |split| simulate_split(&manifest, split, &cfg.optics, cfg.max_phase, cfg.noise);
    Ok(DomainData {
        name: kind.name().to_string(),
        train: sim(Split::Train)?,
        validation: sim(Split::Validation)?,
        test: TestSet {
            name: kind.name().to_string(),
            samples: sim(Split::Test)?,
        },
        manifest,
    })
}

/// Images outside both training domains: i.i.d. uniform 8-bit pixels.
pub fn held_out_set(cfg: &ExperimentConfig, count: usize) -> Result<TestSet> {
    let base = derive_seed(cfg.seed, STREAM_HELD_OUT);
    let images: Vec<(String, Image8)> = (0..count)
        .map(|i| {
            (
                format!("noise-{i:05}"),
                uniform_image(derive_seed(base, i as u64), cfg.optics.grid_n),
            )
        })
        .collect();
    Ok(TestSet {
        name: "noise".into(),
        samples: simulate(
            images.iter().map(|(id, img)| (id.clone(), img)),
            &cfg.optics,
            cfg.max_phase,
            cfg.noise,
        )?,
    })
}

fn uniform_image(seed: u64, n: usize) -> Image8 {
    let mut rng = seeded(seed);
    let pixels = (0..n * n).map(|_| rng.gen::<u8>()).collect();
    Image8::new(n, n, pixels).expect("square image")
}

/// A trained network with its affine correction and provenance.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub name: String,
    pub train_set: String,
    pub seed: u64,
    pub net: Network,
    pub affine: (f64, f64),
    pub report: TrainReport,
}

/// Metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub train_set: String,
    pub seed: u64,
    /// Relative to the model file.
    pub checkpoint: String,
    pub affine: (f64, f64),
    pub losses: Vec<f64>,
}

impl TrainedModel {
    pub fn reconstructor(&self) -> Result<NeuralReconstructor> {
        Ok(NeuralReconstructor::new(self.net.clone(), self.affine)?)
    }

    pub fn model_file(&self, checkpoint: &str) -> ModelFile {
        ModelFile {
            name: self.name.clone(),
            train_set: self.train_set.clone(),
            seed: self.seed,
            checkpoint: checkpoint.to_string(),
            affine: self.affine,
            losses: self.report.losses(),
        }
    }
}

pub fn model_seed(cfg: &ExperimentConfig, kind: DatasetKind, replica: usize) -> u64 {
    derive_seed(
        derive_seed(cfg.seed, STREAM_MODEL + stream(kind)),
        replica as u64,
    )
}

pub struct TrainJob<'a> {
    pub data: &'a DomainData,
    pub replica: usize,
    pub seed: u64,
    /// Overwritten after every epoch when set.
    pub checkpoint: Option<PathBuf>,
}

/// Trains one network on a domain's training split and fits `(a, b)` on its
/// validation split.
pub fn train_model(cfg: &ExperimentConfig, job: &TrainJob) -> Result<TrainedModel> {
    let pairs: Vec<TrainingPair> = job
        .data
        .train
        .iter()
        .map(|s| TrainingPair {
            measurement: s.measurement.grid().clone(),
            phase: s.truth.grid().clone(),
        })
        .collect();
    let tcfg = TrainConfig {
        seed: job.seed,
        ..cfg.train.clone()
    };
    let mut net = Network::build(&cfg.network, job.seed)?;
    let mut io_error = None;
    let report = train(&mut net, &pairs, &tcfg, |_, net| {
        if let Some(path) = &job.checkpoint {
            if let Err(e) = write_atomic(path, &encode_checkpoint(net)) {
                io_error = Some(e);
                return Err(wotf_core::Error::Checkpoint(
                    "checkpoint write failed".into(),
                ));
            }
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let report = report?;
    let affine = fit_on(&mut net, &job.data.validation)?;
    Ok(TrainedModel {
        name: format!("{}-s{}", job.data.name, job.replica),
        train_set: job.data.name.clone(),
        seed: job.seed,
        net,
        affine,
        report,
    })
}

fn fit_on(net: &mut Network, validation: &[Sample]) -> Result<(f64, f64)> {
    let mut raw = NeuralReconstructor::new(net.clone(), (1.0, 0.0))?;
    let grids: Vec<&Grid> = validation.iter().map(|s| s.measurement.grid()).collect();
    let estimates = raw.raw_batch(&grids)?;
    let truths: Vec<Grid> = validation.iter().map(|s| s.truth.grid().clone()).collect();
    Ok(fit_affine_scale(&estimates, &truths)?)
}

pub fn train_all(cfg: &ExperimentConfig, jobs: &[TrainJob]) -> Result<Vec<TrainedModel>> {
    parallel_map(jobs, worker_count(), |job| train_model(cfg, job))
}

/// Measurements for LWOTF extraction: equal parts texture test, glyph test,
/// and held-out noise images.
pub fn lwotf_measurements(domains: &[DomainData], held_out: &TestSet) -> Vec<IntensityMap> {
    let per = domains
        .iter()
        .map(|d| d.test.samples.len())
        .min()
        .unwrap_or(0);
    let mut out: Vec<IntensityMap> = Vec::new();
    for set in domains
        .iter()
        .map(|d| &d.test)
        .chain(std::iter::once(held_out))
    {
        out.extend(set.samples.iter().take(per).map(|s| s.measurement.clone()));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LwotfSummary {
    pub model: String,
    pub n_images: usize,
    pub band: (f64, f64),
    pub rmse: f64,
}

pub fn lwotf_of(
    cfg: &ExperimentConfig,
    name: &str,
    recon: &mut dyn Reconstruct,
    measurements: &[IntensityMap],
) -> Result<(LwotfResult, LwotfSummary)> {
    let l = extract_lwotf(
        recon,
        measurements,
        &cfg.optics,
        cfg.diagnostics.mask_threshold,
    )?;
    let band = cfg.fidelity_band();
    let rmse = lwotf_fidelity(&l, &cfg.optics, band)?;
    let summary = LwotfSummary {
        model: name.to_string(),
        n_images: l.n_images,
        band,
        rmse,
    };
    Ok((l, summary))
}

pub fn oracle(cfg: &ExperimentConfig) -> Result<TikhonovInverse> {
    Ok(TikhonovInverse::new(
        &cfg.optics,
        cfg.diagnostics.eps_nonlinear,
    )?)
}

/// Star object and its simulated measurement on `optics`.
pub fn star_measurement(
    star: &StarPattern,
    optics: &OpticalConfig,
) -> Result<(PhaseMap, IntensityMap)> {
    let f = make_star(star, optics)?;
    let g = propagate(&f, optics)?;
    Ok((f, g))
}

#[derive(Debug, Clone, Serialize)]
pub struct NullTestReport {
    pub periods: u32,
    pub defocus: f64,
    pub pixel_pitch: f64,
    /// Full-depth annulus of the star in pixels.
    pub annulus_px: (f64, f64),
    pub predicted: Vec<(u32, f64)>,
    pub detected: Vec<f64>,
}

impl NullTestReport {
    /// Predicted nulls inside the full-depth annulus.
    pub fn predicted_in_annulus(&self) -> Vec<(u32, f64)> {
        self.predicted
            .iter()
            .copied()
            .filter(|&(_, r)| {
                let px = r / self.pixel_pitch;
                px >= self.annulus_px.0 && px <= self.annulus_px.1
            })
            .collect()
    }

    /// Distance (m) from each in-annulus prediction to the nearest detection.
    pub fn match_errors(&self) -> Vec<(u32, f64)> {
        self.predicted_in_annulus()
            .into_iter()
            .map(|(k, r)| {
                let e = self
                    .detected
                    .iter()
                    .map(|d| (d - r).abs())
                    .fold(f64::INFINITY, f64::min);
                (k, e)
            })
            .collect()
    }
}

pub fn null_test(star: &StarPattern, optics: &OpticalConfig) -> Result<NullTestReport> {
    let (_, g) = star_measurement(star, optics)?;
    let det_cfg = DetectConfig::for_star(star, optics.grid_n)?;
    let detected = detect_discontinuities(&g, star.periods, optics, &det_cfg)?;
    let predicted = wotf_core::diagnostics::predict_null_radii(optics, star.periods, 10_000)
        .into_iter()
        .map(|r| (r.k, r.radius_m))
        .collect();
    Ok(NullTestReport {
        periods: star.periods,
        defocus: optics.defocus,
        pixel_pitch: optics.pixel_pitch,
        annulus_px: star.annulus(optics.grid_n)?,
        predicted,
        detected,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StarReconReport {
    pub model: String,
    /// Flip radii (m) in the reconstruction.
    pub flips: Vec<f64>,
    /// PCC against the truth after both are low-passed to the band limit.
    pub pcc: f64,
}

/// Keeps radial frequencies at or below `cutoff` (cycles/m).
pub fn low_pass(g: &Grid, optics: &OpticalConfig, cutoff: f64) -> Grid {
    let n = g.rows();
    let plan = wotf_core::fft::Fft2d::new(n);
    let mut spec = plan.forward_real(g.as_slice());
    let du = optics.frequency_spacing();
    for r in 0..n {
        let v = wotf_core::fft::signed_index(r, n) as f64 * du;
        for c in 0..n {
            let u = wotf_core::fft::signed_index(c, n) as f64 * du;
            if (u * u + v * v).sqrt() > cutoff {
                spec[r * n + c] = Default::default();
            }
        }
    }
    Grid::from_vec(n, n, plan.inverse_real(spec)).expect("square")
}

pub fn star_reconstruction(
    name: &str,
    recon: &mut dyn Reconstruct,
    star: &StarPattern,
    optics: &OpticalConfig,
    truth: &PhaseMap,
    measurement: &IntensityMap,
    band_limit: f64,
) -> Result<StarReconReport> {
    let est = recon.reconstruct(measurement)?;
    let det_cfg = DetectConfig::for_star(star, optics.grid_n)?;
    let flips = match detect_sign_flips(est.grid(), star.periods, optics.pixel_pitch, &det_cfg) {
        Ok(f) => f,
        Err(wotf_core::Error::NoFringeContrast) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let pcc = pcc(
        &low_pass(est.grid(), optics, band_limit),
        &low_pass(truth.grid(), optics, band_limit),
    )
    .map_err(ProbeError::from)?;
    Ok(StarReconReport {
        model: name.to_string(),
        flips,
        pcc,
    })
}
