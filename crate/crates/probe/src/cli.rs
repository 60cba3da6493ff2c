//! `wotf-probe` command line. Every subcommand writes only under `--out` and
//! finishes with `produced_files.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wotf_core::datasets::{calibrate_to_phase, image_entropy, DatasetKind, EntropyReport, Image8};
use wotf_core::diagnostics::{
    diagonal_profile, predict_null_radii, profile_csv, radii_csv, PROFILE_CLIP,
};
use wotf_core::evaluation::{cross_domain_matrix, NoiseModel, TestSet};
use wotf_core::nn::{decode_checkpoint, encode_checkpoint};
use wotf_core::optics::{linearized_forward, propagate};
use wotf_core::recon::{NeuralReconstructor, Reconstruct};
use wotf_core::registration::{register, warp_affine};
use wotf_core::{Grid, IntensityMap, PhaseMap};

use crate::acceptance::{self, Trained};
use crate::config::{ExperimentConfig, Scale};
use crate::error::{ProbeError, Result};
use crate::formats::{decode_grid, decode_pgm, load_grid};
use crate::output::OutputDir;
use crate::pipeline::{
    domain_manifest, held_out_set, lwotf_measurements, lwotf_of, model_seed, null_test, oracle,
    simulate_domain, star_measurement, star_reconstruction, train_model, DomainData, ModelFile,
    TrainJob, TrainedModel, DOMAINS,
};

#[derive(Debug, Parser)]
#[command(
    name = "wotf-probe",
    version,
    about = "Probe how much propagation physics a learned phase-retrieval network has absorbed"
)]
pub struct Cli {
    /// JSON file merged over the preset; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default from the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Additive Gaussian detector noise, sigma relative to the mean intensity.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Domain {
    Texture,
    Glyph,
}

impl From<Domain> for DatasetKind {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Texture => DatasetKind::Texture,
            Domain::Glyph => DatasetKind::Glyph,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dataset manifest and its images as PGM.
    GenData {
        #[arg(long, value_enum)]
        kind: Domain,
        /// Image count (default from the config).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Per-image Shannon entropy of a generated dataset or of PGM files.
    Entropy {
        #[arg(long, value_enum, conflicts_with = "images")]
        kind: Option<Domain>,
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 32)]
        bins: usize,
    },
    /// Propagate a phase map (WPGD in radians, or PGM calibrated to the phase range).
    Simulate {
        #[arg(long)]
        phase: PathBuf,
        /// Use the weak-object linearization instead of the exact model.
        #[arg(long)]
        linearized: bool,
    },
    /// Train one network on a domain and fit its affine correction.
    Train {
        #[arg(long, value_enum)]
        kind: Domain,
        #[arg(long, default_value_t = 0)]
        replica: usize,
    },
    /// Reconstruct phase from an intensity map.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Learned WOTF of one or more reconstructors against the 2 sin theory.
    Lwotf {
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Star-pattern null positions and, optionally, reconstructions of the star.
    StarTest {
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Affine NMI registration of a moving image onto a fixed image.
    Register {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
    },
    /// Cross-domain PCC/MAE matrix over the texture and glyph test sets.
    Evaluate {
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Full pipeline: data, training, LWOTF, star test, cross-domain matrix and
    /// the acceptance summary.
    Reproduce,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model JSON written by `train`.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    /// Use the regularized WOTF inverse.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct ModelsArg {
    /// Model JSON files written by `train`.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Include the regularized WOTF inverse.
    #[arg(long)]
    pub oracle: bool,
}

pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(cli.scale, p)?,
        None => ExperimentConfig::preset(cli.scale),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    if let Some(sigma) = cli.noise {
        cfg.noise = Some(NoiseModel {
            sigma,
            seed: wotf_core::rng::derive_seed(cfg.seed, 7),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the parsed command; the returned value is printed as the summary.
pub fn execute(cli: &Cli) -> Result<serde_json::Value> {
    let cfg = resolve_config(cli)?;
    let mut out = OutputDir::new(&cfg.out)?;
    out.write_json("config.json", &cfg)?;
    let summary = match &cli.command {
        Command::GenData { kind, count } => gen_data(&cfg, &mut out, (*kind).into(), *count)?,
        Command::Entropy { kind, images, bins } => entropy(&cfg, &mut out, *kind, images, *bins)?,
        Command::Simulate { phase, linearized } => simulate(&cfg, &mut out, phase, *linearized)?,
        Command::Train { kind, replica } => train(&cfg, &mut out, (*kind).into(), *replica)?,
        Command::Reconstruct { input, model } => reconstruct(&cfg, &mut out, input, model)?,
        Command::Lwotf { models } => lwotf(&cfg, &mut out, load_models(&cfg, models)?)?,
        Command::StarTest { models } => star_test(&cfg, &mut out, load_models(&cfg, models)?)?,
        Command::Register { moving, fixed } => registration(&cfg, &mut out, moving, fixed)?,
        Command::Evaluate { models } => evaluate(&cfg, &mut out, load_models(&cfg, models)?)?,
        Command::Reproduce => reproduce(&cfg, &mut out)?,
    };
    out.write_json("summary.json", &summary)?;
    out.finish()?;
    Ok(summary)
}

fn json(v: impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn gen_data(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    kind: DatasetKind,
    count: Option<usize>,
) -> Result<serde_json::Value> {
    let mut cfg = cfg.clone();
    if let Some(c) = count {
        cfg.datasets.images_per_domain = c;
    }
    let manifest = domain_manifest(&cfg, kind)?;
    let dir = kind.name();
    for e in &manifest.entries {
        let img = manifest.render(e).expect("generated entry");
        out.write_pgm(&format!("{dir}/images/{}.pgm", e.id), &img)?;
    }
    out.write_json(&format!("{dir}/manifest.json"), &manifest)?;
    Ok(serde_json::json!({ "kind": dir, "count": manifest.entries.len(), "seed": manifest.seed }))
}

fn entropy(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    kind: Option<Domain>,
    images: &[PathBuf],
    bins: usize,
) -> Result<serde_json::Value> {
    let (name, imgs): (String, Vec<(String, Image8)>) = if images.is_empty() {
        let kind: DatasetKind = kind
            .ok_or_else(|| ProbeError::Usage("entropy needs --kind or --images".into()))?
            .into();
        let manifest = domain_manifest(cfg, kind)?;
        let imgs = manifest
            .entries
            .iter()
            .map(|e| (e.id.clone(), manifest.render(e).expect("generated entry")))
            .collect();
        (kind.name().to_string(), imgs)
    } else {
        let imgs = images
            .iter()
            .map(|p| Ok((p.display().to_string(), crate::formats::load_pgm(p)?)))
            .collect::<Result<_>>()?;
        ("images".to_string(), imgs)
    };
    let bits = imgs
        .iter()
        .map(|(_, i)| image_entropy(i))
        .collect::<wotf_core::Result<Vec<_>>>()?;
    let report = EntropyReport::from_entropies(bits.clone(), bins)?;
    let mut csv = String::from("id,bits\n");
    for ((id, _), b) in imgs.iter().zip(&bits) {
        csv.push_str(&format!("{id},{b}\n"));
    }
    out.write_text(&format!("entropy/{name}.csv"), &csv)?;
    out.write_json(&format!("entropy/{name}.json"), &report)?;
    Ok(serde_json::json!({
        "dataset": name,
        "n_images": bits.len(),
        "mean": report.mean,
        "std_dev": report.std_dev,
    }))
}

/// Reads a phase map: WPGD files are radians, anything else is parsed as PGM
/// and calibrated to `[0, max_phase]`.
fn load_phase(cfg: &ExperimentConfig, path: &Path) -> Result<PhaseMap> {
    let bytes = std::fs::read(path).map_err(|e| ProbeError::io(path, e))?;
    let phase = if bytes.starts_with(crate::formats::GRID_MAGIC) {
        PhaseMap::new(decode_grid(&bytes, path)?)?
    } else {
        calibrate_to_phase(&decode_pgm(&bytes, path)?, cfg.max_phase)?
    };
    phase
        .grid()
        .expect_square(cfg.optics.grid_n)
        .map_err(|e| ProbeError::format(path, e.to_string()))?;
    Ok(phase)
}

fn load_image_grid(path: &Path) -> Result<Grid> {
    let bytes = std::fs::read(path).map_err(|e| ProbeError::io(path, e))?;
    if bytes.starts_with(crate::formats::GRID_MAGIC) {
        decode_grid(&bytes, path)
    } else {
        Ok(decode_pgm(&bytes, path)?.to_grid())
    }
}

fn simulate(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    phase: &Path,
    linearized: bool,
) -> Result<serde_json::Value> {
    let f = load_phase(cfg, phase)?;
    let mut g = if linearized {
        linearized_forward(&f, &cfg.optics)?
    } else {
        propagate(&f, &cfg.optics)?
    };
    if let Some(noise) = cfg.noise {
        let mut rng = wotf_core::rng::seeded(noise.seed);
        for v in g.0.as_mut_slice() {
            *v = (*v + noise.sigma * wotf_core::rng::standard_normal(&mut rng)).max(0.0);
        }
    }
    out.write_grid("intensity", g.grid())?;
    let (lo, hi) = g.grid().min_max();
    Ok(
        serde_json::json!({ "model": if linearized { "linearized" } else { "exact" }, "min": lo, "max": hi }),
    )
}

const MODELS_DIR: &str = "models";

fn save_model(out: &mut OutputDir, m: &TrainedModel) -> Result<PathBuf> {
    let ckpt = format!("{}.wpnn", m.name);
    out.write(&format!("{MODELS_DIR}/{ckpt}"), &encode_checkpoint(&m.net))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in m.report.losses().iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    out.write_text(&format!("{MODELS_DIR}/{}.losses.csv", m.name), &csv)?;
    out.write_json(
        &format!("{MODELS_DIR}/{}.json", m.name),
        &m.model_file(&ckpt),
    )
}

fn train(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    kind: DatasetKind,
    replica: usize,
) -> Result<serde_json::Value> {
    let data = simulate_domain(cfg, kind)?;
    let t = Instant::now();
    let m = train_model(
        cfg,
        &TrainJob {
            data: &data,
            replica,
            seed: model_seed(cfg, kind, replica),
            checkpoint: Some(out.path(&format!(
                "{MODELS_DIR}/{}-s{replica}.partial.wpnn",
                kind.name()
            ))),
        },
    )?;
    let _ = std::fs::remove_file(out.path(&format!(
        "{MODELS_DIR}/{}-s{replica}.partial.wpnn",
        kind.name()
    )));
    let path = save_model(out, &m)?;
    Ok(serde_json::json!({
        "model": m.name,
        "model_file": path,
        "affine": m.affine,
        "final_loss": m.report.losses().last(),
        "seconds": t.elapsed().as_secs_f64(),
    }))
}

/// A loaded reconstructor and its display name.
struct Loaded {
    name: String,
    recon: Box<dyn Reconstruct>,
}

fn load_model(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| ProbeError::io(path, e))?;
    let mf: ModelFile =
        serde_json::from_str(&text).map_err(|e| ProbeError::format(path, e.to_string()))?;
    let ckpt = path.parent().unwrap_or(Path::new(".")).join(&mf.checkpoint);
    let bytes = std::fs::read(&ckpt).map_err(|e| ProbeError::io(&ckpt, e))?;
    let net = decode_checkpoint(&bytes).map_err(|e| ProbeError::format(&ckpt, e.to_string()))?;
    Ok(Loaded {
        name: mf.name,
        recon: Box::new(NeuralReconstructor::new(net, mf.affine)?),
    })
}

fn oracle_loaded(cfg: &ExperimentConfig) -> Result<Loaded> {
    Ok(Loaded {
        name: "oracle".into(),
        recon: Box::new(oracle(cfg)?),
    })
}

fn load_models(cfg: &ExperimentConfig, arg: &ModelsArg) -> Result<Vec<Loaded>> {
    let mut v = arg
        .models
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>>>()?;
    if arg.oracle {
        v.push(oracle_loaded(cfg)?);
    }
    Ok(v)
}

fn reconstruct(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    input: &Path,
    model: &ModelArg,
) -> Result<serde_json::Value> {
    let g = IntensityMap::new(load_grid(input)?)?;
    let mut m = match &model.model {
        Some(p) => load_model(p)?,
        None => oracle_loaded(cfg)?,
    };
    let f = m.recon.reconstruct(&g)?;
    out.write_grid("phase", f.grid())?;
    let (lo, hi) = f.grid().min_max();
    Ok(serde_json::json!({ "model": m.name, "min": lo, "max": hi }))
}

fn test_domains(cfg: &ExperimentConfig) -> Result<(Vec<DomainData>, TestSet)> {
    let domains = DOMAINS
        .iter()
        .map(|&k| simulate_domain(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let held_out = held_out_set(cfg, domains[0].test.samples.len())?;
    Ok((domains, held_out))
}

fn lwotf_with(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    models: &mut [(String, &mut dyn Reconstruct)],
    domains: &[DomainData],
    held_out: &TestSet,
) -> Result<serde_json::Value> {
    let meas = lwotf_measurements(domains, held_out);
    let theory = wotf_core::diagnostics::theoretical_ratio(&cfg.optics);
    let tp = diagonal_profile(&theory, PROFILE_CLIP);
    out.write_text("lwotf/theory.main.csv", &profile_csv(&tp.main))?;
    out.write_text("lwotf/theory.anti.csv", &profile_csv(&tp.anti))?;
    let mut summaries = Vec::new();
    for (name, recon) in models.iter_mut() {
        let (l, s) = lwotf_of(cfg, name, &mut **recon, &meas)?;
        let p = diagonal_profile(&l.grid, PROFILE_CLIP);
        out.write_text(&format!("lwotf/{name}.main.csv"), &profile_csv(&p.main))?;
        out.write_text(&format!("lwotf/{name}.anti.csv"), &profile_csv(&p.anti))?;
        let centered = Grid::from_vec(l.grid.side(), l.grid.side(), l.grid.values().to_vec())?;
        out.write(
            &format!("lwotf/{name}.wpgd"),
            &crate::formats::encode_grid(&centered),
        )?;
        summaries.push(s);
    }
    out.write_json("lwotf/summary.json", &summaries)?;
    Ok(json(&summaries))
}

fn as_refs(models: &mut [Loaded]) -> Vec<(String, &mut dyn Reconstruct)> {
    models
        .iter_mut()
        .map(|m| (m.name.clone(), &mut *m.recon as &mut dyn Reconstruct))
        .collect()
}

fn require(models: &[Loaded]) -> Result<()> {
    if models.is_empty() {
        return Err(ProbeError::Usage(
            "give at least one --model or --oracle".into(),
        ));
    }
    Ok(())
}

fn lwotf(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    mut models: Vec<Loaded>,
) -> Result<serde_json::Value> {
    require(&models)?;
    let (domains, held_out) = test_domains(cfg)?;
    lwotf_with(cfg, out, &mut as_refs(&mut models), &domains, &held_out)
}

fn star_with(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    models: &mut [(String, &mut dyn Reconstruct)],
) -> Result<serde_json::Value> {
    let nt = &cfg.diagnostics.null_test;
    let report = null_test(&nt.star, &nt.optics)?;
    out.write_json("star/nulls.json", &report)?;
    out.write_text(
        "star/predicted_radii.csv",
        &radii_csv(&predict_null_radii(&nt.optics, nt.star.periods, 10_000)),
    )?;
    let (f, g) = star_measurement(&nt.star, &nt.optics)?;
    out.write_grid("star/null_test_phase", f.grid())?;
    out.write_grid("star/null_test_intensity", g.grid())?;

    let star = &cfg.diagnostics.star_test.star;
    let (truth, meas) = star_measurement(star, &cfg.optics)?;
    out.write_grid("star/phase", truth.grid())?;
    out.write_grid("star/intensity", meas.grid())?;
    let band = acceptance::star_band_limit(&cfg.optics);
    let mut recons = Vec::new();
    for (name, recon) in models.iter_mut() {
        let est = recon.reconstruct(&meas)?;
        out.write_grid(&format!("star/{name}"), est.grid())?;
        recons.push(star_reconstruction(
            name,
            &mut **recon,
            star,
            &cfg.optics,
            &truth,
            &meas,
            band,
        )?);
    }
    out.write_json("star/reconstructions.json", &recons)?;
    Ok(serde_json::json!({
        "null_test": {
            "match_errors_px": report
                .match_errors()
                .iter()
                .map(|&(k, e)| (k, e / report.pixel_pitch))
                .collect::<Vec<_>>(),
            "detected_m": report.detected,
        },
        "reconstructions": recons,
    }))
}

fn star_test(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    mut models: Vec<Loaded>,
) -> Result<serde_json::Value> {
    star_with(cfg, out, &mut as_refs(&mut models))
}

fn registration(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    moving: &Path,
    fixed: &Path,
) -> Result<serde_json::Value> {
    let m = load_image_grid(moving)?;
    let f = load_image_grid(fixed)?;
    if !m.same_shape(&f) {
        return Err(ProbeError::Usage(format!(
            "moving is {}x{} but fixed is {}x{}",
            m.rows(),
            m.cols(),
            f.rows(),
            f.cols()
        )));
    }
    let r = register(&m, &f, &cfg.registration.register)?;
    out.write_grid("registered", &warp_affine(&m, &r.params)?)?;
    let mut csv = String::from("run,step,objective\n");
    for (i, h) in r.runs.iter().enumerate() {
        for (k, v) in h.iter().enumerate() {
            csv.push_str(&format!("{i},{k},{v}\n"));
        }
    }
    out.write_text("registration_history.csv", &csv)?;
    let summary = serde_json::json!({ "params": r.params, "nmi": r.nmi, "runs": r.runs.len() });
    out.write_json("registration.json", &summary)?;
    Ok(summary)
}

fn evaluate_with(
    out: &mut OutputDir,
    models: &mut [(String, &mut dyn Reconstruct)],
    domains: &[DomainData],
) -> Result<serde_json::Value> {
    let tests: Vec<TestSet> = domains.iter().map(|d| d.test.clone()).collect();
    let table = cross_domain_matrix(models, &tests)?;
    out.write_text("evaluation/scores.csv", &table.to_csv())?;
    out.write_text("evaluation/scores.txt", &table.to_text())?;
    out.write_json("evaluation/scores.json", &table)?;
    Ok(json(&table))
}

fn evaluate(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    mut models: Vec<Loaded>,
) -> Result<serde_json::Value> {
    require(&models)?;
    let (domains, _) = test_domains(cfg)?;
    evaluate_with(out, &mut as_refs(&mut models), &domains)
}

fn reproduce(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value> {
    let mut entropies = Vec::new();
    for kind in DOMAINS {
        let d = match kind {
            DatasetKind::Texture => Domain::Texture,
            _ => Domain::Glyph,
        };
        entropies.push(entropy(cfg, out, Some(d), &[], 32)?);
    }

    let mut results: Vec<acceptance::CriterionResult> =
        (1..=5).map(|id| acceptance::run(cfg, id)).collect();
    let t = Instant::now();
    let trained = Trained::build(cfg);
    let training = t.elapsed();
    let mut artifacts = serde_json::Map::new();
    if let Ok(tr) = &trained {
        let mut models: Vec<&TrainedModel> = Vec::new();
        for (tm, gm) in &tr.pairs {
            models.push(tm);
            models.push(gm);
        }
        for m in &models {
            save_model(out, m)?;
        }
        let mut loaded: Vec<Loaded> = models
            .iter()
            .map(|m| {
                Ok(Loaded {
                    name: m.name.clone(),
                    recon: Box::new(m.reconstructor()?),
                })
            })
            .collect::<Result<_>>()?;
        loaded.push(oracle_loaded(cfg)?);
        let mut refs = as_refs(&mut loaded);
        artifacts.insert(
            "evaluation".into(),
            evaluate_with(out, &mut refs, &tr.domains)?,
        );
        artifacts.insert(
            "lwotf".into(),
            lwotf_with(cfg, out, &mut refs, &tr.domains, &tr.held_out)?,
        );
        artifacts.insert("star".into(), star_with(cfg, out, &mut refs)?);
    }
    results.extend(acceptance::run_with_models(cfg, &trained, training, |_| {}));
    let text: String = results.iter().map(|r| r.line() + "\n").collect();
    out.write_text("acceptance.txt", &text)?;
    out.write_json("acceptance.json", &results)?;
    trained?;
    let passed = results.iter().filter(|r| r.passed).count();
    Ok(serde_json::json!({
        "entropy": entropies,
        "training_seconds": training.as_secs_f64(),
        "acceptance": { "passed": passed, "failed": results.len() - passed, "criteria": results },
        "artifacts": artifacts,
    }))
}

/// Parses `args`, runs the command and returns the process exit code. The
/// summary goes to stdout; failures print an error record as JSON on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("serializable")
            );
            0
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::to_string(&e.record()).expect("serializable")
            );
            1
        }
    }
}
