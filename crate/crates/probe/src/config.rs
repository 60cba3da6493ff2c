//! Experiment configuration. A JSON file is merged over the preset chosen by
//! `--scale`; unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wotf_core::diagnostics::{StarPattern, StarProfile, DEFAULT_MASK_THRESHOLD};
use wotf_core::evaluation::NoiseModel;
use wotf_core::nn::{NetworkConfig, TrainConfig};
use wotf_core::recon::{EPS_LINEARIZED, EPS_NONLINEAR};
use wotf_core::registration::RegisterConfig;
use wotf_core::OpticalConfig;

use crate::error::{ProbeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// 32 x 32 grid, small network; minutes on a laptop.
    #[default]
    Desk,
    /// 256 x 256 grid and the full 4/4/2 network; hours to days on a CPU.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetsConfig {
    /// Images generated per domain, split into train/validation/test.
    pub images_per_domain: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for DatasetsConfig {
    fn default() -> Self {
        // 200 / 25 / 25.
        DatasetsConfig {
            images_per_domain: 250,
            train_fraction: 0.8,
            validation_fraction: 0.1,
        }
    }
}

/// Star used for the reconstruction comparison, drawn on the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StarTestConfig {
    pub star: StarPattern,
}

impl Default for StarTestConfig {
    fn default() -> Self {
        let mut star = StarPattern::new(16, StarProfile::Binary, 0.1 * PI);
        star.taper = 1.0;
        StarTestConfig { star }
    }
}

/// Standalone optics for the quantitative null test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullTestConfig {
    pub optics: OpticalConfig,
    pub star: StarPattern,
}

impl Default for NullTestConfig {
    fn default() -> Self {
        NullTestConfig {
            optics: OpticalConfig {
                wavelength: 633e-9,
                defocus: 0.15,
                pixel_pitch: 70e-6,
                grid_n: 128,
            },
            star: StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub mask_threshold: f64,
    pub eps_linearized: f64,
    pub eps_nonlinear: f64,
    /// Radial band (cycles/m) for LWOTF fidelity; `None` means from DC to the
    /// first null.
    pub fidelity_band: Option<(f64, f64)>,
    pub star_test: StarTestConfig,
    pub null_test: NullTestConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            eps_linearized: EPS_LINEARIZED,
            eps_nonlinear: EPS_NONLINEAR,
            fidelity_band: None,
            star_test: StarTestConfig::default(),
            null_test: NullTestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationTrialConfig {
    pub trials: usize,
    pub grid_n: usize,
    pub max_shift_px: f64,
    pub max_rotation_deg: f64,
    pub max_scale_change: f64,
    pub register: RegisterConfig,
}

impl Default for RegistrationTrialConfig {
    fn default() -> Self {
        RegistrationTrialConfig {
            trials: 10,
            grid_n: 128,
            max_shift_px: 5.0,
            max_rotation_deg: 3.0,
            max_scale_change: 0.02,
            register: RegisterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: String,
    pub optics: OpticalConfig,
    /// Phase assigned to pixel value 255 (radians).
    pub max_phase: f64,
    pub datasets: DatasetsConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Independent trainings per domain in `reproduce`.
    pub model_seeds: usize,
    pub noise: Option<NoiseModel>,
    pub diagnostics: DiagnosticsConfig,
    pub registration: RegistrationTrialConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Scale::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        let desk = ExperimentConfig {
            seed: 0,
            out: "wotf-out".into(),
            optics: OpticalConfig::default(),
            max_phase: 0.1 * PI,
            datasets: DatasetsConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            model_seeds: 3,
            noise: None,
            diagnostics: DiagnosticsConfig::default(),
            registration: RegistrationTrialConfig::default(),
        };
        match scale {
            Scale::Desk => desk,
            Scale::Paper => {
                let mut star = StarPattern::new(50, StarProfile::Sinusoidal, 0.1 * PI);
                star.taper = 4.0;
                ExperimentConfig {
                    optics: OpticalConfig::paper_scale(),
                    network: NetworkConfig::paper_scale(),
                    datasets: DatasetsConfig {
                        images_per_domain: 1250,
                        ..DatasetsConfig::default()
                    },
                    model_seeds: 1,
                    diagnostics: DiagnosticsConfig {
                        star_test: StarTestConfig { star },
                        ..DiagnosticsConfig::default()
                    },
                    ..desk
                }
            }
        }
    }

    /// Preset for `scale` with the JSON document `overrides` merged on top.
    pub fn from_json(scale: Scale, overrides: &str, origin: &Path) -> Result<Self> {
        let patch: Value = serde_json::from_str(overrides)
            .map_err(|e| ProbeError::format(origin, format!("invalid JSON: {e}")))?;
        if !patch.is_object() {
            return Err(ProbeError::format(
                origin,
                "configuration must be a JSON object",
            ));
        }
        let mut base = serde_json::to_value(Self::preset(scale)).expect("serializable preset");
        merge(&mut base, patch);
        let cfg: ExperimentConfig = serde_json::from_value(base).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map_or_else(|| "config".to_string(), str::to_string);
            ProbeError::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(scale: Scale, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ProbeError::io(path, e))?;
        Self::from_json(scale, &text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.network.input_side != self.optics.grid_n {
            return Err(ProbeError::config(
                "network.input_side",
                format!("must equal optics.grid_n ({})", self.optics.grid_n),
            ));
        }
        if !(self.max_phase > 0.0 && self.max_phase <= PI) {
            return Err(ProbeError::config("max_phase", "must lie in (0, pi]"));
        }
        let d = &self.datasets;
        if d.images_per_domain < 10 {
            return Err(ProbeError::config(
                "datasets.images_per_domain",
                "must be at least 10",
            ));
        }
        if !(d.train_fraction > 0.0
            && d.validation_fraction > 0.0
            && d.train_fraction + d.validation_fraction < 1.0)
        {
            return Err(ProbeError::config(
                "datasets.train_fraction",
                "train and validation fractions must be positive and leave room for a test split",
            ));
        }
        if self.model_seeds == 0 {
            return Err(ProbeError::config("model_seeds", "must be at least 1"));
        }
        if let Some(n) = &self.noise {
            if !(n.sigma >= 0.0 && n.sigma.is_finite()) {
                return Err(ProbeError::config(
                    "noise.sigma",
                    "must be finite and non-negative",
                ));
            }
        }
        let diag = &self.diagnostics;
        if !(diag.mask_threshold >= 0.0) {
            return Err(ProbeError::config(
                "diagnostics.mask_threshold",
                "must be non-negative",
            ));
        }
        if !(diag.eps_linearized > 0.0 && diag.eps_nonlinear > 0.0) {
            return Err(ProbeError::config(
                "diagnostics.eps_nonlinear",
                "regularization must be positive",
            ));
        }
        if let Some((lo, hi)) = diag.fidelity_band {
            if !(lo >= 0.0 && hi > lo) {
                return Err(ProbeError::config(
                    "diagnostics.fidelity_band",
                    "must satisfy 0 <= lo < hi",
                ));
            }
        }
        diag.star_test.star.annulus(self.optics.grid_n)?;
        diag.null_test.optics.validate()?;
        diag.null_test.star.annulus(diag.null_test.optics.grid_n)?;
        let r = &self.registration;
        if r.trials == 0 || r.grid_n < 16 {
            return Err(ProbeError::config(
                "registration.trials",
                "need at least one trial on a 16+ grid",
            ));
        }
        r.register.simplex.validate()?;
        Ok(())
    }

    /// Fidelity band, defaulting to DC up to the first null.
    pub fn fidelity_band(&self) -> (f64, f64) {
        self.diagnostics.fidelity_band.unwrap_or((
            0.0,
            self.optics.null_frequency(1).min(self.optics.nyquist()),
        ))
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(Scale::Desk, text, Path::new("cfg.json"))
    }

    #[test]
    fn presets_validate() {
        ExperimentConfig::preset(Scale::Desk).validate().unwrap();
        ExperimentConfig::preset(Scale::Paper).validate().unwrap();
    }

    #[test]
    fn partial_override_keeps_the_rest() {
        let cfg = parse(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.optics, OpticalConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse(r#"{"sede": 1}"#).unwrap_err();
        assert!(
            matches!(&err, ProbeError::Config { field, .. } if field == "sede"),
            "{err}"
        );
        assert!(parse(r#"{"train": {"epoch": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = parse(r#"{"optics": {"grid_n": 64}}"#).unwrap_err();
        assert!(
            matches!(&err, ProbeError::Config { field, .. } if field == "network.input_side"),
            "{err}"
        );
        assert!(parse(r#"{"max_phase": -1}"#).is_err());
        assert!(parse("[1]").is_err());
        assert!(parse("{").is_err());
    }

    #[test]
    fn default_band_ends_at_first_null() {
        let cfg = ExperimentConfig::default();
        let (lo, hi) = cfg.fidelity_band();
        assert_eq!(lo, 0.0);
        assert!((cfg.optics.wotf_at(hi, 0.0)).abs() < 1e-9);
    }
}
