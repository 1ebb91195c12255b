//! Flat key = value campaign configuration. Lines are `key = value`,
//! blank lines and `#` comments are ignored; command-line `--set`
//! overrides beat file keys, and the ANISCERT_SEED environment variable
//! beats everything for the seed.

use crate::CliError;
use aniscert_core::cert_math::Norm;
use aniscert_core::distributions::NoiseFamily;
use aniscert_core::npg::{LossVariant, NpgKind};
use aniscert_core::NoiseSpec;
use std::path::{Path, PathBuf};

/// Everything a campaign command can be told. Defaults mirror the usual
/// certification settings (alpha 0.001, n0 100, n 100000).
#[derive(Debug, Clone)]
pub struct Config {
    // dataset
    pub dataset: DatasetSource,
    pub downscale: bool,
    pub synth_d: usize,
    pub synth_classes: usize,
    pub synth_per_class: usize,
    pub synth_separation: f64,
    // noise
    pub family: NoiseFamily,
    pub lambda: f64,
    pub power_exponent: Option<f64>,
    pub norm: Norm,
    // npg
    pub npg: NpgKind,
    pub gamma: f64,
    pub variant: LossVariant,
    pub pattern_norm: Norm,
    pub pattern_kappa: f64,
    pub pattern_iota: f64,
    pub pattern_target_mean: Option<f64>,
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
    // engine
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    pub max_examples: Option<usize>,
    pub workers: usize,
    pub one_sided_predict: bool,
    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub checkpoint_every: usize,
    // files
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub classifier_in: Option<PathBuf>,
    pub classifier_out: Option<PathBuf>,
    pub npg_in: Option<PathBuf>,
    pub npg_out: Option<PathBuf>,
    pub results_out: Option<PathBuf>,
    pub curve_out: Option<PathBuf>,
    pub predictions_out: Option<PathBuf>,
    pub sigma_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSource {
    Synth,
    Idx,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synth,
            downscale: false,
            synth_d: 2,
            synth_classes: 2,
            synth_per_class: 100,
            synth_separation: 2.0,
            family: NoiseFamily::Gaussian,
            lambda: 1.0,
            power_exponent: None,
            norm: Norm::L2,
            npg: NpgKind::Pattern,
            gamma: 1.0,
            variant: LossVariant::MeanSigma,
            pattern_norm: Norm::L2,
            pattern_kappa: 0.0,
            pattern_iota: 1.0,
            pattern_target_mean: None,
            image_height: None,
            image_width: None,
            n0: 100,
            n: 100_000,
            alpha: 0.001,
            seed: 0,
            max_examples: None,
            workers: 1,
            one_sided_predict: false,
            epochs: 20,
            batch_size: 128,
            lr: 1e-2,
            hidden: 128,
            checkpoint_every: 0,
            idx_images: None,
            idx_labels: None,
            classifier_in: None,
            classifier_out: None,
            npg_in: None,
            npg_out: None,
            results_out: None,
            curve_out: None,
            predictions_out: None,
            sigma_out: None,
        }
    }
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

impl Config {
    /// Parse a config file; errors carry line numbers.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| config_err(line, "expected 'key = value'"))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|msg| config_err(line, msg))?;
        }
        Ok(cfg)
    }

    /// Apply `--set key=value` overrides (after the file, before env).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set '{ov}': expected key=value")))?;
            self.set(key.trim(), value.trim())
                .map_err(|msg| CliError::Config(format!("--set {key}: {msg}")))?;
        }
        Ok(())
    }

    /// ANISCERT_SEED overrides the configured seed.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(v) = std::env::var("ANISCERT_SEED") {
            self.seed = v
                .parse()
                .map_err(|_| CliError::Config(format!("ANISCERT_SEED: bad integer '{v}'")))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("key '{key}': bad value '{v}'"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("key '{key}': expected true/false, got '{v}'")),
            }
        }
        let parse_norm = |v: &str| match v {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            _ => Err(format!("key '{key}': unknown norm '{v}'")),
        };
        match key {
            "dataset" => {
                self.dataset = match value {
                    "synth" => DatasetSource::Synth,
                    "idx" => DatasetSource::Idx,
                    _ => return Err(format!("key 'dataset': unknown source '{value}'")),
                }
            }
            "downscale" => self.downscale = flag(key, value)?,
            "synth_d" => self.synth_d = num(key, value)?,
            "synth_classes" => self.synth_classes = num(key, value)?,
            "synth_per_class" => self.synth_per_class = num(key, value)?,
            "synth_separation" => self.synth_separation = num(key, value)?,
            "family" => {
                self.family = match value {
                    "gaussian" => NoiseFamily::Gaussian,
                    "laplace" => NoiseFamily::Laplace,
                    "exp_linf" => NoiseFamily::ExpLinf,
                    "uniform_linf" => NoiseFamily::UniformLinf,
                    "power_law_linf" => NoiseFamily::PowerLawLinf,
                    _ => return Err(format!("key 'family': unknown family '{value}'")),
                }
            }
            "lambda" => self.lambda = num(key, value)?,
            "power_exponent" => self.power_exponent = Some(num(key, value)?),
            "norm" => self.norm = parse_norm(value)?,
            "npg" => {
                self.npg = match value {
                    "pattern" => NpgKind::Pattern,
                    "dataset_wise" => NpgKind::DatasetWise,
                    "certification_wise" => NpgKind::CertificationWise,
                    _ => return Err(format!("key 'npg': unknown kind '{value}'")),
                }
            }
            "gamma" => self.gamma = num(key, value)?,
            "variant" => {
                self.variant = match value {
                    "mean_sigma" => LossVariant::MeanSigma,
                    "min_sigma" => LossVariant::MinSigma,
                    _ => return Err(format!("key 'variant': unknown variant '{value}'")),
                }
            }
            "pattern_norm" => self.pattern_norm = parse_norm(value)?,
            "pattern_kappa" => self.pattern_kappa = num(key, value)?,
            "pattern_iota" => self.pattern_iota = num(key, value)?,
            "pattern_target_mean" => self.pattern_target_mean = Some(num(key, value)?),
            "image_height" => self.image_height = Some(num(key, value)?),
            "image_width" => self.image_width = Some(num(key, value)?),
            "n0" => self.n0 = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_examples" => self.max_examples = Some(num(key, value)?),
            "workers" => self.workers = num(key, value)?,
            "one_sided_predict" => self.one_sided_predict = flag(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "idx_images" => self.idx_images = Some(value.into()),
            "idx_labels" => self.idx_labels = Some(value.into()),
            "classifier_in" => self.classifier_in = Some(value.into()),
            "classifier_out" => self.classifier_out = Some(value.into()),
            "npg_in" => self.npg_in = Some(value.into()),
            "npg_out" => self.npg_out = Some(value.into()),
            "results_out" => self.results_out = Some(value.into()),
            "curve_out" => self.curve_out = Some(value.into()),
            "predictions_out" => self.predictions_out = Some(value.into()),
            "sigma_out" => self.sigma_out = Some(value.into()),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, CliError> {
        NoiseSpec::new(self.family, self.lambda, self.power_exponent)
            .map_err(|e| CliError::Config(format!("noise spec: {e}")))
    }

    /// Spatial shape for pattern and convolutional generators: configured
    /// keys, or a square inferred from the dimension.
    pub fn spatial_shape(&self, d: usize) -> Result<(usize, usize), CliError> {
        match (self.image_height, self.image_width) {
            (Some(h), Some(w)) => {
                if h * w != d {
                    return Err(CliError::Config(format!(
                        "image_height x image_width = {h}x{w} does not match dimension {d}"
                    )));
                }
                Ok((h, w))
            }
            (None, None) => {
                let side = (d as f64).sqrt().round() as usize;
                if side * side == d {
                    Ok((side, side))
                } else {
                    Err(CliError::Config(format!(
                        "dimension {d} is not square; set keys 'image_height' and 'image_width'"
                    )))
                }
            }
            _ => Err(CliError::Config(
                "set both keys 'image_height' and 'image_width' or neither".into(),
            )),
        }
    }

    pub fn require(&self, field: Option<&PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        field
            .cloned()
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))
    }
}
