//! Settings resolved from defaults, an optional TOML file, and flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use cogload::{
    BandSet, FilterSpec, Modality, Normalization, PipelineConfig, Regularization, SynthConfig,
};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_FOLDS: usize = 2;
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_N_PERM: usize = 1000;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_K_PC: usize = 3;
/// Window lengths the calibration protocol supports.
pub const WINDOWS: [f64; 2] = [2.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    None,
    Invariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Minmax,
    Percentile,
}

/// Flags shared by every command. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 1).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// EEG bands: low3 (delta, theta, alpha) or all5 (default).
    #[arg(long, global = true, value_name = "SET")]
    pub band_set: Option<BandSet>,
    /// Window length in seconds: 2 (default) or 10.
    #[arg(long, global = true, value_name = "SECONDS")]
    pub window: Option<f64>,
    /// Sliding step in seconds for use sessions (default 1).
    #[arg(long, global = true, value_name = "SECONDS")]
    pub step: Option<f64>,
    /// Spatial filter regularization (default none).
    #[arg(long, global = true, value_enum)]
    pub reg: Option<RegKind>,
    /// Invariance penalty weight (default 1).
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Principal components of the context difference to penalize (default 3).
    #[arg(long, global = true)]
    pub k_pc: Option<usize>,
    /// Cross-validation folds (default 2).
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Significance level (default 0.01).
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Label permutations (default 1000, at least 100).
    #[arg(long, global = true)]
    pub n_perm: Option<usize>,
    /// Output directory (default current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated modalities from EEG, ECG, GSR (default EEG).
    #[arg(long, global = true, value_delimiter = ',')]
    pub modalities: Option<Vec<String>>,
    /// Index normalization (default minmax).
    #[arg(long, global = true, value_enum)]
    pub normalization: Option<NormKind>,
    /// Spatial filters per band (default 6).
    #[arg(long, global = true)]
    pub filters: Option<usize>,
    /// Calibration recording.
    #[arg(long, global = true, value_name = "FILE")]
    pub recording: Option<PathBuf>,
    /// Calibration events.
    #[arg(long, global = true, value_name = "FILE")]
    pub events: Option<PathBuf>,
    /// Use-session recording.
    #[arg(long, global = true, value_name = "FILE")]
    pub use_recording: Option<PathBuf>,
    /// Use-session task intervals.
    #[arg(long, global = true, value_name = "FILE")]
    pub tasks: Option<PathBuf>,
    /// Model file to write (calibrate) or read (estimate).
    #[arg(long, global = true, value_name = "FILE")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePaths {
    recording: Option<PathBuf>,
    events: Option<PathBuf>,
    use_recording: Option<PathBuf>,
    tasks: Option<PathBuf>,
    model: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    band_set: Option<BandSet>,
    window_seconds: Option<f64>,
    step_seconds: Option<f64>,
    n_filters: Option<usize>,
    filter_order: Option<usize>,
    regularization: Option<RegKind>,
    lambda: Option<f64>,
    k_pc: Option<usize>,
    modalities: Option<Vec<String>>,
    folds: Option<usize>,
    alpha: Option<f64>,
    n_perm: Option<usize>,
    out_dir: Option<PathBuf>,
    normalization: Option<NormKind>,
    #[serde(default)]
    paths: FilePaths,
    synth: Option<toml::Table>,
}

#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub recording: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub use_recording: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Paths {
    pub fn require(&self, which: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
        which
            .clone()
            .ok_or_else(|| CliError::validation(format!("missing input: pass --{flag} or set it under [paths]")))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    /// Window or step came from the file or a flag rather than the defaults.
    pub window_explicit: bool,
    pub step_explicit: bool,
    pub folds: usize,
    pub alpha: f64,
    pub n_perm: usize,
    pub out_dir: PathBuf,
    pub normalization: Normalization,
    pub paths: Paths,
    pub synth: SynthConfig,
}

fn parse_modalities(raw: &[String]) -> Result<Vec<Modality>, CliError> {
    let mut out = Vec::new();
    for s in raw {
        let m = match s.trim().to_ascii_uppercase().as_str() {
            "EEG" => Modality::Eeg,
            "ECG" => Modality::Ecg,
            "GSR" => Modality::Gsr,
            other => {
                return Err(CliError::validation(format!(
                    "unknown modality `{other}` (EEG, ECG, GSR)"
                )))
            }
        };
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

/// Relative paths in a config file are taken relative to that file.
fn anchor(base: Option<&Path>, p: Option<PathBuf>) -> Option<PathBuf> {
    match (base, p) {
        (Some(dir), Some(p)) if p.is_relative() => Some(dir.join(p)),
        (_, p) => p,
    }
}

fn synth_config(table: Option<toml::Table>) -> Result<SynthConfig, CliError> {
    let Some(table) = table else {
        return Ok(SynthConfig::default());
    };
    let defaults = toml::Value::try_from(SynthConfig::default())
        .map_err(|e| CliError::validation(format!("synth defaults: {e}")))?;
    let mut merged = match defaults {
        toml::Value::Table(t) => t,
        _ => unreachable!("SynthConfig serializes to a table"),
    };
    for (k, v) in table {
        merged.insert(k, v);
    }
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e| CliError::validation(format!("[synth]: {e}")))
}

impl Settings {
    pub fn resolve(o: &Overrides) -> Result<Settings, CliError> {
        let (file, base) = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
                let file: FileConfig = toml::from_str(&text)
                    .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let base = base.as_deref();

        let synth_seed = file.synth.as_ref().and_then(|t| t.get("seed")).is_some();
        let mut synth = synth_config(file.synth)?;
        let seed = o
            .seed
            .or(file.seed)
            .unwrap_or(if synth_seed { synth.seed } else { DEFAULT_SEED });
        synth.seed = seed;

        let window = o.window.or(file.window_seconds);
        let step = o.step.or(file.step_seconds);
        let reg = o.reg.or(file.regularization).unwrap_or(RegKind::None);
        let lambda = o.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA);
        let k = o.k_pc.or(file.k_pc).unwrap_or(DEFAULT_K_PC);
        let modalities = match o.modalities.as_ref().or(file.modalities.as_ref()) {
            Some(raw) => parse_modalities(raw)?,
            None => vec![Modality::Eeg],
        };
        let defaults = PipelineConfig::default();
        let pipeline = PipelineConfig {
            band_set: o.band_set.or(file.band_set).unwrap_or(defaults.band_set),
            window_seconds: window.unwrap_or(defaults.window_seconds),
            step_seconds: step.unwrap_or(defaults.step_seconds),
            n_filters: o.filters.or(file.n_filters).unwrap_or(defaults.n_filters),
            filter: file.filter_order.map_or(defaults.filter, |order| FilterSpec { order }),
            regularization: match reg {
                RegKind::None => Regularization::None,
                RegKind::Invariant => Regularization::Invariant { lambda, k },
            },
            modalities,
            ..defaults
        };
        let normalization = match o.normalization.or(file.normalization).unwrap_or(NormKind::Minmax) {
            NormKind::Minmax => Normalization::MinMax,
            NormKind::Percentile => Normalization::robust(),
        };
        let fp = file.paths;
        let settings = Settings {
            seed,
            pipeline,
            window_explicit: window.is_some(),
            step_explicit: step.is_some(),
            folds: o.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS),
            alpha: o.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            n_perm: o.n_perm.or(file.n_perm).unwrap_or(DEFAULT_N_PERM),
            out_dir: o
                .out_dir
                .clone()
                .or_else(|| anchor(base, file.out_dir))
                .unwrap_or_else(|| PathBuf::from(".")),
            normalization,
            paths: Paths {
                recording: o.recording.clone().or_else(|| anchor(base, fp.recording)),
                events: o.events.clone().or_else(|| anchor(base, fp.events)),
                use_recording: o.use_recording.clone().or_else(|| anchor(base, fp.use_recording)),
                tasks: o.tasks.clone().or_else(|| anchor(base, fp.tasks)),
                model: o.model.clone().or_else(|| anchor(base, fp.model)),
            },
            synth,
        };
        settings.validate()?;
        Ok(settings)
    }

    /// Checks everything that does not depend on input data.
    pub fn validate(&self) -> Result<(), CliError> {
        let w = self.pipeline.window_seconds;
        if !WINDOWS.contains(&w) {
            return Err(CliError::validation(format!("window must be 2 or 10 s, got {w}")));
        }
        if self.folds < 2 {
            return Err(CliError::validation(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::validation(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.synth.validate()?;
        // Band limits are checked again against each recording's rate.
        self.pipeline.validate(f64::INFINITY)?;
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

