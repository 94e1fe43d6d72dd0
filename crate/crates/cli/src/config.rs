//! Run configuration: one JSON document with every knob of an experiment.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothsnn::analysis::RangeMode;
use smoothsnn::{GuidanceConfig, ModelSpec, NeuronConfig, Readout, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub neuron: NeuronConfig,
    pub smoothing_enabled: bool,
    pub readout: Readout,
    pub normalize: bool,
    pub full_alpha_chain: bool,
    pub beta_init: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            neuron: NeuronConfig::default(),
            smoothing_enabled: true,
            readout: Readout::MembraneReadout,
            normalize: false,
            full_alpha_chain: false,
            beta_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub timesteps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            timesteps: d.timesteps,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr0: d.lr0,
            lr_decay_every: d.lr_decay_every,
            weight_decay: d.weight_decay,
            momentum: d.momentum,
            val_fraction: d.val_fraction,
        }
    }
}

/// Where samples come from. Without `path` a synthetic temporal-pattern
/// task is generated from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `SPK1` training pool.
    pub path: Option<PathBuf>,
    /// `SPK1` test set; carved out of the pool when absent.
    pub test_path: Option<PathBuf>,
    pub classes: usize,
    pub channels: usize,
    pub samples_per_class: usize,
    pub jitter: f64,
    /// Share of the pool held out as the test set.
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            test_path: None,
            classes: 4,
            channels: 40,
            samples_per_class: 100,
            jitter: smoothsnn::data::DEFAULT_JITTER,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityGrid {
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub delta_ts: Vec<u32>,
}

impl Default for SensitivityGrid {
    fn default() -> Self {
        Self {
            taus: vec![2.0],
            alphas: vec![0.25, 0.5, 0.75],
            delta_ts: (1..=8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub bins: usize,
    pub range: RangeMode,
    /// Weight of the diversity term in the ensemble loss.
    pub alpha_div: f64,
    pub sensitivity: SensitivityGrid,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bins: smoothsnn::analysis::DEFAULT_BINS,
            range: RangeMode::Pooled,
            alpha_div: 1.0,
            sensitivity: SensitivityGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub guidance: GuidanceConfig,
    pub data: DataSection,
    pub analysis: AnalysisSection,
    pub seed: u64,
    pub float64: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            train: TrainSection::default(),
            guidance: GuidanceConfig::default(),
            data: DataSection::default(),
            analysis: AnalysisSection::default(),
            seed: 0,
            float64: false,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Parses and validates JSON text.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = match serde_path_to_error::deserialize(&mut de) {
            Ok(cfg) => cfg,
            Err(e) => return Err(classify(e)),
        };
        de.end().map_err(|e| CliError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads from `path`, or stdin for `-`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = if path == Path::new("-") {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::io("<stdin>", e))?;
            s
        } else {
            std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?
        };
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let spec = self.model_spec(1, 1);
        if self.model.hidden.contains(&0) {
            return Err(CliError::invalid("model.hidden", "every width must be >= 1"));
        }
        self.model.neuron.validate().map_err(|e| section_error("model.neuron", e))?;
        spec.validate().map_err(|e| section_error("model", e))?;
        self.guidance.validate().map_err(|e| section_error("guidance", e))?;
        self.train_config().validate().map_err(|e| section_error("train", e))?;
        let d = &self.data;
        if d.path.is_none() {
            for (key, v) in [("classes", d.classes), ("channels", d.channels), ("samples_per_class", d.samples_per_class)] {
                if v == 0 {
                    return Err(CliError::invalid(format!("data.{key}"), "must be >= 1"));
                }
            }
            if !(0.0..=1.0).contains(&d.jitter) {
                return Err(CliError::invalid("data.jitter", format!("out of [0,1]: {}", d.jitter)));
            }
        }
        if d.test_path.is_none() && !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(CliError::invalid(
                "data.test_fraction",
                format!("out of (0,1): {}", d.test_fraction),
            ));
        }
        if self.analysis.bins == 0 {
            return Err(CliError::invalid("analysis.bins", "must be >= 1"));
        }
        if !self.analysis.alpha_div.is_finite() {
            return Err(CliError::invalid("analysis.alpha_div", "must be finite"));
        }
        Ok(())
    }

    pub fn model_spec(&self, inputs: usize, classes: usize) -> ModelSpec {
        let m = &self.model;
        let mut layer_sizes = vec![inputs];
        layer_sizes.extend(&m.hidden);
        layer_sizes.push(classes);
        ModelSpec {
            layer_sizes,
            neuron: m.neuron.clone(),
            smoothing_enabled: m.smoothing_enabled,
            readout: m.readout,
            normalize: m.normalize,
            full_alpha_chain: m.full_alpha_chain,
            beta_init: m.beta_init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            timesteps: t.timesteps,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_decay_every: t.lr_decay_every,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            guidance: self.guidance.clone(),
            seed: self.seed,
            val_fraction: t.val_fraction,
        }
    }
}

fn classify(e: serde_path_to_error::Error<serde_json::Error>) -> CliError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    if inner.is_syntax() || inner.is_eof() {
        return CliError::Syntax {
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        };
    }
    let msg = inner.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        // serde lists the accepted names in backticks after the unknown one.
        let known: Vec<&str> = rest.split('`').skip(1).collect::<Vec<_>>().chunks(2).filter_map(|c| c.get(1).copied()).collect();
        let suggestion = known
            .iter()
            .min_by_key(|k| strsim::levenshtein(k, &key))
            .map(|s| s.to_string());
        let parent = path.rsplit_once('.').map_or(String::new(), |(p, _)| format!("{p}."));
        let parent = if path == key { String::new() } else { parent };
        return CliError::UnknownKey {
            key: format!("{parent}{key}"),
            suggestion: suggestion.map(|s| format!("{parent}{s}")),
        };
    }
    // Drop serde's trailing position; the key path is more useful.
    let reason = msg.split(" at line ").next().unwrap_or(&msg).to_string();
    CliError::invalid(if path == "." { String::new() } else { path }, reason)
}

fn section_error(section: &str, e: smoothsnn::Error) -> CliError {
    match e {
        smoothsnn::Error::Parameter { name, reason } => CliError::invalid(format!("{section}.{name}"), reason),
        other => CliError::invalid(section, other.to_string()),
    }
}
