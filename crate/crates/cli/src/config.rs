//! Run configuration: one TOML file with every default spelled out by
//! `brainalign config init`.

use std::path::{Path, PathBuf};

use brainalign::attribution::Method;
use brainalign::encoder::CvOptions;
use brainalign::lm::{ModelConfig, TrainOptions};
use brainalign::metrics::AnalysisOptions;
use brainalign::synth::SyntheticSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Gxi,
    Ig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// `"auto"` picks one layer per depth third from the fitted encoders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerChoice {
    Auto(Auto),
    Ids(Vec<usize>),
}

impl std::str::FromStr for LayerChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim() == "auto" {
            return Ok(LayerChoice::Auto(Auto::Auto));
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad layer id {p:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(LayerChoice::Ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Every artifact is written here. Relative paths resolve against the
    /// directory holding the config file.
    pub output_dir: PathBuf,
    /// Use this corpus instead of the one written by `synth`.
    pub corpus: Option<PathBuf>,
    /// Use these responses instead of the synthetic ones written by `embed`.
    pub responses: Option<PathBuf>,
    /// Use this checkpoint instead of the one written by `train`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("run"),
            corpus: None,
            responses: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Context length L in words.
    pub context_len: usize,
    /// Hemodynamic delays D; must match `synth.delays`.
    pub delays: usize,
    pub method: MethodName,
    pub ig_steps: usize,
    pub layers: LayerChoice,
    pub subject: String,
    /// Attribute every `tr_stride`-th TR.
    pub tr_stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            context_len: 32,
            delays: 4,
            method: MethodName::Gxi,
            ig_steps: brainalign::attribution::DEFAULT_IG_STEPS,
            layers: LayerChoice::Auto(Auto::Auto),
            subject: "s0".into(),
            tr_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    /// Top-t% of attribution mass to mask.
    pub threshold: f64,
    pub seeds: Vec<u64>,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub synth: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub cv: CvOptions,
    pub analysis: AnalysisOptions,
    pub masking: MaskingConfig,
}

/// Flags that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<MethodName>,
    pub layers: Option<LayerChoice>,
    pub thresholds: Option<Vec<f64>>,
}

impl RunConfig {
    /// Reads `path`, or the defaults when absent, then applies overrides and
    /// resolves relative paths. Fails with every violated constraint.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let (mut cfg, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                let cfg: RunConfig = toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("cannot parse config {}: {e}", p.display())))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        cfg.apply(overrides);
        cfg.resolve_paths(&base);
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(CliError::Config(v));
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.synth.seed = seed;
            self.model.seed = seed;
            self.train.seed = seed;
            self.analysis.seed = seed;
        }
        if let Some(m) = o.method {
            self.pipeline.method = m;
        }
        if let Some(l) = &o.layers {
            self.pipeline.layers = l.clone();
        }
        if let Some(t) = &o.thresholds {
            self.analysis.thresholds = t.clone();
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.output_dir);
        for p in [&mut self.paths.corpus, &mut self.paths.responses, &mut self.paths.checkpoint]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn method(&self) -> Method {
        match self.pipeline.method {
            MethodName::Gxi => Method::Gxi,
            MethodName::Ig => Method::Ig {
                steps: self.pipeline.ig_steps,
            },
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        v.extend(self.synth.violations().into_iter().map(|m| format!("synth: {m}")));
        v.extend(self.model.violations().into_iter().map(|m| format!("model: {m}")));

        let t = &self.train;
        if t.steps == 0 {
            v.push("train: steps must be >= 1".into());
        }
        if t.batch_size == 0 {
            v.push("train: batch_size must be >= 1".into());
        }
        if t.seq_len < 2 || t.seq_len > self.model.max_positions {
            v.push(format!(
                "train: seq_len must be in [2, model.max_positions = {}], got {}",
                self.model.max_positions, t.seq_len
            ));
        }
        if !(t.learning_rate > 0.0) {
            v.push("train: learning_rate must be positive".into());
        }

        let p = &self.pipeline;
        if p.context_len == 0 {
            v.push("pipeline: context_len must be >= 1".into());
        }
        if p.delays == 0 {
            v.push("pipeline: delays must be >= 1".into());
        }
        if p.delays != self.synth.delays {
            v.push(format!(
                "pipeline: delays ({}) must equal synth.delays ({})",
                p.delays, self.synth.delays
            ));
        }
        if p.ig_steps == 0 {
            v.push("pipeline: ig_steps must be >= 1".into());
        }
        if p.tr_stride == 0 {
            v.push("pipeline: tr_stride must be >= 1".into());
        }
        if p.subject.is_empty() {
            v.push("pipeline: subject must not be empty".into());
        }
        if let LayerChoice::Ids(ids) = &p.layers {
            if ids.is_empty() {
                v.push("pipeline: layers must list at least one layer".into());
            }
            if let Some(&bad) = ids.iter().find(|&&l| l >= self.model.n_layers) {
                v.push(format!("pipeline: layer {bad} does not exist (model has {})", self.model.n_layers));
            }
        }
        if self.synth.source_layer >= self.model.n_layers {
            v.push(format!(
                "synth: source_layer {} does not exist (model has {})",
                self.synth.source_layer, self.model.n_layers
            ));
        }

        if self.cv.outer_folds < 2 || self.cv.inner_folds < 2 {
            v.push("cv: outer_folds and inner_folds must be >= 2".into());
        }
        if self.cv.lambdas.is_empty() || self.cv.lambdas.iter().any(|&l| !(l >= 0.0)) {
            v.push("cv: lambdas must be a non-empty list of non-negative values".into());
        }

        let th = &self.analysis.thresholds;
        if th.is_empty() {
            v.push("analysis: thresholds must not be empty".into());
        }
        if th.windows(2).any(|w| !(w[0] < w[1])) {
            v.push("analysis: thresholds must be strictly ascending".into());
        }
        if th.iter().any(|&t| !(t > 0.0 && t <= 100.0)) {
            v.push("analysis: thresholds must lie in (0, 100]".into());
        }
        if self.analysis.bin_width == 0 {
            v.push("analysis: bin_width must be >= 1".into());
        }
        if !(self.masking.threshold > 0.0 && self.masking.threshold <= 100.0) {
            v.push("masking: threshold must lie in (0, 100]".into());
        }
        if self.masking.seeds.is_empty() {
            v.push("masking: seeds must not be empty".into());
        }

        for (name, p) in [
            ("corpus", &self.paths.corpus),
            ("responses", &self.paths.responses),
            ("checkpoint", &self.paths.checkpoint),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    v.push(format!("paths: {name} file {} does not exist", p.display()));
                }
            }
        }
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
