//! TOML run configuration.
//!
//! Every key is optional; omitted keys take the defaults below. Unknown
//! keys, unknown layers and invalid values are rejected with the line they
//! occur on.
//!
//! ```text
//! [model]        vocab 8, dim 16, ffn_hidden 64, classes 8, seq_len 16
//! [data]         train_samples 20000, test_samples 2000
//! [train]        seed 42, batch_size 32, learning_rate 3e-5, beta1 0.9,
//!                beta2 0.999, adam_epsilon 1e-8, baseline_steps 0,
//!                reweight_steps 0, retrain_steps 0, milestones or
//!                milestone_interval (every 4 epochs), lambda_max 1e-4,
//!                lambda_warmup_steps 0, reweight_epsilon 1e-6,
//!                eval_every 0, dense_reference true,
//!                retrain_schedule "constant" (or "linear")
//! [prune]        axis "row", num_blocks 4, sparsity 0.5, threshold (unset),
//!                layers = every attention and FFN tensor, force_prunable []
//! [prune.layer.NAME]   axis / num_blocks / sparsity / threshold for one layer
//! [sweep.NAME]   dimension, values, sensitivity_ratio 0.5
//! [sensitivity]  ratio 0.5, include_embedding_classifier false, layers (unset)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiments::{Dimension, SweepSpec, SweepValue};
use crate::model::TENSOR_NAMES;
use crate::numerics::Axis;
use crate::pruner::{PruneEntry, PruneMode, PruneSpec};
use crate::trainer::{milestones_every, LrSchedule, PipelineConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    prune: RawPrune,
    #[serde(default)]
    sweep: BTreeMap<String, RawSweep>,
    #[serde(default)]
    sensitivity: RawSensitivity,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    vocab: Option<usize>,
    dim: Option<usize>,
    ffn_hidden: Option<usize>,
    classes: Option<usize>,
    seq_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    train_samples: Option<usize>,
    test_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    seed: Option<u64>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    adam_epsilon: Option<f64>,
    baseline_steps: Option<usize>,
    reweight_steps: Option<usize>,
    retrain_steps: Option<usize>,
    milestones: Option<Vec<usize>>,
    milestone_interval: Option<usize>,
    lambda_max: Option<f64>,
    lambda_warmup_steps: Option<usize>,
    reweight_epsilon: Option<f64>,
    eval_every: Option<usize>,
    dense_reference: Option<bool>,
    retrain_schedule: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrune {
    axis: Option<String>,
    num_blocks: Option<usize>,
    sparsity: Option<f64>,
    threshold: Option<f64>,
    layers: Option<Vec<String>>,
    #[serde(default)]
    force_prunable: Vec<String>,
    #[serde(default)]
    layer: BTreeMap<String, RawLayer>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    axis: Option<String>,
    num_blocks: Option<usize>,
    sparsity: Option<f64>,
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawValue {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    dimension: String,
    values: Vec<RawValue>,
    sensitivity_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensitivity {
    ratio: Option<f64>,
    include_embedding_classifier: Option<bool>,
    layers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySettings {
    pub ratio: f64,
    pub include_embedding_classifier: bool,
    pub layers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub sweeps: BTreeMap<String, SweepSpec>,
    pub sensitivity: SensitivitySettings,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text, path)
    }

    /// Parses config text; `path` only labels error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Config> {
        let raw: RawFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_at(text, s.start));
            Error::format(path, line, e.message().trim().to_string())
        })?;
        let loc = Locator { text, path };
        build(raw, &loc)
    }

    /// Replaces the root seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.train.seed = seed;
        for s in self.sweeps.values_mut() {
            s.base.train.seed = seed;
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        build(RawFile::default(), &Locator { text: "", path: Path::new("<defaults>") })
            .expect("built-in defaults are valid")
    }
}

fn line_at(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}

/// Finds the line defining `key` in `section`, for error messages.
struct Locator<'a> {
    text: &'a str,
    path: &'a Path,
}

impl Locator<'_> {
    fn line(&self, section: &str, key: &str) -> usize {
        let mut current = String::new();
        let mut header_line = 0;
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = h.trim().to_string();
                if current == section {
                    header_line = i + 1;
                }
            } else if current == section {
                let k = line.split('=').next().unwrap_or("").trim();
                if k == key {
                    return i + 1;
                }
            }
        }
        header_line
    }

    fn err(&self, section: &str, key: &str, msg: impl Into<String>) -> Error {
        Error::format(PathBuf::from(self.path), self.line(section, key), msg)
    }
}

fn parse_axis(s: &str, loc: &Locator, section: &str) -> Result<Axis> {
    Axis::parse(s).ok_or_else(|| loc.err(section, "axis", format!("axis must be `row` or `column`, got `{s}`")))
}

fn check_layer(name: &str, loc: &Locator, section: &str, key: &str) -> Result<()> {
    if TENSOR_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(loc.err(section, key, format!("unknown layer `{name}` (expected one of {})", TENSOR_NAMES.join(", "))))
    }
}

fn default_prunable(name: &str) -> bool {
    !matches!(name, "embedding" | "classifier")
}

fn build(raw: RawFile, loc: &Locator) -> Result<Config> {
    let mut p = PipelineConfig::default();
    let m = &raw.model;
    let mc = &mut p.model;
    mc.vocab = m.vocab.unwrap_or(mc.vocab);
    mc.dim = m.dim.unwrap_or(mc.dim);
    mc.ffn_hidden = m.ffn_hidden.unwrap_or(mc.ffn_hidden);
    mc.classes = m.classes.unwrap_or(mc.classes);
    mc.seq_len = m.seq_len.unwrap_or(mc.seq_len);
    p.model.validate().map_err(|e| loc.err("model", "", e.to_string()))?;

    p.data.train_samples = raw.data.train_samples.unwrap_or(p.data.train_samples);
    p.data.test_samples = raw.data.test_samples.unwrap_or(p.data.test_samples);

    let t = &raw.train;
    let tc = &mut p.train;
    tc.seed = t.seed.unwrap_or(tc.seed);
    tc.batch_size = t.batch_size.unwrap_or(tc.batch_size);
    tc.adam.learning_rate = t.learning_rate.unwrap_or(tc.adam.learning_rate);
    tc.adam.beta1 = t.beta1.unwrap_or(tc.adam.beta1);
    tc.adam.beta2 = t.beta2.unwrap_or(tc.adam.beta2);
    tc.adam.epsilon = t.adam_epsilon.unwrap_or(tc.adam.epsilon);
    tc.baseline_steps = t.baseline_steps.unwrap_or(0);
    tc.reweight_steps = t.reweight_steps.unwrap_or(0);
    tc.retrain_steps = t.retrain_steps.unwrap_or(0);
    tc.milestones = match (&t.milestones, t.milestone_interval) {
        (Some(_), Some(_)) => {
            return Err(loc.err("train", "milestone_interval", "give `milestones` or `milestone_interval`, not both"))
        }
        (Some(m), None) => m.clone(),
        (None, Some(i)) => milestones_every(i, tc.reweight_steps),
        // every 4 epochs
        (None, None) => {
            let per_epoch = (p.data.train_samples / tc.batch_size.max(1)).max(1);
            milestones_every(4 * per_epoch, tc.reweight_steps)
        }
    };
    tc.lambda_max = t.lambda_max.unwrap_or(tc.lambda_max);
    tc.lambda_warmup_steps = t.lambda_warmup_steps.unwrap_or(0);
    tc.reweight_epsilon = t.reweight_epsilon.unwrap_or(tc.reweight_epsilon);
    tc.eval_every = t.eval_every.unwrap_or(0);
    p.dense_reference = t.dense_reference.unwrap_or(p.dense_reference);
    if let Some(sched) = &t.retrain_schedule {
        p.train.retrain_schedule = LrSchedule::parse(sched).ok_or_else(|| {
            loc.err("train", "retrain_schedule", format!("schedule must be `constant` or `linear`, got `{sched}`"))
        })?;
    }

    let pr = &raw.prune;
    for name in &pr.force_prunable {
        check_layer(name, loc, "prune", "force_prunable")?;
    }
    p.force_prunable = pr.force_prunable.clone();
    let axis = match &pr.axis {
        Some(a) => parse_axis(a, loc, "prune")?,
        None => Axis::Row,
    };
    let num_blocks = pr.num_blocks.unwrap_or(4);
    let mode = match (pr.threshold, pr.sparsity) {
        (Some(_), Some(_)) => return Err(loc.err("prune", "threshold", "give `sparsity` or `threshold`, not both")),
        (Some(th), None) => PruneMode::Threshold(th),
        (None, s) => PruneMode::Percentile(s.unwrap_or(0.5)),
    };
    let layers: Vec<String> = match &pr.layers {
        Some(l) => l.clone(),
        None => TENSOR_NAMES.iter().filter(|n| default_prunable(n)).map(|n| n.to_string()).collect(),
    };
    let mut entries = Vec::new();
    for name in &layers {
        check_layer(name, loc, "prune", "layers")?;
        entries.push(PruneEntry {
            layer: name.clone(),
            axis,
            num_blocks,
            mode,
        });
    }
    for (name, over) in &pr.layer {
        let section = format!("prune.layer.{name}");
        check_layer(name, loc, &section, "")?;
        let entry = match entries.iter_mut().find(|e| &e.layer == name) {
            Some(e) => e,
            None => {
                entries.push(PruneEntry {
                    layer: name.clone(),
                    axis,
                    num_blocks,
                    mode,
                });
                entries.last_mut().expect("just pushed")
            }
        };
        if let Some(a) = &over.axis {
            entry.axis = parse_axis(a, loc, &section)?;
        }
        entry.num_blocks = over.num_blocks.unwrap_or(entry.num_blocks);
        entry.mode = match (over.threshold, over.sparsity) {
            (Some(_), Some(_)) => {
                return Err(loc.err(&section, "threshold", "give `sparsity` or `threshold`, not both"))
            }
            (Some(th), None) => PruneMode::Threshold(th),
            (None, Some(s)) => PruneMode::Percentile(s),
            (None, None) => entry.mode,
        };
    }
    entries.sort_by_key(|e| TENSOR_NAMES.iter().position(|n| *n == e.layer));
    for e in &entries {
        if !default_prunable(&e.layer) && !p.force_prunable.contains(&e.layer) {
            return Err(loc.err(
                "prune",
                "layers",
                format!("layer `{}` is not prunable by default; add it to `force_prunable`", e.layer),
            ));
        }
    }
    p.train.prune_spec = PruneSpec { entries };
    p.validate().map_err(|e| loc.err("train", "", e.to_string()))?;

    let mut sweeps = BTreeMap::new();
    for (name, s) in raw.sweep {
        let section = format!("sweep.{name}");
        let dimension = Dimension::parse(&s.dimension).ok_or_else(|| {
            let all: Vec<&str> = Dimension::ALL.iter().map(|d| d.as_str()).collect();
            loc.err(&section, "dimension", format!("unknown dimension `{}` (expected one of {})", s.dimension, all.join(", ")))
        })?;
        let values = s
            .values
            .into_iter()
            .map(|v| match v {
                RawValue::Int(i) => SweepValue::Number(i as f64),
                RawValue::Float(x) => SweepValue::Number(x),
                RawValue::Text(t) => SweepValue::Layer(t),
            })
            .collect();
        let spec = SweepSpec {
            name: name.clone(),
            base: p.clone(),
            dimension,
            values,
            sensitivity_ratio: s.sensitivity_ratio.unwrap_or(0.5),
        };
        spec.validate().map_err(|e| loc.err(&section, "values", e.to_string()))?;
        sweeps.insert(name, spec);
    }

    let sr = &raw.sensitivity;
    if let Some(l) = &sr.layers {
        for name in l {
            check_layer(name, loc, "sensitivity", "layers")?;
        }
    }
    let sensitivity = SensitivitySettings {
        ratio: sr.ratio.unwrap_or(0.5),
        include_embedding_classifier: sr.include_embedding_classifier.unwrap_or(false),
        layers: sr.layers.clone(),
    };
    if !(sensitivity.ratio > 0.0 && sensitivity.ratio < 1.0) {
        return Err(loc.err("sensitivity", "ratio", "ratio must lie in (0, 1)"));
    }
    Ok(Config {
        pipeline: p,
        sweeps,
        sensitivity,
    })
}
