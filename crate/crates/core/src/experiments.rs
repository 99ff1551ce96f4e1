//! Sweeps over one pipeline setting, and per-layer sensitivity scans.
//!
//! Every cell is a full [`run_pipeline`] whose config is derived from a base
//! config and the cell's value alone, so cells can run in any order (and
//! concurrently) and the assembled table is the same.

use std::fmt;
use std::time::Duration;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Role, TENSOR_NAMES};
use crate::numerics::Axis;
use crate::pruner::{PruneEntry, PruneMode, PruneSpec};
use crate::trainer::{run_pipeline, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    NumBlocks,
    RetrainEpochs,
    LambdaMax,
    Seed,
    CompressionRate,
    LayerForSensitivity,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::NumBlocks,
        Dimension::RetrainEpochs,
        Dimension::LambdaMax,
        Dimension::Seed,
        Dimension::CompressionRate,
        Dimension::LayerForSensitivity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::NumBlocks => "num_blocks",
            Dimension::RetrainEpochs => "retrain_epochs",
            Dimension::LambdaMax => "lambda_max",
            Dimension::Seed => "seed",
            Dimension::CompressionRate => "compression_rate",
            Dimension::LayerForSensitivity => "layer_for_sensitivity",
        }
    }

    pub fn parse(s: &str) -> Option<Dimension> {
        Dimension::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Number(f64),
    Layer(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(x) => write!(f, "{x}"),
            SweepValue::Layer(s) => f.write_str(s),
        }
    }
}

impl SweepValue {
    fn number(&self, dim: Dimension) -> Result<f64> {
        match self {
            SweepValue::Number(x) => Ok(*x),
            SweepValue::Layer(s) => Err(Error::InvalidArgument(format!("{dim} takes numbers, got `{s}`"))),
        }
    }

    fn count(&self, dim: Dimension) -> Result<usize> {
        let x = self.number(dim)?;
        if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
            Ok(x as usize)
        } else {
            Err(Error::InvalidArgument(format!("{dim} takes whole numbers, got {x}")))
        }
    }

    /// Table order: numbers ascending, layers in parameter order.
    fn sort_key(&self) -> (f64, usize) {
        match self {
            SweepValue::Number(x) => (*x, 0),
            SweepValue::Layer(s) => (0.0, TENSOR_NAMES.iter().position(|n| n == s).unwrap_or(usize::MAX)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub base: PipelineConfig,
    pub dimension: Dimension,
    pub values: Vec<SweepValue>,
    /// Target sparsity used when the varied value picks a single layer.
    pub sensitivity_ratio: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument(format!("sweep `{}` has no values", self.name)));
        }
        self.values.iter().try_for_each(|v| cell_config(self, v).map(|_| ()))
    }
}

/// Geometry for a layer that the base prune spec does not mention: that of
/// its first entry, or 4 row blocks.
fn default_geometry(spec: &PruneSpec) -> (Axis, usize) {
    spec.entries.first().map_or((Axis::Row, 4), |e| (e.axis, e.num_blocks))
}

/// Prune (and regularize) `layer` alone at `ratio`.
pub fn single_layer_config(base: &PipelineConfig, layer: &str, ratio: f64) -> Result<PipelineConfig> {
    if !TENSOR_NAMES.contains(&layer) {
        return Err(Error::UnknownLayer(layer.to_string()));
    }
    let mut cfg = base.clone();
    let (axis, num_blocks) = match base.train.prune_spec.entries.iter().find(|e| e.layer == layer) {
        Some(e) => (e.axis, e.num_blocks),
        None => default_geometry(&base.train.prune_spec),
    };
    cfg.train.prune_spec = PruneSpec {
        entries: vec![PruneEntry {
            layer: layer.to_string(),
            axis,
            num_blocks,
            mode: PruneMode::Percentile(ratio),
        }],
    };
    let role = role_of(layer);
    if !role.default_prunable() && !cfg.force_prunable.iter().any(|l| l == layer) {
        cfg.force_prunable.push(layer.to_string());
    }
    Ok(cfg)
}

fn role_of(layer: &str) -> Role {
    match layer {
        "embedding" => Role::Embedding,
        "classifier" => Role::Classifier,
        "ffn_in" | "ffn_out" => Role::Ffn,
        _ => Role::Attention,
    }
}

/// The config for one sweep cell.
pub fn cell_config(spec: &SweepSpec, value: &SweepValue) -> Result<PipelineConfig> {
    let dim = spec.dimension;
    let mut cfg = spec.base.clone();
    match dim {
        Dimension::NumBlocks => {
            let k = value.count(dim)?;
            for e in &mut cfg.train.prune_spec.entries {
                e.num_blocks = k;
            }
        }
        Dimension::RetrainEpochs => {
            cfg.train.retrain_steps = value.count(dim)? * cfg.steps_per_epoch();
        }
        Dimension::LambdaMax => cfg.train.lambda_max = value.number(dim)?,
        Dimension::Seed => cfg.train.seed = value.count(dim)? as u64,
        Dimension::CompressionRate => {
            let rate = value.number(dim)?;
            if !(rate >= 1.0 && rate.is_finite()) {
                return Err(Error::InvalidArgument(format!("compression rate {rate} < 1")));
            }
            cfg.set_uniform_sparsity(1.0 - 1.0 / rate);
        }
        Dimension::LayerForSensitivity => match value {
            SweepValue::Layer(l) => cfg = single_layer_config(&spec.base, l, spec.sensitivity_ratio)?,
            SweepValue::Number(x) => {
                return Err(Error::InvalidArgument(format!("{dim} takes layer names, got {x}")))
            }
        },
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub final_accuracy: f64,
    pub pretrained_accuracy: f64,
    pub dense_accuracy: Option<f64>,
    pub compression: f64,
    pub sparsity: f64,
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: SweepValue,
    pub seed: u64,
    /// `Err` holds the message of a failed cell.
    pub result: Result<CellResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub name: String,
    pub dimension: Dimension,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

fn run_cell(spec: &SweepSpec, value: &SweepValue) -> SweepRow {
    let cfg = cell_config(spec, value);
    let seed = cfg.as_ref().map_or(spec.base.train.seed, |c| c.train.seed);
    let result = cfg.and_then(|c| run_pipeline(&c)).map(|o| CellResult {
        final_accuracy: o.final_accuracy,
        pretrained_accuracy: o.pretrained_accuracy,
        dense_accuracy: o.dense_accuracy,
        compression: o.compression.prunable_rate,
        sparsity: o.compression.prunable_sparsity,
        wall_clock: o.wall_clock,
    });
    SweepRow {
        value: value.clone(),
        seed,
        result: result.map_err(|e| e.to_string()),
    }
}

/// Runs every cell on up to `workers` threads. Failed cells are recorded in
/// the table; only an empty value list or a thread-pool failure is an error.
pub fn sweep(spec: &SweepSpec, workers: usize) -> Result<SweepTable> {
    if spec.values.is_empty() {
        return Err(Error::InvalidArgument(format!("sweep `{}` has no values", spec.name)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| spec.values.par_iter().map(|v| run_cell(spec, v)).collect());
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.value.sort_key(), b.value.sort_key());
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
    });
    Ok(SweepTable {
        name: spec.name.clone(),
        dimension: spec.dimension,
        seed: spec.base.train.seed,
        rows,
    })
}

/// Prunes each layer alone at `ratio` and records the final accuracy.
/// `layers` defaults to the default-prunable layers, plus the embedding and
/// classifier when `include_embedding_classifier` is set.
pub fn sensitivity_scan(
    base: &PipelineConfig,
    ratio: f64,
    layers: Option<&[String]>,
    include_embedding_classifier: bool,
    workers: usize,
) -> Result<SweepTable> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("sensitivity ratio {ratio} outside (0, 1)")));
    }
    let names: Vec<String> = match layers {
        Some(l) => l.to_vec(),
        None => TENSOR_NAMES
            .iter()
            .filter(|n| include_embedding_classifier || role_of(n).default_prunable())
            .map(|n| n.to_string())
            .collect(),
    };
    let spec = SweepSpec {
        name: "sensitivity".into(),
        base: base.clone(),
        dimension: Dimension::LayerForSensitivity,
        values: names.into_iter().map(SweepValue::Layer).collect(),
        sensitivity_ratio: ratio,
    };
    sweep(&spec, workers)
}

impl SweepTable {
    pub fn accuracies(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.result.as_ref().ok().map(|c| c.final_accuracy))
            .collect()
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }

    /// Comma-separated table. Everything but `wall_clock_seconds` is
    /// reproducible byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# sweep={} dimension={} seed={}\n{},seed,status,final_accuracy,pretrained_accuracy,dense_accuracy,compression,sparsity,wall_clock_seconds,error\n",
            self.name, self.dimension, self.seed, self.dimension
        );
        for r in &self.rows {
            match &r.result {
                Ok(c) => out.push_str(&format!(
                    "{},{},ok,{:.6},{:.6},{},{:.6},{:.6},{:.3},\n",
                    r.value,
                    r.seed,
                    c.final_accuracy,
                    c.pretrained_accuracy,
                    c.dense_accuracy.map_or(String::new(), |a| format!("{a:.6}")),
                    c.compression,
                    c.sparsity,
                    c.wall_clock.as_secs_f64()
                )),
                Err(e) => out.push_str(&format!(
                    "{},{},failed,,,,,,,\"{}\"\n",
                    r.value,
                    r.seed,
                    e.replace('"', "'")
                )),
            }
        }
        out
    }
}

/// Number of consecutive pairs with `next >= prev - slack`.
pub fn non_decreasing_steps(values: &[f64], slack: f64) -> usize {
    values.windows(2).filter(|w| w[1] >= w[0] - slack).count()
}

/// `max - min`; 0 for fewer than two values.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.len() < 2 {
        0.0
    } else {
        max - min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::trainer::{DataConfig, TrainConfig};

    fn tiny_base() -> PipelineConfig {
        let mut train = TrainConfig {
            baseline_steps: 10,
            reweight_steps: 10,
            retrain_steps: 10,
            batch_size: 8,
            ..TrainConfig::default()
        };
        train.adam.learning_rate = 1e-2;
        let names = ["wq", "wk", "wv", "wo"].map(String::from);
        train.prune_spec = PruneSpec::uniform(&names, Axis::Row, 2, 0.5);
        PipelineConfig {
            model: ModelConfig {
                vocab: 4,
                dim: 8,
                ffn_hidden: 8,
                classes: 4,
                seq_len: 4,
            },
            data: DataConfig {
                train_samples: 64,
                test_samples: 32,
            },
            train,
            dense_reference: false,
            force_prunable: vec![],
        }
    }

    fn spec(dimension: Dimension, values: Vec<SweepValue>) -> SweepSpec {
        SweepSpec {
            name: "t".into(),
            base: tiny_base(),
            dimension,
            values,
            sensitivity_ratio: 0.5,
        }
    }

    #[test]
    fn cell_configs_vary_one_setting() {
        let s = spec(Dimension::NumBlocks, vec![SweepValue::Number(4.0)]);
        let c = cell_config(&s, &s.values[0]).unwrap();
        assert!(c.train.prune_spec.entries.iter().all(|e| e.num_blocks == 4));
        assert_eq!(c.train.seed, s.base.train.seed);

        let s = spec(Dimension::RetrainEpochs, vec![SweepValue::Number(3.0)]);
        assert_eq!(cell_config(&s, &s.values[0]).unwrap().train.retrain_steps, 3 * 8);

        let s = spec(Dimension::CompressionRate, vec![SweepValue::Number(5.0)]);
        let c = cell_config(&s, &s.values[0]).unwrap();
        assert!(c.train.prune_spec.entries.iter().all(|e| e.mode == PruneMode::Percentile(0.8)));

        let bad = spec(Dimension::NumBlocks, vec![SweepValue::Number(2.5)]);
        assert!(bad.validate().is_err());
        let bad = spec(Dimension::Seed, vec![SweepValue::Layer("wq".into())]);
        assert!(bad.validate().is_err());
        assert!(spec(Dimension::Seed, vec![]).validate().is_err());
    }

    #[test]
    fn single_layer_config_prunes_only_that_layer() {
        let c = single_layer_config(&tiny_base(), "embedding", 0.5).unwrap();
        assert_eq!(c.train.prune_spec.entries.len(), 1);
        assert_eq!(c.train.prune_spec.entries[0].layer, "embedding");
        assert_eq!(c.force_prunable, vec!["embedding".to_string()]);
        assert!(matches!(single_layer_config(&tiny_base(), "nope", 0.5), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn failed_cells_do_not_abort() {
        // 3 blocks do not divide the 8-wide attention rows.
        let s = spec(
            Dimension::NumBlocks,
            vec![SweepValue::Number(3.0), SweepValue::Number(2.0)],
        );
        let t = sweep(&s, 2).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.failed(), 1);
        assert_eq!(t.rows[0].value, SweepValue::Number(2.0));
        assert!(t.rows[1].result.is_err());
        let csv = t.to_csv();
        assert!(csv.lines().nth(2).unwrap().contains(",ok,"));
        assert!(csv.lines().nth(3).unwrap().contains(",failed,"));
    }

    #[test]
    fn tables_are_reproducible_across_worker_counts() {
        let s = spec(
            Dimension::Seed,
            vec![SweepValue::Number(7.0), SweepValue::Number(1.0), SweepValue::Number(3.0)],
        );
        let strip = |t: &SweepTable| {
            t.to_csv()
                .lines()
                .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 8).map(|(_, f)| f).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
        };
        let a = sweep(&s, 1).unwrap();
        let b = sweep(&s, 3).unwrap();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 3, 7]);
    }

    #[test]
    fn sensitivity_rows_match_scanned_layers() {
        let base = tiny_base();
        let t = sensitivity_scan(&base, 0.5, None, false, 2).unwrap();
        assert_eq!(t.rows.len(), 6);
        let t = sensitivity_scan(&base, 0.5, None, true, 2).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.rows[0].value, SweepValue::Layer("embedding".into()));
        assert_eq!(t.failed(), 0);
        assert!(sensitivity_scan(&base, 1.0, None, false, 1).is_err());
    }

    #[test]
    fn trend_helpers() {
        assert_eq!(non_decreasing_steps(&[0.5, 0.6, 0.59, 0.7], 0.0), 2);
        assert_eq!(non_decreasing_steps(&[0.5, 0.6, 0.59, 0.7], 0.01), 3);
        assert_eq!(spread(&[0.9, 0.95, 0.92]), 0.95 - 0.9);
        assert_eq!(spread(&[0.9]), 0.0);
    }
}
