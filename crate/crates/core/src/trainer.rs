//! Adam and the three training phases: reweighted training on the mixed
//! loss, block pruning, and masked retraining.
//!
//! A [`Trainer`] owns the optimizer state and the batch sampler so the
//! phases of one run share a single uninterrupted optimizer trajectory.
//! With `lambda_max = 0` and an all-zero prune target, a pipeline run is
//! therefore bit-identical to plain dense training for the same number of
//! steps.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{
    backward, build_model, evaluate, forward, loss, make_synthetic_dataset, Dataset, Gradients, ModelConfig,
    ModelParams,
};
use crate::numerics::{Axis, Matrix, Rng};
use crate::pruner::{model_compression, prune_model, MaskSet, ModelCompression, PruneMode, PruneSpec};
use crate::regularizer::{make_partition, GammaWeights, ModelRegularizer, DEFAULT_REWEIGHT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Matrix,
    v: Matrix,
    m_bias: Option<Vec<f64>>,
    v_bias: Option<Vec<f64>>,
}

/// First and second moments for every tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let moments = params
            .tensors
            .iter()
            .map(|t| {
                let z = Matrix::zeros(t.matrix.rows(), t.matrix.cols());
                let zb = t.bias.as_ref().map(|b| vec![0.0; b.len()]);
                Moments {
                    m: z.clone(),
                    v: z,
                    m_bias: zb.clone(),
                    v_bias: zb,
                }
            })
            .collect();
        AdamState {
            config,
            step: 0,
            moments,
        }
    }

    pub fn first_moment(&self, tensor: usize) -> &Matrix {
        &self.moments[tensor].m
    }

    pub fn second_moment(&self, tensor: usize) -> &Matrix {
        &self.moments[tensor].v
    }
}

fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, bc1: f64, bc2: f64) {
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// One bias-corrected Adam update of every weight and bias.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let cfg = state.config;
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if grads.tensors.len() != params.tensors.len() || state.moments.len() != params.tensors.len() {
        return Err(Error::InvalidArgument("gradient / optimizer state does not match the model".into()));
    }
    for (t, g) in params.tensors.iter().zip(&grads.tensors) {
        if t.matrix.shape() != g.weight.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: t.matrix.shape(),
                right: g.weight.shape(),
            });
        }
        if t.bias.as_ref().map(Vec::len) != g.bias.as_ref().map(Vec::len) {
            return Err(Error::InvalidArgument(format!("bias gradient shape for `{}`", t.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((tensor, g), mo) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut state.moments) {
        adam_update(
            tensor.matrix.as_mut_slice(),
            g.weight.as_slice(),
            mo.m.as_mut_slice(),
            mo.v.as_mut_slice(),
            &cfg,
            bc1,
            bc2,
        );
        if let (Some(b), Some(gb), Some(mb), Some(vb)) =
            (tensor.bias.as_mut(), g.bias.as_ref(), mo.m_bias.as_mut(), mo.v_bias.as_mut())
        {
            adam_update(b, gb, mb, vb, &cfg, bc1, bc2);
        }
    }
    Ok(())
}

/// Epoch-shuffled minibatch order; full batches only.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(n_samples: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if batch_size == 0 || n_samples < batch_size {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} does not fit {n_samples} samples"
            )));
        }
        let mut s = BatchSampler {
            order: (0..n_samples).collect(),
            pos: 0,
            batch_size,
            rng,
        };
        s.rng.shuffle(&mut s.order);
        Ok(s)
    }

    pub fn next_indices(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let lo = self.pos;
        self.pos += self.batch_size;
        &self.order[lo..self.pos]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Dense steps before reweighting; stands in for the pre-trained model.
    pub baseline_steps: usize,
    /// Reweighted training steps (T1).
    pub reweight_steps: usize,
    /// Masked retraining steps (T2).
    pub retrain_steps: usize,
    /// 1-based reweighting steps at which gamma is recomputed.
    pub milestones: Vec<usize>,
    pub lambda_max: f64,
    pub lambda_warmup_steps: usize,
    pub reweight_epsilon: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub prune_spec: PruneSpec,
    /// Evaluate on the held-out set every this many steps (0 disables).
    pub eval_every: usize,
    pub retrain_schedule: LrSchedule,
}

/// Learning rate over the retraining phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr * (T2 - s + 1) / T2` at retraining step `s`.
    Linear,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<LrSchedule> {
        match s {
            "constant" => Some(LrSchedule::Constant),
            "linear" => Some(LrSchedule::Linear),
            _ => None,
        }
    }

    fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => (total - step + 1) as f64 / total as f64,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            baseline_steps: 0,
            reweight_steps: 0,
            retrain_steps: 0,
            milestones: Vec::new(),
            lambda_max: 1e-4,
            lambda_warmup_steps: 0,
            reweight_epsilon: DEFAULT_REWEIGHT_EPSILON,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 42,
            prune_spec: PruneSpec::default(),
            eval_every: 0,
            retrain_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("milestones must be strictly increasing".into()));
        }
        if let Some(&m) = self.milestones.iter().find(|&&m| m == 0 || m >= self.reweight_steps) {
            return Err(Error::InvalidArgument(format!(
                "milestone {m} outside reweighting steps 1..{}",
                self.reweight_steps
            )));
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_max must be >= 0, got {}", self.lambda_max)));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.prune_spec.validate()
    }

    /// Penalty strength at 1-based reweighting step `s`: a linear ramp to
    /// `lambda_max` over `lambda_warmup_steps`, constant afterwards.
    pub fn lambda_at(&self, s: usize) -> f64 {
        if self.lambda_warmup_steps == 0 {
            self.lambda_max
        } else {
            self.lambda_max * (s as f64 / self.lambda_warmup_steps as f64).min(1.0)
        }
    }

    /// Layers regularized during reweighting: the prune spec's geometry.
    pub fn regularized_layers(&self) -> Vec<(String, Axis, usize)> {
        self.prune_spec
            .entries
            .iter()
            .map(|e| (e.layer.clone(), e.axis, e.num_blocks))
            .collect()
    }
}

/// Every `interval` steps, strictly before `steps`.
pub fn milestones_every(interval: usize, steps: usize) -> Vec<usize> {
    if interval == 0 {
        return Vec::new();
    }
    (1..).map(|i| i * interval).take_while(|&m| m < steps).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Baseline,
    Reweight,
    Retrain,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Reweight => "reweight",
            Phase::Retrain => "retrain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub step: usize,
    pub lambda: f64,
    pub prediction_loss: f64,
    pub penalty: f64,
    pub mixed_loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub final_compression: Option<f64>,
    pub wall_clock: Duration,
}

impl RunReport {
    fn new(config: &TrainConfig) -> Self {
        RunReport {
            records: Vec::new(),
            adam: config.adam,
            batch_size: config.batch_size,
            final_compression: None,
            wall_clock: Duration::ZERO,
        }
    }

    /// `phase,step,lambda,prediction_loss,penalty,mixed_loss,accuracy` rows
    /// with a header; `accuracy` is empty where not evaluated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,step,lambda,prediction_loss,penalty,mixed_loss,accuracy\n");
        for r in &self.records {
            let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{:e},{:.12e},{:.12e},{:.12e},{}",
                r.phase.as_str(),
                r.step,
                r.lambda,
                r.prediction_loss,
                r.penalty,
                r.mixed_loss,
                acc
            )
            .expect("write to String");
        }
        out
    }
}

/// Gamma values of every regularized layer right after an update.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSnapshot {
    /// Reweighting step of the update; 0 for the initial computation.
    pub step: usize,
    pub gammas: Vec<(String, GammaWeights)>,
}

fn first_non_finite(params: &ModelParams) -> String {
    params
        .tensors
        .iter()
        .find(|t| !t.matrix.is_finite() || t.bias.as_ref().is_some_and(|b| b.iter().any(|x| !x.is_finite())))
        .map_or_else(|| "loss".to_string(), |t| t.name.clone())
}

/// Optimizer state and batch order carried across the phases of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub adam: AdamState,
    pub sampler: BatchSampler,
}

impl Trainer {
    pub fn new(params: &ModelParams, dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        Ok(Trainer {
            adam: AdamState::new(params, config.adam),
            sampler: BatchSampler::new(dataset.len(), config.batch_size, Rng::fork(config.seed, 3))?,
        })
    }

    fn eval_if_due(step: usize, config: &TrainConfig, params: &ModelParams, eval: Option<&Dataset>) -> Result<Option<f64>> {
        match eval {
            Some(ds) if config.eval_every > 0 && step % config.eval_every == 0 => Ok(Some(evaluate(params, ds)?)),
            _ => Ok(None),
        }
    }

    /// `steps` Adam steps on the prediction loss alone.
    pub fn train_dense(
        &mut self,
        params: &mut ModelParams,
        dataset: &Dataset,
        steps: usize,
        config: &TrainConfig,
        eval: Option<&Dataset>,
    ) -> Result<RunReport> {
        let start = Instant::now();
        let mut report = RunReport::new(config);
        for s in 1..=steps {
            let batch = dataset.batch(self.sampler.next_indices());
            let (logits, cache) = forward(params, &batch)?;
            let pred = loss(&logits, &batch.labels)?;
            if !pred.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: s,
                    tensor: first_non_finite(params),
                });
            }
            let grads = backward(params, &cache, &batch.labels)?;
            adam_step(params, &grads, &mut self.adam)?;
            report.records.push(StepRecord {
                phase: Phase::Baseline,
                step: s,
                lambda: 0.0,
                prediction_loss: pred,
                penalty: 0.0,
                mixed_loss: pred,
                accuracy: Self::eval_if_due(s, config, params, eval)?,
            });
        }
        report.wall_clock = start.elapsed();
        Ok(report)
    }

    /// Reweighted training: gamma from the current weights, refreshed at
    /// each milestone before that step's losses are computed, then one Adam
    /// step on `prediction_loss + lambda(s) * sum(gamma * norm)`.
    pub fn reweighted_train(
        &mut self,
        params: &mut ModelParams,
        dataset: &Dataset,
        config: &TrainConfig,
        eval: Option<&Dataset>,
    ) -> Result<(Vec<GammaSnapshot>, RunReport)> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let start = Instant::now();
        let mut report = RunReport::new(config);
        let mut reg = ModelRegularizer::new(params, &config.regularized_layers(), config.reweight_epsilon)?;
        let snapshot = |reg: &ModelRegularizer, step: usize| GammaSnapshot {
            step,
            gammas: reg
                .layers
                .iter()
                .map(|l| (l.partition.layer_name.clone(), l.gamma.clone()))
                .collect(),
        };
        let mut history = vec![snapshot(&reg, 0)];
        let mut next_milestone = config.milestones.iter().peekable();
        for s in 1..=config.reweight_steps {
            if next_milestone.peek() == Some(&&s) {
                next_milestone.next();
                reg.refresh_gammas(params)?;
                history.push(snapshot(&reg, s));
            }
            let lambda = config.lambda_at(s);
            let batch = dataset.batch(self.sampler.next_indices());
            let (logits, cache) = forward(params, &batch)?;
            let pred = loss(&logits, &batch.labels)?;
            let pen = reg.penalty(params, lambda)?;
            let mixed = pred + pen;
            if !mixed.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: s,
                    tensor: first_non_finite(params),
                });
            }
            let mut grads = backward(params, &cache, &batch.labels)?;
            if lambda != 0.0 {
                reg.accumulate_grad(params, &mut grads, lambda)?;
            }
            adam_step(params, &grads, &mut self.adam)?;
            report.records.push(StepRecord {
                phase: Phase::Reweight,
                step: s,
                lambda,
                prediction_loss: pred,
                penalty: pen,
                mixed_loss: mixed,
                accuracy: Self::eval_if_due(s, config, params, eval)?,
            });
        }
        report.wall_clock = start.elapsed();
        Ok((history, report))
    }

    /// Masked retraining: Adam on the prediction loss, then `W = W * mask`
    /// after every step.
    pub fn retrain(
        &mut self,
        params: &mut ModelParams,
        masks: &MaskSet,
        dataset: &Dataset,
        config: &TrainConfig,
        eval: Option<&Dataset>,
    ) -> Result<RunReport> {
        let mut targets = Vec::with_capacity(masks.len());
        for m in &masks.masks {
            let idx = params
                .index_of(&m.layer_name)
                .map_err(|_| Error::MaskMismatch(format!("no tensor named `{}`", m.layer_name)))?;
            let shape = params.tensors[idx].matrix.shape();
            if shape != m.partition.shape() {
                return Err(Error::MaskMismatch(format!(
                    "mask for `{}` is {} but the tensor is {shape}",
                    m.layer_name,
                    m.partition.shape()
                )));
            }
            targets.push((idx, m));
        }
        for (idx, m) in &targets {
            m.apply_in_place(&mut params.tensors[*idx].matrix)?;
        }
        let start = Instant::now();
        let mut report = RunReport::new(config);
        let base_lr = self.adam.config.learning_rate;
        for s in 1..=config.retrain_steps {
            let batch = dataset.batch(self.sampler.next_indices());
            let (logits, cache) = forward(params, &batch)?;
            let pred = loss(&logits, &batch.labels)?;
            if !pred.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: s,
                    tensor: first_non_finite(params),
                });
            }
            let grads = backward(params, &cache, &batch.labels)?;
            self.adam.config.learning_rate = base_lr * config.retrain_schedule.factor(s, config.retrain_steps);
            let stepped = adam_step(params, &grads, &mut self.adam);
            self.adam.config.learning_rate = base_lr;
            stepped?;
            for (idx, m) in &targets {
                m.apply_in_place(&mut params.tensors[*idx].matrix)?;
            }
            report.records.push(StepRecord {
                phase: Phase::Retrain,
                step: s,
                lambda: 0.0,
                prediction_loss: pred,
                penalty: 0.0,
                mixed_loss: pred,
                accuracy: Self::eval_if_due(s, config, params, eval)?,
            });
        }
        report.wall_clock = start.elapsed();
        Ok(report)
    }
}

/// Reweighted training from a fresh optimizer state.
pub fn reweighted_train(
    params: &mut ModelParams,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Vec<GammaSnapshot>, RunReport)> {
    Trainer::new(params, dataset, config)?.reweighted_train(params, dataset, config, None)
}

/// Prunes per `config.prune_spec`; params are modified in place.
pub fn make_masks_and_prune(params: &mut ModelParams, prune_spec: &PruneSpec) -> Result<MaskSet> {
    prune_model(params, prune_spec)
}

/// Masked retraining from a fresh optimizer state.
pub fn retrain(params: &mut ModelParams, masks: &MaskSet, dataset: &Dataset, config: &TrainConfig) -> Result<RunReport> {
    Trainer::new(params, dataset, config)?.retrain(params, masks, dataset, config, None)
}

/// Synthetic data sizes; sequences use the model's `seq_len` and `vocab`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataConfig {
    pub train_samples: usize,
    pub test_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_samples: 20_000,
            test_samples: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Also train a dense model for the same total step count and report its accuracy.
    pub dense_reference: bool,
    /// Layers whose prunable flag is forced on (e.g. the embedding in sensitivity scans).
    pub force_prunable: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            dense_reference: true,
            force_prunable: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.classes != self.model.vocab {
            return Err(Error::InvalidArgument(
                "the majority-token task needs classes == vocab".into(),
            ));
        }
        for e in &self.train.prune_spec.entries {
            let (rows, cols) = self.model.tensor_shape(&e.layer).ok_or_else(|| Error::UnknownLayer(e.layer.clone()))?;
            make_partition(rows, cols, e.axis, e.num_blocks).map_err(|err| {
                Error::InvalidArgument(format!("layer `{}` ({rows}x{cols}): {err}", e.layer))
            })?;
        }
        if self.data.train_samples < self.train.batch_size || self.data.test_samples == 0 {
            return Err(Error::InvalidArgument("dataset too small for the batch size".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.data.train_samples / self.train.batch_size).max(1)
    }

    /// Train / test sets, both derived from the root seed.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let seed = self.train.seed;
        let (l, v) = (self.model.seq_len, self.model.vocab);
        Ok((
            make_synthetic_dataset(Rng::fork(seed, 1).next_u64(), self.data.train_samples, l, v)?,
            make_synthetic_dataset(Rng::fork(seed, 2).next_u64(), self.data.test_samples, l, v)?,
        ))
    }

    /// Overrides the sparsity target of every percentile entry.
    pub fn set_uniform_sparsity(&mut self, sparsity: f64) {
        for e in &mut self.train.prune_spec.entries {
            e.mode = PruneMode::Percentile(sparsity);
        }
    }
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub params: ModelParams,
    pub masks: MaskSet,
    pub gamma_history: Vec<GammaSnapshot>,
    pub baseline: RunReport,
    pub reweight: RunReport,
    pub retrain: RunReport,
    /// Accuracy of the dense model entering reweighting.
    pub pretrained_accuracy: f64,
    /// Accuracy of dense training for the same total number of steps.
    pub dense_accuracy: Option<f64>,
    pub final_accuracy: f64,
    pub compression: ModelCompression,
    pub wall_clock: Duration,
}

/// build -> dense baseline -> reweighted training -> prune -> masked
/// retraining -> evaluate.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let start = Instant::now();
    let (train, test) = config.datasets().map_err(|e| e.in_phase("data"))?;
    let mut params = build_model(config.model, &mut Rng::fork(config.train.seed, 0)).map_err(|e| e.in_phase("build"))?;
    for name in &config.force_prunable {
        params.set_prunable(name, true).map_err(|e| e.in_phase("build"))?;
    }
    let tc = &config.train;
    let mut trainer = Trainer::new(&params, &train, tc).map_err(|e| e.in_phase("build"))?;
    let baseline = trainer.train_dense(&mut params, &train, tc.baseline_steps, tc, Some(&test))
        .map_err(|e| e.in_phase("baseline"))?;
    let pretrained_accuracy = evaluate(&params, &test).map_err(|e| e.in_phase("baseline"))?;

    let dense_accuracy = if config.dense_reference {
        let mut dense = params.clone();
        let mut t = trainer.clone();
        t.train_dense(&mut dense, &train, tc.reweight_steps + tc.retrain_steps, tc, None)
            .map_err(|e| e.in_phase("dense_reference"))?;
        Some(evaluate(&dense, &test).map_err(|e| e.in_phase("dense_reference"))?)
    } else {
        None
    };

    let (gamma_history, reweight) = trainer
        .reweighted_train(&mut params, &train, tc, Some(&test))
        .map_err(|e| e.in_phase("reweight"))?;
    let masks = make_masks_and_prune(&mut params, &tc.prune_spec).map_err(|e| e.in_phase("prune"))?;
    let mut retrain = trainer
        .retrain(&mut params, &masks, &train, tc, Some(&test))
        .map_err(|e| e.in_phase("retrain"))?;
    let compression = model_compression(&params, &masks).map_err(|e| e.in_phase("prune"))?;
    retrain.final_compression = Some(compression.prunable_rate);
    let final_accuracy = evaluate(&params, &test).map_err(|e| e.in_phase("evaluate"))?;
    Ok(PipelineOutcome {
        params,
        masks,
        gamma_history,
        baseline,
        reweight,
        retrain,
        pretrained_accuracy,
        dense_accuracy,
        final_accuracy,
        compression,
        wall_clock: start.elapsed(),
    })
}
