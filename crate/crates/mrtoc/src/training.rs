//! Progressive end-to-end training.
//!
//! Training proceeds level by level: stage `l` opens the codebook prefix to
//! `2^l` codewords, then optimizes encoder, head, and active codewords
//! jointly under the multi-rate loss. That loss replays the link at every
//! level `j <= l` (quantize, transmit at the training error rate, look up,
//! infer), sums the per-level task and vector-quantization terms, and adds
//! a drift penalty tying the inherited prefix to its snapshot from the
//! previous stage. Lower levels therefore stay usable while deeper levels
//! are carved out.
//!
//! Everything is deterministic under the config seed, channel noise
//! included.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::channel::{CorruptionDraw, SdmcChannel};
use crate::codebook::{vq_loss, NestedCodebook};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::argmax;
use crate::models::{EncoderParams, InferenceParams, MlpNodes, TrainedModel};
use crate::rng::{stream, StreamKind};
use crate::tensor::Tensor;

/// Floor for the empirical latent spread used to scale new codewords, so a
/// degenerate encoder cannot produce a zero-width initialization.
const MIN_CODEWORD_STD: f64 = 1e-6;

/// Knobs of one progressive training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_per_level: usize,
    /// Samples per batch; the batch count per epoch follows from the
    /// dataset size.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Commitment weight, uniform across levels.
    pub gamma: f64,
    /// Optional per-level commitment weights (index 0 is level 1);
    /// overrides `gamma` when set.
    pub gamma_per_level: Option<Vec<f64>>,
    /// Codebook drift penalty for stages 2 and up. Stage 1 has no
    /// inherited prefix and always uses 0.
    pub eta: f64,
    /// Channel error probability during training.
    pub eps_train: f64,
    /// Reuse one corruption draw for every level within a batch step
    /// (variance reduction); `false` redraws per level.
    pub shared_channel_noise: bool,
    /// Codebook capacity; the run trains levels `1..=log2(k_max)`.
    pub k_max: usize,
    /// Sub-vectors per latent.
    pub m: usize,
    /// Codebook dimension.
    pub d: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_per_level: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            gamma: 0.25,
            gamma_per_level: None,
            eta: 0.1,
            eps_train: 0.01,
            shared_channel_noise: true,
            k_max: 16,
            m: 16,
            d: 2,
            encoder_hidden: vec![128, 128],
            head_hidden: vec![128, 128],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Some(gs) = &self.gamma_per_level {
            if gs.len() != self.levels() {
                return Err(Error::Config(format!(
                    "gamma_per_level has {} entries for {} levels",
                    gs.len(),
                    self.levels()
                )));
            }
            if let Some(&bad) = gs.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
                return Err(Error::Config(format!(
                    "gamma_per_level entries must be positive, got {bad}"
                )));
            }
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Config(format!("eta must be nonnegative, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.eps_train) {
            return Err(Error::Config(format!("eps_train {} outside [0, 1]", self.eps_train)));
        }
        if self.k_max < 2 || !self.k_max.is_power_of_two() {
            return Err(Error::Config(format!(
                "k_max must be a power of two of at least 2, got {}",
                self.k_max
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        Ok(())
    }

    /// Number of coding levels: `log2(k_max)`.
    pub fn levels(&self) -> usize {
        self.k_max.trailing_zeros() as usize
    }

    /// Commitment weight for level `l` (1-based).
    pub fn gamma_for(&self, l: usize) -> f64 {
        match &self.gamma_per_level {
            Some(gs) => gs[l - 1],
            None => self.gamma,
        }
    }

    /// Drift penalty weight for stage `l`; stage 1 is always 0 so its loss
    /// reduces to task plus standard vector-quantization terms.
    pub fn eta_for(&self, l: usize) -> f64 {
        if l <= 1 {
            0.0
        } else {
            self.eta
        }
    }
}

/// Frozen reference taken when a stage opens: the prefix codewords the
/// drift penalty pulls toward.
#[derive(Clone, Debug)]
pub struct StageSnapshot {
    pub level: usize,
    /// `[2^(level-1), D]` prefix copy; `None` at level 1.
    pub prefix: Option<Tensor>,
}

/// Per-epoch training statistics, one log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub level: usize,
    /// 1-based within the stage.
    pub epoch: usize,
    pub mean_loss: f64,
    pub task_loss: f64,
    pub vq_loss: f64,
    pub drift_loss: f64,
    /// Accuracy of the stage-level pipe, channel noise included.
    pub train_acc: f64,
}

/// Chronological stage/epoch log of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<EpochStats>,
}

impl TrainingLog {
    /// Writes `level,epoch,mean_loss,task_loss,vq_loss,drift_loss,train_acc`
    /// rows after `# `-prefixed preamble lines.
    pub fn write_csv(&self, w: &mut impl Write, preamble: &[String]) -> Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "level,epoch,mean_loss,task_loss,vq_loss,drift_loss,train_acc")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.level, r.epoch, r.mean_loss, r.task_loss, r.vq_loss, r.drift_loss, r.train_acc
            )?;
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer over a fixed roster of parameter tensors.
///
/// Slot order is set by the first `step` call and must stay stable; the
/// training loop always passes encoder tensors, head tensors, then the
/// codeword table.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update step. `grads[i]` pairs with `params[i]`; a `None`
    /// gradient counts as zero. A parameter whose moments and gradient are
    /// all zero is left bit-exactly unchanged.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, param) in params.iter_mut().enumerate() {
            if let Some(g) = grads[i] {
                if g.shape() != param.shape() {
                    return Err(Error::Contract(format!(
                        "gradient shape {:?} for parameter shape {:?} at slot {i}",
                        g.shape(),
                        param.shape()
                    )));
                }
            }
            let mut values = param.values().to_vec();
            for (j, value) in values.iter_mut().enumerate() {
                let g = grads[i].map_or(0.0, |g| g.values()[j]);
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let step = self.lr * m_hat / (v_hat.sqrt() + self.eps);
                if step != 0.0 {
                    *value -= step;
                }
            }
            **param = Tensor::new(param.shape().to_vec(), values)?;
        }
        Ok(())
    }
}

/// Node handles of the loss terms built by [`mr_loss`].
#[derive(Debug)]
pub struct LossNodes {
    /// Full multi-rate objective.
    pub total: NodeId,
    /// Sum over levels of batch-mean cross-entropy.
    pub task: NodeId,
    /// Sum over levels of the batch-mean vector-quantization terms.
    pub vq: NodeId,
    /// Weighted drift penalty; absent at level 1.
    pub drift: Option<NodeId>,
    /// Post-channel logits at the stage level, for training accuracy.
    pub top_logits: NodeId,
}

fn sum_nodes(tape: &mut Tape, nodes: &[NodeId]) -> Result<NodeId> {
    let mut it = nodes.iter();
    let mut acc = *it.next().expect("at least one term");
    for &n in it {
        acc = tape.add(acc, n)?;
    }
    Ok(acc)
}

/// Builds the multi-rate loss for one batch on the tape.
///
/// For every level `j = 1..=level` the batch latent is quantized at `j`,
/// its indices cross the channel at the training error rate, and the
/// received codewords flow through the head via a straight-through node.
/// Per-level cross-entropy and vector-quantization terms are batch means;
/// the drift penalty compares the live prefix rows of `cb_node` against
/// the stage snapshot (weight [`TrainConfig::eta_for`], structurally zero
/// at level 1).
#[allow(clippy::too_many_arguments)]
pub fn mr_loss(
    tape: &mut Tape,
    head: &InferenceParams,
    head_nodes: &MlpNodes,
    codebook: &NestedCodebook,
    cb_node: NodeId,
    z_e: NodeId,
    labels: &[usize],
    level: usize,
    snapshot: &StageSnapshot,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossNodes> {
    if labels.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if snapshot.level != level {
        return Err(Error::Contract(format!(
            "snapshot for stage {} used at stage {level}",
            snapshot.level
        )));
    }
    if level >= 2 && snapshot.prefix.is_none() {
        return Err(Error::Contract(format!("stage {level} requires a prefix snapshot")));
    }
    let b = labels.len();
    let latent = cfg.m * cfg.d;
    if tape.value(z_e).shape() != [b, latent] {
        return Err(Error::Contract(format!(
            "latent shape {:?} for {b} samples of width {latent}",
            tape.value(z_e).shape()
        )));
    }

    let z_values = tape.value(z_e).clone();
    let draw = cfg.shared_channel_noise.then(|| CorruptionDraw::sample(b * cfg.m, rng));

    let mut task_terms = Vec::with_capacity(level);
    let mut vq_terms = Vec::with_capacity(level);
    let mut top_logits = None;
    for j in 1..=level {
        let q = codebook.quantize(&z_values, j)?;
        let ch = SdmcChannel::for_level(j, cfg.eps_train)?;
        let received = match &draw {
            Some(d) => d.apply(&ch, &q.indices)?,
            None => ch.transmit(&q.indices, rng)?,
        };
        let z_received = codebook.lookup(&received, j)?.reshaped(vec![b, latent])?;
        let z_d = tape.straight_through(z_e, z_received)?;
        let logits = head.mlp().forward(tape, head_nodes, z_d)?;
        task_terms.push(tape.cross_entropy(logits, labels)?);
        let vq = vq_loss(tape, z_e, cb_node, &q.indices, cfg.gamma_for(j))?;
        vq_terms.push(tape.scale(vq, 1.0 / b as f64)?);
        if j == level {
            top_logits = Some(logits);
        }
    }

    let task = sum_nodes(tape, &task_terms)?;
    let vq = sum_nodes(tape, &vq_terms)?;
    let mut total = tape.add(task, vq)?;
    let drift = if level >= 2 {
        let snap = snapshot.prefix.as_ref().expect("checked above");
        let prefix_rows: Vec<usize> = (0..1 << (level - 1)).collect();
        let current = tape.gather_rows(cb_node, &prefix_rows)?;
        let reference = tape.input(snap.clone());
        let diff = tape.sub(current, reference)?;
        let sq = tape.squared_l2(diff)?;
        let weighted = tape.scale(sq, cfg.eta_for(level))?;
        total = tape.add(total, weighted)?;
        Some(weighted)
    } else {
        None
    };

    Ok(LossNodes { total, task, vq, drift, top_logits: top_logits.expect("level >= 1") })
}

/// Per-dimension spread of encoder outputs over the dataset, floored at
/// [`MIN_CODEWORD_STD`]; scales fresh codewords at stage openings.
fn latent_dim_std(encoder: &EncoderParams, ds: &Dataset) -> Result<Vec<f64>> {
    let z = encoder.encode(&ds.features_tensor())?;
    let d = encoder.d();
    let n = (z.numel() / d) as f64;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for sub in z.values().chunks_exact(d) {
        for (k, v) in sub.iter().enumerate() {
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    Ok((0..d)
        .map(|k| {
            let mean = sum[k] / n;
            (sum_sq[k] / n - mean * mean).max(0.0).sqrt().max(MIN_CODEWORD_STD)
        })
        .collect())
}

struct BatchOutcome {
    total: f64,
    task: f64,
    vq: f64,
    drift: f64,
    correct: usize,
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    encoder: &mut EncoderParams,
    head: &mut InferenceParams,
    codebook: &mut NestedCodebook,
    adam: &mut Adam,
    batch_x: &Tensor,
    batch_y: &[usize],
    level: usize,
    snapshot: &StageSnapshot,
    cfg: &TrainConfig,
    ch_rng: &mut impl Rng,
) -> Result<BatchOutcome> {
    let mut tape = Tape::new();
    let enc_nodes = encoder.mlp().register(&mut tape);
    let head_nodes = head.mlp().register(&mut tape);
    let cb_node = tape.param(codebook.codewords().clone());
    let x = tape.input(batch_x.clone());
    let z_e = encoder.mlp().forward(&mut tape, &enc_nodes, x)?;
    let losses = mr_loss(
        &mut tape,
        head,
        &head_nodes,
        codebook,
        cb_node,
        z_e,
        batch_y,
        level,
        snapshot,
        cfg,
        ch_rng,
    )?;
    let grads = tape.backward(losses.total)?;

    let outcome = BatchOutcome {
        total: tape.value(losses.total).as_scalar()?,
        task: tape.value(losses.task).as_scalar()?,
        vq: tape.value(losses.vq).as_scalar()?,
        drift: losses.drift.map_or(Ok(0.0), |d| tape.value(d).as_scalar())?,
        correct: {
            let logits = tape.value(losses.top_logits);
            (0..batch_y.len()).filter(|&r| argmax(logits.row(r)) == batch_y[r]).count()
        },
    };

    let node_order: Vec<NodeId> =
        enc_nodes.params.iter().chain(head_nodes.params.iter()).copied().chain([cb_node]).collect();
    let mut codewords = codebook.codewords().clone();
    {
        let mut params: Vec<&mut Tensor> = encoder
            .mlp_mut()
            .tensors_mut()
            .into_iter()
            .chain(head.mlp_mut().tensors_mut())
            .chain([&mut codewords])
            .collect();
        let grad_refs: Vec<Option<&Tensor>> = node_order.iter().map(|id| grads.get(*id)).collect();
        adam.step(&mut params, &grad_refs)?;
    }
    codebook.set_codewords(codewords)?;
    Ok(outcome)
}

/// Runs the full progressive schedule and returns the trained artifacts
/// with the per-epoch log.
///
/// Stage order is strict: extend the codebook, snapshot the prefix, then
/// `epochs_per_level` epochs of `P` batches, each batch one joint update
/// of encoder, head, and the active codewords. A non-finite loss aborts
/// with the stage and epoch named.
pub fn train_progressive(cfg: &TrainConfig, ds: &Dataset) -> Result<(TrainedModel, TrainingLog)> {
    cfg.validate()?;
    let mut w_rng = stream(cfg.seed, StreamKind::WeightInit, 0);
    let mut encoder =
        EncoderParams::init(ds.feature_dim(), &cfg.encoder_hidden, cfg.m, cfg.d, &mut w_rng)?;
    let mut head =
        InferenceParams::init(cfg.m * cfg.d, &cfg.head_hidden, ds.num_classes(), &mut w_rng)?;
    let mut codebook = NestedCodebook::new(cfg.d, cfg.k_max)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut log = TrainingLog::default();
    let p = ds.len().div_ceil(cfg.batch_size).min(ds.len());
    let mut ch_rng = stream(cfg.seed, StreamKind::ChannelTrain, 0);

    for level in 1..=cfg.levels() {
        let dim_std = latent_dim_std(&encoder, ds)?;
        let mut cw_rng = stream(cfg.seed, StreamKind::CodewordInit, level as u64);
        let prefix = codebook.extend_level(level, &dim_std, &mut cw_rng)?;
        let snapshot = StageSnapshot { level, prefix };

        for epoch in 1..=cfg.epochs_per_level {
            let global_epoch = (level - 1) * cfg.epochs_per_level + (epoch - 1);
            let index_batches = batches(ds, p, cfg.seed, global_epoch)?;
            let mut sums = (0.0, 0.0, 0.0, 0.0);
            let mut correct = 0usize;
            for batch in &index_batches {
                let bx = ds.features_of(batch)?;
                let by = ds.labels_of(batch);
                let out = train_batch(
                    &mut encoder,
                    &mut head,
                    &mut codebook,
                    &mut adam,
                    &bx,
                    &by,
                    level,
                    &snapshot,
                    cfg,
                    &mut ch_rng,
                )
                .map_err(|e| match e {
                    Error::Numeric(_) => Error::Diverged { level, epoch },
                    other => other,
                })?;
                let w = by.len() as f64;
                sums.0 += out.total * w;
                sums.1 += out.task * w;
                sums.2 += out.vq * w;
                sums.3 += out.drift * w;
                correct += out.correct;
            }
            let n = ds.len() as f64;
            log.rows.push(EpochStats {
                level,
                epoch,
                mean_loss: sums.0 / n,
                task_loss: sums.1 / n,
                vq_loss: sums.2 / n,
                drift_loss: sums.3 / n,
                train_acc: correct as f64 / n,
            });
        }
        codebook.set_trained_levels(level)?;
    }

    Ok((TrainedModel { encoder, head, codebook }, log))
}

/// Quantization-free baseline: the same encoder and head trained on the
/// plain composition `head(encoder(x))`.
#[derive(Clone, Debug)]
pub struct ReferenceModel {
    pub encoder: EncoderParams,
    pub head: InferenceParams,
}

impl ReferenceModel {
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head.infer(&self.encoder.encode(x)?)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let logits = self.logits(&ds.features_tensor())?;
        crate::evaluation::accuracy_from_logits(&logits, ds.labels())
    }
}

/// Trains the no-quantization, no-channel baseline under the same init,
/// optimizer, batch schedule, and total epoch budget
/// (`levels * epochs_per_level`) as the progressive run.
pub fn train_reference(cfg: &TrainConfig, ds: &Dataset) -> Result<ReferenceModel> {
    cfg.validate()?;
    let mut w_rng = stream(cfg.seed, StreamKind::WeightInit, 0);
    let mut encoder =
        EncoderParams::init(ds.feature_dim(), &cfg.encoder_hidden, cfg.m, cfg.d, &mut w_rng)?;
    let mut head =
        InferenceParams::init(cfg.m * cfg.d, &cfg.head_hidden, ds.num_classes(), &mut w_rng)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let p = ds.len().div_ceil(cfg.batch_size).min(ds.len());
    let total_epochs = cfg.levels() * cfg.epochs_per_level;

    for epoch in 0..total_epochs {
        for batch in &batches(ds, p, cfg.seed, epoch)? {
            let bx = ds.features_of(batch)?;
            let by = ds.labels_of(batch);
            let mut tape = Tape::new();
            let enc_nodes = encoder.mlp().register(&mut tape);
            let head_nodes = head.mlp().register(&mut tape);
            let x = tape.input(bx);
            let z = encoder.mlp().forward(&mut tape, &enc_nodes, x)?;
            let logits = head.mlp().forward(&mut tape, &head_nodes, z)?;
            let loss = tape.cross_entropy(logits, &by)?;
            let grads = tape.backward(loss).map_err(|e| match e {
                Error::Numeric(_) => {
                    Error::Diverged { level: 0, epoch: epoch / cfg.epochs_per_level.max(1) + 1 }
                }
                other => other,
            })?;

            let node_order: Vec<NodeId> =
                enc_nodes.params.iter().chain(head_nodes.params.iter()).copied().collect();
            let mut params: Vec<&mut Tensor> = encoder
                .mlp_mut()
                .tensors_mut()
                .into_iter()
                .chain(head.mlp_mut().tensors_mut())
                .collect();
            let grad_refs: Vec<Option<&Tensor>> =
                node_order.iter().map(|id| grads.get(*id)).collect();
            adam.step(&mut params, &grad_refs)?;
        }
    }
    Ok(ReferenceModel { encoder, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::models::{DenseLayer, Mlp};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs_per_level: 2,
            batch_size: 16,
            k_max: 4,
            m: 4,
            d: 2,
            encoder_hidden: vec![8],
            head_hidden: vec![8],
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradients_leave_parameters_untouched() {
        let mut adam = Adam::new(1e-3);
        let mut p = Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap();
        let zero = Tensor::zeros(vec![3]);
        let before = p.values().to_vec();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Some(&zero)]).unwrap();
        }
        assert_eq!(p.values(), &before[..]);
        let mut q = Tensor::from_vec(vec![4.0]).unwrap();
        adam.step(&mut [&mut q], &[None]).unwrap();
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let lr = 0.1;
        let mut adam = Adam::new(lr);
        let mut p = Tensor::scalar(5.0).unwrap();
        let g = Tensor::scalar(2.0).unwrap();
        adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        let step = 5.0 - p.as_scalar().unwrap();
        assert!((step - lr).abs() < 1e-8, "step {step}");
    }

    fn zero_head(latent: usize, classes: usize) -> InferenceParams {
        let mlp = Mlp::from_layers(vec![DenseLayer {
            w: Tensor::zeros(vec![latent, classes]),
            b: Tensor::zeros(vec![classes]),
        }])
        .unwrap();
        InferenceParams::from_mlp(mlp, classes).unwrap()
    }

    fn hand_codebook() -> NestedCodebook {
        let words = Tensor::matrix(4, 1, vec![0.0, 1.0, -1.0, 0.5]).unwrap();
        NestedCodebook::from_parts(words, 2).unwrap()
    }

    fn hand_cfg() -> TrainConfig {
        TrainConfig {
            m: 2,
            d: 1,
            k_max: 4,
            gamma: 0.25,
            eta: 0.1,
            eps_train: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mr_loss_level_one_is_task_plus_standard_vq() {
        // At stage 1 the objective must equal cross-entropy plus the plain
        // vector-quantization loss, term by term.
        let cfg = hand_cfg();
        let cb = hand_codebook();
        let head = zero_head(2, 2);
        let mut rng = stream(0, StreamKind::ChannelTrain, 0);

        let mut tape = Tape::new();
        let head_nodes = head.mlp().register(&mut tape);
        let cb_node = tape.param(cb.codewords().clone());
        let z_e = tape.param(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
        let snapshot = StageSnapshot { level: 1, prefix: None };
        let losses = mr_loss(
            &mut tape,
            &head,
            &head_nodes,
            &cb,
            cb_node,
            z_e,
            &[0],
            1,
            &snapshot,
            &cfg,
            &mut rng,
        )
        .unwrap();

        let ce = 2.0_f64.ln();
        let vq = (0.09 + 0.04) * 1.25;
        assert!((tape.value(losses.task).as_scalar().unwrap() - ce).abs() < 1e-12);
        assert!((tape.value(losses.vq).as_scalar().unwrap() - vq).abs() < 1e-12);
        assert!(losses.drift.is_none());
        let total = tape.value(losses.total).as_scalar().unwrap();
        assert!((total - (ce + vq)).abs() < 1e-12);
    }

    #[test]
    fn mr_loss_level_two_hand_arithmetic() {
        let cfg = hand_cfg();
        let cb = hand_codebook();
        let head = zero_head(2, 2);
        let mut rng = stream(0, StreamKind::ChannelTrain, 0);

        let mut tape = Tape::new();
        let head_nodes = head.mlp().register(&mut tape);
        let cb_node = tape.param(cb.codewords().clone());
        let z_e = tape.param(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
        let snapshot =
            StageSnapshot { level: 2, prefix: Some(Tensor::matrix(2, 1, vec![0.1, 0.9]).unwrap()) };
        let losses = mr_loss(
            &mut tape,
            &head,
            &head_nodes,
            &cb,
            cb_node,
            z_e,
            &[0],
            2,
            &snapshot,
            &cfg,
            &mut rng,
        )
        .unwrap();

        // level 1: both sub-vectors hit codeword 0; level 2: 0.3 -> 0.5,
        // -0.2 -> 0. Zero head gives ln 2 per level. Drift compares the
        // live prefix (0, 1) to the snapshot (0.1, 0.9).
        let ce = 2.0 * 2.0_f64.ln();
        let vq1 = (0.09 + 0.04) * 1.25;
        let vq2 = (0.04 + 0.04) * 1.25;
        let drift = 0.1 * (0.01 + 0.01);
        let total = tape.value(losses.total).as_scalar().unwrap();
        assert!((total - (ce + vq1 + vq2 + drift)).abs() < 1e-12, "{total}");
        let d = tape.value(losses.drift.unwrap()).as_scalar().unwrap();
        assert!((d - drift).abs() < 1e-15);
    }

    #[test]
    fn mr_loss_requires_snapshot_beyond_level_one() {
        let cfg = hand_cfg();
        let cb = hand_codebook();
        let head = zero_head(2, 2);
        let mut rng = stream(0, StreamKind::ChannelTrain, 0);
        let mut tape = Tape::new();
        let head_nodes = head.mlp().register(&mut tape);
        let cb_node = tape.param(cb.codewords().clone());
        let z_e = tape.param(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
        let snapshot = StageSnapshot { level: 2, prefix: None };
        let err = mr_loss(
            &mut tape,
            &head,
            &head_nodes,
            &cb,
            cb_node,
            z_e,
            &[0],
            2,
            &snapshot,
            &cfg,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));

        let snapshot = StageSnapshot { level: 1, prefix: None };
        let err = mr_loss(
            &mut tape,
            &head,
            &head_nodes,
            &cb,
            cb_node,
            z_e,
            &[0],
            2,
            &snapshot,
            &cfg,
            &mut rng,
        )
        .unwrap_err();
        assert!(err.to_string().contains("stage"), "{err}");
    }

    #[test]
    fn mr_loss_drift_is_zero_for_unmoved_prefix() {
        let cfg = hand_cfg();
        let cb = hand_codebook();
        let head = zero_head(2, 2);
        let mut rng = stream(0, StreamKind::ChannelTrain, 0);
        let mut tape = Tape::new();
        let head_nodes = head.mlp().register(&mut tape);
        let cb_node = tape.param(cb.codewords().clone());
        let z_e = tape.param(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
        let prefix = Tensor::matrix(2, 1, cb.codewords().values()[..2].to_vec()).unwrap();
        let snapshot = StageSnapshot { level: 2, prefix: Some(prefix) };
        let losses = mr_loss(
            &mut tape,
            &head,
            &head_nodes,
            &cb,
            cb_node,
            z_e,
            &[0],
            2,
            &snapshot,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(tape.value(losses.drift.unwrap()).as_scalar().unwrap(), 0.0);
    }

    #[test]
    fn stage_one_step_leaves_deeper_codewords_alone() {
        let cfg = hand_cfg();
        let mut cb =
            NestedCodebook::from_parts(Tensor::matrix(4, 1, vec![0.0, 1.0, -1.0, 0.5]).unwrap(), 0)
                .unwrap();
        let mut encoder = {
            let mut rng = stream(1, StreamKind::WeightInit, 0);
            EncoderParams::init(2, &[4], 2, 1, &mut rng).unwrap()
        };
        let mut head = {
            let mut rng = stream(1, StreamKind::WeightInit, 1);
            InferenceParams::init(2, &[4], 2, &mut rng).unwrap()
        };
        let mut adam = Adam::new(1e-2);
        let mut rng = stream(1, StreamKind::ChannelTrain, 0);
        let before = cb.codewords().values().to_vec();
        let bx = Tensor::matrix(2, 2, vec![0.4, 0.1, -0.3, 0.8]).unwrap();
        let snapshot = StageSnapshot { level: 1, prefix: None };
        train_batch(
            &mut encoder,
            &mut head,
            &mut cb,
            &mut adam,
            &bx,
            &[0, 1],
            1,
            &snapshot,
            &cfg,
            &mut rng,
        )
        .unwrap();
        let after = cb.codewords().values();
        assert_ne!(&after[..2], &before[..2], "active prefix should move");
        assert_eq!(&after[2..], &before[2..], "inactive rows must not move");
    }

    #[test]
    fn drift_penalty_restrains_prefix_movement() {
        // 40 identical steps at stage 2, differing only in eta: the
        // heavier penalty must keep the prefix closer to its snapshot.
        let run = |eta: f64| {
            let cfg = TrainConfig { eta, ..hand_cfg() };
            let mut cb = hand_codebook();
            let mut encoder = {
                let mut rng = stream(2, StreamKind::WeightInit, 0);
                EncoderParams::init(2, &[8], 2, 1, &mut rng).unwrap()
            };
            let mut head = {
                let mut rng = stream(2, StreamKind::WeightInit, 1);
                InferenceParams::init(2, &[8], 2, &mut rng).unwrap()
            };
            let mut adam = Adam::new(1e-2);
            let mut rng = stream(2, StreamKind::ChannelTrain, 0);
            let snapshot = StageSnapshot {
                level: 2,
                prefix: Some(Tensor::matrix(2, 1, cb.codewords().values()[..2].to_vec()).unwrap()),
            };
            let bx = Tensor::matrix(4, 2, vec![0.4, 0.1, -0.3, 0.8, 0.9, -0.6, 0.2, 0.3]).unwrap();
            for _ in 0..40 {
                train_batch(
                    &mut encoder,
                    &mut head,
                    &mut cb,
                    &mut adam,
                    &bx,
                    &[0, 1, 0, 1],
                    2,
                    &snapshot,
                    &cfg,
                    &mut rng,
                )
                .unwrap();
            }
            let snap = snapshot.prefix.as_ref().unwrap().values().to_vec();
            cb.codewords().values()[..2]
                .iter()
                .zip(&snap)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let loose = run(0.0);
        let tight = run(10.0);
        assert!(tight < loose, "drift {tight} vs {loose}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = generate_blobs(2, 3, 20, 0.2, 7).unwrap();
        let cfg = tiny_cfg();
        let (m1, log1) = train_progressive(&cfg, &ds).unwrap();
        let (m2, log2) = train_progressive(&cfg, &ds).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(m1.codebook.codewords().values(), m2.codebook.codewords().values());
        for (a, b) in m1.encoder.mlp().tensors().iter().zip(m2.encoder.mlp().tensors()) {
            assert_eq!(a.values(), b.values());
        }
        for (a, b) in m1.head.mlp().tensors().iter().zip(m2.head.mlp().tensors()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_artifacts() {
        let ds = generate_blobs(2, 3, 20, 0.2, 7).unwrap();
        let cfg = TrainConfig { epochs_per_level: 0, ..tiny_cfg() };
        let (model, log) = train_progressive(&cfg, &ds).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(model.codebook.trained_levels(), 2);
        assert!(model.codebook.codewords().values().iter().all(|&v| v != 0.0));
        let mut w_rng = stream(cfg.seed, StreamKind::WeightInit, 0);
        let fresh = EncoderParams::init(3, &cfg.encoder_hidden, cfg.m, cfg.d, &mut w_rng).unwrap();
        for (a, b) in model.encoder.mlp().tensors().iter().zip(fresh.mlp().tensors()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn per_stage_task_loss_decreases() {
        // The total objective need not fall monotonically: at low levels
        // the distortion term is capacity-limited and grows while the
        // encoder spreads classes apart. The task term must fall.
        let ds = generate_blobs(4, 4, 50, 0.1, 5).unwrap();
        let cfg = TrainConfig {
            epochs_per_level: 10,
            batch_size: 32,
            learning_rate: 3e-3,
            k_max: 4,
            m: 4,
            d: 2,
            encoder_hidden: vec![32],
            head_hidden: vec![32],
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, log) = train_progressive(&cfg, &ds).unwrap();
        for level in 1..=2 {
            let stage: Vec<&EpochStats> = log.rows.iter().filter(|r| r.level == level).collect();
            assert_eq!(stage.len(), 10);
            let first = stage.first().unwrap();
            let last = stage.last().unwrap();
            assert!(
                last.task_loss < first.task_loss,
                "stage {level}: task {} -> {}",
                first.task_loss,
                last.task_loss
            );
        }
        assert!(log.rows.last().unwrap().train_acc > 0.9);
    }

    #[test]
    fn divergence_names_stage_and_epoch() {
        let ds = generate_blobs(2, 3, 20, 0.2, 7).unwrap();
        let cfg = TrainConfig { learning_rate: 1e155, ..tiny_cfg() };
        match train_progressive(&cfg, &ds) {
            Err(Error::Diverged { level, epoch }) => {
                assert!(level >= 1 && epoch >= 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn log_csv_has_schema() {
        let log = TrainingLog {
            rows: vec![EpochStats {
                level: 1,
                epoch: 1,
                mean_loss: 1.5,
                task_loss: 1.0,
                vq_loss: 0.5,
                drift_loss: 0.0,
                train_acc: 0.25,
            }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf, &["mrtoc seed=1".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# mrtoc seed=1\nlevel,epoch,mean_loss,task_loss,vq_loss,drift_loss,train_acc\n\
             1,1,1.5,1,0.5,0,0.25\n"
        );
    }

    #[test]
    fn reference_model_learns_the_task() {
        let ds = generate_blobs(3, 4, 60, 0.05, 9).unwrap();
        let cfg = TrainConfig {
            epochs_per_level: 10,
            batch_size: 32,
            k_max: 4,
            m: 4,
            d: 2,
            encoder_hidden: vec![32],
            head_hidden: vec![32],
            seed: 9,
            ..TrainConfig::default()
        };
        let reference = train_reference(&cfg, &ds).unwrap();
        let acc = reference.accuracy(&ds).unwrap();
        assert!(acc > 0.9, "reference accuracy {acc}");
    }
}
