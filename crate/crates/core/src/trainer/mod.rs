//! The optimization loop: two augmented views, split representations,
//! per-batch Sinkhorn targets, the combined objective, SGD updates, and the
//! optional key encoder / queue and self-labeling phase.
//!
//! Randomness is derived from `(seed, epoch)` substreams, so a run resumed
//! at an epoch boundary replays exactly the same batches and views.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, save_params, Checkpoint, TrainingState};
pub use config::{EncoderMode, Schedule, SinkhornInput, TrainConfig};
pub use optim::{learning_rate, OptimizerState};

use std::io::Write;

use log::{debug, info, warn};
use serde::Serialize;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{clc_objective, cluster_probs, self_label_var, LossBreakdown};
use crate::metrics::{assignment_entropy, cluster_scores, ClusterScores};
use crate::model::{MomentumEncoder, NegativeQueue, Normalization, Params, Representation};
use crate::sinkhorn::solve;
use crate::tensor::{Matrix, RngState};

const INIT_STREAM: u64 = 0;
const EPOCH_STREAM: u64 = 1 << 20;
const SELF_LABEL_STREAM: u64 = 2 << 20;

/// Snapshot of the batch that produced a non-finite value.
#[derive(Debug, Clone)]
pub struct BatchDump {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub reason: String,
    pub inputs: Matrix,
    pub loss: Option<LossBreakdown>,
    pub params_finite: bool,
}

impl BatchDump {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# non-finite value at epoch {} step {}", self.epoch, self.step)?;
        writeln!(w, "# reason: {}", self.reason)?;
        writeln!(w, "# lr: {}", self.lr)?;
        writeln!(w, "# params finite before step: {}", self.params_finite)?;
        if let Some(l) = &self.loss {
            writeln!(w, "# loss: {l:?}")?;
        }
        for r in 0..self.inputs.rows() {
            let row: Vec<String> = self.inputs.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub mean_loss: f64,
    pub entropy: f64,
    #[serde(flatten)]
    pub scores: Option<ClusterScores>,
}

/// Everything a run produced, in order. Contains no timestamps, so equal
/// configs and seeds give equal records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub version: String,
    pub config: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            config: cfg.to_text(),
            seed: cfg.seed,
            steps: Vec::new(),
            epochs: Vec::new(),
        }
    }

    /// JSON lines: a header, then step and epoch records interleaved in
    /// the order they happened.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        let config: serde_json::Map<String, serde_json::Value> = self
            .config
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        let header = serde_json::json!({
            "type": "header",
            "version": self.version,
            "seed": self.seed,
            "config": config,
        });
        writeln!(w, "{header}")?;
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch <= e.epoch && e.phase == "train") {
                write_typed(w, "step", s)?;
            }
            write_typed(w, "epoch", e)?;
        }
        for s in steps {
            write_typed(w, "step", s)?;
        }
        Ok(())
    }

    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn write_typed<W: Write, T: Serialize>(w: &mut W, kind: &str, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("type".into(), serde_json::Value::String(kind.into()));
    }
    writeln!(w, "{v}")?;
    Ok(())
}

/// Cluster index per row: argmax of the cluster logits on clean inputs.
pub fn predict(params: &Params, x: &Matrix, norm: Normalization) -> Result<Vec<usize>> {
    Ok(params.forward(x, norm)?.zc.row_argmax())
}

/// Clean-input evaluation of `params` on `ds`.
pub fn evaluate(params: &Params, ds: &Dataset, norm: Normalization) -> Result<(f64, Option<ClusterScores>)> {
    let pred = predict(params, &ds.features, norm)?;
    let k = params.spec().clusters;
    let entropy = assignment_entropy(&pred, k);
    let scores = match &ds.labels {
        Some(l) if l.len() >= 2 => Some(cluster_scores(&pred, l, k)?),
        _ => None,
    };
    Ok((entropy, scores))
}

/// Row indices of each batch for one epoch. Incomplete trailing batches are
/// dropped unless the dataset is smaller than one batch.
fn epoch_batches(n: usize, batch: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let perm = rng.permutation(n);
    if n < batch {
        return if n >= 2 { vec![perm] } else { Vec::new() };
    }
    perm.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}

pub fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    if n < batch {
        u64::from(n >= 2)
    } else {
        (n / batch) as u64
    }
}

/// Model, optimizer and auxiliary encoder state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: Params,
    pub opt: OptimizerState,
    pub key: Option<MomentumEncoder>,
    pub queue: Option<NegativeQueue>,
    /// Next epoch to run.
    pub epoch: usize,
    /// Best clean-input accuracy seen so far, with its epoch and weights.
    pub best: Option<(usize, f64, Params)>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.spec(input_dim)?;
        let params = Params::init(&spec, &mut RngState::with_stream(cfg.seed, INIT_STREAM))?;
        let opt = OptimizerState::new(&params);
        let (key, queue) = match cfg.mode {
            EncoderMode::InBatch => (None, None),
            EncoderMode::Momentum => (
                Some(MomentumEncoder::new(&params, cfg.ema_momentum)?),
                Some(NegativeQueue::new(cfg.queue_capacity, cfg.clusters, cfg.instance_dim)),
            ),
        };
        Ok(Self {
            cfg,
            params,
            opt,
            key,
            queue,
            epoch: 0,
            best: None,
        })
    }

    fn dump(&self, x: &Matrix, lr: f64, reason: String, loss: Option<LossBreakdown>) -> Error {
        Error::NonFiniteLoss {
            epoch: self.epoch,
            step: self.opt.step,
            dump: Box::new(BatchDump {
                epoch: self.epoch,
                step: self.opt.step,
                lr,
                reason,
                inputs: x.clone(),
                loss,
                params_finite: self.params.is_finite(),
            }),
        }
    }

    /// One update on the rows of `x`. Any overflow, degenerate
    /// normalization or non-finite loss/gradient/parameter aborts with a
    /// dump of the batch; parameters are left untouched in that case unless
    /// the update itself produced the non-finite values.
    pub fn train_step(&mut self, x: &Matrix, lr: f64, rng: &mut RngState) -> Result<LossBreakdown> {
        let (view_q, view_k) = crate::data::two_views(x, &self.cfg.weak_augmentation(), rng);
        let outcome = self.step_inner(&view_q, &view_k);
        let (breakdown, grads) = match outcome {
            Ok(v) => v,
            Err(Error::NonFinite { op }) => return Err(self.dump(x, lr, format!("overflow in {op}"), None)),
            Err(Error::Degenerate { op, detail }) => return Err(self.dump(x, lr, format!("{op}: {detail}"), None)),
            Err(e) => return Err(e),
        };
        if !breakdown.total.is_finite() {
            return Err(self.dump(x, lr, "non-finite loss".into(), Some(breakdown)));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(self.dump(x, lr, "non-finite gradient".into(), Some(breakdown)));
        }
        self.opt
            .apply(&mut self.params, &grads, lr, self.cfg.sgd_momentum, self.cfg.weight_decay)?;
        if !self.params.is_finite() {
            return Err(self.dump(x, lr, "non-finite parameters after update".into(), Some(breakdown)));
        }
        if let Some(key) = &mut self.key {
            key.ema_update(&self.params)?;
        }
        Ok(breakdown)
    }

    fn keys_for(&self, view_k: &Matrix) -> Result<Representation> {
        let norm = self.cfg.normalization();
        match &self.key {
            Some(k) => k.params.forward(view_k, norm),
            None => self.params.forward(view_k, norm),
        }
    }

    fn sinkhorn_logits(&self, zc: &Matrix) -> Result<Matrix> {
        match self.cfg.sinkhorn_input {
            SinkhornInput::Normalized => Ok(zc.clone()),
            SinkhornInput::Scaled => zc.scale(1.0 / self.cfg.t),
        }
    }

    fn step_inner(&mut self, view_q: &Matrix, view_k: &Matrix) -> Result<(LossBreakdown, Vec<Matrix>)> {
        let norm = self.cfg.normalization();
        let keys = self.keys_for(view_k)?;
        let tape = Tape::new();
        let vars = self.params.on_tape(&tape, true);
        let query = vars.forward(tape.constant(view_q.clone()), self.cfg.clusters, norm)?;
        let sk = self.cfg.sinkhorn();
        let mode = self.cfg.sinkhorn_mode();
        let q_query = solve(&self.sinkhorn_logits(&query.zc.value())?, &sk, mode)?;
        let q_key = solve(&self.sinkhorn_logits(&keys.zc)?, &sk, mode)?;
        let negatives = self.queue.as_ref().and_then(NegativeQueue::negatives);
        let (loss, breakdown) = clc_objective(query, &keys, negatives.as_ref(), &q_query, &q_key, &self.cfg.loss())?;
        let grads = tape.backward(loss)?;
        let grads = vars.vars().into_iter().map(|v| grads.get_or_zeros(v)).collect();
        if let Some(q) = &mut self.queue {
            q.push(&keys)?;
        }
        Ok((breakdown, grads))
    }

    /// Runs one epoch over `ds` and appends its records.
    pub fn run_epoch(&mut self, ds: &Dataset, record: &mut RunRecord) -> Result<()> {
        let total = self.cfg.epochs as u64 * steps_per_epoch(ds.len(), self.cfg.batch_size);
        let mut rng = RngState::with_stream(self.cfg.seed, EPOCH_STREAM + self.epoch as u64);
        let batches = epoch_batches(ds.len(), self.cfg.batch_size, &mut rng);
        let mut sum = 0.0;
        for idx in &batches {
            let x = ds.features.select_rows(idx);
            let lr = learning_rate(self.cfg.schedule, self.cfg.lr, self.opt.step, total);
            let step = self.opt.step;
            let loss = self.train_step(&x, lr, &mut rng)?;
            sum += loss.total;
            record.steps.push(StepRecord {
                epoch: self.epoch,
                step,
                lr,
                loss,
            });
        }
        let norm = self.cfg.normalization();
        let (entropy, scores) = match evaluate(&self.params, ds, norm) {
            Ok(v) => v,
            Err(Error::NonFinite { op }) => {
                return Err(self.dump(&ds.features, 0.0, format!("overflow in {op} while evaluating"), None))
            }
            Err(e) => return Err(e),
        };
        let mean_loss = sum / batches.len().max(1) as f64;
        if let Some(s) = &scores {
            if self.best.as_ref().map_or(true, |b| s.acc > b.1) {
                self.best = Some((self.epoch, s.acc, self.params.clone()));
            }
        }
        debug!(
            "epoch {} loss {:.5} entropy {:.4} acc {:?}",
            self.epoch,
            mean_loss,
            entropy,
            scores.map(|s| s.acc)
        );
        record.epochs.push(EpochRecord {
            epoch: self.epoch,
            phase: "train",
            mean_loss,
            entropy,
            scores,
        });
        self.epoch += 1;
        Ok(())
    }

    /// Runs the remaining epochs (all of them for a fresh trainer).
    pub fn fit(&mut self, ds: &Dataset, record: &mut RunRecord) -> Result<()> {
        if ds.dim() != self.params.spec().input {
            return Err(Error::Shape {
                op: "fit",
                lhs: (ds.len(), ds.dim()),
                rhs: (ds.len(), self.params.spec().input),
            });
        }
        while self.epoch < self.cfg.epochs {
            self.run_epoch(ds, record)?;
        }
        if let Some(e) = record.final_epoch() {
            info!("trained {} epochs, final loss {:.5}", self.epoch, e.mean_loss);
        }
        Ok(())
    }

    /// Fine-tunes on confident samples: pseudo-labels from weak views,
    /// cross-entropy on strong views. Batches without a confident sample
    /// leave the parameters untouched; an epoch without any stops the phase.
    pub fn self_label_finetune(&mut self, ds: &Dataset, record: &mut RunRecord) -> Result<usize> {
        let cfg = self.cfg.clone();
        let norm = cfg.normalization();
        let mut opt = OptimizerState::new(&self.params);
        let mut updates = 0;
        for e in 0..cfg.self_label_epochs {
            let mut rng = RngState::with_stream(cfg.seed, SELF_LABEL_STREAM + e as u64);
            let batches = epoch_batches(ds.len(), cfg.batch_size, &mut rng);
            let (mut confident_batches, mut sum) = (0usize, 0.0);
            for idx in &batches {
                let x = ds.features.select_rows(idx);
                let weak = cfg.weak_augmentation().apply(&x, &mut rng);
                let strong = cfg.strong_augmentation().apply(&x, &mut rng);
                let probs_weak = cluster_probs(&self.params.forward(&weak, norm)?.zc, cfg.t)?;
                let tape = Tape::new();
                let vars = self.params.on_tape(&tape, true);
                let rep = vars.forward(tape.constant(strong), cfg.clusters, norm)?;
                let Some(loss) = self_label_var(&probs_weak, rep.zc, cfg.t, cfg.self_label_threshold)? else {
                    continue;
                };
                let value = loss.item()?;
                let grads = tape.backward(loss)?;
                let grads: Vec<Matrix> = vars.vars().into_iter().map(|v| grads.get_or_zeros(v)).collect();
                if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(self.dump(&x, cfg.self_label_lr, "non-finite self-label loss".into(), None));
                }
                opt.apply(&mut self.params, &grads, cfg.self_label_lr, cfg.sgd_momentum, cfg.weight_decay)?;
                confident_batches += 1;
                updates += 1;
                sum += value;
                record.steps.push(StepRecord {
                    epoch: self.epoch + e,
                    step: opt.step,
                    lr: cfg.self_label_lr,
                    loss: LossBreakdown::compose(0.0, 0.0, cfg.alpha, Some(value)),
                });
            }
            if confident_batches == 0 {
                warn!("self-labeling epoch {e}: no confident samples, stopping the phase");
                break;
            }
            let (entropy, scores) = evaluate(&self.params, ds, norm)?;
            record.epochs.push(EpochRecord {
                epoch: self.epoch + e,
                phase: "self-label",
                mean_loss: sum / confident_batches as f64,
                entropy,
                scores,
            });
        }
        Ok(updates)
    }
}

/// Trains a fresh model on `ds` (plus the self-labeling phase when enabled).
pub fn fit(ds: &Dataset, cfg: &TrainConfig) -> Result<(Trainer, RunRecord)> {
    let mut trainer = Trainer::new(cfg.clone(), ds.dim())?;
    let mut record = RunRecord::new(cfg);
    trainer.fit(ds, &mut record)?;
    if cfg.self_label {
        trainer.self_label_finetune(ds, &mut record)?;
    }
    Ok((trainer, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_mixture, GmmSpec};
    use crate::losses::{infonce, similarity_decompose};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            hidden: vec![16, 16],
            instance_dim: 8,
            clusters: 3,
            seed: 11,
            ..Default::default()
        }
    }

    fn small_data() -> Dataset {
        gen_gaussian_mixture(&GmmSpec::new(3, 40, 5, 6.0, 2)).unwrap()
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let ds = small_data();
        let mut tr = Trainer::new(small_cfg(), 5).unwrap();
        let before = tr.params.clone();
        let x = ds.features.select_rows(&(0..32).collect::<Vec<_>>());
        let loss = tr.train_step(&x, 0.0, &mut RngState::new(1)).unwrap();
        assert!(loss.total.is_finite());
        assert_eq!(tr.params, before);
    }

    #[test]
    fn without_cluster_weight_the_step_is_plain_infonce() {
        let ds = small_data();
        let cfg = TrainConfig { alpha: 0.0, ..small_cfg() };
        let mut tr = Trainer::new(cfg.clone(), 5).unwrap();
        let x = ds.features.select_rows(&(10..42).collect::<Vec<_>>());
        let rng = RngState::new(3);
        // Rebuild the same views independently and score them directly.
        let (vq, vk) = crate::data::two_views(&x, &cfg.weak_augmentation(), &mut rng.clone());
        let q = tr.params.forward(&vq, Normalization::default()).unwrap();
        let k = tr.params.forward(&vk, Normalization::default()).unwrap();
        let reference = infonce(&similarity_decompose(&q, &k).unwrap(), cfg.tau).unwrap();
        let loss = tr.train_step(&x, 0.06, &mut rng.clone()).unwrap();
        assert!((loss.total - reference).abs() < 1e-12);
        assert_eq!(loss.total, loss.infonce);
    }

    #[test]
    fn first_step_matches_golden_breakdown() {
        let ds = small_data();
        let mut tr = Trainer::new(small_cfg(), 5).unwrap();
        let x = ds.features.select_rows(&(0..32).collect::<Vec<_>>());
        let loss = tr.train_step(&x, 0.06, &mut RngState::new(5)).unwrap();
        // Regression values recorded from a verified run.
        assert!((loss.infonce - GOLDEN_INFONCE).abs() < 1e-12, "{:.17}", loss.infonce);
        assert!((loss.equipartition_ce - GOLDEN_CE).abs() < 1e-12, "{:.17}", loss.equipartition_ce);
        assert!((loss.total - (loss.infonce + 5.0 * loss.equipartition_ce)).abs() < 1e-12);
    }

    const GOLDEN_INFONCE: f64 = 3.22813802753286083;
    const GOLDEN_CE: f64 = 4.86735667427430840;

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let ds = small_data();
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let (tr, rec) = fit(&ds, &cfg).unwrap();
        assert_eq!(tr.params, Trainer::new(cfg, 5).unwrap().params);
        assert!(rec.steps.is_empty() && rec.epochs.is_empty());
    }

    #[test]
    fn same_seed_same_record() {
        let ds = small_data();
        for mode in [EncoderMode::InBatch, EncoderMode::Momentum] {
            let cfg = TrainConfig { mode, queue_capacity: 40, ..small_cfg() };
            let (a, ra) = fit(&ds, &cfg).unwrap();
            let (b, rb) = fit(&ds, &cfg).unwrap();
            assert_eq!(ra, rb);
            assert_eq!(a.params, b.params);
            let (mut la, mut lb) = (Vec::new(), Vec::new());
            ra.write_jsonl(&mut la).unwrap();
            rb.write_jsonl(&mut lb).unwrap();
            assert_eq!(la, lb);
            assert_eq!(ra.steps.len(), 9);
        }
    }

    #[test]
    fn momentum_mode_fills_queue_and_moves_key() {
        let ds = small_data();
        let cfg = TrainConfig {
            mode: EncoderMode::Momentum,
            queue_capacity: 50,
            ..small_cfg()
        };
        let (tr, _) = fit(&ds, &cfg).unwrap();
        assert_eq!(tr.queue.as_ref().unwrap().len(), 50);
        let key = &tr.key.as_ref().unwrap().params;
        assert_ne!(key, &tr.params);
        assert_ne!(key, &Trainer::new(cfg, 5).unwrap().params);
    }

    #[test]
    fn jsonl_has_header_steps_and_epochs() {
        let ds = small_data();
        let (_, rec) = fit(&ds, &small_cfg()).unwrap();
        let mut buf = Vec::new();
        rec.write_jsonl(&mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0]["type"], "header");
        assert_eq!(lines[0]["config"]["alpha"], "5");
        assert_eq!(lines.iter().filter(|l| l["type"] == "step").count(), 9);
        let epochs: Vec<&serde_json::Value> = lines.iter().filter(|l| l["type"] == "epoch").collect();
        assert_eq!(epochs.len(), 3);
        assert!(epochs[2]["acc"].is_number());
        assert_eq!(lines[4]["type"], "epoch");
    }

    #[test]
    fn unrecoverable_overflow_aborts_with_dump() {
        let ds = small_data();
        let mut tr = Trainer::new(small_cfg(), 5).unwrap();
        tr.params.layers_mut()[0].weight.as_mut_slice()[0] = 1e300;
        let mut x = ds.features.select_rows(&(0..32).collect::<Vec<_>>());
        x.as_mut_slice()[0] = 1e10;
        match tr.train_step(&x, 0.06, &mut RngState::new(1)) {
            Err(Error::NonFiniteLoss { dump, .. }) => {
                assert_eq!(dump.inputs.rows(), 32);
                let mut text = Vec::new();
                dump.write_to(&mut text).unwrap();
                assert!(String::from_utf8(text).unwrap().starts_with("# non-finite"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exclusive_unit_threshold_makes_self_labeling_a_no_op() {
        let ds = small_data();
        let cfg = TrainConfig {
            self_label_threshold: 1.0,
            ..small_cfg()
        };
        let (mut tr, mut rec) = fit(&ds, &cfg).unwrap();
        let before = tr.params.clone();
        assert_eq!(tr.self_label_finetune(&ds, &mut rec).unwrap(), 0);
        assert_eq!(tr.params, before);
    }

    #[test]
    fn saturated_consistent_predictions_give_zero_gradient() {
        // Zero weights and a bias that puts every sample firmly in cluster 0:
        // softmax is exactly one-hot in floating point, so the loss and its
        // gradient vanish and plain SGD leaves the parameters alone.
        let ds = small_data();
        let cfg = TrainConfig {
            normalize_cluster: false,
            weight_decay: 0.0,
            self_label_epochs: 2,
            aug_sigma: 0.0,
            ..small_cfg()
        };
        let mut tr = Trainer::new(cfg, 5).unwrap();
        for layer in tr.params.layers_mut() {
            layer.weight = Matrix::zeros(layer.weight.rows(), layer.weight.cols());
        }
        let last = tr.params.layers_mut().last_mut().unwrap();
        last.bias.as_mut_slice()[..3].copy_from_slice(&[200.0, 0.0, 0.0]);
        let before = tr.params.clone();
        let mut rec = RunRecord::default();
        let updates = tr.self_label_finetune(&ds, &mut rec).unwrap();
        assert!(updates > 0);
        assert_eq!(tr.params, before);
        assert!(rec.epochs.iter().all(|e| e.mean_loss == 0.0));
    }

    #[test]
    fn steps_per_epoch_rule() {
        assert_eq!(steps_per_epoch(1600, 256), 6);
        assert_eq!(steps_per_epoch(100, 256), 1);
        assert_eq!(steps_per_epoch(1, 256), 0);
    }
}
