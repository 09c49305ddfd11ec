use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventRecord, Vocab};
use crate::ingest::Sequence;
use crate::tensor::{log_softmax_rows, GradStore, Graph, ParamStore};

use super::input::InputSeq;
use super::mask::{mlm_mask_with, MaskPlan, MaskedSequence};
use super::net::{forward, lm_loss_with, lm_targets, masked_inputs, mlm_loss_with, mlm_targets, Dropout};
use super::{Model, ModelKind, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Linear learning-rate warm-up length in optimizer steps (0 disables).
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip (0 disables).
    pub clip_norm: f64,
    /// Caps the number of batches drawn per epoch; `None` uses every sequence.
    pub max_batches_per_epoch: Option<usize>,
    /// Caps the validation sequences scored per epoch.
    pub max_valid_sequences: Option<usize>,
    pub seed: u64,
    pub mask: MaskPlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            lr: 1e-3,
            warmup_steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            max_batches_per_epoch: None,
            max_valid_sequences: None,
            seed: 0,
            mask: MaskPlan::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if [self.max_batches_per_epoch, self.max_valid_sequences].contains(&Some(0)) {
            return Err(Error::config("batch and validation caps must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::config("invalid Adam moment parameters"));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::config("clip_norm must be non-negative"));
        }
        self.mask.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Wall time of the optimisation pass, excluding validation.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub stopped_early: bool,
}

/// Cross-entropy (natural log) and top-1 accuracy over a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cross_entropy: f64,
    /// Percent in `[0, 100]`.
    pub accuracy: f64,
    pub predictions: usize,
}

#[derive(Default)]
struct Tally {
    nll: f64,
    correct: usize,
    n: usize,
}

impl Tally {
    fn add(&mut self, logp: &[f64], target: usize) {
        self.nll -= logp[target];
        let best = logp
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > logp[best] { i } else { best });
        self.correct += usize::from(best == target);
        self.n += 1;
    }

    fn metrics(&self) -> Result<Metrics> {
        if self.n == 0 {
            return Err(Error::Empty("no predictions to evaluate".into()));
        }
        Ok(Metrics {
            cross_entropy: self.nll / self.n as f64,
            accuracy: 100.0 * self.correct as f64 / self.n as f64,
            predictions: self.n,
        })
    }
}

struct Adam {
    m: GradStore,
    v: GradStore,
    step: u64,
}

impl Adam {
    fn new(p: &ParamStore) -> Self {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamStore, grads: &GradStore, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as f64;
        let warm = if cfg.warmup_steps > 0 {
            (t / cfg.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let lr = cfg.lr * warm;
        let c1 = 1.0 - cfg.beta1.powf(t);
        let c2 = 1.0 - cfg.beta2.powf(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            let v = self.v.get_mut(id).data_mut();
            let w = params.get_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Sequences per graph: the transformer attends within a sequence, so each
/// gets its own graph; the LSTM steps a whole batch at once.
fn graph_chunk(model: &Model, batch: usize) -> usize {
    match model.config.kind {
        ModelKind::Lstm => batch.max(1),
        ModelKind::Transformer => 1,
    }
}

fn mask_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Fixed masks for held-out sequences so losses are comparable across epochs.
fn fixed_masks(seqs: &[&Sequence], plan: &MaskPlan, sys_vocab: usize) -> Result<Vec<MaskedSequence>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| mlm_mask_with(s.records(), plan, sys_vocab, &mut mask_rng(plan.seed, i)))
        .collect()
}

fn check_lengths(model: &Model, seqs: &[Sequence], what: &str) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::Empty(format!("{what} set is empty")));
    }
    if let Some(s) = seqs.iter().find(|s| s.len() != model.config.window_len) {
        return Err(Error::Dimension(format!(
            "{what} sequence has {} events, model expects {}",
            s.len(),
            model.config.window_len
        )));
    }
    Ok(())
}

fn masked_loss_mean(model: &Model, seqs: &[&Sequence], masks: &[MaskedSequence]) -> Result<Metrics> {
    let mut tally = Tally::default();
    let chunk = graph_chunk(model, 16);
    for (ss, ms) in seqs.chunks(chunk).zip(masks.chunks(chunk)) {
        let originals: Vec<&[EventRecord]> = ss.iter().map(|s| s.records()).collect();
        let inputs = masked_inputs(model, &originals, ms);
        let mut g = Graph::new();
        let (logits, layout) = forward(&mut g, model, &model.params, &inputs, None)?;
        let logp = log_softmax_rows(g.value(logits));
        for (r, c) in mlm_targets(ms, &layout) {
            tally.add(logp.row(r), c);
        }
    }
    tally.metrics()
}

/// Trains with Adam on mean cross-entropy, stopping once the validation
/// loss has not improved for `patience` epochs. The model is left holding
/// the parameters of the best validation epoch.
pub fn train(model: &mut Model, train_set: &[Sequence], valid: &[Sequence], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_lengths(model, train_set, "training")?;
    check_lengths(model, valid, "validation")?;
    let valid: Vec<&Sequence> = valid.iter().take(cfg.max_valid_sequences.unwrap_or(usize::MAX)).collect();
    let valid_masks = match model.objective {
        Objective::Mlm => fixed_masks(&valid, &cfg.mask, model.sys_vocab)?,
        Objective::Lm => Vec::new(),
    };
    let validate = |model: &Model| -> Result<f64> {
        Ok(match model.objective {
            Objective::Lm => evaluate_refs(model, &valid)?.cross_entropy,
            Objective::Mlm => masked_loss_mean(model, &valid, &valid_masks)?.cross_entropy,
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = model.params.clone();
    let mut bad_epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let batches = order
            .chunks(cfg.batch_size)
            .take(cfg.max_batches_per_epoch.unwrap_or(usize::MAX));
        let (mut loss_sum, mut pred_sum) = (0.0, 0.0);
        for batch in batches {
            grads.zero();
            let seqs: Vec<&Sequence> = batch.iter().map(|&i| &train_set[i]).collect();
            let masks: Vec<MaskedSequence> = match model.objective {
                Objective::Mlm => seqs
                    .iter()
                    .map(|s| mlm_mask_with(s.records(), &cfg.mask, model.sys_vocab, &mut rng))
                    .collect::<Result<_>>()?,
                Objective::Lm => Vec::new(),
            };
            let preds: usize = match model.objective {
                Objective::Lm => seqs.iter().map(|s| s.len() - 1).sum(),
                Objective::Mlm => masks.iter().map(|m| m.targets.len()).sum(),
            };
            let denom = preds as f64;
            let chunk = graph_chunk(model, batch.len());
            let mut batch_loss = 0.0;
            for (ci, part) in seqs.chunks(chunk).enumerate() {
                let mut g = Graph::new();
                let drop = (model.config.dropout > 0.0).then(|| Dropout {
                    rate: model.config.dropout,
                    rng: &mut rng,
                });
                let originals: Vec<&[EventRecord]> = part.iter().map(|s| s.records()).collect();
                let loss = match model.objective {
                    Objective::Lm => {
                        let inputs: Vec<InputSeq> = originals.iter().map(|r| InputSeq::new(r, model)).collect();
                        lm_loss_with(&mut g, model, &model.params, &inputs, Some(denom), drop)
                    }
                    Objective::Mlm => {
                        let ms = &masks[ci * chunk..ci * chunk + part.len()];
                        let inputs = masked_inputs(model, &originals, ms);
                        mlm_loss_with(&mut g, model, &model.params, &inputs, ms, Some(denom), drop)
                    }
                };
                let loss = match loss {
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::Diverged {
                            epoch,
                            loss: f64::NAN,
                        })
                    }
                    other => other?,
                };
                batch_loss += g.value(loss).get(0, 0);
                g.backward_into(loss, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: batch_loss });
            }
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch, loss: norm });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.update(&mut model.params, &grads, cfg);
            loss_sum += batch_loss * denom;
            pred_sum += denom;
        }
        let seconds = started.elapsed().as_secs_f64();
        let valid_loss = match validate(model) {
            Err(Error::NonFinite(_)) => f64::NAN,
            other => other?,
        };
        if !valid_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: valid_loss });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / pred_sum,
            valid_loss,
            seconds,
        });
        if valid_loss < history.best_valid_loss {
            history.best_valid_loss = valid_loss;
            history.best_epoch = epoch;
            best = model.params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    model.params = best;
    Ok(history)
}

fn evaluate_refs(model: &Model, seqs: &[&Sequence]) -> Result<Metrics> {
    if model.objective != Objective::Lm {
        return Err(Error::Unsupported("next-call metrics need a causal model".into()));
    }
    let mut tally = Tally::default();
    for part in seqs.chunks(graph_chunk(model, 32)) {
        let inputs: Vec<InputSeq> = part.iter().map(|s| InputSeq::new(s.records(), model)).collect();
        let mut g = Graph::new();
        let (logits, layout) = forward(&mut g, model, &model.params, &inputs, None)?;
        let logp = log_softmax_rows(g.value(logits));
        for (r, c) in lm_targets(&inputs, &layout) {
            tally.add(logp.row(r), c);
        }
    }
    tally.metrics()
}

/// Next-call cross-entropy and top-1 accuracy. Position 0 has no left
/// context and is never a target, so each sequence contributes `len - 1`
/// predictions.
pub fn evaluate(model: &Model, seqs: &[Sequence]) -> Result<Metrics> {
    evaluate_refs(model, &seqs.iter().collect::<Vec<_>>())
}

/// Masked-prediction metrics with masks drawn deterministically from `plan`.
pub fn evaluate_mlm(model: &Model, seqs: &[Sequence], plan: &MaskPlan) -> Result<Metrics> {
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let masks = fixed_masks(&refs, plan, model.sys_vocab)?;
    masked_loss_mean(model, &refs, &masks)
}

/// Chain-rule log-likelihood `sum_{t>=1} ln p(sysname_t | events_<t)`.
pub fn score(model: &Model, records: &[EventRecord]) -> Result<f64> {
    if model.objective != Objective::Lm {
        return Err(Error::Unsupported("scoring needs a causal model".into()));
    }
    let inputs = [InputSeq::new(records, model)];
    let mut g = Graph::new();
    let (logits, layout) = forward(&mut g, model, &model.params, &inputs, None)?;
    let logp = log_softmax_rows(g.value(logits));
    Ok(lm_targets(&inputs, &layout)
        .into_iter()
        .map(|(r, c)| logp.get(r, c))
        .sum())
}

/// Next-call evaluation of a masked-objective model without fine-tuning:
/// to predict position `t`, the model sees events `0..t` followed by a
/// fully masked event at `t`. `positions` caps the positions sampled per
/// sequence (`None` uses every `t >= 1`).
pub fn zero_shot_lm(model: &Model, seqs: &[Sequence], positions: Option<usize>, seed: u64) -> Result<Metrics> {
    if model.config.kind != ModelKind::Transformer {
        return Err(Error::Unsupported("zero-shot evaluation needs the transformer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for s in seqs {
        let n = s.len();
        if n < 2 {
            continue;
        }
        let mut ts: Vec<usize> = match positions {
            Some(k) if k < n - 1 => rand::seq::index::sample(&mut rng, n - 1, k)
                .into_iter()
                .map(|i| i + 1)
                .collect(),
            _ => (1..n).collect(),
        };
        ts.sort_unstable();
        let origin = model.repr.origin_for(s.records());
        for t in ts {
            let mut prefix = s.records()[..=t].to_vec();
            let target = prefix[t].sysname_id as usize;
            prefix[t].sysname_id = Vocab::MASK;
            let mut blanked = vec![false; t + 1];
            blanked[t] = true;
            let inputs = [InputSeq {
                records: &prefix,
                blanked: Some(&blanked),
                origin_us: origin,
            }];
            let mut g = Graph::new();
            let (logits, layout) = forward(&mut g, model, &model.params, &inputs, None)?;
            let row = g.value(logits).row(layout.row(0, t)).to_vec();
            let logp = log_softmax_rows(&crate::tensor::Matrix::from_vec(1, row.len(), row));
            tally.add(logp.row(0), target);
        }
    }
    tally.metrics()
}
