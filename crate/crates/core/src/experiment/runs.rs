use indexmap::IndexSet;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ingest::Sequence;
use crate::model::{
    evaluate, evaluate_mlm, score, train, zero_shot_lm, MaskPlan, Metrics, Model, ModelConfig, ModelKind,
    Objective, TrainConfig, TrainHistory,
};
use crate::repr::{Ablation, Group, Groups, RepresentationConfig};

use super::report::{mean_std, quantile, Report};
use super::{ExperimentSpec, Splits};

/// Metrics and timing of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objective: Objective,
    pub kind: ModelKind,
    pub label: String,
    pub seed: u64,
    /// Mean negative natural-log probability of the true call.
    pub cross_entropy: f64,
    /// Top-1 accuracy in percent.
    pub accuracy: f64,
    pub predictions: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub epoch_seconds_mean: f64,
    /// Spread over epochs after the first.
    pub epoch_seconds_std: f64,
}

pub struct RunOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub metrics: Metrics,
}

impl RunOutcome {
    pub fn report(&self, label: &str) -> MetricsReport {
        let secs: Vec<f64> = self.history.epochs.iter().map(|e| e.seconds).collect();
        let (mean, std) = epoch_stats(&secs);
        MetricsReport {
            objective: self.model.objective,
            kind: self.model.config.kind,
            label: label.to_string(),
            seed: self.model.seed,
            cross_entropy: self.metrics.cross_entropy,
            accuracy: self.metrics.accuracy,
            predictions: self.metrics.predictions,
            epochs: self.history.epochs.len(),
            best_epoch: self.history.best_epoch,
            epoch_seconds_mean: mean,
            epoch_seconds_std: std,
        }
    }
}

/// Mean over all epochs; spread over epochs after the first (warm-up).
fn epoch_stats(secs: &[f64]) -> (f64, f64) {
    let (mean, _) = mean_std(secs);
    let std = if secs.len() > 1 { mean_std(&secs[1..]).1 } else { 0.0 };
    (mean, std)
}

/// Trains one model on `splits.train` and evaluates it on `splits.test`
/// with its own objective.
pub fn train_and_evaluate(
    splits: &Splits,
    objective: Objective,
    model_cfg: &ModelConfig,
    repr: &RepresentationConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let cfg = splits.model_config(model_cfg);
    let mut model = Model::new(
        *repr,
        cfg,
        objective,
        splits.sys_vocab.len(),
        splits.proc_vocab.len(),
        seed,
    )?;
    let tc = TrainConfig { seed, ..*train_cfg };
    let history = train(&mut model, &splits.train, &splits.valid, &tc)?;
    let metrics = match objective {
        Objective::Lm => evaluate(&model, &splits.test)?,
        Objective::Mlm => evaluate_mlm(&model, &splits.test, &MaskPlan { seed, ..tc.mask })?,
    };
    Ok(RunOutcome {
        model,
        history,
        metrics,
    })
}

fn fmt_ce(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_acc(x: f64) -> String {
    format!("{x:.2}")
}

/// Runs every seed, logging and recording failures instead of aborting.
fn seed_runs<F>(spec: &ExperimentSpec, label: &str, report: &mut Report, mut run: F) -> Vec<MetricsReport>
where
    F: FnMut(u64) -> Result<MetricsReport>,
{
    let mut ok = Vec::new();
    for &seed in &spec.seeds {
        info!("{label}: seed {seed}");
        match run(seed) {
            Ok(m) => {
                info!("{label}: seed {seed}: ce {:.4} acc {:.2}%", m.cross_entropy, m.accuracy);
                report.records.push(json!({"kind": "run", "metrics": m}));
                ok.push(m);
            }
            Err(e) => {
                warn!("{label}: seed {seed} failed: {e}");
                report.failed = true;
                report.records.push(json!({"kind": "run", "label": label, "seed": seed, "error": e.to_string()}));
            }
        }
    }
    ok
}

fn averaged(runs: &[MetricsReport], expected: usize) -> Option<(f64, f64)> {
    if runs.len() != expected || runs.is_empty() {
        return None;
    }
    let ce: Vec<f64> = runs.iter().map(|m| m.cross_entropy).collect();
    let acc: Vec<f64> = runs.iter().map(|m| m.accuracy).collect();
    Some((mean_std(&ce).0, mean_std(&acc).0))
}

fn cell_record(label: &str, extra: Value, runs: &[MetricsReport], seeds: &[u64]) -> Value {
    let ce: Vec<f64> = runs.iter().map(|m| m.cross_entropy).collect();
    let acc: Vec<f64> = runs.iter().map(|m| m.accuracy).collect();
    let secs: Vec<f64> = runs.iter().map(|m| m.epoch_seconds_mean).collect();
    let failed = runs.len() != seeds.len();
    json!({
        "kind": "cell",
        "label": label,
        "params": extra,
        "seeds": seeds,
        "failed": failed,
        "cross_entropy": if failed { Value::Null } else { json!(mean_std(&ce).0) },
        "cross_entropy_std": if failed { Value::Null } else { json!(mean_std(&ce).1) },
        "accuracy": if failed { Value::Null } else { json!(mean_std(&acc).0) },
        "accuracy_std": if failed { Value::Null } else { json!(mean_std(&acc).1) },
        "epoch_seconds_mean": if failed { Value::Null } else { json!(mean_std(&secs).0) },
    })
}

const FAILED: &str = "FAILED";
const LM_NOTE: &str = "next-call metrics exclude position 0 (no left context)";

/// Grid of (objective, architecture) rows against ablation columns,
/// averaged over seeds.
pub fn run_ablation(spec: &ExperimentSpec, splits: &Splits) -> Result<Report> {
    spec.validate()?;
    if spec.ablate.ablations.is_empty() {
        return Err(Error::config("ablation grid is empty"));
    }
    let ablations: Vec<Ablation> = spec.ablate.ablations.iter().copied().collect::<IndexSet<_>>().into_iter().collect();
    let objectives = if spec.ablate.objectives.is_empty() {
        vec![spec.objective]
    } else {
        spec.ablate.objectives.clone()
    };
    let kinds = if spec.ablate.kinds.is_empty() {
        vec![spec.model.kind]
    } else {
        spec.ablate.kinds.clone()
    };
    let mut columns = vec!["model".to_string()];
    columns.extend(ablations.iter().map(|a| a.name().to_string()));
    let mut report = Report::new("argument ablation", spec.header(splits), columns);
    for &objective in &objectives {
        for &kind in &kinds {
            if kind == ModelKind::Lstm && objective == Objective::Mlm {
                report.notes.push("lstm has no masked objective; row skipped".into());
                continue;
            }
            let row_name = format!("{} {}", objective.name(), kind.name());
            let mut ce_row = vec![format!("{row_name} ce")];
            let mut acc_row = vec![format!("{row_name} acc%")];
            for &ab in &ablations {
                let label = format!("{row_name} {}", ab.name());
                let model_cfg = ModelConfig { kind, ..spec.model };
                let repr = spec.representation_for(ab);
                let runs = seed_runs(spec, &label, &mut report, |seed| {
                    train_and_evaluate(splits, objective, &model_cfg, &repr, &spec.train, seed).map(|o| o.report(ab.name()))
                });
                match averaged(&runs, spec.seeds.len()) {
                    Some((ce, acc)) => {
                        ce_row.push(fmt_ce(ce));
                        acc_row.push(fmt_acc(acc));
                    }
                    None => {
                        ce_row.push(FAILED.into());
                        acc_row.push(FAILED.into());
                    }
                }
                let params = json!({"objective": objective, "kind": kind, "ablation": ab, "representation": repr});
                report.records.push(cell_record(&label, params, &runs, &spec.seeds));
            }
            report.rows.push(ce_row);
            report.rows.push(acc_row);
        }
    }
    report.notes.push(format!("cross-entropy in nats, accuracy top-1 %, mean over seeds {:?}", spec.seeds));
    if objectives.contains(&Objective::Lm) {
        report.notes.push(LM_NOTE.into());
    }
    Ok(report)
}

/// Transformer without call or process arguments over a grid of
/// `(d_timestamp, d_position)` pairs.
pub fn run_position_study(spec: &ExperimentSpec, splits: &Splits) -> Result<Report> {
    spec.validate()?;
    if spec.model.kind != ModelKind::Transformer {
        return Err(Error::Unsupported("the position study needs the transformer".into()));
    }
    let grid: Vec<(usize, usize)> = spec.position.grid.iter().copied().collect::<IndexSet<_>>().into_iter().collect();
    if grid.is_empty() {
        return Err(Error::config("position grid is empty"));
    }
    let columns = ["d_timestamp", "d_position", "ce", "acc%"].map(String::from).to_vec();
    let mut report = Report::new("timestamp and position encoding", spec.header(splits), columns);
    for &(d_ts, d_pos) in &grid {
        let repr = RepresentationConfig {
            groups: if d_ts > 0 { Groups::only(Group::Time) } else { Groups::NONE },
            d_timestamp: d_ts,
            ..spec.representation
        };
        let model_cfg = ModelConfig {
            d_position: d_pos,
            ..spec.model
        };
        repr.validate()?;
        model_cfg.validate()?;
        let label = format!("ts{d_ts} pos{d_pos}");
        let runs = seed_runs(spec, &label, &mut report, |seed| {
            train_and_evaluate(splits, spec.objective, &model_cfg, &repr, &spec.train, seed).map(|o| o.report(&label))
        });
        let mut row = vec![d_ts.to_string(), d_pos.to_string()];
        match averaged(&runs, spec.seeds.len()) {
            Some((ce, acc)) => row.extend([fmt_ce(ce), fmt_acc(acc)]),
            None => row.extend([FAILED.into(), FAILED.into()]),
        }
        report.rows.push(row);
        let params = json!({"d_timestamp": d_ts, "d_position": d_pos});
        report.records.push(cell_record(&label, params, &runs, &spec.seeds));
    }
    report.notes.push("a dimension of 0 omits the channel".into());
    if spec.objective == Objective::Lm {
        report.notes.push(LM_NOTE.into());
    }
    Ok(report)
}

/// Masked-objective pretraining at each selection rate, followed by
/// next-call evaluation of the pretrained model without fine-tuning.
pub fn run_mask_study(spec: &ExperimentSpec, splits: &Splits) -> Result<Report> {
    spec.validate()?;
    if spec.model.kind != ModelKind::Transformer {
        return Err(Error::Unsupported("the masked objective needs the transformer".into()));
    }
    if spec.mask.p_values.is_empty() {
        return Err(Error::config("no selection rates given"));
    }
    let repr = spec.representation_for(Ablation::All);
    let columns = ["p", "mlm ce", "mlm acc%", "zero-shot lm ce", "zero-shot lm acc%"]
        .map(String::from)
        .to_vec();
    let mut report = Report::new("masked pretraining selection rate", spec.header(splits), columns);
    for &p in &spec.mask.p_values {
        let tc = TrainConfig {
            mask: MaskPlan {
                p_select: p,
                ..spec.train.mask
            },
            ..spec.train
        };
        tc.validate()?;
        let label = format!("p={p:.2}");
        let mut zero_shot = Vec::new();
        let runs = seed_runs(spec, &label, &mut report, |seed| {
            let out = train_and_evaluate(splits, Objective::Mlm, &spec.model, &repr, &tc, seed)?;
            let zs = zero_shot_lm(&out.model, &splits.test, spec.mask.zero_shot_positions, seed)?;
            zero_shot.push(zs);
            let mut m = out.report(&label);
            m.label = format!("{label} zero-shot ce {:.4} acc {:.2}", zs.cross_entropy, zs.accuracy);
            Ok(m)
        });
        let marker = if (p - 0.25).abs() < 1e-12 { "*" } else { "" };
        let mut row = vec![format!("{p:.2}{marker}")];
        let zs_ok = zero_shot.len() == spec.seeds.len();
        match averaged(&runs, spec.seeds.len()) {
            Some((ce, acc)) if zs_ok => {
                let zce = mean_std(&zero_shot.iter().map(|m| m.cross_entropy).collect::<Vec<_>>()).0;
                let zacc = mean_std(&zero_shot.iter().map(|m| m.accuracy).collect::<Vec<_>>()).0;
                row.extend([fmt_ce(ce), fmt_acc(acc), fmt_ce(zce), fmt_acc(zacc)]);
            }
            _ => row.extend([FAILED; 4].map(String::from)),
        }
        report.rows.push(row);
        let mut rec = cell_record(&label, json!({"p_select": p}), &runs, &spec.seeds);
        rec["zero_shot"] = json!(zero_shot);
        report.records.push(rec);
    }
    report.notes.push("* default selection rate 0.25".into());
    report.notes.push(
        "zero-shot: to predict event t the model sees events before t and a fully masked event at t".into(),
    );
    Ok(report)
}

/// Per-epoch training time with and without arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub none_seconds: Vec<f64>,
    pub all_seconds: Vec<f64>,
    pub none_mean: f64,
    pub none_std: f64,
    pub all_mean: f64,
    pub all_std: f64,
    /// `all_mean / none_mean`.
    pub ratio: f64,
}

/// Times `spec.overhead.epochs` training epochs (no early stopping) for
/// ablations `none` and `all` with the first seed.
pub fn time_overhead(spec: &ExperimentSpec, splits: &Splits) -> Result<(OverheadReport, Report)> {
    spec.validate()?;
    let epochs = spec.overhead.epochs;
    if epochs < 5 {
        return Err(Error::config(format!("timing needs at least 5 epochs, got {epochs}")));
    }
    let seed = spec.seeds[0];
    let tc = TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        seed,
        ..spec.train
    };
    let mut times = Vec::new();
    for ab in [Ablation::None, Ablation::All] {
        let cfg = splits.model_config(&spec.model);
        let mut model = Model::new(
            spec.representation_for(ab),
            cfg,
            spec.objective,
            splits.sys_vocab.len(),
            splits.proc_vocab.len(),
            seed,
        )?;
        info!("timing {} for {epochs} epochs", ab.name());
        let history = train(&mut model, &splits.train, &splits.valid, &tc)?;
        times.push(history.epochs.iter().map(|e| e.seconds).collect::<Vec<_>>());
    }
    let all_seconds = times.pop().unwrap_or_default();
    let none_seconds = times.pop().unwrap_or_default();
    let (none_mean, none_std) = epoch_stats(&none_seconds);
    let (all_mean, all_std) = epoch_stats(&all_seconds);
    let out = OverheadReport {
        ratio: all_mean / none_mean,
        none_seconds,
        all_seconds,
        none_mean,
        none_std,
        all_mean,
        all_std,
    };
    let columns = ["ablation", "epoch ms", "std ms"].map(String::from).to_vec();
    let mut report = Report::new("per-epoch time", spec.header(splits), columns);
    for (name, mean, std) in [("none", out.none_mean, out.none_std), ("all", out.all_mean, out.all_std)] {
        report.rows.push(vec![name.into(), format!("{:.1}", mean * 1e3), format!("{:.1}", std * 1e3)]);
    }
    report.notes.push(format!("ratio all/none = {:.3}", out.ratio));
    report.notes.push("std excludes the first (warm-up) epoch".into());
    report.records.push(json!({"kind": "overhead", "result": out}));
    Ok((out, report))
}

/// Chain-rule log-likelihood of each sequence, in input order.
pub fn score_sequences(model: &Model, seqs: &[Sequence]) -> Result<Vec<f64>> {
    seqs.iter().map(|s| score(model, s.records())).collect()
}

/// One `index<TAB>score` line per sequence followed by quantile summary
/// lines; empty input yields empty output.
pub fn score_summary(scores: &[f64]) -> String {
    let mut out = String::new();
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i}\t{s:.6}\n"));
    }
    if !scores.is_empty() {
        out.push_str(&format!("# n {}\n", scores.len()));
        for (name, q) in [("min", 0.0), ("p05", 0.05), ("p25", 0.25), ("median", 0.5), ("p75", 0.75), ("p95", 0.95), ("max", 1.0)] {
            out.push_str(&format!("# {name} {:.6}\n", quantile(scores, q)));
        }
    }
    out
}
