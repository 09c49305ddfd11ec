use sysarg::event::{EventRecord, RetClass, Vocab};
use sysarg::ingest::Sequence;
use sysarg::model::*;
use sysarg::repr::{represent, Ablation, Groups, RepresentationConfig, SinusoidalEncoder};
use sysarg::tensor::gradcheck::{grad_check, DEFAULT_REL_STEP};
use sysarg::tensor::Graph;
use sysarg::Error;

fn seq(len: usize, seed: u32) -> Vec<EventRecord> {
    (0..len as u32)
        .map(|i| {
            let k = i.wrapping_mul(7).wrapping_add(seed.wrapping_mul(13));
            EventRecord {
                sysname_id: 3 + k % 5,
                entry: i % 2 == 0,
                ret_class: RetClass::ALL[(k % 3) as usize],
                procname_id: 3 + (k / 5) % 2,
                pid: 1000 + 100 * (k % 2),
                tid: 1001 + k % 3,
                timestamp_us: 10 * i as u64 + u64::from(k % 4),
            }
        })
        .collect()
}

fn tiny_repr() -> RepresentationConfig {
    RepresentationConfig {
        groups: Groups::ALL,
        d_sysname: 4,
        d_procname: 2,
        d_pid: 2,
        d_tid: 2,
        d_timestamp: 2,
        ..RepresentationConfig::default()
    }
}

fn tiny(kind: ModelKind, objective: Objective, window_len: usize) -> Model {
    let config = ModelConfig {
        kind,
        lstm_layers: 2,
        lstm_hidden: 3,
        tf_layers: 1,
        tf_heads: 2,
        tf_ff: 4,
        d_position: 2,
        dropout: 0.0,
        window_len,
    };
    Model::new(tiny_repr(), config, objective, 8, 5, 11).unwrap()
}

fn small(kind: ModelKind, ablation: Ablation) -> Model {
    let config = ModelConfig {
        kind,
        lstm_hidden: 8,
        tf_layers: 1,
        tf_ff: 16,
        window_len: 16,
        ..ModelConfig::default()
    };
    Model::new(ablation.config(), config, Objective::Lm, 8, 5, 3).unwrap()
}

#[test]
fn model_input_widths_and_position_channel() {
    let tf = Model::new(Ablation::All.config(), ModelConfig::transformer(), Objective::Lm, 8, 5, 0).unwrap();
    let recs = Sequence::new(seq(256, 1));
    let x = model_input(&recs, &tf).unwrap();
    assert_eq!(x.shape(), (256, 72));
    assert_eq!(x.row(0)[64..], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

    let lstm = Model::new(Ablation::None.config(), ModelConfig::lstm(), Objective::Lm, 8, 5, 0).unwrap();
    assert_eq!(model_input(&recs, &lstm).unwrap().shape(), (256, 32));

    let short = Sequence::new(seq(255, 1));
    assert!(matches!(model_input(&short, &tf), Err(Error::Dimension(_))));
}

#[test]
fn model_input_rows_match_represent() {
    let m = Model::new(Ablation::All.config(), ModelConfig::transformer(), Objective::Lm, 8, 5, 4).unwrap();
    let recs = seq(256, 2);
    let x = model_input(&Sequence::new(recs.clone()), &m).unwrap();
    let tables = m.representation_tables().unwrap();
    let pos = SinusoidalEncoder::new(8).unwrap();
    let origin = recs[0].timestamp_us;
    for t in [0, 1, 100, 255] {
        let mut want = represent(&recs[t], origin, &m.repr, &tables).unwrap().values;
        want.extend(pos.encode(t as f64));
        assert_eq!(x.row(t), &want[..], "row {t}");
    }
}

#[test]
fn zero_output_layer_is_uniform() {
    let d_v = 50;
    let config = ModelConfig {
        tf_layers: 1,
        ..ModelConfig::default()
    };
    let mut m = Model::new(Ablation::None.config(), config, Objective::Lm, d_v, 5, 0).unwrap();
    m.zero_output();
    let recs = seq(256, 3);
    let probs = lm_forward(&m, &recs).unwrap();
    for r in 0..probs.rows() {
        assert!(probs.row(r).iter().all(|p| (p - 1.0 / d_v as f64).abs() < 1e-12));
    }
    let metrics = evaluate(&m, &[Sequence::new(recs.clone())]).unwrap();
    assert!((metrics.cross_entropy - (d_v as f64).ln()).abs() < 1e-12);
    assert_eq!(metrics.predictions, 255);
    let s = score(&m, &recs).unwrap();
    assert!((s - (-255.0 * 50f64.ln())).abs() < 1e-9, "{s}");
    assert!((s + 997.6).abs() < 0.05);
}

#[test]
fn distributions_sum_to_one() {
    for kind in [ModelKind::Lstm, ModelKind::Transformer] {
        let m = small(kind, Ablation::All);
        let probs = lm_forward(&m, &seq(16, 4)).unwrap();
        for r in 0..probs.rows() {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn outputs_are_causal() {
    for kind in [ModelKind::Lstm, ModelKind::Transformer] {
        let m = small(kind, Ablation::All);
        let base = seq(16, 5);
        let p0 = lm_forward(&m, &base).unwrap();
        for t in 0..10 {
            let mut changed = base.clone();
            let r = &mut changed[t + 5];
            r.sysname_id = 7 - (r.sysname_id - 3);
            r.pid += 17;
            r.timestamp_us += 999;
            r.ret_class = RetClass::Unavailable;
            let p1 = lm_forward(&m, &changed).unwrap();
            for row in 0..=t {
                let diff = p0.row(row).iter().zip(p1.row(row)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                match kind {
                    ModelKind::Lstm => assert_eq!(diff, 0.0, "lstm row {row}"),
                    ModelKind::Transformer => assert!(diff <= 1e-9, "transformer row {row}: {diff}"),
                }
            }
            let later = p0.row(t + 5).iter().zip(p1.row(t + 5)).any(|(a, b)| a != b);
            assert!(later, "perturbation must reach position {}", t + 5);
        }
    }
}

#[test]
fn score_matches_product_of_step_probabilities() {
    let m = small(ModelKind::Transformer, Ablation::All);
    let recs = seq(16, 6);
    let probs = lm_forward(&m, &recs).unwrap();
    let product: f64 = (1..16).map(|t| probs.get(t - 1, recs[t].sysname_id as usize)).product();
    let s = score(&m, &recs).unwrap();
    assert!(((s.exp() - product) / product).abs() < 1e-6);
}

#[test]
fn metrics_match_hand_computation() {
    let m = small(ModelKind::Lstm, Ablation::Call);
    let seqs = [Sequence::new(seq(16, 7)), Sequence::new(seq(16, 8))];
    let (mut nll, mut hits, mut n) = (0.0, 0, 0);
    for s in &seqs {
        let p = lm_forward(&m, s.records()).unwrap();
        for t in 1..16 {
            let target = s.records()[t].sysname_id as usize;
            nll -= p.get(t - 1, target).ln();
            let row = p.row(t - 1);
            let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            hits += usize::from(best == target);
            n += 1;
        }
    }
    let got = evaluate(&m, &seqs).unwrap();
    assert_eq!(got.predictions, 30);
    assert!((got.cross_entropy - nll / n as f64).abs() < 1e-12);
    assert!((got.accuracy - 100.0 * hits as f64 / n as f64).abs() < 1e-12);
}

#[test]
fn masked_objective_requires_transformer() {
    let lstm = small(ModelKind::Lstm, Ablation::All);
    let recs = seq(16, 9);
    let masked = mlm_mask(&recs, &MaskPlan::default(), 8).unwrap();
    assert!(matches!(mlm_forward(&lstm, &recs, &masked), Err(Error::Unsupported(_))));
}

#[test]
fn masked_forward_targets_and_isolation() {
    let mut m = tiny(ModelKind::Transformer, Objective::Mlm, 16);
    let recs = seq(16, 10);
    let masked = mlm_mask(&recs, &MaskPlan::default(), 8).unwrap();
    let out = mlm_forward(&m, &recs, &masked).unwrap();
    assert_eq!(out.probs.len(), 4);
    for p in &out.probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // Labels at unselected positions do not enter the loss.
    let mut relabelled = recs.clone();
    for (t, r) in relabelled.iter_mut().enumerate() {
        if !masked.targets.iter().any(|x| x.0 == t) {
            r.sysname_id = 3;
        }
    }
    assert_eq!(mlm_forward(&m, &relabelled, &masked).unwrap().loss, out.loss);

    let none = MaskedSequence {
        targets: Vec::new(),
        ..masked.clone()
    };
    assert!(matches!(mlm_forward(&m, &recs, &none), Err(Error::Empty(_))));

    m.zero_output();
    let uniform = mlm_forward(&m, &recs, &masked).unwrap();
    assert!((uniform.loss - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn gradients_tiny_lstm_lm() {
    let m = tiny(ModelKind::Lstm, Objective::Lm, 4);
    let recs = seq(4, 12);
    let inputs = [InputSeq::new(&recs, &m)];
    let mut params = m.params.clone();
    let report = grad_check(&mut params, DEFAULT_REL_STEP, |p, g: &mut Graph| lm_loss(g, &m, p, &inputs)).unwrap();
    assert_eq!(report.per_tensor.len(), m.params.len());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradients_tiny_transformer_mlm() {
    let m = tiny(ModelKind::Transformer, Objective::Mlm, 4);
    let recs = seq(4, 13);
    let plan = MaskPlan {
        p_select: 0.5,
        frac_mask: 0.5,
        frac_random: 0.5,
        frac_keep: 0.0,
        seed: 2,
    };
    let masked = mlm_mask(&recs, &plan, 8).unwrap();
    assert!(masked.blanked.iter().any(|b| *b));
    let mut params = m.params.clone();
    let report = grad_check(&mut params, DEFAULT_REL_STEP, |p, g: &mut Graph| {
        mlm_loss(g, &m, p, &[&recs], std::slice::from_ref(&masked))
    })
    .unwrap();
    assert_eq!(report.per_tensor.len(), m.params.len());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradients_tiny_transformer_lm_with_projection() {
    let mut m = tiny(ModelKind::Transformer, Objective::Lm, 3);
    m = Model::new(
        m.repr,
        ModelConfig {
            tf_heads: 4,
            ..m.config
        },
        Objective::Lm,
        8,
        5,
        5,
    )
    .unwrap();
    assert!(m.config.needs_projection(&m.repr));
    let recs = seq(3, 14);
    let inputs = [InputSeq::new(&recs, &m)];
    let mut params = m.params.clone();
    // The projection sits below two layer norms, so its loss surface has
    // large third derivatives; a finer step keeps truncation error small.
    let report = grad_check(&mut params, 1e-4, |p, g: &mut Graph| lm_loss(g, &m, p, &inputs)).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_epochs: epochs,
        patience: 5,
        lr: 1e-2,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn short_training_reduces_loss() {
    for kind in [ModelKind::Lstm, ModelKind::Transformer] {
        let mut m = small(kind, Ablation::All);
        let data: Vec<Sequence> = (0..10).map(|i| Sequence::new(seq(16, i))).collect();
        let h = train(&mut m, &data, &data[..2], &quick(2)).unwrap();
        assert!(h.epochs.len() <= 2);
        assert!(h.epochs[1].train_loss <= h.epochs[0].train_loss, "{kind:?}: {h:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let data: Vec<Sequence> = (0..6).map(|i| Sequence::new(seq(16, i))).collect();
    let run = || {
        let mut m = small(ModelKind::Transformer, Ablation::All);
        let cfg = TrainConfig {
            mask: MaskPlan::default(),
            ..quick(2)
        };
        train(&mut m, &data, &data[..2], &cfg).unwrap();
        m.params
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stopping_on_worsening_validation() {
    let constant = |id: u32| {
        let mut r = seq(16, 0);
        r.iter_mut().for_each(|e| e.sysname_id = id);
        Sequence::new(r)
    };
    let train_set = vec![constant(3); 4];
    let valid = vec![constant(4); 2];
    let mut m = small(ModelKind::Lstm, Ablation::None);
    let cfg = TrainConfig {
        patience: 1,
        ..quick(10)
    };
    let h = train(&mut m, &train_set, &valid, &cfg).unwrap();
    assert_eq!(h.epochs.len(), 2, "{h:?}");
    assert!(h.epochs[1].valid_loss > h.epochs[0].valid_loss);
    assert_eq!(h.best_epoch, 1);
    assert!(h.stopped_early);
}

#[test]
fn divergence_reports_epoch() {
    let data: Vec<Sequence> = (0..4).map(|i| Sequence::new(seq(16, i))).collect();
    let mut m = small(ModelKind::Lstm, Ablation::All);
    let cfg = TrainConfig {
        lr: 1e308,
        clip_norm: 0.0,
        ..quick(3)
    };
    match train(&mut m, &data, &data, &cfg) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn training_rejects_bad_inputs() {
    let mut m = small(ModelKind::Lstm, Ablation::All);
    let data: Vec<Sequence> = (0..4).map(|i| Sequence::new(seq(16, i))).collect();
    assert!(matches!(train(&mut m, &[], &data, &quick(1)), Err(Error::Empty(_))));
    let wrong = vec![Sequence::new(seq(8, 0))];
    assert!(matches!(train(&mut m, &wrong, &data, &quick(1)), Err(Error::Dimension(_))));
    let bad = TrainConfig {
        patience: 0,
        ..quick(1)
    };
    assert!(train(&mut m, &data, &data, &bad).unwrap_err().is_config());
}

#[test]
fn arguments_alone_carry_signal_under_full_masking() {
    let data: Vec<Sequence> = (0..12).map(|i| Sequence::new(seq(16, i))).collect();
    let mut m = tiny(ModelKind::Transformer, Objective::Mlm, 16);
    let plan = MaskPlan {
        p_select: 0.99,
        frac_mask: 1.0,
        frac_random: 0.0,
        frac_keep: 0.0,
        seed: 0,
    };
    let cfg = TrainConfig {
        mask: plan,
        lr: 1e-2,
        ..quick(15)
    };
    let h = train(&mut m, &data, &data[..4], &cfg).unwrap();
    let metrics = evaluate_mlm(&m, &data[..4], &plan).unwrap();
    assert!(metrics.cross_entropy <= 8f64.ln(), "{metrics:?} {h:?}");
}

#[test]
fn zero_shot_scores_masked_prefixes() {
    let m = tiny(ModelKind::Transformer, Objective::Mlm, 16);
    let data: Vec<Sequence> = (0..3).map(|i| Sequence::new(seq(16, i))).collect();
    let all = zero_shot_lm(&m, &data, None, 0).unwrap();
    assert_eq!(all.predictions, 45);
    let some = zero_shot_lm(&m, &data, Some(4), 0).unwrap();
    assert_eq!(some.predictions, 12);
    assert_eq!(some, zero_shot_lm(&m, &data, Some(4), 0).unwrap());
    let lstm = small(ModelKind::Lstm, Ablation::All);
    assert!(zero_shot_lm(&lstm, &data, None, 0).is_err());
}

#[test]
fn checkpoint_round_trip_and_vocab_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let sys = Vocab::from_corpus_tokens(["read", "write", "open", "close", "poll"]);
    let proc = Vocab::from_corpus_tokens(["a", "b"]);
    let m = small(ModelKind::Transformer, Ablation::All);
    let ck = Checkpoint::new(m.clone(), sys.clone(), proc.clone(), None).unwrap();
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let recs = seq(16, 1);
    assert_eq!(score(&back.model, &recs).unwrap(), score(&m, &recs).unwrap());
    back.verify_vocab(&sys, &proc).unwrap();
    let other = Vocab::from_corpus_tokens(["read", "write", "open", "close", "stat"]);
    assert!(matches!(back.verify_vocab(&other, &proc), Err(Error::VocabMismatch { .. })));
    assert!(Checkpoint::new(m, other, Vocab::reserved_only(), None).is_err());
}
