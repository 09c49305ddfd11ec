//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! The learning criteria (C5-C8) run at a reduced scale: a 2-layer
//! Transformer trained for 60 optimizer steps per run on a frozen synthetic
//! corpus of 20k windows. Set `SYSARG_LOG=info` for progress output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sysarg::dataset::Dataset;
use sysarg::experiment::{
    mean_std, quantile, run_mask_study, score_sequences, time_overhead, train_and_evaluate, ExperimentSpec,
    MaskStudySpec, RunOutcome, Splits,
};
use sysarg::ingest::{format_line, parse_line, window, Sequence};
use sysarg::jsonl::{read_jsonl, write_jsonl};
use sysarg::model::*;
use sysarg::repr::{embed, encode, Ablation, EmbeddingTable, Groups, RepresentationConfig, SinusoidalEncoder};
use sysarg::synth::WorkloadConfig;
use sysarg::tensor::gradcheck::{grad_check, DEFAULT_REL_STEP};
use sysarg::tensor::{Graph, Matrix};
use sysarg::{Event, EventRecord, RetClass};

const SEEDS: [u64; 3] = [0, 1, 2];
const WINDOW: usize = 256;
const CORPUS_WINDOWS: usize = 20_000;
const CORPUS_SEED: u64 = 20_211;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Tally {
    failed: usize,
}

impl Tally {
    fn run(&mut self, id: &str, what: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{id} PASS {what} ({d}; {secs:.1}s)"),
            Err(d) => {
                self.failed += 1;
                println!("{id} FAIL {what} ({d}; {secs:.1}s)");
            }
        }
    }
}

fn c1_encoding() -> Outcome {
    for d in [2, 4, 8, 16, 64] {
        let z = encode(0.0, &SinusoidalEncoder::new(d).unwrap());
        let want: Vec<f64> = (0..d).map(|i| (i % 2) as f64).collect();
        if z != want {
            return Err(format!("encode(0, {d}) = {z:?}"));
        }
    }
    let v = encode(80.0, &SinusoidalEncoder::new(4).unwrap());
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let w = 10000f64.powf(-2.0 * i as f64 / 4.0);
        worst = worst.max((v[2 * i] - (80.0 * w).sin()).abs());
        worst = worst.max((v[2 * i + 1] - (80.0 * w).cos()).abs());
    }
    if worst > 1e-9 {
        return Err(format!("encode(80, 4) off by {worst:e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rot: f64 = 0.0;
    for _ in 0..1000 {
        let d = 2 * rng.random_range(1..=16);
        let x: f64 = rng.random_range(-1e4..1e4);
        let k: f64 = rng.random_range(-1e3..1e3);
        let enc = SinusoidalEncoder::new(d).unwrap();
        let (a, b) = (enc.encode(x), enc.encode(x + k));
        for i in 0..d / 2 {
            let (s, c) = (k * enc.frequency(i)).sin_cos();
            rot = rot.max((b[2 * i] - (a[2 * i] * c + a[2 * i + 1] * s)).abs());
            rot = rot.max((b[2 * i + 1] - (a[2 * i + 1] * c - a[2 * i] * s)).abs());
        }
    }
    ensure(
        rot <= 1e-9,
        format!("encode(80,4) err {worst:.1e}, rotation max err {rot:.1e} over 1000 cases"),
    )
}

fn c2_embedding() -> Outcome {
    #[rustfmt::skip]
    let w = Matrix::from_vec(4, 5, vec![
        5.0, 6.0, 2.0, 1.0, 4.0,
        0.0, 1.0, 7.0, 3.0, 1.0,
        4.0, 8.0, 1.0, 6.0, 9.0,
        3.0, 1.0, 2.0, 8.0, 2.0,
    ]);
    let one_hot = Matrix::from_vec(1, 4, vec![0.0, 0.0, 1.0, 0.0]);
    let table = EmbeddingTable::new(w.clone()).unwrap();
    let got = embed(2, &table).unwrap();
    let product = one_hot.matmul(&w).row(0).to_vec();
    ensure(
        got == [4.0, 8.0, 1.0, 6.0, 9.0] && got == product,
        format!("lookup {got:?}, one-hot product {product:?}"),
    )
}

fn tiny_records(len: usize, seed: u32) -> Vec<EventRecord> {
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

fn tiny_model(kind: ModelKind, objective: Objective) -> Model {
    let repr = RepresentationConfig {
        groups: Groups::ALL,
        d_sysname: 4,
        d_procname: 2,
        d_pid: 2,
        d_tid: 2,
        d_timestamp: 2,
        ..RepresentationConfig::default()
    };
    let config = ModelConfig {
        kind,
        lstm_layers: 2,
        lstm_hidden: 3,
        tf_layers: 1,
        tf_heads: 2,
        tf_ff: 4,
        d_position: 2,
        dropout: 0.0,
        window_len: 4,
    };
    Model::new(repr, config, objective, 8, 5, 11).unwrap()
}

fn c3_gradients() -> Outcome {
    let lstm = tiny_model(ModelKind::Lstm, Objective::Lm);
    let recs = tiny_records(4, 12);
    let inputs = [InputSeq::new(&recs, &lstm)];
    let mut params = lstm.params.clone();
    let a = grad_check(&mut params, DEFAULT_REL_STEP, |p, g: &mut Graph| lm_loss(g, &lstm, p, &inputs))
        .map_err(|e| e.to_string())?;

    let tf = tiny_model(ModelKind::Transformer, Objective::Mlm);
    let recs = tiny_records(4, 13);
    let plan = MaskPlan {
        p_select: 0.5,
        frac_mask: 0.5,
        frac_random: 0.5,
        frac_keep: 0.0,
        seed: 2,
    };
    let masked = mlm_mask(&recs, &plan, 8).map_err(|e| e.to_string())?;
    let mut params = tf.params.clone();
    let b = grad_check(&mut params, DEFAULT_REL_STEP, |p, g: &mut Graph| {
        mlm_loss(g, &tf, p, &[&recs], std::slice::from_ref(&masked))
    })
    .map_err(|e| e.to_string())?;
    let covered = a.per_tensor.len() == lstm.params.len() && b.per_tensor.len() == tf.params.len();
    ensure(
        covered && a.max_rel_error < 1e-4 && b.max_rel_error < 1e-4,
        format!(
            "lstm-lm {:.1e} over {} tensors, transformer-mlm {:.1e} over {} tensors",
            a.max_rel_error,
            a.per_tensor.len(),
            b.max_rel_error,
            b.per_tensor.len()
        ),
    )
}

fn c4_causality_and_masking() -> Outcome {
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Lstm, ModelKind::Transformer] {
        let config = ModelConfig {
            kind,
            window_len: 64,
            ..ModelConfig::default()
        };
        let m = Model::new(Ablation::All.config(), config, Objective::Lm, 12, 6, 5).map_err(|e| e.to_string())?;
        let base = tiny_records(64, 3);
        let p0 = lm_forward(&m, &base).map_err(|e| e.to_string())?;
        for t in [0, 10, 40, 62] {
            let mut changed = base.clone();
            for r in &mut changed[t + 1..] {
                r.sysname_id = 11 - (r.sysname_id - 3);
                r.pid += 17;
                r.timestamp_us += 999;
                r.ret_class = RetClass::Unavailable;
            }
            let p1 = lm_forward(&m, &changed).map_err(|e| e.to_string())?;
            for row in 0..=t {
                for (a, b) in p0.row(row).iter().zip(p1.row(row)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let c = MaskPlan::default().counts(256);
    let counts_ok = (c.selected, c.masked, c.random, c.kept) == (64, 51, 6, 7);
    let recs = tiny_records(256, 4);
    let a = mlm_mask(&recs, &MaskPlan::default(), 8).map_err(|e| e.to_string())?;
    let b = mlm_mask(&recs, &MaskPlan::default(), 8).map_err(|e| e.to_string())?;
    let other = mlm_mask(&recs, &MaskPlan { seed: 9, ..MaskPlan::default() }, 8).map_err(|e| e.to_string())?;
    let applied = a.targets.len() == 64 && a.blanked.iter().filter(|x| **x).count() == 51;
    ensure(
        worst <= 1e-9 && counts_ok && applied && a == b && a != other,
        format!(
            "max past-row change {worst:.1e}; counts {}/{}/{}/{} of {}; deterministic {}",
            c.masked,
            c.random,
            c.kept,
            c.selected,
            256,
            a == b
        ),
    )
}

fn c9_round_trips() -> Outcome {
    let mut runner = TestRunner::new_with_rng(Config::default(), proptest::test_runner::TestRng::deterministic_rng(
        proptest::test_runner::RngAlgorithm::ChaCha,
    ));
    let strategy = prop::collection::vec(event_strategy(), 10_000);
    let events = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &events).map_err(|e| e.to_string())?;
    if read_jsonl(buf.as_slice()).map_err(|e| e.to_string())? != events {
        return Err("jsonl round trip differs".into());
    }
    let epoch = 5_000_000_000;
    for e in &events {
        let back = parse_line(&format_line(e, epoch, 0), epoch).map_err(|e| e.to_string())?;
        if &back != e {
            return Err(format!("babeltrace round trip differs for {e:?}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(0..2000usize);
        let len = rng.random_range(2..300usize);
        let stream: Vec<u32> = (0..n as u32).collect();
        let recs: Vec<EventRecord> = stream
            .iter()
            .map(|&i| EventRecord {
                sysname_id: i,
                entry: true,
                ret_class: RetClass::Unavailable,
                procname_id: 0,
                pid: 0,
                tid: 0,
                timestamp_us: u64::from(i),
            })
            .collect();
        let ws = window(recs, len).map_err(|e| e.to_string())?;
        let flat: Vec<u32> = ws.iter().flat_map(|w| w.records().iter().map(|r| r.sysname_id)).collect();
        if ws.len() != n / len || flat[..] != stream[..flat.len()] || ws.iter().any(|w| w.len() != len) {
            return Err(format!("window prefix broken for n={n} len={len}"));
        }
    }
    Ok("10000 events through jsonl and babeltrace; 200 random windowings".into())
}

fn event_strategy() -> impl Strategy<Value = Event> {
    let name = "[a-z][a-z0-9_]{0,11}";
    let value = prop_oneof!["-?[0-9]{1,6}", "[a-zA-Z0-9/._ \"\\\\-]{0,16}"];
    (
        0u64..86_400_000_000_000,
        "[a-z][a-z0-9-]{0,7}",
        0u32..64,
        "[a-zA-Z0-9 ._-]{1,12}",
        any::<u32>(),
        any::<u32>(),
        name,
        any::<bool>(),
        any::<i64>(),
        prop::collection::vec((name, value), 0..4),
    )
        .prop_map(|(timestamp_ns, hostname, cpu_id, procname, pid, tid, sysname, entry, ret, args)| Event {
            timestamp_ns,
            hostname,
            cpu_id,
            procname,
            pid,
            tid,
            sysname,
            entry,
            ret: (!entry).then_some(ret),
            extra_args: args.into_iter().filter(|(k, _)| k != "ret").collect(),
        })
}

/// Frozen corpus plus the reduced-scale experiment settings.
struct Study {
    spec: ExperimentSpec,
    splits: Splits,
}

fn study() -> Result<Study, String> {
    let cfg = WorkloadConfig {
        seed: CORPUS_SEED,
        n_events: CORPUS_WINDOWS * WINDOW,
        ..WorkloadConfig::default()
    };
    let ds = Dataset::synthesize(&cfg, 1, WINDOW).map_err(|e| e.to_string())?;
    let mut spec = ExperimentSpec::default();
    spec.seeds = SEEDS.to_vec();
    spec.model.tf_layers = 2;
    spec.train.lr = 3e-3;
    spec.train.max_epochs = 3;
    spec.train.patience = 3;
    spec.train.max_batches_per_epoch = Some(20);
    spec.train.max_valid_sequences = Some(64);
    spec.data.max_eval_sequences = Some(300);
    let splits = Splits::new(ds, None, &spec.data).map_err(|e| e.to_string())?;
    Ok(Study { spec, splits })
}

fn lm_run(s: &Study, ablation: Ablation, d_position: usize, seed: u64) -> Result<RunOutcome, String> {
    let model = ModelConfig {
        d_position,
        ..s.spec.model
    };
    let out = train_and_evaluate(
        &s.splits,
        Objective::Lm,
        &model,
        &s.spec.representation_for(ablation),
        &s.spec.train,
        seed,
    )
    .map_err(|e| e.to_string())?;
    log::info!(
        "{ablation} d_position={d_position} seed={seed}: ce {:.4} acc {:.2}",
        out.metrics.cross_entropy,
        out.metrics.accuracy
    );
    Ok(out)
}

struct Runs {
    none: Vec<RunOutcome>,
    none_cmp: Vec<RunOutcome>,
    all: Vec<RunOutcome>,
}

fn mean_of(runs: &[RunOutcome], f: impl Fn(&Metrics) -> f64) -> (f64, f64) {
    mean_std(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
}

fn c5_runs(s: &Study) -> Result<Runs, String> {
    let per = |ab| SEEDS.iter().map(|&seed| lm_run(s, ab, 8, seed)).collect::<Result<Vec<_>, _>>();
    Ok(Runs {
        none: per(Ablation::None)?,
        none_cmp: per(Ablation::NoneCmp)?,
        all: per(Ablation::All)?,
    })
}

fn c5_check(r: &Runs) -> Outcome {
    let acc = |m: &Metrics| m.accuracy;
    let (none, _) = mean_of(&r.none, acc);
    let (cmp, _) = mean_of(&r.none_cmp, acc);
    let (all, _) = mean_of(&r.all, acc);
    ensure(
        all - none >= 3.0 && all > cmp,
        format!("top-1 over 3 seeds: none {none:.2}%, none_cmp {cmp:.2}%, all {all:.2}%"),
    )
}

fn c6_check(s: &Study, with_position: &[RunOutcome]) -> Outcome {
    let without = SEEDS
        .iter()
        .map(|&seed| lm_run(s, Ablation::None, 0, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let ce = |m: &Metrics| m.cross_entropy;
    let (p0, sd0) = mean_of(&without, ce);
    let (p8, sd8) = mean_of(with_position, ce);
    ensure(
        p8 < p0,
        format!("cross-entropy d_position 0: {p0:.4} (sd {sd0:.4}), d_position 8: {p8:.4} (sd {sd8:.4})"),
    )
}

fn c7_check(s: &Study) -> Outcome {
    let mut spec = s.spec.clone();
    spec.seeds = vec![0];
    spec.train.max_batches_per_epoch = Some(3);
    spec.train.max_valid_sequences = Some(8);
    spec.overhead.epochs = 5;
    let (out, _) = time_overhead(&spec, &s.splits).map_err(|e| e.to_string())?;
    ensure(
        out.ratio <= 1.25,
        format!(
            "epoch ms none {:.0} all {:.0}, ratio {:.3}",
            out.none_mean * 1e3,
            out.all_mean * 1e3,
            out.ratio
        ),
    )
}

fn c8_check(s: &Study, model: &Model) -> Outcome {
    let held: Vec<Sequence> = s.splits.test.iter().take(100).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shuffled: Vec<Sequence> = held
        .iter()
        .map(|seq| {
            let mut recs = seq.records().to_vec();
            let mut names: Vec<u32> = recs.iter().map(|r| r.sysname_id).collect();
            names.shuffle(&mut rng);
            for (r, n) in recs.iter_mut().zip(names) {
                r.sysname_id = n;
            }
            Sequence::new(recs)
        })
        .collect();
    let a = score_sequences(model, &held).map_err(|e| e.to_string())?;
    let b = score_sequences(model, &shuffled).map_err(|e| e.to_string())?;
    let (ma, mb) = (quantile(&a, 0.5), quantile(&b, 0.5));
    ensure(
        held.len() == 100 && ma > mb,
        format!("median log-likelihood held-out {ma:.1}, shuffled {mb:.1}"),
    )
}

fn c10_mask_study() -> Outcome {
    let cfg = WorkloadConfig {
        seed: 5,
        n_events: 32 * 200,
        ..WorkloadConfig::default()
    };
    let ds = Dataset::synthesize(&cfg, 1, 32).map_err(|e| e.to_string())?;
    let mut spec = ExperimentSpec::default();
    spec.seeds = vec![3];
    spec.model.tf_layers = 1;
    spec.model.tf_ff = 32;
    spec.train.max_epochs = 1;
    spec.train.max_batches_per_epoch = Some(2);
    spec.train.batch_size = 8;
    spec.train.max_valid_sequences = Some(8);
    spec.data.max_eval_sequences = Some(16);
    spec.mask = MaskStudySpec {
        zero_shot_positions: Some(4),
        ..MaskStudySpec::default()
    };
    let splits = Splits::new(ds, None, &spec.data).map_err(|e| e.to_string())?;
    let a = run_mask_study(&spec, &splits).map_err(|e| e.to_string())?;
    let b = run_mask_study(&spec, &splits).map_err(|e| e.to_string())?;
    let (ta, tb) = (a.to_text(), b.to_text());
    let shaped = a.rows.len() == 6 && a.columns.len() == 5 && !a.failed;
    let records = |r: &sysarg::experiment::Report| {
        let mut v = serde_json::to_value(&r.records).unwrap_or_default();
        strip_timing(&mut v);
        v
    };
    ensure(
        shaped && ta == tb && records(&a) == records(&b),
        format!("{} rows x {} columns, identical reruns {}", a.rows.len(), a.columns.len(), ta == tb),
    )
}

/// Wall-clock fields are the only legitimately varying part of a report.
fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|k, _| !k.contains("seconds"));
            m.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYSARG_LOG", "warn")).init();
    let start = Instant::now();
    let mut t = Tally { failed: 0 };
    t.run("C1", "sinusoidal encoding", c1_encoding);
    t.run("C2", "embedding lookup example", c2_embedding);
    t.run("C3", "gradient check", c3_gradients);
    t.run("C4", "causality and mask counts", c4_causality_and_masking);

    let study = catch_unwind(study).unwrap_or_else(|_| Err("corpus generation panicked".into()));
    match &study {
        Ok(s) => log::info!("corpus: {}", s.splits.summary()),
        Err(e) => log::warn!("corpus: {e}"),
    }
    let runs = match &study {
        Ok(s) => catch_unwind(AssertUnwindSafe(|| c5_runs(s))).unwrap_or_else(|_| Err("training panicked".into())),
        Err(e) => Err(e.clone()),
    };
    t.run("C5", "argument ablation direction", || runs.as_ref().map_err(|e| e.clone()).and_then(c5_check));
    t.run("C6", "position encoding direction", || match (&study, &runs) {
        (Ok(s), Ok(r)) => c6_check(s, &r.none),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    });
    t.run("C7", "per-epoch overhead", || study.as_ref().map_err(|e| e.clone()).and_then(c7_check));
    t.run("C8", "anomaly score shuffle oracle", || match (&study, &runs) {
        (Ok(s), Ok(r)) => c8_check(s, &r.all[0].model),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    });
    t.run("C9", "pipeline round trips", c9_round_trips);
    t.run("C10", "mask study smoke", c10_mask_study);

    println!(
        "{} of 10 criteria passed in {:.0}s",
        10 - t.failed,
        start.elapsed().as_secs_f64()
    );
    if t.failed > 0 {
        std::process::exit(1);
    }
}
