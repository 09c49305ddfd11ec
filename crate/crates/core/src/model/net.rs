use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::event::EventRecord;
use crate::tensor::{log_softmax_rows, Graph, Matrix, ParamStore, Var};

use super::input::{build_input, seq_major, time_major, InputSeq};
use super::mask::MaskedSequence;
use super::{Model, ModelKind, Objective};

/// Row arrangement of a forward pass's logits.
pub(crate) struct Layout {
    time_major: bool,
    batch: usize,
    offsets: Vec<usize>,
}

impl Layout {
    pub(crate) fn row(&self, b: usize, t: usize) -> usize {
        if self.time_major {
            t * self.batch + b
        } else {
            self.offsets[b] + t
        }
    }
}

/// Inverted dropout driven by the trainer's RNG.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

fn dropout(g: &mut Graph, x: Var, d: &mut Option<Dropout<'_>>) -> Var {
    let Some(d) = d.as_mut().filter(|d| d.rate > 0.0) else {
        return x;
    };
    let (rows, cols) = g.value(x).shape();
    let keep = 1.0 / (1.0 - d.rate);
    let mask = (0..rows * cols)
        .map(|_| if d.rng.random::<f64>() < d.rate { 0.0 } else { keep })
        .collect();
    g.mul_const(x, Matrix::from_vec(rows, cols, mask))
}

fn param(g: &mut Graph, p: &ParamStore, name: &str) -> Var {
    g.param(p, p.id(name).unwrap_or_else(|| panic!("missing parameter {name}")))
}

fn affine(g: &mut Graph, p: &ParamStore, x: Var, prefix: &str) -> Var {
    let w = param(g, p, &format!("{prefix}.w"));
    let b = param(g, p, &format!("{prefix}.b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn transformer_layer(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    x: Var,
    l: usize,
    drop: &mut Option<Dropout<'_>>,
) -> Result<Var> {
    let cfg = &model.config;
    let w = g.value(x).cols();
    let heads = cfg.tf_heads;
    let dh = w / heads;
    let qkv = affine(g, p, x, &format!("tf.{l}.qkv"));
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice_cols(qkv, h * dh, dh);
        let k = g.slice_cols(qkv, w + h * dh, dh);
        let v = g.slice_cols(qkv, 2 * w + h * dh, dh);
        let s = g.matmul_bt(q, k);
        let s = g.scale(s, scale);
        let a = g.softmax_rows(s, model.causal());
        ctx.push(g.matmul(a, v));
    }
    let ctx = g.concat_cols(&ctx);
    let att = affine(g, p, ctx, &format!("tf.{l}.out"));
    let att = dropout(g, att, drop);
    let x = g.add(x, att);
    let (g1, b1) = (param(g, p, &format!("tf.{l}.ln1.g")), param(g, p, &format!("tf.{l}.ln1.b")));
    let x = g.layer_norm(x, g1, b1);
    let f = affine(g, p, x, &format!("tf.{l}.ff1"));
    let f = g.relu(f);
    let f = affine(g, p, f, &format!("tf.{l}.ff2"));
    let f = dropout(g, f, drop);
    let x = g.add(x, f);
    let (g2, b2) = (param(g, p, &format!("tf.{l}.ln2.g")), param(g, p, &format!("tf.{l}.ln2.b")));
    let x = g.layer_norm(x, g2, b2);
    g.ensure_finite(x, &format!("transformer layer {l}"))?;
    Ok(x)
}

fn transformer(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    seqs: &[InputSeq<'_>],
    drop: &mut Option<Dropout<'_>>,
) -> Result<(Var, Layout)> {
    let mut outs = Vec::with_capacity(seqs.len());
    let mut offsets = Vec::with_capacity(seqs.len());
    let mut off = 0;
    for s in seqs {
        let one = std::slice::from_ref(s);
        let mut x = build_input(g, model, p, one, &seq_major(one))?;
        x = dropout(g, x, drop);
        if model.config.needs_projection(&model.repr) {
            x = affine(g, p, x, "tf.proj");
        }
        for l in 0..model.config.tf_layers {
            x = transformer_layer(g, model, p, x, l, drop)?;
        }
        outs.push(x);
        offsets.push(off);
        off += s.len();
    }
    let h = if outs.len() == 1 { outs[0] } else { g.stack_rows(&outs) };
    Ok((
        h,
        Layout {
            time_major: false,
            batch: seqs.len(),
            offsets,
        },
    ))
}

fn lstm(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    seqs: &[InputSeq<'_>],
    drop: &mut Option<Dropout<'_>>,
) -> Result<(Var, Layout)> {
    let len = seqs[0].len();
    if seqs.iter().any(|s| s.len() != len) {
        return Err(Error::Dimension("LSTM batch sequences must share one length".into()));
    }
    let b = seqs.len();
    let hd = model.config.lstm_hidden;
    let mut x = build_input(g, model, p, seqs, &time_major(seqs))?;
    x = dropout(g, x, drop);
    for l in 0..model.config.lstm_layers {
        let wx = param(g, p, &format!("lstm.{l}.wx"));
        let wh = param(g, p, &format!("lstm.{l}.wh"));
        let bias = param(g, p, &format!("lstm.{l}.b"));
        let xw = g.matmul(x, wx);
        let xw = g.add_row(xw, bias);
        let mut state: Option<(Var, Var)> = None;
        let mut hs = Vec::with_capacity(len);
        for t in 0..len {
            let mut gates = g.slice_rows(xw, t * b, b);
            if let Some((h, _)) = state {
                let hw = g.matmul(h, wh);
                gates = g.add(gates, hw);
            }
            let i = g.slice_cols(gates, 0, hd);
            let i = g.sigmoid(i);
            let cand = g.slice_cols(gates, 2 * hd, hd);
            let cand = g.tanh(cand);
            let o = g.slice_cols(gates, 3 * hd, hd);
            let o = g.sigmoid(o);
            let mut c = g.mul(i, cand);
            if let Some((_, c_prev)) = state {
                let f = g.slice_cols(gates, hd, hd);
                let f = g.sigmoid(f);
                let kept = g.mul(f, c_prev);
                c = g.add(kept, c);
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc);
            hs.push(h);
            state = Some((h, c));
        }
        x = g.stack_rows(&hs);
        g.ensure_finite(x, &format!("lstm layer {l}"))?;
        if l + 1 < model.config.lstm_layers {
            x = dropout(g, x, drop);
        }
    }
    Ok((
        x,
        Layout {
            time_major: true,
            batch: b,
            offsets: Vec::new(),
        },
    ))
}

/// Logits over the sysname vocabulary for every input row.
pub(crate) fn forward(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    seqs: &[InputSeq<'_>],
    mut drop: Option<Dropout<'_>>,
) -> Result<(Var, Layout)> {
    if seqs.is_empty() || seqs.iter().any(InputSeq::is_empty) {
        return Err(Error::Empty("forward pass needs non-empty sequences".into()));
    }
    let (h, layout) = match model.config.kind {
        ModelKind::Lstm => lstm(g, model, p, seqs, &mut drop)?,
        ModelKind::Transformer => transformer(g, model, p, seqs, &mut drop)?,
    };
    let logits = affine(g, p, h, "out");
    g.ensure_finite(logits, "output layer")?;
    Ok((logits, layout))
}

/// `(row, class)` targets for next-call prediction: the output at `t`
/// predicts the sysname at `t + 1`.
pub(crate) fn lm_targets(seqs: &[InputSeq<'_>], layout: &Layout) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (b, s) in seqs.iter().enumerate() {
        for t in 0..s.len().saturating_sub(1) {
            out.push((layout.row(b, t), s.records[t + 1].sysname_id as usize));
        }
    }
    out
}

pub(crate) fn mlm_targets(masked: &[MaskedSequence], layout: &Layout) -> Vec<(usize, usize)> {
    masked
        .iter()
        .enumerate()
        .flat_map(|(b, m)| m.targets.iter().map(move |&(t, id)| (layout.row(b, t), id as usize)))
        .collect()
}

pub(crate) fn masked_inputs<'a>(model: &Model, originals: &[&'a [EventRecord]], masked: &'a [MaskedSequence]) -> Vec<InputSeq<'a>> {
    masked
        .iter()
        .zip(originals)
        .map(|(m, orig)| InputSeq {
            records: &m.records,
            blanked: Some(&m.blanked),
            origin_us: model.repr.origin_for(orig),
        })
        .collect()
}

/// Summed next-call cross-entropy divided by `denom`.
pub(crate) fn lm_loss_with(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    seqs: &[InputSeq<'_>],
    denom: Option<f64>,
    drop: Option<Dropout<'_>>,
) -> Result<Var> {
    let (logits, layout) = forward(g, model, p, seqs, drop)?;
    let targets = lm_targets(seqs, &layout);
    if targets.is_empty() {
        return Err(Error::Empty("no next-call targets".into()));
    }
    let denom = denom.unwrap_or(targets.len() as f64);
    Ok(g.cross_entropy(logits, targets, denom))
}

pub(crate) fn mlm_loss_with(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    seqs: &[InputSeq<'_>],
    masked: &[MaskedSequence],
    denom: Option<f64>,
    drop: Option<Dropout<'_>>,
) -> Result<Var> {
    if model.config.kind != ModelKind::Transformer {
        return Err(Error::Unsupported("masked objective requires the transformer".into()));
    }
    let (logits, layout) = forward(g, model, p, seqs, drop)?;
    let targets = mlm_targets(masked, &layout);
    if targets.is_empty() {
        return Err(Error::Empty("no masked targets selected".into()));
    }
    let denom = denom.unwrap_or(targets.len() as f64);
    Ok(g.cross_entropy(logits, targets, denom))
}

/// Mean next-call cross-entropy of `seqs` under `params`; a `1 x 1` node.
pub fn lm_loss(g: &mut Graph, model: &Model, params: &ParamStore, seqs: &[InputSeq<'_>]) -> Result<Var> {
    lm_loss_with(g, model, params, seqs, None, None)
}

/// Mean cross-entropy over the masked targets; a `1 x 1` node.
pub fn mlm_loss(
    g: &mut Graph,
    model: &Model,
    params: &ParamStore,
    originals: &[&[EventRecord]],
    masked: &[MaskedSequence],
) -> Result<Var> {
    let seqs = masked_inputs(model, originals, masked);
    mlm_loss_with(g, model, params, &seqs, masked, None, None)
}

fn softmax(logits: &Matrix) -> Matrix {
    let mut p = log_softmax_rows(logits);
    p.data_mut().iter_mut().for_each(|x| *x = x.exp());
    p
}

/// Next-call distributions: row `t` is the predicted distribution of the
/// sysname at `t + 1` given events `0..=t`.
pub fn lm_forward(model: &Model, records: &[EventRecord]) -> Result<Matrix> {
    if model.objective != Objective::Lm {
        return Err(Error::Unsupported("next-call prediction needs a causal model".into()));
    }
    let s = [InputSeq::new(records, model)];
    let mut g = Graph::new();
    let (logits, _) = forward(&mut g, model, &model.params, &s, None)?;
    Ok(softmax(g.value(logits)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmOutput {
    /// One distribution per target, in target order.
    pub probs: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Distributions at the masked targets and their mean cross-entropy.
pub fn mlm_forward(model: &Model, original: &[EventRecord], masked: &MaskedSequence) -> Result<MlmOutput> {
    if model.config.kind != ModelKind::Transformer {
        return Err(Error::Unsupported("masked objective requires the transformer".into()));
    }
    if masked.targets.is_empty() {
        return Err(Error::Empty("no masked targets selected".into()));
    }
    let seqs = masked_inputs(model, &[original], std::slice::from_ref(masked));
    let mut g = Graph::new();
    let (logits, layout) = forward(&mut g, model, &model.params, &seqs, None)?;
    let logp = log_softmax_rows(g.value(logits));
    let rows: Vec<(usize, usize)> = masked.targets.iter().map(|&(t, id)| (layout.row(0, t), id as usize)).collect();
    let loss_value = -rows.iter().map(|&(r, c)| logp.get(r, c)).sum::<f64>() / rows.len() as f64;
    Ok(MlmOutput {
        probs: rows
            .iter()
            .map(|&(r, _)| logp.row(r).iter().map(|x| x.exp()).collect())
            .collect(),
        loss: loss_value,
    })
}
