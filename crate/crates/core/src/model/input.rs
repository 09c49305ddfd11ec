use crate::error::{Error, Result};
use crate::event::EventRecord;
use crate::ingest::Sequence;
use crate::repr::SinusoidalEncoder;
use crate::tensor::{Graph, Matrix, ParamStore, Var};

use super::Model;

/// A sequence as seen by a model.
#[derive(Debug, Clone, Copy)]
pub struct InputSeq<'a> {
    pub records: &'a [EventRecord],
    /// Rows flagged here are entirely masked: their argument channels are
    /// zero and only the sysname embedding (normally MASK) remains.
    pub blanked: Option<&'a [bool]>,
    /// Subtracted from every timestamp before encoding.
    pub origin_us: u64,
}

impl<'a> InputSeq<'a> {
    pub fn new(records: &'a [EventRecord], model: &Model) -> Self {
        InputSeq {
            records,
            blanked: None,
            origin_us: model.repr.origin_for(records),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn blank(&self, t: usize) -> bool {
        self.blanked.is_some_and(|b| b[t])
    }
}

/// `(sequence, position)` for every row, sequence by sequence.
pub(crate) fn seq_major(seqs: &[InputSeq<'_>]) -> Vec<(usize, usize)> {
    seqs.iter()
        .enumerate()
        .flat_map(|(b, s)| (0..s.len()).map(move |t| (b, t)))
        .collect()
}

/// `(sequence, position)` for every row, position by position. All
/// sequences must share one length.
pub(crate) fn time_major(seqs: &[InputSeq<'_>]) -> Vec<(usize, usize)> {
    let len = seqs.first().map_or(0, InputSeq::len);
    (0..len)
        .flat_map(|t| (0..seqs.len()).map(move |b| (b, t)))
        .collect()
}

/// Adds the input rows for `order` to the graph: the event representation
/// followed by the position encoding when the architecture uses one.
pub(crate) fn build_input(
    g: &mut Graph,
    model: &Model,
    p: &ParamStore,
    seqs: &[InputSeq<'_>],
    order: &[(usize, usize)],
) -> Result<Var> {
    for s in seqs {
        if s.blanked.is_some_and(|b| b.len() != s.len()) {
            return Err(Error::Dimension("blank mask length differs from sequence length".into()));
        }
        model.check_ids(s)?;
    }
    let repr = &model.repr;
    let table = |g: &mut Graph, name: &str| g.param(p, p.id(name).expect("embedding table"));
    let rec = |b: usize, t: usize| &seqs[b].records[t];
    let ids = |f: &dyn Fn(&EventRecord) -> usize, skip_blank: bool| -> Vec<Option<usize>> {
        order
            .iter()
            .map(|&(b, t)| (!(skip_blank && seqs[b].blank(t))).then(|| f(rec(b, t))))
            .collect()
    };

    let sys = table(g, "emb.sysname");
    let mut call = g.gather(sys, ids(&|r| r.sysname_id as usize, false));
    if repr.groups.call {
        let (et, rt) = (table(g, "emb.entry"), table(g, "emb.ret"));
        let e = g.gather(et, ids(&|r| r.entry_index(), true));
        let r = g.gather(rt, ids(&|r| r.ret_class.index(), true));
        let ce = g.add(call, e);
        call = g.add(ce, r);
    }
    let mut parts = vec![call];
    if repr.groups.process {
        let pt = table(g, "emb.procname");
        parts.push(g.gather(pt, ids(&|r| r.procname_id as usize, true)));
    }

    let d_pos = model.config.position_dim();
    let width = repr.process_dim() - if repr.groups.process { repr.d_procname } else { 0 }
        + repr.time_dim()
        + d_pos;
    if width > 0 {
        let process = if repr.groups.process {
            Some((repr.pid_encoder()?, repr.tid_encoder()?))
        } else {
            None
        };
        let time = if repr.groups.time {
            Some(repr.timestamp_encoder()?)
        } else {
            None
        };
        let position = if d_pos > 0 {
            Some(SinusoidalEncoder::with_base(d_pos, repr.base)?)
        } else {
            None
        };
        let mut consts = Matrix::zeros(order.len(), width);
        for (row, &(b, t)) in order.iter().enumerate() {
            let r = rec(b, t);
            let blank = seqs[b].blank(t);
            let out = consts.row_mut(row);
            let mut off = 0;
            let mut put = |enc: &SinusoidalEncoder, x: Option<f64>| {
                if let Some(x) = x {
                    enc.encode_into(x, &mut out[off..off + enc.dim()]);
                }
                off += enc.dim();
            };
            if let Some((pe, te)) = &process {
                put(pe, (!blank).then_some(r.pid as f64));
                put(te, (!blank).then_some(r.tid as f64));
            }
            if let Some(enc) = &time {
                let dt = r.timestamp_us.saturating_sub(seqs[b].origin_us) as f64;
                put(enc, (!blank).then_some(dt));
            }
            if let Some(enc) = &position {
                put(enc, Some(t as f64));
            }
        }
        parts.push(g.input(consts));
    }
    Ok(if parts.len() == 1 {
        parts[0]
    } else {
        g.concat_cols(&parts)
    })
}

/// Input matrix (`window_len x D`) for one sequence. Row `t` is the event
/// representation followed, for the transformer, by the encoding of `t`.
pub fn model_input(seq: &Sequence, model: &Model) -> Result<Matrix> {
    if seq.len() != model.config.window_len {
        return Err(Error::Dimension(format!(
            "sequence has {} events, model expects {}",
            seq.len(),
            model.config.window_len
        )));
    }
    let s = [InputSeq::new(seq.records(), model)];
    let mut g = Graph::new();
    let v = build_input(&mut g, model, &model.params, &s, &seq_major(&s))?;
    Ok(g.value(v).clone())
}
