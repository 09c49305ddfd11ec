//! Argument-aware event representation.
//!
//! Intrinsically meaningful values (call name, entry flag, return class,
//! process name) are embedded; context-dependent integers (pid, tid,
//! timestamp) are sinusoidally encoded. The call name, entry and return
//! embeddings share one space and are summed; the call, process and time
//! groups are then concatenated.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventRecord, RetClass};
use crate::ingest::Sequence;
use crate::tensor::Matrix;

/// Scale of the uniform initialisation of embedding tables.
pub const EMBEDDING_INIT: f64 = 0.05;

/// Trainable lookup table: row `i` is the embedding of id `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    matrix: Matrix,
}

impl EmbeddingTable {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.cols() == 0 {
            return Err(Error::Dimension("embedding dimension must be at least 1".into()));
        }
        if !matrix.all_finite() {
            return Err(Error::Dimension("embedding entries must be finite".into()));
        }
        Ok(EmbeddingTable { matrix })
    }

    pub fn zeros(rows: usize, dim: usize) -> Result<Self> {
        Self::new(Matrix::zeros(rows, dim))
    }

    /// i.i.d. uniform in `[-EMBEDDING_INIT, EMBEDDING_INIT]`.
    pub fn random<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Result<Self> {
        Self::new(Matrix::uniform(rows, dim, EMBEDDING_INIT, rng))
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn row(&self, id: usize) -> Result<&[f64]> {
        if id >= self.vocab_size() {
            return Err(Error::OutOfRange {
                id,
                rows: self.vocab_size(),
            });
        }
        Ok(self.matrix.row(id))
    }

    /// Text dump: a `sysarg-embedding rows=R dim=D seed=S` header followed
    /// by one whitespace-separated row per line.
    pub fn to_text(&self, seed: u64) -> String {
        let mut out = format!(
            "sysarg-embedding rows={} dim={} seed={}\n",
            self.vocab_size(),
            self.dim(),
            seed
        );
        for r in 0..self.vocab_size() {
            let row: Vec<String> = self.matrix.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Parses [`EmbeddingTable::to_text`] output; returns the table and seed.
    pub fn from_text<R: BufRead>(r: R) -> Result<(Self, u64)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Empty("embedding dump has no header".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("sysarg-embedding") {
            return Err(Error::config("not an embedding dump"));
        }
        let mut get = |key: &str| -> Result<u64> {
            fields
                .next()
                .and_then(|f| f.strip_prefix(key))
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::config(format!("embedding header missing {key}")))
        };
        let (rows, dim, seed) = (get("rows")? as usize, get("dim")? as usize, get("seed")?);
        let mut data = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate().take(rows) {
            let line = line?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| Error::AtLine {
                    line: i + 2,
                    source: Box::new(Error::config(e.to_string())),
                })?);
            }
            if data.len() - before != dim {
                return Err(Error::Dimension(format!("row {i} has {} values, expected {dim}", data.len() - before)));
            }
        }
        if data.len() != rows * dim {
            return Err(Error::Dimension(format!("expected {rows} rows")));
        }
        Ok((Self::new(Matrix::from_vec(rows, dim, data))?, seed))
    }
}

/// Embedding of `id`: row `id` of the table, i.e. `one_hot(id) * W`.
pub fn embed(id: usize, table: &EmbeddingTable) -> Result<Vec<f64>> {
    table.row(id).map(<[f64]>::to_vec)
}

/// Parameter-free scalar encoding with `dim / 2` sine/cosine pairs at
/// geometrically spaced frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalEncoder {
    dim: usize,
    base: f64,
}

pub const DEFAULT_BASE: f64 = 10_000.0;

impl SinusoidalEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_base(dim, DEFAULT_BASE)
    }

    pub fn with_base(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Dimension(format!("encoder dimension must be even and positive, got {dim}")));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(Error::config(format!("encoder base must exceed 1, got {base}")));
        }
        Ok(SinusoidalEncoder { dim, base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Angular frequency of pair `i`: `base^(-2i/dim)`.
    pub fn frequency(&self, i: usize) -> f64 {
        self.base.powf(-((2 * i) as f64) / self.dim as f64)
    }

    /// Writes `[sin(x w_0), cos(x w_0), sin(x w_1), ...]` into `out`.
    pub fn encode_into(&self, x: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim);
        for (i, pair) in out.chunks_exact_mut(2).enumerate() {
            let (s, c) = (x * self.frequency(i)).sin_cos();
            pair[0] = s;
            pair[1] = c;
        }
    }

    pub fn encode(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(x, &mut out);
        out
    }
}

pub fn encode(x: f64, enc: &SinusoidalEncoder) -> Vec<f64> {
    enc.encode(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Call,
    Process,
    Time,
}

/// Active argument groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Groups {
    pub call: bool,
    pub process: bool,
    pub time: bool,
}

impl Groups {
    pub const NONE: Groups = Groups {
        call: false,
        process: false,
        time: false,
    };
    pub const ALL: Groups = Groups {
        call: true,
        process: true,
        time: true,
    };

    pub fn only(g: Group) -> Groups {
        Groups::NONE.with(g)
    }

    pub fn with(mut self, g: Group) -> Groups {
        match g {
            Group::Call => self.call = true,
            Group::Process => self.process = true,
            Group::Time => self.time = true,
        }
        self
    }

    pub fn contains(&self, g: Group) -> bool {
        match g {
            Group::Call => self.call,
            Group::Process => self.process,
            Group::Time => self.time,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampOrigin {
    /// First event of the window.
    #[default]
    SequenceStart,
    /// First event of the trace (timestamps are already trace-relative).
    TraceStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepresentationConfig {
    pub groups: Groups,
    pub d_sysname: usize,
    pub d_procname: usize,
    pub d_pid: usize,
    pub d_tid: usize,
    pub d_timestamp: usize,
    pub timestamp_origin: TimestampOrigin,
    pub base: f64,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig {
            groups: Groups::ALL,
            d_sysname: 32,
            d_procname: 16,
            d_pid: 4,
            d_tid: 4,
            d_timestamp: 8,
            timestamp_origin: TimestampOrigin::SequenceStart,
            base: DEFAULT_BASE,
        }
    }
}

impl RepresentationConfig {
    pub fn with_groups(groups: Groups) -> Self {
        RepresentationConfig {
            groups,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut dims = vec![("d_sysname", self.d_sysname, false)];
        if self.groups.process {
            dims.extend([
                ("d_procname", self.d_procname, false),
                ("d_pid", self.d_pid, true),
                ("d_tid", self.d_tid, true),
            ]);
        }
        if self.groups.time {
            dims.push(("d_timestamp", self.d_timestamp, true));
        }
        for (name, d, encoded) in dims {
            if d == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
            if encoded && d % 2 != 0 {
                return Err(Error::config(format!("{name} must be even, got {d}")));
            }
        }
        if !(self.base.is_finite() && self.base > 1.0) {
            return Err(Error::config("encoder base must exceed 1"));
        }
        Ok(())
    }

    pub fn call_dim(&self) -> usize {
        self.d_sysname
    }

    pub fn process_dim(&self) -> usize {
        if self.groups.process {
            self.d_procname + self.d_pid + self.d_tid
        } else {
            0
        }
    }

    pub fn time_dim(&self) -> usize {
        if self.groups.time {
            self.d_timestamp
        } else {
            0
        }
    }

    pub fn total_dim(&self) -> usize {
        self.call_dim() + self.process_dim() + self.time_dim()
    }

    fn encoder(&self, dim: usize) -> Result<SinusoidalEncoder> {
        SinusoidalEncoder::with_base(dim, self.base)
    }

    pub fn pid_encoder(&self) -> Result<SinusoidalEncoder> {
        self.encoder(self.d_pid)
    }

    pub fn tid_encoder(&self) -> Result<SinusoidalEncoder> {
        self.encoder(self.d_tid)
    }

    pub fn timestamp_encoder(&self) -> Result<SinusoidalEncoder> {
        self.encoder(self.d_timestamp)
    }

    /// Origin subtracted from `timestamp_us` for a given window.
    pub fn origin_for(&self, records: &[EventRecord]) -> u64 {
        match self.timestamp_origin {
            TimestampOrigin::SequenceStart => records.first().map_or(0, |r| r.timestamp_us),
            TimestampOrigin::TraceStart => 0,
        }
    }
}

/// Named input configurations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoneCmp,
    Time,
    Call,
    Process,
    All,
}

impl Ablation {
    pub const GRID: [Ablation; 6] = [
        Ablation::None,
        Ablation::NoneCmp,
        Ablation::Time,
        Ablation::Call,
        Ablation::Process,
        Ablation::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoneCmp => "none_cmp",
            Ablation::Time => "time",
            Ablation::Call => "call",
            Ablation::Process => "process",
            Ablation::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::GRID
            .into_iter()
            .find(|a| a.name() == s || (s == "none-cmp" && *a == Ablation::NoneCmp))
            .ok_or_else(|| Error::config(format!("unknown ablation {s:?}")))
    }

    /// Representation for this ablation starting from `base` dimensions.
    /// The compensated baseline widens the call-name embedding to the
    /// all-arguments width.
    pub fn config_from(self, base: &RepresentationConfig) -> RepresentationConfig {
        let mut cfg = *base;
        cfg.groups = match self {
            Ablation::None | Ablation::NoneCmp => Groups::NONE,
            Ablation::Time => Groups::only(Group::Time),
            Ablation::Call => Groups::only(Group::Call),
            Ablation::Process => Groups::only(Group::Process),
            Ablation::All => Groups::ALL,
        };
        if self == Ablation::NoneCmp {
            let full = RepresentationConfig {
                groups: Groups::ALL,
                ..*base
            };
            cfg.d_sysname = full.total_dim();
        }
        cfg
    }

    pub fn config(self) -> RepresentationConfig {
        self.config_from(&RepresentationConfig::default())
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Embedding tables feeding [`represent`]. Tables of inactive groups may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTables {
    pub sysname: EmbeddingTable,
    /// Two rows: exit, entry.
    pub entry: Option<EmbeddingTable>,
    /// Three rows indexed by [`RetClass::index`].
    pub ret: Option<EmbeddingTable>,
    pub procname: Option<EmbeddingTable>,
}

impl RepresentationTables {
    pub fn random<R: Rng + ?Sized>(
        cfg: &RepresentationConfig,
        sys_vocab: usize,
        proc_vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let sysname = EmbeddingTable::random(sys_vocab, cfg.d_sysname, rng)?;
        let (entry, ret) = if cfg.groups.call {
            (
                Some(EmbeddingTable::random(2, cfg.d_sysname, rng)?),
                Some(EmbeddingTable::random(RetClass::ALL.len(), cfg.d_sysname, rng)?),
            )
        } else {
            (None, None)
        };
        let procname = if cfg.groups.process {
            Some(EmbeddingTable::random(proc_vocab, cfg.d_procname, rng)?)
        } else {
            None
        };
        Ok(RepresentationTables {
            sysname,
            entry,
            ret,
            procname,
        })
    }

    pub fn check(&self, cfg: &RepresentationConfig) -> Result<()> {
        let want = |t: &Option<EmbeddingTable>, name: &str, rows: Option<usize>, dim: usize| -> Result<()> {
            let t = t
                .as_ref()
                .ok_or_else(|| Error::Dimension(format!("missing {name} table")))?;
            if t.dim() != dim || rows.is_some_and(|r| r != t.vocab_size()) {
                return Err(Error::Dimension(format!(
                    "{name} table is {}x{}, expected {}x{dim}",
                    t.vocab_size(),
                    t.dim(),
                    rows.map_or("?".to_string(), |r| r.to_string())
                )));
            }
            Ok(())
        };
        if self.sysname.dim() != cfg.d_sysname {
            return Err(Error::Dimension(format!(
                "sysname table has dim {}, expected {}",
                self.sysname.dim(),
                cfg.d_sysname
            )));
        }
        if cfg.groups.call {
            want(&self.entry, "entry", Some(2), cfg.d_sysname)?;
            want(&self.ret, "ret", Some(RetClass::ALL.len()), cfg.d_sysname)?;
        }
        if cfg.groups.process {
            want(&self.procname, "procname", None, cfg.d_procname)?;
        }
        Ok(())
    }
}

/// Event vector of length `cfg.total_dim()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventVector {
    pub values: Vec<f64>,
}

/// Builds the representation of one event. `origin_us` is subtracted from
/// the event timestamp before encoding (see [`RepresentationConfig::origin_for`]).
pub fn represent(
    record: &EventRecord,
    origin_us: u64,
    cfg: &RepresentationConfig,
    tables: &RepresentationTables,
) -> Result<EventVector> {
    cfg.validate()?;
    tables.check(cfg)?;
    let mut values = Vec::with_capacity(cfg.total_dim());

    let mut call = embed(record.sysname_id as usize, &tables.sysname)?;
    if cfg.groups.call {
        let entry = tables.entry.as_ref().expect("checked").row(record.entry_index())?;
        let ret = tables.ret.as_ref().expect("checked").row(record.ret_class.index())?;
        for ((c, e), r) in call.iter_mut().zip(entry).zip(ret) {
            *c = *c + e + r;
        }
    }
    values.extend_from_slice(&call);

    if cfg.groups.process {
        let procname = tables.procname.as_ref().expect("checked");
        values.extend_from_slice(procname.row(record.procname_id as usize)?);
        values.extend(cfg.pid_encoder()?.encode(record.pid as f64));
        values.extend(cfg.tid_encoder()?.encode(record.tid as f64));
    }
    if cfg.groups.time {
        let t = record.timestamp_us.saturating_sub(origin_us) as f64;
        values.extend(cfg.timestamp_encoder()?.encode(t));
    }
    debug_assert_eq!(values.len(), cfg.total_dim());
    Ok(EventVector { values })
}

pub fn represent_sequence(
    seq: &Sequence,
    cfg: &RepresentationConfig,
    tables: &RepresentationTables,
) -> Result<Vec<EventVector>> {
    let origin = cfg.origin_for(seq.records());
    seq.records()
        .iter()
        .map(|r| represent(r, origin, cfg, tables))
        .collect()
}
