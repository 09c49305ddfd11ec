//! Windowed, integer-coded datasets and their on-disk form.
//!
//! A dataset file is JSONL: a header line carrying the vocabularies and
//! window length, then one line per sequence holding one
//! `[sysname_id, entry, ret_class, procname_id, pid, tid, timestamp_us]`
//! array per event.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{build_vocab, encode_event, vocab_from_counts, Event, EventRecord, RetClass, Vocab};
use crate::ingest::{split, window, Sequence, SplitSpec};
use crate::synth::{Generator, WorkloadConfig};

pub const DATASET_FORMAT: &str = "sysarg-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub sys_vocab: Vocab,
    pub proc_vocab: Vocab,
    pub window_len: usize,
    pub sequences: Vec<Sequence>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    window_len: usize,
    sequences: usize,
    sys_vocab: Vocab,
    proc_vocab: Vocab,
}

type Row = (u32, u8, u8, u32, u32, u32, u64);

fn to_row(r: &EventRecord) -> Row {
    (
        r.sysname_id,
        u8::from(r.entry),
        r.ret_class.index() as u8,
        r.procname_id,
        r.pid,
        r.tid,
        r.timestamp_us,
    )
}

fn from_row(row: Row) -> Result<EventRecord> {
    let ret_class = *RetClass::ALL
        .get(row.2 as usize)
        .ok_or_else(|| Error::InvalidEvent(format!("ret class {} out of range", row.2)))?;
    if row.1 > 1 {
        return Err(Error::InvalidEvent(format!("entry flag {} is not 0 or 1", row.1)));
    }
    Ok(EventRecord {
        sysname_id: row.0,
        entry: row.1 == 1,
        ret_class,
        procname_id: row.3,
        pid: row.4,
        tid: row.5,
        timestamp_us: row.6,
    })
}

impl Dataset {
    /// Encodes events with existing vocabularies and windows the result.
    pub fn encode<'a, I>(events: I, sys_vocab: Vocab, proc_vocab: Vocab, window_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Event>,
    {
        let records = events.into_iter().map(|e| encode_event(e, &sys_vocab, &proc_vocab));
        let sequences = window(records, window_len)?;
        Ok(Dataset {
            sys_vocab,
            proc_vocab,
            window_len,
            sequences,
        })
    }

    /// Builds both vocabularies from `events`, then encodes and windows them.
    pub fn from_events(events: &[Event], min_count: usize, window_len: usize) -> Result<Self> {
        let sys = build_vocab(events.iter().map(|e| e.sysname.as_str()), min_count)?;
        let proc = build_vocab(events.iter().map(|e| e.procname.as_str()), min_count)?;
        Self::encode(events, sys, proc, window_len)
    }

    /// Streams a synthetic workload twice (vocabulary pass, then encoding
    /// pass) so the raw events are never held in memory.
    pub fn synthesize(cfg: &WorkloadConfig, min_count: usize, window_len: usize) -> Result<Self> {
        let mut sys_counts = HashMap::<String, usize>::new();
        let mut proc_counts = HashMap::<String, usize>::new();
        for e in Generator::new(cfg.clone())? {
            *sys_counts.entry(e.sysname).or_default() += 1;
            *proc_counts.entry(e.procname).or_default() += 1;
        }
        let sys_vocab = vocab_from_counts(sys_counts, min_count)?;
        let proc_vocab = vocab_from_counts(proc_counts, min_count)?;
        let records = Generator::new(cfg.clone())?.map(|e| encode_event(&e, &sys_vocab, &proc_vocab));
        let sequences = window(records, window_len)?;
        Ok(Dataset {
            sys_vocab,
            proc_vocab,
            window_len,
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// (evaluation, validation) partition of the sequences.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
        split(self.sequences.clone(), spec)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            window_len: self.window_len,
            sequences: self.sequences.len(),
            sys_vocab: self.sys_vocab.clone(),
            proc_vocab: self.proc_vocab.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.sequences {
            let rows: Vec<Row> = s.records().iter().map(to_row).collect();
            serde_json::to_writer(&mut w, &rows)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Empty("dataset file is empty".into()))??;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::Jsonl {
            line: 1,
            message: e.to_string(),
            text: first.chars().take(80).collect(),
        })?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::config(format!(
                "unsupported dataset format {:?} version {}",
                header.format, header.version
            )));
        }
        let mut sequences = Vec::with_capacity(header.sequences);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: Error| Error::AtLine {
                line: i + 2,
                source: Box::new(e),
            };
            let rows: Vec<Row> = serde_json::from_str(&line).map_err(|e| at(e.into()))?;
            if rows.len() != header.window_len {
                return Err(at(Error::Dimension(format!(
                    "sequence has {} events, header says {}",
                    rows.len(),
                    header.window_len
                ))));
            }
            let records = rows.into_iter().map(from_row).collect::<Result<Vec<_>>>().map_err(at)?;
            sequences.push(Sequence::new(records));
        }
        if sequences.len() != header.sequences {
            return Err(Error::Dimension(format!(
                "header announces {} sequences, found {}",
                header.sequences,
                sequences.len()
            )));
        }
        Ok(Dataset {
            sys_vocab: header.sys_vocab,
            proc_vocab: header.proc_vocab,
            window_len: header.window_len,
            sequences,
        })
    }
}
