//! Babeltrace text parsing, fixed-length windowing and evaluation splits.
//!
//! Accepted line grammar:
//!
//! ```text
//! [H:M:S.nnnnnnnnn] (+d.ddddddddd) HOST EVENTNAME: { cpu_id = N }, { procname = "S", pid = N, tid = N }, { K = V, ... }
//! ```
//!
//! `EVENTNAME` is `syscall_entry_<name>` or `syscall_exit_<name>`. On exit
//! events the first `ret` key of the last group is the return value; every
//! other pair of that group lands in `extra_args`.

use std::fmt::Write as _;
use std::io::BufRead;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventRecord};

const ENTRY_PREFIX: &str = "syscall_entry_";
const EXIT_PREFIX: &str = "syscall_exit_";
const NS_PER_SEC: u64 = 1_000_000_000;

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            self.err(format!("expected {lit:?}"))
        }
    }

    /// Skips whitespace then expects `lit`.
    fn token(&mut self, lit: &str) -> Result<()> {
        self.skip_ws();
        self.expect(lit)
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let rest = self.rest();
        let end = rest.find(|c: char| !pred(c)).unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    fn digits(&mut self, what: &str) -> Result<&'a str> {
        let d = self.take_while(|c| c.is_ascii_digit());
        if d.is_empty() {
            return self.err(format!("expected digits for {what}"));
        }
        Ok(d)
    }

    fn unsigned<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        self.skip_ws();
        let start = self.pos;
        let d = self.digits(what)?;
        d.parse().map_err(|_| Error::Parse {
            offset: start,
            message: format!("{what} out of range"),
        })
    }

    fn signed(&mut self, what: &str) -> Result<i64> {
        self.skip_ws();
        let start = self.pos;
        let neg = self.rest().starts_with('-');
        if neg {
            self.pos += 1;
        }
        let d = self.digits(what)?;
        let text = if neg { &self.src[start..self.pos] } else { d };
        text.parse().map_err(|_| Error::Parse {
            offset: start,
            message: format!("{what} out of range"),
        })
    }

    fn ident(&mut self, what: &str) -> Result<&'a str> {
        self.skip_ws();
        let first_ok = self
            .peek()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        if !first_ok {
            return self.err(format!("expected identifier for {what}"));
        }
        Ok(self.take_while(|c| c.is_ascii_alphanumeric() || c == '_'))
    }

    fn quoted(&mut self) -> Result<String> {
        self.skip_ws();
        self.expect("\"")?;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '"')) => out.push('"'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 'r')) => out.push('\r'),
                    Some((_, 't')) => out.push('\t'),
                    _ => {
                        self.pos += i;
                        return self.err("invalid escape in string");
                    }
                },
                c => out.push(c),
            }
        }
        self.err("unterminated string")
    }

    /// A field value: quoted string or bare token up to `,` / `}`.
    fn value(&mut self) -> Result<String> {
        self.skip_ws();
        if self.peek() == Some('"') {
            return self.quoted();
        }
        let start = self.pos;
        let raw = self.take_while(|c| c != ',' && c != '}');
        let v = raw.trim_end();
        self.pos = start + v.len();
        if v.is_empty() {
            self.pos = start;
            return self.err("expected a value");
        }
        Ok(v.to_owned())
    }
}

/// Nanoseconds since midnight encoded by a `[H:M:S.nnnnnnnnn]` stamp at the
/// start of `line`.
pub fn parse_stamp(line: &str) -> Result<u64> {
    let mut c = Cursor::new(line);
    stamp(&mut c)
}

fn stamp(c: &mut Cursor<'_>) -> Result<u64> {
    c.expect("[")?;
    let h: u64 = c.unsigned("hours")?;
    c.expect(":")?;
    let m: u64 = c.unsigned("minutes")?;
    c.expect(":")?;
    let s: u64 = c.unsigned("seconds")?;
    c.expect(".")?;
    let frac_start = c.pos;
    let frac = c.digits("fraction")?;
    if frac.len() > 9 {
        c.pos = frac_start;
        return c.err("more than 9 fractional digits");
    }
    c.expect("]")?;
    if m >= 60 || s >= 60 {
        c.pos = 1;
        return c.err("minutes and seconds must be below 60");
    }
    let scale = 10u64.pow(9 - frac.len() as u32);
    let frac_ns: u64 = frac.parse::<u64>().unwrap_or(0) * scale;
    ((h * 60 + m) * 60 + s)
        .checked_mul(NS_PER_SEC)
        .and_then(|v| v.checked_add(frac_ns))
        .ok_or_else(|| Error::Parse {
            offset: 0,
            message: "timestamp overflow".into(),
        })
}

/// Parses one Babeltrace line. The wall-clock stamp becomes an offset from
/// `epoch_ns`, which must not lie after the stamp.
pub fn parse_line(line: &str, epoch_ns: u64) -> Result<Event> {
    let mut c = Cursor::new(line);
    let wall = stamp(&mut c)?;
    let timestamp_ns = wall.checked_sub(epoch_ns).ok_or(Error::Parse {
        offset: 0,
        message: format!("stamp {wall} precedes epoch {epoch_ns}"),
    })?;

    c.token("(+")?;
    c.digits("delta seconds")?;
    c.expect(".")?;
    c.digits("delta fraction")?;
    c.expect(")")?;

    c.skip_ws();
    let hostname = c.take_while(|ch| !ch.is_whitespace());
    if hostname.is_empty() {
        return c.err("expected hostname");
    }

    c.skip_ws();
    let name_start = c.pos;
    let name = c.take_while(|ch| ch != ':' && !ch.is_whitespace());
    let (sysname, entry) = if let Some(s) = name.strip_prefix(ENTRY_PREFIX) {
        (s, true)
    } else if let Some(s) = name.strip_prefix(EXIT_PREFIX) {
        (s, false)
    } else {
        c.pos = name_start;
        return c.err(format!("unrecognized event name {name:?}"));
    };
    if sysname.is_empty() {
        c.pos = name_start;
        return c.err("empty system call name");
    }
    c.expect(":")?;

    c.token("{")?;
    if c.ident("cpu_id")? != "cpu_id" {
        return c.err("expected cpu_id");
    }
    c.token("=")?;
    let cpu_id: u32 = c.unsigned("cpu_id")?;
    c.token("}")?;
    c.token(",")?;

    c.token("{")?;
    let k_start = c.pos;
    if c.ident("procname")? != "procname" {
        c.pos = k_start;
        return c.err("expected procname");
    }
    c.token("=")?;
    let procname = c.quoted()?;
    c.token(",")?;
    let mut ids = [0u32; 2];
    for (slot, key) in ids.iter_mut().zip(["pid", "tid"]) {
        let k_start = c.pos;
        if c.ident(key)? != key {
            c.pos = k_start;
            return c.err(format!("expected {key}"));
        }
        c.token("=")?;
        *slot = c.unsigned(key)?;
        if key == "pid" {
            c.token(",")?;
        }
    }
    c.token("}")?;
    c.token(",")?;

    c.token("{")?;
    let mut ret = None;
    let mut extra_args = IndexMap::new();
    c.skip_ws();
    if c.peek() != Some('}') {
        loop {
            let key = c.ident("field name")?.to_owned();
            c.token("=")?;
            if !entry && ret.is_none() && key == "ret" {
                ret = Some(c.signed("ret")?);
            } else {
                let v = c.value()?;
                extra_args.insert(key, v);
            }
            c.skip_ws();
            match c.peek() {
                Some(',') => c.pos += 1,
                Some('}') => break,
                _ => return c.err("expected ',' or '}'"),
            }
        }
    }
    c.token("}")?;
    c.skip_ws();
    if !c.rest().is_empty() {
        return c.err("trailing characters");
    }
    if !entry && ret.is_none() {
        return c.err("exit event without ret");
    }

    Ok(Event {
        timestamp_ns,
        hostname: hostname.to_owned(),
        cpu_id,
        procname,
        pid: ids[0],
        tid: ids[1],
        sysname: sysname.to_owned(),
        entry,
        ret,
        extra_args,
    })
}

fn push_quoted(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn is_bare(v: &str) -> bool {
    !v.is_empty()
        && v
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '+' | '-' | '/'))
}

fn push_clock(out: &mut String, ns: u64) {
    let secs = ns / NS_PER_SEC;
    let frac = ns % NS_PER_SEC;
    let _ = write!(
        out,
        "{:02}:{:02}:{:02}.{:09}",
        secs / 3600,
        (secs / 60) % 60,
        secs % 60,
        frac
    );
}

/// Renders an event in the grammar accepted by [`parse_line`]. `delta_ns` is
/// the gap to the previous event and is informational only.
pub fn format_line(event: &Event, epoch_ns: u64, delta_ns: u64) -> String {
    let mut out = String::with_capacity(160);
    out.push('[');
    push_clock(&mut out, epoch_ns + event.timestamp_ns);
    let _ = write!(
        out,
        "] (+{}.{:09}) {} {}{}: {{ cpu_id = {} }}, {{ procname = ",
        delta_ns / NS_PER_SEC,
        delta_ns % NS_PER_SEC,
        event.hostname,
        if event.entry { ENTRY_PREFIX } else { EXIT_PREFIX },
        event.sysname,
        event.cpu_id,
    );
    push_quoted(&mut out, &event.procname);
    let _ = write!(out, ", pid = {}, tid = {} }}, {{", event.pid, event.tid);
    let mut first = true;
    if let (false, Some(r)) = (event.entry, event.ret) {
        let _ = write!(out, " ret = {r}");
        first = false;
    }
    for (k, v) in &event.extra_args {
        out.push_str(if first { " " } else { ", " });
        first = false;
        out.push_str(k);
        out.push_str(" = ");
        if is_bare(v) {
            out.push_str(v);
        } else {
            push_quoted(&mut out, v);
        }
    }
    out.push_str(" }");
    out
}

/// Formats a whole trace, one line per event, relative to `epoch_ns`.
pub fn format_trace<'a, I>(events: I, epoch_ns: u64) -> String
where
    I: IntoIterator<Item = &'a Event>,
{
    let mut out = String::new();
    let mut prev = None;
    for e in events {
        let delta = prev.map_or(0, |p: u64| e.timestamp_ns.saturating_sub(p));
        out.push_str(&format_line(e, epoch_ns, delta));
        out.push('\n');
        prev = Some(e.timestamp_ns);
    }
    out
}

/// Reads a Babeltrace text trace; the first line's stamp is the epoch.
pub fn read_babeltrace<R: BufRead>(r: R) -> Result<Vec<Event>> {
    let mut epoch = None;
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |e| Error::AtLine {
            line: i + 1,
            source: Box::new(e),
        };
        let epoch_ns = match epoch {
            Some(e) => e,
            None => {
                let e = parse_stamp(&line).map_err(at_line)?;
                epoch = Some(e);
                e
            }
        };
        events.push(parse_line(&line, epoch_ns).map_err(at_line)?);
    }
    Ok(events)
}

/// Fixed-length slice of a record stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    records: Vec<EventRecord>,
}

impl Sequence {
    pub fn new(records: Vec<EventRecord>) -> Self {
        Sequence { records }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_time_ordered(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].timestamp_us <= w[1].timestamp_us)
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }
}

pub const DEFAULT_WINDOW_LEN: usize = 256;

/// Cuts a stream into consecutive non-overlapping chunks of exactly
/// `window_len` items; a trailing partial chunk is dropped.
pub fn chunk_exact<T, I>(items: I, window_len: usize) -> Result<Vec<Vec<T>>>
where
    I: IntoIterator<Item = T>,
{
    if window_len < 2 {
        return Err(Error::config(format!(
            "window length must be at least 2, got {window_len}"
        )));
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(window_len);
    for item in items {
        cur.push(item);
        if cur.len() == window_len {
            out.push(std::mem::replace(&mut cur, Vec::with_capacity(window_len)));
        }
    }
    Ok(out)
}

pub fn window<I>(records: I, window_len: usize) -> Result<Vec<Sequence>>
where
    I: IntoIterator<Item = EventRecord>,
{
    Ok(chunk_exact(records, window_len)?
        .into_iter()
        .map(Sequence::new)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            valid_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::config(format!(
                "valid_fraction must lie strictly between 0 and 1, got {}",
                self.valid_fraction
            )));
        }
        Ok(())
    }

    /// Size of the validation part for `n` items, kept within `1..n`.
    pub fn valid_count(&self, n: usize) -> usize {
        let k = (self.valid_fraction * n as f64).round() as usize;
        k.clamp(1, n.saturating_sub(1))
    }
}

/// Randomly partitions `items` into (evaluation, validation). Both parts
/// keep the input order.
pub fn split<T>(items: Vec<T>, spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    spec.validate()?;
    let n = items.len();
    if n < 4 {
        return Err(Error::config(format!(
            "need at least 4 sequences to split, got {n}"
        )));
    }
    let k = spec.valid_count(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_valid = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        is_valid[i] = true;
    }
    let mut eval = Vec::with_capacity(n - k);
    let mut valid = Vec::with_capacity(k);
    for (item, v) in items.into_iter().zip(is_valid) {
        if v {
            valid.push(item);
        } else {
            eval.push(item);
        }
    }
    Ok((eval, valid))
}
