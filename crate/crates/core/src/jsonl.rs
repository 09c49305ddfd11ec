//! Canonical line-delimited JSON interchange for [`Event`]s.
//!
//! One object per line with keys `ts_ns, host, cpu, procname, pid, tid,
//! sysname, entry, ret, args`; `ret` is `null` on entry events and `args`
//! keeps insertion order.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::event::Event;

pub fn write_event<W: Write>(mut w: W, event: &Event) -> Result<()> {
    serde_json::to_writer(&mut w, event)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_jsonl<'a, W, I>(mut w: W, events: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Event>,
{
    for e in events {
        write_event(&mut w, e)?;
    }
    w.flush()?;
    Ok(())
}

/// Decodes one line; `line_no` is 1-based and only used for error reporting.
pub fn parse_jsonl_line(line: &str, line_no: usize) -> Result<Event> {
    let event: Event = serde_json::from_str(line).map_err(|e| Error::Jsonl {
        line: line_no,
        message: e.to_string(),
        text: line.to_owned(),
    })?;
    event.validate().map_err(|e| Error::Jsonl {
        line: line_no,
        message: e.to_string(),
        text: line.to_owned(),
    })?;
    Ok(event)
}

/// Streaming reader over a canonical JSONL source. Blank lines are skipped.
pub struct JsonlReader<R> {
    inner: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(inner: R) -> Self {
        JsonlReader {
            inner,
            line_no: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_jsonl_line(line, self.line_no));
        }
    }
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Event>> {
    JsonlReader::new(r).collect()
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;

    use super::*;

    fn sample() -> Vec<Event> {
        let mut args = IndexMap::new();
        args.insert("fd".to_string(), "3".to_string());
        args.insert("count".to_string(), "4096".to_string());
        vec![
            Event {
                timestamp_ns: 0,
                hostname: "web1".into(),
                cpu_id: 1,
                procname: "apache2".into(),
                pid: 10,
                tid: 11,
                sysname: "read".into(),
                entry: true,
                ret: None,
                extra_args: args,
            },
            Event {
                timestamp_ns: 1500,
                hostname: "web1".into(),
                cpu_id: 1,
                procname: "apache2".into(),
                pid: 10,
                tid: 11,
                sysname: "read".into(),
                entry: false,
                ret: Some(-11),
                extra_args: IndexMap::new(),
            },
            Event {
                timestamp_ns: 2000,
                hostname: "web1".into(),
                cpu_id: 0,
                procname: "mysqld".into(),
                pid: 20,
                tid: 20,
                sysname: "futex".into(),
                entry: true,
                ret: None,
                extra_args: IndexMap::new(),
            },
        ]
    }

    #[test]
    fn round_trip_preserves_events() {
        let events = sample();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &events).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, events);
        assert_eq!(back[0].extra_args.keys().collect::<Vec<_>>(), ["fd", "count"]);
        assert!(back[1].extra_args.is_empty());
    }

    #[test]
    fn canonical_key_order() {
        let mut buf = Vec::new();
        write_event(&mut buf, &sample()[1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "{\"ts_ns\":1500,\"host\":\"web1\",\"cpu\":1,\"procname\":\"apache2\",\"pid\":10,\
             \"tid\":11,\"sysname\":\"read\",\"entry\":false,\"ret\":-11,\"args\":{}}\n"
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &sample()).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("\n\n\nnot json\n");
        let err = read_jsonl(text.as_bytes()).unwrap_err();
        match err {
            Error::Jsonl { line, text, .. } => {
                assert_eq!(line, 7);
                assert_eq!(text, "not json");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let line = r#"{"ts_ns":1,"host":"h","cpu":0,"procname":"p","pid":1,"tid":1,"sysname":"read","entry":false,"ret":null,"args":{}}"#;
        assert!(matches!(parse_jsonl_line(line, 3), Err(Error::Jsonl { line: 3, .. })));
    }
}
