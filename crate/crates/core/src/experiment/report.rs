use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;

/// Tabular result with a reproducibility header, rendered both as aligned
/// text and as JSONL records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub title: String,
    /// Resolved configuration and seeds the report was produced with.
    pub header: Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub records: Vec<Value>,
    pub notes: Vec<String>,
    /// Whether any run behind the report failed.
    pub failed: bool,
}

impl Report {
    pub fn new(title: impl Into<String>, header: Value, columns: Vec<String>) -> Self {
        Report {
            title: title.into(),
            header,
            columns,
            rows: Vec::new(),
            records: Vec::new(),
            notes: Vec::new(),
            failed: false,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n# config: {}\n", self.title, self.header);
        let ncol = self.columns.len();
        let mut widths: Vec<usize> = self.columns.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let padded: Vec<String> = (0..ncol)
                .map(|i| {
                    let c = cells.get(i).map_or("", String::as_str);
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(&self.columns));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &self.rows {
            let _ = writeln!(out, "{}", line(row));
        }
        for note in &self.notes {
            let _ = writeln!(out, "# {note}");
        }
        if self.failed {
            out.push_str("# status: FAILED (see records)\n");
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let head = json!({
            "kind": "header",
            "title": self.title,
            "config": self.header,
            "notes": self.notes,
            "failed": self.failed,
        });
        let _ = writeln!(out, "{head}");
        for r in &self.records {
            let _ = writeln!(out, "{r}");
        }
        out
    }

    /// Writes `<dir>/<stem>.txt` and `<dir>/<stem>.jsonl`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let txt = dir.join(format!("{stem}.txt"));
        let jsonl = dir.join(format!("{stem}.jsonl"));
        fs::write(&txt, self.to_text())?;
        fs::write(&jsonl, self.to_jsonl())?;
        Ok((txt, jsonl))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Linear-interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_text() {
        let mut r = Report::new("t", json!({"seed": 1}), vec!["name".into(), "value".into()]);
        r.rows.push(vec!["a".into(), "1.5".into()]);
        r.rows.push(vec!["longer".into(), "10.25".into()]);
        r.notes.push("note".into());
        let text = r.to_text();
        assert_eq!(
            text,
            "# t\n# config: {\"seed\":1}\nname    value\n------  -----\na         1.5\nlonger  10.25\n# note\n"
        );
    }

    #[test]
    fn jsonl_has_header_first() {
        let mut r = Report::new("t", json!({}), vec![]);
        r.records.push(json!({"x": 1}));
        let lines: Vec<Value> = r.to_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["kind"], "header");
        assert_eq!(lines[1]["x"], 1);
    }

    #[test]
    fn stats_helpers() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
