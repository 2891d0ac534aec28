//! Binary embedding dumps and CSV/JSON reports.
//!
//! Dump layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `CLAB` |
//! | 1 | version, ASCII `1` |
//! | 8 | N as u64 |
//! | 8 | d as u64 |
//! | 1 | 1 if labels follow, else 0 |
//! | 8·N·d | row-major f64 |
//! | 4·N | u32 labels, only when flagged |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::Variant;
use crate::sphere::{norm, Matrix};
use crate::trainer::{Snapshot, SweepReport, Trajectory, TOP_NEGATIVES};

pub const MAGIC: &[u8; 4] = b"CLAB";
pub const VERSION: u8 = b'1';
const HEADER_LEN: usize = 4 + 1 + 8 + 8 + 1;
const NORM_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub embeddings: Matrix,
    pub labels: Option<Vec<u32>>,
}

impl EmbeddingDump {
    pub fn new(embeddings: Matrix, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != embeddings.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    embeddings.rows()
                )));
            }
        }
        Ok(Self { embeddings, labels })
    }
}

pub fn encode_dump(dump: &EmbeddingDump) -> Vec<u8> {
    let (n, d) = dump.embeddings.shape();
    let labels = dump.labels.as_deref();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * d + labels.map_or(0, |l| 4 * l.len()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(labels.is_some() as u8);
    for v in dump.embeddings.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in labels.into_iter().flatten() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, needed: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < needed {
            return Err(Error::TruncatedPayload {
                offset: self.pos,
                needed,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + needed];
        self.pos += needed;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_dump(bytes: &[u8]) -> Result<EmbeddingDump> {
    let head = &bytes[..bytes.len().min(4)];
    if head != &MAGIC[..head.len()] {
        return Err(Error::CorruptHeader(format!("bad magic {head:02x?}")));
    }
    let mut cur = Cursor { bytes, pos: 0 };
    cur.take(4)?;
    let version = cur.take(1)?[0];
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version as char));
    }
    let n = cur.u64()?;
    let d = cur.u64()?;
    let has_labels = match cur.take(1)?[0] {
        0 => false,
        1 => true,
        f => {
            return Err(Error::CorruptHeader(format!(
                "label flag must be 0 or 1, got {f}"
            )))
        }
    };
    let count = n
        .checked_mul(d)
        .and_then(|c| usize::try_from(c).ok())
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::CorruptHeader(format!("{n}×{d} does not fit in memory")))?;
    let (n, d) = (n as usize, d as usize);

    let data: Vec<f64> = cur
        .take(count * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if has_labels {
        let raw = cur.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::CorruptHeader("label count overflows".into()))?,
        )?;
        Some(
            raw.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after offset {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    let embeddings = Matrix::new(n, d, data)?;
    for (i, row) in embeddings.iter_rows().enumerate() {
        let r = norm(row);
        if (r - 1.0).abs() > NORM_WARN {
            log::warn!("row {i} has norm {r}, expected 1");
        }
    }
    Ok(EmbeddingDump { embeddings, labels })
}

pub fn write_dump(path: impl AsRef<Path>, dump: &EmbeddingDump) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dump(dump)).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<EmbeddingDump> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dump(&bytes)
}

/// One line of a trajectory or sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tau: f64,
    pub variant: Variant,
    pub alpha: f64,
    pub step: usize,
    pub mean_loss: f64,
    pub uniformity: f64,
    pub tolerance: f64,
    pub knn_purity: f64,
    pub mean_pos_sim: f64,
    pub top_neg_sim: Vec<f64>,
}

impl ReportRow {
    pub fn from_snapshot(tau: f64, variant: Variant, alpha: f64, s: &Snapshot) -> Self {
        Self {
            tau,
            variant,
            alpha,
            step: s.step,
            mean_loss: s.mean_loss,
            uniformity: s.uniformity,
            tolerance: s.tolerance,
            knn_purity: s.knn_purity,
            mean_pos_sim: s.mean_pos_sim,
            top_neg_sim: s.top_neg_sim.clone(),
        }
    }

    pub fn neg_uniformity(&self) -> f64 {
        -self.uniformity
    }
}

pub fn trajectory_rows(
    tau: f64,
    variant: Variant,
    alpha: f64,
    trajectory: &Trajectory,
) -> Vec<ReportRow> {
    trajectory
        .snapshots
        .iter()
        .map(|s| ReportRow::from_snapshot(tau, variant, alpha, s))
        .collect()
}

pub fn sweep_rows(report: &SweepReport) -> Vec<ReportRow> {
    report
        .entries
        .iter()
        .map(|e| ReportRow::from_snapshot(e.tau, e.variant, e.alpha, &e.snapshot))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format {s:?}, expected csv or json")),
        }
    }
}

/// Report column names in output order.
pub fn report_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "tau",
        "variant",
        "alpha",
        "step",
        "mean_loss",
        "uniformity",
        "neg_uniformity",
        "tolerance",
        "knn_purity",
        "mean_pos_sim",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=TOP_NEGATIVES).map(|k| format!("top{k}_neg_sim")));
    cols
}

/// 17 significant digits in scientific notation; the `Display` of `f64` never
/// uses locale separators.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn row_fields(row: &ReportRow) -> Result<Vec<String>> {
    if row.top_neg_sim.len() != TOP_NEGATIVES {
        return Err(Error::ShapeMismatch(format!(
            "report row has {} negative ranks, expected {TOP_NEGATIVES}",
            row.top_neg_sim.len()
        )));
    }
    let mut f = vec![
        format_float(row.tau),
        row.variant.to_string(),
        format_float(row.alpha),
        row.step.to_string(),
        format_float(row.mean_loss),
        format_float(row.uniformity),
        format_float(row.neg_uniformity()),
        format_float(row.tolerance),
        format_float(row.knn_purity),
        format_float(row.mean_pos_sim),
    ];
    f.extend(row.top_neg_sim.iter().map(|&v| format_float(v)));
    Ok(f)
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let mut out = report_columns().join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row_fields(row)?.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn render_json(rows: &[ReportRow]) -> Result<String> {
    let cols = report_columns();
    let mut out = String::from("[\n");
    for (r, row) in rows.iter().enumerate() {
        out.push_str("  {");
        for (c, (name, value)) in cols.iter().zip(row_fields(row)?).enumerate() {
            if c > 0 {
                out.push_str(", ");
            }
            if name == "variant" {
                write!(out, "\"{name}\": \"{value}\"").unwrap();
            } else if value.parse::<f64>().is_ok_and(|v| !v.is_finite()) {
                write!(out, "\"{name}\": null").unwrap();
            } else {
                write!(out, "\"{name}\": {value}").unwrap();
            }
        }
        out.push('}');
        if r + 1 < rows.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("]\n");
    Ok(out)
}

pub fn write_report(
    rows: &[ReportRow],
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("report has no rows".into()));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(rows)?,
        ReportFormat::Json => render_json(rows)?,
    };
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {name} value {raw:?}")))
}

fn row_from_lookup(get: impl Fn(&str) -> Result<String>) -> Result<ReportRow> {
    let f = |name: &str| -> Result<f64> { parse_field(name, &get(name)?) };
    Ok(ReportRow {
        tau: f("tau")?,
        variant: parse_field("variant", &get("variant")?)?,
        alpha: f("alpha")?,
        step: parse_field("step", &get("step")?)?,
        mean_loss: f("mean_loss")?,
        uniformity: f("uniformity")?,
        tolerance: f("tolerance")?,
        knn_purity: f("knn_purity")?,
        mean_pos_sim: f("mean_pos_sim")?,
        top_neg_sim: (1..=TOP_NEGATIVES)
            .map(|k| f(&format!("top{k}_neg_sim")))
            .collect::<Result<_>>()?,
    })
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header != report_columns() {
        return Err(Error::InvalidConfig("unexpected report header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::InvalidConfig(format!(
                    "report line has {} cells",
                    cells.len()
                )));
            }
            row_from_lookup(|name| {
                let i = header.iter().position(|h| *h == name).unwrap();
                Ok(cells[i].to_string())
            })
        })
        .collect()
}

pub fn parse_json(text: &str) -> Result<Vec<ReportRow>> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Array(items) = value else {
        return Err(Error::InvalidConfig("report must be a JSON array".into()));
    };
    items
        .iter()
        .map(|item| {
            row_from_lookup(|name| match item.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Number(n)) => Ok(n.to_string()),
                Some(Value::Null) => Ok("NaN".into()),
                _ => Err(Error::InvalidConfig(format!("report entry lacks {name}"))),
            })
        })
        .collect()
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        parse_json(&text)
    } else {
        parse_csv(&text)
    }
}
