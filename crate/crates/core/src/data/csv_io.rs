use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::Latents;
use super::{MultimodalDataset, Record};
use crate::error::{Error, Result};

/// Column layout of an embedding CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id_col: String,
    pub prefix_a: String,
    pub prefix_b: String,
    pub label_col: String,
    pub group_col: Option<String>,
    pub time_col: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id_col: "id".into(),
            prefix_a: "a_".into(),
            prefix_b: "b_".into(),
            label_col: "label".into(),
            group_col: Some("group".into()),
            time_col: Some("t".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub kept: usize,
    /// Rows without a label.
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

/// Columns `<prefix>0 .. <prefix>{p-1}` in index order.
fn feature_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(prefix) {
            if let Ok(k) = rest.parse::<usize>() {
                found.push((k, col));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!("no feature columns with prefix {prefix:?}")));
    }
    found.sort_unstable();
    for (expected, &(k, _)) in found.iter().enumerate() {
        if k != expected {
            return Err(Error::Data(format!("feature column {prefix}{expected} missing")));
        }
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data(format!("missing required column {name:?}")))
}

fn optional_column(headers: &csv::StringRecord, name: &Option<String>) -> Option<usize> {
    name.as_ref().and_then(|n| headers.iter().position(|h| h == n))
}

fn parse(cell: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: {what} {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

/// Reads an embedding CSV from any reader. Rows with a missing label are
/// dropped and counted.
pub fn read_embedding_csv<R: Read>(reader: R, schema: &Schema) -> Result<(MultimodalDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id = column(&headers, &schema.id_col)?;
    let label = column(&headers, &schema.label_col)?;
    let a_cols = feature_columns(&headers, &schema.prefix_a)?;
    let b_cols = feature_columns(&headers, &schema.prefix_b)?;
    let group = optional_column(&headers, &schema.group_col);
    let time = optional_column(&headers, &schema.time_col);
    let mut records = Vec::new();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let rid = row[id].to_string();
        if !seen.insert(rid.clone()) {
            return Err(Error::Data(format!("duplicate id {rid}")));
        }
        if is_missing(&row[label]) {
            report.dropped += 1;
            continue;
        }
        let feats = |cols: &[usize]| -> Result<Vec<f64>> {
            cols.iter().map(|&c| parse(&row[c], &headers[c], line)).collect()
        };
        let t = match time.map(|c| &row[c]) {
            Some(cell) if !is_missing(cell) => Some(
                cell.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::Data(format!("line {line}: time index {cell:?} is not an integer")))?,
            ),
            _ => None,
        };
        records.push(Record {
            id: rid,
            a: feats(&a_cols)?,
            b: feats(&b_cols)?,
            label: parse(&row[label], "label", line)?,
            group: group.map(|c| row[c].to_string()).filter(|g| !g.is_empty()),
            t,
        });
    }
    report.kept = records.len();
    if report.dropped > 0 {
        log::info!("dropped: {} unlabeled row(s)", report.dropped);
    }
    Ok((MultimodalDataset::new(records)?, report))
}

pub fn load_embedding_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(MultimodalDataset, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_embedding_csv(file, schema)
}

/// Writes the default-schema layout; `group` and `t` columns are emitted only
/// when some record carries them.
pub fn write_embedding_csv<W: Write>(writer: W, ds: &MultimodalDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_group = ds.records().iter().any(|r| r.group.is_some());
    let with_t = ds.records().iter().any(|r| r.t.is_some());
    let mut header = vec!["id".to_string()];
    header.extend((0..ds.dim_a()).map(|k| format!("a_{k}")));
    header.extend((0..ds.dim_b()).map(|k| format!("b_{k}")));
    header.push("label".into());
    if with_group {
        header.push("group".into());
    }
    if with_t {
        header.push("t".into());
    }
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![r.id.clone()];
        row.extend(r.a.iter().chain(&r.b).chain([&r.label]).map(|v| v.to_string()));
        if with_group {
            row.push(r.group.clone().unwrap_or_default());
        }
        if with_t {
            row.push(r.t.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Ground-truth latents sidecar: `id, s_*, ua_*, ub_*`.
pub fn write_latents_csv<W: Write>(writer: W, latents: &[Latents]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(first) = latents.first() {
        let mut header = vec!["id".to_string()];
        header.extend((0..first.s.len()).map(|k| format!("s_{k}")));
        header.extend((0..first.u_a.len()).map(|k| format!("ua_{k}")));
        header.extend((0..first.u_b.len()).map(|k| format!("ub_{k}")));
        w.write_record(&header)?;
    }
    for l in latents {
        let mut row = vec![l.id.clone()];
        row.extend(l.s.iter().chain(&l.u_a).chain(&l.u_b).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
