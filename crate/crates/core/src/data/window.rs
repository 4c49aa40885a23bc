use std::collections::BTreeMap;

use super::{MultimodalDataset, Record};
use crate::error::{Error, Result};

/// Supervised pairs from one ordered series: pair `k` holds the features of
/// steps `k .. k+w` (concatenated in time order) and the label of step `k+w`.
pub fn sliding_window(series: &[Record], w: usize) -> Result<Vec<Record>> {
    if w == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if series.len() <= w {
        return Err(Error::Data(format!(
            "series of length {} too short for window {w}",
            series.len()
        )));
    }
    Ok((0..series.len() - w)
        .map(|k| {
            let past = &series[k..k + w];
            let target = &series[k + w];
            Record {
                id: format!("{}<w{w}", target.id),
                a: past.iter().flat_map(|r| r.a.iter().copied()).collect(),
                b: past.iter().flat_map(|r| r.b.iter().copied()).collect(),
                label: target.label,
                group: target.group.clone(),
                t: target.t,
            }
        })
        .collect())
}

/// Windows every series of `ds` separately; series shorter than `w + 1` are
/// skipped with a warning.
pub fn windowed(ds: &MultimodalDataset, w: usize) -> Result<MultimodalDataset> {
    let mut series: BTreeMap<Option<String>, Vec<Record>> = BTreeMap::new();
    for r in ds.records() {
        if r.t.is_none() {
            return Err(Error::Data(format!("record {} has no time index", r.id)));
        }
        series.entry(r.group.clone()).or_default().push(r.clone());
    }
    let mut out = Vec::new();
    for (g, mut recs) in series {
        recs.sort_by_key(|r| r.t);
        if recs.len() <= w {
            log::warn!("series {g:?} has {} steps; too short for window {w}", recs.len());
            continue;
        }
        out.extend(sliding_window(&recs, w)?);
    }
    MultimodalDataset::new(out)
}

/// Fills absent time indices between the first and last step of each series
/// with zero features and a zero label.
pub fn dense_reindex(ds: &MultimodalDataset) -> Result<MultimodalDataset> {
    let (da, db) = (ds.dim_a(), ds.dim_b());
    let mut series: BTreeMap<Option<String>, BTreeMap<i64, Record>> = BTreeMap::new();
    for r in ds.records() {
        let t = r
            .t
            .ok_or_else(|| Error::Data(format!("record {} has no time index", r.id)))?;
        series.entry(r.group.clone()).or_default().insert(t, r.clone());
    }
    let mut out = Vec::new();
    for (g, steps) in series {
        let (lo, hi) = match (steps.keys().next(), steps.keys().next_back()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => continue,
        };
        for t in lo..=hi {
            out.push(steps.get(&t).cloned().unwrap_or_else(|| Record {
                id: format!("{}@{t}", g.as_deref().unwrap_or("")),
                a: vec![0.0; da],
                b: vec![0.0; db],
                label: 0.0,
                group: g.clone(),
                t: Some(t),
            }));
        }
    }
    MultimodalDataset::new(out)
}
