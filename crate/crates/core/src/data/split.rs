use std::collections::BTreeMap;

use super::MultimodalDataset;
use crate::error::{Error, Result};
use crate::numerics::Rng;

fn check_frac(frac: f64) -> Result<()> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {frac}")));
    }
    Ok(())
}

fn take(ds: &MultimodalDataset, mut train: Vec<usize>, mut test: Vec<usize>) -> (MultimodalDataset, MultimodalDataset) {
    train.sort_unstable();
    test.sort_unstable();
    (ds.subset(&train), ds.subset(&test))
}

/// Per-class random split keeping `round(frac · n_c)` of each class in train.
/// Both parts keep the original record order.
pub fn split_random_stratified(
    ds: &MultimodalDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(MultimodalDataset, MultimodalDataset)> {
    check_frac(train_frac)?;
    let classes = ds.classes()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in classes.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = Rng::new(seed).derive("split-stratified");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::Data(format!("class {c} has a single sample; cannot stratify")));
        }
        rng.shuffle(&mut idx);
        let k = ((train_frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    Ok(take(ds, train, test))
}

/// Unstratified random split, for real-valued labels.
pub fn split_random(
    ds: &MultimodalDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(MultimodalDataset, MultimodalDataset)> {
    check_frac(train_frac)?;
    if ds.len() < 2 {
        return Err(Error::Data("need at least two records to split".into()));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    Rng::new(seed).derive("split-random").shuffle(&mut idx);
    let k = ((train_frac * ds.len() as f64).round() as usize).clamp(1, ds.len() - 1);
    Ok(take(ds, idx[..k].to_vec(), idx[k..].to_vec()))
}

/// Per-series chronological split: the first `round(frac · len)` time steps
/// of each series (keyed by `group`) go to train. Output is ordered by
/// series, then time.
pub fn split_chronological(ds: &MultimodalDataset, train_frac: f64) -> Result<(MultimodalDataset, MultimodalDataset)> {
    check_frac(train_frac)?;
    let mut series: BTreeMap<Option<&str>, Vec<(i64, usize)>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        let t = r
            .t
            .ok_or_else(|| Error::Data(format!("record {} has no time index", r.id)))?;
        series.entry(r.group.as_deref()).or_default().push((t, i));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (g, mut steps) in series {
        steps.sort_unstable();
        if let Some(w) = steps.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!("series {g:?} repeats time index {}", w[0].0)));
        }
        let k = (train_frac * steps.len() as f64).round() as usize;
        train.extend(steps[..k].iter().map(|&(_, i)| i));
        test.extend(steps[k..].iter().map(|&(_, i)| i));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}
