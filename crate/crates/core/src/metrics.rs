//! Evaluation metrics and per-group breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Row-sum tolerance for probability inputs.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// `counts[t][p]`: samples with target `t` predicted as `p`.
pub fn confusion_counts(preds: &[usize], targets: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != targets.len() {
        return Err(Error::shape(
            "confusion_counts",
            format!("{} predictions for {} targets", preds.len(), targets.len()),
        ));
    }
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(targets) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Data(format!(
                "class id {} outside {n_classes} classes",
                p.max(t)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let c = scores.shape().last().copied().unwrap_or(1);
    scores
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    /// Macro one-vs-rest AUC; absent when every class is degenerate or no
    /// scores were supplied.
    pub auc_macro: Option<f64>,
    /// Classes of the label space, in the order of `f1_per_class`.
    pub labels: Vec<usize>,
    pub f1_per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy and F1 from hard predictions.
///
/// `n_classes` declares the label space; classes absent from both
/// predictions and targets then score F1 = 0. With `None` the label space is
/// the set of classes that occur.
pub fn classification_from_labels(
    preds: &[usize],
    targets: &[usize],
    n_classes: Option<usize>,
) -> Result<ClassificationReport> {
    if targets.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let observed = preds.iter().chain(targets).max().copied().unwrap_or(0) + 1;
    let c = n_classes.unwrap_or(observed);
    let confusion = confusion_counts(preds, targets, c)?;
    let labels: Vec<usize> = match n_classes {
        Some(_) => (0..c).collect(),
        None => (0..c)
            .filter(|&k| confusion[k].iter().sum::<usize>() > 0 || confusion.iter().any(|r| r[k] > 0))
            .collect(),
    };
    let n = targets.len() as f64;
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let mut f1s = Vec::with_capacity(labels.len());
    let mut weighted = 0.0;
    for &k in &labels {
        let tp = confusion[k][k] as f64;
        let support: usize = confusion[k].iter().sum();
        let predicted: usize = confusion.iter().map(|r| r[k]).sum();
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        weighted += f1 * support as f64 / n;
        f1s.push(f1);
    }
    Ok(ClassificationReport {
        accuracy: correct as f64 / n,
        f1_macro: f1s.iter().sum::<f64>() / f1s.len() as f64,
        f1_weighted: weighted,
        auc_macro: None,
        labels,
        f1_per_class: f1s,
        confusion,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn check_probabilities(probs: &Tensor, n: usize) -> Result<usize> {
    if probs.rank() != 2 || probs.shape()[0] != n {
        return Err(Error::shape(
            "classification_report",
            format!("probabilities {:?} for {n} targets", probs.shape()),
        ));
    }
    let c = probs.shape()[1];
    for (i, row) in probs.data().chunks(c).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Data(format!("probability row {i} sums to {s}")));
        }
    }
    Ok(c)
}

/// Argmax predictions, F1 scores and macro AUC over the `C` columns of
/// `probs`, which declare the label space.
pub fn classification_report(probs: &Tensor, targets: &[usize]) -> Result<ClassificationReport> {
    let c = check_probabilities(probs, targets.len())?;
    let mut report = classification_from_labels(&argmax_rows(probs), targets, Some(c))?;
    report.auc_macro = match auc_macro(probs, targets) {
        Ok(a) => Some(a.auc_macro),
        Err(Error::Data(msg)) => {
            log::warn!("AUC unavailable: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(report)
}

/// ROC AUC of `scores` for binary `positive` labels via average ranks, with
/// ties counted one half. `None` when either class is empty.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        rank_sum += avg * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc_macro: f64,
    /// One-vs-rest AUC per class; `None` for skipped classes.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Macro average of one-vs-rest AUCs; classes without both positives and
/// negatives are skipped and listed.
pub fn auc_macro(scores: &Tensor, targets: &[usize]) -> Result<AucReport> {
    if scores.rank() != 2 || scores.shape()[0] != targets.len() {
        return Err(Error::shape(
            "auc_macro",
            format!("scores {:?} for {} targets", scores.shape(), targets.len()),
        ));
    }
    let c = scores.shape()[1];
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Data(format!("class id {t} outside {c} classes")));
    }
    let mut per_class = Vec::with_capacity(c);
    let mut skipped = Vec::new();
    for k in 0..c {
        let col: Vec<f64> = (0..targets.len()).map(|i| scores.at(&[i, k])).collect();
        let pos: Vec<bool> = targets.iter().map(|&t| t == k).collect();
        let auc = auc_binary(&col, &pos);
        if auc.is_none() {
            skipped.push(k);
        }
        per_class.push(auc);
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::Data("every class lacks positives or negatives".into()));
    }
    if !skipped.is_empty() {
        log::warn!("AUC skipped degenerate classes {skipped:?}");
    }
    Ok(AucReport {
        auc_macro: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Symmetric MAPE on the 0 to 200 scale.
    pub smape: f64,
    /// `None` when the targets are constant.
    pub r2: Option<f64>,
}

/// `1 − SS_res / SS_tot`; errors when the targets are constant.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pairs(pred, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Data("R² undefined for constant targets".into()));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Symmetric mean absolute percentage error; terms with `A = F = 0` count 0.
pub fn smape(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pairs(pred, target)?;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(f, a)| ratio((f - a).abs(), (a.abs() + f.abs()) / 2.0))
        .sum();
    Ok(100.0 * total / pred.len() as f64)
}

fn check_pairs(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "regression_report",
            format!("{} predictions for {} targets", pred.len(), target.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    Ok(())
}

pub fn regression_report(pred: &[f64], target: &[f64]) -> Result<RegressionReport> {
    check_pairs(pred, target)?;
    let n = pred.len() as f64;
    let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let r2 = match r2_score(pred, target) {
        Ok(v) => Some(v),
        Err(Error::Data(msg)) => {
            log::warn!("{msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(RegressionReport {
        mae,
        mse,
        rmse: mse.sqrt(),
        smape: smape(pred, target)?,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Metrics {
    Classification(ClassificationReport),
    Regression(RegressionReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub per_group: BTreeMap<String, MetricsReport>,
    /// Largest pairwise difference across groups, per scalar metric.
    pub max_gap: BTreeMap<String, f64>,
    /// Groups with fewer than two samples.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub groups: Option<GroupBreakdown>,
}

impl MetricsReport {
    /// Named scalar metrics, for aggregation across seeds and groups.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        match &self.metrics {
            Metrics::Classification(c) => {
                out.insert("accuracy".into(), c.accuracy);
                out.insert("f1_macro".into(), c.f1_macro);
                out.insert("f1_weighted".into(), c.f1_weighted);
                if let Some(a) = c.auc_macro {
                    out.insert("auc_macro".into(), a);
                }
            }
            Metrics::Regression(r) => {
                out.insert("mae".into(), r.mae);
                out.insert("mse".into(), r.mse);
                out.insert("rmse".into(), r.rmse);
                out.insert("smape".into(), r.smape);
                if let Some(v) = r.r2 {
                    out.insert("r2".into(), v);
                }
            }
        }
        out
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.scalars().get(metric).copied()
    }
}

/// Model outputs paired with targets.
#[derive(Debug, Clone, Copy)]
pub enum Outputs<'a> {
    Classes { probs: &'a Tensor, targets: &'a [usize] },
    Values { pred: &'a [f64], targets: &'a [f64] },
}

impl Outputs<'_> {
    pub fn len(&self) -> usize {
        match self {
            Outputs::Classes { targets, .. } => targets.len(),
            Outputs::Values { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn report(&self) -> Result<MetricsReport> {
        let metrics = match self {
            Outputs::Classes { probs, targets } => Metrics::Classification(classification_report(probs, targets)?),
            Outputs::Values { pred, targets } => Metrics::Regression(regression_report(pred, targets)?),
        };
        Ok(MetricsReport {
            n: self.len(),
            metrics,
            groups: None,
        })
    }

    fn subset(&self, idx: &[usize]) -> Result<MetricsReport> {
        match self {
            Outputs::Classes { probs, targets } => {
                let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
                Outputs::Classes {
                    probs: &probs.select_rows(idx),
                    targets: &t,
                }
                .report()
            }
            Outputs::Values { pred, targets } => {
                let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
                let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
                Outputs::Values { pred: &p, targets: &t }.report()
            }
        }
    }
}

/// Overall report plus one sub-report per group and the max gap per metric.
pub fn group_report(outputs: &Outputs, groups: &[String]) -> Result<MetricsReport> {
    if groups.len() != outputs.len() {
        return Err(Error::shape(
            "group_report",
            format!("{} group ids for {} samples", groups.len(), outputs.len()),
        ));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let mut per_group = BTreeMap::new();
    let mut skipped = Vec::new();
    for (g, idx) in members {
        if idx.len() < 2 {
            log::warn!("group {g:?} has {} sample(s); skipped", idx.len());
            skipped.push(g.to_string());
            continue;
        }
        per_group.insert(g.to_string(), outputs.subset(&idx)?);
    }
    let mut extremes: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in per_group.values() {
        for (k, v) in r.scalars() {
            let e = extremes.entry(k).or_insert((v, v));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    }
    let mut report = outputs.report()?;
    report.groups = Some(GroupBreakdown {
        per_group,
        max_gap: extremes.into_iter().map(|(k, (lo, hi))| (k, hi - lo)).collect(),
        skipped,
    });
    Ok(report)
}
