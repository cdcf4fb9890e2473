//! Decision-tree ensembles, grouped cross-validation and evaluation metrics.

mod cv;
mod forest;

pub use cv::{
    check_no_leakage, cross_validate, CvOptions, CvReport, FoldProvenance, FoldResult,
};
pub use forest::{
    feature_importance, fit_forest, predict, Forest, ForestParams, Node, Predictions, Tree,
    FOREST_FORMAT_VERSION,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UtsError};

pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(Vec<String>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes(_) => Task::Classify,
            Targets::Values(_) => Task::Regress,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(rows.iter().map(|&r| v[r].clone()).collect()),
            Targets::Values(v) => Targets::Values(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Feature matrix with targets, group ids and stable row ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedTable {
    pub feature_names: Vec<String>,
    /// Row-major `rows × features`.
    pub features: Vec<f64>,
    pub targets: Targets,
    pub groups: Vec<String>,
    pub row_ids: Vec<String>,
}

impl SupervisedTable {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.row_ids.len();
        if self.targets.len() != m || self.groups.len() != m {
            return Err(UtsError::Schema(format!(
                "{m} rows but {} targets and {} group ids",
                self.targets.len(),
                self.groups.len()
            )));
        }
        if self.features.len() != m * self.feature_names.len() {
            return Err(UtsError::Schema("feature matrix does not match the row count".into()));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.feature_names.len();
        &self.features[i * k..(i + 1) * k]
    }
}

/// Train and test row indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_groups: Vec<String>,
}

/// Assigns whole groups to folds, largest group first, each to the fold with
/// the fewest rows so far (ties to the lower fold).
pub fn group_kfold(groups: &[String], folds: usize) -> Result<Vec<Fold>> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if folds < 2 || members.len() < folds {
        return Err(UtsError::Grouping(format!(
            "{folds} folds need at least {folds} groups (found {}) and folds >= 2",
            members.len()
        )));
    }
    let mut by_size: Vec<(&str, Vec<usize>)> = members.into_iter().collect();
    by_size.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
    let mut assigned: Vec<Vec<(&str, Vec<usize>)>> = vec![Vec::new(); folds];
    let mut load = vec![0usize; folds];
    for (g, rows) in by_size {
        let f = (0..folds).min_by_key(|&f| (load[f], f)).unwrap();
        load[f] += rows.len();
        assigned[f].push((g, rows));
    }
    Ok(assigned
        .into_iter()
        .map(|parts| {
            let mut test: Vec<usize> = parts.iter().flat_map(|(_, r)| r.iter().copied()).collect();
            test.sort_unstable();
            let mut test_groups: Vec<String> = parts.iter().map(|(g, _)| g.to_string()).collect();
            test_groups.sort();
            let train = (0..groups.len()).filter(|i| test.binary_search(i).is_err()).collect();
            Fold {
                train,
                test,
                test_groups,
            }
        })
        .collect())
}

/// Mean per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(truth: &[String], pred: &[String]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(UtsError::Precondition("truth and predictions differ in length".into()));
    }
    if truth.is_empty() {
        return Err(UtsError::UndefinedStatistic("balanced accuracy of no rows".into()));
    }
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (t, p) in truth.iter().zip(pred) {
        let e = per.entry(t).or_default();
        e.0 += 1;
        if t == p {
            e.1 += 1;
        }
    }
    Ok(per.values().map(|&(n, hit)| hit as f64 / n as f64).sum::<f64>() / per.len() as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// `(R², Spearman ρ)`. Constant predictions have no rank association and
/// score ρ = 0.
pub fn regression_scores(truth: &[f64], pred: &[f64]) -> Result<(f64, f64)> {
    if truth.len() != pred.len() {
        return Err(UtsError::Precondition("truth and predictions differ in length".into()));
    }
    if truth.len() < 3 {
        return Err(UtsError::Precondition(format!(
            "regression scores need at least 3 rows (got {})",
            truth.len()
        )));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(UtsError::UndefinedStatistic("truth is constant".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    let rho = pearson(&average_ranks(truth), &average_ranks(pred)).unwrap_or(0.0);
    Ok((1.0 - ss_res / ss_tot, rho))
}
