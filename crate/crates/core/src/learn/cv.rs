use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    balanced_accuracy, fit_forest, group_kfold, predict, regression_scores, ForestParams,
    Predictions, SupervisedTable, Targets, Task, DEFAULT_FOLDS,
};
use crate::error::{Result, UtsError};
use crate::retrieval::ZParams;
use crate::signature::{apply_normalization, fit_normalization, pca_reduce, PcaTarget, SignatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub folds: usize,
    pub forest: ForestParams,
    /// Project normalized signatures onto principal axes fitted per fold.
    pub reduce: Option<PcaTarget>,
    /// Use only these components as features.
    pub features: Option<Vec<String>>,
    /// Z-score regression targets within each group.
    pub znormalize_targets: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            forest: ForestParams::default(),
            reduce: None,
            features: None,
            znormalize_targets: true,
        }
    }
}

/// Which input rows each fitted preprocessing step saw in one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldProvenance {
    pub fold: usize,
    pub test_rows: Vec<usize>,
    pub normalization_rows: Vec<usize>,
    pub pca_rows: Vec<usize>,
    /// Rows whose targets set the z-score parameters used for training.
    pub target_z_rows: Vec<usize>,
    pub forest_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_groups: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub task: Task,
    pub folds: Vec<FoldResult>,
    pub mean: IndexMap<String, f64>,
    /// Sample standard deviation across folds.
    pub sd: IndexMap<String, f64>,
    /// Per-feature importance averaged over the fold models.
    pub importance: Vec<(String, f64)>,
    pub provenance: Vec<FoldProvenance>,
    pub repeats: usize,
}

impl CvReport {
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.mean.keys().collect();
        let mut out = String::from("fold,test_groups,n_train,n_test");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{}",
                f.fold,
                f.test_groups.join(";"),
                f.n_train,
                f.n_test
            ));
            for n in &names {
                out.push_str(&format!(",{}", f.metrics[*n]));
            }
            out.push('\n');
        }
        for (label, table) in [("mean", &self.mean), ("sd", &self.sd)] {
            out.push_str(&format!("{label},,,"));
            for n in &names {
                out.push_str(&format!(",{}", table[*n]));
            }
            out.push('\n');
        }
        out
    }

    pub fn importance_csv(&self) -> String {
        let mut out = String::from("feature,importance\n");
        for (f, v) in &self.importance {
            out.push_str(&format!("{f},{v}\n"));
        }
        out
    }
}

/// Fails if any fitted preprocessing step or model saw a test row.
pub fn check_no_leakage(provenance: &[FoldProvenance]) -> Result<()> {
    for p in provenance {
        let test: std::collections::HashSet<usize> = p.test_rows.iter().copied().collect();
        for (what, rows) in [
            ("normalization maxima", &p.normalization_rows),
            ("PCA loadings", &p.pca_rows),
            ("target z-score parameters", &p.target_z_rows),
            ("forest", &p.forest_rows),
        ] {
            if let Some(r) = rows.iter().find(|r| test.contains(r)) {
                return Err(UtsError::Precondition(format!(
                    "leakage in fold {}: {what} fitted on test row {r}",
                    p.fold
                )));
            }
        }
    }
    Ok(())
}

fn restrict(v: &SignatureVector, names: &[String]) -> Result<SignatureVector> {
    let components = names
        .iter()
        .map(|n| {
            v.get(n)
                .map(|x| (n.clone(), x))
                .ok_or_else(|| UtsError::Schema(format!("signature has no component `{n}`")))
        })
        .collect::<Result<IndexMap<_, _>>>()?;
    Ok(SignatureVector {
        components,
        ..v.clone()
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Per-group z-scores of `values[rows]` using parameters fitted on those rows.
fn z_within_groups(values: &[f64], groups: &[String], rows: &[usize]) -> Result<Vec<f64>> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        members.entry(&groups[r]).or_default().push(r);
    }
    let mut z: BTreeMap<usize, f64> = BTreeMap::new();
    for (g, idx) in members {
        let vals: Vec<f64> = idx.iter().map(|&r| values[r]).collect();
        let p = ZParams::fit(&vals).map_err(|e| UtsError::Grouping(format!("group {g}: {e}")))?;
        for &r in &idx {
            z.insert(r, p.apply(values[r]));
        }
    }
    Ok(rows.iter().map(|r| z[r]).collect())
}

/// Grouped k-fold evaluation of forests on signature features.
///
/// Per fold, normalization maxima, optional PCA axes, training-target
/// z-score parameters and the forest are fitted on training rows only. Test
/// targets are z-scored within their own group for scoring; that label
/// transform never reaches a fitted object.
pub fn cross_validate(
    rows: &[SignatureVector],
    targets: &Targets,
    groups: &[String],
    options: &CvOptions,
) -> Result<CvReport> {
    let m = rows.len();
    if targets.len() != m || groups.len() != m {
        return Err(UtsError::Schema(format!(
            "{m} signatures but {} targets and {} group ids",
            targets.len(),
            groups.len()
        )));
    }
    let rows: Vec<SignatureVector> = match &options.features {
        Some(names) => rows.iter().map(|v| restrict(v, names)).collect::<Result<_>>()?,
        None => rows.to_vec(),
    };
    let task = targets.task();
    let folds = group_kfold(groups, options.folds)?;

    let mut results = Vec::new();
    let mut provenance = Vec::new();
    let mut importance: IndexMap<String, f64> = IndexMap::new();
    for (f, fold) in folds.iter().enumerate() {
        let train_set: Vec<SignatureVector> = fold.train.iter().map(|&r| rows[r].clone()).collect();
        let state = fit_normalization(&train_set)?;
        let norm = |r: usize| apply_normalization(&rows[r], &state);
        let train_n: Vec<SignatureVector> = fold.train.iter().map(|&r| norm(r)).collect::<Result<_>>()?;
        let test_n: Vec<SignatureVector> = fold.test.iter().map(|&r| norm(r)).collect::<Result<_>>()?;

        let (names, train_x, test_x, pca_rows) = match options.reduce {
            Some(target) => {
                let pca = pca_reduce(&train_n, target)?;
                let names = (1..=pca.loadings.len()).map(|i| format!("pc{i}")).collect();
                let tx = pca.coordinates.concat();
                let sx = test_n.iter().map(|v| pca.project(v)).collect::<Result<Vec<_>>>()?.concat();
                (names, tx, sx, fold.train.clone())
            }
            None => {
                let names: Vec<String> = state.maxima.keys().cloned().collect();
                let tx = train_n.iter().flat_map(|v| v.values()).collect();
                let sx = test_n.iter().flat_map(|v| v.values()).collect();
                (names, tx, sx, Vec::new())
            }
        };

        let (train_y, test_truth, target_z_rows) = match targets {
            Targets::Classes(_) => (targets.select(&fold.train), targets.select(&fold.test), Vec::new()),
            Targets::Values(v) if options.znormalize_targets => (
                Targets::Values(z_within_groups(v, groups, &fold.train)?),
                Targets::Values(z_within_groups(v, groups, &fold.test)?),
                fold.train.clone(),
            ),
            Targets::Values(_) => (targets.select(&fold.train), targets.select(&fold.test), Vec::new()),
        };

        let table = SupervisedTable {
            feature_names: names,
            features: train_x,
            targets: train_y,
            groups: fold.train.iter().map(|&r| groups[r].clone()).collect(),
            row_ids: fold.train.iter().map(|&r| format!("{}#{r}", rows[r].row_id())).collect(),
        };
        let model = fit_forest(&table, &options.forest)?;
        for (name, v) in model.feature_names.iter().zip(&model.importances) {
            *importance.entry(name.clone()).or_insert(0.0) += v / folds.len() as f64;
        }
        let mut metrics = IndexMap::new();
        match (predict(&model, &test_x)?, &test_truth) {
            (Predictions::Classes(p), Targets::Classes(t)) => {
                let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
                metrics.insert("balanced_accuracy".to_string(), balanced_accuracy(t, &p)?);
                metrics.insert("accuracy".to_string(), acc);
            }
            (Predictions::Values(p), Targets::Values(t)) => {
                let (r2, rho) = regression_scores(t, &p)?;
                metrics.insert("r2".to_string(), r2);
                metrics.insert("spearman".to_string(), rho);
            }
            _ => unreachable!("prediction kind follows the target kind"),
        }
        results.push(FoldResult {
            fold: f,
            test_groups: fold.test_groups.clone(),
            n_train: fold.train.len(),
            n_test: fold.test.len(),
            metrics,
        });
        provenance.push(FoldProvenance {
            fold: f,
            test_rows: fold.test.clone(),
            normalization_rows: fold.train.clone(),
            pca_rows,
            target_z_rows,
            forest_rows: fold.train.clone(),
        });
    }
    check_no_leakage(&provenance)?;

    let mut mean = IndexMap::new();
    let mut sd = IndexMap::new();
    for name in results[0].metrics.keys() {
        let vals: Vec<f64> = results.iter().map(|r| r.metrics[name]).collect();
        let (mu, s) = mean_sd(&vals);
        mean.insert(name.clone(), mu);
        sd.insert(name.clone(), s);
    }
    Ok(CvReport {
        task,
        folds: results,
        mean,
        sd,
        importance: importance.into_iter().collect(),
        provenance,
        repeats: 1,
    })
}
