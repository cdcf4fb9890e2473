use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SupervisedTable, Targets, Task};
use crate::error::{Result, UtsError};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub max_depth: usize,
    pub n_trees: usize,
    /// Features tried per split; `None` means `⌈√K⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            max_depth: 5,
            n_trees: 200,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Class index (classification) or mean target (regression).
    Leaf { value: f64 },
    /// Rows with `feature <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// Bootstrap-aggregated CART trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub task: Task,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    /// Sorted class names (classification only).
    pub classes: Vec<String>,
    pub trees: Vec<Tree>,
    /// Normalized mean impurity decrease per feature.
    pub importances: Vec<f64>,
}

/// Labels for classification, values for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Classes(Vec<String>),
    Values(Vec<f64>),
}

struct Grower<'a> {
    x: &'a [f64],
    k: usize,
    y: &'a [f64],
    classes: usize,
    max_depth: usize,
    max_features: usize,
    nodes: Vec<Node>,
    decrease: Vec<f64>,
}

impl Grower<'_> {
    /// Node impurity times its size: Gini for classes, squared error for values.
    fn weighted_impurity(&self, rows: &[usize]) -> f64 {
        let n = rows.len() as f64;
        if self.classes > 0 {
            let mut counts = vec![0.0; self.classes];
            rows.iter().for_each(|&r| counts[self.y[r] as usize] += 1.0);
            n - counts.iter().map(|c| c * c).sum::<f64>() / n
        } else {
            let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n;
            rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum()
        }
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        if self.classes > 0 {
            let mut counts = vec![0usize; self.classes];
            rows.iter().for_each(|&r| counts[self.y[r] as usize] += 1);
            // First maximum: ties go to the lower class index.
            let best = counts.iter().copied().max().unwrap_or(0);
            counts.iter().position(|&c| c == best).unwrap_or(0) as f64
        } else {
            rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64
        }
    }

    /// Best (decrease, feature, threshold) over the candidate features.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(f64, usize, f64)> {
        let parent = self.weighted_impurity(rows);
        let n = rows.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for &f in features {
            let val = |r: usize| self.x[r * self.k + f];
            order.sort_by(|&a, &b| val(a).total_cmp(&val(b)).then(a.cmp(&b)));
            // Running sufficient statistics of the left part.
            let mut lc = vec![0.0; self.classes];
            let mut rc = vec![0.0; self.classes];
            let (mut ls, mut lss, mut rs, mut rss) = (0.0, 0.0, 0.0, 0.0);
            for &r in &order {
                if self.classes > 0 {
                    rc[self.y[r] as usize] += 1.0;
                } else {
                    rs += self.y[r];
                    rss += self.y[r] * self.y[r];
                }
            }
            for i in 0..n - 1 {
                let r = order[i];
                let yr = self.y[r];
                if self.classes > 0 {
                    lc[yr as usize] += 1.0;
                    rc[yr as usize] -= 1.0;
                } else {
                    ls += yr;
                    lss += yr * yr;
                    rs -= yr;
                    rss -= yr * yr;
                }
                let (a, b) = (val(r), val(order[i + 1]));
                if a == b {
                    continue;
                }
                let (nl, nr) = ((i + 1) as f64, (n - i - 1) as f64);
                let children = if self.classes > 0 {
                    nl - lc.iter().map(|c| c * c).sum::<f64>() / nl + nr
                        - rc.iter().map(|c| c * c).sum::<f64>() / nr
                } else {
                    (lss - ls * ls / nl).max(0.0) + (rss - rs * rs / nr).max(0.0)
                };
                let gain = parent - children;
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                if gain > 1e-12 * parent.abs().max(1e-300)
                    && best.map_or(true, |(g, _, _)| gain > g)
                {
                    best = Some((gain, f, threshold));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&rows),
        });
        if depth >= self.max_depth || rows.len() < 2 || self.weighted_impurity(&rows) <= 0.0 {
            return id;
        }
        let mut features: Vec<usize> = sample(rng, self.k, self.max_features).into_vec();
        features.sort_unstable();
        let Some((gain, feature, threshold)) = self.best_split(&rows, &features) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&row| self.x[row * self.k + feature] <= threshold);
        self.decrease[feature] += gain;
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn check_features(x: &[f64], k: usize, m: usize) -> Result<()> {
    if x.len() != m * k {
        return Err(UtsError::Schema(format!(
            "feature matrix has {} values, expected {m} x {k}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(UtsError::Precondition(format!(
            "feature ({}, {}) is not finite",
            i / k.max(1),
            i % k.max(1)
        )));
    }
    Ok(())
}

/// Fits a forest. Rows are first put in row-id order so the fitted model does
/// not depend on the order of the input table.
pub fn fit_forest(table: &SupervisedTable, params: &ForestParams) -> Result<Forest> {
    let (m, k) = (table.len(), table.feature_names.len());
    table.validate()?;
    check_features(&table.features, k, m)?;
    if m < 5 {
        return Err(UtsError::Precondition(format!("forest needs at least 5 rows (got {m})")));
    }
    if params.max_depth == 0 || params.n_trees == 0 || k == 0 {
        return Err(UtsError::Precondition(
            "forest needs max_depth >= 1, n_trees >= 1 and at least one feature".into(),
        ));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| table.row_ids[a].cmp(&table.row_ids[b]).then(a.cmp(&b)));
    let x: Vec<f64> = order
        .iter()
        .flat_map(|&r| table.features[r * k..(r + 1) * k].iter().copied())
        .collect();

    let (task, classes, y) = match &table.targets {
        Targets::Classes(labels) => {
            let mut classes: Vec<String> = labels.clone();
            classes.sort();
            classes.dedup();
            if classes.len() < 2 {
                return Err(UtsError::Degenerate("classification needs at least 2 classes".into()));
            }
            let y = order
                .iter()
                .map(|&r| classes.binary_search(&labels[r]).unwrap() as f64)
                .collect::<Vec<_>>();
            (Task::Classify, classes, y)
        }
        Targets::Values(values) => {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(UtsError::Precondition("regression targets must be finite".into()));
            }
            if values.iter().all(|&v| v == values[0]) {
                return Err(UtsError::Degenerate("regression targets are constant".into()));
            }
            (Task::Regress, Vec::new(), order.iter().map(|&r| values[r]).collect())
        }
    };
    let max_features = params
        .max_features
        .unwrap_or_else(|| (k as f64).sqrt().ceil() as usize)
        .clamp(1, k);

    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..m).map(|_| rng.gen_range(0..m)).collect()
            } else {
                (0..m).collect()
            };
            let mut g = Grower {
                x: &x,
                k,
                y: &y,
                classes: classes.len(),
                max_depth: params.max_depth,
                max_features,
                nodes: Vec::new(),
                decrease: vec![0.0; k],
            };
            g.grow(rows, 0, &mut rng);
            (Tree { nodes: g.nodes }, g.decrease)
        })
        .collect();

    let mut importances = vec![0.0; k];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, dec) in grown {
        let total: f64 = dec.iter().sum();
        if total > 0.0 {
            importances.iter_mut().zip(&dec).for_each(|(a, d)| *a += d / total);
        }
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(Forest {
        version: FOREST_FORMAT_VERSION,
        task,
        params: params.clone(),
        feature_names: table.feature_names.clone(),
        classes,
        trees,
        importances,
    })
}

/// Plurality vote (ties to the lexicographically smallest class) or mean.
pub fn predict(model: &Forest, features: &[f64]) -> Result<Predictions> {
    let k = model.feature_names.len();
    if k == 0 || features.len() % k != 0 {
        return Err(UtsError::Schema(format!(
            "{} feature values do not form rows of width {k}",
            features.len()
        )));
    }
    let rows = features.chunks_exact(k);
    match model.task {
        Task::Classify => Ok(Predictions::Classes(
            rows.map(|x| {
                let mut votes = vec![0usize; model.classes.len()];
                for t in &model.trees {
                    votes[t.predict_row(x) as usize] += 1;
                }
                let best = votes.iter().copied().max().unwrap_or(0);
                model.classes[votes.iter().position(|&v| v == best).unwrap_or(0)].clone()
            })
            .collect(),
        )),
        Task::Regress => Ok(Predictions::Values(
            rows.map(|x| {
                model.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / model.trees.len() as f64
            })
            .collect(),
        )),
    }
}

/// Feature name and normalized importance, in feature order.
pub fn feature_importance(model: &Forest) -> Vec<(String, f64)> {
    model
        .feature_names
        .iter()
        .cloned()
        .zip(model.importances.iter().copied())
        .collect()
}

impl Forest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Forest = serde_json::from_str(text)?;
        if f.version != FOREST_FORMAT_VERSION {
            return Err(UtsError::Schema(format!(
                "unsupported forest format version {}",
                f.version
            )));
        }
        Ok(f)
    }
}
