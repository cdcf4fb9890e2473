use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use uts::clustering::average_linkage;
use uts::learn::{check_no_leakage, cross_validate, CvOptions, ForestParams, Targets};
use uts::retrieval::{
    dense_retrieve, eval_metrics, gini, read_qrels, retrievability, select_extremes, RankedRun,
};
use uts::signature::{
    apply_normalization, compute_global_signature, compute_local_signature, correlation_report,
    fit_normalization, pca_reduce, signature_distance, write_jsonl, Budgets, Descriptor,
    NormalizationState, PcaTarget, SignatureVector,
};
use uts::{DistanceMatrix, SampleSpec, UtsError};

use crate::config::RunConfig;
use crate::inputs::{load_cloud, load_extras, load_indices, load_signatures, load_targets, InputSpec};
use crate::output::{Metadata, OutputDir};

/// Everything a verb produced, handed back to `main` for the metadata file.
pub struct Done {
    pub out: OutputDir,
    pub inputs: Vec<PathBuf>,
    pub config_hash: Option<String>,
}

fn jsonl(set: &[SignatureVector]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, set)?;
    Ok(buf)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reports every failed job, then returns the first error.
fn collect_jobs<T>(labels: &[String], results: Vec<Result<T, UtsError>>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut first = None;
    for (label, r) in labels.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                eprintln!("error: {label}: {e}");
                first.get_or_insert(e);
            }
        }
    }
    match first {
        Some(e) => Err(e.into()),
        None => Ok(ok),
    }
}

pub fn signature(cfg: &RunConfig, inputs: &[InputSpec]) -> Result<Done> {
    let clouds = inputs.iter().map(|i| load_cloud(&i.path)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..inputs.len()).flat_map(|i| cfg.seeds().iter().map(move |&s| (i, s))).collect();
    let labels: Vec<String> =
        jobs.iter().map(|&(i, s)| format!("{} (seed {s})", inputs[i].path.display())).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            compute_global_signature(&clouds[i], &cfg.descriptors, seed)
                .map(|v| v.with_source(&inputs[i].model, &inputs[i].dataset))
        })
        .collect();
    let set = collect_jobs(&labels, results)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("signatures.jsonl", &jsonl(&set)?)?;
    Ok(Done {
        out,
        inputs: inputs.iter().map(|i| i.path.clone()).collect(),
        config_hash: Some(cfg.descriptors.hash()),
    })
}

fn local_signatures(
    cfg: &RunConfig,
    cloud: &uts::PointCloud,
    input: &InputSpec,
    anchors: &[usize],
    k: usize,
    label: Option<&str>,
) -> Result<Vec<SignatureVector>> {
    let labels: Vec<String> = anchors.iter().map(|a| format!("anchor {a}")).collect();
    let results: Vec<_> = anchors
        .par_iter()
        .map(|&a| {
            compute_local_signature(cloud, a, k, &cfg.descriptors).map(|mut v| {
                v.label = label.map(str::to_string);
                v.with_source(&input.model, &input.dataset)
            })
        })
        .collect();
    collect_jobs(&labels, results)
}

pub fn local_signature(cfg: &RunConfig, input: &InputSpec, anchor_file: Option<&Path>, k: usize) -> Result<Done> {
    let cloud = load_cloud(&input.path)?;
    let anchors = match anchor_file {
        Some(p) => load_indices(p, cloud.len())?,
        None => (0..cloud.len()).collect(),
    };
    let set = local_signatures(cfg, &cloud, input, &anchors, k, None)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("local_signatures.jsonl", &jsonl(&set)?)?;
    let mut inputs = vec![input.path.clone()];
    inputs.extend(anchor_file.map(Path::to_path_buf));
    Ok(Done { out, inputs, config_hash: Some(cfg.descriptors.hash()) })
}

struct Item {
    label: String,
    /// `(dataset, seed)` → normalized signatures.
    by_key: BTreeMap<(String, u64), Vec<SignatureVector>>,
}

fn mean_distance(a: &[SignatureVector], b: &[SignatureVector]) -> Result<f64> {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += signature_distance(x, y)?;
        }
    }
    Ok(total / (a.len() * b.len()) as f64)
}

/// Distance between two items, averaged over the datasets they share. Within a
/// dataset, signatures with matching seeds are compared when any exist.
fn item_distance(a: &Item, b: &Item) -> Result<f64> {
    let datasets_a: BTreeMap<&str, Vec<&(String, u64)>> = a.by_key.keys().fold(BTreeMap::new(), |mut m, k| {
        m.entry(k.0.as_str()).or_insert_with(Vec::new).push(k);
        m
    });
    let mut per_dataset = Vec::new();
    for (dataset, keys) in &datasets_a {
        let matched: Vec<f64> = keys
            .iter()
            .filter_map(|k| b.by_key.get(*k).map(|bs| mean_distance(&a.by_key[*k], bs)))
            .collect::<Result<_>>()?;
        if !matched.is_empty() {
            per_dataset.push(matched.iter().sum::<f64>() / matched.len() as f64);
            continue;
        }
        let xs: Vec<SignatureVector> = keys.iter().flat_map(|k| a.by_key[*k].clone()).collect();
        let ys: Vec<SignatureVector> = b
            .by_key
            .iter()
            .filter(|(k, _)| k.0 == *dataset)
            .flat_map(|(_, v)| v.clone())
            .collect();
        if !ys.is_empty() {
            per_dataset.push(mean_distance(&xs, &ys)?);
        }
    }
    if per_dataset.is_empty() {
        bail!(UtsError::Pairing(format!("{} and {} share no dataset", a.label, b.label)));
    }
    Ok(per_dataset.iter().sum::<f64>() / per_dataset.len() as f64)
}

fn csv_matrix(labels: &[String], values: &[f64]) -> String {
    let n = labels.len();
    let mut s = String::from("item");
    for l in labels {
        s.push(',');
        s.push_str(l);
    }
    s.push('\n');
    for (i, l) in labels.iter().enumerate() {
        s.push_str(l);
        for v in &values[i * n..(i + 1) * n] {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

pub fn compare(cfg: &RunConfig, files: &[PathBuf]) -> Result<Done> {
    let sets = files.iter().map(|f| load_signatures(f)).collect::<Result<Vec<_>>>()?;
    let all: Vec<SignatureVector> = sets.iter().flatten().cloned().collect();
    let state = fit_normalization(&all)?;

    let mut model_files: BTreeMap<&str, usize> = BTreeMap::new();
    for set in &sets {
        let models: std::collections::BTreeSet<&str> = set.iter().map(|v| v.source.model.as_str()).collect();
        for m in models {
            *model_files.entry(m).or_default() += 1;
        }
    }
    let mut items: Vec<Item> = Vec::new();
    for (f, set) in files.iter().zip(&sets) {
        let mut by_model: BTreeMap<&str, Item> = BTreeMap::new();
        for v in set {
            let m = v.source.model.as_str();
            let label = if model_files[m] > 1 { format!("{}:{m}", stem(f)) } else { m.to_string() };
            let item = by_model.entry(m).or_insert_with(|| Item { label, by_key: BTreeMap::new() });
            item.by_key
                .entry((v.source.dataset.clone(), v.seed))
                .or_default()
                .push(apply_normalization(v, &state)?);
        }
        items.extend(by_model.into_values());
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for it in &mut items {
        let count = seen.entry(it.label.clone()).or_default();
        *count += 1;
        if *count > 1 {
            it.label = format!("{}#{count}", it.label);
        }
    }
    let n = items.len();
    if n < 2 {
        bail!(UtsError::Precondition(format!("compare needs at least 2 signature sources, found {n}")));
    }

    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let x = 0.5 * (item_distance(&items[i], &items[j])? + item_distance(&items[j], &items[i])?);
            d[i * n + j] = x;
            d[j * n + i] = x;
        }
    }
    let labels: Vec<String> = items.iter().map(|i| i.label.clone()).collect();
    let tree = average_linkage(&DistanceMatrix::from_full(d.clone(), n)?)?;
    let name = |id: usize| if id < n { labels[id].clone() } else { format!("node{id}") };
    let mut dendro = String::from("node,left,right,height\n");
    for m in &tree.merges {
        dendro.push_str(&format!("node{},{},{},{}\n", m.id, name(m.left), name(m.right), m.height));
    }
    let order: Vec<String> = tree.leaf_order().into_iter().map(|i| labels[i].clone()).collect();

    // 2-D projection of each item's mean normalized signature.
    let means: Vec<SignatureVector> = items
        .iter()
        .map(|it| {
            let vs: Vec<&SignatureVector> = it.by_key.values().flatten().collect();
            let mut mean = vs[0].clone();
            for (name, x) in mean.components.iter_mut() {
                *x = vs.iter().map(|v| v.components[name]).sum::<f64>() / vs.len() as f64;
            }
            mean.source.model = it.label.clone();
            mean
        })
        .collect();
    let mut projection = String::from("item,pc1,pc2\n");
    match pca_reduce(&means, PcaTarget::Components(2)) {
        Ok(p) => {
            for (l, c) in labels.iter().zip(&p.coordinates) {
                let get = |k: usize| c.get(k).copied().unwrap_or(0.0);
                projection.push_str(&format!("{l},{},{}\n", get(0), get(1)));
            }
        }
        Err(UtsError::Degenerate(m)) => warn!("no projection: {m}"),
        Err(e) => return Err(e.into()),
    }

    let mut out = OutputDir::create(&cfg.out)?;
    out.write("distances.csv", csv_matrix(&labels, &d).as_bytes())?;
    out.write("dendrogram.csv", dendro.as_bytes())?;
    out.write("leaf_order.txt", (order.join("\n") + "\n").as_bytes())?;
    out.write("projection.csv", projection.as_bytes())?;
    out.write_json("normalization.json", &state)?;
    Ok(Done { out, inputs: files.to_vec(), config_hash: None })
}

pub fn retrieve(cfg: &RunConfig, queries: &Path, docs: &Path, cutoff: usize, tag: &str) -> Result<Done> {
    let q = load_cloud(queries)?;
    let d = load_cloud(docs)?;
    let run = dense_retrieve(&q, &d, cutoff)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("run.trec", run.to_trec(tag).as_bytes())?;
    Ok(Done { out, inputs: vec![queries.into(), docs.into()], config_hash: None })
}

#[derive(Serialize)]
struct RetrievabilitySummary {
    gini: f64,
    cutoff: usize,
    queries: usize,
    documents: usize,
    extremes: usize,
    k: usize,
}

pub struct RetrievabilityArgs<'a> {
    pub queries: &'a Path,
    pub docs: &'a InputSpec,
    pub query_subset: Option<&'a Path>,
    pub cutoff: usize,
    pub extremes: usize,
    pub k: usize,
}

pub fn retrievability_audit(cfg: &RunConfig, a: &RetrievabilityArgs) -> Result<Done> {
    let mut q = load_cloud(a.queries)?;
    if let Some(p) = a.query_subset {
        q = q.select(&load_indices(p, q.len())?);
    }
    let docs = load_cloud(&a.docs.path)?;
    let run = dense_retrieve(&q, &docs, a.cutoff)?;
    let table = retrievability(&run)?;
    let g = gini(&table)?;
    let (top, bottom) = select_extremes(&table, a.extremes)?;
    info!("gini {g:.4}; computing {} local signatures", top.len() + bottom.len());
    let mut set = local_signatures(cfg, &docs, a.docs, &top, a.k, Some("1"))?;
    set.extend(local_signatures(cfg, &docs, a.docs, &bottom, a.k, Some("0"))?);

    let mut out = OutputDir::create(&cfg.out)?;
    out.write("retrievability.csv", table.to_csv().as_bytes())?;
    out.write_json(
        "retrievability.json",
        &RetrievabilitySummary {
            gini: g,
            cutoff: a.cutoff,
            queries: q.len(),
            documents: docs.len(),
            extremes: a.extremes,
            k: a.k,
        },
    )?;
    out.write("extremes.jsonl", &jsonl(&set)?)?;
    let mut inputs = vec![a.queries.to_path_buf(), a.docs.path.clone()];
    inputs.extend(a.query_subset.map(Path::to_path_buf));
    Ok(Done { out, inputs, config_hash: Some(cfg.descriptors.hash()) })
}

pub fn eval(cfg: &RunConfig, run: &Path, qrels: &Path, cutoffs: &[usize]) -> Result<Done> {
    let text = std::fs::read_to_string(run).with_context(|| format!("cannot read {}", run.display()))?;
    let ranked = RankedRun::from_trec(&text, None)?;
    let q = read_qrels(&std::fs::read_to_string(qrels).with_context(|| format!("cannot read {}", qrels.display()))?)?;
    let report = eval_metrics(&ranked, &q, cutoffs)?;
    if !report.skipped.is_empty() {
        warn!("{} queries without judgments were skipped", report.skipped.len());
    }
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("eval.csv", report.to_csv().as_bytes())?;
    Ok(Done { out, inputs: vec![run.into(), qrels.into()], config_hash: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GroupBy {
    Dataset,
    Model,
}

impl GroupBy {
    fn of(self, v: &SignatureVector) -> String {
        match self {
            GroupBy::Dataset => v.source.dataset.clone(),
            GroupBy::Model => v.source.model.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    Classify,
    Regress,
}

pub struct PredictArgs<'a> {
    pub signatures: &'a Path,
    pub targets: Option<&'a Path>,
    pub task: TaskArg,
    pub folds: usize,
    pub group_by: GroupBy,
    pub reduce: Option<PcaTarget>,
    pub features: Option<Vec<String>>,
    pub forest: ForestParams,
    pub znormalize_targets: bool,
}

pub fn predict(cfg: &RunConfig, a: &PredictArgs) -> Result<Done> {
    let rows = load_signatures(a.signatures)?;
    let table = a.targets.map(load_targets).transpose()?;
    let mut raw = Vec::with_capacity(rows.len());
    for v in &rows {
        let t = match &table {
            Some(t) => t.get(&(v.source.model.clone(), v.source.dataset.clone())).cloned(),
            None => v.label.clone(),
        };
        raw.push(t.ok_or_else(|| UtsError::Pairing(format!("no target for {}", v.row_id())))?);
    }
    let targets = match a.task {
        TaskArg::Classify => Targets::Classes(raw),
        TaskArg::Regress => Targets::Values(
            raw.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| UtsError::Parse { location: "targets".into(), message: format!("`{s}` is not a number") })
                })
                .collect::<Result<_, _>>()?,
        ),
    };
    let groups: Vec<String> = rows.iter().map(|v| a.group_by.of(v)).collect();
    let options = CvOptions {
        folds: a.folds,
        forest: a.forest.clone(),
        reduce: a.reduce,
        features: a.features.clone(),
        znormalize_targets: a.znormalize_targets,
    };
    let report = cross_validate(&rows, &targets, &groups, &options)?;
    check_no_leakage(&report.provenance)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("cv.csv", report.to_csv().as_bytes())?;
    out.write("importance.csv", report.importance_csv().as_bytes())?;
    out.write_json("cv_report.json", &report)?;
    let mut inputs = vec![a.signatures.to_path_buf()];
    inputs.extend(a.targets.map(Path::to_path_buf));
    Ok(Done { out, inputs, config_hash: None })
}

pub fn sweep(cfg: &RunConfig, input: &InputSpec, descriptor: Descriptor, sizes: &[usize]) -> Result<Done> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) {
        bail!(UtsError::Precondition("sizes must be nonempty and strictly ascending".into()));
    }
    let cloud = load_cloud(&input.path)?;
    let n = cloud.len();
    let mut clamped: Vec<usize> = Vec::new();
    for &s in sizes {
        if s > n {
            warn!("size {s} exceeds the {n} available rows; clamped to {n}");
        }
        let s = s.min(n);
        if clamped.last() != Some(&s) {
            clamped.push(s);
        }
    }
    let mut csv = String::from("component,size,seeds,mean,sd,wall_time_seconds\n");
    for &size in &clamped {
        let mut config = cfg.descriptors.clone();
        config.descriptors = vec![descriptor];
        config.budgets = Budgets::uniform(size);
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        let mut time = 0.0;
        for &seed in cfg.seeds() {
            let sample = cloud.sample(SampleSpec::new(size, seed));
            let start = Instant::now();
            let v = compute_global_signature(&sample, &config, seed)
                .with_context(|| format!("size {size}, seed {seed}"))?;
            time += start.elapsed().as_secs_f64();
            for (name, x) in &v.components {
                if !values.contains_key(name) {
                    order.push(name.clone());
                }
                values.entry(name.clone()).or_default().push(*x);
            }
        }
        let reps = cfg.seeds().len();
        for name in &order {
            let xs = &values[name];
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            csv.push_str(&format!("{name},{size},{reps},{mean},{sd},{}\n", (time / reps as f64).max(f64::MIN_POSITIVE)));
        }
    }
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("sweep.csv", csv.as_bytes())?;
    Ok(Done { out, inputs: vec![input.path.clone()], config_hash: Some(cfg.descriptors.hash()) })
}

pub fn correlations(cfg: &RunConfig, signatures: &Path, extras: Option<&Path>, group_by: GroupBy) -> Result<Done> {
    let rows = load_signatures(signatures)?;
    let extra = extras.map(load_extras).transpose()?.unwrap_or_default();
    let mut groups: BTreeMap<String, Vec<SignatureVector>> = BTreeMap::new();
    for v in rows {
        groups.entry(group_by.of(&v)).or_default().push(v);
    }
    let report = correlation_report(&groups, &extra)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("correlations_mean.csv", report.to_csv(&report.mean).as_bytes())?;
    out.write("correlations_variance.csv", report.to_csv(&report.variance).as_bytes())?;
    let mut inputs = vec![signatures.to_path_buf()];
    inputs.extend(extras.map(Path::to_path_buf));
    Ok(Done { out, inputs, config_hash: None })
}

pub fn normalize(cfg: &RunConfig, signatures: &Path, state: Option<&Path>) -> Result<Done> {
    let rows = load_signatures(signatures)?;
    let fitted = match state {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str::<NormalizationState>(&text).map_err(|e| UtsError::Parse {
                location: p.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => fit_normalization(&rows)?,
    };
    let normed = rows.iter().map(|v| apply_normalization(v, &fitted)).collect::<Result<Vec<_>, _>>()?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("normalized.jsonl", &jsonl(&normed)?)?;
    if state.is_none() {
        out.write_json("normalization.json", &fitted)?;
    }
    let mut inputs = vec![signatures.to_path_buf()];
    inputs.extend(state.map(Path::to_path_buf));
    Ok(Done { out, inputs, config_hash: None })
}

pub fn reduce(cfg: &RunConfig, signatures: &Path, target: PcaTarget) -> Result<Done> {
    let rows = load_signatures(signatures)?;
    let red = pca_reduce(&rows, target)?;
    let mut csv = String::from("row");
    for i in 0..red.loadings.len() {
        csv.push_str(&format!(",pc{}", i + 1));
    }
    csv.push('\n');
    for (id, c) in red.fitted_on.iter().zip(&red.coordinates) {
        csv.push_str(id);
        for x in c {
            csv.push_str(&format!(",{x}"));
        }
        csv.push('\n');
    }
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("coordinates.csv", csv.as_bytes())?;
    out.write_json("pca.json", &red)?;
    Ok(Done { out, inputs: vec![signatures.to_path_buf()], config_hash: None })
}

impl Done {
    pub fn finish(self, verb: &str, cfg: &RunConfig, started: Instant) -> Result<Vec<PathBuf>> {
        self.out.finish(Metadata {
            verb,
            elapsed: started.elapsed(),
            config_hash: self.config_hash,
            desk_scale: cfg.desk_scale,
            seeds: cfg.seeds().to_vec(),
            inputs: self.inputs,
        })
    }
}
