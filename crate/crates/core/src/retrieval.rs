//! Dense retrieval, retrieval metrics, retrievability and its Gini coefficient.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{dot, PointCloud};
use crate::error::{Result, UtsError};

/// Retrievability cutoff.
pub const DEFAULT_CUTOFF: usize = 100;
/// Number of most and least retrievable documents selected for labeling.
pub const DEFAULT_EXTREMES: usize = 100;
/// Evaluation cutoffs.
pub const DEFAULT_EVAL_CUTOFFS: [usize; 3] = [5, 20, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query: String,
    pub hits: Vec<Hit>,
}

/// Ranked lists for a set of queries over a known corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    pub cutoff: usize,
    /// Every document id of the corpus, including never-retrieved ones.
    pub corpus: Vec<String>,
    pub rankings: Vec<QueryRanking>,
}

impl RankedRun {
    /// Checks that scores never increase and doc ids are unique within each list.
    pub fn validate(&self) -> Result<()> {
        for q in &self.rankings {
            if q.hits.windows(2).any(|w| w[1].score > w[0].score) {
                return Err(UtsError::Precondition(format!(
                    "scores increase within query {}",
                    q.query
                )));
            }
            let mut seen = HashSet::new();
            if let Some(h) = q.hits.iter().find(|h| !seen.insert(&h.doc)) {
                return Err(UtsError::Precondition(format!(
                    "document {} appears twice for query {}",
                    h.doc, q.query
                )));
            }
        }
        Ok(())
    }

    /// Replace index-based ids with caller-supplied ones.
    pub fn relabel(mut self, query_ids: &[String], doc_ids: &[String]) -> Result<Self> {
        if query_ids.len() != self.rankings.len() || doc_ids.len() != self.corpus.len() {
            return Err(UtsError::Precondition("id list lengths do not match the run".into()));
        }
        let index = |s: &str| s.parse::<usize>().expect("index-based id");
        for (q, id) in self.rankings.iter_mut().zip(query_ids) {
            q.query = id.clone();
            for h in &mut q.hits {
                h.doc = doc_ids[index(&h.doc)].clone();
            }
        }
        self.corpus = doc_ids.to_vec();
        Ok(self)
    }

    /// TREC run lines `qid Q0 docid rank score tag`.
    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for q in &self.rankings {
            for (r, h) in q.hits.iter().enumerate() {
                let _ = writeln!(out, "{} Q0 {} {} {} {tag}", q.query, h.doc, r + 1, h.score);
            }
        }
        out
    }

    /// Parses a TREC run. Lists are ordered by the rank column; `corpus`
    /// defaults to the documents seen in the run when not given.
    pub fn from_trec(text: &str, corpus: Option<Vec<String>>) -> Result<Self> {
        let mut by_query: Vec<(String, Vec<(usize, Hit)>)> = Vec::new();
        let mut pos: HashMap<String, usize> = HashMap::new();
        let mut seen_docs: Vec<String> = Vec::new();
        let mut seen_set = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let loc = || format!("line {}", i + 1);
            if f.len() != 6 {
                return Err(UtsError::parse(loc(), format!("expected 6 fields, found {}", f.len())));
            }
            let rank: usize = f[3]
                .parse()
                .map_err(|_| UtsError::parse(loc(), format!("bad rank `{}`", f[3])))?;
            let score: f64 = f[4]
                .parse()
                .map_err(|_| UtsError::parse(loc(), format!("bad score `{}`", f[4])))?;
            let slot = *pos.entry(f[0].to_string()).or_insert_with(|| {
                by_query.push((f[0].to_string(), Vec::new()));
                by_query.len() - 1
            });
            by_query[slot].1.push((
                rank,
                Hit {
                    doc: f[2].to_string(),
                    score,
                },
            ));
            if seen_set.insert(f[2].to_string()) {
                seen_docs.push(f[2].to_string());
            }
        }
        let mut cutoff = 0;
        let rankings = by_query
            .into_iter()
            .map(|(query, mut hits)| {
                hits.sort_by_key(|(r, _)| *r);
                cutoff = cutoff.max(hits.len());
                QueryRanking {
                    query,
                    hits: hits.into_iter().map(|(_, h)| h).collect(),
                }
            })
            .collect();
        let run = RankedRun {
            cutoff,
            corpus: corpus.unwrap_or(seen_docs),
            rankings,
        };
        run.validate()?;
        Ok(run)
    }
}

fn top_c(scores: &[f64], c: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if c < idx.len() {
        idx.select_nth_unstable_by(c, cmp);
        idx.truncate(c);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Exact top-`c` documents per query by inner product; ties go to the lower
/// document index. Ids are the row indices as strings.
pub fn dense_retrieve(queries: &PointCloud, docs: &PointCloud, c: usize) -> Result<RankedRun> {
    if c > docs.len() {
        return Err(UtsError::Bounds(format!(
            "cutoff {c} exceeds the {} documents",
            docs.len()
        )));
    }
    if queries.dim() != docs.dim() {
        return Err(UtsError::Precondition(format!(
            "query dimension {} differs from document dimension {}",
            queries.dim(),
            docs.dim()
        )));
    }
    queries.require_unit_rows("dense retrieval queries")?;
    docs.require_unit_rows("dense retrieval documents")?;
    let rankings = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let qv = queries.row(q);
            let scores: Vec<f64> = docs.rows().map(|d| dot(qv, d)).collect();
            QueryRanking {
                query: q.to_string(),
                hits: top_c(&scores, c)
                    .into_iter()
                    .map(|i| Hit {
                        doc: i.to_string(),
                        score: scores[i],
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(RankedRun {
        cutoff: c,
        corpus: (0..docs.len()).map(|i| i.to_string()).collect(),
        rankings,
    })
}

/// Per-document count of queries whose top-`c` list contains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievabilityTable {
    pub docs: Vec<String>,
    pub counts: Vec<u64>,
    pub queries: usize,
    pub cutoff: usize,
}

impl RetrievabilityTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self {
            docs: (0..counts.len()).map(|i| i.to_string()).collect(),
            counts,
            queries: 0,
            cutoff: 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("doc,retrievability\n");
        for (d, r) in self.docs.iter().zip(&self.counts) {
            let _ = writeln!(out, "{d},{r}");
        }
        out
    }
}

pub fn retrievability(run: &RankedRun) -> Result<RetrievabilityTable> {
    run.validate()?;
    let index: HashMap<&str, usize> = run
        .corpus
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut counts = vec![0u64; run.corpus.len()];
    for q in &run.rankings {
        for h in q.hits.iter().take(run.cutoff) {
            let i = index.get(h.doc.as_str()).ok_or_else(|| {
                UtsError::Precondition(format!("document {} is not in the corpus", h.doc))
            })?;
            counts[*i] += 1;
        }
    }
    Ok(RetrievabilityTable {
        docs: run.corpus.clone(),
        counts,
        queries: run.rankings.len(),
        cutoff: run.cutoff,
    })
}

/// Gini coefficient of the counts over every document, zero counts included.
pub fn gini(table: &RetrievabilityTable) -> Result<f64> {
    let n = table.counts.len();
    let total: u64 = table.counts.iter().sum();
    if total == 0 {
        return Err(UtsError::UndefinedStatistic(
            "Gini coefficient of an all-zero table".into(),
        ));
    }
    let mut r: Vec<u64> = table.counts.clone();
    r.sort_unstable();
    // Σ_i Σ_j |r_i - r_j| = 2 Σ_i (2i - n - 1) r_(i) for ascending r, 1-based i.
    let weighted: f64 = r
        .iter()
        .enumerate()
        .map(|(i, &v)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * v as f64)
        .sum();
    Ok(weighted / (n as f64 * total as f64))
}

/// `m` most retrievable documents and `m` least retrievable among the rest,
/// as indices into the table. Ties go to the lower index.
pub fn select_extremes(table: &RetrievabilityTable, m: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = table.counts.len();
    if 2 * m > n {
        return Err(UtsError::Bounds(format!(
            "cannot select 2 x {m} extremes from {n} documents"
        )));
    }
    let mut desc: Vec<usize> = (0..n).collect();
    desc.sort_by(|&a, &b| table.counts[b].cmp(&table.counts[a]).then(a.cmp(&b)));
    let top: Vec<usize> = desc[..m].to_vec();
    let taken: HashSet<usize> = top.iter().copied().collect();
    let mut asc: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
    asc.sort_by(|&a, &b| table.counts[a].cmp(&table.counts[b]).then(a.cmp(&b)));
    asc.truncate(m);
    Ok((top, asc))
}

/// Graded relevance judgments: query → document → grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

pub fn read_qrels(text: &str) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        if f.len() != 4 {
            return Err(UtsError::parse(loc(), format!("expected 4 fields, found {}", f.len())));
        }
        let grade: u32 = f[3]
            .parse()
            .map_err(|_| UtsError::parse(loc(), format!("bad grade `{}`", f[3])))?;
        q.entry(f[0].to_string()).or_default().insert(f[2].to_string(), grade);
    }
    Ok(q)
}

pub fn write_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in qrels {
        for (d, g) in docs {
            let _ = writeln!(out, "{q} 0 {d} {g}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub query: String,
    pub k: usize,
    pub recall: f64,
    pub map: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryScores>,
    /// Mean over evaluated queries, one row per cutoff (query field = "all").
    pub mean: Vec<QueryScores>,
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn mean_at(&self, k: usize) -> Option<&QueryScores> {
        self.mean.iter().find(|s| s.k == k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("query,k,recall,map,ndcg\n");
        for s in self.per_query.iter().chain(&self.mean) {
            let _ = writeln!(out, "{},{},{},{},{}", s.query, s.k, s.recall, s.map, s.ndcg);
        }
        out
    }
}

fn scores_at(hits: &[Hit], rel: &BTreeMap<String, u32>, k: usize) -> (f64, f64, f64) {
    let total = rel.values().filter(|&&g| g > 0).count();
    let (mut found, mut ap, mut dcg) = (0usize, 0.0, 0.0);
    for (i, h) in hits.iter().take(k).enumerate() {
        let g = rel.get(&h.doc).copied().unwrap_or(0);
        if g > 0 {
            found += 1;
            ap += found as f64 / (i + 1) as f64;
        }
        dcg += (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2();
    }
    let mut ideal: Vec<u32> = rel.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum();
    (
        found as f64 / total as f64,
        ap / k.min(total) as f64,
        dcg / idcg,
    )
}

/// Recall, MAP and NDCG at each cutoff, per query and averaged. Queries
/// without any relevant document are skipped with a warning.
pub fn eval_metrics(run: &RankedRun, qrels: &Qrels, cutoffs: &[usize]) -> Result<EvalReport> {
    if cutoffs.iter().any(|&k| k == 0) {
        return Err(UtsError::Precondition("cutoffs must be positive".into()));
    }
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for q in &run.rankings {
        let rel = match qrels.get(&q.query) {
            Some(r) if r.values().any(|&g| g > 0) => r,
            _ => {
                log::warn!("query {} has no relevant documents; skipped", q.query);
                skipped.push(q.query.clone());
                continue;
            }
        };
        for &k in cutoffs {
            let (recall, map, ndcg) = scores_at(&q.hits, rel, k);
            per_query.push(QueryScores {
                query: q.query.clone(),
                k,
                recall,
                map,
                ndcg,
            });
        }
    }
    let evaluated = per_query.len() / cutoffs.len().max(1);
    if evaluated == 0 {
        return Err(UtsError::UndefinedStatistic("no query has relevant documents".into()));
    }
    let mean = cutoffs
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let rows = per_query.iter().skip(c).step_by(cutoffs.len());
            let (mut r, mut m, mut g) = (0.0, 0.0, 0.0);
            for s in rows {
                r += s.recall;
                m += s.map;
                g += s.ndcg;
            }
            let e = evaluated as f64;
            QueryScores {
                query: "all".into(),
                k,
                recall: r / e,
                map: m / e,
                ndcg: g / e,
            }
        })
        .collect();
    Ok(EvalReport {
        per_query,
        mean,
        skipped,
    })
}

/// Population mean and standard deviation of one group's values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZParams {
    pub mean: f64,
    pub sd: f64,
}

impl ZParams {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(UtsError::Grouping(format!(
                "z-normalization needs at least 2 values per group (got {})",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Ok(Self { mean, sd })
    }

    /// Constant groups (zero sd) map to zero.
    pub fn apply(&self, v: f64) -> f64 {
        if self.sd > 0.0 {
            (v - self.mean) / self.sd
        } else {
            0.0
        }
    }
}

/// Z-scores each value within its group.
pub fn znormalize_by_group(groups: &[String], values: &[f64]) -> Result<Vec<f64>> {
    if groups.len() != values.len() {
        return Err(UtsError::Precondition("groups and values differ in length".into()));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    let mut out = vec![0.0; values.len()];
    for (g, idx) in members {
        let vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        let p = ZParams::fit(&vals).map_err(|e| UtsError::Grouping(format!("group {g}: {e}")))?;
        if p.sd == 0.0 {
            log::warn!("group {g} is constant; its z-scores are all zero");
        }
        for &i in &idx {
            out[i] = p.apply(values[i]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(list: &[&str]) -> RankedRun {
        RankedRun {
            cutoff: list.len(),
            corpus: list.iter().map(|s| s.to_string()).collect(),
            rankings: vec![QueryRanking {
                query: "q".into(),
                hits: list
                    .iter()
                    .enumerate()
                    .map(|(i, d)| Hit {
                        doc: d.to_string(),
                        score: -(i as f64),
                    })
                    .collect(),
            }],
        }
    }

    fn binary(q: &str, docs: &[&str]) -> Qrels {
        let mut m = Qrels::new();
        m.insert(q.into(), docs.iter().map(|d| (d.to_string(), 1)).collect());
        m
    }

    #[test]
    fn retrieve_identity_query_first() {
        let docs = PointCloud::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]).unwrap();
        let q = PointCloud::from_rows(&[[0.0, 1.0]]).unwrap();
        let run = dense_retrieve(&q, &docs, 3).unwrap();
        let hits = &run.rankings[0].hits;
        assert_eq!(hits[0].doc, "1");
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(hits[2].doc, "0");
        assert_eq!(hits[2].score, 0.0);
        assert!(matches!(dense_retrieve(&q, &docs, 4), Err(UtsError::Bounds(_))));
    }

    #[test]
    fn retrievability_counts() {
        let mut run = run_of(&["a", "b"]);
        run.corpus.push("c".into());
        run.rankings.push(QueryRanking {
            query: "q2".into(),
            hits: vec![Hit { doc: "a".into(), score: 1.0 }, Hit { doc: "c".into(), score: 0.5 }],
        });
        run.rankings.push(QueryRanking {
            query: "q3".into(),
            hits: vec![Hit { doc: "b".into(), score: 1.0 }, Hit { doc: "c".into(), score: 0.5 }],
        });
        let t = retrievability(&run).unwrap();
        assert_eq!(t.counts, vec![2, 2, 2]);
        assert_eq!(t.counts.iter().sum::<u64>(), 6);

        let mut dup = run_of(&["a", "b"]);
        dup.rankings[0].hits[1].doc = "a".into();
        assert!(retrievability(&dup).is_err());
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&RetrievabilityTable::from_counts(vec![4; 10])).unwrap(), 0.0);
        let mut one = vec![0u64; 100];
        one[17] = 50;
        assert!((gini(&RetrievabilityTable::from_counts(one)).unwrap() - 0.99).abs() < 1e-12);
        assert!(gini(&RetrievabilityTable::from_counts(vec![0; 3])).is_err());
    }

    #[test]
    fn extremes_examples() {
        let t = RetrievabilityTable::from_counts(vec![5, 0, 3]);
        assert_eq!(select_extremes(&t, 1).unwrap(), (vec![0], vec![1]));
        let eq = RetrievabilityTable::from_counts(vec![2; 6]);
        assert_eq!(select_extremes(&eq, 3).unwrap(), (vec![0, 1, 2], vec![3, 4, 5]));
        assert!(select_extremes(&eq, 4).is_err());
    }

    #[test]
    fn metric_examples() {
        let run = run_of(&["x", "r", "y", "z", "w", "v"]);
        let rep = eval_metrics(&run, &binary("q", &["r"]), &[5]).unwrap();
        let s = rep.mean_at(5).unwrap();
        assert_eq!(s.recall, 1.0);
        assert!((s.map - 0.5).abs() < 1e-12);
        assert!((s.ndcg - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((s.ndcg - 0.6309).abs() < 1e-4);

        let perfect = eval_metrics(&run, &binary("q", &["x"]), &[1, 2, 5]).unwrap();
        for s in &perfect.mean {
            assert_eq!((s.recall, s.map, s.ndcg), (1.0, 1.0, 1.0));
        }
        let below = eval_metrics(&run, &binary("q", &["v"]), &[5]).unwrap();
        let s = below.mean_at(5).unwrap();
        assert_eq!((s.recall, s.map, s.ndcg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn trec_round_trip() {
        let run = run_of(&["d1", "d2", "d3"]);
        let back = RankedRun::from_trec(&run.to_trec("t"), None).unwrap();
        assert_eq!(back, run);
        let q = binary("q", &["d1", "d3"]);
        assert_eq!(read_qrels(&write_qrels(&q)).unwrap(), q);
        assert!(RankedRun::from_trec("q Q0 d 1 x t\n", None).is_err());
    }

    #[test]
    fn znorm_examples() {
        let g: Vec<String> = ["a", "a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let z = znormalize_by_group(&g, &[1.0, 2.0, 3.0, 7.0, 7.0]).unwrap();
        assert!((z[0] + 1.224744871391589).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - 1.224744871391589).abs() < 1e-12);
        assert_eq!(&z[3..], &[0.0, 0.0]);
        let single: Vec<String> = vec!["a".into(), "a".into(), "b".into()];
        assert!(matches!(
            znormalize_by_group(&single, &[1.0, 2.0, 3.0]),
            Err(UtsError::Grouping(_))
        ));
    }
}
