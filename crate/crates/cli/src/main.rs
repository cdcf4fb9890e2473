//! `uts`: signatures of embedding point clouds from the command line.
//!
//! Exit codes: 0 success, 2 input or schema error, 3 numerical or degenerate
//! error.

mod commands;
mod config;
mod inputs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use uts::learn::ForestParams;
use uts::retrieval::{DEFAULT_CUTOFF, DEFAULT_EVAL_CUTOFFS, DEFAULT_EXTREMES};
use uts::signature::{Descriptor, PcaTarget, DEFAULT_LOCAL_K};
use uts::{Metric, UtsError};

use commands::{GroupBy, PredictArgs, RetrievabilityArgs, TaskArg};
use config::{Overrides, RunConfig};
use inputs::InputSpec;

#[derive(Parser)]
#[command(name = "uts", version, about = "Topological and geometric signatures of embedding point clouds")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    verb: Verb,
}

/// Flags mirror the top-level keys of the TOML config.
#[derive(Args)]
struct Shared {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seeds, comma separated; one signature per input and seed.
    #[arg(long, global = true, value_delimiter = ',', value_name = "INT,...")]
    seed: Option<Vec<u64>>,
    /// Restrict metric-dependent descriptors to one metric.
    #[arg(long, global = true)]
    metric: Option<Metric>,
    /// Desk budgets (a tenth of the full study); `--desk-scale=false` for full budgets.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    desk_scale: Option<bool>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Global signature of each input, once per seed.
    Signature {
        /// Embedding files as `path`, `model=path` or `model/dataset=path`.
        #[arg(required = true)]
        inputs: Vec<InputSpec>,
    },
    /// Signatures of the cosine neighborhoods of selected rows.
    LocalSignature {
        input: InputSpec,
        /// File of anchor row indices; every row when absent.
        #[arg(long, value_name = "PATH")]
        anchors: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LOCAL_K)]
        k: usize,
    },
    /// Distances, dendrogram and 2-D projection of signature sets.
    Compare {
        #[arg(required = true)]
        signatures: Vec<PathBuf>,
    },
    /// Exact top-c cosine retrieval as a TREC run.
    Retrieve {
        queries: PathBuf,
        docs: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: usize,
        #[arg(long, default_value = "uts")]
        tag: String,
    },
    /// Retrievability, its Gini coefficient and labeled local signatures of the extremes.
    Retrievability {
        #[arg(value_name = "QUERIES")]
        query_embeddings: PathBuf,
        docs: InputSpec,
        /// File of query row indices restricting the query set.
        #[arg(long = "queries", value_name = "PATH")]
        query_subset: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: usize,
        /// Documents taken from each end of the ranking.
        #[arg(long, default_value_t = DEFAULT_EXTREMES)]
        extremes: usize,
        #[arg(long, default_value_t = DEFAULT_LOCAL_K)]
        k: usize,
    },
    /// Recall, MAP and NDCG of a TREC run against qrels.
    Eval {
        run: PathBuf,
        qrels: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EVAL_CUTOFFS)]
        cutoffs: Vec<usize>,
    },
    /// Grouped cross-validation of a forest on signatures.
    Predict {
        signatures: PathBuf,
        /// CSV `model,dataset,target`; classification falls back to each signature's label.
        #[arg(long, value_name = "PATH")]
        targets: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TaskArg::Classify)]
        task: TaskArg,
        #[arg(long, default_value_t = uts::learn::DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, value_enum, default_value_t = GroupBy::Dataset)]
        group_by: GroupBy,
        /// Project onto principal axes explaining this fraction of variance.
        #[arg(long, value_name = "FRACTION", conflicts_with = "components")]
        variance: Option<f64>,
        /// Project onto this many principal axes.
        #[arg(long)]
        components: Option<usize>,
        /// Use only these components, comma separated.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long, default_value_t = ForestParams::default().n_trees)]
        trees: usize,
        #[arg(long, default_value_t = ForestParams::default().max_depth)]
        depth: usize,
        /// Keep regression targets on their raw scale.
        #[arg(long)]
        raw_targets: bool,
    },
    /// Value and wall time of one descriptor across sample sizes.
    Sweep {
        input: InputSpec,
        #[arg(long)]
        descriptor: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Component correlations within groups, averaged across groups.
    Correlations {
        signatures: PathBuf,
        /// CSV `model,<property>,...` of per-model properties.
        #[arg(long, value_name = "PATH")]
        extras: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GroupBy::Dataset)]
        group_by: GroupBy,
    },
    /// Scale components by their maximum absolute value.
    Normalize {
        signatures: PathBuf,
        /// Apply a saved normalization instead of fitting one.
        #[arg(long, value_name = "PATH")]
        state: Option<PathBuf>,
    },
    /// Principal-component coordinates of a signature set.
    Reduce {
        signatures: PathBuf,
        #[arg(long, value_name = "FRACTION", conflicts_with = "components")]
        variance: Option<f64>,
        #[arg(long)]
        components: Option<usize>,
    },
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Signature { .. } => "signature",
            Verb::LocalSignature { .. } => "local-signature",
            Verb::Compare { .. } => "compare",
            Verb::Retrieve { .. } => "retrieve",
            Verb::Retrievability { .. } => "retrievability",
            Verb::Eval { .. } => "eval",
            Verb::Predict { .. } => "predict",
            Verb::Sweep { .. } => "sweep",
            Verb::Correlations { .. } => "correlations",
            Verb::Normalize { .. } => "normalize",
            Verb::Reduce { .. } => "reduce",
        }
    }
}

fn pca_target(variance: Option<f64>, components: Option<usize>) -> Result<Option<PcaTarget>> {
    Ok(match (variance, components) {
        (Some(f), _) if !(f > 0.0 && f <= 1.0) => {
            bail!(UtsError::Precondition(format!("variance fraction must lie in (0, 1], got {f}")))
        }
        (Some(f), _) => Some(PcaTarget::Variance(f)),
        (None, Some(0)) => bail!(UtsError::Precondition("components must be at least 1".into())),
        (None, Some(l)) => Some(PcaTarget::Components(l)),
        (None, None) => None,
    })
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let s = cli.shared;
    let cfg = RunConfig::resolve(&Overrides {
        config: s.config,
        out: s.out,
        seed: s.seed,
        metric: s.metric,
        desk_scale: s.desk_scale,
    })?;
    let verb = cli.verb.name();
    let done = match cli.verb {
        Verb::Signature { inputs } => commands::signature(&cfg, &inputs)?,
        Verb::LocalSignature { input, anchors, k } => {
            commands::local_signature(&cfg, &input, anchors.as_deref(), k)?
        }
        Verb::Compare { signatures } => commands::compare(&cfg, &signatures)?,
        Verb::Retrieve { queries, docs, cutoff, tag } => commands::retrieve(&cfg, &queries, &docs, cutoff, &tag)?,
        Verb::Retrievability { query_embeddings, docs, query_subset, cutoff, extremes, k } => {
            commands::retrievability_audit(
                &cfg,
                &RetrievabilityArgs {
                    queries: &query_embeddings,
                    docs: &docs,
                    query_subset: query_subset.as_deref(),
                    cutoff,
                    extremes,
                    k,
                },
            )?
        }
        Verb::Eval { run, qrels, cutoffs } => commands::eval(&cfg, &run, &qrels, &cutoffs)?,
        Verb::Predict {
            signatures,
            targets,
            task,
            folds,
            group_by,
            variance,
            components,
            features,
            trees,
            depth,
            raw_targets,
        } => {
            let forest = ForestParams {
                n_trees: trees,
                max_depth: depth,
                seed: cfg.seeds()[0],
                ..ForestParams::default()
            };
            commands::predict(
                &cfg,
                &PredictArgs {
                    signatures: &signatures,
                    targets: targets.as_deref(),
                    task,
                    folds,
                    group_by,
                    reduce: pca_target(variance, components)?,
                    features,
                    forest,
                    znormalize_targets: !raw_targets,
                },
            )?
        }
        Verb::Sweep { input, descriptor, sizes } => {
            let d: Descriptor = descriptor.parse()?;
            commands::sweep(&cfg, &input, d, &sizes)?
        }
        Verb::Correlations { signatures, extras, group_by } => {
            commands::correlations(&cfg, &signatures, extras.as_deref(), group_by)?
        }
        Verb::Normalize { signatures, state } => commands::normalize(&cfg, &signatures, state.as_deref())?,
        Verb::Reduce { signatures, variance, components } => {
            let target = pca_target(variance, components)?.unwrap_or_default();
            commands::reduce(&cfg, &signatures, target)?
        }
    };
    for path in done.finish(verb, &cfg, started)? {
        println!("{}", path.display());
    }
    Ok(())
}

/// 2 for input, format and schema problems; 3 for numerical failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<UtsError>())
        .map_or(2, |u| if u.is_input_error() { 2 } else { 3 })
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("UTS_THREADS") else {
        return Ok(());
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => bail!(UtsError::Precondition(format!("UTS_THREADS must be a positive integer, got `{v}`"))),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
