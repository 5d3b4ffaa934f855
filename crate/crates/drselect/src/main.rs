use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use drselect::baselines;
use drselect::config::{build_pool, RunConfig};
use drselect::data::{self, DrId, DrRanking, Query, Run};
use drselect::evaluator;
use drselect::larmor::{Pool, Stage};
use drselect::llm::LlmError;
use drselect::retrieval::RetrievalError;
use drselect::rundir::{RunDir, StagedPipeline};

const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "drselect", about = "Dense retriever selection toolkit", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the pipeline seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads of all parallel sections.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Recomputes stages whose artifacts already exist.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one selection method end-to-end and writes its ranking file.
    Select {
        #[arg(long)]
        method: String,
        /// Applies score normalization to the QPP predictors that support it.
        #[arg(long)]
        normalize: bool,
        /// Real target queries (JSONL), required by the QPP baselines.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Reported-performance file for the msmarco method.
        #[arg(long)]
        perf: Option<PathBuf>,
    },
    /// Scores every ranking file in the output directory against ground truth.
    Evaluate {
        #[arg(long)]
        gt_qrels: PathBuf,
        #[arg(long)]
        queries: PathBuf,
    },
    /// Generates the pseudo-queries.
    GenQueries,
    /// Runs the pseudo-queries against every pool retriever.
    Retrieve,
    /// Fuses the per-retriever runs into per-query rankings.
    Fuse,
    /// Judges the fused rankings into pseudo-qrels.
    Judge,
    /// Setwise-reranks the fused rankings into reference lists.
    Rerank,
}

fn log(event: &str, fields: serde_json::Value) {
    let mut obj = serde_json::json!({ "event": event });
    if let (Some(dst), Some(src)) = (obj.as_object_mut(), fields.as_object()) {
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
    }
    eprintln!("{obj}");
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RetrievalError>() {
            if matches!(
                e,
                RetrievalError::BackendUnavailable { .. } | RetrievalError::AllQueriesFailed(_)
            ) {
                return EXIT_BACKEND;
            }
        }
        if matches!(cause.downcast_ref::<LlmError>(), Some(LlmError::Backend { .. })) {
            return EXIT_BACKEND;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code_for(&err);
            log("error", serde_json::json!({ "message": format!("{err:#}"), "exit_code": code }));
            ExitCode::from(code)
        }
    }
}

/// Everything a command needs, loaded once.
struct Context_ {
    config: RunConfig,
    output_dir: PathBuf,
    seed: u64,
}

impl Context_ {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| anyhow!("--config is required"))?;
        let mut config = RunConfig::from_file(path)?;
        if let Some(dir) = &cli.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(seed) = cli.seed {
            config.pipeline.seed = seed;
        }
        if let Some(workers) = cli.workers.or(config.workers) {
            // ignore the error when a pool was already installed (tests)
            let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
        }
        let output_dir = config.output_dir.clone();
        let seed = config.pipeline.seed;
        Ok(Context_ { config, output_dir, seed })
    }

    fn pool(&self, corpus: &drselect::data::Corpus) -> Result<Pool> {
        let manifest = self.config.load_pool_manifest()?;
        Ok(build_pool(&manifest, &self.config.pool, corpus)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Context_::load(&cli)?;
    match &cli.command {
        Command::Select { method, normalize, queries, perf } => {
            cmd_select(&ctx, cli.force, method, *normalize, queries.as_deref(), perf.as_deref())
        }
        Command::Evaluate { gt_qrels, queries } => cmd_evaluate(&ctx, gt_qrels, queries),
        Command::GenQueries => cmd_stage(&ctx, cli.force, StageCmd::GenQueries),
        Command::Retrieve => cmd_stage(&ctx, cli.force, StageCmd::Retrieve),
        Command::Fuse => cmd_stage(&ctx, cli.force, StageCmd::Fuse),
        Command::Judge => cmd_stage(&ctx, cli.force, StageCmd::Judge),
        Command::Rerank => cmd_stage(&ctx, cli.force, StageCmd::Rerank),
    }
}

fn pipeline_stage(method: &str) -> Option<Stage> {
    match method {
        "larmor" => Some(Stage::Full),
        "q" => Some(Stage::Q),
        "qf" => Some(Stage::Qf),
        "qfj" => Some(Stage::Qfj),
        "qfr" => Some(Stage::Qfr),
        _ => None,
    }
}

fn cmd_select(
    ctx: &Context_,
    force: bool,
    method: &str,
    normalize: bool,
    queries_flag: Option<&Path>,
    perf_flag: Option<&Path>,
) -> Result<()> {
    let corpus = ctx.config.load_corpus()?;
    let pool = ctx.pool(&corpus)?;
    let dir = RunDir::new(&ctx.output_dir);
    log("select_start", serde_json::json!({ "method": method, "seed": ctx.seed }));

    let ranking = if let Some(stage) = pipeline_stage(method) {
        let mut pipeline_cfg = ctx.config.pipeline.clone();
        pipeline_cfg.stage = stage;
        let backend = ctx.config.llm.build();
        let staged = StagedPipeline {
            corpus: &corpus,
            pool: &pool,
            config: &pipeline_cfg,
            backend: &backend,
            dir: dir.clone(),
            force,
        };
        staged.select()?
    } else {
        let mut qpp = ctx.config.qpp;
        qpp.normalize = qpp.normalize || normalize;
        let ranking = run_baseline(ctx, method, &corpus, &pool, &qpp, queries_flag, perf_flag)?;
        dir.save_ranking(&ranking, method)?;
        ranking
    };

    log(
        "select_done",
        serde_json::json!({
            "method": method,
            "selected": ranking.top(),
            "ranking_file": dir.ranking_path(&ranking_file_name(method)),
        }),
    );
    println!(
        "{}: selected {}",
        method,
        ranking.top().unwrap_or("<none>")
    );
    for (i, (dr_id, score)) in ranking.entries.iter().enumerate() {
        println!("  {:>3}. {} ({})", i + 1, dr_id, score);
    }
    Ok(())
}

fn ranking_file_name(method: &str) -> String {
    // the pipeline stages write their own canonical file names
    match method {
        "larmor" | "q" | "qf" | "qfj" | "qfr" => method.to_string(),
        other => other.to_string(),
    }
}

fn real_queries(ctx: &Context_, method: &str, flag: Option<&Path>) -> Result<Vec<Query>> {
    let text = match flag {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("cannot read queries file {}", path.display()))?,
        None => match &ctx.config.queries {
            Some(path) => std::fs::read_to_string(path)
                .with_context(|| format!("cannot read queries file {}", path.display()))?,
            None => bail!("method {method} requires real queries; pass --queries"),
        },
    };
    let queries = data::load_queries(&text)?;
    if queries.is_empty() {
        bail!("queries file is empty");
    }
    Ok(queries)
}

/// Runs every pool retriever over the real queries at the QPP depth.
fn pool_runs(pool: &Pool, queries: &[Query], top_k: usize) -> Result<BTreeMap<DrId, Run>> {
    let mut runs = BTreeMap::new();
    for (dr_id, backend) in pool {
        let outcome = backend.batch_search(queries, top_k)?;
        for (qid, reason) in &outcome.failures {
            log(
                "query_failed",
                serde_json::json!({ "dr_id": dr_id, "query_id": qid, "reason": reason }),
            );
        }
        let mut run = Run::new(dr_id.clone());
        for (qid, list) in outcome.results {
            run.insert_query(qid, list.entries);
        }
        runs.insert(dr_id.clone(), run);
    }
    Ok(runs)
}

fn run_baseline(
    ctx: &Context_,
    method: &str,
    corpus: &drselect::data::Corpus,
    pool: &Pool,
    qpp: &baselines::QppConfig,
    queries_flag: Option<&Path>,
    perf_flag: Option<&Path>,
) -> Result<DrRanking> {
    match method {
        "msmarco" => {
            let perf = match perf_flag {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read perf file {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("invalid perf json in {}", path.display()))?
                }
                None => ctx
                    .config
                    .load_msmarco_perf()?
                    .ok_or_else(|| anyhow!("method msmarco requires --perf"))?,
            };
            let ids: Vec<DrId> = pool.keys().cloned().collect();
            Ok(baselines::msmarco_perf(&perf, &ids)?)
        }
        "alteration" => {
            let queries = real_queries(ctx, method, queries_flag)?;
            Ok(baselines::query_alteration(pool, &queries, qpp, ctx.seed)?)
        }
        "entropy" | "wig" | "nqc" | "smv" | "sigma" | "sigma-max" | "clarity" | "qpp-fusion" => {
            let queries = real_queries(ctx, method, queries_flag)?;
            let runs = pool_runs(pool, &queries, qpp.top_k)?;
            let ranking = match method {
                "entropy" => baselines::binary_entropy(&runs, qpp)?,
                "wig" => baselines::wig(&runs, qpp)?,
                "nqc" => baselines::nqc(&runs, qpp)?,
                "smv" => baselines::smv(&runs, qpp)?,
                "sigma" => baselines::sigma(&runs, qpp)?,
                "sigma-max" => baselines::sigma_max(&runs, qpp)?,
                "clarity" => baselines::clarity(&runs, corpus, qpp)?,
                "qpp-fusion" => baselines::qpp_fusion(
                    &runs,
                    ctx.config.pipeline.k_rrf,
                    ctx.config.pipeline.rbo_p,
                )?,
                _ => unreachable!(),
            };
            Ok(ranking)
        }
        other => bail!(
            "unknown method {other:?}; expected one of larmor, q, qf, qfj, qfr, msmarco, \
             entropy, alteration, wig, nqc, smv, sigma, sigma-max, clarity, qpp-fusion"
        ),
    }
}

fn cmd_evaluate(ctx: &Context_, gt_qrels: &Path, queries_path: &Path) -> Result<()> {
    let corpus = ctx.config.load_corpus()?;
    let pool = ctx.pool(&corpus)?;
    let qrels_text = std::fs::read_to_string(gt_qrels)
        .with_context(|| format!("cannot read qrels {}", gt_qrels.display()))?;
    let (qrels, overwritten) = data::parse_qrels(&qrels_text)?;
    if overwritten > 0 {
        log("qrels_overwrites", serde_json::json!({ "count": overwritten }));
    }
    let queries_text = std::fs::read_to_string(queries_path)
        .with_context(|| format!("cannot read queries {}", queries_path.display()))?;
    let queries = data::load_queries(&queries_text)?;
    let runs = pool_runs(&pool, &queries, ctx.config.qpp.top_k)?;
    let gt = evaluator::ground_truth(&runs, &qrels, &ctx.config.pipeline.measure)?;

    let dir = RunDir::new(&ctx.output_dir);
    let mut ranking_files: Vec<PathBuf> = std::fs::read_dir(&ctx.output_dir)
        .with_context(|| format!("cannot read output dir {}", ctx.output_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("ranking_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    ranking_files.sort();
    if ranking_files.is_empty() {
        bail!("no ranking_*.json files found in {}", ctx.output_dir.display());
    }

    let collection = corpus.name.clone();
    let mut report = evaluator::Report::default();
    for path in &ranking_files {
        let ranking = dir.load_ranking(path)?;
        let result = evaluator::evaluate_method(&ranking, &gt)?;
        log(
            "method_evaluated",
            serde_json::json!({
                "method": ranking.method_id,
                "kendall_tau": result.kendall_tau,
                "delta_e": result.delta_e,
                "selected": result.selected,
            }),
        );
        report.insert(ranking.method_id.clone(), collection.clone(), result);
    }
    std::fs::write(ctx.output_dir.join("report.csv"), evaluator::emit_csv(&report)?)?;
    std::fs::write(ctx.output_dir.join("report.json"), evaluator::emit_json(&report)?)?;
    std::fs::write(ctx.output_dir.join("report.md"), evaluator::emit_markdown(&report)?)?;
    log(
        "evaluate_done",
        serde_json::json!({ "methods": ranking_files.len(), "collection": collection }),
    );
    println!("evaluated {} ranking files; reports written to {}", ranking_files.len(), ctx.output_dir.display());
    Ok(())
}

enum StageCmd {
    GenQueries,
    Retrieve,
    Fuse,
    Judge,
    Rerank,
}

fn cmd_stage(ctx: &Context_, force: bool, stage: StageCmd) -> Result<()> {
    let corpus = ctx.config.load_corpus()?;
    let pool = ctx.pool(&corpus)?;
    let backend = ctx.config.llm.build();
    let dir = RunDir::new(&ctx.output_dir);
    let staged = StagedPipeline {
        corpus: &corpus,
        pool: &pool,
        config: &ctx.config.pipeline,
        backend: &backend,
        dir: dir.clone(),
        force,
    };
    match stage {
        StageCmd::GenQueries => {
            let queries = staged.ensure_queries()?;
            log("gen_queries_done", serde_json::json!({ "count": queries.len() }));
            println!("{} pseudo-queries in {}", queries.len(), dir.queries_path().display());
        }
        StageCmd::Retrieve => {
            let queries = dir
                .load_queries()?
                .ok_or_else(|| anyhow!("missing queries.jsonl; run gen-queries first"))?;
            let runs = staged.ensure_runs(&queries)?;
            log("retrieve_done", serde_json::json!({ "retrievers": runs.len() }));
            println!("{} runs in {}", runs.len(), dir.root.join("runs").display());
        }
        StageCmd::Fuse => {
            let queries = dir
                .load_queries()?
                .ok_or_else(|| anyhow!("missing queries.jsonl; run gen-queries first"))?;
            let runs = dir
                .load_runs(&pool)?
                .ok_or_else(|| anyhow!("missing per-retriever runs; run retrieve first"))?;
            let fused = staged.ensure_fused(&queries, &runs)?;
            log("fuse_done", serde_json::json!({ "queries": fused.len() }));
            println!("fused rankings in {}", dir.fused_path().display());
        }
        StageCmd::Judge => {
            let queries = dir
                .load_queries()?
                .ok_or_else(|| anyhow!("missing queries.jsonl; run gen-queries first"))?;
            let fused = dir
                .load_fused()?
                .ok_or_else(|| anyhow!("missing fused.trec; run fuse first"))?;
            let qrels = staged.ensure_pseudo_qrels(&queries, &fused)?;
            log("judge_done", serde_json::json!({ "queries": qrels.judgments.len() }));
            println!("pseudo-qrels in {}", dir.qrels_path().display());
        }
        StageCmd::Rerank => {
            let queries = dir
                .load_queries()?
                .ok_or_else(|| anyhow!("missing queries.jsonl; run gen-queries first"))?;
            let fused = dir
                .load_fused()?
                .ok_or_else(|| anyhow!("missing fused.trec; run fuse first"))?;
            let lists = staged.ensure_reference_lists(&queries, &fused)?;
            log("rerank_done", serde_json::json!({ "queries": lists.len() }));
            println!("reference lists in {}", dir.reference_lists_path().display());
        }
    }
    Ok(())
}
