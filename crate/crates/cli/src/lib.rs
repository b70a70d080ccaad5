//! The `logit-uq` command-line pipeline:
//! `generate -> metrics -> summarize -> report -> tsne -> operating-points`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use logit_uq::analysis::{
    check_grid, normalize_per_model_metric, operating_points, pearson_correlations, summary_stats,
    Constraint, MetricCell,
};
use logit_uq::decoder::{sweep, GenerationContext};
use logit_uq::embedding::{farthest_point_subset, tsne_fit, TsneParams};
use logit_uq::metrics::{mean_and_population_std, pairwise_metrics, MetricId, RunGroup};
use logit_uq::store::{self, RunManifest, MANIFEST_FILE};
use logit_uq::{Error, Result};
use rayon::prelude::*;

pub const JOBS_ENV: &str = "LOGIT_UQ_JOBS";

#[derive(Debug, Parser)]
#[command(name = "logit-uq", version, about = "Logit-level uncertainty quantification pipeline")]
pub struct Cli {
    /// Worker threads; every output is identical for any value.
    #[arg(long, short = 'j', global = true, env = JOBS_ENV, default_value_t = 1,
          value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: u32,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(long, short = 'q', global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the generation sweep into a run directory (resumable).
    Generate(GenerateArgs),
    /// Compute pairwise metrics for every record group and write cells.csv.
    Metrics(MetricsArgs),
    /// Normalize cells and write summary.csv and correlations.csv.
    Summarize(CellsArgs),
    /// Write one figure-data CSV per metric.
    Report(ReportArgs),
    /// Project an embeddings CSV to 2D with t-SNE.
    Tsne(TsneArgs),
    /// Find the highest safe temperature per model and question.
    OperatingPoints(OperatingPointsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output run directory.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Manifest-shaped JSON grid; defaults to the built-in desk grid.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Run directory produced by `generate`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Output path [default: <run-dir>/cells.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CellsArgs {
    /// Input cells.csv.
    #[arg(long)]
    pub cells: PathBuf,
    /// Output directory [default: the directory holding cells.csv].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub io: CellsArgs,
    /// Restrict output to these metrics (repeatable) [default: all four].
    #[arg(long)]
    pub metric: Vec<MetricId>,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    /// Input CSV: id, then one column per dimension.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Output projection CSV (id, x, y, selected).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mark a farthest-point subset of this size as selected.
    #[arg(long)]
    pub select: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OperatingPointsArgs {
    #[command(flatten)]
    pub io: CellsArgs,
    /// Constraint on a normalized metric, `metric:op:value` with op one of
    /// >=, >, <=, < (or ge, gt, le, lt). Repeatable; all must hold.
    #[arg(long, required = true)]
    pub constraint: Vec<Constraint>,
}

pub fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs as usize)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Tsne(a) => cmd_tsne(&a),
        Command::OperatingPoints(a) => cmd_operating_points(&a),
    })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::desk_default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let report = sweep(&config, &args.run_dir)?;
    println!(
        "{} records in {} ({} generated, {} already present)",
        report.total,
        args.run_dir.display(),
        report.generated,
        report.skipped
    );
    Ok(())
}

/// Pairwise values of one (model, image, question, temperature) group, by
/// metric, or `None` when the group was skipped.
fn group_values(run_dir: &Path, manifest: &RunManifest, contexts: &[GenerationContext]) -> Result<Option<[Vec<f64>; 4]>> {
    let runs = contexts
        .iter()
        .map(|c| {
            let path = store::join_relative(run_dir, &manifest.record_path(c));
            Ok(store::read_record(path)?.tensor.cast::<f64>())
        })
        .collect::<Result<Vec<_>>>()?;
    let ctx = &contexts[0];
    let group = RunGroup {
        temperature: ctx.temperature,
        runs,
    };
    match pairwise_metrics(&group) {
        Ok(g) => Ok(Some(MetricId::ALL.map(|m| {
            g.get(m).pairs.iter().map(|p| p.value).collect()
        }))),
        Err(e @ (Error::InsufficientRuns(_) | Error::EmptyGeneration)) => {
            log::warn!(
                "skipping {}/{}/{}/T={}: {e}",
                ctx.model,
                ctx.image,
                ctx.question,
                ctx.temperature
            );
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Raw cells for a completed run directory, pooling the pairs of every image
/// into one cell per (model, question, temperature, metric). Cells are
/// ordered by model, question, temperature and metric; normalized values are
/// filled in.
pub fn compute_cells(run_dir: &Path) -> Result<Vec<MetricCell>> {
    let manifest = RunManifest::load(run_dir.join(MANIFEST_FILE))?;
    if !manifest.is_complete() {
        return Err(Error::IncompleteGrid(format!(
            "{} lists unfinished records; rerun generate",
            run_dir.display()
        )));
    }
    let contexts = manifest.contexts();
    let n = manifest.repeats as usize;
    let groups: Vec<&[GenerationContext]> = contexts.chunks(n).collect();
    let values = groups
        .par_iter()
        .map(|g| group_values(run_dir, &manifest, g))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for model in &manifest.models {
        for q in &manifest.questions {
            for &t in &manifest.temperatures {
                let pooled: Vec<&[Vec<f64>; 4]> = groups
                    .iter()
                    .zip(&values)
                    .filter(|(g, _)| g[0].model == model.id && g[0].question == q.id && g[0].temperature == t)
                    .filter_map(|(_, v)| v.as_ref())
                    .collect();
                if pooled.is_empty() {
                    continue;
                }
                for metric in MetricId::ALL {
                    let all = pooled.iter().flat_map(|v| v[metric.index()].iter().copied());
                    let (mean, std) = mean_and_population_std(all.clone());
                    cells.push(MetricCell {
                        model: model.id.clone(),
                        question: q.id,
                        temperature: t,
                        metric,
                        raw_mean: mean,
                        raw_std: std,
                        normalized_mean: None,
                        pair_count: all.count(),
                    });
                }
            }
        }
    }
    Ok(normalize_per_model_metric(&cells)?.cells)
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let cells = compute_cells(&args.run_dir)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run_dir.join("cells.csv"));
    store::export_cells(&out, &cells)?;
    println!("{} cells written to {}", cells.len(), out.display());
    Ok(())
}

fn out_dir(args: &CellsArgs) -> PathBuf {
    args.out_dir.clone().unwrap_or_else(|| {
        args.cells
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    })
}

/// Cells with normalization recomputed from the raw values.
fn load_normalized(path: &Path) -> Result<Vec<MetricCell>> {
    let cells = store::import_cells(path)?;
    check_grid(&cells)?;
    Ok(normalize_per_model_metric(&cells)?.cells)
}

pub fn cmd_summarize(args: &CellsArgs) -> Result<()> {
    let cells = load_normalized(&args.cells)?;
    let rows = summary_stats(&cells)?;
    let corr = pearson_correlations(&cells)?;
    let dir = out_dir(args);
    store::export_summary(dir.join("summary.csv"), &rows)?;
    store::export_correlations(dir.join("correlations.csv"), &corr)?;
    println!("{corr}");
    Ok(())
}

/// Figure CSVs take `normalized_mean` from the file as written; only cells
/// without one are normalized from raw values.
pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut cells = store::import_cells(&args.io.cells)?;
    if cells.iter().any(|c| c.normalized_mean.is_none()) {
        cells = normalize_per_model_metric(&cells)?.cells;
    }
    if !args.metric.is_empty() {
        cells.retain(|c| args.metric.contains(&c.metric));
        if cells.is_empty() {
            return Err(Error::InvalidInput("no cells carry the requested metrics".into()));
        }
    }
    let files = store::export_figure_data(out_dir(&args.io), &cells)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

pub fn cmd_tsne(args: &TsneArgs) -> Result<()> {
    let set = store::import_embeddings(&args.embeddings)?;
    let params = TsneParams {
        perplexity: args.perplexity,
        iterations: args.iterations,
        seed: args.seed,
        ..TsneParams::default()
    };
    let proj = tsne_fit(&set, &params)?;
    let selected = match args.select {
        Some(k) => farthest_point_subset(&set, k, 0)?,
        None => Vec::new(),
    };
    store::export_projection(&args.out, &proj, &selected)?;
    println!(
        "{} points projected, final KL {:.6}",
        proj.len(),
        proj.kl_final
    );
    Ok(())
}

pub fn cmd_operating_points(args: &OperatingPointsArgs) -> Result<()> {
    let cells = load_normalized(&args.io.cells)?;
    let points = operating_points(&cells, &args.constraint)?;
    store::export_operating_points(out_dir(&args.io).join("operating_points.csv"), &points)?;
    for p in &points {
        let t = p
            .max_safe_temperature
            .map_or("none".to_string(), |t| t.to_string());
        println!("{}/{}: {t}", p.model, p.question);
    }
    Ok(())
}
