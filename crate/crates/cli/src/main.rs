//! `searchrank`: batch experiments over synthetic or recorded click logs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::error;

use searchrank::datamodel::save_jsonl;
use searchrank::evalmetrics::{write_metrics, MetricRecord};
use searchrank::harness::{
    ablate, baselines, build_scorer, build_vocabulary, evaluate, generate_synthetic_logs, grid_search_weights,
    load_data, model_pd, prepare, run_experiment, write_report, ExperimentConfig, PreparedData, ReportRow, RunLog,
};
use searchrank::networks::Checkpoint;
use searchrank::pipeline::{label_dataset, stratified_sample, write_labels};
use searchrank::{Error, Result};

#[derive(Parser)]
#[command(name = "searchrank", version, about = "Multi-task product-search ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); copied verbatim into the output directory
    #[arg(short, long)]
    config: PathBuf,

    /// Output directory, overriding `out_dir` from the config
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic click logs and their ground-truth ranking
    Gen(Common),
    /// Stratified down-sampling of the impression log
    Sample(Common),
    /// Click-derived relevance labels for every query-product pair
    Label(Common),
    /// Full pipeline: sample, label, encode, train, evaluate, persist
    Train(Common),
    /// Evaluate a checkpoint on the test split the config defines
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file (default: <out>/checkpoint.json)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Personalization degree PD@K of a checkpoint
    Pd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cutoff, overriding `eval.pd.k`
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// The semantic x matching x relevance ablation matrix
    Ablate(Common),
    /// Grid search over the click/ATC/TRX loss weights
    Grid {
        #[command(flatten)]
        common: Common,
        /// Grid step, overriding `grid.step`
        #[arg(long)]
        step: Option<f64>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c) | Command::Sample(c) | Command::Label(c) | Command::Train(c) | Command::Ablate(c) => c,
            Command::Eval { common, .. } | Command::Pd { common, .. } | Command::Grid { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Creates the output directory, copies the config and opens `<name>.log`.
fn start(cfg: &ExperimentConfig, name: &str) -> Result<RunLog> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut log = RunLog::create(cfg.out_dir.join(format!("{name}.log")))?;
    log.line(format!("{name}: experiment `{}` seed {}", cfg.name, cfg.seed));
    Ok(log)
}

fn run(command: &Command) -> Result<()> {
    let cfg = load_config(command.common())?;
    match command {
        Command::Gen(_) => gen(&cfg),
        Command::Sample(_) => sample(&cfg),
        Command::Label(_) => label(&cfg),
        Command::Train(_) => {
            let out = run_experiment(&cfg)?;
            println!("{}", summary(&out.row));
            println!(
                "baselines: popularity MRR@{k} {:.4}, random MRR@{k} {:.4}",
                out.baselines.popularity,
                out.baselines.random,
                k = out.row.mrr_k
            );
            println!("artifacts in {}", out.out_dir.display());
            Ok(())
        }
        Command::Eval { checkpoint, .. } => eval(&cfg, checkpoint.as_deref()),
        Command::Pd { checkpoint, k, .. } => pd(cfg, checkpoint.as_deref(), *k),
        Command::Ablate(_) => {
            let res = ablate(&cfg)?;
            for (_, row) in &res.rows {
                println!("{}", summary(row));
            }
            for d in res.deltas.iter().filter(|d| d.metric.starts_with("mrr")) {
                println!("{:<13} {:<18} {:<10} {}", d.contrast, d.variant, d.metric, d.formatted);
            }
            println!("ablation tables in {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Grid { step, .. } => {
            let res = grid_search_weights(&cfg, step.unwrap_or(cfg.grid.step))?;
            let best = &res.rows[res.best];
            println!(
                "{} grid points; best weights {:?} with mean validation MRR@{} {:.4}",
                res.rows.len(),
                best.weights(),
                cfg.eval.mrr_k,
                best.mrr_mean
            );
            Ok(())
        }
    }
}

fn summary(row: &ReportRow) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "{}: AUC click/atc/trx {}/{}/{}  MRR@{} {}/{}/{}  PD@{} {:.4}  params {}",
        row.name,
        f(row.auc_click),
        f(row.auc_atc),
        f(row.auc_trx),
        row.mrr_k,
        f(row.mrr_click),
        f(row.mrr_atc),
        f(row.mrr_trx),
        row.pd_k,
        row.pd,
        row.parameters
    )
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let world = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("`gen` needs a [data.synthetic] section".into()))?;
    let mut log = start(cfg, "gen")?;
    let logs = generate_synthetic_logs(world)?;
    logs.save(&cfg.out_dir)?;
    log.line(format!(
        "{} impressions over {} queries, {} products, {} customers",
        logs.dataset.len(),
        logs.dataset.queries.len(),
        logs.dataset.products.len(),
        logs.dataset.customers.len()
    ));
    println!("wrote {}", cfg.out_dir.join("impressions.jsonl").display());
    Ok(())
}

fn sample(cfg: &ExperimentConfig) -> Result<()> {
    let mut log = start(cfg, "sample")?;
    let ds = load_data(cfg)?;
    let mut sampling = cfg.sampling.clone().unwrap_or_default();
    sampling.seed = cfg.seed;
    let (sampled, report) = stratified_sample(&ds, &sampling)?;
    report.reconcile(ds.len())?;
    save_jsonl(&sampled, cfg.out_dir.join("sampled.jsonl"))?;
    report.write_csv(cfg.out_dir.join("sample_report.csv"))?;
    log.line(format!(
        "kept {} of {} impressions in {} bins (shortfall {})",
        report.total_sampled(),
        ds.len(),
        report.bins.len(),
        report.total_shortfall()
    ));
    println!("wrote {}", cfg.out_dir.join("sampled.jsonl").display());
    Ok(())
}

fn label(cfg: &ExperimentConfig) -> Result<()> {
    let mut log = start(cfg, "label")?;
    let ds = load_data(cfg)?;
    let vocab = build_vocabulary(&ds, cfg.features.max_vocab);
    let scorer = build_scorer(cfg, &vocab)?;
    let (labeled, labels) = label_dataset(&ds, scorer.as_ref(), &cfg.relevance)?;
    write_labels(&labels, cfg.out_dir.join("labels.jsonl"))?;
    save_jsonl(&labeled, cfg.out_dir.join("labeled.jsonl"))?;
    log.line(format!("{} query-product pairs in {} classes", labels.len(), cfg.relevance.classes));
    println!("wrote {}", cfg.out_dir.join("labels.jsonl").display());
    Ok(())
}

/// Loads a checkpoint and re-derives the data the config defines, refusing a
/// schema that differs from the one the model was trained on.
fn checkpointed(cfg: &ExperimentConfig, path: Option<&Path>, log: &mut RunLog) -> Result<(Checkpoint, PreparedData)> {
    let path = path.map_or_else(|| cfg.out_dir.join("checkpoint.json"), Path::to_path_buf);
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    let data = prepare(cfg, log)?;
    if data.schema.hash() != ckpt.schema.hash() {
        return Err(Error::Config(format!(
            "{} was trained on a different feature schema than this config produces",
            path.display()
        )));
    }
    log.line(format!("checkpoint {} (seed {})", path.display(), ckpt.seed));
    Ok((ckpt, data))
}

fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let start_time = Instant::now();
    let mut log = start(cfg, "eval")?;
    let (ckpt, data) = checkpointed(cfg, checkpoint, &mut log)?;
    let evaluation = evaluate(&ckpt.model, &data.test, &data.schema, cfg)?;
    let base = baselines(&data.test, &data.popularity, cfg.eval.mrr_k, cfg.seed)?;
    write_metrics(&evaluation.records(cfg.seed), cfg.out_dir.join("metrics.json"))?;
    write_metrics(
        &base.records(cfg.eval.mrr_k, evaluation.sessions, cfg.seed),
        cfg.out_dir.join("baselines.json"),
    )?;
    let row = ReportRow::new(&cfg.name, &ckpt.model, &evaluation, start_time.elapsed().as_secs_f64());
    write_report(std::slice::from_ref(&row), cfg.out_dir.join("report.csv"))?;
    log.line(summary(&row));
    println!("{}", summary(&row));
    Ok(())
}

fn pd(mut cfg: ExperimentConfig, checkpoint: Option<&Path>, k: Option<usize>) -> Result<()> {
    if let Some(k) = k {
        cfg.eval.pd.k = k;
        cfg.validate()?;
    }
    let mut log = start(&cfg, "pd")?;
    let (ckpt, data) = checkpointed(&cfg, checkpoint, &mut log)?;
    let out = model_pd(&ckpt.model, &data.test, &data.schema, &cfg)?;
    let record = MetricRecord::pd(cfg.eval.pd.k, out.value, out.sessions, cfg.seed);
    write_metrics(std::slice::from_ref(&record), cfg.out_dir.join("pd.json"))?;
    log.line(format!("PD@{} {:.4} over {} sessions", cfg.eval.pd.k, out.value, out.sessions));
    println!("PD@{} {:.4} over {} sessions", cfg.eval.pd.k, out.value, out.sessions);
    Ok(())
}
