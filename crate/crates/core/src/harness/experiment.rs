use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, RankingMode};
use super::synthetic::generate_synthetic_logs;
use crate::datamodel::{io::write_jsonl, load_jsonl, CtrTable, Dataset, EncodedExample, Encoder, FeatureSchema};
use crate::datamodel::{ImpressionRecord, InteractionKind};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    auc_roc, mrr_at_k, pd_at_k, rank_all, relevant_sets, write_metrics, MetricRecord, PdOutcome, RankKey,
};
use crate::networks::{train, Checkpoint, Model, Task, TrainLog};
use crate::numerics::{component_rng, ParamStore};
use crate::pipeline::{label_dataset, stratified_sample, write_labels, LabelRecord, SampleReport};
use crate::textmatch::{
    product_document, EncoderCosineScorer, HashNgramScorer, ScorerVariant, SemanticScorer, TextEncoder, Vocabulary,
};

/// Appends timestamped stage lines to `run.log` and mirrors them to `log`.
pub struct RunLog {
    out: Option<BufWriter<File>>,
    start: Instant,
}

impl RunLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            out: Some(BufWriter::new(File::create(path)?)),
            start: Instant::now(),
        })
    }

    /// A log that only forwards to the `log` facade.
    pub fn console() -> Self {
        Self {
            out: None,
            start: Instant::now(),
        }
    }

    pub fn line(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        info!("{msg}");
        if let Some(w) = self.out.as_mut() {
            let _ = writeln!(w, "[{:>9.3}s] {msg}", self.start.elapsed().as_secs_f64());
            let _ = w.flush();
        }
    }
}

fn stage<T>(log: &mut RunLog, name: &'static str, f: impl FnOnce(&mut RunLog) -> Result<T>) -> Result<T> {
    log.line(format!("stage {name}: start"));
    let out = f(log).map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })?;
    log.line(format!("stage {name}: done"));
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the dataset's canonical JSONL rendering.
pub fn dataset_hash(ds: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(ds, &mut buf)?;
    Ok(sha256_hex(&buf))
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.data.impressions, &cfg.data.synthetic) {
        (Some(path), None) => {
            if !path.exists() {
                return Err(Error::Config(format!("impressions file {} does not exist", path.display())));
            }
            load_jsonl(path)
        }
        (None, Some(world)) => Ok(generate_synthetic_logs(world)?.dataset),
        _ => Err(Error::Config("exactly one data source must be set".into())),
    }
}

/// Dataset holding `impressions` and only the records they reference.
pub fn restrict(ds: &Dataset, impressions: Vec<ImpressionRecord>) -> Result<Dataset> {
    let mut out = Dataset {
        impressions,
        ..Default::default()
    };
    for imp in &out.impressions {
        if !out.queries.contains_key(&imp.query_id) {
            out.queries.insert(imp.query_id.clone(), ds.query(&imp.query_id)?.clone());
        }
        if !out.products.contains_key(&imp.product_id) {
            out.products.insert(imp.product_id.clone(), ds.product(&imp.product_id)?.clone());
        }
        if !out.customers.contains_key(&imp.customer_id) {
            out.customers.insert(imp.customer_id.clone(), ds.customer(&imp.customer_id)?.clone());
        }
    }
    Ok(out)
}

/// Splits by (query, customer) session so a session never straddles splits.
pub fn split_sessions(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
    let sessions: BTreeSet<(&str, &str)> = ds
        .impressions
        .iter()
        .map(|i| (i.query_id.as_str(), i.customer_id.as_str()))
        .collect();
    let mut order: Vec<(&str, &str)> = sessions.into_iter().collect();
    order.shuffle(&mut component_rng(seed, "split"));
    let n = order.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n.saturating_sub(n_train));
    if n_train == 0 || n_valid == 0 || n_train + n_valid >= n {
        return Err(Error::Data(format!(
            "{n} sessions cannot fill train/validation/test splits with fractions {fractions:?}"
        )));
    }
    let assign: BTreeMap<(&str, &str), usize> = order
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, usize::from(i >= n_train) + usize::from(i >= n_train + n_valid)))
        .collect();
    let mut parts: [Vec<ImpressionRecord>; 3] = Default::default();
    for imp in &ds.impressions {
        let s = assign[&(imp.query_id.as_str(), imp.customer_id.as_str())];
        parts[s].push(imp.clone());
    }
    let [a, b, c] = parts;
    Ok([restrict(ds, a)?, restrict(ds, b)?, restrict(ds, c)?])
}

/// Vocabulary over the query texts and product documents `ds` references.
pub fn build_vocabulary(ds: &Dataset, max_vocab: usize) -> Vocabulary {
    let mut corpus: Vec<String> = ds.queries.values().map(|q| q.text.clone()).collect();
    corpus.extend(ds.products.values().map(product_document));
    Vocabulary::build(corpus.iter().map(String::as_str), max_vocab)
}

pub fn build_scorer(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Box<dyn SemanticScorer>> {
    let sc = &cfg.features.scorer;
    sc.validate()?;
    Ok(match sc.variant {
        ScorerVariant::HashNgram => Box::new(HashNgramScorer::new(sc)?),
        ScorerVariant::EncoderCosine => {
            let mut store = ParamStore::new();
            let mut rng = component_rng(cfg.seed, "semantic_scorer");
            let encoder = TextEncoder::new(&mut store, &mut rng, "semantic", &cfg.model.text, vocab.len())?;
            Box::new(EncoderCosineScorer {
                encoder,
                store,
                vocab: vocab.clone(),
            })
        }
    })
}

/// Clicks per product, the popularity baseline's score.
pub fn click_counts(ds: &Dataset) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for imp in ds.impressions.iter().filter(|i| i.click) {
        *out.entry(imp.product_id.clone()).or_insert(0) += 1;
    }
    out
}

/// Encoded splits plus everything fitted on the training split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema: FeatureSchema,
    pub vocab: Vocabulary,
    pub train: Vec<EncodedExample>,
    pub valid: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    /// Training-split click counts per product, before sampling.
    pub popularity: BTreeMap<String, u64>,
    pub sample_report: Option<SampleReport>,
    /// Relevance labels derived from the training split.
    pub labels: Vec<LabelRecord>,
}

impl PreparedData {
    /// Copy with the semantic interaction slot masked (or unmasked) and its
    /// values zeroed when masked.
    pub fn with_semantic(&self, on: bool) -> PreparedData {
        let mut out = self.clone();
        out.schema.set_mask(InteractionKind::SemanticScore, !on);
        if !on {
            let slots: Vec<usize> = out
                .schema
                .interaction
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind == InteractionKind::SemanticScore)
                .map(|(i, _)| i)
                .collect();
            for e in out.train.iter_mut().chain(out.valid.iter_mut()).chain(out.test.iter_mut()) {
                for &i in &slots {
                    e.interaction[i] = 0.0;
                }
            }
        }
        out
    }
}

fn apply_labels(ds: &mut Dataset, labels: &[LabelRecord]) {
    let lookup: BTreeMap<(&str, &str), usize> = labels
        .iter()
        .map(|l| ((l.query_id.as_str(), l.product_id.as_str()), l.relevance_class))
        .collect();
    for imp in &mut ds.impressions {
        imp.relevance_class = lookup.get(&(imp.query_id.as_str(), imp.product_id.as_str())).copied();
    }
}

/// Load, split, sample, label and encode.
///
/// Relevance labels are computed when `cfg.relevance_task` is set. The
/// training split is labeled from its full (pre-sampling) click statistics;
/// validation and test are labeled from their own.
pub fn prepare(cfg: &ExperimentConfig, log: &mut RunLog) -> Result<PreparedData> {
    let ds = stage(log, "load", |log| {
        let ds = load_data(cfg)?;
        if ds.is_empty() {
            return Err(Error::Data("dataset has no impressions".into()));
        }
        log.line(format!(
            "loaded {} impressions, {} queries, {} products, {} customers; hash {}",
            ds.len(),
            ds.queries.len(),
            ds.products.len(),
            ds.customers.len(),
            dataset_hash(&ds)?
        ));
        Ok(ds)
    })?;
    let [train_full, mut valid, mut test] = stage(log, "split", |log| {
        let parts = split_sessions(&ds, cfg.data.split, cfg.seed)?;
        log.line(format!(
            "seed {}: split into {} / {} / {} impressions",
            cfg.seed,
            parts[0].len(),
            parts[1].len(),
            parts[2].len()
        ));
        Ok(parts)
    })?;
    drop(ds);
    let vocab = build_vocabulary(&train_full, cfg.features.max_vocab);
    let scorer = build_scorer(cfg, &vocab)?;
    let (mut train_ds, sample_report) = stage(log, "sample", |log| match &cfg.sampling {
        Some(s) => {
            let mut s = s.clone();
            s.seed = cfg.seed;
            log.line(format!("seed {}: sampling input hash {}", s.seed, dataset_hash(&train_full)?));
            let (sampled, report) = stratified_sample(&train_full, &s)?;
            report.reconcile(train_full.len())?;
            log.line(format!(
                "sampled {} of {} training impressions (shortfall {})",
                sampled.len(),
                train_full.len(),
                report.total_shortfall()
            ));
            Ok((restrict(&sampled, sampled.impressions.clone())?, Some(report)))
        }
        None => {
            log.line("no sampling configured; using the full training split");
            Ok((train_full.clone(), None))
        }
    })?;
    let labels = if cfg.relevance_task {
        stage(log, "label", |log| {
            log.line(format!("labeling input hash {}", dataset_hash(&train_full)?));
            let (_, labels) = label_dataset(&train_full, scorer.as_ref(), &cfg.relevance)?;
            apply_labels(&mut train_ds, &labels);
            valid = label_dataset(&valid, scorer.as_ref(), &cfg.relevance)?.0;
            test = label_dataset(&test, scorer.as_ref(), &cfg.relevance)?.0;
            log.line(format!("{} labeled training pairs", labels.len()));
            Ok(labels)
        })?
    } else {
        Vec::new()
    };
    stage(log, "encode", |log| {
        let schema = FeatureSchema::fit(&train_ds, &cfg.schema_options())?;
        let ctr = CtrTable::from_impressions(&train_full.impressions);
        let enc = |ds: &Dataset, leave_one_out: bool| {
            Encoder {
                schema: &schema,
                vocab: &vocab,
                ctr: &ctr,
                scorer: scorer.as_ref(),
                max_len: cfg.model.text.max_len,
                leave_one_out,
            }
            .encode_all(ds)
        };
        let train = enc(&train_ds, true)?;
        let valid = enc(&valid, false)?;
        let test = enc(&test, false)?;
        log.line(format!(
            "schema {} ({} categorical, {} continuous, {} user-specific); vocabulary {} tokens; input hash {}",
            schema.hash(),
            schema.categorical.len(),
            schema.continuous.len(),
            schema.user_specific_count(),
            vocab.len(),
            dataset_hash(&train_ds)?
        ));
        Ok(PreparedData {
            popularity: click_counts(&train_full),
            schema,
            vocab: vocab.clone(),
            train,
            valid,
            test,
            sample_report,
            labels,
        })
    })
}

/// Metrics of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: BTreeMap<Task, Option<f64>>,
    pub mrr: BTreeMap<Task, f64>,
    pub mrr_k: usize,
    pub pd: PdOutcome,
    pub pd_k: usize,
    pub sessions: usize,
    pub points: usize,
}

impl Evaluation {
    pub fn records(&self, seed: u64) -> Vec<MetricRecord> {
        let mut out: Vec<MetricRecord> = self
            .auc
            .iter()
            .map(|(t, v)| MetricRecord::auc(t.name(), *v, self.points, seed))
            .collect();
        out.extend(
            self.mrr
                .iter()
                .map(|(t, v)| MetricRecord::mrr(t.name(), self.mrr_k, *v, self.sessions, seed)),
        );
        out.push(MetricRecord::pd(self.pd_k, self.pd.value, self.pd.sessions, seed));
        out
    }

    /// Mean MRR over the binary tasks.
    pub fn mean_mrr(&self) -> f64 {
        self.mrr.values().sum::<f64>() / self.mrr.len().max(1) as f64
    }
}

/// Ranking key for `task` under the configured ranking mode.
pub fn rank_key(cfg: &ExperimentConfig, task: Task) -> RankKey {
    match cfg.eval.ranking {
        RankingMode::PerTask => RankKey::Task(task),
        RankingMode::Combined => {
            let m = cfg.model_config();
            RankKey::Combined(Task::BINARY.iter().filter_map(|&t| m.mmoe.weight(t).map(|w| (t, w))).collect())
        }
    }
}

fn binary_label(e: &EncodedExample, task: Task) -> f64 {
    match task {
        Task::Click => e.labels.click,
        Task::Atc => e.labels.atc,
        Task::Trx => e.labels.trx,
        Task::Relevance => 0.0,
    }
}

/// MRR@K of `scores` for `task`, plus the number of sessions.
pub fn mrr_of_scores(examples: &[EncodedExample], scores: &[f64], task: Task, k: usize) -> Result<(f64, usize)> {
    let rankings = rank_all(examples, scores)?;
    let relevant = relevant_sets(examples, task)?;
    Ok((mrr_at_k(&rankings, &relevant, k)?, rankings.len()))
}

/// PD@K of `model` over `examples`.
pub fn model_pd(model: &Model, examples: &[EncodedExample], schema: &FeatureSchema, cfg: &ExperimentConfig) -> Result<PdOutcome> {
    let key = rank_key(cfg, cfg.eval.pd.task);
    let score = |ex: &[EncodedExample]| key.scores(&model.predict(ex)?);
    let mut params = cfg.eval.pd.clone();
    params.seed = cfg.seed;
    pd_at_k(&score, examples, schema, &params)
}

/// AUC and MRR@K per binary task, and PD@K.
pub fn evaluate(model: &Model, examples: &[EncodedExample], schema: &FeatureSchema, cfg: &ExperimentConfig) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let preds = model.predict(examples)?;
    let mut auc = BTreeMap::new();
    let mut mrr = BTreeMap::new();
    let mut sessions = 0;
    for &t in Task::BINARY.iter().filter(|t| preds.probabilities.contains_key(t)) {
        let labels: Vec<f64> = examples.iter().map(|e| binary_label(e, t)).collect();
        auc.insert(t, auc_roc(preds.task(t)?, &labels)?);
        let scores = rank_key(cfg, t).scores(&preds)?;
        let (m, n) = mrr_of_scores(examples, &scores, t, cfg.eval.mrr_k)?;
        mrr.insert(t, m);
        sessions = n;
    }
    Ok(Evaluation {
        auc,
        mrr,
        mrr_k: cfg.eval.mrr_k,
        pd: model_pd(model, examples, schema, cfg)?,
        pd_k: cfg.eval.pd.k,
        sessions,
        points: examples.len(),
    })
}

/// Click MRR@K of the non-learned reference rankers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub popularity: f64,
    pub random: f64,
}

impl Baselines {
    pub fn records(&self, k: usize, sessions: usize, seed: u64) -> Vec<MetricRecord> {
        let mut p = MetricRecord::mrr("click", k, self.popularity, sessions, seed);
        p.metric = "mrr_popularity".into();
        let mut r = MetricRecord::mrr("click", k, self.random, sessions, seed);
        r.metric = "mrr_random".into();
        vec![p, r]
    }
}

pub fn baselines(examples: &[EncodedExample], popularity: &BTreeMap<String, u64>, k: usize, seed: u64) -> Result<Baselines> {
    let pop: Vec<f64> = examples
        .iter()
        .map(|e| popularity.get(&e.product_id).copied().unwrap_or(0) as f64)
        .collect();
    let mut rng = component_rng(seed, "random_baseline");
    let rnd: Vec<f64> = examples.iter().map(|_| rng.random::<f64>()).collect();
    Ok(Baselines {
        popularity: mrr_of_scores(examples, &pop, Task::Click, k)?.0,
        random: mrr_of_scores(examples, &rnd, Task::Click, k)?.0,
    })
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub auc_click: Option<f64>,
    pub auc_atc: Option<f64>,
    pub auc_trx: Option<f64>,
    pub mrr_click: Option<f64>,
    pub mrr_atc: Option<f64>,
    pub mrr_trx: Option<f64>,
    pub mrr_k: usize,
    pub weight_click: f64,
    pub weight_atc: f64,
    pub weight_trx: f64,
    pub weight_relevance: Option<f64>,
    pub pd: f64,
    pub pd_k: usize,
    /// Element count of every registered parameter tensor.
    pub parameters: usize,
    pub trainable_parameters: usize,
    pub wall_clock_seconds: f64,
}

impl ReportRow {
    pub fn new(name: &str, model: &Model, eval: &Evaluation, seconds: f64) -> Self {
        let w = |t: Task| model.network.config.mmoe.weight(t);
        Self {
            name: name.to_string(),
            auc_click: eval.auc.get(&Task::Click).copied().flatten(),
            auc_atc: eval.auc.get(&Task::Atc).copied().flatten(),
            auc_trx: eval.auc.get(&Task::Trx).copied().flatten(),
            mrr_click: eval.mrr.get(&Task::Click).copied(),
            mrr_atc: eval.mrr.get(&Task::Atc).copied(),
            mrr_trx: eval.mrr.get(&Task::Trx).copied(),
            mrr_k: eval.mrr_k,
            weight_click: w(Task::Click).unwrap_or(0.0),
            weight_atc: w(Task::Atc).unwrap_or(0.0),
            weight_trx: w(Task::Trx).unwrap_or(0.0),
            weight_relevance: w(Task::Relevance),
            pd: eval.pd.value,
            pd_k: eval.pd_k,
            parameters: model.parameter_census(),
            trainable_parameters: model.trainable_parameters(),
            wall_clock_seconds: seconds,
        }
    }
}

pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub row: ReportRow,
    pub evaluation: Evaluation,
    pub baselines: Baselines,
    pub train_log: TrainLog,
    pub out_dir: PathBuf,
}

/// Moves whatever a failed run left in `dir` under `dir/failed/` and records
/// the error there.
pub fn quarantine(dir: &Path, err: &Error) -> Result<PathBuf> {
    let failed = dir.join("failed");
    std::fs::create_dir_all(&failed)?;
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_name() != "failed" {
            std::fs::rename(entry.path(), failed.join(entry.file_name()))?;
        }
    }
    std::fs::write(failed.join("error.txt"), format!("{err}\n"))?;
    Ok(failed)
}

/// Builds a model for `cfg`, trains it on `data` and scores the test split.
/// If training diverges and `rescue` is given, the last good parameters are
/// saved there as a checkpoint before the error is returned.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    log: &mut RunLog,
    rescue: Option<&Path>,
) -> Result<(Model, TrainLog, Evaluation)> {
    let (model, train_log) = stage(log, "train", |log| {
        let mut model = Model::new(&data.schema, data.vocab.len(), &cfg.model_config(), cfg.seed)?;
        log.line(format!(
            "seed {}: {} parameters ({} trainable), {} train / {} valid examples",
            cfg.seed,
            model.parameter_census(),
            model.trainable_parameters(),
            data.train.len(),
            data.valid.len()
        ));
        let train_log = match train(&mut model, &data.train, &data.valid, &cfg.train, cfg.seed) {
            Err(e @ Error::Diverged { .. }) => {
                if let Some(path) = rescue {
                    Checkpoint {
                        model,
                        schema: data.schema.clone(),
                        vocab: data.vocab.clone(),
                        seed: cfg.seed,
                    }
                    .save(path)?;
                    log.line(format!("{e}; last good parameters saved to {}", path.display()));
                }
                return Err(e);
            }
            other => other?,
        };
        for e in &train_log.epochs {
            log.line(format!("epoch {}: train {:.6} valid {:.6}", e.epoch, e.train_loss, e.valid_loss));
        }
        Ok((model, train_log))
    })?;
    let eval = stage(log, "evaluate", |log| {
        let eval = evaluate(&model, &data.test, &data.schema, cfg)?;
        log.line(format!(
            "seed {}: test MRR@{} {:?}, PD@{} {:.4}",
            cfg.seed, eval.mrr_k, eval.mrr, eval.pd_k, eval.pd.value
        ));
        Ok(eval)
    })?;
    Ok((model, train_log, eval))
}

/// The full pipeline, persisting every artifact under `cfg.out_dir`.
///
/// Artifacts: `config.toml` (verbatim), `run.log`, `metrics.json`,
/// `baselines.json`, `report.csv`, `checkpoint.json`, `train_log.json`, and
/// `sample_report.csv` / `labels.jsonl` when those stages ran. On failure they
/// are moved to `failed/` next to an `error.txt`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    if dir.join("failed").exists() {
        std::fs::remove_dir_all(dir.join("failed"))?;
    }
    let result = run_in(cfg, &dir);
    if let Err(e) = &result {
        quarantine(&dir, e)?;
    }
    result
}

fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut log = RunLog::create(dir.join("run.log"))?;
    log.line(format!("experiment `{}` seed {}", cfg.name, cfg.seed));
    let data = prepare(cfg, &mut log)?;
    let (model, train_log, evaluation) = train_and_evaluate(cfg, &data, &mut log, Some(&dir.join("checkpoint.json")))?;
    let base = baselines(&data.test, &data.popularity, cfg.eval.mrr_k, cfg.seed)?;
    log.line(format!(
        "baselines: popularity MRR@{k} {:.4}, random MRR@{k} {:.4}",
        base.popularity,
        base.random,
        k = cfg.eval.mrr_k
    ));
    stage(&mut log, "persist", |_| {
        write_metrics(&evaluation.records(cfg.seed), dir.join("metrics.json"))?;
        write_metrics(&base.records(cfg.eval.mrr_k, evaluation.sessions, cfg.seed), dir.join("baselines.json"))?;
        std::fs::write(dir.join("train_log.json"), serde_json::to_string_pretty(&train_log)? + "\n")?;
        if let Some(r) = &data.sample_report {
            r.write_csv(dir.join("sample_report.csv"))?;
        }
        if cfg.relevance_task {
            write_labels(&data.labels, dir.join("labels.jsonl"))?;
        }
        Ok(())
    })?;
    let row = ReportRow::new(&cfg.name, &model, &evaluation, start.elapsed().as_secs_f64());
    stage(&mut log, "persist", |_| {
        write_report(std::slice::from_ref(&row), dir.join("report.csv"))?;
        Checkpoint {
            model,
            schema: data.schema.clone(),
            vocab: data.vocab.clone(),
            seed: cfg.seed,
        }
        .save(dir.join("checkpoint.json"))
    })?;
    log.line(format!("finished in {:.1}s", start.elapsed().as_secs_f64()));
    Ok(RunOutcome {
        row,
        evaluation,
        baselines: base,
        train_log,
        out_dir: dir.to_path_buf(),
    })
}
