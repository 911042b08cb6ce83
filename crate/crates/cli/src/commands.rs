use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use carca_core::config::{ablation_name, Features, RunConfig};
use carca_core::data::{derive_rng, sample_negatives, ItemCatalog, SplitBundle};
use carca_core::evaluation::{evaluate, MetricSet, ModelScorer, Protocol, RankingReport};
use carca_core::model::{load_checkpoint, save_checkpoint, Model, ModelError};
use carca_core::training::{dims_for, train_step, train_with, OptimizerState, TrainOutcome, TrainingError};
use serde::Serialize;

use crate::error::{io_err, CliError};
use crate::prepared::{Prepared, STATS_FILE};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LAST_GOOD_FILE: &str = "model.last_good.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Catalog restricted to what the config's feature toggles allow.
fn catalog_for(prepared: &Prepared, cfg: &RunConfig) -> Result<ItemCatalog, CliError> {
    let catalog = prepared.catalog()?;
    if cfg.features.use_attributes && catalog.attr_dim() == 0 {
        return Err(CliError::Usage("features.use_attributes is on but the prepared data has no attributes; rerun prepare".into()));
    }
    Ok(if cfg.features.use_attributes { catalog } else { catalog.strip_attributes() })
}

pub fn prepare(cfg: &RunConfig) -> Result<String, CliError> {
    let prepared = Prepared::from_config(cfg)?;
    prepared.save(&cfg.paths.output_dir)?;
    let name = cfg.paths.interactions.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let table = prepared.stats.table(name);
    write_file(&cfg.paths.output_dir.join(STATS_FILE), &table)?;
    Ok(table)
}

fn run_training(cfg: &RunConfig, prepared: &Prepared, quiet: bool) -> Result<(TrainOutcome, SplitBundle, ItemCatalog), CliError> {
    let hp = cfg.effective_hyper()?;
    let catalog = catalog_for(prepared, cfg)?;
    let bundle = prepared.splits(hp.max_len)?;
    let mut observer = |r: &carca_core::training::EpochRecord| {
        if !quiet && r.val_ndcg.is_some() {
            eprintln!("epoch {:>4}  loss {:>12.4}  val NDCG@10 {:.4}", r.epoch, r.loss, r.val_ndcg.unwrap_or_default());
        }
    };
    let outcome = train_with(&bundle, &catalog, &hp, &cfg.train, &mut observer)?;
    Ok((outcome, bundle, catalog))
}

pub fn train(cfg: &RunConfig) -> Result<String, CliError> {
    let prepared = Prepared::load(&cfg.paths.output_dir)?;
    let out_dir = &cfg.paths.output_dir;
    let outcome = match run_training(cfg, &prepared, false) {
        Err(CliError::Training(TrainingError::Diverged { epoch, reason, last_good })) => {
            save_checkpoint(&last_good, &out_dir.join(LAST_GOOD_FILE))?;
            return Err(CliError::Training(TrainingError::Diverged { epoch, reason, last_good }));
        }
        other => other?.0,
    };
    save_checkpoint(&outcome.model, &out_dir.join(CHECKPOINT_FILE))?;
    let mut history = String::new();
    for record in &outcome.history {
        history.push_str(&serde_json::to_string(record).expect("record serializes"));
        history.push('\n');
    }
    write_file(&out_dir.join(HISTORY_FILE), &history)?;
    let last = outcome.history.last().expect("at least one epoch");
    Ok(format!(
        "trained {} epochs (best epoch {}), final loss {:.4}; wrote {}",
        outcome.history.len(),
        outcome.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        last.loss,
        out_dir.join(CHECKPOINT_FILE).display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProtocolChoice {
    /// Protocol settings from the config file.
    Config,
    /// 100 negatives, HR@10 and NDCG@10.
    Ranking,
    /// 500 negatives, NDCG@10 and AUC.
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Test,
    Validation,
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub fresh: bool,
    pub protocol: ProtocolChoice,
    pub split: SplitChoice,
    pub out: Option<PathBuf>,
}

fn protocol_for(cfg: &RunConfig, choice: ProtocolChoice) -> Protocol {
    let seeds = cfg.protocol.seeds.clone();
    match choice {
        ProtocolChoice::Config => cfg.protocol.clone(),
        ProtocolChoice::Ranking => Protocol::ranking().with_seeds(seeds),
        ProtocolChoice::Auc => Protocol::auc().with_seeds(seeds),
    }
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<(String, RankingReport), CliError> {
    let prepared = Prepared::load(&cfg.paths.output_dir)?;
    let hp = cfg.effective_hyper()?;
    let catalog = catalog_for(&prepared, cfg)?;
    let model = if args.fresh {
        Model::init(hp.clone(), dims_for(&catalog), cfg.train.seed)?
    } else {
        let path = args.checkpoint.clone().unwrap_or_else(|| cfg.paths.output_dir.join(CHECKPOINT_FILE));
        load_checkpoint(&path)?
    };
    if model.hp != hp {
        return Err(ModelError::Incompatible("checkpoint hyper-parameters differ from the configuration".into()).into());
    }
    if model.dims != dims_for(&catalog) {
        return Err(ModelError::Incompatible(format!("checkpoint dimensions {:?} differ from the prepared data {:?}", model.dims, dims_for(&catalog))).into());
    }
    let bundle = prepared.splits(hp.max_len)?;
    let cases = match args.split {
        SplitChoice::Test => &bundle.test,
        SplitChoice::Validation => &bundle.validation,
    };
    let protocol = protocol_for(cfg, args.protocol);
    let scorer = ModelScorer { model: &model, catalog: &catalog };
    let report = evaluate(&scorer, cases, &bundle.users, catalog.item_count(), &protocol)?;
    let default_name = match protocol.metrics {
        MetricSet::Ranking => "report.json",
        MetricSet::Auc => "report_auc.json",
    };
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.output_dir.join(default_name));
    write_file(&out, &report.to_json())?;
    Ok((format!("{}\nwrote {}", summary_line(&report), out.display()), report))
}

fn summary_line(r: &RankingReport) -> String {
    let mut parts = Vec::new();
    if let (Some(m), Some(s)) = (r.mean.hr, r.std.hr) {
        parts.push(format!("HR@{} {m:.4} ± {s:.4}", r.k));
    }
    parts.push(format!("NDCG@{} {:.4} ± {:.4}", r.k, r.mean.ndcg, r.std.ndcg));
    if let (Some(m), Some(s)) = (r.mean.auc, r.std.auc) {
        parts.push(format!("AUC {m:.4} ± {s:.4}"));
    }
    format!("{} users, {} negatives, {} runs: {}", r.users, r.negatives, r.runs.len(), parts.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FeatureChoice {
    /// Toggles from the config file.
    Config,
    Both,
    Attributes,
    Context,
    None,
}

impl FeatureChoice {
    fn resolve(self, cfg: &RunConfig) -> Features {
        match self {
            FeatureChoice::Config => cfg.features,
            FeatureChoice::Both => Features { use_attributes: true, use_context: true },
            FeatureChoice::Attributes => Features { use_attributes: true, use_context: false },
            FeatureChoice::Context => Features { use_attributes: false, use_context: true },
            FeatureChoice::None => Features { use_attributes: false, use_context: false },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub id: u8,
    pub name: String,
    pub use_attributes: bool,
    pub use_context: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndcg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn format_table(rows: &[AblationRow], k: usize) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut out = format!("{:<3} {:<26} {:<6} {:<6} {:>9} {:>9} {:>9}\n", "id", "configuration", "attrs", "ctx", format!("HR@{k}"), format!("NDCG@{k}"), "AUC");
    for r in rows {
        out.push_str(&format!(
            "{:<3} {:<26} {:<6} {:<6} {:>9} {:>9} {:>9}",
            r.id,
            r.name,
            if r.use_attributes { "on" } else { "off" },
            if r.use_context { "on" } else { "off" },
            fmt(r.hr),
            fmt(r.ndcg),
            fmt(r.auc)
        ));
        if let Some(e) = &r.error {
            out.push_str(&format!("  failed: {e}"));
        }
        out.push('\n');
    }
    out
}

/// Trains and evaluates every `(id, features)` pair; a failing pair is
/// recorded in its row and the sweep continues. Rows are sorted by id.
pub fn ablate(cfg: &RunConfig, ids: &[u8], features: &[FeatureChoice]) -> Result<(String, Vec<AblationRow>), CliError> {
    let prepared = Prepared::load(&cfg.paths.output_dir)?;
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rows = Vec::new();
    for &id in &ids {
        let name = ablation_name(id).ok_or_else(|| CliError::Usage(format!("ablation id {id} is not in 1..=8")))?;
        for choice in features {
            let mut run_cfg = cfg.clone();
            run_cfg.ablation = id;
            run_cfg.features = choice.resolve(cfg);
            let result = run_training(&run_cfg, &prepared, true).and_then(|(outcome, bundle, catalog)| {
                let scorer = ModelScorer { model: &outcome.model, catalog: &catalog };
                Ok(evaluate(&scorer, &bundle.test, &bundle.users, catalog.item_count(), &run_cfg.protocol)?)
            });
            let mut row = AblationRow {
                id,
                name: name.to_string(),
                use_attributes: run_cfg.features.use_attributes,
                use_context: run_cfg.features.use_context,
                hr: None,
                ndcg: None,
                auc: None,
                error: None,
            };
            match result {
                Ok(report) => {
                    row.hr = report.mean.hr;
                    row.ndcg = Some(report.mean.ndcg);
                    row.auc = report.mean.auc;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            eprintln!("ablation {id} ({name}) done");
            rows.push(row);
        }
    }
    let table = format_table(&rows, cfg.protocol.k);
    write_file(&cfg.paths.output_dir.join("ablation.txt"), &table)?;
    write_file(&cfg.paths.output_dir.join("ablation.json"), &serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
    Ok((table, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub batch_size: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub threads: usize,
    pub cpu: String,
    pub parameters: usize,
}

fn cpu_description() -> String {
    let model = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| info.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()));
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{} ({} logical cores, {})", model.unwrap_or_else(|| "unknown CPU".into()), cores, std::env::consts::ARCH)
}

/// Mean wall time of one training step on a fixed batch.
pub fn bench(cfg: &RunConfig, checkpoint: Option<&Path>, batch_size: usize, iterations: usize) -> Result<(String, BenchReport), CliError> {
    if iterations < 50 {
        return Err(CliError::Usage("bench needs at least 50 measured iterations".into()));
    }
    let prepared = Prepared::load(&cfg.paths.output_dir)?;
    let hp = cfg.effective_hyper()?;
    let catalog = catalog_for(&prepared, cfg)?;
    let bundle = prepared.splits(hp.max_len)?;
    if bundle.train.is_empty() {
        return Err(CliError::Usage("no training examples to benchmark".into()));
    }
    let mut model = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => Model::init(hp, dims_for(&catalog), cfg.train.seed)?,
    };
    let mut batch: Vec<_> = bundle.train.iter().cycle().take(batch_size).cloned().collect();
    for (i, ex) in batch.iter_mut().enumerate() {
        let user = ex.user;
        sample_negatives(ex, catalog.item_count(), &bundle.users[user].interacted, &mut derive_rng(cfg.train.seed, 0xbe, i as u64))?;
    }
    let mut state = OptimizerState::new(&model.params);
    let warmup = 5;
    let mut times = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let started = Instant::now();
        train_step(&mut model, &mut state, &catalog, &batch, (cfg.train.seed, i as u64))?;
        if i >= warmup {
            times.push(started.elapsed().as_secs_f64());
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (times.len() - 1) as f64).sqrt();
    let report = BenchReport {
        batch_size,
        iterations,
        warmup,
        mean_seconds: mean,
        std_seconds: std,
        threads: rayon::current_num_threads(),
        cpu: cpu_description(),
        parameters: model.params.parameter_count(),
    };
    write_file(&cfg.paths.output_dir.join("bench.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    let text = format!(
        "batch size {batch_size}: {mean:.6} s ± {std:.6} s per batch over {iterations} iterations ({} threads)\ncpu: {}",
        report.threads, report.cpu
    );
    Ok((text, report))
}
