//! Stage orchestration over a working directory.
//!
//! Each stage writes into `workdir/<stage>/` along with `report.json`
//! (deterministic counts and warnings), `timing.json` (wall-clock duration)
//! and `MANIFEST.json` (hashes of the stage's inputs, configuration and
//! outputs). A stage whose manifest still matches is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use topicforge_core::cluster::{cluster_topics, ProductTypeIndex, TopicQuery};
use topicforge_core::dedup::{build_shelf_index, dedup, DedupSummary, FacetIndex};
use topicforge_core::experiment::{analyze, date_window, power_curve, run_seeds, simulate_traffic, split_dates};
use topicforge_core::ingest::{
    candidates_from_clicks, filter_negative_queries, merge_candidates, parse_blocklist, validate_catalog, CandidateQuery,
    ClickRecord, PageRecord, PageType,
};
use topicforge_core::metric::{aggregate_clicks, build_training_set, QueryPairSample};
use topicforge_core::model::ModelParams;
use topicforge_core::tokenize::{extract_facets, FacetLexicon, Tokenizer, Vocabulary};
use topicforge_core::topicpage::{emit_pages, select_topics, CatalogItem, Strategy, TokenOverlapRetriever, TopicCandidate};
use topicforge_core::train::{
    embed_text, extract_task_embedding, finetune_classifier_observed, train_intention_observed, EpochStats, LabeledQuery,
    TrainError,
};
use topicforge_core::ModelConfig;

use crate::cache::CachedFacetEmbeddings;
use crate::checkpoint;
use crate::config::{ConfigError, PipelineConfig};
use crate::formats::{self, CandidateLine, LogFormat};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Metric,
    Train,
    Finetune,
    Cluster,
    Dedup,
    Select,
    Emit,
    Experiment,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Metric,
        Stage::Train,
        Stage::Finetune,
        Stage::Cluster,
        Stage::Dedup,
        Stage::Select,
        Stage::Emit,
        Stage::Experiment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Metric => "metric",
            Stage::Train => "train",
            Stage::Finetune => "finetune",
            Stage::Cluster => "cluster",
            Stage::Dedup => "dedup",
            Stage::Select => "select",
            Stage::Emit => "emit",
            Stage::Experiment => "experiment",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MANIFEST: &str = "MANIFEST.json";
pub const REPORT: &str = "report.json";
pub const TIMING: &str = "timing.json";

pub const CLICKS: &str = "clicks.jsonl";
pub const CATALOG: &str = "catalog.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const REMOVED: &str = "removed.jsonl";
pub const LEXICON: &str = "lexicon.jsonl";
pub const TRAINING_SET: &str = "training_set.jsonl";
pub const VOCAB: &str = "vocab.jsonl";
pub const PRETRAINED: &str = "pretrained.ckpt";
pub const FINETUNED: &str = "finetuned.ckpt";
pub const LABELS: &str = "labels.json";
pub const CURVE: &str = "curve.csv";
pub const CLUSTERS: &str = "clusters.csv";
pub const DEDUP: &str = "dedup.csv";
pub const TOPICS: &str = "topics.jsonl";
pub const PAGES: &str = "pages.jsonl";
pub const PLAN: &str = "plan.json";
pub const DAILY_CLICKS: &str = "daily_clicks.json";
pub const POWER: &str = "power.csv";

/// Deterministic per-stage summary written to `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub counts: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        StageReport {
            stage: stage.name().into(),
            ..Default::default()
        }
    }

    fn count(&mut self, key: &str, value: impl Serialize) {
        self.counts.insert(key.into(), serde_json::to_value(value).expect("serializable count"));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub report: StageReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    stage: String,
    config_sha256: String,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

/// A file a stage reads: either another stage's artifact or a configured input.
#[derive(Debug, Clone)]
struct Input {
    label: String,
    path: PathBuf,
    artifact: bool,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn sha256_json(value: &Value) -> String {
    format!("{:x}", Sha256::digest(value.to_string().as_bytes()))
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub workdir: PathBuf,
    /// Rerun stages even when their manifest matches.
    pub force: bool,
    /// Also write the experiment power curve.
    pub power_curve: bool,
    /// Per-epoch and per-stage progress on standard error.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, workdir: PathBuf) -> Self {
        Pipeline {
            config,
            workdir,
            force: false,
            power_curve: false,
            verbose: true,
        }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.workdir.join(stage.name())
    }

    pub fn artifact(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    fn progress(&self, msg: impl fmt::Display) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    /// Every stage in order; stops at the first failure.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let inputs = self.inputs(stage)?;
        for input in &inputs {
            if !input.path.is_file() {
                if input.artifact {
                    bail!("missing artifact: {} (expected at {})", input.label.rsplit('/').next().unwrap_or(&input.label), input.path.display());
                }
                bail!("missing input: {}", input.path.display());
            }
        }
        let mut hashed = Vec::with_capacity(inputs.len());
        for input in &inputs {
            hashed.push(FileHash {
                path: input.label.clone(),
                sha256: sha256_file(&input.path)?,
            });
        }
        let config_sha256 = sha256_json(&self.fingerprint(stage));
        let dir = self.stage_dir(stage);

        if !self.force {
            if let Some(report) = self.up_to_date(stage, &config_sha256, &hashed)? {
                self.progress(format_args!("[{stage}] up to date"));
                return Ok(StageOutcome {
                    stage,
                    skipped: true,
                    report,
                    seconds: 0.0,
                });
            }
        }

        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        self.progress(format_args!("[{stage}] running"));
        let start = Instant::now();
        let report = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Metric => self.metric()?,
            Stage::Train => self.train()?,
            Stage::Finetune => self.finetune()?,
            Stage::Cluster => self.cluster()?,
            Stage::Dedup => self.dedup()?,
            Stage::Select => self.select()?,
            Stage::Emit => self.emit()?,
            Stage::Experiment => self.experiment()?,
        };
        let seconds = start.elapsed().as_secs_f64();
        formats::write_json(&dir.join(REPORT), &report)?;

        let mut outputs = Vec::new();
        let mut names: Vec<String> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for name in names {
            if name == MANIFEST || name == TIMING {
                continue;
            }
            outputs.push(FileHash {
                sha256: sha256_file(&dir.join(&name))?,
                path: name,
            });
        }
        let manifest = Manifest {
            stage: stage.name().into(),
            config_sha256,
            inputs: hashed,
            outputs,
        };
        formats::write_json(&dir.join(MANIFEST), &manifest)?;
        formats::write_json(&dir.join(TIMING), &json!({ "stage": stage.name(), "seconds": seconds }))?;
        for w in &report.warnings {
            self.progress(format_args!("[{stage}] warning: {w}"));
        }
        self.progress(format_args!("[{stage}] done in {seconds:.2}s"));
        Ok(StageOutcome {
            stage,
            skipped: false,
            report,
            seconds,
        })
    }

    fn up_to_date(&self, stage: Stage, config_sha256: &str, inputs: &[FileHash]) -> Result<Option<StageReport>> {
        let dir = self.stage_dir(stage);
        let Ok(manifest) = formats::read_json::<Manifest>(&dir.join(MANIFEST)) else {
            return Ok(None);
        };
        if manifest.config_sha256 != config_sha256 || manifest.inputs != inputs {
            return Ok(None);
        }
        for out in &manifest.outputs {
            let path = dir.join(&out.path);
            if !path.is_file() || sha256_file(&path)? != out.sha256 {
                return Ok(None);
            }
        }
        Ok(formats::read_json(&dir.join(REPORT)).ok())
    }

    fn required(&self, what: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
        what.cloned()
            .ok_or_else(|| anyhow!(ConfigError(format!("inputs.{key} is not set"))))
    }

    fn inputs(&self, stage: Stage) -> Result<Vec<Input>> {
        let art = |s: Stage, f: &str| Input {
            label: format!("{}/{f}", s.name()),
            path: self.artifact(s, f),
            artifact: true,
        };
        let ext = |p: PathBuf| Input {
            label: p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
            path: p,
            artifact: false,
        };
        let i = &self.config.inputs;
        Ok(match stage {
            Stage::Ingest => {
                let mut v = vec![ext(self.required(i.click_log.as_ref(), "click_log")?), ext(self.required(i.catalog.as_ref(), "catalog")?)];
                v.extend(i.lexicon.clone().map(ext));
                v.extend(i.blocklist.clone().map(ext));
                v.extend(i.candidates.iter().map(|c| ext(c.path.clone())));
                v
            }
            Stage::Metric => vec![art(Stage::Ingest, CLICKS)],
            Stage::Train => vec![
                art(Stage::Metric, TRAINING_SET),
                art(Stage::Ingest, CLICKS),
                art(Stage::Ingest, CANDIDATES),
                art(Stage::Ingest, CATALOG),
                art(Stage::Ingest, LEXICON),
            ],
            Stage::Finetune => vec![
                art(Stage::Train, PRETRAINED),
                art(Stage::Train, VOCAB),
                art(Stage::Ingest, LEXICON),
                art(Stage::Ingest, CLICKS),
                art(Stage::Ingest, CATALOG),
            ],
            Stage::Cluster => vec![
                art(Stage::Train, PRETRAINED),
                art(Stage::Train, VOCAB),
                art(Stage::Ingest, LEXICON),
                art(Stage::Ingest, CANDIDATES),
                art(Stage::Ingest, CATALOG),
            ],
            Stage::Dedup => vec![
                art(Stage::Finetune, FINETUNED),
                art(Stage::Train, VOCAB),
                art(Stage::Ingest, LEXICON),
                art(Stage::Ingest, CATALOG),
                art(Stage::Cluster, CLUSTERS),
            ],
            Stage::Select => match self.config.select.strategy {
                Strategy::Pipeline => vec![art(Stage::Dedup, DEDUP), art(Stage::Cluster, CLUSTERS), art(Stage::Ingest, CANDIDATES)],
                Strategy::TopClicks => vec![art(Stage::Ingest, CANDIDATES)],
            },
            Stage::Emit => vec![art(Stage::Select, TOPICS), ext(self.required(i.items.as_ref(), "items")?)],
            Stage::Experiment => self.config.experiment.daily_clicks.clone().map(ext).into_iter().collect(),
        })
    }

    /// The configuration a stage's outputs depend on.
    fn fingerprint(&self, stage: Stage) -> Value {
        let c = &self.config;
        let v = match stage {
            Stage::Ingest => json!({}),
            Stage::Metric => json!({ "seed": c.seed, "metric": c.metric }),
            Stage::Train => json!({ "seed": c.seed, "tokenize": c.tokenize, "model": c.model, "train": c.train }),
            Stage::Finetune => json!({ "seed": c.seed, "model": c.model, "finetune": c.finetune }),
            Stage::Cluster => json!({ "cluster": c.cluster }),
            Stage::Dedup => json!({ "threshold": c.dedup.thresholds() }),
            Stage::Select => json!({ "select": c.select }),
            Stage::Emit => json!({ "emit": c.emit }),
            Stage::Experiment => json!({ "seed": c.seed, "experiment": c.experiment, "power_curve": self.power_curve }),
        };
        json!({ "stage": stage.name(), "config": v })
    }

    fn tokenizer(&self) -> Result<Tokenizer> {
        let vocab = formats::read_vocabulary(&self.artifact(Stage::Train, VOCAB))?;
        let lexicon = formats::read_lexicon(&self.artifact(Stage::Ingest, LEXICON))?;
        Ok(Tokenizer::new(vocab, lexicon, self.config.tokenize.seq_len)?)
    }

    fn load_params(&self, stage: Stage, file: &str, tokenizer: &Tokenizer) -> Result<ModelParams> {
        let params = checkpoint::load(&self.artifact(stage, file))?;
        let c = params.config();
        if c.vocab_size != tokenizer.vocab.len() || c.seq_len != tokenizer.seq_len {
            bail!(
                "{file} was trained for vocabulary {} / length {}, but the current vocabulary has {} tokens and length {}",
                c.vocab_size,
                c.seq_len,
                tokenizer.vocab.len(),
                tokenizer.seq_len
            );
        }
        Ok(params)
    }

    fn catalog(&self) -> Result<Vec<PageRecord>> {
        formats::read_jsonl(&self.artifact(Stage::Ingest, CATALOG))
    }

    fn epoch_logger<'a>(&'a self, stage: Stage, total: usize) -> impl FnMut(&EpochStats) + 'a {
        move |e: &EpochStats| {
            let mut line = format!("[{stage}] epoch {}/{total} loss {:.6}", e.epoch, e.mean_loss);
            if let Some(l) = e.eval_loss {
                line.push_str(&format!(" eval {l:.6}"));
            }
            if let Some(a) = e.accuracy {
                line.push_str(&format!(" accuracy {a:.4}"));
            }
            self.progress(line);
        }
    }

    fn ingest(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Ingest);
        let i = &self.config.inputs;
        let dir = self.stage_dir(Stage::Ingest);

        let log_path = self.required(i.click_log.as_ref(), "click_log")?;
        let log = formats::parse_click_log(&log_path, LogFormat::from_path(&log_path)?)?;
        report.count("rows", log.records.len() + log.errors.len());
        report.count("row_errors", log.errors.len());
        for e in log.errors.iter().take(50) {
            report.warnings.push(format!("click log line {}: {}", e.line, e.error));
        }
        if log.errors.len() > 50 {
            report.warnings.push(format!("{} further row errors not listed", log.errors.len() - 50));
        }
        let mut merged: BTreeMap<(String, String), ClickRecord> = BTreeMap::new();
        let mut duplicates = 0usize;
        for r in log.records {
            match merged.get_mut(&(r.query.clone(), r.page_id.clone())) {
                Some(m) => {
                    duplicates += 1;
                    m.clicks += r.clicks;
                    m.impressions += r.impressions;
                }
                None => {
                    merged.insert((r.query.clone(), r.page_id.clone()), r);
                }
            }
        }
        if duplicates > 0 {
            report.warnings.push(format!("{duplicates} repeated (query, page) rows had their counts summed"));
        }
        let records: Vec<ClickRecord> = merged.into_values().collect();
        report.count("records", records.len());
        report.count("duplicate_rows_summed", duplicates);
        formats::write_jsonl(&dir.join(CLICKS), &records)?;

        let catalog_path = self.required(i.catalog.as_ref(), "catalog")?;
        let mut catalog: Vec<PageRecord> = formats::read_jsonl(&catalog_path)?;
        validate_catalog(&mut catalog).with_context(|| format!("invalid catalog {}", catalog_path.display()))?;
        catalog.sort_by(|a, b| a.page_id.cmp(&b.page_id));
        report.count("catalog_pages", catalog.len());
        report.count("shelf_pages", catalog.iter().filter(|p| p.page_type == PageType::Shelf).count());
        report.count("facet_pages", catalog.iter().filter(|p| p.page_type == PageType::Facet).count());
        formats::write_jsonl(&dir.join(CATALOG), &catalog)?;

        let mut lexicon = match &i.lexicon {
            Some(p) => formats::read_lexicon(p)?,
            None => FacetLexicon::new(),
        };
        for p in &catalog {
            for f in &p.facets {
                lexicon.insert(&f.name, &f.value);
            }
        }
        report.count("lexicon_values", lexicon.iter().map(|(_, v)| v.len()).sum::<usize>());
        formats::write_lexicon(&dir.join(LEXICON), &lexicon)?;

        let mut candidates = candidates_from_clicks(&records);
        for file in &i.candidates {
            candidates.extend(read_candidate_file(&file.path)?.into_iter().map(|l| CandidateQuery {
                query: l.query,
                source: file.source,
                clicks_total: l.clicks_total,
            }));
        }
        let candidates = merge_candidates(candidates);
        let blocklist = match &i.blocklist {
            Some(p) => parse_blocklist(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => BTreeSet::new(),
        };
        let (kept, removed) = filter_negative_queries(&candidates, &blocklist);
        report.count("candidates", candidates.len());
        report.count("candidates_kept", kept.len());
        report.count("candidates_removed", removed.len());
        formats::write_jsonl(&dir.join(CANDIDATES), &kept)?;
        formats::write_jsonl(&dir.join(REMOVED), &removed)?;
        Ok(report)
    }

    fn metric(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Metric);
        let records: Vec<ClickRecord> = formats::read_jsonl(&self.artifact(Stage::Ingest, CLICKS))?;
        let stats = aggregate_clicks(&records);
        let set = build_training_set(&stats, &self.config.training_set_options()?)?;
        let pos: Vec<f64> = set.samples.iter().filter(|s| s.interactive > 0.0).map(|s| s.interactive).collect();
        report.count("queries", stats.totals().len());
        report.count("coclicked_pairs", stats.pair_count());
        report.count("positives", set.positives);
        report.count("negatives", set.negatives);
        report.count("requested_negatives", set.requested_negatives);
        report.count("mean_positive_interactive", if pos.is_empty() { 0.0 } else { pos.iter().sum::<f64>() / pos.len() as f64 });
        report.warnings.extend(set.warnings.iter().cloned());
        formats::write_jsonl(&self.artifact(Stage::Metric, TRAINING_SET), &set.samples)?;
        Ok(report)
    }

    fn train(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Train);
        let samples: Vec<QueryPairSample> = formats::read_jsonl(&self.artifact(Stage::Metric, TRAINING_SET))?;
        let records: Vec<ClickRecord> = formats::read_jsonl(&self.artifact(Stage::Ingest, CLICKS))?;
        let candidates: Vec<CandidateQuery> = formats::read_jsonl(&self.artifact(Stage::Ingest, CANDIDATES))?;
        let catalog = self.catalog()?;
        let lexicon = formats::read_lexicon(&self.artifact(Stage::Ingest, LEXICON))?;

        let texts = records
            .iter()
            .map(|r| r.query.as_str())
            .chain(candidates.iter().map(|c| c.query.as_str()))
            .chain(catalog.iter().flat_map(|p| [p.title.as_str(), p.product_type.as_str()]));
        let vocab = Vocabulary::build(texts, &lexicon, self.config.tokenize.min_count);
        formats::write_vocabulary(&self.artifact(Stage::Train, VOCAB), &vocab)?;
        let tokenizer = Tokenizer::new(vocab, lexicon, self.config.tokenize.seq_len)?;
        let model_cfg = self.config.model_config(tokenizer.vocab.len());
        let train_cfg = self.config.train.to_train_config(self.config.seed);

        let params = ModelParams::init(model_cfg, train_cfg.seed)?;
        let mut log = self.epoch_logger(Stage::Train, train_cfg.epochs);
        let outcome = match train_intention_observed(params, &samples, &tokenizer, &train_cfg, &mut log) {
            Ok(o) => o,
            Err(TrainError::Diverged { epoch, last_good }) => {
                let path = self.artifact(Stage::Train, "pretrained.last_good.ckpt");
                checkpoint::save(&path, &last_good, self.config.model.checkpoint_dtype)?;
                bail!("training diverged in epoch {epoch}; last good parameters saved to {}", path.display());
            }
            Err(e) => return Err(e.into()),
        };
        checkpoint::save(&self.artifact(Stage::Train, PRETRAINED), &outcome.params, self.config.model.checkpoint_dtype)?;
        formats::write_curve(&self.artifact(Stage::Train, CURVE), &outcome.curve, false)?;

        report.count("vocab_size", tokenizer.vocab.len());
        report.count("parameters", outcome.params.values().len());
        report.count("train_samples", outcome.train_size);
        report.count("eval_samples", outcome.eval_size);
        report.count("epochs", outcome.curve.len());
        if let Some(last) = outcome.curve.last() {
            report.count("final_loss", last.mean_loss);
            report.count("final_eval_loss", last.eval_loss);
        }
        report.warnings.extend(outcome.warnings);
        Ok(report)
    }

    fn finetune(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Finetune);
        let tokenizer = self.tokenizer()?;
        let pretrained = self.load_params(Stage::Train, PRETRAINED, &tokenizer)?;
        let records: Vec<ClickRecord> = formats::read_jsonl(&self.artifact(Stage::Ingest, CLICKS))?;
        let catalog = self.catalog()?;

        let category: BTreeSet<&str> = catalog
            .iter()
            .filter(|p| matches!(p.page_type, PageType::Shelf | PageType::Facet))
            .map(|p| p.page_id.as_str())
            .collect();
        // most-clicked category page per query; ties go to the smaller page id
        let mut best: BTreeMap<&str, (&str, u64)> = BTreeMap::new();
        for r in records.iter().filter(|r| r.clicks > 0 && category.contains(r.page_id.as_str())) {
            let e = best.entry(r.query.as_str()).or_insert((r.page_id.as_str(), r.clicks));
            if r.clicks > e.1 || (r.clicks == e.1 && r.page_id.as_str() < e.0) {
                *e = (r.page_id.as_str(), r.clicks);
            }
        }
        let classes: Vec<&str> = best.values().map(|(p, _)| *p).collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let labeled: Vec<LabeledQuery> = best
            .iter()
            .map(|(q, (p, _))| LabeledQuery {
                query: q.to_string(),
                label: index[p],
            })
            .collect();
        let unlabeled = category.len() - classes.len();
        if unlabeled > 0 {
            report
                .warnings
                .push(format!("{unlabeled} category pages have no queries labelled with them and are not classes"));
        }

        let train_cfg = self.config.finetune.to_train_config(self.config.seed);
        let mut log = self.epoch_logger(Stage::Finetune, train_cfg.epochs);
        let outcome = match finetune_classifier_observed(
            &pretrained,
            &labeled,
            classes.len(),
            &tokenizer,
            &train_cfg,
            self.config.finetune.freeze_encoder,
            &mut log,
        ) {
            Ok(o) => o,
            Err(TrainError::Diverged { epoch, last_good }) => {
                let path = self.artifact(Stage::Finetune, "finetuned.last_good.ckpt");
                checkpoint::save(&path, &last_good, self.config.model.checkpoint_dtype)?;
                bail!("fine-tuning diverged in epoch {epoch}; last good parameters saved to {}", path.display());
            }
            Err(e) => return Err(e.into()),
        };
        checkpoint::save(&self.artifact(Stage::Finetune, FINETUNED), &outcome.params, self.config.model.checkpoint_dtype)?;
        formats::write_curve(&self.artifact(Stage::Finetune, CURVE), &outcome.curve, true)?;
        formats::write_json(&self.artifact(Stage::Finetune, LABELS), &json!({ "classes": classes }))?;

        report.count("labeled_queries", labeled.len());
        report.count("classes", classes.len());
        report.count("freeze_encoder", self.config.finetune.freeze_encoder);
        if let Some(last) = outcome.curve.last() {
            report.count("final_loss", last.mean_loss);
            report.count("final_accuracy", last.accuracy);
        }
        report.warnings.extend(outcome.warnings);
        Ok(report)
    }

    fn cluster(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Cluster);
        let tokenizer = self.tokenizer()?;
        let params = self.load_params(Stage::Train, PRETRAINED, &tokenizer)?;
        let candidates: Vec<CandidateQuery> = formats::read_jsonl(&self.artifact(Stage::Ingest, CANDIDATES))?;
        let catalog = self.catalog()?;

        let mut index = ProductTypeIndex::new();
        let types: BTreeSet<&str> = catalog.iter().map(|p| p.product_type.as_str()).filter(|t| !t.is_empty()).collect();
        for t in &types {
            index.insert(*t, embed_text(&params, &tokenizer, t)?);
        }
        if index.is_empty() {
            report.warnings.push("catalog has no product types; nothing clustered".into());
        }
        let queries = candidates
            .iter()
            .map(|c| {
                Ok(TopicQuery {
                    query: c.query.clone(),
                    clicks: c.clicks_total,
                    vector: embed_text(&params, &tokenizer, &c.query)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let result = cluster_topics(&queries, &index, self.config.cluster.threshold, self.config.cluster.linkage);
        let rows = formats::cluster_rows(&result);
        formats::write_clusters(&self.artifact(Stage::Cluster, CLUSTERS), &rows)?;

        let n = queries.len() as u64;
        let direct = n * n.saturating_sub(1) / 2;
        report.count("queries", queries.len());
        report.count("product_types", index.len());
        report.count("clusters", result.cluster_count());
        report.count("representatives", result.representatives.len());
        report.count("distance_evaluations", result.distance_evaluations);
        report.count("classification_evaluations", result.classification_evaluations);
        report.count("direct_distance_evaluations", direct);
        let mut per_type: BTreeMap<&str, usize> = BTreeMap::new();
        for a in result.assignments.values() {
            *per_type.entry(a.product_type.as_str()).or_default() += 1;
        }
        report.details = json!({ "queries_per_product_type": per_type });
        Ok(report)
    }

    fn dedup(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Dedup);
        let tokenizer = self.tokenizer()?;
        let params = self.load_params(Stage::Finetune, FINETUNED, &tokenizer)?;
        if !params.has_head() {
            bail!("{FINETUNED} has no classification layer");
        }
        let catalog = self.catalog()?;
        let rows = formats::read_clusters(&self.artifact(Stage::Cluster, CLUSTERS))?;

        let embedder = |text: &str| extract_task_embedding(&params, &tokenizer, text);
        let shelves = build_shelf_index(&catalog, &embedder)?;
        if shelves.is_empty() {
            report.warnings.push("catalog has no shelf pages; every query is kept".into());
        }
        let facets = FacetIndex::build(&catalog);
        let cache = CachedFacetEmbeddings::new(&embedder, self.config.dedup.cache_capacity);
        let thresholds = self.config.dedup.thresholds();

        let mut decisions = Vec::new();
        let mut skipped = 0usize;
        for row in rows.iter().filter(|r| r.is_representative) {
            let qv = embedder(&row.query)?;
            let qf = extract_facets(&row.query, &tokenizer.lexicon);
            if qf.is_empty() {
                skipped += 1;
            }
            decisions.push(dedup(&row.query, &qv, &qf, &shelves, &facets, &cache, thresholds)?);
        }
        decisions.sort_by(|a, b| a.query.cmp(&b.query));
        formats::write_dedup(&self.artifact(Stage::Dedup, DEDUP), &decisions)?;

        let summary = DedupSummary::from_decisions(&decisions, skipped);
        report.count("queries", summary.queries);
        report.count("duplicates", summary.duplicates);
        report.count("shelf_duplicates", summary.shelf_duplicates);
        report.count("facet_duplicates", summary.facet_duplicates);
        report.count("kept", summary.queries - summary.duplicates);
        report.count("facet_comparisons", summary.facet_comparisons);
        report.count("facet_embeddings_computed", cache.misses());
        report.count("shelf_pages", shelves.len());
        report.count("facet_pages", facets.len());
        report.count("shelf_threshold", thresholds.shelf);
        report.count("facet_threshold", thresholds.facet);
        // queries whose facet path was skipped could hide facet-page duplicates
        report.count("recall_risk_queries", summary.facet_path_skipped);
        if summary.facet_path_skipped > 0 {
            report.warnings.push(format!(
                "{} of {} queries had no lexicon facet, so facet pages were not checked for them",
                summary.facet_path_skipped, summary.queries
            ));
        }
        Ok(report)
    }

    fn select(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Select);
        let candidates: Vec<CandidateQuery> = formats::read_jsonl(&self.artifact(Stage::Ingest, CANDIDATES))?;
        let pool: Vec<TopicCandidate> = match self.config.select.strategy {
            Strategy::TopClicks => candidates
                .iter()
                .map(|c| TopicCandidate {
                    query: c.query.clone(),
                    clicks: c.clicks_total,
                    product_type: None,
                    cluster_id: None,
                })
                .collect(),
            Strategy::Pipeline => {
                let clicks: BTreeMap<&str, u64> = candidates.iter().map(|c| (c.query.as_str(), c.clicks_total)).collect();
                let clusters = formats::read_clusters(&self.artifact(Stage::Cluster, CLUSTERS))?;
                let info: BTreeMap<&str, (&str, usize)> = clusters
                    .iter()
                    .map(|r| (r.query.as_str(), (r.product_type.as_str(), r.cluster_id)))
                    .collect();
                let decisions = formats::read_dedup(&self.artifact(Stage::Dedup, DEDUP))?;
                decisions
                    .iter()
                    .filter(|d| d.verdict == "kept")
                    .map(|d| {
                        let (pt, id) = info.get(d.query.as_str()).copied().unzip();
                        TopicCandidate {
                            query: d.query.clone(),
                            clicks: clicks.get(d.query.as_str()).copied().unwrap_or(0),
                            product_type: pt.map(str::to_string),
                            cluster_id: id,
                        }
                    })
                    .collect()
            }
        };
        let topics = select_topics(&pool, self.config.select.quota);
        formats::write_jsonl(&self.artifact(Stage::Select, TOPICS), &topics)?;
        report.count("strategy", self.config.select.strategy);
        report.count("pool", pool.len());
        report.count("quota", self.config.select.quota);
        report.count("selected", topics.len());
        Ok(report)
    }

    fn emit(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Emit);
        let topics: Vec<TopicCandidate> = formats::read_jsonl(&self.artifact(Stage::Select, TOPICS))?;
        let items_path = self.required(self.config.inputs.items.as_ref(), "items")?;
        let items: Vec<CatalogItem> = formats::read_jsonl(&items_path)?;
        let retriever = TokenOverlapRetriever::new(&items);
        let out = emit_pages(&topics, &retriever, self.config.emit.k);
        formats::write_jsonl(&self.artifact(Stage::Emit, PAGES), &out.specs)?;
        report.count("topics", topics.len());
        report.count("pages", out.specs.len());
        report.count("items_per_page_limit", self.config.emit.k);
        report.count("empty_topics", out.empty.len());
        report.count("failed_topics", out.failed.len());
        for q in &out.empty {
            report.warnings.push(format!("no items matched topic {q:?}; page not emitted"));
        }
        for (q, e) in &out.failed {
            report.warnings.push(format!("topic {q:?} failed: {e}"));
        }
        Ok(report)
    }

    fn experiment(&self) -> Result<StageReport> {
        let mut report = StageReport::new(Stage::Experiment);
        let e = &self.config.experiment;
        let window = date_window(&e.start, e.days).map_err(|x| anyhow!(ConfigError(x.to_string())))?;
        let (split_seed, traffic_seed) = run_seeds(self.config.seed, 0);
        let plan = split_dates(&window, split_seed).map_err(|x| anyhow!(ConfigError(x.to_string())))?;
        let clicks = match &e.daily_clicks {
            Some(p) => formats::read_daily_clicks(p)?,
            None => simulate_traffic(&plan, &e.traffic(), traffic_seed)?,
        };
        let test = analyze(&plan, &clicks, e.variant)?;
        formats::write_json(&self.artifact(Stage::Experiment, PLAN), &plan)?;
        formats::write_json(&self.artifact(Stage::Experiment, DAILY_CLICKS), &clicks)?;
        println!("{}", report::experiment_table(&test));

        report.count("days", e.days);
        report.count("simulated", e.daily_clicks.is_none());
        if self.power_curve {
            let grid = e.power_grid(self.config.seed);
            let curve = power_curve(&grid)?;
            let mut w = csv::Writer::from_path(self.artifact(Stage::Experiment, POWER))?;
            w.write_record(["days", "lift", "power"])?;
            for p in &curve {
                w.write_record([p.days.to_string(), p.lift.to_string(), p.power.to_string()])?;
            }
            w.flush()?;
            report.count("power_points", curve.len());
        }
        report.details = serde_json::to_value(&test)?;
        Ok(report)
    }
}

fn read_candidate_file(path: &Path) -> Result<Vec<CandidateLine>> {
    if path.extension().and_then(|e| e.to_str()) == Some("txt") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| CandidateLine {
                query: l.to_string(),
                clicks_total: 0,
            })
            .collect());
    }
    formats::read_jsonl(path)
}

/// Model configuration stored in a checkpoint manifest.
pub fn checkpoint_config(path: &Path) -> Result<ModelConfig> {
    let m: checkpoint::Manifest = formats::read_json(&checkpoint::manifest_path(path))?;
    Ok(m.config)
}
