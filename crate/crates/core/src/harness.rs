//! Corpus configs and the train / predict / evaluate / ablate commands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    parse_conllu_named, parse_tok_named, serialize_rel_predictions, serialize_seg_file, CorpusId, Document,
    RelationInstance, RelsTable, SegLabel,
};
use crate::error::{read_to_string, write_string};
use crate::features::{compute_all_rel_features, dump_rel_features, dump_seg_features, Stoplist};
use crate::rel::{predict_relations, train_rel_classifier, FeatureMode, RelConfig, RelModel};
use crate::scoring::{
    score_connectives, score_relations, score_segmentation, summarize_runs, ConnectiveMatch, EvalReport, RunSummary,
};
use crate::seg::{predict_segments, train_segmenter, Components, DecodeMode, SegModel, SegTask, TrainingConfig};
use crate::sentence::{annotate_syntax, split_on_punctuation, SubprocessAnnotator};
use crate::{DiscoError, Result};

pub const CACHE_ENV: &str = "DISCO_CACHE";
const DEFAULT_ENCODER: &str = "bert-base-multilingual-cased";
const RUN_LOG: &str = "train_log.json";
/// Plain-scenario corpora whose sentences are split by punctuation alone.
const PUNCTUATION_SPLIT_CORPORA: [&str; 2] = ["fas.rst.prstc", "zho.rst.sctb"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Seg,
    Conn,
    Rel,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::Conn => "conn",
            Task::Rel => "rel",
        }
    }

    fn seg_task(self) -> Option<SegTask> {
        match self {
            Task::Seg => Some(SegTask::Seg),
            Task::Conn => Some(SegTask::Conn),
            Task::Rel => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Gold sentence breaks and syntax from `.conllu`.
    #[default]
    Gold,
    /// Sentence breaks and syntax predicted from tokens alone.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationMode {
    /// Tagger without hand-crafted token features.
    #[value(name = "no-feats")]
    NoFeats,
    /// Tagger with contextual embeddings only.
    #[value(name = "cwe-only")]
    CweOnly,
    /// Relation classifier without the injected feature vector.
    #[value(name = "rel-no-feats")]
    RelNoFeats,
}

impl AblationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::NoFeats => "no-feats",
            AblationMode::CweOnly => "cwe-only",
            AblationMode::RelNoFeats => "rel-no-feats",
        }
    }
}

/// External program providing sentence breaks and syntax in the plain scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

/// Training hyperparameters shared by all tasks; each task reads the ones
/// it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lstm_hidden: usize,
    pub d_neighbors: usize,
    pub components: Components,
    pub static_vectors: Option<PathBuf>,
    pub max_subwords: Option<usize>,
    pub grad_clip: Option<f64>,
    pub patience: Option<usize>,
    pub decode_mode: Option<DecodeMode>,
    pub feature_mode: FeatureMode,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let seg = TrainingConfig::new("", DecodeMode::Linear);
        Hyperparameters {
            lr_encoder: seg.lr_encoder,
            lr_other: seg.lr_other,
            epochs: seg.epochs,
            batch_size: seg.batch_size,
            lstm_hidden: seg.lstm_hidden,
            d_neighbors: seg.d_neighbors,
            components: seg.components,
            static_vectors: None,
            max_subwords: None,
            grad_clip: seg.grad_clip,
            patience: None,
            decode_mode: None,
            feature_mode: FeatureMode::Inject,
        }
    }
}

fn default_encoder() -> String {
    DEFAULT_ENCODER.to_string()
}

fn default_runs() -> usize {
    5
}

/// One corpus and task, as read from a JSON config file. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    #[serde(alias = "id")]
    pub corpus: String,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default = "default_encoder")]
    pub encoder_name: String,
    #[serde(default)]
    pub scenario: Scenario,
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Documents backing `.rels` splits; siblings of each split by default.
    #[serde(default)]
    pub docs: Option<Vec<PathBuf>>,
    /// Relation feature menu; the corpus default when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub annotator: Option<AnnotatorConfig>,
    #[serde(default)]
    pub training: Hyperparameters,
}

impl CorpusConfig {
    pub fn task(&self) -> Result<Task> {
        self.task
            .ok_or_else(|| DiscoError::config("no task given in the config or on the command line"))
    }

    /// Decode mode implied by the task.
    pub fn decode_mode(&self) -> Result<DecodeMode> {
        let forced = match self.task()? {
            Task::Conn => DecodeMode::Crf,
            _ => DecodeMode::Linear,
        };
        if let Some(m) = self.training.decode_mode {
            if m != forced {
                log::warn!("decode_mode {m:?} overridden: task {} uses {forced:?}", self.task()?.as_str());
            }
        }
        Ok(forced)
    }

    /// Seeds for the configured number of runs.
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => {
                let mut seeds: Vec<u64> = s.iter().copied().take(self.runs).collect();
                while seeds.len() < self.runs {
                    seeds.push(seeds.iter().max().map_or(1, |m| m + 1));
                }
                seeds
            }
            None => (1..=self.runs as u64).collect(),
        }
    }

    pub fn seg_config(&self, seed: u64) -> Result<TrainingConfig> {
        let h = &self.training;
        let mut c = TrainingConfig::new(self.encoder_name.clone(), self.decode_mode()?);
        c.lr_encoder = h.lr_encoder;
        c.lr_other = h.lr_other;
        c.epochs = h.epochs;
        c.batch_size = h.batch_size;
        c.seed = seed;
        c.runs = self.runs;
        c.lstm_hidden = h.lstm_hidden;
        c.d_neighbors = h.d_neighbors;
        c.components = h.components;
        c.static_vectors = h.static_vectors.clone();
        c.max_subwords = h.max_subwords;
        c.grad_clip = h.grad_clip;
        c.patience = h.patience;
        c.validate()?;
        Ok(c)
    }

    pub fn rel_config(&self, seed: u64) -> Result<RelConfig> {
        let h = &self.training;
        let mut c = RelConfig::new(self.encoder_name.clone());
        c.lr_encoder = h.lr_encoder;
        c.lr_other = h.lr_other;
        c.epochs = h.epochs;
        c.batch_size = h.batch_size;
        c.seed = seed;
        c.runs = self.runs;
        c.features = self.features.clone();
        c.feature_mode = h.feature_mode;
        c.max_subwords = h.max_subwords;
        c.grad_clip = h.grad_clip;
        c.patience = h.patience;
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.corpus.trim().is_empty() {
            return Err(DiscoError::config("corpus id is empty"));
        }
        if self.runs == 0 {
            return Err(DiscoError::config("runs must be at least 1"));
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(DiscoError::config("seeds must not be empty"));
        }
        let task = self.task()?;
        for (name, path) in [("train", Some(&self.train)), ("dev", Some(&self.dev)), ("test", self.test.as_ref())] {
            let Some(path) = path else { continue };
            if !path.exists() {
                return Err(DiscoError::config(format!("{name} split {} not found", path.display())));
            }
            let ext = extension(path);
            let ok = match task {
                Task::Rel => ext == "rels",
                _ => ext == "conllu" || ext == "tok",
            };
            if !ok {
                return Err(DiscoError::config(format!(
                    "{name} split {} is not a valid input for task {}",
                    path.display(),
                    task.as_str()
                )));
            }
        }
        match task {
            Task::Rel => {
                self.rel_config(1)?;
            }
            _ => {
                self.seg_config(1)?;
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.dev);
        self.test.iter_mut().for_each(fix);
        self.output_dir.iter_mut().for_each(fix);
        self.docs.iter_mut().flatten().for_each(fix);
        self.training.static_vectors.iter_mut().for_each(fix);
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}.{}", self.corpus, self.task.map_or("x", Task::as_str))))
    }
}

/// Parses a config, rejecting unknown keys; paths become relative to the
/// file's directory. The task may be left for the command line.
pub fn parse_corpus_config(text: &str, base: &Path) -> Result<CorpusConfig> {
    let mut unknown = BTreeSet::new();
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut config: CorpusConfig = serde_ignored::deserialize(de, |path| {
        unknown.insert(path.to_string());
    })
    .map_err(|e| DiscoError::config(format!("invalid corpus config: {e}")))?;
    if !unknown.is_empty() {
        return Err(DiscoError::config(format!(
            "unknown config key(s): {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    config.resolve_paths(base);
    Ok(config)
}

pub fn load_corpus_config(path: &Path) -> Result<CorpusConfig> {
    let text = read_to_string(path).map_err(|e| DiscoError::config(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_corpus_config(&text, base)
}

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("document").to_string()
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// Reads `.conllu` or `.tok` documents. In the plain scenario gold syntax is
/// dropped and sentences are re-split by the annotator, or on punctuation
/// when none is configured.
pub fn load_documents(
    path: &Path,
    corpus: &str,
    scenario: Scenario,
    annotator: Option<&AnnotatorConfig>,
) -> Result<Vec<Document>> {
    let text = read_to_string(path)?;
    let stem = file_stem(path);
    let mut docs = match extension(path) {
        "conllu" => parse_conllu_named(&text, &stem)?,
        "tok" => parse_tok_named(&text, &stem)?,
        _ => {
            return Err(DiscoError::config(format!(
                "{} is neither a .conllu nor a .tok file",
                path.display()
            )))
        }
    };
    let id = CorpusId::parse(corpus);
    for doc in &mut docs {
        doc.set_corpus(&id);
    }
    if scenario == Scenario::Gold {
        return Ok(docs);
    }
    let external = annotator.map(|a| SubprocessAnnotator::new(a.program.clone(), a.args.clone()));
    if external.is_none() && !PUNCTUATION_SPLIT_CORPORA.contains(&corpus) {
        log::warn!("{corpus}: no annotator configured; splitting sentences on punctuation without syntax");
    }
    docs.into_iter()
        .map(|mut doc| {
            for tok in doc.sentences.iter_mut().flat_map(|s| s.tokens.iter_mut()) {
                tok.clear_syntax();
            }
            match &external {
                Some(a) => annotate_syntax(&doc, a),
                None => split_on_punctuation(&doc, &id.language),
            }
        })
        .collect()
}

/// Documents for relation splits: the configured list, or for each `.rels`
/// file the sibling `.conllu` (gold) or `.tok` (plain) file.
fn relation_documents(config: &CorpusConfig, splits: &[&Path]) -> Result<Vec<Document>> {
    let paths: Vec<PathBuf> = match &config.docs {
        Some(p) => p.clone(),
        None => {
            let (first, second) = match config.scenario {
                Scenario::Gold => ("conllu", "tok"),
                Scenario::Plain => ("tok", "conllu"),
            };
            splits
                .iter()
                .map(|s| {
                    let a = s.with_extension(first);
                    let b = s.with_extension(second);
                    if a.exists() {
                        Ok(a)
                    } else if b.exists() {
                        Ok(b)
                    } else {
                        Err(DiscoError::config(format!(
                            "no .conllu or .tok documents next to {}; list them under \"docs\"",
                            s.display()
                        )))
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    let mut docs = Vec::new();
    for p in paths {
        docs.extend(load_documents(&p, &config.corpus, config.scenario, config.annotator.as_ref())?);
    }
    Ok(docs)
}

fn load_rels(path: &Path) -> Result<RelsTable> {
    RelsTable::parse(&read_to_string(path)?)
}

/// One training run of a condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub dev_score: f64,
    pub test_score: Option<f64>,
    pub predictions: Option<PathBuf>,
    pub epoch_losses: Vec<f64>,
    pub epoch_dev_scores: Vec<f64>,
}

/// Run log written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub corpus: String,
    pub task: Task,
    /// F1 for seg and conn, accuracy for rel.
    pub metric: String,
    pub runs: Vec<RunRecord>,
    pub dev: RunSummary,
    pub test: Option<RunSummary>,
}

impl TrainSummary {
    /// Test summary when a test split was scored, else dev.
    pub fn headline(&self) -> &RunSummary {
        self.test.as_ref().unwrap_or(&self.dev)
    }

    pub fn aggregate_line(&self) -> String {
        let mut s = format!(
            "{} {}: dev {} mean {:.4} stdev {:.4} over {} run(s)",
            self.corpus,
            self.task.as_str(),
            self.metric,
            self.dev.mean,
            self.dev.stdev,
            self.runs.len()
        );
        if let Some(t) = &self.test {
            s.push_str(&format!("; test mean {:.4} stdev {:.4}", t.mean, t.stdev));
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub task: Option<Task>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub scenario: Option<Scenario>,
    pub dump_features: bool,
    pub no_features: bool,
    pub output_dir: Option<PathBuf>,
}

impl TrainOptions {
    fn apply(&self, config: &mut CorpusConfig) -> Result<()> {
        if let Some(t) = self.task {
            config.task = Some(t);
        }
        if let Some(r) = self.runs {
            config.runs = r;
        }
        if let Some(s) = self.seed {
            config.seeds = Some((s..s + config.runs as u64).collect());
        }
        if let Some(s) = self.scenario {
            config.scenario = s;
        }
        if let Some(o) = &self.output_dir {
            config.output_dir = Some(o.clone());
        }
        if self.no_features {
            match config.task()? {
                Task::Rel => config.training.feature_mode = FeatureMode::Skip,
                _ => config.training.components.features = false,
            }
        }
        config.validate()
    }
}

enum Data {
    Seg {
        train: Vec<Document>,
        dev: Vec<Document>,
        test: Option<(Vec<Document>, PathBuf)>,
    },
    Rel {
        train: Vec<RelationInstance>,
        dev: Vec<RelationInstance>,
        test: Option<(RelsTable, PathBuf)>,
        docs: Vec<Document>,
    },
}

fn load_data(config: &CorpusConfig) -> Result<Data> {
    let task = config.task()?;
    if task == Task::Rel {
        let mut splits: Vec<&Path> = vec![&config.train, &config.dev];
        splits.extend(config.test.as_deref());
        let docs = relation_documents(config, &splits)?;
        let train = load_rels(&config.train)?.into_instances();
        let dev = load_rels(&config.dev)?.into_instances();
        if train.is_empty() {
            return Err(DiscoError::config(format!("train split {} has no relations", config.train.display())));
        }
        let test = match &config.test {
            Some(p) => Some((load_rels(p)?, p.clone())),
            None => None,
        };
        return Ok(Data::Rel { train, dev, test, docs });
    }
    let load = |p: &Path| load_documents(p, &config.corpus, config.scenario, config.annotator.as_ref());
    let train = load(&config.train)?;
    if train.iter().all(|d| d.token_count() == 0) {
        return Err(DiscoError::config(format!("train split {} has no tokens", config.train.display())));
    }
    let dev = load(&config.dev)?;
    let test = match &config.test {
        Some(p) => Some((load(p)?, p.clone())),
        None => None,
    };
    Ok(Data::Seg { train, dev, test })
}

fn seg_test_score(task: SegTask, gold: &[Document], pred: &[Document]) -> Result<EvalReport> {
    match task {
        SegTask::Seg => score_segmentation(gold, pred),
        SegTask::Conn => score_connectives(gold, pred, ConnectiveMatch::Token),
    }
}

fn pred_file_name(input: &Path) -> String {
    format!("{}.pred.{}", file_stem(input), extension(input))
}

fn run_condition(config: &CorpusConfig, data: &Data, out: &Path) -> Result<TrainSummary> {
    let task = config.task()?;
    let cache = cache_dir();
    let mut runs = Vec::new();
    for seed in config.seed_list() {
        let run_dir = out.join(format!("seed{seed}"));
        let ckpt = run_dir.join("checkpoint");
        log::info!("{} {}: training seed {seed}", config.corpus, task.as_str());
        let record = match data {
            Data::Seg { train, dev, test } => {
                let seg_task = task.seg_task().expect("tagger task");
                let trained = train_segmenter(train, dev, seg_task, &config.seg_config(seed)?, cache.as_deref())?;
                trained.model.save(&create_dir(&ckpt)?)?;
                let (test_score, predictions) = match test {
                    Some((gold, path)) => {
                        let pred = predict_segments(gold, &trained.model)?;
                        let labels: Vec<Vec<SegLabel>> = pred.iter().map(Document::labels).collect();
                        let file = run_dir.join(pred_file_name(path));
                        write_string(&file, &serialize_seg_file(&pred, &labels)?)?;
                        let report = seg_test_score(seg_task, gold, &pred)?;
                        (Some(report.score()), Some(file))
                    }
                    None => (None, None),
                };
                RunRecord {
                    seed,
                    checkpoint: ckpt,
                    best_epoch: trained.model.best_epoch(),
                    dev_score: trained.model.dev_f1(),
                    test_score,
                    predictions,
                    epoch_losses: trained.log.iter().map(|l| l.loss).collect(),
                    epoch_dev_scores: trained.log.iter().map(|l| l.dev_f1).collect(),
                }
            }
            Data::Rel { train, dev, test, docs } => {
                let trained =
                    train_rel_classifier(train, dev, docs, &config.corpus, &config.rel_config(seed)?, cache.as_deref())?;
                trained.model.save(&ckpt)?;
                let (test_score, predictions) = match test {
                    Some((table, path)) => {
                        let pred = predict_relations(&trained.model, table.instances(), docs)?;
                        let labels: Vec<&str> = pred.iter().map(|p| p.label.as_str()).collect();
                        let file = run_dir.join(pred_file_name(path));
                        write_string(&file, &serialize_rel_predictions(table, &labels)?)?;
                        let gold: Vec<&str> = table.instances().iter().map(|i| i.label.as_str()).collect();
                        (Some(score_relations(&gold, &labels)?.score()), Some(file))
                    }
                    None => (None, None),
                };
                RunRecord {
                    seed,
                    checkpoint: ckpt,
                    best_epoch: trained.model.best_epoch(),
                    dev_score: trained.model.dev_accuracy(),
                    test_score,
                    predictions,
                    epoch_losses: trained.log.iter().map(|l| l.loss).collect(),
                    epoch_dev_scores: trained.log.iter().map(|l| l.dev_accuracy).collect(),
                }
            }
        };
        runs.push(record);
    }
    let dev = summarize_runs(&runs.iter().map(|r| r.dev_score).collect::<Vec<_>>())?;
    let test_scores: Option<Vec<f64>> = runs.iter().map(|r| r.test_score).collect();
    let test = test_scores.map(|s| summarize_runs(&s)).transpose()?;
    let summary = TrainSummary {
        corpus: config.corpus.clone(),
        task,
        metric: if task == Task::Rel { "accuracy" } else { "f1" }.to_string(),
        runs,
        dev,
        test,
    };
    write_string(&out.join(RUN_LOG), &serde_json::to_string_pretty(&summary)?)?;
    log::info!("{}", summary.aggregate_line());
    Ok(summary)
}

fn create_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| DiscoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

fn dump_features(config: &CorpusConfig, data: &Data, out: &Path) -> Result<PathBuf> {
    let file = out.join("features.train.tsv");
    let text = match data {
        Data::Seg { train, .. } => dump_seg_features(train),
        Data::Rel { train, docs, .. } => {
            let stoplist = Stoplist::for_language(&CorpusId::parse(&config.corpus).language);
            let menu = config.rel_config(1)?;
            let head_side = match &menu.features {
                Some(names) => crate::features::CorpusFeatureConfig::from_names(names)?.head_side,
                None => crate::features::default_feature_menu(&config.corpus).head_side,
            };
            let records = compute_all_rel_features(train, docs, &stoplist, head_side)?;
            dump_rel_features(train, &records)
        }
    };
    write_string(&file, &text)?;
    Ok(file)
}

/// Trains one model per seed, writing checkpoints, test predictions and a
/// run log under the output directory.
pub fn cmd_train(config_path: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    let mut config = load_corpus_config(config_path)?;
    opts.apply(&mut config)?;
    let data = load_data(&config)?;
    let out = create_dir(&config.output_dir())?;
    if opts.dump_features {
        let f = dump_features(&config, &data, &out)?;
        log::info!("wrote features to {}", f.display());
    }
    run_condition(&config, &data, &out)
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub task: Option<Task>,
    pub scenario: Scenario,
    pub corpus: Option<String>,
    pub docs: Vec<PathBuf>,
    pub annotator: Option<AnnotatorConfig>,
    pub output: Option<PathBuf>,
    pub dump_features: bool,
}

enum Checkpoint {
    Seg(SegModel),
    Rel(RelModel),
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta: serde_json::Value = serde_json::from_str(
        &read_to_string(&dir.join("checkpoint.json")).map_err(|e| DiscoError::config(e.to_string()))?,
    )?;
    match meta.get("format").and_then(|f| f.as_str()) {
        Some("disco-seg-1") => Ok(Checkpoint::Seg(SegModel::load(dir)?)),
        Some("disco-rel-1") => Ok(Checkpoint::Rel(RelModel::load(dir)?)),
        other => Err(DiscoError::config(format!("{} holds an unknown checkpoint format {other:?}", dir.display()))),
    }
}

/// Labels `input` with a trained checkpoint and writes the predictions in the
/// input's own format; returns the output path.
pub fn cmd_predict(checkpoint: &Path, input: &Path, opts: &PredictOptions) -> Result<PathBuf> {
    let model = load_checkpoint(checkpoint)?;
    let ext = extension(input);
    let output = opts
        .output
        .clone()
        .unwrap_or_else(|| input.with_file_name(pred_file_name(input)));
    match model {
        Checkpoint::Seg(m) => {
            let task = match m.task() {
                SegTask::Seg => Task::Seg,
                SegTask::Conn => Task::Conn,
            };
            if opts.task.is_some_and(|t| t != task) || !(ext == "conllu" || ext == "tok") {
                return Err(DiscoError::config(format!(
                    "{} checkpoint cannot label {}",
                    task.as_str(),
                    input.display()
                )));
            }
            let corpus = opts.corpus.clone().unwrap_or_else(|| file_corpus(input));
            let docs = load_documents(input, &corpus, opts.scenario, opts.annotator.as_ref())?;
            if opts.dump_features {
                write_string(&output.with_extension("features.tsv"), &dump_seg_features(&docs))?;
            }
            let pred = predict_segments(&docs, &m)?;
            let labels: Vec<Vec<SegLabel>> = pred.iter().map(Document::labels).collect();
            write_string(&output, &serialize_seg_file(&pred, &labels)?)?;
        }
        Checkpoint::Rel(m) => {
            if opts.task.is_some_and(|t| t != Task::Rel) || ext != "rels" {
                return Err(DiscoError::config(format!("rel checkpoint cannot label {}", input.display())));
            }
            let table = load_rels(input)?;
            let corpus = opts.corpus.clone().unwrap_or_else(|| file_corpus(input));
            let config = CorpusConfig {
                corpus,
                task: Some(Task::Rel),
                encoder_name: m.config().encoder_name.clone(),
                scenario: opts.scenario,
                train: input.to_path_buf(),
                dev: input.to_path_buf(),
                test: None,
                docs: (!opts.docs.is_empty()).then(|| opts.docs.clone()),
                features: None,
                runs: 1,
                seeds: None,
                output_dir: None,
                annotator: opts.annotator.clone(),
                training: Hyperparameters::default(),
            };
            let docs = relation_documents(&config, &[input])?;
            if opts.dump_features {
                let records = m.feature_records(table.instances(), &docs)?;
                write_string(&output.with_extension("features.tsv"), &dump_rel_features(table.instances(), &records))?;
            }
            let pred = predict_relations(&m, table.instances(), &docs)?;
            let labels: Vec<&str> = pred.iter().map(|p| p.label.as_str()).collect();
            write_string(&output, &serialize_rel_predictions(&table, &labels)?)?;
        }
    }
    Ok(output)
}

/// Corpus id from a shared-task file name such as `eng.rst.gum_test.tok`.
fn file_corpus(path: &Path) -> String {
    let stem = file_stem(path);
    stem.split('_').next().unwrap_or(&stem).to_string()
}

/// Scores `pred` against `gold`, writing `<pred>.report.json` (and for
/// relations `<pred>.confusion.csv`) next to the predictions.
pub fn cmd_evaluate(gold: &Path, pred: &Path, task: Task, matching: ConnectiveMatch) -> Result<EvalReport> {
    let report = match task {
        Task::Rel => {
            let g = load_rels(gold)?;
            let p = load_rels(pred)?;
            let gl: Vec<&str> = g.instances().iter().map(|i| i.label.as_str()).collect();
            let pl: Vec<&str> = p.instances().iter().map(|i| i.label.as_str()).collect();
            score_relations(&gl, &pl)?
        }
        Task::Seg | Task::Conn => {
            let load = |p: &Path| load_documents(p, &file_corpus(p), Scenario::Gold, None);
            let (g, p) = (load(gold)?, load(pred)?);
            match task {
                Task::Seg => score_segmentation(&g, &p)?,
                _ => score_connectives(&g, &p, matching)?,
            }
        }
    };
    let base = pred.with_file_name(file_stem(pred));
    write_string(&base.with_extension("report.json"), &report.to_json())?;
    if let Some(c) = &report.confusion {
        write_string(&base.with_extension("confusion.csv"), &c.to_csv())?;
    }
    Ok(report)
}

/// Baseline and ablated scores for one ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: String,
    pub metric: String,
    pub baseline: RunSummary,
    pub ablated: RunSummary,
    /// Baseline mean minus ablated mean.
    pub gain: f64,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        format!(
            "{:<10} {:>10} {:>10}\n{:<10} {:>10.2} {:>10.2}\n{:<10} {:>10.2} {:>10.2}\n{:<10} {:>10.2}\n",
            self.mode,
            "mean",
            "stdev",
            "baseline",
            self.baseline.mean * 100.0,
            self.baseline.stdev * 100.0,
            "ablated",
            self.ablated.mean * 100.0,
            self.ablated.stdev * 100.0,
            "gain",
            self.gain * 100.0
        )
    }
}

/// Trains the baseline and the ablated condition with the same seeds and
/// reports the difference.
pub fn cmd_ablate(config_path: &Path, mode: AblationMode, opts: &TrainOptions) -> Result<AblationReport> {
    let mut baseline = load_corpus_config(config_path)?;
    opts.apply(&mut baseline)?;
    let task = baseline.task()?;
    let mut ablated = baseline.clone();
    match (mode, task) {
        (AblationMode::NoFeats, Task::Seg | Task::Conn) => ablated.training.components.features = false,
        (AblationMode::CweOnly, Task::Seg | Task::Conn) => {
            ablated.training.components.char = false;
            ablated.training.components.static_vectors = false;
        }
        (AblationMode::RelNoFeats, Task::Rel) => ablated.training.feature_mode = FeatureMode::Skip,
        _ => {
            return Err(DiscoError::config(format!(
                "ablation {} does not apply to task {}",
                mode.as_str(),
                task.as_str()
            )))
        }
    }
    ablated.validate()?;
    let data = load_data(&baseline)?;
    let out = create_dir(&baseline.output_dir())?;
    let base = run_condition(&baseline, &data, &out.join("baseline"))?;
    let abl = run_condition(&ablated, &data, &out.join(mode.as_str()))?;
    let report = AblationReport {
        mode: mode.as_str().to_string(),
        metric: base.metric.clone(),
        gain: base.headline().mean - abl.headline().mean,
        baseline: base.headline().clone(),
        ablated: abl.headline().clone(),
    };
    write_string(
        &out.join(format!("ablation.{}.json", mode.as_str())),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// Process exit code for an error: 2 for bad input or configuration, 1 for
/// failures while running.
pub fn exit_code(err: &DiscoError) -> i32 {
    match err {
        DiscoError::Format { .. }
        | DiscoError::Contract(_)
        | DiscoError::Config(_)
        | DiscoError::Alignment { .. }
        | DiscoError::Json(_) => 2,
        DiscoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        DiscoError::Io { .. } | DiscoError::Annotator(_) | DiscoError::Training(_) | DiscoError::Tensor(_) => 1,
    }
}
