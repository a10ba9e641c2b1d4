//! End-to-end runs driven by a TOML config, with a reproducibility manifest.
//!
//! Every stage writes its artifacts under the output directory and records
//! their SHA-256 checksums together with a key derived from the stage's
//! configuration and its inputs' checksums. A rerun whose key and on-disk
//! checksums match reuses the artifacts instead of recomputing them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{self, FeatureGroup};
use crate::error::{IoContext, Result, SlnError};
use crate::eval::{derive_seed, evaluate_repeated, EvalOptions, DEFAULT_FOLDS, DEFAULT_THRESHOLD};
use crate::features::{assemble_all, default_sentinel, export_features, import_features, FeatureTable, LeakagePolicy, FEATURE_COLUMNS};
use crate::graph::{build_timeline, Timeline, DEFAULT_INTERVALS};
use crate::ingest::{filter_corpus, parse_mooc_export, parse_normalized, parse_qa_export, parse_timestamp, CourseWindow, ForumCorpus, Roster};
use crate::predictors::{self, ModelKind, ModelSpec, Sampling, TrainedModel};
use crate::synth::{synth_forum, SynthConfig};
use crate::topics::{fit_corpus, LdaParams, ProfileTable, TopicModel};

pub const MANIFEST_FORMAT: &str = "sln-manifest";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Normalized,
    Mooc,
    Qa,
}

impl std::str::FromStr for InputFormat {
    type Err = SlnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "mooc" => Ok(Self::Mooc),
            "qa" => Ok(Self::Qa),
            other => Err(SlnError::InvalidArgument(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Forum export; when absent the synthetic fixture is generated.
    pub corpus: Option<PathBuf>,
    pub format: InputFormat,
    pub course_id: String,
    /// Course window for raw exports (ISO 8601 or epoch seconds); normalized
    /// files with a header carry their own.
    pub start: Option<String>,
    pub end: Option<String>,
    pub roster: Option<PathBuf>,
    /// Used when `corpus` is absent. Its seed is replaced by one derived from the run seed.
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            format: InputFormat::Normalized,
            course_id: "course".into(),
            start: None,
            end: None,
            roster: None,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    pub k: usize,
    pub iterations: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    /// Coverage threshold for a learner's active topics; defaults to `1/k`.
    pub threshold: Option<f64>,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            k: 20,
            iterations: 1000,
            alpha: None,
            beta: 0.01,
            threshold: None,
        }
    }
}

impl TopicConfig {
    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(1.0 / self.k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FeatureConfig {
    pub policy: LeakagePolicy,
    /// Lp value for disconnected pairs; defaults to the learner count.
    pub sentinel: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub sampling: Sampling,
    pub svm_c: f64,
    pub svm_iterations: usize,
    pub gnn_dim: usize,
    pub gnn_negatives: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let d = ModelSpec::new(ModelKind::Cnn);
        Self {
            epochs: d.epochs,
            batch: d.batch,
            lr: d.lr,
            sampling: d.sampling,
            svm_c: d.svm_c,
            svm_iterations: d.svm_iterations,
            gnn_dim: d.gnn_dim,
            gnn_negatives: d.gnn_negatives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    pub repeats: usize,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_FOLDS,
            repeats: 1,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub snr: bool,
    /// SNR and CDFs over every interval instead of the final one.
    pub pooled: bool,
    pub cdf: bool,
    pub graph: bool,
    /// Gate traces for every trained recurrent model.
    pub gates: bool,
    /// Feature-group subsets such as `"nei+path"`.
    pub ablations: Vec<String>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            snr: true,
            pooled: false,
            cdf: true,
            graph: true,
            gates: true,
            ablations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Graph,
    Topics,
    Features,
    Train,
    Eval,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Self::Ingest,
        Self::Graph,
        Self::Topics,
        Self::Features,
        Self::Train,
        Self::Eval,
        Self::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Graph => "graph",
            Self::Topics => "topics",
            Self::Features => "features",
            Self::Train => "train",
            Self::Eval => "eval",
            Self::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: String,
    pub seed: u64,
    pub out: PathBuf,
    pub intervals: usize,
    /// Stages to run; data stages needed by later ones always run (or are reused).
    pub stages: Vec<Stage>,
    pub models: Vec<ModelKind>,
    pub data: DataConfig,
    pub topics: TopicConfig,
    pub features: FeatureConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synth".into(),
            seed: 0,
            out: PathBuf::from("sln-run"),
            intervals: DEFAULT_INTERVALS,
            stages: Stage::ALL.to_vec(),
            models: vec![ModelKind::Re, ModelKind::Cnn],
            data: DataConfig::default(),
            topics: TopicConfig::default(),
            features: FeatureConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SlnError::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SlnError::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }

    /// SHA-256 of the canonical TOML serialization with the output directory cleared.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        Ok(sha256_hex(canonical.to_toml()?.as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            root: self.seed,
            synth: derive_seed(self.seed, 0),
            topics: derive_seed(self.seed, 1),
            folds: derive_seed(self.seed, 2),
            models: self
                .models
                .iter()
                .map(|&m| (m.name().to_string(), derive_seed(self.seed, 16 + ModelKind::ALL.iter().position(|&k| k == m).unwrap_or(0) as u64)))
                .collect(),
        }
    }

    pub fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        let t = &self.training;
        let mut spec = ModelSpec::new(kind);
        spec.epochs = t.epochs;
        spec.batch = t.batch;
        spec.lr = t.lr;
        spec.sampling = t.sampling;
        spec.svm_c = t.svm_c;
        spec.svm_iterations = t.svm_iterations;
        spec.gnn_dim = t.gnn_dim;
        spec.gnn_negatives = t.gnn_negatives;
        spec.seed = self.seeds().models.get(kind.name()).copied().unwrap_or(self.seed);
        spec
    }

    pub fn lda_params(&self) -> LdaParams {
        LdaParams {
            k: self.topics.k,
            iterations: self.topics.iterations,
            alpha: self.topics.alpha,
            beta: self.topics.beta,
            seed: self.seeds().topics,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            k: self.eval.k,
            seed: self.seeds().folds,
            repeats: self.eval.repeats,
            threshold: self.eval.threshold,
        }
    }

    fn wants(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub synth: u64,
    pub topics: u64,
    pub folds: u64,
    pub models: BTreeMap<String, u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).at(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Complete,
    Failed,
    /// Left over from an earlier run and not revalidated by this one.
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub status: StageStatus,
    /// Output-relative path -> SHA-256.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path).at(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(SlnError::Format(format!("{}: not a run manifest", path.display())));
        }
        Ok(m)
    }

    /// Recomputes every recorded checksum; returns the mismatching paths.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        self.stages
            .iter()
            .filter(|s| s.status == StageStatus::Complete)
            .flat_map(|s| s.artifacts.iter())
            .filter(|(p, sum)| file_sha256(&root.join(p)).ok().as_ref() != Some(*sum))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
    pub cached: bool,
}

/// Reads a forum export and applies the learner filter.
pub fn ingest_file(path: &Path, format: InputFormat, course_id: &str, window: Option<CourseWindow>, roster: &Roster) -> Result<ForumCorpus> {
    let text = std::fs::read_to_string(path).at(path)?;
    let (header, parsed) = match format {
        InputFormat::Normalized => parse_normalized(text.as_bytes())?,
        InputFormat::Mooc => (None, parse_mooc_export(&text)?),
        InputFormat::Qa => (None, parse_qa_export(&text)?),
    };
    if parsed.skipped_missing_timestamp > 0 {
        log::warn!("{}: skipped {} posts without a timestamp", path.display(), parsed.skipped_missing_timestamp);
    }
    let (course, window) = match (window, &header) {
        (Some(w), _) => (course_id.to_string(), w),
        (None, Some(h)) => (h.course_id.clone(), CourseWindow::new(h.start_time, h.end_time)?),
        (None, None) => {
            return Err(SlnError::InvalidArgument(
                "data.start and data.end are required for exports without a corpus header".into(),
            ))
        }
    };
    filter_corpus(parsed.threads, &course, window, roster)
}

pub fn parse_window(start: Option<&str>, end: Option<&str>) -> Result<Option<CourseWindow>> {
    let parse = |field: &str, v: &str| {
        parse_timestamp(v).ok_or_else(|| SlnError::InvalidArgument(format!("{field}: cannot parse `{v}` as a timestamp")))
    };
    match (start, end) {
        (None, None) => Ok(None),
        (Some(s), Some(e)) => Ok(Some(CourseWindow::new(parse("data.start", s)?, parse("data.end", e)?)?)),
        (Some(_), None) => Err(SlnError::InvalidArgument("data.end is required when data.start is set".into())),
        (None, Some(_)) => Err(SlnError::InvalidArgument("data.start is required when data.end is set".into())),
    }
}

/// Topic model, timeline and profiles to the feature table.
pub fn build_features(timeline: &Timeline, topics: &TopicModel, topic_threshold: f64, features: &FeatureConfig) -> FeatureTable {
    let profiles = ProfileTable::build(topics, timeline, topic_threshold);
    let sentinel = features.sentinel.unwrap_or_else(|| default_sentinel(timeline));
    assemble_all(timeline, &profiles, features.policy, sentinel)
}

#[derive(Debug)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub timings: Vec<StageTiming>,
    pub reports: BTreeMap<String, crate::eval::MetricReport>,
}

struct Runner<'a> {
    config: &'a RunConfig,
    root: PathBuf,
    previous: Option<Manifest>,
    records: Vec<StageRecord>,
    timings: Vec<StageTiming>,
}

impl Runner<'_> {
    fn key(&self, name: &str, parts: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        for p in parts {
            h.update([0u8]);
            h.update(p.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Checksums of a completed stage's artifacts, for keying its dependents.
    fn digest_of(&self, name: &str) -> String {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.artifacts.iter().map(|(p, s)| format!("{p}={s}")).collect::<Vec<_>>().join(";"))
            .unwrap_or_default()
    }

    fn cached(&self, name: &str, key: &str) -> Option<StageRecord> {
        let prev = self.previous.as_ref()?;
        let rec = prev.stages.iter().find(|r| r.name == name && r.key == key && r.status == StageStatus::Complete)?;
        let ok = rec
            .artifacts
            .iter()
            .all(|(p, sum)| file_sha256(&self.root.join(p)).ok().as_deref() == Some(sum.as_str()));
        ok.then(|| rec.clone())
    }

    /// Runs `body` unless a cached result with the same key is on disk; `load`
    /// restores the value from the cached artifacts.
    fn stage<T>(
        &mut self,
        name: &str,
        key: String,
        body: impl FnOnce(&Path) -> Result<(T, Vec<String>)>,
        load: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        if let Some(rec) = self.cached(name, &key) {
            if let Ok(value) = load(&self.root) {
                self.records.push(rec);
                self.timings.push(StageTiming {
                    name: name.into(),
                    seconds: start.elapsed().as_secs_f64(),
                    cached: true,
                });
                return Ok(value);
            }
        }
        log::info!("stage {name}");
        match body(&self.root) {
            Ok((value, artifacts)) => {
                let mut sums = BTreeMap::new();
                for a in artifacts {
                    let sum = file_sha256(&self.root.join(&a))?;
                    sums.insert(a, sum);
                }
                self.records.push(StageRecord {
                    name: name.into(),
                    key,
                    status: StageStatus::Complete,
                    artifacts: sums,
                    error: None,
                });
                self.timings.push(StageTiming {
                    name: name.into(),
                    seconds: start.elapsed().as_secs_f64(),
                    cached: false,
                });
                Ok(value)
            }
            Err(e) => {
                self.records.push(StageRecord {
                    name: name.into(),
                    key,
                    status: StageStatus::Failed,
                    artifacts: BTreeMap::new(),
                    error: Some(e.to_string()),
                });
                Err(SlnError::Stage {
                    stage: name.into(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn manifest(&self) -> Result<Manifest> {
        let mut stages = self.records.clone();
        if let Some(prev) = &self.previous {
            for r in &prev.stages {
                if !stages.iter().any(|s| s.name == r.name) {
                    let mut stale = r.clone();
                    stale.status = StageStatus::Stale;
                    stages.push(stale);
                }
            }
        }
        Ok(Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.config.hash()?,
            seeds: self.config.seeds(),
            stages,
        })
    }

    fn finish(&self) -> Result<Manifest> {
        let manifest = self.manifest()?;
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").at(&path)?;
        let path = self.root.join(TIMINGS_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.timings)? + "\n").at(&path)?;
        Ok(manifest)
    }
}

fn write_with<F>(root: &Path, rel: &str, f: F) -> Result<String>
where
    F: FnOnce(std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let file = std::fs::File::create(&path).at(&path)?;
    f(std::io::BufWriter::new(file))?;
    Ok(rel.to_string())
}

/// Executes the configured stages under `config.out`.
///
/// The manifest is written even when a stage fails; the error names the stage.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput> {
    let root = config.out.clone();
    std::fs::create_dir_all(&root).at(&root)?;
    let previous = Manifest::load(&root.join(MANIFEST_FILE)).ok();
    let mut runner = Runner {
        config,
        root: root.clone(),
        previous,
        records: Vec::new(),
        timings: Vec::new(),
    };
    let result = run_stages(&mut runner);
    let manifest = runner.finish()?;
    let reports = result?;
    Ok(RunOutput {
        manifest,
        timings: runner.timings,
        reports,
    })
}

fn json_of<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config values serialize")
}

fn run_stages(r: &mut Runner<'_>) -> Result<BTreeMap<String, crate::eval::MetricReport>> {
    let config = r.config;
    let seeds = config.seeds();

    // ingest
    let mut data = config.data.clone();
    data.synth.seed = seeds.synth;
    data.synth.intervals = config.intervals;
    let source_sum = match &data.corpus {
        Some(p) => {
            if !p.exists() {
                return Err(SlnError::Stage {
                    stage: "ingest".into(),
                    source: Box::new(SlnError::InvalidArgument(format!("data.corpus: no such file {}", p.display()))),
                });
            }
            file_sha256(p)?
        }
        None => String::new(),
    };
    let roster_sum = match &data.roster {
        Some(p) => file_sha256(p)?,
        None => String::new(),
    };
    let key = r.key("ingest", &[&json_of(&data), &source_sum, &roster_sum]);
    let corpus = r.stage(
        "ingest",
        key,
        |root| {
            let corpus = match &data.corpus {
                None => synth_forum(&data.synth)?,
                Some(path) => {
                    let roster = match &data.roster {
                        Some(p) => Roster::load(p)?,
                        None => Roster::default(),
                    };
                    let window = parse_window(data.start.as_deref(), data.end.as_deref())?;
                    ingest_file(path, data.format, &data.course_id, window, &roster)?
                }
            };
            corpus.save(&root.join("corpus.jsonl"))?;
            Ok((corpus, vec!["corpus.jsonl".into()]))
        },
        |root| ForumCorpus::load(&root.join("corpus.jsonl")),
    )?;

    // graph
    let key = r.key("graph", &[&config.intervals.to_string(), &r.digest_of("ingest")]);
    let timeline = r.stage(
        "graph",
        key,
        |root| {
            let tl = build_timeline(&corpus, config.intervals)?;
            tl.save(&root.join("timeline.json"))?;
            Ok((tl, vec!["timeline.json".into()]))
        },
        |root| Timeline::load(&root.join("timeline.json")),
    )?;

    // topics
    let lda = config.lda_params();
    let key = r.key("topics", &[&json_of(&lda), &r.digest_of("ingest")]);
    let topics = r.stage(
        "topics",
        key,
        |root| {
            let model = fit_corpus(&corpus, &lda)?;
            model.save(&root.join("topics.json"))?;
            let words = crate::topics::topic_table(&model, 3);
            let rel = write_with(root, "topics_top_words.csv", |w| crate::topics::write_top_words(&words, w))?;
            Ok((model, vec!["topics.json".into(), rel]))
        },
        |root| TopicModel::load(&root.join("topics.json")),
    )?;

    // features
    let key = r.key(
        "features",
        &[
            &json_of(&config.features),
            &config.topics.threshold().to_string(),
            &r.digest_of("graph"),
            &r.digest_of("topics"),
        ],
    );
    let table = r.stage(
        "features",
        key,
        |root| {
            let table = build_features(&timeline, &topics, config.topics.threshold(), &config.features);
            export_features(&table, &root.join("features.csv"))?;
            Ok((table, vec!["features.csv".into()]))
        },
        |root| import_features(&root.join("features.csv")),
    )?;
    let features_digest = r.digest_of("features");

    // train: every model on all pairs
    let mut trained: BTreeMap<String, TrainedModel> = BTreeMap::new();
    if config.wants(Stage::Train) {
        let all: Vec<usize> = (0..table.series.len()).collect();
        for &kind in &config.models {
            let spec = config.model_spec(kind);
            let rel = format!("models/{}.json", kind.name());
            let key = r.key("train", &[&json_of(&spec), &features_digest]);
            let model = r.stage(
                &format!("train.{}", kind.name()),
                key,
                |root| {
                    let model = predictors::fit(&spec, &table, &all)?;
                    let path = root.join(&rel);
                    std::fs::create_dir_all(path.parent().expect("models dir")).at(root)?;
                    model.save(&path)?;
                    Ok((model, vec![rel.clone()]))
                },
                |root| TrainedModel::load(&root.join(&rel)),
            )?;
            trained.insert(kind.name().to_string(), model);
        }
    }

    // eval
    let mut reports = BTreeMap::new();
    if config.wants(Stage::Eval) {
        let options = config.eval_options();
        for &kind in &config.models {
            let spec = config.model_spec(kind);
            let rel = format!("reports/{}.csv", kind.name());
            let key = r.key("eval", &[&json_of(&spec), &format!("{options:?}"), &config.dataset, &features_digest]);
            let report = r.stage(
                &format!("eval.{}", kind.name()),
                key,
                |root| {
                    let report = evaluate_repeated(&spec, &table, &config.dataset, options)?;
                    let rel = write_with(root, &rel, |w| report.write_csv(w))?;
                    Ok((Some(report), vec![rel]))
                },
                |_| Ok(None),
            )?;
            if let Some(report) = report {
                reports.insert(kind.name().to_string(), report);
            }
        }
    }

    // analyze
    if config.wants(Stage::Analyze) {
        let a = &config.analyze;
        let key = r.key(
            "analyze",
            &[&json_of(a), &r.digest_of("graph"), &features_digest, &json_of(&trained.keys().collect::<Vec<_>>())],
        );
        let model_digests: Vec<String> = trained.keys().map(|k| r.digest_of(&format!("train.{k}"))).collect();
        let key = r.key("analyze", &[&key, &model_digests.join(";")]);
        r.stage(
            "analyze",
            key,
            |root| {
                let mut out = Vec::new();
                if a.snr {
                    let rows = analytics::snr_table(&table, a.pooled)?;
                    out.push(write_with(root, "analysis/snr.csv", |w| analytics::write_snr_csv(&rows, w))?);
                }
                if a.cdf {
                    for f in FEATURE_COLUMNS {
                        let curves = analytics::cdf_export(&table, f, a.pooled)?;
                        out.push(write_with(root, &format!("analysis/cdf_{f}.csv"), |w| analytics::write_cdf_csv(&curves, w))?);
                    }
                }
                if a.graph {
                    let report = analytics::graph_report(&timeline);
                    out.push(write_with(root, "analysis/graph.csv", |w| analytics::write_graph_csv(&report, w))?);
                }
                if a.gates {
                    if let Some(pair) = default_trace_pair(&table) {
                        for (name, model) in &trained {
                            if model.spec.architecture().is_some_and(|arch| arch.is_recurrent()) {
                                let trace = analytics::gate_trace(model, &table, pair)?;
                                out.push(write_with(root, &format!("analysis/gates_{name}.csv"), |w| analytics::write_gate_csv(&trace, w))?);
                            }
                        }
                    }
                }
                for spec in &a.ablations {
                    let groups = parse_groups(spec)?;
                    let base = config.model_spec(ModelKind::Crnn);
                    let report = analytics::ablation(&groups, &base, &table, &config.dataset, config.eval_options())?;
                    let tag = spec.replace('+', "_");
                    out.push(write_with(root, &format!("analysis/ablation_{tag}.csv"), |w| report.write_csv(w))?);
                }
                Ok(((), out))
            },
            |_| Ok(()),
        )?;
    }
    Ok(reports)
}

/// `"nei+path"` to its groups, in canonical order without duplicates.
pub fn parse_groups(spec: &str) -> Result<Vec<FeatureGroup>> {
    let mut groups: Vec<FeatureGroup> = spec.split(['+', ',']).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?;
    groups.sort();
    groups.dedup();
    if groups.is_empty() {
        return Err(SlnError::InvalidArgument("ablation needs at least one feature group".into()));
    }
    Ok(groups)
}

/// The formed pair with the latest formation before the final interval.
pub fn default_trace_pair(table: &FeatureTable) -> Option<usize> {
    table
        .series
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.formation_interval().filter(|&i| i < table.intervals).map(|i| (i, k)))
        .max_by_key(|&(i, k)| (i, std::cmp::Reverse(k)))
        .map(|(_, k)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn groups_parse_in_canonical_order() {
        assert_eq!(parse_groups("post+nei").unwrap(), vec![FeatureGroup::Nei, FeatureGroup::Post]);
        assert!(parse_groups("").is_err());
    }
}
