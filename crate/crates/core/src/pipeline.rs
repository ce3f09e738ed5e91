//! Batch pipeline: ingest posts into per-step profiles, cluster each step,
//! score sentiment and persist everything to the store.
//!
//! The three stages can run separately (each reads what the previous one
//! wrote) or back to back; both routes leave the same bytes on disk.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_time_step, ClusterHierarchy, ClusteringConfig, Linkage};
use crate::corpus::{
    build_profiles, parse_timestamp, read_all, vectorize, Dictionary, FileIngest, StepCorpus,
    Stoplist, TermWeighting, TimeStepSpec, UserProfile,
};
use crate::error::{Error, Result};
use crate::explore::DEFAULT_THETA;
use crate::sentiment::{
    corpus_stats, doc_sentiment, score_hierarchy, DocSentiment, SentimentLexicon, SentimentStats,
    StatsScope,
};
use crate::store::{
    ClusteringEcho, ConfigEcho, Manifest, SentimentEcho, Stage, StepSummary, Store, StoredProfile,
    TimeEcho,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    /// First step start; inferred from the data when absent.
    pub start: Option<String>,
    /// Step length such as `1d`, `12h`, `30m` or `3600s`.
    pub step: String,
    /// Number of steps; inferred from the data when absent.
    pub count: Option<usize>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            start: None,
            step: "1d".into(),
            count: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub p: usize,
    pub k: usize,
    /// Defaults to `ceil(2k / p)`.
    pub k_low: Option<usize>,
    pub linkage: Linkage,
    pub seed: u64,
    pub tag_count: usize,
    pub weighting: TermWeighting,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        let c = ClusteringConfig::default();
        Self {
            p: c.p,
            k: c.k,
            k_low: None,
            linkage: c.linkage,
            seed: c.seed,
            tag_count: c.tag_count,
            weighting: TermWeighting::default(),
        }
    }
}

impl ClusteringSection {
    pub fn config(&self) -> ClusteringConfig {
        ClusteringConfig {
            p: self.p,
            k_low: self
                .k_low
                .unwrap_or_else(|| ClusteringConfig::default_k_low(self.p, self.k)),
            k: self.k,
            linkage: self.linkage,
            seed: self.seed,
            tag_count: self.tag_count,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentSection {
    /// Positive and negative lexicon files; the bundled lexicon when both are absent.
    pub positive: Option<PathBuf>,
    pub negative: Option<PathBuf>,
    pub scope: StatsScope,
}

impl SentimentSection {
    pub fn lexicon(&self) -> Result<SentimentLexicon> {
        match (&self.positive, &self.negative) {
            (Some(p), Some(n)) => SentimentLexicon::load(p, n),
            (None, None) => Ok(SentimentLexicon::demo()),
            _ => Err(Error::Config(
                "give both a positive and a negative lexicon, or neither".into(),
            )),
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: String,
    pub store: PathBuf,
    /// Glob patterns of NDJSON post files (optionally gzip-compressed).
    pub inputs: Vec<String>,
    pub stoplists: Vec<PathBuf>,
    pub obfuscate_labels: bool,
    /// Default match threshold recorded for queries.
    pub theta: f64,
    pub time: TimeConfig,
    pub clustering: ClusteringSection,
    pub sentiment: SentimentSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: "default".into(),
            store: PathBuf::from("store"),
            inputs: Vec::new(),
            stoplists: Vec::new(),
            obfuscate_labels: false,
            theta: DEFAULT_THETA,
            time: TimeConfig::default(),
            clustering: ClusteringSection::default(),
            sentiment: SentimentSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        Store::new(&self.store).dataset_dir(&self.dataset)?;
        self.clustering.config().validate()?;
        parse_step_length(&self.time.step)?;
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!(
                "theta must be a non-negative number, got {}",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn open_store(&self) -> Store {
        Store::new(&self.store)
    }
}

/// Parses `<n><unit>` with unit `s`, `m`, `h`, `d` or `w`.
pub fn parse_step_length(s: &str) -> Result<TimeDelta> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: i64 = num
        .parse()
        .map_err(|_| Error::Config(format!("bad step length `{s}`")))?;
    let delta = match unit {
        "s" => TimeDelta::try_seconds(n),
        "m" => TimeDelta::try_minutes(n),
        "h" => TimeDelta::try_hours(n),
        "d" | "" => TimeDelta::try_days(n),
        "w" => TimeDelta::try_weeks(n),
        _ => None,
    };
    match delta {
        Some(d) if d > TimeDelta::zero() => Ok(d),
        _ => Err(Error::Config(format!("bad step length `{s}`"))),
    }
}

/// Expands input globs into a sorted, de-duplicated file list.
pub fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for pattern in patterns {
        let paths = glob::glob(pattern)
            .map_err(|e| Error::Config(format!("bad input glob `{pattern}`: {e}")))?;
        for entry in paths {
            let path = entry.map_err(|e| {
                let path = e.path().to_path_buf();
                Error::read(path, e.into())
            })?;
            if path.is_file() {
                files.push(path);
            }
        }
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub posts: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub label: String,
    pub posts: usize,
    pub users: usize,
    pub clusterable: usize,
    pub tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaves: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

/// Summary of a pipeline run, including wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub stage: Stage,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<FileReport>,
    pub skipped_lines: usize,
    pub out_of_range: usize,
    pub total_posts: usize,
    pub total_users: usize,
    pub steps: Vec<StepReport>,
    pub wall_seconds: f64,
}

struct Ingested {
    spec: TimeStepSpec,
    steps: Vec<StepCorpus>,
    files: Vec<FileReport>,
    skipped: usize,
    out_of_range: usize,
}

fn time_spec(config: &TimeConfig, timestamps: &[DateTime<Utc>]) -> Result<TimeStepSpec> {
    let step = parse_step_length(&config.step)?;
    let inferred = || TimeStepSpec::covering(timestamps.iter().copied(), step);
    match (&config.start, config.count) {
        (None, None) => inferred(),
        (None, Some(count)) => TimeStepSpec::new(inferred()?.epoch_start, step, count),
        (Some(start), count) => {
            let start = parse_timestamp(start)
                .ok_or_else(|| Error::Config(format!("bad time start `{start}`")))?;
            let count = match count {
                Some(c) => c,
                None => {
                    let last = timestamps.iter().max().ok_or_else(|| {
                        Error::Invalid("no timestamps to derive time steps from".into())
                    })?;
                    let span = (*last - start).num_seconds();
                    if span < 0 {
                        return Err(Error::Config(
                            "every post precedes the configured start".into(),
                        ));
                    }
                    (span / step.num_seconds()) as usize + 1
                }
            };
            TimeStepSpec::new(start, step, count)
        }
    }
}

fn ingest(config: &PipelineConfig) -> Result<Ingested> {
    let files = expand_inputs(&config.inputs)?;
    let stoplist = Stoplist::load(&config.stoplists)?;
    let ingests: Vec<FileIngest> = read_all(&files)?;
    let reports = ingests
        .iter()
        .map(|f| FileReport {
            path: f.path.clone(),
            posts: f.posts.len(),
            skipped: f.skipped,
        })
        .collect();
    let skipped = ingests.iter().map(|f| f.skipped).sum();
    for f in &ingests {
        if f.skipped > 0 {
            log::warn!(
                "{}: skipped {} malformed lines",
                f.path.display(),
                f.skipped
            );
        }
    }
    let timestamps: Vec<DateTime<Utc>> = ingests
        .iter()
        .flat_map(|f| f.posts.iter().map(|p| p.timestamp))
        .collect();
    let spec = time_spec(&config.time, &timestamps)?;
    let build = build_profiles(
        ingests.into_iter().flat_map(|f| f.posts),
        &spec,
        &stoplist,
        config.clustering.weighting,
    );
    Ok(Ingested {
        spec,
        steps: build.steps,
        files: reports,
        skipped,
        out_of_range: build.out_of_range,
    })
}

fn labels(spec: &TimeStepSpec, obfuscate: bool) -> Vec<String> {
    (0..spec.step_count)
        .map(|i| {
            if obfuscate {
                format!("t{}", i + 1)
            } else {
                spec.label(i)
            }
        })
        .collect()
}

fn summary(step: &StepCorpus) -> StepSummary {
    StepSummary {
        posts: step.post_count,
        users: step.profiles.len(),
        clusterable: step.clusterable().count(),
        tokens: step.token_total(),
    }
}

fn write_ingested(store: &Store, config: &PipelineConfig, ingested: &Ingested) -> Result<Manifest> {
    store.clear_dataset(&config.dataset)?;
    let manifest = Manifest {
        id: config.dataset.clone(),
        stage: Stage::Ingested,
        complete: false,
        step_count: ingested.spec.step_count,
        labels: labels(&ingested.spec, config.obfuscate_labels),
        time: (!config.obfuscate_labels).then(|| TimeEcho {
            start: ingested.spec.epoch_start.to_rfc3339(),
            step_seconds: ingested.spec.step_length.num_seconds(),
        }),
        steps: ingested.steps.iter().map(summary).collect(),
        config: ConfigEcho {
            weighting: config.clustering.weighting,
            theta: config.theta,
            clustering: None,
            sentiment: None,
        },
    };
    store.write_manifest(&manifest)?;
    for step in &ingested.steps {
        let profiles: Vec<StoredProfile> = step
            .profiles
            .iter()
            .map(|p| StoredProfile {
                user: p.user_id.clone(),
                tokens: p.tokens.clone(),
            })
            .collect();
        store.write_profiles(&config.dataset, step.step_index, &profiles)?;
    }
    Ok(manifest)
}

/// Rebuilds step corpora from stored profiles.
fn load_corpora(store: &Store, manifest: &Manifest) -> Result<Vec<StepCorpus>> {
    (0..manifest.step_count)
        .map(|step_index| {
            let stored = store.read_profiles(&manifest.id, step_index)?;
            let dictionary = Dictionary::build(stored.iter().map(|p| &p.tokens));
            let profiles = stored
                .into_iter()
                .map(|p| {
                    let vector = vectorize(&p.tokens, &dictionary, manifest.config.weighting);
                    UserProfile {
                        user_id: p.user,
                        step_index,
                        tokens: p.tokens,
                        vector,
                    }
                })
                .collect();
            Ok(StepCorpus {
                step_index,
                dictionary,
                profiles,
                post_count: manifest.steps[step_index].posts,
            })
        })
        .collect()
}

fn require_stage(store: &Store, config: &PipelineConfig, needed: Stage) -> Result<Manifest> {
    let manifest = store.read_manifest(&config.dataset)?;
    if manifest.stage < needed {
        return Err(Error::Config(format!(
            "dataset `{}` is at stage {:?}; run the earlier stages first",
            manifest.id, manifest.stage
        )));
    }
    Ok(manifest)
}

fn cluster_all(
    store: &Store,
    config: &PipelineConfig,
    manifest: &mut Manifest,
    corpora: &[StepCorpus],
) -> Result<Vec<ClusterHierarchy>> {
    let clustering = config.clustering.config();
    clustering.validate()?;
    manifest.stage = Stage::Ingested;
    manifest.complete = false;
    manifest.config.clustering = None;
    manifest.config.sentiment = None;
    store.write_manifest(manifest)?;

    let mut hierarchies = Vec::with_capacity(corpora.len());
    for corpus in corpora {
        let started = Instant::now();
        let hierarchy = cluster_time_step(corpus, &clustering).map_err(|e| Error::Step {
            step: corpus.step_index,
            cause: Box::new(e),
        })?;
        store.write_step(&manifest.id, &hierarchy, &corpus.dictionary)?;
        log::info!(
            "step {}: {} profiles, {} nodes in {:.2}s",
            corpus.step_index,
            corpus.clusterable().count(),
            hierarchy.nodes.len(),
            started.elapsed().as_secs_f64()
        );
        hierarchies.push(hierarchy);
    }

    manifest.stage = Stage::Clustered;
    manifest.config.theta = config.theta;
    manifest.config.clustering = Some(ClusteringEcho {
        p: clustering.p,
        k: clustering.k,
        k_low: clustering.k_low,
        linkage: clustering.linkage,
        seed: clustering.seed,
        tag_count: clustering.tag_count,
    });
    store.write_manifest(manifest)?;
    Ok(hierarchies)
}

/// Per-step document sentiment of every clusterable profile, keyed by user.
fn step_documents(
    corpora: &[StepCorpus],
    lexicon: &SentimentLexicon,
) -> Vec<HashMap<String, DocSentiment>> {
    corpora
        .iter()
        .map(|c| {
            c.clusterable()
                .map(|p| (p.user_id.clone(), doc_sentiment(&p.tokens, lexicon)))
                .collect()
        })
        .collect()
}

fn sorted_docs(docs: &HashMap<String, DocSentiment>) -> Vec<DocSentiment> {
    let mut entries: Vec<(&String, &DocSentiment)> = docs.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    entries.into_iter().map(|(_, d)| *d).collect()
}

fn score_all(
    store: &Store,
    config: &PipelineConfig,
    manifest: &mut Manifest,
    corpora: &[StepCorpus],
    hierarchies: &mut [ClusterHierarchy],
) -> Result<()> {
    let lexicon = config.sentiment.lexicon()?;
    let docs = step_documents(corpora, &lexicon);
    let global = match config.sentiment.scope {
        StatsScope::Global => {
            let all: Vec<DocSentiment> = docs.iter().flat_map(sorted_docs).collect();
            Some(corpus_stats(&all)?)
        }
        StatsScope::PerStep => None,
    };
    for hierarchy in hierarchies.iter_mut() {
        let step = hierarchy.step_index;
        let wrap = |e| Error::Step {
            step,
            cause: Box::new(e),
        };
        let stats: SentimentStats = match global {
            Some(s) => s,
            None => corpus_stats(&sorted_docs(&docs[step])).map_err(wrap)?,
        };
        score_hierarchy(hierarchy, &stats, |user| docs[step].get(user).copied()).map_err(wrap)?;
        store.write_hierarchy(&manifest.id, hierarchy)?;
    }
    let (positive, negative) = lexicon.fingerprints();
    manifest.stage = Stage::Complete;
    manifest.complete = true;
    manifest.config.sentiment = Some(SentimentEcho {
        scope: config.sentiment.scope,
        lexicon_positive: positive,
        lexicon_negative: negative,
    });
    store.write_manifest(manifest)
}

fn report(
    manifest: &Manifest,
    corpora: &[StepCorpus],
    hierarchies: Option<&[ClusterHierarchy]>,
    ingested: Option<&Ingested>,
    started: Instant,
) -> RunReport {
    let steps: Vec<StepReport> = corpora
        .iter()
        .map(|c| {
            let s = summary(c);
            let h = hierarchies.map(|hs| &hs[c.step_index]);
            StepReport {
                step: c.step_index,
                label: manifest.labels[c.step_index].clone(),
                posts: s.posts,
                users: s.users,
                clusterable: s.clusterable,
                tokens: s.tokens,
                leaves: h.map(ClusterHierarchy::leaf_count),
                nodes: h.map(|h| h.nodes.len()),
            }
        })
        .collect();
    RunReport {
        dataset: manifest.id.clone(),
        stage: manifest.stage,
        files: ingested.map(|i| i.files.clone()).unwrap_or_default(),
        skipped_lines: ingested.map_or(0, |i| i.skipped),
        out_of_range: ingested.map_or(0, |i| i.out_of_range),
        total_posts: steps.iter().map(|s| s.posts).sum(),
        total_users: steps.iter().map(|s| s.users).sum(),
        steps,
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Reads the inputs and stores per-step profiles, replacing any earlier
/// contents of the dataset.
pub fn run_ingest(config: &PipelineConfig) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    let store = config.open_store();
    let ingested = ingest(config)?;
    let manifest = write_ingested(&store, config, &ingested)?;
    Ok(report(
        &manifest,
        &ingested.steps,
        None,
        Some(&ingested),
        started,
    ))
}

/// Clusters every step of an ingested dataset.
pub fn run_cluster(config: &PipelineConfig) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    let store = config.open_store();
    let mut manifest = require_stage(&store, config, Stage::Ingested)?;
    let corpora = load_corpora(&store, &manifest)?;
    let hierarchies = cluster_all(&store, config, &mut manifest, &corpora)?;
    Ok(report(
        &manifest,
        &corpora,
        Some(&hierarchies),
        None,
        started,
    ))
}

/// Scores sentiment over a clustered dataset and marks it complete.
pub fn run_sentiment(config: &PipelineConfig) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    let store = config.open_store();
    let mut manifest = require_stage(&store, config, Stage::Clustered)?;
    let corpora = load_corpora(&store, &manifest)?;
    let mut hierarchies = (0..manifest.step_count)
        .map(|step| {
            store
                .read_step(&manifest.id, step, true)
                .map(|s| s.hierarchy)
        })
        .collect::<Result<Vec<_>>>()?;
    score_all(&store, config, &mut manifest, &corpora, &mut hierarchies)?;
    Ok(report(
        &manifest,
        &corpora,
        Some(&hierarchies),
        None,
        started,
    ))
}

/// All three stages without re-reading intermediate files.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    config.sentiment.lexicon()?;
    let store = config.open_store();
    let ingested = ingest(config)?;
    let mut manifest = write_ingested(&store, config, &ingested)?;
    let mut hierarchies = cluster_all(&store, config, &mut manifest, &ingested.steps)?;
    score_all(
        &store,
        config,
        &mut manifest,
        &ingested.steps,
        &mut hierarchies,
    )?;
    Ok(report(
        &manifest,
        &ingested.steps,
        Some(&hierarchies),
        Some(&ingested),
        started,
    ))
}
