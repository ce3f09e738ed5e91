//! On-disk dataset store.
//!
//! ```text
//! <root>/<dataset>/manifest.json
//! <root>/<dataset>/profiles/step-0000.jsonl      one {"user","tokens"} per line
//! <root>/<dataset>/steps/step-0000.json          hierarchy with tags and sentiment
//! <root>/<dataset>/steps/step-0000.members.json  leaf id -> member user ids
//! <root>/<dataset>/steps/step-0000.centroids.bin node centroids
//! ```
//!
//! Every file is a pure function of the inputs and configuration, so two runs
//! with the same seed produce identical bytes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterHierarchy, ClusterNode, Linkage};
use crate::corpus::{Dictionary, SparseTermVector, TermWeighting};
use crate::error::{Error, Result};
use crate::sentiment::{ClusterSentiment, StatsScope};

const CENTROID_MAGIC: &[u8; 4] = b"CSC1";

/// Pipeline progress recorded in the manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingested,
    Clustered,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub posts: usize,
    pub users: usize,
    pub clusterable: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEcho {
    pub start: String,
    pub step_seconds: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringEcho {
    pub p: usize,
    pub k: usize,
    pub k_low: usize,
    pub linkage: Linkage,
    pub seed: u64,
    pub tag_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentEcho {
    pub scope: StatsScope,
    pub lexicon_positive: String,
    pub lexicon_negative: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub weighting: TermWeighting,
    pub theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<SentimentEcho>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub stage: Stage,
    pub complete: bool,
    pub step_count: usize,
    pub labels: Vec<String>,
    /// Absent when labels are obfuscated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeEcho>,
    pub steps: Vec<StepSummary>,
    pub config: ConfigEcho,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.step_count || self.steps.len() != self.step_count {
            return Err(Error::Invalid(format!(
                "manifest of `{}` disagrees with its step count",
                self.id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(l) = self.labels.iter().find(|l| !seen.insert(*l)) {
            return Err(Error::Invalid(format!(
                "manifest of `{}` repeats step label `{l}`",
                self.id
            )));
        }
        if self.complete != (self.stage == Stage::Complete) {
            return Err(Error::Invalid(format!(
                "manifest of `{}` has inconsistent stage",
                self.id
            )));
        }
        Ok(())
    }
}

/// One user's tokens within a step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredProfile {
    pub user: String,
    pub tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StepFile {
    step: usize,
    root: usize,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    size: usize,
    tags: Vec<(String, f64)>,
    sent: Option<ClusterSentiment>,
}

/// A step read back from disk. Centroid ids index `terms`.
#[derive(Clone, Debug)]
pub struct StoredStep {
    pub hierarchy: ClusterHierarchy,
    pub terms: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, id: &str) -> Result<PathBuf> {
        let valid = !id.is_empty()
            && !id.starts_with('.')
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !valid {
            return Err(Error::Invalid(format!("invalid dataset id `{id}`")));
        }
        Ok(self.root.join(id))
    }

    fn manifest_path(&self, id: &str) -> Result<PathBuf> {
        Ok(self.dataset_dir(id)?.join("manifest.json"))
    }

    fn profiles_path(&self, id: &str, step: usize) -> Result<PathBuf> {
        Ok(self
            .dataset_dir(id)?
            .join("profiles")
            .join(format!("step-{step:04}.jsonl")))
    }

    fn step_path(&self, id: &str, step: usize, suffix: &str) -> Result<PathBuf> {
        Ok(self
            .dataset_dir(id)?
            .join("steps")
            .join(format!("step-{step:04}{suffix}")))
    }

    pub fn has_dataset(&self, id: &str) -> bool {
        self.manifest_path(id).is_ok_and(|p| p.is_file())
    }

    /// Manifests of every dataset under the root, sorted by id. Unreadable or
    /// malformed manifests are skipped with a warning.
    pub fn list(&self) -> Result<Vec<Manifest>> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let entries = fs::read_dir(&self.root).map_err(|e| Error::read(&self.root, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::read(&self.root, e))?;
            if entry.path().join("manifest.json").is_file() {
                if let Some(id) = entry.file_name().to_str() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        let mut manifests = Vec::new();
        for id in ids {
            match self.read_manifest(&id) {
                Ok(m) => manifests.push(m),
                Err(e) => log::warn!("skipping dataset `{id}`: {e}"),
            }
        }
        Ok(manifests)
    }

    pub fn read_manifest(&self, id: &str) -> Result<Manifest> {
        let path = self.manifest_path(id)?;
        let bytes = fs::read(&path).map_err(|e| Error::read(&path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
        if manifest.id != id {
            return Err(Error::Invalid(format!(
                "manifest in `{id}` names dataset `{}`",
                manifest.id
            )));
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        manifest.validate()?;
        let path = self.manifest_path(&manifest.id)?;
        write_atomic(&path, &to_json(manifest))
    }

    /// Removes everything stored for `id`.
    pub fn clear_dataset(&self, id: &str) -> Result<()> {
        let dir = self.dataset_dir(id)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::write(&dir, e))?;
        }
        Ok(())
    }

    pub fn write_profiles(&self, id: &str, step: usize, profiles: &[StoredProfile]) -> Result<()> {
        let path = self.profiles_path(id, step)?;
        let mut out = Vec::new();
        for p in profiles {
            serde_json::to_writer(&mut out, p).expect("profiles serialize");
            out.push(b'\n');
        }
        write_atomic(&path, &out)
    }

    pub fn read_profiles(&self, id: &str, step: usize) -> Result<Vec<StoredProfile>> {
        let path = self.profiles_path(id, step)?;
        let file = File::open(&path).map_err(|e| Error::read(&path, e))?;
        let mut profiles = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::read(&path, e))?;
            if !line.trim().is_empty() {
                profiles.push(serde_json::from_str(&line).map_err(|e| Error::json(&path, e))?);
            }
        }
        Ok(profiles)
    }

    /// Writes the hierarchy file plus its member and centroid sidecars.
    /// Centroid ids are resolved through `dictionary`.
    pub fn write_step(
        &self,
        id: &str,
        hierarchy: &ClusterHierarchy,
        dictionary: &Dictionary,
    ) -> Result<()> {
        let step = hierarchy.step_index;
        self.write_hierarchy(id, hierarchy)?;

        let members: BTreeMap<String, &Vec<String>> = hierarchy
            .nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| (n.id.to_string(), &n.members))
            .collect();
        write_atomic(
            &self.step_path(id, step, ".members.json")?,
            &to_json(&members),
        )?;

        let mut used: Vec<u32> = hierarchy
            .nodes
            .iter()
            .flat_map(|n| n.centroid.iter().map(|(t, _)| t))
            .collect();
        used.sort_unstable();
        used.dedup();
        let terms = used
            .iter()
            .map(|&t| {
                dictionary
                    .term(t)
                    .ok_or_else(|| Error::Invalid(format!("centroid term {t} not in dictionary")))
            })
            .collect::<Result<Vec<&str>>>()?;
        let local: BTreeMap<u32, u32> = used
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i as u32))
            .collect();
        let mut buf = Vec::new();
        buf.extend_from_slice(CENTROID_MAGIC);
        buf.write_u32::<LittleEndian>(terms.len() as u32)
            .expect("vec write");
        for t in &terms {
            buf.write_u32::<LittleEndian>(t.len() as u32)
                .expect("vec write");
            buf.extend_from_slice(t.as_bytes());
        }
        buf.write_u32::<LittleEndian>(hierarchy.nodes.len() as u32)
            .expect("vec write");
        for node in &hierarchy.nodes {
            buf.write_u32::<LittleEndian>(node.centroid.len() as u32)
                .expect("vec write");
            for (t, w) in node.centroid.iter() {
                buf.write_u32::<LittleEndian>(local[&t]).expect("vec write");
                buf.write_f64::<LittleEndian>(w).expect("vec write");
            }
        }
        write_atomic(&self.step_path(id, step, ".centroids.bin")?, &buf)
    }

    /// Rewrites only the hierarchy file (tags, sizes and sentiment).
    pub fn write_hierarchy(&self, id: &str, hierarchy: &ClusterHierarchy) -> Result<()> {
        let file = StepFile {
            step: hierarchy.step_index,
            root: hierarchy.root,
            nodes: hierarchy
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    parent: n.parent,
                    children: n.children.clone(),
                    size: n.size,
                    tags: n.tags.clone(),
                    sent: n.sentiment,
                })
                .collect(),
        };
        write_atomic(
            &self.step_path(id, hierarchy.step_index, ".json")?,
            &to_json(&file),
        )
    }

    pub fn has_step(&self, id: &str, step: usize) -> bool {
        [".json", ".centroids.bin"]
            .iter()
            .all(|s| self.step_path(id, step, s).is_ok_and(|p| p.is_file()))
    }

    /// Reads a step's hierarchy and centroids; members too when `with_members`.
    pub fn read_step(&self, id: &str, step: usize, with_members: bool) -> Result<StoredStep> {
        if !self.has_step(id, step) {
            return Err(Error::MissingStep(step));
        }
        let path = self.step_path(id, step, ".json")?;
        let bytes = fs::read(&path).map_err(|e| Error::read(&path, e))?;
        let file: StepFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
        if file.step != step {
            return Err(Error::Invalid(format!(
                "{} holds step {}",
                path.display(),
                file.step
            )));
        }

        let cpath = self.step_path(id, step, ".centroids.bin")?;
        let (terms, centroids) = read_centroids(&cpath)?;
        if centroids.len() != file.nodes.len() {
            return Err(Error::Invalid(format!(
                "{} has {} centroids for {} nodes",
                cpath.display(),
                centroids.len(),
                file.nodes.len()
            )));
        }

        let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
        if with_members {
            let mpath = self.step_path(id, step, ".members.json")?;
            let bytes = fs::read(&mpath).map_err(|e| Error::read(&mpath, e))?;
            members = serde_json::from_slice(&bytes).map_err(|e| Error::json(&mpath, e))?;
        }

        let nodes = file
            .nodes
            .into_iter()
            .zip(centroids)
            .map(|(r, centroid)| ClusterNode {
                members: members.remove(&r.id.to_string()).unwrap_or_default(),
                id: r.id,
                parent: r.parent,
                children: r.children,
                size: r.size,
                centroid,
                tags: r.tags,
                sentiment: r.sent,
            })
            .collect();
        let hierarchy = ClusterHierarchy {
            step_index: step,
            root: file.root,
            nodes,
        };
        hierarchy
            .validate()
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        Ok(StoredStep { hierarchy, terms })
    }

    /// Loads a complete dataset for querying. Steps whose files are absent
    /// are recorded as missing rather than failing the load.
    pub fn load_dataset(&self, id: &str) -> Result<Dataset> {
        let manifest = self.read_manifest(id)?;
        if !manifest.complete {
            return Err(Error::IncompleteStore(self.dataset_dir(id)?));
        }
        let mut stored = Vec::with_capacity(manifest.step_count);
        for step in 0..manifest.step_count {
            match self.read_step(id, step, false) {
                Ok(s) => stored.push(Some(s)),
                Err(Error::MissingStep(_)) => {
                    log::warn!("dataset `{id}` is missing step {step}");
                    stored.push(None);
                }
                Err(e) => return Err(e),
            }
        }

        let dictionary = Dictionary::build(stored.iter().flatten().map(|s| &s.terms));
        let steps = stored
            .into_iter()
            .map(|s| {
                s.map(
                    |StoredStep {
                         mut hierarchy,
                         terms,
                     }| {
                        let global: Vec<u32> = terms
                            .iter()
                            .map(|t| dictionary.id(t).expect("dictionary covers step terms"))
                            .collect();
                        for node in &mut hierarchy.nodes {
                            node.centroid = SparseTermVector::from_pairs(
                                node.centroid.iter().map(|(t, w)| (global[t as usize], w)),
                            );
                        }
                        hierarchy
                    },
                )
            })
            .collect();
        Ok(Dataset {
            manifest,
            dictionary,
            steps,
        })
    }
}

/// A complete dataset in memory, centroids over one dataset-wide dictionary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub dictionary: Dictionary,
    steps: Vec<Option<ClusterHierarchy>>,
}

impl Dataset {
    pub fn new(
        manifest: Manifest,
        dictionary: Dictionary,
        steps: Vec<Option<ClusterHierarchy>>,
    ) -> Self {
        Self {
            manifest,
            dictionary,
            steps,
        }
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn step_count(&self) -> usize {
        self.manifest.step_count
    }

    pub fn label(&self, step: usize) -> &str {
        &self.manifest.labels[step]
    }

    /// The hierarchy of `step`, or an error naming a step absent from the store.
    pub fn step(&self, step: usize) -> Result<&ClusterHierarchy> {
        match self.steps.get(step) {
            Some(Some(h)) => Ok(h),
            Some(None) => Err(Error::MissingStep(step)),
            None => Err(Error::Invalid(format!(
                "step {step} is outside 0..{}",
                self.steps.len()
            ))),
        }
    }

    pub fn available_steps(&self) -> impl Iterator<Item = &ClusterHierarchy> {
        self.steps.iter().flatten()
    }

    pub fn node(&self, step: usize, node: usize) -> Result<&ClusterNode> {
        self.step(step)?
            .node(node)
            .ok_or(Error::UnknownNode { step, node })
    }
}

fn read_centroids(path: &Path) -> Result<(Vec<String>, Vec<SparseTermVector>)> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    let bad = |what: &str| Error::Invalid(format!("{}: {what}", path.display()));
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != CENTROID_MAGIC {
        return Err(bad("not a centroid file"));
    }
    let truncated = |_| bad("truncated");
    let term_count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut terms = Vec::with_capacity(term_count.min(1 << 20));
    for _ in 0..term_count {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if len > r.len() {
            return Err(bad("truncated term"));
        }
        let (head, tail) = r.split_at(len);
        terms.push(String::from_utf8(head.to_vec()).map_err(|_| bad("term is not utf-8"))?);
        r = tail;
    }
    let node_count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut centroids = Vec::with_capacity(node_count.min(1 << 20));
    for _ in 0..node_count {
        let nnz = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut pairs = Vec::with_capacity(nnz.min(1 << 20));
        for _ in 0..nnz {
            let t = r.read_u32::<LittleEndian>().map_err(truncated)?;
            let w = r.read_f64::<LittleEndian>().map_err(truncated)?;
            if t as usize >= terms.len() {
                return Err(bad("term index out of range"));
            }
            pairs.push((t, w));
        }
        centroids.push(SparseTermVector::from_pairs(pairs));
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok((terms, centroids))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("store records serialize");
    out.push(b'\n');
    out
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::write(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes)
            .and_then(|_| w.flush())
            .map_err(|e| Error::write(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::write(path, e))
}
