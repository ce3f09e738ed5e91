//! Happiness-index sentiment for documents and clusters.
//!
//! Every profile gets the fraction of its tokens found in the positive and
//! negative lexicons. A cluster's score is the z-normalized mean positive
//! fraction minus the z-normalized mean negative fraction of its members,
//! normalized against corpus-wide (or per-step) means and standard deviations.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterHierarchy;
use crate::error::{Error, Result};

/// Replacement for a zero standard deviation.
pub const SIGMA_EPSILON: f64 = 1e-9;

const DEMO_POSITIVE: &str = include_str!("../data/lexicon-positive.txt");
const DEMO_NEGATIVE: &str = include_str!("../data/lexicon-negative.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentimentLexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

fn parse_terms(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl SentimentLexicon {
    pub fn new(positive: HashSet<String>, negative: HashSet<String>) -> Result<Self> {
        if positive.is_empty() || negative.is_empty() {
            return Err(Error::Config("sentiment lexicons must not be empty".into()));
        }
        if let Some(t) = positive.intersection(&negative).min() {
            return Err(Error::Config(format!(
                "term `{t}` is in both sentiment lexicons"
            )));
        }
        Ok(Self { positive, negative })
    }

    /// Loads two plain-text lexicons, one term per line.
    pub fn load(positive: &Path, negative: &Path) -> Result<Self> {
        let pos = std::fs::read_to_string(positive).map_err(|e| Error::read(positive, e))?;
        let neg = std::fs::read_to_string(negative).map_err(|e| Error::read(negative, e))?;
        Self::new(parse_terms(&pos), parse_terms(&neg))
    }

    /// Small English lexicon bundled for demos and tests.
    pub fn demo() -> Self {
        Self::new(parse_terms(DEMO_POSITIVE), parse_terms(DEMO_NEGATIVE))
            .expect("bundled lexicon is valid")
    }

    pub fn is_positive(&self, token: &str) -> bool {
        self.positive.contains(token)
    }

    pub fn is_negative(&self, token: &str) -> bool {
        self.negative.contains(token)
    }

    /// Short content hashes of the (positive, negative) term sets,
    /// independent of file layout and term order.
    pub fn fingerprints(&self) -> (String, String) {
        (fingerprint(&self.positive), fingerprint(&self.negative))
    }
}

fn fingerprint(terms: &HashSet<String>) -> String {
    use sha2::{Digest, Sha256};

    let mut sorted: Vec<&String> = terms.iter().collect();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    for t in sorted {
        hasher.update(t.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Fractions of a document's tokens that are positive and negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocSentiment {
    pub pos_frac: f64,
    pub neg_frac: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentStats {
    pub mu_p: f64,
    pub mu_n: f64,
    pub sigma_p: f64,
    pub sigma_n: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSentiment {
    pub h: f64,
    pub mu_pc: f64,
    pub mu_nc: f64,
}

/// Which documents define the normalizing means and deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsScope {
    /// All documents of all time steps.
    #[default]
    Global,
    /// Documents of the cluster's own time step.
    PerStep,
}

impl std::str::FromStr for StatsScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(StatsScope::Global),
            "per-step" => Ok(StatsScope::PerStep),
            other => Err(format!("unknown sentiment scope `{other}`")),
        }
    }
}

pub fn doc_sentiment(tokens: &[String], lexicon: &SentimentLexicon) -> DocSentiment {
    if tokens.is_empty() {
        return DocSentiment::default();
    }
    let pos = tokens.iter().filter(|t| lexicon.is_positive(t)).count();
    let neg = tokens.iter().filter(|t| lexicon.is_negative(t)).count();
    let len = tokens.len() as f64;
    DocSentiment {
        pos_frac: pos as f64 / len,
        neg_frac: neg as f64 / len,
    }
}

fn mean_and_sigma(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population means and standard deviations of the document fractions.
/// A zero deviation is replaced by [`SIGMA_EPSILON`] with a warning.
pub fn corpus_stats(docs: &[DocSentiment]) -> Result<SentimentStats> {
    if docs.len() < 2 {
        return Err(Error::TooFewDocuments(docs.len()));
    }
    let n = docs.len() as f64;
    let (mu_p, mut sigma_p) = mean_and_sigma(docs.iter().map(|d| d.pos_frac), n);
    let (mu_n, mut sigma_n) = mean_and_sigma(docs.iter().map(|d| d.neg_frac), n);
    for (name, sigma) in [("positive", &mut sigma_p), ("negative", &mut sigma_n)] {
        if *sigma == 0.0 {
            log::warn!("{name} fractions have zero variance; using sigma = {SIGMA_EPSILON:e}");
            *sigma = SIGMA_EPSILON;
        }
    }
    Ok(SentimentStats {
        mu_p,
        mu_n,
        sigma_p,
        sigma_n,
    })
}

fn happiness(mu_pc: f64, mu_nc: f64, stats: &SentimentStats) -> ClusterSentiment {
    let h = (mu_pc - stats.mu_p) / stats.sigma_p - (mu_nc - stats.mu_n) / stats.sigma_n;
    ClusterSentiment { h, mu_pc, mu_nc }
}

/// Happiness index of a cluster from its member documents.
pub fn cluster_happiness(
    members: &[DocSentiment],
    stats: &SentimentStats,
) -> Result<ClusterSentiment> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let n = members.len() as f64;
    let mu_pc = members.iter().map(|d| d.pos_frac).sum::<f64>() / n;
    let mu_nc = members.iter().map(|d| d.neg_frac).sum::<f64>() / n;
    Ok(happiness(mu_pc, mu_nc, stats))
}

/// Fills every node's sentiment from its subtree's member documents.
/// `doc_of` maps a leaf member (user id) to its document sentiment.
pub fn score_hierarchy<F>(
    hierarchy: &mut ClusterHierarchy,
    stats: &SentimentStats,
    doc_of: F,
) -> Result<()>
where
    F: Fn(&str) -> Option<DocSentiment>,
{
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); hierarchy.nodes.len()];
    for id in hierarchy.post_order() {
        let node = &hierarchy.nodes[id];
        let mut acc = (0.0, 0.0, 0);
        if node.is_leaf() {
            for user in &node.members {
                let doc = doc_of(user)
                    .ok_or_else(|| Error::Invalid(format!("no document for member `{user}`")))?;
                acc.0 += doc.pos_frac;
                acc.1 += doc.neg_frac;
                acc.2 += 1;
            }
        } else {
            for &c in &node.children {
                acc.0 += sums[c].0;
                acc.1 += sums[c].1;
                acc.2 += sums[c].2;
            }
        }
        if acc.2 == 0 {
            return Err(Error::EmptyCluster);
        }
        sums[id] = acc;
        let n = acc.2 as f64;
        hierarchy.nodes[id].sentiment = Some(happiness(acc.0 / n, acc.1 / n, stats));
    }
    Ok(())
}
