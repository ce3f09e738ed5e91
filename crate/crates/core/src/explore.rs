//! Node scoring, maximal antichain selection and scented-widget series.
//!
//! Every node of a hierarchy gets a score for the active query: a match score
//! for keyword search or cluster similarity, or a transformed happiness index
//! for the sentiment modes. The antichain is chosen bottom-up: a node replaces
//! the antichain below it when it beats everything beneath it, or when it and
//! everything beneath it fall under the threshold θ.

use serde::{Deserialize, Serialize};

use crate::cluster::{cosine, ClusterHierarchy, ClusterNode};
use crate::corpus::{Dictionary, SparseTermVector, Stoplist};
use crate::error::{Error, Result};

pub const DEFAULT_THETA: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ScoreMode {
    Search { term: String },
    Similar { step: usize, node: usize },
    Positive,
    Negative,
    PosNeg,
}

impl ScoreMode {
    pub fn is_sentiment(&self) -> bool {
        matches!(
            self,
            ScoreMode::Positive | ScoreMode::Negative | ScoreMode::PosNeg
        )
    }

    /// Parses a mode name plus its parameters as used on the wire.
    pub fn parse(
        name: &str,
        query: Option<&str>,
        step: Option<usize>,
        node: Option<usize>,
    ) -> Result<Self> {
        match name {
            "search" => {
                let q = query.unwrap_or_default();
                // same normalization as post text, minus the stoplist
                let term = crate::corpus::tokenize(q, &Stoplist::new())
                    .into_iter()
                    .next();
                match term {
                    Some(term) => Ok(ScoreMode::Search { term }),
                    None => Err(Error::Invalid("search mode needs a non-empty `q`".into())),
                }
            }
            "similar" => match (step, node) {
                (Some(step), Some(node)) => Ok(ScoreMode::Similar { step, node }),
                _ => Err(Error::Invalid(
                    "similar mode needs `step` and `node`".into(),
                )),
            },
            "positive" => Ok(ScoreMode::Positive),
            "negative" => Ok(ScoreMode::Negative),
            "posneg" => Ok(ScoreMode::PosNeg),
            other => Err(Error::Invalid(format!("unknown mode `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMode::Search { .. } => "search",
            ScoreMode::Similar { .. } => "similar",
            ScoreMode::Positive => "positive",
            ScoreMode::Negative => "negative",
            ScoreMode::PosNeg => "posneg",
        }
    }
}

/// Ratio of a node's term frequency to the dataset-wide maximum.
pub fn match_score_search(node_frequency: f64, dataset_max: f64) -> f64 {
    if dataset_max > 0.0 {
        (node_frequency / dataset_max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn match_score_similar(node: &SparseTermVector, selected: &SparseTermVector) -> f64 {
    cosine(node, selected)
}

/// Sentiment mode transform of a happiness index `h`.
pub fn sentiment_score(h: f64, mode: &ScoreMode) -> f64 {
    match mode {
        ScoreMode::Negative => -h,
        ScoreMode::PosNeg => h.abs(),
        _ => h,
    }
}

/// Query state needed to score any node of any step.
#[derive(Clone, Debug)]
pub enum Scorer {
    Search { term: Option<u32>, dataset_max: f64 },
    Similar { target: SparseTermVector },
    Sentiment(ScoreMode),
}

impl Scorer {
    /// Prepares scoring over `steps` (hierarchies whose centroids share
    /// `dictionary`). The search maximum is taken over every node of every
    /// step given.
    pub fn prepare<'a>(
        mode: &ScoreMode,
        steps: impl IntoIterator<Item = &'a ClusterHierarchy>,
        dictionary: &Dictionary,
        lookup: impl FnOnce(usize, usize) -> Option<&'a ClusterNode>,
    ) -> Result<Self> {
        match mode {
            ScoreMode::Search { term } => {
                let term = dictionary.id(term);
                let dataset_max = term.map_or(0.0, |t| {
                    steps
                        .into_iter()
                        .flat_map(|h| h.nodes.iter())
                        .map(|n| n.centroid.get(t))
                        .fold(0.0, f64::max)
                });
                Ok(Scorer::Search { term, dataset_max })
            }
            ScoreMode::Similar { step, node } => {
                let target = lookup(*step, *node).ok_or(Error::UnknownNode {
                    step: *step,
                    node: *node,
                })?;
                Ok(Scorer::Similar {
                    target: target.centroid.clone(),
                })
            }
            other => Ok(Scorer::Sentiment(other.clone())),
        }
    }

    pub fn score(&self, node: &ClusterNode) -> Result<f64> {
        match self {
            Scorer::Search { term, dataset_max } => Ok(match_score_search(
                term.map_or(0.0, |t| node.centroid.get(t)),
                *dataset_max,
            )),
            Scorer::Similar { target } => Ok(match_score_similar(&node.centroid, target)),
            Scorer::Sentiment(mode) => {
                let s = node.sentiment.ok_or_else(|| {
                    Error::Invalid(format!("node {} has no sentiment score", node.id))
                })?;
                Ok(sentiment_score(s.h, mode))
            }
        }
    }

    pub fn score_tree<'h>(
        &self,
        hierarchy: &'h ClusterHierarchy,
        theta: f64,
    ) -> Result<ScoredTree<'h>> {
        let scores = hierarchy
            .nodes
            .iter()
            .map(|n| self.score(n))
            .collect::<Result<Vec<_>>>()?;
        ScoredTree::new(hierarchy, scores, theta)
    }
}

/// A hierarchy with one score per node and a match threshold.
#[derive(Clone, Debug)]
pub struct ScoredTree<'h> {
    hierarchy: &'h ClusterHierarchy,
    scores: Vec<f64>,
    theta: f64,
}

impl<'h> ScoredTree<'h> {
    pub fn new(hierarchy: &'h ClusterHierarchy, scores: Vec<f64>, theta: f64) -> Result<Self> {
        if scores.len() != hierarchy.nodes.len() {
            return Err(Error::Invalid(format!(
                "{} scores for {} nodes",
                scores.len(),
                hierarchy.nodes.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Invalid(format!("score of node {i} is not finite")));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Invalid(format!(
                "theta must be a non-negative number, got {theta}"
            )));
        }
        Ok(Self {
            hierarchy,
            scores,
            theta,
        })
    }

    pub fn hierarchy(&self) -> &'h ClusterHierarchy {
        self.hierarchy
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntichainEntry {
    pub node: usize,
    pub score: f64,
}

/// Maximal antichain: exactly one node on every root-to-leaf path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Antichain {
    pub entries: Vec<AntichainEntry>,
}

impl Antichain {
    pub fn node_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.node).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True if every root-to-leaf path of `hierarchy` holds exactly one member.
    pub fn is_maximal_in(&self, hierarchy: &ClusterHierarchy) -> bool {
        let mut member = vec![false; hierarchy.nodes.len()];
        for e in &self.entries {
            match member.get_mut(e.node) {
                Some(m) => *m = true,
                None => return false,
            }
        }
        hierarchy
            .root_paths()
            .iter()
            .all(|p| p.iter().filter(|&&n| member[n]).count() == 1)
    }
}

/// Bottom-up best-match antichain.
///
/// At node `r` with score `r_v`, let `m_v` be the largest value returned by its
/// children (−1 for a leaf). If `r_v > m_v`, or both `m_v` and `r_v` are below
/// θ, the antichain below `r` is coarsened to `r` and `r_v` is returned;
/// otherwise the children's antichain is kept and `m_v` is returned.
pub fn find_max_antichain(tree: &ScoredTree<'_>) -> Antichain {
    let h = tree.hierarchy;
    let (scores, theta) = (&tree.scores, tree.theta);
    let mut returned = vec![0.0; h.nodes.len()];
    let mut coarsened = vec![false; h.nodes.len()];
    for id in h.post_order() {
        let r_v = scores[id];
        let m_v = h.nodes[id]
            .children
            .iter()
            .map(|&c| returned[c])
            .fold(-1.0, |m, c_v| if c_v > m { c_v } else { m });
        if r_v > m_v || (m_v < theta && r_v < theta) {
            coarsened[id] = true;
            returned[id] = r_v;
        } else {
            returned[id] = m_v;
        }
    }

    // the topmost coarsened node on each path wins
    let mut entries = Vec::new();
    let mut stack = vec![h.root];
    while let Some(id) = stack.pop() {
        if coarsened[id] {
            entries.push(AntichainEntry {
                node: id,
                score: scores[id],
            });
        } else {
            stack.extend(h.nodes[id].children.iter().rev());
        }
    }
    Antichain { entries }
}

/// Node ids by non-increasing score, ties by ascending id.
pub fn order_antichain(antichain: &Antichain) -> Vec<usize> {
    let mut entries: Vec<&AntichainEntry> = antichain.entries.iter().collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.node.cmp(&b.node)));
    entries.into_iter().map(|e| e.node).collect()
}

/// One step of the scented widget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: usize,
    /// Topic modes: users in antichain clusters scoring at least θ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    /// Sentiment modes: largest `h` of the step, floored at 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_positive: Option<f64>,
    /// Sentiment modes: largest `-h` of the step, floored at 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_negative: Option<f64>,
}

/// Series value for one step's hierarchy.
pub fn series_point(
    hierarchy: &ClusterHierarchy,
    scorer: &Scorer,
    theta: f64,
) -> Result<SeriesPoint> {
    let step = hierarchy.step_index;
    if let Scorer::Sentiment(_) = scorer {
        let mut pos = 0.0f64;
        let mut neg = 0.0f64;
        for node in &hierarchy.nodes {
            let h = node
                .sentiment
                .ok_or_else(|| Error::Invalid(format!("node {} has no sentiment score", node.id)))?
                .h;
            pos = pos.max(h);
            neg = neg.max(-h);
        }
        return Ok(SeriesPoint {
            step,
            users: None,
            max_positive: Some(pos),
            max_negative: Some(neg),
        });
    }
    let tree = scorer.score_tree(hierarchy, theta)?;
    let antichain = find_max_antichain(&tree);
    let users = antichain
        .entries
        .iter()
        .filter(|e| e.score >= theta)
        .map(|e| hierarchy.nodes[e.node].size)
        .sum();
    Ok(SeriesPoint {
        step,
        users: Some(users),
        max_positive: None,
        max_negative: None,
    })
}

/// Scented-widget series over consecutive steps.
pub fn scented_series<'a>(
    steps: impl IntoIterator<Item = &'a ClusterHierarchy>,
    scorer: &Scorer,
    theta: f64,
) -> Result<Vec<SeriesPoint>> {
    steps
        .into_iter()
        .map(|h| series_point(h, scorer, theta))
        .collect()
}
