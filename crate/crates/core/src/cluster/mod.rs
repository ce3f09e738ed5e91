//! Scalable hierarchical clustering of user profiles.
//!
//! A time step's profiles are randomly split into `p` fractions. Each fraction
//! is clustered down to `k_low` leaf clusters whose centroids become weighted
//! compressed vectors. The compressed vectors are agglomerated into a full
//! dendrogram using weighted cosine similarity, the dendrogram is cut to `k`
//! clusters, and every profile is reassigned to its nearest cut centroid. The
//! tree above the cut, populated with those assignments, is the hierarchy.

mod ahc;
mod phases;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ahc::{agglomerate_matrix, Linkage, Merge, SimilarityMatrix};
pub use phases::{agglomerate, cluster_fraction, cut_and_assign, Dendrogram, FractionClustering};

use crate::corpus::{Dictionary, SparseTermVector, StepCorpus, UserProfile};
use crate::error::{Error, Result};
use crate::sentiment::ClusterSentiment;

/// Cosine similarity of two non-negative vectors; 0 when either is empty.
pub fn cosine(u: &SparseTermVector, v: &SparseTermVector) -> f64 {
    if u.is_empty() || v.is_empty() {
        return 0.0;
    }
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        0.0
    } else {
        (u.dot(v) / denom).clamp(0.0, 1.0)
    }
}

/// Cosine similarity scaled by both compressed-vector weights.
pub fn weighted_cosine(vi: &SparseTermVector, wi: f64, vj: &SparseTermVector, wj: f64) -> f64 {
    wi * wj * cosine(vi, vj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    /// Number of random fractions.
    pub p: usize,
    /// Leaf clusters produced per fraction.
    pub k_low: usize,
    /// Leaf clusters in the final hierarchy.
    pub k: usize,
    pub linkage: Linkage,
    pub seed: u64,
    /// Tags kept per node.
    pub tag_count: usize,
}

impl ClusteringConfig {
    /// Defaults `k_low` to `ceil(2k / p)`.
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            p,
            k_low: Self::default_k_low(p, k),
            k,
            linkage: Linkage::MinMax,
            seed: 0,
            tag_count: 20,
        }
    }

    pub fn default_k_low(p: usize, k: usize) -> usize {
        (2 * k).div_ceil(p.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if self.k_low == 0 {
            return Err(Error::Config("k_low must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.k > self.p * self.k_low {
            return Err(Error::Config(format!(
                "k = {} exceeds p * k_low = {}",
                self.k,
                self.p * self.k_low
            )));
        }
        if self.tag_count == 0 {
            return Err(Error::Config("tag count must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for ClusteringConfig {
    /// The small-corpus setting: two fractions, 30 leaves.
    fn default() -> Self {
        Self::new(2, 30)
    }
}

/// Centroid of a fraction-level leaf cluster with its size weight.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedVector {
    pub centroid: SparseTermVector,
    /// `member_count / ceil(n / p)`.
    pub weight: f64,
    pub member_count: usize,
    pub fraction_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Assigned users; only leaves carry members.
    pub members: Vec<String>,
    pub size: usize,
    pub centroid: SparseTermVector,
    pub tags: Vec<(String, f64)>,
    pub sentiment: Option<ClusterSentiment>,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Rooted cluster tree for one time step. Node ids index `nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterHierarchy {
    pub step_index: usize,
    pub root: usize,
    pub nodes: Vec<ClusterNode>,
}

impl ClusterHierarchy {
    pub fn node(&self, id: usize) -> Option<&ClusterNode> {
        self.nodes.get(id)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ClusterNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Nodes in post-order (children before parents), children in stored order.
    pub fn post_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id);
            } else {
                stack.push((id, true));
                for &c in self.nodes[id].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Every root-to-leaf path as a list of node ids.
    pub fn root_paths(&self) -> Vec<Vec<usize>> {
        let mut paths = Vec::new();
        let mut stack = vec![vec![self.root]];
        while let Some(path) = stack.pop() {
            let last = *path.last().expect("non-empty path");
            let node = &self.nodes[last];
            if node.is_leaf() {
                paths.push(path);
            } else {
                for &c in node.children.iter().rev() {
                    let mut next = path.clone();
                    next.push(c);
                    stack.push(next);
                }
            }
        }
        paths
    }

    pub fn depth(&self) -> usize {
        self.root_paths().iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Checks the tree shape: one root, consistent parent links, every node
    /// reachable, internal sizes equal to the sum of child sizes.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("step {}: {msg}", self.step_index)));
        if self.root >= self.nodes.len() || self.nodes[self.root].parent.is_some() {
            return bad("root missing or has a parent".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node at index {i} has id {}", n.id));
            }
            for &c in &n.children {
                if self.nodes.get(c).and_then(|c| c.parent) != Some(i) {
                    return bad(format!("child {c} of {i} does not point back"));
                }
            }
            if !n.is_leaf()
                && n.size
                    != n.children
                        .iter()
                        .map(|&c| self.nodes[c].size)
                        .sum::<usize>()
            {
                return bad(format!("size of node {i} is not the sum of its children"));
            }
            if !n.is_leaf() && !n.members.is_empty() {
                return bad(format!("internal node {i} carries members"));
            }
            if n.tags.windows(2).any(|w| w[0].1 < w[1].1) {
                return bad(format!("tags of node {i} are not ordered by weight"));
            }
        }
        if self.post_order().len() != self.nodes.len() {
            return bad("nodes unreachable from the root".into());
        }
        Ok(())
    }
}

/// Top-`m` centroid terms by weight, ties broken lexicographically.
pub fn cluster_tags(
    centroid: &SparseTermVector,
    dictionary: &Dictionary,
    m: usize,
) -> Vec<(String, f64)> {
    let mut terms: Vec<(&str, f64)> = centroid
        .iter()
        .filter_map(|(id, w)| dictionary.term(id).map(|t| (t, w)))
        .collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    terms.truncate(m);
    terms.into_iter().map(|(t, w)| (t.to_owned(), w)).collect()
}

/// Random partition of `0..n` into `p` fractions of nominal size `ceil(n/p)`.
/// With `p = 1` the order is left untouched.
pub fn assign_fractions(n: usize, p: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if p > 1 {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let nominal = n.div_ceil(p.max(1)).max(1);
    let mut fractions: Vec<Vec<usize>> = order.chunks(nominal).map(<[usize]>::to_vec).collect();
    fractions.resize(p.max(1), Vec::new());
    fractions
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the hierarchy for one time step from its non-degenerate profiles.
pub fn cluster_time_step(step: &StepCorpus, config: &ClusteringConfig) -> Result<ClusterHierarchy> {
    config.validate()?;
    let profiles: Vec<&UserProfile> = step.clusterable().collect();
    cluster_profiles(step.step_index, &profiles, &step.dictionary, config)
}

pub fn cluster_profiles(
    step_index: usize,
    profiles: &[&UserProfile],
    dictionary: &Dictionary,
    config: &ClusteringConfig,
) -> Result<ClusterHierarchy> {
    config.validate()?;
    let n = profiles.len();
    if n == 0 {
        return Err(Error::NoProfiles(step_index));
    }
    let nominal = n.div_ceil(config.p);
    let fractions = assign_fractions(n, config.p, step_seed(config.seed, step_index));

    let clustered: Vec<FractionClustering> = fractions
        .par_iter()
        .enumerate()
        .map(|(fi, members)| {
            let vectors: Vec<&SparseTermVector> =
                members.iter().map(|&i| &profiles[i].vector).collect();
            cluster_fraction(
                &vectors,
                config.k_low,
                nominal,
                fi,
                dictionary.len(),
                config.linkage,
            )
        })
        .collect();

    let compressed: Vec<CompressedVector> =
        clustered.into_iter().flat_map(|f| f.compressed).collect();
    let dendrogram = agglomerate(&compressed, config.linkage);
    let k = config.k.min(compressed.len());
    let vectors: Vec<&SparseTermVector> = profiles.iter().map(|p| &p.vector).collect();
    let users: Vec<&str> = profiles.iter().map(|p| p.user_id.as_str()).collect();
    let mut hierarchy = cut_and_assign(&dendrogram, k, &vectors, &users, dictionary.len());
    hierarchy.step_index = step_index;
    for node in &mut hierarchy.nodes {
        node.tags = cluster_tags(&node.centroid, dictionary, config.tag_count);
    }
    Ok(hierarchy)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn v(pairs: &[(u32, f64)]) -> SparseTermVector {
        SparseTermVector::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[(0, 1.0), (3, 2.0)]);
        assert_abs_diff_eq!(cosine(&a, &a), 1.0, epsilon = 1e-12);
        assert_eq!(cosine(&v(&[(0, 1.0)]), &v(&[(1, 1.0)])), 0.0);
        assert_abs_diff_eq!(
            cosine(&v(&[(0, 1.0)]), &v(&[(0, 1.0), (1, 1.0)])),
            1.0 / 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(cosine(&SparseTermVector::new(), &a), 0.0);
    }

    #[test]
    fn weighted_cosine_examples() {
        let a = v(&[(0, 1.0)]);
        assert_abs_diff_eq!(weighted_cosine(&a, 1.0, &a, 1.0), 1.0, epsilon = 1e-15);
        assert_eq!(weighted_cosine(&a, 0.0, &a, 0.7), 0.0);
        // cos = 0.5: unit vectors at 60 degrees
        let b = v(&[(0, 0.5), (1, 0.75f64.sqrt())]);
        assert_abs_diff_eq!(cosine(&a, &b), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(weighted_cosine(&a, 0.5, &b, 0.4), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn tags_are_ordered_with_lexicographic_ties() {
        let dict = Dictionary::build([&vec!["b".to_string(), "a".to_string(), "c".to_string()]]);
        let centroid = v(&[(0, 0.5), (1, 0.5), (2, 0.9)]);
        let tags = cluster_tags(&centroid, &dict, 10);
        assert_eq!(
            tags,
            [
                ("c".to_string(), 0.9),
                ("a".to_string(), 0.5),
                ("b".to_string(), 0.5)
            ]
        );
        assert_eq!(cluster_tags(&centroid, &dict, 1).len(), 1);
    }

    #[test]
    fn tag_cap_of_ten() {
        let terms: Vec<String> = (0..15).map(|i| format!("t{i:02}")).collect();
        let dict = Dictionary::build([&terms]);
        let centroid = SparseTermVector::from_pairs((0..15).map(|i| (i, 1.0 + i as f64)));
        let tags = cluster_tags(&centroid, &dict, 10);
        assert_eq!(tags.len(), 10);
        assert_eq!(tags[0].0, "t14");
    }

    #[test]
    fn config_validation() {
        assert!(ClusteringConfig::new(5, 50).validate().is_ok());
        assert_eq!(ClusteringConfig::new(5, 50).k_low, 20);
        assert_eq!(ClusteringConfig::new(2, 30).k_low, 30);
        let mut c = ClusteringConfig::new(2, 30);
        c.k_low = 10;
        assert!(c.validate().is_err());
        c.k = 1;
        assert!(c.validate().is_err());
        assert!(ClusteringConfig {
            p: 0,
            ..ClusteringConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn fractions_cover_everything_once() {
        let fr = assign_fractions(23, 5, 7);
        assert_eq!(fr.len(), 5);
        assert!(fr.iter().all(|f| f.len() <= 5));
        let mut all: Vec<usize> = fr.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(assign_fractions(4, 1, 9), vec![vec![0, 1, 2, 3]]);
    }

    proptest! {
        #[test]
        fn weighted_cosine_symmetric_and_bounded(
            a in prop::collection::vec((0u32..20, 0.01f64..5.0), 0..10),
            b in prop::collection::vec((0u32..20, 0.01f64..5.0), 0..10),
            wi in 0.0f64..=1.0,
            wj in 0.0f64..=1.0,
        ) {
            let (va, vb) = (v(&a), v(&b));
            let x = weighted_cosine(&va, wi, &vb, wj);
            prop_assert_eq!(x, weighted_cosine(&vb, wj, &va, wi));
            prop_assert!(x <= wi.min(wj) + 1e-15);
            prop_assert!(x >= 0.0);
        }
    }
}
