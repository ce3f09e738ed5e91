//! Independent oracles and synthetic data generators for the acceptance suite.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crowdscope_core::cluster::{ClusterHierarchy, ClusterNode};
use crowdscope_core::corpus::SparseTermVector;
use crowdscope_core::layout::Rect;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use sha2::{Digest, Sha256};

/// Random rooted tree of `n` nodes; node 0 is the root and every parent has a
/// smaller id. `reach` bounds how far back a parent may be, which varies depth.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> ClusterHierarchy {
    let reach = rng.random_range(1..=n.max(1));
    let parents: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if i == 0 {
                None
            } else {
                Some(rng.random_range(i.saturating_sub(reach)..i))
            }
        })
        .collect();
    tree_from_parents(&parents)
}

pub fn tree_from_parents(parents: &[Option<usize>]) -> ClusterHierarchy {
    let mut nodes: Vec<ClusterNode> = parents
        .iter()
        .enumerate()
        .map(|(id, &parent)| ClusterNode {
            id,
            parent,
            children: Vec::new(),
            members: Vec::new(),
            size: 0,
            centroid: SparseTermVector::new(),
            tags: Vec::new(),
            sentiment: None,
        })
        .collect();
    for (id, parent) in parents.iter().enumerate() {
        if let Some(p) = *parent {
            nodes[p].children.push(id);
        }
    }
    ClusterHierarchy {
        step_index: 0,
        root: 0,
        nodes,
    }
}

/// Gives every leaf 1..=max members named `u<k>` and sets subtree sizes.
pub fn populate_leaves(rng: &mut ChaCha8Rng, h: &mut ClusterHierarchy, max: usize) -> Vec<String> {
    let mut users = Vec::new();
    for node in h.nodes.iter_mut().filter(|n| n.children.is_empty()) {
        for _ in 0..rng.random_range(1..=max) {
            let name = format!("u{}", users.len());
            node.members.push(name.clone());
            users.push(name);
        }
    }
    for id in h.post_order() {
        let size = if h.nodes[id].children.is_empty() {
            h.nodes[id].members.len()
        } else {
            h.nodes[id].children.iter().map(|&c| h.nodes[c].size).sum()
        };
        h.nodes[id].size = size;
    }
    users
}

/// True when every root-to-leaf path meets exactly one chosen node.
pub fn cuts_every_path_once(h: &ClusterHierarchy, chosen: &[usize]) -> bool {
    let mut mark = vec![false; h.nodes.len()];
    for &c in chosen {
        if c >= mark.len() || mark[c] {
            return false;
        }
        mark[c] = true;
    }
    h.nodes
        .iter()
        .filter(|n| n.children.is_empty())
        .all(|leaf| {
            let mut hits = 0;
            let mut at = Some(leaf.id);
            while let Some(id) = at {
                hits += usize::from(mark[id]);
                at = h.nodes[id].parent;
            }
            hits == 1
        })
}

/// Recursive transcription of the best-match antichain procedure.
pub fn reference_antichain(h: &ClusterHierarchy, scores: &[f64], theta: f64) -> Vec<usize> {
    fn visit(h: &ClusterHierarchy, scores: &[f64], theta: f64, v: usize) -> (f64, Vec<usize>) {
        let r_v = scores[v];
        let mut m_v = -1.0;
        let mut below = Vec::new();
        for &c in &h.nodes[v].children {
            let (c_v, set) = visit(h, scores, theta, c);
            if c_v > m_v {
                m_v = c_v;
            }
            below.extend(set);
        }
        if r_v > m_v || (m_v < theta && r_v < theta) {
            (r_v, vec![v])
        } else {
            (m_v, below)
        }
    }
    let mut ids = visit(h, scores, theta, h.root).1;
    ids.sort_unstable();
    ids
}

fn comb2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let expected = sum_a * sum_b / comb2(a.len());
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// One brute-force merge: node ids as in the engine (leaves `0..n`, merge `t`
/// creates `n + t`, the cluster holding the smaller leaf listed first).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefMerge {
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RefLinkage {
    MinMax,
    Average,
}

/// Agglomerates `n` items from a full similarity matrix, recomputing every
/// cluster pair score from member sums at every step. Ties go to the pair
/// whose smallest members are lexicographically smallest.
pub fn brute_force_ahc(sim: &[Vec<f64>], linkage: RefLinkage) -> Vec<RefMerge> {
    let n = sim.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let total = |a: &[usize], b: &[usize]| {
        a.iter()
            .map(|&i| b.iter().map(|&j| sim[i][j]).sum::<f64>())
            .sum::<f64>()
    };
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (a, b) = (&clusters[x].1, &clusters[y].1);
                let cross = total(a, b);
                let score = match linkage {
                    RefLinkage::MinMax => cross / (total(a, a) * total(b, b)),
                    RefLinkage::Average => cross / (a.len() * b.len()) as f64,
                };
                if score > best.2 {
                    best = (x, y, score);
                }
            }
        }
        let (x, y, _) = best;
        let (right_id, right) = clusters.remove(y);
        merges.push(RefMerge {
            left: clusters[x].0,
            right: right_id,
        });
        clusters[x].0 = n + merges.len() - 1;
        clusters[x].1.extend(right);
    }
    merges
}

/// Dense cosine matrix with unit diagonal.
pub fn cosine_matrix(dense: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dense
        .iter()
        .enumerate()
        .map(|(i, u)| {
            dense
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    if i == j {
                        1.0
                    } else {
                        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (norm(u) * norm(v))
                    }
                })
                .collect()
        })
        .collect()
}

fn ref_worst(row: &[f64], side: f64) -> f64 {
    let sum: f64 = row.iter().sum();
    let max = row.iter().cloned().fold(f64::MIN, f64::max);
    let min = row.iter().cloned().fold(f64::MAX, f64::min);
    f64::max(
        side * side * max / (sum * sum),
        sum * sum / (side * side * min),
    )
}

/// Squarified treemap following the original recursive formulation: areas in
/// non-increasing order, each row laid along the shorter side of the space left.
pub fn reference_squarify(weights: &[f64], rect: Rect) -> Vec<Rect> {
    let total: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap());
    let areas: Vec<f64> = order
        .iter()
        .map(|&i| weights[i] * rect.w * rect.h / total)
        .collect();

    let mut placed = vec![Rect::default(); weights.len()];
    let mut free = rect;
    let mut row: Vec<usize> = Vec::new();
    let mut k = 0;
    let lay = |row: &[usize], free: &mut Rect, placed: &mut Vec<Rect>| {
        let row_area: f64 = row.iter().map(|&p| areas[p]).sum();
        if free.w >= free.h {
            let width = row_area / free.h;
            let mut y = free.y;
            for &p in row {
                let h = areas[p] / width;
                placed[order[p]] = Rect::new(free.x, y, width, h);
                y += h;
            }
            *free = Rect::new(free.x + width, free.y, free.w - width, free.h);
        } else {
            let height = row_area / free.w;
            let mut x = free.x;
            for &p in row {
                let w = areas[p] / height;
                placed[order[p]] = Rect::new(x, free.y, w, height);
                x += w;
            }
            *free = Rect::new(free.x, free.y + height, free.w, free.h - height);
        }
    };
    while k < areas.len() {
        let side = free.w.min(free.h);
        let current: Vec<f64> = row.iter().map(|&p| areas[p]).collect();
        let mut extended = current.clone();
        extended.push(areas[k]);
        if row.is_empty() || ref_worst(&extended, side) <= ref_worst(&current, side) {
            row.push(k);
            k += 1;
        } else {
            lay(&row, &mut free, &mut placed);
            row.clear();
        }
    }
    if !row.is_empty() {
        lay(&row, &mut free, &mut placed);
    }
    placed
}

/// Profiles drawn from `topics` disjoint topic vocabularies plus a pool of
/// terms shared by every topic. Returns token lists and the planted labels.
pub struct PlantedCorpus {
    pub docs: Vec<Vec<String>>,
    pub labels: Vec<usize>,
}

pub fn planted_corpus(
    rng: &mut ChaCha8Rng,
    topics: usize,
    per_topic: usize,
    topic_terms: usize,
    shared_terms: usize,
    tokens: (usize, usize),
) -> PlantedCorpus {
    let shared_fraction = shared_terms as f64 / (topic_terms + shared_terms) as f64;
    let zipf = Zipf::new(topic_terms as f64, 1.0).unwrap();
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for topic in 0..topics {
        for _ in 0..per_topic {
            let len = rng.random_range(tokens.0..=tokens.1);
            let doc = (0..len)
                .map(|_| {
                    if rng.random_bool(shared_fraction) {
                        format!("shared{}", rng.random_range(0..shared_terms))
                    } else {
                        format!("t{topic}w{}", zipf.sample(rng) as usize - 1)
                    }
                })
                .collect();
            docs.push(doc);
            labels.push(topic);
        }
    }
    PlantedCorpus { docs, labels }
}

/// Large corpus for timing: `topics` blocks of `terms_per_topic` terms, each
/// profile mostly drawing from its topic block with some corpus-wide noise.
pub fn throughput_corpus(
    rng: &mut ChaCha8Rng,
    profiles: usize,
    topics: usize,
    terms_per_topic: usize,
) -> Vec<Vec<String>> {
    let local = Zipf::new(terms_per_topic as f64, 1.0).unwrap();
    let global = Zipf::new((topics * terms_per_topic) as f64, 1.1).unwrap();
    (0..profiles)
        .map(|_| {
            let topic = rng.random_range(0..topics);
            let len = rng.random_range(10..=40);
            (0..len)
                .map(|_| {
                    let term = if rng.random_bool(0.85) {
                        topic * terms_per_topic + local.sample(rng) as usize - 1
                    } else {
                        global.sample(rng) as usize - 1
                    };
                    format!("w{term}")
                })
                .collect()
        })
        .collect()
}

/// SHA-256 over every file below `root`, in path order, with relative paths.
pub fn tree_hash(root: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for path in files {
        hasher.update(
            path.strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .as_bytes(),
        );
        hasher.update([0]);
        hasher.update(fs::read(&path).unwrap());
    }
    hex::encode(hasher.finalize())
}
