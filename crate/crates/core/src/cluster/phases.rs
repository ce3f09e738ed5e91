use rayon::prelude::*;

use super::ahc::{agglomerate_matrix, Linkage, Merge, SimilarityMatrix};
use super::{weighted_cosine, ClusterHierarchy, ClusterNode, CompressedVector};
use crate::corpus::{Accumulator, SparseTermVector};

/// Output of clustering one fraction.
#[derive(Clone, Debug, Default)]
pub struct FractionClustering {
    pub compressed: Vec<CompressedVector>,
    /// For each input vector, the index of its compressed vector.
    pub membership: Vec<usize>,
}

fn sum_sparse(a: &SparseTermVector, wa: f64, b: &SparseTermVector, wb: f64) -> SparseTermVector {
    SparseTermVector::from_pairs(
        a.iter()
            .map(|(t, w)| (t, w * wa))
            .chain(b.iter().map(|(t, w)| (t, w * wb))),
    )
}

/// Pairwise cosine matrix of unit-normalized fraction vectors via an
/// inverted index.
fn cosine_matrix(vectors: &[&SparseTermVector], dimension: usize) -> SimilarityMatrix {
    let n = vectors.len();
    let norms: Vec<f64> = vectors.iter().map(|v| v.norm()).collect();
    let mut postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dimension];
    for (doc, v) in vectors.iter().enumerate() {
        for (t, w) in v.iter() {
            postings[t as usize].push((doc as u32, w / norms[doc]));
        }
    }
    let diag = norms
        .iter()
        .map(|&nm| if nm > 0.0 { 1.0 } else { 0.0 })
        .collect();
    SimilarityMatrix::from_rows(n, diag, |i, row| {
        if norms[i] == 0.0 {
            return;
        }
        for (t, w) in vectors[i].iter() {
            let w = w / norms[i];
            let list = &postings[t as usize];
            let start = list.partition_point(|&(d, _)| d as usize <= i);
            for &(d, wd) in &list[start..] {
                row[d as usize - i - 1] += w * wd;
            }
        }
    })
}

/// Final cluster label (`0..clusters`) of each of `n` leaves after `merges`,
/// numbered by smallest member leaf.
fn flat_labels(n: usize, merges: &[Merge]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n + merges.len()).collect();
    for (t, m) in merges.iter().enumerate() {
        parent[m.left] = n + t;
        parent[m.right] = n + t;
    }
    let root_of = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut label_of_root = std::collections::HashMap::new();
    (0..n)
        .map(|leaf| {
            let next = label_of_root.len();
            *label_of_root.entry(root_of(leaf)).or_insert(next)
        })
        .collect()
}

/// Clusters one fraction down to `k_low` leaves and returns their weighted
/// centroids. Weights are `|C| / nominal`, where `nominal` is the fraction's
/// nominal size `ceil(n / p)`.
pub fn cluster_fraction(
    vectors: &[&SparseTermVector],
    k_low: usize,
    nominal: usize,
    fraction_index: usize,
    dimension: usize,
    linkage: Linkage,
) -> FractionClustering {
    let n = vectors.len();
    if n == 0 {
        return FractionClustering::default();
    }
    let membership = if n <= k_low {
        (0..n).collect()
    } else {
        let merges = agglomerate_matrix(cosine_matrix(vectors, dimension), linkage, k_low);
        flat_labels(n, &merges)
    };
    let clusters = membership.iter().max().map_or(0, |&m| m + 1);
    let mut acc = Accumulator::new(dimension);
    let mut compressed = Vec::with_capacity(clusters);
    let mut members_by_cluster: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, &c) in membership.iter().enumerate() {
        members_by_cluster[c].push(i);
    }
    for members in members_by_cluster {
        for &i in &members {
            acc.add(vectors[i], 1.0 / vectors[i].norm().max(f64::MIN_POSITIVE));
        }
        compressed.push(CompressedVector {
            centroid: acc.take().normalized(),
            weight: members.len() as f64 / nominal as f64,
            member_count: members.len(),
            fraction_index,
        });
    }
    FractionClustering {
        compressed,
        membership,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DendrogramNode {
    pub children: Option<(usize, usize)>,
    /// Sum of member weights, capped at 1.
    pub weight: f64,
    /// L2-normalized weight-proportional mean of member centroids.
    pub centroid: SparseTermVector,
    /// Number of compressed vectors below this node.
    pub leaf_count: usize,
}

/// Full binary merge tree over compressed vectors. Leaves are `0..n`; merge
/// `t` creates node `n + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
    nodes: Vec<DendrogramNode>,
}

impl Dendrogram {
    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn node(&self, id: usize) -> &DendrogramNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Leaves under `id`, ascending.
    pub fn members(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            match self.nodes[x].children {
                Some((l, r)) => stack.extend([l, r]),
                None => out.push(x),
            }
        }
        out.sort_unstable();
        out
    }

    /// Nodes that are clusters after exactly `leaves - k` merges, ascending.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let k = k.clamp(1, self.leaves.max(1));
        let done = self.leaves - k;
        let mut alive = vec![false; self.nodes.len()];
        alive[..self.leaves].iter_mut().for_each(|a| *a = true);
        for (t, m) in self.merges[..done].iter().enumerate() {
            alive[m.left] = false;
            alive[m.right] = false;
            alive[self.leaves + t] = true;
        }
        (0..self.nodes.len()).filter(|&i| alive[i]).collect()
    }
}

/// Agglomerates compressed vectors into a full dendrogram, scoring pairs by
/// weighted cosine similarity.
pub fn agglomerate(cvs: &[CompressedVector], linkage: Linkage) -> Dendrogram {
    let n = cvs.len();
    let diag = cvs
        .iter()
        .map(|c| weighted_cosine(&c.centroid, c.weight, &c.centroid, c.weight))
        .collect();
    let sim = if n > 64 {
        SimilarityMatrix::from_rows(n, diag, |i, row| {
            for (k, out) in row.iter_mut().enumerate() {
                let j = i + 1 + k;
                *out = weighted_cosine(
                    &cvs[i].centroid,
                    cvs[i].weight,
                    &cvs[j].centroid,
                    cvs[j].weight,
                );
            }
        })
    } else {
        SimilarityMatrix::from_fn(n, diag, |i, j| {
            weighted_cosine(
                &cvs[i].centroid,
                cvs[i].weight,
                &cvs[j].centroid,
                cvs[j].weight,
            )
        })
    };
    let merges = agglomerate_matrix(sim, linkage, 1);

    // unnormalized weighted sums, used to derive each node's centroid
    let mut sums: Vec<SparseTermVector> = cvs
        .iter()
        .map(|c| sum_sparse(&c.centroid, c.weight, &SparseTermVector::new(), 0.0))
        .collect();
    let mut nodes: Vec<DendrogramNode> = cvs
        .iter()
        .map(|c| DendrogramNode {
            children: None,
            weight: c.weight,
            centroid: c.centroid.clone(),
            leaf_count: 1,
        })
        .collect();
    for m in &merges {
        let sum = sum_sparse(&sums[m.left], 1.0, &sums[m.right], 1.0);
        let (l, r) = (&nodes[m.left], &nodes[m.right]);
        let node = DendrogramNode {
            children: Some((m.left, m.right)),
            weight: (l.weight + r.weight).min(1.0),
            centroid: sum.clone().normalized(),
            leaf_count: l.leaf_count + r.leaf_count,
        };
        sums.push(sum);
        nodes.push(node);
    }
    Dendrogram {
        leaves: n,
        merges,
        nodes,
    }
}

/// Cuts the dendrogram to `k` clusters, assigns every profile to the cut
/// cluster with the most similar centroid (lowest cluster on ties), and
/// rebuilds the tree above the cut from those assignments.
///
/// Cut clusters that receive no profile are pruned; an internal node left with
/// one child is replaced by that child. Leaf ids follow dendrogram order,
/// internal ids follow merge order, so the root has the highest id.
pub fn cut_and_assign(
    dendrogram: &Dendrogram,
    k: usize,
    vectors: &[&SparseTermVector],
    users: &[&str],
    dimension: usize,
) -> ClusterHierarchy {
    assert_eq!(vectors.len(), users.len());
    let leaves = dendrogram.leaf_count();
    assert!(leaves > 0, "empty dendrogram");
    let k = k.clamp(1, leaves);
    let cut = dendrogram.cut(k);

    let mut dense = vec![0.0; cut.len() * dimension];
    for (ci, &node) in cut.iter().enumerate() {
        for (t, w) in dendrogram.node(node).centroid.iter() {
            dense[ci * dimension + t as usize] = w;
        }
    }
    let assignment: Vec<usize> = vectors
        .par_iter()
        .map(|v| {
            let norm = v.norm();
            let mut best = (0, f64::NEG_INFINITY);
            for ci in 0..cut.len() {
                let s = v.dot_dense(&dense[ci * dimension..(ci + 1) * dimension]) / norm;
                if s > best.1 {
                    best = (ci, s);
                }
            }
            best.0
        })
        .collect();
    drop(dense);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cut.len()];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }

    // representative final node for every dendrogram node at or above the cut
    let total = dendrogram.nodes.len();
    let mut rep: Vec<Option<usize>> = vec![None; total];
    let mut nodes: Vec<ClusterNode> = Vec::new();
    let mut sums: Vec<SparseTermVector> = Vec::new();
    let mut acc = Accumulator::new(dimension);
    for (ci, &d) in cut.iter().enumerate() {
        if members[ci].is_empty() {
            continue;
        }
        for &i in &members[ci] {
            acc.add(vectors[i], 1.0);
        }
        let mut names: Vec<String> = members[ci].iter().map(|&i| users[i].to_owned()).collect();
        names.sort_unstable();
        rep[d] = Some(nodes.len());
        sums.push(acc.take());
        nodes.push(ClusterNode {
            id: nodes.len(),
            parent: None,
            children: Vec::new(),
            size: names.len(),
            members: names,
            centroid: SparseTermVector::new(),
            tags: Vec::new(),
            sentiment: None,
        });
    }
    for (t, m) in dendrogram.merges().iter().enumerate().skip(leaves - k) {
        let id = leaves + t;
        rep[id] = match (rep[m.left], rep[m.right]) {
            (Some(l), Some(r)) => {
                let new = nodes.len();
                nodes[l].parent = Some(new);
                nodes[r].parent = Some(new);
                sums.push(sum_sparse(&sums[l], 1.0, &sums[r], 1.0));
                nodes.push(ClusterNode {
                    id: new,
                    parent: None,
                    children: vec![l, r],
                    members: Vec::new(),
                    size: nodes[l].size + nodes[r].size,
                    centroid: SparseTermVector::new(),
                    tags: Vec::new(),
                    sentiment: None,
                });
                Some(new)
            }
            (one, None) | (None, one) => one,
        };
    }
    for (node, sum) in nodes.iter_mut().zip(sums) {
        node.centroid = sum.normalized();
    }
    let root = rep[dendrogram.root()].expect("every profile is assigned to some cut cluster");
    ClusterHierarchy {
        step_index: 0,
        root,
        nodes,
    }
}
