//! Agglomerative clustering over a dense pairwise similarity matrix.
//!
//! Cluster-to-cluster similarity sums are maintained incrementally
//! (`s(A∪B, C) = s(A, C) + s(B, C)`), so any linkage that is a function of
//! `s(A, B)`, `s(A, A)`, `s(B, B)` and the atom counts can be plugged in.
//! Candidate pairs are found with a lazily repaired nearest-neighbour table:
//! each row keeps an upper bound on its best score and is rescanned when it
//! reaches the top, which keeps the common case near O(n²) overall.

use serde::{Deserialize, Serialize};

/// Criterion used to pick the next pair of clusters to merge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    /// `s(A,B) / (s(A,A) · s(B,B))`, maximized.
    #[default]
    MinMax,
    /// `s(A,B) / (|A| · |B|)`, maximized.
    Average,
}

impl Linkage {
    #[inline]
    pub fn score(self, cross: f64, self_a: f64, self_b: f64, size_a: usize, size_b: usize) -> f64 {
        match self {
            Linkage::MinMax => cross / (self_a * self_b),
            Linkage::Average => cross / (size_a as f64 * size_b as f64),
        }
    }
}

impl std::str::FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minmax" | "min-max" => Ok(Linkage::MinMax),
            "average" => Ok(Linkage::Average),
            other => Err(format!("unknown linkage `{other}`")),
        }
    }
}

/// Symmetric similarity matrix stored as its strict upper triangle plus the
/// diagonal.
#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    n: usize,
    upper: Vec<f64>,
    diag: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_fn(n: usize, diag: Vec<f64>, mut sim: impl FnMut(usize, usize) -> f64) -> Self {
        assert_eq!(diag.len(), n);
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(sim(i, j));
            }
        }
        Self { n, upper, diag }
    }

    /// Builds the matrix row by row; `fill_row(i, out)` writes the
    /// similarities of `i` to `i+1..n` into `out`. Rows run in parallel.
    pub fn from_rows(
        n: usize,
        diag: Vec<f64>,
        fill_row: impl Fn(usize, &mut [f64]) + Sync,
    ) -> Self {
        use rayon::prelude::*;

        assert_eq!(diag.len(), n);
        let mut upper = vec![0.0; n * n.saturating_sub(1) / 2];
        let mut rows: Vec<&mut [f64]> = Vec::with_capacity(n);
        let mut rest = upper.as_mut_slice();
        for i in 0..n {
            let (row, tail) = rest.split_at_mut(n - i - 1);
            rows.push(row);
            rest = tail;
        }
        rows.into_par_iter()
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
        Self { n, upper, diag }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(i != j && j < self.n);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.upper[self.index(i, j)]
        }
    }
}

/// One merge of the dendrogram. Leaves are `0..n`; the merge at position `t`
/// creates node `n + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub score: f64,
}

/// Runs agglomeration until `stop_at` clusters remain (at least one).
///
/// Ties on the linkage score go to the pair with the lowest `(slot, slot)`
/// where a cluster's slot is its smallest leaf index.
pub fn agglomerate_matrix(
    mut sim: SimilarityMatrix,
    linkage: Linkage,
    stop_at: usize,
) -> Vec<Merge> {
    let n = sim.n;
    let stop_at = stop_at.max(1);
    if n <= stop_at {
        return Vec::new();
    }
    let mut size = vec![1usize; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut alive: Vec<usize> = (0..n).collect();

    let score = |sim: &SimilarityMatrix, size: &[usize], a: usize, b: usize| {
        linkage.score(sim.get(a, b), sim.diag[a], sim.diag[b], size[a], size[b])
    };
    let scan = |sim: &SimilarityMatrix, size: &[usize], alive: &[usize], a: usize| {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &j in alive {
            if j != a {
                let s = score(sim, size, a, j);
                if s > best.1 {
                    best = (j, s);
                }
            }
        }
        best
    };

    let mut bound = vec![f64::NEG_INFINITY; n];
    for &a in &alive {
        bound[a] = scan(&sim, &size, &alive, a).1;
    }

    let mut merges = Vec::with_capacity(n - stop_at);
    while alive.len() > stop_at {
        let (a, b, best) = loop {
            let mut a = alive[0];
            for &x in &alive[1..] {
                if bound[x] > bound[a] {
                    a = x;
                }
            }
            let (b, s) = scan(&sim, &size, &alive, a);
            if s == bound[a] {
                break (a, b, s);
            }
            debug_assert!(s < bound[a] || bound[a].is_nan());
            bound[a] = s;
        };
        debug_assert!(a < b);

        merges.push(Merge {
            left: node[a],
            right: node[b],
            score: best,
        });
        node[a] = n + merges.len() - 1;

        let cross_ab = sim.get(a, b);
        for &c in &alive {
            if c != a && c != b {
                let i = sim.index(a, c);
                sim.upper[i] += sim.get(b, c);
            }
        }
        sim.diag[a] += sim.diag[b] + 2.0 * cross_ab;
        size[a] += size[b];
        alive.retain(|&x| x != b);

        for &x in &alive {
            if x != a {
                let s = score(&sim, &size, x, a);
                if s > bound[x] {
                    bound[x] = s;
                }
            }
        }
        bound[a] = if alive.len() > 1 {
            scan(&sim, &size, &alive, a).1
        } else {
            f64::NEG_INFINITY
        };
    }
    merges
}
