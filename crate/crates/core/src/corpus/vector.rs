use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Sparse non-negative term weights, sorted by term id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseTermVector {
    entries: Vec<(u32, f64)>,
}

impl SparseTermVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from arbitrary `(term, weight)` pairs. Duplicate terms
    /// are summed and zero weights dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut entries: Vec<(u32, f64)> = pairs.into_iter().collect();
        entries.sort_unstable_by_key(|&(id, _)| id);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, w) in entries {
            debug_assert!(w.is_finite() && w >= 0.0, "bad weight {w}");
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += w,
                _ => merged.push((id, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        Self { entries: merged }
    }

    /// Wraps pairs that are already strictly increasing by term id with
    /// positive finite weights.
    pub(crate) fn from_sorted_unchecked(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, term: u32) -> f64 {
        self.entries
            .binary_search_by_key(&term, |&(id, _)| id)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Returns the L2-normalized vector; empty vectors stay empty.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for e in &mut self.entries {
                e.1 /= norm;
            }
        }
        self
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Dot product against a dense weight table indexed by term id.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(id, w)| dense.get(id as usize).copied().unwrap_or(0.0) * w)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }
}

/// Dense scratch space for summing many sparse vectors over one dictionary.
#[derive(Debug, Clone)]
pub struct Accumulator {
    dense: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<u32>,
}

impl Accumulator {
    pub fn new(dimension: usize) -> Self {
        Self {
            dense: vec![0.0; dimension],
            marked: vec![false; dimension],
            touched: Vec::new(),
        }
    }

    fn slot(&mut self, id: u32) -> &mut f64 {
        let i = id as usize;
        if !self.marked[i] {
            self.marked[i] = true;
            self.touched.push(id);
        }
        &mut self.dense[i]
    }

    pub fn add(&mut self, v: &SparseTermVector, scale: f64) {
        for (id, w) in v.iter() {
            *self.slot(id) += w * scale;
        }
    }

    pub fn add_dense(&mut self, other: &Accumulator, scale: f64) {
        for &id in &other.touched {
            let w = other.dense[id as usize];
            *self.slot(id) += w * scale;
        }
    }

    pub fn as_dense(&self) -> &[f64] {
        &self.dense
    }

    /// Sparse copy of the current sum.
    pub fn to_sparse(&self) -> SparseTermVector {
        let mut ids = self.touched.clone();
        ids.sort_unstable();
        let entries = ids
            .into_iter()
            .map(|id| (id, self.dense[id as usize]))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        SparseTermVector::from_sorted_unchecked(entries)
    }

    /// Drains into a sparse vector, leaving the accumulator zeroed.
    pub fn take(&mut self) -> SparseTermVector {
        let v = self.to_sparse();
        for &id in &self.touched {
            self.dense[id as usize] = 0.0;
            self.marked[id as usize] = false;
        }
        self.touched.clear();
        v
    }
}

/// Term/id bijection for one time step, with per-term document frequency.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dictionary {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    doc_count: usize,
}

impl Dictionary {
    /// Builds a dictionary over documents; ids follow lexicographic term order.
    pub fn build<'a, D, T>(docs: D) -> Self
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut df: HashMap<&'a str, u32> = HashMap::new();
        let mut doc_count = 0;
        for doc in docs {
            doc_count += 1;
            let mut seen: Vec<&str> = doc.into_iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut terms: Vec<(&str, u32)> = df.into_iter().collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut dict = Dictionary {
            doc_count,
            ..Dictionary::default()
        };
        for (t, f) in terms {
            dict.ids.insert(t.to_owned(), dict.terms.len() as u32);
            dict.terms.push(t.to_owned());
            dict.doc_freq.push(f);
        }
        dict
    }

    /// Interns a term, returning its id. Used for store-wide dictionaries
    /// where document frequencies are not tracked.
    pub fn intern(&mut self, term: &str) -> u32 {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = self.terms.len() as u32;
        self.ids.insert(term.to_owned(), id);
        self.terms.push(term.to_owned());
        self.doc_freq.push(0);
        id
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq.get(id as usize).copied().unwrap_or(0)
    }

    /// Number of documents the dictionary was built over.
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_pairs_sorts_merges_and_drops_zeros() {
        let v = SparseTermVector::from_pairs([(3, 1.0), (1, 0.0), (3, 2.0), (0, 0.5)]);
        assert_eq!(v.entries(), &[(0, 0.5), (3, 3.0)]);
    }

    #[test]
    fn accumulator_matches_pairwise_sum() {
        let a = SparseTermVector::from_pairs([(0, 1.0), (2, 2.0)]);
        let b = SparseTermVector::from_pairs([(2, 1.0), (4, 3.0)]);
        let mut acc = Accumulator::new(5);
        acc.add(&a, 1.0);
        acc.add(&b, 2.0);
        assert_eq!(acc.take().entries(), &[(0, 1.0), (2, 4.0), (4, 6.0)]);
        assert!(acc.as_dense().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn dictionary_ids_are_dense_and_round_trip() {
        let docs = [
            vec!["b".to_string(), "a".to_string(), "b".to_string()],
            vec!["c".to_string(), "a".to_string()],
        ];
        let dict = Dictionary::build(docs.iter());
        assert_eq!(dict.terms(), &["a", "b", "c"]);
        for i in 0..dict.len() as u32 {
            assert_eq!(dict.id(dict.term(i).unwrap()), Some(i));
        }
        assert_eq!(dict.doc_freq(dict.id("a").unwrap()), 2);
        assert_eq!(dict.doc_freq(dict.id("b").unwrap()), 1);
    }
}
