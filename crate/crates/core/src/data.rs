//! Observed relation data and optional pairwise covariates.
//!
//! A [`RelationData`] holds exactly the observed pairs of a binary relation
//! matrix. Pairs that are not listed are missing, not zero.

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("entry {position} ({i}, {j}): index out of range for n = {n}")]
    IndexOutOfRange { position: usize, i: usize, j: usize, n: usize },
    #[error("entry {position} ({i}, {j}): duplicate pair")]
    DuplicatePair { position: usize, i: usize, j: usize },
    #[error("entry {position} ({i}, {j}): value {value} is not binary")]
    NonBinaryValue { position: usize, i: usize, j: usize, value: i64 },
    #[error("side information for ({i}, {j}) has length {got}, expected {expected}")]
    SideInfoLength { i: usize, j: usize, got: usize, expected: usize },
    #[error("side information for ({i}, {j}) is not finite")]
    SideInfoNonFinite { i: usize, j: usize },
    #[error("duplicate side information for ({i}, {j})")]
    SideInfoDuplicate { i: usize, j: usize },
}

/// One observed cell of the relation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entry {
    pub i: usize,
    pub j: usize,
    pub s: bool,
}

impl Entry {
    pub fn new(i: usize, j: usize, s: bool) -> Self {
        Self { i, j, s }
    }
}

/// Checks raw `(i, j, s)` triples against the relation-data invariants.
///
/// Errors name the first offending entry by position in `triples`.
pub fn validate(n: usize, triples: &[(usize, usize, i64)]) -> Result<(), DataError> {
    let mut seen = std::collections::HashSet::with_capacity(triples.len());
    for (position, &(i, j, value)) in triples.iter().enumerate() {
        if i >= n || j >= n {
            return Err(DataError::IndexOutOfRange { position, i, j, n });
        }
        if value != 0 && value != 1 {
            return Err(DataError::NonBinaryValue { position, i, j, value });
        }
        if !seen.insert((i, j)) {
            return Err(DataError::DuplicatePair { position, i, j });
        }
    }
    Ok(())
}

/// Sparse masked binary relation: the observed entries of S (W = 1 exactly on them).
///
/// Entries are kept sorted by `(i, j)`. Out- and in-adjacency indexes are built
/// at construction so per-object sums cost O(degree).
#[derive(Debug, Clone)]
pub struct RelationData {
    n: usize,
    directed: bool,
    entries: Vec<Entry>,
    out_offsets: Vec<usize>,
    in_offsets: Vec<usize>,
    in_order: Vec<usize>,
}

impl PartialEq for RelationData {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.directed == other.directed && self.entries == other.entries
    }
}

impl RelationData {
    /// Validates and indexes raw triples.
    pub fn from_triples(
        n: usize,
        triples: &[(usize, usize, i64)],
        directed: bool,
    ) -> Result<Self, DataError> {
        validate(n, triples)?;
        let entries = triples.iter().map(|&(i, j, s)| Entry::new(i, j, s == 1)).collect();
        Ok(Self::build(n, entries, directed))
    }

    pub fn from_entries(n: usize, entries: Vec<Entry>, directed: bool) -> Result<Self, DataError> {
        let triples: Vec<_> = entries.iter().map(|e| (e.i, e.j, e.s as i64)).collect();
        validate(n, &triples)?;
        Ok(Self::build(n, entries, directed))
    }

    fn build(n: usize, mut entries: Vec<Entry>, directed: bool) -> Self {
        entries.sort_unstable_by_key(|e| (e.i, e.j));
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for e in &entries {
            out_offsets[e.i + 1] += 1;
            in_offsets[e.j + 1] += 1;
        }
        for k in 0..n {
            out_offsets[k + 1] += out_offsets[k];
            in_offsets[k + 1] += in_offsets[k];
        }
        // Entries are sorted by (i, j), so a stable bucket pass orders each
        // receiver's list by sender.
        let mut cursor = in_offsets.clone();
        let mut in_order = vec![0usize; entries.len()];
        for (idx, e) in entries.iter().enumerate() {
            in_order[cursor[e.j]] = idx;
            cursor[e.j] += 1;
        }
        Self { n, directed, entries, out_offsets, in_offsets, in_order }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn directed(&self) -> bool {
        self.directed
    }

    /// Observed entries sorted by `(i, j)`.
    #[inline]
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices (into [`entries`](Self::entries)) of observed pairs `(i, ·)`.
    #[inline]
    pub fn out_range(&self, i: usize) -> std::ops::Range<usize> {
        self.out_offsets[i]..self.out_offsets[i + 1]
    }

    /// Indices of observed pairs `(·, j)`, ordered by sender.
    #[inline]
    pub fn in_indices(&self, j: usize) -> &[usize] {
        &self.in_order[self.in_offsets[j]..self.in_offsets[j + 1]]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_offsets[i + 1] - self.out_offsets[i]
    }

    pub fn in_degree(&self, j: usize) -> usize {
        self.in_offsets[j + 1] - self.in_offsets[j]
    }

    /// Looks up the observed value of `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        if i >= self.n {
            return None;
        }
        let row = &self.entries[self.out_range(i)];
        row.binary_search_by_key(&j, |e| e.j).ok().map(|k| row[k].s)
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.s).count()
    }
}

/// Pairwise covariates `x_ij ∈ R^m`. Pairs without a vector use all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfo<T> {
    dim: usize,
    index: HashMap<(usize, usize), usize>,
    values: Vec<T>,
    zeros: Vec<T>,
}

impl<T: Scalar> SideInfo<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, index: HashMap::new(), values: Vec::new(), zeros: vec![T::zero(); dim] }
    }

    pub fn from_pairs(
        dim: usize,
        pairs: impl IntoIterator<Item = ((usize, usize), Vec<T>)>,
    ) -> Result<Self, DataError> {
        let mut side = Self::new(dim);
        for ((i, j), x) in pairs {
            side.insert(i, j, x)?;
        }
        Ok(side)
    }

    pub fn insert(&mut self, i: usize, j: usize, x: Vec<T>) -> Result<(), DataError> {
        if x.len() != self.dim {
            return Err(DataError::SideInfoLength { i, j, got: x.len(), expected: self.dim });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::SideInfoNonFinite { i, j });
        }
        if self.index.contains_key(&(i, j)) {
            return Err(DataError::SideInfoDuplicate { i, j });
        }
        self.index.insert((i, j), self.values.len());
        self.values.extend(x);
        Ok(())
    }

    /// Covariate dimension m.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `x_ij`, or the zero vector for absent pairs.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[T] {
        match self.index.get(&(i, j)) {
            Some(&off) => &self.values[off..off + self.dim],
            None => &self.zeros,
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Stored pairs sorted by `(i, j)`.
    pub fn sorted_pairs(&self) -> Vec<(usize, usize)> {
        let mut keys: Vec<_> = self.index.keys().copied().collect();
        keys.sort_unstable();
        keys
    }
}
