//! Image pair selection: cosine-similarity graphs over global descriptors,
//! threshold proposals, spanning trees and exhaustive enumeration, plus the
//! match-count table shared with the ordering code.

use std::collections::HashMap;

use thiserror::Error;

use crate::metrics::{match_count_weight, DistanceMatrix, MetricError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairError {
    #[error("image `{0}` is paired with itself")]
    SelfPair(String),
    #[error("pair ({0}, {1}) appears more than once")]
    DuplicatePair(String, String),
    #[error("descriptor of `{0}` is all zeros")]
    ZeroVector(String),
    #[error("descriptor of `{id}` has {found} values, expected {expected}")]
    DimMismatch { id: String, expected: usize, found: usize },
    #[error("descriptor of `{0}` has non-finite values")]
    NonFinite(String),
    #[error("image id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("vectors have different dimensions ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, PairError> {
    if u.len() != v.len() {
        return Err(PairError::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(PairError::ZeroVector("u".into()));
    }
    if nv == 0.0 {
        return Err(PairError::ZeroVector("v".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// One global descriptor per image.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    labels: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl DescriptorSet {
    pub fn new(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self, PairError> {
        let mut seen = HashMap::new();
        let mut labels = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            if v.len() != dim {
                return Err(PairError::DimMismatch {
                    id,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(PairError::NonFinite(id));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(PairError::ZeroVector(id));
            }
            if seen.insert(id.clone(), ()).is_some() {
                return Err(PairError::DuplicateId(id));
            }
            labels.push(id);
            vectors.push(v);
        }
        Ok(Self { dim, labels, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityEdge {
    pub i: usize,
    pub j: usize,
    pub similarity: f64,
}

impl SimilarityEdge {
    /// Distance-like weight used for spanning trees.
    pub fn weight(&self) -> f64 {
        1.0 - self.similarity
    }
}

/// Undirected graph over images with cosine similarities on its edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub labels: Vec<String>,
    /// Edges with `i < j`, at most one per pair.
    pub edges: Vec<SimilarityEdge>,
}

impl SimilarityGraph {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copy keeping only the edges accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&SimilarityEdge) -> bool) -> Self {
        Self {
            labels: self.labels.clone(),
            edges: self.edges.iter().copied().filter(|e| keep(e)).collect(),
        }
    }
}

/// Complete similarity graph, edges in lexicographic pair order.
pub fn build_similarity_graph(d: &DescriptorSet) -> SimilarityGraph {
    let n = d.len();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for (i, j) in exhaustive_pairs(n) {
        let similarity = cosine_similarity(&d.vectors[i], &d.vectors[j])
            .expect("descriptor set holds nonzero vectors of one dimension");
        edges.push(SimilarityEdge { i, j, similarity });
    }
    SimilarityGraph {
        labels: d.labels.clone(),
        edges,
    }
}

fn by_similarity_desc(a: &SimilarityEdge, b: &SimilarityEdge) -> std::cmp::Ordering {
    b.similarity.total_cmp(&a.similarity).then((a.i, a.j).cmp(&(b.i, b.j)))
}

/// Pairs whose similarity reaches `threshold`, topped up so that every image
/// has at least `min_per_image` pairs where the graph allows it.
///
/// The top-up for an image adds its most similar pairs below the threshold; an
/// image's quota is measured against the thresholded set alone, so the result
/// does not depend on the order in which images are visited.
pub fn propose_pairs(g: &SimilarityGraph, threshold: f64, min_per_image: usize) -> Vec<SimilarityEdge> {
    let mut selected = vec![false; g.edges.len()];
    let mut degree = vec![0usize; g.len()];
    for (k, e) in g.edges.iter().enumerate() {
        if e.similarity >= threshold {
            selected[k] = true;
            degree[e.i] += 1;
            degree[e.j] += 1;
        }
    }
    if min_per_image > 0 {
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); g.len()];
        for (k, e) in g.edges.iter().enumerate() {
            incident[e.i].push(k);
            incident[e.j].push(k);
        }
        let mut extra = Vec::new();
        for (node, edges) in incident.iter_mut().enumerate() {
            let missing = min_per_image.saturating_sub(degree[node]);
            if missing == 0 {
                continue;
            }
            edges.retain(|&k| !selected[k]);
            edges.sort_by(|&a, &b| by_similarity_desc(&g.edges[a], &g.edges[b]));
            extra.extend(edges.iter().take(missing).copied());
        }
        for k in extra {
            selected[k] = true;
        }
    }
    let mut out: Vec<SimilarityEdge> = g
        .edges
        .iter()
        .zip(&selected)
        .filter_map(|(e, &s)| s.then_some(*e))
        .collect();
    out.sort_by(by_similarity_desc);
    out
}

/// Union-find with path halving.
pub(crate) struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanningForest {
    pub edges: Vec<SimilarityEdge>,
    /// True when the graph is disconnected and the result has several trees.
    pub is_forest: bool,
    pub total_weight: f64,
}

/// Minimum spanning tree (or forest) under weight `1 − similarity`.
/// Equal weights are broken by lexicographic pair order.
pub fn mst(g: &SimilarityGraph) -> SpanningForest {
    let mut order: Vec<&SimilarityEdge> = g.edges.iter().collect();
    order.sort_by(|a, b| a.weight().total_cmp(&b.weight()).then((a.i, a.j).cmp(&(b.i, b.j))));
    let mut sets = DisjointSets::new(g.len());
    let mut edges = Vec::with_capacity(g.len().saturating_sub(1));
    for e in order {
        if sets.union(e.i, e.j) {
            edges.push(*e);
            if edges.len() + 1 == g.len() {
                break;
            }
        }
    }
    let total_weight = edges.iter().map(SimilarityEdge::weight).sum();
    SpanningForest {
        is_forest: edges.len() + 1 < g.len(),
        edges,
        total_weight,
    }
}

/// All `n(n−1)/2` unordered pairs in lexicographic order.
pub fn exhaustive_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Match counts per unordered image pair.
///
/// Labels are kept in first-appearance order and entries in insertion order, so
/// a table written back out reproduces its source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchTable {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    entries: Vec<(usize, usize, u64)>,
    lookup: HashMap<(usize, usize), u64>,
}

impl MatchTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `id` without any pair; returns its index.
    pub fn add_label(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn insert(&mut self, a: &str, b: &str, count: u64) -> Result<(), PairError> {
        if a == b {
            return Err(PairError::SelfPair(a.to_owned()));
        }
        if let (Some(&i), Some(&j)) = (self.index.get(a), self.index.get(b)) {
            if self.lookup.contains_key(&(i.min(j), i.max(j))) {
                return Err(PairError::DuplicatePair(a.to_owned(), b.to_owned()));
            }
        }
        let i = self.add_label(a);
        let j = self.add_label(b);
        self.entries.push((i, j, count));
        self.lookup.insert((i.min(j), i.max(j)), count);
        Ok(())
    }

    /// Count for the unordered pair, zero when absent.
    pub fn count(&self, a: &str, b: &str) -> u64 {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.count_by_index(i, j),
            _ => 0,
        }
    }

    pub fn count_by_index(&self, i: usize, j: usize) -> u64 {
        self.lookup.get(&(i.min(j), i.max(j))).copied().unwrap_or(0)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `(a, b, count)` in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.entries
            .iter()
            .map(|&(i, j, c)| (self.labels[i].as_str(), self.labels[j].as_str(), c))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Distance matrix with `w[i][j] = 1 / count(labels[i], labels[j])`; pairs
/// without matches become absent (`+∞`) edges.
pub fn match_matrix(m: &MatchTable, labels: &[String]) -> Result<DistanceMatrix, MetricError> {
    DistanceMatrix::from_fn(labels.to_vec(), |i, j| {
        match_count_weight(m.count(&labels[i], &labels[j]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn set(vs: &[&[f64]]) -> DescriptorSet {
        DescriptorSet::new(
            vs[0].len(),
            vs.iter()
                .enumerate()
                .map(|(i, v)| (format!("im{i}"), v.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn graph(n: usize, sims: &[((usize, usize), f64)]) -> SimilarityGraph {
        SimilarityGraph {
            labels: (0..n).map(|i| i.to_string()).collect(),
            edges: sims
                .iter()
                .map(|&((i, j), similarity)| SimilarityEdge { i, j, similarity })
                .collect(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1., 2., 3.], &[1., 2., 3.]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1., 0.], &[0., 1.]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1., 0.], &[-1., 0.]).unwrap(), -1.0);
        assert!(matches!(
            cosine_similarity(&[0., 0.], &[1., 0.]),
            Err(PairError::ZeroVector(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.], &[1., 0.]),
            Err(PairError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn descriptor_validation() {
        assert!(matches!(
            DescriptorSet::new(2, vec![("a".into(), vec![1.0])]),
            Err(PairError::DimMismatch { .. })
        ));
        assert_eq!(
            DescriptorSet::new(2, vec![("a".into(), vec![0.0, 0.0])]),
            Err(PairError::ZeroVector("a".into()))
        );
        assert_eq!(
            DescriptorSet::new(1, vec![("a".into(), vec![f64::NAN])]),
            Err(PairError::NonFinite("a".into()))
        );
        assert_eq!(
            DescriptorSet::new(1, vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])]),
            Err(PairError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn similarity_graph_examples() {
        assert!(build_similarity_graph(&set(&[&[1.0, 2.0]])).edges.is_empty());
        let g = build_similarity_graph(&set(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(g.edges.len(), 3);
        assert!(g.edges.iter().all(|e| (e.similarity - 1.0).abs() < 1e-15));
        let g = build_similarity_graph(&set(&[&[1.0, 0.0], &[0.0, 1.0], &[FRAC_1_SQRT_2, FRAC_1_SQRT_2]]));
        let sims: Vec<_> = g.edges.iter().map(|e| e.similarity).collect();
        assert_eq!(sims[0], 0.0);
        assert!((sims[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((sims[2] - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn proposal_extremes() {
        let g = graph(3, &[((0, 1), 0.2), ((0, 2), -0.5), ((1, 2), 0.9)]);
        assert_eq!(propose_pairs(&g, -1.0, 0).len(), 3);
        assert!(propose_pairs(&g, 1.0, 0).is_empty());
    }

    #[test]
    fn proposal_with_quota() {
        // Edges (0,1)=.9 (0,2)=.6 (0,3)=.1 (1,2)=.4 (1,3)=.3 (2,3)=.2
        let g = graph(
            4,
            &[
                ((0, 1), 0.9),
                ((0, 2), 0.6),
                ((0, 3), 0.1),
                ((1, 2), 0.4),
                ((1, 3), 0.3),
                ((2, 3), 0.2),
            ],
        );
        // threshold 0.5 keeps (0,1),(0,2); image 3 has none and takes its best, (1,3).
        let got: Vec<_> = propose_pairs(&g, 0.5, 1).iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(got, vec![(0, 1), (0, 2), (1, 3)]);
        // quota 2: image 1 adds (1,2); image 2 is at 1 and adds (1,2) too; image 3 adds (1,3),(2,3).
        let got: Vec<_> = propose_pairs(&g, 0.5, 2).iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(got, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn proposal_ties_sorted_lexicographically() {
        let g = graph(3, &[((0, 1), 0.5), ((0, 2), 0.5), ((1, 2), 0.7)]);
        let got: Vec<_> = propose_pairs(&g, 0.0, 0).iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(got, vec![(1, 2), (0, 1), (0, 2)]);
    }

    #[test]
    fn mst_examples() {
        let two = graph(2, &[((0, 1), 0.3)]);
        let t = mst(&two);
        assert_eq!(t.edges.len(), 1);
        assert!(!t.is_forest);

        let flat = build_similarity_graph(&set(&[&[1.0], &[1.0], &[1.0], &[1.0]]));
        let t = mst(&flat);
        let got: Vec<_> = t.edges.iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(got, vec![(0, 1), (0, 2), (0, 3)]);

        let disconnected = graph(4, &[((0, 1), 0.9), ((2, 3), 0.8)]);
        let t = mst(&disconnected);
        assert!(t.is_forest);
        assert_eq!(t.edges.len(), 2);
        assert!((t.total_weight - 0.3).abs() < 1e-12);

        assert!(!mst(&graph(1, &[])).is_forest);
    }

    #[test]
    fn exhaustive_examples() {
        assert!(exhaustive_pairs(0).is_empty());
        assert_eq!(exhaustive_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(exhaustive_pairs(5).len(), 10);
    }

    #[test]
    fn match_table_rules() {
        let mut t = MatchTable::new();
        t.insert("a", "b", 10).unwrap();
        assert_eq!(t.count("a", "b"), 10);
        assert_eq!(t.count("b", "a"), 10);
        assert_eq!(
            t.insert("b", "a", 7),
            Err(PairError::DuplicatePair("b".into(), "a".into()))
        );
        assert_eq!(t.insert("a", "a", 5), Err(PairError::SelfPair("a".into())));
        assert_eq!(t.count("a", "zzz"), 0);
    }

    #[test]
    fn match_matrix_examples() {
        let labels = vec!["x".to_string(), "y".to_string()];
        let d = match_matrix(&MatchTable::new(), &labels).unwrap();
        assert!(d.is_absent(0, 1) && d.is_absent(1, 0));
        let mut t = MatchTable::new();
        t.insert("x", "y", 10).unwrap();
        let d = match_matrix(&t, &labels).unwrap();
        assert_eq!((d.get(0, 1), d.get(1, 0), d.get(0, 0)), (0.1, 0.1, 0.0));
    }
}
