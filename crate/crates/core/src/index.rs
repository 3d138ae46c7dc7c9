//! Approximate nearest-neighbor search over embedding vectors.
//!
//! [`HnswIndex`] is a hierarchical navigable small-world graph keyed by
//! opaque string ids. Similarity is cosine; vectors are normalized once at
//! insertion so every comparison is a dot product. Removal marks nodes as
//! tombstones, which keep routing searches but never appear in results; the
//! graph is rebuilt from live entries once a quarter of the nodes are dead.
//!
//! [`HnswIndex::exact_search`] is a linear scan used as the correctness
//! oracle for the graph search.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of dead nodes that triggers a rebuild.
pub const COMPACTION_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("zero vector cannot be indexed")]
    ZeroVector,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
}

/// An embedding vector. Values must be finite; the zero vector is legal as a
/// value but is rejected by the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, IndexError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    fn normalized(&self) -> Vec<f64> {
        let n = self.norm();
        self.0.iter().map(|v| v / n).collect()
    }
}

/// Cosine similarity between two vectors of equal length, clamped to [-1, 1].
/// Returns 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Max neighbors per node on upper layers; layer 0 allows twice this.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 128,
            ef_search: 64,
            seed: 0x5eed_1d3c,
        }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParams("m must be at least 2".into()));
        }
        if self.ef_construction < self.m {
            return Err(IndexError::InvalidParams(
                "ef_construction must be at least m".into(),
            ));
        }
        if self.ef_search < 1 {
            return Err(IndexError::InvalidParams("ef_search must be at least 1".into()));
        }
        Ok(())
    }

    fn level_multiplier(&self) -> f64 {
        1.0 / (self.m as f64).ln()
    }

    fn max_neighbors(&self, layer: usize) -> usize {
        if layer == 0 {
            self.m * 2
        } else {
            self.m
        }
    }
}

/// A search hit: id plus cosine similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub similarity: f64,
}

/// Sort hits by similarity descending, ties by ascending id.
pub fn rank_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.id.cmp(&b.id))
    });
}

#[derive(Debug, Clone)]
struct Node {
    id: String,
    vector: Vec<f64>,
    original: Embedding,
    links: Vec<Vec<u32>>,
    deleted: bool,
}

/// Heap entry ordered by similarity, then by lower slot.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    slot: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    dim: usize,
    params: IndexParams,
    nodes: Vec<Node>,
    slots: HashMap<String, u32>,
    entry: Option<u32>,
    max_level: usize,
    dead: usize,
    rng: ChaCha8Rng,
}

impl HnswIndex {
    pub fn new(dim: usize, params: IndexParams) -> Result<Self, IndexError> {
        params.validate()?;
        if dim == 0 {
            return Err(IndexError::InvalidParams("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            params,
            nodes: Vec::new(),
            slots: HashMap::new(),
            entry: None,
            max_level: 0,
            dead: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    /// Number of live entries.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    /// Number of tombstoned nodes still in the graph.
    pub fn dead_count(&self) -> usize {
        self.dead
    }

    fn check_dim(&self, v: &Embedding) -> Result<(), IndexError> {
        if v.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Embedding) -> Result<(), IndexError> {
        let id = id.into();
        self.check_dim(&vector)?;
        if vector.is_zero() {
            return Err(IndexError::ZeroVector);
        }
        if self.slots.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.insert_unchecked(id, vector);
        Ok(())
    }

    fn random_level(&mut self) -> usize {
        let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        (-u.ln() * self.params.level_multiplier()).floor() as usize
    }

    fn insert_unchecked(&mut self, id: String, original: Embedding) {
        let level = self.random_level();
        let slot = self.nodes.len() as u32;
        let vector = original.normalized();
        self.nodes.push(Node {
            id: id.clone(),
            vector,
            original,
            links: vec![Vec::new(); level + 1],
            deleted: false,
        });
        self.slots.insert(id, slot);

        let Some(mut ep) = self.entry else {
            self.entry = Some(slot);
            self.max_level = level;
            return;
        };

        let query = self.nodes[slot as usize].vector.clone();
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy_closest(&query, ep, layer);
        }

        let mut entry_points = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let candidates =
                self.search_layer(&query, &entry_points, self.params.ef_construction, layer);
            let max = self.params.max_neighbors(layer);
            let chosen = self.select_neighbors(&candidates, max);
            self.nodes[slot as usize].links[layer] = chosen.iter().map(|s| s.slot).collect();
            for nb in &chosen {
                self.link(nb.slot, slot, layer);
            }
            entry_points = candidates.iter().map(|s| s.slot).collect();
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(slot);
        }
    }

    /// Add `to` to the neighbor list of `from`, shrinking it to the closest
    /// neighbors when it overflows.
    fn link(&mut self, from: u32, to: u32, layer: usize) {
        let max = self.params.max_neighbors(layer);
        let links = &self.nodes[from as usize].links[layer];
        if links.len() < max {
            self.nodes[from as usize].links[layer].push(to);
            return;
        }
        let base = &self.nodes[from as usize].vector;
        let mut scored: Vec<Scored> = links
            .iter()
            .chain(std::iter::once(&to))
            .map(|&s| Scored {
                sim: dot(base, &self.nodes[s as usize].vector),
                slot: s,
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        scored.truncate(max);
        self.nodes[from as usize].links[layer] = scored.into_iter().map(|s| s.slot).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the new
    /// node than to any neighbor already kept, then top up with the pruned
    /// ones so nodes stay well connected.
    fn select_neighbors(&self, candidates: &[Scored], max: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(max);
        let mut pruned = Vec::new();
        for c in candidates {
            if kept.len() >= max {
                break;
            }
            let cv = &self.nodes[c.slot as usize].vector;
            let diverse = kept
                .iter()
                .all(|k| dot(cv, &self.nodes[k.slot as usize].vector) < c.sim);
            if diverse {
                kept.push(*c);
            } else {
                pruned.push(*c);
            }
        }
        for p in pruned {
            if kept.len() >= max {
                break;
            }
            kept.push(p);
        }
        kept
    }

    fn greedy_closest(&self, query: &[f64], mut ep: u32, layer: usize) -> u32 {
        let mut best = dot(query, &self.nodes[ep as usize].vector);
        loop {
            let mut changed = false;
            for &n in &self.nodes[ep as usize].links[layer] {
                let s = dot(query, &self.nodes[n as usize].vector);
                if s > best {
                    best = s;
                    ep = n;
                    changed = true;
                }
            }
            if !changed {
                return ep;
            }
        }
    }

    /// Best-first search on one layer. Returns up to `ef` nodes sorted by
    /// similarity descending, tombstones included.
    fn search_layer(&self, query: &[f64], entry_points: &[u32], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.nodes.len()];
        let mut candidates = BinaryHeap::new();
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &ep in entry_points {
            if visited[ep as usize] {
                continue;
            }
            visited[ep as usize] = true;
            let s = Scored {
                sim: dot(query, &self.nodes[ep as usize].vector),
                slot: ep,
            };
            candidates.push(s);
            results.push(std::cmp::Reverse(s));
            if results.len() > ef {
                results.pop();
            }
        }

        while let Some(current) = candidates.pop() {
            let worst = results.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
            if results.len() >= ef && current.sim < worst {
                break;
            }
            let node = &self.nodes[current.slot as usize];
            let Some(links) = node.links.get(layer) else {
                continue;
            };
            for &n in links {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let s = Scored {
                    sim: dot(query, &self.nodes[n as usize].vector),
                    slot: n,
                };
                let worst = results.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
                if results.len() < ef || s.sim > worst {
                    candidates.push(s);
                    results.push(std::cmp::Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Graph search. `ef` is widened to at least `k`.
    pub fn search(&self, query: &Embedding, k: usize, ef: usize) -> Result<Vec<Hit>, IndexError> {
        self.check_dim(query)?;
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if k == 0 || query.is_zero() {
            return Ok(Vec::new());
        }
        let q = query.normalized();
        let mut ep = self.entry.expect("nonempty index has an entry point");
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_closest(&q, ep, layer);
        }

        let want = k.min(self.len());
        let mut ef = ef.max(k);
        loop {
            let found = self.search_layer(&q, &[ep], ef, 0);
            let exhausted = found.len() < ef;
            let mut hits: Vec<Hit> = found
                .into_iter()
                .filter(|s| !self.nodes[s.slot as usize].deleted)
                .map(|s| Hit {
                    id: self.nodes[s.slot as usize].id.clone(),
                    similarity: s.sim,
                })
                .collect();
            // Tombstones can crowd out live nodes; widen until enough survive.
            if hits.len() >= want || exhausted || ef >= self.nodes.len() {
                rank_hits(&mut hits);
                hits.truncate(k);
                return Ok(hits);
            }
            ef = (ef * 2).min(self.nodes.len());
        }
    }

    pub fn search_default(&self, query: &Embedding, k: usize) -> Result<Vec<Hit>, IndexError> {
        self.search(query, k, self.params.ef_search)
    }

    /// Exact top-k by linear scan, ties broken by ascending id.
    pub fn exact_search(&self, query: &Embedding, k: usize) -> Result<Vec<Hit>, IndexError> {
        self.check_dim(query)?;
        if k == 0 || query.is_zero() {
            return Ok(Vec::new());
        }
        let q = query.normalized();
        let mut hits: Vec<Hit> = self
            .nodes
            .iter()
            .filter(|n| !n.deleted)
            .map(|n| Hit {
                id: n.id.clone(),
                similarity: dot(&q, &n.vector),
            })
            .collect();
        rank_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    pub fn remove(&mut self, id: &str) -> Result<(), IndexError> {
        let slot = self
            .slots
            .remove(id)
            .ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
        self.nodes[slot as usize].deleted = true;
        self.dead += 1;
        if self.slots.is_empty() {
            self.clear();
        } else if self.dead as f64 >= COMPACTION_THRESHOLD * self.nodes.len() as f64 {
            self.compact();
        }
        Ok(())
    }

    fn clear(&mut self) {
        self.nodes.clear();
        self.slots.clear();
        self.entry = None;
        self.max_level = 0;
        self.dead = 0;
        self.rng = ChaCha8Rng::seed_from_u64(self.params.seed);
    }

    /// Rebuild the graph from live entries, in original insertion order.
    pub fn compact(&mut self) {
        let live: Vec<(String, Embedding)> = self
            .nodes
            .drain(..)
            .filter(|n| !n.deleted)
            .map(|n| (n.id, n.original))
            .collect();
        self.clear();
        for (id, v) in live {
            self.insert_unchecked(id, v);
        }
    }

    /// Live entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.nodes
            .iter()
            .filter(|n| !n.deleted)
            .map(|n| (n.id.as_str(), &n.original))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn index(dim: usize) -> HnswIndex {
        HnswIndex::new(dim, IndexParams::default()).unwrap()
    }

    #[test]
    fn single_entry_finds_itself() {
        let mut idx = index(3);
        idx.insert("e1", e(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(idx.len(), 1);
        let hits = idx.search_default(&e(&[1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "e1");
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_wrong_dimension() {
        let mut idx = index(768);
        let err = idx.insert("x", e(&[1.0; 5])).unwrap_err();
        assert_eq!(err, IndexError::DimensionMismatch { expected: 768, actual: 5 });
        idx.insert("y", e(&[1.0; 768])).unwrap();
        assert!(matches!(
            idx.search_default(&e(&[1.0; 5]), 1),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_zero_and_duplicates() {
        let mut idx = index(2);
        assert_eq!(idx.insert("z", e(&[0.0, 0.0])), Err(IndexError::ZeroVector));
        idx.insert("a", e(&[1.0, 0.0])).unwrap();
        assert_eq!(
            idx.insert("a", e(&[0.0, 1.0])),
            Err(IndexError::DuplicateId("a".into()))
        );
        assert!(Embedding::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn orthogonal_pair_scores_zero() {
        let mut idx = index(2);
        idx.insert("a", e(&[1.0, 0.0])).unwrap();
        let hits = idx.search_default(&e(&[0.0, 3.0]), 1).unwrap();
        assert!(hits[0].similarity.abs() < 1e-9);
    }

    #[test]
    fn empty_index() {
        let idx = index(2);
        assert_eq!(idx.search_default(&e(&[1.0, 0.0]), 1), Err(IndexError::EmptyIndex));
        assert!(idx.exact_search(&e(&[1.0, 0.0]), 1).unwrap().is_empty());
    }

    #[test]
    fn exact_search_ordering_and_ties() {
        let mut idx = index(2);
        // cos with (1,0): 0.9 and 0.2
        idx.insert("low", e(&[0.2, (1.0f64 - 0.04).sqrt()])).unwrap();
        idx.insert("high", e(&[0.9, (1.0f64 - 0.81).sqrt()])).unwrap();
        let hits = idx.exact_search(&e(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(hits[0].id, "high");

        let mut tie = index(2);
        tie.insert("b", e(&[1.0, 1.0])).unwrap();
        tie.insert("a", e(&[2.0, 2.0])).unwrap();
        let hits = tie.exact_search(&e(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(hits[0].id, "a");
        assert_eq!(hits[1].id, "b");
    }

    #[test]
    fn remove_excludes_and_unknown_errors() {
        let mut idx = index(2);
        idx.insert("a", e(&[1.0, 0.0])).unwrap();
        idx.insert("b", e(&[0.0, 1.0])).unwrap();
        idx.remove("a").unwrap();
        let hits = idx.exact_search(&e(&[1.0, 0.0]), 5).unwrap();
        assert!(hits.iter().all(|h| h.id != "a"));
        let hits = idx.search(&e(&[1.0, 0.0]), 5, 10).unwrap();
        assert!(hits.iter().all(|h| h.id != "a"));
        assert_eq!(idx.remove("nope"), Err(IndexError::UnknownId("nope".into())));
    }

    #[test]
    fn removing_everything_resets() {
        let mut idx = index(2);
        idx.insert("a", e(&[1.0, 0.0])).unwrap();
        idx.remove("a").unwrap();
        assert!(idx.is_empty());
        assert_eq!(idx.dead_count(), 0);
        idx.insert("a", e(&[1.0, 0.0])).unwrap();
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn compaction_triggers_at_quarter_dead() {
        let mut idx = index(2);
        for i in 0..8 {
            let a = i as f64;
            idx.insert(format!("n{i}"), e(&[a.cos(), a.sin()])).unwrap();
        }
        idx.remove("n0").unwrap();
        assert_eq!(idx.dead_count(), 1);
        idx.remove("n1").unwrap();
        // 2 of 8 is 25%: rebuilt without tombstones
        assert_eq!(idx.dead_count(), 0);
        assert_eq!(idx.len(), 6);
    }

    #[test]
    fn invalid_params() {
        let p = IndexParams { m: 1, ..Default::default() };
        assert!(HnswIndex::new(4, p).is_err());
        let p = IndexParams { ef_construction: 4, ..Default::default() };
        assert!(HnswIndex::new(4, p).is_err());
        let p = IndexParams { ef_search: 0, ..Default::default() };
        assert!(HnswIndex::new(4, p).is_err());
    }
}
