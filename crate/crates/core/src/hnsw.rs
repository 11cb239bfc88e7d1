//! Hierarchical Navigable Small World index over unit-norm vectors.
//!
//! Single-writer construction in insertion order with a seeded level
//! generator, so a given `(seed, insertion order)` always yields the same
//! graph. Queries only read the index and can run in parallel.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 keeps `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 100,
            ef_search: 64,
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidParam("hnsw m must be >= 2".into()));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::InvalidParam("hnsw ef values must be >= 1".into()));
        }
        Ok(())
    }
}

/// Distance/id pair ordered by distance, then id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand(f64, u32);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks `i`; returns true if it was not marked before.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = (i as usize / 64, 1u64 << (i % 64));
        let fresh = self.bits[w] & b == 0;
        self.bits[w] |= b;
        fresh
    }
}

pub struct Hnsw<S> {
    dim: usize,
    data: Vec<S>,
    /// `links[node][layer]`
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
    params: HnswParams,
    level_mult: f64,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Hnsw<S> {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self> {
        params.validate()?;
        Ok(Hnsw {
            dim,
            data: Vec::new(),
            links: Vec::new(),
            entry: None,
            max_level: 0,
            level_mult: 1.0 / (params.m as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    fn vector(&self, i: u32) -> &[S] {
        let i = i as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn dist(&self, q: &[S], i: u32) -> f64 {
        1.0 - dot(q, self.vector(i))
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates, nearest first.
    fn search_layer(&self, q: &[S], entries: &[Cand], ef: usize, layer: usize) -> Vec<Cand> {
        let mut visited = Visited::new(self.len());
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &c in entries {
            if visited.insert(c.1) {
                frontier.push(Reverse(c));
                best.push(c);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(cur)) = frontier.pop() {
            if best.len() >= ef && cur > *best.peek().unwrap() {
                break;
            }
            for &nb in &self.links[cur.1 as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let c = Cand(self.dist(q, nb), nb);
                if best.len() < ef || c < *best.peek().unwrap() {
                    frontier.push(Reverse(c));
                    best.push(c);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Neighbor selection heuristic with pruned-connection backfill.
    fn select(&self, candidates: &[Cand], m: usize) -> Vec<u32> {
        let mut chosen: Vec<u32> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for &Cand(d, e) in candidates {
            if chosen.len() >= m {
                break;
            }
            let ev = self.vector(e);
            if chosen.iter().all(|&r| 1.0 - dot(ev, self.vector(r)) > d) {
                chosen.push(e);
            } else {
                pruned.push(e);
            }
        }
        for e in pruned {
            if chosen.len() >= m {
                break;
            }
            chosen.push(e);
        }
        chosen
    }

    pub fn insert(&mut self, v: &[S]) -> Result<usize> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let id = self.links.len() as u32;
        let u: f64 = 1.0 - self.rng.random::<f64>();
        let level = (-u.ln() * self.level_mult).floor() as usize;
        self.data.extend_from_slice(v);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(entry) = self.entry else {
            self.entry = Some(id);
            self.max_level = level;
            return Ok(id as usize);
        };
        let mut ep = vec![Cand(self.dist(v, entry), entry)];
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.search_layer(v, &ep, 1, layer);
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(v, &ep, self.params.ef_construction, layer);
            let neighbors = self.select(&found, self.params.m);
            for &nb in &neighbors {
                self.links[nb as usize][layer].push(id);
                if self.links[nb as usize][layer].len() > self.max_links(layer) {
                    self.shrink(nb, layer);
                }
            }
            self.links[id as usize][layer] = neighbors;
            ep = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(id);
        }
        Ok(id as usize)
    }

    fn shrink(&mut self, node: u32, layer: usize) {
        let base = self.vector(node);
        let mut cands: Vec<Cand> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Cand(1.0 - dot(base, self.vector(n)), n))
            .collect();
        cands.sort();
        let kept = self.select(&cands, self.max_links(layer));
        self.links[node as usize][layer] = kept;
    }

    /// Approximate `k` nearest neighbors of `q` as `(id, cosine distance)`,
    /// nearest first.
    pub fn search(&self, q: &[S], k: usize, ef: usize) -> Result<Vec<(usize, f64)>> {
        if q.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        let Some(entry) = self.entry else {
            return Ok(Vec::new());
        };
        let mut ep = vec![Cand(self.dist(q, entry), entry)];
        for layer in (1..=self.max_level).rev() {
            ep = self.search_layer(q, &ep, 1, layer);
        }
        let found = self.search_layer(q, &ep, ef.max(k), 0);
        Ok(found.into_iter().take(k).map(|Cand(d, i)| (i as usize, d)).collect())
    }
}
