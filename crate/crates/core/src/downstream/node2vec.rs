//! Biased second-order random walks and skip-gram with negative sampling.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserGraph;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node2VecParams {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Single-worker training, bitwise reproducible.
    pub deterministic: bool,
}

impl Default for Node2VecParams {
    fn default() -> Self {
        Node2VecParams {
            p: 1.0,
            q: 1.0,
            walk_length: 20,
            walks_per_node: 5,
            dim: 32,
            window: 4,
            negatives: 3,
            epochs: 1,
            lr: 0.05,
            seed: 0,
            deterministic: true,
        }
    }
}

impl Node2VecParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::InvalidParam("node2vec p and q must be > 0".into()));
        }
        if self.walk_length == 0 || self.walks_per_node == 0 || self.dim == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::InvalidParam(
                "walk_length, walks_per_node, dim, window and epochs must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

fn pick(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let mut r = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if r < w {
            return i;
        }
        r -= w;
        last = i;
    }
    last
}

/// `walks_per_node` rounds, each starting one walk from every node in
/// node order. Walks hold node indices.
pub fn generate_walks(graph: &UserGraph, p: f64, q: f64, walk_length: usize, walks_per_node: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if walk_length == 0 {
        return Err(Error::InvalidParam("walk_length must be >= 1".into()));
    }
    if !(p > 0.0 && q > 0.0) {
        return Err(Error::InvalidParam("p and q must be > 0".into()));
    }
    let adj = graph.adjacency();
    let n = graph.num_nodes();
    let (inv_p, inv_q) = (1.0 / p, 1.0 / q);
    Ok((0..walks_per_node * n)
        .into_par_iter()
        .map(|job| {
            let start = job % n;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, job as u64));
            let mut walk = Vec::with_capacity(walk_length);
            walk.push(start);
            while walk.len() < walk_length {
                let cur = *walk.last().unwrap();
                let nbrs = &adj[cur];
                if nbrs.is_empty() {
                    break;
                }
                let next = if walk.len() == 1 {
                    nbrs[pick(&mut rng, nbrs.iter().map(|x| x.1))].0
                } else {
                    let prev = walk[walk.len() - 2];
                    let prev_nbrs = &adj[prev];
                    let bias = |x: usize| {
                        if x == prev {
                            inv_p
                        } else if prev_nbrs.binary_search_by_key(&x, |e| e.0).is_ok() {
                            1.0
                        } else {
                            inv_q
                        }
                    };
                    nbrs[pick(&mut rng, nbrs.iter().map(|&(x, w)| w * bias(x)))].0
                };
                walk.push(next);
            }
            walk
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    pub users: Vec<String>,
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
    pub params: Node2VecParams,
}

impl NodeEmbeddings {
    pub fn as_map(&self) -> BTreeMap<&str, &[f32]> {
        self.users.iter().map(|u| u.as_str()).zip(self.vectors.iter().map(|v| v.as_slice())).collect()
    }
}

struct Shared(Vec<AtomicU32>);

impl Shared {
    fn new(values: impl Iterator<Item = f32>) -> Self {
        Shared(values.map(|v| AtomicU32::new(v.to_bits())).collect())
    }

    #[inline]
    fn get(&self, i: usize) -> f32 {
        f32::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, i: usize, d: f32) {
        self.0[i].store((self.get(i) + d).to_bits(), Ordering::Relaxed);
    }
}

fn sigmoid(x: f32) -> f32 {
    if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Skip-gram with negative sampling. In deterministic mode one worker
/// processes walks in order; otherwise walks are split across threads with
/// lock-free (racy) updates.
pub fn train_node_embeddings(walks: &[Vec<usize>], users: &[String], params: &Node2VecParams) -> Result<NodeEmbeddings> {
    params.validate()?;
    if walks.is_empty() {
        return Err(Error::Empty("no walks to train on".into()));
    }
    let n = users.len();
    let d = params.dim;
    let mut freq = vec![0.0f64; n];
    for &v in walks.iter().flatten() {
        if v >= n {
            return Err(Error::InvalidParam(format!("walk node {v} out of range")));
        }
        freq[v] += 1.0;
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for f in &freq {
        acc += f.powf(0.75);
        cumulative.push(acc);
    }
    let mut init = ChaCha8Rng::seed_from_u64(params.seed);
    let input = Shared::new((0..n * d).map(|_| (init.random::<f32>() - 0.5) / d as f32));
    let output = Shared::new(std::iter::repeat_n(0.0, n * d));
    let total_tokens = (walks.iter().map(Vec::len).sum::<usize>() * params.epochs) as f64;

    let train_chunk = |chunk: &[Vec<usize>], offset: usize, rng: &mut ChaCha8Rng, done: &mut f64| {
        let mut grad = vec![0.0f32; d];
        for walk in chunk {
            for (i, &center) in walk.iter().enumerate() {
                let lr = (params.lr * (1.0 - (offset as f64 + *done) / total_tokens).max(1e-4)) as f32;
                *done += 1.0;
                let lo = i.saturating_sub(params.window);
                let hi = (i + params.window + 1).min(walk.len());
                for (j, &ctx) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for s in 0..=params.negatives {
                        let (target, label) = if s == 0 {
                            (ctx, 1.0)
                        } else {
                            let r = rng.random::<f64>() * acc;
                            let t = cumulative.partition_point(|&c| c <= r).min(n - 1);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let (ci, ti) = (center * d, target * d);
                        let dot: f32 = (0..d).map(|k| input.get(ci + k) * output.get(ti + k)).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for k in 0..d {
                            grad[k] += g * output.get(ti + k);
                            output.add(ti + k, g * input.get(ci + k));
                        }
                    }
                    for (k, g) in grad.iter().enumerate() {
                        input.add(center * d + k, *g);
                    }
                }
            }
        }
    };

    let workers = if params.deterministic { 1 } else { rayon::current_num_threads().max(1) };
    let tokens_per_epoch = total_tokens / params.epochs as f64;
    for epoch in 0..params.epochs {
        let per = walks.len().div_ceil(workers);
        let epoch_offset = (epoch as f64 * tokens_per_epoch) as usize;
        walks.par_chunks(per).enumerate().for_each(|(w, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, (epoch * workers + w) as u64 + 1));
            let mut done = 0.0;
            train_chunk(chunk, epoch_offset, &mut rng, &mut done);
        });
    }
    let vectors = (0..n).map(|i| (0..d).map(|k| input.get(i * d + k)).collect()).collect();
    Ok(NodeEmbeddings {
        users: users.to_vec(),
        dim: d,
        vectors,
        params: params.clone(),
    })
}

/// Walks plus training over a graph's nodes.
pub fn embed_graph(graph: &UserGraph, params: &Node2VecParams) -> Result<NodeEmbeddings> {
    params.validate()?;
    let walks = generate_walks(graph, params.p, params.q, params.walk_length, params.walks_per_node, params.seed)?;
    train_node_embeddings(&walks, graph.nodes(), params)
}

pub fn write_walks(walks: &[Vec<usize>], graph: &UserGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for w in walks {
        let line: Vec<&str> = w.iter().map(|&i| graph.nodes()[i].as_str()).collect();
        writeln!(out, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `user<TAB>x1<TAB>x2...` per line.
pub fn write_node_embeddings(e: &NodeEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (u, v) in e.users.iter().zip(&e.vectors) {
        out.push_str(u);
        for x in v {
            out.push('\t');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
