//! Static user-user similarity graphs over affiliation rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affiliation::{sparse_cosine, AffiliationMatrix, SparseRow};
use crate::error::{Error, Result};
use crate::hnsw::{Hnsw, HnswParams};
use crate::scalar::normalize_in_place;

pub const MAX_DEFAULT_K: usize = 800;
pub const DEFAULT_PROJECTION_DIM: usize = 256;

/// `min(800, n - 1)`, at least 1.
pub fn default_k(n_users: usize) -> usize {
    MAX_DEFAULT_K.min(n_users.saturating_sub(1)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Exact,
    Hnsw,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "hnsw" => Ok(Method::Hnsw),
            _ => Err(Error::Unknown {
                kind: "knn method",
                name: s.into(),
            }),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Hnsw => "hnsw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnParams {
    pub hnsw: HnswParams,
    pub projection_dim: usize,
}

impl Default for AnnParams {
    fn default() -> Self {
        AnnParams {
            hnsw: HnswParams::default(),
            projection_dim: DEFAULT_PROJECTION_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphMeta {
    pub k: usize,
    pub min_sim: f64,
    pub method: Method,
    pub ann: Option<AnnParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// Undirected weighted graph. Nodes are kept sorted by id and every edge
/// has `u < v`; edges are sorted by `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGraph {
    nodes: Vec<String>,
    platforms: Vec<Option<String>>,
    edges: Vec<Edge>,
    pub meta: GraphMeta,
}

impl UserGraph {
    /// Builds a graph from arbitrary node order and index pairs; duplicate
    /// pairs keep the last weight, self-loops are rejected.
    pub fn from_edges(nodes: Vec<String>, edges: impl IntoIterator<Item = (usize, usize, f64)>, meta: GraphMeta) -> Result<Self> {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| nodes[a].cmp(&nodes[b]));
        let mut remap = vec![0; nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let sorted: Vec<String> = order.iter().map(|&i| nodes[i].clone()).collect();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParam("duplicate node id".into()));
        }
        let mut map = BTreeMap::new();
        for (a, b, w) in edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::InvalidParam(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidParam(format!("self-loop on `{}`", nodes[a])));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidParam(format!("edge weight {w} outside [0, 1]")));
            }
            let (x, y) = (remap[a], remap[b]);
            map.insert((x.min(y), x.max(y)), w);
        }
        Ok(UserGraph {
            platforms: vec![None; sorted.len()],
            nodes: sorted,
            edges: map.into_iter().map(|((u, v), w)| Edge { u, v, w }).collect(),
            meta,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }

    pub fn platform(&self, i: usize) -> Option<&str> {
        self.platforms[i].as_deref()
    }

    pub fn with_platforms(mut self, platforms: &BTreeMap<String, String>) -> Self {
        self.platforms = self.nodes.iter().map(|n| platforms.get(n).cloned()).collect();
        self
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let key = (a.min(b), a.max(b));
        self.edges
            .binary_search_by(|e| (e.u, e.v).cmp(&key))
            .ok()
            .map(|i| self.edges[i].w)
    }

    /// Neighbor lists sorted by neighbor index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.u].push((e.v, e.w));
            adj[e.v].push((e.u, e.w));
        }
        for a in &mut adj {
            a.sort_by_key(|x| x.0);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in &self.edges {
            d[e.u] += 1;
            d[e.v] += 1;
        }
        d
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.w).sum()
    }

    /// Unordered id pairs, for comparing graphs over different node sets.
    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|e| (self.nodes[e.u].clone(), self.nodes[e.v].clone()))
            .collect()
    }

    /// Top-`k` neighbors of node `i` by weight (ties to lower index).
    pub fn top_neighbors(&self, adj: &[Vec<(usize, f64)>], i: usize, k: usize) -> Vec<usize> {
        let mut n = adj[i].clone();
        n.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        n.into_iter().take(k).map(|x| x.0).collect()
    }
}

fn check_args(affil: &AffiliationMatrix, k: usize, min_sim: f64) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&min_sim) {
        return Err(Error::InvalidParam(format!("min_sim {min_sim} outside [0, 1)")));
    }
    if affil.num_users() < 2 {
        return Err(Error::Empty("need at least 2 users to build a graph".into()));
    }
    Ok(k.min(affil.num_users() - 1))
}

/// Keeps the best `k` of `(neighbor, sim)` with sim > 0 and sim >= min_sim.
fn top_k(mut cands: Vec<(usize, f64)>, k: usize, min_sim: f64) -> Vec<(usize, f64)> {
    cands.retain(|&(_, s)| s > 0.0 && s >= min_sim);
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(k);
    cands
}

fn symmetrize(affil: &AffiliationMatrix, lists: Vec<Vec<(usize, f64)>>, meta: GraphMeta) -> Result<UserGraph> {
    let edges = lists
        .into_iter()
        .enumerate()
        .flat_map(|(u, l)| l.into_iter().map(move |(v, s)| (u, v, s)));
    UserGraph::from_edges(affil.users.clone(), edges, meta)
}

/// Exact kNN graph via an inverted cluster index.
pub fn knn_exact(affil: &AffiliationMatrix, k: usize, min_sim: f64) -> Result<UserGraph> {
    let k = check_args(affil, k, min_sim)?;
    let n = affil.num_users();
    let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); affil.num_clusters];
    for (u, row) in affil.rows.iter().enumerate() {
        for &(c, w) in row {
            if c >= postings.len() {
                postings.resize(c + 1, Vec::new());
            }
            postings[c].push((u, w));
        }
    }
    let norms = affil.norms();
    let lists: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], Vec::<usize>::new()),
            |(acc, touched), u| {
                if norms[u] == 0.0 {
                    return Vec::new();
                }
                for &(c, wu) in &affil.rows[u] {
                    for &(v, wv) in &postings[c] {
                        if v != u {
                            if acc[v] == 0.0 {
                                touched.push(v);
                            }
                            acc[v] += wu * wv;
                        }
                    }
                }
                let cands = touched
                    .drain(..)
                    .map(|v| {
                        let s = (acc[v] / (norms[u] * norms[v])).clamp(0.0, 1.0);
                        acc[v] = 0.0;
                        (v, s)
                    })
                    .collect();
                top_k(cands, k, min_sim)
            },
        )
        .collect();
    symmetrize(
        affil,
        lists,
        GraphMeta {
            k,
            min_sim,
            method: Method::Exact,
            ann: None,
        },
    )
}

/// Seeded signed random projection of sparse rows to unit dense vectors.
pub fn project_rows(rows: &[SparseRow<f64>], num_clusters: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<f32> = (0..num_clusters * dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    rows.par_iter()
        .map(|row| {
            let mut v = vec![0.0f32; dim];
            for &(c, w) in row {
                let r = &signs[c * dim..(c + 1) * dim];
                for (x, s) in v.iter_mut().zip(r) {
                    *x += s * w as f32;
                }
            }
            normalize_in_place(&mut v);
            v
        })
        .collect()
}

/// Approximate kNN graph: HNSW over projected rows, candidates rescored by
/// exact sparse cosine.
pub fn knn_hnsw(affil: &AffiliationMatrix, k: usize, min_sim: f64, params: &AnnParams) -> Result<UserGraph> {
    let k = check_args(affil, k, min_sim)?;
    if params.projection_dim == 0 {
        return Err(Error::InvalidParam("projection_dim must be >= 1".into()));
    }
    let projected = project_rows(&affil.rows, affil.num_clusters, params.projection_dim, params.hnsw.seed);
    let live: Vec<usize> = (0..affil.num_users()).filter(|&u| !affil.rows[u].is_empty()).collect();
    let mut index = Hnsw::<f32>::new(params.projection_dim, params.hnsw)?;
    for &u in &live {
        index.insert(&projected[u])?;
    }
    let ef = params.hnsw.ef_search.max(k + 1);
    let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); affil.num_users()];
    let found: Vec<(usize, Vec<(usize, f64)>)> = live
        .par_iter()
        .map(|&u| {
            let hits = index.search(&projected[u], ef, ef)?;
            let cands = hits
                .into_iter()
                .map(|(i, _)| live[i])
                .filter(|&v| v != u)
                .map(|v| (v, sparse_cosine(&affil.rows[u], &affil.rows[v])))
                .collect();
            Ok((u, top_k(cands, k, min_sim)))
        })
        .collect::<Result<_>>()?;
    for (u, l) in found {
        lists[u] = l;
    }
    symmetrize(
        affil,
        lists,
        GraphMeta {
            k,
            min_sim,
            method: Method::Hnsw,
            ann: Some(*params),
        },
    )
}

pub fn build_graph(affil: &AffiliationMatrix, k: usize, min_sim: f64, method: Method, ann: &AnnParams) -> Result<UserGraph> {
    match method {
        Method::Exact => knn_exact(affil, k, min_sim),
        Method::Hnsw => knn_hnsw(affil, k, min_sim, ann),
    }
}

/// Mean top-`k` overlap between two graphs on the same node set. Nodes with
/// no exact neighbors are skipped; each overlap is divided by
/// `min(k, |exact top-k|)`.
pub fn recall_at_k(approx: &UserGraph, exact: &UserGraph, k: usize) -> Result<f64> {
    if approx.nodes != exact.nodes {
        return Err(Error::InvalidParam("recall_at_k: node sets differ".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    let (aa, ea) = (approx.adjacency(), exact.adjacency());
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..exact.num_nodes() {
        let want = exact.top_neighbors(&ea, i, k);
        if want.is_empty() {
            continue;
        }
        let got = approx.top_neighbors(&aa, i, k);
        let hit = got.iter().filter(|g| want.contains(g)).count();
        sum += hit as f64 / want.len() as f64;
        count += 1;
    }
    Ok(if count == 0 { 1.0 } else { sum / count as f64 })
}

pub fn write_edges(g: &UserGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in &g.edges {
        writeln!(w, "{}\t{}\t{:.6}", g.nodes[e.u], g.nodes[e.v], e.w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an edge TSV. `nodes` supplies isolated nodes the file cannot
/// carry; endpoints not in `nodes` are added.
pub fn read_edges(path: impl AsRef<Path>, nodes: &[String]) -> Result<UserGraph> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut intern = |s: &str| -> usize {
        if let Some(&i) = ids.get(s) {
            return i;
        }
        ids.insert(s.to_string(), names.len());
        names.push(s.to_string());
        names.len() - 1
    };
    for n in nodes {
        intern(n);
    }
    let mut edges = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: n + 1,
            msg: format!("expected src<TAB>dst<TAB>weight, got `{line}`"),
        };
        let mut it = line.split('\t');
        let (a, b, w) = (it.next().ok_or_else(bad)?, it.next().ok_or_else(bad)?, it.next().ok_or_else(bad)?);
        let w: f64 = w.parse().map_err(|_| bad())?;
        edges.push((intern(a), intern(b), w));
    }
    UserGraph::from_edges(names, edges, GraphMeta::default())
}
