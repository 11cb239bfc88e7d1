//! Temporal graphs: per-window similarity merged by a memory/decay rule.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affiliation::{count_matrix, weight_matrix, weight_with_df, AffiliationMatrix, Scheme};
use crate::clustering::ClusterModel;
use crate::corpus::PostCollection;
use crate::error::{Error, Result};
use crate::graph::{build_graph, default_k, write_edges, AnnParams, GraphMeta, Method, UserGraph};
use crate::scalar::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_BETA: f64 = 0.2;
pub const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    pub alpha: f64,
    pub beta: f64,
    /// Window width in seconds.
    pub window: i64,
    /// Per-window k; 0 picks the default for the window's user count.
    pub k: usize,
    pub min_sim: f64,
    pub prune_eps: f64,
    pub method: Method,
    pub ann: AnnParams,
    /// Use corpus-wide document frequencies instead of per-window ones.
    pub global_idf: bool,
}

impl Default for TemporalParams {
    fn default() -> Self {
        TemporalParams {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            window: DAY,
            k: 0,
            min_sim: 0.0,
            prune_eps: 1e-3,
            method: Method::Exact,
            ann: AnnParams::default(),
            global_idf: false,
        }
    }
}

impl TemporalParams {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.alpha) || !unit.contains(&self.beta) {
            return Err(Error::InvalidParam(format!(
                "alpha ({}) and beta ({}) must lie in [0, 1]",
                self.alpha, self.beta
            )));
        }
        if self.window <= 0 {
            return Err(Error::InvalidParam("window must be > 0 seconds".into()));
        }
        if self.prune_eps.is_nan() || self.prune_eps < 0.0 {
            return Err(Error::InvalidParam("prune_eps must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.min_sim) {
            return Err(Error::InvalidParam("min_sim must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `α·sim + (1−α)·prev` when `sim` is defined, else `(1−β)·prev`.
pub fn edge_update(prev: f64, sim: Option<f64>, alpha: f64, beta: f64) -> f64 {
    match sim {
        Some(s) => alpha * s + (1.0 - alpha) * prev,
        None => (1.0 - beta) * prev,
    }
}

#[derive(Debug, Clone)]
pub struct WindowAffiliation {
    pub index: usize,
    pub start: i64,
    pub end: i64,
    pub matrix: AffiliationMatrix,
}

fn bucket(posts: &PostCollection, window: i64) -> Result<(i64, BTreeMap<usize, Vec<usize>>)> {
    if window <= 0 {
        return Err(Error::InvalidParam("window must be > 0 seconds".into()));
    }
    let (t0, _) = posts
        .time_range()
        .ok_or_else(|| Error::Empty("no posts to bucket".into()))?;
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in posts.posts().iter().enumerate() {
        buckets.entry(((p.ts - t0) / window) as usize).or_default().push(i);
    }
    Ok((t0, buckets))
}

fn window_matrices<S: Scalar>(
    posts: &PostCollection,
    model: &ClusterModel<S>,
    window: i64,
    global_idf: bool,
) -> Result<Vec<WindowAffiliation>> {
    let (t0, buckets) = bucket(posts, window)?;
    let global = if global_idf {
        let c = count_matrix(posts, model)?;
        Some((c.df, c.users.len() as f64))
    } else {
        None
    };
    buckets
        .into_iter()
        .map(|(index, idx)| {
            let sub = PostCollection::new(idx.iter().map(|&i| posts.posts()[i].clone()).collect())?;
            let counts = count_matrix(&sub, model)?;
            let matrix = match &global {
                Some((df, n)) => weight_with_df(&counts, Scheme::Tfidf, df, *n),
                None => weight_matrix(&counts, Scheme::Tfidf),
            };
            let start = t0 + index as i64 * window;
            Ok(WindowAffiliation {
                index,
                start,
                end: start + window,
                matrix,
            })
        })
        .collect()
}

/// One TF-IDF matrix per nonempty window, windows anchored at the earliest
/// timestamp.
pub fn step_affiliations<S: Scalar>(
    posts: &PostCollection,
    model: &ClusterModel<S>,
    window: i64,
) -> Result<Vec<WindowAffiliation>> {
    window_matrices(posts, model, window, false)
}

/// Pair key in global node indices, `u < v`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub start: i64,
    pub end: i64,
    pub active_users: usize,
    /// Pairs whose similarity was defined in this window.
    pub defined: Vec<(Pair, f64)>,
    /// Edge state after the update and pruning.
    pub state: Vec<(Pair, f64)>,
}

#[derive(Debug, Clone)]
pub struct TemporalGraph {
    pub params: TemporalParams,
    pub nodes: Vec<String>,
    pub steps: Vec<Step>,
    pub final_graph: UserGraph,
}

impl TemporalGraph {
    pub fn step_graph(&self, t: usize) -> Result<UserGraph> {
        let step = self
            .steps
            .get(t)
            .ok_or_else(|| Error::InvalidParam(format!("no step {t}")))?;
        UserGraph::from_edges(
            self.nodes.clone(),
            step.state.iter().map(|&((u, v), w)| (u, v, w)),
            self.final_graph.meta.clone(),
        )
    }
}

/// Applies the update rule to a stream of per-step defined similarities.
pub fn advance(
    prev: &BTreeMap<Pair, f64>,
    defined: &BTreeMap<Pair, f64>,
    alpha: f64,
    beta: f64,
    prune_eps: f64,
) -> BTreeMap<Pair, f64> {
    let mut next = BTreeMap::new();
    for (&pair, &e) in prev {
        let w = edge_update(e, defined.get(&pair).copied(), alpha, beta);
        if w >= prune_eps {
            next.insert(pair, w.clamp(0.0, 1.0));
        }
    }
    for (&pair, &s) in defined {
        if !prev.contains_key(&pair) {
            let w = edge_update(0.0, Some(s), alpha, beta);
            if w >= prune_eps {
                next.insert(pair, w.clamp(0.0, 1.0));
            }
        }
    }
    next
}

pub fn build_temporal<S: Scalar>(
    posts: &PostCollection,
    model: &ClusterModel<S>,
    params: &TemporalParams,
) -> Result<TemporalGraph> {
    params.validate()?;
    let windows = window_matrices(posts, model, params.window, params.global_idf)?;
    let Some(last) = windows.last().map(|w| w.index) else {
        return Err(Error::Empty("no nonempty windows".into()));
    };
    let nodes: Vec<String> = posts.users().map(str::to_string).collect();
    let global = |id: &str| nodes.binary_search_by(|n| n.as_str().cmp(id)).unwrap();
    let t0 = windows[0].start;

    let mut by_index: BTreeMap<usize, &WindowAffiliation> = windows.iter().map(|w| (w.index, w)).collect();
    let mut state: BTreeMap<Pair, f64> = BTreeMap::new();
    let mut steps = Vec::with_capacity(last + 1);
    for t in 0..=last {
        let start = t0 + t as i64 * params.window;
        let mut defined = BTreeMap::new();
        let mut active = 0;
        if let Some(w) = by_index.remove(&t) {
            active = w.matrix.num_users();
            if active >= 2 {
                let k = if params.k == 0 { default_k(active) } else { params.k };
                let g = build_graph(&w.matrix, k, params.min_sim, params.method, &params.ann)?;
                for e in g.edges() {
                    let (a, b) = (global(&g.nodes()[e.u]), global(&g.nodes()[e.v]));
                    defined.insert((a.min(b), a.max(b)), e.w);
                }
            }
        }
        state = advance(&state, &defined, params.alpha, params.beta, params.prune_eps);
        log::debug!("step {t}: {active} active users, {} defined, {} edges", defined.len(), state.len());
        steps.push(Step {
            index: t,
            start,
            end: start + params.window,
            active_users: active,
            defined: defined.into_iter().collect(),
            state: state.iter().map(|(&p, &w)| (p, w)).collect(),
        });
    }
    let meta = GraphMeta {
        k: params.k,
        min_sim: params.min_sim,
        method: params.method,
        ann: (params.method == Method::Hnsw).then_some(params.ann),
    };
    let final_graph = UserGraph::from_edges(nodes.clone(), state.into_iter().map(|((u, v), w)| (u, v, w)), meta)?
        .with_platforms(&posts.user_platforms());
    Ok(TemporalGraph {
        params: params.clone(),
        nodes,
        steps,
        final_graph,
    })
}

#[derive(Serialize)]
struct SnapshotManifest<'a> {
    params: &'a TemporalParams,
    steps: Vec<StepSummary>,
}

#[derive(Serialize)]
struct StepSummary {
    index: usize,
    file: String,
    start: i64,
    end: i64,
    active_users: usize,
    defined_pairs: usize,
    edges: usize,
}

/// Writes `step_<i>.tsv`, `final.tsv` and `manifest.json` into `dir`.
pub fn write_snapshots(tg: &TemporalGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = Vec::new();
    for s in &tg.steps {
        let file = format!("step_{}.tsv", s.index);
        write_edges(&tg.step_graph(s.index)?, dir.join(&file))?;
        summary.push(StepSummary {
            index: s.index,
            file,
            start: s.start,
            end: s.end,
            active_users: s.active_users,
            defined_pairs: s.defined.len(),
            edges: s.state.len(),
        });
    }
    write_edges(&tg.final_graph, dir.join("final.tsv"))?;
    let manifest = SnapshotManifest {
        params: &tg.params,
        steps: summary,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}
