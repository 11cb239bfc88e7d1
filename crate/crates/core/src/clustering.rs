//! DP-Means clustering of unit-norm post embeddings under cosine distance.
//!
//! The fit alternates an assignment pass (nearest centroid, or a new
//! centroid at the point when every existing one is farther than λ) with a
//! recenter pass (normalized member mean). Points are visited in ascending
//! post-id order, which makes the result independent of thread count.
//!
//! The recorded objective `Σ_i min(min_k d(x_i, μ_k), λ)` depends only on
//! the centroid set. Assignment can only add centroids (or drop ones nobody
//! uses), so it never raises the objective; a recenter step that would
//! raise it is rolled back, which also ends the fit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{read_raw, write_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::{dot, normalize_in_place, Scalar};

pub const DEFAULT_LAMBDA: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Cosine-distance threshold for spawning a cluster, in (0, 2].
    pub lambda: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            lambda: DEFAULT_LAMBDA,
            max_iters: 100,
            seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!("lambda {} must be > 0", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParam("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `1 − a·b` for unit vectors, clamped to [0, 2].
pub fn cosine_distance<S: Scalar>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(distance(a, b))
}

#[inline]
fn distance<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<S> {
    dim: usize,
    centroids: Vec<Vec<S>>,
    post_ids: Vec<String>,
    assignments: Vec<usize>,
    index: HashMap<String, usize>,
    objective: f64,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    params: ClusterParams,
}

impl<S: Scalar> ClusterModel<S> {
    /// Reassembles a model from stored parts (centroids and per-post labels).
    pub fn from_parts(
        dim: usize,
        centroids: Vec<Vec<S>>,
        assignments: Vec<(String, usize)>,
        params: ClusterParams,
        objective: f64,
    ) -> Result<Self> {
        if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: c.len(),
            });
        }
        let mut assignments = assignments;
        assignments.sort();
        if let Some((_, k)) = assignments.iter().find(|(_, k)| *k >= centroids.len()) {
            return Err(Error::InvalidParam(format!("cluster id {k} out of range")));
        }
        let post_ids: Vec<String> = assignments.iter().map(|(p, _)| p.clone()).collect();
        let index = post_ids.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Ok(ClusterModel {
            dim,
            centroids,
            assignments: assignments.into_iter().map(|(_, k)| k).collect(),
            post_ids,
            index,
            objective,
            objective_trace: vec![objective],
            iterations: 0,
            converged: true,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Vec<S>] {
        &self.centroids
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    /// Final objective value.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Objective after each fit iteration.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Post ids in ascending order, aligned with [`Self::labels`].
    pub fn post_ids(&self) -> &[String] {
        &self.post_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.assignments
    }

    pub fn cluster_of(&self, post_id: &str) -> Option<usize> {
        self.index.get(post_id).map(|&i| self.assignments[i])
    }

    /// Member post ids for each cluster.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (p, &k) in self.post_ids.iter().zip(&self.assignments) {
            out[k].push(p.as_str());
        }
        out
    }

    /// Nearest centroid as `(index, distance)`; ties go to the lower index.
    pub fn nearest(&self, v: &[S]) -> Result<(usize, f64)> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        nearest(&self.centroids, v).ok_or_else(|| Error::Empty("model has no centroids".into()))
    }

    /// Streaming assignment. With `allow_new`, a vector farther than λ from
    /// every centroid becomes a new centroid; otherwise the nearest index is
    /// returned regardless of distance.
    pub fn assign(&mut self, v: &[S], allow_new: bool) -> Result<usize> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        match nearest(&self.centroids, v) {
            Some((k, d)) if d <= self.params.lambda || !allow_new => Ok(k),
            None if !allow_new => Err(Error::Empty("model has no centroids".into())),
            _ => {
                let mut c = v.to_vec();
                normalize_in_place(&mut c);
                self.centroids.push(c);
                Ok(self.centroids.len() - 1)
            }
        }
    }
}

fn nearest<S: Scalar>(centroids: &[Vec<S>], v: &[S]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in centroids.iter().enumerate() {
        let d = distance(v, c);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best
}

/// `Σ_i min(min_k d(x_i, μ_k), λ)` over the rows of `embeddings`.
pub fn objective<S: Scalar>(model: &ClusterModel<S>, embeddings: &EmbeddingMatrix<S>) -> Result<f64> {
    if embeddings.dim() != model.dim {
        return Err(Error::DimMismatch {
            expected: model.dim,
            got: embeddings.dim(),
        });
    }
    Ok(capped_objective(&model.centroids, embeddings, model.params.lambda))
}

fn capped_objective<S: Scalar>(centroids: &[Vec<S>], x: &EmbeddingMatrix<S>, lambda: f64) -> f64 {
    let terms: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            nearest(centroids, x.row(i))
                .map(|(_, d)| d.min(lambda))
                .unwrap_or(lambda)
        })
        .collect();
    terms.iter().sum()
}

/// One assignment pass. Returns whether any label changed.
fn assign_pass<S: Scalar>(
    x: &EmbeddingMatrix<S>,
    centroids: &mut Vec<Vec<S>>,
    labels: &mut [usize],
    lambda: f64,
) -> bool {
    let frozen = centroids.len();
    let snapshot: Vec<Option<(usize, f64)>> = (0..x.len())
        .into_par_iter()
        .map(|i| nearest(&centroids[..frozen], x.row(i)))
        .collect();
    let mut changed = false;
    for (i, best) in snapshot.into_iter().enumerate() {
        let row = x.row(i);
        let mut best = best;
        // centroids spawned earlier in this pass, in point order
        for (off, c) in centroids[frozen..].iter().enumerate() {
            let d = distance(row, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((frozen + off, d));
            }
        }
        let k = match best {
            Some((k, d)) if d <= lambda => k,
            _ => {
                centroids.push(row.to_vec());
                centroids.len() - 1
            }
        };
        if labels[i] != k {
            labels[i] = k;
            changed = true;
        }
    }
    changed
}

/// Drops clusters with no members and relabels densely, keeping order.
fn compact<S: Scalar>(centroids: &mut Vec<Vec<S>>, labels: &mut [usize]) {
    let mut used = vec![false; centroids.len()];
    for &k in labels.iter() {
        used[k] = true;
    }
    if used.iter().all(|&u| u) {
        return;
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut next = 0;
    for (k, &u) in used.iter().enumerate() {
        if u {
            remap[k] = next;
            next += 1;
        }
    }
    let mut k = 0;
    centroids.retain(|_| {
        let keep = used[k];
        k += 1;
        keep
    });
    for l in labels.iter_mut() {
        *l = remap[*l];
    }
}

fn recenter<S: Scalar>(x: &EmbeddingMatrix<S>, centroids: &mut [Vec<S>], labels: &[usize]) {
    let dim = x.dim();
    let mut sums = vec![vec![0.0f64; dim]; centroids.len()];
    for (i, &k) in labels.iter().enumerate() {
        for (s, v) in sums[k].iter_mut().zip(x.row(i)) {
            *s += v.as_f64();
        }
    }
    for (c, mut s) in centroids.iter_mut().zip(sums) {
        // antipodal members can cancel; keep the old centroid then
        if normalize_in_place(&mut s) > 1e-12 {
            *c = s.into_iter().map(S::of_f64).collect();
        }
    }
}

/// Fits DP-Means on the (unit-norm) rows of `embeddings`.
pub fn dpmeans_fit<S: Scalar>(embeddings: &EmbeddingMatrix<S>, params: ClusterParams) -> Result<ClusterModel<S>> {
    params.validate()?;
    if embeddings.is_empty() {
        return Err(Error::Empty("no embeddings to cluster".into()));
    }
    let lambda = params.lambda;
    let mut centroids: Vec<Vec<S>> = Vec::new();
    let mut labels = vec![usize::MAX; embeddings.len()];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters {
        let changed = assign_pass(embeddings, &mut centroids, &mut labels, lambda);
        compact(&mut centroids, &mut labels);
        if !changed {
            converged = true;
            break;
        }
        iterations += 1;
        let before = capped_objective(&centroids, embeddings, lambda);
        let saved = centroids.clone();
        recenter(embeddings, &mut centroids, &labels);
        let after = capped_objective(&centroids, embeddings, lambda);
        if after > before {
            centroids = saved;
            trace.push(before);
        } else {
            trace.push(after);
        }
        log::debug!("dp-means iter {iterations}: K={} objective={}", centroids.len(), trace.last().unwrap());
    }
    if !converged {
        // leave the model in an assigned state so every point is within λ
        assign_pass(embeddings, &mut centroids, &mut labels, lambda);
        compact(&mut centroids, &mut labels);
    }
    let objective = capped_objective(&centroids, embeddings, lambda);
    if trace.is_empty() {
        trace.push(objective);
    }
    let post_ids = embeddings.ids().to_vec();
    let index = post_ids.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    Ok(ClusterModel {
        dim: embeddings.dim(),
        centroids,
        post_ids,
        assignments: labels,
        index,
        objective,
        objective_trace: trace,
        iterations,
        converged,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub lambda: f64,
    pub iters: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub objective: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub converged: bool,
}

/// Writes `post_id<TAB>cluster_id` lines, the centroids as `CANEEMB1`
/// (ids `c000000`, ...) and the JSON header.
pub fn write_model<S: Scalar>(
    model: &ClusterModel<S>,
    clusters: impl AsRef<Path>,
    centroids: impl AsRef<Path>,
    header: impl AsRef<Path>,
) -> Result<()> {
    let clusters = clusters.as_ref();
    let mut out = String::new();
    for (p, k) in model.post_ids.iter().zip(&model.assignments) {
        out.push_str(&format!("{p}\t{k}\n"));
    }
    fs::write(clusters, out).map_err(|e| Error::io(clusters, e))?;
    let rows = model
        .centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("c{i:06}"), c.clone()));
    write_embeddings(&EmbeddingMatrix::from_rows(model.dim, rows)?, centroids)?;
    let h = ModelHeader {
        lambda: model.params.lambda,
        iters: model.iterations,
        k: model.num_clusters(),
        objective: model.objective,
        max_iters: model.params.max_iters,
        seed: model.params.seed,
        converged: model.converged,
    };
    let header = header.as_ref();
    fs::write(header, serde_json::to_string_pretty(&h)? + "\n").map_err(|e| Error::io(header, e))
}

pub fn read_model(clusters: impl AsRef<Path>, centroids: impl AsRef<Path>, header: impl AsRef<Path>) -> Result<ClusterModel<f32>> {
    let header = header.as_ref();
    let h: ModelHeader = serde_json::from_str(&fs::read_to_string(header).map_err(|e| Error::io(header, e))?)?;
    let cents = read_raw(centroids)?;
    if cents.len() != h.k {
        return Err(Error::Format(format!("header says K={} but {} centroids found", h.k, cents.len())));
    }
    let clusters = clusters.as_ref();
    let text = fs::read_to_string(clusters).map_err(|e| Error::io(clusters, e))?;
    let mut assignments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let (p, k) = line.split_once('\t').ok_or_else(|| parse("expected post_id<TAB>cluster_id"))?;
        assignments.push((p.to_string(), k.parse().map_err(|_| parse("bad cluster id"))?));
    }
    let params = ClusterParams {
        lambda: h.lambda,
        max_iters: h.max_iters,
        seed: h.seed,
    };
    let mut m = ClusterModel::from_parts(cents.dim(), cents.rows().map(<[f32]>::to_vec).collect(), assignments, params, h.objective)?;
    m.iterations = h.iters;
    m.converged = h.converged;
    Ok(m)
}
