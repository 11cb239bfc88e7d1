use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classify::{evaluate_classification, EvalReport};
use super::node2vec::{embed_graph, Node2VecParams};
use super::rewire::rewire_degree_preserving;
use crate::affiliation::{count_matrix, weight_matrix, Scheme};
use crate::clustering::{dpmeans_fit, ClusterParams};
use crate::corpus::PostCollection;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{build_graph, default_k, AnnParams, Method, UserGraph};
use crate::seed::{derive_seed, derive_seed_str};

/// Everything needed to go from posts to an evaluated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEvalConfig {
    pub cluster: ClusterParams,
    pub scheme: Scheme,
    /// 0 picks the default for the user count.
    pub k: usize,
    pub min_sim: f64,
    pub method: Method,
    pub ann: AnnParams,
    pub node2vec: Node2VecParams,
    pub folds: usize,
    pub seed: u64,
}

impl Default for NetworkEvalConfig {
    fn default() -> Self {
        NetworkEvalConfig {
            cluster: ClusterParams::default(),
            scheme: Scheme::Tfidf,
            k: 0,
            min_sim: 0.0,
            method: Method::Exact,
            ann: AnnParams::default(),
            node2vec: Node2VecParams::default(),
            folds: 5,
            seed: 0,
        }
    }
}

/// Clusters `posts`, builds the similarity graph and returns it.
pub fn build_network(posts: &PostCollection, embeddings: &EmbeddingMatrix<f32>, config: &NetworkEvalConfig) -> Result<UserGraph> {
    let emb = embeddings.restrict(posts)?;
    let model = dpmeans_fit(&emb, config.cluster)?;
    let affil = weight_matrix(&count_matrix(posts, &model)?, config.scheme);
    let k = if config.k == 0 { default_k(affil.num_users()) } else { config.k };
    Ok(build_graph(&affil, k, config.min_sim, config.method, &config.ann)?.with_platforms(&posts.user_platforms()))
}

pub fn evaluate_graph(graph: &UserGraph, labels: &BTreeMap<String, String>, config: &NetworkEvalConfig) -> Result<EvalReport> {
    let emb = embed_graph(graph, &config.node2vec)?;
    evaluate_classification(&emb, labels, config.folds, config.seed)
}

/// Post index sets for `step`, `2·step`, …, 100 percent. Each user's posts
/// are shuffled once with a per-user seed and every level takes a prefix of
/// `ceil(level · n_u / 100)` (at least one), so levels are nested.
pub fn nested_subsets(posts: &PostCollection, step: u32, seed: u64) -> Result<Vec<(u32, Vec<usize>)>> {
    if step == 0 || step > 100 || 100 % step != 0 {
        return Err(Error::InvalidParam(format!("step {step} must divide 100")));
    }
    let orders: Vec<Vec<usize>> = posts
        .user_index()
        .iter()
        .map(|(user, idx)| {
            let mut v = idx.clone();
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_str(seed, user)));
            v
        })
        .collect();
    Ok((1..=100 / step)
        .map(|i| {
            let level = i * step;
            let mut set: Vec<usize> = orders
                .iter()
                .flat_map(|v| {
                    let take = (v.len() as u64 * level as u64).div_ceil(100).max(1) as usize;
                    v[..take].iter().copied()
                })
                .collect();
            set.sort_unstable();
            (level, set)
        })
        .collect())
}

/// Index of the first AUC reaching 95% of the maximum.
pub fn efficiency_point(aucs: &[f64]) -> Option<usize> {
    let max = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    aucs.iter().position(|&a| a >= 0.95 * max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub percent: u32,
    pub posts: usize,
    pub users: usize,
    pub auc: f64,
    pub macro_f1: f64,
    pub control_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub step: u32,
    pub seed: u64,
    pub levels: Vec<SweepLevel>,
    pub efficiency_index: Option<usize>,
    pub efficiency_percent: Option<u32>,
}

/// Reruns the full pipeline on nested post subsets. With `control`, each
/// level also scores a degree-preserving rewired copy of its graph.
pub fn data_efficiency_sweep(
    posts: &PostCollection,
    embeddings: &EmbeddingMatrix<f32>,
    labels: &BTreeMap<String, String>,
    config: &NetworkEvalConfig,
    step: u32,
    control: bool,
) -> Result<SweepReport> {
    let subsets = nested_subsets(posts, step, config.seed)?;
    let mut levels = Vec::with_capacity(subsets.len());
    for (i, (percent, idx)) in subsets.iter().enumerate() {
        let sub = PostCollection::new(idx.iter().map(|&j| posts.posts()[j].clone()).collect())?;
        let graph = build_network(&sub, embeddings, config)?;
        let report = evaluate_graph(&graph, labels, config)?;
        let control_auc = if control {
            let rewired = rewire_degree_preserving(&graph, derive_seed(config.seed, i as u64))?;
            Some(evaluate_graph(&rewired, labels, config)?.auc)
        } else {
            None
        };
        log::info!("sweep level {percent}%: auc {:.4}", report.auc);
        levels.push(SweepLevel {
            percent: *percent,
            posts: sub.len(),
            users: sub.num_users(),
            auc: report.auc,
            macro_f1: report.macro_f1,
            control_auc,
        });
    }
    let aucs: Vec<f64> = levels.iter().map(|l| l.auc).collect();
    let efficiency_index = efficiency_point(&aucs);
    Ok(SweepReport {
        step,
        seed: config.seed,
        efficiency_percent: efficiency_index.map(|i| levels[i].percent),
        efficiency_index,
        levels,
    })
}
