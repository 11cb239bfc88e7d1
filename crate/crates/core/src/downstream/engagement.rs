use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::corpus::PostCollection;
use crate::error::{Error, Result};
use crate::graph::{write_edges, UserGraph};
use crate::scalar::Scalar;
use crate::temporal::DAY;

/// Binary user × narrative matrices split at a cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementBenchmark {
    pub users: Vec<String>,
    pub num_narratives: usize,
    pub cutoff: i64,
    pub horizon_days: u32,
    /// Engagement at or before the cutoff.
    pub features: Vec<Vec<u8>>,
    /// Engagement in `(cutoff, cutoff + horizon]`.
    pub labels: Vec<Vec<u8>>,
}

pub fn engagement_matrices<S: Scalar>(
    graph: &UserGraph,
    model: &ClusterModel<S>,
    posts: &PostCollection,
    cutoff: i64,
    horizon_days: u32,
) -> Result<EngagementBenchmark> {
    let (lo, hi) = posts.time_range().ok_or_else(|| Error::Empty("no posts".into()))?;
    if cutoff < lo || cutoff > hi {
        return Err(Error::InvalidParam(format!(
            "cutoff {cutoff} outside the corpus time range [{lo}, {hi}]"
        )));
    }
    let k = model.num_clusters();
    let n = graph.num_nodes();
    if n == 0 || k == 0 {
        return Err(Error::Empty("empty feature matrix (no users or no narratives)".into()));
    }
    let end = cutoff.saturating_add(horizon_days as i64 * DAY);
    let mut features = vec![vec![0u8; k]; n];
    let mut labels = vec![vec![0u8; k]; n];
    for p in posts.posts() {
        let (Some(u), Some(c)) = (graph.index_of(&p.user_id), model.cluster_of(&p.post_id)) else {
            continue;
        };
        if p.ts <= cutoff {
            features[u][c] = 1;
        } else if p.ts <= end {
            labels[u][c] = 1;
        }
    }
    if features.iter().all(|r| r.iter().all(|&x| x == 0)) {
        return Err(Error::Empty("empty feature matrix: no engagement before the cutoff".into()));
    }
    Ok(EngagementBenchmark {
        users: graph.nodes().to_vec(),
        num_narratives: k,
        cutoff,
        horizon_days,
        features,
        labels,
    })
}

fn write_matrix(path: &Path, users: &[String], k: usize, rows: &[Vec<u8>]) -> Result<()> {
    let mut out = String::from("user_id");
    for c in 0..k {
        out.push('\t');
        out.push_str(&c.to_string());
    }
    out.push('\n');
    for (u, r) in users.iter().zip(rows) {
        out.push_str(u);
        for x in r {
            out.push('\t');
            out.push(if *x == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `features.tsv`, `labels.tsv` and the graph's `edges.tsv` into `dir`.
pub fn export_engagement_benchmark<S: Scalar>(
    graph: &UserGraph,
    model: &ClusterModel<S>,
    posts: &PostCollection,
    cutoff: i64,
    horizon_days: u32,
    dir: impl AsRef<Path>,
) -> Result<EngagementBenchmark> {
    let dir = dir.as_ref();
    let bench = engagement_matrices(graph, model, posts, cutoff, horizon_days)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&dir.join("features.tsv"), &bench.users, bench.num_narratives, &bench.features)?;
    write_matrix(&dir.join("labels.tsv"), &bench.users, bench.num_narratives, &bench.labels)?;
    write_edges(graph, dir.join("edges.tsv"))?;
    Ok(bench)
}
