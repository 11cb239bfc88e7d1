//! Stage orchestration with content-hash caching.
//!
//! Every stage reads its inputs from the output directory (or, for
//! `ingest` and `evaluate`, from configured paths), writes its artifacts
//! there and records a cache key in `manifest.json`. A stage is skipped when
//! its key — the hash of its config subset and input files — is unchanged
//! and its recorded outputs are intact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affiliation::{count_matrix, read_affiliation, weight_matrix, write_affiliation, Scheme};
use crate::clustering::{dpmeans_fit, read_model, write_model, ClusterParams, ModelHeader};
use crate::community::{louvain_partition, read_communities, select_bridge_users, write_communities};
use crate::corpus::{filter_min_activity, load_posts, write_posts, PostCollection};
use crate::downstream::{embed_graph, evaluate_classification, write_node_embeddings, NetworkEvalConfig, Node2VecParams};
use crate::embedding::{read_embeddings, toy_embed_corpus, write_embeddings};
use crate::error::{Error, Result};
use crate::graph::{build_graph, default_k, read_edges, write_edges, AnnParams, Method, UserGraph};
use crate::hnsw::HnswParams;
use crate::migration::{analyze_migrations, build_timelines, write_migrations, MigrationParams};
use crate::stats::{compare_matched, match_nearest, write_matched_report, FeatureRow};
use crate::temporal::{build_temporal, write_snapshots, TemporalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Cluster,
    Affiliate,
    Graph,
    Tgraph,
    Communities,
    Migrate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Cluster,
        Stage::Affiliate,
        Stage::Graph,
        Stage::Tgraph,
        Stage::Communities,
        Stage::Migrate,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Affiliate => "affiliate",
            Stage::Graph => "graph",
            Stage::Tgraph => "tgraph",
            Stage::Communities => "communities",
            Stage::Migrate => "migrate",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Cluster => &[Stage::Ingest],
            Stage::Affiliate => &[Stage::Ingest, Stage::Cluster],
            Stage::Graph => &[Stage::Ingest, Stage::Affiliate],
            Stage::Tgraph => &[Stage::Ingest, Stage::Cluster],
            Stage::Communities => &[Stage::Ingest, Stage::Graph],
            Stage::Migrate => &[Stage::Ingest, Stage::Cluster, Stage::Communities],
            Stage::Evaluate => &[Stage::Ingest, Stage::Graph],
        }
    }

    /// Files the stage writes, relative to the output directory. `tgraph`
    /// additionally writes per-step files listed in its own manifest.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["posts.jsonl", "embeddings.bin"],
            Stage::Cluster => &["clusters.tsv", "centroids.bin", "model.json"],
            Stage::Affiliate => &["affiliation.tsv"],
            Stage::Graph => &["edges.tsv", "graph.json"],
            Stage::Tgraph => &["tgraph/manifest.json"],
            Stage::Communities => &["communities.json", "matched_report.json"],
            Stage::Migrate => &["migrations.json"],
            Stage::Evaluate => &["eval.json", "node_embeddings.tsv"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s || (s == "eval" && *st == Stage::Evaluate))
            .ok_or_else(|| Error::Unknown {
                kind: "stage",
                name: s.into(),
            })
    }
}

/// Every tunable of a run. Parsed from flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub posts: Option<PathBuf>,
    /// `CANEEMB1` file; when absent, deterministic toy embeddings are used.
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub deterministic: bool,
    pub min_activity: usize,
    pub toy_dim: usize,
    pub cluster: ClusterParams,
    pub scheme: Scheme,
    pub k: usize,
    pub min_sim: f64,
    pub method: Method,
    pub ann: AnnParams,
    pub temporal: TemporalParams,
    pub resolution: f64,
    pub entropy_min: f64,
    pub min_size: usize,
    pub match_k: usize,
    pub migration: MigrationParams,
    pub node2vec: Node2VecParams,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            posts: None,
            embeddings: None,
            labels: None,
            out: PathBuf::from("out"),
            seed: 0,
            deterministic: true,
            min_activity: 1,
            toy_dim: 64,
            cluster: ClusterParams::default(),
            scheme: Scheme::Tfidf,
            k: 0,
            min_sim: 0.0,
            method: Method::Exact,
            ann: AnnParams::default(),
            temporal: TemporalParams::default(),
            resolution: 1.0,
            entropy_min: crate::community::DEFAULT_ENTROPY_MIN,
            min_size: crate::community::DEFAULT_MIN_SIZE,
            match_k: 1,
            migration: MigrationParams::default(),
            node2vec: Node2VecParams::default(),
            folds: 5,
        }
    }
}

/// Keys accepted in config files, in the order they are written back.
pub const CONFIG_KEYS: &[&str] = &[
    "posts",
    "embeddings",
    "labels",
    "out",
    "seed",
    "deterministic",
    "min_activity",
    "toy_dim",
    "lambda",
    "max_iters",
    "scheme",
    "k",
    "min_sim",
    "method",
    "hnsw_m",
    "hnsw_ef_construction",
    "hnsw_ef_search",
    "projection_dim",
    "alpha",
    "beta",
    "window",
    "tgraph_k",
    "tgraph_min_sim",
    "prune_eps",
    "global_idf",
    "resolution",
    "entropy_min",
    "min_size",
    "match_k",
    "origin_gap",
    "min_posts",
    "auto_min_posts",
    "bin",
    "te_history",
    "n_perm",
    "significance",
    "early_fraction",
    "max_n",
    "n2v_p",
    "n2v_q",
    "walk_length",
    "walks_per_node",
    "n2v_dim",
    "n2v_window",
    "negatives",
    "epochs",
    "lr",
    "folds",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn path_or_none(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "posts" => self.posts = path_or_none(v),
            "embeddings" => self.embeddings = path_or_none(v),
            "labels" => self.labels = path_or_none(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "deterministic" => self.deterministic = parse(key, v)?,
            "min_activity" => self.min_activity = parse(key, v)?,
            "toy_dim" => self.toy_dim = parse(key, v)?,
            "lambda" => self.cluster.lambda = parse(key, v)?,
            "max_iters" => self.cluster.max_iters = parse(key, v)?,
            "scheme" => self.scheme = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "min_sim" => self.min_sim = parse(key, v)?,
            "method" => {
                self.method = parse(key, v)?;
                self.temporal.method = self.method;
            }
            "hnsw_m" => self.ann.hnsw.m = parse(key, v)?,
            "hnsw_ef_construction" => self.ann.hnsw.ef_construction = parse(key, v)?,
            "hnsw_ef_search" => self.ann.hnsw.ef_search = parse(key, v)?,
            "projection_dim" => self.ann.projection_dim = parse(key, v)?,
            "alpha" => self.temporal.alpha = parse(key, v)?,
            "beta" => self.temporal.beta = parse(key, v)?,
            "window" => self.temporal.window = parse(key, v)?,
            "tgraph_k" => self.temporal.k = parse(key, v)?,
            "tgraph_min_sim" => self.temporal.min_sim = parse(key, v)?,
            "prune_eps" => self.temporal.prune_eps = parse(key, v)?,
            "global_idf" => self.temporal.global_idf = parse(key, v)?,
            "resolution" => self.resolution = parse(key, v)?,
            "entropy_min" => self.entropy_min = parse(key, v)?,
            "min_size" => self.min_size = parse(key, v)?,
            "match_k" => self.match_k = parse(key, v)?,
            "origin_gap" => self.migration.origin_gap = parse(key, v)?,
            "min_posts" => self.migration.min_posts = parse(key, v)?,
            "auto_min_posts" => self.migration.auto_min_posts = parse(key, v)?,
            "bin" => self.migration.bin = parse(key, v)?,
            "te_history" => self.migration.history = parse(key, v)?,
            "n_perm" => self.migration.n_perm = parse(key, v)?,
            "significance" => self.migration.significance = parse(key, v)?,
            "early_fraction" => self.migration.early_fraction = parse(key, v)?,
            "max_n" => self.migration.max_n = parse(key, v)?,
            "n2v_p" => self.node2vec.p = parse(key, v)?,
            "n2v_q" => self.node2vec.q = parse(key, v)?,
            "walk_length" => self.node2vec.walk_length = parse(key, v)?,
            "walks_per_node" => self.node2vec.walks_per_node = parse(key, v)?,
            "n2v_dim" => self.node2vec.dim = parse(key, v)?,
            "n2v_window" => self.node2vec.window = parse(key, v)?,
            "negatives" => self.node2vec.negatives = parse(key, v)?,
            "epochs" => self.node2vec.epochs = parse(key, v)?,
            "lr" => self.node2vec.lr = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = |x: &dyn fmt::Display| x.to_string();
        Some(match key {
            "posts" => show_path(&self.posts),
            "embeddings" => show_path(&self.embeddings),
            "labels" => show_path(&self.labels),
            "out" => self.out.display().to_string(),
            "seed" => s(&self.seed),
            "deterministic" => s(&self.deterministic),
            "min_activity" => s(&self.min_activity),
            "toy_dim" => s(&self.toy_dim),
            "lambda" => s(&self.cluster.lambda),
            "max_iters" => s(&self.cluster.max_iters),
            "scheme" => s(&self.scheme),
            "k" => s(&self.k),
            "min_sim" => s(&self.min_sim),
            "method" => s(&self.method),
            "hnsw_m" => s(&self.ann.hnsw.m),
            "hnsw_ef_construction" => s(&self.ann.hnsw.ef_construction),
            "hnsw_ef_search" => s(&self.ann.hnsw.ef_search),
            "projection_dim" => s(&self.ann.projection_dim),
            "alpha" => s(&self.temporal.alpha),
            "beta" => s(&self.temporal.beta),
            "window" => s(&self.temporal.window),
            "tgraph_k" => s(&self.temporal.k),
            "tgraph_min_sim" => s(&self.temporal.min_sim),
            "prune_eps" => s(&self.temporal.prune_eps),
            "global_idf" => s(&self.temporal.global_idf),
            "resolution" => s(&self.resolution),
            "entropy_min" => s(&self.entropy_min),
            "min_size" => s(&self.min_size),
            "match_k" => s(&self.match_k),
            "origin_gap" => s(&self.migration.origin_gap),
            "min_posts" => s(&self.migration.min_posts),
            "auto_min_posts" => s(&self.migration.auto_min_posts),
            "bin" => s(&self.migration.bin),
            "te_history" => s(&self.migration.history),
            "n_perm" => s(&self.migration.n_perm),
            "significance" => s(&self.migration.significance),
            "early_fraction" => s(&self.migration.early_fraction),
            "max_n" => s(&self.migration.max_n),
            "n2v_p" => s(&self.node2vec.p),
            "n2v_q" => s(&self.node2vec.q),
            "walk_length" => s(&self.node2vec.walk_length),
            "walks_per_node" => s(&self.node2vec.walks_per_node),
            "n2v_dim" => s(&self.node2vec.dim),
            "n2v_window" => s(&self.node2vec.window),
            "negatives" => s(&self.node2vec.negatives),
            "epochs" => s(&self.node2vec.epochs),
            "lr" => s(&self.node2vec.lr),
            "folds" => s(&self.folds),
            _ => return None,
        })
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            c.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.cluster.validate()?;
        self.ann.hnsw.validate()?;
        self.temporal.validate()?;
        self.node2vec.validate()?;
        if self.toy_dim == 0 || self.ann.projection_dim == 0 {
            return bad("toy_dim and projection_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.min_sim) {
            return bad("min_sim must lie in [0, 1)".into());
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.entropy_min) {
            return bad("entropy_min must lie in [0, 1]".into());
        }
        if self.match_k == 0 || self.folds < 2 {
            return bad("match_k must be >= 1 and folds >= 2".into());
        }
        let m = &self.migration;
        if m.origin_gap < 0 || m.bin <= 0 || m.history == 0 || m.n_perm == 0 {
            return bad("origin_gap >= 0, bin > 0, te_history >= 1 and n_perm >= 1 are required".into());
        }
        if !(0.0..=1.0).contains(&m.significance) || !(m.early_fraction > 0.0 && m.early_fraction <= 1.0) {
            return bad("significance must lie in [0, 1] and early_fraction in (0, 1]".into());
        }
        Ok(())
    }

    /// Config values that can change the stage's output.
    fn stage_keys(stage: Stage) -> &'static [&'static str] {
        match stage {
            Stage::Ingest => &["posts", "embeddings", "min_activity", "toy_dim", "seed"],
            Stage::Cluster => &["lambda", "max_iters", "seed"],
            Stage::Affiliate => &["scheme"],
            Stage::Graph => &[
                "k",
                "min_sim",
                "method",
                "hnsw_m",
                "hnsw_ef_construction",
                "hnsw_ef_search",
                "projection_dim",
                "seed",
            ],
            Stage::Tgraph => &[
                "alpha",
                "beta",
                "window",
                "tgraph_k",
                "tgraph_min_sim",
                "prune_eps",
                "global_idf",
                "method",
                "hnsw_m",
                "hnsw_ef_construction",
                "hnsw_ef_search",
                "projection_dim",
                "seed",
            ],
            Stage::Communities => &["resolution", "entropy_min", "min_size", "match_k", "seed"],
            Stage::Migrate => &[
                "origin_gap",
                "min_posts",
                "auto_min_posts",
                "bin",
                "te_history",
                "n_perm",
                "significance",
                "early_fraction",
                "max_n",
                "seed",
            ],
            Stage::Evaluate => &[
                "labels",
                "n2v_p",
                "n2v_q",
                "walk_length",
                "walks_per_node",
                "n2v_dim",
                "n2v_window",
                "negatives",
                "epochs",
                "lr",
                "folds",
                "seed",
                "deterministic",
            ],
        }
    }

    /// Copies the global seed and determinism flag into every stage's params.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.cluster.seed = self.seed;
        c.ann.hnsw.seed = self.seed;
        c.temporal.ann.hnsw.seed = self.seed;
        c.temporal.ann.projection_dim = self.ann.projection_dim;
        c.temporal.ann.hnsw = HnswParams {
            seed: self.seed,
            ..self.ann.hnsw
        };
        c.migration.seed = self.seed;
        c.node2vec.seed = self.seed;
        c.node2vec.deterministic = self.deterministic;
        c
    }
}

impl RunConfig {
    pub fn network_config(&self) -> NetworkEvalConfig {
        let c = self.seeded();
        NetworkEvalConfig {
            cluster: c.cluster,
            scheme: c.scheme,
            k: c.k,
            min_sim: c.min_sim,
            method: c.method,
            ann: c.ann,
            node2vec: c.node2vec,
            folds: c.folds,
            seed: c.seed,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub deps: Vec<Stage>,
    pub key: String,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        if !p.exists() {
            return Ok(RunManifest::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&p, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub executed: Vec<Stage>,
    pub cached: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub manifest: RunManifest,
}

fn stage_outputs(stage: Stage, out: &Path) -> Result<Vec<String>> {
    let mut files: Vec<String> = stage.outputs().iter().map(|s| s.to_string()).collect();
    if stage == Stage::Tgraph {
        let dir = out.join("tgraph");
        if dir.is_dir() {
            let mut extra: Vec<String> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok())
                .map(|e| format!("tgraph/{}", e.file_name().to_string_lossy()))
                .filter(|f| f != "tgraph/manifest.json")
                .collect();
            extra.sort();
            files.extend(extra);
        }
    }
    Ok(files)
}

fn external_inputs(stage: Stage, c: &RunConfig) -> Vec<PathBuf> {
    match stage {
        Stage::Ingest => c.posts.iter().chain(c.embeddings.iter()).cloned().collect(),
        Stage::Evaluate => c.labels.iter().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Reads `user_id<TAB>label` lines; a first line of `user_id<TAB>label` is
/// treated as a header.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("user_id\t")) {
            continue;
        }
        let (u, l) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected user_id<TAB>label".into(),
        })?;
        out.insert(u.to_string(), l.trim().to_string());
    }
    Ok(out)
}

/// Loaded upstream artifacts, read lazily from the output directory.
pub struct Artifacts<'a> {
    out: &'a Path,
}

impl<'a> Artifacts<'a> {
    pub fn new(out: &'a Path) -> Self {
        Artifacts { out }
    }

    fn need(&self, file: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.out.join(file);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingStage {
                stage: stage.name().into(),
                artifact: p.display().to_string(),
            })
        }
    }

    pub fn posts(&self) -> Result<PostCollection> {
        load_posts(self.need("posts.jsonl", Stage::Ingest)?)
    }

    pub fn embeddings(&self, posts: &PostCollection) -> Result<crate::embedding::EmbeddingMatrix<f32>> {
        read_embeddings(self.need("embeddings.bin", Stage::Ingest)?, posts)
    }

    pub fn bridges(&self) -> Result<(crate::community::CommunityPartition, crate::community::BridgeReport)> {
        read_communities(self.need("communities.json", Stage::Communities)?)
    }

    pub fn model(&self) -> Result<crate::clustering::ClusterModel<f32>> {
        read_model(
            self.need("clusters.tsv", Stage::Cluster)?,
            self.need("centroids.bin", Stage::Cluster)?,
            self.need("model.json", Stage::Cluster)?,
        )
    }

    pub fn graph(&self, posts: &PostCollection) -> Result<UserGraph> {
        let users: Vec<String> = posts.users().map(String::from).collect();
        let mut g = read_edges(self.need("edges.tsv", Stage::Graph)?, &users)?;
        let meta = self.need("graph.json", Stage::Graph)?;
        g.meta = serde_json::from_str(&fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?)?;
        Ok(g.with_platforms(&posts.user_platforms()))
    }
}

fn user_features(posts: &PostCollection) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in posts.posts() {
        let row = out.entry(p.user_id.clone()).or_insert_with(|| vec![0.0; 4]);
        row[0] += 1.0;
        row[1] += p.likes.unwrap_or(0) as f64;
        row[2] += p.replies.unwrap_or(0) as f64;
        row[3] += p.reposts.unwrap_or(0) as f64;
    }
    out
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn execute(stage: Stage, c: &RunConfig, out: &Path) -> Result<()> {
    let art = Artifacts::new(out);
    match stage {
        Stage::Ingest => {
            let path = c.posts.as_ref().ok_or_else(|| Error::Config("`posts` is not set".into()))?;
            let all = load_posts(path)?;
            let posts = filter_min_activity(&all, c.min_activity)?;
            let emb = match &c.embeddings {
                Some(e) => read_embeddings(e, &all)?.restrict(&posts)?,
                None => toy_embed_corpus(&posts, c.toy_dim, c.seed)?,
            };
            write_posts(&posts, out.join("posts.jsonl"))?;
            write_embeddings(&emb, out.join("embeddings.bin"))
        }
        Stage::Cluster => {
            let posts = art.posts()?;
            let emb = art.embeddings(&posts)?;
            let model = dpmeans_fit(&emb, c.cluster)?;
            write_model(&model, out.join("clusters.tsv"), out.join("centroids.bin"), out.join("model.json"))
        }
        Stage::Affiliate => {
            let posts = art.posts()?;
            let model = art.model()?;
            write_affiliation(&weight_matrix(&count_matrix(&posts, &model)?, c.scheme), out.join("affiliation.tsv"))
        }
        Stage::Graph => {
            let posts = art.posts()?;
            let header = art.need("model.json", Stage::Cluster)?;
            let h: ModelHeader = serde_json::from_str(&fs::read_to_string(&header).map_err(|e| Error::io(&header, e))?)?;
            let users: Vec<String> = posts.users().map(String::from).collect();
            let affil = read_affiliation(art.need("affiliation.tsv", Stage::Affiliate)?, &users, h.k, c.scheme)?;
            let k = if c.k == 0 { default_k(affil.num_users()) } else { c.k };
            let g = build_graph(&affil, k, c.min_sim, c.method, &c.ann)?;
            write_edges(&g, out.join("edges.tsv"))?;
            write_json(&g.meta, &out.join("graph.json"))
        }
        Stage::Tgraph => {
            let posts = art.posts()?;
            let model = art.model()?;
            let tg = build_temporal(&posts, &model, &c.temporal)?;
            let dir = out.join("tgraph");
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            write_snapshots(&tg, dir)
        }
        Stage::Communities => {
            let posts = art.posts()?;
            let graph = art.graph(&posts)?;
            let platforms = posts.user_platforms();
            let part = louvain_partition(&graph, c.resolution, c.seed)?;
            let report = select_bridge_users(&part, &platforms, c.entropy_min, c.min_size)?.with_post_share(&posts);
            write_communities(&part, &report, out.join("communities.json"))?;
            let feats = user_features(&posts);
            let names: Vec<String> = ["posts", "likes", "replies", "reposts"].map(String::from).to_vec();
            let (treated, pool): (Vec<FeatureRow>, Vec<FeatureRow>) = feats
                .into_iter()
                .map(|(id, values)| FeatureRow { id, values })
                .partition(|r| report.bridge_users.contains(&r.id));
            let cmp = if treated.is_empty() || pool.len() < treated.len() * c.match_k {
                log::warn!(
                    "skipping matched comparison: {} bridge users, {} candidates",
                    treated.len(),
                    pool.len()
                );
                BTreeMap::new()
            } else {
                compare_matched(&match_nearest(&treated, &pool, &names, c.match_k)?, &treated, &pool)?
            };
            write_matched_report(&cmp, out.join("matched_report.json"))
        }
        Stage::Migrate => {
            let posts = art.posts()?;
            let model = art.model()?;
            let (_, bridges) = art.bridges()?;
            let timelines = build_timelines(&posts, &model, c.migration.bin)?;
            let report = analyze_migrations(&timelines, &c.migration, &bridges.bridge_users)?;
            write_migrations(&report, out.join("migrations.json"))
        }
        Stage::Evaluate => {
            let labels_path = c
                .labels
                .as_ref()
                .ok_or_else(|| Error::Config("`labels` is not set; the evaluate stage needs a label file".into()))?;
            let labels = read_labels(labels_path)?;
            let posts = art.posts()?;
            let graph = art.graph(&posts)?;
            let emb = embed_graph(&graph, &c.node2vec)?;
            write_node_embeddings(&emb, out.join("node_embeddings.tsv"))?;
            let report = evaluate_classification(&emb, &labels, c.folds, c.seed)?;
            write_json(&report, &out.join("eval.json"))
        }
    }
}

/// Runs `stages` (plus nothing else) in dependency order. Upstream
/// artifacts must already exist for stages whose dependencies are not
/// requested.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage]) -> Result<RunSummary> {
    config.validate()?;
    let c = config.seeded();
    let out = c.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::load(out)?;
    let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
    let mut summary = RunSummary::default();
    for stage in Stage::ALL.into_iter().filter(|s| wanted.contains(s)) {
        if stage == Stage::Evaluate && c.labels.is_none() && wanted.len() > 1 {
            log::info!("no labels configured; skipping evaluate");
            summary.skipped.push(stage);
            continue;
        }
        let mut inputs = BTreeMap::new();
        for dep in stage.deps() {
            for f in stage_outputs(*dep, out)? {
                let p = out.join(&f);
                if !p.exists() {
                    return Err(Error::MissingStage {
                        stage: dep.name().into(),
                        artifact: p.display().to_string(),
                    });
                }
                inputs.insert(f, hash_file(&p)?);
            }
        }
        for p in external_inputs(stage, &c) {
            inputs.insert(p.display().to_string(), hash_file(&p)?);
        }
        let cfg: BTreeMap<String, String> = RunConfig::stage_keys(stage)
            .iter()
            .map(|k| (k.to_string(), c.get(k).unwrap()))
            .collect();
        let key = sha256_hex(serde_json::to_string(&(stage, &cfg, &inputs))?.as_bytes());
        let fresh = manifest.stages.get(&stage).is_some_and(|r| {
            r.key == key
                && r.outputs
                    .iter()
                    .all(|(f, h)| hash_file(&out.join(f)).is_ok_and(|x| &x == h))
        });
        if fresh {
            log::info!("stage {stage}: cached");
            summary.cached.push(stage);
            continue;
        }
        log::info!("stage {stage}: running");
        execute(stage, &c, out)?;
        let mut outputs = BTreeMap::new();
        for f in stage_outputs(stage, out)? {
            outputs.insert(f.clone(), hash_file(&out.join(&f))?);
        }
        manifest.stages.insert(
            stage,
            StageRecord {
                deps: stage.deps().to_vec(),
                key,
                config: cfg,
                inputs,
                outputs,
            },
        );
        manifest.save(out)?;
        summary.executed.push(stage);
    }
    manifest.save(out)?;
    summary.manifest = manifest;
    Ok(summary)
}
