//! Louvain communities, platform entropy and bridge selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PostCollection;
use crate::error::{Error, Result};
use crate::graph::UserGraph;

pub const DEFAULT_ENTROPY_MIN: f64 = 0.6;
pub const DEFAULT_MIN_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityPartition {
    pub users: Vec<String>,
    /// Community of each user, dense from 0.
    pub labels: Vec<usize>,
    pub members: Vec<Vec<String>>,
    pub platform_counts: Vec<BTreeMap<String, usize>>,
    pub modularity: f64,
    pub resolution: f64,
    pub seed: u64,
}

impl CommunityPartition {
    pub fn num_communities(&self) -> usize {
        self.members.len()
    }

    pub fn community_of(&self, user: &str) -> Option<usize> {
        self.users
            .binary_search_by(|u| u.as_str().cmp(user))
            .ok()
            .map(|i| self.labels[i])
    }

    /// Builds a partition from raw labels, relabelling densely by first
    /// member; modularity is computed against `graph`.
    pub fn from_labels(graph: &UserGraph, labels: &[usize], resolution: f64, seed: u64) -> Result<Self> {
        if labels.len() != graph.num_nodes() {
            return Err(Error::InvalidParam(format!(
                "partition covers {} of {} nodes",
                labels.len(),
                graph.num_nodes()
            )));
        }
        let mut dense: BTreeMap<usize, usize> = BTreeMap::new();
        let labels: Vec<usize> = labels
            .iter()
            .map(|&l| {
                let next = dense.len();
                *dense.entry(l).or_insert(next)
            })
            .collect();
        let k = dense.len();
        let mut members = vec![Vec::new(); k];
        let mut platform_counts = vec![BTreeMap::new(); k];
        for (i, &c) in labels.iter().enumerate() {
            members[c].push(graph.nodes()[i].clone());
            if let Some(p) = graph.platform(i) {
                *platform_counts[c].entry(p.to_string()).or_insert(0) += 1;
            }
        }
        let modularity = modularity(graph, &labels)?;
        Ok(CommunityPartition {
            users: graph.nodes().to_vec(),
            labels,
            members,
            platform_counts,
            modularity,
            resolution,
            seed,
        })
    }
}

/// Weighted Newman modularity of `labels` (one label per node).
pub fn modularity(graph: &UserGraph, labels: &[usize]) -> Result<f64> {
    modularity_with_resolution(graph, labels, 1.0)
}

pub fn modularity_with_resolution(graph: &UserGraph, labels: &[usize], resolution: f64) -> Result<f64> {
    if labels.len() != graph.num_nodes() {
        return Err(Error::InvalidParam(format!(
            "partition covers {} of {} nodes",
            labels.len(),
            graph.num_nodes()
        )));
    }
    let m2 = 2.0 * graph.total_weight();
    if m2 == 0.0 {
        return Ok(0.0);
    }
    let k = labels.iter().max().map_or(0, |&x| x + 1);
    let (mut inside, mut tot) = (vec![0.0; k], vec![0.0; k]);
    for e in graph.edges() {
        let (a, b) = (labels[e.u], labels[e.v]);
        if a == b {
            inside[a] += 2.0 * e.w;
        }
        tot[a] += e.w;
        tot[b] += e.w;
    }
    Ok(inside
        .iter()
        .zip(&tot)
        .map(|(i, t)| i / m2 - resolution * (t / m2).powi(2))
        .sum())
}

/// Aggregated graph for one Louvain level.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
}

impl Level {
    fn from_graph(g: &UserGraph) -> Self {
        let adj = g.adjacency();
        let degree = adj.iter().map(|n| n.iter().map(|x| x.1).sum()).collect();
        Level {
            self_loops: vec![0.0; adj.len()],
            adj,
            degree,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// One local-moving phase; returns community per node and whether
    /// anything moved.
    fn local_moves(&self, m2: f64, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot: Vec<f64> = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut links = vec![0.0f64; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let ki = self.degree[i];
                let own = comm[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if links[c] == 0.0 {
                        touched.push(c);
                    }
                    links[c] += w;
                }
                tot[own] -= ki;
                let gain = |c: usize, l: f64| l - resolution * tot[c] * ki / m2;
                let mut best = own;
                let mut best_gain = gain(own, links[own]);
                touched.sort_unstable();
                for &c in &touched {
                    let g = gain(c, links[c]);
                    if g > best_gain + 1e-12 {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                }
                for c in touched.drain(..) {
                    links[c] = 0.0;
                }
                links[own] = 0.0;
            }
            if !moved {
                break;
            }
            any = true;
        }
        (comm, any)
    }

    fn aggregate(&self, comm: &[usize]) -> (Level, Vec<usize>) {
        let mut dense: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in comm {
            let next = dense.len();
            dense.entry(c).or_insert(next);
        }
        let map: Vec<usize> = comm.iter().map(|c| dense[c]).collect();
        let k = dense.len();
        let mut w: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loops = vec![0.0; k];
        for (i, nbrs) in self.adj.iter().enumerate() {
            self_loops[map[i]] += self.self_loops[i];
            for &(j, x) in nbrs {
                let (a, b) = (map[i], map[j]);
                if a == b {
                    self_loops[a] += x;
                } else {
                    *w[a].entry(b).or_insert(0.0) += x;
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = w.into_iter().map(|m| m.into_iter().collect()).collect();
        let degree = adj
            .iter()
            .zip(&self_loops)
            .map(|(n, s)| n.iter().map(|x| x.1).sum::<f64>() + s)
            .collect();
        (
            Level {
                adj,
                self_loops,
                degree,
            },
            map,
        )
    }
}

/// Two-phase Louvain with a seeded sweep order, repeated until a level
/// makes no move.
pub fn louvain_partition(graph: &UserGraph, resolution: f64, seed: u64) -> Result<CommunityPartition> {
    if resolution.is_nan() || resolution <= 0.0 {
        return Err(Error::InvalidParam("resolution must be > 0".into()));
    }
    let n = graph.num_nodes();
    let m2 = 2.0 * graph.total_weight();
    if graph.num_edges() == 0 || m2 == 0.0 {
        log::warn!("graph has no weighted edges; returning singleton communities");
        return CommunityPartition::from_labels(graph, &(0..n).collect::<Vec<_>>(), resolution, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = Level::from_graph(graph);
    let mut node_comm: Vec<usize> = (0..n).collect();
    loop {
        let (comm, moved) = level.local_moves(m2, resolution, &mut rng);
        if !moved {
            break;
        }
        let (next, map) = level.aggregate(&comm);
        for c in node_comm.iter_mut() {
            *c = map[*c];
        }
        if next.len() == level.len() {
            break;
        }
        level = next;
    }
    CommunityPartition::from_labels(graph, &node_comm, resolution, seed)
}

/// Base-2 Shannon entropy of the members' platforms, normalized by the
/// log of the number of distinct platforms in `platforms`.
pub fn platform_entropy(members: &[String], platforms: &BTreeMap<String, String>) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Empty("community has no members".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        let p = platforms
            .get(m)
            .ok_or_else(|| Error::InvalidParam(format!("user `{m}` has no platform")))?;
        *counts.entry(p).or_insert(0) += 1;
    }
    let total_platforms = platforms.values().collect::<BTreeSet<_>>().len();
    if total_platforms < 2 {
        return Ok(0.0);
    }
    Ok((entropy_bits(counts.values().copied()) / (total_platforms as f64).log2()) + 0.0)
}

fn entropy_bits(counts: impl Iterator<Item = usize> + Clone) -> f64 {
    let n: usize = counts.clone().sum();
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeReport {
    pub bridge_ids: Vec<usize>,
    pub bridge_users: BTreeSet<String>,
    pub entropies: Vec<f64>,
    pub entropy_min: f64,
    pub min_size: usize,
    pub user_share: f64,
    /// Share of corpus posts written by bridge users, when posts are known.
    pub post_share: Option<f64>,
}

impl BridgeReport {
    pub fn with_post_share(mut self, posts: &PostCollection) -> Self {
        let n: usize = self.bridge_users.iter().map(|u| posts.user_posts(u).len()).sum();
        self.post_share = (!posts.is_empty()).then(|| n as f64 / posts.len() as f64);
        self
    }
}

pub fn select_bridge_users(
    partition: &CommunityPartition,
    platforms: &BTreeMap<String, String>,
    entropy_min: f64,
    min_size: usize,
) -> Result<BridgeReport> {
    if !(0.0..=1.0).contains(&entropy_min) {
        return Err(Error::InvalidParam("entropy_min must lie in [0, 1]".into()));
    }
    let entropies = partition
        .members
        .iter()
        .map(|m| platform_entropy(m, platforms))
        .collect::<Result<Vec<f64>>>()?;
    let bridge_ids: Vec<usize> = (0..partition.num_communities())
        .filter(|&c| partition.members[c].len() >= min_size && entropies[c] >= entropy_min)
        .collect();
    let bridge_users: BTreeSet<String> = bridge_ids
        .iter()
        .flat_map(|&c| partition.members[c].iter().cloned())
        .collect();
    let user_share = if partition.users.is_empty() {
        0.0
    } else {
        bridge_users.len() as f64 / partition.users.len() as f64
    };
    Ok(BridgeReport {
        bridge_ids,
        bridge_users,
        entropies,
        entropy_min,
        min_size,
        user_share,
        post_share: None,
    })
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidParam("labelings differ in length".into()));
    }
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let (mut ra, mut rb): (BTreeMap<usize, f64>, BTreeMap<usize, f64>) = Default::default();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0.0) += 1.0;
        *ra.entry(x).or_insert(0.0) += 1.0;
        *rb.entry(y).or_insert(0.0) += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(n);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return Ok(if a == b || (sa == index && sb == index) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Serialize, Deserialize)]
struct CommunityJson {
    id: usize,
    users: Vec<String>,
    platform_counts: BTreeMap<String, usize>,
    entropy: f64,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct CommunitiesJson {
    communities: Vec<CommunityJson>,
    modularity: f64,
    resolution: f64,
    seed: u64,
    bridge_ids: Vec<usize>,
    entropy_min: f64,
    min_size: usize,
    user_share: f64,
    post_share: Option<f64>,
}

pub fn write_communities(p: &CommunityPartition, report: &BridgeReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = CommunitiesJson {
        communities: (0..p.num_communities())
            .map(|c| CommunityJson {
                id: c,
                users: p.members[c].clone(),
                platform_counts: p.platform_counts[c].clone(),
                entropy: report.entropies[c],
                size: p.members[c].len(),
            })
            .collect(),
        modularity: p.modularity,
        resolution: p.resolution,
        seed: p.seed,
        bridge_ids: report.bridge_ids.clone(),
        entropy_min: report.entropy_min,
        min_size: report.min_size,
        user_share: report.user_share,
        post_share: report.post_share,
    };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_communities(path: impl AsRef<Path>) -> Result<(CommunityPartition, BridgeReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: CommunitiesJson = serde_json::from_str(&text)?;
    let mut pairs: Vec<(String, usize)> = doc
        .communities
        .iter()
        .flat_map(|c| c.users.iter().map(move |u| (u.clone(), c.id)))
        .collect();
    pairs.sort();
    let (users, labels): (Vec<String>, Vec<usize>) = pairs.into_iter().unzip();
    let bridge_users = doc
        .bridge_ids
        .iter()
        .flat_map(|&b| doc.communities[b].users.iter().cloned())
        .collect();
    let partition = CommunityPartition {
        users,
        labels,
        members: doc.communities.iter().map(|c| c.users.clone()).collect(),
        platform_counts: doc.communities.iter().map(|c| c.platform_counts.clone()).collect(),
        modularity: doc.modularity,
        resolution: doc.resolution,
        seed: doc.seed,
    };
    let report = BridgeReport {
        bridge_ids: doc.bridge_ids,
        bridge_users,
        entropies: doc.communities.iter().map(|c| c.entropy).collect(),
        entropy_min: doc.entropy_min,
        min_size: doc.min_size,
        user_share: doc.user_share,
        post_share: doc.post_share,
    };
    Ok((partition, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphMeta;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i:02}")).collect()
    }

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> UserGraph {
        UserGraph::from_edges(names(n), edges.iter().copied(), GraphMeta::default()).unwrap()
    }

    fn clique(offset: usize, size: usize) -> Vec<(usize, usize, f64)> {
        let mut e = Vec::new();
        for i in 0..size {
            for j in i + 1..size {
                e.push((offset + i, offset + j, 1.0));
            }
        }
        e
    }

    /// Direct evaluation of `Q = 1/2m Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)`.
    fn brute_q(g: &UserGraph, labels: &[usize]) -> f64 {
        let n = g.num_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for e in g.edges() {
            a[e.u][e.v] = e.w;
            a[e.v][e.u] = e.w;
        }
        let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        let m2: f64 = k.iter().sum();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    q += a[i][j] - k[i] * k[j] / m2;
                }
            }
        }
        q / m2
    }

    /// All set partitions of `n` items as restricted growth strings.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            let max = prefix.iter().max().map_or(0, |&m| m + 1);
            for c in 0..=max {
                prefix.push(c);
                rec(prefix, n, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), n, &mut out);
        out
    }

    #[test]
    fn two_cliques_match_exhaustive_optimum() {
        let mut e = clique(0, 4);
        e.extend(clique(4, 4));
        e.push((3, 4, 1.0));
        let g = graph(8, &e);
        let best = all_partitions(8)
            .into_iter()
            .max_by(|a, b| brute_q(&g, a).partial_cmp(&brute_q(&g, b)).unwrap())
            .unwrap();
        let p = louvain_partition(&g, 1.0, 3).unwrap();
        assert_eq!(p.labels, best);
        assert_eq!(p.labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn single_clique_is_one_community() {
        let g = graph(6, &clique(0, 6));
        assert_eq!(louvain_partition(&g, 1.0, 0).unwrap().num_communities(), 1);
    }

    #[test]
    fn components_never_merge() {
        let mut e = clique(0, 3);
        e.extend(clique(3, 3));
        e.extend(clique(6, 2));
        let g = graph(8, &e);
        let p = louvain_partition(&g, 1.0, 1).unwrap();
        let comp = [0, 0, 0, 1, 1, 1, 2, 2];
        for i in 0..8 {
            for j in 0..8 {
                if p.labels[i] == p.labels[j] {
                    assert_eq!(comp[i], comp[j]);
                }
            }
        }
    }

    #[test]
    fn edgeless_graph_is_singletons() {
        let g = graph(3, &[]);
        let p = louvain_partition(&g, 1.0, 0).unwrap();
        assert_eq!(p.labels, vec![0, 1, 2]);
        assert_eq!(p.modularity, 0.0);
        assert!(louvain_partition(&graph(3, &[(0, 1, 1.0)]), 0.0, 0).is_err());
    }

    #[test]
    fn modularity_examples() {
        let mut e = clique(0, 4);
        e.extend(clique(4, 4));
        let g = graph(8, &e);
        assert!(modularity(&g, &[0; 8]).unwrap().abs() < 1e-12);
        assert!((modularity(&g, &[0, 0, 0, 0, 1, 1, 1, 1]).unwrap() - 0.5).abs() < 1e-12);
        assert!(modularity(&g, &[0; 7]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let plat = |split: &[(usize, &str)]| -> (Vec<String>, BTreeMap<String, String>) {
            let mut users = Vec::new();
            let mut map = BTreeMap::new();
            for &(n, p) in split {
                for _ in 0..n {
                    let u = format!("u{}", users.len());
                    map.insert(u.clone(), p.to_string());
                    users.push(u);
                }
            }
            (users, map)
        };
        let (u, mut m) = plat(&[(5, "x")]);
        m.insert("other".into(), "ts".into());
        assert_eq!(platform_entropy(&u, &m).unwrap(), 0.0);
        let (u, m) = plat(&[(5, "x"), (5, "ts")]);
        assert!((platform_entropy(&u, &m).unwrap() - 1.0).abs() < 1e-12);
        let (u, m) = plat(&[(2, "x"), (8, "ts")]);
        let closed = -(0.2f64 * 0.2f64.log2() + 0.8 * 0.8f64.log2());
        assert!((platform_entropy(&u, &m).unwrap() - closed).abs() < 1e-12);
        assert!((closed - 0.7219).abs() < 1e-4);
        let (u, m) = plat(&[(3, "x")]);
        assert_eq!(platform_entropy(&u, &m).unwrap(), 0.0);
        assert!(platform_entropy(&["ghost".to_string()], &m).is_err());
        assert!(platform_entropy(&[], &m).is_err());
    }

    fn planted() -> (UserGraph, BTreeMap<String, String>) {
        // Three 12-cliques: two single-platform, one mixed 7/5.
        let mut e = clique(0, 12);
        e.extend(clique(12, 12));
        e.extend(clique(24, 12));
        e.push((0, 12, 0.1));
        e.push((12, 24, 0.1));
        let g = graph(36, &e);
        let platforms: BTreeMap<String, String> = names(36)
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let p = match i {
                    0..12 => "x",
                    12..24 => "ts",
                    24..31 => "x",
                    _ => "ts",
                };
                (n, p.to_string())
            })
            .collect();
        (g.with_platforms(&platforms), platforms)
    }

    #[test]
    fn bridge_selection() {
        let (g, platforms) = planted();
        let p = louvain_partition(&g, 1.0, 0).unwrap();
        assert_eq!(p.num_communities(), 3);
        let r = select_bridge_users(&p, &platforms, 0.6, 10).unwrap();
        assert_eq!(r.bridge_ids.len(), 1);
        let expected: BTreeSet<String> = names(36)[24..].iter().cloned().collect();
        assert_eq!(r.bridge_users, expected);
        assert!((r.user_share - 1.0 / 3.0).abs() < 1e-12);
        assert!(select_bridge_users(&p, &platforms, 1.01, 10).is_err());
        assert!(select_bridge_users(&p, &platforms, 1.0, 10).unwrap().bridge_users.is_empty());
        assert_eq!(select_bridge_users(&p, &platforms, 0.0, 1).unwrap().bridge_ids, vec![0, 1, 2]);
    }

    #[test]
    fn communities_json_round_trip() {
        let (g, platforms) = planted();
        let p = louvain_partition(&g, 1.0, 0).unwrap();
        let r = select_bridge_users(&p, &platforms, 0.6, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("communities.json");
        write_communities(&p, &r, &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["communities", "modularity", "bridge_ids"] {
            assert!(v.get(key).is_some());
        }
        for key in ["id", "users", "platform_counts", "entropy", "size"] {
            assert!(v["communities"][0].get(key).is_some());
        }
        let (p2, r2) = read_communities(&path).unwrap();
        assert_eq!(p2, p);
        assert_eq!(r2, r);
    }

    #[test]
    fn ari_examples() {
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 3, 3]).unwrap() - 1.0).abs() < 1e-12);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() < 0.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> UserGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    e.push((i, j, rng.random::<f64>() * 0.9 + 0.1));
                }
            }
        }
        graph(n, &e)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn louvain_invariants(n in 2usize..30, p in 0.05f64..0.6, seed in any::<u64>()) {
            let g = random_graph(n, p, seed);
            let part = louvain_partition(&g, 1.0, seed).unwrap();
            let singletons: Vec<usize> = (0..n).collect();
            prop_assert!(part.modularity >= modularity(&g, &singletons).unwrap() - 1e-12);
            prop_assert!((part.modularity - modularity(&g, &part.labels).unwrap()).abs() < 1e-9);
            prop_assert!((-0.5..=1.0).contains(&part.modularity));
            let covered: usize = part.members.iter().map(Vec::len).sum();
            prop_assert!(covered == n);
            let max = part.labels.iter().max().unwrap();
            prop_assert!(*max + 1 == part.num_communities());
            prop_assert!(part.members.iter().all(|m| !m.is_empty()));
        }

        #[test]
        fn modularity_matches_formula(n in 2usize..15, seed in any::<u64>(), k in 1usize..5) {
            let g = random_graph(n, 0.4, seed);
            if g.num_edges() > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
                prop_assert!((modularity(&g, &labels).unwrap() - brute_q(&g, &labels)).abs() < 1e-9);
            }
        }

        #[test]
        fn entropy_invariances(split in proptest::collection::vec(0usize..3, 1..30), seed in any::<u64>()) {
            let labels = ["a", "b", "c"];
            let users: Vec<String> = (0..split.len()).map(|i| format!("u{i}")).collect();
            let map: BTreeMap<String, String> =
                users.iter().zip(&split).map(|(u, &s)| (u.clone(), labels[s].to_string())).collect();
            let renamed: BTreeMap<String, String> =
                map.iter().map(|(u, p)| (u.clone(), format!("renamed-{p}"))).collect();
            let mut shuffled = users.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let h = platform_entropy(&users, &map).unwrap();
            prop_assert!((h - platform_entropy(&shuffled, &map).unwrap()).abs() < 1e-12);
            prop_assert!((h - platform_entropy(&users, &renamed).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
        }
    }
}
