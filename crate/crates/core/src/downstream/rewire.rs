use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::UserGraph;

/// Degree-preserving randomization by seeded double-edge swaps, 10×|E|
/// attempts. Each swapped edge keeps the weight of the edge it replaced.
pub fn rewire_degree_preserving(graph: &UserGraph, seed: u64) -> Result<UserGraph> {
    let mut edges: Vec<(usize, usize, f64)> = graph.edges().iter().map(|e| (e.u, e.v, e.w)).collect();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut present: BTreeSet<(usize, usize)> = edges.iter().map(|e| key(e.0, e.1)).collect();
    let m = edges.len();
    if m >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 * m {
            let i = rng.random_range(0..m);
            let j = rng.random_range(0..m);
            if i == j {
                continue;
            }
            let (a, b, wi) = edges[i];
            let (mut c, mut d, wj) = edges[j];
            if rng.random::<bool>() {
                std::mem::swap(&mut c, &mut d);
            }
            // (a,b),(c,d) → (a,d),(c,b)
            if a == d || c == b || present.contains(&key(a, d)) || present.contains(&key(c, b)) {
                continue;
            }
            present.remove(&key(a, b));
            present.remove(&key(c, d));
            present.insert(key(a, d));
            present.insert(key(c, b));
            edges[i] = (a, d, wi);
            edges[j] = (c, b, wj);
        }
    }
    let platforms: BTreeMap<String, String> = (0..graph.num_nodes())
        .filter_map(|i| graph.platform(i).map(|p| (graph.nodes()[i].clone(), p.to_string())))
        .collect();
    Ok(UserGraph::from_edges(graph.nodes().to_vec(), edges, graph.meta.clone())?.with_platforms(&platforms))
}
