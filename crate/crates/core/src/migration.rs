//! Narrative timelines, cross-platform migration and transfer entropy.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::corpus::PostCollection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub const HOUR: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub user: String,
    pub platform: String,
    pub ts: i64,
    pub post_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeTimeline {
    pub narrative: usize,
    pub bin: i64,
    /// Timestamp of the narrative's first post; bin 0 starts here.
    pub start: i64,
    /// Per-platform counts, all the same length.
    pub series: BTreeMap<String, Vec<u64>>,
    pub first_post: BTreeMap<String, i64>,
    /// Posts ordered by `(ts, post_id)`.
    pub participants: Vec<Participant>,
}

impl NarrativeTimeline {
    pub fn len(&self) -> usize {
        self.series.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn count(&self, platform: &str) -> u64 {
        self.series.get(platform).map_or(0, |s| s.iter().sum())
    }
}

fn timeline_from(
    posts: &PostCollection,
    idx: &[usize],
    narrative: usize,
    bin: i64,
    platforms: &[String],
) -> Result<NarrativeTimeline> {
    if bin <= 0 {
        return Err(Error::InvalidParam("bin width must be > 0 seconds".into()));
    }
    if idx.is_empty() {
        return Err(Error::Empty(format!("narrative {narrative} has no posts")));
    }
    let mut participants: Vec<Participant> = idx
        .iter()
        .map(|&i| {
            let p = &posts.posts()[i];
            Participant {
                user: p.user_id.clone(),
                platform: p.platform.clone(),
                ts: p.ts,
                post_id: p.post_id.clone(),
            }
        })
        .collect();
    participants.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.post_id.cmp(&b.post_id)));
    let start = participants[0].ts;
    let end = participants.last().unwrap().ts;
    let len = ((end - start) / bin + 1) as usize;
    let mut series: BTreeMap<String, Vec<u64>> = platforms.iter().map(|p| (p.clone(), vec![0; len])).collect();
    let mut first_post = BTreeMap::new();
    for p in &participants {
        series.entry(p.platform.clone()).or_insert_with(|| vec![0; len])[((p.ts - start) / bin) as usize] += 1;
        first_post.entry(p.platform.clone()).or_insert(p.ts);
    }
    Ok(NarrativeTimeline {
        narrative,
        bin,
        start,
        series,
        first_post,
        participants,
    })
}

/// Post indices grouped by assigned cluster.
fn narrative_posts<S: Scalar>(posts: &PostCollection, model: &ClusterModel<S>) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); model.num_clusters()];
    for (i, p) in posts.posts().iter().enumerate() {
        let c = model
            .cluster_of(&p.post_id)
            .ok_or_else(|| Error::InvalidParam(format!("post `{}` has no cluster assignment", p.post_id)))?;
        groups[c].push(i);
    }
    Ok(groups)
}

pub fn build_timeline<S: Scalar>(
    posts: &PostCollection,
    model: &ClusterModel<S>,
    narrative: usize,
    bin: i64,
) -> Result<NarrativeTimeline> {
    if narrative >= model.num_clusters() {
        return Err(Error::Unknown {
            kind: "narrative",
            name: narrative.to_string(),
        });
    }
    let groups = narrative_posts(posts, model)?;
    timeline_from(posts, &groups[narrative], narrative, bin, posts.platforms())
}

/// Timelines of every nonempty narrative, in narrative order.
pub fn build_timelines<S: Scalar>(posts: &PostCollection, model: &ClusterModel<S>, bin: i64) -> Result<Vec<NarrativeTimeline>> {
    let groups = narrative_posts(posts, model)?;
    groups
        .par_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(n, g)| timeline_from(posts, g, n, bin, posts.platforms()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub narrative: usize,
    pub origin: Option<String>,
    pub receiving: Option<String>,
    pub receiving_count: u64,
    #[serde(rename = "simple")]
    pub simple_migrated: bool,
    pub te: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    pub first_introducer: Option<String>,
    pub early_users: Vec<String>,
}

/// Origin is the earliest platform if it leads the next-earliest by at
/// least `origin_gap`; a narrative seen on one platform only has no origin.
pub fn detect_simple_migration(tl: &NarrativeTimeline, origin_gap: i64, min_posts: u64) -> MigrationRecord {
    let mut firsts: Vec<(i64, &String)> = tl.first_post.iter().map(|(p, &t)| (t, p)).collect();
    firsts.sort();
    let (origin, receiving) = match firsts.as_slice() {
        [(t0, p0), (t1, p1), ..] if t1 - t0 >= origin_gap => (Some(p0.to_string()), Some(p1.to_string())),
        _ => (None, None),
    };
    let receiving_count = receiving.as_deref().map_or(0, |r| tl.count(r));
    let first_introducer = receiving
        .as_deref()
        .and_then(|r| tl.participants.iter().find(|p| p.platform == r))
        .map(|p| p.user.clone());
    MigrationRecord {
        narrative: tl.narrative,
        simple_migrated: origin.is_some() && receiving_count >= min_posts,
        origin,
        receiving,
        receiving_count,
        te: None,
        p: None,
        significant: false,
        first_introducer,
        early_users: Vec::new(),
    }
}

/// Plug-in transfer entropy `src → dst` in bits on binarized series
/// (count > 0), with history length `history` on both sides.
pub fn transfer_entropy(src: &[u64], dst: &[u64], history: usize) -> Result<f64> {
    if src.len() != dst.len() {
        return Err(Error::InvalidParam(format!(
            "series lengths differ ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    if history == 0 || history > 16 {
        return Err(Error::InvalidParam("history must be in 1..=16".into()));
    }
    if src.len() <= history + 1 {
        return Err(Error::InvalidParam(format!(
            "series of length {} too short for history {history}",
            src.len()
        )));
    }
    let x: Vec<usize> = dst.iter().map(|&c| (c > 0) as usize).collect();
    let y: Vec<usize> = src.iter().map(|&c| (c > 0) as usize).collect();
    Ok(te_bits(&x, &y, history))
}

fn te_bits(x: &[usize], y: &[usize], k: usize) -> f64 {
    let states = 1usize << k;
    let mask = states - 1;
    let mut joint = vec![0u32; 2 * states * states];
    let (mut xh, mut yh) = (0usize, 0usize);
    for t in 0..k {
        xh = (xh << 1 | x[t]) & mask;
        yh = (yh << 1 | y[t]) & mask;
    }
    for t in k - 1..x.len() - 1 {
        if t >= k {
            xh = (xh << 1 | x[t]) & mask;
            yh = (yh << 1 | y[t]) & mask;
        }
        joint[(x[t + 1] * states + xh) * states + yh] += 1;
    }
    let n = (x.len() - k) as f64;
    let mut c_xy = vec![0u32; states * states];
    let mut c_x1x = vec![0u32; 2 * states];
    let mut c_x = vec![0u32; states];
    for x1 in 0..2 {
        for h in 0..states {
            for g in 0..states {
                let c = joint[(x1 * states + h) * states + g];
                c_xy[h * states + g] += c;
                c_x1x[x1 * states + h] += c;
                c_x[h] += c;
            }
        }
    }
    let mut te = 0.0;
    for x1 in 0..2 {
        for h in 0..states {
            for g in 0..states {
                let c = joint[(x1 * states + h) * states + g] as f64;
                if c > 0.0 {
                    let ratio = c * c_x[h] as f64 / (c_xy[h * states + g] as f64 * c_x1x[x1 * states + h] as f64);
                    te += c / n * ratio.log2();
                }
            }
        }
    }
    te.max(0.0)
}

/// Observed TE and the add-one permutation p-value from shuffling `src`.
pub fn permutation_test(src: &[u64], dst: &[u64], history: usize, n_perm: usize, seed: u64) -> Result<(f64, f64)> {
    if n_perm == 0 {
        return Err(Error::InvalidParam("n_perm must be >= 1".into()));
    }
    let observed = transfer_entropy(src, dst, history)?;
    let x: Vec<usize> = dst.iter().map(|&c| (c > 0) as usize).collect();
    let y: Vec<usize> = src.iter().map(|&c| (c > 0) as usize).collect();
    let exceed = (0..n_perm)
        .into_par_iter()
        .filter(|&i| {
            let mut shuffled = y.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64)));
            te_bits(&x, &shuffled, history) >= observed - 1e-12
        })
        .count();
    Ok((observed, (1 + exceed) as f64 / (n_perm + 1) as f64))
}

pub fn permutation_significance(src: &[u64], dst: &[u64], history: usize, n_perm: usize, seed: u64) -> Result<f64> {
    permutation_test(src, dst, history, n_perm, seed).map(|x| x.1)
}

/// Distinct users among the first `⌈fraction · distinct⌉` distinct
/// participants, in time order.
pub fn early_participants(tl: &NarrativeTimeline, fraction: f64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParam("fraction must lie in (0, 1]".into()));
    }
    let mut seen = BTreeSet::new();
    let ordered: Vec<&String> = tl.participants.iter().map(|p| &p.user).filter(|u| seen.insert(*u)).collect();
    let take = (fraction * ordered.len() as f64 - 1e-9).ceil() as usize;
    Ok(ordered.into_iter().take(take).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntroStats {
    pub migrated: usize,
    /// `shares[n-1]`: share of migrated narratives whose first `n`
    /// receiving-platform posts include a bridge user.
    pub shares: Vec<f64>,
    /// First receiving-platform poster per migrated narrative, by count.
    pub first_introducers: Vec<(String, usize)>,
}

pub fn introduction_rank_stats(
    timelines: &[NarrativeTimeline],
    records: &[MigrationRecord],
    bridge_users: &BTreeSet<String>,
    max_n: usize,
) -> IntroStats {
    let by_id: BTreeMap<usize, &NarrativeTimeline> = timelines.iter().map(|t| (t.narrative, t)).collect();
    let mut hits = vec![0usize; max_n];
    let mut firsts: BTreeMap<String, usize> = BTreeMap::new();
    let mut migrated = 0;
    for r in records.iter().filter(|r| r.simple_migrated) {
        let (Some(tl), Some(recv)) = (by_id.get(&r.narrative), r.receiving.as_deref()) else {
            continue;
        };
        migrated += 1;
        let receivers: Vec<&str> = tl
            .participants
            .iter()
            .filter(|p| p.platform == recv)
            .map(|p| p.user.as_str())
            .collect();
        if let Some(first) = receivers.first() {
            *firsts.entry(first.to_string()).or_insert(0) += 1;
        }
        if let Some(pos) = receivers.iter().position(|u| bridge_users.contains(*u)) {
            for h in hits.iter_mut().skip(pos) {
                *h += 1;
            }
        }
    }
    let shares = hits
        .iter()
        .map(|&h| if migrated == 0 { 0.0 } else { h as f64 / migrated as f64 })
        .collect();
    let mut first_introducers: Vec<(String, usize)> = firsts.into_iter().collect();
    first_introducers.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    IntroStats {
        migrated,
        shares,
        first_introducers,
    }
}

/// Nearest-rank percentile of per-(narrative, platform) post counts,
/// over pairs with at least one post.
pub fn percentile_min_posts(timelines: &[NarrativeTimeline], q: f64) -> u64 {
    let mut counts: Vec<u64> = timelines
        .iter()
        .flat_map(|t| t.series.values().map(|s| s.iter().sum::<u64>()))
        .filter(|&c| c > 0)
        .collect();
    if counts.is_empty() {
        return 1;
    }
    counts.sort_unstable();
    let rank = ((q.clamp(0.0, 1.0) * counts.len() as f64).ceil() as usize).max(1);
    counts[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationParams {
    pub origin_gap: i64,
    pub min_posts: u64,
    /// Replace `min_posts` by the 35th percentile of narrative-platform counts.
    pub auto_min_posts: bool,
    pub bin: i64,
    pub history: usize,
    pub n_perm: usize,
    pub significance: f64,
    pub early_fraction: f64,
    pub max_n: usize,
    pub seed: u64,
}

impl Default for MigrationParams {
    fn default() -> Self {
        MigrationParams {
            origin_gap: 24 * HOUR,
            min_posts: 10,
            auto_min_posts: false,
            bin: HOUR,
            history: 1,
            n_perm: 1000,
            significance: 0.05,
            early_fraction: 0.05,
            max_n: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationSummary {
    pub narratives: usize,
    pub with_origin: usize,
    pub simple: usize,
    pub significant: usize,
    pub min_posts_used: u64,
    pub bridge_intro_shares: Vec<f64>,
    pub top1_bridge_share: f64,
    pub first_introducers: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub params: MigrationParams,
    pub narratives: Vec<MigrationRecord>,
    pub summary: MigrationSummary,
}

/// Runs simple-migration detection on every narrative, then the TE
/// permutation test (origin → receiving) on those that migrated.
pub fn analyze_migrations(
    timelines: &[NarrativeTimeline],
    params: &MigrationParams,
    bridge_users: &BTreeSet<String>,
) -> Result<MigrationReport> {
    let min_posts = if params.auto_min_posts {
        percentile_min_posts(timelines, 0.35)
    } else {
        params.min_posts
    };
    let records = timelines
        .par_iter()
        .map(|tl| {
            let mut r = detect_simple_migration(tl, params.origin_gap, min_posts);
            r.early_users = early_participants(tl, params.early_fraction)?;
            if r.simple_migrated {
                let src = &tl.series[r.origin.as_deref().unwrap()];
                let dst = &tl.series[r.receiving.as_deref().unwrap()];
                if src.len() > params.history + 1 {
                    let seed = derive_seed(params.seed, tl.narrative as u64);
                    let (te, p) = permutation_test(src, dst, params.history, params.n_perm, seed)?;
                    r.te = Some(te);
                    r.p = Some(p);
                    r.significant = p < params.significance;
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let intro = introduction_rank_stats(timelines, &records, bridge_users, params.max_n);
    let summary = MigrationSummary {
        narratives: records.len(),
        with_origin: records.iter().filter(|r| r.origin.is_some()).count(),
        simple: records.iter().filter(|r| r.simple_migrated).count(),
        significant: records.iter().filter(|r| r.significant).count(),
        min_posts_used: min_posts,
        top1_bridge_share: intro.shares.first().copied().unwrap_or(0.0),
        bridge_intro_shares: intro.shares,
        first_introducers: intro.first_introducers,
    };
    Ok(MigrationReport {
        params: params.clone(),
        narratives: records,
        summary,
    })
}

pub fn write_migrations(report: &MigrationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_migrations(path: impl AsRef<Path>) -> Result<MigrationReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
