//! Seeded cross-platform corpora with planted communities, a mixed-platform
//! bridge community, narratives and lag-coupled migrations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_LAMBDA;
use crate::corpus::{write_posts, PostCollection, PostRecord};
use crate::embedding::{write_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::migration::HOUR;
use crate::seed::derive_seed;

pub const PLATFORM_A: &str = "x";
pub const PLATFORM_B: &str = "truthsocial";
pub const BASE_TS: i64 = 1_704_067_200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Single-platform communities; even ones post on `x`, odd ones on
    /// `truthsocial`.
    pub communities: usize,
    pub users_per_community: usize,
    /// Size of the mixed-platform community (0 for none).
    pub bridge_users: usize,
    /// Share of bridge users on `x`; the rest are on `truthsocial`.
    pub bridge_mix: f64,
    pub narratives: usize,
    pub posts_per_user: usize,
    pub dim: usize,
    /// Gaussian noise scale around narrative centroids.
    pub noise: f64,
    /// Share of a bridge user's free posts spent on other communities'
    /// narratives.
    pub bridge_cross: f64,
    pub migration_fraction: f64,
    /// Receiving-platform posts per migrated narrative.
    pub migration_posts: usize,
    /// Share of migrated narratives whose first receiving post is by a
    /// bridge user.
    pub introducer_share: f64,
    pub lag: usize,
    pub strength: f64,
    /// Silence between the origin seed post and the first receiving post.
    pub quiet_hours: i64,
    /// Hours between consecutive narrative starts.
    pub stagger_hours: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            communities: 6,
            users_per_community: 40,
            bridge_users: 40,
            bridge_mix: 0.5,
            narratives: 28,
            posts_per_user: 20,
            dim: 32,
            noise: 0.3,
            bridge_cross: 0.3,
            migration_fraction: 0.5,
            migration_posts: 30,
            introducer_share: 0.7,
            lag: 1,
            strength: 1.0,
            quiet_hours: 30,
            stagger_hours: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(format!("synth: {m}")));
        if self.communities == 0 || self.users_per_community == 0 || self.narratives == 0 || self.posts_per_user == 0 {
            return bad("communities, users_per_community, narratives and posts_per_user must be >= 1");
        }
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.bridge_mix) {
            return bad("bridge_mix must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be >= 0");
        }
        for (name, v) in [
            ("bridge_cross", self.bridge_cross),
            ("migration_fraction", self.migration_fraction),
            ("introducer_share", self.introducer_share),
            ("strength", self.strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.lag == 0 || self.migration_posts == 0 || self.quiet_hours < 25 || self.stagger_hours < 1 {
            return bad("lag and migration_posts must be >= 1, quiet_hours >= 25, stagger_hours >= 1");
        }
        if self.narratives < self.groups() {
            return bad("need at least one narrative per community");
        }
        Ok(())
    }

    fn groups(&self) -> usize {
        self.communities + (self.bridge_users > 0) as usize
    }

    pub fn num_users(&self) -> usize {
        self.communities * self.users_per_community + self.bridge_users
    }

    pub fn num_posts(&self) -> usize {
        self.num_users() * self.posts_per_user
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeTruth {
    pub narrative: usize,
    pub community: usize,
    pub origin: String,
    pub migrated: bool,
    pub receiving: Option<String>,
    pub seeder: String,
    pub first_introducer: Option<String>,
    pub bridge_introduced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Planted community per user; the bridge community, if any, has the
    /// last index.
    pub community: BTreeMap<String, usize>,
    pub bridge: BTreeMap<String, bool>,
    pub platform: BTreeMap<String, String>,
    pub narratives: Vec<NarrativeTruth>,
    pub post_narrative: BTreeMap<String, usize>,
    pub bridge_community: Option<usize>,
}

impl GroundTruth {
    pub fn bridge_users(&self) -> BTreeSet<String> {
        self.bridge.iter().filter(|(_, &b)| b).map(|(u, _)| u.clone()).collect()
    }

    /// Community labels as strings, for classification.
    pub fn labels(&self) -> BTreeMap<String, String> {
        self.community.iter().map(|(u, c)| (u.clone(), format!("c{c}"))).collect()
    }

    pub fn migrated(&self) -> BTreeSet<usize> {
        self.narratives.iter().filter(|n| n.migrated).map(|n| n.narrative).collect()
    }
}

pub struct SynthCorpus {
    pub posts: PostCollection,
    pub embeddings: EmbeddingMatrix<f32>,
    pub truth: GroundTruth,
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit centroids with pairwise cosine distance above `min_dist`.
fn centroids(rng: &mut ChaCha8Rng, count: usize, dim: usize, min_dist: f64) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 2000 * count + 10_000 {
            return Err(Error::InvalidParam(format!(
                "synth: cannot pack {count} centroids at cosine distance > {min_dist} in {dim} dimensions"
            )));
        }
        let c = unit(rng, dim);
        if out.iter().all(|o| 1.0 - o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() > min_dist) {
            out.push(c);
        }
    }
    Ok(out)
}

/// `src` i.i.d. Bernoulli(0.5); `dst_t = src_{t-lag}` with probability
/// `strength`, otherwise a fresh Bernoulli(0.5) draw.
pub fn gen_coupled_series(length: usize, lag: usize, strength: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if lag == 0 || length <= lag {
        return Err(Error::InvalidParam(format!("need length > lag >= 1 (length {length}, lag {lag})")));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidParam("strength must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src: Vec<u64> = (0..length).map(|_| rng.random::<bool>() as u64).collect();
    let dst = (0..length)
        .map(|t| {
            let copy = rng.random::<f64>() < strength;
            let fresh = rng.random::<bool>() as u64;
            if t >= lag && copy {
                src[t - lag]
            } else {
                fresh
            }
        })
        .collect();
    Ok((src, dst))
}

struct User {
    id: String,
    group: usize,
    platform: &'static str,
    budget: usize,
}

/// Per-post draft before timestamps: (user index, narrative).
type Draft = (usize, usize);

pub fn gen_planted_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let groups = config.groups();
    let bridge_group = (config.bridge_users > 0).then_some(config.communities);
    let group_platform = |g: usize| if g % 2 == 0 { PLATFORM_A } else { PLATFORM_B };
    let other = |p: &str| if p == PLATFORM_A { PLATFORM_B } else { PLATFORM_A };

    let mut users = Vec::with_capacity(config.num_users());
    for g in 0..config.communities {
        for _ in 0..config.users_per_community {
            users.push((g, group_platform(g)));
        }
    }
    let on_a = (config.bridge_mix * config.bridge_users as f64).round() as usize;
    for i in 0..config.bridge_users {
        users.push((config.communities, if i < on_a { PLATFORM_A } else { PLATFORM_B }));
    }
    let mut users: Vec<User> = users
        .into_iter()
        .enumerate()
        .map(|(i, (group, platform))| User {
            id: format!("u{i:05}"),
            group,
            platform,
            budget: config.posts_per_user,
        })
        .collect();

    let home: Vec<usize> = (0..config.narratives).map(|n| n % groups).collect();
    let origin: Vec<&'static str> = (0..config.narratives)
        .map(|n| {
            if Some(home[n]) == bridge_group {
                if (n / groups) % 2 == 0 {
                    PLATFORM_A
                } else {
                    PLATFORM_B
                }
            } else {
                group_platform(home[n])
            }
        })
        .collect();
    let n_migrated = (config.migration_fraction * config.narratives as f64).round() as usize;
    let mut order: Vec<usize> = (0..config.narratives).collect();
    order.shuffle(&mut rng);
    let mut migrated = vec![false; config.narratives];
    for &n in &order[..n_migrated] {
        migrated[n] = true;
    }
    let migrated_list: Vec<usize> = (0..config.narratives).filter(|&n| migrated[n]).collect();
    let n_bridge_intro = if bridge_group.is_some() {
        (config.introducer_share * n_migrated as f64).round() as usize
    } else {
        0
    };
    let mut intro_order = migrated_list.clone();
    intro_order.shuffle(&mut rng);
    let bridge_intro: BTreeSet<usize> = intro_order[..n_bridge_intro].iter().copied().collect();

    let by_platform = |users: &[User], plat: &str, bridge: bool| -> Vec<usize> {
        (0..users.len())
            .filter(|&i| users[i].platform == plat && (Some(users[i].group) == bridge_group) == bridge)
            .collect()
    };
    // Receiving-platform posts of migrated narratives come first, the
    // introducer leading.
    let mut receiving: BTreeMap<usize, Vec<Draft>> = BTreeMap::new();
    let mut introducer: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in &migrated_list {
        let recv = other(origin[n]);
        let bridges = by_platform(&users, recv, true);
        let locals: Vec<usize> = by_platform(&users, recv, false)
            .into_iter()
            .filter(|&i| users[i].group != home[n])
            .collect();
        let pool_first = if bridge_intro.contains(&n) { &bridges } else { &locals };
        let pick = |rng: &mut ChaCha8Rng, pool: &[usize], users: &[User]| -> Option<usize> {
            let open: Vec<usize> = pool.iter().copied().filter(|&i| users[i].budget > 1).collect();
            open.choose(rng).copied()
        };
        let first = pick(&mut rng, pool_first, &users).ok_or_else(|| {
            Error::InvalidParam(format!("synth: no {recv} user with spare posts to introduce narrative {n}"))
        })?;
        users[first].budget -= 1;
        introducer.insert(n, first);
        let mut drafts = vec![(first, n)];
        for _ in 1..config.migration_posts {
            let pool = if bridges.is_empty() || (!locals.is_empty() && rng.random::<bool>()) { &locals } else { &bridges };
            let u = pick(&mut rng, pool, &users)
                .or_else(|| pick(&mut rng, if pool == &locals { &bridges } else { &locals }, &users))
                .ok_or_else(|| Error::InvalidParam(format!("synth: not enough {recv} posts for migrated narrative {n}")))?;
            users[u].budget -= 1;
            drafts.push((u, n));
        }
        receiving.insert(n, drafts);
    }

    let pools: Vec<Vec<usize>> = (0..groups).map(|g| (0..config.narratives).filter(|&n| home[n] == g).collect()).collect();
    let mut drafts: Vec<Draft> = Vec::with_capacity(config.num_posts());
    for (i, u) in users.iter().enumerate() {
        for _ in 0..u.budget {
            let cross = Some(u.group) == bridge_group && groups > 1 && rng.random::<f64>() < config.bridge_cross;
            let n = if cross {
                let g = loop {
                    let g = rng.random_range(0..groups);
                    if g != u.group {
                        break g;
                    }
                };
                *pools[g].choose(&mut rng).unwrap()
            } else {
                *pools[u.group].choose(&mut rng).unwrap()
            };
            drafts.push((i, n));
        }
    }
    for d in receiving.values().flatten() {
        drafts.push(*d);
    }

    // Timestamps per narrative.
    let mut per_narrative: Vec<Vec<usize>> = vec![Vec::new(); config.narratives];
    for (j, &(_, n)) in drafts.iter().enumerate() {
        per_narrative[n].push(j);
    }
    let mut ts = vec![0i64; drafts.len()];
    let mut truths = Vec::with_capacity(config.narratives);
    for n in 0..config.narratives {
        let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1_000_000 + n as u64));
        let start = BASE_TS + n as i64 * config.stagger_hours * HOUR;
        let posts = &per_narrative[n];
        let seeder_post = *posts
            .iter()
            .find(|&&j| users[drafts[j].0].platform == origin[n])
            .ok_or_else(|| Error::InvalidParam(format!("synth: narrative {n} has no posts on its origin platform")))?;
        let seeder = users[drafts[seeder_post].0].id.clone();
        let mut truth = NarrativeTruth {
            narrative: n,
            community: home[n],
            origin: origin[n].to_string(),
            migrated: migrated[n],
            receiving: None,
            seeder,
            first_introducer: None,
            bridge_introduced: bridge_intro.contains(&n),
        };
        if migrated[n] {
            let recv = other(origin[n]);
            let intro_user = introducer[&n];
            let intro_post = *posts
                .iter()
                .find(|&&j| drafts[j].0 == intro_user && users[intro_user].platform == recv)
                .unwrap();
            let org: Vec<usize> = posts
                .iter()
                .copied()
                .filter(|&j| j != seeder_post && users[drafts[j].0].platform == origin[n])
                .collect();
            let rec: Vec<usize> = posts
                .iter()
                .copied()
                .filter(|&j| j != intro_post && users[drafts[j].0].platform == recv)
                .collect();
            // Origin activity is stationary from the seed hour on; the
            // receiving platform stays silent for `quiet_hours`.
            let quiet = config.quiet_hours as usize;
            let max_len = quiet + 2 * (rec.len() + 1) + config.lag + 2;
            let (mut src, mut dst) =
                gen_coupled_series(max_len, config.lag, config.strength, derive_seed(config.seed, 2_000_000 + n as u64))?;
            src[0] = 1;
            dst[..quiet].iter_mut().for_each(|d| *d = 0);
            let mut len = 1;
            let (mut s1, mut d1) = (0, 0);
            for t in 1..max_len {
                let (s, d) = (s1 + src[t] as usize, d1 + dst[t] as usize);
                if s > org.len() || d > rec.len() + 1 {
                    break;
                }
                (s1, d1, len) = (s, d, t + 1);
            }
            let src_hours: Vec<i64> = (1..len).filter(|&t| src[t] == 1).map(|t| t as i64).collect();
            let mut dst_hours: Vec<i64> = (quiet..len).filter(|&t| dst[t] == 1).map(|t| t as i64).collect();
            if dst_hours.is_empty() {
                dst_hours.push(quiet as i64);
            }
            ts[seeder_post] = start;
            ts[intro_post] = start + dst_hours[0] * HOUR;
            place(&org, &src_hours, start, &mut ts, &mut nrng);
            let mut rest = rec.clone();
            rest.shuffle(&mut nrng);
            let (cover, extra) = rest.split_at((dst_hours.len() - 1).min(rest.len()));
            for (&j, &h) in cover.iter().zip(&dst_hours[1..]) {
                ts[j] = start + h * HOUR + nrng.random_range(1..HOUR);
            }
            for &j in extra {
                let h = *dst_hours.choose(&mut nrng).unwrap();
                ts[j] = start + h * HOUR + nrng.random_range(1..HOUR);
            }
            truth.receiving = Some(recv.to_string());
            truth.first_introducer = Some(users[intro_user].id.clone());
        } else {
            let span = config.quiet_hours + 2 * config.migration_posts as i64;
            let mut first_seen = BTreeSet::new();
            for &j in posts {
                let plat = users[drafts[j].0].platform;
                ts[j] = if j == seeder_post {
                    start
                } else if first_seen.insert(plat) && plat != origin[n] {
                    start + nrng.random_range(1..HOUR)
                } else {
                    start + nrng.random_range(1..span * HOUR)
                };
            }
        }
        truths.push(truth);
    }

    let centers = centroids(&mut rng, config.narratives, config.dim, 2.0 * DEFAULT_LAMBDA)?;
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.sort_by_key(|&j| (ts[j], drafts[j].0, j));
    let mut records = Vec::with_capacity(drafts.len());
    let mut rows = Vec::with_capacity(drafts.len());
    let mut post_narrative = BTreeMap::new();
    let sigma = config.noise / (config.dim as f64).sqrt();
    let mut erng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xE6A6));
    let reach_dist = LogNormal::new(1.5, 1.0).unwrap();
    let reach: Vec<f64> = users.iter().map(|_| reach_dist.sample(&mut erng)).collect();
    let mut draw = |mean: f64| Poisson::new(mean.max(1e-3)).unwrap().sample(&mut erng) as u64;
    for (k, &j) in order.iter().enumerate() {
        let (u, n) = drafts[j];
        let id = format!("p{k:07}");
        let user = &users[u];
        let r = reach[u];
        records.push(
            PostRecord::new(id.clone(), user.id.clone(), user.platform, ts[j], format!("narrative{n} tok{}", rng.random_range(0..1000)))
                .with_engagement(draw(r), draw(r / 4.0), draw(r / 3.0)),
        );
        let v: Vec<f64> = centers[n].iter().map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        rows.push((id.clone(), v.into_iter().map(|x| (x / norm) as f32).collect()));
        post_narrative.insert(id, n);
    }
    let posts = PostCollection::new(records)?;
    let embeddings = EmbeddingMatrix::from_rows(config.dim, rows)?;
    let truth = GroundTruth {
        community: users.iter().map(|u| (u.id.clone(), u.group)).collect(),
        bridge: users.iter().map(|u| (u.id.clone(), Some(u.group) == bridge_group)).collect(),
        platform: users.iter().map(|u| (u.id.clone(), u.platform.to_string())).collect(),
        narratives: truths,
        post_narrative,
        bridge_community: bridge_group,
    };
    validate_truth(config, &posts, &truth)?;
    Ok(SynthCorpus { posts, embeddings, truth })
}

/// One post per active hour, the rest spread over active hours.
fn place(posts: &[usize], hours: &[i64], base: i64, ts: &mut [i64], rng: &mut ChaCha8Rng) {
    let mut shuffled = posts.to_vec();
    shuffled.shuffle(rng);
    for (i, &j) in shuffled.iter().enumerate() {
        let h = if i < hours.len() {
            hours[i]
        } else if hours.is_empty() {
            0
        } else {
            *hours.choose(rng).unwrap()
        };
        ts[j] = base + h * HOUR + rng.random_range(1..HOUR);
    }
}

/// Checks every planted fact against the emitted posts.
pub fn validate_truth(config: &SynthConfig, posts: &PostCollection, truth: &GroundTruth) -> Result<()> {
    let fail = |m: String| Err(Error::GroundTruth(m));
    if posts.num_users() != config.num_users() || posts.len() != config.num_posts() {
        return fail(format!("expected {} users / {} posts", config.num_users(), config.num_posts()));
    }
    for (user, idx) in posts.user_index() {
        if idx.len() != config.posts_per_user {
            return fail(format!("user {user} has {} posts", idx.len()));
        }
        if idx.iter().any(|&i| posts.posts()[i].platform != truth.platform[user]) {
            return fail(format!("user {user} posts on more than one platform"));
        }
    }
    let mut first: Vec<BTreeMap<&str, (i64, &str)>> = vec![BTreeMap::new(); truth.narratives.len()];
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); truth.narratives.len()];
    for p in posts.posts() {
        let n = truth.post_narrative[&p.post_id];
        let e = first[n].entry(p.platform.as_str()).or_insert((p.ts, p.user_id.as_str()));
        if p.ts < e.0 {
            *e = (p.ts, p.user_id.as_str());
        }
        *counts[n].entry(p.platform.as_str()).or_default() += 1;
    }
    for nt in &truth.narratives {
        let f = &first[nt.narrative];
        let Some(&(t0, seeder)) = f.get(nt.origin.as_str()) else {
            return fail(format!("narrative {} has no origin posts", nt.narrative));
        };
        if seeder != nt.seeder || f.values().any(|&(t, _)| t < t0) {
            return fail(format!("narrative {} seeder is not the first poster", nt.narrative));
        }
        match (&nt.receiving, nt.migrated) {
            (Some(r), true) => {
                let Some(&(t1, intro)) = f.get(r.as_str()) else {
                    return fail(format!("narrative {} never reaches {r}", nt.narrative));
                };
                if t1 - t0 < config.quiet_hours * HOUR || Some(intro) != nt.first_introducer.as_deref() {
                    return fail(format!("narrative {} migration timing or introducer", nt.narrative));
                }
                if counts[nt.narrative][r.as_str()] < config.migration_posts {
                    return fail(format!("narrative {} has too few receiving posts", nt.narrative));
                }
                if nt.bridge_introduced != truth.bridge[intro] {
                    return fail(format!("narrative {} introducer bridge flag", nt.narrative));
                }
            }
            (None, false) => {
                if f.values().any(|&(t, _)| t - t0 >= HOUR) {
                    return fail(format!("narrative {} starts late on some platform", nt.narrative));
                }
            }
            _ => return fail(format!("narrative {} inconsistent migration flags", nt.narrative)),
        }
    }
    Ok(())
}

/// Writes posts.jsonl, embeddings.bin, ground_truth.json and labels.tsv.
pub fn write_synth(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_posts(&corpus.posts, dir.join("posts.jsonl"))?;
    write_embeddings(&corpus.embeddings, dir.join("embeddings.bin"))?;
    let gt = dir.join("ground_truth.json");
    fs::write(&gt, serde_json::to_string_pretty(&corpus.truth)?).map_err(|e| Error::io(&gt, e))?;
    let lp = dir.join("labels.tsv");
    let mut labels = String::from("user_id\tlabel\n");
    for (u, l) in corpus.truth.labels() {
        labels.push_str(&format!("{u}\t{l}\n"));
    }
    fs::write(&lp, labels).map_err(|e| Error::io(&lp, e))
}
