//! Post corpus: loading, text normalization, activity filtering and
//! cross-platform username de-duplication.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One post as stored in `posts.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PostLine {
    id: String,
    user: String,
    platform: String,
    ts: i64,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    likes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replies: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reposts: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostRecord {
    pub post_id: String,
    pub user_id: String,
    pub platform: String,
    /// Unix seconds, UTC.
    pub ts: i64,
    pub text_raw: String,
    pub text_norm: String,
    pub likes: Option<u64>,
    pub replies: Option<u64>,
    pub reposts: Option<u64>,
}

impl PostRecord {
    pub fn new(
        post_id: impl Into<String>,
        user_id: impl Into<String>,
        platform: impl Into<String>,
        ts: i64,
        text: impl Into<String>,
    ) -> Self {
        let text_raw = text.into();
        PostRecord {
            post_id: post_id.into(),
            user_id: user_id.into(),
            platform: platform.into(),
            ts,
            text_norm: normalize_text(&text_raw),
            text_raw,
            likes: None,
            replies: None,
            reposts: None,
        }
    }

    pub fn with_engagement(mut self, likes: u64, replies: u64, reposts: u64) -> Self {
        self.likes = Some(likes);
        self.replies = Some(replies);
        self.reposts = Some(reposts);
        self
    }

    fn from_line(line: PostLine) -> Self {
        PostRecord {
            text_norm: normalize_text(&line.text),
            post_id: line.id,
            user_id: line.user,
            platform: line.platform,
            ts: line.ts,
            text_raw: line.text,
            likes: line.likes,
            replies: line.replies,
            reposts: line.reposts,
        }
    }

    fn to_line(&self) -> PostLine {
        PostLine {
            id: self.post_id.clone(),
            user: self.user_id.clone(),
            platform: self.platform.clone(),
            ts: self.ts,
            text: self.text_raw.clone(),
            likes: self.likes,
            replies: self.replies,
            reposts: self.reposts,
        }
    }
}

/// An immutable, file-ordered collection of posts with a user index.
#[derive(Debug, Clone, PartialEq)]
pub struct PostCollection {
    posts: Vec<PostRecord>,
    platforms: Vec<String>,
    user_index: BTreeMap<String, Vec<usize>>,
}

impl PostCollection {
    /// Builds a collection, rejecting duplicate ids and negative timestamps.
    pub fn new(posts: Vec<PostRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(posts.len());
        let mut platforms = BTreeSet::new();
        let mut user_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in posts.iter().enumerate() {
            if !seen.insert(p.post_id.as_str()) {
                return Err(Error::DuplicatePostId(p.post_id.clone()));
            }
            if p.ts < 0 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("negative timestamp {}", p.ts),
                });
            }
            platforms.insert(p.platform.clone());
            user_index.entry(p.user_id.clone()).or_default().push(i);
        }
        Ok(PostCollection {
            posts,
            platforms: platforms.into_iter().collect(),
            user_index,
        })
    }

    pub fn posts(&self) -> &[PostRecord] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Sorted platform labels present in the corpus.
    pub fn platforms(&self) -> &[String] {
        &self.platforms
    }

    /// Users in sorted id order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    pub fn num_users(&self) -> usize {
        self.user_index.len()
    }

    /// Post indices of `user`, in file order.
    pub fn user_posts(&self, user: &str) -> &[usize] {
        self.user_index.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn user_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.user_index
    }

    /// Platform of each user, taken from the user's first post.
    pub fn user_platforms(&self) -> BTreeMap<String, String> {
        self.user_index
            .iter()
            .map(|(u, idx)| (u.clone(), self.posts[idx[0]].platform.clone()))
            .collect()
    }

    pub fn counts_by_platform(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in &self.posts {
            *out.entry(p.platform.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn time_range(&self) -> Option<(i64, i64)> {
        let min = self.posts.iter().map(|p| p.ts).min()?;
        let max = self.posts.iter().map(|p| p.ts).max()?;
        Some((min, max))
    }

    /// Keeps posts for which `keep` holds, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&PostRecord) -> bool) -> PostCollection {
        let posts: Vec<PostRecord> = self.posts.iter().filter(|p| keep(p)).cloned().collect();
        PostCollection::new(posts).expect("subset of a valid collection is valid")
    }

    pub fn into_posts(self) -> Vec<PostRecord> {
        self.posts
    }
}

/// Strips URLs, hashtags and mentions, then collapses whitespace.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for tok in raw.split_whitespace() {
        if is_artifact(tok) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

fn is_artifact(tok: &str) -> bool {
    let lower = tok.get(..8).map(str::to_ascii_lowercase).unwrap_or_default();
    if lower.starts_with("http://") || lower.starts_with("https://") {
        return true;
    }
    (tok.starts_with('#') || tok.starts_with('@')) && tok.len() > 1
}

pub fn parse_posts<R: BufRead>(reader: R) -> Result<PostCollection> {
    let lines: Vec<(usize, String)> = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io("<posts>", e))?;
    let posts: Vec<PostRecord> = lines
        .par_iter()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<PostLine>(l)
                .map(PostRecord::from_line)
                .map_err(|e| Error::Parse {
                    line: *n,
                    msg: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    PostCollection::new(posts)
}

pub fn load_posts(path: impl AsRef<Path>) -> Result<PostCollection> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let coll = parse_posts(BufReader::new(f))?;
    log::info!(
        "loaded {} posts from {} ({:?})",
        coll.len(),
        path.display(),
        coll.counts_by_platform()
    );
    Ok(coll)
}

pub fn write_posts(posts: &PostCollection, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for p in posts.posts() {
        serde_json::to_writer(&mut w, &p.to_line())?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Keeps only users with at least `min_posts` posts.
pub fn filter_min_activity(posts: &PostCollection, min_posts: usize) -> Result<PostCollection> {
    if min_posts == 0 {
        return Err(Error::InvalidParam("min_posts must be >= 1".into()));
    }
    let keep: HashSet<&str> = posts
        .user_index
        .iter()
        .filter(|(_, idx)| idx.len() >= min_posts)
        .map(|(u, _)| u.as_str())
        .collect();
    let out = posts.retain(|p| keep.contains(p.user_id.as_str()));
    if out.is_empty() {
        log::warn!("activity filter (min_posts={min_posts}) removed every post");
    }
    Ok(out)
}

/// Ratcliff/Obershelp similarity `2K / (|a| + |b|)` over characters.
///
/// Matching blocks are found the way `difflib.SequenceMatcher` does it
/// (without junk heuristics): the longest common block, earliest in `a`
/// then earliest in `b`, then recursion on both sides.
pub fn ratcliff_obershelp(a: &str, b: &str) -> f64 {
    // Block matching is order-dependent; fix the order so the score is symmetric.
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / total as f64
}

fn matched_chars(a: &[char], b: &[char]) -> usize {
    let mut stack = vec![(0, a.len(), 0, b.len())];
    let mut total = 0;
    let mut row = vec![0usize; b.len() + 1];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        let (i, j, k) = longest_match(a, b, alo, ahi, blo, bhi, &mut row);
        if k == 0 {
            continue;
        }
        total += k;
        stack.push((alo, i, blo, j));
        stack.push((i + k, ahi, j + k, bhi));
    }
    total
}

fn longest_match(
    a: &[char],
    b: &[char],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
    row: &mut [usize],
) -> (usize, usize, usize) {
    // row[j + 1] = length of the common suffix ending at a[i], b[j]
    let (mut bi, mut bj, mut best) = (alo, blo, 0);
    row.iter_mut().for_each(|x| *x = 0);
    for i in alo..ahi {
        let mut prev_diag = 0;
        for j in blo..bhi {
            let cur = row[j + 1];
            if a[i] == b[j] {
                let len = prev_diag + 1;
                row[j + 1] = len;
                let (si, sj) = (i + 1 - len, j + 1 - len);
                if len > best || (len == best && (si < bi || (si == bi && sj < bj))) {
                    best = len;
                    bi = si;
                    bj = sj;
                }
            } else {
                row[j + 1] = 0;
            }
            prev_diag = cur;
        }
    }
    (bi, bj, best)
}

/// A candidate duplicate account pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicatePair {
    pub user_a: String,
    pub user_b: String,
    pub similarity: f64,
}

/// Reports every cross-platform pair of `(user_id, platform)` entries whose
/// lowercased usernames reach `threshold` similarity.
pub fn dedup_usernames(users: &[(String, String)], threshold: f64) -> Result<Vec<DuplicatePair>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "dedup threshold {threshold} outside (0, 1]"
        )));
    }
    let lowered: Vec<Vec<char>> = users
        .iter()
        .map(|(u, _)| u.to_lowercase().chars().collect())
        .collect();
    let mut pairs: Vec<DuplicatePair> = (0..users.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let lowered = &lowered;
            (i + 1..users.len()).filter_map(move |j| {
                if users[i].1 == users[j].1 {
                    return None;
                }
                let (a, b) = (&lowered[i], &lowered[j]);
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                let total = a.len() + b.len();
                if total == 0 {
                    return None;
                }
                // upper bound: every char of the shorter string matched
                if 2.0 * a.len().min(b.len()) as f64 / (total as f64) < threshold {
                    return None;
                }
                let sim = 2.0 * matched_chars(a, b) as f64 / total as f64;
                (sim >= threshold).then(|| DuplicatePair {
                    user_a: users[i].0.clone(),
                    user_b: users[j].0.clone(),
                    similarity: sim,
                })
            })
        })
        .collect();
    pairs.sort_by(|x, y| (&x.user_a, &x.user_b).cmp(&(&y.user_a, &y.user_b)));
    Ok(pairs)
}

/// What to do with a flagged duplicate pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DedupPolicy {
    /// Drop the account with fewer posts (ties: the lexicographically larger id).
    #[default]
    DropFewer,
    DropBoth,
    /// Keep the account whose first post is earliest.
    KeepEarliest,
}

impl std::str::FromStr for DedupPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop-fewer" => Ok(DedupPolicy::DropFewer),
            "drop-both" => Ok(DedupPolicy::DropBoth),
            "keep-earliest" => Ok(DedupPolicy::KeepEarliest),
            _ => Err(Error::Unknown {
                kind: "dedup policy",
                name: s.into(),
            }),
        }
    }
}

/// Removes the accounts selected by `policy` from each flagged pair.
pub fn resolve_duplicates(
    posts: &PostCollection,
    pairs: &[DuplicatePair],
    policy: DedupPolicy,
) -> PostCollection {
    let first_ts: HashMap<&str, i64> = posts
        .user_index
        .iter()
        .map(|(u, idx)| (u.as_str(), idx.iter().map(|&i| posts.posts[i].ts).min().unwrap()))
        .collect();
    let mut drop: HashSet<String> = HashSet::new();
    for p in pairs {
        let (a, b) = (p.user_a.as_str(), p.user_b.as_str());
        match policy {
            DedupPolicy::DropBoth => {
                drop.insert(a.into());
                drop.insert(b.into());
            }
            DedupPolicy::DropFewer => {
                let (na, nb) = (posts.user_posts(a).len(), posts.user_posts(b).len());
                let loser = if na < nb || (na == nb && a > b) { a } else { b };
                drop.insert(loser.into());
            }
            DedupPolicy::KeepEarliest => {
                let ta = first_ts.get(a).copied().unwrap_or(i64::MAX);
                let tb = first_ts.get(b).copied().unwrap_or(i64::MAX);
                let loser = if (ta, a) <= (tb, b) { b } else { a };
                drop.insert(loser.into());
            }
        }
    }
    posts.retain(|p| !drop.contains(&p.user_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> &'static str {
        concat!(
            r#"{"id":"a","user":"u1","platform":"x","ts":10,"text":"vote now https://a.b/c"}"#,
            "\n",
            r#"{"id":"b","user":"u2","platform":"truthsocial","ts":20,"text":"@joe hi","likes":3}"#,
            "\n",
            r#"{"id":"c","user":"u1","platform":"x","ts":30,"text":"more"}"#,
            "\n"
        )
    }

    #[test]
    fn parses_three_lines() {
        let c = parse_posts(sample().as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        let counts = c.counts_by_platform();
        assert_eq!(counts["x"], 2);
        assert_eq!(counts["truthsocial"], 1);
        assert_eq!(c.posts()[0].text_norm, "vote now");
        assert_eq!(c.posts()[1].likes, Some(3));
        assert_eq!(c.user_posts("u1"), &[0, 2]);
    }

    #[test]
    fn duplicate_id_is_fatal() {
        let s = concat!(
            r#"{"id":"a","user":"u1","platform":"x","ts":1,"text":""}"#,
            "\n",
            r#"{"id":"a","user":"u2","platform":"x","ts":2,"text":""}"#
        );
        match parse_posts(s.as_bytes()) {
            Err(Error::DuplicatePostId(id)) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_names_line() {
        let s = concat!(
            r#"{"id":"a","user":"u1","platform":"x","ts":1,"text":""}"#,
            "\n",
            r#"{"id":"b","user":"u1","platform":"x","ts":"yesterday","text":""}"#
        );
        match parse_posts(s.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_fatal() {
        let s = r#"{"id":"a","platform":"x","ts":1,"text":""}"#;
        assert!(matches!(parse_posts(s.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_text("vote now https://a.b/c"), "vote now");
        assert_eq!(normalize_text("@joe #maga   hello"), "hello");
        assert_eq!(normalize_text("  plain  text "), "plain text");
        assert_eq!(normalize_text("HTTPS://X.Y z"), "z");
        assert_eq!(normalize_text("# alone"), "# alone");
    }

    #[test]
    fn activity_filter_boundaries() {
        let mut posts = Vec::new();
        for i in 0..5 {
            posts.push(PostRecord::new(format!("a{i}"), "five", "x", i, "t"));
        }
        for i in 0..4 {
            posts.push(PostRecord::new(format!("b{i}"), "four", "x", i, "t"));
        }
        let c = PostCollection::new(posts).unwrap();
        let f = filter_min_activity(&c, 5).unwrap();
        assert_eq!(f.users().collect::<Vec<_>>(), vec!["five"]);
        assert_eq!(filter_min_activity(&c, 1).unwrap(), c);
        assert!(filter_min_activity(&c, 0).is_err());
        assert!(filter_min_activity(&c, 6).unwrap().is_empty());
    }

    #[test]
    fn ratcliff_examples() {
        assert_eq!(ratcliff_obershelp("maga_dad", "maga_dad"), 1.0);
        assert_eq!(ratcliff_obershelp("abcd", "bcde"), 0.75);
        assert_eq!(ratcliff_obershelp("aaaa", "zzzz"), 0.0);
        // difflib: SequenceMatcher(None, "abxcd", "abcd").ratio() == 8/9
        assert!((ratcliff_obershelp("abxcd", "abcd") - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn dedup_is_cross_platform_and_case_insensitive() {
        let users = vec![
            ("Maga_Dad".to_string(), "x".to_string()),
            ("maga_dad".to_string(), "truthsocial".to_string()),
            ("maga_dad2".to_string(), "x".to_string()),
            ("zzzz".to_string(), "truthsocial".to_string()),
        ];
        let pairs = dedup_usernames(&users, 0.7).unwrap();
        // the two x accounts are never compared with each other
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().any(|p| p.user_a == "Maga_Dad" && p.similarity == 1.0));
        assert!(dedup_usernames(&users, 0.0).is_err());
    }

    #[test]
    fn resolve_policies() {
        let posts = PostCollection::new(vec![
            PostRecord::new("1", "big", "x", 5, "t"),
            PostRecord::new("2", "big", "x", 6, "t"),
            PostRecord::new("3", "bigg", "truthsocial", 1, "t"),
        ])
        .unwrap();
        let pairs = vec![DuplicatePair {
            user_a: "big".into(),
            user_b: "bigg".into(),
            similarity: 0.9,
        }];
        let fewer = resolve_duplicates(&posts, &pairs, DedupPolicy::DropFewer);
        assert_eq!(fewer.users().collect::<Vec<_>>(), vec!["big"]);
        let early = resolve_duplicates(&posts, &pairs, DedupPolicy::KeepEarliest);
        assert_eq!(early.users().collect::<Vec<_>>(), vec!["bigg"]);
        assert!(resolve_duplicates(&posts, &pairs, DedupPolicy::DropBoth).is_empty());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[a-z#@: /.\\t]{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn ratcliff_symmetric_and_identity(a in "[a-d]{0,8}", b in "[a-d]{0,8}") {
            let ab = ratcliff_obershelp(&a, &b);
            let ba = ratcliff_obershelp(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn jsonl_round_trip(
            rows in proptest::collection::vec(("[a-z ]{0,12}", 0i64..1_000_000, proptest::option::of(0u64..50)), 1..12)
        ) {
            let posts: Vec<PostRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, (t, ts, likes))| {
                    let mut p = PostRecord::new(format!("p{i}"), format!("u{}", i % 3), "x", *ts, t.clone());
                    p.likes = *likes;
                    p
                })
                .collect();
            let c = PostCollection::new(posts).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.jsonl");
            write_posts(&c, &path).unwrap();
            prop_assert_eq!(load_posts(&path).unwrap(), c);
        }
    }
}
