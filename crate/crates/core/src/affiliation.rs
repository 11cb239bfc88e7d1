//! User × cluster participation counts and affiliation weighting.
//!
//! The default `tfidf` scheme weighs a user's share of posts in a cluster by
//! how distinctive the cluster is: `w = (n_uc / N_u) · ln(|U| / df_c)` with
//! `df_c` the number of distinct users who posted in `c`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::corpus::PostCollection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse row: `(cluster, value)` sorted by cluster.
pub type SparseRow<T> = Vec<(usize, T)>;

#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub users: Vec<String>,
    pub rows: Vec<SparseRow<u64>>,
    pub totals: Vec<u64>,
    /// Distinct users per cluster.
    pub df: Vec<usize>,
    pub num_clusters: usize,
}

impl CountMatrix {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }
}

/// Counts posts per (user, cluster) using the model's assignments.
pub fn count_matrix<S: Scalar>(posts: &PostCollection, model: &ClusterModel<S>) -> Result<CountMatrix> {
    if posts.is_empty() {
        return Err(Error::Empty("no posts to count".into()));
    }
    let num_clusters = model.num_clusters();
    let mut users = Vec::with_capacity(posts.num_users());
    let mut rows = Vec::with_capacity(posts.num_users());
    let mut totals = Vec::with_capacity(posts.num_users());
    let mut df = vec![0usize; num_clusters];
    for (user, idx) in posts.user_index() {
        let mut row: BTreeMap<usize, u64> = BTreeMap::new();
        for &i in idx {
            let pid = &posts.posts()[i].post_id;
            let c = model
                .cluster_of(pid)
                .ok_or_else(|| Error::InvalidParam(format!("post `{pid}` has no cluster assignment")))?;
            *row.entry(c).or_insert(0) += 1;
        }
        for &c in row.keys() {
            df[c] += 1;
        }
        users.push(user.clone());
        totals.push(idx.len() as u64);
        rows.push(row.into_iter().collect());
    }
    Ok(CountMatrix {
        users,
        rows,
        totals,
        df,
        num_clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Tfidf,
    Raw,
    Softmax,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf" => Ok(Scheme::Tfidf),
            "raw" => Ok(Scheme::Raw),
            "softmax" => Ok(Scheme::Softmax),
            _ => Err(Error::Unknown {
                kind: "weighting scheme",
                name: s.into(),
            }),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Tfidf => "tfidf",
            Scheme::Raw => "raw",
            Scheme::Softmax => "softmax",
        })
    }
}

/// Per-user sparse affiliation vectors, users in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffiliationMatrix {
    pub users: Vec<String>,
    pub rows: Vec<SparseRow<f64>>,
    pub num_clusters: usize,
    pub scheme: Scheme,
}

impl AffiliationMatrix {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn row_of(&self, user: &str) -> Option<&SparseRow<f64>> {
        self.users
            .binary_search_by(|u| u.as_str().cmp(user))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| sparse_norm(r)).collect()
    }
}

pub fn weight_matrix(counts: &CountMatrix, scheme: Scheme) -> AffiliationMatrix {
    let n_users = counts.num_users() as f64;
    weight_with_df(counts, scheme, &counts.df, n_users)
}

/// Like [`weight_matrix`] but with externally supplied document frequencies
/// (used for global IDF in temporal windows).
pub fn weight_with_df(counts: &CountMatrix, scheme: Scheme, df: &[usize], n_users: f64) -> AffiliationMatrix {
    let rows = counts
        .rows
        .iter()
        .zip(&counts.totals)
        .map(|(row, &total)| match scheme {
            Scheme::Raw => row.iter().map(|&(c, n)| (c, n as f64)).collect(),
            Scheme::Tfidf => row
                .iter()
                .filter_map(|&(c, n)| {
                    let w = (n as f64 / total as f64) * (n_users / df[c] as f64).ln();
                    (w > 0.0).then_some((c, w))
                })
                .collect(),
            Scheme::Softmax => {
                let max = row.iter().map(|&(_, n)| n).max().unwrap_or(0) as f64;
                let exps: Vec<f64> = row.iter().map(|&(_, n)| (n as f64 - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                row.iter().zip(exps).map(|(&(c, _), e)| (c, e / z)).collect()
            }
        })
        .collect();
    AffiliationMatrix {
        users: counts.users.clone(),
        rows,
        num_clusters: counts.num_clusters,
        scheme,
    }
}

pub fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

pub fn sparse_norm(a: &[(usize, f64)]) -> f64 {
    a.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

/// Cosine similarity of two sparse rows; 0 when either is all-zero.
pub fn sparse_cosine(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (na, nb) = (sparse_norm(a), sparse_norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (sparse_dot(a, b) / (na * nb)).clamp(0.0, 1.0)
}

pub fn write_affiliation(m: &AffiliationMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (u, row) in m.users.iter().zip(&m.rows) {
        for (c, wt) in row {
            writeln!(w, "{u}\t{c}\t{wt}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a weight TSV. Users with no stored weights cannot be represented
/// in the file format, so `users` supplies the full row set.
pub fn read_affiliation(
    path: impl AsRef<Path>,
    users: &[String],
    num_clusters: usize,
    scheme: Scheme,
) -> Result<AffiliationMatrix> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map: BTreeMap<String, SparseRow<f64>> = users.iter().map(|u| (u.clone(), Vec::new())).collect();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: n + 1,
            msg: format!("expected user<TAB>cluster<TAB>weight, got `{line}`"),
        };
        let mut it = line.split('\t');
        let (u, c, w) = (it.next().ok_or_else(bad)?, it.next().ok_or_else(bad)?, it.next().ok_or_else(bad)?);
        let c: usize = c.parse().map_err(|_| bad())?;
        let w: f64 = w.parse().map_err(|_| bad())?;
        map.entry(u.to_string()).or_default().push((c, w));
    }
    let (users, rows): (Vec<_>, Vec<_>) = map
        .into_iter()
        .map(|(u, mut r)| {
            r.sort_by_key(|&(c, _)| c);
            (u, r)
        })
        .unzip();
    Ok(AffiliationMatrix {
        users,
        rows,
        num_clusters,
        scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterParams;
    use crate::corpus::PostRecord;
    use proptest::prelude::*;

    /// Builds posts + a model from `(user, cluster)` pairs.
    fn fixture(pairs: &[(&str, usize)]) -> (PostCollection, ClusterModel<f64>) {
        let k = pairs.iter().map(|p| p.1).max().unwrap() + 1;
        let posts: Vec<PostRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, (u, _))| PostRecord::new(format!("p{i:04}"), *u, "x", i as i64, "t"))
            .collect();
        let assign = pairs
            .iter()
            .enumerate()
            .map(|(i, (_, c))| (format!("p{i:04}"), *c))
            .collect();
        let centroids = (0..k).map(|_| vec![1.0]).collect();
        let model = ClusterModel::from_parts(1, centroids, assign, ClusterParams::default(), 0.0).unwrap();
        (PostCollection::new(posts).unwrap(), model)
    }

    #[test]
    fn counts_by_hand() {
        let (posts, model) = fixture(&[("A", 1), ("A", 1), ("A", 2), ("B", 2), ("B", 0)]);
        let m = count_matrix(&posts, &model).unwrap();
        assert_eq!(m.users, vec!["A", "B"]);
        assert_eq!(m.rows[0], vec![(1, 2), (2, 1)]);
        assert_eq!(m.totals[0], 3);
        assert_eq!(m.df, vec![1, 1, 2]);
    }

    #[test]
    fn missing_assignment_and_empty() {
        let (posts, model) = fixture(&[("A", 0)]);
        let extra = PostCollection::new(vec![PostRecord::new("zz", "A", "x", 0, "t")]).unwrap();
        assert!(count_matrix(&extra, &model).is_err());
        let empty = posts.retain(|_| false);
        assert!(count_matrix(&empty, &model).is_err());
    }

    /// 4 users; everyone touches cluster 2.
    fn four_user_fixture() -> CountMatrix {
        let (posts, model) = fixture(&[
            ("A", 0),
            ("A", 0),
            ("A", 1),
            ("A", 1),
            ("B", 0),
            ("B", 2),
            ("C", 2),
            ("D", 2),
            ("A", 2),
        ]);
        count_matrix(&posts, &model).unwrap()
    }

    #[test]
    fn tfidf_hand_value() {
        // |U| = 4, n_A0 = 2, N_A = 4, df_0 = 2
        let (posts, model) = fixture(&[("A", 0), ("A", 0), ("A", 1), ("A", 1), ("B", 0), ("C", 2), ("D", 2)]);
        let counts = count_matrix(&posts, &model).unwrap();
        assert_eq!(counts.num_users(), 4);
        assert_eq!(counts.totals[0], 4);
        assert_eq!(counts.df[0], 2);
        let w = weight_matrix(&counts, Scheme::Tfidf);
        let a0 = w.rows[0].iter().find(|(c, _)| *c == 0).unwrap().1;
        assert!((a0 - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((a0 - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn ubiquitous_cluster_has_zero_weight() {
        let counts = four_user_fixture();
        assert_eq!(counts.df[2], 4);
        let w = weight_matrix(&counts, Scheme::Tfidf);
        assert!(w.rows.iter().all(|r| r.iter().all(|(c, _)| *c != 2)));
    }

    #[test]
    fn raw_equals_counts() {
        let counts = four_user_fixture();
        let w = weight_matrix(&counts, Scheme::Raw);
        for (r, cr) in w.rows.iter().zip(&counts.rows) {
            let as_f: Vec<(usize, f64)> = cr.iter().map(|&(c, n)| (c, n as f64)).collect();
            assert_eq!(r, &as_f);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let counts = four_user_fixture();
        let w = weight_matrix(&counts, Scheme::Softmax);
        for r in &w.rows {
            let s: f64 = r.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!("bogus".parse::<Scheme>().is_err());
    }

    #[test]
    fn tfidf_strictly_decreasing_in_df() {
        let n_users = 6usize;
        let mut prev = f64::INFINITY;
        for df in 1..=n_users {
            let counts = CountMatrix {
                users: vec!["u".into()],
                rows: vec![vec![(0, 3)]],
                totals: vec![5],
                df: vec![df],
                num_clusters: 1,
            };
            let w = weight_with_df(&counts, Scheme::Tfidf, &[df], n_users as f64);
            let v = w.rows[0].first().map(|x| x.1).unwrap_or(0.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn tsv_round_trip() {
        let w = weight_matrix(&four_user_fixture(), Scheme::Tfidf);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tsv");
        write_affiliation(&w, &p).unwrap();
        let back = read_affiliation(&p, &w.users, w.num_clusters, Scheme::Tfidf).unwrap();
        assert_eq!(back, w);
    }

    proptest! {
        #[test]
        fn tfidf_invariant_under_duplication(pairs in proptest::collection::vec((0usize..5, 0usize..4), 2..30)) {
            let names = ["a", "b", "c", "d", "e"];
            let base: Vec<(&str, usize)> = pairs.iter().map(|&(u, c)| (names[u], c)).collect();
            let doubled: Vec<(&str, usize)> = base.iter().chain(base.iter()).copied().collect();
            let (p1, m1) = fixture(&base);
            let (p2, m2) = fixture(&doubled);
            let w1 = weight_matrix(&count_matrix(&p1, &m1).unwrap(), Scheme::Tfidf);
            let w2 = weight_matrix(&count_matrix(&p2, &m2).unwrap(), Scheme::Tfidf);
            prop_assert_eq!(&w1.users, &w2.users);
            for (r1, r2) in w1.rows.iter().zip(&w2.rows) {
                prop_assert_eq!(r1.len(), r2.len());
                for (a, b) in r1.iter().zip(r2) {
                    prop_assert_eq!(a.0, b.0);
                    prop_assert!((a.1 - b.1).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn tfidf_pattern_is_counts_minus_ubiquitous(pairs in proptest::collection::vec((0usize..5, 0usize..4), 2..30)) {
            let names = ["a", "b", "c", "d", "e"];
            let base: Vec<(&str, usize)> = pairs.iter().map(|&(u, c)| (names[u], c)).collect();
            let (p, m) = fixture(&base);
            let counts = count_matrix(&p, &m).unwrap();
            let w = weight_matrix(&counts, Scheme::Tfidf);
            for (r, cr) in w.rows.iter().zip(&counts.rows) {
                let expect: Vec<usize> = cr.iter().map(|x| x.0).filter(|&c| counts.df[c] < counts.num_users()).collect();
                let got: Vec<usize> = r.iter().map(|x| x.0).collect();
                prop_assert_eq!(got, expect);
                prop_assert!(r.iter().all(|x| x.1.is_finite() && x.1 >= 0.0));
            }
        }
    }
}
