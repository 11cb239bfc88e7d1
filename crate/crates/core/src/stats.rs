//! Two-sample rank tests and nearest-neighbor matching.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `n_a * n_b` for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Pairs `(x in a, y in b)` with `x > y`, ties counting one half.
    pub u_a: f64,
    pub u_b: f64,
    pub p: f64,
    pub exact: bool,
}

/// Midranks of `values` (1-based).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mann-whitney needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidParam("samples contain NaN".into()));
    }
    Ok(())
}

/// Two-sided Mann–Whitney U test with midranks. Small samples
/// (`n_a·n_b ≤ 400`) use the exact permutation distribution of the
/// observed midranks, ties included; larger ones the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    check(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u_a = ra - (na * (na + 1)) as f64 / 2.0;
    let u_b = (na * nb) as f64 - u_a;
    let exact = na * nb <= EXACT_LIMIT;
    let p = if exact {
        exact_p(&ranks, na, u_a)
    } else {
        normal_p(&pooled, na, nb, u_a)
    };
    Ok(MannWhitney { u_a, u_b, p, exact })
}

/// Counts subsets of the doubled midranks by size and sum.
fn exact_p(ranks: &[f64], na: usize, u_a: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled-rank sum s
    let mut counts = vec![vec![0.0f64; max_sum + 1]; na + 1];
    counts[0][0] = 1.0;
    for &d in &doubled {
        for j in (1..=na).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            for s in (d..=max_sum).rev() {
                let c = lo[j - 1][s - d];
                if c != 0.0 {
                    hi[0][s] += c;
                }
            }
        }
    }
    let total: f64 = counts[na].iter().sum();
    let offset = na * (na + 1);
    let observed = (2.0 * u_a).round() as i64 + offset as i64;
    let (mut le, mut ge) = (0.0, 0.0);
    for (s, &c) in counts[na].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        if s as i64 <= observed {
            le += c;
        }
        if s as i64 >= observed {
            ge += c;
        }
    }
    (2.0 * le.min(ge) / total).min(1.0)
}

fn normal_p(pooled: &[f64], na: usize, nb: usize, u_a: f64) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    let n = na + nb;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let mean = na * nb / 2.0;
    let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Rank-biserial correlation `1 − 2·U_b/(n_a·n_b)`; positive when `a`
/// tends to be larger.
pub fn rank_biserial(a: &[f64], b: &[f64]) -> Result<f64> {
    let mw = mann_whitney(a, b)?;
    Ok(1.0 - 2.0 * mw.u_b / (a.len() * b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairs {
    /// `(treated id, control id, distance)` in selection order.
    pub pairs: Vec<(String, String, f64)>,
    pub features: Vec<String>,
    /// Features actually used (zero-variance ones are dropped).
    pub used: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Greedy nearest-neighbor matching without replacement on z-scored
/// features: all treated×pool distances in ascending order (ties by ids),
/// each treated user taking up to `k` controls.
pub fn match_nearest(treated: &[FeatureRow], pool: &[FeatureRow], features: &[String], k: usize) -> Result<MatchedPairs> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if pool.len() < treated.len() * k {
        return Err(Error::InvalidParam(format!(
            "pool of {} is too small for {} treated × k={k}",
            pool.len(),
            treated.len()
        )));
    }
    let d = features.len();
    if let Some(r) = treated.iter().chain(pool).find(|r| r.values.len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            got: r.values.len(),
        });
    }
    let n = (treated.len() + pool.len()) as f64;
    let all = || treated.iter().chain(pool);
    let means: Vec<f64> = (0..d).map(|j| all().map(|r| r.values[j]).sum::<f64>() / n).collect();
    let stds: Vec<f64> = (0..d)
        .map(|j| (all().map(|r| (r.values[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let used: Vec<usize> = (0..d)
        .filter(|&j| {
            let keep = stds[j] > 1e-12 * (1.0 + means[j].abs());
            if !keep {
                log::warn!("feature `{}` has zero variance; dropped from matching", features[j]);
            }
            keep
        })
        .collect();
    let z = |r: &FeatureRow| -> Vec<f64> { used.iter().map(|&j| (r.values[j] - means[j]) / stds[j]).collect() };
    let zt: Vec<Vec<f64>> = treated.iter().map(z).collect();
    let zp: Vec<Vec<f64>> = pool.iter().map(z).collect();
    let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(treated.len() * pool.len());
    for (i, a) in zt.iter().enumerate() {
        for (j, b) in zp.iter().enumerate() {
            let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            cands.push((dist, i, j));
        }
    }
    cands.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then_with(|| treated[x.1].id.cmp(&treated[y.1].id))
            .then_with(|| pool[x.2].id.cmp(&pool[y.2].id))
    });
    let mut taken = vec![0usize; treated.len()];
    let mut used_pool = vec![false; pool.len()];
    let mut pairs = Vec::new();
    for (dist, i, j) in cands {
        if taken[i] < k && !used_pool[j] {
            taken[i] += 1;
            used_pool[j] = true;
            pairs.push((treated[i].id.clone(), pool[j].id.clone(), dist));
        }
    }
    Ok(MatchedPairs {
        pairs,
        features: features.to_vec(),
        used,
        means,
        stds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    #[serde(rename = "U")]
    pub u: f64,
    pub p: f64,
    pub rank_biserial: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

/// Per-feature Mann–Whitney comparison of matched treated vs control rows.
pub fn compare_matched(
    matched: &MatchedPairs,
    treated: &[FeatureRow],
    pool: &[FeatureRow],
) -> Result<BTreeMap<String, MetricComparison>> {
    let t: BTreeMap<&str, &FeatureRow> = treated.iter().map(|r| (r.id.as_str(), r)).collect();
    let c: BTreeMap<&str, &FeatureRow> = pool.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = BTreeMap::new();
    for (j, name) in matched.features.iter().enumerate() {
        let a: Vec<f64> = matched.pairs.iter().map(|(x, _, _)| t[x.as_str()].values[j]).collect();
        let b: Vec<f64> = matched.pairs.iter().map(|(_, y, _)| c[y.as_str()].values[j]).collect();
        if a.is_empty() {
            continue;
        }
        let mw = mann_whitney(&a, &b)?;
        out.insert(
            name.clone(),
            MetricComparison {
                u: mw.u_a,
                p: mw.p,
                rank_biserial: 1.0 - 2.0 * mw.u_b / (a.len() * b.len()) as f64,
                n_treated: a.len(),
                n_control: b.len(),
            },
        );
    }
    Ok(out)
}

pub fn write_matched_report(report: &BTreeMap<String, MetricComparison>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-sided p by enumerating every split of the pooled sample.
    fn permutation_oracle(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let na = a.len();
        let u = |sel: &[bool]| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if sel[i] && !sel[j] {
                        s += if pooled[i] > pooled[j] {
                            1.0
                        } else if pooled[i] == pooled[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            s
        };
        let obs_sel: Vec<bool> = (0..n).map(|i| i < na).collect();
        let obs = u(&obs_sel);
        let (mut le, mut ge, mut total) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let sel: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let x = u(&sel);
            total += 1.0;
            if x <= obs + 1e-9 {
                le += 1.0;
            }
            if x >= obs - 1e-9 {
                ge += 1.0;
            }
        }
        (2.0 * f64::min(le, ge) / total).min(1.0)
    }

    #[test]
    fn separated_samples() {
        let mw = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mw.u_a, 0.0);
        assert!(mw.exact);
        // Only one of the 20 splits is this extreme on each side.
        assert!((mw.p - 2.0 / 20.0).abs() < 1e-12);
        assert!((mw.p - permutation_oracle(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])).abs() < 1e-12);
    }

    #[test]
    fn identical_samples() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let mw = mann_whitney(&a, &a).unwrap();
        assert_eq!(mw.u_a, 12.5);
        assert_eq!(mw.p, 1.0);
        assert_eq!(rank_biserial(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn tied_fixture_matches_permutation() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0];
        let b = [2.0, 3.0, 3.0, 4.0, 6.0, 6.0];
        let mw = mann_whitney(&a, &b).unwrap();
        assert!((mw.p - permutation_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn rank_biserial_examples() {
        assert_eq!(rank_biserial(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), -1.0);
        assert_eq!(rank_biserial(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        // U_b = 0.2·n_a·n_b with n_a = n_b = 5: a beats b in 20 of 25 pairs.
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 3.0, 5.0, 5.5, 0.0];
        let mw = mann_whitney(&a, &b).unwrap();
        assert_eq!(mw.u_b, 5.0);
        assert!((rank_biserial(&a, &b).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(mann_whitney(&[], &[1.0]).is_err());
        assert!(rank_biserial(&[1.0], &[]).is_err());
        assert!(mann_whitney(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn exact_and_normal_agree_at_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..30 {
            let shift = trial as f64 * 0.05;
            let a: Vec<f64> = (0..20).map(|_| rng.random::<f64>() + shift).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let mw = mann_whitney(&a, &b).unwrap();
            assert!(mw.exact);
            let approx = normal_p(&a.iter().chain(&b).copied().collect::<Vec<_>>(), 20, 20, mw.u_a);
            assert!((mw.p - approx).abs() <= 0.02, "trial {trial}: exact {} normal {approx}", mw.p);
        }
    }

    fn rows(prefix: &str, v: &[&[f64]]) -> Vec<FeatureRow> {
        v.iter()
            .enumerate()
            .map(|(i, r)| FeatureRow {
                id: format!("{prefix}{i}"),
                values: r.to_vec(),
            })
            .collect()
    }

    fn feats(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn exact_match_at_zero_distance() {
        let t = rows("t", &[&[1.0, 5.0]]);
        let p = rows("p", &[&[3.0, 1.0], &[1.0, 5.0], &[0.0, 2.0]]);
        let m = match_nearest(&t, &p, &feats(2), 1).unwrap();
        assert_eq!(m.pairs, vec![("t0".into(), "p1".into(), 0.0)]);
    }

    #[test]
    fn scale_invariance_and_constant_features() {
        let t = rows("t", &[&[1.0, 7.0, 2.0], &[4.0, 7.0, 0.5]]);
        let p = rows("p", &[&[3.0, 7.0, 1.0], &[1.5, 7.0, 2.2], &[4.2, 7.0, 0.0], &[0.0, 7.0, 9.0]]);
        let m = match_nearest(&t, &p, &feats(3), 1).unwrap();
        assert_eq!(m.used, vec![0, 2]);
        let scale = |r: &[FeatureRow]| -> Vec<FeatureRow> {
            r.iter()
                .map(|x| FeatureRow {
                    id: x.id.clone(),
                    values: x.values.iter().map(|v| v * 10.0).collect(),
                })
                .collect()
        };
        let m10 = match_nearest(&scale(&t), &scale(&p), &feats(3), 1).unwrap();
        let ids = |m: &MatchedPairs| m.pairs.iter().map(|x| (x.0.clone(), x.1.clone())).collect::<Vec<_>>();
        assert_eq!(ids(&m), ids(&m10));
    }

    /// Repeatedly takes the globally closest unused (treated, control)
    /// pair, recomputing from scratch each round.
    fn greedy_oracle(t: &[FeatureRow], p: &[FeatureRow]) -> Vec<(String, String)> {
        let all: Vec<&FeatureRow> = t.iter().chain(p).collect();
        let d = t[0].values.len();
        let n = all.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| all.iter().map(|r| r.values[j]).sum::<f64>() / n).collect();
        let sd: Vec<f64> =
            (0..d).map(|j| (all.iter().map(|r| (r.values[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()).collect();
        let dist = |a: &FeatureRow, b: &FeatureRow| -> f64 {
            (0..d).map(|j| ((a.values[j] - b.values[j]) / sd[j]).powi(2)).sum::<f64>().sqrt()
        };
        let (mut ft, mut fp) = (vec![true; t.len()], vec![true; p.len()]);
        let mut out = Vec::new();
        for _ in 0..t.len() {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..t.len() {
                for j in 0..p.len() {
                    if ft[i] && fp[j] && dist(&t[i], &p[j]) < best.0 {
                        best = (dist(&t[i], &p[j]), i, j);
                    }
                }
            }
            ft[best.1] = false;
            fp[best.2] = false;
            out.push((t[best.1].id.clone(), p[best.2].id.clone()));
        }
        out
    }

    #[test]
    fn three_by_five_matches_greedy_oracle() {
        let t = rows("t", &[&[1.0, 2.0], &[1.2, 2.1], &[5.0, 0.0]]);
        let p = rows("p", &[&[1.1, 2.0], &[0.0, 0.0], &[4.0, 1.0], &[1.3, 2.5], &[9.0, 9.0]]);
        let m = match_nearest(&t, &p, &feats(2), 1).unwrap();
        let got: Vec<(String, String)> = m.pairs.iter().map(|x| (x.0.clone(), x.1.clone())).collect();
        assert_eq!(got, greedy_oracle(&t, &p));
    }

    #[test]
    fn matching_errors() {
        let t = rows("t", &[&[1.0], &[2.0]]);
        let p = rows("p", &[&[1.0]]);
        assert!(match_nearest(&t, &p, &feats(1), 1).is_err());
        assert!(match_nearest(&t, &rows("p", &[&[1.0, 2.0], &[0.0, 1.0]]), &feats(1), 1).is_err());
    }

    #[test]
    fn report_shape() {
        let t = rows("t", &[&[1.0, 9.0], &[2.0, 8.0], &[3.0, 7.0]]);
        let p = rows("p", &[&[1.1, 1.0], &[2.1, 2.0], &[3.1, 3.0], &[8.0, 8.0]]);
        let m = match_nearest(&t, &p, &feats(2), 1).unwrap();
        let r = compare_matched(&m, &t, &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matched_report.json");
        write_matched_report(&r, &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["U", "p", "rank_biserial", "n_treated", "n_control"] {
            assert!(v["f0"].get(key).is_some(), "{key}");
        }
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((0u8..8).prop_map(f64::from), 1..15)
    }

    proptest! {
        #[test]
        fn u_statistics_complement(a in sample(), b in sample()) {
            let ab = mann_whitney(&a, &b).unwrap();
            let ba = mann_whitney(&b, &a).unwrap();
            prop_assert!((ab.u_a + ba.u_a - (a.len() * b.len()) as f64).abs() < 1e-9);
            prop_assert!((ab.u_a + ab.u_b - (a.len() * b.len()) as f64).abs() < 1e-9);
            prop_assert!((rank_biserial(&a, &b).unwrap() + rank_biserial(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p));
            prop_assert!((ab.p - ba.p).abs() < 1e-9);
        }

        #[test]
        fn exact_p_matches_oracle(a in proptest::collection::vec((0u8..5).prop_map(f64::from), 1..7),
                                  b in proptest::collection::vec((0u8..5).prop_map(f64::from), 1..7)) {
            let mw = mann_whitney(&a, &b).unwrap();
            prop_assert!((mw.p - permutation_oracle(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn matching_ignores_pool_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<FeatureRow> {
                (0..n).map(|i| FeatureRow { id: format!("{prefix}{i}"), values: vec![rng.random(), rng.random()] }).collect()
            };
            let t = mk("t", 4, &mut rng);
            let mut p = mk("p", 9, &mut rng);
            let a = match_nearest(&t, &p, &feats(2), 1).unwrap();
            p.reverse();
            let b = match_nearest(&t, &p, &feats(2), 1).unwrap();
            prop_assert_eq!(a.pairs.len(), b.pairs.len());
            for (x, y) in a.pairs.iter().zip(&b.pairs) {
                prop_assert_eq!((&x.0, &x.1), (&y.0, &y.1));
                prop_assert!((x.2 - y.2).abs() < 1e-9);
            }
        }
    }
}
