//! Metrics and a stratified cross-validated linear classifier.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::node2vec::NodeEmbeddings;
use crate::error::{Error, Result};
use crate::stats::midranks;

/// Area under the ROC curve of `scores` for the positive class, counting
/// tied pairs as one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidParam("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidParam("AUC needs both positive and negative examples".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Unweighted mean of per-class F1 over the classes present in either
/// `truth` or `predicted`.
pub fn macro_f1(truth: &[usize], predicted: &[usize]) -> f64 {
    let mut tp = BTreeMap::<usize, f64>::new();
    let mut fp = BTreeMap::<usize, f64>::new();
    let mut fneg = BTreeMap::<usize, f64>::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == p {
            *tp.entry(t).or_default() += 1.0;
        } else {
            *fp.entry(p).or_default() += 1.0;
            *fneg.entry(t).or_default() += 1.0;
        }
    }
    let classes: std::collections::BTreeSet<usize> = truth.iter().chain(predicted).copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|c| {
            let t = tp.get(c).copied().unwrap_or(0.0);
            let denom = 2.0 * t + fp.get(c).copied().unwrap_or(0.0) + fneg.get(c).copied().unwrap_or(0.0);
            if denom == 0.0 {
                0.0
            } else {
                2.0 * t / denom
            }
        })
        .sum();
    total / classes.len() as f64
}

/// One-vs-rest AUC averaged over classes with both positives and negatives.
pub fn macro_auc(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    let classes = scores.first().map_or(0, Vec::len);
    let mut sum = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        if pos.iter().all(|&p| p) || !pos.iter().any(|&p| p) {
            continue;
        }
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        sum += auc(&col, &pos)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidParam("no class has both positives and negatives".into()));
    }
    Ok(sum / used as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2: f64,
    pub iterations: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-3,
            iterations: 200,
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × (dim + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl LogisticModel {
    /// Accelerated full-batch gradient descent with step 1/L, where L bounds
    /// the curvature of the mean cross-entropy.
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, params: LogisticParams) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidParam("training set empty or mismatched".into()));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for r in x {
            for k in 0..d {
                scale[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 });
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut v: Vec<f64> = (0..d).map(|k| (r[k] - mean[k]) * scale[k]).collect();
                v.push(1.0);
                v
            })
            .collect();
        let dd = d + 1;
        let lip = 0.5 * top_eigenvalue(&z) / n + params.l2;
        let step = 1.0 / lip.max(1e-12);

        let mut w = vec![vec![0.0; dd]; classes];
        let mut prev = w.clone();
        let mut grad = vec![vec![0.0; dd]; classes];
        let mut probs = vec![0.0; classes];
        for it in 0..params.iterations {
            let mom = it as f64 / (it as f64 + 3.0);
            let look: Vec<Vec<f64>> = w
                .iter()
                .zip(&prev)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + mom * (x - y)).collect())
                .collect();
            grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for (row, &label) in z.iter().zip(y) {
                for c in 0..classes {
                    probs[c] = look[c].iter().zip(row).map(|(a, b)| a * b).sum();
                }
                softmax_in_place(&mut probs);
                for c in 0..classes {
                    let e = (probs[c] - (label == c) as u8 as f64) / n;
                    for (g, v) in grad[c].iter_mut().zip(row) {
                        *g += e * v;
                    }
                }
            }
            prev = std::mem::take(&mut w);
            w = look
                .iter()
                .zip(&grad)
                .map(|(l, g)| {
                    l.iter()
                        .zip(g)
                        .enumerate()
                        .map(|(k, (a, b))| {
                            let reg = if k < d { params.l2 * a } else { 0.0 };
                            a - step * (b + reg)
                        })
                        .collect()
                })
                .collect();
        }
        Ok(LogisticModel { mean, scale, weights: w })
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut z: Vec<f64> = self
            .weights
            .iter()
            .map(|w| (0..d).map(|k| w[k] * (x[k] - self.mean[k]) * self.scale[k]).sum::<f64>() + w[d])
            .collect();
        softmax_in_place(&mut z);
        z
    }
}

fn top_eigenvalue(z: &[Vec<f64>]) -> f64 {
    let d = z[0].len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..30 {
        let mut next = vec![0.0; d];
        for r in z {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (nx, a) in next.iter_mut().zip(r) {
                *nx += dot * a;
            }
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
    }
    // Power iteration approaches from below; pad so the step stays stable.
    lambda * 1.05
}

/// Per-class seeded shuffle, then round-robin fold assignment.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    fold_of
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub macro_f1_std: f64,
    pub auc: f64,
    pub auc_std: f64,
    pub fold_macro_f1: Vec<f64>,
    pub fold_auc: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub n: usize,
    pub classes: Vec<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Cross-validated Macro-F1 and one-vs-rest AUC over the labeled users that
/// have embeddings.
pub fn evaluate_classification(emb: &NodeEmbeddings, labels: &BTreeMap<String, String>, folds: usize, seed: u64) -> Result<EvalReport> {
    evaluate_with(emb, labels, folds, seed, LogisticParams::default())
}

pub fn evaluate_with(
    emb: &NodeEmbeddings,
    labels: &BTreeMap<String, String>,
    folds: usize,
    seed: u64,
    params: LogisticParams,
) -> Result<EvalReport> {
    if folds < 2 {
        return Err(Error::InvalidParam("folds must be >= 2".into()));
    }
    let vectors = emb.as_map();
    let mut x = Vec::new();
    let mut names = Vec::new();
    for (user, class) in labels {
        if let Some(v) = vectors.get(user.as_str()) {
            x.push(v.iter().map(|&a| a as f64).collect::<Vec<f64>>());
            names.push(class.as_str());
        }
    }
    let classes: Vec<String> = names
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    if classes.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 classes among embedded users, found {}",
            classes.len()
        )));
    }
    let y: Vec<usize> = names.iter().map(|c| classes.iter().position(|k| k == c).unwrap()).collect();
    for (ci, c) in classes.iter().enumerate() {
        let size = y.iter().filter(|&&l| l == ci).count();
        if size < folds {
            return Err(Error::InvalidParam(format!(
                "class `{c}` has {size} members but {folds} folds were requested; lower the fold count or drop the class"
            )));
        }
    }
    let fold_of = stratified_folds(&y, folds, seed);
    let mut f1s = Vec::with_capacity(folds);
    let mut aucs = Vec::with_capacity(folds);
    for f in 0..folds {
        let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if fold_of[i] == f {
                xte.push(x[i].clone());
                yte.push(y[i]);
            } else {
                xtr.push(x[i].clone());
                ytr.push(y[i]);
            }
        }
        let model = LogisticModel::fit(&xtr, &ytr, classes.len(), params)?;
        let scores: Vec<Vec<f64>> = xte.iter().map(|r| model.predict_proba(r)).collect();
        let pred: Vec<usize> = scores
            .iter()
            .map(|s| {
                let mut best = 0;
                for c in 1..s.len() {
                    if s[c] > s[best] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        f1s.push(macro_f1(&yte, &pred));
        aucs.push(macro_auc(&scores, &yte)?);
    }
    let (macro_f1, macro_f1_std) = mean_std(&f1s);
    let (auc, auc_std) = mean_std(&aucs);
    Ok(EvalReport {
        macro_f1,
        macro_f1_std,
        auc,
        auc_std,
        fold_macro_f1: f1s,
        fold_auc: aucs,
        folds,
        seed,
        n: x.len(),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::node2vec::Node2VecParams;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    n += 1.0;
                    s += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / n
    }

    fn embeddings(vectors: Vec<Vec<f32>>) -> NodeEmbeddings {
        NodeEmbeddings {
            users: (0..vectors.len()).map(|i| format!("u{i:04}")).collect(),
            dim: vectors[0].len(),
            vectors,
            params: Node2VecParams::default(),
        }
    }

    #[test]
    fn four_point_fixture() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let pos = [false, false, true, true];
        assert!((auc(&scores, &pos).unwrap() - 0.75).abs() < 1e-12);
        assert!((brute_auc(&scores, &pos) - 0.75).abs() < 1e-12);
        assert!(auc(&scores, &[true; 4]).is_err());
    }

    #[test]
    fn macro_f1_values() {
        assert_eq!(macro_f1(&[0, 1, 0, 1], &[0, 1, 0, 1]), 1.0);
        // class 0: tp 1, fp 1, fn 1 → 0.5; class 1: tp 1, fp 1, fn 1 → 0.5
        assert!((macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separable_labels_score_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vecs = Vec::new();
        let mut labels = BTreeMap::new();
        for i in 0..60 {
            let class = i % 3;
            let mut v: Vec<f32> = (0..6).map(|_| rng.random::<f32>() * 0.2).collect();
            v[class] += 3.0;
            vecs.push(v);
            labels.insert(format!("u{i:04}"), format!("c{class}"));
        }
        let r = evaluate_classification(&embeddings(vecs), &labels, 5, 3).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.fold_auc.len(), 5);
    }

    #[test]
    fn null_labels_give_chance_auc() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let vecs: Vec<Vec<f32>> = (0..400).map(|_| (0..8).map(|_| rng.random::<f32>()).collect()).collect();
            let labels: BTreeMap<String, String> =
                (0..400).map(|i| (format!("u{i:04}"), format!("c{}", rng.random_range(0..2)))).collect();
            let r = evaluate_classification(&embeddings(vecs), &labels, 5, seed).unwrap();
            assert!((0.4..=0.6).contains(&r.auc), "seed {seed}: auc {}", r.auc);
        }
    }

    #[test]
    fn tiny_class_is_rejected() {
        let vecs = vec![vec![0.0f32, 1.0]; 6];
        let labels: BTreeMap<String, String> = (0..6)
            .map(|i| (format!("u{i:04}"), if i == 0 { "rare" } else { "common" }.to_string()))
            .collect();
        let err = evaluate_classification(&embeddings(vecs.clone()), &labels, 3, 0).unwrap_err();
        assert!(err.to_string().contains("rare"));
        assert!(evaluate_classification(&embeddings(vecs), &labels, 1, 0).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2 + (i % 5 == 0) as usize).collect();
        let f = stratified_folds(&labels, 5, 8);
        for c in 0..3 {
            let mut per = [0usize; 5];
            for (i, &l) in labels.iter().enumerate() {
                if l == c {
                    per[f[i]] += 1;
                }
            }
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..200)) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let pos: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
            let a = auc(&scores, &pos).unwrap();
            prop_assert!((a - brute_auc(&scores, &pos)).abs() < 1e-9);
        }

        #[test]
        fn macro_f1_relabel_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let t2: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            let p2: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let a = macro_f1(&t, &p);
            prop_assert!((a - macro_f1(&t2, &p2)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
