//! Each metric against a deliberately naive re-implementation on random
//! small instances. Scores are drawn from a coarse grid so ties occur.
//!
//! Shared by the core test suite and the acceptance run.

use xmalign_core::metrics::{
    average_precision_at_q, map_at_q, mean_difference, mean_recall_at_p, roc_auc, silhouette_cosine,
    similarity_matrix, threshold_metrics,
};
use xmalign_core::numerics::FeatureMatrix;
use xmalign_core::rng::RngStream;
use xmalign_core::Modality;

pub const TOL: f64 = 1e-12;

/// Fails with a message naming the instance.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn between(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn grid_score(rng: &mut RngStream) -> f64 {
    rng.below(11) as f64 / 10.0
}

fn both_classes(rng: &mut RngStream, n: usize) -> Vec<u8> {
    loop {
        let l: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.4))).collect();
        if l.contains(&0) && l.contains(&1) {
            return l;
        }
    }
}

pub fn roc_auc_is_the_pairwise_win_rate(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = RngStream::new(seed, 1);
        let n = between(&mut rng, 2, 30);
        let labels = both_classes(&mut rng, n);
        let scores: Vec<f64> = (0..n).map(|_| grid_score(&mut rng)).collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in (0..n).filter(|&i| labels[i] == 1) {
            for j in (0..n).filter(|&j| labels[j] == 0) {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let got = roc_auc(&scores, &labels).unwrap();
        ensure!((got - wins / pairs).abs() <= TOL, "seed {seed}: {got} vs {}", wins / pairs);
    }
    Ok(())
}

pub fn threshold_metrics_match_confusion_counts(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = RngStream::new(seed, 2);
        let n = between(&mut rng, 1, 30);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.5))).collect();
        let scores: Vec<f64> = (0..n).map(|_| grid_score(&mut rng)).collect();
        let thr = [0.3, 0.5, 0.7][rng.below(3)];
        let pred: Vec<bool> = scores.iter().map(|&s| s >= thr).collect();
        let count = |p: bool, l: u8| pred.iter().zip(&labels).filter(|&(&a, &b)| a == p && b == l).count();
        let (tp, fp, tn, fneg) = (count(true, 1), count(true, 0), count(false, 0), count(false, 1));
        let got = threshold_metrics(&scores, &labels, thr).unwrap();
        ensure!(got.accuracy == (tp + tn) as f64 / n as f64, "seed {seed}");
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        ensure!(got.precision == precision, "seed {seed}");
        let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ensure!((got.f1 - f1).abs() <= TOL, "seed {seed}: {} vs {f1}", got.f1);
    }
    Ok(())
}

pub fn recall_at_p_counts_queries_with_the_match_in_the_top_p(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = RngStream::new(seed, 3);
        let n = between(&mut rng, 1, 25);
        let p = between(&mut rng, 1, 30);
        let mut hits = 0;
        let mut ranks = Vec::with_capacity(n);
        for target in 0..n {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            if order.iter().take(p).any(|&c| c == target) {
                hits += 1;
            }
            ranks.push(order.iter().position(|&c| c == target).unwrap() + 1);
        }
        ensure!(mean_recall_at_p(&ranks, p).unwrap() == hits as f64 / n as f64, "seed {seed}");
    }
    Ok(())
}

fn naive_ap(rel: &[u8], q: usize) -> f64 {
    let total = rel.iter().filter(|&&r| r == 1).count();
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 1..=q.min(rel.len()) {
        if rel[k - 1] == 1 {
            let found = rel[..k].iter().filter(|&&r| r == 1).count();
            sum += found as f64 / k as f64;
        }
    }
    sum / total.min(q) as f64
}

pub fn map_at_q_matches_recomputed_precisions(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = RngStream::new(seed, 4);
        let queries = between(&mut rng, 1, 6);
        let q = between(&mut rng, 1, 12);
        let rels: Vec<Vec<u8>> = (0..queries)
            .map(|_| {
                let len = between(&mut rng, 0, 15);
                (0..len).map(|_| u8::from(rng.bernoulli(0.3))).collect()
            })
            .collect();
        for r in &rels {
            ensure!((average_precision_at_q(r, q).unwrap() - naive_ap(r, q)).abs() <= TOL, "seed {seed}");
        }
        let want = rels.iter().map(|r| naive_ap(r, q)).sum::<f64>() / queries as f64;
        ensure!((map_at_q(&rels, q).unwrap() - want).abs() <= TOL, "seed {seed}");
    }
    Ok(())
}

fn random_rows(rng: &mut RngStream, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            if v.iter().any(|x| x.abs() > 1e-3) {
                break v;
            }
        })
        .collect()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn silhouette_matches_the_textbook_definition(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = RngStream::new(seed, 5);
        let (ni, nt) = (between(&mut rng, 2, 8), between(&mut rng, 2, 8));
        let d = between(&mut rng, 2, 6);
        let rows = random_rows(&mut rng, ni + nt, d);
        let modality: Vec<Modality> =
            (0..ni + nt).map(|i| if i < ni { Modality::Image } else { Modality::Text }).collect();

        let mut s = 0.0;
        for i in 0..rows.len() {
            let mean_to = |same: bool| {
                let ds: Vec<f64> = (0..rows.len())
                    .filter(|&j| j != i && (modality[j] == modality[i]) == same)
                    .map(|j| cosine_distance(&rows[i], &rows[j]))
                    .collect();
                ds.iter().sum::<f64>() / ds.len() as f64
            };
            let (a, b) = (mean_to(true), mean_to(false));
            s += if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        }
        let want = s / rows.len() as f64;
        let got = silhouette_cosine(&FeatureMatrix::from_rows(&rows).unwrap(), &modality).unwrap();
        ensure!((got - want).abs() <= TOL, "seed {seed}: {got} vs {want}");
    }
    Ok(())
}

pub fn mean_difference_matches_the_double_sum(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = RngStream::new(seed, 6);
        let n = between(&mut rng, 2, 12);
        let d = between(&mut rng, 2, 6);
        let images = FeatureMatrix::from_rows(&random_rows(&mut rng, n, d)).unwrap();
        let texts = FeatureMatrix::from_rows(&random_rows(&mut rng, n, d)).unwrap();
        let m = similarity_matrix(&images, &texts).unwrap();
        let curve = mean_difference(&m, n).unwrap();
        ensure!(curve.len() == n - 1, "seed {seed}: curve has {} points", curve.len());
        for (k, got) in curve {
            let mut sum = 0.0;
            for i in 0..k {
                for j in (0..k).filter(|&j| j != i) {
                    sum += m.get(i, i) - m.get(i, j);
                }
            }
            let want = sum / (k * (k - 1)) as f64;
            ensure!((got - want).abs() <= TOL, "seed {seed}, n {k}: {got} vs {want}");
        }
    }
    Ok(())
}
