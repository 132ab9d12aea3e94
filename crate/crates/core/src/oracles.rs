//! Slow, independent reference implementations used only by tests. Each
//! one recomputes a result the production code gets by a cleverer route,
//! sharing as little logic with it as possible.

use crate::canvas::Point2D;
use crate::embedder::Descriptor;
use crate::seeding;
use rand::seq::SliceRandom;
use std::collections::{BTreeMap, BTreeSet};

/// Every (anchor, positive, negative) index triple over the pool that the
/// mining predicate accepts: same class for anchor/positive (distinct
/// entries), different class for the negative, negative strictly inside
/// the margin band.
pub fn enumerate_semi_hard(
    classes: &[u32],
    pool: &[Descriptor],
    margin: f64,
) -> BTreeSet<(usize, usize, usize)> {
    let n = pool.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        for c in 0..n {
            if a == c || classes[a] != classes[c] {
                continue;
            }
            let d_pos = pool[a].dist_sq(&pool[c]);
            for neg in 0..n {
                if classes[neg] == classes[a] {
                    continue;
                }
                let d_neg = pool[a].dist_sq(&pool[neg]);
                if d_pos < d_neg && d_neg < d_pos + margin {
                    out.insert((a, c, neg));
                }
            }
        }
    }
    out
}

/// Exhaustive minimum assignment cost over all injective row-to-column
/// maps of a square cost matrix. Branch-and-bound over permutations;
/// intended for n <= 9.
pub fn min_assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    assert!(n <= 9, "exhaustive assignment is for tiny instances");
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == cost.len() {
            *best = acc;
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

/// Rank-counting CMC with no sorting shared with the production path:
/// the ground-truth rank is 1 plus the number of candidates that beat it
/// (strictly closer, or tied with a lower point id). Returns the curve for
/// k = 1..=k_max and the number of excluded sources (no usable ground
/// truth). The caller must keep at least one usable source.
pub fn brute_cmc(
    src: &[(String, Descriptor)],
    tgt: &[(String, Descriptor)],
    gt: &BTreeMap<String, String>,
    k_max: usize,
) -> (Vec<f64>, usize) {
    let mut excluded = 0usize;
    let mut ranks = Vec::new();
    for (spid, sd) in src {
        let Some(gpid) = gt.get(spid) else {
            excluded += 1;
            continue;
        };
        let Some((_, gdesc)) = tgt.iter().find(|(tpid, _)| tpid == gpid) else {
            excluded += 1;
            continue;
        };
        let d_gt = sd.dist(gdesc);
        let mut rank = 1usize;
        for (tpid, td) in tgt {
            if tpid == gpid {
                continue;
            }
            let d = sd.dist(td);
            if d < d_gt || (d == d_gt && tpid < gpid) {
                rank += 1;
            }
        }
        ranks.push(rank);
    }
    assert!(!ranks.is_empty(), "brute CMC needs a usable source");
    let n = ranks.len() as f64;
    let curve = (1..=k_max)
        .map(|k| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect();
    (curve, excluded)
}

/// Direct CAcc recount from (chosen position, true position) pairs.
pub fn brute_cacc(hits: &[(Point2D, Point2D)], side: usize, thresholds: &[f64]) -> Vec<f64> {
    assert!(!hits.is_empty(), "brute CAcc needs at least one match");
    thresholds
        .iter()
        .map(|t| {
            let cutoff = t * side as f64;
            let ok = hits.iter().filter(|(a, b)| a.dist(*b) < cutoff).count();
            100.0 * ok as f64 / hits.len() as f64
        })
        .collect()
}

/// Optimal soft-margin SVM dual objective by projected gradient ascent:
/// maximize sum(alpha) - alpha' Q alpha / 2 over 0 <= alpha <= C,
/// sum(alpha * y) = 0, with Q_ij = y_i y_j K_ij. The projection onto the
/// box-plus-hyperplane set is exact (bisection on the plane multiplier),
/// so with enough iterations the value approaches the true optimum from
/// below. Returns (alphas, objective).
pub fn svm_dual_solve(
    gram: &[Vec<f64>],
    labels: &[f64],
    c: f64,
    iters: usize,
) -> (Vec<f64>, f64) {
    let n = labels.len();
    assert_eq!(gram.len(), n);
    assert!(labels.iter().all(|&y| y == 1.0 || y == -1.0));
    let q = |i: usize, j: usize| labels[i] * labels[j] * gram[i][j];

    // Step size from a cheap Lipschitz bound on the gradient.
    let mut l = 0.0f64;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| q(i, j).abs()).sum();
        l = l.max(row);
    }
    let eta = 1.0 / l.max(1e-12);

    let project = |raw: &[f64]| -> Vec<f64> {
        // Find the plane multiplier by bisection; the clipped constraint
        // residual is monotone non-increasing in lambda.
        let bound = raw.iter().fold(0.0f64, |m, &a| m.max(a.abs())) + c + 1.0;
        let residual = |lambda: f64| -> f64 {
            (0..n)
                .map(|i| (raw[i] - lambda * labels[i]).clamp(0.0, c) * labels[i])
                .sum()
        };
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        (0..n)
            .map(|i| (raw[i] - lambda * labels[i]).clamp(0.0, c))
            .collect()
    };

    let mut alpha = project(&vec![0.0; n]);
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>())
            .collect();
        let raw: Vec<f64> = (0..n).map(|i| alpha[i] + eta * grad[i]).collect();
        alpha = project(&raw);
    }
    let mut obj = alpha.iter().sum::<f64>();
    for i in 0..n {
        for j in 0..n {
            obj -= 0.5 * alpha[i] * alpha[j] * q(i, j);
        }
    }
    (alpha, obj)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 3);
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Permutation test for a negative monotone trend: returns the observed
/// Spearman correlation of `ys` against their index, and the one-sided
/// p-value P(rho_perm <= rho_observed) over seeded shuffles of `ys`.
pub fn spearman_trend_test(ys: &[f64], n_perms: usize, seed: u64) -> (f64, f64) {
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let observed = spearman(&xs, ys);
    let mut rng = seeding::stream(seed, "spearman-perm", &[]);
    let mut shuffled = ys.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perms {
        shuffled.shuffle(&mut rng);
        if spearman(&xs, &shuffled) <= observed {
            hits += 1;
        }
    }
    // Add-one smoothing keeps the estimate conservative and nonzero.
    let p = (hits + 1) as f64 / (n_perms + 1) as f64;
    (observed, p)
}
