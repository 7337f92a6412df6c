//! Independent brute-force oracles shared by the integration suites. These
//! deliberately recompute everything from first principles with plain loops,
//! not through the library's implementation paths.

use std::collections::HashMap;

use heco_core::hin::{HeteroGraph, MetaPath};
use heco_core::tensor::Matrix;

/// All length-|p| typed paths from each target node, by DFS over raw edge
/// lists (no adjacency composition).
pub fn brute_force_metapath_neighbors(g: &HeteroGraph, p: &MetaPath) -> Vec<Vec<u32>> {
    let n = g.num_targets();
    let mut out = Vec::with_capacity(n);
    for start in 0..n as u32 {
        let mut frontier = vec![start];
        for step in &p.steps {
            let rel = &g.relations[step.relation];
            let mut next = Vec::new();
            for &u in &frontier {
                for &(s, d) in &rel.edges {
                    let (from, to) = if step.reverse { (d, s) } else { (s, d) };
                    if from == u {
                        next.push(to);
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        frontier.retain(|&j| j != start);
        out.push(frontier);
    }
    out
}

/// Positive sets recomputed from neighbor lists: count meta-paths per pair,
/// sort descending with ascending-id tie break, keep T_pos plus self.
pub fn brute_force_positive_sets(neighbor_lists: &[Vec<Vec<u32>>], t_pos: usize) -> Vec<Vec<u32>> {
    let n = neighbor_lists[0].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for lists in neighbor_lists {
            for &j in &lists[i] {
                *counts.entry(j).or_insert(0) += 1;
            }
        }
        counts.remove(&(i as u32));
        let mut ranked: Vec<(usize, u32)> = counts.into_iter().map(|(j, c)| (c, j)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut pos: Vec<u32> = ranked.iter().take(t_pos).map(|&(_, j)| j).collect();
        pos.push(i as u32);
        pos.sort_unstable();
        out.push(pos);
    }
    out
}

pub fn oracle_macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let mut classes: Vec<usize> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t == c)
            .count() as f64;
        let pred_c = pred.iter().filter(|&&p| p == c).count() as f64;
        let truth_c = truth.iter().filter(|&&t| t == c).count() as f64;
        let precision = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        let recall = if truth_c > 0.0 { tp / truth_c } else { 0.0 };
        total += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    total / classes.len() as f64
}

pub fn oracle_micro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|&(&p, &t)| p == t).count() as f64 / truth.len() as f64
}

/// Macro one-vs-rest AUC by direct pair counting (ties count half).
pub fn oracle_auc(scores: &Matrix, truth: &[usize]) -> f64 {
    let mut classes: Vec<usize> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    let mut used = 0;
    for &c in &classes {
        let pos: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        let neg: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] != c).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &q in &neg {
                let (sp, sq) = (scores.get(p, c), scores.get(q, c));
                if sp > sq {
                    wins += 1.0;
                } else if sp == sq {
                    wins += 0.5;
                }
            }
        }
        total += wins / (pos.len() * neg.len()) as f64;
        used += 1;
    }
    total / used as f64
}

fn label_entropy(labels: &[usize]) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI through the joint-entropy identity MI = H(A) + H(B) - H(A, B).
pub fn oracle_nmi(a: &[usize], b: &[usize]) -> f64 {
    let ha = label_entropy(a);
    let hb = label_entropy(b);
    let joint: Vec<usize> = a.iter().zip(b).map(|(&x, &y)| x * 10_000 + y).collect();
    let mi = ha + hb - label_entropy(&joint);
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        return 1.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

/// ARI by O(n^2) pair counting: a = agree/agree, b = agree/disagree,
/// c = disagree/agree, d = disagree/disagree.
pub fn oracle_ari(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len();
    let (mut a, mut b, mut c, mut d) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

/// Silhouette by the naive per-point definition.
pub fn oracle_silhouette(data: &Matrix, labels: &[usize]) -> f64 {
    let n = data.rows();
    let dist = |i: usize, j: usize| -> f64 {
        data.row(i)
            .iter()
            .zip(data.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] == 1 {
            continue;
        }
        let a = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| dist(i, j))
            .sum::<f64>()
            / (counts[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| {
                (0..n).filter(|&j| labels[j] == c).map(|j| dist(i, j)).sum::<f64>() / counts[c] as f64
            })
            .fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
