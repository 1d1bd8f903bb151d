//! Post-training inference: cosine similarity, greedy one-to-one matching,
//! and the Acc / Hit@k metrics.

use crate::error::{Error, Result};
use crate::Mat;
use std::collections::BTreeMap;

/// One-to-one matching with its similarity matrix and evaluation scores.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// `(source_idx, target_idx)` pairs; one-to-one on both sides, length
    /// `min(|V_s|, |V_t|)`.
    pub matching: Vec<(usize, usize)>,
    pub similarity: Mat,
    pub acc: f64,
    pub hit_at_k: BTreeMap<usize, f64>,
}

/// Cosine similarity between every source row and every target row.
/// Rows are l2-normalized first; all-zero rows map to the zero vector and
/// score 0 against everything (logged).
pub fn cosine_similarity(z_s: &Mat, z_t: &Mat) -> Result<Mat> {
    if z_s.ncols() != z_t.ncols() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: format!("{}x{}", z_s.nrows(), z_s.ncols()),
            rhs: format!("{}x{}", z_t.nrows(), z_t.ncols()),
        });
    }
    let normalize = |z: &Mat, side: &str| {
        let mut out = z.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let n = z.row(i).dot(&z.row(i)).sqrt();
            if n == 0.0 {
                log::warn!("{side} row {i} is all zeros; similarity will be 0");
            } else {
                row.mapv_inplace(|x| x / n);
            }
        }
        out
    };
    let s = normalize(z_s, "source").dot(&normalize(z_t, "target").t());
    Ok(s)
}

#[derive(PartialEq)]
struct HeapEntry {
    sim: f64,
    i: usize,
    j: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Max-heap on similarity; ties prefer lower source then lower target.
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.i.cmp(&self.i))
            .then_with(|| other.j.cmp(&self.j))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy matching: repeatedly commit the globally best unmatched entry
/// until the smaller side is exhausted. Implemented as one heap over all
/// entries with staleness checks on pop; `O(nm log(nm))`.
pub fn greedy_match(s: &Mat) -> Vec<(usize, usize)> {
    let (n, m) = s.dim();
    let mut heap = std::collections::BinaryHeap::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            heap.push(HeapEntry { sim: s[[i, j]], i, j });
        }
    }
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    let mut matching = Vec::with_capacity(n.min(m));
    while let Some(e) = heap.pop() {
        if row_used[e.i] || col_used[e.j] {
            continue;
        }
        row_used[e.i] = true;
        col_used[e.j] = true;
        matching.push((e.i, e.j));
        if matching.len() == n.min(m) {
            break;
        }
    }
    matching
}

/// Fraction of ground-truth pairs the matching reproduces.
pub fn accuracy(matching: &[(usize, usize)], ground_truth: &[(usize, usize)]) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    let predicted: BTreeMap<usize, usize> = matching.iter().copied().collect();
    let correct = ground_truth
        .iter()
        .filter(|(s, t)| predicted.get(s) == Some(t))
        .count();
    correct as f64 / ground_truth.len() as f64
}

/// For each ground-truth source node, ranks its similarity row descending
/// (ties broken by lower target index) and counts a hit when the true
/// target ranks within k. Independent of the greedy matching.
pub fn hit_at_k(s: &Mat, ground_truth: &[(usize, usize)], ks: &[usize]) -> BTreeMap<usize, f64> {
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for &(src, tgt) in ground_truth {
        let row = s.row(src);
        let true_sim = row[tgt];
        let mut rank = 1usize;
        for (j, &x) in row.iter().enumerate() {
            if x > true_sim || (x == true_sim && j < tgt) {
                rank += 1;
            }
        }
        for (&k, count) in hits.iter_mut() {
            if rank <= k {
                *count += 1;
            }
        }
    }
    let denom = ground_truth.len().max(1) as f64;
    hits.into_iter().map(|(k, c)| (k, c as f64 / denom)).collect()
}

/// Runs the whole inference path: similarity, greedy matching, Acc, Hit@k.
/// Ground-truth indices are validated against the similarity shape.
pub fn align(
    z_s: &Mat,
    z_t: &Mat,
    ground_truth: &[(usize, usize)],
    ks: &[usize],
) -> Result<AlignmentResult> {
    let similarity = cosine_similarity(z_s, z_t)?;
    for &(s, t) in ground_truth {
        if s >= similarity.nrows() || t >= similarity.ncols() {
            return Err(Error::invalid(format!(
                "ground-truth pair ({s}, {t}) out of range for {}x{} similarity",
                similarity.nrows(),
                similarity.ncols()
            )));
        }
    }
    let matching = greedy_match(&similarity);
    let acc = accuracy(&matching, ground_truth);
    let hit = hit_at_k(&similarity, ground_truth, ks);
    Ok(AlignmentResult {
        matching,
        similarity,
        acc,
        hit_at_k: hit,
    })
}

/// Default k values reported by the harness.
pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 50];

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Quadratic re-scan reference: find the max over unmatched pairs,
    /// commit, repeat.
    fn greedy_oracle(s: &Mat) -> Vec<(usize, usize)> {
        let (n, m) = s.dim();
        let mut row_used = vec![false; n];
        let mut col_used = vec![false; m];
        let mut out = Vec::new();
        for _ in 0..n.min(m) {
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..n {
                if row_used[i] {
                    continue;
                }
                for j in 0..m {
                    if col_used[j] {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bs, bi, bj)) => {
                            s[[i, j]] > bs || (s[[i, j]] == bs && (i, j) < (bi, bj))
                        }
                    };
                    if better {
                        best = Some((s[[i, j]], i, j));
                    }
                }
            }
            let (_, i, j) = best.unwrap();
            row_used[i] = true;
            col_used[j] = true;
            out.push((i, j));
        }
        out
    }

    #[test]
    fn identity_similarity_matches_diagonal() {
        let m = greedy_match(&Mat::eye(3));
        assert_eq!(m, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn hand_traced_two_by_two() {
        let s = arr2(&[[0.9, 0.1], [0.8, 0.2]]);
        assert_eq!(greedy_match(&s), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn empty_matrix_empty_matching() {
        assert!(greedy_match(&Mat::zeros((0, 0))).is_empty());
    }

    #[test]
    fn matches_rescan_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..40 {
            let s = Mat::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
            assert_eq!(greedy_match(&s), greedy_oracle(&s));
        }
        // Rectangular, both orientations.
        for _ in 0..10 {
            let s = Mat::from_shape_fn((5, 9), |_| rng.random_range(-1.0..1.0));
            assert_eq!(greedy_match(&s), greedy_oracle(&s));
            let s = Mat::from_shape_fn((9, 4), |_| rng.random_range(-1.0..1.0));
            assert_eq!(greedy_match(&s), greedy_oracle(&s));
        }
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = Mat::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
            let base = greedy_match(&s);
            assert_eq!(base, greedy_match(&s.mapv(f64::exp)));
            assert_eq!(base, greedy_match(&s.mapv(|x| 3.0 * x + 10.0)));
        }
    }

    #[test]
    fn matching_is_partial_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let s = Mat::from_shape_fn((7, 11), |_| rng.random_range(0.0..1.0));
        let m = greedy_match(&s);
        assert_eq!(m.len(), 7);
        let mut rows: Vec<_> = m.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = m.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(rows.len(), 7);
        assert_eq!(cols.len(), 7);
    }

    #[test]
    fn cosine_examples() {
        let z = arr2(&[[1.0, 0.0], [0.0, 2.0]]);
        let s = cosine_similarity(&z, &z).unwrap();
        assert!((s[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((s[[1, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(s[[0, 1]], 0.0);

        // Scalar dot/norm oracle on a rectangular pair.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let a = Mat::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let b = Mat::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let s = cosine_similarity(&a, &b).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                let dot: f64 = (0..3).map(|k| a[[i, k]] * b[[j, k]]).sum();
                let na: f64 = (0..3).map(|k| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
                let nb: f64 = (0..3).map(|k| b[[j, k]] * b[[j, k]]).sum::<f64>().sqrt();
                assert!((s[[i, j]] - dot / (na * nb)).abs() < 1e-12);
                assert!(s[[i, j]] >= -1.0 - 1e-12 && s[[i, j]] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn cosine_zero_row_scores_zero() {
        let a = arr2(&[[0.0, 0.0], [1.0, 0.0]]);
        let b = arr2(&[[1.0, 1.0]]);
        let s = cosine_similarity(&a, &b).unwrap();
        assert_eq!(s[[0, 0]], 0.0);
    }

    #[test]
    fn accuracy_arithmetic() {
        let gt = vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)];
        let matching = vec![(0, 0), (1, 1), (2, 2), (3, 9), (4, 8)];
        assert_eq!(accuracy(&matching, &gt), 0.6);
        assert_eq!(accuracy(&gt, &gt), 1.0);
        assert_eq!(accuracy(&[(0, 9)], &gt), 0.0);
    }

    #[test]
    fn hit_at_k_examples_and_monotonicity() {
        let s = Mat::eye(4);
        let gt: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        let hits = hit_at_k(&s, &gt, &[1, 2, 4]);
        assert_eq!(hits[&1], 1.0);
        assert_eq!(hits[&4], 1.0);

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = Mat::from_shape_fn((10, 10), |_| rng.random_range(-1.0..1.0));
            let gt: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 3) % 10)).collect();
            let ks: Vec<usize> = (1..=10).collect();
            let hits = hit_at_k(&s, &gt, &ks);
            // Full-sort oracle: recompute every rank, re-count every rate.
            let mut expect: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
            for &(src, tgt) in &gt {
                let mut row: Vec<(f64, usize)> = (0..10).map(|j| (s[[src, j]], j)).collect();
                row.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let rank = row.iter().position(|&(_, j)| j == tgt).unwrap() + 1;
                for &k in &ks {
                    if rank <= k {
                        *expect.get_mut(&k).unwrap() += 1;
                    }
                }
            }
            for &k in &ks {
                assert!((hits[&k] - expect[&k] as f64 / 10.0).abs() < 1e-15);
            }
            // Monotone in k, and k = |V_t| gives 1.0.
            for k in 2..=10 {
                assert!(hits[&k] >= hits[&(k - 1)] - 1e-15);
            }
            assert_eq!(hits[&10], 1.0);
        }
    }
}
