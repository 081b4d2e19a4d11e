//! k-means over the embedding vectors of a single field.
//!
//! Every reduction over rows is split into fixed-size chunks whose partial
//! results are combined in chunk order, so results are bit-identical for any
//! rayon pool size.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Matrix;

/// Rows per reduction chunk. Independent of thread count.
const CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMethod {
    Random,
    KMeansPP,
    TopK,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::Random => "random",
            InitMethod::KMeansPP => "kmeanspp",
            InitMethod::TopK => "topk",
        })
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMethod::Random),
            "kmeanspp" | "kmeans++" => Ok(InitMethod::KMeansPP),
            "topk" | "top-k" => Ok(InitMethod::TopK),
            other => Err(Error::Config(format!(
                "unknown init method '{other}' (expected random, kmeanspp or topk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative objective improvement of an iteration drops below this.
    pub rel_tolerance: f64,
    pub seed: u64,
    pub init_method: InitMethod,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 100,
            max_iters: 50,
            rel_tolerance: 1e-4,
            seed: 0,
            init_method: InitMethod::KMeansPP,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tolerance >= 0.0) || !self.rel_tolerance.is_finite() {
            return Err(Error::Config(
                "rel_tolerance must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub centroids: Matrix,
    pub assignments: Vec<u32>,
    pub objective: f64,
    pub iterations_run: usize,
    /// Objective after initialization, after every Lloyd iteration, and of the returned state.
    pub objective_trace: Vec<f64>,
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(vectors: &Matrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if vectors.rows() < k {
        return Err(Error::InsufficientInput {
            needed: k,
            available: vectors.rows(),
        });
    }
    Ok(())
}

/// Sums `f(row)` over all rows in fixed chunks, combining partials in order.
fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<f64> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK_ROWS;
            let end = (start + CHUNK_ROWS).min(n);
            (start..end).map(&f).sum::<f64>()
        })
        .collect();
    partials.into_iter().sum()
}

/// k distinct rows drawn uniformly without replacement.
pub fn init_random(vectors: &Matrix, _frequencies: &[u64], config: &ClusterConfig) -> Result<Matrix> {
    check_rows(vectors, config.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = index::sample(&mut rng, vectors.rows(), config.k).into_vec();
    Ok(vectors.select_rows(&picks))
}

/// D²-weighted seeding. The first pick is uniform.
pub fn init_kmeanspp(vectors: &Matrix, _frequencies: &[u64], config: &ClusterConfig) -> Result<Matrix> {
    check_rows(vectors, config.k)?;
    let n = vectors.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // same draw as init_random so that k = 1 agrees with it
    let first = index::sample(&mut rng, n, 1).index(0);

    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(config.k);
    chosen[first] = true;
    picks.push(first);

    let mut d2: Vec<f64> = vec![0.0; n];
    update_min_distances(vectors, vectors.row(first), &mut d2, true);

    while picks.len() < config.k {
        let total = chunked_sum(n, |i| d2[i]);
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the running sum
            pick.or(last_positive).expect("positive total implies a positive weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        picks.push(next);
        update_min_distances(vectors, vectors.row(next), &mut d2, false);
    }
    Ok(vectors.select_rows(&picks))
}

fn update_min_distances(vectors: &Matrix, centre: &[f64], d2: &mut [f64], reset: bool) {
    d2.par_chunks_mut(CHUNK_ROWS)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * CHUNK_ROWS;
            for (j, slot) in chunk.iter_mut().enumerate() {
                let d = squared_distance(vectors.row(base + j), centre);
                if reset || d < *slot {
                    *slot = d;
                }
            }
        });
}

/// Row indices of the `k` largest frequencies, descending, ties to the smaller index.
pub fn topk_indices(frequencies: &[u64], k: usize) -> Vec<usize> {
    let by_freq = |a: &usize, b: &usize| -> Ordering {
        frequencies[*b]
            .cmp(&frequencies[*a])
            .then_with(|| a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..frequencies.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_freq);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_freq);
    idx
}

/// Seeds with the rows of the `k` most frequent features.
pub fn init_topk(vectors: &Matrix, frequencies: &[u64], config: &ClusterConfig) -> Result<Matrix> {
    check_rows(vectors, config.k)?;
    if frequencies.len() != vectors.rows() {
        return Err(Error::Inconsistent(format!(
            "{} frequencies for {} rows",
            frequencies.len(),
            vectors.rows()
        )));
    }
    Ok(vectors.select_rows(&topk_indices(frequencies, config.k)))
}

pub fn initialize(vectors: &Matrix, frequencies: &[u64], config: &ClusterConfig) -> Result<Matrix> {
    match config.init_method {
        InitMethod::Random => init_random(vectors, frequencies, config),
        InitMethod::KMeansPP => init_kmeanspp(vectors, frequencies, config),
        InitMethod::TopK => init_topk(vectors, frequencies, config),
    }
}

#[inline]
fn nearest(row: &[f64], centroids: &Matrix) -> (u32, f64) {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (c, centre) in centroids.iter_rows().enumerate() {
        let d = squared_distance(row, centre);
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    (best, best_d)
}

/// Index of the closest centroid for every row; ties go to the smaller index.
pub fn assign_nearest(vectors: &Matrix, centroids: &Matrix) -> Result<Vec<u32>> {
    if vectors.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            actual: vectors.cols(),
        });
    }
    if centroids.rows() == 0 {
        return Err(Error::InvalidInput("no centroids to assign to".into()));
    }
    Ok((0..vectors.rows())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| nearest(vectors.row(i), centroids).0)
        .collect())
}

/// Sum of squared distances from each row to its assigned centroid.
pub fn objective(vectors: &Matrix, centroids: &Matrix, assignments: &[u32]) -> Result<f64> {
    if vectors.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            actual: vectors.cols(),
        });
    }
    if assignments.len() != vectors.rows() {
        return Err(Error::DimensionMismatch {
            expected: vectors.rows(),
            actual: assignments.len(),
        });
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a as usize >= centroids.rows()) {
        return Err(Error::InvalidInput(format!(
            "assignment {bad} out of range for {} centroids",
            centroids.rows()
        )));
    }
    Ok(chunked_sum(vectors.rows(), |i| {
        squared_distance(vectors.row(i), centroids.row(assignments[i] as usize))
    }))
}

/// Per-cluster component sums and member counts, reduced in chunk order.
fn cluster_sums(vectors: &Matrix, assignments: &[u32], k: usize) -> (Vec<f64>, Vec<usize>) {
    let l = vectors.cols();
    let n = vectors.rows();
    let partials: Vec<(Vec<f64>, Vec<usize>)> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let mut sums = vec![0.0; k * l];
            let mut counts = vec![0usize; k];
            let start = c * CHUNK_ROWS;
            for i in start..(start + CHUNK_ROWS).min(n) {
                let a = assignments[i] as usize;
                counts[a] += 1;
                for (s, v) in sums[a * l..(a + 1) * l].iter_mut().zip(vectors.row(i)) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * l];
    let mut counts = vec![0usize; k];
    for (ps, pc) in partials {
        for (s, p) in sums.iter_mut().zip(&ps) {
            *s += p;
        }
        for (c, p) in counts.iter_mut().zip(&pc) {
            *c += p;
        }
    }
    (sums, counts)
}

/// Replaces each non-empty cluster's centroid with the mean of its rows.
/// Returns the indices of empty clusters, whose centroids are left unchanged.
fn recompute_means(vectors: &Matrix, assignments: &[u32], centroids: &mut Matrix) -> Vec<usize> {
    let k = centroids.rows();
    let l = centroids.cols();
    let (sums, counts) = cluster_sums(vectors, assignments, k);
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            empty.push(c);
            continue;
        }
        let inv = counts[c] as f64;
        for (dst, s) in centroids.row_mut(c).iter_mut().zip(&sums[c * l..(c + 1) * l]) {
            *dst = s / inv;
        }
    }
    empty
}

/// Moves each empty centroid onto the row farthest from its own centroid.
///
/// Empty clusters own no rows, so the distances do not change while
/// repairing; they are computed once and the farthest distinct rows are
/// handed out in order (ties to the smaller row index).
fn repair_empty(vectors: &Matrix, assignments: &[u32], centroids: &mut Matrix, empty: &[usize]) {
    let dist: Vec<f64> = (0..vectors.rows())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| squared_distance(vectors.row(i), centroids.row(assignments[i] as usize)))
        .collect();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    let take = empty.len().min(order.len());
    if take == 0 {
        return;
    }
    let by_distance = |a: &usize, b: &usize| dist[*b].total_cmp(&dist[*a]).then(a.cmp(b));
    if take < order.len() {
        order.select_nth_unstable_by(take - 1, by_distance);
    }
    order.truncate(take);
    order.sort_unstable_by(by_distance);
    for (&c, &i) in empty.iter().zip(&order) {
        if dist[i] > 0.0 {
            let row = vectors.row(i).to_vec();
            centroids.row_mut(c).copy_from_slice(&row);
        } else {
            break;
        }
    }
}

fn validate_input(vectors: &Matrix, config: &ClusterConfig) -> Result<()> {
    config.validate()?;
    check_rows(vectors, config.k)?;
    if !vectors.all_finite() {
        return Err(Error::InvalidInput(
            "embedding vectors contain NaN or infinite components".into(),
        ));
    }
    Ok(())
}

/// Lloyd iteration from a caller-provided initial codebook.
pub fn lloyd(vectors: &Matrix, initial: Matrix, config: &ClusterConfig) -> Result<ClusteringResult> {
    config.validate()?;
    if initial.cols() != vectors.cols() {
        return Err(Error::DimensionMismatch {
            expected: vectors.cols(),
            actual: initial.cols(),
        });
    }
    let mut centroids = initial;
    let mut assignments = assign_nearest(vectors, &centroids)?;
    let mut obj = objective(vectors, &centroids, &assignments)?;
    let mut trace = vec![obj];
    let mut iterations = 0;

    while iterations < config.max_iters {
        let mut next = centroids.clone();
        let empty = recompute_means(vectors, &assignments, &mut next);
        if !empty.is_empty() {
            repair_empty(vectors, &assignments, &mut next, &empty);
        }
        let next_assign = assign_nearest(vectors, &next)?;
        let next_obj = objective(vectors, &next, &next_assign)?;
        iterations += 1;
        trace.push(next_obj);

        let stable = next_assign == assignments;
        let improvement = if obj > 0.0 { (obj - next_obj) / obj } else { 0.0 };
        centroids = next;
        assignments = next_assign;
        obj = next_obj;
        if stable || obj == 0.0 || improvement < config.rel_tolerance {
            break;
        }
    }

    // Final half-step: centroids become the means of the returned assignment.
    recompute_means(vectors, &assignments, &mut centroids);
    let final_obj = objective(vectors, &centroids, &assignments)?;
    if final_obj != obj {
        trace.push(final_obj);
    }

    Ok(ClusteringResult {
        centroids,
        assignments,
        objective: final_obj,
        iterations_run: iterations,
        objective_trace: trace,
    })
}

/// Initialization followed by Lloyd iteration.
pub fn kmeans(vectors: &Matrix, frequencies: &[u64], config: &ClusterConfig) -> Result<ClusteringResult> {
    validate_input(vectors, config)?;
    let initial = initialize(vectors, frequencies, config)?;
    lloyd(vectors, initial, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Matrix {
        let data = (0..n * l).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, l, data).unwrap()
    }

    fn cfg(k: usize, seed: u64, init: InitMethod) -> ClusterConfig {
        ClusterConfig {
            k,
            seed,
            init_method: init,
            ..ClusterConfig::default()
        }
    }

    #[test]
    fn random_init_with_k_equal_n_is_permutation() {
        let v = m(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let c = init_random(&v, &[], &cfg(5, 3, InitMethod::Random)).unwrap();
        let mut got: Vec<f64> = c.iter_rows().map(|r| r[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn inits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(&mut rng, 300, 4);
        let f: Vec<u64> = (0..300).map(|i| (i * 7 % 13) as u64).collect();
        for init in [InitMethod::Random, InitMethod::KMeansPP, InitMethod::TopK] {
            let a = initialize(&v, &f, &cfg(10, 42, init)).unwrap();
            let b = initialize(&v, &f, &cfg(10, 42, init)).unwrap();
            assert_eq!(a, b, "{init}");
        }
    }

    #[test]
    fn insufficient_rows_rejected() {
        let v = m(&[&[0.0], &[1.0]]);
        for init in [InitMethod::Random, InitMethod::KMeansPP, InitMethod::TopK] {
            let err = initialize(&v, &[1, 1], &cfg(3, 0, init)).unwrap_err();
            assert!(matches!(err, Error::InsufficientInput { needed: 3, available: 2 }));
        }
    }

    #[test]
    fn kmeanspp_picks_the_outlier() {
        let mut rows = vec![vec![0.0, 0.0]; 99];
        rows.push(vec![100.0, 100.0]);
        let v = Matrix::from_rows(&rows).unwrap();
        for seed in 0..50 {
            let c = init_kmeanspp(&v, &[], &cfg(2, seed, InitMethod::KMeansPP)).unwrap();
            let got: Vec<&[f64]> = c.iter_rows().collect();
            assert!(got.contains(&[0.0, 0.0].as_slice()));
            assert!(got.contains(&[100.0, 100.0].as_slice()));
        }
    }

    #[test]
    fn kmeanspp_with_k1_matches_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_matrix(&mut rng, 50, 3);
        for seed in 0..20 {
            let a = init_kmeanspp(&v, &[], &cfg(1, seed, InitMethod::KMeansPP)).unwrap();
            let b = init_random(&v, &[], &cfg(1, seed, InitMethod::Random)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn kmeanspp_degenerate_falls_back_to_unchosen_rows() {
        let v = m(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let c = init_kmeanspp(&v, &[], &cfg(3, 5, InitMethod::KMeansPP)).unwrap();
        assert_eq!(c.rows(), 3);
    }

    #[test]
    fn topk_tie_breaks_by_index() {
        let v = m(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let c = init_topk(&v, &[5, 1, 9, 9], &cfg(2, 0, InitMethod::TopK)).unwrap();
        assert_eq!(c, m(&[&[2.0], &[3.0]]));
        let c = init_topk(&v, &[4, 4, 4, 4], &cfg(2, 0, InitMethod::TopK)).unwrap();
        assert_eq!(c, m(&[&[0.0], &[1.0]]));
        assert!(init_topk(&v, &[1, 2], &cfg(2, 0, InitMethod::TopK)).is_err());
    }

    #[test]
    fn assign_breaks_ties_low() {
        let c = m(&[&[0.0], &[10.0]]);
        let v = m(&[&[1.0], &[9.0], &[5.0]]);
        assert_eq!(assign_nearest(&v, &c).unwrap(), vec![0, 1, 0]);
        let one = m(&[&[3.0]]);
        assert_eq!(assign_nearest(&v, &one).unwrap(), vec![0, 0, 0]);
        assert!(assign_nearest(&v, &m(&[&[0.0, 0.0]])).is_err());
    }

    #[test]
    fn objective_hand_values() {
        let v = m(&[&[0.0], &[2.0]]);
        assert_eq!(objective(&v, &m(&[&[1.0]]), &[0, 0]).unwrap(), 2.0);
        assert_eq!(objective(&v, &v, &[0, 1]).unwrap(), 0.0);
        assert!(objective(&v, &v, &[0]).is_err());
        assert!(objective(&v, &v, &[0, 2]).is_err());
    }

    #[test]
    fn kmeans_with_k_equal_n_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_matrix(&mut rng, 12, 3);
        for init in [InitMethod::Random, InitMethod::KMeansPP, InitMethod::TopK] {
            let f = vec![1; 12];
            let r = kmeans(&v, &f, &cfg(12, 1, init)).unwrap();
            assert_eq!(r.objective, 0.0);
            let mut seen = r.assignments.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..12).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn kmeans_rejects_non_finite() {
        let v = m(&[&[0.0], &[f64::INFINITY]]);
        assert!(matches!(
            kmeans(&v, &[], &cfg(1, 0, InitMethod::Random)),
            Err(Error::InvalidInput(_))
        ));
        let v = m(&[&[0.0]]);
        assert!(matches!(
            kmeans(&v, &[], &cfg(2, 0, InitMethod::Random)),
            Err(Error::InsufficientInput { .. })
        ));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Both initial centroids sit left of every point, so cluster 1 starts empty.
        let v = m(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let init = m(&[&[-1.0], &[-5.0]]);
        let r = lloyd(&v, init, &ClusterConfig { k: 2, ..ClusterConfig::default() }).unwrap();
        let mut a = r.assignments.clone();
        a.dedup();
        assert_eq!(a.len(), 2);
        assert!(r.objective < 0.02 + 1e-12);
    }

    #[test]
    fn repair_matches_rescanning_oracle() {
        fn oracle(vectors: &Matrix, assignments: &[u32], centroids: &mut Matrix, empty: &[usize]) {
            let mut taken: Vec<usize> = Vec::new();
            for &c in empty {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..vectors.rows() {
                    if taken.contains(&i) {
                        continue;
                    }
                    let d = squared_distance(vectors.row(i), centroids.row(assignments[i] as usize));
                    if best.is_none_or(|(_, bd)| d > bd) {
                        best = Some((i, d));
                    }
                }
                if let Some((i, d)) = best {
                    if d > 0.0 {
                        taken.push(i);
                        let row = vectors.row(i).to_vec();
                        centroids.row_mut(c).copy_from_slice(&row);
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let k = rng.random_range(2..12);
            // coarse grid values force distance ties
            let data = (0..n * 2).map(|_| rng.random_range(-2i32..3) as f64).collect();
            let vectors = Matrix::from_vec(n, 2, data).unwrap();
            let used = rng.random_range(1..k);
            let centroids = random_matrix(&mut rng, k, 2);
            let assignments: Vec<u32> = (0..n).map(|_| rng.random_range(0..used) as u32).collect();
            let empty: Vec<usize> = (used..k).collect();
            let mut a = centroids.clone();
            let mut b = centroids.clone();
            repair_empty(&vectors, &assignments, &mut a, &empty);
            oracle(&vectors, &assignments, &mut b, &empty);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn result_is_consistent_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let v = random_matrix(&mut rng, 500, 5);
        let r = kmeans(&v, &[], &cfg(8, 2, InitMethod::KMeansPP)).unwrap();
        let recomputed = objective(&v, &r.centroids, &r.assignments).unwrap();
        assert!((recomputed - r.objective).abs() <= 1e-9 * r.objective.max(1.0));
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
        // centroids are the means of their members
        let (sums, counts) = cluster_sums(&v, &r.assignments, 8);
        for c in 0..8 {
            if counts[c] == 0 {
                continue;
            }
            for j in 0..5 {
                let mean = sums[c * 5 + j] / counts[c] as f64;
                assert!((mean - r.centroids.row(c)[j]).abs() <= 1e-9 * mean.abs().max(1.0));
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_matrix(&mut rng, 9000, 4);
        let config = cfg(16, 11, InitMethod::KMeansPP);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| kmeans(&v, &[], &config)).unwrap();
        let b = four.install(|| kmeans(&v, &[], &config)).unwrap();
        assert_eq!(a, b);
    }
}
