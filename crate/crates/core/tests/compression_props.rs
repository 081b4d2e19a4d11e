use std::collections::BTreeSet;

use fieldcomp::compression::{compress_field, compress_model, compression_ratio, select_eligible_fields, CompressionConfig};
use fieldcomp::model::{Field, FieldId, FeatureId, FieldedEmbeddingModel, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(id: u32, n: usize, l: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * l).map(|_| rng.random_range(-1.0..1.0)).collect();
    let freqs = (0..n).map(|_| rng.random_range(0..1000)).collect();
    Field::new(FieldId(id), Matrix::from_vec(n, l, data).unwrap(), freqs).unwrap()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn quick(k: usize) -> CompressionConfig {
    let mut c = CompressionConfig {
        k,
        ..CompressionConfig::default()
    };
    c.cluster.max_iters = 5;
    c
}

#[test]
fn eligibility_selects_large_fields() {
    let model = FieldedEmbeddingModel::from_fields([field(0, 1_000, 1, 0), field(1, 10_000, 1, 1), field(2, 100_000, 1, 2)]).unwrap();
    let got = select_eligible_fields(&model, &quick(100));
    assert_eq!(got, BTreeSet::from([FieldId(1), FieldId(2)]));
    assert!(select_eligible_fields(&model, &quick(1_001)).is_empty());
    let boundary = FieldedEmbeddingModel::from_fields([field(0, 500, 1, 3)]).unwrap();
    assert_eq!(select_eligible_fields(&boundary, &quick(5)).len(), 1);
}

#[test]
fn fast_path_head_and_tail_at_full_scale() {
    let f = field(3, 100_000, 9, 42);
    let out = compress_field(&f, &quick(100)).unwrap();
    assert_eq!(out.clustered.len(), 10_000);
    assert_eq!(out.report.clustered_count, 10_000);
    let masks = &out.compressed.masks.masks;
    assert_eq!(masks.len(), 100_000);
    assert!(masks.iter().all(|&m| m < 100));

    // head: the 10^4 most frequent features, masks equal the k-means assignments
    let mut oracle: Vec<usize> = (0..100_000).collect();
    oracle.sort_by(|&a, &b| f.frequencies[b].cmp(&f.frequencies[a]).then(a.cmp(&b)));
    let head: BTreeSet<usize> = oracle[..10_000].iter().copied().collect();
    assert_eq!(out.clustered.iter().copied().collect::<BTreeSet<_>>(), head);
    for (j, &x) in out.clustered.iter().enumerate() {
        assert_eq!(masks[x], out.clustering.assignments[j]);
    }

    // tail: 10^3 sampled features are mapped to their exhaustively-nearest centroid
    let centroids = &out.compressed.codebook.centroids;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tail: Vec<usize> = oracle[10_000..].to_vec();
    for _ in 0..1_000 {
        let x = tail[rng.random_range(0..tail.len())];
        let v = f.vectors.row(x);
        let mut best = (f64::INFINITY, 0u32);
        for c in 0..centroids.rows() {
            let d = sq(v, centroids.row(c));
            if d < best.0 {
                best = (d, c as u32);
            }
        }
        assert_eq!(masks[x], best.1, "feature {x}");
    }
}

#[test]
fn fast_and_full_agree_when_head_is_everything() {
    let f = field(0, 10_000, 9, 8);
    let mut cfg = quick(100);
    let fast = compress_field(&f, &cfg).unwrap();
    cfg.fast_enabled = false;
    let full = compress_field(&f, &cfg).unwrap();
    assert_eq!(fast.clustering, full.clustering);
    assert_eq!(fast.compressed, full.compressed);
}

#[test]
fn compressed_lookup_is_the_assigned_centroid() {
    let model = FieldedEmbeddingModel::from_fields([field(0, 3_000, 9, 1), field(1, 50, 17, 2), field(2, 900, 9, 3)]).unwrap();
    let cfg = CompressionConfig {
        fast_multiplier: 20,
        ..quick(9)
    };
    let (cm, report) = compress_model(&model, &cfg).unwrap();
    assert_eq!(report.compressed_count(), 2);

    let src = model.field(FieldId(0)).unwrap();
    let direct = compress_field(src, &cfg).unwrap();
    for (j, &x) in direct.clustered.iter().enumerate() {
        let got = cm.lookup(FieldId(0), FeatureId(x as u32)).unwrap();
        let want = direct.clustering.centroids.row(direct.clustering.assignments[j] as usize);
        assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), want.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    for id in [FieldId(0), FieldId(2)] {
        let c = cm.compressed_field(id).unwrap();
        for x in 0..c.n() {
            let m = c.masks.masks[x] as usize;
            assert_eq!(c.lookup(FeatureId(x as u32)).unwrap(), c.codebook.centroids.row(m));
        }
    }
    let pass = model.field(FieldId(1)).unwrap();
    for x in 0..pass.len() {
        let a = cm.lookup(FieldId(1), FeatureId(x as u32)).unwrap();
        let b = pass.row(FeatureId(x as u32)).unwrap();
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn doubling_k_follows_the_per_field_rule() {
    let sizes = [150usize, 800, 2_000, 4_000, 12_000];
    let model = FieldedEmbeddingModel::from_fields(sizes.iter().enumerate().map(|(i, &n)| field(i as u32, n, 2, i as u64))).unwrap();
    let mut previous: Option<(u64, usize)> = None;
    for k in [5usize, 10, 20, 40] {
        let (_, report) = compress_model(&model, &quick(k)).unwrap();
        let expected: u64 = sizes.iter().map(|&n| if n >= 100 * k { k as u64 } else { n as u64 }).sum();
        let eligible = sizes.iter().filter(|&&n| n >= 100 * k).count();
        assert_eq!(report.vectors_after, expected, "k={k}");
        assert_eq!(report.compressed_count(), eligible);
        if let Some((after, prev_eligible)) = previous {
            assert!(report.vectors_after > after || eligible < prev_eligible);
        }
        previous = Some((report.vectors_after, eligible));
    }
}

#[test]
fn ratio_edge_cases() {
    let model = FieldedEmbeddingModel::from_fields([field(0, 40, 3, 0)]).unwrap();
    let (cm, report) = compress_model(&model, &quick(10)).unwrap();
    assert_eq!(report.ratio, 1.0);
    assert_eq!(compression_ratio(&report).unwrap(), 1.0);
    assert_eq!(cm.passthrough_field(FieldId(0)).unwrap(), model.field(FieldId(0)).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_totals_recompute_from_rows(
        sizes in prop::collection::vec((10usize..2_500, prop::sample::select(vec![9usize, 17])), 1..6),
        k in 2usize..12,
        seed in 0u64..100,
    ) {
        let model = FieldedEmbeddingModel::from_fields(
            sizes.iter().enumerate().map(|(i, &(n, l))| field(i as u32, n, l, seed + i as u64)),
        )
        .unwrap();
        let cfg = CompressionConfig { fast_multiplier: 10, ..quick(k) };
        let (cm, report) = compress_model(&model, &cfg).unwrap();

        let mut before = 0u64;
        let mut after = 0u64;
        for &(n, l) in &sizes {
            before += (n * l * 4) as u64;
            after += if n >= 100 * k { (n + k * l * 4) as u64 } else { (n * l * 4) as u64 };
        }
        prop_assert_eq!(report.bytes_before, before);
        prop_assert_eq!(report.bytes_after, after);
        let ratio = before as f64 / after as f64;
        prop_assert!((report.ratio - ratio).abs() <= 1e-12 * ratio);
        prop_assert_eq!(cm.memory_footprint(4, 1), after);
        prop_assert_eq!(model.memory_footprint(4), before);

        for c in cm.compressed_fields() {
            prop_assert!(c.k() < c.n());
            prop_assert_eq!(c.masks.masks.len(), c.n());
            prop_assert!(c.masks.masks.iter().all(|&m| (m as usize) < c.k()));
        }
    }
}
