use fieldcomp::model::{
    compressed_bytes, lookup_compressed, lookup_uncompressed, mask_width_for, uncompressed_bytes, Codebook,
    CompressedField, CompressedModel, Field, FieldId, FeatureId, FieldedEmbeddingModel, MaskTable, Matrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn uncompressed_lookup_matches_stored_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let f = Field::with_zero_counts(FieldId(0), Matrix::from_rows(&rows).unwrap()).unwrap();
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(&lookup_uncompressed(&f, FeatureId(i as u32)).unwrap(), row);
    }
    assert!(lookup_uncompressed(&f, FeatureId(10)).is_err());
}

#[test]
fn compressed_lookup_cases() {
    let cb = Codebook::new(FieldId(2), Matrix::from_rows(&[[5.0, 5.0], [7.0, 7.0]]).unwrap()).unwrap();
    let masks = MaskTable::new(FieldId(2), vec![1, 0, 1]);
    assert_eq!(lookup_compressed(&cb, &masks, FeatureId(0)).unwrap(), [7.0, 7.0]);
    let zeros = MaskTable::new(FieldId(2), vec![0; 4]);
    for x in 0..4 {
        assert_eq!(lookup_compressed(&cb, &zeros, FeatureId(x)).unwrap(), [5.0, 5.0]);
    }
    assert!(lookup_compressed(&cb, &MaskTable::new(FieldId(3), vec![0]), FeatureId(0)).is_err());
    assert!(lookup_compressed(&cb, &MaskTable::new(FieldId(2), vec![2]), FeatureId(0)).is_err());
}

#[test]
fn empty_and_production_sized_footprints() {
    assert_eq!(FieldedEmbeddingModel::new().memory_footprint(4), 0);
    assert_eq!(CompressedModel::new().memory_footprint(4, 1), 0);
    assert_eq!(uncompressed_bytes(124_000_000, 9, 4), 4_464_000_000);
    assert_eq!(compressed_bytes(124_000_000, 1_040_000, 9, 4, 1), 161_440_000);
}

proptest! {
    #[test]
    fn compressed_field_footprint(n in 1usize..5_000, k in 1usize..300, l in 1usize..20, seed in 0u64..50) {
        prop_assume!(k <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centroids = Matrix::from_vec(k, l, (0..k * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let masks: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let mut cm = CompressedModel::new();
        cm.insert_compressed(CompressedField::new(Codebook::new(FieldId(0), centroids).unwrap(), MaskTable::new(FieldId(0), masks)).unwrap()).unwrap();
        let width = mask_width_for(k) as u64;
        prop_assert_eq!(width, if k <= 256 { 1 } else { 2 });
        let fp = cm.memory_footprint(4, width);
        prop_assert_eq!(fp, (n as u64) * width + (k * l * 4) as u64);
        if width == 1 && (k as f64) < n as f64 * (l * 4 - 1) as f64 / (l * 4) as f64 {
            prop_assert!(fp < (n * l * 4) as u64);
        }
    }

    #[test]
    fn passthrough_lookups_are_bit_identical(n in 1usize..200, l in 1usize..18, seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * l).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect();
        let f = Field::with_zero_counts(FieldId(4), Matrix::from_vec(n, l, data).unwrap()).unwrap();
        let mut cm = CompressedModel::new();
        cm.insert_passthrough(f.clone()).unwrap();
        for x in 0..n as u32 {
            let a = cm.lookup(FieldId(4), FeatureId(x)).unwrap();
            let b = lookup_uncompressed(&f, FeatureId(x)).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
