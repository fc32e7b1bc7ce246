use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ustar_core::geo::AliasTable;

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 1..300)
        .prop_filter("positive mass", |w| w.iter().sum::<f64>() > 0.0)
}

proptest! {
    #[test]
    fn reconstructs_probabilities(w in weights()) {
        let table = AliasTable::new(&w).unwrap();
        let total: f64 = w.iter().sum();
        for (p, x) in table.probabilities().iter().zip(&w) {
            prop_assert!((p - x / total).abs() < 1e-9);
        }
    }

    #[test]
    fn never_samples_zero_weight(w in weights(), seed in any::<u64>()) {
        let table = AliasTable::new(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..500 {
            prop_assert!(w[table.sample(&mut rng)] > 0.0);
        }
    }
}

#[test]
fn empirical_frequencies() {
    let w = [5.0, 1.0, 0.0, 3.0, 1.0];
    let table = AliasTable::new(&w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = [0usize; 5];
    for _ in 0..100_000 {
        counts[table.sample(&mut rng)] += 1;
    }
    for (c, x) in counts.iter().zip(w) {
        assert!((*c as f64 / 100_000.0 - x / 10.0).abs() < 0.015);
    }
}

#[test]
fn rejects_degenerate_weights() {
    assert!(AliasTable::new(&[]).is_err());
    assert!(AliasTable::new(&[0.0, 0.0]).is_err());
    assert!(AliasTable::new(&[1.0, f64::NAN]).is_err());
    assert!(AliasTable::new(&[1.0, -1.0]).is_err());
}
