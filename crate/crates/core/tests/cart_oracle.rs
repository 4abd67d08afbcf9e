mod support;

use support::oracle::{brute_force_split, random_dataset, to_f64, to_vectors};
use terrafuse::cart::best_split;

#[test]
fn best_split_matches_brute_force_on_random_30x3_datasets() {
    for seed in 0..150 {
        let rows = random_dataset(seed, 30, 3, 3);
        let data = to_vectors(&rows);
        let got = best_split(&data);
        let want = brute_force_split(&rows, 3);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert_eq!(g.feature, w.feature, "seed {seed}");
                assert_eq!(g.threshold.to_bits(), w.threshold.to_bits(), "seed {seed}");
                assert!(
                    (g.weighted_child_impurity - to_f64(&w.impurity)).abs() < 1e-12,
                    "seed {seed}"
                );
            }
            (g, w) => panic!(
                "seed {seed}: production {:?} vs oracle {:?}",
                g,
                w.map(|w| (w.feature, w.threshold))
            ),
        }
    }
}

#[test]
fn constant_features_have_no_split_in_either() {
    let rows = vec![
        (vec![1.0, 2.0, 3.0], 0),
        (vec![1.0, 2.0, 3.0], 1),
        (vec![1.0, 2.0, 3.0], 2),
    ];
    assert!(best_split(&to_vectors(&rows)).is_none());
    assert!(brute_force_split(&rows, 3).is_none());
}
