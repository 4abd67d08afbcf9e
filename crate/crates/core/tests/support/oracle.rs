//! Brute-force split search with exact rational impurities, written
//! without reference to the production implementation.
//!
//! Every (feature, midpoint) pair is enumerated in feature-then-threshold
//! order, both children are recounted from scratch, and a candidate replaces
//! the incumbent only when its impurity is strictly lower.

#![allow(dead_code)]

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terrafuse::raster::Legend;
use terrafuse::samples::{LabeledRow, LabeledVectors};

pub type Q = Ratio<i64>;

pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: Q,
}

fn gini_exact(labels: &[u8], k: usize) -> Q {
    let n = labels.len() as i64;
    let mut acc = Q::from_integer(1);
    for c in 0..k {
        let nc = labels.iter().filter(|&&y| y as usize == c).count() as i64;
        acc -= Q::new(nc * nc, n * n);
    }
    acc
}

pub fn brute_force_split(rows: &[(Vec<f32>, u8)], k: usize) -> Option<OracleSplit> {
    let n_features = rows.first()?.0.len();
    let n = rows.len() as i64;
    let mut best: Option<OracleSplit> = None;
    for f in 0..n_features {
        let mut values: Vec<f32> = rows.iter().map(|r| r.0[f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let t = (pair[0] as f64 + pair[1] as f64) / 2.0;
            let left: Vec<u8> = rows
                .iter()
                .filter(|r| (r.0[f] as f64) <= t)
                .map(|r| r.1)
                .collect();
            let right: Vec<u8> = rows
                .iter()
                .filter(|r| (r.0[f] as f64) > t)
                .map(|r| r.1)
                .collect();
            let (nl, nr) = (left.len() as i64, right.len() as i64);
            let imp = Q::new(nl, n) * gini_exact(&left, k) + Q::new(nr, n) * gini_exact(&right, k);
            if best.as_ref().is_none_or(|b| imp < b.impurity) {
                best = Some(OracleSplit {
                    feature: f,
                    threshold: t,
                    impurity: imp,
                });
            }
        }
    }
    best
}

/// Random dataset with deliberately coarse values so ties are common.
pub fn random_dataset(seed: u64, max_rows: usize, n_features: usize, k: u8) -> Vec<(Vec<f32>, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_rows);
    let levels = rng.random_range(2..=8);
    (0..n)
        .map(|_| {
            let x = (0..n_features)
                .map(|_| rng.random_range(0..levels) as f32 * 0.25 - 0.5)
                .collect();
            (x, rng.random_range(0..k))
        })
        .collect()
}

pub fn to_vectors(rows: &[(Vec<f32>, u8)]) -> LabeledVectors {
    let n_features = rows[0].0.len();
    LabeledVectors::new(
        rows.iter()
            .map(|(x, y)| LabeledRow {
                x: x.clone(),
                y: *y,
            })
            .collect(),
        (0..n_features).map(|f| format!("f{f}")).collect(),
        Legend::default(),
    )
    .unwrap()
}

/// Integer ratio to f64 for comparison against the production impurity.
pub fn to_f64(q: &Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}
