//! Instance sampling used when populating the library.
//!
//! All three strategies return positions into the given instance sequence in
//! selection order. Requests larger than the available count are clamped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `min(n, count)` distinct indices drawn uniformly without replacement.
pub fn sample_random(count: usize, n: usize, seed: u64) -> Vec<usize> {
    let amount = n.min(count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, count, amount).into_vec()
}

/// Squared Euclidean distance of every key to the arithmetic-mean key,
/// scaled by `count^2`. Working with `count * key - sum` avoids dividing, so
/// keys that tie exactly still compare equal.
fn centroid_distances<K: AsRef<[f32]>>(keys: &[K]) -> Vec<f64> {
    let Some(first) = keys.first() else {
        return Vec::new();
    };
    let dim = first.as_ref().len();
    let mut sum = vec![0.0f64; dim];
    for key in keys {
        for (s, &v) in sum.iter_mut().zip(key.as_ref()) {
            *s += f64::from(v);
        }
    }
    let count = keys.len() as f64;
    keys.iter()
        .map(|key| {
            key.as_ref()
                .iter()
                .zip(&sum)
                .map(|(&v, &s)| {
                    let d = count * f64::from(v) - s;
                    d * d
                })
                .sum()
        })
        .collect()
}

/// All indices sorted by ascending distance to the centroid, ties by index.
pub fn centroid_order<K: AsRef<[f32]>>(keys: &[K]) -> Vec<usize> {
    let distances = centroid_distances(keys);
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// The `min(n, count)` keys closest to the centroid.
pub fn sample_clustering<K: AsRef<[f32]>>(keys: &[K], n: usize) -> Vec<usize> {
    let mut order = centroid_order(keys);
    order.truncate(n.min(keys.len()));
    order
}

/// Keys spread evenly over the distance-sorted order: sorted positions
/// `floor(k * count / m)` for `k < m`, `m = min(n, count)`.
pub fn sample_distributed<K: AsRef<[f32]>>(keys: &[K], n: usize) -> Vec<usize> {
    let order = centroid_order(keys);
    let count = order.len();
    let take = n.min(count);
    (0..take).map(|k| order[k * count / take]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn one_d(values: &[f32]) -> Vec<Vec<f32>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    /// Independent nearest-to-centroid oracle in exact integer arithmetic.
    /// Test keys are multiples of 0.5, so `2 * key` is integral and
    /// `|count * 2k - sum(2k)|^2` orders keys exactly like the true distance.
    fn brute_force_nearest(keys: &[Vec<f32>], n: usize) -> Vec<usize> {
        let dim = keys[0].len();
        let count = keys.len() as i64;
        let twice: Vec<Vec<i64>> = keys
            .iter()
            .map(|k| k.iter().map(|&v| (v * 2.0) as i64).collect())
            .collect();
        let sums: Vec<i64> = (0..dim).map(|d| twice.iter().map(|k| k[d]).sum()).collect();
        let mut scored: Vec<(i64, usize)> = twice
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let dist = k
                    .iter()
                    .zip(&sums)
                    .map(|(&v, &s)| (count * v - s).pow(2))
                    .sum::<i64>();
                (dist, i)
            })
            .collect();
        scored.sort();
        scored.into_iter().take(n).map(|(_, i)| i).collect()
    }

    #[test]
    fn random_exhaustive_and_clamped() {
        let all: BTreeSet<_> = sample_random(5, 5, 11).into_iter().collect();
        assert_eq!(all, (0..5).collect());
        let clamped: BTreeSet<_> = sample_random(3, 100, 11).into_iter().collect();
        assert_eq!(clamped, (0..3).collect());
    }

    #[test]
    fn random_is_seed_deterministic() {
        let a = sample_random(1000, 100, 3);
        assert_eq!(a, sample_random(1000, 100, 3));
        assert_eq!(a.len(), 100);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 100);
        assert_ne!(a, sample_random(1000, 100, 4));
    }

    #[test]
    fn clustering_hand_computed() {
        // centroid 3.2, distances 3.2 2.2 1.2 0.2 6.8
        assert_eq!(
            sample_clustering(&one_d(&[0.0, 1.0, 2.0, 3.0, 10.0]), 2),
            vec![3, 2]
        );
        assert_eq!(sample_clustering(&one_d(&[5.0; 4]), 2), vec![0, 1]);
        assert_eq!(sample_clustering(&one_d(&[1.0, 9.0]), 10).len(), 2);
    }

    #[test]
    fn distributed_hand_computed() {
        // centroid 6; sorted by (distance, index): 1, 2, 0, 3
        assert_eq!(
            sample_distributed(&one_d(&[0.0, 4.0, 8.0, 12.0]), 2),
            vec![1, 0]
        );
        let keys = one_d(&[3.0, 1.0, 2.0]);
        assert_eq!(sample_distributed(&keys, 3), centroid_order(&keys));
        assert_eq!(sample_distributed(&keys, 50), centroid_order(&keys));
    }

    #[test]
    fn distributed_stride_over_thousand() {
        let keys: Vec<Vec<f32>> = (0..1000)
            .map(|i| vec![i as f32 * 0.37, (i % 7) as f32])
            .collect();
        let order = centroid_order(&keys);
        let picked = sample_distributed(&keys, 100);
        let positions: Vec<usize> = picked
            .iter()
            .map(|i| order.iter().position(|o| o == i).unwrap())
            .collect();
        assert_eq!(positions, (0..100).map(|k| 10 * k).collect::<Vec<_>>());
    }

    fn small_key_sets() -> impl Strategy<Value = (Vec<Vec<f32>>, usize)> {
        (1usize..=12, 1usize..=4).prop_flat_map(|(count, dim)| {
            (
                prop::collection::vec(prop::collection::vec(-4i8..=4, dim), count).prop_map(
                    |rows| {
                        rows.into_iter()
                            .map(|r| r.into_iter().map(|v| v as f32 * 0.5).collect())
                            .collect()
                    },
                ),
                1usize..=14,
            )
        })
    }

    proptest! {
        #[test]
        fn clustering_matches_brute_force((keys, n) in small_key_sets()) {
            prop_assert_eq!(sample_clustering(&keys, n), brute_force_nearest(&keys, n.min(keys.len())));
        }

        #[test]
        fn distributed_is_distinct((keys, n) in small_key_sets()) {
            let picked = sample_distributed(&keys, n);
            prop_assert_eq!(picked.len(), n.min(keys.len()));
            prop_assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), picked.len());
        }

        #[test]
        fn random_indices_valid(count in 1usize..500, n in 1usize..600, seed in any::<u64>()) {
            let picked = sample_random(count, n, seed);
            prop_assert_eq!(picked.len(), n.min(count));
            prop_assert!(picked.iter().all(|&i| i < count));
            prop_assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), picked.len());
        }
    }
}
