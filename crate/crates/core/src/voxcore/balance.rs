use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::class::{OrientationClass, NUM_CLASSES};
use crate::error::{Error, Result};

/// Indices of a class-balanced subsequence of `labels`.
///
/// Every class keeps `min` samples, where `min` is the smallest class count;
/// members are drawn uniformly under `seed` and returned in original order.
pub fn balanced_indices(labels: &[OrientationClass], seed: u64) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for class in OrientationClass::ALL {
        if by_class[class.index()].is_empty() {
            return Err(Error::Balance {
                class: class.name().to_string(),
            });
        }
    }
    let keep = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(keep * NUM_CLASSES);
    for members in &by_class {
        for i in sample(&mut rng, members.len(), keep).iter() {
            picked.push(members[i]);
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Class-balanced subsequence of labelled samples.
pub fn enforce_balance<T: Clone>(
    samples: &[(T, OrientationClass)],
    seed: u64,
) -> Result<Vec<(T, OrientationClass)>> {
    let labels: Vec<_> = samples.iter().map(|(_, l)| *l).collect();
    Ok(balanced_indices(&labels, seed)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use OrientationClass::*;

    fn labelled(counts: [usize; 3]) -> Vec<(usize, OrientationClass)> {
        let mut out = Vec::new();
        for (c, &n) in OrientationClass::ALL.iter().zip(counts.iter()) {
            for _ in 0..n {
                out.push((out.len(), *c));
            }
        }
        out
    }

    #[test]
    fn already_balanced_keeps_everything() {
        let s = labelled([10, 10, 10]);
        assert_eq!(enforce_balance(&s, 1).unwrap(), s);
    }

    #[test]
    fn min_count_rule() {
        let s = labelled([2, 3, 95]);
        let out = enforce_balance(&s, 5).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out.iter().filter(|(_, c)| *c == S).count(), 2);
        assert_eq!(out, enforce_balance(&s, 5).unwrap());
    }

    #[test]
    fn missing_class_is_named() {
        let s = labelled([4, 0, 4]);
        match enforce_balance(&s, 0) {
            Err(Error::Balance { class }) => assert_eq!(class, "D"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn histogram_is_uniform(counts in proptest::array::uniform3(1usize..40), seed in any::<u64>()) {
            let s = labelled(counts);
            let out = enforce_balance(&s, seed).unwrap();
            let m = *counts.iter().min().unwrap();
            for c in OrientationClass::ALL {
                prop_assert_eq!(out.iter().filter(|(_, l)| *l == c).count(), m);
            }
            prop_assert!(out.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }
}
