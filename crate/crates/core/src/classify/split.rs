use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifyError;

/// Train/validation/test participant counts of the reference cohort of 22.
pub const DEFAULT_RATIOS: (usize, usize, usize) = (12, 5, 5);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitPlan {
    /// True when no participant is in more than one set.
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<&String> = self.train_ids.iter().chain(&self.val_ids).chain(&self.test_ids).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        all.len() == n
    }
}

/// Shuffles participants under `seed` and cuts them in proportion to
/// `ratios`, rounding by largest remainder (ties to the earlier set).
pub fn split_participants(
    ids: &[String],
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<SplitPlan, ClassifyError> {
    let mut unique: Vec<String> = ids.to_vec();
    unique.sort();
    unique.dedup();
    let n = unique.len();
    let r = [ratios.0, ratios.1, ratios.2];
    let total: usize = r.iter().sum();
    if r.contains(&0) {
        return Err(ClassifyError::Invalid(format!("split ratios must be positive, got {ratios:?}")));
    }
    if n < 3 {
        return Err(ClassifyError::InsufficientData(format!(
            "need at least 3 participants to fill train, validation and test, got {n}"
        )));
    }
    let mut sizes: [usize; 3] = std::array::from_fn(|k| n * r[k] / total);
    let leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // Remainders as exact integers: (n * r) mod total.
    order.sort_by_key(|&k| std::cmp::Reverse(n * r[k] % total));
    for &k in order.iter().take(leftover) {
        sizes[k] += 1;
    }
    if sizes.contains(&0) {
        return Err(ClassifyError::InsufficientData(format!(
            "{n} participants leave an empty set under ratios {ratios:?}"
        )));
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_start = sizes[0];
    let test_start = sizes[0] + sizes[1];
    Ok(SplitPlan {
        train_ids: unique[..val_start].to_vec(),
        val_ids: unique[val_start..test_start].to_vec(),
        test_ids: unique[test_start..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    fn sizes(p: &SplitPlan) -> (usize, usize, usize) {
        (p.train_ids.len(), p.val_ids.len(), p.test_ids.len())
    }

    #[test]
    fn reference_cohort_sizes() {
        let p = split_participants(&ids(22), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!(sizes(&p), (12, 5, 5));
        assert!(p.is_disjoint());
    }

    #[test]
    fn largest_remainder_for_ten() {
        // Quotas 5.45 / 2.27 / 2.27: the spare participant goes to train.
        assert_eq!(sizes(&split_participants(&ids(10), DEFAULT_RATIOS, 1).unwrap()), (6, 2, 2));
        assert_eq!(sizes(&split_participants(&ids(3), DEFAULT_RATIOS, 1).unwrap()), (1, 1, 1));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_participants(&ids(22), DEFAULT_RATIOS, 7).unwrap();
        assert_eq!(a, split_participants(&ids(22), DEFAULT_RATIOS, 7).unwrap());
        assert_ne!(a, split_participants(&ids(22), DEFAULT_RATIOS, 8).unwrap());
    }

    #[test]
    fn too_few_participants() {
        assert!(split_participants(&ids(2), DEFAULT_RATIOS, 1).is_err());
        assert!(split_participants(&ids(5), (1, 0, 1), 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_of_all_ids(n in 3usize..60, seed in any::<u64>()) {
            let all = ids(n);
            let p = split_participants(&all, DEFAULT_RATIOS, seed).unwrap();
            prop_assert!(p.is_disjoint());
            let mut joined: Vec<String> = p.train_ids.iter().chain(&p.val_ids).chain(&p.test_ids).cloned().collect();
            joined.sort();
            prop_assert_eq!(joined, all);
        }
    }
}
