use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Reference partition sizes the proportions are taken from.
const REF_TRAIN: usize = 232;
const REF_VAL: usize = 30;
const REF_TEST: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Sizes `(train, val, test)` for `n` records: validation and test are
/// rounded proportionally (at least one each) and train takes the rest.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 records to split, got {n}"
        )));
    }
    let total = (REF_TRAIN + REF_VAL + REF_TEST) as f64;
    let share = |r: usize| ((n as f64 * r as f64 / total).round() as usize).max(1);
    let val = share(REF_VAL);
    let test = share(REF_TEST);
    Ok((n - val - test, val, test))
}

/// Seeded shuffle followed by a train/val/test cut.
pub fn split_dataset<T>(records: Vec<T>, seed: u64) -> Result<DatasetSplit<T>> {
    let (n_train, n_val, _) = split_sizes(records.len())?;
    let mut records = records;
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = records.split_off(n_train + n_val);
    let val = records.split_off(n_train);
    Ok(DatasetSplit {
        train: records,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn reference_sizes() {
        assert_eq!(split_sizes(322).unwrap(), (232, 30, 60));
        assert_eq!(split_sizes(50).unwrap(), (36, 5, 9));
        assert_eq!(split_sizes(3).unwrap(), (1, 1, 1));
        assert!(split_sizes(2).is_err());
    }

    #[test]
    fn deterministic() {
        let a = split_dataset((0..50).collect::<Vec<_>>(), 7).unwrap();
        let b = split_dataset((0..50).collect::<Vec<_>>(), 7).unwrap();
        assert_eq!(a, b);
        let c = split_dataset((0..50).collect::<Vec<_>>(), 8).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..400, seed in any::<u64>()) {
            let s = split_dataset((0..n).collect::<Vec<_>>(), seed).unwrap();
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            let all: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            prop_assert_eq!(all.len(), n);
            prop_assert!(!s.val.is_empty() && !s.test.is_empty() && !s.train.is_empty());
        }
    }
}
