use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified k-fold partition of `indices` (with `labels[i]` the class of `indices[i]`).
///
/// Each class is shuffled and the classes are laid end to end; position `p`
/// goes to fold `p mod k`. Fold sizes then differ by at most one overall and
/// per class.
pub fn kfold_split(indices: &[usize], labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if indices.len() != labels.len() {
        return Err(Error::Invalid("indices and labels differ in length".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&i, &l) in indices.iter().zip(labels) {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut laid = Vec::with_capacity(indices.len());
    for (class, mut members) in by_class {
        if members.len() < k {
            return Err(Error::Invalid(format!("class {class} has {} samples, fewer than k={k}", members.len())));
        }
        members.shuffle(&mut rng);
        laid.extend(members);
    }
    let mut val = vec![Vec::new(); k];
    for (p, i) in laid.iter().enumerate() {
        val[p % k].push(*i);
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..k).filter(|&g| g != f).flat_map(|g| val[g].iter().copied()).collect(),
            val: val[f].clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_into_five() {
        let idx: Vec<usize> = (0..10).collect();
        let folds = kfold_split(&idx, &[0; 10], 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
        all.sort();
        assert_eq!(all, idx);
        assert!(folds.iter().all(|f| f.val.len() == 2 && f.train.len() == 8));
        assert!(kfold_split(&idx, &[0; 10], 11, 1).is_err());
    }
}
