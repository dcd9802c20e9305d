//! Seeded stratified partitioning.

use crate::error::{DataError, Error, Result};
use crate::rng::{shuffle, stream, Stream};

pub const DEFAULT_RATIO: f64 = 0.7;
pub const DEFAULT_SEED: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class (in class order): shuffle that class's indices with one shared
/// seeded stream and send the first `ceil(ratio · n_c)` to `train`. Both
/// halves are returned in ascending index order.
pub fn stratified_split(labels: &[usize], num_classes: usize, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} outside {num_classes} classes")))?
            .push(i);
    }
    let mut rng = stream(seed, Stream::Split);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(DataError::TooFewSamples { class: c.to_string(), count: idx.len(), needed: 2 }.into());
        }
        shuffle(&mut idx, &mut rng);
        let n_train = ((ratio * idx.len() as f64).ceil() as usize).min(idx.len());
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Stratified split of a subset: `indices` are positions in `labels`.
pub fn stratified_subsplit(indices: &[usize], labels: &[usize], num_classes: usize, ratio: f64, seed: u64) -> Result<Split> {
    let sub_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let s = stratified_split(&sub_labels, num_classes, ratio, seed)?;
    Ok(Split { train: s.train.iter().map(|&i| indices[i]).collect(), test: s.test.iter().map(|&i| indices[i]).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_fifty() {
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let s = stratified_split(&labels, 2, DEFAULT_RATIO, DEFAULT_SEED).unwrap();
        for c in 0..2 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 35);
            assert_eq!(s.test.iter().filter(|&&i| labels[i] == c).count(), 15);
        }
        assert_eq!(s, stratified_split(&labels, 2, DEFAULT_RATIO, DEFAULT_SEED).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_tiny_classes_and_bad_ratio() {
        assert!(stratified_split(&[0, 0, 1], 2, 0.7, 1).is_err());
        assert!(stratified_split(&[0, 0, 1, 1], 2, 1.0, 1).is_err());
        assert!(stratified_split(&[0, 0, 1, 1], 3, 0.5, 1).is_err());
    }
}
