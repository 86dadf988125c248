//! Deterministic dataset splitting and per-epoch batch orders. Both are pure
//! functions of `(seed, epoch)` so a run can be replayed exactly.

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::cifar::Dataset;

/// Shuffles all indices by `seed`, then takes a prefix split of
/// `n_train` / `n_test` rows.
pub fn make_split(
    ds: &Dataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n_train + n_test > n {
        return Err(Error::Input(format!(
            "split of {n_train}+{n_test} oversubscribes {n} images"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    RngStream::new(seed, "split").shuffle(&mut indices);
    let train = ds.subset(&indices[..n_train])?;
    let test = ds.subset(&indices[n_train..n_train + n_test])?;
    Ok((train, test))
}

/// Training-row visit order for one epoch, derived from its own stream so
/// every epoch reshuffles independently of all other draws.
pub fn epoch_order(n_train: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_train).collect();
    RngStream::new(seed, &format!("epoch.{epoch}")).shuffle(&mut order);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Dataset {
        Dataset {
            images: vec![0u8; n * 3072],
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            source_file: "toy".into(),
            record_ids: (0..n as u32).collect(),
        }
    }

    #[test]
    fn same_seed_gives_identical_splits_and_orders() {
        let ds = toy_dataset(100);
        let (tr1, te1) = make_split(&ds, 60, 20, 1).unwrap();
        let (tr2, te2) = make_split(&ds, 60, 20, 1).unwrap();
        assert_eq!(tr1.record_ids, tr2.record_ids);
        assert_eq!(te1.record_ids, te2.record_ids);
        assert_eq!(epoch_order(60, 1, 3), epoch_order(60, 1, 3));
        assert_ne!(epoch_order(60, 1, 3), epoch_order(60, 1, 4));
    }

    #[test]
    fn full_split_is_a_permutation() {
        let ds = toy_dataset(50);
        let (train, test) = make_split(&ds, 50, 0, 7).unwrap();
        assert_eq!(test.len(), 0);
        let mut ids = train.record_ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, (0..50).collect::<Vec<u32>>());
    }

    #[test]
    fn oversubscription_is_rejected() {
        let ds = toy_dataset(10);
        assert!(matches!(
            make_split(&ds, 8, 3, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn train_and_test_do_not_overlap() {
        let ds = toy_dataset(40);
        let (train, test) = make_split(&ds, 25, 15, 5).unwrap();
        for id in &test.record_ids {
            assert!(!train.record_ids.contains(id));
        }
    }
}
