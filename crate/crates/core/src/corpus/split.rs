use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sentence::{Dataset, Split};
use crate::error::{Error, Result};

/// Hold out `dev_size` sentences from a training set that ships without a
/// development split. The selection is a seeded shuffle; both halves keep
/// the original relative order.
pub fn carve_dev_split(train: &Dataset, dev_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if dev_size == 0 || dev_size >= train.len() {
        return Err(Error::Config(format!(
            "cannot carve {dev_size} dev sentences from {} training sentences",
            train.len()
        )));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; train.len()];
    for &i in &order[..dev_size] {
        is_dev[i] = true;
    }
    let (mut keep, mut dev) = (Vec::new(), Vec::new());
    for (s, d) in train.sentences.iter().zip(is_dev) {
        if d {
            dev.push(s.clone());
        } else {
            keep.push(s.clone());
        }
    }
    Ok((
        Dataset {
            sentences: keep,
            split: Split::Train,
        },
        Dataset {
            sentences: dev,
            split: Split::Dev,
        },
    ))
}
