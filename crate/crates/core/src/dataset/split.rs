use rand::seq::SliceRandom;

use super::{Dataset, DatasetError};
use crate::rng::substream;

/// Seeded random partition into (train, test) with `⌊n·f⌋` training images.
/// Each side keeps the original relative image order.
pub fn split_dataset(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    let n = d.images.len();
    let degenerate = DatasetError::DegenerateSplit {
        n,
        fraction: train_fraction,
    };
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(degenerate);
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(degenerate);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split"));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let side = |want: bool| Dataset {
        images: d
            .images
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(img, _)| img.clone())
            .collect(),
        vocab: d.vocab.clone(),
        synonyms: d.synonyms.clone(),
    };
    Ok((side(true), side(false)))
}
