use super::{Result, VolumeError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded shuffle followed by a `train_parts : test_parts` split.
///
/// The train share is `floor(n * train / (train + test))`, clamped so both
/// sides keep at least one id.
pub fn dataset_split<T: Clone>(
    ids: &[T],
    (train_parts, test_parts): (usize, usize),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = ids.len();
    if n < 2 || train_parts == 0 || test_parts == 0 {
        return Err(VolumeError::SplitTooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * train_parts / (train_parts + test_parts)).clamp(1, n - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
