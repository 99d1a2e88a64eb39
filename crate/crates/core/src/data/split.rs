use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};

/// Largest-remainder apportionment of `n` items by `ratios`; leftover units
/// go to the largest fractional parts, ties to the earlier ratio.
pub fn apportion(n: usize, ratios: &[u32]) -> Result<Vec<usize>> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if ratios.is_empty() || ratios.contains(&0) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let mut sizes: Vec<usize> = ratios
        .iter()
        .map(|&r| (n as u64 * r as u64 / total) as usize)
        .collect();
    // remainder numerators, compared exactly in integers
    let mut order: Vec<(u64, usize)> = ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| ((n as u64 * r as u64) % total, i))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = n - sizes.iter().sum::<usize>();
    for &(_, i) in order.iter().take(left) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Seeded shuffle followed by a train/val/test partition.
pub fn split_with(ds: &Dataset, ratios: (u32, u32, u32), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let sizes = apportion(ds.len(), &[ratios.0, ratios.1, ratios.2])?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(3);
    let mut start = 0;
    for (size, tag) in sizes.iter().zip([SplitTag::Train, SplitTag::Val, SplitTag::Test]) {
        let items = order[start..start + size].iter().map(|&i| ds.items[i].clone()).collect();
        parts.push(Dataset {
            items,
            domain: ds.domain,
            split: tag,
        });
        start += size;
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((train, val, test))
}

/// 7:1:2 split.
pub fn split(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    split_with(ds, (7, 1, 2), seed)
}
