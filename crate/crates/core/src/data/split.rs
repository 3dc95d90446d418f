//! Deterministic stratified partitioning.
//!
//! Both splitters shuffle each class's sample positions with the supplied
//! generator and then carve the shuffled list, so membership is uniform
//! given the seed. Returned position lists are sorted.

use crate::data::DatasetIndex;
use crate::error::{Error, Result};
use crate::rng::Rng;

fn positions_by_class(index: &DatasetIndex) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); index.num_classes()];
    for (pos, s) in index.samples.iter().enumerate() {
        by_class[s.class_id].push(pos);
    }
    by_class
}

/// Stratified holdout: per class, round(fraction * n) samples go to the
/// second (test) list, rounding half up, floored at 1 and capped at n - 1.
pub fn stratified_split(
    index: &DatasetIndex,
    fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Split(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class_id, mut positions) in positions_by_class(index).into_iter().enumerate() {
        let n = positions.len();
        if n < 2 {
            return Err(Error::Split(format!(
                "class \"{}\" has {n} samples; need at least 2 to split",
                index.class_names[class_id]
            )));
        }
        // round half up, then keep both sides non-empty
        let want = (fraction * n as f64 + 0.5).floor() as usize;
        let take = want.clamp(1, n - 1);
        rng.shuffle(&mut positions);
        test.extend_from_slice(&positions[..take]);
        train.extend_from_slice(&positions[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified k-fold: each class is shuffled and cut into k chunks whose
/// sizes differ by at most one (the first n mod k chunks get the extra
/// sample); fold i tests on chunk i of every class.
pub fn kfold_split(
    index: &DatasetIndex,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Split(format!("k must be at least 2, got {k}")));
    }
    let by_class = positions_by_class(index);
    for (class_id, positions) in by_class.iter().enumerate() {
        if positions.len() < k {
            return Err(Error::Split(format!(
                "class \"{}\" has {} samples, fewer than k = {k}",
                index.class_names[class_id],
                positions.len()
            )));
        }
    }
    let mut chunks: Vec<Vec<usize>> = vec![Vec::new(); k];
    for mut positions in by_class {
        rng.shuffle(&mut positions);
        let n = positions.len();
        let small = n / k;
        let extra = n % k;
        let mut at = 0;
        for (i, chunk) in chunks.iter_mut().enumerate() {
            let len = small + usize::from(i < extra);
            chunk.extend_from_slice(&positions[at..at + len]);
            at += len;
        }
    }
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let mut test = chunks[i].clone();
        let mut train = Vec::new();
        for (j, chunk) in chunks.iter().enumerate() {
            if j != i {
                train.extend_from_slice(chunk);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        folds.push((train, test));
    }
    Ok(folds)
}
