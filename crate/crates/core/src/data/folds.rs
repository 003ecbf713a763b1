use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Assignment of every entry index to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// (train indices, validation indices) when `fold` is held out.
    pub fn train_val(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &f) in self.fold_of.iter().enumerate() {
            if f == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }
}

fn check_counts(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid(format!("fold count must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::invalid(format!("cannot split {n} entries into {k} folds")));
    }
    Ok(())
}

/// Unstratified split: a seeded shuffle dealt round-robin.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    check_counts(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, rng::FOLDS));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Stratified split. Each class is shuffled and dealt round-robin, continuing
/// the rotation where the previous class stopped, so per-class counts per fold
/// differ by at most one and so do total fold sizes.
pub fn split_folds_stratified(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    check_counts(labels.len(), k)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = rng::substream(seed, rng::FOLDS);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Writes `image,fold` rows, one per entry, in manifest order.
pub fn write_folds_csv(path: &Path, images: &[String], folds: &FoldAssignment) -> Result<()> {
    if images.len() != folds.fold_of.len() {
        return Err(Error::invalid("fold assignment does not match image list"));
    }
    let mut out = String::from("image,fold\n");
    for (img, f) in images.iter().zip(&folds.fold_of) {
        out.push_str(&format!("{img},{f}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a `folds.csv` body into (image, fold) pairs.
pub fn read_folds_csv(text: &str, source_name: &str) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "image" || &headers[1] != "fold" {
        return Err(Error::parse(source_name, 1, "expected header `image,fold`"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::parse(source_name, line, "expected 2 fields"));
        }
        let fold = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::parse(source_name, line, format!("bad fold id: {e}")))?;
        rows.push((rec[0].to_string(), fold));
    }
    Ok(rows)
}
