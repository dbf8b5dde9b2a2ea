use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::{DatasetManifest, Split};
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 5;

/// Every run of five consecutive positions yields three train, one val and one
/// test slot, so any prefix stays within one sample of 60/20/20.
const PATTERN: [Split; 5] = [Split::Train, Split::Val, Split::Train, Split::Test, Split::Train];

/// Assigns records to train/val/test in 60/20/20 proportions, stratified by
/// label. Fire and non-fire ids are shuffled separately and laid end to end
/// before the repeating pattern is applied.
pub fn split(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    if manifest.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: manifest.len(),
            min: MIN_SAMPLES,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(manifest.len());
    for label in [1u8, 0] {
        let mut ids: Vec<&str> = manifest
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        order.extend(ids);
    }
    let split_assignment = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_owned(), PATTERN[i % PATTERN.len()]))
        .collect();
    Ok(DatasetManifest {
        records: manifest.records.clone(),
        split_assignment,
        seed,
    })
}
