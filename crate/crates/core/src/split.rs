//! Seeded, class-stratified train/validation partitioning.
//!
//! Per-class validation quotas use floor-plus-largest-remainder rounding: every
//! class receives `floor(n_c * q)` validation slots (with `q = 1 - train_fraction`)
//! and the `round(N * q) - sum(floor)` leftover slots go to the classes with
//! the largest fractional remainders, ties broken in canonical class order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::class::DiseaseClass;
use crate::manifest::{class_distribution, Dataset, ImageRecord, SplitTag};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("record `{0}` is unlabeled")]
    Unlabeled(String),
    #[error("record `{0}` is not eligible (rejected, or augmented without expert verification)")]
    Ineligible(String),
    #[error("class `{0}` has no records")]
    EmptyClass(DiseaseClass),
    #[error("nothing to split: dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub train_fraction: f64,
    pub seed: u64,
    /// When false, augmented records always land in the training split.
    pub include_augmented_in_validation: bool,
    /// When true, every one of the six classes must be represented.
    pub require_all_classes: bool,
}

impl SplitOptions {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
            include_augmented_in_validation: true,
            require_all_classes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
}

/// Validation slots per class for the given class sizes.
pub fn validation_quotas(
    counts: &BTreeMap<DiseaseClass, usize>,
    train_fraction: f64,
) -> BTreeMap<DiseaseClass, usize> {
    let q = 1.0 - train_fraction;
    let total: usize = counts.values().sum();
    let target = (total as f64 * q).round() as usize;

    let mut quotas = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&class, &n) in counts {
        let exact = n as f64 * q;
        let floor = exact.floor() as usize;
        quotas.insert(class, floor);
        remainders.push((class, exact - floor as f64));
    }
    let assigned: usize = quotas.values().sum();
    let mut leftover = target.saturating_sub(assigned);
    // Stable sort keeps canonical class order among equal remainders.
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (class, rem) in remainders {
        if leftover == 0 {
            break;
        }
        if rem > 0.0 && quotas[&class] < counts[&class] {
            *quotas.get_mut(&class).unwrap() += 1;
            leftover -= 1;
        }
    }
    quotas
}

pub fn stratified_split(dataset: &Dataset, options: SplitOptions) -> Result<Split, SplitError> {
    let f = options.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(SplitError::InvalidFraction(f));
    }
    for r in &dataset.records {
        if r.class().is_none() {
            return Err(SplitError::Unlabeled(r.id.clone()));
        }
        if !r.is_training_eligible() {
            return Err(SplitError::Ineligible(r.id.clone()));
        }
    }
    if dataset.is_empty() {
        return Err(SplitError::EmptyDataset);
    }

    let counts: BTreeMap<DiseaseClass, usize> = class_distribution(dataset)
        .into_iter()
        .filter(|&(_, n)| n > 0 || options.require_all_classes)
        .collect();
    if let Some((&class, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(SplitError::EmptyClass(class));
    }
    let quotas = validation_quotas(&counts, f);

    let mut in_validation = vec![false; dataset.len()];
    for (&class, &quota) in &quotas {
        // Candidates are visited in id order so the manifest's line order has
        // no influence on membership.
        let mut candidates: Vec<(usize, &ImageRecord)> = dataset
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class() == Some(class))
            .filter(|(_, r)| options.include_augmented_in_validation || !r.is_augmented())
            .collect();
        candidates.sort_by(|a, b| a.1.id.cmp(&b.1.id));
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ ((class.index() as u64 + 1) << 56));
        candidates.shuffle(&mut rng);
        for (idx, _) in candidates.into_iter().take(quota) {
            in_validation[idx] = true;
        }
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (record, val) in dataset.records.iter().zip(in_validation) {
        let mut record = record.clone();
        if val {
            record.split = SplitTag::Validation;
            validation.push(record);
        } else {
            record.split = SplitTag::Train;
            train.push(record);
        }
    }
    Ok(Split {
        train: dataset.derive(train),
        validation: dataset.derive(validation),
    })
}
