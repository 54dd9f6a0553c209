use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    complexion_shift_toward, compose_overlay, AugmentError, LesionPattern, OverlayRecipe,
    DEFAULT_COMPLEXION_WEIGHT, DEFAULT_FEATHER_PX,
};
use crate::class::DiseaseClass;
use crate::manifest::{class_distribution, Dataset, ImageRecord};
use crate::raster::{BinaryMask, RgbImage};

/// A non-diseased image available as an overlay canvas.
#[derive(Debug, Clone)]
pub struct BaseImage {
    pub record: ImageRecord,
    pub image: RgbImage,
    pub subject_mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct GeneratedImage {
    pub record: ImageRecord,
    pub image: RgbImage,
    pub recipe: OverlayRecipe,
}

#[derive(Debug, Clone)]
pub struct Balanced {
    pub dataset: Dataset,
    pub generated: Vec<GeneratedImage>,
}

/// Source of lesion patterns for a class.
///
/// [`PatternLibrary`] draws from patterns extracted out of real images. A
/// learned generator can be slotted in behind the same interface.
pub trait PatternGenerator {
    /// Returns a pattern of `class`, or `None` when the generator has nothing
    /// for it.
    fn generate(&self, class: DiseaseClass, rng: &mut dyn RngCore) -> Option<LesionPattern>;
}

#[derive(Debug, Clone, Default)]
pub struct PatternLibrary {
    by_class: BTreeMap<DiseaseClass, Vec<LesionPattern>>,
}

impl PatternLibrary {
    pub fn new(patterns: impl IntoIterator<Item = LesionPattern>) -> Self {
        let mut by_class: BTreeMap<DiseaseClass, Vec<LesionPattern>> = BTreeMap::new();
        for p in patterns {
            by_class.entry(p.source_class).or_default().push(p);
        }
        Self { by_class }
    }

    pub fn count(&self, class: DiseaseClass) -> usize {
        self.by_class.get(&class).map_or(0, Vec::len)
    }
}

impl PatternGenerator for PatternLibrary {
    fn generate(&self, class: DiseaseClass, rng: &mut dyn RngCore) -> Option<LesionPattern> {
        let list = self.by_class.get(&class).filter(|l| !l.is_empty())?;
        Some(list[rng.random_range(0..list.len())].clone())
    }
}

/// Tops every disease class up to `target` records with freshly composited,
/// unverified images. Existing records are returned unchanged, in order, with
/// the new ones appended.
pub fn balance_classes(
    dataset: &Dataset,
    bases: &[BaseImage],
    patterns: &[LesionPattern],
    target: usize,
    seed: u64,
) -> Result<Balanced, AugmentError> {
    let library = PatternLibrary::new(patterns.iter().cloned());
    balance_classes_with(dataset, bases, &library, target, seed)
}

const ATTEMPTS_PER_IMAGE: usize = 32;

pub fn balance_classes_with(
    dataset: &Dataset,
    bases: &[BaseImage],
    generator: &dyn PatternGenerator,
    target: usize,
    seed: u64,
) -> Result<Balanced, AugmentError> {
    let counts = class_distribution(dataset);
    let mut deficits = Vec::new();
    for class in DiseaseClass::DISEASES {
        let current = counts[&class];
        if current > target {
            return Err(AugmentError::TargetBelowCurrent { class, current, target });
        }
        if current < target {
            deficits.push((class, current, target - current));
        }
    }
    let usable_bases: Vec<&BaseImage> = bases
        .iter()
        .filter(|b| b.record.class() == Some(DiseaseClass::NonDiseased) && !b.subject_mask.is_empty())
        .collect();

    let mut generated = Vec::new();
    for (class, current, deficit) in deficits {
        if usable_bases.is_empty() {
            return Err(AugmentError::InsufficientSources(class));
        }
        for k in 0..deficit {
            let ordinal = current + k;
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, class.index() as u64, ordinal as u64));
            let recipe_id = format!("r{seed:x}-{}-{ordinal:05}", class.token());
            let mut made = None;
            for _ in 0..ATTEMPTS_PER_IMAGE {
                let base = usable_bases[rng.random_range(0..usable_bases.len())];
                let pattern = generator
                    .generate(class, &mut rng)
                    .ok_or(AugmentError::InsufficientSources(class))?;
                let recipe = sample_recipe(&mut rng, base, &pattern, recipe_id.clone(), seed);
                match compose_overlay(&base.record, &base.image, &base.subject_mask, &pattern, &recipe) {
                    Ok(c) => {
                        made = Some(GeneratedImage {
                            record: c.record,
                            image: c.image,
                            recipe,
                        });
                        break;
                    }
                    Err(AugmentError::PatternLargerThanBase { .. } | AugmentError::InvalidRecipe(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            generated.push(made.ok_or(AugmentError::InsufficientSources(class))?);
        }
    }

    let mut records = dataset.records.clone();
    records.extend(generated.iter().map(|g| g.record.clone()));
    Ok(Balanced {
        dataset: dataset.derive(records),
        generated,
    })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_recipe(
    rng: &mut ChaCha8Rng,
    base: &BaseImage,
    pattern: &LesionPattern,
    recipe_id: String,
    seed: u64,
) -> OverlayRecipe {
    let (bw, bh) = base.image.dimensions();
    let subject: Vec<(u32, u32)> = (0..bh)
        .flat_map(|y| (0..bw).map(move |x| (x, y)))
        .filter(|&(x, y)| base.subject_mask.get(x, y))
        .collect();
    let (px, py) = subject[rng.random_range(0..subject.len())];
    let rotation_deg: f64 = rng.random_range(-180.0..180.0);

    // Largest scale whose rotated extent still fits inside the base.
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let (pw, ph) = (pattern.width() as f64, pattern.height() as f64);
    let ext_w = pw * cos.abs() + ph * sin.abs();
    let ext_h = pw * sin.abs() + ph * cos.abs();
    let fit = (bw as f64 / ext_w).min(bh as f64 / ext_h) * 0.999;
    let scale = rng.random_range(0.7..1.3f64).min(fit).clamp(0.1, 3.0);

    OverlayRecipe {
        recipe_id,
        placement_center: ((px as f64 + 0.5) / bw as f64, (py as f64 + 0.5) / bh as f64),
        scale,
        rotation_deg,
        complexion_shift: complexion_shift_toward(
            pattern,
            &base.image,
            &base.subject_mask,
            DEFAULT_COMPLEXION_WEIGHT,
        ),
        flip_h: rng.random_bool(0.5),
        flip_v: rng.random_bool(0.5),
        seed,
        feather_px: DEFAULT_FEATHER_PX,
    }
}
