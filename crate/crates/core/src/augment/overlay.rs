use image::{Rgb, RgbaImage};
use serde::{Deserialize, Serialize};

use super::{AugmentError, LesionPattern};
use crate::class::DiseaseClass;
use crate::manifest::{ImageRecord, Label, Provenance, Source, SplitTag, Verification};
use crate::raster::{BinaryMask, DimensionMismatch, RgbImage};

/// Width of the linear alpha ramp at pattern edges.
pub const DEFAULT_FEATHER_PX: u32 = 3;
/// How far the pattern mean is pulled toward the base skin tone.
pub const DEFAULT_COMPLEXION_WEIGHT: f64 = 0.5;

/// Everything needed to reproduce one composite. Persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRecipe {
    pub recipe_id: String,
    /// Pattern centre as a fraction of base width and height.
    pub placement_center: (f64, f64),
    pub scale: f64,
    pub rotation_deg: f64,
    pub complexion_shift: [i16; 3],
    pub flip_h: bool,
    pub flip_v: bool,
    pub seed: u64,
    #[serde(default = "default_feather")]
    pub feather_px: u32,
}

fn default_feather() -> u32 {
    DEFAULT_FEATHER_PX
}

impl OverlayRecipe {
    /// Centred, unscaled, unrotated placement with no colour change or feathering.
    pub fn identity(recipe_id: impl Into<String>) -> Self {
        Self {
            recipe_id: recipe_id.into(),
            placement_center: (0.5, 0.5),
            scale: 1.0,
            rotation_deg: 0.0,
            complexion_shift: [0; 3],
            flip_h: false,
            flip_v: false,
            seed: 0,
            feather_px: 0,
        }
    }

    fn check(&self) -> Result<(), AugmentError> {
        if !(0.1..=3.0).contains(&self.scale) {
            return Err(AugmentError::InvalidRecipe(format!(
                "scale {} outside [0.1, 3.0]",
                self.scale
            )));
        }
        let (cx, cy) = self.placement_center;
        if !(0.0..1.0).contains(&cx) || !(0.0..1.0).contains(&cy) || !self.rotation_deg.is_finite() {
            return Err(AugmentError::InvalidRecipe("placement or rotation out of range".into()));
        }
        Ok(())
    }
}

/// Shift that moves the pattern's mean colour `weight` of the way toward the
/// mean colour of the base image's subject region.
pub fn complexion_shift_toward(
    pattern: &LesionPattern,
    base: &RgbImage,
    subject_mask: &BinaryMask,
    weight: f64,
) -> [i16; 3] {
    let mut sum = [0.0f64; 3];
    let mut n = 0.0;
    for (x, y, px) in base.enumerate_pixels() {
        if subject_mask.get(x, y) {
            for c in 0..3 {
                sum[c] += px.0[c] as f64;
            }
            n += 1.0;
        }
    }
    if n == 0.0 {
        return [0; 3];
    }
    std::array::from_fn(|c| (weight * (sum[c] / n - pattern.mean_color[c])).round() as i16)
}

/// Output of [`compose_overlay`].
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub record: ImageRecord,
    pub image: RgbImage,
    /// Pixels the pattern touched. Everything else equals the base image.
    pub footprint: BinaryMask,
}

/// Places `pattern` on a non-diseased base image following `recipe`.
///
/// The pattern is colour shifted, flipped, scaled and rotated (nearest
/// neighbour), its alpha feathered over `recipe.feather_px` pixels, then
/// alpha-blended centred on `recipe.placement_center`. Parts falling outside
/// the base frame are clipped.
pub fn compose_overlay(
    base: &ImageRecord,
    base_image: &RgbImage,
    base_subject_mask: &BinaryMask,
    pattern: &LesionPattern,
    recipe: &OverlayRecipe,
) -> Result<Composite, AugmentError> {
    if base.class() != Some(DiseaseClass::NonDiseased) {
        return Err(AugmentError::BaseNotNonDiseased(base.label.token().to_string()));
    }
    if base_image.dimensions() != base_subject_mask.dimensions() {
        return Err(DimensionMismatch {
            left: base_image.dimensions(),
            right: base_subject_mask.dimensions(),
        }
        .into());
    }
    recipe.check()?;
    let (bw, bh) = base_image.dimensions();
    let (cx, cy) = recipe.placement_center;
    let (px, py) = ((cx * bw as f64) as u32, (cy * bh as f64) as u32);
    if !base_subject_mask.get(px.min(bw - 1), py.min(bh - 1)) {
        return Err(AugmentError::PlacementOutsideSubject(cx, cy));
    }

    let layer = transform_pattern(pattern, recipe);
    let (lw, lh) = layer.dimensions();
    if lw > bw || lh > bh {
        return Err(AugmentError::PatternLargerThanBase {
            pattern: (lw, lh),
            base: (bw, bh),
        });
    }
    let alpha = feathered_alpha(&layer, recipe.feather_px);

    let left = (cx * bw as f64 - lw as f64 / 2.0).round() as i64;
    let top = (cy * bh as f64 - lh as f64 / 2.0).round() as i64;
    let mut image = base_image.clone();
    let mut footprint = BinaryMask::new(bw, bh);
    for (lx, ly, src) in layer.enumerate_pixels() {
        let a = alpha[(ly * lw + lx) as usize];
        if a <= 0.0 {
            continue;
        }
        let (x, y) = (left + lx as i64, top + ly as i64);
        if x < 0 || y < 0 || x >= bw as i64 || y >= bh as i64 {
            continue;
        }
        let (x, y) = (x as u32, y as u32);
        let dst = image.get_pixel_mut(x, y);
        *dst = Rgb(std::array::from_fn(|c| {
            (a * src.0[c] as f64 + (1.0 - a) * dst.0[c] as f64).round() as u8
        }));
        footprint.set(x, y, true);
    }

    let id = format!("aug-{}-{}", base.id, recipe.recipe_id);
    let mut record = ImageRecord::new(
        id.clone(),
        format!("augmented/{id}.png"),
        Label::Class(pattern.source_class),
        Source::Augmented,
        bw,
        bh,
    );
    record.provenance = Provenance::new(Source::Augmented);
    record.verification = Verification::Unverified;
    record.split = SplitTag::Unassigned;
    record.base_id = Some(base.id.clone());
    record.recipe_id = Some(recipe.recipe_id.clone());
    Ok(Composite {
        record,
        image,
        footprint,
    })
}

/// Colour shift plus flip/scale/rotate into a fresh RGBA canvas sized to the
/// rotated bounding box.
fn transform_pattern(pattern: &LesionPattern, recipe: &OverlayRecipe) -> RgbaImage {
    let (w, h) = (pattern.width() as f64, pattern.height() as f64);
    let theta = recipe.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (sw, sh) = (w * recipe.scale, h * recipe.scale);
    let cw = ((sw * cos.abs() + sh * sin.abs()) - 1e-9).ceil().max(1.0) as u32;
    let ch = ((sw * sin.abs() + sh * cos.abs()) - 1e-9).ceil().max(1.0) as u32;
    let shift = recipe.complexion_shift;

    RgbaImage::from_fn(cw, ch, |x, y| {
        let dx = x as f64 + 0.5 - cw as f64 / 2.0;
        let dy = y as f64 + 0.5 - ch as f64 / 2.0;
        // Inverse rotation, then inverse scale, back into pattern coordinates.
        let rx = (dx * cos + dy * sin) / recipe.scale + w / 2.0;
        let ry = (-dx * sin + dy * cos) / recipe.scale + h / 2.0;
        if rx < 0.0 || ry < 0.0 || rx >= w || ry >= h {
            return image::Rgba([0, 0, 0, 0]);
        }
        let mut sx = rx as u32;
        let mut sy = ry as u32;
        if recipe.flip_h {
            sx = pattern.width() - 1 - sx;
        }
        if recipe.flip_v {
            sy = pattern.height() - 1 - sy;
        }
        let p = pattern.pixels.get_pixel(sx, sy).0;
        image::Rgba([
            (p[0] as i16 + shift[0]).clamp(0, 255) as u8,
            (p[1] as i16 + shift[1]).clamp(0, 255) as u8,
            (p[2] as i16 + shift[2]).clamp(0, 255) as u8,
            p[3],
        ])
    })
}

/// Per-pixel blend weight in [0, 1]. With feathering, opaque pixels within
/// `feather` steps (chessboard distance) of a transparent pixel or the canvas
/// edge ramp linearly from `1/feather` up to 1.
fn feathered_alpha(layer: &RgbaImage, feather: u32) -> Vec<f64> {
    let (w, h) = (layer.width() as usize, layer.height() as usize);
    let base: Vec<f64> = layer.pixels().map(|p| p.0[3] as f64 / 255.0).collect();
    if feather == 0 {
        return base;
    }
    let inf = u32::MAX / 2;
    let mut dist: Vec<u32> = base.iter().map(|&a| if a > 0.0 { inf } else { 0 }).collect();
    let at = |d: &Vec<u32>, x: isize, y: isize| -> u32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if dist[i] == 0 {
                continue;
            }
            let m = [at(&dist, x - 1, y), at(&dist, x - 1, y - 1), at(&dist, x, y - 1), at(&dist, x + 1, y - 1)]
                .into_iter()
                .min()
                .unwrap();
            dist[i] = dist[i].min(m + 1);
        }
    }
    for y in (0..h as isize).rev() {
        for x in (0..w as isize).rev() {
            let i = y as usize * w + x as usize;
            if dist[i] == 0 {
                continue;
            }
            let m = [at(&dist, x + 1, y), at(&dist, x + 1, y + 1), at(&dist, x, y + 1), at(&dist, x - 1, y + 1)]
                .into_iter()
                .min()
                .unwrap();
            dist[i] = dist[i].min(m + 1);
        }
    }
    base.iter()
        .zip(dist)
        .map(|(&a, d)| a * (d.min(feather) as f64 / feather as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::extract_pattern;

    fn base_record() -> ImageRecord {
        ImageRecord::new("base1", "b.png", Label::Class(DiseaseClass::NonDiseased), Source::Clinician, 60, 40)
    }

    fn base_image() -> RgbImage {
        RgbImage::from_fn(60, 40, |x, y| Rgb([(x * 4) as u8, (y * 6) as u8, 90]))
    }

    fn constant_pattern(color: [u8; 3], w: u32, h: u32) -> LesionPattern {
        let img = RgbImage::from_pixel(w, h, Rgb(color));
        extract_pattern(&img, &BinaryMask::filled(w, h), DiseaseClass::HerpesEruption, "p").unwrap()
    }

    #[test]
    fn identity_recipe_copies_shifted_pattern() {
        let img = RgbImage::from_fn(8, 6, |x, y| Rgb([x as u8 * 30, y as u8 * 40, 250]));
        let pattern =
            extract_pattern(&img, &BinaryMask::filled(8, 6), DiseaseClass::PenileCancer, "p").unwrap();
        let mut recipe = OverlayRecipe::identity("r0");
        recipe.complexion_shift = [10, -5, 20];
        let out = compose_overlay(&base_record(), &base_image(), &BinaryMask::filled(60, 40), &pattern, &recipe)
            .unwrap();
        // Centre (30, 20), 8x6 pattern -> top-left (26, 17).
        for y in 0..6 {
            for x in 0..8 {
                let p = img.get_pixel(x, y).0;
                let expected = [
                    (p[0] as i16 + 10).clamp(0, 255) as u8,
                    (p[1] as i16 - 5).clamp(0, 255) as u8,
                    (p[2] as i16 + 20).clamp(0, 255) as u8,
                ];
                assert_eq!(out.image.get_pixel(26 + x, 17 + y).0, expected);
            }
        }
        assert_eq!(out.footprint.count(), 48);
        assert_eq!(out.record.label, Label::Class(DiseaseClass::PenileCancer));
        assert_eq!(out.record.verification, Verification::Unverified);
        assert_eq!(out.record.base_id.as_deref(), Some("base1"));
        assert_eq!(out.record.recipe_id.as_deref(), Some("r0"));
    }

    #[test]
    fn complexion_shift_on_constant_patch() {
        let pattern = constant_pattern([120, 250, 3], 5, 5);
        let mut recipe = OverlayRecipe::identity("r1");
        recipe.complexion_shift = [20, 10, 5];
        let out = compose_overlay(&base_record(), &base_image(), &BinaryMask::filled(60, 40), &pattern, &recipe)
            .unwrap();
        let mut sum = [0.0; 3];
        for (x, y, px) in out.image.enumerate_pixels() {
            if out.footprint.get(x, y) {
                for c in 0..3 {
                    sum[c] += px.0[c] as f64;
                }
            }
        }
        let n = out.footprint.count() as f64;
        let expected = [140.0, 255.0, 8.0];
        for c in 0..3 {
            assert_eq!(sum[c] / n, expected[c]);
        }
    }

    #[test]
    fn placement_and_size_errors() {
        let pattern = constant_pattern([1, 2, 3], 5, 5);
        let mask = BinaryMask::from_fn(60, 40, |x, _| x < 30);
        let mut recipe = OverlayRecipe::identity("r");
        recipe.placement_center = (0.75, 0.5);
        assert!(matches!(
            compose_overlay(&base_record(), &base_image(), &mask, &pattern, &recipe),
            Err(AugmentError::PlacementOutsideSubject(..))
        ));
        let big = constant_pattern([1, 2, 3], 30, 30);
        let mut recipe = OverlayRecipe::identity("r");
        recipe.scale = 2.0;
        assert!(matches!(
            compose_overlay(&base_record(), &base_image(), &BinaryMask::filled(60, 40), &big, &recipe),
            Err(AugmentError::PatternLargerThanBase { .. })
        ));
        let mut diseased = base_record();
        diseased.label = Label::Class(DiseaseClass::GenitalWarts);
        assert!(matches!(
            compose_overlay(&diseased, &base_image(), &BinaryMask::filled(60, 40), &pattern, &OverlayRecipe::identity("r")),
            Err(AugmentError::BaseNotNonDiseased(_))
        ));
        recipe.scale = 3.5;
        assert!(matches!(
            compose_overlay(&base_record(), &base_image(), &BinaryMask::filled(60, 40), &pattern, &recipe),
            Err(AugmentError::InvalidRecipe(_))
        ));
    }

    #[test]
    fn feather_ramps_edges() {
        let pattern = constant_pattern([255, 255, 255], 9, 9);
        let mut recipe = OverlayRecipe::identity("f");
        recipe.feather_px = 3;
        let base = RgbImage::new(60, 40);
        let out = compose_overlay(&base_record(), &base, &BinaryMask::filled(60, 40), &pattern, &recipe).unwrap();
        // Layer occupies x in 26..35; edge pixel at 1/3, next at 2/3, centre full.
        assert_eq!(out.image.get_pixel(26, 20).0[0], 85);
        assert_eq!(out.image.get_pixel(27, 20).0[0], 170);
        assert_eq!(out.image.get_pixel(30, 20).0[0], 255);
    }

    #[test]
    fn rotation_by_quarter_turn_swaps_extent() {
        let pattern = constant_pattern([9, 9, 9], 10, 4);
        let mut recipe = OverlayRecipe::identity("rot");
        recipe.rotation_deg = 90.0;
        let out = compose_overlay(&base_record(), &base_image(), &BinaryMask::filled(60, 40), &pattern, &recipe)
            .unwrap();
        let bb = out.footprint.bounding_box().unwrap();
        assert_eq!((bb.width(), bb.height()), (4, 10));
    }
}
