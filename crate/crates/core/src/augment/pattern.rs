use image::{Rgba, RgbaImage};

use super::AugmentError;
use crate::class::DiseaseClass;
use crate::raster::{BinaryMask, DimensionMismatch, RgbImage};

/// Lower bound on the fraction of opaque pixels inside a pattern's crop.
pub const MIN_PATTERN_COVERAGE: f64 = 0.01;

/// A lesion cut out of a clinical image. Alpha is 255 on the lesion and 0
/// elsewhere within the bounding-box crop.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionPattern {
    pub pixels: RgbaImage,
    pub source_class: DiseaseClass,
    pub source_id: String,
    /// Mean RGB over the opaque pixels.
    pub mean_color: [f64; 3],
}

impl LesionPattern {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

pub fn extract_pattern(
    image: &RgbImage,
    lesion_mask: &BinaryMask,
    source_class: DiseaseClass,
    source_id: impl Into<String>,
) -> Result<LesionPattern, AugmentError> {
    if image.dimensions() != lesion_mask.dimensions() {
        return Err(DimensionMismatch {
            left: image.dimensions(),
            right: lesion_mask.dimensions(),
        }
        .into());
    }
    if !source_class.is_disease() {
        return Err(AugmentError::NonDiseasedSource);
    }
    let bbox = lesion_mask.bounding_box().ok_or(AugmentError::EmptyMask)?;
    let coverage = lesion_mask.crop(bbox).count() as f64 / bbox.area() as f64;
    if coverage < MIN_PATTERN_COVERAGE {
        return Err(AugmentError::SparseMask(coverage));
    }

    let mut sum = [0u64; 3];
    let mut n = 0u64;
    let pixels = RgbaImage::from_fn(bbox.width(), bbox.height(), |x, y| {
        let (sx, sy) = (bbox.x0 + x, bbox.y0 + y);
        let [r, g, b] = image.get_pixel(sx, sy).0;
        if lesion_mask.get(sx, sy) {
            sum[0] += r as u64;
            sum[1] += g as u64;
            sum[2] += b as u64;
            n += 1;
            Rgba([r, g, b, 255])
        } else {
            Rgba([r, g, b, 0])
        }
    });
    let mean_color = sum.map(|s| s as f64 / n as f64);
    Ok(LesionPattern {
        pixels,
        source_class,
        source_id: source_id.into(),
        mean_color,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_mask_keeps_whole_image() {
        let img = RgbImage::from_fn(6, 4, |x, y| Rgb([x as u8 * 10, y as u8 * 20, 7]));
        let p = extract_pattern(&img, &BinaryMask::filled(6, 4), DiseaseClass::PenileCancer, "s")
            .unwrap();
        assert_eq!(p.pixels.dimensions(), (6, 4));
        for (x, y, px) in p.pixels.enumerate_pixels() {
            assert_eq!(px.0[3], 255);
            assert_eq!(&px.0[..3], &img.get_pixel(x, y).0);
        }
    }

    #[test]
    fn red_square() {
        let mut img = RgbImage::from_pixel(100, 100, Rgb([200, 170, 150]));
        let mask = BinaryMask::from_fn(100, 100, |x, y| (40..50).contains(&x) && (20..30).contains(&y));
        for (x, y) in (40..50).flat_map(|x| (20..30).map(move |y| (x, y))) {
            img.put_pixel(x, y, Rgb([255, 0, 0]));
        }
        let p = extract_pattern(&img, &mask, DiseaseClass::SyphiliticChancre, "sq").unwrap();
        assert_eq!(p.pixels.dimensions(), (10, 10));
        assert_eq!(p.mean_color, [255.0, 0.0, 0.0]);
    }

    #[test]
    fn blob_mean_matches_per_pixel_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let img = RgbImage::from_fn(40, 30, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
            let (cx, cy, r) = (rng.random_range(5.0..35.0), rng.random_range(5.0..25.0), rng.random_range(2.0..8.0));
            let mask = BinaryMask::from_fn(40, 30, |x, y| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= r * r
            });
            let p = extract_pattern(&img, &mask, DiseaseClass::GenitalWarts, "b").unwrap();
            // Oracle: straight accumulation over the full-size image.
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for y in 0..30 {
                for x in 0..40 {
                    if mask.get(x, y) {
                        for c in 0..3 {
                            acc[c] += img.get_pixel(x, y).0[c] as f64;
                        }
                        n += 1.0;
                    }
                }
            }
            for c in 0..3 {
                assert!((p.mean_color[c] - acc[c] / n).abs() < 1e-9);
            }
            let opaque = p.pixels.pixels().filter(|px| px.0[3] == 255).count();
            assert_eq!(opaque as f64, n);
        }
    }

    #[test]
    fn errors() {
        let img = RgbImage::new(10, 10);
        assert_eq!(
            extract_pattern(&img, &BinaryMask::new(10, 10), DiseaseClass::PenileCancer, "x"),
            Err(AugmentError::EmptyMask)
        );
        assert!(matches!(
            extract_pattern(&img, &BinaryMask::filled(9, 10), DiseaseClass::PenileCancer, "x"),
            Err(AugmentError::DimensionMismatch(_))
        ));
        assert_eq!(
            extract_pattern(&img, &BinaryMask::filled(10, 10), DiseaseClass::NonDiseased, "x"),
            Err(AugmentError::NonDiseasedSource)
        );
        let big = RgbImage::new(200, 200);
        let corners = BinaryMask::from_fn(200, 200, |x, y| (x, y) == (0, 0) || (x, y) == (199, 199));
        assert!(matches!(
            extract_pattern(&big, &corners, DiseaseClass::PenileCancer, "x"),
            Err(AugmentError::SparseMask(_))
        ));
    }
}
