//! Procedural imagery and manifests standing in for the private clinical
//! data: a skin-toned "subject" ellipse on a noisy background, optionally with
//! a colored lesion blob whose color identifies the class.

use image::Rgb;
use rand::Rng;

use crate::class::DiseaseClass;
use crate::manifest::{Dataset, ImageRecord, Label, Source, Verification};
use crate::raster::{BinaryMask, PixelBox, RgbImage};

/// Lesion color for each class.
pub fn class_color(class: DiseaseClass) -> [u8; 3] {
    match class {
        DiseaseClass::GenitalWarts => [235, 225, 60],
        DiseaseClass::HerpesEruption => [205, 25, 30],
        DiseaseClass::PenileCancer => [55, 30, 15],
        DiseaseClass::PenileCandidiasis => [250, 250, 250],
        DiseaseClass::SyphiliticChancre => [150, 40, 175],
        DiseaseClass::NonDiseased => [35, 95, 210],
    }
}

#[derive(Debug, Clone)]
pub struct SubjectScene {
    pub image: RgbImage,
    pub subject_mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct LesionScene {
    pub class: DiseaseClass,
    pub image: RgbImage,
    pub subject_mask: BinaryMask,
    pub lesion_mask: BinaryMask,
    pub lesion_box: PixelBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: u32, y: u32) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }
}

fn jitter(rng: &mut impl Rng, base: [u8; 3], amount: i32) -> Rgb<u8> {
    Rgb(base.map(|c| (c as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8))
}

/// Background, clutter rectangles in cool or grey tones, then a skin-toned
/// ellipse covering roughly 20-45% of the frame.
pub fn subject_scene(size: u32, clutter: usize, rng: &mut impl Rng) -> SubjectScene {
    let s = size as f64;
    let bg = [rng.random_range(0..70u8), rng.random_range(0..80u8), rng.random_range(0..90u8)];
    let mut image = RgbImage::from_fn(size, size, |_, _| Rgb([0, 0, 0]));
    for px in image.pixels_mut() {
        *px = jitter(rng, bg, 18);
    }
    for _ in 0..clutter {
        let w = rng.random_range(size / 10..=size / 4).max(1);
        let h = rng.random_range(size / 10..=size / 4).max(1);
        let x0 = rng.random_range(0..size - w + 1);
        let y0 = rng.random_range(0..size - h + 1);
        let grey = rng.random_range(40..160u8);
        let color = if rng.random_bool(0.5) {
            [grey, grey, grey]
        } else {
            [rng.random_range(0..80u8), rng.random_range(60..160u8), rng.random_range(120..230u8)]
        };
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                image.put_pixel(x, y, jitter(rng, color, 8));
            }
        }
    }
    let ellipse = Ellipse {
        cx: rng.random_range(0.4..0.6) * s,
        cy: rng.random_range(0.4..0.6) * s,
        rx: rng.random_range(0.25..0.36) * s,
        ry: rng.random_range(0.18..0.28) * s,
        angle: rng.random_range(0.0..std::f64::consts::PI),
    };
    let skin = [rng.random_range(185..235u8), rng.random_range(135..180u8), rng.random_range(105..145u8)];
    let subject_mask = BinaryMask::from_fn(size, size, |x, y| ellipse.contains(x, y));
    for y in 0..size {
        for x in 0..size {
            if subject_mask.get(x, y) {
                image.put_pixel(x, y, jitter(rng, skin, 10));
            }
        }
    }
    SubjectScene { image, subject_mask }
}

/// A subject scene carrying one lesion blob of the class color, placed fully
/// inside the subject. `distractors` adds blobs of other classes' colors on
/// the background, outside the subject.
pub fn lesion_scene(class: DiseaseClass, size: u32, distractors: usize, rng: &mut impl Rng) -> LesionScene {
    let s = size as f64;
    loop {
        let SubjectScene { mut image, subject_mask } = subject_scene(size, 2, rng);
        let r = rng.random_range(0.07..0.12) * s;
        let blob = Ellipse {
            cx: rng.random_range(0.2..0.8) * s,
            cy: rng.random_range(0.2..0.8) * s,
            rx: r * rng.random_range(0.8..1.2),
            ry: r * rng.random_range(0.8..1.2),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        };
        let lesion_mask = BinaryMask::from_fn(size, size, |x, y| blob.contains(x, y));
        let inside = (0..size)
            .flat_map(|y| (0..size).map(move |x| (x, y)))
            .all(|(x, y)| !lesion_mask.get(x, y) || subject_mask.get(x, y));
        let Some(lesion_box) = lesion_mask.bounding_box() else { continue };
        if !inside || lesion_mask.count() < 9 {
            continue;
        }
        let color = class_color(class);
        for y in 0..size {
            for x in 0..size {
                if lesion_mask.get(x, y) {
                    image.put_pixel(x, y, jitter(rng, color, 12));
                }
            }
        }
        let others: Vec<DiseaseClass> = DiseaseClass::ALL.into_iter().filter(|&c| c != class).collect();
        let mut placed = 0;
        let mut tries = 0;
        while placed < distractors && tries < 200 {
            tries += 1;
            let rr = rng.random_range(0.05..0.09) * s;
            let d = Ellipse {
                cx: rng.random_range(0.0..1.0) * s,
                cy: rng.random_range(0.0..1.0) * s,
                rx: rr,
                ry: rr,
                angle: 0.0,
            };
            let pixels: Vec<(u32, u32)> = (0..size)
                .flat_map(|y| (0..size).map(move |x| (x, y)))
                .filter(|&(x, y)| d.contains(x, y))
                .collect();
            if pixels.len() < 4 || pixels.iter().any(|&(x, y)| subject_mask.get(x, y)) {
                continue;
            }
            let color = class_color(others[rng.random_range(0..others.len())]);
            for (x, y) in pixels {
                image.put_pixel(x, y, jitter(rng, color, 12));
            }
            placed += 1;
        }
        return LesionScene {
            class,
            image,
            subject_mask,
            lesion_mask,
            lesion_box,
        };
    }
}

/// Splits `total` into parts proportional to `weights` using floor plus
/// largest remainder; ties go to the earlier part.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

/// Image-free manifest of `total` labeled records: 30% clinician, 30% app,
/// 40% augmented (expert-verified, linked to a clinician base), classes
/// assigned round-robin. Paths point at `synthetic/<id>.png`.
pub fn synthetic_manifest(total: usize, size: u32) -> Dataset {
    let parts = apportion(total, &[0.3, 0.3, 0.4]);
    let mut records = Vec::with_capacity(total);
    let mut i = 0;
    for (source, n) in [Source::Clinician, Source::AppSourced, Source::Augmented].into_iter().zip(parts) {
        for _ in 0..n {
            let class = DiseaseClass::ALL[i % DiseaseClass::ALL.len()];
            let id = format!("syn-{i:05}");
            let mut r = ImageRecord::new(&id, format!("synthetic/{id}.png"), Label::Class(class), source, size, size);
            if source == Source::Augmented {
                r.base_id = Some(format!("syn-{:05}", i % 6));
                r.recipe_id = Some(format!("recipe-{i:05}"));
                r.verification = Verification::ExpertVerified;
            }
            records.push(r);
            i += 1;
        }
    }
    Dataset::new(records)
}
