use image::imageops::{self, FilterType};
use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::raster::RgbImage;

/// Ranges for online augmentation. Each range `r` means a symmetric draw:
/// angles from `[-r, r]` degrees, shifts from `[-r, r]` of the side length,
/// multiplicative factors from `[1 - r, 1 + r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub rotation_range: f64,
    pub rescale_range: f64,
    pub shift_range_x: f64,
    pub shift_range_y: f64,
    pub brightness_range: f64,
    pub allow_flip_h: bool,
    pub allow_flip_v: bool,
    /// Independent per-axis stretch.
    pub size_jitter: f64,
    /// Independent per-channel gain.
    pub color_jitter: f64,
    /// Final resize target; `None` keeps the input size.
    pub output_size: Option<(u32, u32)>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl TransformConfig {
    pub fn identity() -> Self {
        Self {
            rotation_range: 0.0,
            rescale_range: 0.0,
            shift_range_x: 0.0,
            shift_range_y: 0.0,
            brightness_range: 0.0,
            allow_flip_h: false,
            allow_flip_v: false,
            size_jitter: 0.0,
            color_jitter: 0.0,
            output_size: None,
        }
    }

    /// Moderate jitter suitable for the desk-scale synthetic sets.
    pub fn standard() -> Self {
        Self {
            rotation_range: 20.0,
            rescale_range: 0.15,
            shift_range_x: 0.1,
            shift_range_y: 0.1,
            brightness_range: 0.2,
            allow_flip_h: true,
            allow_flip_v: true,
            size_jitter: 0.1,
            color_jitter: 0.05,
            output_size: None,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let ranges = [
            ("rotation_range", self.rotation_range, 180.0),
            ("rescale_range", self.rescale_range, 0.9),
            ("shift_range_x", self.shift_range_x, 1.0),
            ("shift_range_y", self.shift_range_y, 1.0),
            ("brightness_range", self.brightness_range, 1.0),
            ("size_jitter", self.size_jitter, 0.9),
            ("color_jitter", self.color_jitter, 1.0),
        ];
        for (name, value, max) in ranges {
            if !(value >= 0.0 && value <= max) {
                return Err(AugmentError::InvalidTransformConfig(format!(
                    "{name} = {value} outside [0, {max}]"
                )));
            }
        }
        if let Some((w, h)) = self.output_size {
            if w == 0 || h == 0 {
                return Err(AugmentError::InvalidTransformConfig("zero output size".into()));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TransformParams {
        fn sym(rng: &mut impl Rng, r: f64) -> f64 {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        }
        TransformParams {
            rotation_deg: sym(rng, self.rotation_range),
            rescale: 1.0 + sym(rng, self.rescale_range),
            shift_x: sym(rng, self.shift_range_x),
            shift_y: sym(rng, self.shift_range_y),
            brightness: 1.0 + sym(rng, self.brightness_range),
            flip_h: self.allow_flip_h && rng.random_bool(0.5),
            flip_v: self.allow_flip_v && rng.random_bool(0.5),
            stretch: [1.0 + sym(rng, self.size_jitter), 1.0 + sym(rng, self.size_jitter)],
            color_gain: [
                1.0 + sym(rng, self.color_jitter),
                1.0 + sym(rng, self.color_jitter),
                1.0 + sym(rng, self.color_jitter),
            ],
        }
    }

    /// Whether every sampled value lies inside this config's ranges.
    pub fn admits(&self, p: &TransformParams) -> bool {
        let within = |v: f64, center: f64, r: f64| (v - center).abs() <= r;
        within(p.rotation_deg, 0.0, self.rotation_range)
            && within(p.rescale, 1.0, self.rescale_range)
            && within(p.shift_x, 0.0, self.shift_range_x)
            && within(p.shift_y, 0.0, self.shift_range_y)
            && within(p.brightness, 1.0, self.brightness_range)
            && (self.allow_flip_h || !p.flip_h)
            && (self.allow_flip_v || !p.flip_v)
            && p.stretch.iter().all(|&s| within(s, 1.0, self.size_jitter))
            && p.color_gain.iter().all(|&g| within(g, 1.0, self.color_jitter))
    }
}

/// One concrete draw from a [`TransformConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rotation_deg: f64,
    pub rescale: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub brightness: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub stretch: [f64; 2],
    pub color_gain: [f64; 3],
}

impl TransformParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            rescale: 1.0,
            shift_x: 0.0,
            shift_y: 0.0,
            brightness: 1.0,
            flip_h: false,
            flip_v: false,
            stretch: [1.0, 1.0],
            color_gain: [1.0; 3],
        }
    }

    fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.rescale == 1.0
            && self.shift_x == 0.0
            && self.shift_y == 0.0
            && !self.flip_h
            && !self.flip_v
            && self.stretch == [1.0, 1.0]
    }
}

/// Applies the geometric warp (bilinear, black fill), then the photometric
/// gains, then resizes to `output_size`.
pub fn apply_transform(
    image: &RgbImage,
    params: &TransformParams,
    output_size: Option<(u32, u32)>,
) -> RgbImage {
    let mut out = if params.is_geometric_identity() {
        image.clone()
    } else {
        warp(image, params)
    };
    let gains: [f64; 3] = std::array::from_fn(|c| params.brightness * params.color_gain[c]);
    if gains != [1.0; 3] {
        for px in out.pixels_mut() {
            for c in 0..3 {
                px.0[c] = (px.0[c] as f64 * gains[c]).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    match output_size {
        Some((w, h)) if (w, h) != out.dimensions() => imageops::resize(&out, w, h, FilterType::Triangle),
        _ => out,
    }
}

/// Seeded random augmentation: a pure function of `(image, config, seed)`.
pub fn random_transform(
    image: &RgbImage,
    config: &TransformConfig,
    seed: u64,
) -> Result<RgbImage, AugmentError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = config.sample(&mut rng);
    Ok(apply_transform(image, &params, config.output_size))
}

fn warp(image: &RgbImage, p: &TransformParams) -> RgbImage {
    let (w, h) = image.dimensions();
    let (wf, hf) = (w as f64, h as f64);
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let sx = p.rescale * p.stretch[0];
    let sy = p.rescale * p.stretch[1];
    RgbImage::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - wf / 2.0 - p.shift_x * wf;
        let dy = y as f64 + 0.5 - hf / 2.0 - p.shift_y * hf;
        let mut u = (dx * cos + dy * sin) / sx + wf / 2.0 - 0.5;
        let mut v = (-dx * sin + dy * cos) / sy + hf / 2.0 - 0.5;
        if p.flip_h {
            u = wf - 1.0 - u;
        }
        if p.flip_v {
            v = hf - 1.0 - v;
        }
        sample_bilinear(image, u, v)
    })
}

fn sample_bilinear(image: &RgbImage, u: f64, v: f64) -> Rgb<u8> {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let (x0, y0) = (u.floor() as i64, v.floor() as i64);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let fetch = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w || y >= h {
            [0.0; 3]
        } else {
            image.get_pixel(x as u32, y as u32).0.map(f64::from)
        }
    };
    let (a, b, c, d) = (fetch(x0, y0), fetch(x0 + 1, y0), fetch(x0, y0 + 1), fetch(x0 + 1, y0 + 1));
    Rgb(std::array::from_fn(|i| {
        let top = a[i] * (1.0 - fx) + b[i] * fx;
        let bottom = c[i] * (1.0 - fx) + d[i] * fx;
        (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
    }))
}
