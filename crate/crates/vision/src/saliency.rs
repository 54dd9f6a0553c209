//! GradCAM++ saliency over the classifier's last convolutional layer.

use candle_core::{DType, Var};
use image::Rgb;
use lesion_triage_core::raster::RgbImage;
use lesion_triage_core::DiseaseClass;

use crate::classifier::ClsModel;
use crate::error::{Result, VisionError};
use crate::imaging::{image_tensor, resize_bilinear};

/// Heatmap opacity used by [`heatmap_overlay`].
pub const OVERLAY_OPACITY: f32 = 0.4;

/// Non-negative saliency at image resolution, normalized so the maximum is 1
/// (or all zeros for a degenerate map).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl SaliencyMap {
    /// Normalizes `values` by their maximum; a non-positive maximum yields zeros.
    pub fn from_raw(width: u32, height: u32, mut values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        for v in &mut values {
            if !v.is_finite() || *v < 0.0 {
                *v = 0.0;
            }
        }
        let max = values.iter().cloned().fold(0.0f32, f32::max);
        if max > 0.0 {
            for v in &mut values {
                *v /= max;
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().cloned().fold(0.0, f32::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// First pixel (row-major) holding the maximum.
    pub fn argmax(&self) -> (u32, u32) {
        let max = self.max();
        let i = self.values.iter().position(|&v| v == max).unwrap_or(0) as u32;
        (i % self.width, i / self.width)
    }
}

/// GradCAM++: channel weights `w_k = Σ relu(g) · α` with
/// `α = g² / (2g² + Σ_ab A_k · g³)` (zero where `g = 0`), map
/// `relu(Σ_k w_k A_k)`, bilinearly upsampled to the image and max-normalized.
pub fn gradcam_pp(model: &ClsModel, image: &RgbImage, target: DiseaseClass) -> Result<SaliencyMap> {
    let x = image_tensor(image, model.config().input_size)?.unsqueeze(0)?;
    let features = model.net.features(&x, false)?.detach();
    if features.rank() != 4 {
        return Err(VisionError::NoConvLayer);
    }
    let (_, c, h, w) = features.dims4()?;
    let activations = Var::from_tensor(&features)?;
    let logits = model.net.head(activations.as_tensor())?;
    let score = logits.get(0)?.get(target.index())?;
    let grads = score.backward()?;
    let a = features.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let g = match grads.get(activations.as_tensor()) {
        Some(g) => g.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
        None => vec![0.0; a.len()],
    };

    let hw = h * w;
    let mut cam = vec![0f32; hw];
    for k in 0..c {
        let ak = &a[k * hw..(k + 1) * hw];
        let gk = &g[k * hw..(k + 1) * hw];
        let sum_a: f32 = ak.iter().sum();
        let mut weight = 0f32;
        for &gv in gk {
            if gv != 0.0 {
                let g2 = gv * gv;
                let denom = 2.0 * g2 + sum_a * g2 * gv;
                let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                weight += gv.max(0.0) * alpha;
            }
        }
        if weight != 0.0 {
            for (c, &av) in cam.iter_mut().zip(ak) {
                *c += weight * av;
            }
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let (iw, ih) = image.dimensions();
    let up = resize_bilinear(&cam, w, h, iw as usize, ih as usize);
    Ok(SaliencyMap::from_raw(iw, ih, up))
}

fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f32| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Blends a jet-coloured heatmap over the image at [`OVERLAY_OPACITY`].
pub fn heatmap_overlay(image: &RgbImage, map: &SaliencyMap) -> RgbImage {
    assert_eq!(image.dimensions(), map.dimensions());
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let base = image.get_pixel(x, y).0;
        let heat = jet(map.get(x, y));
        Rgb(std::array::from_fn(|c| {
            ((1.0 - OVERLAY_OPACITY) * base[c] as f32 + OVERLAY_OPACITY * heat[c]).round().clamp(0.0, 255.0) as u8
        }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let m = SaliencyMap::from_raw(2, 2, vec![0.0, 2.0, 1.0, -3.0]);
        assert_eq!(m.values(), &[0.0, 1.0, 0.5, 0.0]);
        assert_eq!(m.argmax(), (1, 0));
        let z = SaliencyMap::from_raw(2, 1, vec![0.0, -1.0]);
        assert!(z.is_zero());
    }

    #[test]
    fn overlay_blends_at_fixed_opacity() {
        let img = RgbImage::from_pixel(2, 1, Rgb([100, 100, 100]));
        let m = SaliencyMap::from_raw(2, 1, vec![0.0, 1.0]);
        let out = heatmap_overlay(&img, &m);
        // v = 0 maps to dark blue (0, 0, 127.5); v = 1 to dark red.
        assert_eq!(out.get_pixel(0, 0).0, [60, 60, 111]);
        assert_eq!(out.get_pixel(1, 0).0, [111, 60, 60]);
    }
}
