use candle_core::{Device, Result, Tensor};
use image::imageops::{self, FilterType};
use lesion_triage_core::raster::RgbImage;

/// Resizes (bilinear) to `size`×`size` when needed and returns a
/// `[3, size, size]` tensor scaled to [0, 1].
pub fn image_tensor(image: &RgbImage, size: u32) -> Result<Tensor> {
    let resized;
    let img = if image.dimensions() == (size, size) {
        image
    } else {
        resized = imageops::resize(image, size, size, FilterType::Triangle);
        &resized
    };
    let s = size as usize;
    let mut data = vec![0f32; 3 * s * s];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * s + x as usize;
        for c in 0..3 {
            data[c * s * s + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(data, (3, s, s), &Device::Cpu)
}

/// Stacks images into a `[n, 3, size, size]` batch.
pub fn batch_tensor<'a>(images: impl IntoIterator<Item = &'a RgbImage>, size: u32) -> Result<Tensor> {
    let ts = images
        .into_iter()
        .map(|img| image_tensor(img, size))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&ts, 0)
}

/// Bilinear resample of a row-major `w`×`h` grid, pixel centres aligned
/// (half-pixel convention), edges clamped.
pub fn resize_bilinear(values: &[f32], w: usize, h: usize, new_w: usize, new_h: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(new_w * new_h);
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    for y in 0..new_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = (fy - y0 as f64) as f32;
        for x in 0..new_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = (fx - x0 as f64) as f32;
            let top = values[y0 * w + x0] * (1.0 - tx) + values[y0 * w + x1] * tx;
            let bottom = values[y1 * w + x0] * (1.0 - tx) + values[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}
