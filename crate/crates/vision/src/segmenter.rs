//! U-Net subject segmentation: background vs subject, one logit per pixel.

use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{
    conv2d, conv_transpose2d, AdamW, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Optimizer,
    ParamsAdamW, VarBuilder, VarMap,
};
use image::GrayImage;
use lesion_triage_core::raster::{BinaryMask, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VisionError};
use crate::imaging::{batch_tensor, image_tensor, resize_bilinear};
use crate::vars::{trainable_vars, SeededVars};

pub const WEIGHTS_FILE: &str = "segmenter.safetensors";
pub const SIDECAR_FILE: &str = "segmenter.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegModelConfig {
    pub input_size: u32,
    pub depth: usize,
    pub base_channels: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            depth: 4,
            base_channels: 16,
            epochs: 30,
            learning_rate: 0.005,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl SegModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VisionError::InvalidConfig(m));
        if self.depth == 0 || self.base_channels == 0 || self.batch_size == 0 {
            return bad("depth, base_channels and batch_size must be positive".into());
        }
        if self.input_size == 0 || self.input_size % (1 << self.depth) != 0 {
            return bad(format!("input_size {} not divisible by 2^{}", self.input_size, self.depth));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        Ok(())
    }
}

struct DoubleConv {
    a: Conv2d,
    b: Conv2d,
}

impl DoubleConv {
    fn new(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        Ok(Self {
            a: conv2d(cin, cout, 3, cfg, vb.pp("a"))?,
            b: conv2d(cout, cout, 3, cfg, vb.pp("b"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.b.forward(&self.a.forward(x)?.relu()?)?.relu()
    }
}

struct UNet {
    down: Vec<DoubleConv>,
    bottom: DoubleConv,
    up: Vec<(ConvTranspose2d, DoubleConv)>,
    head: Conv2d,
}

impl UNet {
    fn new(cfg: &SegModelConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let ch = |level: usize| cfg.base_channels << level;
        let mut down = Vec::new();
        let mut cin = 3;
        for level in 0..cfg.depth {
            down.push(DoubleConv::new(cin, ch(level), vb.pp(format!("down{level}")))?);
            cin = ch(level);
        }
        let bottom = DoubleConv::new(cin, ch(cfg.depth), vb.pp("bottom"))?;
        let tcfg = ConvTranspose2dConfig {
            stride: 2,
            ..Default::default()
        };
        let mut up = Vec::new();
        for level in (0..cfg.depth).rev() {
            let t = conv_transpose2d(ch(level + 1), ch(level), 2, tcfg, vb.pp(format!("upsample{level}")))?;
            let c = DoubleConv::new(2 * ch(level), ch(level), vb.pp(format!("up{level}")))?;
            up.push((t, c));
        }
        let head = conv2d(ch(0), 1, 1, Default::default(), vb.pp("head"))?;
        Ok(Self { down, bottom, up, head })
    }

    /// `[n, 3, s, s]` → `[n, s, s]` logits.
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = x.clone();
        for block in &self.down {
            h = block.forward(&h)?;
            skips.push(h.clone());
            h = h.max_pool2d(2)?;
        }
        h = self.bottom.forward(&h)?;
        for (t, c) in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = c.forward(&Tensor::cat(&[&t.forward(&h)?, &skip], 1)?)?;
        }
        self.head.forward(&h)?.squeeze(1)
    }
}

/// Numerically stable mean binary cross-entropy on logits.
fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> candle_core::Result<Tensor> {
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    (logits.relu()? - (logits * targets)?)?.add(&softplus)?.mean_all()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    kind: String,
    config: SegModelConfig,
    training_hash: String,
    epoch_losses: Vec<f64>,
}

pub struct SegModel {
    config: SegModelConfig,
    varmap: VarMap,
    net: UNet,
    training_hash: String,
    epoch_losses: Vec<f64>,
}

impl std::fmt::Debug for SegModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegModel")
            .field("config", &self.config)
            .field("training_hash", &self.training_hash)
            .finish_non_exhaustive()
    }
}

impl SegModel {
    /// Untrained network with seeded initial weights.
    pub fn new(config: SegModelConfig) -> Result<Self> {
        config.validate()?;
        let varmap = VarMap::new();
        let net = UNet::new(&config, SeededVars::builder(&varmap, config.seed))?;
        Ok(Self {
            config,
            varmap,
            net,
            training_hash: String::new(),
            epoch_losses: Vec::new(),
        })
    }

    pub fn config(&self) -> &SegModelConfig {
        &self.config
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn training_hash(&self) -> &str {
        &self.training_hash
    }

    /// Per-pixel subject probability at the image's own resolution.
    pub fn probabilities(&self, image: &RgbImage) -> Result<Vec<f32>> {
        let s = self.config.input_size as usize;
        let x = image_tensor(image, self.config.input_size)?.unsqueeze(0)?;
        let probs = candle_nn::ops::sigmoid(&self.net.forward(&x)?)?.flatten_all()?.to_vec1::<f32>()?;
        let (w, h) = image.dimensions();
        Ok(resize_bilinear(&probs, s, s, w as usize, h as usize))
    }

    /// Binary subject mask: probability ≥ 0.5.
    pub fn segment(&self, image: &RgbImage) -> Result<BinaryMask> {
        let probs = self.probabilities(image)?;
        let (w, h) = image.dimensions();
        Ok(BinaryMask::from_fn(w, h, |x, y| probs[(y * w + x) as usize] >= 0.5))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        let sidecar = Sidecar {
            kind: "unet-segmenter".into(),
            config: self.config.clone(),
            training_hash: self.training_hash.clone(),
            epoch_losses: self.epoch_losses.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| VisionError::Artifact(e.to_string()))?;
        std::fs::write(dir.join(SIDECAR_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (weights, sidecar_path) = (dir.join(WEIGHTS_FILE), dir.join(SIDECAR_FILE));
        if !weights.is_file() || !sidecar_path.is_file() {
            return Err(VisionError::ModelNotLoaded(dir.to_path_buf()));
        }
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&sidecar_path)?)
            .map_err(|e| VisionError::Artifact(format!("{}: {e}", sidecar_path.display())))?;
        let mut model = Self::new(sidecar.config)?;
        model.varmap.load(&weights)?;
        model.training_hash = sidecar.training_hash;
        model.epoch_losses = sidecar.epoch_losses;
        Ok(model)
    }
}

/// Reads a mask image, rejecting any pixel that is neither 0 nor 255 (or 0/1).
pub fn load_strict_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let gray: GrayImage = image::open(path)
        .map_err(|e| VisionError::UndecodableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let max = gray.pixels().map(|p| p.0[0]).max().unwrap_or(0);
    let on = if max <= 1 { 1 } else { 255 };
    if let Some(p) = gray.pixels().find(|p| p.0[0] != 0 && p.0[0] != on) {
        return Err(VisionError::NonBinaryMask(format!("{} has value {}", path.display(), p.0[0])));
    }
    Ok(BinaryMask::from_fn(gray.width(), gray.height(), |x, y| gray.get_pixel(x, y).0[0] != 0))
}

fn training_hash(pairs: &[(RgbImage, BinaryMask)]) -> String {
    let mut h = Sha256::new();
    for (img, mask) in pairs {
        h.update(img.width().to_le_bytes());
        h.update(img.height().to_le_bytes());
        h.update(img.as_raw());
        h.update(mask.as_raw());
    }
    hex::encode(h.finalize())
}

/// Trains a U-Net with pixelwise binary cross-entropy and Adam. Batches are
/// drawn in a seeded order; the run is a pure function of inputs and config.
pub fn train_segmenter(pairs: &[(RgbImage, BinaryMask)], config: &SegModelConfig) -> Result<SegModel> {
    if pairs.is_empty() {
        return Err(VisionError::EmptyTrainingSet);
    }
    for (i, (img, mask)) in pairs.iter().enumerate() {
        if img.dimensions() != mask.dimensions() {
            return Err(VisionError::NonBinaryMask(format!(
                "pair {i}: mask {:?} does not match image {:?}",
                mask.dimensions(),
                img.dimensions()
            )));
        }
    }
    let mut model = SegModel::new(config.clone())?;
    let size = config.input_size;
    let s = size as usize;
    let targets: Vec<Tensor> = pairs
        .iter()
        .map(|(_, m)| {
            let m = m.resize_nearest(size, size);
            let v: Vec<f32> = m.as_raw().iter().map(|&b| b as f32).collect();
            Tensor::from_vec(v, (s, s), &Device::Cpu)
        })
        .collect::<candle_core::Result<_>>()?;
    let inputs: Vec<Tensor> = pairs
        .iter()
        .map(|(img, _)| image_tensor(img, size))
        .collect::<candle_core::Result<_>>()?;

    let mut opt = AdamW::new(
        trainable_vars(&model.varmap, |_| true),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64).wrapping_mul(0x9E37_79B9));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = Tensor::stack(&chunk.iter().map(|&i| &inputs[i]).collect::<Vec<_>>(), 0)?;
            let y = Tensor::stack(&chunk.iter().map(|&i| &targets[i]).collect::<Vec<_>>(), 0)?;
            let loss = bce_with_logits(&model.net.forward(&x)?, &y)?;
            opt.backward_step(&loss)?;
            total += loss.to_scalar::<f32>()? as f64 * chunk.len() as f64;
        }
        model.epoch_losses.push(total / pairs.len() as f64);
    }
    model.training_hash = training_hash(pairs);
    Ok(model)
}

/// Segments several images in one forward pass.
pub fn segment_batch(model: &SegModel, images: &[RgbImage]) -> Result<Vec<BinaryMask>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let s = model.config.input_size as usize;
    let logits = model.net.forward(&batch_tensor(images, model.config.input_size)?)?;
    let probs = candle_nn::ops::sigmoid(&logits)?.to_dtype(DType::F32)?;
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let p = probs.get(i)?.flatten_all()?.to_vec1::<f32>()?;
        let (w, h) = img.dimensions();
        let p = resize_bilinear(&p, s, s, w as usize, h as usize);
        out.push(BinaryMask::from_fn(w, h, |x, y| p[(y * w + x) as usize] >= 0.5));
    }
    Ok(out)
}
