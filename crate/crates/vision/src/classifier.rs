//! Six-class image classifier: a convolutional backbone, global average
//! pooling and a linear head, trained with Adam on categorical cross-entropy.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{conv2d, linear, AdamW, Conv2d, Conv2dConfig, Linear, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use lesion_triage_core::augment::{random_transform, TransformConfig};
use lesion_triage_core::class::NUM_CLASSES;
use lesion_triage_core::raster::RgbImage;
use lesion_triage_core::{ClassProbabilities, Dataset, DiseaseClass, Label};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{load_rgb, Result, VisionError};
use crate::imaging::{batch_tensor, image_tensor};
use crate::inception::{InceptionResNetV2, FEATURE_CHANNELS};
use crate::vars::{trainable_vars, SeededVars};

pub const WEIGHTS_FILE: &str = "classifier.safetensors";
pub const SIDECAR_FILE: &str = "classifier.json";
pub const EPOCH_LOG_FILE: &str = "classifier_epochs.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backbone {
    InceptionResNetV2,
    SmallCNN,
}

impl std::str::FromStr for Backbone {
    type Err = VisionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "inceptionresnetv2" => Ok(Backbone::InceptionResNetV2),
            "smallcnn" => Ok(Backbone::SmallCNN),
            _ => Err(VisionError::InvalidConfig(format!("unknown backbone `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClsModelConfig {
    pub backbone: Backbone,
    pub input_size: u32,
    pub epochs: usize,
    pub optimizer_lr: f64,
    pub optimizer_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub pretrained: bool,
    /// Safetensors file with backbone weights; required when `pretrained`.
    pub pretrained_weights: Option<PathBuf>,
    /// Train only the linear head.
    pub freeze_backbone: bool,
    /// Channel widths of the three SmallCNN conv blocks.
    pub small_channels: [usize; 3],
}

impl Default for ClsModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::InceptionResNetV2,
            input_size: 299,
            epochs: 150,
            optimizer_lr: 0.01,
            optimizer_epsilon: 0.1,
            batch_size: 32,
            seed: 0,
            pretrained: false,
            pretrained_weights: None,
            freeze_backbone: false,
            small_channels: [16, 32, 64],
        }
    }
}

impl ClsModelConfig {
    /// SmallCNN at `input_size`, optimizer settings left at their defaults.
    pub fn small(input_size: u32) -> Self {
        Self {
            backbone: Backbone::SmallCNN,
            input_size,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VisionError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.optimizer_lr > 0.0 && self.optimizer_epsilon > 0.0) {
            return bad("optimizer lr and epsilon must be positive".into());
        }
        match self.backbone {
            Backbone::SmallCNN if self.input_size < 4 => bad(format!("input_size {} too small", self.input_size)),
            Backbone::InceptionResNetV2 if self.input_size < 75 => {
                bad(format!("InceptionResNetV2 needs input_size ≥ 75, got {}", self.input_size))
            }
            _ if self.pretrained && self.pretrained_weights.is_none() => {
                bad("pretrained = true requires pretrained_weights".into())
            }
            _ => Ok(()),
        }
    }
}

struct SmallCnn {
    convs: [Conv2d; 3],
}

impl SmallCnn {
    fn new(ch: [usize; 3], vb: VarBuilder) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        Ok(Self {
            convs: [
                conv2d(3, ch[0], 3, cfg, vb.pp("conv1"))?,
                conv2d(ch[0], ch[1], 3, cfg, vb.pp("conv2"))?,
                conv2d(ch[1], ch[2], 3, cfg, vb.pp("conv3"))?,
            ],
        })
    }

    fn features(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let h = self.convs[0].forward(x)?.relu()?.max_pool2d(2)?;
        let h = self.convs[1].forward(&h)?.relu()?.max_pool2d(2)?;
        self.convs[2].forward(&h)?.relu()
    }
}

enum Trunk {
    Small(SmallCnn),
    Inception(Box<InceptionResNetV2>),
}

pub(crate) struct Network {
    trunk: Trunk,
    head: Linear,
}

impl Network {
    fn new(cfg: &ClsModelConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let (trunk, channels) = match cfg.backbone {
            Backbone::SmallCNN => (Trunk::Small(SmallCnn::new(cfg.small_channels, vb.pp("backbone"))?), cfg.small_channels[2]),
            Backbone::InceptionResNetV2 => (
                Trunk::Inception(Box::new(InceptionResNetV2::new(vb.pp("backbone"))?)),
                FEATURE_CHANNELS,
            ),
        };
        Ok(Self {
            trunk,
            head: linear(channels, NUM_CLASSES, vb.pp("head"))?,
        })
    }

    /// Activations of the last convolutional layer, `[n, c, h, w]`.
    pub(crate) fn features(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        match &self.trunk {
            Trunk::Small(m) => m.features(x),
            Trunk::Inception(m) => m.features(x, train),
        }
    }

    /// Global pool and linear layer: `[n, c, h, w]` → `[n, 6]` logits. The
    /// small trunk max-pools so a small lesion is not averaged away.
    pub(crate) fn head(&self, features: &Tensor) -> candle_core::Result<Tensor> {
        let pooled = match self.trunk {
            Trunk::Small(_) => features.max_keepdim(3)?.max_keepdim(2)?.flatten_from(1)?,
            Trunk::Inception(_) => features.mean((2, 3))?,
        };
        self.head.forward(&pooled)
    }

    fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        self.head(&self.features(x, train)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    class_order: Vec<DiseaseClass>,
    config: ClsModelConfig,
    dataset_hash: String,
    epoch_log: String,
}

pub struct ClsModel {
    config: ClsModelConfig,
    varmap: VarMap,
    pub(crate) net: Network,
    epoch_log: Vec<EpochStats>,
    dataset_hash: String,
}

impl std::fmt::Debug for ClsModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClsModel")
            .field("config", &self.config)
            .field("dataset_hash", &self.dataset_hash)
            .finish_non_exhaustive()
    }
}

impl ClsModel {
    /// Untrained model with seeded initial weights, or backbone weights from
    /// `pretrained_weights` when `pretrained` is set.
    pub fn new(config: ClsModelConfig) -> Result<Self> {
        config.validate()?;
        let varmap = VarMap::new();
        let net = Network::new(&config, SeededVars::builder(&varmap, config.seed))?;
        let model = Self {
            config,
            varmap,
            net,
            epoch_log: Vec::new(),
            dataset_hash: String::new(),
        };
        if model.config.pretrained {
            let path = model.config.pretrained_weights.clone().expect("validated");
            model.load_backbone(&path)?;
        }
        Ok(model)
    }

    fn load_backbone(&self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        let data = self.varmap.data().lock().unwrap();
        let mut loaded = 0;
        for (name, var) in data.iter().filter(|(n, _)| n.starts_with("backbone.")) {
            if let Some(t) = tensors.get(name) {
                if t.shape() != var.shape() {
                    return Err(VisionError::Artifact(format!(
                        "{name}: shape {:?} in {} vs {:?}",
                        t.shape(),
                        path.display(),
                        var.shape()
                    )));
                }
                var.set(&t.to_dtype(DType::F32)?)?;
                loaded += 1;
            }
        }
        if loaded == 0 {
            return Err(VisionError::Artifact(format!("no backbone tensors in {}", path.display())));
        }
        Ok(())
    }

    pub fn config(&self) -> &ClsModelConfig {
        &self.config
    }

    pub fn epoch_log(&self) -> &[EpochStats] {
        &self.epoch_log
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    /// Class order of the output layer.
    pub fn class_order(&self) -> [DiseaseClass; NUM_CLASSES] {
        DiseaseClass::ALL
    }

    /// Parameter store; exposes weights for inspection and surgery.
    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn classify(&self, image: &RgbImage) -> Result<ClassProbabilities> {
        let x = image_tensor(image, self.config.input_size)?.unsqueeze(0)?;
        Ok(self.probs_from_logits(&self.net.forward(&x, false)?)?.remove(0))
    }

    pub fn classify_batch(&self, images: &[RgbImage]) -> Result<Vec<ClassProbabilities>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = batch_tensor(images, self.config.input_size)?;
        self.probs_from_logits(&self.net.forward(&x, false)?)
    }

    fn probs_from_logits(&self, logits: &Tensor) -> Result<Vec<ClassProbabilities>> {
        Ok(logits
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?
            .into_iter()
            .map(|row| {
                let arr: [f64; NUM_CLASSES] = row.try_into().expect("six logits");
                ClassProbabilities::from_logits(&arr)
            })
            .collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        write_epoch_log(dir.join(EPOCH_LOG_FILE), &self.epoch_log)?;
        let sidecar = Sidecar {
            class_order: DiseaseClass::ALL.to_vec(),
            config: self.config.clone(),
            dataset_hash: self.dataset_hash.clone(),
            epoch_log: EPOCH_LOG_FILE.into(),
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
        if sidecar.class_order != DiseaseClass::ALL {
            return Err(VisionError::Artifact(format!("unexpected class order {:?}", sidecar.class_order)));
        }
        let mut config = sidecar.config;
        let pretrained = config.pretrained;
        // Saved weights already include any pretrained backbone.
        config.pretrained = false;
        let mut model = Self::new(config)?;
        model.config.pretrained = pretrained;
        model.varmap.load(&weights)?;
        model.dataset_hash = sidecar.dataset_hash;
        let log_path = dir.join(&sidecar.epoch_log);
        if log_path.is_file() {
            model.epoch_log = read_epoch_log(&log_path)?;
        }
        Ok(model)
    }
}

pub fn write_epoch_log(path: impl AsRef<Path>, log: &[EpochStats]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| VisionError::Artifact(e.to_string()))?;
    w.write_record(["epoch", "loss", "accuracy"]).map_err(|e| VisionError::Artifact(e.to_string()))?;
    for e in log {
        w.serialize(e).map_err(|e| VisionError::Artifact(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_epoch_log(path: impl AsRef<Path>) -> Result<Vec<EpochStats>> {
    csv::Reader::from_path(path)
        .map_err(|e| VisionError::Artifact(e.to_string()))?
        .deserialize()
        .map(|r| r.map_err(|e| VisionError::Artifact(e.to_string())))
        .collect()
}

/// One decoded training example.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub image: RgbImage,
    pub class: DiseaseClass,
}

/// Decodes every record of `dataset`, enforcing training eligibility.
pub fn labeled_images(dataset: &Dataset) -> Result<Vec<LabeledImage>> {
    if dataset.is_empty() {
        return Err(VisionError::EmptyTrainingSet);
    }
    dataset
        .records
        .iter()
        .map(|r| {
            let class = match r.label {
                Label::Class(c) => c,
                Label::Unlabeled => return Err(VisionError::IneligibleRecord(r.id.clone())),
            };
            if r.is_augmented() && !r.is_training_eligible() {
                return Err(VisionError::UnverifiedAugmentedRecord(r.id.clone()));
            }
            if !r.is_training_eligible() {
                return Err(VisionError::IneligibleRecord(r.id.clone()));
            }
            let image = load_rgb(dataset.resolve(&r.path)).map_err(|e| e.for_image(&r.id))?;
            Ok(LabeledImage {
                id: r.id.clone(),
                image,
                class,
            })
        })
        .collect()
}

fn dataset_hash(samples: &[&LabeledImage]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.id.as_bytes());
        h.update([0]);
        h.update(s.class.token().as_bytes());
        h.update(s.image.as_raw());
    }
    hex::encode(h.finalize())
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn id_hash(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Trains with Adam on cross-entropy. Samples are ordered by id and then
/// shuffled per epoch from the seed, so manifest order does not matter.
/// `transforms` is applied online, re-drawn for every image and epoch.
pub fn train_classifier(
    samples: &[LabeledImage],
    config: &ClsModelConfig,
    transforms: &TransformConfig,
) -> Result<ClsModel> {
    if samples.is_empty() {
        return Err(VisionError::EmptyTrainingSet);
    }
    transforms
        .validate()
        .map_err(|e| VisionError::InvalidConfig(e.to_string()))?;
    let mut model = ClsModel::new(config.clone())?;
    let mut sorted: Vec<&LabeledImage> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let online = *transforms != TransformConfig::identity();
    let cached: Vec<Tensor> = if online {
        Vec::new()
    } else {
        sorted
            .iter()
            .map(|s| image_tensor(&s.image, config.input_size))
            .collect::<candle_core::Result<_>>()?
    };
    let labels: Vec<u32> = sorted.iter().map(|s| s.class.index() as u32).collect();

    let freeze = config.freeze_backbone;
    let vars = trainable_vars(&model.varmap, |name| !freeze || name.starts_with("head."));
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: config.optimizer_lr,
            eps: config.optimizer_epsilon,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<Tensor> = chunk
                .iter()
                .map(|&i| {
                    if online {
                        let seed = mix(config.seed, epoch as u64, id_hash(&sorted[i].id));
                        let img = random_transform(&sorted[i].image, transforms, seed)
                            .map_err(|e| VisionError::InvalidConfig(e.to_string()))?;
                        Ok(image_tensor(&img, config.input_size)?)
                    } else {
                        Ok(cached[i].clone())
                    }
                })
                .collect::<Result<_>>()?;
            let x = Tensor::stack(&inputs, 0)?;
            let y = Tensor::new(chunk.iter().map(|&i| labels[i]).collect::<Vec<_>>(), &Device::Cpu)?;
            let logits = model.net.forward(&x, true)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let preds = logits.argmax(D::Minus1)?.to_vec1::<u32>()?;
            correct += preds.iter().zip(chunk).filter(|(p, &i)| **p == labels[i]).count();
            loss_sum += loss.to_scalar::<f32>()? as f64 * chunk.len() as f64;
            opt.backward_step(&loss)?;
        }
        model.epoch_log.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / sorted.len() as f64,
            accuracy: correct as f64 / sorted.len() as f64,
        });
    }
    model.dataset_hash = dataset_hash(&sorted);
    Ok(model)
}
