//! Neural components of the triage pipeline on candle: U-Net subject
//! segmentation, the six-class classifier, GradCAM++ saliency and the
//! crop-and-reclassify refinement loop.

pub mod classifier;
pub mod error;
pub mod evaluate;
pub mod imaging;
pub mod inception;
pub mod pipeline;
pub mod saliency;
pub mod segmenter;
pub mod vars;

pub use classifier::{train_classifier, Backbone, ClsModel, ClsModelConfig, EpochStats, LabeledImage};
pub use error::{Result, VisionError};
pub use evaluate::{evaluate, Evaluation};
pub use pipeline::{refine_and_classify, salient_bbox, ClassificationResult};
pub use saliency::{gradcam_pp, heatmap_overlay, SaliencyMap};
pub use segmenter::{train_segmenter, SegModel, SegModelConfig};
