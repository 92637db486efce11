//! Stage 3: task-guided enhancement of region embeddings with cell text
//! descriptions and street-view imagery.

mod enhancer;
mod streetview;
mod svalign;
mod text;

use serde::{Deserialize, Serialize};

pub use enhancer::{
    final_embedding, mse_loss, train_prompt_enhancer, AuditedTargets, EnhancerForward, PromptEnhancer,
    PromptInputs, TrainedEnhancer,
};
pub use streetview::{
    env_context, infonce_from_sims, infonce_loss, select_region_images, train_streetview_encoder,
    RegionImages, StreetViewConfig, SvHead, TrainedSvHead,
};
pub use svalign::SvAlign;
pub use text::TextAlign;

use crate::autograd::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    /// Text-region alignment.
    #[default]
    Align,
    /// Concatenate the aggregated text embedding as is.
    Concat,
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvMode {
    /// Street view-region cross-attention.
    #[default]
    Align,
    /// Concatenate the mean of the region's sampled image embeddings.
    Mean,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub d_text: usize,
    /// Width of the text key/value projections.
    pub d_key: usize,
    pub d_proj: usize,
    pub images_per_region: usize,
    /// Hidden width of the task head.
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub text: TextMode,
    pub streetview: SvMode,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            d_text: 144,
            d_key: 256,
            d_proj: 256,
            images_per_region: 64,
            hidden: 256,
            epochs: 1000,
            lr: 5e-4,
            weight_decay: 5e-4,
            seed: 0,
            text: TextMode::Align,
            streetview: SvMode::Align,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.d_text, self.d_key, self.d_proj, self.images_per_region, self.hidden, self.epochs].contains(&0) {
            return Err(Error::invalid("prompt dimensions, image count and epochs must be positive"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("prompt learning rate must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Stack the selected image rows of every region, region-major.
pub fn region_image_matrix(images: &Mat, selection: &RegionImages) -> Mat {
    let idx: Vec<usize> = selection.per_region.iter().flatten().copied().collect();
    images.select(ndarray::Axis(0), &idx)
}
