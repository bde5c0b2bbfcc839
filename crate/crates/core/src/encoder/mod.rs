//! Conformer / Fast Conformer encoder: configuration, weights, subsampling
//! and the block stack.

mod block;
mod config;
mod subsampling;
mod weights;

pub use block::{conformer_block, conv_module, feed_forward};
pub use config::{
    build_config, output_length, EncoderConfig, LayerType, Preset, SubsamplingSchema,
    SubsamplingStage, FEATURE_DIM, LARGE_D_MODEL, LARGE_FFN_EXPANSION, LARGE_HEADS, LARGE_LAYERS,
};
pub use subsampling::subsample;
pub use weights::{
    init_weights, read_weight_entries, BlockWeights, ConvModuleWeights, EncoderWeights,
    FeedForwardWeights, NormWeights, StageWeights, SubsamplingWeights, WEIGHTS_MAGIC,
};

use crate::error::{Error, Result};
use crate::tensor::{MacCounter, Tensor};

/// Encoder output plus the final global-token state when that backend is used.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub output: Tensor,
    pub global: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    weights: EncoderWeights,
}

impl Encoder {
    pub fn new(config: EncoderConfig, weights: EncoderWeights) -> Result<Self> {
        config.validate()?;
        if weights.blocks.len() != config.n_layers {
            return Err(Error::Config(format!(
                "weights have {} blocks, config has {} layers",
                weights.blocks.len(),
                config.n_layers
            )));
        }
        if weights.subsampling.stages.len() != config.subsampling.stages.len() {
            return Err(Error::Config(format!(
                "weights have {} subsampling stages, config has {}",
                weights.subsampling.stages.len(),
                config.subsampling.stages.len()
            )));
        }
        if weights.global_token.is_some() != (config.has_global() && config.n_layers > 0) {
            return Err(Error::Config(
                "global token weights do not match the attention kind".into(),
            ));
        }
        Ok(Self { config, weights })
    }

    pub fn from_seed(config: EncoderConfig, seed: u64) -> Result<Self> {
        let weights = init_weights(&config, seed)?;
        Self::new(config, weights)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    /// Features `[T×feature_dim]` to encodings `[output_length(T)×d_model]`.
    pub fn encode(&self, features: &Tensor, counter: &mut MacCounter) -> Result<Tensor> {
        Ok(self.encode_with_state(features, counter)?.output)
    }

    pub fn encode_with_state(
        &self,
        features: &Tensor,
        counter: &mut MacCounter,
    ) -> Result<EncoderOutput> {
        let (_, f) = features.dims2()?;
        if f != self.config.feature_dim {
            return Err(Error::shape(
                "encode",
                format!(
                    "expected {} features per frame, got {f}",
                    self.config.feature_dim
                ),
            ));
        }
        let mut x = subsample(
            features,
            &self.config.subsampling,
            &self.weights.subsampling,
            counter,
        )?;
        let mut global = self.weights.global_token.clone();
        for (i, w) in self.weights.blocks.iter().enumerate() {
            let (y, g) = conformer_block(
                &x,
                w,
                self.config.n_heads,
                &self.config.attention,
                i,
                global.as_ref(),
                counter,
            )?;
            x = y;
            global = g;
        }
        Ok(EncoderOutput { output: x, global })
    }
}
