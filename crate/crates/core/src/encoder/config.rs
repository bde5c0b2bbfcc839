use serde::{Deserialize, Serialize};

use crate::attention::{AttentionContext, AttentionKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerType {
    FullConv2d,
    DepthwiseSeparable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsamplingStage {
    pub stride: usize,
    pub layer_type: LayerType,
    pub channels: usize,
    /// (time, mel) kernel extents; padding is half the kernel on each axis.
    pub kernel: [usize; 2],
}

impl SubsamplingStage {
    pub fn new(layer_type: LayerType, channels: usize) -> Self {
        Self {
            stride: 2,
            layer_type,
            channels,
            kernel: [3, 3],
        }
    }

    pub fn padding(&self) -> [usize; 2] {
        [self.kernel[0] / 2, self.kernel[1] / 2]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsamplingSchema {
    pub stages: Vec<SubsamplingStage>,
    pub total_factor: usize,
}

impl SubsamplingSchema {
    pub fn new(stages: Vec<SubsamplingStage>) -> Self {
        let total_factor = stages.iter().map(|s| s.stride).product();
        Self {
            stages,
            total_factor,
        }
    }

    /// Two full 2-D convolutions, 4x.
    pub fn conformer(channels: usize) -> Self {
        Self::new(vec![
            SubsamplingStage::new(LayerType::FullConv2d, channels),
            SubsamplingStage::new(LayerType::FullConv2d, channels),
        ])
    }

    /// Full first stage followed by two depthwise-separable stages, 8x.
    pub fn fast(channels: usize) -> Self {
        Self::new(vec![
            SubsamplingStage::new(LayerType::FullConv2d, channels),
            SubsamplingStage::new(LayerType::DepthwiseSeparable, channels),
            SubsamplingStage::new(LayerType::DepthwiseSeparable, channels),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        let product: usize = self.stages.iter().map(|s| s.stride).product();
        if product != self.total_factor {
            return Err(Error::Config(format!(
                "total_factor {} does not match the product of stage strides {product}",
                self.total_factor
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.stride != 2 {
                return Err(Error::Config(format!(
                    "stage {i}: stride must be 2, got {}",
                    s.stride
                )));
            }
            if s.channels == 0 {
                return Err(Error::Config(format!(
                    "stage {i}: channels must be positive"
                )));
            }
            if s.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
                return Err(Error::Config(format!(
                    "stage {i}: kernel extents must be odd, got {:?}",
                    s.kernel
                )));
            }
        }
        if let Some(first) = self.stages.first() {
            if first.layer_type != LayerType::FullConv2d {
                return Err(Error::Config(
                    "the first subsampling stage sees one input channel and must be full_conv2d"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Output extent after every stage along one axis (0 = time, 1 = mel).
    fn reduce(&self, len: usize, axis: usize) -> Result<usize> {
        let mut l = len;
        for (i, s) in self.stages.iter().enumerate() {
            let k = s.kernel[axis];
            let p = k / 2;
            if l + 2 * p < k {
                return Err(Error::InputTooShort {
                    frames: len,
                    min_frames: self.min_input_frames(),
                    detail: format!("stage {i} has no complete window"),
                });
            }
            l = (l + 2 * p - k) / s.stride + 1;
        }
        Ok(l)
    }

    /// Receptive field of the stack in input frames: the shortest accepted input.
    pub fn min_input_frames(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for s in &self.stages {
            rf += (s.kernel[0] - 1) * jump;
            jump *= s.stride;
        }
        rf
    }

    pub fn output_features(&self, feature_dim: usize) -> Result<usize> {
        self.reduce(feature_dim, 1)
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(1, |s| s.channels)
    }

    /// Width of the flattened (channels × reduced mel) vector fed to the projection.
    pub fn flatten_dim(&self, feature_dim: usize) -> Result<usize> {
        Ok(self.out_channels() * self.output_features(feature_dim)?)
    }
}

/// Frames produced by the subsampling stack for `t_in` input frames.
pub fn output_length(t_in: usize, schema: &SubsamplingSchema) -> Result<usize> {
    if t_in == 0 {
        return Err(Error::InputTooShort {
            frames: 0,
            min_frames: 1,
            detail: "empty input".into(),
        });
    }
    schema.reduce(t_in, 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub subsampling: SubsamplingSchema,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_expansion: usize,
    pub conv_kernel: usize,
    pub attention: AttentionContext,
    pub feature_dim: usize,
    #[serde(default = "default_hop")]
    pub frame_hop_ms: usize,
}

fn default_hop() -> usize {
    10
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.subsampling.validate()?;
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv_kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        if self.ffn_expansion == 0 || self.feature_dim == 0 || self.frame_hop_ms == 0 {
            return Err(Error::Config(
                "ffn_expansion, feature_dim and frame_hop_ms must be positive".into(),
            ));
        }
        self.subsampling.output_features(self.feature_dim)?;
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_expansion
    }

    pub fn output_hop_ms(&self) -> usize {
        self.frame_hop_ms * self.subsampling.total_factor
    }

    pub fn has_global(&self) -> bool {
        self.attention.kind == AttentionKind::LimitedWithGlobal
    }

    /// Input frames for `seconds` of audio at the configured hop.
    pub fn frames_for_seconds(&self, seconds: f64) -> usize {
        (seconds * 1000.0 / self.frame_hop_ms as f64).round() as usize
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Rungs of the ablation ladder from the baseline Conformer to Fast Conformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    /// Baseline Conformer-Large: 4x, full conv, 512 channels, kernel 31.
    A0,
    /// A0 with a third stride-2 stage (8x).
    A1,
    /// A1 with depthwise-separable second and third stages.
    A2,
    /// A2 with 256 subsampling channels.
    A3,
    /// A3 with conv kernel 9: Fast Conformer-Large.
    A4,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::A0, Preset::A1, Preset::A2, Preset::A3, Preset::A4];

    pub fn name(self) -> &'static str {
        match self {
            Preset::A0 => "A0",
            Preset::A1 => "A1",
            Preset::A2 => "A2",
            Preset::A3 => "A3",
            Preset::A4 => "A4",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A0" | "CONFORMER" => Ok(Preset::A0),
            "A1" => Ok(Preset::A1),
            "A2" => Ok(Preset::A2),
            "A3" => Ok(Preset::A3),
            "A4" | "FAST_CONFORMER" => Ok(Preset::A4),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset {s:?} (expected A0, A1, A2, A3, A4)"
            ))),
        }
    }
}

pub const LARGE_LAYERS: usize = 17;
pub const LARGE_D_MODEL: usize = 512;
pub const LARGE_HEADS: usize = 8;
pub const LARGE_FFN_EXPANSION: usize = 4;
pub const FEATURE_DIM: usize = 80;

pub fn build_config(preset: Preset) -> EncoderConfig {
    use LayerType::*;
    let stage = |t, c| SubsamplingStage::new(t, c);
    let (stages, kernel) = match preset {
        Preset::A0 => (vec![stage(FullConv2d, 512), stage(FullConv2d, 512)], 31),
        Preset::A1 => (
            vec![
                stage(FullConv2d, 512),
                stage(FullConv2d, 512),
                stage(FullConv2d, 512),
            ],
            31,
        ),
        Preset::A2 => (
            vec![
                stage(FullConv2d, 512),
                stage(DepthwiseSeparable, 512),
                stage(DepthwiseSeparable, 512),
            ],
            31,
        ),
        Preset::A3 => (SubsamplingSchema::fast(256).stages, 31),
        Preset::A4 => (SubsamplingSchema::fast(256).stages, 9),
    };
    EncoderConfig {
        subsampling: SubsamplingSchema::new(stages),
        n_layers: LARGE_LAYERS,
        d_model: LARGE_D_MODEL,
        n_heads: LARGE_HEADS,
        ffn_expansion: LARGE_FFN_EXPANSION,
        conv_kernel: kernel,
        attention: AttentionContext::full(),
        feature_dim: FEATURE_DIM,
        frame_hop_ms: 10,
    }
}
