//! Strided 2-D convolutional subsampling over (time, mel).

use super::config::SubsamplingSchema;
use super::weights::{StageWeights, SubsamplingWeights};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, depthwise_conv2d, linear, relu, MacCounter, Tensor};

/// Maps features `[T×F]` to `[T'×D]`. Each stage is followed by ReLU; after
/// the last stage every output frame's `C×F'` map is flattened channel-major
/// and projected to `d_model`. Counts are scoped per stage and projection.
pub fn subsample(
    features: &Tensor,
    schema: &SubsamplingSchema,
    weights: &SubsamplingWeights,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let (t, f) = features.dims2()?;
    let min = schema.min_input_frames();
    if t < min {
        return Err(Error::InputTooShort {
            frames: t,
            min_frames: min,
            detail: format!(
                "{}x subsampling needs a full receptive field",
                schema.total_factor
            ),
        });
    }
    if weights.stages.len() != schema.stages.len() {
        return Err(Error::shape(
            "subsample",
            format!(
                "{} stage weights for {} stages",
                weights.stages.len(),
                schema.stages.len()
            ),
        ));
    }
    let mut x = features.clone().reshape(&[1, t, f])?;
    for (i, (stage, w)) in schema.stages.iter().zip(&weights.stages).enumerate() {
        counter.set_scope(format!("subsampling.stage{i}"));
        let stride = (stage.stride, stage.stride);
        let [ph, pw] = stage.padding();
        x = match w {
            StageWeights::Full { weight, bias } => {
                relu(&conv2d(&x, weight, Some(bias), stride, (ph, pw), counter)?)
            }
            StageWeights::DepthwiseSeparable {
                dw_weight,
                dw_bias,
                pw_weight,
                pw_bias,
            } => {
                let y = depthwise_conv2d(&x, dw_weight, Some(dw_bias), stride, (ph, pw), counter)?;
                relu(&conv2d(
                    &y,
                    pw_weight,
                    Some(pw_bias),
                    (1, 1),
                    (0, 0),
                    counter,
                )?)
            }
        };
    }
    counter.set_scope("subsampling.proj");
    let (c, to, fo) = x.dims3()?;
    let mut flat = Tensor::zeros(&[to, c * fo]);
    {
        let src = x.data();
        let dst = flat.data_mut();
        for ti in 0..to {
            for ci in 0..c {
                let s = &src[(ci * to + ti) * fo..(ci * to + ti + 1) * fo];
                dst[ti * c * fo + ci * fo..ti * c * fo + (ci + 1) * fo].copy_from_slice(s);
            }
        }
    }
    let y = linear(
        &flat,
        &weights.proj_weight,
        Some(&weights.proj_bias),
        counter,
    );
    counter.clear_scope();
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::{output_length, LayerType, SubsamplingStage};

    fn weights(schema: &SubsamplingSchema, f: usize, d: usize, value: f32) -> SubsamplingWeights {
        let mut c_in = 1;
        let mut stages = Vec::new();
        for s in &schema.stages {
            let [kh, kw] = s.kernel;
            let c = s.channels;
            stages.push(match s.layer_type {
                LayerType::FullConv2d => StageWeights::Full {
                    weight: Tensor::filled(&[c, c_in, kh, kw], value),
                    bias: Tensor::zeros(&[c]),
                },
                LayerType::DepthwiseSeparable => StageWeights::DepthwiseSeparable {
                    dw_weight: Tensor::filled(&[c_in, kh, kw], value),
                    dw_bias: Tensor::zeros(&[c_in]),
                    pw_weight: Tensor::filled(&[c, c_in, 1, 1], value),
                    pw_bias: Tensor::zeros(&[c]),
                },
            });
            c_in = c;
        }
        let flat = schema.flatten_dim(f).unwrap();
        SubsamplingWeights {
            stages,
            proj_weight: Tensor::filled(&[d, flat], 1.0),
            proj_bias: Tensor::zeros(&[d]),
        }
    }

    #[test]
    fn lengths_follow_output_length() {
        let schema = SubsamplingSchema::fast(2);
        let w = weights(&schema, 16, 4, 0.1);
        for t in [15, 16, 17, 40, 63] {
            let x = Tensor::filled(&[t, 16], 1.0);
            let y = subsample(&x, &schema, &w, &mut MacCounter::new()).unwrap();
            assert_eq!(y.shape(), &[output_length(t, &schema).unwrap(), 4]);
        }
    }

    #[test]
    fn rejects_inputs_shorter_than_receptive_field() {
        let schema = SubsamplingSchema::fast(2);
        let w = weights(&schema, 16, 4, 0.1);
        let x = Tensor::filled(&[14, 16], 1.0);
        let err = subsample(&x, &schema, &w, &mut MacCounter::new()).unwrap_err();
        assert!(matches!(err, Error::InputTooShort { min_frames: 15, .. }));
    }

    #[test]
    fn flatten_is_channel_major() {
        // One stage, two channels: channel 1 has doubled weights, so its
        // block of the flattened row is twice channel 0's.
        let schema = SubsamplingSchema::new(vec![SubsamplingStage::new(LayerType::FullConv2d, 2)]);
        let mut w = weights(&schema, 4, 4, 1.0);
        if let StageWeights::Full { weight, .. } = &mut w.stages[0] {
            for v in &mut weight.data_mut()[9..] {
                *v = 2.0;
            }
        }
        w.proj_weight = Tensor::zeros(&[4, 4]);
        // Output column j picks flat index j.
        for j in 0..4 {
            w.proj_weight.data_mut()[j * 4 + j] = 1.0;
        }
        let x = Tensor::filled(&[4, 4], 1.0);
        let y = subsample(&x, &schema, &w, &mut MacCounter::new()).unwrap();
        // F' = 2 mel bins per channel; row 0 = [c0f0, c0f1, c1f0, c1f1].
        let r = y.row(0);
        assert_eq!(r[2], 2.0 * r[0]);
        assert_eq!(r[3], 2.0 * r[1]);
    }

    #[test]
    fn counts_are_scoped() {
        let schema = SubsamplingSchema::fast(2);
        let w = weights(&schema, 16, 4, 0.1);
        let mut c = MacCounter::new();
        subsample(&Tensor::filled(&[32, 16], 1.0), &schema, &w, &mut c).unwrap();
        // stage0: 2·1·9·16·8; flatten 2·2 = 4 → proj 4·4·4.
        assert_eq!(c.get("subsampling.stage0"), 2 * 9 * 16 * 8);
        assert_eq!(c.get("subsampling.stage1"), 2 * 9 * 8 * 4 + 2 * 2 * 8 * 4);
        assert_eq!(c.get("subsampling.proj"), 4 * 4 * 4);
        assert_eq!(c.total(), c.per_tag().values().sum::<u64>());
    }
}
