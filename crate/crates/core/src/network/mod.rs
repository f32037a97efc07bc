//! Classification network with an affinity-modulated temporal convolution stack.
//!
//! Parameters live in one flat vector so that the optimizer, the gradient
//! checker and the checkpoint writer can treat them uniformly; [`ParamTensor`]
//! names each slice in its declared order.

mod affinity;
mod conv;
mod forward;
mod topk;

use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use affinity::{cosine_affinity, cosine_affinity_grad, embed_frames, local_affinity_matrix, AffinityMask};
pub use conv::{modulated_temporal_conv, ConvKernel};
pub use forward::{backward, forward_cas, Branch, ClassActivationSequence, ForwardOptions, ForwardPass, Upstream};
pub use topk::{select_pseudo_action_frames, topk_aggregate, topk_hit_ratio, topk_indices, FrameLabelState, TopK};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub kernel_size: usize,
    pub hidden: [usize; 2],
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(CoreError::invalid("temporal kernel size must be odd"));
        }
        if self.num_classes == 0 || self.feature_dim == 0 || self.embed_dim == 0 {
            return Err(CoreError::invalid("class count, feature and embedding dims must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(CoreError::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    /// Output channels of the classification stack (`C + 1`).
    pub fn score_dim(&self) -> usize {
        self.num_classes + 1
    }

    pub fn tensor_shape(&self, t: ParamTensor) -> (usize, usize, usize) {
        let h = self.kernel_size;
        let (din, dout) = match t.layer() {
            Layer::Conv1 => (self.feature_dim, self.hidden[0]),
            Layer::Conv2 => (self.hidden[0], self.hidden[1]),
            Layer::Conv3 => (self.hidden[1], self.score_dim()),
            Layer::Attention => (self.feature_dim, 1),
            Layer::Embedding => (self.feature_dim, self.embed_dim),
        };
        if t.is_bias() {
            (1, 1, dout)
        } else {
            (h, din, dout)
        }
    }

    pub fn tensor_len(&self, t: ParamTensor) -> usize {
        let (a, b, c) = self.tensor_shape(t);
        a * b * c
    }

    pub fn tensor_range(&self, t: ParamTensor) -> Range<usize> {
        let start: usize = ParamTensor::ALL.iter().take_while(|&&p| p != t).map(|&p| self.tensor_len(p)).sum();
        start..start + self.tensor_len(t)
    }

    pub fn num_params(&self) -> usize {
        ParamTensor::ALL.iter().map(|&t| self.tensor_len(t)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Conv1,
    Conv2,
    Conv3,
    Attention,
    Embedding,
}

/// Parameter tensors in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamTensor {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    Conv3Weight,
    Conv3Bias,
    AttentionWeight,
    AttentionBias,
    EmbeddingWeight,
    EmbeddingBias,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 10] = [
        ParamTensor::Conv1Weight,
        ParamTensor::Conv1Bias,
        ParamTensor::Conv2Weight,
        ParamTensor::Conv2Bias,
        ParamTensor::Conv3Weight,
        ParamTensor::Conv3Bias,
        ParamTensor::AttentionWeight,
        ParamTensor::AttentionBias,
        ParamTensor::EmbeddingWeight,
        ParamTensor::EmbeddingBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamTensor::Conv1Weight => "conv1.weight",
            ParamTensor::Conv1Bias => "conv1.bias",
            ParamTensor::Conv2Weight => "conv2.weight",
            ParamTensor::Conv2Bias => "conv2.bias",
            ParamTensor::Conv3Weight => "conv3.weight",
            ParamTensor::Conv3Bias => "conv3.bias",
            ParamTensor::AttentionWeight => "attention.weight",
            ParamTensor::AttentionBias => "attention.bias",
            ParamTensor::EmbeddingWeight => "embedding.weight",
            ParamTensor::EmbeddingBias => "embedding.bias",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamTensor::Conv1Bias
                | ParamTensor::Conv2Bias
                | ParamTensor::Conv3Bias
                | ParamTensor::AttentionBias
                | ParamTensor::EmbeddingBias
        )
    }

    pub(crate) fn layer(self) -> Layer {
        match self {
            ParamTensor::Conv1Weight | ParamTensor::Conv1Bias => Layer::Conv1,
            ParamTensor::Conv2Weight | ParamTensor::Conv2Bias => Layer::Conv2,
            ParamTensor::Conv3Weight | ParamTensor::Conv3Bias => Layer::Conv3,
            ParamTensor::AttentionWeight | ParamTensor::AttentionBias => Layer::Attention,
            ParamTensor::EmbeddingWeight | ParamTensor::EmbeddingBias => Layer::Embedding,
        }
    }
}

impl Layer {
    fn tensors(self) -> (ParamTensor, ParamTensor) {
        match self {
            Layer::Conv1 => (ParamTensor::Conv1Weight, ParamTensor::Conv1Bias),
            Layer::Conv2 => (ParamTensor::Conv2Weight, ParamTensor::Conv2Bias),
            Layer::Conv3 => (ParamTensor::Conv3Weight, ParamTensor::Conv3Bias),
            Layer::Attention => (ParamTensor::AttentionWeight, ParamTensor::AttentionBias),
            Layer::Embedding => (ParamTensor::EmbeddingWeight, ParamTensor::EmbeddingBias),
        }
    }
}

/// All learnable weights, flattened in [`ParamTensor::ALL`] order.
///
/// Convolution weights are laid out `[tap][in_channel][out_channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: NetworkShape,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(ModelParams { shape, values: alloc::vec![0.0; shape.num_params()] })
    }

    pub fn from_values(shape: NetworkShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.num_params() {
            return Err(CoreError::shape(alloc::format!(
                "expected {} parameters, got {}",
                shape.num_params(),
                values.len()
            )));
        }
        Ok(ModelParams { shape, values })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every weight and bias.
    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in ParamTensor::ALL {
            let (_, din, _) = shape.tensor_shape(t.layer().tensors().0);
            let bound = 1.0 / crate::math::sqrt((din * shape.kernel_size) as f64);
            for v in params.tensor_mut(t) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn tensor(&self, t: ParamTensor) -> &[f64] {
        &self.values[self.shape.tensor_range(t)]
    }

    pub fn tensor_mut(&mut self, t: ParamTensor) -> &mut [f64] {
        let r = self.shape.tensor_range(t);
        &mut self.values[r]
    }

    pub(crate) fn kernel(&self, layer: Layer) -> ConvKernel<'_> {
        let (wt, bt) = layer.tensors();
        let (h, din, dout) = self.shape.tensor_shape(wt);
        ConvKernel::new(self.tensor(wt), self.tensor(bt), h, din, dout)
    }
}

/// Mutable weight and bias gradient slices for one layer of a flat gradient.
pub(crate) fn layer_grads<'a>(shape: &NetworkShape, grad: &'a mut [f64], layer: Layer) -> (&'a mut [f64], &'a mut [f64]) {
    let (wt, bt) = layer.tensors();
    let wr = shape.tensor_range(wt);
    let br = shape.tensor_range(bt);
    debug_assert_eq!(wr.end, br.start);
    let (w, b) = grad[wr.start..br.end].split_at_mut(wr.len());
    (w, b)
}
