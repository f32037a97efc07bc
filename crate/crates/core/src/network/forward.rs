//! Two-pass forward (base and attention-filtered features through the same
//! convolution stack) and the matching reverse-mode gradient.

use alloc::vec;
use alloc::vec::Vec;

use super::affinity::{affinity_backward, affinity_forward, embed_forward, normalize_backward, AffinityMask, EmbeddingCache};
use super::conv::{conv_backward, conv_forward};
use super::{layer_grads, Layer, ModelParams};
use crate::error::{CoreError, Result};
use crate::math::sigmoid;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Base,
    Suppressed,
}

/// Frame-major activation sequence: `scores` is `T x (C+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassActivationSequence {
    pub scores: Matrix,
    pub branch: Branch,
}

impl ClassActivationSequence {
    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.rows() == 0
    }

    pub fn class_row(&self, c: usize) -> Vec<f64> {
        self.scores.column(c)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub use_affinity: bool,
    /// Run the second pass over attention-filtered features.
    pub suppression: bool,
    /// Replaces the learned mask (no gradient flows into it).
    pub mask_override: Option<AffinityMask>,
    /// Replaces the learned attention weights (no gradient flows into them).
    pub attention_override: Option<Vec<f64>>,
}

impl ForwardOptions {
    pub fn new(use_affinity: bool, suppression: bool) -> Self {
        ForwardOptions { use_affinity, suppression, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
struct StackCache {
    input: Matrix,
    pre1: Matrix,
    act1: Matrix,
    pre2: Matrix,
    act2: Matrix,
}

/// Everything produced by one forward pass, plus what backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub base: ClassActivationSequence,
    pub suppressed: Option<ClassActivationSequence>,
    pub embeddings: Matrix,
    pub mask: Option<AffinityMask>,
    pub attention: Vec<f64>,
    x: Matrix,
    emb_cache: EmbeddingCache,
    mask_learned: bool,
    attention_learned: bool,
    base_cache: StackCache,
    supp_cache: Option<StackCache>,
}

impl ForwardPass {
    /// The branch read at inference time.
    pub fn inference_scores(&self) -> &ClassActivationSequence {
        self.suppressed.as_ref().unwrap_or(&self.base)
    }
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn stack_forward(params: &ModelParams, input: Matrix, mask: Option<&AffinityMask>) -> (Matrix, StackCache) {
    let pre1 = conv_forward(&params.kernel(Layer::Conv1), &input, mask);
    let act1 = relu(&pre1);
    let pre2 = conv_forward(&params.kernel(Layer::Conv2), &act1, mask);
    let act2 = relu(&pre2);
    let out = conv_forward(&params.kernel(Layer::Conv3), &act2, mask);
    (out, StackCache { input, pre1, act1, pre2, act2 })
}

fn relu_backward(pre: &Matrix, mut grad: Matrix) -> Matrix {
    for (g, &p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// Backward through the three-layer stack. Returns the input gradient when requested.
fn stack_backward(
    params: &ModelParams,
    cache: &StackCache,
    mask: Option<&AffinityMask>,
    dout: &Matrix,
    grad: &mut [f64],
    mut dmask: Option<&mut AffinityMask>,
    want_input_grad: bool,
) -> Option<Matrix> {
    let shape = params.shape;
    let len = cache.input.rows();

    let mut dact2 = Matrix::zeros(len, shape.hidden[1]);
    {
        let (dw, db) = layer_grads(&shape, grad, Layer::Conv3);
        conv_backward(&params.kernel(Layer::Conv3), &cache.act2, mask, dout, dw, db, Some(&mut dact2), dmask.as_deref_mut());
    }
    let dpre2 = relu_backward(&cache.pre2, dact2);

    let mut dact1 = Matrix::zeros(len, shape.hidden[0]);
    {
        let (dw, db) = layer_grads(&shape, grad, Layer::Conv2);
        conv_backward(&params.kernel(Layer::Conv2), &cache.act1, mask, &dpre2, dw, db, Some(&mut dact1), dmask.as_deref_mut());
    }
    let dpre1 = relu_backward(&cache.pre1, dact1);

    let mut dinput = want_input_grad.then(|| Matrix::zeros(len, cache.input.cols()));
    let (dw, db) = layer_grads(&shape, grad, Layer::Conv1);
    conv_backward(&params.kernel(Layer::Conv1), &cache.input, mask, &dpre1, dw, db, dinput.as_mut(), dmask);
    dinput
}

/// Runs the network on `x` (`T x D_in`).
pub fn forward_cas(params: &ModelParams, x: &Matrix, opts: &ForwardOptions) -> Result<ForwardPass> {
    let shape = params.shape;
    if x.cols() != shape.feature_dim {
        return Err(CoreError::shape(alloc::format!(
            "features have {} dims, network expects {}",
            x.cols(),
            shape.feature_dim
        )));
    }
    let len = x.rows();
    if len == 0 {
        return Err(CoreError::shape("empty feature sequence"));
    }

    let (embeddings, emb_cache) = embed_forward(&params.kernel(Layer::Embedding), x);
    let (mask, mask_learned) = match (&opts.mask_override, opts.use_affinity) {
        (Some(m), _) => {
            if m.taps() != shape.kernel_size || m.len() != len {
                return Err(CoreError::shape("mask override has the wrong shape"));
            }
            (Some(m.clone()), false)
        }
        (None, true) => (Some(affinity_forward(&embeddings, shape.kernel_size)), true),
        (None, false) => (None, false),
    };

    let (s_base, base_cache) = stack_forward(params, x.clone(), mask.as_ref());

    let (attention, attention_learned) = match &opts.attention_override {
        Some(w) => {
            if w.len() != len {
                return Err(CoreError::shape("attention override has the wrong length"));
            }
            (w.clone(), false)
        }
        None => {
            let logits = conv_forward(&params.kernel(Layer::Attention), x, None);
            ((0..len).map(|t| sigmoid(logits.get(t, 0))).collect(), true)
        }
    };

    let (suppressed, supp_cache) = if opts.suppression {
        let mut filtered = x.clone();
        for (t, &w) in attention.iter().enumerate() {
            filtered.row_mut(t).iter_mut().for_each(|v| *v *= w);
        }
        let (s, cache) = stack_forward(params, filtered, mask.as_ref());
        (Some(ClassActivationSequence { scores: s, branch: Branch::Suppressed }), Some(cache))
    } else {
        (None, None)
    };

    Ok(ForwardPass {
        base: ClassActivationSequence { scores: s_base, branch: Branch::Base },
        suppressed,
        embeddings,
        mask,
        attention,
        x: x.clone(),
        emb_cache,
        mask_learned,
        attention_learned,
        base_cache,
        supp_cache,
    })
}

/// Loss gradients arriving at the network outputs.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub base: Option<Matrix>,
    pub suppressed: Option<Matrix>,
    pub embeddings: Option<Matrix>,
    pub attention: Option<Vec<f64>>,
}

/// Gradient of the upstream-weighted outputs with respect to every parameter,
/// flattened like [`ModelParams::values`].
pub fn backward(params: &ModelParams, pass: &ForwardPass, up: &Upstream) -> Vec<f64> {
    let shape = params.shape;
    let len = pass.x.rows();
    let mut grad = vec![0.0; shape.num_params()];
    let mask = pass.mask.as_ref();
    let mut dmask = (pass.mask_learned).then(|| AffinityMask::filled(shape.kernel_size, len, 0.0));

    let mut dattention = up.attention.clone().unwrap_or_else(|| vec![0.0; len]);
    if let (Some(ds), Some(cache)) = (&up.suppressed, &pass.supp_cache) {
        let dfiltered = stack_backward(params, cache, mask, ds, &mut grad, dmask.as_mut(), pass.attention_learned)
            .expect("input gradient requested");
        if pass.attention_learned {
            for (t, d) in dattention.iter_mut().enumerate() {
                *d += crate::math::dot(dfiltered.row(t), pass.x.row(t));
            }
        }
    }
    if pass.attention_learned && dattention.iter().any(|&d| d != 0.0) {
        let mut dlogit = Matrix::zeros(len, 1);
        for (t, (&d, &w)) in dattention.iter().zip(&pass.attention).enumerate() {
            dlogit.set(t, 0, d * w * (1.0 - w));
        }
        let (dw, db) = layer_grads(&shape, &mut grad, Layer::Attention);
        conv_backward(&params.kernel(Layer::Attention), &pass.x, None, &dlogit, dw, db, None, None);
    }

    if let Some(ds) = &up.base {
        stack_backward(params, &pass.base_cache, mask, ds, &mut grad, dmask.as_mut(), false);
    }

    let mut demb = up.embeddings.clone();
    if let Some(dm) = &dmask {
        let de = demb.get_or_insert_with(|| Matrix::zeros(len, shape.embed_dim));
        affinity_backward(&pass.embeddings, dm, de);
    }
    if let Some(de) = demb {
        let dz = normalize_backward(&pass.emb_cache, &de);
        let (dw, db) = layer_grads(&shape, &mut grad, Layer::Embedding);
        conv_backward(&params.kernel(Layer::Embedding), &pass.x, None, &dz, dw, db, None, None);
    }
    grad
}
