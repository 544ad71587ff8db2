//! Parameters, forward pass and manual backward pass.
//!
//! Hidden layer `l` computes
//! `[x P_l] -> affine -> ReLU -> batch-norm [-> + skip] [-> dropout]`.
//! Layers 2 and 3 (index 1, 2) carry the linear bottleneck projection `P_l`,
//! layer 3 adds the output of layer 1 after its batch-norm, and dropout
//! follows layers 1-3 in training. Layer 4 is the 25-wide bottleneck whose
//! batch-normalised output feeds the softmax heads.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetworkConfig;
use crate::error::{Error, Result};

const SKIP_FROM: usize = 0;
const SKIP_TO: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// `in x proj`, present on the middle two layers.
    pub projection: Option<Array2<f64>>,
    pub affine: Dense,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Trainable parameters. Gradients and momentum buffers share this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub hidden: Vec<HiddenLayer>,
    pub primary_head: Dense,
    pub speaker_head: Option<Dense>,
}

impl Params {
    /// Zero-valued parameters shaped by `cfg`.
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let mut hidden = Vec::with_capacity(4);
        let mut width = cfg.input_dim;
        for (l, &out) in cfg.hidden_dims.iter().enumerate() {
            let projection = (l == 1 || l == 2).then(|| Array2::zeros((width, cfg.projection_dim)));
            let affine_in = if projection.is_some() {
                cfg.projection_dim
            } else {
                width
            };
            hidden.push(HiddenLayer {
                projection,
                affine: Dense::zeros(affine_in, out),
                gamma: Array1::ones(out),
                beta: Array1::zeros(out),
            });
            width = out;
        }
        Self {
            hidden,
            primary_head: Dense::zeros(width, cfg.primary_classes),
            speaker_head: cfg.speaker_task().then(|| Dense::zeros(width, cfg.speaker_classes)),
        }
    }

    /// Uniform fan-in initialisation of projections and affine weights with
    /// variance `1 / fan_in`. Biases, batch-norm shifts and both softmax
    /// heads start at zero; batch-norm scales at one.
    pub fn init(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(cfg);
        let mut fill = |m: &mut Array2<f64>| {
            let limit = (3.0 / m.nrows() as f64).sqrt();
            m.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        };
        for layer in &mut p.hidden {
            if let Some(proj) = &mut layer.projection {
                fill(proj);
            }
            fill(&mut layer.affine.weight);
        }
        p
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.hidden.iter().enumerate() {
            if let Some(p) = &layer.projection {
                out.push((format!("hidden{}.projection", l + 1), p.as_slice().unwrap()));
            }
            out.push((
                format!("hidden{}.weight", l + 1),
                layer.affine.weight.as_slice().unwrap(),
            ));
            out.push((format!("hidden{}.bias", l + 1), layer.affine.bias.as_slice().unwrap()));
            out.push((format!("hidden{}.bn_scale", l + 1), layer.gamma.as_slice().unwrap()));
            out.push((format!("hidden{}.bn_shift", l + 1), layer.beta.as_slice().unwrap()));
        }
        out.push(("primary.weight".into(), self.primary_head.weight.as_slice().unwrap()));
        out.push(("primary.bias".into(), self.primary_head.bias.as_slice().unwrap()));
        if let Some(h) = &self.speaker_head {
            out.push(("speaker.weight".into(), h.weight.as_slice().unwrap()));
            out.push(("speaker.bias".into(), h.bias.as_slice().unwrap()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.hidden.iter_mut().enumerate() {
            if let Some(p) = &mut layer.projection {
                out.push((format!("hidden{}.projection", l + 1), p.as_slice_mut().unwrap()));
            }
            out.push((
                format!("hidden{}.weight", l + 1),
                layer.affine.weight.as_slice_mut().unwrap(),
            ));
            out.push((
                format!("hidden{}.bias", l + 1),
                layer.affine.bias.as_slice_mut().unwrap(),
            ));
            out.push((format!("hidden{}.bn_scale", l + 1), layer.gamma.as_slice_mut().unwrap()));
            out.push((format!("hidden{}.bn_shift", l + 1), layer.beta.as_slice_mut().unwrap()));
        }
        out.push((
            "primary.weight".into(),
            self.primary_head.weight.as_slice_mut().unwrap(),
        ));
        out.push(("primary.bias".into(), self.primary_head.bias.as_slice_mut().unwrap()));
        if let Some(h) = &mut self.speaker_head {
            out.push(("speaker.weight".into(), h.weight.as_slice_mut().unwrap()));
            out.push(("speaker.bias".into(), h.bias.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|x| x * x).sum()
    }
}

/// Running batch-norm statistics of one hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; dropout masks drawn from `dropout_seed` unless
    /// `None` (dropout off).
    Train { dropout_seed: Option<u64> },
    /// Running statistics, no dropout.
    Infer,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    input: Array2<f64>,
    projected: Option<Array2<f64>>,
    pre_activation: Array2<f64>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    dropout_mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub primary_logits: Array2<f64>,
    pub speaker_logits: Option<Array2<f64>>,
    /// Batch-normalised layer-4 activations, `batch x 25`.
    pub bottleneck: Array2<f64>,
    pub(crate) caches: Vec<LayerCache>,
    pub(crate) train: bool,
}

impl ForwardOutput {
    /// Pre-scale normalised activations of hidden layer `l` (0-based).
    pub fn normalized(&self, layer: usize) -> &Array2<f64> {
        &self.caches[layer].normalized
    }

    /// Batch mean and population variance seen by layer `l` in train mode.
    pub fn batch_stats(&self, layer: usize) -> (&Array1<f64>, &Array1<f64>) {
        (&self.caches[layer].batch_mean, &self.caches[layer].batch_var)
    }
}

pub(crate) fn forward(
    params: &Params,
    stats: &[RunningStats],
    cfg: &NetworkConfig,
    x: ArrayView2<f64>,
    mode: Mode,
) -> Result<ForwardOutput> {
    if x.ncols() != cfg.input_dim {
        return Err(Error::Argument(format!(
            "feature dimension {} does not match network input {}",
            x.ncols(),
            cfg.input_dim
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let train = matches!(mode, Mode::Train { .. });
    let mut dropout_rng = match mode {
        Mode::Train {
            dropout_seed: Some(seed),
        } if cfg.dropout > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    let mut caches: Vec<LayerCache> = Vec::with_capacity(4);
    let mut h = x.to_owned();
    let mut skip: Option<Array2<f64>> = None;
    for (l, layer) in params.hidden.iter().enumerate() {
        let projected = layer.projection.as_ref().map(|p| h.dot(p));
        let z = layer.affine.apply(projected.as_ref().unwrap_or(&h));
        let a = z.mapv(|v| v.max(0.0));

        let (mean, var) = if train {
            let mean = a.mean_axis(Axis(0)).unwrap();
            let var = (&a - &mean).mapv(|d| d * d).mean_axis(Axis(0)).unwrap();
            (mean, var)
        } else {
            (stats[l].mean.clone(), stats[l].var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + cfg.bn_epsilon).sqrt());
        let normalized = (&a - &mean) * &inv_std;
        let mut out = &normalized * &layer.gamma + &layer.beta;

        if l == SKIP_TO {
            out += skip.as_ref().expect("skip source precedes target");
        }
        let dropout_mask = match (&mut dropout_rng, l < 3) {
            (Some(rng), true) => {
                let keep = 1.0 - cfg.dropout;
                let mask =
                    Array2::from_shape_fn(out.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                out *= &mask;
                Some(mask)
            }
            _ => None,
        };
        if l == SKIP_FROM {
            skip = Some(out.clone());
        }
        caches.push(LayerCache {
            input: std::mem::replace(&mut h, out),
            projected,
            pre_activation: z,
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            dropout_mask,
        });
    }

    Ok(ForwardOutput {
        primary_logits: params.primary_head.apply(&h),
        speaker_logits: params.speaker_head.as_ref().map(|s| s.apply(&h)),
        bottleneck: h,
        caches,
        train,
    })
}

/// Back-propagates logit gradients (already scaled by the loss weights and
/// the batch mean) through the heads and hidden layers.
pub(crate) fn backward(
    params: &Params,
    out: &ForwardOutput,
    d_primary: &Array2<f64>,
    d_speaker: Option<&Array2<f64>>,
) -> Params {
    let mut grad = Params {
        hidden: params
            .hidden
            .iter()
            .map(|l| HiddenLayer {
                projection: l.projection.as_ref().map(|p| Array2::zeros(p.dim())),
                affine: Dense::zeros(l.affine.weight.nrows(), l.affine.weight.ncols()),
                gamma: Array1::zeros(l.gamma.len()),
                beta: Array1::zeros(l.beta.len()),
            })
            .collect(),
        primary_head: Dense::zeros(params.primary_head.weight.nrows(), params.primary_head.weight.ncols()),
        speaker_head: params
            .speaker_head
            .as_ref()
            .map(|h| Dense::zeros(h.weight.nrows(), h.weight.ncols())),
    };

    let top = &out.bottleneck;
    grad.primary_head.weight = top.t().dot(d_primary);
    grad.primary_head.bias = d_primary.sum_axis(Axis(0));
    let mut d_out = d_primary.dot(&params.primary_head.weight.t());
    if let (Some(ds), Some(head), Some(g)) = (d_speaker, &params.speaker_head, &mut grad.speaker_head) {
        g.weight = top.t().dot(ds);
        g.bias = ds.sum_axis(Axis(0));
        d_out += &ds.dot(&head.weight.t());
    }

    let batch = top.nrows() as f64;
    let mut d_skip: Option<Array2<f64>> = None;
    for l in (0..params.hidden.len()).rev() {
        let layer = &params.hidden[l];
        let cache = &out.caches[l];
        let g = &mut grad.hidden[l];

        if l == SKIP_FROM {
            if let Some(ds) = d_skip.take() {
                d_out += &ds;
            }
        }
        let d_y = match &cache.dropout_mask {
            Some(mask) => &d_out * mask,
            None => d_out,
        };
        if l == SKIP_TO {
            d_skip = Some(d_y.clone());
        }

        g.gamma = (&d_y * &cache.normalized).sum_axis(Axis(0));
        g.beta = d_y.sum_axis(Axis(0));
        let d_norm = &d_y * &layer.gamma;
        let d_act = if out.train {
            let sum_d = d_norm.sum_axis(Axis(0));
            let sum_dx = (&d_norm * &cache.normalized).sum_axis(Axis(0));
            ((&d_norm * batch) - &sum_d - &(&cache.normalized * &sum_dx)) * &cache.inv_std / batch
        } else {
            &d_norm * &cache.inv_std
        };
        let relu_mask = cache.pre_activation.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let d_z = d_act * relu_mask;

        let affine_in = cache.projected.as_ref().unwrap_or(&cache.input);
        g.affine.weight = affine_in.t().dot(&d_z);
        g.affine.bias = d_z.sum_axis(Axis(0));
        let d_affine_in = d_z.dot(&layer.affine.weight.t());
        d_out = match (&layer.projection, &mut g.projection) {
            (Some(p), Some(gp)) => {
                *gp = cache.input.t().dot(&d_affine_in);
                d_affine_in.dot(&p.t())
            }
            _ => d_affine_in,
        };
    }
    grad
}
