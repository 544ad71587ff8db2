//! Bottleneck severity/age classifier and embedding extraction.
//!
//! Four hidden layers (default widths 2000, 2000, 2000, 25) with batch-norm,
//! a skip connection from layer 1 to layer 3 and linear bottleneck
//! projections in front of layers 2 and 3. The primary softmax head predicts
//! severity or age; an optional second head predicts speaker identity and is
//! mixed into the cost with weight `mtl_weight`. The 25 batch-normalised
//! activations of layer 4 are the embedding.

mod loss;
mod network;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::BasisFeature;

pub use loss::{cross_entropy, mtl_loss, mtl_loss_and_grad, softmax_rows, LossTerms};
pub use network::{Dense, ForwardOutput, HiddenLayer, Mode, Params, RunningStats};

pub const EMBEDDING_DIM: usize = 25;
const MODEL_FORMAT: &str = "spectro-embed/embednet";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Width of the linear projection in front of hidden layers 2 and 3.
    pub projection_dim: usize,
    /// Dropout on the outputs of hidden layers 1-3.
    pub dropout: f64,
    pub primary_classes: usize,
    /// Number of speakers; `0` disables the speaker head.
    pub speaker_classes: usize,
    /// Interpolation weight of the speaker cross-entropy.
    pub mtl_weight: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, primary_classes: usize, speaker_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![2000, 2000, 2000, EMBEDDING_DIM],
            projection_dim: 200,
            dropout: 0.2,
            primary_classes,
            speaker_classes,
            mtl_weight: if speaker_classes > 0 { 0.5 } else { 0.0 },
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            bn_momentum: 0.9,
            bn_epsilon: 1e-8,
        }
    }

    pub fn speaker_task(&self) -> bool {
        self.speaker_classes > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.hidden_dims.len() != 4 {
            return bad(format!("expected 4 hidden layers, got {}", self.hidden_dims.len()));
        }
        if self.hidden_dims[3] != EMBEDDING_DIM {
            return bad(format!(
                "bottleneck layer must have {EMBEDDING_DIM} units, got {}",
                self.hidden_dims[3]
            ));
        }
        if self.hidden_dims[0] != self.hidden_dims[2] {
            return bad("skip connection needs hidden layers 1 and 3 of equal width".into());
        }
        if self.hidden_dims.contains(&0) || self.projection_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.primary_classes < 1 {
            return bad("primary head needs at least one class".into());
        }
        if !(0.0..=1.0).contains(&self.mtl_weight) {
            return bad(format!("mtl_weight {} outside [0, 1]", self.mtl_weight));
        }
        if self.mtl_weight > 0.0 && !self.speaker_task() {
            return bad("mtl_weight > 0 requires a speaker head".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be positive and momentum in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_epsilon > 0.0) {
            return bad("bn_momentum must lie in [0, 1) and bn_epsilon be positive".into());
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub feature: BasisFeature,
    pub primary_label: usize,
    pub speaker_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNetwork {
    pub config: NetworkConfig,
    pub params: Params,
    pub running: Vec<RunningStats>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    network: EmbeddingNetwork,
}

impl EmbeddingNetwork {
    /// Randomly initialised network.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, &mut rng);
        Ok(Self::with_params(config, params))
    }

    /// Network with the given parameters and identity batch-norm statistics.
    pub fn with_params(config: NetworkConfig, params: Params) -> Self {
        let running = config
            .hidden_dims
            .iter()
            .map(|&w| RunningStats {
                mean: Array1::zeros(w),
                var: Array1::ones(w),
            })
            .collect();
        Self {
            config,
            params,
            running,
        }
    }

    pub fn forward(&self, batch: ArrayView2<f64>, mode: Mode) -> Result<ForwardOutput> {
        network::forward(&self.params, &self.running, &self.config, batch, mode)
    }

    /// Loss and parameter gradients for a batch. `out` must come from a
    /// train-mode forward pass over the same batch.
    pub fn backward(
        &self,
        out: &ForwardOutput,
        primary_labels: &[usize],
        speaker_labels: Option<&[usize]>,
        mtl_weight: f64,
    ) -> Result<(LossTerms, Params)> {
        let terms = mtl_loss_and_grad(
            &out.primary_logits,
            out.speaker_logits.as_ref(),
            primary_labels,
            speaker_labels,
            mtl_weight,
        )?;
        let grad = network::backward(&self.params, out, &terms.d_primary, terms.d_speaker.as_ref());
        Ok((terms, grad))
    }

    /// Bottleneck activations of one utterance in inference mode.
    pub fn extract_embedding(&self, feature: &BasisFeature) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, feature.dim()), feature.vector.clone())
            .map_err(|e| Error::Argument(e.to_string()))?;
        if feature.dim() != self.config.input_dim {
            return Err(Error::Argument(format!(
                "feature of {:?} has {} values, network expects {}",
                feature.utterance_id,
                feature.dim(),
                self.config.input_dim
            )));
        }
        Ok(self.forward(x.view(), Mode::Infer)?.bottleneck.row(0).to_vec())
    }

    /// Most probable primary class (lowest index on ties) and the posterior.
    pub fn classify(&self, feature: &BasisFeature) -> Result<(usize, Vec<f64>)> {
        let x = Array2::from_shape_vec((1, feature.dim()), feature.vector.clone())
            .map_err(|e| Error::Argument(e.to_string()))?;
        let out = self.forward(x.view(), Mode::Infer)?;
        let posterior = softmax_rows(&out.primary_logits).row(0).to_vec();
        Ok((argmax(&posterior), posterior))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            network: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let file: ModelFile = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(parse_err(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let net = file.network;
        net.config.validate()?;
        let expected = Params::zeros(&net.config);
        let shapes = |p: &Params| {
            p.tensors()
                .iter()
                .map(|(n, t)| (n.clone(), t.len()))
                .collect::<Vec<_>>()
        };
        if shapes(&expected) != shapes(&net.params) || net.running.len() != 4 {
            return Err(parse_err("parameter shapes do not match the stored config".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub primary_accuracy: f64,
    pub speaker_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// One tab-separated line per epoch: epoch, loss, primary accuracy,
    /// speaker accuracy (`-` without a speaker head).
    pub fn to_text(&self) -> String {
        let mut s = String::from("# epoch\tloss\tprimary_acc\tspeaker_acc\n");
        for e in &self.epochs {
            let spk = e
                .speaker_accuracy
                .map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(s, "{}\t{:.9}\t{:.6}\t{}", e.epoch, e.loss, e.primary_accuracy, spk);
        }
        s
    }
}

fn stack(records: &[&TrainingRecord]) -> Array2<f64> {
    let dim = records[0].feature.dim();
    Array2::from_shape_fn((records.len(), dim), |(i, j)| records[i].feature.vector[j])
}

/// Minibatch SGD with momentum. Deterministic for a given config seed.
pub fn train(records: &[TrainingRecord], cfg: &NetworkConfig) -> Result<(EmbeddingNetwork, TrainingLog)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Data("no training records".into()));
    }
    let mut primary_counts = vec![0usize; cfg.primary_classes];
    let mut speaker_counts = vec![0usize; cfg.speaker_classes];
    for r in records {
        if r.feature.dim() != cfg.input_dim {
            return Err(Error::Argument(format!(
                "record {:?} has {} values, network expects {}",
                r.feature.utterance_id,
                r.feature.dim(),
                cfg.input_dim
            )));
        }
        *primary_counts
            .get_mut(r.primary_label)
            .ok_or_else(|| Error::Data(format!("primary label {} out of range", r.primary_label)))? += 1;
        if cfg.speaker_task() {
            let s = r
                .speaker_label
                .ok_or_else(|| Error::Data(format!("record {:?} lacks a speaker label", r.feature.utterance_id)))?;
            *speaker_counts
                .get_mut(s)
                .ok_or_else(|| Error::Data(format!("speaker label {s} out of range")))? += 1;
        }
    }
    if let Some(c) = primary_counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("primary class {c} has no training records")));
    }
    if let Some(c) = speaker_counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("speaker class {c} has no training records")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = EmbeddingNetwork::with_params(cfg.clone(), Params::init(cfg, &mut rng));
    let mut velocity = Params::zeros(cfg);
    for (_, v) in velocity.tensors_mut() {
        v.fill(0.0);
    }

    let all: Vec<&TrainingRecord> = records.iter().collect();
    let full_x = stack(&all);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // A single-example batch has no batch statistics; fold it into the previous one.
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
            let n = batches.len();
            batches[n - 1] = &order[(n - 1) * cfg.batch_size..];
        }

        let mut loss_sum = 0.0;
        for idx in batches {
            let batch: Vec<&TrainingRecord> = idx.iter().map(|&i| &records[i]).collect();
            let x = stack(&batch);
            let primary: Vec<usize> = batch.iter().map(|r| r.primary_label).collect();
            let speaker: Option<Vec<usize>> = cfg
                .speaker_task()
                .then(|| batch.iter().map(|r| r.speaker_label.unwrap_or(0)).collect());

            let seed = rng.random::<u64>();
            let out = net.forward(
                x.view(),
                Mode::Train {
                    dropout_seed: Some(seed),
                },
            )?;
            let (terms, grad) = net.backward(&out, &primary, speaker.as_deref(), cfg.mtl_weight)?;
            if !terms.loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss {} at epoch {epoch}",
                    terms.loss
                )));
            }
            loss_sum += terms.loss * batch.len() as f64;

            for ((_, v), ((_, g), (_, p))) in velocity
                .tensors_mut()
                .into_iter()
                .zip(grad.tensors().into_iter().zip(net.params.tensors_mut()))
            {
                for ((vi, gi), pi) in v.iter_mut().zip(g).zip(p.iter_mut()) {
                    *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
                    *pi += *vi;
                }
            }
            for (l, stats) in net.running.iter_mut().enumerate() {
                let (mean, var) = out.batch_stats(l);
                let m = cfg.bn_momentum;
                stats.mean = &stats.mean * m + &(mean * (1.0 - m));
                stats.var = &stats.var * m + &(var * (1.0 - m));
            }
        }
        if !net.params.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }

        let eval = net.forward(full_x.view(), Mode::Infer)?;
        let accuracy = |logits: &Array2<f64>, labels: &mut dyn Iterator<Item = usize>| {
            let hits = logits
                .axis_iter(Axis(0))
                .zip(labels)
                .filter(|(row, y)| argmax(row.as_slice().unwrap()) == *y)
                .count();
            hits as f64 / records.len() as f64
        };
        let primary_accuracy = accuracy(&eval.primary_logits, &mut records.iter().map(|r| r.primary_label));
        let speaker_accuracy = eval
            .speaker_logits
            .as_ref()
            .map(|l| accuracy(l, &mut records.iter().map(|r| r.speaker_label.unwrap_or(0))));
        log.epochs.push(EpochLog {
            epoch,
            loss: loss_sum / records.len() as f64,
            primary_accuracy,
            speaker_accuracy,
        });
    }
    Ok((net, log))
}
