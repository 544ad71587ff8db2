//! Desk-scale adaptation experiment on synthetic log-mel spectrograms.
//!
//! Every speaker warps the formant positions of a shared set of class
//! templates and adds a spectral tilt and a tempo factor. A frame classifier has to recover the class of each
//! frame; the experiment compares one trained on frames alone with an
//! identical one that also sees the speaker's averaged spectral basis
//! embedding.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::concat_aux;
use crate::config::KeyValues;
use crate::embednet::{argmax, train, EmbeddingNetwork, Mode, NetworkConfig, TrainingRecord, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::smoothing::{average_smooth, SpeakerGroups};
use crate::subspace::{basis_feature, BasisFeature, FeatureKind};

const FORMANTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub speakers: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub segments_per_utterance: usize,
    pub classes: usize,
    pub channels: usize,
    /// Largest relative shift of formant centres (vocal-tract-length style).
    pub max_warp: f64,
    /// Largest absolute spectral tilt, in log-energy units across the band.
    pub max_tilt: f64,
    pub noise: f64,
    /// `false` removes warp, tilt and tempo differences between speakers.
    pub speaker_variation: bool,
    pub d_s: usize,
    pub seeds: Vec<u64>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            speakers: 8,
            train_utterances: 8,
            test_utterances: 4,
            segments_per_utterance: 12,
            classes: 10,
            channels: 40,
            max_warp: 0.2,
            max_tilt: 1.0,
            noise: 1.5,
            speaker_variation: true,
            d_s: 2,
            seeds: (1..=5).collect(),
        }
    }
}

impl ToyConfig {
    pub const KEYS: &'static [&'static str] = &[
        "speakers",
        "train_utterances",
        "test_utterances",
        "segments_per_utterance",
        "classes",
        "channels",
        "max_warp",
        "max_tilt",
        "noise",
        "speaker_variation",
        "d_s",
        "seeds",
        "seed",
    ];

    /// `seeds` is a count; the run uses `seed, seed + 1, ...`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(Self::KEYS)?;
        let d = Self::default();
        let count: usize = kv.get_or("seeds", d.seeds.len())?;
        let first: u64 = kv.get_or("seed", d.seeds[0])?;
        let cfg = Self {
            speakers: kv.get_or("speakers", d.speakers)?,
            train_utterances: kv.get_or("train_utterances", d.train_utterances)?,
            test_utterances: kv.get_or("test_utterances", d.test_utterances)?,
            segments_per_utterance: kv.get_or("segments_per_utterance", d.segments_per_utterance)?,
            classes: kv.get_or("classes", d.classes)?,
            channels: kv.get_or("channels", d.channels)?,
            max_warp: kv.get_or("max_warp", d.max_warp)?,
            max_tilt: kv.get_or("max_tilt", d.max_tilt)?,
            noise: kv.get_or("noise", d.noise)?,
            speaker_variation: kv.get_or("speaker_variation", d.speaker_variation)?,
            d_s: kv.get_or("d_s", d.d_s)?,
            seeds: (first..first + count as u64).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers < 2 || self.classes < 2 || self.channels < 2 {
            return Err(Error::Config(
                "toy corpus needs at least 2 speakers, classes and channels".into(),
            ));
        }
        if self.train_utterances == 0 || self.test_utterances == 0 || self.segments_per_utterance == 0 {
            return Err(Error::Config("toy corpus needs training and test utterances".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("toy experiment needs at least one seed".into()));
        }
        if !(0.0..1.0).contains(&self.max_warp) || self.max_tilt < 0.0 || self.noise < 0.0 {
            return Err(Error::Config(
                "max_warp must lie in [0, 1); max_tilt and noise must be non-negative".into(),
            ));
        }
        if self.d_s == 0 || self.d_s > self.channels {
            return Err(Error::Config(format!("d_s must lie in 1..={}", self.channels)));
        }
        Ok(())
    }
}

struct Utterance {
    /// `channels x frames`.
    values: Array2<f64>,
    frame_labels: Vec<usize>,
    speaker: usize,
    test: bool,
}

struct Speaker {
    warp: f64,
    tilt: f64,
    tempo: f64,
    group: usize,
}

/// Formant centre, width and height of one class template, in channels.
struct Formant {
    centre: f64,
    width: f64,
    height: f64,
}

fn generate(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> (Vec<Speaker>, Vec<Utterance>) {
    let c_n = cfg.channels;
    let span = (c_n - 1) as f64;
    let templates: Vec<Vec<Formant>> = (0..cfg.classes)
        .map(|_| {
            (0..FORMANTS)
                .map(|_| Formant {
                    centre: rng.random_range(0.1 * span..0.9 * span),
                    width: rng.random_range(0.05 * span..0.1 * span),
                    height: rng.random_range(2.0..4.0),
                })
                .collect()
        })
        .collect();
    let slope: Vec<f64> = (0..c_n).map(|c| 2.0 * c as f64 / span - 1.0).collect();
    let speakers: Vec<Speaker> = (0..cfg.speakers)
        .map(|s| {
            let group = s % 2;
            if !cfg.speaker_variation {
                return Speaker {
                    warp: 1.0,
                    tilt: 0.0,
                    tempo: 1.0,
                    group,
                };
            }
            let w = cfg.max_warp;
            let (warp, tempo) = if group == 0 {
                (rng.random_range(1.0 - w..1.0 - 0.25 * w), rng.random_range(0.8..1.0))
            } else {
                (rng.random_range(1.0 + 0.25 * w..1.0 + w), rng.random_range(1.2..1.5))
            };
            Speaker {
                warp,
                tilt: rng.random_range(-cfg.max_tilt..=cfg.max_tilt),
                tempo,
                group,
            }
        })
        .collect();

    let mut utterances = Vec::new();
    for (s, spk) in speakers.iter().enumerate() {
        // Log-mel frame of every class for this speaker, before noise.
        let shapes: Vec<Vec<f64>> = templates
            .iter()
            .map(|formants| {
                (0..c_n)
                    .map(|c| {
                        let peaks: f64 = formants
                            .iter()
                            .map(|f| {
                                let d = (c as f64 - spk.warp * f.centre) / f.width;
                                f.height * (-0.5 * d * d).exp()
                            })
                            .sum();
                        -4.0 + peaks + spk.tilt * slope[c]
                    })
                    .collect()
            })
            .collect();
        for u in 0..cfg.train_utterances + cfg.test_utterances {
            let mut labels = Vec::new();
            for _ in 0..cfg.segments_per_utterance {
                let k = rng.random_range(0..cfg.classes);
                let len = (rng.random_range(4.0..8.0) * spk.tempo).round().max(1.0) as usize;
                labels.extend(std::iter::repeat_n(k, len));
            }
            let values = Array2::from_shape_fn((c_n, labels.len()), |(c, t)| {
                let n: f64 = StandardNormal.sample(rng);
                shapes[labels[t]][c] + cfg.noise * n
            });
            utterances.push(Utterance {
                values,
                frame_labels: labels,
                speaker: s,
                test: u >= cfg.train_utterances,
            });
        }
    }
    (speakers, utterances)
}

fn record(vector: Vec<f64>, label: usize, speaker: Option<usize>) -> TrainingRecord {
    TrainingRecord {
        feature: BasisFeature {
            vector,
            kind: FeatureKind::Spectral,
            utterance_id: String::new(),
            speaker_id: String::new(),
        },
        primary_label: label,
        speaker_label: speaker,
    }
}

/// Spectral basis embeddings averaged per speaker, from a classifier trained
/// on the training utterances with the speaker group as primary target.
fn speaker_embeddings(
    cfg: &ToyConfig,
    speakers: &[Speaker],
    utterances: &[Utterance],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let features: Vec<BasisFeature> = utterances
        .iter()
        .map(|u| {
            basis_feature(
                &MelSpectrogram::from_values(u.values.clone()),
                FeatureKind::Spectral,
                cfg.d_s,
                1,
            )
        })
        .collect::<Result<_>>()?;
    let records: Vec<TrainingRecord> = utterances
        .iter()
        .zip(&features)
        .filter(|(u, _)| !u.test)
        .map(|(u, f)| record(f.vector.clone(), speakers[u.speaker].group, Some(u.speaker)))
        .collect();
    let net_cfg = NetworkConfig {
        hidden_dims: vec![64, 64, 64, EMBEDDING_DIM],
        projection_dim: 32,
        dropout: 0.1,
        learning_rate: 0.01,
        batch_size: 16,
        epochs: 30,
        seed,
        ..NetworkConfig::new(records[0].feature.dim(), 2, cfg.speakers)
    };
    let (net, _) = train(&records, &net_cfg)?;
    let mut groups = SpeakerGroups::new();
    for (u, f) in utterances.iter().zip(&features) {
        groups
            .entry(format!("{:04}", u.speaker))
            .or_default()
            .push(net.extract_embedding(f)?);
    }
    Ok(average_smooth(&groups)?.into_iter().map(|e| e.vector).collect())
}

fn frame_rows(u: &Utterance, aux: Option<&[f64]>) -> Array2<f64> {
    let frames = u.values.t();
    match aux {
        Some(e) => concat_aux(frames, e),
        None => frames.to_owned(),
    }
}

/// Percentage of misclassified test frames for a classifier trained on the
/// training frames.
fn frame_error(cfg: &ToyConfig, utterances: &[Utterance], aux: Option<&[Vec<f64>]>, seed: u64) -> Result<f64> {
    let matrices: Vec<Array2<f64>> = utterances
        .iter()
        .map(|u| frame_rows(u, aux.map(|a| a[u.speaker].as_slice())))
        .collect();
    let mut records = Vec::new();
    for (u, m) in utterances.iter().zip(&matrices).filter(|(u, _)| !u.test) {
        for (row, &y) in m.rows().into_iter().zip(&u.frame_labels) {
            records.push(record(row.to_vec(), y, None));
        }
    }
    let net_cfg = NetworkConfig {
        hidden_dims: vec![32, 32, 32, EMBEDDING_DIM],
        projection_dim: 16,
        dropout: 0.0,
        learning_rate: 0.02,
        batch_size: 64,
        epochs: 8,
        seed,
        ..NetworkConfig::new(matrices[0].ncols(), cfg.classes, 0)
    };
    let (net, _) = train(&records, &net_cfg)?;
    let (mut wrong, mut total) = (0usize, 0usize);
    for (u, m) in utterances.iter().zip(&matrices).filter(|(u, _)| u.test) {
        let logits = forward_logits(&net, m)?;
        for (row, &y) in logits.rows().into_iter().zip(&u.frame_labels) {
            wrong += usize::from(argmax(row.as_slice().unwrap()) != y);
            total += 1;
        }
    }
    Ok(100.0 * wrong as f64 / total as f64)
}

fn forward_logits(net: &EmbeddingNetwork, frames: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(net.forward(frames.view(), Mode::Infer)?.primary_logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Frame error rate in percent without auxiliary features.
    pub error_without: f64,
    pub error_with: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub speaker_variation: bool,
    pub outcomes: Vec<SeedOutcome>,
}

impl ToyReport {
    pub fn mean_without(&self) -> f64 {
        self.outcomes.iter().map(|o| o.error_without).sum::<f64>() / self.outcomes.len() as f64
    }

    pub fn mean_with(&self) -> f64 {
        self.outcomes.iter().map(|o| o.error_with).sum::<f64>() / self.outcomes.len() as f64
    }

    /// Mean error reduction from the auxiliary features, in percentage points.
    pub fn improvement(&self) -> f64 {
        self.mean_without() - self.mean_with()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("seed\terror_without_aux\terror_with_aux\n");
        for o in &self.outcomes {
            let _ = writeln!(s, "{}\t{:.4}\t{:.4}", o.seed, o.error_without, o.error_with);
        }
        let _ = writeln!(s, "mean\t{:.4}\t{:.4}", self.mean_without(), self.mean_with());
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "Synthetic adaptation experiment, speaker variation {}\n",
            if self.speaker_variation { "on" } else { "off" }
        );
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "  seed {}: frame error {:.2}% without aux, {:.2}% with aux",
                o.seed, o.error_without, o.error_with
            );
        }
        let _ = writeln!(
            s,
            "Mean frame error: {:.2}% without aux, {:.2}% with aux ({:+.2} points)",
            self.mean_without(),
            self.mean_with(),
            -self.improvement()
        );
        s
    }
}

pub fn run_seed(cfg: &ToyConfig, seed: u64) -> Result<SeedOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (speakers, utterances) = generate(cfg, &mut rng);
    let aux = speaker_embeddings(cfg, &speakers, &utterances, seed)?;
    Ok(SeedOutcome {
        seed,
        error_without: frame_error(cfg, &utterances, None, seed)?,
        error_with: frame_error(cfg, &utterances, Some(&aux), seed)?,
    })
}

pub fn toy_adaptation_experiment(cfg: &ToyConfig) -> Result<ToyReport> {
    cfg.validate()?;
    Ok(ToyReport {
        speaker_variation: cfg.speaker_variation,
        outcomes: cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?,
    })
}
