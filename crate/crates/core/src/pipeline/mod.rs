//! End-to-end orchestration: manifest to auxiliary-feature archives, plus the
//! feature concatenation used for adaptation and a synthetic adaptation
//! experiment.

mod archive;
mod config;
mod toy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embednet::{train, EmbeddingNetwork, TrainingLog, TrainingRecord, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::frontend::{load_audio, mel_spectrogram, trim_silence, CorpusManifest, FrontendConfig, MelSpectrogram};
use crate::smoothing::{average_smooth, lda_smooth_speakers, SmoothingMethod, SpeakerEmbedding, SpeakerGroups};
use crate::subspace::{basis_feature, BasisFeature};

pub use archive::{format_g9, FeatureArchive};
pub use config::{PipelineConfig, PrimaryTarget};
pub use toy::{toy_adaptation_experiment, SeedOutcome, ToyConfig, ToyReport};

pub const FEATURES_FILE: &str = "features.ark";
pub const EMBEDDINGS_FILE: &str = "embeddings.ark";
pub const SPEAKERS_FILE: &str = "speakers.ark";
pub const MODEL_FILE: &str = "model.json";
pub const TRAINING_LOG_FILE: &str = "training.log";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_TSV_FILE: &str = "report.tsv";

/// Appends `embedding` to every row (frame) of `acoustic`.
pub fn concat_aux(acoustic: ArrayView2<f64>, embedding: &[f64]) -> Array2<f64> {
    let (t, f) = acoustic.dim();
    let mut out = Array2::zeros((t, f + embedding.len()));
    for (mut row, frame) in out.rows_mut().into_iter().zip(acoustic.rows()) {
        for (o, v) in row.iter_mut().zip(frame.iter().chain(embedding)) {
            *o = *v;
        }
    }
    out
}

/// Loads every utterance, trims silence and computes its mel spectrogram.
/// All sample rates must agree.
pub fn compute_spectrograms(manifest: &CorpusManifest, cfg: &FrontendConfig) -> Result<Vec<MelSpectrogram>> {
    manifest.check_audio_paths()?;
    let mut clips = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let mut clip = load_audio(&e.audio_path)?;
        clip.utterance_id = e.utterance_id.clone();
        clip.speaker_id = e.speaker_id.clone();
        clips.push((e.line, clip));
    }
    if let Some((_, first)) = clips.first() {
        let rate = first.sample_rate;
        let mismatched: Vec<String> = clips
            .iter()
            .filter(|(_, c)| c.sample_rate != rate)
            .map(|(line, c)| format!("line {line}: sample rate {} Hz differs from {rate} Hz", c.sample_rate))
            .collect();
        if !mismatched.is_empty() {
            return Err(Error::Manifest(mismatched));
        }
    }
    clips
        .into_iter()
        .map(|(_, clip)| {
            let clip = if cfg.vad_enabled {
                trim_silence(&clip, cfg).clip
            } else {
                clip
            };
            mel_spectrogram(&clip, cfg)
        })
        .collect()
}

pub fn basis_features(spectrograms: &[MelSpectrogram], cfg: &PipelineConfig) -> Result<Vec<BasisFeature>> {
    spectrograms
        .iter()
        .map(|s| basis_feature(s, cfg.feature_kind, cfg.d_s, cfg.d_t))
        .collect()
}

/// Class names in index order and the class of every manifest entry.
pub fn primary_labels(manifest: &CorpusManifest, target: PrimaryTarget) -> Result<(Vec<String>, Vec<usize>)> {
    let names: Vec<Option<String>> = manifest
        .entries
        .iter()
        .map(|e| match target {
            PrimaryTarget::Severity => e.labels.severity.clone(),
            PrimaryTarget::Age => e.labels.age.map(|a| a.to_string()),
        })
        .collect();
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .zip(&names)
        .filter(|(_, n)| n.is_none())
        .map(|(e, _)| format!("line {}: no {target} label for {}", e.line, e.utterance_id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Manifest(missing));
    }
    let classes: Vec<String> = match target {
        PrimaryTarget::Severity => manifest.severity_classes(),
        PrimaryTarget::Age => {
            let ages: BTreeSet<_> = manifest.entries.iter().filter_map(|e| e.labels.age).collect();
            ages.into_iter().map(|a| a.to_string()).collect()
        }
    };
    let labels = names
        .into_iter()
        .map(|n| {
            classes
                .iter()
                .position(|c| Some(c) == n.as_ref())
                .expect("class listed")
        })
        .collect();
    Ok((classes, labels))
}

/// Seeded hold-out split that keeps at least one training example of every
/// primary class and speaker.
fn split_validation(records: &[TrainingRecord], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = records.len();
    let wanted = (n as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed)));
    let mut class_left: BTreeMap<usize, usize> = BTreeMap::new();
    let mut speaker_left: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    for r in records {
        *class_left.entry(r.primary_label).or_default() += 1;
        *speaker_left.entry(r.speaker_label).or_default() += 1;
    }
    let mut held = BTreeSet::new();
    for &i in &order {
        if held.len() == wanted {
            break;
        }
        let r = &records[i];
        if class_left[&r.primary_label] > 1 && speaker_left[&r.speaker_label] > 1 {
            *class_left.get_mut(&r.primary_label).unwrap() -= 1;
            *speaker_left.get_mut(&r.speaker_label).unwrap() -= 1;
            held.insert(i);
        }
    }
    (0..n).partition(|i| !held.contains(i))
}

fn accuracy(net: &EmbeddingNetwork, records: &[&TrainingRecord]) -> Result<Option<f64>> {
    if records.is_empty() {
        return Ok(None);
    }
    let mut hits = 0;
    for r in records {
        if net.classify(&r.feature)?.0 == r.primary_label {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / records.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub utterances: usize,
    pub speakers: usize,
    pub feature_kind: String,
    pub feature_dim: usize,
    pub primary_target: PrimaryTarget,
    pub class_counts: Vec<(String, usize)>,
    pub train_utterances: usize,
    pub validation_utterances: usize,
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub smoothing: SmoothingMethod,
    pub speaker_dim: usize,
    pub config_hash: String,
}

fn fmt_accuracy(a: Option<f64>) -> String {
    a.map_or("-".into(), |v| format!("{v:.6}"))
}

impl RunReport {
    fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("utterances".to_string(), self.utterances.to_string()),
            ("speakers".into(), self.speakers.to_string()),
            ("feature_kind".into(), self.feature_kind.clone()),
            ("feature_dim".into(), self.feature_dim.to_string()),
            ("primary_target".into(), self.primary_target.to_string()),
        ];
        for (name, count) in &self.class_counts {
            rows.push((format!("class.{name}"), count.to_string()));
        }
        rows.extend([
            ("train_utterances".into(), self.train_utterances.to_string()),
            ("validation_utterances".into(), self.validation_utterances.to_string()),
            ("train_accuracy".into(), fmt_accuracy(self.train_accuracy)),
            ("validation_accuracy".into(), fmt_accuracy(self.validation_accuracy)),
            ("smoothing".into(), self.smoothing.to_string()),
            ("speaker_dim".into(), self.speaker_dim.to_string()),
            ("config_hash".into(), self.config_hash.clone()),
        ]);
        rows
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Corpus: {} utterances from {} speakers",
            self.utterances, self.speakers
        );
        let _ = writeln!(
            s,
            "Features: {} ({} values per utterance)",
            self.feature_kind, self.feature_dim
        );
        let _ = writeln!(s, "Label distribution ({}):", self.primary_target);
        for (name, count) in &self.class_counts {
            let _ = writeln!(s, "  {name}: {count}");
        }
        let _ = writeln!(
            s,
            "Classifier: train accuracy {} on {} utterances, validation accuracy {} on {}",
            fmt_accuracy(self.train_accuracy),
            self.train_utterances,
            fmt_accuracy(self.validation_accuracy),
            self.validation_utterances
        );
        let _ = writeln!(
            s,
            "Smoothing: {} ({} values per speaker)",
            self.smoothing, self.speaker_dim
        );
        let _ = writeln!(s, "Config hash: {}", self.config_hash);
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExtractOutput {
    pub features: FeatureArchive,
    pub embeddings: FeatureArchive,
    pub speakers: FeatureArchive,
    pub speaker_embeddings: Vec<SpeakerEmbedding>,
    pub network: EmbeddingNetwork,
    pub training_log: TrainingLog,
    pub report: RunReport,
}

pub fn features_archive(features: &[BasisFeature], cfg: &PipelineConfig) -> Result<FeatureArchive> {
    let mut a = FeatureArchive::new(cfg.feature_kind.to_string(), cfg.input_dim(), cfg.hash());
    for f in features {
        a.push_vector(&f.utterance_id, &f.vector)?;
    }
    Ok(a)
}

pub fn speaker_archive(embeddings: &[SpeakerEmbedding], hash: &str) -> Result<FeatureArchive> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let method = embeddings.first().map_or(SmoothingMethod::Average, |e| e.method);
    let mut a = FeatureArchive::new(format!("speaker-{method}"), dim, hash);
    for e in embeddings {
        a.push_vector(&e.speaker_id, &e.vector)?;
    }
    Ok(a)
}

/// Groups an utterance-embedding archive by speaker using the manifest.
pub fn group_by_speaker(manifest: &CorpusManifest, embeddings: &FeatureArchive) -> Result<SpeakerGroups> {
    let mut groups = SpeakerGroups::new();
    let mut unknown = Vec::new();
    for key in embeddings.keys() {
        match manifest.speaker_of(key) {
            Some(s) => groups
                .entry(s.to_string())
                .or_default()
                .push(embeddings.vector(key).unwrap_or_default()),
            None => unknown.push(format!("utterance {key} is not in the manifest")),
        }
    }
    if unknown.is_empty() {
        Ok(groups)
    } else {
        Err(Error::Manifest(unknown))
    }
}

pub fn smooth_speakers(groups: &SpeakerGroups, cfg: &PipelineConfig) -> Result<Vec<SpeakerEmbedding>> {
    match cfg.smoothing {
        SmoothingMethod::Average => average_smooth(groups),
        SmoothingMethod::Lda => Ok(lda_smooth_speakers(groups, &cfg.lda_config())?.embeddings),
    }
}

/// Trains (or loads, when `cfg.model` is set) the classifier on the
/// manifest's basis features.
pub fn fit_network(
    manifest: &CorpusManifest,
    features: &[BasisFeature],
    cfg: &PipelineConfig,
) -> Result<(EmbeddingNetwork, TrainingLog, RunReport)> {
    let (classes, labels) = primary_labels(manifest, cfg.primary_target)?;
    let speakers = manifest.speakers();
    let records: Vec<TrainingRecord> = features
        .iter()
        .zip(&manifest.entries)
        .zip(&labels)
        .map(|((f, e), &y)| TrainingRecord {
            feature: f.clone(),
            primary_label: y,
            speaker_label: cfg.speaker_task.then_some(e.labels.speaker_index),
        })
        .collect();
    let (train_idx, val_idx) = split_validation(&records, cfg.validation_fraction, cfg.seed);
    let train_set: Vec<TrainingRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();

    let (network, log) = match &cfg.model {
        Some(path) => {
            let net = EmbeddingNetwork::load(path)?;
            if net.config.input_dim != cfg.input_dim() {
                return Err(Error::Config(format!(
                    "model {} expects {} inputs, features have {}",
                    path.display(),
                    net.config.input_dim,
                    cfg.input_dim()
                )));
            }
            (net, TrainingLog::default())
        }
        None => train(&train_set, &cfg.network_config(classes.len(), speakers.len()))?,
    };

    let mut class_counts: Vec<(String, usize)> = classes.iter().map(|c| (c.clone(), 0)).collect();
    for &y in &labels {
        class_counts[y].1 += 1;
    }
    let report = RunReport {
        utterances: records.len(),
        speakers: speakers.len(),
        feature_kind: cfg.feature_kind.to_string(),
        feature_dim: cfg.input_dim(),
        primary_target: cfg.primary_target,
        class_counts,
        train_utterances: train_idx.len(),
        validation_utterances: val_idx.len(),
        train_accuracy: accuracy(&network, &train_set.iter().collect::<Vec<_>>())?,
        validation_accuracy: accuracy(&network, &val_idx.iter().map(|&i| &records[i]).collect::<Vec<_>>())?,
        smoothing: cfg.smoothing,
        speaker_dim: 0,
        config_hash: cfg.hash(),
    };
    Ok((network, log, report))
}

pub fn embeddings_archive(network: &EmbeddingNetwork, features: &[BasisFeature], hash: &str) -> Result<FeatureArchive> {
    let mut a = FeatureArchive::new("embedding", EMBEDDING_DIM, hash);
    for f in features {
        a.push_vector(&f.utterance_id, &network.extract_embedding(f)?)?;
    }
    Ok(a)
}

/// Full flow from manifest to speaker-level archives. With `out` set, the
/// archives, model, training log and run report are written there.
pub fn run_extract(manifest: &CorpusManifest, cfg: &PipelineConfig, out: Option<&Path>) -> Result<ExtractOutput> {
    cfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Manifest(vec!["manifest has no entries".into()]));
    }
    let spectrograms = compute_spectrograms(manifest, &cfg.frontend)?;
    let features = basis_features(&spectrograms, cfg)?;
    let (network, training_log, mut report) = fit_network(manifest, &features, cfg)?;
    let hash = cfg.hash();
    let embeddings = embeddings_archive(&network, &features, &hash)?;
    let groups = group_by_speaker(manifest, &embeddings)?;
    let speaker_embeddings = smooth_speakers(&groups, cfg)?;
    let speakers = speaker_archive(&speaker_embeddings, &hash)?;
    report.speaker_dim = speakers.dim;
    let output = ExtractOutput {
        features: features_archive(&features, cfg)?,
        embeddings,
        speakers,
        speaker_embeddings,
        network,
        training_log,
        report,
    };
    if let Some(dir) = out {
        output.write(dir)?;
    }
    Ok(output)
}

impl ExtractOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.features.write(&dir.join(FEATURES_FILE))?;
        self.embeddings.write(&dir.join(EMBEDDINGS_FILE))?;
        self.speakers.write(&dir.join(SPEAKERS_FILE))?;
        self.network.save(&dir.join(MODEL_FILE))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put(TRAINING_LOG_FILE, self.training_log.to_text())?;
        put(REPORT_TEXT_FILE, self.report.to_text())?;
        put(REPORT_TSV_FILE, self.report.to_tsv())
    }
}
