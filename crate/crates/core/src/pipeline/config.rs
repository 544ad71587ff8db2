use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::embednet::{NetworkConfig, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::smoothing::{LdaSmoothingConfig, SmoothingMethod, DEFAULT_BETA, DEFAULT_SWEEPS};
use crate::subspace::FeatureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimaryTarget {
    Severity,
    Age,
}

impl fmt::Display for PrimaryTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Severity => "severity",
            Self::Age => "age",
        })
    }
}

impl FromStr for PrimaryTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "severity" => Ok(Self::Severity),
            "age" => Ok(Self::Age),
            _ => Err(Error::Config(format!(
                "primary_target must be severity or age, got {s:?}"
            ))),
        }
    }
}

/// Everything a pipeline run depends on besides its input data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub frontend: FrontendConfig,
    pub feature_kind: FeatureKind,
    pub d_s: usize,
    pub d_t: usize,
    pub primary_target: PrimaryTarget,
    pub hidden_width: usize,
    pub projection_dim: usize,
    pub dropout: f64,
    pub speaker_task: bool,
    /// `None` uses 0.5 when the speaker task is on.
    pub mtl_weight: Option<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub smoothing: SmoothingMethod,
    pub gmm_components: usize,
    pub lda_topics: usize,
    pub lda_alpha: Option<f64>,
    pub lda_beta: f64,
    pub lda_sweeps: usize,
    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    /// Resolved against the config file's directory.
    pub manifest: Option<PathBuf>,
    /// Pretrained network to load instead of training.
    pub model: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            feature_kind: FeatureKind::Spectral,
            d_s: 2,
            d_t: 5,
            primary_target: PrimaryTarget::Severity,
            hidden_width: 2000,
            projection_dim: 200,
            dropout: 0.2,
            speaker_task: true,
            mtl_weight: None,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            validation_fraction: 0.1,
            smoothing: SmoothingMethod::Average,
            gmm_components: 100,
            lda_topics: 10,
            lda_alpha: None,
            lda_beta: DEFAULT_BETA,
            lda_sweeps: DEFAULT_SWEEPS,
            tsne_perplexity: 30.0,
            tsne_iterations: 1000,
            manifest: None,
            model: None,
            seed: 0,
        }
    }
}

const PIPELINE_KEYS: &[&str] = &[
    "feature_kind",
    "d_s",
    "d_t",
    "primary_target",
    "hidden_width",
    "projection_dim",
    "dropout",
    "speaker_task",
    "mtl_weight",
    "learning_rate",
    "momentum",
    "batch_size",
    "epochs",
    "validation_fraction",
    "smoothing",
    "gmm_components",
    "lda_topics",
    "lda_alpha",
    "lda_beta",
    "lda_sweeps",
    "tsne_perplexity",
    "tsne_iterations",
    "manifest",
    "model",
    "seed",
];

fn optional<T: FromStr>(kv: &KeyValues, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match kv.get(key) {
        None | Some("") | Some("-") => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("key {key}: cannot parse {raw:?}: {e}"))),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_key_values(&kv, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Relative `manifest` and `model` paths are joined onto `base`.
    pub fn from_key_values(kv: &KeyValues, base: &Path) -> Result<Self> {
        let known: Vec<&str> = FrontendConfig::KEYS.iter().chain(PIPELINE_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        let d = Self::default();
        let path = |key: &str| -> Result<Option<PathBuf>> {
            Ok(optional::<PathBuf>(kv, key)?.map(|p| if p.is_absolute() { p } else { base.join(p) }))
        };
        let cfg = Self {
            frontend: FrontendConfig::from_key_values(kv)?,
            feature_kind: kv.get_or("feature_kind", d.feature_kind)?,
            d_s: kv.get_or("d_s", d.d_s)?,
            d_t: kv.get_or("d_t", d.d_t)?,
            primary_target: kv.get_or("primary_target", d.primary_target)?,
            hidden_width: kv.get_or("hidden_width", d.hidden_width)?,
            projection_dim: kv.get_or("projection_dim", d.projection_dim)?,
            dropout: kv.get_or("dropout", d.dropout)?,
            speaker_task: kv.get_or("speaker_task", d.speaker_task)?,
            mtl_weight: optional(kv, "mtl_weight")?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            validation_fraction: kv.get_or("validation_fraction", d.validation_fraction)?,
            smoothing: kv.get_or("smoothing", d.smoothing)?,
            gmm_components: kv.get_or("gmm_components", d.gmm_components)?,
            lda_topics: kv.get_or("lda_topics", d.lda_topics)?,
            lda_alpha: optional(kv, "lda_alpha")?,
            lda_beta: kv.get_or("lda_beta", d.lda_beta)?,
            lda_sweeps: kv.get_or("lda_sweeps", d.lda_sweeps)?,
            tsne_perplexity: kv.get_or("tsne_perplexity", d.tsne_perplexity)?,
            tsne_iterations: kv.get_or("tsne_iterations", d.tsne_iterations)?,
            manifest: path("manifest")?,
            model: path("model")?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        if self.d_s == 0 || self.d_t == 0 {
            return Err(Error::Config("d_s and d_t must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if let Some(w) = self.mtl_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("mtl_weight {w} outside [0, 1]")));
            }
            if w > 0.0 && !self.speaker_task {
                return Err(Error::Config("mtl_weight > 0 requires speaker_task=true".into()));
            }
        }
        if self.smoothing == SmoothingMethod::Lda && (self.gmm_components == 0 || self.lda_topics < 2) {
            return Err(Error::Config(
                "LDA smoothing needs gmm_components >= 1 and lda_topics >= 2".into(),
            ));
        }
        for (name, p) in [("manifest", &self.manifest), ("model", &self.model)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feature_kind.dim(self.frontend.channels, self.d_s, self.d_t)
    }

    pub fn network_config(&self, primary_classes: usize, speakers: usize) -> NetworkConfig {
        let speakers = if self.speaker_task { speakers } else { 0 };
        let mut n = NetworkConfig::new(self.input_dim(), primary_classes, speakers);
        n.hidden_dims = vec![self.hidden_width, self.hidden_width, self.hidden_width, EMBEDDING_DIM];
        n.projection_dim = self.projection_dim;
        n.dropout = self.dropout;
        if let Some(w) = self.mtl_weight {
            n.mtl_weight = w;
        }
        n.learning_rate = self.learning_rate;
        n.momentum = self.momentum;
        n.batch_size = self.batch_size;
        n.epochs = self.epochs;
        n.seed = self.seed;
        n
    }

    pub fn lda_config(&self) -> LdaSmoothingConfig {
        LdaSmoothingConfig {
            gmm_components: self.gmm_components,
            topics: self.lda_topics,
            alpha: self.lda_alpha,
            beta: self.lda_beta,
            sweeps: self.lda_sweeps,
            seed: self.seed,
        }
    }

    /// Canonical `key=value` lines of every field that affects outputs.
    /// The manifest location is input, not configuration, and is left out.
    pub fn canonical(&self) -> String {
        let mut pairs = Vec::new();
        self.frontend.write_key_values(&mut pairs);
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:?}"));
        let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
        push("feature_kind", self.feature_kind.to_string());
        push("d_s", self.d_s.to_string());
        push("d_t", self.d_t.to_string());
        push("primary_target", self.primary_target.to_string());
        push("hidden_width", self.hidden_width.to_string());
        push("projection_dim", self.projection_dim.to_string());
        push("dropout", format!("{:?}", self.dropout));
        push("speaker_task", self.speaker_task.to_string());
        push("mtl_weight", opt(self.mtl_weight));
        push("learning_rate", format!("{:?}", self.learning_rate));
        push("momentum", format!("{:?}", self.momentum));
        push("batch_size", self.batch_size.to_string());
        push("epochs", self.epochs.to_string());
        push("validation_fraction", format!("{:?}", self.validation_fraction));
        push("smoothing", self.smoothing.to_string());
        push("gmm_components", self.gmm_components.to_string());
        push("lda_topics", self.lda_topics.to_string());
        push("lda_alpha", opt(self.lda_alpha));
        push("lda_beta", format!("{:?}", self.lda_beta));
        push("lda_sweeps", self.lda_sweeps.to_string());
        push("tsne_perplexity", format!("{:?}", self.tsne_perplexity));
        push("tsne_iterations", self.tsne_iterations.to_string());
        push(
            "model",
            self.model.as_ref().map_or("-".to_string(), |p| p.display().to_string()),
        );
        push("seed", self.seed.to_string());
        pairs.sort();
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_dims() {
        let c = PipelineConfig::from_key_values(&KeyValues::parse("").unwrap(), Path::new("")).unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.input_dim(), 80);
        let c = PipelineConfig::from_key_values(
            &KeyValues::parse("feature_kind=spectro-temporal\nd_s=4\nd_t=10").unwrap(),
            Path::new(""),
        )
        .unwrap();
        assert_eq!(c.input_dim(), 660);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "colour=red",
            "d_s=0",
            "smoothing=median",
            "mtl_weight=0.5\nspeaker_task=false",
        ] {
            let kv = KeyValues::parse(text).unwrap();
            assert!(
                matches!(
                    PipelineConfig::from_key_values(&kv, Path::new("")),
                    Err(Error::Config(_))
                ),
                "{text}"
            );
        }
        assert!(matches!(
            PipelineConfig::load(Path::new("/no/such/pipeline.cfg")),
            Err(Error::Config(m)) if m.contains("/no/such/pipeline.cfg")
        ));
    }

    #[test]
    fn hash_tracks_every_influencing_field() {
        let base = PipelineConfig::default();
        let h = base.hash();
        let variants: Vec<Box<dyn Fn(&mut PipelineConfig)>> = vec![
            Box::new(|c| c.frontend.channels = 24),
            Box::new(|c| c.frontend.vad_enabled = false),
            Box::new(|c| c.frontend.preemphasis = 0.95),
            Box::new(|c| c.feature_kind = FeatureKind::Temporal),
            Box::new(|c| c.d_s = 4),
            Box::new(|c| c.d_t = 10),
            Box::new(|c| c.primary_target = PrimaryTarget::Age),
            Box::new(|c| c.hidden_width = 64),
            Box::new(|c| c.dropout = 0.1),
            Box::new(|c| c.mtl_weight = Some(0.3)),
            Box::new(|c| c.learning_rate = 0.01),
            Box::new(|c| c.epochs = 3),
            Box::new(|c| c.smoothing = SmoothingMethod::Lda),
            Box::new(|c| c.lda_alpha = Some(1.0)),
            Box::new(|c| c.seed = 1),
        ];
        for (i, change) in variants.iter().enumerate() {
            let mut c = base.clone();
            change(&mut c);
            assert_ne!(c.hash(), h, "variant {i}");
        }
        let mut c = base.clone();
        c.manifest = Some("elsewhere.tsv".into());
        assert_eq!(c.hash(), h);
        assert_eq!(base.clone().hash(), h);
    }
}
