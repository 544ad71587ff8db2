//! Latent Dirichlet allocation over GMM symbol documents, trained by
//! collapsed Gibbs sampling.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SWEEPS: usize = 500;
pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_INFERENCE_SWEEPS: usize = 200;
const LDA_FORMAT: &str = "spectro-embed/lda";
const LDA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub inference_sweeps: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// Defaults: `alpha = 50 / K`, `beta = 0.01`, 500 training sweeps.
    pub fn new(topics: usize, vocab_size: usize) -> Self {
        Self {
            topics,
            vocab_size,
            alpha: 50.0 / topics.max(1) as f64,
            beta: DEFAULT_BETA,
            sweeps: DEFAULT_SWEEPS,
            inference_sweeps: DEFAULT_INFERENCE_SWEEPS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(Error::Config(format!(
                "LDA needs at least 2 topics, got {}",
                self.topics
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("LDA vocabulary is empty".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config("LDA priors must be positive and finite".into()));
        }
        if self.sweeps == 0 || self.inference_sweeps == 0 {
            return Err(Error::Config("LDA needs at least one Gibbs sweep".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub config: LdaConfig,
    /// `K x V` topic-word distributions, `(n_kw + beta) / (n_k + V beta)`.
    pub topic_word: Array2<f64>,
    /// `D x K` posteriors of the training documents.
    pub doc_topic: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct LdaFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: LdaModel,
}

fn check_doc(doc: &[usize], vocab: usize) -> Result<()> {
    match doc.iter().find(|&&w| w >= vocab) {
        Some(w) => Err(Error::Data(format!("symbol {w} outside a vocabulary of {vocab}"))),
        None => Ok(()),
    }
}

/// Draws an index with probability proportional to `weights`.
fn sample(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

pub fn fit_lda(docs: &[Vec<usize>], config: &LdaConfig) -> Result<LdaModel> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::Data("LDA needs at least one document".into()));
    }
    for (i, d) in docs.iter().enumerate() {
        if d.is_empty() {
            return Err(Error::Data(format!("document {i} is empty")));
        }
        check_doc(d, config.vocab_size)?;
    }
    let (k_n, v_n) = (config.topics, config.vocab_size);
    let (alpha, beta) = (config.alpha, config.beta);
    let v_beta = v_n as f64 * beta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut n_dk = Array2::<f64>::zeros((docs.len(), k_n));
    let mut n_kw = Array2::<f64>::zeros((k_n, v_n));
    let mut n_k = vec![0.0; k_n];
    let mut z: Vec<Vec<usize>> = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            doc.iter()
                .map(|&w| {
                    let k = rng.random_range(0..k_n);
                    n_dk[[d, k]] += 1.0;
                    n_kw[[k, w]] += 1.0;
                    n_k[k] += 1.0;
                    k
                })
                .collect()
        })
        .collect();

    let mut p = vec![0.0; k_n];
    for _ in 0..config.sweeps {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                n_dk[[d, old]] -= 1.0;
                n_kw[[old, w]] -= 1.0;
                n_k[old] -= 1.0;
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk = (n_dk[[d, k]] + alpha) * (n_kw[[k, w]] + beta) / (n_k[k] + v_beta);
                }
                let new = sample(&p, &mut rng);
                z[d][i] = new;
                n_dk[[d, new]] += 1.0;
                n_kw[[new, w]] += 1.0;
                n_k[new] += 1.0;
            }
        }
    }

    let topic_word = Array2::from_shape_fn((k_n, v_n), |(k, w)| (n_kw[[k, w]] + beta) / (n_k[k] + v_beta));
    let doc_topic = Array2::from_shape_fn((docs.len(), k_n), |(d, k)| {
        (n_dk[[d, k]] + alpha) / (docs[d].len() as f64 + k_n as f64 * alpha)
    });
    Ok(LdaModel {
        config: config.clone(),
        topic_word,
        doc_topic,
    })
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.config.topics
    }

    /// Topic posterior of a new document with the topic-word table held
    /// fixed. Each sweep's `(n_dk + alpha) / (N + K alpha)` is averaged over
    /// the second half of the chain.
    pub fn infer(&self, doc: &[usize], seed: u64) -> Result<Vec<f64>> {
        if doc.is_empty() {
            return Err(Error::Data("cannot infer topics of an empty document".into()));
        }
        check_doc(doc, self.config.vocab_size)?;
        let k_n = self.topics();
        let alpha = self.config.alpha;
        let norm = doc.len() as f64 + k_n as f64 * alpha;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n_k = vec![0.0; k_n];
        let mut z: Vec<usize> = doc
            .iter()
            .map(|_| {
                let k = rng.random_range(0..k_n);
                n_k[k] += 1.0;
                k
            })
            .collect();
        let sweeps = self.config.inference_sweeps;
        let burn_in = sweeps / 2;
        let mut acc = vec![0.0; k_n];
        let mut p = vec![0.0; k_n];
        for s in 0..sweeps {
            for (i, &w) in doc.iter().enumerate() {
                n_k[z[i]] -= 1.0;
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk = (n_k[k] + alpha) * self.topic_word[[k, w]];
                }
                z[i] = sample(&p, &mut rng);
                n_k[z[i]] += 1.0;
            }
            if s >= burn_in {
                for (a, n) in acc.iter_mut().zip(&n_k) {
                    *a += (n + alpha) / norm;
                }
            }
        }
        let kept = (sweeps - burn_in) as f64;
        let mut theta: Vec<f64> = acc.iter().map(|a| a / kept).collect();
        let total: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|t| *t /= total);
        Ok(theta)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&LdaFile {
            format: LDA_FORMAT.into(),
            version: LDA_VERSION,
            model: self.clone(),
        })
        .map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let file: LdaFile = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if file.format != LDA_FORMAT || file.version != LDA_VERSION {
            return Err(err(format!("expected {LDA_FORMAT} v{LDA_VERSION}")));
        }
        let m = file.model;
        m.config.validate().map_err(|e| err(e.to_string()))?;
        if m.topic_word.dim() != (m.config.topics, m.config.vocab_size) || m.doc_topic.ncols() != m.config.topics {
            return Err(err("inconsistent LDA shapes".into()));
        }
        Ok(m)
    }
}

/// Smoothed embedding of one speaker document.
pub fn lda_smooth(model: &LdaModel, doc: &[usize], seed: u64) -> Result<Vec<f64>> {
    model.infer(doc, seed)
}
