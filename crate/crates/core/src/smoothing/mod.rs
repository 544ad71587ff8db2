//! Speaker-level smoothing of utterance embeddings: plain averaging, or a
//! GMM symbol vocabulary followed by LDA topic posteriors.

mod gmm;
mod lda;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gmm::{fit_gmm, GmmFit, GmmModel, EM_TOLERANCE, MAX_EM_ITERATIONS, VARIANCE_FLOOR};
pub use lda::{fit_lda, lda_smooth, LdaConfig, LdaModel, DEFAULT_BETA, DEFAULT_INFERENCE_SWEEPS, DEFAULT_SWEEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothingMethod {
    Average,
    Lda,
}

impl fmt::Display for SmoothingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Average => "avg",
            Self::Lda => "lda",
        })
    }
}

impl FromStr for SmoothingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::Average),
            "lda" => Ok(Self::Lda),
            _ => Err(Error::Config(format!("unknown smoothing method {s:?} (avg or lda)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub speaker_id: String,
    pub vector: Vec<f64>,
    pub method: SmoothingMethod,
    pub utterances: usize,
}

/// Utterance embeddings grouped by speaker, in speaker order.
pub type SpeakerGroups = BTreeMap<String, Vec<Vec<f64>>>;

fn check_groups(groups: &SpeakerGroups) -> Result<usize> {
    let mut dim = None;
    for (speaker, vectors) in groups {
        if vectors.is_empty() {
            return Err(Error::Data(format!("speaker {speaker} has no utterance embeddings")));
        }
        for v in vectors {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Data(format!(
                        "speaker {speaker}: embedding of length {} where {d} was expected",
                        v.len()
                    )))
                }
                _ => {}
            }
        }
    }
    dim.ok_or_else(|| Error::Data("no speakers to smooth".into()))
}

pub fn average_smooth(groups: &SpeakerGroups) -> Result<Vec<SpeakerEmbedding>> {
    let dim = check_groups(groups)?;
    Ok(groups
        .iter()
        .map(|(speaker, vectors)| {
            // Summing each coordinate in sorted order makes the mean independent
            // of utterance order down to the last bit.
            let mean = (0..dim)
                .map(|j| {
                    let mut column: Vec<f64> = vectors.iter().map(|v| v[j]).collect();
                    column.sort_by(f64::total_cmp);
                    column.iter().sum::<f64>() / vectors.len() as f64
                })
                .collect();
            SpeakerEmbedding {
                speaker_id: speaker.clone(),
                vector: mean,
                method: SmoothingMethod::Average,
                utterances: vectors.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaSmoothingConfig {
    pub gmm_components: usize,
    pub topics: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl LdaSmoothingConfig {
    pub fn new(gmm_components: usize, topics: usize) -> Self {
        Self {
            gmm_components,
            topics,
            alpha: None,
            beta: DEFAULT_BETA,
            sweeps: DEFAULT_SWEEPS,
            seed: 0,
        }
    }

    fn lda_config(&self) -> LdaConfig {
        let mut c = LdaConfig::new(self.topics, self.gmm_components);
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        c.beta = self.beta;
        c.sweeps = self.sweeps;
        c.seed = self.seed;
        c
    }
}

#[derive(Debug, Clone)]
pub struct LdaSmoothing {
    pub embeddings: Vec<SpeakerEmbedding>,
    pub gmm: GmmFit,
    pub lda: LdaModel,
    /// Symbol document of every speaker, in speaker order.
    pub documents: Vec<Vec<usize>>,
}

/// Quantizes every utterance embedding against a GMM fitted to all of them,
/// treats each speaker's symbols as one document and returns the LDA topic
/// posteriors.
pub fn lda_smooth_speakers(groups: &SpeakerGroups, config: &LdaSmoothingConfig) -> Result<LdaSmoothing> {
    let dim = check_groups(groups)?;
    let lda_config = config.lda_config();
    lda_config.validate()?;
    let rows: Vec<f64> = groups.values().flatten().flatten().copied().collect();
    let data = Array2::from_shape_vec((rows.len() / dim, dim), rows).expect("rows have equal length");
    let gmm = fit_gmm(&data, config.gmm_components, config.seed)?;
    let documents = groups
        .values()
        .map(|vectors| {
            vectors
                .iter()
                .map(|v| gmm.model.quantize(v))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let lda = fit_lda(&documents, &lda_config)?;
    let embeddings = groups
        .iter()
        .zip(&documents)
        .map(|((speaker, vectors), doc)| {
            Ok(SpeakerEmbedding {
                speaker_id: speaker.clone(),
                vector: lda_smooth(&lda, doc, config.seed)?,
                method: SmoothingMethod::Lda,
                utterances: vectors.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LdaSmoothing {
        embeddings,
        gmm,
        lda,
        documents,
    })
}
