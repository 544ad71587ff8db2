//! SVD spectral/temporal subspace bases and the fixed-length network
//! inputs built from them.
//!
//! A `C x T` log mel spectrogram `S` is factored as `U * Sigma * V^T`. The
//! columns of `U` are spectral bases (time invariant, unit norm); the rows of
//! `Sigma * V^T` are temporal bases (singular values absorbed). Keeping the
//! top `d_s` spectral and `d_t` temporal bases gives inputs of `C * d_s`
//! values (spectral) and `50 * d_t` values (windowed temporal statistics).

mod svd;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;

pub use svd::{thin_svd, ThinSvd};

/// Frames per sliding window over a temporal basis.
pub const TEMPORAL_WINDOW: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBases {
    /// `C x d_s`, unit-norm orthogonal columns.
    pub spectral: Array2<f64>,
    /// `d_t x T`, rows scaled by their singular values.
    pub temporal: Array2<f64>,
    /// All `min(C, T)` singular values, descending.
    pub singular_values: Vec<f64>,
    pub utterance_id: String,
    pub speaker_id: String,
}

impl SubspaceBases {
    pub fn d_s(&self) -> usize {
        self.spectral.ncols()
    }

    pub fn d_t(&self) -> usize {
        self.temporal.nrows()
    }

    pub fn rank_limit(&self) -> usize {
        self.singular_values.len()
    }

    /// Rank-`d` approximation `U_d * (Sigma V^T)_d`. Needs `d` spectral and
    /// temporal bases.
    pub fn reconstruct(&self, d: usize) -> Result<Array2<f64>> {
        if d > self.d_s() || d > self.d_t() {
            return Err(Error::Argument(format!(
                "rank {d} exceeds available bases ({}, {})",
                self.d_s(),
                self.d_t()
            )));
        }
        Ok(self.spectral.slice(s![.., ..d]).dot(&self.temporal.slice(s![..d, ..])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Spectral,
    Temporal,
    SpectroTemporal,
}

impl FeatureKind {
    /// Input length for `channels` mel channels.
    pub fn dim(self, channels: usize, d_s: usize, d_t: usize) -> usize {
        let temporal = 2 * TEMPORAL_WINDOW * d_t;
        match self {
            FeatureKind::Spectral => channels * d_s,
            FeatureKind::Temporal => temporal,
            FeatureKind::SpectroTemporal => channels * d_s + temporal,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Spectral => "spectral",
            FeatureKind::Temporal => "temporal",
            FeatureKind::SpectroTemporal => "spectro-temporal",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "spectral" => Ok(FeatureKind::Spectral),
            "temporal" => Ok(FeatureKind::Temporal),
            "spectro-temporal" => Ok(FeatureKind::SpectroTemporal),
            other => Err(format!(
                "feature kind must be spectral, temporal or spectro-temporal, got {other:?}"
            )),
        }
    }
}

/// Fixed-length network input for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFeature {
    pub vector: Vec<f64>,
    pub kind: FeatureKind,
    pub utterance_id: String,
    pub speaker_id: String,
}

impl BasisFeature {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Full decomposition of a spectrogram: every `min(C, T)` basis is kept.
pub fn svd_decompose(spec: &MelSpectrogram) -> Result<SubspaceBases> {
    let (c, t) = spec.values.dim();
    if c == 0 || t == 0 {
        return Err(Error::Argument(format!("empty spectrogram ({c} x {t})")));
    }
    if spec.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "spectrogram of {:?} contains non-finite values",
            spec.utterance_id
        )));
    }
    let svd = thin_svd(&spec.values);
    Ok(SubspaceBases {
        spectral: svd.u,
        temporal: svd.scaled_vt,
        singular_values: svd.singular_values,
        utterance_id: spec.utterance_id.clone(),
        speaker_id: spec.speaker_id.clone(),
    })
}

/// Keeps the leading `d_s` spectral and `d_t` temporal bases.
pub fn truncate(bases: &SubspaceBases, d_s: usize, d_t: usize) -> Result<SubspaceBases> {
    let limit = bases.rank_limit();
    for (name, d, have) in [("d_s", d_s, bases.d_s()), ("d_t", d_t, bases.d_t())] {
        if d == 0 || d > limit || d > have {
            return Err(Error::Argument(format!("{name} = {d} outside 1..={}", limit.min(have))));
        }
    }
    Ok(SubspaceBases {
        spectral: bases.spectral.slice(s![.., ..d_s]).to_owned(),
        temporal: bases.temporal.slice(s![..d_t, ..]).to_owned(),
        singular_values: bases.singular_values.clone(),
        utterance_id: bases.utterance_id.clone(),
        speaker_id: bases.speaker_id.clone(),
    })
}

/// Spectral bases flattened basis by basis (column-major).
pub fn spectral_feature(bases: &SubspaceBases) -> BasisFeature {
    let vector = bases
        .spectral
        .columns()
        .into_iter()
        .flat_map(|col| col.to_vec())
        .collect();
    BasisFeature {
        vector,
        kind: FeatureKind::Spectral,
        utterance_id: bases.utterance_id.clone(),
        speaker_id: bases.speaker_id.clone(),
    }
}

/// Elementwise mean and population standard deviation over every length-
/// `window` slice (hop 1) of `row`. Rows shorter than `window` are left
/// padded with their first value, giving exactly one window.
pub fn window_stats(row: &[f64], window: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(window > 0 && !row.is_empty());
    let padded: Vec<f64>;
    let row = if row.len() < window {
        padded = std::iter::repeat_n(row[0], window - row.len())
            .chain(row.iter().copied())
            .collect();
        &padded[..]
    } else {
        row
    };
    let count = row.len() - window + 1;
    let mut mean = vec![0.0; window];
    for (j, m) in mean.iter_mut().enumerate() {
        *m = row[j..j + count].iter().sum::<f64>() / count as f64;
    }
    let std = mean
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let var = row[j..j + count].iter().map(|x| (x - m).powi(2)).sum::<f64>() / count as f64;
            var.sqrt()
        })
        .collect();
    (mean, std)
}

/// For each temporal basis: its `window` means then its `window` standard
/// deviations, bases in singular-value order. Length `2 * window * d_t`.
pub fn temporal_feature(bases: &SubspaceBases, window: usize) -> BasisFeature {
    let mut vector = Vec::with_capacity(2 * window * bases.d_t());
    for row in bases.temporal.rows() {
        let (mean, std) = window_stats(&row.to_vec(), window);
        vector.extend(mean);
        vector.extend(std);
    }
    BasisFeature {
        vector,
        kind: FeatureKind::Temporal,
        utterance_id: bases.utterance_id.clone(),
        speaker_id: bases.speaker_id.clone(),
    }
}

/// Spectral values followed by temporal values.
pub fn combined_feature(spectral: &BasisFeature, temporal: &BasisFeature) -> Result<BasisFeature> {
    if spectral.utterance_id != temporal.utterance_id {
        return Err(Error::Argument(format!(
            "cannot combine features of {:?} and {:?}",
            spectral.utterance_id, temporal.utterance_id
        )));
    }
    let mut vector = spectral.vector.clone();
    vector.extend_from_slice(&temporal.vector);
    Ok(BasisFeature {
        vector,
        kind: FeatureKind::SpectroTemporal,
        utterance_id: spectral.utterance_id.clone(),
        speaker_id: spectral.speaker_id.clone(),
    })
}

/// Spectrogram to network input in one step.
pub fn basis_feature(spec: &MelSpectrogram, kind: FeatureKind, d_s: usize, d_t: usize) -> Result<BasisFeature> {
    let full = svd_decompose(spec)?;
    let limit = full.rank_limit();
    if d_s == 0 || d_t == 0 {
        return Err(Error::Argument("d_s and d_t must be at least 1".into()));
    }
    let need_s = if kind == FeatureKind::Temporal { 1 } else { d_s };
    let need_t = if kind == FeatureKind::Spectral { 1 } else { d_t };
    if need_s > limit || need_t > limit {
        return Err(Error::Data(format!(
            "utterance {:?} has only {limit} bases ({} frames), need {}",
            spec.utterance_id,
            spec.frames(),
            need_s.max(need_t)
        )));
    }
    let bases = truncate(&full, need_s, need_t)?;
    Ok(match kind {
        FeatureKind::Spectral => spectral_feature(&bases),
        FeatureKind::Temporal => temporal_feature(&bases, TEMPORAL_WINDOW),
        FeatureKind::SpectroTemporal => {
            combined_feature(&spectral_feature(&bases), &temporal_feature(&bases, TEMPORAL_WINDOW))?
        }
    })
}
