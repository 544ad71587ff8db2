//! Audio ingestion and the log mel filter-bank front-end.
//!
//! Audio is read from linear PCM WAV files, stripped of leading and trailing
//! silence with an energy detector, then turned into a `C x T` matrix of
//! natural-log mel energies.

mod manifest;
mod mel;
mod vad;
mod wav;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub use manifest::{AgeLabel, CorpusManifest, LabelRecord, ManifestEntry};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelSpectrogram};
pub use vad::{frame_rms_db, trim_silence, Trimmed};
pub use wav::{load_audio, write_wav_i16};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub utterance_id: String,
    pub speaker_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Front-end settings. Every field has a default and can be overridden
/// from a `key=value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub channels: usize,
    pub preemphasis: f64,
    pub low_freq: f64,
    /// Upper edge of the filter bank in Hz; `0` means Nyquist.
    pub high_freq: f64,
    /// Mel energies are floored at this value before the log.
    pub energy_floor: f64,
    pub vad_enabled: bool,
    pub vad_margin_db: f64,
    pub vad_percentile: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            channels: 40,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: 0.0,
            energy_floor: 1e-10,
            vad_enabled: true,
            vad_margin_db: 9.0,
            vad_percentile: 10.0,
        }
    }
}

impl FrontendConfig {
    pub const KEYS: &'static [&'static str] = &[
        "frame_length_ms",
        "frame_shift_ms",
        "channels",
        "preemphasis",
        "low_freq",
        "high_freq",
        "energy_floor",
        "vad_enabled",
        "vad_margin_db",
        "vad_percentile",
    ];

    pub fn from_file(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        kv.reject_unknown(Self::KEYS)?;
        Self::from_key_values(&kv)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            frame_length_ms: kv.get_or("frame_length_ms", d.frame_length_ms)?,
            frame_shift_ms: kv.get_or("frame_shift_ms", d.frame_shift_ms)?,
            channels: kv.get_or("channels", d.channels)?,
            preemphasis: kv.get_or("preemphasis", d.preemphasis)?,
            low_freq: kv.get_or("low_freq", d.low_freq)?,
            high_freq: kv.get_or("high_freq", d.high_freq)?,
            energy_floor: kv.get_or("energy_floor", d.energy_floor)?,
            vad_enabled: kv.get_or("vad_enabled", d.vad_enabled)?,
            vad_margin_db: kv.get_or("vad_margin_db", d.vad_margin_db)?,
            vad_percentile: kv.get_or("vad_percentile", d.vad_percentile)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.frame_length_ms > 0.0) || !(self.frame_shift_ms > 0.0) {
            return bad("frame_length_ms and frame_shift_ms must be positive");
        }
        if self.channels == 0 {
            return bad("channels must be at least 1");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        if self.low_freq < 0.0 || self.high_freq < 0.0 {
            return bad("filter-bank edges must be non-negative");
        }
        if !(self.energy_floor > 0.0) {
            return bad("energy_floor must be positive");
        }
        if !(0.0..=100.0).contains(&self.vad_percentile) {
            return bad("vad_percentile must lie in [0, 100]");
        }
        Ok(())
    }

    pub(crate) fn frame_length(&self, sample_rate: u32) -> usize {
        ((self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub(crate) fn frame_shift(&self, sample_rate: u32) -> usize {
        ((self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub(crate) fn write_key_values(&self, out: &mut Vec<(String, String)>) {
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("frame_length_ms", format!("{:?}", self.frame_length_ms));
        push("frame_shift_ms", format!("{:?}", self.frame_shift_ms));
        push("channels", self.channels.to_string());
        push("preemphasis", format!("{:?}", self.preemphasis));
        push("low_freq", format!("{:?}", self.low_freq));
        push("high_freq", format!("{:?}", self.high_freq));
        push("energy_floor", format!("{:?}", self.energy_floor));
        push("vad_enabled", self.vad_enabled.to_string());
        push("vad_margin_db", format!("{:?}", self.vad_margin_db));
        push("vad_percentile", format!("{:?}", self.vad_percentile));
    }
}

/// Number of whole frames in `n_samples`; zero when shorter than one frame.
pub fn frame_count(n_samples: usize, frame_length: usize, frame_shift: usize) -> usize {
    if n_samples < frame_length {
        0
    } else {
        (n_samples - frame_length) / frame_shift + 1
    }
}
