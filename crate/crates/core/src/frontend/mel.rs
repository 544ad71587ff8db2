//! Log mel filter-bank spectrogram.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{frame_count, AudioClip, FrontendConfig};
use crate::error::{Error, Result};

/// `C x T` natural-log mel energies of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub utterance_id: String,
    pub speaker_id: String,
}

impl MelSpectrogram {
    pub fn from_values(values: Array2<f64>) -> Self {
        Self {
            values,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            utterance_id: String::new(),
            speaker_id: String::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` power-spectrum bins, shape
/// `channels x bins`. Centres are equally spaced on the mel scale between
/// `low` and `high`.
pub fn mel_filterbank(channels: usize, n_fft: usize, sample_rate: u32, low: f64, high: f64) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(low), hz_to_mel(high));
    let edges: Vec<f64> = (0..channels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (channels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;

    Array2::from_shape_fn((channels, bins), |(c, k)| {
        let f = k as f64 * bin_hz;
        let (left, centre, right) = (edges[c], edges[c + 1], edges[c + 2]);
        let rise = (f - left) / (centre - left);
        let fall = (right - f) / (right - centre);
        rise.min(fall).max(0.0)
    })
}

/// Frames the clip (pre-emphasis, Hamming window, power FFT), applies the
/// mel filter bank and takes `ln(max(energy, floor))`.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    let len = cfg.frame_length(clip.sample_rate);
    let hop = cfg.frame_shift(clip.sample_rate);
    let n_frames = frame_count(clip.samples.len(), len, hop);
    if n_frames == 0 {
        return Err(Error::TooShort {
            samples: clip.samples.len(),
            needed: len,
        });
    }
    let nyquist = clip.sample_rate as f64 / 2.0;
    let high = if cfg.high_freq > 0.0 {
        cfg.high_freq.min(nyquist)
    } else {
        nyquist
    };
    if cfg.low_freq >= high {
        return Err(Error::Config(format!(
            "low_freq {} must be below the upper filter edge {high}",
            cfg.low_freq
        )));
    }

    let n_fft = len.next_power_of_two();
    let fbank = mel_filterbank(cfg.channels, n_fft, clip.sample_rate, cfg.low_freq, high);
    let window: Vec<f64> = (0..len)
        .map(|n| {
            if len == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
            }
        })
        .collect();

    let x = &clip.samples;
    let mut emphasized = Vec::with_capacity(x.len());
    emphasized.push(x[0]);
    emphasized.extend(x.windows(2).map(|w| w[1] - cfg.preemphasis * w[0]));

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; bins];
    let mut values = Array2::zeros((cfg.channels, n_frames));

    for t in 0..n_frames {
        let frame = &emphasized[t * hop..t * hop + len];
        for (slot, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(s * w, 0.0);
        }
        buf[len..].fill(Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for c in 0..cfg.channels {
            let energy: f64 = fbank.row(c).iter().zip(&power).map(|(w, p)| w * p).sum();
            values[[c, t]] = energy.max(cfg.energy_floor).ln();
        }
    }

    Ok(MelSpectrogram {
        values,
        frame_length_ms: cfg.frame_length_ms,
        frame_shift_ms: cfg.frame_shift_ms,
        utterance_id: clip.utterance_id.clone(),
        speaker_id: clip.speaker_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SR: u32 = 16000;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, SR, "u", "s").unwrap()
    }

    fn tone(n: usize, freq: f64) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin())
            .collect()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let spec = mel_spectrogram(&clip(tone(16000, 300.0)), &FrontendConfig::default()).unwrap();
        assert_eq!(spec.channels(), 40);
        assert_eq!(spec.frames(), (16000 - 400) / 160 + 1);
        assert_eq!(spec.frames(), 98);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FrontendConfig::default();
        let spec = mel_spectrogram(&clip(vec![0.0; 4000]), &cfg).unwrap();
        let floor = cfg.energy_floor.ln();
        assert!(spec.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn shorter_than_one_frame_is_rejected() {
        let err = mel_spectrogram(&clip(vec![0.1; 399]), &FrontendConfig::default());
        assert!(matches!(
            err,
            Err(Error::TooShort {
                samples: 399,
                needed: 400
            })
        ));
    }

    #[test]
    fn tone_peaks_in_the_channel_that_covers_it() {
        let cfg = FrontendConfig::default();
        let spec = mel_spectrogram(&clip(tone(16000, 440.0)), &cfg).unwrap();
        let means: Vec<f64> = spec.values.rows().into_iter().map(|r| r.mean().unwrap()).collect();
        let got = argmax(&means);

        // Oracle: evaluate each triangle directly at 440 Hz.
        let (lo, hi) = (hz_to_mel(20.0), hz_to_mel(8000.0));
        let weight_at = |c: usize, f: f64| {
            let edge = |i: usize| mel_to_hz(lo + (hi - lo) * i as f64 / 41.0);
            let (l, m, r) = (edge(c), edge(c + 1), edge(c + 2));
            if f <= l || f >= r {
                0.0
            } else if f <= m {
                (f - l) / (m - l)
            } else {
                (r - f) / (r - m)
            }
        };
        let weights: Vec<f64> = (0..40).map(|c| weight_at(c, 440.0)).collect();
        assert_eq!(got, argmax(&weights));
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0
    }

    #[test]
    fn filterbank_rows_are_triangles() {
        let fb = mel_filterbank(40, 512, SR, 20.0, 8000.0);
        assert_eq!(fb.dim(), (40, 257));
        for row in fb.rows() {
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gain_shifts_log_energy_by_log_g_squared(
            samples in prop::collection::vec(-1.0f64..1.0, 400..2000),
            gain in 1.01f64..20.0,
        ) {
            let cfg = FrontendConfig::default();
            let a = mel_spectrogram(&clip(samples.clone()), &cfg).unwrap();
            let b = mel_spectrogram(&clip(samples.iter().map(|x| x * gain).collect()), &cfg).unwrap();
            prop_assert_eq!(a.frames(), frame_count(samples.len(), 400, 160));
            let floor = cfg.energy_floor.ln();
            let shift = (gain * gain).ln();
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                prop_assert!(x.is_finite() && y.is_finite());
                if *x > floor {
                    prop_assert!((y - x - shift).abs() <= 1e-9, "{} vs {}", y - x, shift);
                }
            }
        }
    }
}
