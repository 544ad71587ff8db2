//! Energy-based leading/trailing silence removal.

use super::{frame_count, AudioClip, FrontendConfig};

/// Frame RMS below this is treated as digital silence when converting to dB.
const RMS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub clip: AudioClip,
    /// Set when no frame rose above the threshold (or the clip is digital
    /// silence); `clip` is then the untouched input.
    pub all_silent: bool,
}

/// Short-term RMS energy in dB for every analysis frame. A clip shorter
/// than one frame is treated as a single frame.
pub fn frame_rms_db(samples: &[f64], frame_length: usize, frame_shift: usize) -> Vec<f64> {
    let to_db = |frame: &[f64]| {
        let ms = frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64;
        20.0 * ms.sqrt().max(RMS_FLOOR).log10()
    };
    let n = frame_count(samples.len(), frame_length, frame_shift);
    if n == 0 {
        return vec![to_db(samples)];
    }
    (0..n)
        .map(|k| to_db(&samples[k * frame_shift..k * frame_shift + frame_length]))
        .collect()
}

/// Removes leading and trailing frames whose RMS falls below
/// `noise_floor + margin`, where the noise floor is the configured
/// percentile of frame energies. The threshold is capped at
/// `peak - margin` so a clip of uniform energy is left alone.
///
/// Sample boundaries: the first kept sample is where the first voiced frame
/// stops overlapping its silent predecessor, and the last kept sample is the
/// end of the hop after the last voiced frame, so the cut lands within one
/// hop of the true onset/offset.
pub fn trim_silence(clip: &AudioClip, cfg: &FrontendConfig) -> Trimmed {
    let untouched = |all_silent| Trimmed {
        clip: clip.clone(),
        all_silent,
    };
    let len = cfg.frame_length(clip.sample_rate);
    let hop = cfg.frame_shift(clip.sample_rate);
    let n = clip.samples.len();

    let db = frame_rms_db(&clip.samples, len, hop);
    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if clip.samples.iter().all(|&x| x == 0.0) {
        return untouched(true);
    }
    if db.len() == 1 {
        return untouched(false);
    }

    let mut sorted = db.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((cfg.vad_percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    let floor = sorted[rank.clamp(1, sorted.len()) - 1];
    let threshold = (floor + cfg.vad_margin_db).min(peak - cfg.vad_margin_db);

    let voiced = |k: &usize| db[*k] >= threshold;
    let (Some(first), Some(last)) = ((0..db.len()).find(voiced), (0..db.len()).rev().find(voiced)) else {
        return untouched(true);
    };

    let mut start = if first == 0 { 0 } else { first * hop + len - hop };
    let mut end = if last == db.len() - 1 {
        n
    } else {
        ((last + 1) * hop).min(n)
    };
    if start >= end {
        start = first * hop;
        end = (last * hop + len).min(n);
    }
    if start == 0 && end == n {
        return untouched(false);
    }

    Trimmed {
        clip: AudioClip {
            samples: clip.samples[start..end].to_vec(),
            sample_rate: clip.sample_rate,
            utterance_id: clip.utterance_id.clone(),
            speaker_id: clip.speaker_id.clone(),
        },
        all_silent: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SR: u32 = 16000;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, SR, "u", "s").unwrap()
    }

    fn sine(n: usize, freq: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin())
            .collect()
    }

    fn padded(lead: usize, body: &[f64], tail: usize) -> Vec<f64> {
        let mut v = vec![0.0; lead];
        v.extend_from_slice(body);
        v.extend(std::iter::repeat_n(0.0, tail));
        v
    }

    #[test]
    fn strips_zero_padding_around_a_sine() {
        let cfg = FrontendConfig::default();
        let body = sine(16000, 440.0, 1.0);
        let x = clip(padded(8000, &body, 8000));
        let out = trim_silence(&x, &cfg);
        assert!(!out.all_silent);
        // The trimmed clip must cover the sine to within one 160-sample hop.
        let hop = 160usize;
        let kept = out.clip.samples.len();
        assert!(kept.abs_diff(16000) <= 2 * hop, "kept {kept}");
        let start = x
            .samples
            .windows(kept)
            .position(|w| w == out.clip.samples.as_slice())
            .unwrap();
        assert!(start.abs_diff(8000) <= hop, "start {start}");
        assert!((start + kept).abs_diff(24000) <= hop, "end {}", start + kept);
    }

    #[test]
    fn pure_zeros_are_flagged_and_returned() {
        let x = clip(vec![0.0; 16000]);
        let out = trim_silence(&x, &FrontendConfig::default());
        assert!(out.all_silent);
        assert_eq!(out.clip, x);
    }

    #[test]
    fn uniform_white_noise_is_unchanged() {
        let cfg = FrontendConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = clip((0..32000).map(|_| rng.random_range(-0.5..0.5)).collect());
        // Direct frame scan: no frame falls below the capped threshold.
        let db = frame_rms_db(&x.samples, 400, 160);
        let peak = db.iter().copied().fold(f64::MIN, f64::max);
        let mut sorted = db.clone();
        sorted.sort_by(f64::total_cmp);
        let floor = sorted[(0.1 * db.len() as f64).ceil() as usize - 1];
        let thr = (floor + 9.0).min(peak - 9.0);
        assert!(db.iter().all(|&d| d >= thr));

        let out = trim_silence(&x, &cfg);
        assert!(!out.all_silent);
        assert_eq!(out.clip, x);
    }

    #[test]
    fn trimming_is_idempotent_on_padded_tones() {
        let cfg = FrontendConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lead = rng.random_range(0..12000);
            let tail = rng.random_range(0..12000);
            let n = rng.random_range(4000..20000);
            let amp = rng.random_range(0.01..1.0);
            let freq = rng.random_range(100.0..3000.0);
            let x = clip(padded(lead, &sine(n, freq, amp), tail));
            let once = trim_silence(&x, &cfg).clip;
            let twice = trim_silence(&once, &cfg).clip;
            assert_eq!(once, twice, "lead {lead} tail {tail} n {n}");
        }
    }

    #[test]
    fn shorter_than_a_frame_is_left_alone() {
        let x = clip(vec![0.1; 100]);
        let out = trim_silence(&x, &FrontendConfig::default());
        assert!(!out.all_silent);
        assert_eq!(out.clip, x);
    }
}
