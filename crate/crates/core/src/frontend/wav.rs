use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

/// Reads a linear PCM WAV file into a mono clip with amplitudes in `[-1, 1]`.
///
/// Integer PCM of 8, 16, 24 or 32 bits is scaled by `2^(bits-1)`; 32-bit
/// float is taken as is. Multichannel audio is averaged per frame. The
/// utterance and speaker ids default to the file stem.
pub fn load_audio(path: &Path) -> Result<AudioClip> {
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let mut reader = WavReader::open(path).map_err(|e| format_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(format_err("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format_err(e.to_string()))?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(e.to_string()))?,
        (fmt, bits) => {
            return Err(format_err(format!(
                "unsupported sample format {fmt:?} with {bits} bits"
            )))
        }
    };
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }

    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioClip::new(samples, spec.sample_rate, stem.clone(), stem)
}

/// Writes mono 16-bit PCM. Amplitudes are clamped to `[-1, 1]`.
pub fn write_wav_i16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_io)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw<S: hound::Sample + Copy>(path: &Path, spec: WavSpec, samples: &[S]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    fn spec(channels: u16, rate: u32, bits: u16, fmt: SampleFormat) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: fmt,
        }
    }

    #[test]
    fn sixteen_bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, spec(1, 16000, 16, SampleFormat::Int), &[0i16, 16384, -16384]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -0.5]);
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.utterance_id, "a");
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, spec(2, 16000, 32, SampleFormat::Float), &[1.0f32, 0.0]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
    }

    #[test]
    fn header_rate_is_echoed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        write_raw(&p, spec(1, 8000, 16, SampleFormat::Int), &vec![100i16; 8000]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.sample_rate, 8000);
        assert_eq!(clip.samples.len(), 8000);
    }

    #[test]
    fn other_bit_depths() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("b8.wav");
        write_raw(&p8, spec(1, 8000, 8, SampleFormat::Int), &[64i8, -128]);
        assert_eq!(load_audio(&p8).unwrap().samples, vec![0.5, -1.0]);
        let p24 = dir.path().join("b24.wav");
        write_raw(&p24, spec(1, 8000, 24, SampleFormat::Int), &[1i32 << 22]);
        assert_eq!(load_audio(&p24).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn empty_payload_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_raw::<i16>(&p, spec(1, 16000, 16, SampleFormat::Int), &[]);
        assert!(matches!(load_audio(&p), Err(Error::EmptyAudio(_))));
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.wav");
        std::fs::write(&p, b"RIFF not really a wave file").unwrap();
        assert!(matches!(load_audio(&p), Err(Error::Format { .. })));
    }
}
