//! Mono 16-bit PCM WAV reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

fn audio_err(path: &Path, e: hound::Error) -> Error {
    Error::Manifest(format!("wav {}: {e}", path.display()))
}

/// Write samples in [-1, 1] as mono 16-bit PCM. Values are scaled by
/// 32767, rounded, and clamped, so output bytes are a pure function of
/// the input.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in samples {
        let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| audio_err(path, e))?;
    }
    writer.finalize().map_err(|e| audio_err(path, e))?;
    Ok(())
}

/// Read a mono 16-bit PCM file back to f64 samples, inverting the
/// writer's scaling.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Manifest(format!(
            "wav {}: expected mono 16-bit PCM, got {} ch / {} bit",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples: Vec<f64> = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32767.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| audio_err(path, e))?;
    Ok((samples, spec.sample_rate))
}
