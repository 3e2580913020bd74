//! Multi-channel WAV reading and writing (PCM16 and float32).
//!
//! The reader refuses sample rates other than the one the caller expects;
//! there is no resampler in this crate, so a mismatch is a hard error
//! rather than a silent quality change.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

/// Sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Read a WAV file into a `[channels, samples]` matrix of f64 in [-1, 1].
///
/// `expected_rate` must match the file header exactly.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<RealMatrix> {
    let mut reader =
        WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(Error::Wav(format!(
            "{}: sample rate {} Hz, expected {} Hz (no resampler available)",
            path.display(),
            spec.sample_rate,
            expected_rate
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported format {fmt:?}/{bits} bit (PCM16 and float32 only)",
                path.display()
            )))
        }
    };

    let frames = interleaved.len() / channels;
    let mut out = RealMatrix::zeros(channels, frames);
    for (i, &v) in interleaved.iter().enumerate() {
        let ch = i % channels;
        let t = i / channels;
        out[(ch, t)] = v;
    }
    Ok(out)
}

/// Write a `[channels, samples]` matrix as a WAV file.
///
/// PCM16 output clamps to [-1, 1); float32 writes values as-is.
pub fn write_wav(
    path: &Path,
    wave: &RealMatrix,
    sample_rate: u32,
    encoding: WavEncoding,
) -> Result<()> {
    if wave.rows() == 0 || wave.cols() == 0 {
        return Err(Error::InvalidInput("write_wav: empty waveform".into()));
    }
    let spec = WavSpec {
        channels: wave.rows() as u16,
        sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer =
        WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for t in 0..wave.cols() {
        for ch in 0..wave.rows() {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (wave[(ch, t)] * 32768.0).clamp(-32768.0, 32767.0);
                    writer
                        .write_sample(v as i16)
                        .map_err(|e| Error::Wav(e.to_string()))?;
                }
                WavEncoding::Float32 => {
                    writer
                        .write_sample(wave[(ch, t)] as f32)
                        .map_err(|e| Error::Wav(e.to_string()))?;
                }
            }
        }
    }
    writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    Ok(())
}
