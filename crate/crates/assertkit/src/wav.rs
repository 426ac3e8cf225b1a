//! 16-bit PCM mono WAV files.

use std::path::Path;

use assertkit_core::audio::AudioClip;
use hound::{SampleFormat, WavSpec};

use crate::error::{io_err, Error, Result};

/// Reads a 16-bit PCM mono file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let malformed = |detail: String| Error::MalformedHeader { path: path.to_path_buf(), detail };
    let unsupported = |detail: String| Error::UnsupportedEncoding { path: path.to_path_buf(), detail };
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    // read failures past this point mean a short or garbled file
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| match e {
        hound::Error::Unsupported => unsupported("format tag not supported".into()),
        other => malformed(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(unsupported("floating-point samples".into()));
    }
    if spec.channels != 1 {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    if spec.bits_per_sample != 16 {
        return Err(unsupported(format!("{} bits per sample", spec.bits_per_sample)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f32::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| malformed(format!("data chunk: {e}")))?;
    if samples.is_empty() {
        return Err(malformed("empty data chunk".into()));
    }
    Ok(AudioClip::new(samples, spec.sample_rate)?)
}

/// Quantizes a sample in [-1, 1] to 16 bits, rounding to nearest.
pub fn quantize(x: f32) -> i16 {
    (f64::from(x) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Format { path: path.to_path_buf(), detail: other.to_string() },
    };
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = hound::WavWriter::new(std::io::BufWriter::new(file), spec).map_err(to_err)?;
    let mut i16w = w.get_i16_writer(clip.len() as u32);
    for &s in clip.samples() {
        i16w.write_sample(quantize(s));
    }
    i16w.flush().map_err(to_err)?;
    w.finalize().map_err(to_err)
}
