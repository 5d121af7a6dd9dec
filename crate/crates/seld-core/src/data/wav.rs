//! 4-channel 24 kHz 16-bit PCM RIFF read/write.

use std::path::Path;

use crate::error::{Result, SeldError};

use super::SAMPLE_RATE;

const FULL_SCALE: f32 = 32767.0;

/// Symmetric quantization keeps negation exact: q(-x) == -q(x).
fn quantize(x: f32) -> i16 {
    (x * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE) as i16
}

pub fn write_foa_wav(path: &Path, channels: &[Vec<f32>; 4]) -> Result<()> {
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(SeldError::Format("FOA channels have unequal lengths".into()));
    }
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate: SAMPLE_RATE as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| SeldError::Format(format!("{}: {e}", path.display())))?;
    for i in 0..len {
        for ch in channels {
            writer
                .write_sample(quantize(ch[i]))
                .map_err(|e| SeldError::Format(format!("{}: {e}", path.display())))?;
        }
    }
    writer.finalize().map_err(|e| SeldError::Format(format!("{}: {e}", path.display())))
}

pub fn read_foa_wav(path: &Path) -> Result<[Vec<f32>; 4]> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| SeldError::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 4 {
        return Err(SeldError::Format(format!(
            "{}: expected 4 FOA channels, found {}",
            path.display(),
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(SeldError::Format(format!(
            "{}: expected 16-bit integer PCM",
            path.display()
        )));
    }
    let mut channels: [Vec<f32>; 4] = Default::default();
    for (i, s) in reader.samples::<i16>().enumerate() {
        let v = s.map_err(|e| SeldError::Format(format!("{}: {e}", path.display())))? as f32
            / FULL_SCALE;
        channels[i % 4].push(v);
    }
    if channels[1].len() != channels[0].len() || channels[3].len() != channels[0].len() {
        return Err(SeldError::Format(format!("{}: truncated sample data", path.display())));
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let mut channels: [Vec<f32>; 4] = Default::default();
        for i in 0..100 {
            let x = ((i as f32) * 0.37).sin() * 0.8;
            channels[0].push(x);
            channels[1].push(-x);
            channels[2].push(x * 0.5);
            channels[3].push(0.0);
        }
        write_foa_wav(&path, &channels).unwrap();
        let back = read_foa_wav(&path).unwrap();
        for ch in 0..4 {
            for (a, b) in channels[ch].iter().zip(&back[ch]) {
                assert!((a - b).abs() < 1.0 / 32000.0);
            }
        }
        // negation symmetry survives the container
        for (a, b) in back[0].iter().zip(&back[1]) {
            assert_eq!(*a, -*b);
        }
    }
}
