use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::{Error, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a RIFF/WAVE file holding PCM16 or IEEE float32 samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (fmt, bits) => {
            return Err(Error::format(
                "wav",
                format!("unsupported codec {fmt:?} {bits}-bit in {}", path.display()),
            ))
        }
    };
    if m == 0 || interleaved.len() % m != 0 {
        return Err(Error::format("wav", format!("ragged sample data in {}", path.display())));
    }
    let len = interleaved.len() / m;
    let mut channels = vec![Vec::with_capacity(len); m];
    for frame in interleaved.chunks_exact(m) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Waveform::new(spec.sample_rate, channels)
}

/// Writes IEEE float32 samples.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: w.num_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    write_with(path.as_ref(), w, spec, |wr, v| wr.write_sample(v as f32))
}

/// Writes PCM16, clipping to full scale.
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: w.num_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    write_with(path.as_ref(), w, spec, |wr, v| {
        wr.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
    })
}

fn write_with<F>(path: &Path, w: &Waveform, spec: WavSpec, mut put: F) -> Result<()>
where
    F: FnMut(&mut WavWriter<std::io::BufWriter<std::fs::File>>, f64) -> hound::Result<()>,
{
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for i in 0..w.len() {
        for c in w.channels() {
            put(&mut writer, c[i]).map_err(wav_err(path))?;
        }
    }
    writer.finalize().map_err(wav_err(path))
}
