//! Grayscale images of spectrograms and combination weights.
//!
//! Frequency runs up the y-axis and time along the x-axis, so a field with
//! `F` bins and `T` frames becomes a `T x F` pixel image.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::GrayImage;

use crate::{Error, MultichannelSpectrogram, Result, WeightField};

/// Default dynamic range of spectrogram images, in dB below the maximum.
pub const DEFAULT_FLOOR_DB: f64 = -60.0;

fn gray(width: usize, height: usize, value: impl Fn(usize, usize) -> u8) -> GrayImage {
    GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([value(x as usize, height - 1 - y as usize)])
    })
}

/// Weights of beam `j` mapped linearly from `[0, 1]` to `[0, 255]`.
pub fn weight_image(alpha: &WeightField, j: usize) -> Result<GrayImage> {
    if j >= alpha.num_beams() {
        return Err(Error::Config(format!("beam {j} out of range for {} beams", alpha.num_beams())));
    }
    Ok(gray(alpha.num_frames(), alpha.num_bins(), |t, f| {
        (alpha.get(j, f, t).clamp(0.0, 1.0) * 255.0).round() as u8
    }))
}

/// Log-magnitude of one channel relative to its maximum. Bins at or below
/// `floor_db` map to 0 and the maximum maps to 255.
pub fn spectrogram_image(spec: &MultichannelSpectrogram, channel: usize, floor_db: f64) -> Result<GrayImage> {
    if channel >= spec.num_channels() {
        return Err(Error::Config(format!(
            "channel {channel} out of range for {} channels",
            spec.num_channels()
        )));
    }
    if !(floor_db < 0.0) {
        return Err(Error::Config(format!("dB floor must be negative, got {floor_db}")));
    }
    let (f, t) = (spec.num_bins(), spec.num_frames());
    let peak = (0..f)
        .flat_map(|fi| (0..t).map(move |ti| (fi, ti)))
        .map(|(fi, ti)| spec.get(channel, fi, ti).norm())
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Silent("spectrogram"));
    }
    Ok(gray(t, f, |ti, fi| {
        let db = 20.0 * (spec.get(channel, fi, ti).norm() / peak).log10();
        if db <= floor_db {
            0
        } else {
            ((1.0 - db / floor_db) * 255.0).round() as u8
        }
    }))
}

/// Writes binary PGM for a `.pgm` path and PNG for `.png`.
pub fn save_image(img: &GrayImage, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(img.save(path)?),
        Some("pgm") => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write!(w, "P5\n{} {}\n255\n", img.width(), img.height())
                .and_then(|_| w.write_all(img.as_raw()))
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path, e))
        }
        _ => Err(Error::Config(format!("unsupported image extension: {}", path.display()))),
    }
}
