use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::WeightField;
use crate::{Error, Result};

/// First header word: the bytes `TFWF` read as a little-endian `f32`.
pub const WEIGHTS_MAGIC: [u8; 4] = *b"TFWF";
const VERSION: f32 = 1.0;
const HEADER_WORDS: usize = 8;

/// Writes weights as little-endian `f32`: an 8-word header
/// `[magic, version, J, F, T, 0, 0, 0]` followed by `J x F x T` values, beam-major.
pub fn write_weights(path: &Path, w: &WeightField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(&WEIGHTS_MAGIC).map_err(io)?;
    let header = [
        VERSION,
        w.num_beams() as f32,
        w.num_bins() as f32,
        w.num_frames() as f32,
        0.0,
        0.0,
        0.0,
    ];
    for v in header {
        out.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    for j in 0..w.num_beams() {
        for f in 0..w.num_bins() {
            for t in 0..w.num_frames() {
                out.write_f32::<LittleEndian>(w.get(j, f, t) as f32).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

pub fn read_weights(path: &Path) -> Result<WeightField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut inp = BufReader::new(file);
    let bad = |reason: &str| Error::format("weight field", reason);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != WEIGHTS_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut header = [0f32; HEADER_WORDS - 1];
    inp.read_f32_into::<LittleEndian>(&mut header)
        .map_err(|_| bad("truncated header"))?;
    if header[0] != VERSION {
        return Err(bad("unsupported version"));
    }
    let dim = |v: f32| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(bad("invalid dimension"))
        }
    };
    let (beams, bins, frames) = (dim(header[1])?, dim(header[2])?, dim(header[3])?);
    let mut raw = vec![0f32; beams * bins * frames];
    inp.read_f32_into::<LittleEndian>(&mut raw)
        .map_err(|_| bad("truncated payload"))?;
    let mut rest = Vec::new();
    inp.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let mut alpha = vec![0.0; raw.len()];
    for j in 0..beams {
        for f in 0..bins {
            for t in 0..frames {
                alpha[(f * frames + t) * beams + j] = raw[(j * bins + f) * frames + t] as f64;
            }
        }
    }
    WeightField::from_data(beams, bins, frames, alpha)
}
