//! Little-endian binary containers for RTFs and beamformer sets.
//!
//! Both start with a 4-byte magic and a `u32` version, followed by `u32`
//! dimensions and per-frequency complex vectors as `(re, im)` float64 pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Beamformer, BeamformerKind, BeamformerSet, Rtf};
use crate::{Error, Result, C64};

const RTF_MAGIC: &[u8; 4] = b"TFRT";
const BEAM_MAGIC: &[u8; 4] = b"TFBF";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("container", format!("{} is truncated", path.display()))
        } else {
            Error::io(path, e)
        }
    }
}

fn write_complex<W: Write>(w: &mut W, vals: &[C64]) -> std::io::Result<()> {
    for v in vals {
        w.write_f64::<LE>(v.re)?;
        w.write_f64::<LE>(v.im)?;
    }
    Ok(())
}

fn read_complex<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<C64>> {
    (0..n)
        .map(|_| Ok(C64::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?)))
        .collect()
}

fn write_indices<W: Write>(w: &mut W, idx: &[usize]) -> std::io::Result<()> {
    w.write_u32::<LE>(idx.len() as u32)?;
    idx.iter().try_for_each(|&i| w.write_u32::<LE>(i as u32))
}

fn read_indices<R: Read>(r: &mut R) -> std::io::Result<Vec<usize>> {
    let n = r.read_u32::<LE>()? as usize;
    (0..n).map(|_| r.read_u32::<LE>().map(|v| v as usize)).collect()
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    if &buf != magic {
        return Err(Error::format("container", format!("bad magic in {}", path.display())));
    }
    let version = r.read_u32::<LE>().map_err(io_err(path))?;
    if version != VERSION {
        return Err(Error::format("container", format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_rtf(path: impl AsRef<Path>, rtf: &Rtf) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(RTF_MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(rtf.num_channels() as u32)?;
        w.write_u32::<LE>(rtf.num_bins() as u32)?;
        w.write_u32::<LE>(rtf.reference as u32)?;
        write_indices(w, &rtf.flagged)?;
        write_complex(w, rtf.raw())?;
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_rtf(path: impl AsRef<Path>) -> Result<Rtf> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    check_magic(&mut r, RTF_MAGIC, path)?;
    let e = io_err(path);
    let m = r.read_u32::<LE>().map_err(&e)? as usize;
    let bins = r.read_u32::<LE>().map_err(&e)? as usize;
    let reference = r.read_u32::<LE>().map_err(&e)? as usize;
    let flagged = read_indices(&mut r).map_err(&e)?;
    let vals = read_complex(&mut r, m * bins).map_err(&e)?;
    let per_bin = vals.chunks(m.max(1)).map(|c| c.to_vec()).collect();
    let mut rtf = Rtf::from_vectors(m, reference, per_bin)?;
    rtf.flagged = flagged;
    Ok(rtf)
}

pub fn write_beamformers(path: impl AsRef<Path>, set: &BeamformerSet) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let (m, bins) = set
        .beams
        .first()
        .map_or((0, 0), |b| (b.num_channels(), b.num_bins()));
    if set.beams.iter().any(|b| b.num_channels() != m || b.num_bins() != bins) {
        return Err(Error::Shape("beamformers in a set must share dimensions".into()));
    }
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(BEAM_MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(set.len() as u32)?;
        w.write_u32::<LE>(m as u32)?;
        w.write_u32::<LE>(bins as u32)?;
        for b in &set.beams {
            w.write_u32::<LE>(b.kind.code())?;
            w.write_f64::<LE>(b.null_doa.unwrap_or(f64::NAN))?;
            write_indices(w, &b.flagged)?;
            write_complex(w, b.raw())?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_beamformers(path: impl AsRef<Path>) -> Result<BeamformerSet> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    check_magic(&mut r, BEAM_MAGIC, path)?;
    let e = io_err(path);
    let j = r.read_u32::<LE>().map_err(&e)? as usize;
    let m = r.read_u32::<LE>().map_err(&e)? as usize;
    let bins = r.read_u32::<LE>().map_err(&e)? as usize;
    let mut beams = Vec::with_capacity(j);
    for _ in 0..j {
        let code = r.read_u32::<LE>().map_err(&e)?;
        let kind = BeamformerKind::from_code(code)
            .ok_or_else(|| Error::format("container", format!("unknown beamformer kind {code}")))?;
        let doa = r.read_f64::<LE>().map_err(&e)?;
        let flagged = read_indices(&mut r).map_err(&e)?;
        let w = read_complex(&mut r, m * bins).map_err(&e)?;
        let mut b = Beamformer::from_weights(m, bins, w, kind)?;
        b.null_doa = (!doa.is_nan()).then_some(doa);
        b.flagged = flagged;
        beams.push(b);
    }
    Ok(BeamformerSet::new(beams))
}
