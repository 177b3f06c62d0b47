//! Little-endian dataset file:
//!
//! ```text
//! "CEDF" | version u32 | kind u8 (0 clean, 1 noisy) | nv u32 | nh u32
//! | count u64 | normalized u8 | [noisy: count x f64 variance]
//! | count x N x (f64 re, f64 im)
//! ```
//!
//! Element spacings are not part of the format; loaded datasets carry the
//! default spacings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelDataset, ChannelError, DatasetKind, Result};
use crate::linalg::{UraGeometry, C64};

pub const MAGIC: [u8; 4] = *b"CEDF";
pub const VERSION: u32 = 1;

pub fn write_dataset<W: Write>(ds: &ChannelDataset, mut w: W) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match ds.kind {
        DatasetKind::Clean => 0,
        DatasetKind::Noisy => 1,
    }])?;
    w.write_all(&(ds.geo.nv as u32).to_le_bytes())?;
    w.write_all(&(ds.geo.nh as u32).to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&[u8::from(ds.normalized)])?;
    if ds.kind == DatasetKind::Noisy {
        for v in &ds.noise_var {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for s in &ds.samples {
        for v in s {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &ChannelDataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

fn read_exact<R: Read, const K: usize>(r: &mut R, what: &str) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ChannelError::TruncatedPayload(format!("file ends inside {what}")),
        _ => ChannelError::Io(e),
    })?;
    Ok(buf)
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<_, 8>(r, what)?))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<ChannelDataset> {
    let magic = read_exact::<_, 4>(&mut r, "header")?;
    if magic != MAGIC {
        return Err(ChannelError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, "header")?);
    if version != VERSION {
        return Err(ChannelError::UnsupportedVersion(version));
    }
    let kind = match read_exact::<_, 1>(&mut r, "header")?[0] {
        0 => DatasetKind::Clean,
        1 => DatasetKind::Noisy,
        b => return Err(ChannelError::UnknownKind(b)),
    };
    let nv = u32::from_le_bytes(read_exact(&mut r, "header")?) as usize;
    let nh = u32::from_le_bytes(read_exact(&mut r, "header")?) as usize;
    let count = u64::from_le_bytes(read_exact(&mut r, "header")?) as usize;
    let normalized = read_exact::<_, 1>(&mut r, "header")?[0] != 0;
    let defaults = UraGeometry::default_array();
    let geo = UraGeometry::new(nv, nh, defaults.spacing_v, defaults.spacing_h)
        .map_err(|e| ChannelError::Geometry(e.to_string()))?;
    let n = geo.n();

    let mut noise_var = Vec::new();
    if kind == DatasetKind::Noisy {
        for i in 0..count {
            noise_var.push(read_f64(&mut r, &format!("noise variance {i}"))?);
        }
    }
    let mut samples = Vec::new();
    for i in 0..count {
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            let what = format!("sample {i} of {count}");
            let re = read_f64(&mut r, &what)?;
            let im = read_f64(&mut r, &what)?;
            s.push(C64::new(re, im));
        }
        samples.push(s);
    }
    Ok(ChannelDataset { geo, kind, samples, noise_var, normalized })
}

pub fn load_dataset(path: &Path) -> Result<ChannelDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
