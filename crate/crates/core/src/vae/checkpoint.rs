//! Little-endian checkpoint file:
//!
//! ```text
//! "CEVM" | version u32 | header length u32 | JSON header
//! | tensor count u32 | per tensor: rank u32, rank x u64 dims, f64 data
//! ```
//!
//! The JSON header holds the configuration, the epoch counter and the
//! training history. Tensors follow layer order, encoder first; each layer
//! contributes its parameters and then its normalization buffers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Result, Vae, VaeConfig, VaeError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CEVM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: VaeConfig,
    epochs_completed: usize,
    history: Vec<EpochRecord>,
}

pub fn write_checkpoint<W: Write>(vae: &Vae, mut w: W) -> Result<()> {
    let header = Header {
        config: vae.config.clone(),
        epochs_completed: vae.epochs_completed,
        history: vae.history.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| VaeError::Checkpoint(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let tensors = vae.state_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(vae: &Vae, path: &Path) -> Result<()> {
    write_checkpoint(vae, BufWriter::new(File::create(path)?))
}

fn take<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => VaeError::Checkpoint("file is truncated".into()),
        _ => VaeError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vae> {
    let magic = take::<_, 4>(&mut r)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(VaeError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(VaeError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| VaeError::Checkpoint("file is truncated".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| VaeError::Checkpoint(e.to_string()))?;

    let mut vae = Vae::new(header.config)?;
    vae.epochs_completed = header.epochs_completed;
    vae.history = header.history;
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut tensors = vae.state_tensors_mut();
    if count != tensors.len() {
        return Err(VaeError::Checkpoint(format!(
            "file holds {count} tensors, architecture needs {}",
            tensors.len()
        )));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        let rank = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut r)?) as usize);
        }
        if shape != t.shape() {
            return Err(VaeError::Checkpoint(format!(
                "tensor {i} has shape {shape:?}, architecture needs {:?}",
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = f64::from_le_bytes(take(&mut r)?);
        }
    }
    Ok(vae)
}

pub fn load_checkpoint(path: &Path) -> Result<Vae> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::UraGeometry;

    #[test]
    fn round_trip_is_bit_identical() {
        let cfg = VaeConfig {
            geo: UraGeometry::new(2, 4, 1.0, 0.5).unwrap(),
            latent_dim: 4,
            base_channels: 2,
            learning_rate: 1.0 / 3.0,
            ..VaeConfig::default()
        };
        let mut vae = Vae::new(cfg).unwrap();
        vae.epochs_completed = 3;
        vae.history.push(EpochRecord { epoch: 2, train_loss: 0.1 + 0.2, val_nmse: 1e-3 / 7.0 });
        let mut buf = Vec::new();
        write_checkpoint(&vae, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, vae);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(read_checkpoint(&b"CEDF\x01\0\0\0"[..]), Err(VaeError::Checkpoint(_))));
        assert!(matches!(read_checkpoint(&b"CEVM"[..]), Err(VaeError::Checkpoint(_))));
    }
}
