//! Checkpoint container: magic `TDCK`, format version, then each store entry
//! in insertion order as (name, shape, f32 payload), all little-endian.
//! Values are stored at f32 regardless of the scalar type in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::tape::ParamStore;

const MAGIC: &[u8; 4] = b"TDCK";
const VERSION: u32 = 1;

pub fn save<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let out: Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(store.len() as u32).to_le_bytes())?;
        for (_, name, value) in store.iter() {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(std::io::Error::other("parameter name too long"));
            }
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            let shape = value.shape();
            w.write_all(&[shape.len() as u8])?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in value.data() {
                w.write_all(&v.as_f32().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(|e| CoreError::io(path, e));
    out
}

/// Fill an already-constructed store from a checkpoint. Every entry must be
/// present with a matching shape; extra entries in the file are an error too,
/// so a config/checkpoint mismatch cannot pass silently.
pub fn load_into<S: Scalar>(store: &mut ParamStore<S>, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(CoreError::format(path, "bad magic, not a checkpoint file"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(CoreError::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let count = read_u32(&mut r, path)? as usize;
    if count != store.len() {
        return Err(CoreError::format(
            path,
            format!(
                "checkpoint has {count} parameters, model expects {}",
                store.len()
            ),
        ));
    }
    let mut seen = vec![false; store.len()];
    for _ in 0..count {
        let name_len = read_u16(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CoreError::format(path, "parameter name is not utf-8"))?;
        let rank = {
            let mut b = [0u8; 1];
            read_exact(&mut r, &mut b, path)?;
            b[0] as usize
        };
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, path)?;
            data.push(S::of(f32::from_le_bytes(buf) as f64));
        }

        let id = store.id_of(&name).ok_or_else(|| {
            CoreError::format(path, format!("unknown parameter `{name}` in checkpoint"))
        })?;
        if seen[id.0] {
            return Err(CoreError::format(path, format!("duplicate parameter `{name}`")));
        }
        seen[id.0] = true;
        let slot = store.get_mut(id);
        if slot.shape() != shape.as_slice() {
            return Err(CoreError::format(
                path,
                format!(
                    "parameter `{name}`: checkpoint shape {:?}, model shape {:?}",
                    shape,
                    slot.shape()
                ),
            ));
        }
        slot.data_mut().copy_from_slice(&data);
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| CoreError::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, path)?;
    Ok(u16::from_le_bytes(b))
}
