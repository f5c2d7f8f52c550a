//! Model file: `"CWTR"`, u32 version, architecture, then f32 LE parameters in
//! declaration order. All integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchConfig, Head, ModelParams};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CWTR";

pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    let arch = &params.arch;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(arch.in_channels as u32).to_le_bytes())?;
    w.write_all(&(arch.stage_channels.len() as u32).to_le_bytes())?;
    for c in arch.stage_channels {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    w.write_all(&[match arch.head {
        Head::Detection => 0u8,
        Head::Density => 1u8,
    }])?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated file while reading magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected CWTR")));
    }
    let version = read_u32(&mut r, "version")?;
    if version > FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::Format("version 0 is not a valid model file".into()));
    }
    let in_channels = read_u32(&mut r, "input channels")? as usize;
    let stages = read_u32(&mut r, "stage count")?;
    if stages != 3 {
        return Err(Error::Format(format!("{stages} stages, expected 3")));
    }
    let mut stage_channels = [0usize; 3];
    for c in &mut stage_channels {
        *c = read_u32(&mut r, "stage channels")? as usize;
    }
    let mut head = [0u8; 1];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated file while reading head".into()))?;
    let head = match head[0] {
        0 => Head::Detection,
        1 => Head::Density,
        other => return Err(Error::Format(format!("unknown head tag {other}"))),
    };
    let arch = ArchConfig {
        in_channels,
        stage_channels,
        head,
    };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let n = arch.param_count();
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated file, expected {n} parameters")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let values: Vec<f32> = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model file holds non-finite parameters".into()));
    }
    Ok(ModelParams {
        arch,
        version,
        values,
    })
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    read_params(BufReader::new(File::open(path)?))
}
