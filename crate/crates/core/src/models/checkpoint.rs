//! Binary model checkpoint.
//!
//! ```text
//! "GZSM"  u16 version  u8 variant (0 linear, 1 nonlinear)
//! u32 m  u32 n  u32 h1  u32 h2          (h1 = h2 = 0 for linear)
//! f64 semantic_scale                    (factor applied to class semantics before scoring)
//! u64 parameter count, then that many f64 (LE, flatten() layout)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{MlpConfig, ModelDims, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GZSM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Trained parameters together with the semantic scale they were trained at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub semantic_scale: f64,
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    let dims = ckpt.params.dims();
    let header_dim = |x: usize| {
        u32::try_from(x).map_err(|_| Error::InvalidArgument(format!("dimension {x} exceeds u32")))
    };
    let (m, n, h1, h2) = (
        header_dim(dims.m)?,
        header_dim(dims.n)?,
        header_dim(dims.mlp.h1)?,
        header_dim(dims.mlp.h2)?,
    );
    let flat = ckpt.params.flatten();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u8(match ckpt.params.variant() {
            Variant::Linear => 0,
            Variant::Nonlinear => 1,
        })?;
        for d in [m, n, h1, h2] {
            w.write_u32::<LittleEndian>(d)?;
        }
        w.write_f64::<LittleEndian>(ckpt.semantic_scale)?;
        w.write_u64::<LittleEndian>(flat.len() as u64)?;
        for x in flat {
            w.write_f64::<LittleEndian>(x.as_f64())?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::format(&name, format!("truncated header: {e}"));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(&name, "magic mismatch: not a model checkpoint"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(io)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &name,
            format!("version mismatch: expected {CHECKPOINT_VERSION}, found {version}"),
        ));
    }
    let variant = match r.read_u8().map_err(io)? {
        0 => Variant::Linear,
        1 => Variant::Nonlinear,
        t => return Err(Error::format(&name, format!("unknown variant tag {t}"))),
    };
    let mut d = [0usize; 4];
    for x in &mut d {
        *x = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    }
    let dims = ModelDims {
        m: d[0],
        n: d[1],
        mlp: MlpConfig { h1: d[2], h2: d[3] },
    };
    let semantic_scale = r.read_f64::<LittleEndian>().map_err(io)?;
    let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;

    let template = ModelParams::<T>::zeros(variant, dims);
    if count != template.num_params() {
        return Err(Error::format(
            &name,
            format!(
                "parameter count {count} inconsistent with dimensions (expected {})",
                template.num_params()
            ),
        ));
    }
    let mut raw = vec![0f64; count];
    r.read_f64_into::<LittleEndian>(&mut raw)
        .map_err(|_| Error::format(&name, format!("truncated: expected {count} parameters")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(&name, "trailing bytes after parameters"));
    }
    let flat: Vec<T> = raw.into_iter().map(T::of).collect();
    Ok(Checkpoint {
        params: ModelParams::unflatten(&flat, &template)?,
        semantic_scale,
    })
}
