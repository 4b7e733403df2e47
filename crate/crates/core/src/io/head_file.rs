//! ATRH head files. Layout, all integers little-endian:
//!
//! ```text
//! "ATRH" | version u32 = 1 | mode u32 (0 binary, 1 multiclass)
//! dim u32 | n_classes u32 | hidden u32 | proj u32
//! n_classes x (len u32, UTF-8 label)
//! n_meta u32 | n_meta x (len u32, key, len u32, value), keys ascending
//! n_params u64 | n_params x f64
//! ```
//!
//! Parameters follow [`HeadWeights::flatten`] order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::IoError;
use crate::contrastive::{HeadParams, HeadWeights};
use crate::protocol::Mode;
use crate::registry::canonical_manipulation;

const MAGIC: &[u8; 4] = b"ATRH";
const VERSION: u32 = 1;

/// A head plus free-form provenance (training dataset, loss, seed, config
/// hash, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadFile {
    pub params: HeadParams,
    pub metadata: BTreeMap<String, String>,
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), IoError> {
    let v = u32::try_from(v).map_err(|_| IoError::BadHead(format!("{v} does not fit in u32")))?;
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_head_to<W: Write>(mut w: W, head: &HeadFile) -> Result<(), IoError> {
    let p = &head.params;
    let weights = &p.weights;
    if p.label_order.len() != weights.n_classes() {
        return Err(IoError::BadHead(format!(
            "{} labels for {} classes",
            p.label_order.len(),
            weights.n_classes()
        )));
    }
    if !weights.is_finite() {
        return Err(IoError::BadHead("non-finite parameter".into()));
    }
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(match p.mode {
        Mode::Binary => 0,
        Mode::Multiclass => 1,
    })?;
    for v in [weights.dim(), weights.n_classes(), weights.hidden(), weights.proj_dim()] {
        put_u32(&mut w, v)?;
    }
    for label in &p.label_order {
        put_str(&mut w, label.as_str())?;
    }
    put_u32(&mut w, head.metadata.len())?;
    for (k, v) in &head.metadata {
        put_str(&mut w, k)?;
        put_str(&mut w, v)?;
    }
    let flat = weights.flatten();
    w.write_u64::<LittleEndian>(flat.len() as u64)?;
    for v in flat {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_head(path: impl AsRef<Path>, head: &HeadFile) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_head_to(&mut buf, head)?;
    BufWriter::new(File::create(path)?).write_all(&buf)?;
    Ok(())
}

fn truncated(_: std::io::Error) -> IoError {
    IoError::BadHead("truncated".into())
}

fn get_u32(c: &mut Cursor<&[u8]>) -> Result<usize, IoError> {
    Ok(c.read_u32::<LittleEndian>().map_err(truncated)? as usize)
}

fn get_str(c: &mut Cursor<&[u8]>) -> Result<String, IoError> {
    let len = get_u32(c)?;
    let remaining = c.get_ref().len() - c.position() as usize;
    if len > remaining {
        return Err(IoError::BadHead("truncated".into()));
    }
    let mut buf = vec![0; len];
    c.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| IoError::BadHead("string is not UTF-8".into()))
}

pub fn read_head_from<R: Read>(mut r: R) -> Result<HeadFile, IoError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(IoError::BadMagic { expected: "ATRH", found });
    }
    let mut c = Cursor::new(&bytes[..]);
    c.set_position(4);
    let version = get_u32(&mut c)? as u32;
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let mode = match get_u32(&mut c)? {
        0 => Mode::Binary,
        1 => Mode::Multiclass,
        m => return Err(IoError::BadHead(format!("unknown mode code {m}"))),
    };
    let (dim, n_classes, hidden, proj) = (get_u32(&mut c)?, get_u32(&mut c)?, get_u32(&mut c)?, get_u32(&mut c)?);
    let mut label_order = Vec::with_capacity(n_classes.min(1024));
    for _ in 0..n_classes {
        let raw = get_str(&mut c)?;
        label_order.push(canonical_manipulation(&raw).map_err(|e| IoError::BadHead(e.to_string()))?);
    }
    let n_meta = get_u32(&mut c)?;
    let mut metadata = BTreeMap::new();
    for _ in 0..n_meta {
        let k = get_str(&mut c)?;
        let v = get_str(&mut c)?;
        metadata.insert(k, v);
    }
    let n_params = c.read_u64::<LittleEndian>().map_err(truncated)?;
    let remaining = (bytes.len() as u64) - c.position();
    if remaining != n_params.saturating_mul(8) {
        return Err(IoError::BadHead(format!(
            "{n_params} parameters declared, {remaining} payload bytes present"
        )));
    }
    let mut flat = vec![0f64; n_params as usize];
    c.read_f64_into::<LittleEndian>(&mut flat).map_err(truncated)?;
    let weights = HeadWeights::from_flat(dim, n_classes, hidden, proj, &flat)
        .map_err(|e| IoError::BadHead(e.to_string()))?;
    Ok(HeadFile { params: HeadParams { mode, label_order, weights }, metadata })
}

pub fn read_head(path: impl AsRef<Path>) -> Result<HeadFile, IoError> {
    read_head_from(File::open(path)?)
}
