use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::Array2;

use super::IoError;

const MAGIC: &[u8; 4] = b"ATRB";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

/// Size of the fixed ATRB header in bytes.
pub const HEADER_LEN: usize = 24;

pub fn write_embeddings_to<W: Write>(mut w: W, matrix: &Array2<f32>) -> Result<(), IoError> {
    if let Some(((row, col), _)) = matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(IoError::NonFinite { row, col });
    }
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(matrix.nrows() as u64)?;
    w.write_u32::<LittleEndian>(u32::try_from(matrix.ncols()).map_err(|_| {
        IoError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "dim exceeds u32"))
    })?)?;
    w.write_u32::<LittleEndian>(DTYPE_F32)?;
    for &v in matrix.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `matrix` as an ATRB file. Fails without touching `path` when a
/// value is not finite.
pub fn write_embeddings(path: impl AsRef<Path>, matrix: &Array2<f32>) -> Result<(), IoError> {
    if let Some(((row, col), _)) = matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(IoError::NonFinite { row, col });
    }
    write_embeddings_to(BufWriter::new(File::create(path)?), matrix)
}

pub fn read_embeddings_from<R: Read>(mut r: R) -> Result<Array2<f32>, IoError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(IoError::BadMagic { expected: "ATRB", found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::TruncatedHeader { expected: HEADER_LEN, got: bytes.len() });
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let n_rows = LittleEndian::read_u64(&bytes[8..16]);
    let dim = LittleEndian::read_u32(&bytes[16..20]);
    let dtype = LittleEndian::read_u32(&bytes[20..24]);
    if dtype != DTYPE_F32 {
        return Err(IoError::UnsupportedDtype(dtype));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = n_rows
        .checked_mul(u64::from(dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or(IoError::TruncatedPayload { expected: u64::MAX, got: payload.len() as u64 })?;
    let got = payload.len() as u64;
    if got < expected {
        return Err(IoError::TruncatedPayload { expected, got });
    }
    if got > expected {
        return Err(IoError::TrailingBytes(got - expected));
    }
    let mut values = vec![0f32; payload.len() / 4];
    LittleEndian::read_f32_into(payload, &mut values);
    Ok(Array2::from_shape_vec((n_rows as usize, dim as usize), values).expect("length checked above"))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Array2<f32>, IoError> {
    read_embeddings_from(File::open(path)?)
}
