use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::structure::DataMatrix;

const IMAGES: u32 = 0x0000_0803;
const LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// One flattened image per row, pixels scaled to `[0, 1]`.
    Images(DataMatrix),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(Error::format(
            name,
            format!("byte {offset}"),
            format!("header truncated: need 4 bytes, file has {}", bytes.len()),
        )),
    }
}

/// Parses an uncompressed IDX buffer.
pub fn parse_idx(bytes: &[u8], name: &str) -> Result<IdxData> {
    let magic = read_u32(bytes, 0, name)?;
    let dims = match magic {
        IMAGES => 3,
        LABELS => 1,
        other => {
            return Err(Error::format(
                name,
                "byte 0",
                format!("unsupported magic 0x{other:08x}, expected 0x{IMAGES:08x} or 0x{LABELS:08x}"),
            ))
        }
    };
    let shape = (0..dims)
        .map(|i| read_u32(bytes, 4 + 4 * i, name).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * dims;
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(name, "byte 4", format!("dimensions {shape:?} overflow")))?;
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(Error::format(
            name,
            format!("byte {}", bytes.len()),
            format!("payload truncated: expected {expected} bytes, got {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            name,
            format!("byte {}", start + expected),
            format!(
                "{} trailing bytes after payload of {expected}",
                payload.len() - expected
            ),
        ));
    }
    if dims == 1 {
        return Ok(IdxData::Labels(payload.to_vec()));
    }
    let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let values = Array2::from_shape_vec((shape[0], shape[1] * shape[2]), pixels)
        .map_err(|e| Error::format(name, format!("byte {start}"), e.to_string()))?;
    Ok(IdxData::Images(DataMatrix::new(values)?))
}

/// Reads an IDX file, gunzipping it first when it starts with the gzip magic.
pub fn load_idx(path: &Path) -> Result<IdxData> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut bytes = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        parse_idx(&bytes, &name)
    } else {
        parse_idx(&raw, &name)
    }
}

pub fn load_idx_images(path: &Path) -> Result<DataMatrix> {
    match load_idx(path)? {
        IdxData::Images(m) => Ok(m),
        IdxData::Labels(_) => Err(Error::format(
            path.display().to_string(),
            "byte 0",
            "expected an image file",
        )),
    }
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    match load_idx(path)? {
        IdxData::Labels(l) => Ok(l.into_iter().map(usize::from).collect()),
        IdxData::Images(_) => Err(Error::format(
            path.display().to_string(),
            "byte 0",
            "expected a label file",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images() {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend([0, 255, 51, 102, 1, 2, 3, 4]);
        let IdxData::Images(m) = parse_idx(&b, "t").unwrap() else {
            panic!()
        };
        assert_eq!(m.values().dim(), (2, 4));
        assert_eq!(m.values()[[0, 1]], 1.0);
        assert_eq!(m.values()[[0, 2]], 0.2);
    }

    #[test]
    fn labels() {
        let b = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        assert_eq!(parse_idx(&b, "t").unwrap(), IdxData::Labels(vec![7, 2, 1]));
    }

    #[test]
    fn truncated_payload() {
        let b = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2];
        let msg = parse_idx(&b, "t").unwrap_err().to_string();
        assert!(msg.contains("expected 3 bytes, got 2"), "{msg}");
        assert!(msg.contains("byte 10"), "{msg}");
    }

    #[test]
    fn bad_magic() {
        let msg = parse_idx(&[0, 0, 8, 2, 0, 0, 0, 0], "t").unwrap_err().to_string();
        assert!(msg.contains("byte 0") && msg.contains("0x00000802"), "{msg}");
        assert!(parse_idx(&[0, 0, 8], "t").is_err());
    }
}
