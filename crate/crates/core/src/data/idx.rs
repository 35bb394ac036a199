//! Big-endian IDX containers, raw or gzip-compressed.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{CLASSES, IMAGE_SIDE};
use crate::error::IdxError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, row-major.
    pub pixels: Vec<u8>,
}

fn read_all(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(path: &Path, bytes: &[u8], expected_magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let word = |i: usize| -> Result<u32, IdxError> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or(IdxError::Truncated {
                path: path.to_path_buf(),
                expected: 4 * (dims + 1),
                found: bytes.len(),
            })
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected: expected_magic,
            found: magic,
        });
    }
    (1..=dims).map(|i| word(i).map(|d| d as usize)).collect()
}

fn payload<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8], IdxError> {
    let available = bytes.len().saturating_sub(offset);
    if available < len {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected: len,
            found: available,
        });
    }
    if available > len {
        return Err(IdxError::DimMismatch {
            path: path.to_path_buf(),
            detail: format!("{} bytes after the declared payload", available - len),
        });
    }
    Ok(&bytes[offset..offset + len])
}

/// Parses an image file: magic `0x00000803`, dims `[N, 28, 28]`.
pub fn read_idx_images(path: &Path) -> Result<IdxImages, IdxError> {
    let bytes = read_all(path)?;
    let dims = header(path, &bytes, IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(IdxError::DimMismatch {
            path: path.to_path_buf(),
            detail: format!("images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"),
        });
    }
    let pixels = payload(path, &bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Parses a label file: magic `0x00000801`, values in `[0, 9]`.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    let bytes = read_all(path)?;
    let count = header(path, &bytes, LABEL_MAGIC, 1)?[0];
    let labels = payload(path, &bytes, 8, count)?.to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= CLASSES) {
        return Err(IdxError::LabelOutOfRange {
            path: path.to_path_buf(),
            index,
            label,
        });
    }
    Ok(labels)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::create(path).map_err(io)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io)?;
        enc.finish().map_err(io)?;
    } else {
        file.write_all(bytes).map_err(io)?;
    }
    Ok(())
}

/// Writes images in IDX form; gzip-compressed when `path` ends in `.gz`.
pub fn write_idx_images(path: &Path, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<(), IdxError> {
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&word.to_be_bytes());
    }
    bytes.extend_from_slice(pixels);
    write_bytes(path, &bytes)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), IdxError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_bytes(path, &bytes)
}
