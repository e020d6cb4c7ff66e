use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, IdxError, Result};
use crate::numerics::Tensor;

const IMAGE_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x03];
const LABEL_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x01];

/// Raw contents of an IDX3 image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn need(bytes: &[u8], len: usize) -> Result<()> {
    if bytes.len() < len {
        return Err(Error::Idx(IdxError::Truncated {
            needed: len,
            available: bytes.len(),
        }));
    }
    Ok(())
}

fn check_magic(bytes: &[u8], expected: [u8; 4]) -> Result<()> {
    need(bytes, 4)?;
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != expected {
        return Err(Error::Idx(IdxError::BadMagic { expected, found }));
    }
    Ok(())
}

fn be_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    need(bytes, 16)?;
    let (count, rows, cols) = (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12));
    let len = count * rows * cols;
    need(bytes, 16 + len)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..16 + len].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    need(bytes, 8)?;
    let count = be_u32(bytes, 4);
    need(bytes, 8 + count)?;
    Ok(bytes[8..8 + count].to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC);
    for v in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from parsed IDX parts; pixels are scaled by `1/255` and
/// the class count is `max(label) + 1` (at least 2).
pub fn idx_to_dataset(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::Idx(IdxError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        }));
    }
    let n = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Tensor::new(vec![images.count, n], data)?;
    let labels: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(inputs, labels, classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    idx_to_dataset(&images, &labels)
}
