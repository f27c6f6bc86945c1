//! MNIST IDX reader: big-endian header, raw `u8` payload.

use std::path::Path;

use super::LabeledExample;
use crate::error::{OtaError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    let b = bytes.get(offset..offset + 4)?;
    Some(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_images(bytes: &[u8]) -> std::result::Result<Vec<Vec<f64>>, String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != IMAGE_MAGIC {
        return Err(format!("bad image magic {magic:#010x}"));
    }
    let count = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let rows = be_u32(bytes, 8).ok_or("truncated header")? as usize;
    let cols = be_u32(bytes, 12).ok_or("truncated header")? as usize;
    let pixels = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != count * pixels {
        return Err(format!(
            "expected {} pixel bytes, found {}",
            count * pixels,
            payload.len()
        ));
    }
    Ok(payload
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

fn parse_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != LABEL_MAGIC {
        return Err(format!("bad label magic {magic:#010x}"));
    }
    let count = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(format!("expected {count} labels, found {}", payload.len()));
    }
    Ok(payload.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| OtaError::io(path, e))
}

/// Images scaled to `[0, 1]`, one flattened vector per image.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_images(&read(path)?).map_err(|reason| OtaError::Idx {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read(path)?).map_err(|reason| OtaError::Idx {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn load_mnist(images: &Path, labels: &Path) -> Result<Vec<LabeledExample>> {
    let xs = read_idx_images(images)?;
    let ys = read_idx_labels(labels)?;
    if xs.len() != ys.len() {
        return Err(OtaError::Idx {
            path: labels.to_path_buf(),
            reason: format!("{} images but {} labels", xs.len(), ys.len()),
        });
    }
    Ok(xs
        .into_iter()
        .zip(ys)
        .map(|(x, y)| LabeledExample::new(x, usize::from(y)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for word in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&word.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn parses_and_scales_pixels() {
        let bytes = image_file(2, 1, 2, &[0, 255, 51, 102]);
        let imgs = parse_images(&bytes).unwrap();
        assert_eq!(imgs, vec![vec![0.0, 1.0], vec![0.2, 0.4]]);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut bytes = image_file(1, 1, 2, &[1, 2]);
        bytes[3] = 0x01;
        assert!(parse_images(&bytes).unwrap_err().contains("magic"));
        let short = image_file(2, 1, 2, &[1, 2, 3]);
        assert!(parse_images(&short).is_err());
        assert!(parse_labels(&[0, 0]).is_err());
    }

    #[test]
    fn loads_matching_files_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        std::fs::write(&img, image_file(2, 2, 2, &[0, 0, 0, 255, 255, 0, 0, 0])).unwrap();
        let mut labels = Vec::new();
        labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[7, 3]);
        std::fs::write(&lbl, labels).unwrap();
        let data = load_mnist(&img, &lbl).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].label, 7);
        assert_eq!(data[1].features, vec![1.0, 0.0, 0.0, 0.0]);
    }
}
