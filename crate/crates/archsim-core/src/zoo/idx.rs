//! Loader for the big-endian IDX image/label container format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Loads a paired IDX image file (magic 0x803, u8 pixels) and label file
/// (magic 0x801, u8 labels). Pixels are scaled to [0, 1] single-channel
/// planes; the class count is inferred as `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path, name: &str, split: Split) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let (n_img, rows, cols, pixels) = parse_images(images_path, &img_bytes)?;
    let (n_lbl, labels_u8) = parse_labels(labels_path, &lbl_bytes)?;
    if n_img != n_lbl {
        return Err(Error::IdxCountMismatch {
            images: n_img,
            labels: n_lbl,
        });
    }

    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = labels_u8.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    if num_classes < 2 {
        return Err(Error::Degenerate(format!(
            "label file {} holds fewer than two classes",
            labels_path.display()
        )));
    }

    Ok(Dataset {
        name: name.to_string(),
        images: Tensor::from_parts(vec![n_img, rows, cols, 1], data),
        labels,
        num_classes,
        split,
        provenance: format!(
            "idx images={} labels={}",
            images_path.display(),
            labels_path.display()
        ),
    })
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_images<'a>(path: &Path, bytes: &'a [u8]) -> Result<(usize, usize, usize, &'a [u8])> {
    let magic = read_be_u32(bytes, 0).ok_or_else(|| truncated(path, 16, bytes.len()))?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxMagic {
            path: path.display().to_string(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_be_u32(bytes, 4).ok_or_else(|| truncated(path, 16, bytes.len()))? as usize;
    let rows = read_be_u32(bytes, 8).ok_or_else(|| truncated(path, 16, bytes.len()))? as usize;
    let cols = read_be_u32(bytes, 12).ok_or_else(|| truncated(path, 16, bytes.len()))? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(truncated(path, expected, bytes.len()));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Degenerate(format!(
            "image file {} declares an empty tensor ({n}x{rows}x{cols})",
            path.display()
        )));
    }
    Ok((n, rows, cols, &bytes[16..]))
}

fn parse_labels<'a>(path: &Path, bytes: &'a [u8]) -> Result<(usize, &'a [u8])> {
    let magic = read_be_u32(bytes, 0).ok_or_else(|| truncated(path, 8, bytes.len()))?;
    if magic != LABEL_MAGIC {
        return Err(Error::IdxMagic {
            path: path.display().to_string(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_be_u32(bytes, 4).ok_or_else(|| truncated(path, 8, bytes.len()))? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(truncated(path, expected, bytes.len()));
    }
    Ok((n, &bytes[8..]))
}

fn truncated(path: &Path, expected: usize, found: usize) -> Error {
    Error::IdxTruncated {
        path: path.display().to_string(),
        expected,
        found,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images(dir: &Path, n: u32, rows: u32, cols: u32, pixels: &[u8]) -> std::path::PathBuf {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&n.to_be_bytes());
        bytes.extend_from_slice(&rows.to_be_bytes());
        bytes.extend_from_slice(&cols.to_be_bytes());
        bytes.extend_from_slice(pixels);
        let path = dir.join("images.idx");
        fs::write(&path, bytes).unwrap();
        path
    }

    fn write_labels(dir: &Path, labels: &[u8]) -> std::path::PathBuf {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        let path = dir.join("labels.idx");
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn loads_well_formed_pair() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..4 * 2 * 2).map(|i| (i * 10) as u8).collect();
        let img = write_images(dir.path(), 4, 2, 2, &pixels);
        let lbl = write_labels(dir.path(), &[0, 1, 2, 1]);
        let ds = load_idx(&img, &lbl, "toy", Split::Train).unwrap();
        assert_eq!(ds.images.shape(), &[4, 2, 2, 1]);
        assert_eq!(ds.num_classes, 3);
        assert!((ds.images.data()[1] - 10.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("bad.idx");
        fs::write(&img, 0x0000_0802u32.to_be_bytes()).unwrap();
        let lbl = write_labels(dir.path(), &[0, 1]);
        let err = load_idx(&img, &lbl, "toy", Split::Train).unwrap_err();
        assert!(matches!(err, Error::IdxMagic { expected, .. } if expected == IMAGE_MAGIC));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        // Header says 60000 28x28 images; payload holds two pixels.
        let img = write_images(dir.path(), 60000, 28, 28, &[1, 2]);
        let lbl = write_labels(dir.path(), &[0, 1]);
        let err = load_idx(&img, &lbl, "toy", Split::Train).unwrap_err();
        match err {
            Error::IdxTruncated { expected, found, .. } => {
                assert_eq!(expected, 16 + 60000 * 28 * 28);
                assert_eq!(found, 18);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = vec![0; 4 * 2 * 2];
        let img = write_images(dir.path(), 4, 2, 2, &pixels);
        let lbl = write_labels(dir.path(), &[0, 1, 0]);
        let err = load_idx(&img, &lbl, "toy", Split::Train).unwrap_err();
        assert!(matches!(err, Error::IdxCountMismatch { images: 4, labels: 3 }));
    }
}
