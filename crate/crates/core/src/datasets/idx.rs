//! Reader for the IDX binary format (MNIST / Fashion-MNIST distribution files).
//!
//! Layout: 4-byte big-endian magic, one 4-byte big-endian size per dimension,
//! then the raw unsigned bytes in row-major order.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Unsigned-byte, three-dimensional (count × rows × cols).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, one-dimensional.
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
}

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated { file: file.to_string(), expected: offset + 4, found: bytes.len() })
}

/// Parse an IDX file and return `(dims, payload)`.
fn parse<'a>(bytes: &'a [u8], expected_magic: u32, file: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != expected_magic {
        return Err(Error::BadMagic { file: file.to_string(), found: magic, expected: expected_magic });
    }
    let n_dims = (magic & 0xff) as usize;
    let dims = (0..n_dims).map(|d| be_u32(bytes, 4 + 4 * d, file).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * n_dims;
    let payload_len: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < payload_len {
        return Err(Error::Truncated { file: file.to_string(), expected: header + payload_len, found: bytes.len() });
    }
    Ok((dims, &bytes[header..header + payload_len]))
}

/// Load an image/label IDX pair. Pixels are scaled to `[0, 1]`; the class
/// count is one past the largest label present.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images_name = images_path.display().to_string();
    let labels_name = labels_path.display().to_string();

    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (image_dims, pixels) = parse(&image_bytes, IMAGES_MAGIC, &images_name)?;
    let (label_dims, raw_labels) = parse(&label_bytes, LABELS_MAGIC, &labels_name)?;

    let n_images = image_dims[0];
    let n_labels = label_dims[0];
    if n_images != n_labels {
        return Err(Error::CountMismatch { images: n_images, labels: n_labels });
    }
    let n_features = image_dims[1] * image_dims[2];
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(features, labels, n_features, n_classes)
}

/// Encode images (each `rows * cols` bytes) as an IDX3 file body.
pub fn write_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

/// Encode labels as an IDX1 file body.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images.idx3");
        let lp = dir.join("labels.idx1");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn handcrafted_single_image() {
        let dir = tempfile::tempdir().unwrap();
        // one 2x2 image, label 7, written byte by byte
        let images = [
            0x00, 0x00, 0x08, 0x03, // magic
            0x00, 0x00, 0x00, 0x01, // count
            0x00, 0x00, 0x00, 0x02, // rows
            0x00, 0x00, 0x00, 0x02, // cols
            0x00, 0xff, 0x33, 0x66,
        ];
        let labels = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x01, 0x07];
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.n_features(), 4);
        assert_eq!(ds.label(0), 7);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn writer_matches_handcrafted_bytes() {
        let img = write_idx_images(&[vec![0x00, 0xff, 0x33, 0x66]], 2, 2);
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        assert_eq!(img.len(), 20);
        assert_eq!(write_idx_labels(&[7]), vec![0, 0, 8, 1, 0, 0, 0, 1, 7]);
    }

    #[test]
    fn count_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_images(&[vec![1; 4], vec![2; 4]], 2, 2);
        let labels = write_idx_labels(&[0, 1, 2]);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert_eq!(err, Error::CountMismatch { images: 2, labels: 3 });
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'));
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_idx_labels(&[0]);
        // labels file passed where images are expected
        let (ip, lp) = write_pair(dir.path(), &labels, &labels);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::BadMagic { found: 0x801, .. })));

        let mut images = write_idx_images(&[vec![1; 4]], 2, 2);
        images.truncate(images.len() - 1);
        let (ip, lp) = write_pair(dir.path(), &images, &labels);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { expected: 20, found: 19, .. })));

        let (ip, lp) = write_pair(dir.path(), &[0, 0, 8], &labels);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_idx("/nonexistent/a", "/nonexistent/b").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
