//! MNIST IDX reader (big-endian headers, unsigned-byte payload).

use std::path::Path;

use super::Dataset;
use crate::error::DataError;
use crate::scalar::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn truncated(path: &str, what: &str) -> DataError {
    DataError::Io {
        path: path.to_string(),
        source: std::io::Error::new(std::io::ErrorKind::UnexpectedEof, format!("truncated {what}")),
    }
}

fn header(bytes: &[u8], path: &str, words: usize, magic: u32) -> Result<Vec<u32>, DataError> {
    if bytes.len() < 4 * words {
        return Err(truncated(path, "header"));
    }
    let fields: Vec<u32> = bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if fields[0] != magic {
        return Err(DataError::Format {
            path: path.to_string(),
            reason: format!("magic {:#010x}, expected {magic:#010x}", fields[0]),
        });
    }
    Ok(fields)
}

/// Parses in-memory IDX image and label files. Pixels are scaled by 1/255;
/// the class count is the largest label plus one.
pub fn parse_idx<T: Scalar>(
    images: &[u8],
    labels: &[u8],
    images_name: &str,
    labels_name: &str,
) -> Result<Dataset<T>, DataError> {
    let ih = header(images, images_name, 4, IMAGES_MAGIC)?;
    let lh = header(labels, labels_name, 2, LABELS_MAGIC)?;
    let (n, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    if lh[1] as usize != n {
        return Err(DataError::Consistency(format!(
            "{images_name} holds {n} images but {labels_name} holds {} labels",
            lh[1]
        )));
    }
    let dim = rows * cols;
    let pixels = images.get(16..16 + n * dim).ok_or_else(|| truncated(images_name, "pixel payload"))?;
    let label_bytes = labels.get(8..8 + n).ok_or_else(|| truncated(labels_name, "label payload"))?;
    let scale = T::one() / T::lit(255.0);
    let features = pixels.iter().map(|&p| T::count(p as usize) * scale).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, dim, num_classes)
}

/// Loads an IDX image/label file pair.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>, DataError> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    parse_idx(
        &images,
        &labels,
        &images_path.display().to_string(),
        &labels_path.display().to_string(),
    )
}
