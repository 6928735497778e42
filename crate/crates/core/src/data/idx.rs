use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Image geometry read from an IDX images file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated IDX header"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(
            path,
            format!("wrong IDX magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

/// Loads an IDX image/label pair; pixels are scaled to `[0, 1]` by `/255`
/// and each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<(Dataset, IdxImages)> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(images_path)?;
    let labels = read(labels_path)?;

    check_magic(&images, IMAGES_MAGIC, images_path)?;
    let count = read_u32(&images, 4, images_path)? as usize;
    let rows = read_u32(&images, 8, images_path)? as usize;
    let cols = read_u32(&images, 12, images_path)? as usize;
    let d = rows * cols;
    let pixels = &images[16..];
    if pixels.len() != count * d {
        return Err(Error::format(
            images_path,
            format!("expected {} pixel bytes, found {}", count * d, pixels.len()),
        ));
    }

    check_magic(&labels, LABELS_MAGIC, labels_path)?;
    let label_count = read_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != label_count {
        return Err(Error::format(
            labels_path,
            format!("expected {label_count} label bytes, found {}", label_bytes.len()),
        ));
    }
    if label_count != count {
        return Err(Error::format(
            labels_path,
            format!("{label_count} labels for {count} images"),
        ));
    }

    let features = Matrix::from_vec(count, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Ok((Dataset::classification(name, features, labels)?, IdxImages { rows, cols }))
}

/// Writes a dataset as an IDX pair, quantising features in `[0, 1]` to
/// bytes with `round(255·x)`.
pub fn save_idx(
    dataset: &Dataset,
    shape: IdxImages,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    if shape.rows * shape.cols != dataset.feature_count() {
        return Err(Error::Dimension {
            op: "save_idx",
            left: (shape.rows, shape.cols),
            right: (dataset.len(), dataset.feature_count()),
        });
    }
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::contract("IDX needs class labels"))?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::contract(format!("label {bad} does not fit in a byte")));
    }

    let mut img = Vec::with_capacity(16 + dataset.features().len());
    for v in [IMAGES_MAGIC, dataset.len() as u32, shape.rows as u32, shape.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        dataset
            .features()
            .as_slice()
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend(labels.iter().map(|&l| l as u8));

    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn hand_built_single_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(1, 2, 2, &[0, 255, 128, 64])).unwrap();
        fs::write(&lp, idx_labels(&[3])).unwrap();
        let (ds, shape) = load_idx(&ip, &lp).unwrap();
        assert_eq!(shape, IdxImages { rows: 2, cols: 2 });
        let f = ds.features().row(0);
        let expected = [0.0, 1.0, 0.50196, 0.25098];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 5e-6);
        }
        assert_eq!(ds.labels().unwrap(), &[3]);
    }

    #[test]
    fn labels_with_image_magic_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(1, 1, 1, &[9])).unwrap();
        fs::write(&lp, idx_images(1, 1, 1, &[1])).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("wrong IDX magic"), "{err}");
    }

    #[test]
    fn count_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(2, 1, 2, &[1, 2, 3, 4])).unwrap();
        fs::write(&lp, idx_labels(&[0])).unwrap();
        assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("1 labels for 2 images"));

        fs::write(&ip, idx_images(2, 1, 2, &[1, 2, 3])).unwrap();
        fs::write(&lp, idx_labels(&[0, 1])).unwrap();
        assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("pixel bytes"));

        fs::write(&ip, [0u8, 0, 8]).unwrap();
        assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn save_then_load_round_trips_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        let pixels: Vec<u8> = (0..12).map(|i| (i * 21) as u8).collect();
        fs::write(&ip, idx_images(3, 2, 2, &pixels)).unwrap();
        fs::write(&lp, idx_labels(&[0, 2, 1])).unwrap();
        let (ds, shape) = load_idx(&ip, &lp).unwrap();
        let (ip2, lp2) = (dir.path().join("img2"), dir.path().join("lab2"));
        save_idx(&ds, shape, &ip2, &lp2).unwrap();
        assert_eq!(fs::read(&ip).unwrap(), fs::read(&ip2).unwrap());
        assert_eq!(fs::read(&lp).unwrap(), fs::read(&lp2).unwrap());
    }
}
