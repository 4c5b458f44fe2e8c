//! Reader for the big-endian IDX image/label format.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::dataset::{FeatureKind, LabeledDataset};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 0,
            reason: format!("truncated header at byte {offset}"),
        })?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Read up to `limit` examples from an IDX image/label file pair.
/// Pixels are scaled from [0, 255] to [0, 1].
pub fn read_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<LabeledDataset> {
    let ipath = images_path.display().to_string();
    let lpath = labels_path.display().to_string();

    let ibytes = fs::read(images_path).map_err(|e| Error::io(ipath.clone(), e))?;
    let lbytes = fs::read(labels_path).map_err(|e| Error::io(lpath.clone(), e))?;

    let imagic = be_u32(&ibytes, 0, &ipath)?;
    if imagic != IMAGES_MAGIC {
        return Err(Error::Parse {
            path: ipath,
            line: 0,
            reason: format!("bad magic {imagic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let lmagic = be_u32(&lbytes, 0, &lpath)?;
    if lmagic != LABELS_MAGIC {
        return Err(Error::Parse {
            path: lpath,
            line: 0,
            reason: format!("bad magic {lmagic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }

    let n_images = be_u32(&ibytes, 4, &ipath)? as usize;
    let height = be_u32(&ibytes, 8, &ipath)? as usize;
    let width = be_u32(&ibytes, 12, &ipath)? as usize;
    let n_labels = be_u32(&lbytes, 4, &lpath)? as usize;

    if n_images != n_labels {
        return Err(Error::Parse {
            path: ipath,
            line: 0,
            reason: format!("{n_images} images but {n_labels} labels"),
        });
    }

    let n = n_images.min(limit);
    if n == 0 {
        return Err(Error::InvalidDataset(
            "no examples requested or available (limit 0 or empty files)".into(),
        ));
    }

    let d = height * width;
    let pixels = ibytes.get(16..16 + n * d).ok_or_else(|| Error::Parse {
        path: ipath.clone(),
        line: 0,
        reason: format!("truncated image payload: need {} bytes", 16 + n * d),
    })?;
    let labels_raw = lbytes.get(8..8 + n).ok_or_else(|| Error::Parse {
        path: lpath.clone(),
        line: 0,
        reason: format!("truncated label payload: need {} bytes", 8 + n),
    })?;

    let features = Array2::from_shape_vec(
        (n, d),
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("shape checked above");
    let labels: Vec<usize> = labels_raw.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(1, |&m| m + 1);

    let stem = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "idx".to_string());
    LabeledDataset::new(
        features,
        labels,
        FeatureKind::Image { height, width },
        n_classes,
        &format!("idx:{stem}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_images(path: &Path, n: u32, h: u32, w: u32, pixels: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&h.to_be_bytes()).unwrap();
        f.write_all(&w.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
    }

    fn write_labels(path: &Path, magic: u32, labels: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn hand_built_fixture_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_images(&ip, 1, 2, 2, &[0, 255, 128, 64]);
        write_labels(&lp, LABELS_MAGIC, &[1]);
        let d = read_idx(&ip, &lp, 10).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(
            d.features().row(0).to_vec(),
            vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]
        );
        assert_eq!(d.labels(), &[1]);
        assert_eq!(
            d.kind(),
            &FeatureKind::Image {
                height: 2,
                width: 2
            }
        );
    }

    #[test]
    fn limit_zero_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_images(&ip, 1, 2, 2, &[0; 4]);
        write_labels(&lp, LABELS_MAGIC, &[0]);
        assert!(read_idx(&ip, &lp, 0).is_err());
    }

    #[test]
    fn wrong_label_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_images(&ip, 1, 2, 2, &[0; 4]);
        write_labels(&lp, 0x0000_0802, &[0]);
        let err = read_idx(&ip, &lp, 1).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_images(&ip, 2, 2, 2, &[0; 5]); // needs 8 bytes
        write_labels(&lp, LABELS_MAGIC, &[0, 1]);
        let err = read_idx(&ip, &lp, 2).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_images(&ip, 2, 2, 2, &[0; 8]);
        write_labels(&lp, LABELS_MAGIC, &[0]);
        assert!(read_idx(&ip, &lp, 2).is_err());
    }
}
