//! Reader and writer for the big-endian IDX format used by MNIST-style
//! datasets. Files may optionally be gzip-compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;

use super::Split;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(path, format!("bad magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() < expected {
        return Err(format_err(path, format!("truncated: {} pixel bytes, expected {expected}", body.len())));
    }
    if body.len() > expected {
        return Err(format_err(path, format!("{} trailing bytes", body.len() - expected)));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(path, format!("bad magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(format_err(path, format!("truncated: {} labels, expected {count}", body.len())));
    }
    if body.len() > count {
        return Err(format_err(path, format!("{} trailing bytes", body.len() - count)));
    }
    Ok(body.to_vec())
}

/// Loads an image/label file pair; pixel bytes are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != images.count {
        return Err(format_err(
            labels_path,
            format!("{} labels for {} images", labels.len(), images.count),
        ));
    }
    let dim = images.rows * images.cols;
    let features = Array2::from_shape_vec(
        (images.count, dim),
        images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("pixel count checked");
    Ok(Split {
        features,
        labels: labels.into_iter().map(usize::from).collect(),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::Shape {
            what: "IDX pixel buffer",
            expected: images.count * images.rows * images.cols,
            got: images.pixels.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    write_bytes(path, &out)
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_bytes(path, &out)
}

/// Finds `<stem>` or `<stem>.gz` inside `dir`.
fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found (plain or .gz)", plain.display()),
    )))
}

/// Loads the four standard MNIST file names from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(Split, Split)> {
    let train = load_idx(
        &locate(dir, "train-images-idx3-ubyte")?,
        &locate(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        &locate(dir, "t10k-images-idx3-ubyte")?,
        &locate(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (IdxImages, Vec<u8>) {
        let mut pixels: Vec<u8> = (0..4 * 2 * 3).map(|i| (i * 11 % 256) as u8).collect();
        pixels[0] = 255;
        (
            IdxImages {
                count: 4,
                rows: 2,
                cols: 3,
                pixels,
            },
            vec![3, 1, 4, 1],
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = tiny();
        for ext in ["", ".gz"] {
            let ip = dir.path().join(format!("img{ext}"));
            let lp = dir.path().join(format!("lab{ext}"));
            write_images(&ip, &images).unwrap();
            write_labels(&lp, &labels).unwrap();
            assert_eq!(read_images(&ip).unwrap(), images);
            assert_eq!(read_labels(&lp).unwrap(), labels);
            let split = load_idx(&ip, &lp).unwrap();
            assert_eq!(split.features.dim(), (4, 6));
            assert_eq!(split.features[[0, 0]], 1.0);
            assert_eq!(split.labels, vec![3, 1, 4, 1]);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = tiny();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_images(&ip, &images).unwrap();
        write_labels(&lp, &labels).unwrap();
        // a label file read as images has the wrong magic
        assert!(matches!(read_images(&lp), Err(Error::Format { .. })));
        assert!(matches!(read_labels(&ip), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_and_mismatched_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = tiny();
        let ip = dir.path().join("img");
        write_images(&ip, &images).unwrap();
        let mut bytes = fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(read_images(&ip), Err(Error::Format { .. })));

        write_images(&ip, &images).unwrap();
        let lp = dir.path().join("lab");
        write_labels(&lp, &labels[..3]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }
}
