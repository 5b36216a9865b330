//! IDX (MNIST) reader and writer, with transparent gzip support.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn ingest(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| ingest(path, 0, format!("cannot read file: {e}")))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| ingest(path, 0, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| ingest(self.path, self.pos as u64, "truncated header"))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let got = self.u32()?;
        if got != magic {
            return Err(ingest(
                self.path,
                0,
                format!("bad magic 0x{got:08x}, expected 0x{magic:08x}"),
            ));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(ingest(
                self.path,
                self.bytes.len() as u64,
                format!("truncated payload: need {end} bytes, file has {}", self.bytes.len()),
            ));
        }
        Ok(&self.bytes[self.pos..end])
    }
}

/// Loads an IDX image file and its label file. Pixels are scaled by 1/255;
/// the class count is the largest label plus one.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ipath, lpath) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = read_bytes(ipath)?;
    let lbytes = read_bytes(lpath)?;

    let mut ic = Cursor { path: ipath, bytes: &ibytes, pos: 0 };
    ic.expect_magic(IMAGES_MAGIC)?;
    let n = ic.u32()? as usize;
    let rows = ic.u32()? as usize;
    let cols = ic.u32()? as usize;
    let dim = rows * cols;
    let pixels = ic.payload(n * dim)?;

    let mut lc = Cursor { path: lpath, bytes: &lbytes, pos: 0 };
    lc.expect_magic(LABELS_MAGIC)?;
    let n_labels = lc.u32()? as usize;
    if n_labels != n {
        return Err(ingest(
            lpath,
            4,
            format!("{n_labels} labels but {n} images in {}", ipath.display()),
        ));
    }
    let labels: Vec<usize> = lc.payload(n)?.iter().map(|&b| usize::from(b)).collect();

    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Tensor::matrix(n, dim, features)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, labels, classes)
}

/// Writes a dataset in IDX format (square images only). Values are
/// quantized to bytes; `gzip` compresses both files.
pub fn write_idx(
    ds: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    gzip: bool,
) -> Result<()> {
    let side = (ds.input_dim() as f64).sqrt().round() as usize;
    if side * side != ds.input_dim() {
        return Err(Error::Input(format!(
            "IDX images must be square, width {} is not",
            ds.input_dim()
        )));
    }
    let n = ds.len() as u32;
    let mut images = Vec::with_capacity(16 + ds.features().data().len());
    for word in [IMAGES_MAGIC, n, side as u32, side as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend(
        ds.features()
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut labels = Vec::with_capacity(8 + ds.len());
    for word in [LABELS_MAGIC, n] {
        labels.extend_from_slice(&word.to_be_bytes());
    }
    for &y in ds.labels() {
        let byte = u8::try_from(y)
            .map_err(|_| Error::Input(format!("label {y} does not fit in a byte")))?;
        labels.push(byte);
    }
    write_file(images_path.as_ref(), &images, gzip)?;
    write_file(labels_path.as_ref(), &labels, gzip)
}

fn write_file(path: &Path, bytes: &[u8], gzip: bool) -> Result<()> {
    let out = if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
