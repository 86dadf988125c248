//! CIFAR-10 binary batch format: 10000 records of 3073 bytes each, one label
//! byte followed by the red, green, and blue 32x32 planes in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const IMAGE_BYTES: usize = 3072;
pub const IMAGE_SIDE: usize = 32;
pub const NUM_CLASSES: usize = 10;

/// Images as raw bytes plus labels, with provenance back to the source file.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `len x 3072` bytes, planar RGB per image (the on-disk plane layout).
    pub images: Vec<u8>,
    /// One label in `[0, 10)` per image.
    pub labels: Vec<u8>,
    /// Source file the records came from.
    pub source_file: String,
    /// Original record index of each image within the source file; the byte
    /// offset of record `r` is `r * 3073`.
    pub record_ids: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    /// New dataset holding the rows picked by `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut images = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(indices.len());
        let mut record_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!(
                    "subset index {i} out of range for {} images",
                    self.len()
                )));
            }
            images.extend_from_slice(self.image_bytes(i));
            labels.push(self.labels[i]);
            record_ids.push(self.record_ids[i]);
        }
        Ok(Dataset {
            images,
            labels,
            source_file: self.source_file.clone(),
            record_ids,
        })
    }

    /// Count of each label value.
    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0usize; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// Reads one binary batch file, validating size and label range.
pub fn load_cifar10_batch(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{}: size {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= NUM_CLASSES {
            return Err(Error::Format(format!(
                "{}: record {r} has label {label}, expected 0..=9",
                path.display()
            )));
        }
        labels.push(label);
        images.extend_from_slice(&record[1..]);
    }
    Ok(Dataset {
        images,
        labels,
        source_file: path.display().to_string(),
        record_ids: (0..n as u32).collect(),
    })
}

/// Byte images to reals in `[0, 1]` by dividing by 255, shaped `N x 3 x 32 x 32`.
pub fn normalize<T: Scalar>(ds: &Dataset) -> Result<Tensor<T>> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::Input("cannot normalize an empty dataset".into()));
    }
    let inv = T::ONE / T::from_f64(255.0);
    let data: Vec<T> = ds.images.iter().map(|&b| T::from_f64(b as f64) * inv).collect();
    Tensor::from_vec(&[n, 3, IMAGE_SIDE, IMAGE_SIDE], data)
}

/// Optional preprocessing step: removes a per-channel mean in place.
pub fn subtract_channel_mean<T: Scalar>(x: &mut Tensor<T>, mean: [f64; 3]) -> Result<()> {
    if x.rank() != 4 || x.dim(1) != 3 {
        return Err(Error::Shape(format!(
            "expected Nx3xHxW tensor, got {:?}",
            x.shape()
        )));
    }
    let hw = x.dim(2) * x.dim(3);
    let n = x.dim(0);
    let data = x.data_mut();
    for s in 0..n {
        for c in 0..3 {
            let m = T::from_f64(mean[c]);
            for v in &mut data[(s * 3 + c) * hw..(s * 3 + c + 1) * hw] {
                *v -= m;
            }
        }
    }
    Ok(())
}
