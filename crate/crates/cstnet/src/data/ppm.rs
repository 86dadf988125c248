//! Binary PPM (P6) export for visualizing transformed images. Values are
//! clamped to [0,1] for display only and scaled to bytes with round-half-up.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Writes a `3 x H x W` image as binary PPM with header `P6\n<W> <H>\n255\n`.
pub fn export_ppm<T: Scalar>(image: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if image.rank() != 3 || image.dim(0) != 3 {
        return Err(Error::Shape(format!(
            "PPM export expects a 3xHxW image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let hw = h * w;
    let data = image.data();
    let mut bytes = Vec::with_capacity(hw * 3);
    for p in 0..hw {
        for c in 0..3 {
            let v = data[c * hw + p].to_f64().clamp(0.0, 1.0);
            bytes.push((v * 255.0 + 0.5).floor() as u8);
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(file, "P6\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}
