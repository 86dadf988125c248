//! The color space transform layer: a 3x3 matrix applied to every pixel's
//! channel vector. Purely linear — no clamping, no nonlinearity — which is
//! what makes its backward pass a transpose map.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The transform matrix: one shared 3x3 map, or one per batch sample.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorMatrix<T: Scalar> {
    /// Single `3x3` matrix applied to every sample.
    Global(Tensor<T>),
    /// `N x 3 x 3`, one matrix per sample, as produced by the predictor head.
    PerSample(Tensor<T>),
}

impl<T: Scalar> ColorMatrix<T> {
    pub fn validate(&self, batch: usize) -> Result<()> {
        match self {
            ColorMatrix::Global(w) => {
                if w.shape() != [3, 3] {
                    return Err(Error::Shape(format!(
                        "global color matrix must be 3x3, got {:?}",
                        w.shape()
                    )));
                }
            }
            ColorMatrix::PerSample(w) => {
                if w.rank() != 3 || w.dim(1) != 3 || w.dim(2) != 3 {
                    return Err(Error::Shape(format!(
                        "per-sample color matrices must be Nx3x3, got {:?}",
                        w.shape()
                    )));
                }
                if w.dim(0) != batch {
                    return Err(Error::Shape(format!(
                        "got {} color matrices for a batch of {batch}",
                        w.dim(0)
                    )));
                }
            }
        }
        Ok(())
    }

    fn tensor(&self) -> &Tensor<T> {
        match self {
            ColorMatrix::Global(w) | ColorMatrix::PerSample(w) => w,
        }
    }

    /// Row-major 3x3 slice for sample `n`.
    fn sample(&self, n: usize) -> &[T] {
        match self {
            ColorMatrix::Global(w) => w.data(),
            ColorMatrix::PerSample(w) => &w.data()[n * 9..(n + 1) * 9],
        }
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, w: &ColorMatrix<T>) -> Result<()> {
    if x.rank() != 4 || x.dim(1) != 3 {
        return Err(Error::Shape(format!(
            "color transform expects an Nx3xHxW input, got {:?}",
            x.shape()
        )));
    }
    w.validate(x.dim(0))
}

/// `y[n,:,h,w] = W(n) * x[n,:,h,w]` for every sample and pixel.
pub fn color_transform_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &ColorMatrix<T>,
) -> Result<Tensor<T>> {
    color_transform_forward_biased(x, w, None)
}

/// Forward with an optional per-channel offset (config-gated; off by default).
pub fn color_transform_forward_biased<T: Scalar>(
    x: &Tensor<T>,
    w: &ColorMatrix<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_input(x, w)?;
    if !w.tensor().all_finite() {
        return Err(Error::Numeric("color matrix contains NaN or Inf".into()));
    }
    if let Some(b) = bias {
        if b.shape() != [3] {
            return Err(Error::Shape(format!(
                "color transform bias must have 3 entries, got {:?}",
                b.shape()
            )));
        }
    }
    let (n, hw) = (x.dim(0), x.dim(2) * x.dim(3));
    let mut y = Tensor::zeros(x.shape())?;
    let xd = x.data();
    let yd = y.data_mut();
    for s in 0..n {
        let m = w.sample(s);
        let planes = &xd[s * 3 * hw..(s + 1) * 3 * hw];
        let out = &mut yd[s * 3 * hw..(s + 1) * 3 * hw];
        for ch_out in 0..3 {
            let row = &m[ch_out * 3..ch_out * 3 + 3];
            let dst = &mut out[ch_out * hw..(ch_out + 1) * hw];
            let offset = bias.map_or(T::ZERO, |b| b.data()[ch_out]);
            for p in 0..hw {
                // Channel sum in ascending order, fixed for determinism.
                let v = row[0] * planes[p] + row[1] * planes[hw + p] + row[2] * planes[2 * hw + p];
                dst[p] = v + offset;
            }
        }
    }
    Ok(y)
}

/// Gradients of the transform: `dx = W^T dy` per pixel and
/// `dW(n) = sum_{h,w} dy[n,:,h,w] x[n,:,h,w]^T`, summed over the batch as
/// well in global mode. Summation order is fixed (pixels row-major, then
/// samples ascending).
pub fn color_transform_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &ColorMatrix<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, ColorMatrix<T>)> {
    let (dx, dw, _) = color_transform_backward_biased(x, w, dy, false)?;
    Ok((dx, dw))
}

/// Backward that also produces the bias gradient when the layer has one.
pub fn color_transform_backward_biased<T: Scalar>(
    x: &Tensor<T>,
    w: &ColorMatrix<T>,
    dy: &Tensor<T>,
    with_bias: bool,
) -> Result<(Tensor<T>, ColorMatrix<T>, Option<Tensor<T>>)> {
    check_input(x, w)?;
    if !x.same_shape(dy) {
        return Err(Error::Shape(format!(
            "upstream gradient shape {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let (n, hw) = (x.dim(0), x.dim(2) * x.dim(3));
    let mut dx = Tensor::zeros(x.shape())?;
    let mut dw_data = match w {
        ColorMatrix::Global(_) => vec![T::ZERO; 9],
        ColorMatrix::PerSample(_) => vec![T::ZERO; n * 9],
    };
    let mut db = if with_bias { vec![T::ZERO; 3] } else { vec![] };

    let xd = x.data();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for s in 0..n {
        let m = w.sample(s);
        let x_planes = &xd[s * 3 * hw..(s + 1) * 3 * hw];
        let dy_planes = &dyd[s * 3 * hw..(s + 1) * 3 * hw];
        let dx_planes = &mut dxd[s * 3 * hw..(s + 1) * 3 * hw];
        let dw_s = match w {
            ColorMatrix::Global(_) => &mut dw_data[0..9],
            ColorMatrix::PerSample(_) => &mut dw_data[s * 9..(s + 1) * 9],
        };
        for ch_in in 0..3 {
            let dst = &mut dx_planes[ch_in * hw..(ch_in + 1) * hw];
            for p in 0..hw {
                // dx = W^T dy: column `ch_in` of W against the dy channel vector.
                dst[p] = m[ch_in] * dy_planes[p]
                    + m[3 + ch_in] * dy_planes[hw + p]
                    + m[6 + ch_in] * dy_planes[2 * hw + p];
            }
        }
        for ch_out in 0..3 {
            let dy_plane = &dy_planes[ch_out * hw..(ch_out + 1) * hw];
            for ch_in in 0..3 {
                let x_plane = &x_planes[ch_in * hw..(ch_in + 1) * hw];
                let mut acc = T::ZERO;
                for p in 0..hw {
                    acc += dy_plane[p] * x_plane[p];
                }
                dw_s[ch_out * 3 + ch_in] += acc;
            }
            if with_bias {
                let mut acc = T::ZERO;
                for &g in dy_plane {
                    acc += g;
                }
                db[ch_out] += acc;
            }
        }
    }

    let dw = match w {
        ColorMatrix::Global(_) => ColorMatrix::Global(Tensor::from_vec(&[3, 3], dw_data)?),
        ColorMatrix::PerSample(_) => {
            ColorMatrix::PerSample(Tensor::from_vec(&[n, 3, 3], dw_data)?)
        }
    };
    let db = if with_bias {
        Some(Tensor::from_vec(&[3], db)?)
    } else {
        None
    };
    Ok((dx, dw, db))
}
