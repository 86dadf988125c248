//! 2-D convolution (cross-correlation, no kernel flip) lowered onto
//! im2col + matmul. The backward pass reuses the cached column matrix.

use crate::error::{Error, Result};
use crate::ops::{col2im, im2col, matmul, transpose2, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Conv2dCache<T: Scalar> {
    cols: Tensor<T>,
    geom: ConvGeom,
    c_out: usize,
}

fn check_weight<T: Scalar>(weight: &Tensor<T>, bias: &Tensor<T>, g: &ConvGeom) -> Result<usize> {
    if weight.rank() != 4 || weight.dim(1) != g.c || weight.dim(2) != g.kh || weight.dim(3) != g.kw
    {
        return Err(Error::Shape(format!(
            "conv weight {:?} does not match input channels {} and kernel {}x{}",
            weight.shape(),
            g.c,
            g.kh,
            g.kw
        )));
    }
    let c_out = weight.dim(0);
    if bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv bias {:?} must have one entry per output channel ({c_out})",
            bias.shape()
        )));
    }
    Ok(c_out)
}

/// Forward: `y = weight (*) x + bias`, output `N x Cout x Ho x Wo`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let g = ConvGeom::new(x.shape(), weight.dim(2), weight.dim(3), stride, pad)?;
    let c_out = check_weight(weight, bias, &g)?;
    let cols = im2col(x, g.kh, g.kw, stride, pad)?;
    let wmat = weight.reshape(&[c_out, g.c * g.kh * g.kw])?;
    let prod = matmul(&wmat, &cols)?; // c_out x (n*out_h*out_w)

    let mut y = Tensor::zeros(&[g.n, c_out, g.out_h, g.out_w])?;
    let per_sample = g.out_h * g.out_w;
    let total = g.n * per_sample;
    let pd = prod.data();
    let bd = bias.data();
    let yd = y.data_mut();
    for co in 0..c_out {
        let row = &pd[co * total..(co + 1) * total];
        let b = bd[co];
        for n in 0..g.n {
            let dst = &mut yd[(n * c_out + co) * per_sample..(n * c_out + co + 1) * per_sample];
            let src = &row[n * per_sample..(n + 1) * per_sample];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    Ok((y, Conv2dCache { cols, geom: g, c_out }))
}

/// Backward: gradients for input, weight, and bias from the upstream `dy`.
pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = &cache.geom;
    let c_out = cache.c_out;
    if dy.shape() != [g.n, c_out, g.out_h, g.out_w] {
        return Err(Error::Shape(format!(
            "conv upstream gradient {:?} does not match output {:?}",
            dy.shape(),
            [g.n, c_out, g.out_h, g.out_w]
        )));
    }
    let per_sample = g.out_h * g.out_w;
    let total = g.n * per_sample;

    // Regroup dy from N,Cout,Ho,Wo to Cout x (N*Ho*Wo) to match the columns.
    let mut dy_mat = Tensor::zeros(&[c_out, total])?;
    {
        let dyd = dy.data();
        let dm = dy_mat.data_mut();
        for n in 0..g.n {
            for co in 0..c_out {
                let src = &dyd[(n * c_out + co) * per_sample..(n * c_out + co + 1) * per_sample];
                let dst = &mut dm[co * total + n * per_sample..co * total + (n + 1) * per_sample];
                dst.copy_from_slice(src);
            }
        }
    }

    let dweight = matmul(&dy_mat, &transpose2(&cache.cols)?)?
        .reshape(&[c_out, g.c, g.kh, g.kw])?;

    let mut dbias = Tensor::zeros(&[c_out])?;
    {
        let dm = dy_mat.data();
        let db = dbias.data_mut();
        for co in 0..c_out {
            let mut acc = T::ZERO;
            for &v in &dm[co * total..(co + 1) * total] {
                acc += v;
            }
            db[co] = acc;
        }
    }

    let wmat = weight.reshape(&[c_out, g.c * g.kh * g.kw])?;
    let dcols = matmul(&transpose2(&wmat)?, &dy_mat)?;
    let dx = col2im(&dcols, g)?;
    Ok((dx, dweight, dbias))
}
