//! Raw numeric kernels: dense matmul and the im2col/col2im pair that
//! convolution is lowered onto. Reductions accumulate left-to-right over the
//! contraction index so results are bitwise reproducible run to run.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// C = A x B for 2-D tensors, `m x k` times `k x n`.
///
/// For each output element the sum over `t` runs in ascending order.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul expects 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.dim(0), a.dim(1));
    let (kb, n) = (b.dim(0), b.dim(1));
    if k != kb {
        return Err(Error::Shape(format!(
            "matmul inner extents differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = Tensor::zeros(&[m, n])?;
    let a_data = a.data();
    let b_data = b.data();
    let c_data = c.data_mut();
    for i in 0..m {
        let a_row = &a_data[i * k..(i + 1) * k];
        let c_row = &mut c_data[i * n..(i + 1) * n];
        for (t, &a_it) in a_row.iter().enumerate() {
            let b_row = &b_data[t * n..(t + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += a_it * bv;
            }
        }
    }
    Ok(c)
}

/// Transpose of a 2-D tensor.
pub fn transpose2<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 {
        return Err(Error::Shape(format!(
            "transpose2 expects a 2-D tensor, got {:?}",
            a.shape()
        )));
    }
    let (m, n) = (a.dim(0), a.dim(1));
    let mut out = Tensor::zeros(&[n, m])?;
    for i in 0..m {
        for j in 0..n {
            out.set2(j, i, a.at2(i, j));
        }
    }
    Ok(out)
}

/// Convolution geometry shared by im2col/col2im and the conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        input_shape: &[usize],
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::Shape(format!(
                "expected N,C,H,W input, got {input_shape:?}"
            )));
        }
        let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} and stride {stride} must all be >= 1"
            )));
        }
        let span_h = (h + 2 * pad)
            .checked_sub(kh)
            .ok_or_else(|| Error::Shape(format!("kernel height {kh} exceeds padded input {h}+2*{pad}")))?;
        let span_w = (w + 2 * pad)
            .checked_sub(kw)
            .ok_or_else(|| Error::Shape(format!("kernel width {kw} exceeds padded input {w}+2*{pad}")))?;
        if span_h % stride != 0 || span_w % stride != 0 {
            return Err(Error::Shape(format!(
                "geometry not divisible: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: span_h / stride + 1,
            out_w: span_w / stride + 1,
        })
    }
}

/// Unrolls receptive-field patches into columns.
///
/// Output is `(C*kh*kw) x (N*out_h*out_w)`; each column is one patch,
/// channel-major then row-major within the patch. Padding reads as zero.
pub fn im2col<T: Scalar>(
    x: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), kh, kw, stride, pad)?;
    let rows = g.c * g.kh * g.kw;
    let cols = g.n * g.out_h * g.out_w;
    let mut out = Tensor::zeros(&[rows, cols])?;
    let xd = x.data();
    let od = out.data_mut();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let out_row = &mut od[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let x_chan = &xd[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oh in 0..g.out_h {
                        // Input row this kernel element reads at output row `oh`,
                        // counted from the padded origin.
                        let ih = oh * g.stride + ki;
                        let col_base = (n * g.out_h + oh) * g.out_w;
                        if ih < g.pad || ih >= g.h + g.pad {
                            continue; // stays zero
                        }
                        let x_row = &x_chan[(ih - g.pad) * g.w..(ih - g.pad + 1) * g.w];
                        for ow in 0..g.out_w {
                            let iw = ow * g.stride + kj;
                            if iw < g.pad || iw >= g.w + g.pad {
                                continue;
                            }
                            out_row[col_base + ow] = x_row[iw - g.pad];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlapping
/// contributions, producing an `N,C,H,W` tensor of the given geometry.
pub fn col2im<T: Scalar>(cols: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<T>> {
    let rows = g.c * g.kh * g.kw;
    let ncols = g.n * g.out_h * g.out_w;
    if cols.rank() != 2 || cols.dim(0) != rows || cols.dim(1) != ncols {
        return Err(Error::Shape(format!(
            "col2im expects {rows}x{ncols} columns for this geometry, got {:?}",
            cols.shape()
        )));
    }
    let mut x = Tensor::zeros(&[g.n, g.c, g.h, g.w])?;
    let cd = cols.data();
    let xd = x.data_mut();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let col_row = &cd[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let x_chan =
                        &mut xd[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oh in 0..g.out_h {
                        let ih = oh * g.stride + ki;
                        if ih < g.pad || ih >= g.h + g.pad {
                            continue;
                        }
                        let col_base = (n * g.out_h + oh) * g.out_w;
                        for ow in 0..g.out_w {
                            let iw = ow * g.stride + kj;
                            if iw < g.pad || iw >= g.w + g.pad {
                                continue;
                            }
                            x_chan[(ih - g.pad) * g.w + (iw - g.pad)] += col_row[col_base + ow];
                        }
                    }
                }
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    /// Naive triple-loop reference used as the matmul oracle.
    fn matmul_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let mut c = Tensor::zeros(&[m, n]).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for t in 0..k {
                    acc += a.at2(i, t) * b.at2(t, j);
                }
                c.set2(i, j, acc);
            }
        }
        c
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut eye = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        eye.set2(0, 0, 1.0);
        eye.set2(1, 1, 1.0);
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = matmul(&eye, &a).unwrap();
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn matmul_column_selection() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![0.0f32, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = RngStream::new(11, "matmul.oracle");
        for _ in 0..20 {
            let a = Tensor::<f32>::normal(&[5, 4], 1.0, &mut rng).unwrap();
            let b = Tensor::<f32>::normal(&[4, 3], 1.0, &mut rng).unwrap();
            let got = matmul(&a, &b).unwrap();
            let want = matmul_oracle(&a, &b);
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-6, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatched_inner_extents() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn im2col_1x1_kernel_flattens_input() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, 1, 1, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn im2col_full_image_patch() {
        let x =
            Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let cols = im2col(&x, 3, 3, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn im2col_rejects_non_divisible_geometry() {
        let x = Tensor::<f32>::zeros(&[1, 1, 5, 5]).unwrap();
        assert!(matches!(im2col(&x, 2, 2, 2, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), g> == <x, col2im(g)> is the correctness core of conv
        // backward; checked on random instances at f32.
        let mut rng = RngStream::new(3, "adjoint");
        for &(kh, stride, pad, side) in &[
            (3usize, 1usize, 1usize, 8usize),
            (3, 2, 1, 9),
            (2, 2, 0, 8),
            (5, 1, 2, 8),
        ] {
            let x = Tensor::<f32>::normal(&[2, 3, side, side], 1.0, &mut rng).unwrap();
            let g = ConvGeom::new(x.shape(), kh, kh, stride, pad).unwrap();
            let cols = im2col(&x, kh, kh, stride, pad).unwrap();
            let grad = Tensor::<f32>::normal(cols.shape(), 1.0, &mut rng).unwrap();
            let back = col2im(&grad, &g).unwrap();

            let lhs: f64 = cols
                .data()
                .iter()
                .zip(grad.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            let rhs: f64 = x
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum();
            assert!(
                (lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0),
                "adjointness violated: {lhs} vs {rhs} (k={kh} s={stride} p={pad})"
            );
        }
    }

    #[test]
    fn kernels_are_bitwise_deterministic() {
        let mut r1 = RngStream::new(9, "det");
        let mut r2 = RngStream::new(9, "det");
        let a1 = Tensor::<f32>::normal(&[7, 6], 1.0, &mut r1).unwrap();
        let b1 = Tensor::<f32>::normal(&[6, 5], 1.0, &mut r1).unwrap();
        let a2 = Tensor::<f32>::normal(&[7, 6], 1.0, &mut r2).unwrap();
        let b2 = Tensor::<f32>::normal(&[6, 5], 1.0, &mut r2).unwrap();
        let c1 = matmul(&a1, &b1).unwrap();
        let c2 = matmul(&a2, &b2).unwrap();
        assert_eq!(c1.data(), c2.data());
    }
}
