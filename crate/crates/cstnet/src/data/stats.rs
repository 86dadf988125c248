//! Channel statistics: every pixel is one R^3 observation on the [0,1]
//! scale; mean and covariance (divisor n-1) are accumulated at f64 in a
//! fixed order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::cifar::Dataset;

#[derive(Debug, Clone, Copy)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
}

impl ChannelStats {
    /// Largest absolute asymmetry, which should be ~0 up to rounding.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.cov[i][j] - self.cov[j][i]).abs());
            }
        }
        worst
    }
}

fn stats_from_pixels(mut next: impl FnMut() -> Option<[f64; 3]>, count: usize) -> Result<ChannelStats> {
    if count < 2 {
        return Err(Error::Input(format!(
            "need at least 2 pixels for covariance, got {count}"
        )));
    }
    let mut sum = [0.0f64; 3];
    let mut prod = [[0.0f64; 3]; 3];
    let mut seen = 0usize;
    while let Some(p) = next() {
        for c in 0..3 {
            sum[c] += p[c];
        }
        for i in 0..3 {
            for j in 0..3 {
                prod[i][j] += p[i] * p[j];
            }
        }
        seen += 1;
    }
    debug_assert_eq!(seen, count);
    let n = count as f64;
    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let mut cov = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = (prod[i][j] - n * mean[i] * mean[j]) / (n - 1.0);
        }
    }
    Ok(ChannelStats { mean, cov })
}

/// Statistics over every pixel of every image in the dataset.
pub fn channel_stats(ds: &Dataset) -> Result<ChannelStats> {
    const HW: usize = 32 * 32;
    let count = ds.len() * HW;
    let mut img = 0usize;
    let mut px = 0usize;
    stats_from_pixels(
        || {
            if img >= ds.len() {
                return None;
            }
            let bytes = ds.image_bytes(img);
            let p = [
                bytes[px] as f64 / 255.0,
                bytes[HW + px] as f64 / 255.0,
                bytes[2 * HW + px] as f64 / 255.0,
            ];
            px += 1;
            if px == HW {
                px = 0;
                img += 1;
            }
            Some(p)
        },
        count,
    )
}

/// Statistics over an already-normalized (or transformed) `N x 3 x H x W`
/// tensor; used to verify whitening output.
pub fn channel_stats_tensor<T: Scalar>(x: &Tensor<T>) -> Result<ChannelStats> {
    if x.rank() != 4 || x.dim(1) != 3 {
        return Err(Error::Shape(format!(
            "expected Nx3xHxW tensor, got {:?}",
            x.shape()
        )));
    }
    let (n, hw) = (x.dim(0), x.dim(2) * x.dim(3));
    let count = n * hw;
    let data = x.data();
    let mut img = 0usize;
    let mut px = 0usize;
    stats_from_pixels(
        || {
            if img >= n {
                return None;
            }
            let base = img * 3 * hw;
            let p = [
                data[base + px].to_f64(),
                data[base + hw + px].to_f64(),
                data[base + 2 * hw + px].to_f64(),
            ];
            px += 1;
            if px == hw {
                px = 0;
                img += 1;
            }
            Some(p)
        },
        count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset_from_images(images: Vec<[u8; 3072]>) -> Dataset {
        let n = images.len();
        Dataset {
            images: images.into_iter().flatten().collect(),
            labels: vec![0; n],
            source_file: "toy".into(),
            record_ids: (0..n as u32).collect(),
        }
    }

    #[test]
    fn single_color_images_have_zero_covariance() {
        let mut img = [0u8; 3072];
        for (i, v) in img.iter_mut().enumerate() {
            *v = match i / 1024 {
                0 => 100,
                1 => 150,
                _ => 200,
            };
        }
        let ds = dataset_from_images(vec![img; 3]);
        let s = channel_stats(&ds).unwrap();
        assert!((s.mean[0] - 100.0 / 255.0).abs() < 1e-12);
        assert!((s.mean[2] - 200.0 / 255.0).abs() < 1e-12);
        for row in &s.cov {
            for &v in row {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_pixel_hand_case() {
        // Pixels (0,0,0) and (1,1,1): mean 0.5 each, covariance 0.5
        // everywhere under the n-1 divisor.
        let x = Tensor::<f64>::from_vec(&[2, 3, 1, 1], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
            .unwrap();
        let s = channel_stats_tensor(&x).unwrap();
        for c in 0..3 {
            assert!((s.mean[c] - 0.5).abs() < 1e-15);
        }
        for row in &s.cov {
            for &v in row {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_pixel_rejected() {
        let x = Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            channel_stats_tensor(&x),
            Err(Error::Input(_))
        ));
    }

    /// Flat double-loop oracle over a random dataset.
    #[test]
    fn matches_double_loop_oracle() {
        let mut state = 0x12345u64;
        let mut next_byte = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u8
        };
        let images: Vec<[u8; 3072]> = (0..5)
            .map(|_| {
                let mut img = [0u8; 3072];
                for v in img.iter_mut() {
                    *v = next_byte();
                }
                img
            })
            .collect();
        let ds = dataset_from_images(images.clone());
        let got = channel_stats(&ds).unwrap();

        // Oracle: gather all pixels, then textbook two-pass mean/cov.
        let mut pixels: Vec<[f64; 3]> = Vec::new();
        for img in &images {
            for p in 0..1024 {
                pixels.push([
                    img[p] as f64 / 255.0,
                    img[1024 + p] as f64 / 255.0,
                    img[2048 + p] as f64 / 255.0,
                ]);
            }
        }
        let n = pixels.len() as f64;
        let mut mean = [0.0f64; 3];
        for p in &pixels {
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = [[0.0f64; 3]; 3];
        for p in &pixels {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
                }
            }
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= n - 1.0;
            }
        }

        for c in 0..3 {
            assert!((got.mean[c] - mean[c]).abs() < 1e-9);
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((got.cov[i][j] - cov[i][j]).abs() < 1e-9);
            }
        }
        assert!(got.asymmetry() < 1e-9);
    }
}
