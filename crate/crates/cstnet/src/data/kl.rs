//! Fixed color transforms fitted from channel statistics: the KL rotation
//! (eigenbasis of the channel covariance) and whitening (rotation plus
//! inverse-sqrt eigenvalue scaling, giving ~identity output covariance).

use std::path::Path;

use crate::error::{Error, Result};

use super::stats::ChannelStats;

/// Eigenvalues below this are rejected in whitening mode; the same value is
/// added to every eigenvalue before the inverse square root as a regularizer.
pub const EIGENVALUE_FLOOR: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-9;
const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    /// Pure rotation into the eigenbasis (decorrelates channels).
    Rotation,
    /// Rotation plus per-component scaling to unit variance.
    Whitening,
}

impl KlMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(KlMode::Rotation),
            "whitening" => Ok(KlMode::Whitening),
            other => Err(Error::Input(format!(
                "unknown mode '{other}' (expected rotation or whitening)"
            ))),
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues descending and
/// eigenvectors as rows, each oriented so its largest-magnitude component is
/// positive. Satisfies `max|m - Q^T diag(vals) Q| < 1e-8`.
pub fn sym_eigen3(m: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *m;
    // v accumulates the rotations; its columns become the eigenvectors.
    let mut v = [[0.0f64; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &x| acc.max(x.abs()))
        .max(1e-300);
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off <= 1e-15 * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() <= 1e-18 * scale {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let rp = row[p];
                let rq = row[q];
                row[p] = c * rp - s * rq;
                row[q] = s * rp + c * rq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).expect("finite eigenvalues"));

    let mut vals = [0.0f64; 3];
    let mut vecs = [[0.0f64; 3]; 3]; // rows are eigenvectors
    for (rank, &col) in order.iter().enumerate() {
        vals[rank] = a[col][col];
        for k in 0..3 {
            vecs[rank][k] = v[k][col];
        }
        // Orient: largest-magnitude component positive.
        let mut lead = 0;
        for k in 1..3 {
            if vecs[rank][k].abs() > vecs[rank][lead].abs() {
                lead = k;
            }
        }
        if vecs[rank][lead] < 0.0 {
            for k in 0..3 {
                vecs[rank][k] = -vecs[rank][k];
            }
        }
    }
    (vals, vecs)
}

fn reconstruction_error(m: &[[f64; 3]; 3], vals: &[f64; 3], vecs: &[[f64; 3]; 3]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let mut r = 0.0;
            for k in 0..3 {
                r += vecs[k][i] * vals[k] * vecs[k][j];
            }
            worst = worst.max((r - m[i][j]).abs());
        }
    }
    worst
}

/// Fits a fixed 3x3 transform from channel statistics.
///
/// Rotation mode returns the eigenvector matrix Q^T (rows are eigenvectors,
/// descending eigenvalue order); whitening additionally scales each row by
/// `(lambda + floor)^(-1/2)` and rejects eigenvalues below the floor.
pub fn fit_kl_transform(stats: &ChannelStats, mode: KlMode) -> Result<[[f64; 3]; 3]> {
    let asym = stats.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Input(format!(
            "covariance is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    // Symmetrize away rounding residue before decomposing.
    let mut cov = stats.cov;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let v = 0.5 * (cov[i][j] + cov[j][i]);
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    let (vals, vecs) = sym_eigen3(&cov);
    let recon = reconstruction_error(&cov, &vals, &vecs);
    if recon > RECONSTRUCTION_TOL {
        return Err(Error::Numeric(format!(
            "eigendecomposition residual {recon:.3e} exceeds {RECONSTRUCTION_TOL:.0e}"
        )));
    }

    match mode {
        KlMode::Rotation => Ok(vecs),
        KlMode::Whitening => {
            if let Some(&bad) = vals.iter().find(|&&l| l < EIGENVALUE_FLOOR) {
                return Err(Error::Conditioning(format!(
                    "eigenvalue {bad:.6e} is below the whitening floor {EIGENVALUE_FLOOR:.0e}"
                )));
            }
            let mut w = vecs;
            for (row, &l) in w.iter_mut().zip(vals.iter()) {
                let s = 1.0 / (l + EIGENVALUE_FLOOR).sqrt();
                for v in row.iter_mut() {
                    *v *= s;
                }
            }
            Ok(w)
        }
    }
}

/// Writes a matrix as 9 ASCII reals, row-major, space-separated.
pub fn save_color_matrix(path: impl AsRef<Path>, m: &[[f64; 3]; 3]) -> Result<()> {
    let path = path.as_ref();
    let line = m
        .iter()
        .flatten()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ");
    std::fs::write(path, line + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_color_matrix(path: impl AsRef<Path>) -> Result<[[f64; 3]; 3]> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                Error::Format(format!("{}: '{tok}' is not a real number", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    if vals.len() != 9 {
        return Err(Error::Format(format!(
            "{}: expected 9 values, found {}",
            path.display(),
            vals.len()
        )));
    }
    let mut m = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = vals[i * 3 + j];
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_with_cov(cov: [[f64; 3]; 3]) -> ChannelStats {
        ChannelStats { mean: [0.0; 3], cov }
    }

    #[test]
    fn identity_covariance_is_already_white() {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let rot = fit_kl_transform(&stats_with_cov(eye), KlMode::Rotation).unwrap();
        let white = fit_kl_transform(&stats_with_cov(eye), KlMode::Whitening).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((rot[i][j] - want).abs() < 1e-12, "rotation {rot:?}");
                assert!((white[i][j] - want).abs() < 1e-5, "whitening {white:?}");
            }
        }
    }

    #[test]
    fn diagonal_covariance_whitens_to_inverse_sqrt() {
        let cov = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.25]];
        let w = it_fit(cov, KlMode::Whitening);
        let want = [0.5, 1.0, 2.0]; // descending eigenvalue order
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { want[i] } else { 0.0 };
                assert!(
                    (w[i][j] - expect).abs() < 1e-5,
                    "whitening[{i}][{j}] = {}, want {expect}",
                    w[i][j]
                );
            }
        }
    }

    fn it_fit(cov: [[f64; 3]; 3], mode: KlMode) -> [[f64; 3]; 3] {
        fit_kl_transform(&stats_with_cov(cov), mode).unwrap()
    }

    #[test]
    fn eigendecomposition_reconstructs_random_symmetric_matrices() {
        let mut state = 0xfeedu64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..50 {
            let (a, b, c, d, e, f) = (next(), next(), next(), next(), next(), next());
            let m = [[a, d, e], [d, b, f], [e, f, c]];
            let (vals, vecs) = sym_eigen3(&m);
            assert!(vals[0] >= vals[1] && vals[1] >= vals[2], "order {vals:?}");
            assert!(reconstruction_error(&m, &vals, &vecs) < 1e-8);
            // Rows are orthonormal.
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| vecs[i][k] * vecs[j][k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rotation_diagonalizes_the_covariance() {
        let cov = [[0.05, 0.03, 0.02], [0.03, 0.06, 0.025], [0.02, 0.025, 0.04]];
        let q = it_fit(cov, KlMode::Rotation);
        // q cov q^T should be diagonal.
        let mut out = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        out[i][j] += q[i][k] * cov[k][l] * q[j][l];
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(out[i][j].abs() < 1e-10, "off-diagonal {out:?}");
                }
            }
        }
        assert!(out[0][0] >= out[1][1] && out[1][1] >= out[2][2]);
    }

    #[test]
    fn degenerate_covariance_fails_whitening_loudly() {
        let cov = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let err = fit_kl_transform(&stats_with_cov(cov), KlMode::Whitening).unwrap_err();
        match err {
            Error::Conditioning(msg) => assert!(msg.contains("floor"), "{msg}"),
            other => panic!("expected conditioning error, got {other}"),
        }
        // Rotation mode still works on the same input.
        fit_kl_transform(&stats_with_cov(cov), KlMode::Rotation).unwrap();
    }

    #[test]
    fn matrix_file_round_trips() {
        let m = [[0.5, -0.25, 0.125], [1.0 / 3.0, 2.0, -7.5], [0.0, 1e-9, 42.0]];
        let f = tempfile::NamedTempFile::new().unwrap();
        save_color_matrix(f.path(), &m).unwrap();
        let back = load_color_matrix(f.path()).unwrap();
        assert_eq!(m, back);

        std::fs::write(f.path(), "1 2 3 4 5").unwrap();
        assert!(matches!(
            load_color_matrix(f.path()),
            Err(Error::Format(_))
        ));
    }
}
