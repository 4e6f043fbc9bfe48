//! Sample covariance and the derived covariance vectors.
//!
//! The first covariance column carries no angular-spread term, because the
//! derivative steering vector vanishes at the reference element. Every vector
//! fed to the sparse stages is built from that column.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::array_model::UlaConfig;
use crate::error::{Error, Result};
use crate::scene_sim::SnapshotMatrix;

const MIN_GAIN_MODULUS: f64 = 1e-9;

/// `R = (1/N)·Z·Zᴴ`, symmetrized to be exactly Hermitian.
pub fn sample_covariance(z: &SnapshotMatrix) -> DMatrix<Complex64> {
    let data = z.data();
    let n = data.ncols() as f64;
    let mut r = data * data.adjoint();
    r /= Complex64::new(n, 0.0);
    hermitian_part(&r)
}

pub(crate) fn hermitian_part(r: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let m = r.nrows();
    let mut out = r.clone();
    for i in 0..m {
        out[(i, i)] = Complex64::new(r[(i, i)].re, 0.0);
        for j in (i + 1)..m {
            let v = (r[(i, j)] + r[(j, i)].conj()) * 0.5;
            out[(i, j)] = v;
            out[(j, i)] = v.conj();
        }
    }
    out
}

/// Ascending real eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(r: &DMatrix<Complex64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(r.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Mean of the `M − k_max` smallest eigenvalues of `R`, floored at zero.
pub fn estimate_noise_variance(r: &DMatrix<Complex64>, k_max: usize) -> Result<f64> {
    let m = r.nrows();
    if k_max < 1 || k_max >= m {
        return Err(Error::domain(format!(
            "source-count bound must satisfy 1 <= K_max < M = {m}, got {k_max}"
        )));
    }
    let vals = hermitian_eigenvalues(r);
    let tail = &vals[..m - k_max];
    Ok((tail.iter().sum::<f64>() / tail.len() as f64).max(0.0))
}

/// First `M_c` entries of the first column, noise removed from the diagonal entry.
pub fn extract_rc(
    r: &DMatrix<Complex64>,
    config: &UlaConfig,
    noise_var: f64,
) -> Result<DVector<Complex64>> {
    check_noise(noise_var)?;
    check_square(r, config.num_sensors())?;
    let mut rc: DVector<Complex64> = r.view((0, 0), (config.num_calibrated(), 1)).column(0).into_owned();
    rc[0] -= noise_var;
    Ok(rc)
}

/// Full first column, noise removed from the diagonal entry.
pub fn extract_r2(r: &DMatrix<Complex64>, noise_var: f64) -> Result<DVector<Complex64>> {
    check_noise(noise_var)?;
    if r.nrows() == 0 || r.ncols() == 0 {
        return Err(Error::domain("empty covariance matrix"));
    }
    let mut r2: DVector<Complex64> = r.column(0).into_owned();
    r2[0] -= noise_var;
    Ok(r2)
}

/// `[flip(conj(v)), v[1..]]`; the center element is `v[0]`.
pub fn conjugate_augment(v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::domain(format!(
            "augmentation needs at least two entries, got {n}"
        )));
    }
    Ok(DVector::from_iterator(
        2 * n - 1,
        (0..n).rev().map(|i| v[i].conj()).chain((1..n).map(|i| v[i])),
    ))
}

/// Stage-one augmented vector `r_1` from `r_c`.
pub fn augment_r1(rc: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    conjugate_augment(rc)
}

/// Stage-two augmented vector `r_4` from the compensated column `r_3`.
pub fn augment_r4(r3: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    conjugate_augment(r3)
}

/// Undo the diagonal gain-phase matrix. `(Ξ̂ᴴΞ̂)⁻¹Ξ̂ᴴ·r_2` is elementwise
/// division for diagonal `Ξ̂`.
pub fn compensate(r2: &DVector<Complex64>, g_hat: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if r2.len() != g_hat.len() {
        return Err(Error::DimensionMismatch {
            what: "gain-phase estimate length",
            expected: r2.len(),
            actual: g_hat.len(),
        });
    }
    if let Some(index) = g_hat.iter().position(|g| !(g.norm() >= MIN_GAIN_MODULUS)) {
        return Err(Error::DegenerateGain {
            index,
            modulus: g_hat[index].norm(),
        });
    }
    Ok(r2.zip_map(g_hat, |r, g| r / g))
}

/// Sample covariance with the vectors used by the first stage and the
/// uncompensated first column used by the second.
#[derive(Debug, Clone)]
pub struct CovarianceProducts {
    pub r: DMatrix<Complex64>,
    pub noise_var: f64,
    pub r_c: DVector<Complex64>,
    pub r_1: DVector<Complex64>,
    pub r_2: DVector<Complex64>,
}

impl CovarianceProducts {
    pub fn new(r: DMatrix<Complex64>, config: &UlaConfig, noise_var: f64) -> Result<Self> {
        let r_c = extract_rc(&r, config, noise_var)?;
        let r_1 = augment_r1(&r_c)?;
        let r_2 = extract_r2(&r, noise_var)?;
        Ok(Self {
            r,
            noise_var,
            r_c,
            r_1,
            r_2,
        })
    }
}

fn check_noise(noise_var: f64) -> Result<()> {
    if noise_var >= 0.0 && noise_var.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("noise variance must be >= 0, got {noise_var}")))
    }
}

fn check_square(r: &DMatrix<Complex64>, m: usize) -> Result<()> {
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::DimensionMismatch {
            what: "covariance size",
            expected: m,
            actual: r.nrows(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{augmented_matrix, steering_matrix};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn asymptotic_r(thetas: &[f64], powers: &[f64], g: &DVector<Complex64>) -> DMatrix<Complex64> {
        let a = steering_matrix(thetas, g.len()).unwrap();
        let ga = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| g[i] * a[(i, j)]);
        let p = DMatrix::from_diagonal(&DVector::from_iterator(
            powers.len(),
            powers.iter().map(|&p| c(p, 0.0)),
        ));
        &ga * p * ga.adjoint()
    }

    #[test]
    fn covariance_of_single_column() {
        let z = DMatrix::from_column_slice(2, 1, &[c(1.0, 2.0), c(-0.5, 0.25)]);
        let r = sample_covariance(&SnapshotMatrix::new(z.clone()).unwrap());
        let expected = &z * z.adjoint();
        assert!((r - expected).norm() < 1e-15);
    }

    #[test]
    fn covariance_of_opposite_columns() {
        let z = DMatrix::from_column_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]);
        let r = sample_covariance(&SnapshotMatrix::new(z).unwrap());
        assert_eq!(r, DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)])));
    }

    #[test]
    fn noise_variance_examples() {
        let r = DMatrix::<Complex64>::identity(4, 4) * c(2.5, 0.0);
        assert!((estimate_noise_variance(&r, 1).unwrap() - 2.5).abs() < 1e-12);
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![
            c(5.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
        ]));
        assert!((estimate_noise_variance(&r, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(estimate_noise_variance(&r, 4).is_err());
        assert!(estimate_noise_variance(&r, 0).is_err());
    }

    #[test]
    fn rc_examples() {
        let cfg = UlaConfig::new(4, 3).unwrap();
        let g = DVector::from_element(4, c(1.0, 0.0));
        let r = asymptotic_r(&[0.0], &[1.0], &g) + DMatrix::identity(4, 4) * c(0.3, 0.0);
        let rc = extract_rc(&r, &cfg, 0.3).unwrap();
        assert!(rc.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-12));

        let cfg = UlaConfig::new(3, 2).unwrap();
        let g = DVector::from_element(3, c(1.0, 0.0));
        let r = asymptotic_r(&[0.0, 90.0], &[1.0, 1.0], &g);
        let rc = extract_rc(&r, &cfg, 0.0).unwrap();
        assert!((rc[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert!(rc[1].norm() < 1e-12);
        assert!(extract_rc(&r, &cfg, -1.0).is_err());
    }

    #[test]
    fn augmentation_examples() {
        let r1 = augment_r1(&DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)])).unwrap();
        assert_eq!(r1.as_slice(), &[c(0.0, -1.0), c(1.0, 0.0), c(0.0, 1.0)]);
        let r1 = augment_r1(&DVector::from_vec(vec![c(2.0, 0.0), c(0.0, 0.0)])).unwrap();
        assert_eq!(r1.as_slice(), &[c(0.0, 0.0), c(2.0, 0.0), c(0.0, 0.0)]);
        assert!(augment_r1(&DVector::from_vec(vec![c(1.0, 0.0)])).is_err());

        let mut e1 = DVector::zeros(5);
        e1[0] = c(1.0, 0.0);
        let r4 = augment_r4(&e1).unwrap();
        assert_eq!(r4.len(), 9);
        for (i, z) in r4.iter().enumerate() {
            let expected = if i == 4 { c(1.0, 0.0) } else { c(0.0, 0.0) };
            assert_eq!(*z, expected);
        }
    }

    #[test]
    fn augmented_vectors_match_dictionary_model() {
        // r_c = A_c·p ⇒ r_1 = B·p, and r_3 = A·p ⇒ r_4 = C·p.
        let thetas = [-20.0, 10.0, 20.0];
        let p = DVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0), c(0.5, 0.0)]);
        let a = steering_matrix(&thetas, 16).unwrap();
        let ap = &a * &p;
        let rc = ap.rows(0, 8).into_owned();
        let b = augmented_matrix(&thetas, 8).unwrap();
        assert!((augment_r1(&rc).unwrap() - &b * &p).norm() < 1e-12);
        let cm = augmented_matrix(&thetas, 16).unwrap();
        assert!((augment_r4(&ap).unwrap() - &cm * &p).norm() < 1e-12);
    }

    #[test]
    fn r2_and_compensation() {
        let cfg = UlaConfig::new(6, 3).unwrap();
        let phi = 0.7;
        let g = DVector::from_iterator(
            6,
            (0..6).map(|m| if m < 3 { c(1.0, 0.0) } else { Complex64::from_polar(1.0, phi) }),
        );
        let r = asymptotic_r(&[0.0], &[1.0], &g);
        let r2 = extract_r2(&r, 0.0).unwrap();
        for m in 3..6 {
            assert!((r2[m] - Complex64::from_polar(1.0, phi)).norm() < 1e-12);
        }
        let rc = extract_rc(&r, &cfg, 0.0).unwrap();
        assert_eq!(rc.as_slice(), &r2.as_slice()[..3]);

        let r3 = compensate(&r2, &g).unwrap();
        assert!(r3.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-12));

        let ones = DVector::from_element(6, c(1.0, 0.0));
        assert_eq!(compensate(&r2, &ones).unwrap(), r2);

        let mut bad = ones.clone();
        bad[4] = c(1e-10, 0.0);
        match compensate(&r2, &bad) {
            Err(Error::DegenerateGain { index, .. }) => assert_eq!(index, 4),
            other => panic!("expected degenerate gain, got {other:?}"),
        }
    }

    #[test]
    fn r2_recovers_gain_by_division() {
        let g = DVector::from_iterator(
            16,
            (0..16).map(|m| {
                if m < 8 {
                    c(1.0, 0.0)
                } else {
                    Complex64::from_polar(1.0 + 0.05 * (m as f64 - 11.0), 0.3 * (m as f64 - 12.0))
                }
            }),
        );
        let thetas = [10.0, 20.0];
        let r = asymptotic_r(&thetas, &[1.0, 1.0], &g);
        let r2 = extract_r2(&r, 0.0).unwrap();
        let ap = steering_matrix(&thetas, 16).unwrap() * DVector::from_element(2, c(1.0, 0.0));
        for m in 0..16 {
            assert!((r2[m] / ap[m] - g[m]).norm() < 1e-6);
        }
    }

    #[test]
    fn first_order_gain_sensitivity() {
        let thetas = [10.0, 20.0];
        let ap = steering_matrix(&thetas, 16).unwrap() * DVector::from_element(2, c(1.0, 0.0));
        let g = DVector::from_iterator(16, (0..16).map(|m| Complex64::from_polar(1.0, 0.1 * m as f64)));
        let r2 = ap.component_mul(&g);
        let delta = Complex64::from_polar(0.01, 0.4);
        let g_hat = g.map(|z| z * (c(1.0, 0.0) + delta));
        let r3 = compensate(&r2, &g_hat).unwrap();
        let rel = (r3 - &ap).norm() / ap.norm();
        // |1/(1+δ) − 1| = |δ|/|1+δ| ≤ 0.01/0.99
        assert!(rel <= 0.01 / 0.99 + 1e-12, "relative error {rel}");
    }
}
