//! Steering-vector algebra for a half-wavelength uniform linear array.
//!
//! Angles cross every public interface in degrees and are converted to
//! radians once, here. Element `m` of the steering vector toward `θ` is
//! `exp(-j·m·π·sin θ)`; the derivative is taken with respect to `θ` in
//! radians.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a partly calibrated ULA: `num_sensors` elements, of which the
/// leading `num_calibrated` have known unit response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UlaConfig {
    num_sensors: usize,
    num_calibrated: usize,
}

impl UlaConfig {
    pub fn new(num_sensors: usize, num_calibrated: usize) -> Result<Self> {
        if num_calibrated < 2 || num_calibrated > num_sensors {
            return Err(Error::domain(format!(
                "need 2 <= num_calibrated <= num_sensors, got M = {num_sensors}, M_c = {num_calibrated}"
            )));
        }
        Ok(Self {
            num_sensors,
            num_calibrated,
        })
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    pub fn num_calibrated(&self) -> usize {
        self.num_calibrated
    }

    /// Length of the stage-one augmented covariance vector, `2·M_c − 1`.
    pub fn stage1_len(&self) -> usize {
        2 * self.num_calibrated - 1
    }

    /// Length of the stage-two augmented covariance vector, `2·M − 1`.
    pub fn stage2_len(&self) -> usize {
        2 * self.num_sensors - 1
    }
}

/// Uniformly spaced, strictly increasing angles in (−90°, 90°].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid {
    angles: Vec<f64>,
    resolution: f64,
}

const GRID_SPACING_TOL: f64 = 1e-12;

impl AngularGrid {
    /// Full-domain grid `{−90 + r, −90 + 2r, …}` up to and including 90° when
    /// `r` divides 180. Both endpoints are never present together, since ±90°
    /// alias to the same steering vector.
    pub fn full(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution <= 90.0) || !resolution.is_finite() {
            return Err(Error::domain(format!(
                "grid resolution must lie in (0, 90] degrees, got {resolution}"
            )));
        }
        let count = ((180.0 / resolution) + 1e-9).floor() as usize;
        let angles = (1..=count)
            .map(|i| -90.0 + i as f64 * resolution)
            .collect();
        Self::new(angles, resolution)
    }

    /// Grid `start, start + r, …` up to `end` inclusive (within rounding).
    pub fn span(start: f64, end: f64, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) || end < start {
            return Err(Error::domain(format!(
                "invalid grid span [{start}, {end}] at resolution {resolution}"
            )));
        }
        let count = ((end - start) / resolution + 1e-9).floor() as usize + 1;
        let angles = (0..count).map(|i| start + i as f64 * resolution).collect();
        Self::new(angles, resolution)
    }

    pub fn new(angles: Vec<f64>, resolution: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::domain("angular grid is empty"));
        }
        for &a in &angles {
            check_angle(a)?;
        }
        for w in angles.windows(2) {
            if ((w[1] - w[0]) - resolution).abs() > GRID_SPACING_TOL {
                return Err(Error::domain(format!(
                    "grid spacing {} between {} and {} differs from resolution {resolution}",
                    w[1] - w[0],
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self { angles, resolution })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Index of the grid point closest to `theta_deg`.
    pub fn nearest_index(&self, theta_deg: f64) -> usize {
        let first = self.angles[0];
        let idx = ((theta_deg - first) / self.resolution).round();
        idx.clamp(0.0, (self.angles.len() - 1) as f64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DictionaryKind {
    /// Columns `b(θ)` of length `2·M_c − 1`.
    Stage1Augmented,
    /// Columns `c(θ)` of length `2·M − 1`.
    Stage2Augmented,
}

/// Grid dictionary of augmented steering vectors.
#[derive(Debug, Clone)]
pub struct Dictionary {
    columns: DMatrix<Complex64>,
    kind: DictionaryKind,
    grid: AngularGrid,
    norm_sq: OnceLock<f64>,
}

impl Dictionary {
    pub fn columns(&self) -> &DMatrix<Complex64> {
        &self.columns
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn nrows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    /// Squared norm of the dictionary acting on real coefficient vectors,
    /// computed once on first use.
    pub fn operator_norm_sq(&self) -> f64 {
        *self
            .norm_sq
            .get_or_init(|| crate::sparse_opt::dictionary_norm_sq(&self.columns))
    }
}

pub(crate) fn check_angle(theta_deg: f64) -> Result<()> {
    if theta_deg > -90.0 && theta_deg <= 90.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "angle {theta_deg} deg outside (-90, 90]"
        )))
    }
}

/// Unchecked steering vector for an angle in radians. Used by the simulator,
/// where perturbed path angles may leave (−90°, 90°].
pub(crate) fn steering_rad(theta_rad: f64, num_sensors: usize) -> DVector<Complex64> {
    let phase = -PI * theta_rad.sin();
    DVector::from_iterator(
        num_sensors,
        (0..num_sensors).map(|m| {
            if m == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, m as f64 * phase)
            }
        }),
    )
}

/// Steering vector `a(θ)`; element `m` is `exp(−j·m·π·sin θ)`.
pub fn steering(theta_deg: f64, num_sensors: usize) -> Result<DVector<Complex64>> {
    check_angle(theta_deg)?;
    if num_sensors == 0 {
        return Err(Error::domain("steering vector needs at least one sensor"));
    }
    Ok(steering_rad(theta_deg.to_radians(), num_sensors))
}

/// `∂a/∂θ` with θ in radians: element `m` is `(−j·m·π·cos θ)·exp(−j·m·π·sin θ)`.
pub fn steering_derivative(theta_deg: f64, num_sensors: usize) -> Result<DVector<Complex64>> {
    check_angle(theta_deg)?;
    if num_sensors == 0 {
        return Err(Error::domain("steering vector needs at least one sensor"));
    }
    let theta = theta_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    Ok(DVector::from_iterator(
        num_sensors,
        (0..num_sensors).map(|m| {
            if m == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                let mf = m as f64;
                Complex64::new(0.0, -mf * PI * cos) * Complex64::from_polar(1.0, -mf * PI * sin)
            }
        }),
    ))
}

/// Conjugate-symmetric augmented steering vector of half-length `n`:
/// element `i` is `exp(j·(n−1−i)·π·sin θ)`, `i = 0..2n−2`.
fn augmented_steering(theta_deg: f64, n: usize) -> Result<DVector<Complex64>> {
    check_angle(theta_deg)?;
    if n < 2 {
        return Err(Error::domain(format!(
            "augmented steering needs half-length >= 2, got {n}"
        )));
    }
    let phase = PI * theta_deg.to_radians().sin();
    let len = 2 * n - 1;
    let mut v = DVector::from_element(len, Complex64::new(1.0, 0.0));
    for k in 1..n {
        let e = Complex64::from_polar(1.0, k as f64 * phase);
        v[n - 1 - k] = e;
        v[n - 1 + k] = e.conj();
    }
    Ok(v)
}

/// Stage-one augmented steering vector `b(θ)` (length `2·M_c − 1`).
pub fn augmented_steering_b(theta_deg: f64, num_calibrated: usize) -> Result<DVector<Complex64>> {
    augmented_steering(theta_deg, num_calibrated)
}

/// Stage-two augmented steering vector `c(θ)` (length `2·M − 1`).
pub fn augmented_steering_c(theta_deg: f64, num_sensors: usize) -> Result<DVector<Complex64>> {
    augmented_steering(theta_deg, num_sensors)
}

pub fn build_dictionary(
    grid: &AngularGrid,
    kind: DictionaryKind,
    config: &UlaConfig,
) -> Result<Dictionary> {
    if grid.is_empty() {
        return Err(Error::domain("cannot build a dictionary on an empty grid"));
    }
    let half = match kind {
        DictionaryKind::Stage1Augmented => config.num_calibrated(),
        DictionaryKind::Stage2Augmented => config.num_sensors(),
    };
    let rows = 2 * half - 1;
    let mut columns = DMatrix::zeros(rows, grid.len());
    for (g, &theta) in grid.angles().iter().enumerate() {
        columns.set_column(g, &augmented_steering(theta, half)?);
    }
    Ok(Dictionary {
        columns,
        kind,
        grid: grid.clone(),
        norm_sq: OnceLock::new(),
    })
}

/// Matrix whose columns are `a(θ_k)` for the given angles.
pub fn steering_matrix(thetas_deg: &[f64], num_sensors: usize) -> Result<DMatrix<Complex64>> {
    let mut a = DMatrix::zeros(num_sensors, thetas_deg.len());
    for (k, &theta) in thetas_deg.iter().enumerate() {
        a.set_column(k, &steering(theta, num_sensors)?);
    }
    Ok(a)
}

/// Matrix whose columns are `b(θ_k)` (half-length `n`).
pub fn augmented_matrix(thetas_deg: &[f64], n: usize) -> Result<DMatrix<Complex64>> {
    let mut b = DMatrix::zeros(2 * n - 1, thetas_deg.len());
    for (k, &theta) in thetas_deg.iter().enumerate() {
        b.set_column(k, &augmented_steering(theta, n)?);
    }
    Ok(b)
}
