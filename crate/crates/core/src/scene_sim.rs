//! Ground-truth scenes and exact-model snapshots.
//!
//! Each snapshot is `z(t) = Ξ(g)·Σ_k s_k(t)·Σ_l γ_{k,l}(t)·a(θ_k + θ̃_{k,l}(t)) + e(t)`
//! with the exact steering vector at every perturbed path angle. Path gains
//! have variance `1/L`, so the composite per-source power equals `p_k`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array_model::{check_angle, steering_rad, UlaConfig};
use crate::error::{Error, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationLaw {
    #[default]
    Gaussian,
    /// Uniform on `[−√3·σ, √3·σ]`, which has standard deviation `σ`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTruth {
    pub theta_deg: f64,
    pub spread_deg: f64,
    pub power: f64,
    pub num_paths: usize,
    pub deviation_law: DeviationLaw,
}

impl SourceTruth {
    pub fn new(theta_deg: f64, spread_deg: f64, power: f64, num_paths: usize) -> Self {
        Self {
            theta_deg,
            spread_deg,
            power,
            num_paths,
            deviation_law: DeviationLaw::Gaussian,
        }
    }

    pub fn with_law(mut self, law: DeviationLaw) -> Self {
        self.deviation_law = law;
        self
    }

    fn validate(&self) -> Result<()> {
        check_angle(self.theta_deg)?;
        if !(self.spread_deg >= 0.0 && self.spread_deg.is_finite()) {
            return Err(Error::domain(format!(
                "angular spread must be >= 0, got {}",
                self.spread_deg
            )));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::domain(format!(
                "source power must be > 0, got {}",
                self.power
            )));
        }
        if self.num_paths == 0 {
            return Err(Error::domain("each source needs at least one path"));
        }
        Ok(())
    }
}

/// Complex per-sensor responses; the calibrated prefix is exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPhaseTruth {
    g: DVector<Complex64>,
}

impl GainPhaseTruth {
    pub fn new(g: DVector<Complex64>, config: &UlaConfig) -> Result<Self> {
        if g.len() != config.num_sensors() {
            return Err(Error::DimensionMismatch {
                what: "gain-phase vector length",
                expected: config.num_sensors(),
                actual: g.len(),
            });
        }
        if g.iter()
            .take(config.num_calibrated())
            .any(|&z| z != Complex64::new(1.0, 0.0))
        {
            return Err(Error::domain("calibrated sensors must have unit response"));
        }
        if let Some(index) = g.iter().position(|z| !(z.norm() > 0.0)) {
            return Err(Error::DegenerateGain { index, modulus: g[index].norm() });
        }
        Ok(Self { g })
    }

    pub fn ideal(config: &UlaConfig) -> Self {
        Self {
            g: DVector::from_element(config.num_sensors(), Complex64::new(1.0, 0.0)),
        }
    }

    pub fn g(&self) -> &DVector<Complex64> {
        &self.g
    }
}

#[derive(Debug, Clone)]
pub struct SceneTruth {
    ula: UlaConfig,
    sources: Vec<SourceTruth>,
    gain_phase: GainPhaseTruth,
    noise_var: f64,
}

impl SceneTruth {
    pub fn new(
        ula: UlaConfig,
        sources: Vec<SourceTruth>,
        gain_phase: GainPhaseTruth,
        noise_var: f64,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::domain("scene needs at least one source"));
        }
        for s in &sources {
            s.validate()?;
        }
        for (i, a) in sources.iter().enumerate() {
            if sources[i + 1..].iter().any(|b| b.theta_deg == a.theta_deg) {
                return Err(Error::domain(format!(
                    "duplicate source angle {} deg",
                    a.theta_deg
                )));
            }
        }
        if gain_phase.g.len() != ula.num_sensors() {
            return Err(Error::DimensionMismatch {
                what: "gain-phase vector length",
                expected: ula.num_sensors(),
                actual: gain_phase.g.len(),
            });
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::domain(format!("noise variance must be >= 0, got {noise_var}")));
        }
        Ok(Self {
            ula,
            sources,
            gain_phase,
            noise_var,
        })
    }

    pub fn ula(&self) -> &UlaConfig {
        &self.ula
    }

    pub fn sources(&self) -> &[SourceTruth] {
        &self.sources
    }

    pub fn gain_phase(&self) -> &GainPhaseTruth {
        &self.gain_phase
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// True DOAs sorted ascending.
    pub fn sorted_doas(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.sources.iter().map(|s| s.theta_deg).collect();
        d.sort_by(f64::total_cmp);
        d
    }

    pub fn powers(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.power).collect()
    }

    pub fn with_gain_phase(mut self, gain_phase: GainPhaseTruth) -> Result<Self> {
        if gain_phase.g.len() != self.ula.num_sensors() {
            return Err(Error::DimensionMismatch {
                what: "gain-phase vector length",
                expected: self.ula.num_sensors(),
                actual: gain_phase.g.len(),
            });
        }
        self.gain_phase = gain_phase;
        Ok(self)
    }
}

/// `M × N` array output.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<Complex64>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<Complex64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::domain("snapshot matrix must be non-empty"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn num_sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_snapshots(&self) -> usize {
        self.data.ncols()
    }
}

/// Circular complex Gaussian sample with variance `var`.
fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let scale = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

fn deviation<R: Rng>(rng: &mut R, law: DeviationLaw, sigma_rad: f64) -> f64 {
    match law {
        DeviationLaw::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            z * sigma_rad
        }
        DeviationLaw::Uniform => {
            let u: f64 = rng.random_range(-0.5..=0.5);
            2.0 * SQRT_3 * sigma_rad * u
        }
    }
}

/// `ρ_m = 1 + √12·σ_ρ·η_m`, `φ_m = √12·σ_φ·μ_m` with `η, μ ~ U[−0.5, 0.5]`
/// on the uncalibrated sensors.
pub fn draw_gain_phase(
    sigma_rho: f64,
    sigma_phi_deg: f64,
    config: &UlaConfig,
    seed: u64,
) -> Result<GainPhaseTruth> {
    if !(sigma_rho >= 0.0) || !(sigma_phi_deg >= 0.0) {
        return Err(Error::domain(format!(
            "gain/phase deviations must be >= 0, got sigma_rho = {sigma_rho}, sigma_phi = {sigma_phi_deg}"
        )));
    }
    if sigma_rho >= 1.0 / SQRT_3 {
        return Err(Error::domain(format!(
            "sigma_rho = {sigma_rho} >= 1/sqrt(3) allows non-positive gains"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt12 = 2.0 * SQRT_3;
    let sigma_phi = sigma_phi_deg.to_radians();
    let g = DVector::from_iterator(
        config.num_sensors(),
        (0..config.num_sensors()).map(|m| {
            if m < config.num_calibrated() {
                Complex64::new(1.0, 0.0)
            } else {
                let eta: f64 = rng.random_range(-0.5..=0.5);
                let mu: f64 = rng.random_range(-0.5..=0.5);
                Complex64::from_polar(1.0 + sqrt12 * sigma_rho * eta, sqrt12 * sigma_phi * mu)
            }
        }),
    );
    GainPhaseTruth::new(g, config)
}

/// Draw `n` snapshots of the exact multipath model.
pub fn generate_snapshots(scene: &SceneTruth, n: usize, seed: u64) -> Result<SnapshotMatrix> {
    if n == 0 {
        return Err(Error::domain("need at least one snapshot"));
    }
    let m = scene.ula.num_sensors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::<Complex64>::zeros(m, n);
    let g = scene.gain_phase.g();

    for t in 0..n {
        let mut col = DVector::<Complex64>::zeros(m);
        for src in &scene.sources {
            let s = complex_normal(&mut rng, src.power);
            let path_var = 1.0 / src.num_paths as f64;
            let theta = src.theta_deg.to_radians();
            let sigma = src.spread_deg.to_radians();
            for _ in 0..src.num_paths {
                let gamma = complex_normal(&mut rng, path_var);
                let dev = deviation(&mut rng, src.deviation_law, sigma);
                col.axpy(s * gamma, &steering_rad(theta + dev, m), Complex64::new(1.0, 0.0));
            }
        }
        for (i, z) in col.iter_mut().enumerate() {
            *z = g[i] * *z + complex_normal(&mut rng, scene.noise_var);
        }
        data.set_column(t, &col);
    }
    SnapshotMatrix::new(data)
}
