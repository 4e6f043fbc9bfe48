//! The two-stage pipeline.
//!
//! 1. Coarse directions from the calibrated prefix: nonnegative lasso on the
//!    augmented vector `r_1` over the stage-one dictionary, with the penalty
//!    picked on the L-curve.
//! 2. Least-squares powers at those directions, per-sensor gain-phase
//!    estimates from the full first covariance column, compensation, and a
//!    sparse total least-squares fit of the full-aperture vector `r_4`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::{
    augmented_matrix, build_dictionary, steering_matrix, AngularGrid, Dictionary, DictionaryKind,
    UlaConfig,
};
use crate::covariance::{
    augment_r4, compensate, estimate_noise_variance, hermitian_eigenvalues, sample_covariance,
    CovarianceProducts,
};
use crate::error::{Error, Result};
use crate::scene_sim::SnapshotMatrix;
use crate::sparse_opt::{
    default_lambda_grid, select_lambda_lcurve, stls_alternating, LassoOptions, StlsOptions,
    StlsSolution,
};

const MAX_POWER_CONDITION: f64 = 1e12;
const MIN_RESPONSE: f64 = 1e-9;
const POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceCount {
    Known(usize),
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseVariance {
    Known(f64),
    /// Mean of the smallest `M − k_max` covariance eigenvalues. `None` uses
    /// `2K` for a known source count and `M/2` otherwise.
    Estimate { k_max: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpectrum {
    pub grid: AngularGrid,
    pub values: Vec<f64>,
    pub stage: Stage,
}

impl SparseSpectrum {
    pub fn new(grid: AngularGrid, values: Vec<f64>, stage: Stage) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "spectrum length",
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::domain("spectrum values must be nonnegative"));
        }
        Ok(Self { grid, values, stage })
    }

    /// `(angle, value / max)` pairs; all zeros when the spectrum is empty.
    pub fn normalized(&self) -> Vec<(f64, f64)> {
        let max = self.values.iter().fold(0.0f64, |a, &v| a.max(v));
        self.grid
            .angles()
            .iter()
            .zip(&self.values)
            .map(|(&a, &v)| (a, if max > 0.0 { v / max } else { 0.0 }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    pub doas_deg: Vec<f64>,
    /// The spectrum had no positive value.
    pub all_zero: bool,
}

/// Local maxima of a spectrum, sorted by angle.
///
/// A plateau counts once, at its leftmost index, when it rises strictly above
/// both neighbours (grid ends count as −∞). With a known count the largest
/// `K` are kept, ties to the left; otherwise every maximum above
/// `rel_threshold·max` is kept.
pub fn extract_peaks(spectrum: &SparseSpectrum, k: SourceCount, rel_threshold: f64) -> Result<PeakSet> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::domain(format!(
            "peak threshold must lie in (0, 1), got {rel_threshold}"
        )));
    }
    let v = &spectrum.values;
    let max = v.iter().fold(0.0f64, |a, &x| a.max(x));
    if !(max > 0.0) {
        return Ok(PeakSet {
            doas_deg: Vec::new(),
            all_zero: true,
        });
    }

    let mut maxima = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let left_ok = i == 0 || v[i - 1] < v[i];
        let right_ok = j + 1 == v.len() || v[j + 1] < v[i];
        if left_ok && right_ok && v[i] > 0.0 {
            maxima.push(i);
        }
        i = j + 1;
    }

    let mut chosen: Vec<usize> = match k {
        SourceCount::Known(k) => {
            let mut by_value = maxima;
            by_value.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
            by_value.truncate(k);
            by_value
        }
        SourceCount::Unknown => maxima
            .into_iter()
            .filter(|&i| v[i] > rel_threshold * max)
            .collect(),
    };
    chosen.sort_unstable();
    Ok(PeakSet {
        doas_deg: chosen.iter().map(|&i| spectrum.grid.angles()[i]).collect(),
        all_zero: false,
    })
}

/// Shared solver settings for both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub lambda_grid_size: usize,
    pub lambda_min_ratio: f64,
    pub lasso: LassoOptions,
    pub stls: StlsOptions,
    pub peak_threshold: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            lambda_grid_size: 20,
            lambda_min_ratio: 1e-3,
            lasso: LassoOptions::default(),
            stls: StlsOptions::default(),
            peak_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub spectrum: SparseSpectrum,
    pub doas_deg: Vec<f64>,
    pub lambda: f64,
    pub lambda_degenerate: bool,
    /// Fewer peaks than the requested source count.
    pub resolution_failure: bool,
    pub iterations: usize,
    pub converged: bool,
}

fn missing_peaks(peaks: &PeakSet, k: SourceCount) -> bool {
    match k {
        SourceCount::Known(k) => peaks.doas_deg.len() < k,
        SourceCount::Unknown => peaks.doas_deg.is_empty(),
    }
}

/// Coarse DOAs from `r_1` on the stage-one dictionary.
pub fn stage1_estimate(
    products: &CovarianceProducts,
    dict_phi: &Dictionary,
    k: SourceCount,
    settings: &SolverSettings,
) -> Result<StageOutput> {
    if dict_phi.kind() != DictionaryKind::Stage1Augmented {
        return Err(Error::domain("stage one needs the stage-one augmented dictionary"));
    }
    let phi = dict_phi.columns();
    let y = &products.r_1;
    let grid = default_lambda_grid(phi, y, settings.lambda_grid_size, settings.lambda_min_ratio);
    let sel = select_lambda_lcurve(phi, y, &grid, &settings.lasso, Some(dict_phi.operator_norm_sq()))?;
    let spectrum = SparseSpectrum::new(dict_phi.grid().clone(), sel.solution.coeffs.clone(), Stage::One)?;
    let peaks = extract_peaks(&spectrum, k, settings.peak_threshold)?;
    Ok(StageOutput {
        resolution_failure: missing_peaks(&peaks, k),
        doas_deg: peaks.doas_deg,
        spectrum,
        lambda: sel.lambda,
        lambda_degenerate: sel.degenerate,
        iterations: sel.solution.iterations,
        converged: sel.solution.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    pub powers: Vec<f64>,
    /// Largest imaginary part discarded from the least-squares solution.
    pub imag_residue: f64,
}

/// `p̂ = (B̂ᴴB̂)⁻¹B̂ᴴr_1` at the estimated directions; real parts are kept.
pub fn refine_power(r1: &DVector<Complex64>, doas_deg: &[f64], num_calibrated: usize) -> Result<PowerEstimate> {
    if doas_deg.is_empty() {
        return Err(Error::domain("power refinement needs at least one direction"));
    }
    if r1.len() != 2 * num_calibrated - 1 {
        return Err(Error::DimensionMismatch {
            what: "r_1 length",
            expected: 2 * num_calibrated - 1,
            actual: r1.len(),
        });
    }
    let b = augmented_matrix(doas_deg, num_calibrated)?;
    let gram = b.adjoint() * &b;
    let eig = hermitian_eigenvalues(&gram);
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_POWER_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let rhs = b.adjoint() * r1;
    let p = gram
        .cholesky()
        .ok_or(Error::IllConditioned { condition })?
        .solve(&rhs);
    Ok(PowerEstimate {
        powers: p.iter().map(|z| z.re).collect(),
        imag_residue: p.iter().fold(0.0f64, |a, z| a.max(z.im.abs())),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainPhaseEstimate {
    pub g: DVector<Complex64>,
    /// Some power was floored before forming the model response.
    pub powers_clamped: bool,
}

/// `ĝ_m = r_2[m] / (Â·p̂)[m]` on the uncalibrated sensors, 1 elsewhere.
pub fn estimate_gain_phase(
    r2: &DVector<Complex64>,
    doas_deg: &[f64],
    p_hat: &[f64],
    config: &UlaConfig,
) -> Result<GainPhaseEstimate> {
    let m = config.num_sensors();
    if r2.len() != m {
        return Err(Error::DimensionMismatch {
            what: "r_2 length",
            expected: m,
            actual: r2.len(),
        });
    }
    if doas_deg.len() != p_hat.len() {
        return Err(Error::DimensionMismatch {
            what: "power count",
            expected: doas_deg.len(),
            actual: p_hat.len(),
        });
    }
    let a = steering_matrix(doas_deg, m)?;
    let powers_clamped = p_hat.iter().any(|&p| !(p >= POWER_FLOOR));
    let p = DVector::from_iterator(
        p_hat.len(),
        p_hat.iter().map(|&p| Complex64::new(p.max(POWER_FLOOR), 0.0)),
    );
    let v = a * p;
    let mut g = DVector::from_element(m, Complex64::new(1.0, 0.0));
    for sensor in config.num_calibrated()..m {
        let modulus = v[sensor].norm();
        if !(modulus >= MIN_RESPONSE) {
            return Err(Error::DegenerateResponse { sensor, modulus });
        }
        g[sensor] = r2[sensor] / v[sensor];
    }
    Ok(GainPhaseEstimate { g, powers_clamped })
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub stage: StageOutput,
    pub stls: StlsSolution,
}

/// Refined DOAs from `r_4` by sparse total least squares, seeded with the
/// stage-one spectrum (both stages share one grid).
pub fn stage2_estimate(
    r4: &DVector<Complex64>,
    dict_psi: &Dictionary,
    lambda: f64,
    stage1_spectrum: &SparseSpectrum,
    k: SourceCount,
    settings: &SolverSettings,
) -> Result<Stage2Output> {
    if dict_psi.kind() != DictionaryKind::Stage2Augmented {
        return Err(Error::domain("stage two needs the stage-two augmented dictionary"));
    }
    if stage1_spectrum.grid != *dict_psi.grid() {
        return Err(Error::domain("stage-one spectrum is on a different grid"));
    }
    let stls = stls_alternating(
        dict_psi.columns(),
        r4,
        lambda,
        &settings.stls,
        &stage1_spectrum.values,
        Some(dict_psi.operator_norm_sq()),
    )?;
    let spectrum = SparseSpectrum::new(dict_psi.grid().clone(), stls.coeffs.clone(), Stage::Two)?;
    let peaks = extract_peaks(&spectrum, k, settings.peak_threshold)?;
    Ok(Stage2Output {
        stage: StageOutput {
            resolution_failure: missing_peaks(&peaks, k),
            doas_deg: peaks.doas_deg,
            spectrum,
            lambda,
            lambda_degenerate: false,
            iterations: stls.iterations,
            converged: stls.converged,
        },
        stls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub ula: UlaConfig,
    pub grid_resolution_deg: f64,
    pub num_sources: SourceCount,
    pub noise: NoiseVariance,
    pub solver: SolverSettings,
}

impl EstimatorConfig {
    pub fn new(ula: UlaConfig, num_sources: SourceCount) -> Self {
        Self {
            ula,
            grid_resolution_deg: 0.5,
            num_sources,
            noise: NoiseVariance::Estimate { k_max: None },
            solver: SolverSettings::default(),
        }
    }

    fn noise_bound(&self) -> usize {
        let m = self.ula.num_sensors();
        let k_max = match (self.noise, self.num_sources) {
            (NoiseVariance::Estimate { k_max: Some(k) }, _) => k,
            (_, SourceCount::Known(k)) => 2 * k,
            (_, SourceCount::Unknown) => m / 2,
        };
        k_max.clamp(1, m.saturating_sub(1).max(1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub noise_var: f64,
    pub lambda_stage1: f64,
    pub lambda_stage2: f64,
    pub lambda_stage1_degenerate: bool,
    pub lambda_stage2_degenerate: bool,
    pub stage1_iterations: usize,
    pub stage1_converged: bool,
    pub stls_iterations: usize,
    pub stls_converged: bool,
    pub stage1_resolution_failure: bool,
    pub stage2_resolution_failure: bool,
    pub power_imag_residue: f64,
    pub powers_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub stage1_doas_deg: Vec<f64>,
    pub stage2_doas_deg: Vec<f64>,
    pub gain_phase_est: DVector<Complex64>,
    pub power_est: Vec<f64>,
    pub stage1_spectrum: SparseSpectrum,
    pub stage2_spectrum: SparseSpectrum,
    pub stls_objective_trace: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Pipeline with its dictionaries built once; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct TwoStageEstimator {
    config: EstimatorConfig,
    phi: Dictionary,
    psi: Dictionary,
}

impl TwoStageEstimator {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        let grid = AngularGrid::full(config.grid_resolution_deg)?;
        if !(config.solver.peak_threshold > 0.0 && config.solver.peak_threshold < 1.0) {
            return Err(Error::domain("peak threshold must lie in (0, 1)"));
        }
        if let SourceCount::Known(0) = config.num_sources {
            return Err(Error::domain("known source count must be >= 1"));
        }
        let phi = build_dictionary(&grid, DictionaryKind::Stage1Augmented, &config.ula)?;
        let psi = build_dictionary(&grid, DictionaryKind::Stage2Augmented, &config.ula)?;
        phi.operator_norm_sq();
        psi.operator_norm_sq();
        Ok(Self { config, phi, psi })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn stage1_dictionary(&self) -> &Dictionary {
        &self.phi
    }

    pub fn stage2_dictionary(&self) -> &Dictionary {
        &self.psi
    }

    /// Covariance products for a snapshot matrix, estimating the noise
    /// variance unless it is configured as known.
    pub fn covariance_products(&self, z: &SnapshotMatrix) -> Result<CovarianceProducts> {
        let ula = &self.config.ula;
        if z.num_sensors() != ula.num_sensors() {
            return Err(Error::DimensionMismatch {
                what: "snapshot rows",
                expected: ula.num_sensors(),
                actual: z.num_sensors(),
            });
        }
        let r = sample_covariance(z);
        let noise_var = match self.config.noise {
            NoiseVariance::Known(v) => v,
            NoiseVariance::Estimate { .. } => estimate_noise_variance(&r, self.config.noise_bound())?,
        };
        CovarianceProducts::new(r, ula, noise_var)
    }

    pub fn estimate(&self, z: &SnapshotMatrix) -> Result<EstimationResult> {
        let products = self
            .covariance_products(z)
            .map_err(|e| e.in_stage("covariance"))?;
        self.estimate_from_products(&products)
    }

    pub fn estimate_from_products(&self, products: &CovarianceProducts) -> Result<EstimationResult> {
        let cfg = &self.config;
        let settings = &cfg.solver;
        let k = cfg.num_sources;

        let s1 = stage1_estimate(products, &self.phi, k, settings)
            .map_err(|e| e.in_stage("stage one"))?;
        if s1.doas_deg.is_empty() {
            return Err(Error::Numerical("stage one found no peaks".into()).in_stage("stage one"));
        }

        let power = refine_power(&products.r_1, &s1.doas_deg, cfg.ula.num_calibrated())
            .map_err(|e| e.in_stage("power refinement"))?;
        let gain = estimate_gain_phase(&products.r_2, &s1.doas_deg, &power.powers, &cfg.ula)
            .map_err(|e| e.in_stage("gain-phase estimation"))?;
        let r3 = compensate(&products.r_2, &gain.g).map_err(|e| e.in_stage("compensation"))?;
        let r4 = augment_r4(&r3).map_err(|e| e.in_stage("compensation"))?;

        let psi = self.psi.columns();
        let grid = default_lambda_grid(psi, &r4, settings.lambda_grid_size, settings.lambda_min_ratio);
        let sel = select_lambda_lcurve(psi, &r4, &grid, &settings.lasso, Some(self.psi.operator_norm_sq()))
            .map_err(|e| e.in_stage("stage two"))?;
        let s2 = stage2_estimate(&r4, &self.psi, sel.lambda, &s1.spectrum, k, settings)
            .map_err(|e| e.in_stage("stage two"))?;

        Ok(EstimationResult {
            stage1_doas_deg: s1.doas_deg,
            stage2_doas_deg: s2.stage.doas_deg,
            gain_phase_est: gain.g,
            power_est: power.powers,
            stage1_spectrum: s1.spectrum,
            stage2_spectrum: s2.stage.spectrum,
            stls_objective_trace: s2.stls.objective_trace,
            diagnostics: Diagnostics {
                noise_var: products.noise_var,
                lambda_stage1: s1.lambda,
                lambda_stage2: sel.lambda,
                lambda_stage1_degenerate: s1.lambda_degenerate,
                lambda_stage2_degenerate: sel.degenerate,
                stage1_iterations: s1.iterations,
                stage1_converged: s1.converged,
                stls_iterations: s2.stage.iterations,
                stls_converged: s2.stage.converged,
                stage1_resolution_failure: s1.resolution_failure,
                stage2_resolution_failure: s2.stage.resolution_failure,
                power_imag_residue: power.imag_residue,
                powers_clamped: gain.powers_clamped,
            },
        })
    }
}

/// One-shot pipeline: builds the dictionaries and runs both stages.
pub fn two_stage_pipeline(z: &SnapshotMatrix, config: &EstimatorConfig) -> Result<EstimationResult> {
    TwoStageEstimator::new(config.clone())?.estimate(z)
}

/// Asymptotic point-source covariance `Ξ(g)·A·diag(p)·Aᴴ·Ξ(g)ᴴ + σ²·I`.
pub fn model_covariance(
    ula: &UlaConfig,
    doas_deg: &[f64],
    powers: &[f64],
    g: &DVector<Complex64>,
    noise_var: f64,
) -> Result<DMatrix<Complex64>> {
    let a = steering_matrix(doas_deg, ula.num_sensors())?;
    let ga = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| g[i] * a[(i, j)]);
    let p = DMatrix::from_diagonal(&DVector::from_iterator(
        powers.len(),
        powers.iter().map(|&p| Complex64::new(p, 0.0)),
    ));
    let m = ula.num_sensors();
    Ok(&ga * p * ga.adjoint() + DMatrix::<Complex64>::identity(m, m) * Complex64::new(noise_var, 0.0))
}
