//! Monte Carlo experiments: configuration, seeded trials, RMSE tables and
//! CSV/JSON output.
//!
//! Per-source SNR is `p_k/σ²`; the noise variance of a sweep point is
//! `10^(−snr_db/10)`, so a source with unit power sits exactly at the nominal
//! SNR.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::UlaConfig;
use crate::error::{Error, Result};
use crate::estimator::{
    stage1_estimate, EstimatorConfig, NoiseVariance, SolverSettings, SourceCount, SparseSpectrum,
    TwoStageEstimator,
};
use crate::scene_sim::{
    draw_gain_phase, generate_snapshots, DeviationLaw, SceneTruth, SnapshotMatrix, SourceTruth,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Stage1,
    Stage2,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stage1 => "stage1",
            Self::Stage2 => "stage2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SnrDb,
    NumSnapshots,
    SpreadDeg,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SnrDb => "snr_db",
            Self::NumSnapshots => "num_snapshots",
            Self::SpreadDeg => "spread_deg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Estimated from the covariance eigenvalues.
    #[default]
    Estimate,
    /// The simulator's true noise variance is handed to the estimator.
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub theta_deg: f64,
    #[serde(default = "defaults::spread_deg")]
    pub spread_deg: f64,
    #[serde(default = "defaults::power")]
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "defaults::num_sensors")]
    pub num_sensors: usize,
    #[serde(default = "defaults::num_calibrated")]
    pub num_calibrated: usize,
    #[serde(default = "defaults::sigma_rho")]
    pub sigma_rho: f64,
    #[serde(default = "defaults::sigma_phi_deg")]
    pub sigma_phi_deg: f64,
    #[serde(default = "defaults::num_paths")]
    pub num_paths: usize,
    #[serde(default)]
    pub deviation_law: DeviationLaw,
    #[serde(default)]
    pub snr_db: f64,
    #[serde(default = "defaults::num_snapshots")]
    pub num_snapshots: usize,
    pub sources: Vec<SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Optional solver overrides; unset fields keep the estimator defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub lambda_grid_size: Option<usize>,
    pub lambda_min_ratio: Option<f64>,
    pub lasso_tol: Option<f64>,
    pub lasso_max_iter: Option<usize>,
    pub epsilon: Option<f64>,
    pub max_iter: Option<usize>,
    pub peak_threshold: Option<f64>,
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    /// Absent: a single point at the scene's own SNR.
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::grid_resolution_deg")]
    pub grid_resolution_deg: f64,
    #[serde(default = "defaults::estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Estimate with the true source count; `false` uses the threshold rule.
    #[serde(default = "defaults::known_count")]
    pub known_count: bool,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub solver: SolverOverrides,
}

mod defaults {
    use super::EstimatorKind;

    pub fn spread_deg() -> f64 {
        1.5
    }
    pub fn power() -> f64 {
        1.0
    }
    pub fn num_sensors() -> usize {
        16
    }
    pub fn num_calibrated() -> usize {
        8
    }
    pub fn sigma_rho() -> f64 {
        0.1
    }
    pub fn sigma_phi_deg() -> f64 {
        40.0
    }
    pub fn num_paths() -> usize {
        20
    }
    pub fn num_snapshots() -> usize {
        200
    }
    pub fn trials() -> usize {
        300
    }
    pub fn grid_resolution_deg() -> f64 {
        0.5
    }
    pub fn estimators() -> Vec<EstimatorKind> {
        vec![EstimatorKind::Stage1, EstimatorKind::Stage2]
    }
    pub fn known_count() -> bool {
        true
    }
}

/// Scene parameters at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub num_snapshots: usize,
    /// Overrides every source's spread when set.
    pub spread_deg: Option<f64>,
}

impl ExperimentConfig {
    /// Defaults for everything except the source list.
    pub fn with_sources(sources: Vec<SourceSpec>) -> Self {
        Self {
            scene: SceneConfig {
                num_sensors: defaults::num_sensors(),
                num_calibrated: defaults::num_calibrated(),
                sigma_rho: defaults::sigma_rho(),
                sigma_phi_deg: defaults::sigma_phi_deg(),
                num_paths: defaults::num_paths(),
                deviation_law: DeviationLaw::default(),
                snr_db: 0.0,
                num_snapshots: defaults::num_snapshots(),
                sources,
            },
            sweep: None,
            trials: defaults::trials(),
            seed: 0,
            grid_resolution_deg: defaults::grid_resolution_deg(),
            estimators: defaults::estimators(),
            known_count: true,
            noise: NoiseMode::Estimate,
            solver: SolverOverrides::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant and reports all offending fields at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let s = &self.scene;
        if s.num_calibrated < 2 || s.num_calibrated > s.num_sensors {
            bad.push(format!(
                "scene.num_calibrated must satisfy 2 <= num_calibrated <= num_sensors ({} vs {})",
                s.num_calibrated, s.num_sensors
            ));
        }
        if !(s.sigma_rho >= 0.0 && s.sigma_rho < 1.0 / 3f64.sqrt()) {
            bad.push(format!("scene.sigma_rho must lie in [0, 1/sqrt(3)), got {}", s.sigma_rho));
        }
        if !(s.sigma_phi_deg >= 0.0 && s.sigma_phi_deg.is_finite()) {
            bad.push(format!("scene.sigma_phi_deg must be finite and >= 0, got {}", s.sigma_phi_deg));
        }
        if s.num_paths == 0 {
            bad.push("scene.num_paths must be >= 1".into());
        }
        if !s.snr_db.is_finite() {
            bad.push("scene.snr_db must be finite".into());
        }
        if s.num_snapshots == 0 {
            bad.push("scene.num_snapshots must be >= 1".into());
        }
        if s.sources.is_empty() {
            bad.push("scene.sources must list at least one source".into());
        }
        for (i, src) in s.sources.iter().enumerate() {
            if !(src.theta_deg > -90.0 && src.theta_deg <= 90.0) {
                bad.push(format!("scene.sources[{i}].theta_deg must lie in (-90, 90], got {}", src.theta_deg));
            }
            if !(src.spread_deg >= 0.0 && src.spread_deg.is_finite()) {
                bad.push(format!("scene.sources[{i}].spread_deg must be finite and >= 0"));
            }
            if !(src.power > 0.0 && src.power.is_finite()) {
                bad.push(format!("scene.sources[{i}].power must be finite and > 0"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                bad.push("sweep.values must be nonempty".into());
            }
            if sw.values.windows(2).any(|w| !(w[0] < w[1])) {
                bad.push("sweep.values must be strictly ascending".into());
            }
            if sw.values.iter().any(|v| !v.is_finite()) {
                bad.push("sweep.values must be finite".into());
            }
            match sw.variable {
                SweepVariable::NumSnapshots => {
                    if sw.values.iter().any(|&v| !(v >= 1.0 && v.fract() == 0.0)) {
                        bad.push("sweep.values for num_snapshots must be positive integers".into());
                    }
                }
                SweepVariable::SpreadDeg => {
                    if sw.values.iter().any(|&v| !(v >= 0.0)) {
                        bad.push("sweep.values for spread_deg must be >= 0".into());
                    }
                }
                SweepVariable::SnrDb => {}
            }
        }
        if self.trials == 0 {
            bad.push("trials must be >= 1".into());
        }
        if !(self.grid_resolution_deg > 0.0 && self.grid_resolution_deg <= 90.0) {
            bad.push(format!("grid_resolution_deg must lie in (0, 90], got {}", self.grid_resolution_deg));
        }
        if self.estimators.is_empty() {
            bad.push("estimators must name at least one estimator".into());
        }
        let o = &self.solver;
        if o.lambda_grid_size.is_some_and(|n| n < 3) {
            bad.push("solver.lambda_grid_size must be >= 3".into());
        }
        if o.lambda_min_ratio.is_some_and(|r| !(r > 0.0 && r < 1.0)) {
            bad.push("solver.lambda_min_ratio must lie in (0, 1)".into());
        }
        if o.lasso_tol.is_some_and(|t| !(t > 0.0)) {
            bad.push("solver.lasso_tol must be > 0".into());
        }
        if o.epsilon.is_some_and(|t| !(t > 0.0)) {
            bad.push("solver.epsilon must be > 0".into());
        }
        if o.lasso_max_iter == Some(0) || o.max_iter == Some(0) {
            bad.push("solver iteration limits must be >= 1".into());
        }
        if o.peak_threshold.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            bad.push("solver.peak_threshold must lie in (0, 1)".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn ula(&self) -> Result<UlaConfig> {
        UlaConfig::new(self.scene.num_sensors, self.scene.num_calibrated)
    }

    pub fn sweep_variable(&self) -> SweepVariable {
        self.sweep.as_ref().map_or(SweepVariable::SnrDb, |s| s.variable)
    }

    /// `(value, point)` pairs in sweep order.
    pub fn sweep_points(&self) -> Vec<(f64, SweepPoint)> {
        let base = SweepPoint {
            snr_db: self.scene.snr_db,
            num_snapshots: self.scene.num_snapshots,
            spread_deg: None,
        };
        let Some(sw) = &self.sweep else {
            return vec![(base.snr_db, base)];
        };
        sw.values
            .iter()
            .map(|&v| {
                let p = match sw.variable {
                    SweepVariable::SnrDb => SweepPoint { snr_db: v, ..base },
                    SweepVariable::NumSnapshots => SweepPoint {
                        num_snapshots: v as usize,
                        ..base
                    },
                    SweepVariable::SpreadDeg => SweepPoint {
                        spread_deg: Some(v),
                        ..base
                    },
                };
                (v, p)
            })
            .collect()
    }

    pub fn estimator_config(&self, point: &SweepPoint) -> Result<EstimatorConfig> {
        let k = self.scene.sources.len();
        let mut cfg = EstimatorConfig::new(
            self.ula()?,
            if self.known_count {
                SourceCount::Known(k)
            } else {
                SourceCount::Unknown
            },
        );
        cfg.grid_resolution_deg = self.grid_resolution_deg;
        cfg.noise = match self.noise {
            NoiseMode::Known => NoiseVariance::Known(noise_variance(point.snr_db)),
            NoiseMode::Estimate => NoiseVariance::Estimate {
                k_max: self.solver.k_max,
            },
        };
        cfg.solver = self.solver_settings();
        Ok(cfg)
    }

    fn solver_settings(&self) -> SolverSettings {
        let o = &self.solver;
        let mut s = SolverSettings::default();
        if let Some(v) = o.lambda_grid_size {
            s.lambda_grid_size = v;
        }
        if let Some(v) = o.lambda_min_ratio {
            s.lambda_min_ratio = v;
        }
        if let Some(v) = o.lasso_tol {
            s.lasso.tol = v;
        }
        if let Some(v) = o.lasso_max_iter {
            s.lasso.max_iter = v;
        }
        if let Some(v) = o.epsilon {
            s.stls.epsilon = v;
        }
        if let Some(v) = o.max_iter {
            s.stls.max_iter = v;
        }
        s.stls.lasso = s.lasso;
        if let Some(v) = o.peak_threshold {
            s.peak_threshold = v;
        }
        s
    }

    /// Ground truth for one trial; the gain-phase draw depends on `seed` only.
    pub fn scene_truth(&self, point: &SweepPoint, seed: u64) -> Result<SceneTruth> {
        let s = &self.scene;
        let ula = self.ula()?;
        let gain_phase = draw_gain_phase(s.sigma_rho, s.sigma_phi_deg, &ula, seed)?;
        let sources = s
            .sources
            .iter()
            .map(|src| {
                SourceTruth::new(
                    src.theta_deg,
                    point.spread_deg.unwrap_or(src.spread_deg),
                    src.power,
                    s.num_paths,
                )
                .with_law(s.deviation_law)
            })
            .collect();
        SceneTruth::new(ula, sources, gain_phase, noise_variance(point.snr_db))
    }
}

/// Reads and validates a TOML experiment file.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// RMSE after sorting both lists ascending (order-statistic pairing).
pub fn rmse(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "estimated DOA count",
            expected: truth.len(),
            actual: estimated.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::domain("rmse needs at least one direction"));
    }
    Ok((sum_sq_error(estimated, truth) / truth.len() as f64).sqrt())
}

fn sum_sq_error(estimated: &[f64], truth: &[f64]) -> f64 {
    let mut e = estimated.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    e.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at sweep index `point`; independent of scheduling.
pub fn child_seed(base: u64, point: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ point as u64) ^ trial as u64)
}

/// DOAs of each requested estimator for one trial; `None` marks a failure
/// (pipeline error or fewer peaks than sources).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub truth_deg: Vec<f64>,
    pub stage1_deg: Option<Vec<f64>>,
    pub stage2_deg: Option<Vec<f64>>,
    pub runtime_ms: f64,
}

impl TrialOutcome {
    pub fn doas(&self, kind: EstimatorKind) -> Option<&[f64]> {
        match kind {
            EstimatorKind::Stage1 => self.stage1_deg.as_deref(),
            EstimatorKind::Stage2 => self.stage2_deg.as_deref(),
        }
    }
}

/// Prepared estimators, one per sweep point.
pub struct Experiment {
    config: ExperimentConfig,
    points: Vec<(f64, SweepPoint, TwoStageEstimator)>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let points = config
            .sweep_points()
            .into_iter()
            .map(|(v, p)| Ok((v, p, TwoStageEstimator::new(config.estimator_config(&p)?)?)))
            .collect::<Result<_>>()?;
        Ok(Self { config, points })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Scene and snapshots of one trial.
    pub fn simulate(&self, point: usize, trial: usize) -> Result<(SceneTruth, SnapshotMatrix)> {
        let (_, p, _) = &self.points[point];
        let seed = child_seed(self.config.seed, point, trial);
        let scene = self.config.scene_truth(p, seed)?;
        let z = generate_snapshots(&scene, p.num_snapshots, splitmix64(seed ^ 0x5eed))?;
        Ok((scene, z))
    }

    pub fn estimator(&self, point: usize) -> &TwoStageEstimator {
        &self.points[point].2
    }

    pub fn run_trial(&self, point: usize, trial: usize) -> Result<TrialOutcome> {
        let (scene, z) = self.simulate(point, trial)?;
        let est = self.estimator(point);
        let k = scene.sources().len();
        let complete = |d: Vec<f64>| (d.len() == k).then_some(d);
        let wants = |e| self.config.estimators.contains(&e);
        let start = Instant::now();
        let (stage1_deg, stage2_deg) = if wants(EstimatorKind::Stage2) {
            match est.estimate(&z) {
                Ok(r) => (complete(r.stage1_doas_deg), complete(r.stage2_doas_deg)),
                Err(_) => (None, None),
            }
        } else {
            let s1 = est.covariance_products(&z).and_then(|p| {
                stage1_estimate(&p, est.stage1_dictionary(), est.config().num_sources, &est.config().solver)
            });
            (s1.ok().and_then(|s| complete(s.doas_deg)), None)
        };
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(TrialOutcome {
            truth_deg: scene.sorted_doas(),
            stage1_deg: stage1_deg.filter(|_| wants(EstimatorKind::Stage1)),
            stage2_deg,
            runtime_ms,
        })
    }

    /// All trials of one sweep point, in trial order.
    pub fn run_point(&self, point: usize) -> Result<Vec<TrialOutcome>> {
        (0..self.config.trials)
            .into_par_iter()
            .map(|t| self.run_trial(point, t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub estimator: EstimatorKind,
    pub sweep_var: SweepVariable,
    pub sweep_value: f64,
    /// `None` when every trial failed.
    pub rmse_deg: Option<f64>,
    pub failure_rate: f64,
    pub trials_used: usize,
    pub mean_runtime_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RmseTable {
    pub rows: Vec<RmseRow>,
}

impl RmseTable {
    pub fn row(&self, estimator: EstimatorKind, sweep_value: f64) -> Option<&RmseRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.sweep_value == sweep_value)
    }

    /// RMSE column of one estimator in sweep order.
    pub fn column(&self, estimator: EstimatorKind) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .map(|r| r.rmse_deg)
            .collect()
    }
}

/// Aggregates trial outcomes of one sweep point; order of `trials` is fixed.
pub fn aggregate(
    estimator: EstimatorKind,
    sweep_var: SweepVariable,
    sweep_value: f64,
    trials: &[TrialOutcome],
) -> RmseRow {
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut used = 0usize;
    for t in trials {
        if let Some(d) = t.doas(estimator) {
            sq += sum_sq_error(d, &t.truth_deg);
            count += t.truth_deg.len();
            used += 1;
        }
    }
    let n = trials.len().max(1) as f64;
    RmseRow {
        estimator,
        sweep_var,
        sweep_value,
        rmse_deg: (count > 0).then(|| (sq / count as f64).sqrt()),
        failure_rate: 1.0 - used as f64 / n,
        trials_used: used,
        mean_runtime_ms: trials.iter().map(|t| t.runtime_ms).sum::<f64>() / n,
    }
}

/// Runs every sweep point and trial on `threads` workers (0: all cores).
/// The table does not depend on the thread count.
pub fn run_monte_carlo(config: &ExperimentConfig, threads: usize) -> Result<RmseTable> {
    let exp = Experiment::new(config.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut estimators = config.estimators.clone();
    estimators.sort_unstable();
    estimators.dedup();
    let var = config.sweep_variable();
    let mut rows = Vec::new();
    for (i, &(value, _, _)) in exp.points.iter().enumerate() {
        let outcomes = pool.install(|| exp.run_point(i))?;
        for &e in &estimators {
            rows.push(aggregate(e, var, value, &outcomes));
        }
    }
    rows.sort_by_key(|r| r.estimator);
    Ok(RmseTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

/// Six significant digits, shortest form, no trailing zeros.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

/// Output payloads of the CLI.
pub enum Emit<'a> {
    Table(&'a RmseTable),
    Spectra(&'a [&'a SparseSpectrum]),
}

fn spectrum_stage(s: &SparseSpectrum) -> &'static str {
    match s.stage {
        crate::estimator::Stage::One => "stage1",
        crate::estimator::Stage::Two => "stage2",
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<output>".into(),
            source,
        },
        other => Error::Numerical(format!("csv encoding failed: {other:?}")),
    }
}

/// Serializes a payload; byte-identical for identical inputs.
pub fn render(payload: &Emit<'_>, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            match payload {
                Emit::Table(t) => {
                    w.write_record(["estimator", "sweep_var", "sweep_value", "rmse_deg", "failure_rate", "trials_used"])
                        .map_err(csv_error)?;
                    for r in &t.rows {
                        w.write_record([
                            r.estimator.as_str().to_owned(),
                            r.sweep_var.as_str().to_owned(),
                            format_sig6(r.sweep_value),
                            r.rmse_deg.map(format_sig6).unwrap_or_default(),
                            format_sig6(r.failure_rate),
                            r.trials_used.to_string(),
                        ])
                        .map_err(csv_error)?;
                    }
                }
                Emit::Spectra(spectra) => {
                    w.write_record(["stage", "angle_deg", "normalized_value"])
                        .map_err(csv_error)?;
                    for s in spectra.iter() {
                        for (a, v) in s.normalized() {
                            w.write_record([spectrum_stage(s).to_owned(), format_sig6(a), format_sig6(v)])
                                .map_err(csv_error)?;
                        }
                    }
                }
            }
            w.into_inner()
                .map_err(|e| Error::Numerical(format!("csv flush failed: {e}")))
        }
        OutputFormat::Json => {
            let value = match payload {
                Emit::Table(t) => serde_json::to_value(t),
                Emit::Spectra(spectra) => serde_json::to_value(
                    spectra
                        .iter()
                        .map(|s| {
                            serde_json::json!({
                                "stage": spectrum_stage(s),
                                "angle_deg": s.grid.angles(),
                                "normalized_value": s.normalized().iter().map(|p| p.1).collect::<Vec<_>>(),
                            })
                        })
                        .collect::<Vec<_>>(),
                ),
            }
            .map_err(|e| Error::Numerical(format!("json encoding failed: {e}")))?;
            let mut out = serde_json::to_vec_pretty(&value)
                .map_err(|e| Error::Numerical(format!("json encoding failed: {e}")))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Writes a payload to `path`.
pub fn emit_results(payload: &Emit<'_>, path: &Path, format: OutputFormat) -> Result<()> {
    let bytes = render(payload, format)?;
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_toml_str("[scene]\nsources = [{ theta_deg = 10.0 }]\n").unwrap()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = minimal();
        assert_eq!(c.scene.num_sensors, 16);
        assert_eq!(c.scene.num_calibrated, 8);
        assert_eq!(c.scene.sigma_rho, 0.1);
        assert_eq!(c.scene.sigma_phi_deg, 40.0);
        assert_eq!(c.trials, 300);
        assert_eq!(c.grid_resolution_deg, 0.5);
        assert_eq!(c, ExperimentConfig::with_sources(c.scene.sources.clone()));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("[scene]\nsources = []\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        assert_eq!(err.category(), crate::ErrorCategory::Config);
    }

    #[test]
    fn parse_error_has_line_context() {
        let err = ExperimentConfig::from_toml_str("[scene]\nsources = [\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn calibrated_beyond_array_is_rejected() {
        let err = ExperimentConfig::from_toml_str(
            "[scene]\nnum_sensors = 8\nnum_calibrated = 9\nsources = [{ theta_deg = 0.0 }]\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("num_calibrated"), "{err}");
    }

    #[test]
    fn unsorted_sweep_is_rejected() {
        let mut c = minimal();
        c.sweep = Some(SweepConfig {
            variable: SweepVariable::SnrDb,
            values: vec![3.0, 0.0],
        });
        assert!(c.validate().is_err());
        c.sweep = Some(SweepConfig {
            variable: SweepVariable::NumSnapshots,
            values: vec![10.5],
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[10.0, 20.0], &[10.0, 20.0]).unwrap(), 0.0);
        assert!((rmse(&[9.0, 21.0], &[10.0, 20.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rmse(&[20.0, 10.0], &[10.0, 20.0]).unwrap(), 0.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn child_seeds_differ() {
        let a = child_seed(1, 0, 0);
        assert_ne!(a, child_seed(1, 0, 1));
        assert_ne!(a, child_seed(1, 1, 0));
        assert_ne!(a, child_seed(2, 0, 0));
        assert_eq!(a, child_seed(1, 0, 0));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(-9.0), "-9");
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(2.5e-7), "2.5e-7");
        assert_eq!(format_sig6(100.0), "100");
    }

    #[test]
    fn empty_table_is_header_only() {
        let bytes = render(&Emit::Table(&RmseTable::default()), OutputFormat::Csv).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "estimator,sweep_var,sweep_value,rmse_deg,failure_rate,trials_used\n"
        );
    }

    #[test]
    fn aggregate_counts_failures() {
        let ok = TrialOutcome {
            truth_deg: vec![10.0, 20.0],
            stage1_deg: Some(vec![9.0, 21.0]),
            stage2_deg: None,
            runtime_ms: 1.0,
        };
        let row = aggregate(EstimatorKind::Stage1, SweepVariable::SnrDb, 0.0, &[ok.clone(), ok.clone(), ok]);
        assert_eq!(row.rmse_deg, Some(1.0));
        assert_eq!(row.failure_rate, 0.0);
        let failed = TrialOutcome {
            truth_deg: vec![10.0],
            stage1_deg: None,
            stage2_deg: None,
            runtime_ms: 1.0,
        };
        let row = aggregate(EstimatorKind::Stage2, SweepVariable::SnrDb, 0.0, &[failed]);
        assert_eq!(row.rmse_deg, None);
        assert_eq!(row.failure_rate, 1.0);
        assert_eq!(row.trials_used, 0);
    }
}
