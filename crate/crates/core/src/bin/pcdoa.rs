use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::json;

use pcdoa::harness::{
    emit_results, format_sig6, load_experiment_config, render, run_monte_carlo, Emit, Experiment,
    ExperimentConfig, OutputFormat,
};
use pcdoa::scene_sim::SnapshotMatrix;
use pcdoa::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "pcdoa", version, about = "Two-stage sparse DOA estimation for partly-calibrated arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the snapshot matrix of one simulated trial.
    Simulate(Common),
    /// Estimate DOAs, gains and powers for one trial.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Snapshot CSV (sensor,snapshot,re,im) to use instead of simulating.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Monte Carlo RMSE table over the configured sweep.
    Sweep(Common),
    /// Normalized stage-one and stage-two spectra of one trial.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Overrides the configured trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Never changes results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Trial index for single-trial commands.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Sweep point index for single-trial commands.
    #[arg(long, default_value_t = 0)]
    point: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Domain => 4,
        ErrorCategory::Degenerate => 5,
        ErrorCategory::Numerical => 6,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_experiment_config(&common.config)?;
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(common: &Common) -> Result<Experiment> {
    let exp = Experiment::new(load(common)?)?;
    if common.point >= exp.num_points() {
        return Err(Error::Config(format!(
            "--point {} is out of range for {} sweep points",
            common.point,
            exp.num_points()
        )));
    }
    Ok(exp)
}

fn write_out(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => std::io::stdout().write_all(bytes).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn json_bytes(v: serde_json::Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&v).expect("json values always serialize");
    out.push(b'\n');
    out
}

fn simulate(common: &Common) -> Result<()> {
    let exp = experiment(common)?;
    let (_, z) = exp.simulate(common.point, common.trial)?;
    let d = z.data();
    let bytes = match common.format {
        Format::Csv => {
            let mut rows = Vec::with_capacity(d.len());
            for t in 0..d.ncols() {
                for m in 0..d.nrows() {
                    let v = d[(m, t)];
                    rows.push(vec![m.to_string(), t.to_string(), format!("{:e}", v.re), format!("{:e}", v.im)]);
                }
            }
            csv_bytes(&["sensor", "snapshot", "re", "im"], rows)
        }
        Format::Json => {
            let part = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
                (0..d.nrows()).map(|m| d.row(m).iter().map(f).collect()).collect()
            };
            json_bytes(json!({
                "num_sensors": d.nrows(),
                "num_snapshots": d.ncols(),
                "re": part(|c| c.re),
                "im": part(|c| c.im),
            }))
        }
    };
    write_out(&bytes, common.out.as_deref())
}

fn read_snapshots(path: &Path) -> Result<SnapshotMatrix> {
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => bad(format!("{other:?}")),
    })?;
    let mut entries = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("record {} has too few fields", line + 1)));
        let parse_err = |what: &str| bad(format!("record {}: invalid {what}", line + 1));
        let m: usize = field(0)?.trim().parse().map_err(|_| parse_err("sensor"))?;
        let t: usize = field(1)?.trim().parse().map_err(|_| parse_err("snapshot"))?;
        let re: f64 = field(2)?.trim().parse().map_err(|_| parse_err("re"))?;
        let im: f64 = field(3)?.trim().parse().map_err(|_| parse_err("im"))?;
        entries.push((m, t, Complex64::new(re, im)));
    }
    let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    if entries.len() != rows * cols || rows == 0 {
        return Err(bad(format!("expected a dense {rows}x{cols} grid, found {} entries", entries.len())));
    }
    let mut data = DMatrix::from_element(rows, cols, Complex64::new(f64::NAN, 0.0));
    for (m, t, v) in entries {
        data[(m, t)] = v;
    }
    if data.iter().any(|v| v.re.is_nan()) {
        return Err(bad("duplicate or missing entries".into()));
    }
    SnapshotMatrix::new(data)
}

fn estimate(common: &Common, input: Option<&Path>) -> Result<()> {
    let exp = experiment(common)?;
    let (scene, z) = exp.simulate(common.point, common.trial)?;
    let z = match input {
        Some(path) => read_snapshots(path)?,
        None => z,
    };
    let r = exp.estimator(common.point).estimate(&z)?;
    let truth = if input.is_some() { Vec::new() } else { scene.sorted_doas() };
    let bytes = match common.format {
        Format::Csv => {
            let mut rows = Vec::new();
            let mut push = |q: &str, vals: &[f64]| {
                for (i, v) in vals.iter().enumerate() {
                    rows.push(vec![q.to_owned(), i.to_string(), format_sig6(*v), String::new()]);
                }
            };
            push("truth_doa_deg", &truth);
            push("stage1_doa_deg", &r.stage1_doas_deg);
            push("stage2_doa_deg", &r.stage2_doas_deg);
            push("power", &r.power_est);
            for (i, g) in r.gain_phase_est.iter().enumerate() {
                rows.push(vec!["gain".into(), i.to_string(), format_sig6(g.re), format_sig6(g.im)]);
            }
            csv_bytes(&["quantity", "index", "re", "im"], rows)
        }
        Format::Json => json_bytes(json!({
            "truth_doa_deg": truth,
            "stage1_doa_deg": r.stage1_doas_deg,
            "stage2_doa_deg": r.stage2_doas_deg,
            "power": r.power_est,
            "gain": r.gain_phase_est.iter().map(|g| [g.re, g.im]).collect::<Vec<_>>(),
            "diagnostics": r.diagnostics,
        })),
    };
    write_out(&bytes, common.out.as_deref())
}

fn sweep(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let table = run_monte_carlo(&cfg, common.threads)?;
    match &common.out {
        Some(path) => emit_results(&Emit::Table(&table), path, common.format.into()),
        None => write_out(&render(&Emit::Table(&table), common.format.into())?, None),
    }
}

fn spectrum(common: &Common) -> Result<()> {
    let exp = experiment(common)?;
    let (_, z) = exp.simulate(common.point, common.trial)?;
    let r = exp.estimator(common.point).estimate(&z)?;
    let spectra = [&r.stage1_spectrum, &r.stage2_spectrum];
    let payload = Emit::Spectra(&spectra);
    match &common.out {
        Some(path) => emit_results(&payload, path, common.format.into()),
        None => write_out(&render(&payload, common.format.into())?, None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Estimate { common, input } => estimate(common, input.as_deref()),
        Command::Sweep(c) => sweep(c),
        Command::Spectrum(c) => spectrum(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            ExitCode::from(exit_code(category))
        }
    }
}
