//! Command-line surface.
//!
//! Exit codes: 0 success, 1 usage, 2 format or validation, 3 numerical failure.
//! Failures print one JSON line on stderr:
//! `{"error":"validation","exit_code":2,"message":"..."}`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::densities::{
    discretize, fit_gaussian, fit_inverse_gaussian_ood, fit_laplace, DensityGrid, DistributionSpec, Grid1D,
    STUDY_POINTS,
};
use crate::detect::{energy_score, evaluate, ScoreSet};
use crate::error::{Error, Result};
use crate::io::{
    read_density_csv, read_features, scores_from_csv, scores_to_csv, trace_to_csv, write_atomic, write_features,
    CurveFile, FeatureEncoding, FeatureFile, HeadFile, SWEEP_FORMAT, FORMAT_VERSION,
};
use crate::oracle::{loss_landscape, LinearFeatureConfig};
use crate::shaping::{apply, tuned_presets, PiecewiseLinearShape, Shape};
use crate::tune::{default_sigma_probe, estimate_ib, run_sweep, tune_piecewise, SweepSpec, TuneConfig};
use crate::varopt::{optimize, ClassDensities, LossParams, OptimizerConfig};

#[derive(Debug, Parser)]
#[command(name = "ibshape", version, about = "Information-theoretic OOD feature shaping")]
pub struct Cli {
    /// Seed for every randomized step; overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit distribution families to feature values.
    Fit(FitArgs),
    /// Optimize the Gaussian random feature for an ID/OOD pair.
    Optimize(OptimizeArgs),
    /// Closed-form loss landscape of a linear feature.
    Oracle(OracleArgs),
    /// Optimize once per value of a loss or distribution parameter.
    Sweep(SweepArgs),
    /// Apply a shaping function to a feature file.
    Shape(ShapeArgs),
    /// Energy scores of a feature file through a classifier head.
    Score(ScoreArgs),
    /// FPR95 and AUROC from ID and OOD scores.
    Eval(EvalArgs),
    /// Tune the piecewise family on validation features.
    Tune(TuneArgs),
    /// Information bottleneck of a shaping function.
    Ib(IbArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Encoding {
    Bin,
    Csv,
}

impl From<Encoding> for FeatureEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Bin => FeatureEncoding::Binary,
            Encoding::Csv => FeatureEncoding::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Gaussian,
    Laplace,
    InverseGaussian,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: Encoding,
    /// Families to fit; repeat for several.
    #[arg(long = "family", value_enum, required = true)]
    pub families: Vec<Family>,
    /// Use only rows with this label.
    #[arg(long)]
    pub label: Option<u8>,
    /// Use only this feature column; all columns are pooled otherwise.
    #[arg(long)]
    pub column: Option<usize>,
    /// Gaussian ID spec defining the distance for the inverse-Gaussian family.
    #[arg(long)]
    pub id_spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// ID distribution spec (JSON).
    #[arg(long, conflicts_with = "id_density")]
    pub id: Option<PathBuf>,
    /// OOD distribution spec (JSON).
    #[arg(long, conflicts_with = "ood_density")]
    pub ood: Option<PathBuf>,
    /// ID density CSV (`z,density`), instead of a spec.
    #[arg(long)]
    pub id_density: Option<PathBuf>,
    /// OOD density CSV (`z,density`), on the same grid as the ID density.
    #[arg(long)]
    pub ood_density: Option<PathBuf>,
    /// Run configuration (JSON): `{"params": {...}, "optimizer": {...}, "grid_points": N}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Output curve file.
    #[arg(long)]
    pub curve: PathBuf,
    /// Output loss-trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Linear feature configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub w_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub w_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub w_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: Encoding,
    /// Piecewise shape (JSON).
    #[arg(long, group = "source")]
    pub shape: Option<PathBuf>,
    /// Curve file produced by `optimize`.
    #[arg(long, group = "source")]
    pub curve: Option<PathBuf>,
    /// Named tuned shape, e.g. `resnet50/imagenet`.
    #[arg(long, group = "source")]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub out_format: Option<Encoding>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: Encoding,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// ID scores CSV.
    #[arg(long, requires = "ood")]
    pub id: Option<PathBuf>,
    /// OOD scores CSV.
    #[arg(long)]
    pub ood: Option<PathBuf>,
    /// Single scores CSV with a `label` column, instead of `--id/--ood`.
    #[arg(long, conflicts_with_all = ["id", "ood"])]
    pub scores: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// ID validation features.
    #[arg(long)]
    pub id: PathBuf,
    /// OOD validation features.
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: Encoding,
    #[arg(long)]
    pub head: PathBuf,
    /// Search configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Output shape JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Output validation report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IbArgs {
    #[arg(long, group = "source")]
    pub shape: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub curve: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub preset: Option<String>,
    /// ID distribution spec (JSON).
    #[arg(long)]
    pub id: PathBuf,
    /// OOD distribution spec (JSON).
    #[arg(long)]
    pub ood: PathBuf,
    /// Probe width; 5% of the ID standard deviation when omitted.
    #[arg(long)]
    pub sigma_probe: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p1: f64,
}

/// Configuration of the `optimize` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRun {
    pub params: LossParams,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "study_points")]
    pub grid_points: usize,
}

fn study_points() -> usize {
    STUDY_POINTS
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("value serializes");
    out.push(b'\n');
    out
}

fn read_spec(path: &Path) -> Result<DistributionSpec> {
    let s: DistributionSpec = read_json(path)?;
    s.validate()?;
    Ok(s)
}

fn preset(name: &str) -> Result<PiecewiseLinearShape> {
    tuned_presets().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s).ok_or_else(|| {
        let names: Vec<_> = tuned_presets().into_iter().map(|(n, _)| n).collect();
        Error::Usage(format!("unknown preset `{name}`; known: {}", names.join(", ")))
    })
}

fn load_shape(shape: &Option<PathBuf>, curve: &Option<PathBuf>, preset_name: &Option<String>) -> Result<Shape> {
    match (shape, curve, preset_name) {
        (Some(p), None, None) => {
            let s: PiecewiseLinearShape = read_json(p)?;
            s.validate()?;
            Ok(Shape::Piecewise(s))
        }
        (None, Some(p), None) => Ok(Shape::Curve(CurveFile::read(p)?.to_shape()?)),
        (None, None, Some(n)) => Ok(Shape::Piecewise(preset(n)?)),
        _ => Err(Error::Usage("give exactly one of --shape, --curve, --preset".into())),
    }
}

fn fit(args: &FitArgs) -> Result<()> {
    let file = read_features(&args.features, args.format.into())?;
    let m = match args.label {
        Some(l) => file.matrix.select_label(l).ok_or_else(|| Error::Usage("--label needs a labeled feature file".into()))?,
        None => file.matrix,
    };
    let samples: Vec<f64> = match args.column {
        Some(j) if j >= m.cols() => return Err(Error::IndexOutOfRange { index: j, len: m.cols() }),
        Some(j) => (0..m.rows()).map(|i| f64::from(m.row(i)[j])).collect(),
        None => m.to_f64(),
    };
    let mut out = BTreeMap::new();
    for fam in &args.families {
        let (name, spec) = match fam {
            Family::Gaussian => ("gaussian", fit_gaussian(&samples)?),
            Family::Laplace => ("laplace", fit_laplace(&samples)?),
            Family::InverseGaussian => {
                let id = match &args.id_spec {
                    Some(p) => read_spec(p)?,
                    None => return Err(Error::Usage("--family inverse-gaussian needs --id-spec".into())),
                };
                ("inverse_gaussian_ood", fit_inverse_gaussian_ood(&samples, &id)?)
            }
        };
        out.insert(name, spec);
    }
    write_atomic(&args.out, &json_bytes(&out))
}

fn optimize_cmd(args: &OptimizeArgs) -> Result<()> {
    let mut run = match &args.config {
        Some(p) => read_json::<OptimizeRun>(p)?,
        None => OptimizeRun {
            params: LossParams::new(1.0, 10.0, 0.5)?,
            optimizer: OptimizerConfig::default(),
            grid_points: STUDY_POINTS,
        },
    };
    if let Some(a) = args.alpha {
        run.params.alpha = a;
    }
    if let Some(b) = args.beta {
        run.params.beta = b;
    }
    if let Some(p) = args.p1 {
        run.params.p1 = p;
    }
    if let Some(k) = args.iterations {
        run.optimizer.iterations = k;
    }
    if let Some(n) = args.grid_points {
        run.grid_points = n;
    }
    run.params.validate()?;
    run.optimizer.validate()?;

    let (p0, p1): (DensityGrid, DensityGrid) = match (&args.id, &args.ood, &args.id_density, &args.ood_density) {
        (Some(i), Some(o), None, None) => {
            let (id, ood) = (read_spec(i)?, read_spec(o)?);
            let grid = Grid1D::study(&[id, ood], run.grid_points)?;
            (discretize(&id, &grid)?, discretize(&ood, &grid)?)
        }
        (None, None, Some(i), Some(o)) => (read_density_csv(&fs::read(i)?)?, read_density_csv(&fs::read(o)?)?),
        _ => return Err(Error::Usage("give --id and --ood specs, or --id-density and --ood-density".into())),
    };
    let out = optimize(ClassDensities::new(&p0, &p1)?, &run.params, &run.optimizer)?;
    let curve = CurveFile::from_feature(&out.feature);
    curve.validate()?;
    let curve_bytes = curve.to_bytes()?;
    let trace_bytes = trace_to_csv(&out.trace)?;
    write_atomic(&args.curve, &curve_bytes)?;
    if let Some(t) = &args.trace {
        write_atomic(t, &trace_bytes)?;
    }
    println!("{}", serde_json::to_string(&json!({ "initial": out.initial, "final": out.final_loss() }))?);
    Ok(())
}

fn oracle_cmd(args: &OracleArgs) -> Result<()> {
    let cfg: LinearFeatureConfig = read_json(&args.config)?;
    if !(args.w_step > 0.0 && args.w_min <= args.w_max && args.w_min.is_finite() && args.w_max.is_finite()) {
        return Err(Error::Usage("need finite --w-min <= --w-max and --w-step > 0".into()));
    }
    let n = ((args.w_max - args.w_min) / args.w_step + 1e-9).floor() as usize + 1;
    let ws: Vec<f64> = (0..n).map(|i| args.w_min + i as f64 * args.w_step).collect();
    let land = loss_landscape(&cfg, &ws)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["w", "kl_sym", "i_zz", "i_zy", "total"])?;
    for (wv, l) in &land.points {
        let b = l.breakdown;
        w.write_record([wv, &b.kl_sym, &b.i_zz, &b.i_zy, &b.total].map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&args.out, &bytes)?;
    println!("{}", serde_json::to_string(&json!({ "argmin_w": land.argmin_w(), "min_total": land.min_total() }))?);
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let spec: SweepSpec = read_json(&args.spec)?;
    let points = run_sweep(&spec)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut entries = Vec::new();
    for (i, p) in points.iter().enumerate() {
        match &p.outcome {
            Ok(out) => {
                let curve = format!("curve_{i:03}.csv");
                let trace = format!("trace_{i:03}.csv");
                files.push((curve.clone(), CurveFile::from_feature(&out.feature).to_bytes()?));
                files.push((trace.clone(), trace_to_csv(&out.trace)?));
                entries.push(json!({ "value": p.value, "curve": curve, "trace": trace, "loss": out.final_loss() }));
            }
            Err(e) => entries.push(json!({ "value": p.value, "error": e.to_string() })),
        }
    }
    let manifest = json!({
        "format": SWEEP_FORMAT,
        "version": FORMAT_VERSION,
        "knob": spec.knob.to_string(),
        "spec": spec,
        "points": entries,
    });
    fs::create_dir_all(&args.out_dir)?;
    for (name, bytes) in &files {
        write_atomic(&args.out_dir.join(name), bytes)?;
    }
    write_atomic(&args.out_dir.join("manifest.json"), &json_bytes(&manifest))
}

fn shape_cmd(args: &ShapeArgs) -> Result<()> {
    let shape = load_shape(&args.shape, &args.curve, &args.preset)?;
    let file = read_features(&args.features, args.format.into())?;
    let shaped = FeatureFile { matrix: apply(&shape, &file.matrix), provenance: file.provenance };
    write_features(&args.out, &shaped, args.out_format.unwrap_or(args.format).into())
}

fn score_cmd(args: &ScoreArgs) -> Result<()> {
    let file = read_features(&args.features, args.format.into())?;
    let head = HeadFile::read(&args.head)?;
    let scores = energy_score(&head.head, &file.matrix, args.temperature)?;
    write_atomic(&args.out, &scores_to_csv(&scores, file.matrix.labels())?)
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    Ok(scores_from_csv(&fs::read(path)?)?.0)
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let set = match (&args.id, &args.ood, &args.scores) {
        (Some(i), Some(o), None) => ScoreSet::new(read_scores(i)?, read_scores(o)?)?,
        (None, None, Some(p)) => {
            let (s, labels) = scores_from_csv(&fs::read(p)?)?;
            let labels = labels.ok_or_else(|| Error::Format("--scores needs a `label` column".into()))?;
            let pick = |want: u8| s.iter().zip(&labels).filter(|(_, &l)| l == want).map(|(v, _)| *v).collect();
            ScoreSet::new(pick(0), pick(1))?
        }
        _ => return Err(Error::Usage("give --id and --ood, or --scores".into())),
    };
    let bytes = json_bytes(&evaluate(&set)?);
    match &args.out {
        Some(p) => write_atomic(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn tune_cmd(args: &TuneArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<TuneConfig>(p)?,
        None => TuneConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    let id = read_features(&args.id, args.format.into())?;
    let ood = read_features(&args.ood, args.format.into())?;
    let head = HeadFile::read(&args.head)?;
    let result = tune_piecewise(&id.matrix, &ood.matrix, &head.head, &cfg)?;
    let shape_bytes = json_bytes(&result.shape);
    let report_bytes = json_bytes(&json!({ "report": result.report, "evaluations": result.evaluations, "seed": cfg.seed }));
    write_atomic(&args.out, &shape_bytes)?;
    if let Some(r) = &args.report {
        write_atomic(r, &report_bytes)?;
    }
    Ok(())
}

fn ib_cmd(args: &IbArgs) -> Result<()> {
    let shape = load_shape(&args.shape, &args.curve, &args.preset)?;
    let (id, ood) = (read_spec(&args.id)?, read_spec(&args.ood)?);
    let sigma = args.sigma_probe.unwrap_or_else(|| default_sigma_probe(&id));
    let est = estimate_ib(&shape, &id, &ood, sigma, args.beta, args.p1)?;
    println!("{}", serde_json::to_string(&est)?);
    Ok(())
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Optimize(a) => optimize_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Shape(a) => shape_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Tune(a) => tune_cmd(a, cli.seed),
        Command::Ib(a) => ib_cmd(a),
    }
}

fn report_error(class: crate::ErrorClass, message: &str) -> i32 {
    let code = class.exit_code();
    eprintln!("{}", json!({ "error": class.as_str(), "exit_code": code, "message": message }));
    code
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return report_error(crate::ErrorClass::Usage, first);
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => report_error(e.class(), &e.to_string()),
    }
}
