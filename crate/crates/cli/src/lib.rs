//! Command implementations behind the `pansharp` binary.
//!
//! Each command resolves a [`RunConfig`], echoes it into its output
//! directory and then calls straight into the library; nothing is computed
//! on the CLI side that a library caller could not reproduce.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pansharp::fusion::Method;
use pansharp::imaging::{pnm, psr1, MsImage, PanImage, Raster, Resolution, SensorSpec};
use pansharp::metrics::report::{EvalRecord, EvalReport, Metric};
use pansharp::metrics::{full_scores, reduced_scores, MetricOptions};
use pansharp::model::{gradient_cases, read_checkpoint, TdnetModel};
use pansharp::tensor::gradcheck::{sweep, FdOptions, GradCase, GradRow};
use pansharp::trainer::{ablation_suite, train};
use pansharp::wald::{make_samples, split, synthetic_scene, Dataset, DatasetManifest, Provenance, SceneOptions};

pub use config::RunConfig;

pub const GRADCHECK_TOLERANCE: f64 = 1e-2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pansharp::Error),
    #[error("gradient check failed for: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    /// 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use pansharp::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Core(E::Numeric(_)) | CliError::GradcheckFailed(_) => 4,
            CliError::Core(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pansharp",
    version,
    about = "Pansharpening: simulation, fusion, training and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Sectioned `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both dataset.seed and train.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sensor preset (wv3, gf2, qb).
    #[arg(long, global = true)]
    pub sensor: Option<String>,
    /// `section.key=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Reduced,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a reduced-resolution dataset from a scene.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Use a synthetic scene of dataset.demo_size MS pixels.
        #[arg(long)]
        demo: bool,
    },
    /// Train the network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the full network and every ablation variant instead.
        #[arg(long)]
        ablation: bool,
    },
    /// Fuse one MS/PAN pair.
    Fuse {
        /// exp, sfim, glp-hpm, glp-reg, mra-unit or tdnet[:checkpoint].
        #[arg(long)]
        method: String,
        #[arg(long)]
        ms: PathBuf,
        #[arg(long)]
        pan: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score fused images (PSR1 files or directories of them).
    Eval {
        #[arg(long, value_enum, default_value = "reduced")]
        mode: EvalMode,
        #[arg(long)]
        fused: PathBuf,
        /// Reference set for reduced mode.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Original MS set for full mode.
        #[arg(long)]
        ms: Option<PathBuf>,
        /// Original PAN set for full mode.
        #[arg(long)]
        pan: Option<PathBuf>,
        /// Label of the method column.
        #[arg(long, default_value = "fused")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank several methods on one test set.
    Compare {
        /// Dataset whose test split is fused with every `--methods` entry.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Existing report CSVs to include, repeatable.
        #[arg(long)]
        report: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference sweep over every operator and the full network.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Defaults, then the config file, then `--sensor`, `--seed` and `--set`.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(sensor) = &common.sensor {
        cfg.set("sensor", "preset", sensor)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("dataset", "seed", &seed.to_string())?;
        cfg.set("train", "seed", &seed.to_string())?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    cfg.sensor()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Simulate { out, demo } => cmd_simulate(&cfg, out, *demo),
        Command::Train { data, out, ablation } => cmd_train(&cfg, data, out, *ablation),
        Command::Fuse {
            method,
            ms,
            pan,
            checkpoint,
            out,
        } => cmd_fuse(&cfg, method, ms, pan, checkpoint.as_deref(), out),
        Command::Eval {
            mode,
            fused,
            reference,
            ms,
            pan,
            method,
            out,
        } => cmd_eval(
            &cfg,
            *mode,
            fused,
            reference.as_deref(),
            ms.as_deref(),
            pan.as_deref(),
            method,
            out,
        ),
        Command::Compare {
            data,
            methods,
            report,
            out,
        } => cmd_compare(&cfg, data.as_deref(), methods, report, out),
        Command::Gradcheck { out } => cmd_gradcheck(&cfg, out.as_deref()),
    }
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, demo: bool) -> Result<String, CliError> {
    let sensor = cfg.sensor()?;
    let seed = cfg.dataset_seed()?;
    let (ms, pan, sources) = if demo {
        let size = cfg.demo_size()?;
        let (ms, pan) = synthetic_scene(size, size, &sensor, seed, &SceneOptions::default())?;
        (ms, pan, vec![format!("synthetic:{size}x{size}:seed={seed}")])
    } else {
        let (ms_path, pan_path) = match (cfg.ms_path(), cfg.pan_path()) {
            (Some(m), Some(p)) => (m, p),
            _ => {
                return Err(CliError::Config(
                    "simulate needs dataset.ms and dataset.pan, or --demo".into(),
                ))
            }
        };
        let ms = MsImage::new(psr1::read(&ms_path)?.raster, sensor.clone(), Resolution::Full)?;
        let pan = PanImage::new(psr1::read(&pan_path)?.raster, sensor.clone())?;
        (
            ms,
            pan,
            vec![ms_path.display().to_string(), pan_path.display().to_string()],
        )
    };
    let (patch, stride) = cfg.patch()?;
    let samples = make_samples(&ms, &pan, patch, stride, 0)?;
    let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    let splits = split(&ids, cfg.split_ratios()?, seed)?;
    let manifest = DatasetManifest {
        seed,
        sensor: sensor.clone(),
        splits,
        provenance: Provenance::new(sources, patch, stride, sensor.ratio),
    };
    let counts = (
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
    );
    Dataset::create(out, manifest, &samples)?;
    cfg.echo(out)?;
    Ok(format!(
        "{} samples (train {}, val {}, test {}) written to {}\n",
        samples.len(),
        counts.0,
        counts.1,
        counts.2,
        out.display()
    ))
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, ablation: bool) -> Result<String, CliError> {
    let dataset = Dataset::open(data)?;
    let sensor = &dataset.manifest.sensor;
    let model_cfg = cfg.model(sensor.bands, sensor.ratio)?;
    let train_cfg = cfg.train()?;
    cfg.echo(out)?;
    if ablation {
        let outcome = ablation_suite(&dataset, &model_cfg, &train_cfg, Some(out))?;
        fs::write(out.join("ablation.csv"), outcome.report.to_csv()).map_err(pansharp::Error::from)?;
        let mut rows = String::from("variant,parameters,gamma,final_train_loss,val_output_l1\n");
        for r in &outcome.rows {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(
                rows,
                "{},{},{},{},{}",
                r.name,
                r.parameters,
                r.gamma,
                opt(r.final_train_loss),
                opt(r.val_output_l1)
            )
            .unwrap();
        }
        fs::write(out.join("ablation_rows.csv"), &rows).map_err(pansharp::Error::from)?;
        return Ok(rows);
    }
    let outcome = train(&dataset, &model_cfg, &train_cfg, Some(out))?;
    let last = outcome.log.epochs.last();
    Ok(format!(
        "trained {} epochs ({} parameters); final train loss {}; best epoch {}\n",
        outcome.log.epochs.len(),
        outcome.model.parameter_count(),
        last.map_or("n/a".into(), |r| format!("{:.6}", r.train_loss)),
        outcome.best_epoch.map_or("init".into(), |e| e.to_string()),
    ))
}

/// A fusion method named on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum FuseMethod {
    Classic(Method),
    Tdnet(Option<PathBuf>),
}

impl FromStr for FuseMethod {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "tdnet" {
            return Ok(FuseMethod::Tdnet(None));
        }
        if let Some(path) = s.strip_prefix("tdnet:") {
            return Ok(FuseMethod::Tdnet(Some(PathBuf::from(path))));
        }
        Ok(FuseMethod::Classic(Method::from_str(s)?))
    }
}

impl FuseMethod {
    pub fn label(&self) -> &str {
        match self {
            FuseMethod::Classic(m) => m.name(),
            FuseMethod::Tdnet(_) => "tdnet",
        }
    }

    /// Resolves the checkpoint once so a set of images shares one model.
    pub fn prepare(self, checkpoint: Option<&Path>) -> Result<PreparedMethod, CliError> {
        match self {
            FuseMethod::Classic(m) => Ok(PreparedMethod::Classic(m)),
            FuseMethod::Tdnet(path) => {
                let path = path
                    .or_else(|| checkpoint.map(Path::to_path_buf))
                    .ok_or_else(|| CliError::Config("tdnet needs a checkpoint (tdnet:PATH or --checkpoint)".into()))?;
                if !path.exists() {
                    return Err(CliError::Config(format!("checkpoint {} not found", path.display())));
                }
                Ok(PreparedMethod::Tdnet(Box::new(read_checkpoint(&path)?)))
            }
        }
    }
}

pub enum PreparedMethod {
    Classic(Method),
    Tdnet(Box<TdnetModel>),
}

impl PreparedMethod {
    pub fn fuse(&self, ms: &MsImage, pan: &PanImage) -> Result<Raster, CliError> {
        match self {
            PreparedMethod::Classic(m) => Ok(m.fuse(ms, pan)?.raster),
            PreparedMethod::Tdnet(model) => Ok(model.fuse_raster(&ms.raster, &pan.raster)?),
        }
    }
}

pub const FUSED_FILE: &str = "fused.psr1";
pub const PREVIEW_FILE: &str = "fused_preview.ppm";

pub fn cmd_fuse(
    cfg: &RunConfig,
    method: &str,
    ms: &Path,
    pan: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<String, CliError> {
    let sensor = cfg.sensor()?;
    let method = FuseMethod::from_str(method)?;
    let label = method.label().to_string();
    let prepared = method.prepare(checkpoint)?;
    let ms_file = psr1::read(ms)?;
    let ms_img = MsImage::new(ms_file.raster, sensor.clone(), Resolution::Reduced)?;
    let pan_img = PanImage::new(psr1::read(pan)?.raster, sensor.clone())?;
    let fused = prepared.fuse(&ms_img, &pan_img)?;
    cfg.echo(out)?;
    psr1::write(out.join(FUSED_FILE), &fused, ms_file.bit_depth, &sensor.name)?;
    write_preview(cfg, &fused, &out.join(PREVIEW_FILE))?;
    Ok(format!(
        "{label}: {}x{}x{} written to {}\n",
        fused.height(),
        fused.width(),
        fused.bands(),
        out.join(FUSED_FILE).display()
    ))
}

fn write_preview(cfg: &RunConfig, raster: &Raster, path: &Path) -> Result<(), CliError> {
    let [r, g, b] = cfg.preview_bands(raster.bands())?;
    let rgb = Raster::from_bands(
        raster.height(),
        raster.width(),
        &[raster.band(r), raster.band(g), raster.band(b)],
    )?;
    pnm::write_preview(path, &rgb)?;
    Ok(())
}

/// PSR1 files of a set: the file itself, or a directory's `*.psr1` files
/// sorted by name.
pub fn list_set(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(pansharp::Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "psr1"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(pansharp::Error::Format(format!("no .psr1 files in {}", path.display())).into());
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn same_size(a: &[PathBuf], b: &[PathBuf], what: &str) -> Result<(), CliError> {
    if a.len() != b.len() {
        return Err(
            pansharp::Error::Format(format!("set size mismatch: {} fused vs {} {what}", a.len(), b.len())).into(),
        );
    }
    Ok(())
}

fn reduced_record(
    label: &str,
    image: &str,
    fused: &Raster,
    reference: &Raster,
    ratio: usize,
    opts: &MetricOptions,
) -> Result<EvalRecord, CliError> {
    let s = reduced_scores(fused, reference, ratio, opts)?;
    Ok(EvalRecord::new(label, image)
        .with(Metric::Sam, s.sam)
        .with(Metric::Ergas, s.ergas)
        .with(Metric::Scc, s.scc)
        .with(Metric::Q2n, s.q2n))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    cfg: &RunConfig,
    mode: EvalMode,
    fused: &Path,
    reference: Option<&Path>,
    ms: Option<&Path>,
    pan: Option<&Path>,
    label: &str,
    out: &Path,
) -> Result<String, CliError> {
    let sensor = cfg.sensor()?;
    let opts = cfg.metric()?;
    let fused_set = list_set(fused)?;
    let mut report = EvalReport::default();
    report
        .provenance
        .push(("mode".into(), format!("{mode:?}").to_lowercase()));
    report.provenance.push(("sensor".into(), sensor.name.clone()));
    report.provenance.push(("fused".into(), fused.display().to_string()));
    match mode {
        EvalMode::Reduced => {
            let reference = reference.ok_or_else(|| CliError::Config("reduced mode needs --reference".into()))?;
            let ref_set = list_set(reference)?;
            same_size(&fused_set, &ref_set, "reference")?;
            report
                .provenance
                .push(("reference".into(), reference.display().to_string()));
            for (f, r) in fused_set.iter().zip(&ref_set) {
                let fr = psr1::read(f)?.raster;
                let rr = psr1::read(r)?.raster;
                report.push(reduced_record(label, &stem(f), &fr, &rr, sensor.ratio, &opts)?);
            }
        }
        EvalMode::Full => {
            let (ms, pan) = match (ms, pan) {
                (Some(m), Some(p)) => (m, p),
                _ => return Err(CliError::Config("full mode needs --ms and --pan".into())),
            };
            let (ms_set, pan_set) = (list_set(ms)?, list_set(pan)?);
            same_size(&fused_set, &ms_set, "ms")?;
            same_size(&fused_set, &pan_set, "pan")?;
            for ((f, m), p) in fused_set.iter().zip(&ms_set).zip(&pan_set) {
                let s = full_scores(
                    &psr1::read(f)?.raster,
                    &psr1::read(m)?.raster,
                    &psr1::read(p)?.raster,
                    &sensor,
                    &opts,
                )?;
                report.push(
                    EvalRecord::new(label, stem(f))
                        .with(Metric::DLambda, s.d_lambda)
                        .with(Metric::Ds, s.d_s)
                        .with(Metric::Qnr, s.qnr),
                );
            }
        }
    }
    cfg.echo(out)?;
    let csv = report.to_csv();
    fs::write(out.join("eval.csv"), &csv).map_err(pansharp::Error::from)?;
    fs::write(out.join("eval_provenance.txt"), report.provenance_text()).map_err(pansharp::Error::from)?;
    Ok(csv)
}

/// Fuses every test sample of `dataset` with each method and scores it
/// against the sample's reference.
pub fn compare_on_dataset(dataset: &Dataset, methods: &[String], opts: &MetricOptions) -> Result<EvalReport, CliError> {
    let sensor: SensorSpec = dataset.manifest.sensor.clone();
    let samples = dataset.load_all(&dataset.manifest.splits.test)?;
    if samples.is_empty() {
        return Err(pansharp::Error::Format("dataset has an empty test split".into()).into());
    }
    let mut report = EvalReport::default();
    report.provenance.push((
        "dataset_fingerprint".into(),
        format!("{:016x}", dataset.manifest.fingerprint()),
    ));
    for name in methods {
        let method = FuseMethod::from_str(name)?;
        let prepared = method.prepare(None)?;
        for s in &samples {
            let ms = MsImage::new(s.lrms.clone(), sensor.clone(), Resolution::Reduced)?;
            let pan = PanImage::new(s.pan.clone(), sensor.clone())?;
            let fused = prepared.fuse(&ms, &pan)?;
            let window = opts.window.min(s.gt.height()).min(s.gt.width());
            let local = MetricOptions { window, ..*opts };
            report.push(reduced_record(
                name,
                &s.id.to_string(),
                &fused,
                &s.gt,
                sensor.ratio,
                &local,
            )?);
        }
    }
    Ok(report)
}

pub fn cmd_compare(
    cfg: &RunConfig,
    data: Option<&Path>,
    methods: &[String],
    reports: &[PathBuf],
    out: &Path,
) -> Result<String, CliError> {
    let opts = cfg.metric()?;
    let mut merged = EvalReport::default();
    if let Some(dir) = data {
        if methods.is_empty() {
            return Err(CliError::Config("--data needs --methods".into()));
        }
        let dataset = Dataset::open(dir)?;
        let report = compare_on_dataset(&dataset, methods, &opts)?;
        merged.records.extend(report.records);
        merged.provenance.extend(report.provenance);
    }
    for path in reports {
        let text = fs::read_to_string(path).map_err(pansharp::Error::from)?;
        merged.records.extend(EvalReport::from_csv(&text)?.records);
        merged.provenance.push(("report".into(), path.display().to_string()));
    }
    if merged.records.is_empty() {
        return Err(CliError::Config("compare needs --data/--methods or --report".into()));
    }
    let table = merged.rank()?;
    let text = table.to_text();
    cfg.echo(out)?;
    fs::write(out.join("compare.csv"), merged.to_csv()).map_err(pansharp::Error::from)?;
    fs::write(out.join("compare.txt"), &text).map_err(pansharp::Error::from)?;
    Ok(text)
}

/// One line per case: name, maximum relative error, entries checked and
/// PASS/FAIL.
pub fn format_gradcheck(rows: &[GradRow]) -> String {
    let mut out = format!("{:<18}{:>16}{:>10}  status\n", "op", "max_rel_error", "checked");
    for r in rows {
        let status = match (&r.error, r.passed) {
            (Some(e), _) => format!("FAIL ({e})"),
            (None, true) => "PASS".to_string(),
            (None, false) => "FAIL".to_string(),
        };
        writeln!(
            out,
            "{:<18}{:>16.3e}{:>10}  {status}",
            r.name, r.max_rel_error, r.checked
        )
        .unwrap();
    }
    out
}

pub fn gradcheck_rows(cases: &[GradCase]) -> Vec<GradRow> {
    sweep(cases, &FdOptions::default(), GRADCHECK_TOLERANCE)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<String, CliError> {
    let seed: u64 = cfg
        .get("train", "seed")
        .parse()
        .map_err(|_| CliError::Config("train.seed".into()))?;
    let rows = gradcheck_rows(&gradient_cases(seed)?);
    let text = format_gradcheck(&rows);
    if let Some(dir) = out {
        cfg.echo(dir)?;
        fs::write(dir.join("gradcheck.txt"), &text).map_err(pansharp::Error::from)?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}
