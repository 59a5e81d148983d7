use clap::{Args, Parser, Subcommand};
use photocount::acquisition::{AreaHistogram, HistogramSidecar};
use photocount::distribution::PhotonDistribution;
use photocount::pipeline::{self, Analysis, RunConfig};
use photocount::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Simulate, fit and analyze photon-number-resolved pulse-area data.
#[derive(Parser)]
#[command(name = "photocount", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an acquisition; writes histogram.csv, histogram.json and gate_counts.json.
    Simulate(Common),
    /// Fit a histogram and compute Γ, parity and an efficiency estimate; writes analysis.json.
    Analyze(AnalyzeArgs),
    /// Invert the detector channel on an analysis; writes reconstruction.csv,
    /// reconstruction.json and transfer_matrix.csv.
    Reconstruct(ReconstructArgs),
    /// Γ against pump power; writes sweep.csv.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Treat numerical warnings as failures (exit code 4).
    #[arg(long)]
    strict: bool,
    /// Parallel shards for the simulator. Results do not depend on it.
    #[arg(long)]
    shards: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Histogram CSV with header `bin_center,count`.
    #[arg(long)]
    input: PathBuf,
    /// Histogram sidecar JSON; defaults to the input path with a `.json` extension when present.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    /// analysis.json from `analyze`.
    #[arg(long)]
    input: PathBuf,
}

enum Failure {
    Config(Error),
    Analysis(Error),
    NotConverged,
    Strict(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Fit(_) | Error::EmptyHistogram | Error::ZeroDenominator(_) | Error::SingularChannel => {
                Failure::Analysis(e)
            }
            other => Failure::Config(other),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Analysis(_) | Failure::NotConverged => 3,
            Failure::Strict(_) => 4,
        }
    }

    fn report(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Config(e) => ("config", e.to_string()),
            Failure::Analysis(e) => ("analysis", e.to_string()),
            Failure::NotConverged => ("fit", "peak fit did not converge; report written with converged = false".into()),
            Failure::Strict(w) => ("warning", w.join("; ")),
        };
        serde_json::json!({ "schema_version": pipeline::SCHEMA_VERSION, "error": kind, "message": message })
    }
}

type Outcome = std::result::Result<(), Failure>;

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes through a temporary file in the same directory and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Error> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter { name: "config", reason: "--config is required".into() })?;
    let mut cfg: RunConfig = serde_json::from_str(&read(path)?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(shards) = common.shards {
        cfg.shards = shards;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(common: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf, Error> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn strict_check(strict: bool, warnings: Vec<String>) -> Outcome {
    if strict && !warnings.is_empty() {
        return Err(Failure::Strict(warnings));
    }
    Ok(())
}

fn simulate(args: &Common) -> Outcome {
    let cfg = load_config(args)?;
    let dir = output_dir(args, Some(&cfg))?;
    let acq = pipeline::simulate(&cfg)?;
    let summary = pipeline::gate_summary(&cfg, &acq)?;
    write_atomic(&dir.join("histogram.csv"), acq.histogram.to_csv().as_bytes())?;
    write_json(&dir.join("histogram.json"), &acq.histogram.sidecar(Some(cfg.detector.clone())))?;
    write_json(&dir.join("gate_counts.json"), &summary)?;
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Outcome {
    let cfg = args.common.config.as_ref().map(|_| load_config(&args.common)).transpose()?;
    let fit = cfg.as_ref().map(|c| c.fit).unwrap_or_default();
    let dir = output_dir(&args.common, cfg.as_ref())?;

    let sidecar_path = args.sidecar.clone().or_else(|| {
        let p = args.input.with_extension("json");
        p.exists().then_some(p)
    });
    let sidecar: Option<HistogramSidecar> = match &sidecar_path {
        Some(p) => Some(serde_json::from_str(&read(p)?).map_err(Error::from)?),
        None => None,
    };
    let h = AreaHistogram::from_csv(&read(&args.input)?, sidecar.as_ref())?;
    let analysis = pipeline::analyze_histogram(&h, &fit)?;
    write_json(&dir.join("analysis.json"), &analysis)?;
    if !analysis.converged {
        return Err(Failure::NotConverged);
    }
    strict_check(args.common.strict, analysis.warnings)
}

fn reconstruct(args: &ReconstructArgs) -> Outcome {
    let cfg = load_config(&args.common)?;
    let dir = output_dir(&args.common, Some(&cfg))?;
    let analysis: Analysis = serde_json::from_str(&read(&args.input)?).map_err(Error::from)?;
    let measured: PhotonDistribution = analysis.distribution()?;
    let run = pipeline::reconstruct(&measured, &cfg.detector, cfg.cutoff, cfg.condition_threshold)?;
    write_atomic(&dir.join("reconstruction.csv"), run.distribution.to_csv().as_bytes())?;
    write_json(&dir.join("reconstruction.json"), &run.report)?;
    write_atomic(&dir.join("transfer_matrix.csv"), run.matrix.to_csv().as_bytes())?;
    strict_check(args.common.strict, run.report.warnings)
}

fn sweep(args: &Common) -> Outcome {
    let cfg = load_config(args)?;
    let dir = output_dir(args, Some(&cfg))?;
    let points = pipeline::sweep_config(&cfg)?;
    write_atomic(&dir.join("sweep.csv"), pipeline::sweep_to_csv(&points).as_bytes())?;
    if points.iter().any(|p| !p.converged) {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Sweep(a) => sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.report());
            ExitCode::from(f.code())
        }
    }
}
