//! The `kscale` command line.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::bdrate::{bd_rate, BDRateResult};
use crate::brent::OptimizerConfig;
use crate::corpus::{read_manifest, synthetic_corpus};
use crate::encoder::{EncodeCache, Encoder, EncoderBackend, ExternalBackend, ExternalEncoderConfig, SyntheticBackend};
use crate::error::{Error, Result};
use crate::pipeline::{pareto_for_clip_detailed, ClipResult, PipelineConfig, DEFAULT_ENCODE_BUDGET};
use crate::report::{default_thresholds, summary_table, write_atomic, Method};
use crate::types::{ClipDescriptor, MetricKind, RDCurve, RDPoint, RangeLabel, RateControlMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_OVERLAP: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

pub const CACHE_ENV: &str = "KSCALE_CACHE";

#[derive(Debug, Parser)]
#[command(
    name = "kscale",
    version,
    about = "Lagrangian multiplier scale search with Pareto RD envelopes"
)]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search k per clip and range, then build the Pareto envelopes.
    Optimize(RunConfig),
    /// BD-Rate of curve B against curve A.
    Bdrate(BdrateArgs),
    /// Summary table and CDF from a results file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Crf,
    Cbr,
}

impl From<ModeArg> for RateControlMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Crf => RateControlMode::Crf,
            ModeArg::Cbr => RateControlMode::Cbr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Psnr,
    Ssim,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Psnr => MetricKind::Psnr,
            MetricArg::Ssim => MetricKind::Ssim,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub backend: BackendKind,

    #[arg(long, value_enum, default_value = "cbr")]
    pub mode: ModeArg,

    #[arg(long, value_enum, default_value = "psnr")]
    pub metric: MetricArg,

    /// Clip manifest CSV (id,source_path,frame_count,width,height).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Size of the generated corpus when no manifest is given.
    #[arg(long, default_value_t = 10)]
    pub synth_clips: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// TOML file describing the external encoder.
    #[arg(long)]
    pub encoder_config: Option<PathBuf>,

    /// Persistent encode cache (JSON lines).
    #[arg(long, env = CACHE_ENV)]
    pub cache: Option<PathBuf>,

    #[arg(long, default_value = "results.jsonl")]
    pub results: PathBuf,

    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub parallelism: u32,

    #[arg(long, default_value_t = 0.25)]
    pub k_lo: f64,

    #[arg(long, default_value_t = 2.0)]
    pub k_hi: f64,

    #[arg(long, default_value_t = 1e-2)]
    pub xtol: f64,

    #[arg(long, default_value_t = 12)]
    pub max_evals: usize,

    #[arg(long, default_value_t = DEFAULT_ENCODE_BUDGET)]
    pub encode_budget: usize,

    /// Skip the single-k full-span baseline.
    #[arg(long)]
    pub no_direct: bool,
}

impl RunConfig {
    /// Defaults for the synthetic backend, as the command line would set them.
    pub fn synthetic(mode: RateControlMode, metric: MetricKind, clips: usize, seed: u64, results: PathBuf) -> Self {
        RunConfig {
            backend: BackendKind::Synthetic,
            mode: match mode {
                RateControlMode::Crf => ModeArg::Crf,
                RateControlMode::Cbr => ModeArg::Cbr,
            },
            metric: match metric {
                MetricKind::Psnr => MetricArg::Psnr,
                MetricKind::Ssim => MetricArg::Ssim,
            },
            manifest: None,
            synth_clips: clips,
            seed,
            encoder_config: None,
            cache: None,
            results,
            parallelism: 1,
            k_lo: 0.25,
            k_hi: 2.0,
            xtol: 1e-2,
            max_evals: 12,
            encode_budget: DEFAULT_ENCODE_BUDGET,
            no_direct: false,
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let optimizer = OptimizerConfig {
            lo: self.k_lo,
            hi: self.k_hi,
            xtol: self.xtol,
            max_evals: self.max_evals,
            ..OptimizerConfig::default()
        };
        optimizer.validate()?;
        if self.encode_budget == 0 {
            return Err(Error::BudgetZero);
        }
        Ok(PipelineConfig {
            optimizer,
            encode_budget: self.encode_budget,
            with_direct: !self.no_direct,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct BdrateArgs {
    /// Reference curve: two-column CSV of bitrate (kbps) and distortion.
    pub curve_a: PathBuf,
    /// Test curve, same format.
    pub curve_b: PathBuf,
    #[arg(long, value_enum, default_value = "psnr")]
    pub metric: MetricArg,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    pub results: PathBuf,
    /// Where summary.csv, cdf.csv and report.jsonl go. Defaults to the
    /// results file's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSummary {
    pub clips: usize,
    pub written: usize,
    pub failed: usize,
    pub partial: usize,
    pub fresh_encodes: usize,
}

impl OptimizeSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 || self.partial > 0 {
            EXIT_PARTIAL
        } else {
            EXIT_OK
        }
    }
}

fn load_clips(config: &RunConfig) -> Result<Vec<ClipDescriptor>> {
    let clips = match &config.manifest {
        Some(path) => read_manifest(path)?,
        None => synthetic_corpus(config.synth_clips, config.seed)
            .into_iter()
            .map(|(clip, _)| clip)
            .collect(),
    };
    if clips.is_empty() {
        return Err(Error::NoClips);
    }
    Ok(clips)
}

fn make_backend(config: &RunConfig, clips: &[ClipDescriptor]) -> Result<Box<dyn EncoderBackend>> {
    match config.backend {
        BackendKind::Synthetic => {
            // Manifest clips borrow models from the seeded corpus by position.
            let models = synthetic_corpus(clips.len(), config.seed).into_iter().map(|(_, m)| m);
            let backend = SyntheticBackend::new(clips.iter().map(|c| c.id.clone()).zip(models))?;
            Ok(Box::new(backend))
        }
        BackendKind::External => {
            let path = config
                .encoder_config
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("the external backend needs --encoder-config".into()))?;
            if config.manifest.is_none() {
                return Err(Error::InvalidConfig("the external backend needs --manifest".into()));
            }
            Ok(Box::new(ExternalBackend::new(ExternalEncoderConfig::from_toml_file(
                path,
            )?)?))
        }
    }
}

/// Runs the pipeline over every clip and rewrites the results file, one
/// JSON line per clip in manifest order.
pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeSummary> {
    let pipeline = config.pipeline()?;
    let clips = load_clips(config)?;
    let backend = make_backend(config, &clips)?;
    let cache = match &config.cache {
        Some(path) => EncodeCache::open(path)?,
        None => EncodeCache::in_memory(),
    };
    let encoder = Encoder::new(backend.as_ref(), Some(&cache));
    let mode = RateControlMode::from(config.mode);
    let metric = MetricKind::from(config.metric);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism as usize)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| {
        clips
            .par_iter()
            .map(|clip| pareto_for_clip_detailed(&encoder, clip, mode, metric, &pipeline))
            .collect()
    });

    let mut summary = OptimizeSummary {
        clips: clips.len(),
        written: 0,
        failed: 0,
        partial: 0,
        fresh_encodes: 0,
    };
    let mut out = Vec::new();
    for (clip, outcome) in clips.iter().zip(outcomes) {
        match outcome {
            Ok(analysis) => {
                summary.fresh_encodes += analysis.fresh_encodes;
                if analysis.result.partial {
                    summary.partial += 1;
                }
                serde_json::to_writer(&mut out, &analysis.result)?;
                out.push(b'\n');
                summary.written += 1;
            }
            Err(err) => {
                log::error!("clip {}: {err}", clip.id);
                summary.failed += 1;
            }
        }
    }
    write_atomic(&config.results, &out)?;
    Ok(summary)
}

pub fn read_results(path: &Path) -> Result<Vec<ClipResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut results = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ClipResult =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        results.push(r);
    }
    Ok(results)
}

/// Reads a two-column `bitrate,distortion` CSV. A first row that does not
/// parse as numbers is taken as a header.
pub fn read_curve_csv(path: &Path) -> Result<Vec<RDPoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        })?;
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Parse(format!(
                "{}:{}: expected two columns",
                path.display(),
                i + 1
            )));
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(r), Ok(d)) => points.push(RDPoint::new(r, d)),
            _ if i == 0 => continue,
            _ => {
                return Err(Error::Parse(format!(
                    "{}:{}: not a number pair: {:?}",
                    path.display(),
                    i + 1,
                    record
                )))
            }
        }
    }
    Ok(points)
}

pub fn cmd_bdrate(args: &BdrateArgs) -> Result<BDRateResult> {
    let metric = MetricKind::from(args.metric);
    let curve = |path: &Path| {
        RDCurve::new(
            1.0,
            RateControlMode::Cbr,
            metric,
            RangeLabel::Full,
            &read_curve_csv(path)?,
        )
    };
    bd_rate(&curve(&args.curve_a)?, &curve(&args.curve_b)?)
}

/// Two decimals, with negative zero printed as zero.
pub fn format_percent(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

pub fn render_bdrate(r: &BDRateResult) -> String {
    format!(
        "BD-Rate {}% over [{:.2}, {:.2}]",
        format_percent(r.percent),
        r.overlap_lo,
        r.overlap_hi
    )
}

pub fn cmd_report(args: &ReportArgs) -> Result<crate::report::CorpusReport> {
    let results = read_results(&args.results)?;
    let report = summary_table(&results, &[Method::Direct, Method::Pareto], &default_thresholds())?;
    let dir = match &args.out_dir {
        Some(d) => d.clone(),
        None => match args.results.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        },
    };
    report.write_to_dir(&dir)?;
    Ok(report)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoOverlap { .. } => EXIT_NO_OVERLAP,
        _ => EXIT_CONFIG,
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Optimize(config) => cmd_optimize(config).map(|s| {
            println!(
                "{} of {} clips written to {} ({} failed, {} partial, {} fresh encodes)",
                s.written,
                s.clips,
                config.results.display(),
                s.failed,
                s.partial,
                s.fresh_encodes
            );
            s.exit_code()
        }),
        Command::Bdrate(args) => cmd_bdrate(args).map(|r| {
            println!("{}", render_bdrate(&r));
            EXIT_OK
        }),
        Command::Report(args) => cmd_report(args).map(|r| {
            print!("{}", r.render_table());
            EXIT_OK
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(-0.001), "0.00");
        assert_eq!(format_percent(-10.0), "-10.00");
        assert_eq!(format_percent(2.666), "2.67");
    }

    #[test]
    fn parses_optimize_flags() {
        let cli = Cli::try_parse_from([
            "kscale",
            "optimize",
            "--mode",
            "crf",
            "--metric",
            "ssim",
            "--synth-clips",
            "3",
            "--seed",
            "9",
            "--parallelism",
            "2",
            "--no-direct",
        ])
        .unwrap();
        let Command::Optimize(cfg) = cli.command else { panic!() };
        assert_eq!(cfg.mode, ModeArg::Crf);
        assert_eq!(cfg.synth_clips, 3);
        let p = cfg.pipeline().unwrap();
        assert!(!p.with_direct);
        assert_eq!(p.optimizer, OptimizerConfig::default());
        assert!(Cli::try_parse_from(["kscale", "optimize", "--parallelism", "0"]).is_err());
    }

    #[test]
    fn bad_optimizer_overrides_are_config_errors() {
        let mut cfg = RunConfig::synthetic(RateControlMode::Cbr, MetricKind::Psnr, 1, 1, "r".into());
        cfg.k_lo = 3.0;
        assert!(matches!(cfg.pipeline(), Err(Error::InvalidBounds { .. })));
    }

    #[test]
    fn curve_csv_header_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "bitrate,psnr\n100,30\n200,33\n").unwrap();
        assert_eq!(read_curve_csv(&a).unwrap().len(), 2);
        std::fs::write(&a, "100,30\n200,33\n").unwrap();
        assert_eq!(read_curve_csv(&a).unwrap().len(), 2);
        std::fs::write(&a, "100,30\nx,33\n").unwrap();
        assert!(read_curve_csv(&a).is_err());
    }
}
