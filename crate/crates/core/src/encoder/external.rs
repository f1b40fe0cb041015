//! Runs a real encoder binary from a command template and scrapes its stats.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{EncodeRequest, EncodeResult, EncoderBackend};
use crate::error::{Error, Result};
use crate::types::RateControlMode;

const PLACEHOLDERS: [&str; 7] = ["input", "output", "crf", "bitrate", "k", "tune", "csv"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Stdout,
    Stderr,
    #[default]
    Both,
}

/// Where one field of [`EncodeResult`] comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Extractor {
    /// A named column of the stats CSV.
    CsvColumn {
        column: String,
        #[serde(default)]
        reduce: Reduce,
    },
    /// First capture group of the last regex match in the process output.
    Pattern {
        regex: String,
        #[serde(default)]
        stream: Stream,
    },
    /// Output size in bits over clip duration; bitrate only.
    FileSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsExtraction {
    pub bitrate: Extractor,
    pub psnr: Extractor,
    pub ssim: Extractor,
    #[serde(default = "default_delimiter")]
    pub csv_delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for StatsExtraction {
    fn default() -> Self {
        let column = |name: &str| Extractor::CsvColumn {
            column: name.to_string(),
            reduce: Reduce::Last,
        };
        StatsExtraction {
            bitrate: column("Bitrate"),
            psnr: column("Global PSNR"),
            ssim: column("SSIM"),
            csv_delimiter: default_delimiter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalEncoderConfig {
    pub encoder_id: String,
    pub crf_template: String,
    pub cbr_template: String,
    pub stats: StatsExtraction,
    pub timeout_secs: f64,
    pub work_dir: PathBuf,
    /// Frame rate used to turn frame counts into durations.
    pub fps: f64,
    /// Upper bound on concurrently running encoder processes.
    pub max_parallel: usize,
}

impl Default for ExternalEncoderConfig {
    fn default() -> Self {
        ExternalEncoderConfig {
            encoder_id: "x265".into(),
            crf_template: "x265 --input {input} --crf {crf} --tune-{tune} --{tune} \
                           --csv-log-level 2 --csv {csv} --output {output}"
                .into(),
            cbr_template: "x265 --input {input} --bitrate {bitrate} --tune-{tune} --{tune} \
                           --csv-log-level 2 --csv {csv} --output {output}"
                .into(),
            stats: StatsExtraction::default(),
            timeout_secs: 3600.0,
            work_dir: PathBuf::from("kscale-work"),
            fps: 30.0,
            max_parallel: 1,
        }
    }
}

impl ExternalEncoderConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn template(&self, mode: RateControlMode) -> &str {
        match mode {
            RateControlMode::Crf => &self.crf_template,
            RateControlMode::Cbr => &self.cbr_template,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (mode, own, other) in [
            (RateControlMode::Crf, "{crf}", "{bitrate}"),
            (RateControlMode::Cbr, "{bitrate}", "{crf}"),
        ] {
            let t = self.template(mode);
            for required in ["{input}", "{output}", own] {
                if !t.contains(required) {
                    return Err(Error::InvalidConfig(format!("{mode} template lacks {required}")));
                }
            }
            if t.contains(other) {
                return Err(Error::InvalidConfig(format!(
                    "{mode} template must not contain {other}"
                )));
            }
            if t.matches(own).count() != 1 {
                return Err(Error::InvalidConfig(format!("{mode} template repeats {own}")));
            }
        }
        for ex in [&self.stats.psnr, &self.stats.ssim] {
            if matches!(ex, Extractor::FileSize) {
                return Err(Error::InvalidConfig("file_size only applies to bitrate".into()));
            }
        }
        for ex in [&self.stats.bitrate, &self.stats.psnr, &self.stats.ssim] {
            if let Extractor::Pattern { regex, .. } = ex {
                let re = Regex::new(regex).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                if re.captures_len() < 2 {
                    return Err(Error::InvalidConfig(format!("pattern {regex:?} has no capture group")));
                }
            }
        }
        if !(self.timeout_secs > 0.0) || !(self.fps > 0.0) || self.max_parallel == 0 {
            return Err(Error::InvalidConfig(
                "timeout_secs, fps and max_parallel must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Values substituted into a command template.
#[derive(Debug, Clone)]
pub struct Placeholders {
    pub input: String,
    pub output: String,
    pub csv: String,
    pub crf: Option<u32>,
    pub bitrate: Option<u32>,
    pub k: f64,
    pub tune: String,
}

/// Splits a template on whitespace and substitutes placeholders in each
/// token. No shell is involved, so substituted values never re-split.
pub fn render_command(template: &str, values: &Placeholders) -> Result<Vec<String>> {
    let has_k = template.contains("{k}");
    if !has_k && values.k != 1.0 {
        return Err(Error::KUnsupported(values.k));
    }
    let unknown = Regex::new(r"\{([a-z_]+)\}").expect("static regex");
    template
        .split_whitespace()
        .map(|token| {
            if let Some(cap) = unknown.captures_iter(token).find(|c| !PLACEHOLDERS.contains(&&c[1])) {
                return Err(Error::InvalidConfig(format!("unknown placeholder {}", &cap[0])));
            }
            let mut out = token
                .replace("{input}", &values.input)
                .replace("{output}", &values.output)
                .replace("{csv}", &values.csv)
                .replace("{k}", &format!("{:.3}", values.k))
                .replace("{tune}", &values.tune);
            if let Some(crf) = values.crf {
                out = out.replace("{crf}", &crf.to_string());
            }
            if let Some(bitrate) = values.bitrate {
                out = out.replace("{bitrate}", &bitrate.to_string());
            }
            Ok(out)
        })
        .collect()
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct ProcessOutput {
    stdout: String,
    stderr: String,
}

pub struct ExternalBackend {
    config: ExternalEncoderConfig,
    slots: Semaphore,
}

impl ExternalBackend {
    pub fn new(config: ExternalEncoderConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.work_dir).map_err(|e| Error::io(&config.work_dir, e))?;
        let slots = Semaphore {
            free: Mutex::new(config.max_parallel),
            cv: Condvar::new(),
        };
        Ok(ExternalBackend { config, slots })
    }

    pub fn config(&self) -> &ExternalEncoderConfig {
        &self.config
    }

    fn artifact_stem(&self, req: &EncodeRequest) -> PathBuf {
        let name = format!(
            "{}_{}{}_k{:.3}_{}",
            req.clip.id.replace(['/', '\\'], "_"),
            req.op.mode.name().to_ascii_lowercase(),
            req.op.value,
            req.k,
            req.tune.tune_token()
        );
        self.config.work_dir.join(name)
    }

    fn run(&self, argv: &[String]) -> Result<ProcessOutput> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::InvalidConfig("empty command template".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::ProcessFailed(format!("{program}: {e}")))?;

        let mut out_pipe = child.stdout.take().expect("piped stdout");
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = out_pipe.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = err_pipe.read_to_string(&mut s);
            s
        });

        let timeout = Duration::from_secs_f64(self.config.timeout_secs);
        let status = child
            .wait_timeout(timeout)
            .map_err(|e| Error::ProcessFailed(e.to_string()))?;
        let Some(status) = status else {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::ProcessFailed(format!(
                "{program} timed out after {:.1}s",
                self.config.timeout_secs
            )));
        };
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        if !status.success() {
            let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().join(" | ");
            return Err(Error::ProcessFailed(format!("{program} exited with {status}: {tail}")));
        }
        Ok(ProcessOutput { stdout, stderr })
    }

    fn extract(
        &self,
        field: &'static str,
        extractor: &Extractor,
        req: &EncodeRequest,
        csv_path: &Path,
        output_path: &Path,
        process: &ProcessOutput,
    ) -> Result<f64> {
        let fail = |detail: String| Error::StatsParseError { field, detail };
        match extractor {
            Extractor::CsvColumn { column, reduce } => {
                let mut reader = csv::ReaderBuilder::new()
                    .delimiter(self.config.stats.csv_delimiter as u8)
                    .trim(csv::Trim::All)
                    .flexible(true)
                    .from_path(csv_path)
                    .map_err(|e| fail(format!("{}: {e}", csv_path.display())))?;
                let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
                let idx = headers
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(column))
                    .ok_or_else(|| fail(format!("no column {column:?}")))?;
                let mut values = Vec::new();
                for row in reader.records() {
                    let row = row.map_err(|e| fail(e.to_string()))?;
                    if let Some(v) = row.get(idx).and_then(|s| s.parse::<f64>().ok()) {
                        values.push(v);
                    }
                }
                if values.is_empty() {
                    return Err(fail(format!("column {column:?} has no numeric rows")));
                }
                Ok(match reduce {
                    Reduce::Last => *values.last().unwrap(),
                    Reduce::Mean => values.iter().sum::<f64>() / values.len() as f64,
                })
            }
            Extractor::Pattern { regex, stream } => {
                let re = Regex::new(regex).map_err(|e| fail(e.to_string()))?;
                let text = match stream {
                    Stream::Stdout => process.stdout.clone(),
                    Stream::Stderr => process.stderr.clone(),
                    Stream::Both => format!("{}\n{}", process.stdout, process.stderr),
                };
                let cap = re
                    .captures_iter(&text)
                    .last()
                    .ok_or_else(|| fail(format!("pattern {regex:?} did not match")))?;
                cap.get(1)
                    .and_then(|m| m.as_str().trim().parse::<f64>().ok())
                    .ok_or_else(|| fail(format!("pattern {regex:?} captured a non-number")))
            }
            Extractor::FileSize => {
                let bytes = std::fs::metadata(output_path)
                    .map_err(|e| fail(format!("{}: {e}", output_path.display())))?
                    .len();
                let seconds = req.clip.frame_count as f64 / self.config.fps;
                Ok(bytes as f64 * 8.0 / seconds / 1000.0)
            }
        }
    }
}

impl EncoderBackend for ExternalBackend {
    fn id(&self) -> &str {
        &self.config.encoder_id
    }

    fn encode(&self, req: &EncodeRequest) -> Result<EncodeResult> {
        let stem = self.artifact_stem(req);
        let output_path = stem.with_extension("mp4");
        let csv_path = stem.with_extension("csv");
        // A stale stats file would be read as this run's output.
        let _ = std::fs::remove_file(&csv_path);

        let values = Placeholders {
            input: req.clip.source_path.clone(),
            output: output_path.display().to_string(),
            csv: csv_path.display().to_string(),
            crf: (req.op.mode == RateControlMode::Crf).then_some(req.op.value),
            bitrate: (req.op.mode == RateControlMode::Cbr).then_some(req.op.value),
            k: req.k,
            tune: req.tune.tune_token().to_string(),
        };
        let argv = render_command(self.config.template(req.op.mode), &values)?;

        let _slot = self.slots.acquire();
        let started = Instant::now();
        log::debug!("running {}", argv.join(" "));
        let process = self.run(&argv)?;
        let wall_time = started.elapsed().as_secs_f64();

        let stats = &self.config.stats;
        let bitrate = self.extract("bitrate", &stats.bitrate, req, &csv_path, &output_path, &process)?;
        let psnr = self.extract("psnr", &stats.psnr, req, &csv_path, &output_path, &process)?;
        let ssim = self.extract("ssim", &stats.ssim, req, &csv_path, &output_path, &process)?;
        Ok(EncodeResult {
            achieved_bitrate: bitrate,
            psnr,
            ssim,
            encoder_id: self.config.encoder_id.clone(),
            wall_time,
        })
    }
}
