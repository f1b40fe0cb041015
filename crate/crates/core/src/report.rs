//! Corpus aggregation: improvement CDFs and the per-cell summary table.
//!
//! Improvement is `-BD-Rate` in percent, so positive means bitrate savings.
//! The percentage columns count unclamped improvements; the average uses
//! the clamped final gain.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::ClipResult;
use crate::types::{MetricKind, RateControlMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Direct,
    Pareto,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "Direct",
            Method::Pareto => "Pareto",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub threshold: f64,
    pub fraction: f64,
}

/// Fraction of clips whose improvement is at least each threshold.
pub fn corpus_cdf(improvements: &[f64], thresholds: &[f64]) -> Result<Vec<CdfPoint>> {
    if improvements.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sorted = improvements.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let below = sorted.partition_point(|&x| x < t);
            CdfPoint {
                threshold: t,
                fraction: (sorted.len() - below) as f64 / n,
            }
        })
        .collect())
}

/// Thresholds from -5% to 20% in 0.1% steps; 0 and 1 land exactly.
pub fn default_thresholds() -> Vec<f64> {
    (-50..=200).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: RateControlMode,
    pub metric: MetricKind,
    pub method: Method,
    pub n_clips: usize,
    /// Percent of clips with improvement >= 0.
    pub pct_ge_0: f64,
    /// Percent of clips with improvement > 1%.
    pub pct_gt_1: f64,
    /// Mean of `max(0, improvement)`, in percent.
    pub avg_final_gain: f64,
}

impl fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {:.0}% {:.0}% {:.2}%",
            self.mode, self.metric, self.method, self.pct_ge_0, self.pct_gt_1, self.avg_final_gain
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub mode: RateControlMode,
    pub metric: MetricKind,
    pub method: Method,
    pub points: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub rows: Vec<SummaryRow>,
    pub cdf: Vec<CdfSeries>,
    pub n_clips: usize,
}

fn improvement(result: &ClipResult, method: Method) -> Option<f64> {
    match method {
        Method::Pareto => Some(result.pareto_improvement()),
        Method::Direct => result.direct_improvement(),
    }
}

fn summarize(improvements: &mut [f64]) -> Result<(f64, f64, f64)> {
    improvements.sort_by(f64::total_cmp);
    let cdf = corpus_cdf(improvements, &[0.0])?;
    let n = improvements.len() as f64;
    let gt_1 = improvements.iter().filter(|&&x| x > 1.0).count() as f64 / n;
    let avg = improvements.iter().map(|&x| x.max(0.0)).sum::<f64>() / n;
    Ok((cdf[0].fraction * 100.0, gt_1 * 100.0, avg))
}

/// One row per (mode, metric, method) cell present in `results`. Cells are
/// ordered CRF before CBR, PSNR before SSIM, Direct before Pareto.
pub fn summary_table(results: &[ClipResult], methods: &[Method], thresholds: &[f64]) -> Result<CorpusReport> {
    let mut cells: BTreeMap<(RateControlMode, MetricKind, Method), Vec<f64>> = BTreeMap::new();
    for r in results {
        for &method in methods {
            if let Some(x) = improvement(r, method) {
                cells.entry((r.mode, r.metric, method)).or_default().push(x);
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut cdf = Vec::with_capacity(cells.len());
    for ((mode, metric, method), mut values) in cells {
        let (pct_ge_0, pct_gt_1, avg_final_gain) = summarize(&mut values)?;
        rows.push(SummaryRow {
            mode,
            metric,
            method,
            n_clips: values.len(),
            pct_ge_0,
            pct_gt_1,
            avg_final_gain,
        });
        cdf.push(CdfSeries {
            mode,
            metric,
            method,
            points: corpus_cdf(&values, thresholds)?,
        });
    }
    Ok(CorpusReport {
        rows,
        cdf,
        n_clips: results.len(),
    })
}

impl CorpusReport {
    pub fn render_table(&self) -> String {
        let mut out = String::from("mode metric method >=0% >1% avg\n");
        for row in &self.rows {
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mode", "metric", "method", "pct_ge_0", "pct_gt_1", "avg_final_gain"])?;
        for r in &self.rows {
            w.write_record([
                r.mode.to_string(),
                r.metric.to_string(),
                r.method.to_string(),
                format!("{:.4}", r.pct_ge_0),
                format!("{:.4}", r.pct_gt_1),
                format!("{:.4}", r.avg_final_gain),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_cdf_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mode", "metric", "method", "threshold", "fraction"])?;
        for s in &self.cdf {
            for p in &s.points {
                w.write_record([
                    s.mode.to_string(),
                    s.metric.to_string(),
                    s.method.to_string(),
                    format!("{:.1}", p.threshold),
                    format!("{:.6}", p.fraction),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `summary.csv`, `cdf.csv` and `report.jsonl` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut summary = Vec::new();
        self.write_summary_csv(&mut summary)?;
        write_atomic(&dir.join("summary.csv"), &summary)?;
        let mut cdf = Vec::new();
        self.write_cdf_csv(&mut cdf)?;
        write_atomic(&dir.join("cdf.csv"), &cdf)?;
        let mut lines = Vec::new();
        for row in &self.rows {
            serde_json::to_writer(&mut lines, row)?;
            lines.push(b'\n');
        }
        write_atomic(&dir.join("report.jsonl"), &lines)
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn result(mode: RateControlMode, improvement: f64, direct: Option<f64>) -> ClipResult {
        ClipResult {
            clip_id: format!("c{improvement}"),
            mode,
            metric: MetricKind::Psnr,
            range_results: Vec::new(),
            pareto_bd_rate: -improvement,
            direct_fullspan_bd_rate: direct.map(|d| -d),
            direct_fullspan_k: direct.map(|_| 0.9),
            final_gain: improvement.max(0.0),
            encode_count: 0,
            partial: false,
        }
    }

    #[test]
    fn cdf_counts_by_hand() {
        let cdf = corpus_cdf(&[2.67, 0.5, -0.3], &[f64::NEG_INFINITY, 0.0, 1.0]).unwrap();
        assert_eq!(cdf[0].fraction, 1.0);
        assert_eq!(cdf[1].fraction, 2.0 / 3.0);
        assert_eq!(cdf[2].fraction, 1.0 / 3.0);
        assert_eq!(corpus_cdf(&[0.0, 0.0], &[1.0]).unwrap()[0].fraction, 0.0);
        assert!(matches!(corpus_cdf(&[], &[0.0]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn four_clip_table() {
        let results: Vec<_> = [2.0, 1.5, 0.4, -0.2]
            .iter()
            .map(|&x| result(RateControlMode::Cbr, x, None))
            .collect();
        let report = summary_table(&results, &[Method::Pareto], &default_thresholds()).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.pct_ge_0, 75.0);
        assert_eq!(row.pct_gt_1, 50.0);
        assert!((row.avg_final_gain - 0.975).abs() < 1e-12);
        let at_zero = report.cdf[0].points.iter().find(|p| p.threshold == 0.0).unwrap();
        assert_eq!(at_zero.fraction, 0.75);
    }

    #[test]
    fn single_zero_clip() {
        let report = summary_table(&[result(RateControlMode::Crf, 0.0, None)], &[Method::Pareto], &[0.0]).unwrap();
        let row = &report.rows[0];
        assert_eq!((row.pct_ge_0, row.pct_gt_1, row.avg_final_gain), (100.0, 0.0, 0.0));
        assert_eq!(row.to_string(), "CRF PSNR Pareto 100% 0% 0.00%");
    }

    #[test]
    fn row_rendering() {
        let row = SummaryRow {
            mode: RateControlMode::Cbr,
            metric: MetricKind::Psnr,
            method: Method::Pareto,
            n_clips: 100,
            pct_ge_0: 96.0,
            pct_gt_1: 79.0,
            avg_final_gain: 2.67,
        };
        assert_eq!(row.to_string(), "CBR PSNR Pareto 96% 79% 2.67%");
    }

    #[test]
    fn cells_and_missing_direct() {
        let results = vec![
            result(RateControlMode::Cbr, 1.2, Some(-0.5)),
            result(RateControlMode::Cbr, 0.3, None),
            result(RateControlMode::Crf, 2.0, Some(1.5)),
        ];
        let report = summary_table(&results, &[Method::Direct, Method::Pareto], &[0.0, 1.0]).unwrap();
        let names: Vec<String> = report
            .rows
            .iter()
            .map(|r| format!("{} {} {}", r.mode, r.method, r.n_clips))
            .collect();
        assert_eq!(names, ["CRF Direct 1", "CRF Pareto 1", "CBR Direct 1", "CBR Pareto 2"]);
        assert_eq!(report.rows[2].pct_ge_0, 0.0);
        assert_eq!(report.rows[2].avg_final_gain, 0.0);

        let only_pareto = summary_table(&results, &[Method::Pareto], &[0.0]).unwrap();
        assert_eq!(only_pareto.rows.len(), 2);
    }

    #[test]
    fn csv_output() {
        let results: Vec<_> = [2.0, -1.0]
            .iter()
            .map(|&x| result(RateControlMode::Cbr, x, None))
            .collect();
        let report = summary_table(&results, &[Method::Pareto], &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "mode,metric,method,pct_ge_0,pct_gt_1,avg_final_gain\nCBR,PSNR,Pareto,50.0000,50.0000,1.0000\n"
        );
        let mut buf = Vec::new();
        report.write_cdf_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("CBR,PSNR,Pareto,0.0,0.500000"));
        assert!(text.contains("CBR,PSNR,Pareto,1.0,0.500000"));
    }

    #[test]
    fn write_atomic_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(xs in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let t = default_thresholds();
            let cdf = corpus_cdf(&xs, &t).unwrap();
            for w in cdf.windows(2) {
                prop_assert!(w[1].fraction <= w[0].fraction);
            }
            prop_assert!(cdf.iter().all(|p| (0.0..=1.0).contains(&p.fraction)));
        }

        #[test]
        fn table_is_permutation_invariant(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let results: Vec<_> = xs.iter().map(|&x| result(RateControlMode::Cbr, x, Some(x / 2.0))).collect();
            let mut shuffled = results.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let methods = [Method::Direct, Method::Pareto];
            let a = summary_table(&results, &methods, &default_thresholds()).unwrap();
            let b = summary_table(&shuffled, &methods, &default_thresholds()).unwrap();
            prop_assert_eq!(&a.rows, &b.rows);
            for (row, series) in a.rows.iter().zip(&a.cdf) {
                prop_assert!(row.avg_final_gain >= 0.0);
                let at0 = series.points.iter().find(|p| p.threshold == 0.0).unwrap();
                prop_assert_eq!(row.pct_ge_0, at0.fraction * 100.0);
            }
        }
    }
}
