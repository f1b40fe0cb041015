//! End-to-end checks, one line per criterion. Runs without the libtest
//! harness so the lines always print; exits non-zero if any check fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kscale::bdrate::bd_rate;
use kscale::brent::{minimize_scalar, OptimizerConfig};
use kscale::cli::{cmd_optimize, RunConfig};
use kscale::corpus::synthetic_corpus;
use kscale::curvefit::{fit_curve, FitOrientation};
use kscale::encoder::{default_lambda, EncodeCache, Encoder, FrameType, SyntheticBackend};
use kscale::pipeline::{pareto_for_clip_detailed, ClipResult, PipelineConfig, DEFAULT_ENCODE_BUDGET};
use kscale::report::{default_thresholds, summary_table, Method};
use kscale::types::{MetricKind, RDCurve, RDPoint, RangeLabel, RateControlMode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> (bool, Duration) {
    let started = Instant::now();
    let outcome = f();
    let elapsed = started.elapsed();
    let in_time = elapsed <= limit;
    let pass = outcome.pass && in_time;
    println!(
        "{} {id}. {name}: {} [{:.2}s of {:.0}s]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    (pass, elapsed)
}

fn random_curve(rng: &mut ChaCha8Rng) -> Vec<RDPoint> {
    let mut rate = rng.gen_range(100.0..1000.0);
    let mut dist = rng.gen_range(27.0..33.0);
    (0..5)
        .map(|_| {
            let p = RDPoint::new(rate, dist);
            rate *= rng.gen_range(1.4..2.6);
            dist += rng.gen_range(0.8..3.5);
            p
        })
        .collect()
}

fn curve(points: &[RDPoint]) -> RDCurve {
    RDCurve::new(1.0, RateControlMode::Cbr, MetricKind::Psnr, RangeLabel::Full, points).unwrap()
}

fn constant_ratio() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = random_curve(&mut rng);
        for s in [0.5, 0.9, 1.1, 2.0] {
            let b: Vec<RDPoint> = a.iter().map(|p| RDPoint::new(p.bitrate * s, p.distortion)).collect();
            let got = bd_rate(&curve(&a), &curve(&b)).unwrap().percent;
            worst = worst.max((got - (s - 1.0) * 100.0).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("max |error| {worst:.2e} over 80 pairs (tol 1e-9)"),
    }
}

fn trapezoid_percent(a: &[RDPoint], b: &[RDPoint]) -> f64 {
    const N: usize = 10_000;
    let fa = fit_curve(a, FitOrientation::LogROfD).unwrap();
    let fb = fit_curve(b, FitOrientation::LogROfD).unwrap();
    let lo = fa.domain_lo.max(fb.domain_lo);
    let hi = fa.domain_hi.min(fb.domain_hi);
    let h = (hi - lo) / N as f64;
    let g = |i: usize| {
        let d = if i == N { hi } else { lo + h * i as f64 };
        fb.evaluate(d).unwrap() - fa.evaluate(d).unwrap()
    };
    let inner: f64 = (1..N).map(g).sum();
    let integral = h * (inner + 0.5 * (g(0) + g(N)));
    (10f64.powf(integral / (hi - lo)) - 1.0) * 100.0
}

fn trapezoid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let a = random_curve(&mut rng);
        let scale = if rng.gen_bool(0.5) {
            rng.gen_range(0.6..0.95)
        } else {
            rng.gen_range(1.05..1.6)
        };
        let b: Vec<RDPoint> = a
            .iter()
            .map(|p| {
                RDPoint::new(
                    p.bitrate * scale * rng.gen_range(0.97..1.03),
                    p.distortion + rng.gen_range(-0.3..0.3),
                )
            })
            .collect();
        let closed = bd_rate(&curve(&a), &curve(&b)).unwrap().percent;
        let oracle = trapezoid_percent(&curve(&a).points, &curve(&b).points);
        worst = worst.max((closed - oracle).abs() / oracle.abs());
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max relative error {worst:.2e} over 50 pairs (tol 1e-6)"),
    }
}

fn brent_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = OptimizerConfig::default();
    let mut worst_err: f64 = 0.0;
    let mut worst_evals = 0;
    for i in 0..25 {
        let k0: f64 = rng.gen_range(0.3..1.9);
        let a: f64 = rng.gen_range(0.5..5.0);
        let w: f64 = rng.gen_range(0.3..0.8);
        let f = move |k: f64| -> f64 {
            let t = k.ln() - k0.ln();
            match i % 3 {
                0 => a * (k - k0).powi(2),
                1 => a * t * t + 0.3 * a * t.powi(4),
                _ => a * (1.0 - (-t * t / (2.0 * w * w)).exp()) + 0.1 * t * t,
            }
        };
        let oracle = (0..=17_500)
            .map(|j| 0.25 + j as f64 * 1e-4)
            .min_by(|x, y| f(*x).total_cmp(&f(*y)))
            .unwrap();
        let trace = minimize_scalar(f, &config).unwrap();
        worst_err = worst_err.max((trace.k_best - oracle).abs());
        worst_evals = worst_evals.max(trace.evaluations.len());
    }
    Outcome {
        pass: worst_err <= 1e-2 && worst_evals <= 12,
        detail: format!("max |k - oracle| {worst_err:.4} (tol 1e-2), max evaluations {worst_evals} (limit 12)"),
    }
}

struct CorpusRun {
    results: Vec<ClipResult>,
    below_envelope: usize,
    calls: Vec<usize>,
}

fn run_corpus(mode: RateControlMode, metric: MetricKind, n: usize, cache_path: &Path) -> CorpusRun {
    let corpus = synthetic_corpus(n, 7);
    let backend = SyntheticBackend::new(corpus.iter().map(|(c, m)| (c.id.clone(), m.clone()))).unwrap();
    let cache = EncodeCache::open(cache_path).unwrap();
    let enc = Encoder::new(&backend, Some(&cache));
    let config = PipelineConfig::default();
    let mut run = CorpusRun {
        results: Vec::new(),
        below_envelope: 0,
        calls: Vec::new(),
    };
    for (clip, _) in &corpus {
        let before = backend.calls();
        let a = pareto_for_clip_detailed(&enc, clip, mode, metric, &config).unwrap();
        run.calls.push(backend.calls() - before);
        for c in &a.sampled {
            for (rate, d) in c.rate_grid.iter().zip(&c.distortions) {
                match a.envelope.distortion_at(*rate) {
                    Some(e) if e >= *d => {}
                    _ => run.below_envelope += 1,
                }
            }
        }
        run.results.push(a.result);
    }
    run
}

fn dominance_and_ordering(dir: &Path) -> Outcome {
    let run = run_corpus(RateControlMode::Cbr, MetricKind::Psnr, 50, &dir.join("cbr.jsonl"));
    let n = run.results.len();
    let below_best_range = run
        .results
        .iter()
        .filter(|r| !(r.final_gain >= r.best_range_gain() && r.best_range_gain() >= 0.0))
        .count();
    let direct_gain = |r: &ClipResult| r.direct_improvement().unwrap_or(0.0).max(0.0);
    let below_direct = run.results.iter().filter(|r| r.final_gain < direct_gain(r)).count();
    let mean_pareto = run.results.iter().map(|r| r.final_gain).sum::<f64>() / n as f64;
    let mean_direct = run.results.iter().map(direct_gain).sum::<f64>() / n as f64;
    Outcome {
        pass: run.below_envelope == 0 && below_best_range == 0 && below_direct == 0 && mean_pareto > mean_direct,
        detail: format!(
            "(i) {} samples above the envelope; (ii) {below_best_range} of {n} clips with Pareto gain below \
             the best single-range gain; (iii) {below_direct} of {n} clips with Pareto gain below full-span \
             Direct, corpus means {mean_pareto:.3}% vs {mean_direct:.3}%",
            run.below_envelope
        ),
    }
}

fn encode_budget(dir: &Path) -> Outcome {
    let mut worst = 0;
    let mut warm_calls = 0;
    for (mode, metric) in [
        (RateControlMode::Crf, MetricKind::Psnr),
        (RateControlMode::Cbr, MetricKind::Ssim),
    ] {
        let path = dir.join(format!("budget-{mode}-{metric}.jsonl"));
        let cold = run_corpus(mode, metric, 50, &path);
        worst = worst.max(*cold.calls.iter().max().unwrap());
        let warm = run_corpus(mode, metric, 50, &path);
        warm_calls += warm.calls.iter().sum::<usize>();
    }
    Outcome {
        pass: worst <= DEFAULT_ENCODE_BUDGET && warm_calls == 0,
        detail: format!(
            "max backend calls per clip {worst} (limit {DEFAULT_ENCODE_BUDGET}); warm re-run calls {warm_calls}"
        ),
    }
}

fn lambda_golden() -> Outcome {
    let cases = [
        (FrameType::I, 12, 0.57, 0.57 * 2f64.powf(0.0)),
        (FrameType::P, 12, 0.85, 0.85 * 2f64.powf(0.0)),
        (FrameType::B, 24, 21.76, 0.68 * 2.0 * 2f64.powf(12.0 / 3.0)),
    ];
    let mut worst: f64 = 0.0;
    for (ft, qp, golden, formula) in cases {
        let got = default_lambda(ft, qp).unwrap();
        worst = worst.max((got - formula).abs()).max((got - golden).abs());
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("max |error| {worst:.1e} (tol 1e-12)"),
    }
}

fn report_consistency() -> Outcome {
    let results: Vec<ClipResult> = [2.0, 1.5, 0.4, -0.2]
        .iter()
        .enumerate()
        .map(|(i, &x)| ClipResult {
            clip_id: format!("clip-{i}"),
            mode: RateControlMode::Cbr,
            metric: MetricKind::Psnr,
            range_results: Vec::new(),
            pareto_bd_rate: -x,
            direct_fullspan_bd_rate: None,
            direct_fullspan_k: None,
            final_gain: f64::max(x, 0.0),
            encode_count: 0,
            partial: false,
        })
        .collect();
    let report = summary_table(&results, &[Method::Pareto], &default_thresholds()).unwrap();
    let row = &report.rows[0];
    let cdf0 = report.cdf[0]
        .points
        .iter()
        .find(|p| p.threshold == 0.0)
        .map(|p| p.fraction);
    Outcome {
        pass: row.pct_ge_0 == 75.0 && row.pct_gt_1 == 50.0 && row.avg_final_gain == 0.975 && cdf0 == Some(0.75),
        detail: format!(
            "pct_ge_0 {}%, pct_gt_1 {}%, avg_final_gain {}%, cdf(0) {:?}",
            row.pct_ge_0, row.pct_gt_1, row.avg_final_gain, cdf0
        ),
    }
}

fn determinism(dir: &Path) -> Outcome {
    let run = |name: &str| {
        let path = dir.join(name);
        let config = RunConfig::synthetic(RateControlMode::Cbr, MetricKind::Psnr, 50, 7, path.clone());
        let summary = cmd_optimize(&config).unwrap();
        (summary.written, std::fs::read(path).unwrap())
    };
    let (n1, first) = run("first.jsonl");
    let (n2, second) = run("second.jsonl");
    Outcome {
        pass: n1 == 50 && n2 == 50 && first == second,
        detail: format!(
            "{n1} and {n2} records, {} bytes, identical: {}",
            first.len(),
            first == second
        ),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut passed = vec![
        check(
            1,
            "BD-Rate constant-ratio exactness",
            Duration::from_secs(1),
            constant_ratio,
        )
        .0,
        check(
            2,
            "BD-Rate closed form vs trapezoid oracle",
            Duration::from_secs(5),
            trapezoid_oracle,
        )
        .0,
        check(3, "Brent convergence", Duration::from_secs(5), brent_convergence).0,
    ];
    // Criteria 4 and 5 share one minute.
    let shared = Duration::from_secs(60);
    let (ok, spent) = check(4, "Pareto dominance and ordering", shared, || {
        dominance_and_ordering(dir.path())
    });
    passed.push(ok);
    let rest = shared.saturating_sub(spent);
    passed.push(check(5, "Encode budget and warm cache", rest, || encode_budget(dir.path())).0);
    passed.push(check(6, "Default lambda golden values", Duration::from_secs(1), lambda_golden).0);
    passed.push(check(7, "Report consistency", Duration::from_secs(1), report_consistency).0);
    passed.push(
        check(8, "End-to-end determinism", Duration::from_secs(120), || {
            determinism(dir.path())
        })
        .0,
    );

    let failed = passed.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", passed.len() - failed, passed.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
