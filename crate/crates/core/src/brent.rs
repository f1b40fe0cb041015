//! Bounded scalar minimization with Brent's method.
//!
//! The search always opens with three probes: the default scale `k = 1.0`
//! (clamped into the bounds) followed by the two golden-section interior
//! points of `[lo, hi]`. The bracket is then narrowed around the best probe
//! and the usual mix of parabolic and golden-section steps takes over.
//! Probe locations are rounded to `memo_decimals` before evaluation; a
//! rounded location that was already evaluated is served from memory.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CGOLD: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lo: f64,
    pub hi: f64,
    /// Absolute tolerance on the minimizer.
    pub xtol: f64,
    pub max_evals: usize,
    pub memo_decimals: u32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lo: 0.25,
            hi: 2.0,
            xtol: 1e-2,
            max_evals: 12,
            memo_decimals: 3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidBounds {
                lo: self.lo,
                hi: self.hi,
            });
        }
        if !(self.xtol > 0.0) {
            return Err(Error::InvalidTolerance(self.xtol));
        }
        if self.max_evals == 0 {
            return Err(Error::BudgetZero);
        }
        Ok(())
    }

    pub fn round(&self, k: f64) -> f64 {
        let scale = 10f64.powi(self.memo_decimals as i32);
        (k * scale).round() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub k: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Objective calls in the order they were made.
    pub evaluations: Vec<Evaluation>,
    pub k_best: f64,
    pub f_best: f64,
    pub converged: bool,
}

struct Memo<'a, F> {
    objective: F,
    config: &'a OptimizerConfig,
    seen: HashMap<i64, f64>,
    trace: Vec<Evaluation>,
}

impl<F: FnMut(f64) -> f64> Memo<'_, F> {
    fn key(&self, k: f64) -> i64 {
        (k * 10f64.powi(self.config.memo_decimals as i32)).round() as i64
    }

    fn budget_left(&self) -> bool {
        self.trace.len() < self.config.max_evals
    }

    fn is_cached(&self, k: f64) -> bool {
        self.seen.contains_key(&self.key(self.config.round(k)))
    }

    /// Returns the rounded location and its value.
    fn eval(&mut self, k: f64) -> (f64, f64) {
        let k = self.config.round(k);
        let key = self.key(k);
        if let Some(&f) = self.seen.get(&key) {
            return (k, f);
        }
        let mut f = (self.objective)(k);
        if !f.is_finite() {
            log::warn!("objective returned {f} at k = {k}; recording +inf");
            f = f64::INFINITY;
        }
        self.seen.insert(key, f);
        self.trace.push(Evaluation { k, objective: f });
        (k, f)
    }
}

pub fn minimize_scalar<F>(objective: F, config: &OptimizerConfig) -> Result<OptimizationTrace>
where
    F: FnMut(f64) -> f64,
{
    config.validate()?;
    let (lo, hi) = (config.lo, config.hi);
    let mut memo = Memo {
        objective,
        config,
        seen: HashMap::new(),
        trace: Vec::new(),
    };

    let opening = [1.0f64.clamp(lo, hi), lo + CGOLD * (hi - lo), hi - CGOLD * (hi - lo)];
    let mut probes: Vec<(f64, f64)> = Vec::with_capacity(3);
    for &k in &opening {
        if !memo.budget_left() && !memo.is_cached(k) {
            break;
        }
        let (k, f) = memo.eval(k);
        if !probes.iter().any(|&(pk, _)| pk == k) {
            probes.push((k, f));
        }
    }
    let mut converged = false;

    if probes.len() == 3 {
        converged = brent_iterations(&mut memo, &probes, lo, hi);
    }

    let trace = memo.trace;
    // First evaluation attaining the minimum.
    let best = trace
        .iter()
        .copied()
        .reduce(|b, e| if e.objective < b.objective { e } else { b })
        .expect("at least one evaluation");
    Ok(OptimizationTrace {
        k_best: best.k,
        f_best: best.objective,
        converged,
        evaluations: trace,
    })
}

fn brent_iterations<F: FnMut(f64) -> f64>(memo: &mut Memo<'_, F>, probes: &[(f64, f64)], lo: f64, hi: f64) -> bool {
    let xtol = memo.config.xtol;
    let mut ranked = probes.to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (mut x, mut fx) = ranked[0];
    let (mut w, mut fw) = ranked[1];
    let (mut v, mut fv) = ranked[2];

    // Narrow the bracket to the probes adjacent to the incumbent.
    let mut a = probes.iter().map(|p| p.0).filter(|&k| k < x).fold(lo, f64::max);
    let mut b = probes.iter().map(|p| p.0).filter(|&k| k > x).fold(hi, f64::min);

    let mut d: f64 = 0.0;
    let mut e: f64 = b - a;
    let tol1 = 0.5 * xtol;
    let tol2 = xtol;
    // Memo hits do not consume budget, so cap the loop separately.
    let max_iter = 10 * memo.config.max_evals + 10;

    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return true;
        }
        // A flat objective carries no information about where to go next.
        if fx == fw && fw == fv && x != w && w != v && x != v {
            return true;
        }

        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let step = if d.abs() >= tol1 { d } else { tol1.copysign(d) };
        let target = x + step;

        if !memo.budget_left() && !memo.is_cached(target) {
            return false;
        }
        let (u, fu) = memo.eval(target);
        if u == x {
            // Rounding collapsed the step onto the incumbent.
            return true;
        }

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    false
}
