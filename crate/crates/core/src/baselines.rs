//! Comparison methods: mini-batch SGD on the mean loss and a min-max
//! distributionally robust baseline over a χ² ball with O(n) dual updates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::problem::VarianceRegProblem;
use crate::rng::{self, streams};
use crate::trace::{Evaluator, Recorder, Stopwatch};

/// Dual weights `P ∈ Δ_n` with `D_φ(P | uniform) ≤ ρ`, `φ(t) = (t - 1)²/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    pub p: Vec<f64>,
    pub rho: f64,
}

impl DualWeights {
    pub fn uniform(n: usize, rho: f64) -> Self {
        DualWeights {
            p: vec![1.0 / n as f64; n],
            rho,
        }
    }

    /// `D_φ(P | uniform) = (1/2n) Σ (n p_i - 1)²`.
    pub fn divergence(&self) -> f64 {
        chi2_divergence(&self.p)
    }

    /// Largest violation among the simplex and ball constraints.
    pub fn violation(&self) -> f64 {
        let sum: f64 = self.p.iter().sum();
        let neg = self.p.iter().fold(0.0f64, |m, &v| m.max(-v));
        (sum - 1.0).abs().max(neg).max(self.divergence() - self.rho)
    }
}

pub fn chi2_divergence(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter().map(|&v| (n * v - 1.0).powi(2)).sum::<f64>() / (2.0 * n)
}

/// `Σ (q_i - θ)₊` and `Σ (q_i - θ)₊²` and the support size.
fn positive_part_sums(q: &[f64], theta: f64) -> (f64, f64, usize) {
    q.iter().fold((0.0, 0.0, 0), |(s1, s2, k), &v| {
        let d = v - theta;
        if d > 0.0 {
            (s1 + d, s2 + d * d, k + 1)
        } else {
            (s1, s2, k)
        }
    })
}

fn support_size(q: &[f64], theta: f64) -> usize {
    q.iter().filter(|&&v| v > theta).count()
}

/// `(Σ q_i, Σ q_i²)` over `{i : q_i > θ}`.
fn support_moments(q: &[f64], theta: f64) -> (f64, f64) {
    q.iter()
        .filter(|&&v| v > theta)
        .fold((0.0, 0.0), |(a, b), &v| (a + v, b + v * v))
}

/// Bisects `[lo, hi]` (with `pred(lo)` true and `pred(hi)` false) until the
/// support of `(q - θ)₊` is the same at both ends, then calls `exact` on the
/// common support. Falls back to the bracket midpoint.
fn bracket_and_solve(
    q: &[f64],
    mut lo: f64,
    mut hi: f64,
    pred: impl Fn(f64) -> bool,
    exact: impl Fn(f64, f64, usize) -> Option<f64>,
) -> f64 {
    for _ in 0..200 {
        let (klo, khi) = (support_size(q, lo), support_size(q, hi));
        if klo == khi {
            let (s1, s2) = support_moments(q, lo);
            if let Some(t) = exact(s1, s2, klo) {
                let slack = 1e-12 * (hi - lo).abs().max(lo.abs().max(hi.abs()) * 1e-4);
                if t >= lo - slack && t <= hi + slack {
                    return t.clamp(lo, hi);
                }
            }
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Euclidean projection onto the probability simplex in O(n) per bisection
/// step: `P = (q - θ)₊` with `Σ P = 1`.
pub fn project_simplex(q: &[f64]) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "projection input",
            iteration: 0,
        });
    }
    let n = q.len() as f64;
    let (qmin, qmax) = q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let theta = bracket_and_solve(
        q,
        qmin - 1.0 / n,
        qmax,
        |t| positive_part_sums(q, t).0 >= 1.0,
        |s1, _, k| (k > 0).then(|| (s1 - 1.0) / k as f64),
    );
    let mut p: Vec<f64> = q.iter().map(|&v| (v - theta).max(0.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    Ok(p)
}

/// Euclidean projection of `q` onto `{P ∈ Δ_n : (1/2n) Σ (n P_i - 1)² ≤ ρ}`.
///
/// The ball is `|P - u|² ≤ r² = 2ρ/n` around the uniform vector `u`. With a
/// ball multiplier `β ≥ 0` the solution is the simplex projection of
/// `(q + βu)/(1 + β)`, which can be written `P = (q - θ)₊ / S(θ)` with
/// `S(θ) = Σ (q_i - θ)₊ = 1 + β`. `|P(θ) - u|` grows with `θ`, so `θ` is
/// found by bisection and then solved exactly on the final support, where
/// `Σ (q_i - θ)² = (r² + 1/n) S(θ)²` is a quadratic in `θ`.
pub fn project_chi2_simplex(q: &[f64], rho: f64) -> Result<DualWeights> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho {rho} must be positive")));
    }
    let n = q.len();
    let p0 = project_simplex(q)?;
    let nf = n as f64;
    let r2 = 2.0 * rho / nf;
    let feasible = |p: &[f64]| {
        p.iter().all(|&v| v >= 0.0)
            && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
            && chi2_divergence(p) <= rho
    };
    if feasible(q) {
        return Ok(DualWeights { p: q.to_vec(), rho });
    }
    if chi2_divergence(&p0) <= rho {
        return Ok(DualWeights { p: p0, rho });
    }

    let c = r2 + 1.0 / nf;
    let ratio = |t: f64| {
        let (s1, s2, _) = positive_part_sums(q, t);
        s2 / (s1 * s1)
    };
    let (qmin, qmax, s1) = q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(a, b, s), &v| {
            (a.min(v), b.max(v), s + v)
        });
    let mean = s1 / nf;
    let spread = q
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        .sqrt();
    let lo = qmin.min((s1 - spread / r2.sqrt()) / nf);
    // θ₀ with S(θ₀) = 1 recovers the plain simplex projection, which is outside the ball
    let theta0 = {
        let t = p0
            .iter()
            .zip(q)
            .find(|(p, _)| **p > 0.0)
            .map(|(p, v)| v - p)
            .unwrap_or(qmax);
        t.min(qmax)
    };
    let theta = bracket_and_solve(
        q,
        lo,
        theta0,
        |t| ratio(t) <= c,
        |s1, s2, k| {
            // Σ(q-θ)² - c (Σ(q-θ))² = 0 on a support of size k
            let k = k as f64;
            let a = k - c * k * k;
            let b = -2.0 * s1 + 2.0 * c * k * s1;
            let cc = s2 - c * s1 * s1;
            if a.abs() < 1e-300 {
                return (b != 0.0).then(|| -cc / b);
            }
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            // the root with S(θ) = s1 - kθ > 0
            [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                .into_iter()
                .filter(|t| s1 - k * t > 0.0)
                .max_by(|x, y| x.total_cmp(y))
        },
    );
    let mut p: Vec<f64> = q.iter().map(|&v| (v - theta).max(0.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    // pull rounding overshoot back onto the ball along the segment to u
    let u = 1.0 / nf;
    let d2: f64 = p.iter().map(|v| (v - u) * (v - u)).sum();
    if d2 > r2 {
        let f = (r2 / d2).sqrt();
        p.iter_mut().for_each(|v| *v = u + (*v - u) * f);
    }
    Ok(DualWeights { p, rho })
}

#[derive(Debug, Clone)]
pub struct BmdConfig {
    pub eta_theta: f64,
    pub eta_p: f64,
    pub rho: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub step: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub theta: Vec<f64>,
    /// Final dual weights (BMD only).
    pub dual: Option<DualWeights>,
    /// CPU seconds spent in dual updates (BMD only).
    pub dual_seconds: f64,
    pub iterations: usize,
}

fn check_common(iterations: usize, batch: usize, steps: &[(&str, f64)]) -> Result<()> {
    if iterations == 0 || batch == 0 {
        return Err(Error::InvalidConfig(
            "iterations and batch size must be positive".into(),
        ));
    }
    for (name, v) in steps {
        if !(*v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{name} {v} must be nonnegative"
            )));
        }
    }
    Ok(())
}

pub fn bmd_minmax(
    problem: &VarianceRegProblem,
    theta0: &[f64],
    config: &BmdConfig,
) -> Result<BaselineOutput> {
    let mut rec = Recorder::quiet(Evaluator::new(problem));
    bmd_minmax_recorded(problem, theta0, config, &mut rec)
}

/// Alternating stochastic descent in `θ` and projected ascent in `P` on
/// `min_θ max_P Σ P_i l_i(θ)`.
///
/// Each iteration draws a batch `B` of `m` indices with replacement;
/// `(n/m) Σ_{i∈B} P_i ∇l_i(θ)` and the vector with entries `(n/m) l_i(θ)`
/// per draw are unbiased for the full primal gradient and loss vector.
pub fn bmd_minmax_recorded(
    problem: &VarianceRegProblem,
    theta0: &[f64],
    config: &BmdConfig,
    rec: &mut Recorder,
) -> Result<BaselineOutput> {
    check_common(
        config.iterations,
        config.batch_size,
        &[("eta_theta", config.eta_theta), ("eta_p", config.eta_p)],
    )?;
    if !(config.rho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rho {} must be positive",
            config.rho
        )));
    }
    let data = problem.data();
    let (n, d) = (data.n(), data.dim());
    if theta0.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: theta0.len(),
        });
    }
    let mut rng = rng::stream(config.seed, streams::BASELINE_BATCH);
    let mut theta = theta0.to_vec();
    let mut dual = DualWeights::uniform(n, config.rho);
    let mut idx = Vec::with_capacity(config.batch_size);
    let mut grad = vec![0.0; d];
    let mut q = vec![0.0; n];
    let mut dual_clock = Stopwatch::new();
    let scale = n as f64 / config.batch_size as f64;

    rec.start();
    if rec.due(0) {
        log_bmd(problem, &theta, &dual, rec, 0, 0.0)?;
    }
    for t in 1..=config.iterations {
        rng::sample_batch(&mut rng, n, config.batch_size, &mut idx);
        grad.fill(0.0);
        dual_clock.start();
        q.copy_from_slice(&dual.p);
        dual_clock.stop();
        for &i in &idx {
            let (l, slope) = problem.sample_loss(&theta, i);
            data.row(i).axpy_into(scale * dual.p[i] * slope, &mut grad);
            q[i] += config.eta_p * scale * l;
        }
        theta
            .iter_mut()
            .zip(&grad)
            .for_each(|(v, g)| *v -= config.eta_theta * g);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "theta",
                iteration: t,
            });
        }
        dual_clock.start();
        if config.eta_p > 0.0 {
            dual = project_chi2_simplex(&q, config.rho)?;
        }
        dual_clock.stop();
        debug_assert!(
            dual.violation() <= 1e-8,
            "dual weights left the feasible set"
        );
        if rec.due(t) || (t == config.iterations && rec.due(0)) {
            log_bmd(problem, &theta, &dual, rec, t, dual_clock.elapsed())?;
        }
    }
    rec.pause();
    Ok(BaselineOutput {
        theta,
        dual: Some(dual),
        dual_seconds: dual_clock.elapsed(),
        iterations: config.iterations,
    })
}

fn log_bmd(
    problem: &VarianceRegProblem,
    theta: &[f64],
    dual: &DualWeights,
    rec: &mut Recorder,
    t: usize,
    dual_seconds: f64,
) -> Result<()> {
    rec.pause();
    let robust: f64 = dual
        .p
        .iter()
        .enumerate()
        .map(|(i, p)| p * problem.sample_loss(theta, i).0)
        .sum();
    rec.resume();
    let mut extras = BTreeMap::new();
    extras.insert("robust_objective".to_string(), robust);
    extras.insert("divergence".to_string(), dual.divergence());
    let mut timings = BTreeMap::new();
    timings.insert("dual_seconds".to_string(), dual_seconds);
    rec.log(t, theta, extras, timings)?;
    Ok(())
}

pub fn sgd_erm(
    problem: &VarianceRegProblem,
    theta0: &[f64],
    config: &SgdConfig,
) -> Result<BaselineOutput> {
    let mut rec = Recorder::quiet(Evaluator::new(problem));
    sgd_erm_recorded(problem, theta0, config, &mut rec)
}

/// Constant-step mini-batch SGD on the mean loss; `λ` only enters the
/// reported objective.
pub fn sgd_erm_recorded(
    problem: &VarianceRegProblem,
    theta0: &[f64],
    config: &SgdConfig,
    rec: &mut Recorder,
) -> Result<BaselineOutput> {
    check_common(
        config.iterations,
        config.batch_size,
        &[("step", config.step)],
    )?;
    let data = problem.data();
    let (n, d) = (data.n(), data.dim());
    if theta0.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: theta0.len(),
        });
    }
    let mut rng = rng::stream(config.seed, streams::BASELINE_BATCH);
    let mut theta = theta0.to_vec();
    let mut idx = Vec::with_capacity(config.batch_size);
    let mut grad = vec![0.0; d];
    let w = 1.0 / config.batch_size as f64;

    rec.start();
    if rec.due(0) {
        rec.log(0, &theta, BTreeMap::new(), BTreeMap::new())?;
    }
    for t in 1..=config.iterations {
        rng::sample_batch(&mut rng, n, config.batch_size, &mut idx);
        grad.fill(0.0);
        for &i in &idx {
            let (_, slope) = problem.sample_loss(&theta, i);
            data.row(i).axpy_into(w * slope, &mut grad);
        }
        theta
            .iter_mut()
            .zip(&grad)
            .for_each(|(v, g)| *v -= config.step * g);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "theta",
                iteration: t,
            });
        }
        if rec.due(t) || (t == config.iterations && rec.due(0)) {
            rec.log(t, &theta, BTreeMap::new(), BTreeMap::new())?;
        }
    }
    rec.pause();
    Ok(BaselineOutput {
        theta,
        dual: None,
        dual_seconds: 0.0,
        iterations: config.iterations,
    })
}
