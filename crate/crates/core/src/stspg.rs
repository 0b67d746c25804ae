//! Stagewise SPG: alternating proximal solves of the x- and y-subproblems.
//!
//! Stage `k` runs SPG on `f_x^k(x) + (γ/2)|x - x_k|²` from `x_k`, then on
//! `f_y^k(y) + (μ/2)|y - y_k|²` from `y_k`, where
//!
//! - DC mode: `f_x^k(x) = g(x) - y_k [l(x_k) + ∇l(x_k)(x - x_k)]`
//! - bi-convex mode: `f_x^k(x) = g(x) - y_k l(x)`
//! - `f_y^k(y) = h(y) - y l(x_{k+1})`

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::problem::{Batch, DomainY, InfProjection};
use crate::rng::{self, streams, SolverRng};
use crate::sparse::{dist, norm};
use crate::spg::{spg_with_rng, ConvexSet, SpgConfig, StepRule, StochasticOracle};
use crate::trace::{Evaluator, Recorder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSchedule {
    /// `T_k^x = ⌈k/γ⌉ + 1`, `T_k^y = ⌈k/μ⌉ + 1`.
    Linear,
    /// The same budget in every stage, for both subproblems.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemMode {
    /// Linearize `l` at the stage start; requires `dom(h) ⊆ ℝ₊`.
    DcLinearized,
    /// Keep `l` exact; requires `dom(h) ⊆ ℝ₋`.
    BiConvex,
}

impl SubproblemMode {
    pub fn name(self) -> &'static str {
        match self {
            SubproblemMode::DcLinearized => "dc",
            SubproblemMode::BiConvex => "biconvex",
        }
    }

    /// The mode matching a y-domain side.
    pub fn for_domain(domain: DomainY) -> Result<Self> {
        match domain {
            DomainY::NonNegOrthant => Ok(SubproblemMode::DcLinearized),
            DomainY::NonPosOrthant => Ok(SubproblemMode::BiConvex),
            DomainY::Free => Err(Error::ModeDomainMismatch {
                mode: "dc|biconvex",
                domain: domain.name(),
            }),
        }
    }

    fn check(self, domain: DomainY) -> Result<()> {
        if SubproblemMode::for_domain(domain).ok() == Some(self) {
            Ok(())
        } else {
            Err(Error::ModeDomainMismatch {
                mode: self.name(),
                domain: domain.name(),
            })
        }
    }
}

/// How the stochastic oracles sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Exact full-batch oracles.
    Full,
    /// Independent mini-batches of the given size, drawn with replacement.
    MiniBatch(usize),
}

impl Sampling {
    fn validate(self) -> Result<()> {
        match self {
            Sampling::MiniBatch(0) => Err(Error::InvalidConfig(
                "mini-batch size must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StSpgConfig {
    /// Number of stages `K`.
    pub stages: usize,
    pub gamma: f64,
    pub mu: f64,
    /// Exponent `α ≥ 1` of the output-stage distribution `P(τ = k) ∝ k^α`.
    pub alpha_samp: f64,
    pub schedule: StageSchedule,
    pub rule_x: StepRule,
    pub rule_y: StepRule,
    pub sampling: Sampling,
    /// Subproblem construction; chosen from the y-domain when `None`.
    pub mode: Option<SubproblemMode>,
    pub seed: u64,
    /// Approximate the exact stage minimizers with a 50× SPG budget and
    /// report the distances to them.
    pub diagnostic: bool,
    /// Keep per-inner-iteration records.
    pub dense_trace: bool,
}

impl StSpgConfig {
    pub fn new(stages: usize, gamma: f64, mu: f64) -> Self {
        StSpgConfig {
            stages,
            gamma,
            mu,
            alpha_samp: 1.0,
            schedule: StageSchedule::Linear,
            rule_x: StepRule::Smooth,
            rule_y: StepRule::Smooth,
            sampling: Sampling::Full,
            mode: None,
            seed: 0,
            diagnostic: false,
            dense_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidConfig(
                "St-SPG needs at least one stage".into(),
            ));
        }
        for (name, v) in [("gamma", self.gamma), ("mu", self.mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} {v} must be positive")));
            }
        }
        if !(self.alpha_samp >= 1.0 && self.alpha_samp.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha_samp {} must be at least 1",
                self.alpha_samp
            )));
        }
        if self.schedule == StageSchedule::Fixed(0) {
            return Err(Error::InvalidConfig(
                "fixed stage budget must be positive".into(),
            ));
        }
        self.sampling.validate()
    }

    /// `(T_k^x, T_k^y)` for stage `k ≥ 1`.
    pub fn stage_iterations(&self, k: usize) -> (usize, usize) {
        match self.schedule {
            StageSchedule::Linear => (linear_budget(k, self.gamma), linear_budget(k, self.mu)),
            StageSchedule::Fixed(t) => (t, t),
        }
    }
}

/// `⌈k/w⌉ + 1`, treating quotients within rounding noise of an integer as
/// that integer.
pub fn linear_budget(k: usize, w: f64) -> usize {
    let q = k as f64 / w;
    let r = q.round();
    let c = if (q - r).abs() <= 1e-12 * q.abs().max(1.0) {
        r
    } else {
        q.ceil()
    };
    c as usize + 1
}

/// `P(τ = k) = k^α / Σ_s s^α` for `k = 1..K`.
pub fn stage_distribution(stages: usize, alpha: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=stages).map(|k| (k as f64).powf(alpha)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Draws the output stage `τ ∈ 1..=K`.
pub fn sample_stage(rng: &mut SolverRng, stages: usize, alpha: f64) -> usize {
    let w: Vec<f64> = (1..=stages).map(|k| (k as f64).powf(alpha)).collect();
    rng::sample_weighted(rng, &w)
}

/// Stochastic gradient oracle of the stage-`k` x-subproblem.
pub struct XSubproblem<'p> {
    problem: &'p dyn InfProjection,
    mode: SubproblemMode,
    x_k: Vec<f64>,
    y_k: f64,
    sampling: Sampling,
    /// `∇l(x_k)ᵀ y_k` over the full sample set, fixed for the stage.
    frozen: Option<Vec<f64>>,
    idx: Vec<usize>,
    tmp: Vec<f64>,
}

pub fn build_subproblem_x<'p>(
    problem: &'p dyn InfProjection,
    x_k: &[f64],
    y_k: f64,
    mode: SubproblemMode,
    sampling: Sampling,
) -> Result<XSubproblem<'p>> {
    mode.check(problem.domain_y())?;
    sampling.validate()?;
    let d = problem.dim_x();
    if x_k.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: x_k.len(),
        });
    }
    let frozen = if mode == SubproblemMode::DcLinearized && sampling == Sampling::Full {
        let mut j = vec![0.0; d];
        problem.ell_jacobian_vec(x_k, y_k, Batch::Full, &mut j)?;
        Some(j)
    } else {
        None
    };
    Ok(XSubproblem {
        problem,
        mode,
        x_k: x_k.to_vec(),
        y_k,
        sampling,
        frozen,
        idx: Vec::new(),
        tmp: vec![0.0; d],
    })
}

impl XSubproblem<'_> {
    /// `f_x^k(x)` over the full sample set.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut scratch = vec![0.0; x.len()];
        let g = self.problem.g_value_grad(x, Batch::Full, &mut scratch)?;
        let lin = match self.mode {
            SubproblemMode::DcLinearized => {
                self.problem
                    .ell_jacobian_vec(&self.x_k, 1.0, Batch::Full, &mut scratch)?;
                let l0 = self.problem.ell_value(&self.x_k, Batch::Full)?;
                l0 + scratch
                    .iter()
                    .zip(x)
                    .zip(&self.x_k)
                    .map(|((j, a), b)| j * (a - b))
                    .sum::<f64>()
            }
            SubproblemMode::BiConvex => self.problem.ell_value(x, Batch::Full)?,
        };
        Ok(g - self.y_k * lin)
    }
}

impl StochasticOracle for XSubproblem<'_> {
    fn dim(&self) -> usize {
        self.x_k.len()
    }

    fn subgradient(&mut self, z: &[f64], rng: &mut SolverRng, out: &mut [f64]) -> Result<()> {
        let n = self.problem.num_samples();
        match self.sampling {
            Sampling::Full => {
                self.problem.g_value_grad(z, Batch::Full, out)?;
                match &self.frozen {
                    Some(j) => out.iter_mut().zip(j).for_each(|(o, v)| *o -= v),
                    None => {
                        self.problem
                            .ell_jacobian_vec(z, self.y_k, Batch::Full, &mut self.tmp)?;
                        out.iter_mut().zip(&self.tmp).for_each(|(o, v)| *o -= v);
                    }
                }
            }
            Sampling::MiniBatch(b) => {
                rng::sample_batch(rng, n, b, &mut self.idx);
                self.problem
                    .g_value_grad(z, Batch::Indices(&self.idx), out)?;
                if self.y_k != 0.0 {
                    rng::sample_batch(rng, n, b, &mut self.idx);
                    let at = match self.mode {
                        SubproblemMode::DcLinearized => &self.x_k[..],
                        SubproblemMode::BiConvex => z,
                    };
                    self.problem.ell_jacobian_vec(
                        at,
                        self.y_k,
                        Batch::Indices(&self.idx),
                        &mut self.tmp,
                    )?;
                    out.iter_mut().zip(&self.tmp).for_each(|(o, v)| *o -= v);
                }
            }
        }
        Ok(())
    }
}

/// Stochastic gradient oracle of `f_y^k(y) = h(y) - y l(x_{k+1})`.
pub struct YSubproblem<'p> {
    problem: &'p dyn InfProjection,
    x_next: Vec<f64>,
    sampling: Sampling,
    ell_full: Option<f64>,
    idx: Vec<usize>,
}

pub fn build_subproblem_y<'p>(
    problem: &'p dyn InfProjection,
    x_next: &[f64],
    sampling: Sampling,
) -> Result<YSubproblem<'p>> {
    sampling.validate()?;
    let ell_full = match sampling {
        Sampling::Full => Some(problem.ell_value(x_next, Batch::Full)?),
        Sampling::MiniBatch(_) => None,
    };
    Ok(YSubproblem {
        problem,
        x_next: x_next.to_vec(),
        sampling,
        ell_full,
        idx: Vec::new(),
    })
}

impl YSubproblem<'_> {
    /// Exact minimizer of `f_y^k(y) + (μ/2)(y - y_k)²` for `h = β y²/2` on an
    /// interval: `clamp((l + μ y_k) / (β + μ))`.
    pub fn quadratic_stage_minimizer(&self, beta: f64, mu: f64, y_k: f64) -> Result<f64> {
        let l = self.problem.ell_value(&self.x_next, Batch::Full)?;
        let (lo, hi) = self.problem.y_interval();
        Ok(((l + mu * y_k) / (beta + mu)).clamp(lo, hi))
    }
}

impl StochasticOracle for YSubproblem<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn subgradient(&mut self, z: &[f64], rng: &mut SolverRng, out: &mut [f64]) -> Result<()> {
        let l = match (self.ell_full, self.sampling) {
            (Some(l), _) => l,
            (None, Sampling::MiniBatch(b)) => {
                rng::sample_batch(rng, self.problem.num_samples(), b, &mut self.idx);
                self.problem
                    .ell_value(&self.x_next, Batch::Indices(&self.idx))?
            }
            (None, Sampling::Full) => self.problem.ell_value(&self.x_next, Batch::Full)?,
        };
        out[0] = self.problem.h_grad(z[0]) - l;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSnapshot {
    pub k: usize,
    pub x_k: Vec<f64>,
    pub y_k: f64,
    pub x_next: Vec<f64>,
    pub y_next: f64,
    /// Solver CPU seconds at the end of the stage.
    pub cpu_seconds: f64,
    /// `F(x_{k+1})`.
    pub objective: f64,
    /// `|∇F(x_{k+1})|`.
    pub grad_norm: f64,
    /// `f(x_{k+1}, y_{k+1})`.
    pub f_joint: f64,
    pub iters_x: usize,
    pub iters_y: usize,
    /// `|x_{k+1} - v̂_k|` and `|∇F(v̂_k)|` in diagnostic mode, where `v̂_k`
    /// approximates the exact x-stage minimizer.
    pub dist_to_v: Option<f64>,
    pub grad_norm_at_v: Option<f64>,
    /// `|y_{k+1} - û_k|` in diagnostic mode.
    pub dist_to_u: Option<f64>,
}

/// One inner SPG iterate of an x-stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerRecord {
    pub stage: usize,
    pub t: usize,
    /// `|z_t - x_k|`.
    pub dist_to_center: f64,
}

#[derive(Debug, Clone)]
pub struct StSpgOutput {
    /// Sampled output stage.
    pub tau: usize,
    /// `x_τ`, the start of stage τ.
    pub x_tau: Vec<f64>,
    /// `x_{τ+1}`, the end of stage τ.
    pub x_tau_next: Vec<f64>,
    pub y_tau_next: f64,
    pub x_last: Vec<f64>,
    pub y_last: f64,
    pub snapshots: Vec<StageSnapshot>,
    pub inner: Vec<InnerRecord>,
}

/// Runs St-SPG without a trace.
pub fn st_spg(
    problem: &dyn InfProjection,
    x1: &[f64],
    y1: f64,
    config: &StSpgConfig,
) -> Result<StSpgOutput> {
    let mut rec = Recorder::quiet(Evaluator::new(problem));
    st_spg_recorded(problem, x1, y1, config, &mut rec)
}

/// Runs St-SPG from `(x1, y1)`, logging stage 0 and every stage on the
/// recorder's grid plus the last one.
pub fn st_spg_recorded(
    problem: &dyn InfProjection,
    x1: &[f64],
    y1: f64,
    config: &StSpgConfig,
    rec: &mut Recorder,
) -> Result<StSpgOutput> {
    config.validate()?;
    let mode = match config.mode {
        Some(m) => {
            m.check(problem.domain_y())?;
            m
        }
        None => SubproblemMode::for_domain(problem.domain_y())?,
    };
    let d = problem.dim_x();
    if x1.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: x1.len(),
        });
    }
    let (lo, hi) = problem.y_interval();
    let y_set = ConvexSet::Box { lo, hi };
    if !y_set.contains(&[y1]) {
        return Err(Error::Infeasible);
    }

    let tau = sample_stage(
        &mut rng::stream(config.seed, streams::STAGE_SAMPLING),
        config.stages,
        config.alpha_samp,
    );
    let mut x_rng = rng::stream(config.seed, streams::X_STAGE);
    let mut y_rng = rng::stream(config.seed, streams::Y_STAGE);
    let mut diag_rng = rng::stream(config.seed, streams::DIAGNOSTIC);

    let mut x = x1.to_vec();
    let mut y = y1;
    let mut snapshots = Vec::with_capacity(config.stages);
    let mut inner = Vec::new();
    let mut out_tau = None;

    rec.start();
    if rec.due(0) {
        rec.log(0, &x, stage_extras(y, None), BTreeMap::new())?;
    }
    for k in 1..=config.stages {
        let (tx, ty) = config.stage_iterations(k);

        let mut xo = build_subproblem_x(problem, &x, y, mode, config.sampling)?;
        let xcfg = SpgConfig {
            iterations: tx,
            gamma: config.gamma,
            rule: config.rule_x,
            seed: 0,
            lipschitz_hint: None,
        };
        let xs = spg_with_rng(
            &mut xo,
            &x,
            ConvexSet::Whole,
            &xcfg,
            &mut x_rng,
            config.dense_trace,
        )?;
        let mut x_next = xs.z_hat;
        problem.project_x(&mut x_next);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "x iterate",
                iteration: k,
            });
        }
        if let Some(its) = xs.iterates {
            inner.extend(its.iter().enumerate().map(|(t, z)| InnerRecord {
                stage: k,
                t: t + 1,
                dist_to_center: dist(z, &x),
            }));
        }

        let mut yo = build_subproblem_y(problem, &x_next, config.sampling)?;
        let ycfg = SpgConfig {
            iterations: ty,
            gamma: config.mu,
            rule: config.rule_y,
            seed: 0,
            lipschitz_hint: None,
        };
        let y_next = spg_with_rng(&mut yo, &[y], y_set, &ycfg, &mut y_rng, false)?.z_hat[0];
        if !y_next.is_finite() {
            return Err(Error::NonFinite {
                what: "y iterate",
                iteration: k,
            });
        }

        rec.pause();
        let (mut dist_to_v, mut grad_norm_at_v, mut dist_to_u) = (None, None, None);
        if config.diagnostic {
            let vcfg = SpgConfig {
                iterations: 50 * tx,
                ..xcfg
            };
            let v = spg_with_rng(&mut xo, &x, ConvexSet::Whole, &vcfg, &mut diag_rng, false)?.z_hat;
            dist_to_v = Some(dist(&x_next, &v));
            grad_norm_at_v = Some(norm(&problem.full_gradient(&v)?));
            let ucfg = SpgConfig {
                iterations: 50 * ty,
                ..ycfg
            };
            let u = spg_with_rng(&mut yo, &[y], y_set, &ucfg, &mut diag_rng, false)?.z_hat[0];
            dist_to_u = Some((y_next - u).abs());
        }
        let objective = problem.objective(&x_next)?;
        let grad_norm = norm(&problem.full_gradient(&x_next)?);
        let f_joint = problem.joint_value(&x_next, y_next)?;
        let snap = StageSnapshot {
            k,
            x_k: std::mem::take(&mut x),
            y_k: y,
            x_next: x_next.clone(),
            y_next,
            cpu_seconds: rec.cpu_seconds(),
            objective,
            grad_norm,
            f_joint,
            iters_x: tx,
            iters_y: ty,
            dist_to_v,
            grad_norm_at_v,
            dist_to_u,
        };
        if k == tau {
            out_tau = Some((snap.x_k.clone(), x_next.clone(), y_next));
        }
        rec.resume();
        if rec.due(k) || (k == config.stages && rec.due(0)) {
            let mut extras = stage_extras(y_next, Some(&snap));
            extras.insert("f_joint".into(), f_joint);
            rec.log_known(k, &x_next, objective, grad_norm, extras, BTreeMap::new())?;
        }
        snapshots.push(snap);
        x = x_next;
        y = y_next;
    }
    rec.pause();

    let (x_tau, x_tau_next, y_tau_next) = out_tau.expect("tau lies in 1..=K");
    Ok(StSpgOutput {
        tau,
        x_tau,
        x_tau_next,
        y_tau_next,
        x_last: x,
        y_last: y,
        snapshots,
        inner,
    })
}

fn stage_extras(y: f64, snap: Option<&StageSnapshot>) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("y".to_string(), y);
    if let Some(s) = snap {
        m.insert("iters_x".into(), s.iters_x as f64);
        m.insert("iters_y".into(), s.iters_y as f64);
        if let Some(v) = s.dist_to_v {
            m.insert("dist_to_v".into(), v);
        }
        if let Some(v) = s.grad_norm_at_v {
            m.insert("grad_norm_at_v".into(), v);
        }
        if let Some(v) = s.dist_to_u {
            m.insert("dist_to_u".into(), v);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_budget_examples() {
        assert_eq!(linear_budget(4, 0.5), 9);
        assert_eq!(linear_budget(1, 1.0), 2);
        assert_eq!(linear_budget(3, 0.1), 31);
        assert_eq!(linear_budget(1, 3.0), 2);
        assert_eq!(linear_budget(7, 2.0), 5);
    }

    #[test]
    fn stage_distribution_normalizes() {
        let p = stage_distribution(3, 1.0);
        let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_schedule() {
        let mut c = StSpgConfig::new(3, 0.5, 2.0);
        c.schedule = StageSchedule::Fixed(7);
        assert_eq!(c.stage_iterations(5), (7, 7));
        c.schedule = StageSchedule::Fixed(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_domain_pairs() {
        assert_eq!(
            SubproblemMode::for_domain(DomainY::NonNegOrthant).unwrap(),
            SubproblemMode::DcLinearized
        );
        assert_eq!(
            SubproblemMode::for_domain(DomainY::NonPosOrthant).unwrap(),
            SubproblemMode::BiConvex
        );
        assert!(SubproblemMode::DcLinearized
            .check(DomainY::NonPosOrthant)
            .is_err());
        assert!(SubproblemMode::for_domain(DomainY::Free).is_err());
    }
}
