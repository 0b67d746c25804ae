//! Numeric checks of the structural properties the solvers rely on, and the
//! suites behind `infproj check`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::baselines::{chi2_divergence, project_chi2_simplex};
use crate::data::{split_indices, Dataset};
use crate::error::{Error, Result};
use crate::loss::{logistic_loss, truncated_loss, LossKind};
use crate::mspg::SmoothConstants;
use crate::problem::{Batch, DomainY, InfProjection, VarianceRegProblem};
use crate::rng::{self, streams, SolverRng};
use crate::sparse::{dist, norm, SparseVec};
use crate::spg::StochasticOracle;
use crate::stspg::{
    build_subproblem_x, build_subproblem_y, Sampling, StageSnapshot, SubproblemMode,
};
use crate::synthetic::{logistic_dataset, EllKind, QuadraticInfProj, QuadraticSpec};
use crate::trace::TraceRecord;

/// Uniform convexity of `h` and Hölder smoothness of `h*` for a power `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePair {
    pub p: f64,
    pub varrho: f64,
    pub v: f64,
    pub l: f64,
}

impl ConjugatePair {
    /// `v = 1/(p - 1)`, `L = (1/ϱ)^{1/(p-1)}`.
    pub fn from_modulus(varrho: f64, p: f64) -> Self {
        ConjugatePair {
            p,
            varrho,
            v: 1.0 / (p - 1.0),
            l: (1.0 / varrho).powf(1.0 / (p - 1.0)),
        }
    }

    /// `p = 1 + 1/v`, `ϱ = (2v/(1+v)) (1/L)^{1/v}`.
    pub fn from_holder(l: f64, v: f64) -> Self {
        ConjugatePair {
            p: 1.0 + 1.0 / v,
            varrho: (2.0 * v / (1.0 + v)) * (1.0 / l).powf(1.0 / v),
            v,
            l,
        }
    }

    /// Modulus of `h(y) = |y|^p / p`: `⟨∇h(a) - ∇h(b), a - b⟩ ≥ 2^{2-p} |a - b|^p`.
    pub fn power_family(p: f64) -> Self {
        Self::from_modulus(2f64.powf(2.0 - p), p)
    }
}

#[derive(Debug, Clone)]
pub struct Lemma1Report {
    pub pair: ConjugatePair,
    pub samples: usize,
    pub holder_violations: usize,
    pub convexity_violations: usize,
    /// Largest `|∇h*(s₁) - ∇h*(s₂)| / (L |s₁ - s₂|^v)`.
    pub worst_holder_ratio: f64,
    /// Largest `ϱ|a - b|^p / ⟨∇h(a) - ∇h(b), a - b⟩`.
    pub worst_convexity_ratio: f64,
}

fn signed_pow(s: f64, e: f64) -> f64 {
    s.signum() * s.abs().powf(e)
}

/// Samples pairs in `[-10, 10]` and checks the Hölder bound on
/// `∇h*(s) = sign(s)|s|^{1/(p-1)}` and the uniform convexity of
/// `h(y) = |y|^p/p`, with slack `1e-9 max(1, |rhs|)`.
pub fn check_lemma1(p: f64, samples: usize, seed: u64) -> Result<Lemma1Report> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "power {p} must be at least 2"
        )));
    }
    let pair = ConjugatePair::power_family(p);
    let mut r = rng::stream(seed, streams::DIAGNOSTIC);
    let mut report = Lemma1Report {
        pair,
        samples,
        holder_violations: 0,
        convexity_violations: 0,
        worst_holder_ratio: 0.0,
        worst_convexity_ratio: 0.0,
    };
    let slack = |v: f64| 1e-9 * v.abs().max(1.0);
    for i in 0..samples {
        let (s1, s2) = if i == 0 {
            (1.5, 1.5)
        } else {
            (r.random_range(-10.0..=10.0), r.random_range(-10.0..=10.0))
        };
        let lhs = (signed_pow(s1, pair.v) - signed_pow(s2, pair.v)).abs();
        let rhs = pair.l * (s1 - s2).abs().powf(pair.v);
        if lhs > rhs + slack(rhs) {
            report.holder_violations += 1;
        }
        if rhs > 0.0 {
            report.worst_holder_ratio = report.worst_holder_ratio.max(lhs / rhs);
        }

        let (a, b) = (r.random_range(-10.0..=10.0), r.random_range(-10.0..=10.0));
        let inner = (signed_pow(a, p - 1.0) - signed_pow(b, p - 1.0)) * (a - b);
        let lower = pair.varrho * (a - b).abs().powf(p);
        if lower > inner + slack(inner) {
            report.convexity_violations += 1;
        }
        if inner > 0.0 {
            report.worst_convexity_ratio = report.worst_convexity_ratio.max(lower / inner);
        }
    }
    Ok(report)
}

/// Which coordinates a finite-difference audit perturbs.
#[derive(Debug, Clone)]
pub enum Coords {
    All,
    /// The support of the analytic gradient plus `extra` random coordinates.
    SupportPlusRandom {
        extra: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditResult {
    pub max_rel_error: f64,
    pub worst_point: usize,
    pub worst_coord: usize,
}

/// Largest relative error between central differences and `grad`.
///
/// Per point the error is `max_j |d_j - g_j| / max(|g|∞, |d|∞, 1e-8)` over
/// the audited coordinates, where `d_j` divides by the realized step
/// `(x_j + ε) - (x_j - ε)`.
pub fn finite_diff_audit(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    points: &[Vec<f64>],
    eps: f64,
    coords: &Coords,
) -> Result<AuditResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let mut worst = AuditResult {
        max_rel_error: 0.0,
        worst_point: 0,
        worst_coord: 0,
    };
    let mut pick = match coords {
        Coords::SupportPlusRandom { seed, .. } => Some(rng::stream(*seed, streams::DIAGNOSTIC)),
        Coords::All => None,
    };
    for (pi, x) in points.iter().enumerate() {
        let g = grad(x)?;
        if g.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "analytic gradient",
                iteration: pi,
            });
        }
        let idx: Vec<usize> = match (coords, pick.as_mut()) {
            (Coords::SupportPlusRandom { extra, .. }, Some(r)) if !x.is_empty() => {
                let mut v: Vec<usize> = (0..x.len()).filter(|&j| g[j] != 0.0).collect();
                v.extend((0..*extra).map(|_| r.random_range(0..x.len())));
                v.sort_unstable();
                v.dedup();
                v
            }
            _ => (0..x.len()).collect(),
        };
        let mut xp = x.clone();
        let mut fd = Vec::with_capacity(idx.len());
        for &j in &idx {
            let base = x[j];
            let hi = base + eps;
            let lo = base - eps;
            xp[j] = hi;
            let fh = f(&xp)?;
            xp[j] = lo;
            let fl = f(&xp)?;
            xp[j] = base;
            if !fh.is_finite() || !fl.is_finite() {
                return Err(Error::NonFinite {
                    what: "finite-difference evaluation",
                    iteration: pi,
                });
            }
            fd.push((fh - fl) / (hi - lo));
        }
        let scale = idx
            .iter()
            .zip(&fd)
            .fold(1e-8f64, |m, (&j, d)| m.max(g[j].abs()).max(d.abs()));
        for (&j, d) in idx.iter().zip(&fd) {
            let e = (d - g[j]).abs() / scale;
            if e > worst.max_rel_error {
                worst = AuditResult {
                    max_rel_error: e,
                    worst_point: pi,
                    worst_coord: j,
                };
            }
        }
    }
    Ok(worst)
}

/// Least-squares slope of `ln y` against `ln x` over the trailing half.
pub fn rate_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 10 {
        return Err(Error::TooFewPoints {
            required: 10,
            got: xs.len(),
        });
    }
    for (row, &v) in xs.iter().chain(ys).enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositive {
                row: row % xs.len(),
                value: v,
            });
        }
    }
    let start = xs.len() / 2;
    let lx: Vec<f64> = xs[start..].iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys[start..].iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("x values are all equal".into()));
    }
    Ok(sxy / sxx)
}

/// A trace column: a fixed field or an extra.
pub fn trace_column(r: &TraceRecord, col: &str) -> Option<f64> {
    match col {
        "stage_or_iter" => Some(r.stage_or_iter as f64),
        "cpu_seconds" => Some(r.cpu_seconds),
        "objective_F" => Some(r.objective_f),
        "grad_norm" => Some(r.grad_norm),
        "train_error" => Some(r.train_error),
        "test_error" => Some(r.test_error),
        _ => r.extras.get(col).or_else(|| r.timings.get(col)).copied(),
    }
}

/// [`rate_slope`] over two trace columns.
pub fn rate_slope_trace(trace: &[TraceRecord], x_col: &str, y_col: &str) -> Result<f64> {
    let mut xs = Vec::with_capacity(trace.len());
    let mut ys = Vec::with_capacity(trace.len());
    for (row, r) in trace.iter().enumerate() {
        let missing = |c: &str| Error::Parse {
            line: row,
            message: format!("trace has no column '{c}'"),
        };
        xs.push(trace_column(r, x_col).ok_or_else(|| missing(x_col))?);
        ys.push(trace_column(r, y_col).ok_or_else(|| missing(y_col))?);
    }
    rate_slope(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub y_star: f64,
    pub objective: f64,
    /// `|∇g(x)|`.
    pub grad_g_norm: f64,
    /// `|∇l(x)ᵀ y*(x)|`.
    pub coupling_norm: f64,
    pub eps: f64,
    /// `|∇F(x)| ≤ ε`.
    pub stationary: bool,
}

pub fn stationarity_report(
    problem: &dyn InfProjection,
    x: &[f64],
    eps: f64,
) -> Result<StationarityReport> {
    let y = problem.y_star(x)?;
    let mut gg = vec![0.0; x.len()];
    problem.g_value_grad(x, Batch::Full, &mut gg)?;
    let mut jy = vec![0.0; x.len()];
    problem.ell_jacobian_vec(x, y, Batch::Full, &mut jy)?;
    let grad_norm = norm(&problem.full_gradient(x)?);
    Ok(StationarityReport {
        grad_norm,
        y_star: y,
        objective: problem.objective(x)?,
        grad_g_norm: norm(&gg),
        coupling_norm: norm(&jy),
        eps,
        stationary: grad_norm <= eps,
    })
}

/// Nearly-stationary pairing for one stage: `x_{k+1}` is within `c ε` of a
/// point `v̂_k` with `|∇F(v̂_k)| ≤ ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearlyStationary {
    pub stage: usize,
    pub dist: f64,
    pub grad_norm_at_v: f64,
    pub holds: bool,
}

/// Pairs `|x_{k+1} - v̂_k|` with `|∇F(v̂_k)|` for snapshots recorded in
/// diagnostic mode.
pub fn nearly_stationary(snapshots: &[StageSnapshot], eps: f64, c: f64) -> Vec<NearlyStationary> {
    snapshots
        .iter()
        .filter_map(|s| {
            let (d, g) = (s.dist_to_v?, s.grad_norm_at_v?);
            Some(NearlyStationary {
                stage: s.k,
                dist: d,
                grad_norm_at_v: g,
                holds: d <= c * eps && g <= eps,
            })
        })
        .collect()
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub entries: Vec<CheckEntry>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    fn push(
        &mut self,
        suite: &'static str,
        name: impl Into<String>,
        value: f64,
        threshold: f64,
        detail: String,
    ) {
        // NaN never passes
        let passed = value <= threshold;
        self.entries.push(CheckEntry {
            suite,
            name: name.into(),
            passed,
            value,
            threshold,
            detail,
        });
    }

    fn push_error(&mut self, suite: &'static str, name: impl Into<String>, err: Error) {
        self.entries.push(CheckEntry {
            suite,
            name: name.into(),
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: err.to_string(),
        });
    }

    /// `key=value` lines, one block per check, then a summary.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "check={} suite={} status={} value={:e} threshold={:e}{}",
                e.name,
                e.suite,
                if e.passed { "pass" } else { "fail" },
                e.value,
                e.threshold,
                if e.detail.is_empty() {
                    String::new()
                } else {
                    format!(" detail=\"{}\"", e.detail)
                }
            );
        }
        let failed: Vec<&str> = self.failures().map(|e| e.name.as_str()).collect();
        let _ = writeln!(
            out,
            "total={} passed={} failed={}",
            self.entries.len(),
            self.entries.len() - failed.len(),
            failed.len()
        );
        if !failed.is_empty() {
            let _ = writeln!(out, "failures={}", failed.join(","));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,check,status,value,threshold\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e}",
                e.suite,
                e.name,
                if e.passed { "pass" } else { "fail" },
                e.value,
                e.threshold
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Gradients,
    Lemma1,
    Projection,
    Invariants,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "gradients" => Ok(Suite::Gradients),
            "lemma1" => Ok(Suite::Lemma1),
            "projection" => Ok(Suite::Projection),
            "invariants" => Ok(Suite::Invariants),
            _ => Err(Error::InvalidConfig(format!(
                "unknown suite '{s}' (all, gradients, lemma1, projection, invariants)"
            ))),
        }
    }
}

/// Deliberate defects for negative-control runs of the check suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate the analytic gradient of `F` in the gradient audit.
    WrongSignGradient,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    /// Points per gradient audit.
    pub points: usize,
    /// Pairs per conjugate-duality power and per sampled invariant.
    pub pairs: usize,
    pub fault: Option<Fault>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            points: 100,
            pairs: 10_000,
            fault: None,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> Report {
    let mut report = Report::default();
    if matches!(suite, Suite::All | Suite::Gradients) {
        gradient_suite(opts, &mut report);
    }
    if matches!(suite, Suite::All | Suite::Lemma1) {
        lemma1_suite(opts, &mut report);
    }
    if matches!(suite, Suite::All | Suite::Projection) {
        projection_suite(opts, &mut report);
    }
    if matches!(suite, Suite::All | Suite::Invariants) {
        invariant_suite(opts, &mut report);
    }
    report
}

/// Gradient audit tolerance and step.
pub const AUDIT_EPS: f64 = 1e-6;
pub const AUDIT_TOL: f64 = 1e-5;

fn gaussian_points(r: &mut SolverRng, count: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    (0..count)
        .map(|_| (0..d).map(|_| normal.sample(r)).collect())
        .collect()
}

fn audit_entry(
    report: &mut Report,
    name: &str,
    f: &dyn Fn(&[f64]) -> Result<f64>,
    g: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    points: &[Vec<f64>],
    coords: &Coords,
) {
    let full = format!("finite_diff_audit:{name}");
    match finite_diff_audit(f, g, points, AUDIT_EPS, coords) {
        Ok(a) => report.push(
            "gradients",
            full,
            a.max_rel_error,
            AUDIT_TOL,
            format!(
                "points={} worst_point={} worst_coord={}",
                points.len(),
                a.worst_point,
                a.worst_coord
            ),
        ),
        Err(e) => report.push_error("gradients", full, e),
    }
}

/// Problems shared by the gradient and invariant suites.
pub struct AuditFixtures {
    pub variance: VarianceRegProblem,
    pub truncated: VarianceRegProblem,
    pub sparse_data: Dataset,
    pub biconvex: QuadraticInfProj,
    pub dc_quadratic: QuadraticInfProj,
}

impl AuditFixtures {
    pub fn new(seed: u64) -> Result<Self> {
        let data = Arc::new(logistic_dataset(20, 8, 0.7, 0.2, seed)?);
        let variance = VarianceRegProblem::new(data.clone(), 0.8, LossKind::Logistic)?;
        let truncated =
            VarianceRegProblem::new(data, 1.3, LossKind::TruncatedLogistic { alpha: 2.0 })?;
        let spec = QuadraticSpec {
            n: 15,
            d: 6,
            kappa: 0.3,
            beta: 1.5,
            domain: DomainY::NonPosOrthant,
            y_cap: Some(20.0),
            ell: EllKind::Softplus,
            offset: 0.0,
            coupling: 1.0,
        };
        let biconvex = QuadraticInfProj::random(spec, seed ^ 0x51)?;
        let dc_quadratic = QuadraticInfProj::random(
            QuadraticSpec {
                domain: DomainY::NonNegOrthant,
                y_cap: Some(1e6),
                ..spec
            },
            seed ^ 0x52,
        )?;
        Ok(AuditFixtures {
            variance,
            truncated,
            sparse_data: logistic_dataset(10, 60, 0.1, 0.2, seed ^ 0x53)?,
            biconvex,
            dc_quadratic,
        })
    }
}

fn gradient_suite(opts: &CheckOptions, report: &mut Report) {
    let fx = match AuditFixtures::new(opts.seed) {
        Ok(f) => f,
        Err(e) => return report.push_error("gradients", "finite_diff_audit:fixtures", e),
    };
    let mut r = rng::stream(opts.seed, streams::DIAGNOSTIC);
    let m = opts.points;
    let sparse = Coords::SupportPlusRandom {
        extra: 10,
        seed: opts.seed,
    };

    // per-sample losses on sparse rows
    let sd = &fx.sparse_data;
    let pts = gaussian_points(&mut r, m, sd.dim(), 0.7);
    let rows: Vec<usize> = (0..m).map(|i| i % sd.n()).collect();
    for (name, alpha) in [("logistic_loss", None), ("truncated_loss", Some(1.7))] {
        // each point is paired with one row through its index
        let worst = pts
            .iter()
            .zip(&rows)
            .map(|(x, &i)| {
                let (row, label) = (sd.row(i).to_sparse(), sd.label(i));
                let eval = move |z: &[f64]| -> Result<(f64, SparseVec)> {
                    match alpha {
                        None => logistic_loss(z, &row, label),
                        Some(a) => truncated_loss(z, &row, label, a),
                    }
                };
                finite_diff_audit(
                    &|z| Ok(eval(z)?.0),
                    &|z| Ok(eval(z)?.1.to_dense()),
                    std::slice::from_ref(x),
                    AUDIT_EPS,
                    &sparse,
                )
            })
            .try_fold(0.0f64, |w, a| a.map(|a| w.max(a.max_rel_error)));
        let full = format!("finite_diff_audit:{name}");
        match worst {
            Ok(w) => report.push("gradients", full, w, AUDIT_TOL, format!("points={m}")),
            Err(e) => report.push_error("gradients", full, e),
        }
    }

    let sign = if opts.fault == Some(Fault::WrongSignGradient) {
        -1.0
    } else {
        1.0
    };
    for (name, p) in [
        ("grad_F_logistic", &fx.variance),
        ("grad_F_truncated", &fx.truncated),
    ] {
        let pts = gaussian_points(&mut r, m, p.dim_x(), 0.8);
        audit_entry(
            report,
            name,
            &|x| p.eval_f(x),
            &|x| {
                Ok(p.full_gradient_f(x)?
                    .into_iter()
                    .map(|v| sign * v)
                    .collect())
            },
            &pts,
            &Coords::All,
        );
    }

    let p = &fx.variance;
    let d = p.dim_x();
    let pts = gaussian_points(&mut r, m, d, 0.8);
    audit_entry(
        report,
        "oracle_g",
        &|x| p.g_value_grad(x, Batch::Full, &mut vec![0.0; d]),
        &|x| {
            let mut g = vec![0.0; d];
            p.g_value_grad(x, Batch::Full, &mut g)?;
            Ok(g)
        },
        &pts,
        &Coords::All,
    );
    audit_entry(
        report,
        "oracle_ell",
        &|x| p.ell_value(x, Batch::Full),
        &|x| {
            let mut g = vec![0.0; d];
            p.ell_jacobian_vec(x, 1.0, Batch::Full, &mut g)?;
            Ok(g)
        },
        &pts,
        &Coords::All,
    );

    // joint oracle (x, y) -> f(x, y) on the variance problem, y > 0
    let joint_pts: Vec<Vec<f64>> = pts
        .iter()
        .map(|x| {
            let mut w = x.clone();
            w.push(r.random_range(0.1..2.0));
            w
        })
        .collect();
    audit_entry(
        report,
        "oracle_joint",
        &|w| p.joint_value(&w[..d], w[d]),
        &|w| {
            let mut g = vec![0.0; d];
            let gy0 = p.grad_f0(&w[..d], w[d], Batch::Full, &mut g)?;
            g.push(gy0 + p.h_grad(w[d]));
            Ok(g)
        },
        &joint_pts,
        &Coords::All,
    );

    // St-SPG stage oracles
    let centers = gaussian_points(&mut r, m, d, 0.8);
    let worst = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        for (x, c) in pts.iter().zip(&centers) {
            let yk = r.random_range(0.0..2.0);
            let sub = build_subproblem_x(p, c, yk, SubproblemMode::DcLinearized, Sampling::Full)?;
            let sub = std::cell::RefCell::new(sub);
            let a = finite_diff_audit(
                &|z| sub.borrow().value(z),
                &|z| oracle_grad(&mut *sub.borrow_mut(), z),
                std::slice::from_ref(x),
                AUDIT_EPS,
                &Coords::All,
            )?;
            worst = worst.max(a.max_rel_error);
        }
        Ok(worst)
    })();
    push_result(report, "finite_diff_audit:stage_x_dc", worst, m);

    let q = &fx.biconvex;
    let dq = q.dim_x();
    let qpts = gaussian_points(&mut r, m, dq, 0.8);
    let qcent = gaussian_points(&mut r, m, dq, 0.8);
    let worst = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        for (x, c) in qpts.iter().zip(&qcent) {
            let yk = -r.random_range(0.0..2.0);
            let sub = build_subproblem_x(q, c, yk, SubproblemMode::BiConvex, Sampling::Full)?;
            let sub = std::cell::RefCell::new(sub);
            let a = finite_diff_audit(
                &|z| sub.borrow().value(z),
                &|z| oracle_grad(&mut *sub.borrow_mut(), z),
                std::slice::from_ref(x),
                AUDIT_EPS,
                &Coords::All,
            )?;
            worst = worst.max(a.max_rel_error);
        }
        Ok(worst)
    })();
    push_result(report, "finite_diff_audit:stage_x_biconvex", worst, m);

    let worst = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        for x in pts.iter() {
            let l = p.ell_value(x, Batch::Full)?;
            let sub = std::cell::RefCell::new(build_subproblem_y(p, x, Sampling::Full)?);
            let y0 = vec![r.random_range(0.1..2.0)];
            let a = finite_diff_audit(
                &|y| Ok(p.h_value(y[0]) - y[0] * l),
                &|y| oracle_grad(&mut *sub.borrow_mut(), y),
                std::slice::from_ref(&y0),
                AUDIT_EPS,
                &Coords::All,
            )?;
            worst = worst.max(a.max_rel_error);
        }
        Ok(worst)
    })();
    push_result(report, "finite_diff_audit:stage_y", worst, m);

    for (name, prob) in [
        ("grad_F_quadratic_biconvex", &fx.biconvex),
        ("grad_F_quadratic_dc", &fx.dc_quadratic),
    ] {
        let pts = gaussian_points(&mut r, m, dq, 0.8);
        audit_entry(
            report,
            name,
            &|x| prob.objective(x),
            &|x| prob.full_gradient(x),
            &pts,
            &Coords::All,
        );
    }
}

fn oracle_grad(o: &mut dyn StochasticOracle, z: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; z.len()];
    // full-batch oracles ignore the generator
    let mut r = rng::stream(0, 0);
    o.subgradient(z, &mut r, &mut out)?;
    Ok(out)
}

fn push_result(report: &mut Report, name: &str, worst: Result<f64>, points: usize) {
    match worst {
        Ok(w) => report.push("gradients", name, w, AUDIT_TOL, format!("points={points}")),
        Err(e) => report.push_error("gradients", name, e),
    }
}

fn lemma1_suite(opts: &CheckOptions, report: &mut Report) {
    for p in [2.0, 3.0, 4.0] {
        let name = format!("lemma1:p={p}");
        match check_lemma1(p, opts.pairs, opts.seed) {
            Ok(r) => report.push(
                "lemma1",
                name,
                (r.holder_violations + r.convexity_violations) as f64,
                0.0,
                format!(
                    "pairs={} v={:.6} L={:.6} varrho={:.6} worst_holder_ratio={:.6} worst_convexity_ratio={:.6}",
                    r.samples, r.pair.v, r.pair.l, r.pair.varrho, r.worst_holder_ratio, r.worst_convexity_ratio
                ),
            ),
            Err(e) => report.push_error("lemma1", name, e),
        }
    }
}

/// Projection of `q` onto the `n = 3` feasible set by grid search: a `1e-3`
/// grid on the simplex, then local grids of shrinking step (down to `1e-7`)
/// re-centred on the best point until it stops moving.
pub fn grid_projection_3(q: &[f64; 3], rho: f64) -> Option<[f64; 3]> {
    let score = |a: f64, b: f64| -> Option<f64> {
        let c = 1.0 - a - b;
        let feasible =
            a >= 0.0 && b >= 0.0 && c >= -1e-15 && chi2_divergence(&[a, b, c.max(0.0)]) <= rho;
        feasible.then(|| (a - q[0]).powi(2) + (b - q[1]).powi(2) + (c - q[2]).powi(2))
    };
    let mut best: Option<(f64, f64, f64)> = None;
    let consider = |a: f64, b: f64, best: &mut Option<(f64, f64, f64)>| {
        if let Some(v) = score(a, b) {
            if best.is_none_or(|(_, _, bv)| v < bv) {
                *best = Some((a, b, v));
            }
        }
    };
    for i in 0..=1000 {
        for j in 0..=(1000 - i) {
            consider(i as f64 * 1e-3, j as f64 * 1e-3, &mut best);
        }
    }
    best?;
    for step in [1e-4, 1e-5, 1e-6, 1e-7] {
        for _ in 0..5000 {
            let (a0, b0, v0) = best.expect("seeded by the coarse grid");
            for i in -50..=50 {
                for j in -50..=50 {
                    consider(a0 + i as f64 * step, b0 + j as f64 * step, &mut best);
                }
            }
            if best.is_some_and(|(_, _, v)| v >= v0) {
                break;
            }
        }
    }
    best.map(|(a, b, _)| [a, b, (1.0 - a - b).max(0.0)])
}

/// Random projection inputs: perturbed simplex points and raw vectors.
pub fn random_projection_input(r: &mut SolverRng, n: usize) -> Vec<f64> {
    match r.random_range(0..3) {
        0 => (0..n).map(|_| r.random_range(-1.0..2.0)).collect(),
        1 => {
            let raw: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter()
                .map(|v| v / s + r.random_range(-0.05..0.05))
                .collect()
        }
        _ => (0..n)
            .map(|_| r.random_range(-5.0..5.0) / n as f64)
            .collect(),
    }
}

fn projection_suite(opts: &CheckOptions, report: &mut Report) {
    let mut r = rng::stream(opts.seed, streams::DIAGNOSTIC);
    let trials = (opts.pairs / 10).max(10);
    let mut worst_violation = 0.0f64;
    let mut worst_idem = 0.0f64;
    let mut worst_expansion = 0.0f64;
    let mut failure = None;
    for _ in 0..trials {
        let n = r.random_range(1..40);
        let rho = 10f64.powf(r.random_range(-4.0..1.0));
        let a = random_projection_input(&mut r, n);
        let b = random_projection_input(&mut r, n);
        let (pa, pb) = match (project_chi2_simplex(&a, rho), project_chi2_simplex(&b, rho)) {
            (Ok(pa), Ok(pb)) => (pa, pb),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e);
                break;
            }
        };
        worst_violation = worst_violation.max(pa.violation());
        match project_chi2_simplex(&pa.p, rho) {
            Ok(again) => worst_idem = worst_idem.max(dist(&again.p, &pa.p)),
            Err(e) => failure = Some(e),
        }
        worst_expansion = worst_expansion.max(dist(&pa.p, &pb.p) - dist(&a, &b));
    }
    if let Some(e) = failure {
        report.push_error("projection", "projection:errors", e);
    }
    report.push(
        "projection",
        "projection:feasibility",
        worst_violation,
        1e-8,
        format!("trials={trials}"),
    );
    report.push(
        "projection",
        "projection:idempotence",
        worst_idem,
        1e-12,
        format!("trials={trials}"),
    );
    report.push(
        "projection",
        "projection:nonexpansive",
        worst_expansion,
        1e-12,
        format!("trials={trials}"),
    );

    let mut cases: Vec<([f64; 3], f64)> = vec![([0.9, 0.05, 0.05], 0.05)];
    for _ in 0..4 {
        let q = random_projection_input(&mut r, 3);
        cases.push(([q[0], q[1], q[2]], 10f64.powf(r.random_range(-2.0..-0.5))));
    }
    let mut worst_grid = 0.0f64;
    for (q, rho) in &cases {
        match (project_chi2_simplex(q, *rho), grid_projection_3(q, *rho)) {
            (Ok(p), Some(g)) => worst_grid = worst_grid.max(dist(&p.p, &g)),
            (Err(e), _) => return report.push_error("projection", "projection:grid_oracle", e),
            (_, None) => worst_grid = f64::NAN,
        }
    }
    report.push(
        "projection",
        "projection:grid_oracle",
        worst_grid,
        2e-3,
        format!("cases={}", cases.len()),
    );
}

fn invariant_suite(opts: &CheckOptions, report: &mut Report) {
    let mut r = rng::stream(opts.seed, streams::DIAGNOSTIC);
    let suite = "invariants";
    let run = |report: &mut Report,
               name: &str,
               threshold: f64,
               f: &mut dyn FnMut() -> Result<(f64, String)>| {
        match f() {
            Ok((v, detail)) => report.push(suite, name, v, threshold, detail),
            Err(e) => report.push_error(suite, name, e),
        }
    };

    run(report, "invariant:f_equality", 1e-10, &mut || {
        let mut worst = 0.0f64;
        for i in 0..1000u64 {
            let n = r.random_range(1..30);
            let d = r.random_range(1..7);
            let data = logistic_dataset(n, d, 0.8, 0.3, opts.seed.wrapping_add(i))?;
            let kind = if i % 2 == 0 {
                LossKind::Logistic
            } else {
                LossKind::TruncatedLogistic {
                    alpha: r.random_range(0.5..5.0),
                }
            };
            let p = VarianceRegProblem::new(Arc::new(data), r.random_range(0.0..5.0), kind)?;
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
            let a = p.eval_f(&x)?;
            let b = p.eval_f_expanded(&x)?;
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
        Ok((worst, "instances=1000".into()))
    });

    let fx = match AuditFixtures::new(opts.seed) {
        Ok(f) => f,
        Err(e) => return report.push_error(suite, "invariant:fixtures", e),
    };
    let p = &fx.variance;
    let n = p.n();
    let d = p.dim_x();

    run(report, "invariant:unbiasedness", 1e-12, &mut || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let y = r.random_range(0.0..2.0);
            let (full_x, full_y) = p.stochastic_grads(&x, y, Batch::Full)?;
            let mut mean_x = vec![0.0; d];
            let mut mean_y = 0.0;
            for i in 0..n {
                let (gx, gy) = p.stochastic_grads(&x, y, Batch::Indices(&[i]))?;
                gx.axpy_into(1.0 / n as f64, &mut mean_x);
                mean_y += gy / n as f64;
            }
            let full_x = full_x.to_dense();
            for (a, b) in mean_x.iter().zip(&full_x) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((mean_y - full_y).abs());
        }
        Ok((worst, "instances=20".into()))
    });

    run(report, "invariant:prox", 0.0, &mut || {
        let mut bad = 0usize;
        for _ in 0..opts.pairs {
            let eta = r.random_range(1e-3..10.0);
            let (a, b) = (r.random_range(-10.0..10.0), r.random_range(-10.0..10.0));
            let (pa, pb) = (p.prox(a, eta), p.prox(b, eta));
            if pa < 0.0 || (pa - pb).abs() > (a - b).abs() * (1.0 + 1e-15) {
                bad += 1;
            }
        }
        Ok((bad as f64, format!("pairs={}", opts.pairs)))
    });

    run(report, "invariant:ystar_grid", 1e-4, &mut || {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let losses = p.losses(&x)?;
            let mean = losses.iter().sum::<f64>() / n as f64;
            let top = 2.0 * losses.iter().cloned().fold(0.0, f64::max);
            let steps = (top / 1e-5).ceil() as usize;
            let best = (0..=steps)
                .map(|k| k as f64 * 1e-5)
                .min_by(|a, b| (0.5 * a * a - a * mean).total_cmp(&(0.5 * b * b - b * mean)))
                .unwrap_or(0.0);
            worst = worst.max((best - p.inner_minimizer_ystar(&x)?).abs());
        }
        Ok((worst, "models=100".into()))
    });

    run(report, "invariant:split_partition", 0.0, &mut || {
        let mut bad = 0usize;
        for _ in 0..100 {
            let n = r.random_range(2..500);
            let frac = r.random_range(0.01..0.99);
            let seed = r.random::<u64>();
            let (a, b) = split_indices(n, frac, seed)?;
            let (a2, _) = split_indices(n, frac, seed)?;
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            let expect = ((frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
            if all != (0..n).collect::<Vec<_>>() || a != a2 || a.len() != expect {
                bad += 1;
            }
        }
        Ok((bad as f64, "cases=100".into()))
    });

    run(report, "invariant:dc_majorization", 0.0, &mut || {
        let mut bad = 0usize;
        for _ in 0..200 {
            let xk: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let yk = r.random_range(0.0..3.0);
            let sub = build_subproblem_x(p, &xk, yk, SubproblemMode::DcLinearized, Sampling::Full)?;
            let exact = p.g_value_grad(&x, Batch::Full, &mut vec![0.0; d])?
                - yk * p.ell_value(&x, Batch::Full)?;
            if sub.value(&x)? < exact - 1e-12 * (1.0 + exact.abs()) {
                bad += 1;
            }
        }
        Ok((bad as f64, "points=200".into()))
    });

    run(report, "invariant:joint_smoothness", 1.0, &mut || {
        let q = &fx.biconvex;
        let k = SmoothConstants::quadratic(q, None)?;
        let l = k.joint_l();
        let dq = q.dim_x();
        let cap = q.y_cap.unwrap_or(1.0);
        let grad = |w: &[f64]| -> Result<Vec<f64>> {
            let mut g = vec![0.0; dq];
            let gy = q.grad_f0(&w[..dq], w[dq], Batch::Full, &mut g)?;
            g.push(gy);
            Ok(g)
        };
        let mut worst = 0.0f64;
        for _ in 0..opts.pairs {
            let mut w1: Vec<f64> = (0..dq).map(|_| r.random_range(-3.0..3.0)).collect();
            w1.push(-r.random_range(0.0..cap));
            let w2: Vec<f64> = if r.random::<bool>() {
                w1.iter().map(|v| v + r.random_range(-1e-2..1e-2)).collect()
            } else {
                let mut w: Vec<f64> = (0..dq).map(|_| r.random_range(-3.0..3.0)).collect();
                w.push(-r.random_range(0.0..cap));
                w
            };
            let dw = dist(&w1, &w2);
            if dw > 0.0 {
                worst = worst.max(dist(&grad(&w1)?, &grad(&w2)?) / (l * dw));
            }
        }
        Ok((worst, format!("pairs={} L={l:.6}", opts.pairs)))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_pair_round_trip() {
        let a = ConjugatePair::from_modulus(0.5, 4.0);
        let b = ConjugatePair::from_holder(a.l, a.v);
        assert!((a.p - b.p).abs() < 1e-12);
        // the two derivations use different modulus conventions
        assert!(b.varrho > 0.0);
        let q = ConjugatePair::power_family(2.0);
        assert_eq!((q.v, q.l, q.varrho), (1.0, 1.0, 1.0));
    }

    #[test]
    fn slope_of_power_laws() {
        let xs: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let inv: Vec<f64> = xs.iter().map(|v| 1.0 / v).collect();
        assert!((rate_slope(&xs, &inv).unwrap() + 1.0).abs() < 1e-9);
        let flat = vec![3.0; 20];
        assert!(rate_slope(&xs, &flat).unwrap().abs() < 1e-12);
        assert!(rate_slope(&xs[..5], &inv[..5]).is_err());
        let mut bad = inv.clone();
        bad[3] = 0.0;
        assert!(matches!(
            rate_slope(&xs, &bad),
            Err(Error::NonPositive { row: 3, .. })
        ));
    }

    #[test]
    fn audit_linear_and_constant() {
        let c = [0.5, -2.0, 0.25];
        let pts = vec![vec![0.5, 1.0, -0.75], vec![2.0, 0.0, 1.0]];
        let lin = finite_diff_audit(
            &|x| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum()),
            &|_| Ok(c.to_vec()),
            &pts,
            2f64.powi(-20),
            &Coords::All,
        )
        .unwrap();
        assert!(lin.max_rel_error <= 1e-10);
        let cst = finite_diff_audit(
            &|_| Ok(4.0),
            &|_| Ok(vec![0.0; 3]),
            &pts,
            1e-6,
            &Coords::All,
        )
        .unwrap();
        assert!(cst.max_rel_error <= 1e-10);
    }

    #[test]
    fn stationarity_threshold() {
        let p = AuditFixtures::new(1).unwrap().variance;
        let x = vec![0.3; p.dim_x()];
        let g = norm(&p.full_gradient_f(&x).unwrap());
        assert!(stationarity_report(&p, &x, 2.0 * g).unwrap().stationary);
        assert!(!stationarity_report(&p, &x, 0.0).unwrap().stationary);
    }
}
