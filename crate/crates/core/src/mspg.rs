//! Mini-batch stochastic proximal gradient on the joint variable `w = (x, y)`
//! for smooth `g` and `l`, with growing batches `m_t = b (t + 1)`.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::problem::{Batch, InfProjection, VarianceRegProblem};
use crate::rng::{self, streams};
use crate::sparse::norm;
use crate::synthetic::{EllKind, QuadraticInfProj};
use crate::trace::{Evaluator, Recorder};

/// `L = sqrt(max(2 L_g² + 4 L_l² D_y² + G_l², 4 G_l²))`, the smoothness
/// constant of `f0(x, y) = g(x) - y l(x)` over `X × [-D_y, D_y]`.
pub fn joint_smoothness_l(l_g: f64, g_ell: f64, l_ell: f64, d_y: f64) -> f64 {
    let a = 2.0 * l_g * l_g + 4.0 * l_ell * l_ell * d_y * d_y + g_ell * g_ell;
    let b = 4.0 * g_ell * g_ell;
    a.max(b).sqrt()
}

/// Constants describing a smooth inf-projection problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothConstants {
    /// Smoothness of `g`.
    pub l_g: f64,
    /// Bound on `|∇l|`.
    pub g_ell: f64,
    /// Smoothness of `l`.
    pub l_ell: f64,
    /// Radius of the y-domain.
    pub d_y: f64,
    /// Smoothness of `h*`.
    pub l_hstar: f64,
}

impl SmoothConstants {
    pub fn joint_l(&self) -> f64 {
        joint_smoothness_l(self.l_g, self.g_ell, self.l_ell, self.d_y)
    }

    /// Constants for the variance-regularized logistic problem with y capped
    /// at `d_y`. With `R` the largest row norm, `|∇l_i| ≤ R` and
    /// `∇²l_i ⪯ R²/4`; the loss bound in `∇²(l + λl²/2)` is taken as `d_y`.
    pub fn variance(problem: &VarianceRegProblem, d_y: f64) -> Self {
        let r = problem.data().max_row_norm();
        let lambda = problem.lambda();
        let curv = problem.loss().curvature_bound();
        SmoothConstants {
            l_g: r * r * (curv * (1.0 + lambda * d_y) + lambda),
            g_ell: lambda * r,
            l_ell: lambda * r * r * curv,
            d_y,
            l_hstar: if lambda > 0.0 {
                1.0 / lambda
            } else {
                f64::INFINITY
            },
        }
    }

    /// Constants for a synthetic quadratic problem; `d_y` falls back to the
    /// problem's y cap.
    pub fn quadratic(problem: &QuadraticInfProj, d_y: Option<f64>) -> Result<Self> {
        let (a2, e2) = problem.row_bounds();
        let d_y = d_y.or(problem.y_cap).ok_or_else(|| {
            Error::InvalidConfig("y-domain radius is needed for the quadratic problem".into())
        })?;
        let l_ell = match problem.ell {
            EllKind::Linear => 0.0,
            EllKind::Softplus => 0.25 * e2,
        };
        Ok(SmoothConstants {
            l_g: a2 + problem.kappa,
            g_ell: e2.sqrt(),
            l_ell,
            d_y,
            l_hstar: 1.0 / problem.beta,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MspgConfig {
    /// Iteration budget `T`.
    pub iterations: usize,
    /// Step fraction `c ∈ (0, 1/2)`; `η = c / L`.
    pub c: f64,
    /// Batch growth base `b`.
    pub b: usize,
    pub l_override: Option<f64>,
    /// Largest batch; reaching `n` switches to exact full-batch gradients.
    pub batch_cap: usize,
    pub seed: u64,
}

impl MspgConfig {
    pub fn new(iterations: usize, c: f64, b: usize, batch_cap: usize) -> Self {
        MspgConfig {
            iterations,
            c,
            b,
            l_override: None,
            batch_cap,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "MSPG needs at least one iteration".into(),
            ));
        }
        if !(self.c > 0.0 && self.c < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "step fraction c = {} must lie in (0, 0.5)",
                self.c
            )));
        }
        if self.b == 0 || self.batch_cap == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if let Some(l) = self.l_override {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "L override {l} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// `m_t = min(b (t + 1), cap)`.
    pub fn batch_size(&self, t: usize) -> usize {
        self.b.saturating_mul(t + 1).min(self.batch_cap)
    }
}

/// Metrics at one logged iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MspgLogPoint {
    pub t: usize,
    pub grad_norm: f64,
    /// `|∇_x f(x_t, y_t)|`.
    pub grad_x_norm: f64,
    /// `dist(0, ∂_y f(x_t, y_t))`.
    pub dist_y: f64,
    /// `|w_t - w⁺| / η` for a full-batch lookahead step.
    pub grad_mapping: f64,
    /// `|∇_x f| + G_l L_{h*} dist_y`, which must bound `|∇F(x_t)|`.
    pub bridge_bound: f64,
}

#[derive(Debug, Clone)]
pub struct MspgOutput {
    pub tau: usize,
    pub x_tau: Vec<f64>,
    pub y_tau: f64,
    pub x_last: Vec<f64>,
    pub y_last: f64,
    pub l: f64,
    pub eta: f64,
    /// First iteration that used the exact full batch.
    pub full_batch_from: Option<usize>,
    pub log: Vec<MspgLogPoint>,
    /// Logged iterates where the bridge bound failed.
    pub bridge_violations: usize,
}

impl MspgOutput {
    /// Smallest squared gradient mapping over the logged iterates.
    pub fn min_grad_mapping_sq(&self) -> f64 {
        self.log
            .iter()
            .map(|p| p.grad_mapping * p.grad_mapping)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `dist(0, h'(y) - l + N_Y(y))` for the interval `Y = [lo, hi]`.
pub fn dist_y_subdiff(problem: &dyn InfProjection, x: &[f64], y: f64) -> Result<f64> {
    let v = problem.h_grad(y) - problem.ell_value(x, Batch::Full)?;
    let (lo, hi) = problem.y_interval();
    Ok(if y <= lo {
        (-v).max(0.0)
    } else if y >= hi {
        v.max(0.0)
    } else {
        v.abs()
    })
}

fn clamp_y(problem: &dyn InfProjection, y: f64, d_y: f64) -> f64 {
    let (lo, hi) = problem.y_interval();
    y.clamp(lo.max(-d_y), hi.min(d_y))
}

/// One proximal gradient step from `(x, y)` with the given partial gradients.
fn prox_step(
    problem: &dyn InfProjection,
    x: &mut [f64],
    y: f64,
    gx: &[f64],
    gy: f64,
    eta: f64,
    d_y: f64,
) -> f64 {
    x.iter_mut().zip(gx).for_each(|(v, g)| *v -= eta * g);
    problem.project_x(x);
    clamp_y(problem, problem.prox_h(y - eta * gy, eta), d_y)
}

/// Full-batch diagnostics at `(x, y)`.
pub fn log_point(
    problem: &dyn InfProjection,
    x: &[f64],
    y: f64,
    eta: f64,
    constants: &SmoothConstants,
    t: usize,
) -> Result<MspgLogPoint> {
    let mut gx = vec![0.0; x.len()];
    let gy = problem.grad_f0(x, y, Batch::Full, &mut gx)?;
    let grad_x_norm = norm(&gx);
    let mut xp = x.to_vec();
    let yp = prox_step(problem, &mut xp, y, &gx, gy, eta, constants.d_y);
    let step_sq: f64 = xp
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        + (yp - y) * (yp - y);
    let dist_y = dist_y_subdiff(problem, x, y)?;
    let grad_norm = norm(&problem.full_gradient(x)?);
    Ok(MspgLogPoint {
        t,
        grad_norm,
        grad_x_norm,
        dist_y,
        grad_mapping: step_sq.sqrt() / eta,
        bridge_bound: grad_x_norm + constants.g_ell * constants.l_hstar * dist_y,
    })
}

pub fn mspg(
    problem: &dyn InfProjection,
    x1: &[f64],
    y1: f64,
    constants: &SmoothConstants,
    config: &MspgConfig,
) -> Result<MspgOutput> {
    let mut rec = Recorder::quiet(Evaluator::new(problem));
    mspg_recorded(problem, x1, y1, constants, config, &mut rec, false)
}

/// MSPG with a trace. Diagnostics are computed on the recorder's grid, at
/// `t = 1` and at `t = T`; with `every_iteration` they are computed at every
/// iterate but only logged on the grid.
pub fn mspg_recorded(
    problem: &dyn InfProjection,
    x1: &[f64],
    y1: f64,
    constants: &SmoothConstants,
    config: &MspgConfig,
    rec: &mut Recorder,
    every_iteration: bool,
) -> Result<MspgOutput> {
    config.validate()?;
    let d = problem.dim_x();
    if x1.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: x1.len(),
        });
    }
    let l = config.l_override.unwrap_or_else(|| constants.joint_l());
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "smoothness constant {l} must be positive"
        )));
    }
    let eta = config.c / l;
    let n = problem.num_samples();
    let t_max = config.iterations;
    let tau = rng::stream(config.seed, streams::MSPG_OUTPUT).random_range(1..=t_max);
    let mut batch_rng = rng::stream(config.seed, streams::MSPG_BATCH);

    let mut x = x1.to_vec();
    let mut y = clamp_y(problem, y1, constants.d_y);
    if y != y1 {
        return Err(Error::Infeasible);
    }
    let mut gx = vec![0.0; d];
    let mut idx = Vec::new();
    let mut full_batch_from = None;
    let mut log = Vec::new();
    let mut violations = 0;
    let mut out_tau = None;

    rec.start();
    for t in 1..=t_max {
        if t == tau {
            out_tau = Some((x.clone(), y));
        }
        let logged = rec.due(t) || t == 1 || t == t_max;
        if logged || every_iteration {
            rec.pause();
            let p = log_point(problem, &x, y, eta, constants, t)?;
            if p.grad_norm > p.bridge_bound * (1.0 + 1e-9) + 1e-12 {
                violations += 1;
            }
            log.push(p);
            rec.resume();
            if rec.due(t) {
                let mut extras = BTreeMap::new();
                extras.insert("y".to_string(), y);
                extras.insert("grad_mapping".to_string(), p.grad_mapping);
                extras.insert("grad_x_norm".to_string(), p.grad_x_norm);
                extras.insert("dist_y".to_string(), p.dist_y);
                extras.insert("bridge_bound".to_string(), p.bridge_bound);
                extras.insert("batch_size".to_string(), config.batch_size(t).min(n) as f64);
                rec.log_known(
                    t,
                    &x,
                    problem.objective(&x)?,
                    p.grad_norm,
                    extras,
                    BTreeMap::new(),
                )?;
            }
        }

        let m = config.batch_size(t);
        let gy = if m >= n {
            full_batch_from.get_or_insert(t);
            problem.grad_f0(&x, y, Batch::Full, &mut gx)?
        } else {
            rng::sample_batch(&mut batch_rng, n, m, &mut idx);
            problem.grad_f0(&x, y, Batch::Indices(&idx), &mut gx)?
        };
        y = prox_step(problem, &mut x, y, &gx, gy, eta, constants.d_y);
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "iterate",
                iteration: t,
            });
        }
    }
    rec.pause();
    let (x_tau, y_tau) = out_tau.expect("tau lies in 1..=T");
    Ok(MspgOutput {
        tau,
        x_tau,
        y_tau,
        x_last: x,
        y_last: y,
        l,
        eta,
        full_batch_from,
        log,
        bridge_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothness_reductions() {
        assert_eq!(joint_smoothness_l(1.0, 0.0, 0.0, 123.0), 2f64.sqrt());
        assert_eq!(joint_smoothness_l(0.0, 1.0, 0.0, 5.0), 2.0);
    }

    #[test]
    fn batch_schedule() {
        let c = MspgConfig::new(10, 0.25, 2, 100);
        assert_eq!(c.batch_size(3), 8);
        assert_eq!(c.batch_size(1000), 100);
    }

    #[test]
    fn config_checks() {
        assert!(MspgConfig::new(10, 0.5, 1, 10).validate().is_err());
        assert!(MspgConfig::new(10, 0.0, 1, 10).validate().is_err());
        assert!(MspgConfig::new(0, 0.2, 1, 10).validate().is_err());
        assert!(MspgConfig::new(10, 0.2, 0, 10).validate().is_err());
    }
}
