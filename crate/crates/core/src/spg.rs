//! Stochastic proximal gradient for `H(z) = f(z) + (γ/2)|z - z₁|²` over a
//! simple convex set, returning the `t`-weighted average of `z₁..z_T`.

use crate::error::{Error, Result};
use crate::rng::{self, SolverRng};

/// Step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `η_t = 3 / (γ (t + 1))`, for L-smooth `f` with `γ ≥ 3L`.
    Smooth,
    /// `η_t = 4 / (γ t)`, for non-smooth `f`.
    Nonsmooth,
}

impl StepRule {
    pub fn eta(self, gamma: f64, t: usize) -> f64 {
        match self {
            StepRule::Smooth => 3.0 / (gamma * (t as f64 + 1.0)),
            StepRule::Nonsmooth => 4.0 / (gamma * t as f64),
        }
    }
}

/// Feasible sets with a closed-form Euclidean projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexSet {
    Whole,
    NonNegative,
    NonPositive,
    Box { lo: f64, hi: f64 },
}

impl ConvexSet {
    pub fn project_scalar(&self, v: f64) -> f64 {
        match *self {
            ConvexSet::Whole => v,
            ConvexSet::NonNegative => v.max(0.0),
            ConvexSet::NonPositive => v.min(0.0),
            ConvexSet::Box { lo, hi } => v.clamp(lo, hi),
        }
    }

    pub fn project(&self, z: &mut [f64]) {
        if *self != ConvexSet::Whole {
            z.iter_mut().for_each(|v| *v = self.project_scalar(*v));
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .all(|&v| v.is_finite() && self.project_scalar(v) == v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpgConfig {
    /// Iteration budget `T ≥ 1`.
    pub iterations: usize,
    /// Weight `γ > 0` of the proximal term.
    pub gamma: f64,
    pub rule: StepRule,
    pub seed: u64,
    /// Smoothness estimate of `f`; when given, `γ < 3L` triggers a warning.
    pub lipschitz_hint: Option<f64>,
}

impl SpgConfig {
    pub fn new(iterations: usize, gamma: f64, rule: StepRule) -> Self {
        SpgConfig {
            iterations,
            gamma,
            rule,
            seed: 0,
            lipschitz_hint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "SPG needs at least one iteration".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} must be positive",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Source of stochastic subgradients of `f`.
pub trait StochasticOracle {
    fn dim(&self) -> usize;
    /// Writes a stochastic subgradient at `z` into `out`.
    fn subgradient(&mut self, z: &[f64], rng: &mut SolverRng, out: &mut [f64]) -> Result<()>;
}

/// Adapts a closure into a [`StochasticOracle`].
pub struct FnOracle<F> {
    dim: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: FnMut(&[f64], &mut SolverRng, &mut [f64]) -> Result<()>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnOracle { dim, f }
    }
}

impl<F> StochasticOracle for FnOracle<F>
where
    F: FnMut(&[f64], &mut SolverRng, &mut [f64]) -> Result<()>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn subgradient(&mut self, z: &[f64], rng: &mut SolverRng, out: &mut [f64]) -> Result<()> {
        (self.f)(z, rng, out)
    }
}

#[derive(Debug, Clone)]
pub struct SpgOutput {
    /// `Σ t z_t / Σ t` over `t = 1..T`.
    pub z_hat: Vec<f64>,
    /// `z₁..z_T`, only when recording was requested.
    pub iterates: Option<Vec<Vec<f64>>>,
}

/// Runs SPG with an RNG seeded from `config.seed`.
pub fn spg<O: StochasticOracle + ?Sized>(
    oracle: &mut O,
    z1: &[f64],
    domain: ConvexSet,
    config: &SpgConfig,
) -> Result<Vec<f64>> {
    let mut rng = rng::stream(config.seed, rng::streams::SPG);
    Ok(spg_with_rng(oracle, z1, domain, config, &mut rng, false)?.z_hat)
}

/// SPG driven by a caller-owned RNG, optionally recording every iterate.
///
/// Each step solves `argmin_{z ∈ Ω} <s_t, z> + (γ/2)|z - z₁|² + |z - z_t|²/(2η_t)`
/// in closed form: the unconstrained minimizer
/// `(γη z₁ + z_t - η s_t) / (γη + 1)` is separable, so projecting it onto the
/// set solves the constrained step. `z_{T+1}` is never formed because the
/// output average stops at `z_T`.
pub fn spg_with_rng<O: StochasticOracle + ?Sized>(
    oracle: &mut O,
    z1: &[f64],
    domain: ConvexSet,
    config: &SpgConfig,
    rng: &mut SolverRng,
    record: bool,
) -> Result<SpgOutput> {
    config.validate()?;
    if z1.len() != oracle.dim() {
        return Err(Error::LengthMismatch {
            expected: oracle.dim(),
            got: z1.len(),
        });
    }
    if !domain.contains(z1) {
        return Err(Error::Infeasible);
    }
    if let Some(l) = config.lipschitz_hint {
        if config.gamma < 3.0 * l {
            log::warn!("SPG gamma {} is below 3L = {}", config.gamma, 3.0 * l);
        }
    }
    let gamma = config.gamma;
    let t_max = config.iterations;
    let mut z = z1.to_vec();
    let mut sub = vec![0.0; z.len()];
    let mut acc = vec![0.0; z.len()];
    let mut iterates = record.then(Vec::new);
    for t in 1..=t_max {
        let w = t as f64;
        acc.iter_mut().zip(&z).for_each(|(a, v)| *a += w * v);
        if let Some(it) = iterates.as_mut() {
            it.push(z.clone());
        }
        if t == t_max {
            break;
        }
        oracle.subgradient(&z, rng, &mut sub)?;
        if sub.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "subgradient",
                iteration: t,
            });
        }
        let eta = config.rule.eta(gamma, t);
        let denom = gamma * eta + 1.0;
        for ((zi, &ci), &si) in z.iter_mut().zip(z1).zip(&sub) {
            *zi = domain.project_scalar((gamma * eta * ci + *zi - eta * si) / denom);
        }
    }
    let norm = (t_max * (t_max + 1) / 2) as f64;
    acc.iter_mut().for_each(|a| *a /= norm);
    // the average of feasible points is feasible; clamp away rounding drift
    domain.project(&mut acc);
    Ok(SpgOutput {
        z_hat: acc,
        iterates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(a: Vec<f64>) -> impl StochasticOracle {
        let dim = a.len();
        FnOracle::new(dim, move |z: &[f64], _: &mut SolverRng, out: &mut [f64]| {
            for ((o, zi), ai) in out.iter_mut().zip(z).zip(&a) {
                *o = zi - ai;
            }
            Ok(())
        })
    }

    #[test]
    fn zero_function_is_fixed_point() {
        let mut o = FnOracle::new(3, |_: &[f64], _: &mut SolverRng, out: &mut [f64]| {
            out.fill(0.0);
            Ok(())
        });
        let z1 = [1.0, -2.0, 0.5];
        for rule in [StepRule::Smooth, StepRule::Nonsmooth] {
            let z = spg(
                &mut o,
                &z1,
                ConvexSet::Whole,
                &SpgConfig::new(17, 0.7, rule),
            )
            .unwrap();
            for (a, b) in z.iter().zip(&z1) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_step_weighted_average() {
        // γ = 1, η₁ = 3/2: z₂ = -η s/(γη + 1) = 3 for s = -5
        let mut o = FnOracle::new(1, |_: &[f64], _: &mut SolverRng, out: &mut [f64]| {
            out[0] = -5.0;
            Ok(())
        });
        let mut rng = rng::stream(0, 0);
        let out = spg_with_rng(
            &mut o,
            &[0.0],
            ConvexSet::Whole,
            &SpgConfig::new(2, 1.0, StepRule::Smooth),
            &mut rng,
            true,
        )
        .unwrap();
        let it = out.iterates.unwrap();
        assert!((it[1][0] - 3.0).abs() < 1e-15);
        assert!((out.z_hat[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_reaches_closed_form_minimizer() {
        let a = vec![1.0, -2.0, 3.0];
        let z1 = vec![0.5, 0.5, -1.0];
        let gamma = 3.0;
        let z = spg(
            &mut quadratic(a.clone()),
            &z1,
            ConvexSet::Whole,
            &SpgConfig::new(500, gamma, StepRule::Smooth),
        )
        .unwrap();
        let h = |z: &[f64]| -> f64 {
            z.iter()
                .zip(&a)
                .zip(&z1)
                .map(|((zi, ai), ci)| 0.5 * (zi - ai).powi(2) + 0.5 * gamma * (zi - ci).powi(2))
                .sum()
        };
        let zstar: Vec<f64> = a
            .iter()
            .zip(&z1)
            .map(|(ai, ci)| (gamma * ci + ai) / (gamma + 1.0))
            .collect();
        let scale = h(&z1).max(1.0);
        assert!(h(&z) - h(&zstar) <= 1e-3 * scale);
        assert!(h(&z) >= h(&zstar));
    }

    #[test]
    fn orthant_and_box_feasibility() {
        let mut o = quadratic(vec![-3.0, 4.0]);
        let mut rng = rng::stream(1, 0);
        for set in [ConvexSet::NonNegative, ConvexSet::Box { lo: -1.0, hi: 1.0 }] {
            let out = spg_with_rng(
                &mut o,
                &[0.0, 0.0],
                set,
                &SpgConfig::new(30, 1.0, StepRule::Nonsmooth),
                &mut rng,
                true,
            )
            .unwrap();
            assert!(set.contains(&out.z_hat));
            assert!(out.iterates.unwrap().iter().all(|z| set.contains(z)));
        }
    }

    #[test]
    fn errors() {
        let mut o = quadratic(vec![0.0]);
        assert!(matches!(
            spg(
                &mut o,
                &[-1.0],
                ConvexSet::NonNegative,
                &SpgConfig::new(3, 1.0, StepRule::Smooth)
            ),
            Err(Error::Infeasible)
        ));
        assert!(spg(
            &mut o,
            &[0.0],
            ConvexSet::Whole,
            &SpgConfig::new(0, 1.0, StepRule::Smooth)
        )
        .is_err());
        let mut bad = FnOracle::new(1, |_: &[f64], _: &mut SolverRng, out: &mut [f64]| {
            out[0] = f64::NAN;
            Ok(())
        });
        assert!(matches!(
            spg(
                &mut bad,
                &[0.0],
                ConvexSet::Whole,
                &SpgConfig::new(3, 1.0, StepRule::Smooth)
            ),
            Err(Error::NonFinite { iteration: 1, .. })
        ));
    }

    #[test]
    fn step_rules_at_first_iteration() {
        assert_eq!(StepRule::Smooth.eta(2.0, 1), 0.75);
        assert_eq!(StepRule::Nonsmooth.eta(2.0, 1), 2.0);
    }
}
