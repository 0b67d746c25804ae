//! Inf-projection problems `min_x F(x) = g(x) + min_{y in dom h} h(y) - y * l(x)`
//! and the variance-regularized ERM instance.
//!
//! The solvers work with a scalar `y` and access the problem only through
//! [`InfProjection`], whose oracles return batch means over sample indices.

use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::par;
use crate::sparse::SparseVec;

/// Which side of the origin `dom(h)` lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainY {
    /// `dom(h) ⊆ R_+`; the problem is a DC function when `g`, `l` are convex.
    NonNegOrthant,
    /// `dom(h) ⊆ R_-`; the joint function is bi-convex.
    NonPosOrthant,
    Free,
}

impl DomainY {
    pub fn name(self) -> &'static str {
        match self {
            DomainY::NonNegOrthant => "nonneg-orthant",
            DomainY::NonPosOrthant => "nonpos-orthant",
            DomainY::Free => "free",
        }
    }

    pub fn project(self, y: f64) -> f64 {
        match self {
            DomainY::NonNegOrthant => y.max(0.0),
            DomainY::NonPosOrthant => y.min(0.0),
            DomainY::Free => y,
        }
    }

    pub fn contains(self, y: f64) -> bool {
        self.project(y) == y
    }
}

/// Samples over which an oracle averages.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Full,
    Indices(&'a [usize]),
}

impl Batch<'_> {
    pub fn len(&self, n: usize) -> usize {
        match self {
            Batch::Full => n,
            Batch::Indices(idx) => idx.len(),
        }
    }

    pub fn is_empty(&self, n: usize) -> bool {
        self.len(n) == 0
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Batch::Indices(idx) = self {
            if idx.is_empty() {
                return Err(Error::EmptyBatch);
            }
            if let Some(&index) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::BatchIndex { index, n });
            }
        }
        Ok(())
    }
}

/// Oracle access to an inf-projection problem with scalar `y`.
///
/// Every batch oracle returns the mean over the batch, so a `Full` call equals
/// the average of the `n` singleton calls.
pub trait InfProjection: Sync {
    fn dim_x(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn domain_y(&self) -> DomainY;

    /// Value of `g` at `x`; its gradient is written into `grad`.
    fn g_value_grad(&self, x: &[f64], batch: Batch, grad: &mut [f64]) -> Result<f64>;

    fn ell_value(&self, x: &[f64], batch: Batch) -> Result<f64>;

    /// Writes `∇l(x)ᵀ y` into `out`.
    fn ell_jacobian_vec(&self, x: &[f64], y: f64, batch: Batch, out: &mut [f64]) -> Result<()>;

    /// `h(y)`, `+inf` outside the domain.
    fn h_value(&self, y: f64) -> f64;
    fn h_grad(&self, y: f64) -> f64;
    /// `argmin_y h(y) + (y - y_hat)² / (2 eta)`; always inside `dom(h)`.
    fn prox_h(&self, y_hat: f64, eta: f64) -> f64;

    /// Interval containing `dom(h)`.
    fn y_interval(&self) -> (f64, f64) {
        match self.domain_y() {
            DomainY::NonNegOrthant => (0.0, f64::INFINITY),
            DomainY::NonPosOrthant => (f64::NEG_INFINITY, 0.0),
            DomainY::Free => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Projection onto `X`. Identity unless a problem restricts `x`.
    fn project_x(&self, _x: &mut [f64]) {}

    /// `y*(x) = argmin_y h(y) - y l(x)` over the full sample set.
    fn y_star(&self, x: &[f64]) -> Result<f64>;

    /// Partial gradients of `f0(x, y) = g(x) - y l(x)`: writes `∇_x f0` into
    /// `gx` and returns `∂_y f0 = -l(x)`.
    fn grad_f0(&self, x: &[f64], y: f64, batch: Batch, gx: &mut [f64]) -> Result<f64> {
        self.g_value_grad(x, batch, gx)?;
        let mut jy = vec![0.0; gx.len()];
        self.ell_jacobian_vec(x, y, batch, &mut jy)?;
        gx.iter_mut().zip(&jy).for_each(|(g, j)| *g -= j);
        Ok(-self.ell_value(x, batch)?)
    }

    /// `f(x, y) = g(x) + h(y) - y l(x)` over all samples.
    fn joint_value(&self, x: &[f64], y: f64) -> Result<f64> {
        let mut scratch = vec![0.0; self.dim_x()];
        let g = self.g_value_grad(x, Batch::Full, &mut scratch)?;
        Ok(g + self.h_value(y) - y * self.ell_value(x, Batch::Full)?)
    }

    /// `F(x) = f(x, y*(x))`.
    fn objective(&self, x: &[f64]) -> Result<f64> {
        let y = self.y_star(x)?;
        self.joint_value(x, y)
    }

    /// `∇F(x) = ∇g(x) - ∇l(x)ᵀ y*(x)`.
    fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.y_star(x)?;
        let mut gx = vec![0.0; self.dim_x()];
        self.grad_f0(x, y, Batch::Full, &mut gx)?;
        Ok(gx)
    }
}

/// Variance-regularized ERM:
/// `F(x) = mean(l) + (λ/2n) Σ l² + λ min_{y ≥ 0} (y²/2 - y mean(l))`.
///
/// As an inf-projection: `g = mean(l + λ l²/2)`, `l(x) = λ mean(l)` and
/// `h(y) = λ y²/2` on `y ≥ 0`, so `y*(x) = mean(l)`.
#[derive(Debug, Clone)]
pub struct VarianceRegProblem {
    data: Arc<Dataset>,
    lambda: f64,
    loss: LossKind,
}

impl VarianceRegProblem {
    pub fn new(data: Arc<Dataset>, lambda: f64, loss: LossKind) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda {lambda} must be finite and >= 0"
            )));
        }
        if let LossKind::TruncatedLogistic { alpha } = loss {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "truncation scale {alpha} must be > 0"
                )));
            }
        }
        Ok(VarianceRegProblem { data, lambda, loss })
    }

    /// Truncation scale `sqrt(10 n)`, the default for the truncated loss.
    pub fn default_alpha(n: usize) -> f64 {
        (10.0 * n as f64).sqrt()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn data_arc(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.data.dim() {
            return Err(Error::LengthMismatch {
                expected: self.data.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `(l_i(x), dl_i/d<row_i, x>)` for sample `i`; `∇l_i = slope · row_i`.
    /// `x` must have the dataset dimension.
    #[inline]
    pub fn sample_loss(&self, x: &[f64], i: usize) -> (f64, f64) {
        let label = self.data.label(i);
        let (l, dm) = self.loss.eval_margin(label * self.data.row(i).dot(x));
        (l, dm * label)
    }

    /// `label_i <row_i, x>` for each index. Gathering every margin before any
    /// loss evaluation lets the row loads of a random batch overlap.
    fn batch_margins(&self, x: &[f64], idx: &[usize]) -> Vec<f64> {
        const AHEAD: usize = 8;
        idx.iter()
            .take(AHEAD)
            .for_each(|&i| self.data.prefetch_row(i));
        idx.iter()
            .enumerate()
            .map(|(k, &i)| {
                if let Some(&j) = idx.get(k + AHEAD) {
                    self.data.prefetch_row(j);
                }
                self.data.label(i) * self.data.row(i).dot(x)
            })
            .collect()
    }

    /// Per-sample losses `l_i(x)`.
    pub fn losses(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok((0..self.n()).map(|i| self.sample_loss(x, i).0).collect())
    }

    /// `(Σ l, Σ l²)` over the batch.
    fn moments(&self, x: &[f64], batch: Batch) -> (f64, f64) {
        let add = |acc: (f64, f64), i: usize| {
            let l = self.sample_loss(x, i).0;
            (acc.0 + l, acc.1 + l * l)
        };
        match batch {
            Batch::Full => par::map_reduce(
                self.n(),
                |r| r.fold((0.0, 0.0), add),
                |a, b| (a.0 + b.0, a.1 + b.1),
            )
            .unwrap_or((0.0, 0.0)),
            Batch::Indices(idx) => {
                self.batch_margins(x, idx)
                    .into_iter()
                    .fold((0.0, 0.0), |acc, m| {
                        let l = self.loss.eval_margin(m).0;
                        (acc.0 + l, acc.1 + l * l)
                    })
            }
        }
    }

    /// `out = mean_i w(l_i) ∇l_i(x)` over the batch; returns `(Σ l_i, Σ l_i²)`.
    fn weighted_grad(
        &self,
        x: &[f64],
        batch: Batch,
        w: impl Fn(f64) -> f64 + Sync,
        out: &mut [f64],
    ) -> (f64, f64) {
        let m = batch.len(self.n()) as f64;
        let add = |acc: &mut [f64], s: (f64, f64), i: usize| -> (f64, f64) {
            let (l, slope) = self.sample_loss(x, i);
            self.data.row(i).axpy_into(w(l) * slope, acc);
            (s.0 + l, s.1 + l * l)
        };
        let sums = match batch {
            Batch::Full => {
                let (acc, s) = par::map_reduce(
                    self.n(),
                    |r| {
                        let mut acc = vec![0.0; out.len()];
                        let s = r.fold((0.0, 0.0), |s, i| add(&mut acc, s, i));
                        (acc, s)
                    },
                    |mut a, b| {
                        a.0.iter_mut().zip(&b.0).for_each(|(u, v)| *u += v);
                        (a.0, (a.1 .0 + b.1 .0, a.1 .1 + b.1 .1))
                    },
                )
                .expect("dataset is non-empty");
                out.copy_from_slice(&acc);
                s
            }
            Batch::Indices(idx) => {
                out.fill(0.0);
                let margins = self.batch_margins(x, idx);
                idx.iter().zip(margins).fold((0.0, 0.0), |s, (&i, m)| {
                    let (l, dm) = self.loss.eval_margin(m);
                    self.data
                        .row(i)
                        .axpy_into(w(l) * dm * self.data.label(i), out);
                    (s.0 + l, s.1 + l * l)
                })
            }
        };
        out.iter_mut().for_each(|v| *v /= m);
        sums
    }

    /// Mean loss over all samples.
    pub fn mean_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.moments(x, Batch::Full).0 / self.n() as f64)
    }

    /// `y*(x) = argmin_{y ≥ 0} y²/2 - y mean(l)`; equals the mean loss because
    /// losses are nonnegative.
    pub fn inner_minimizer_ystar(&self, x: &[f64]) -> Result<f64> {
        Ok(self.mean_loss(x)?.max(0.0))
    }

    /// `F(x)` through the inner minimization.
    pub fn eval_f(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let n = self.n() as f64;
        let (s1, s2) = self.moments(x, Batch::Full);
        let mean = s1 / n;
        let y = mean.max(0.0);
        Ok(mean + self.lambda * s2 / (2.0 * n) + self.lambda * (0.5 * y * y - y * mean))
    }

    /// `F(x) = mean(l) + (λ/2) [mean(l²) - mean(l)²]`, the biased-variance form.
    pub fn eval_f_expanded(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let n = self.n() as f64;
        let (s1, s2) = self.moments(x, Batch::Full);
        let mean = s1 / n;
        Ok(mean + 0.5 * self.lambda * (s2 / n - mean * mean))
    }

    /// `∇F(x) = mean ∇l + λ mean(l ∇l) - λ y*(x) mean ∇l`.
    pub fn full_gradient_f(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.inner_minimizer_ystar(x)?;
        let lambda = self.lambda;
        let mut out = vec![0.0; x.len()];
        self.weighted_grad(x, Batch::Full, |l| 1.0 + lambda * l - lambda * y, &mut out);
        Ok(out)
    }

    /// Stochastic partial gradients of `f(x, y)` on a batch:
    /// `grad_x = mean(∇l + λ l ∇l - λ y ∇l)`, `grad_y = λ (y - mean l)`.
    pub fn stochastic_grads_into(
        &self,
        x: &[f64],
        y: f64,
        batch: Batch,
        gx: &mut [f64],
    ) -> Result<f64> {
        self.check_x(x)?;
        batch.validate(self.n())?;
        let lambda = self.lambda;
        let (sum_l, _) = self.weighted_grad(x, batch, |l| 1.0 + lambda * l - lambda * y, gx);
        Ok(lambda * (y - sum_l / batch.len(self.n()) as f64))
    }

    pub fn stochastic_grads(&self, x: &[f64], y: f64, batch: Batch) -> Result<(SparseVec, f64)> {
        let mut gx = vec![0.0; x.len()];
        let gy = self.stochastic_grads_into(x, y, batch, &mut gx)?;
        Ok((SparseVec::from_dense(&gx), gy))
    }

    /// Prox of `h(y) = λ y²/2 + I{y ≥ 0}`: `max(0, y_hat / (1 + η λ))`.
    pub fn prox(&self, y_hat: f64, eta: f64) -> f64 {
        (y_hat / (1.0 + eta * self.lambda)).max(0.0)
    }
}

impl InfProjection for VarianceRegProblem {
    fn dim_x(&self) -> usize {
        self.data.dim()
    }

    fn num_samples(&self) -> usize {
        self.n()
    }

    fn domain_y(&self) -> DomainY {
        DomainY::NonNegOrthant
    }

    fn g_value_grad(&self, x: &[f64], batch: Batch, grad: &mut [f64]) -> Result<f64> {
        self.check_x(x)?;
        batch.validate(self.n())?;
        let lambda = self.lambda;
        let (s1, s2) = self.weighted_grad(x, batch, |l| 1.0 + lambda * l, grad);
        Ok((s1 + 0.5 * lambda * s2) / batch.len(self.n()) as f64)
    }

    fn ell_value(&self, x: &[f64], batch: Batch) -> Result<f64> {
        self.check_x(x)?;
        batch.validate(self.n())?;
        Ok(self.lambda * self.moments(x, batch).0 / batch.len(self.n()) as f64)
    }

    fn ell_jacobian_vec(&self, x: &[f64], y: f64, batch: Batch, out: &mut [f64]) -> Result<()> {
        self.check_x(x)?;
        batch.validate(self.n())?;
        let scale = self.lambda * y;
        self.weighted_grad(x, batch, |_| scale, out);
        Ok(())
    }

    fn h_value(&self, y: f64) -> f64 {
        if y < 0.0 {
            f64::INFINITY
        } else {
            0.5 * self.lambda * y * y
        }
    }

    fn h_grad(&self, y: f64) -> f64 {
        self.lambda * y
    }

    fn prox_h(&self, y_hat: f64, eta: f64) -> f64 {
        self.prox(y_hat, eta)
    }

    fn y_star(&self, x: &[f64]) -> Result<f64> {
        self.inner_minimizer_ystar(x)
    }

    fn grad_f0(&self, x: &[f64], y: f64, batch: Batch, gx: &mut [f64]) -> Result<f64> {
        let gy = self.stochastic_grads_into(x, y, batch, gx)?;
        Ok(gy - self.lambda * y)
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        self.eval_f(x)
    }

    fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.full_gradient_f(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_libsvm_str;

    fn tiny(lambda: f64) -> VarianceRegProblem {
        let d = parse_libsvm_str("+1 1:1 2:0.5\n-1 1:0.3 3:-1\n+1 2:2\n", None).unwrap();
        VarianceRegProblem::new(Arc::new(d), lambda, LossKind::Logistic).unwrap()
    }

    #[test]
    fn single_sample_has_no_variance() {
        let d = parse_libsvm_str("+1 1:1 2:-2\n", None).unwrap();
        let p = VarianceRegProblem::new(Arc::new(d), 3.0, LossKind::Logistic).unwrap();
        let x = [0.3, 0.7];
        let l = p.losses(&x).unwrap()[0];
        assert!((p.eval_f(&x).unwrap() - l).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_is_mean_loss() {
        let p = tiny(0.0);
        let x = [0.2, -0.4, 1.0];
        assert_eq!(p.eval_f(&x).unwrap(), p.mean_loss(&x).unwrap());
    }

    #[test]
    fn identical_losses_at_origin() {
        let lambda = 0.7;
        let p = tiny(lambda);
        let x = [0.0; 3];
        let g = p.full_gradient_f(&x).unwrap();
        // equal losses give zero variance, so only the mean-loss gradient remains
        let mut mean_grad = [0.0; 3];
        for i in 0..3 {
            let (_, gi) =
                crate::loss::logistic_loss(&x, &p.data().row(i).to_sparse(), p.data().label(i))
                    .unwrap();
            gi.axpy_into(1.0 / 3.0, &mut mean_grad);
        }
        for j in 0..3 {
            assert!((g[j] - mean_grad[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn prox_cases() {
        let p = tiny(1.0);
        assert_eq!(p.prox(2.0, 1.0), 1.0);
        assert_eq!(p.prox(-5.0, 0.3), 0.0);
        assert_eq!(tiny(2.0).prox(3.0, 0.5), 1.5);
    }

    #[test]
    fn batch_errors() {
        let p = tiny(1.0);
        let x = [0.0; 3];
        assert!(matches!(
            p.stochastic_grads(&x, 0.0, Batch::Indices(&[])),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            p.stochastic_grads(&x, 0.0, Batch::Indices(&[0, 3])),
            Err(Error::BatchIndex { index: 3, n: 3 })
        ));
        assert!(p.eval_f(&[0.0; 2]).is_err());
    }

    #[test]
    fn grad_y_vanishes_at_batch_mean() {
        let p = tiny(1.3);
        let x = [0.4, -0.2, 0.1];
        let batch = [0usize, 2, 2];
        let losses = p.losses(&x).unwrap();
        let y = (losses[0] + 2.0 * losses[2]) / 3.0;
        let (_, gy) = p.stochastic_grads(&x, y, Batch::Indices(&batch)).unwrap();
        assert!(gy.abs() < 1e-15);
    }

    #[test]
    fn trait_defaults_agree_with_closed_forms() {
        let p = tiny(0.9);
        let x = [0.5, 0.1, -0.3];
        let y = 0.37;
        let mut a = vec![0.0; 3];
        let gy = p.grad_f0(&x, y, Batch::Full, &mut a).unwrap();
        // generic path through g and l oracles
        let mut g = vec![0.0; 3];
        p.g_value_grad(&x, Batch::Full, &mut g).unwrap();
        let mut j = vec![0.0; 3];
        p.ell_jacobian_vec(&x, y, Batch::Full, &mut j).unwrap();
        for k in 0..3 {
            assert!((a[k] - (g[k] - j[k])).abs() < 1e-15);
        }
        assert!((gy + p.ell_value(&x, Batch::Full).unwrap()).abs() < 1e-15);
        let via_joint = p.joint_value(&x, p.y_star(&x).unwrap()).unwrap();
        assert!((via_joint - p.eval_f(&x).unwrap()).abs() < 1e-14);
    }
}
