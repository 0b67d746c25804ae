//! Synthetic problems with known structure, used by the diagnostics suites
//! and the rate experiments.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::problem::{Batch, DomainY, InfProjection};
use crate::rng;
use crate::sparse::SparseVec;

/// Binary classification data: Gaussian features (each kept with probability
/// `density`), labels from a random linear rule with a `flip` fraction of
/// labels inverted so the data is not separable.
pub fn logistic_dataset(n: usize, d: usize, density: f64, flip: f64, seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed, 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let truth: Vec<f64> = (0..d).map(|_| normal.sample(&mut r)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut entries = Vec::new();
        for j in 0..d {
            if r.random::<f64>() < density {
                entries.push((j, normal.sample(&mut r)));
            }
        }
        let row = SparseVec::new(d, entries)?;
        let mut label = if row.dot(&truth) > 0.0 { 1.0 } else { -1.0 };
        if r.random::<f64>() < flip {
            label = -label;
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllKind {
    /// `l_i(x) = <e_i, x> + c_i`
    Linear,
    /// `l_i(x) = ln(1 + exp(<e_i, x> + c_i))`
    Softplus,
}

/// Smooth inf-projection test problem with per-sample components
///
/// `g_i(x) = (<a_i, x> - b_i)²/2 + κ|x|²/2`, `l_i` linear or softplus in
/// `<e_i, x> + c_i`, and `h(y) = β y²/2` restricted to the domain side and,
/// optionally, to `|y| ≤ cap`.
#[derive(Debug, Clone)]
pub struct QuadraticInfProj {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub kappa: f64,
    pub beta: f64,
    pub domain: DomainY,
    pub y_cap: Option<f64>,
    pub ell: EllKind,
}

/// Parameters for [`QuadraticInfProj::random`].
#[derive(Debug, Clone, Copy)]
pub struct QuadraticSpec {
    pub n: usize,
    pub d: usize,
    pub kappa: f64,
    pub beta: f64,
    pub domain: DomainY,
    pub y_cap: Option<f64>,
    pub ell: EllKind,
    /// Mean of the offsets `c_i`.
    pub offset: f64,
    /// Scale of the `e_i` entries.
    pub coupling: f64,
}

impl QuadraticInfProj {
    pub fn random(spec: QuadraticSpec, seed: u64) -> Result<Self> {
        if spec.n == 0 || spec.d == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut r = rng::stream(seed, 0);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let scale = 1.0 / (spec.d as f64).sqrt();
        let mut gauss = |s: f64| normal.sample(&mut r) * s;
        let mut a = Vec::with_capacity(spec.n);
        let mut b = Vec::with_capacity(spec.n);
        let mut e = Vec::with_capacity(spec.n);
        let mut c = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            a.push((0..spec.d).map(|_| gauss(scale)).collect::<Vec<_>>());
            b.push(gauss(1.0));
            e.push(
                (0..spec.d)
                    .map(|_| gauss(spec.coupling * scale))
                    .collect::<Vec<_>>(),
            );
            c.push(spec.offset + gauss(0.5));
        }
        Ok(QuadraticInfProj {
            a,
            b,
            e,
            c,
            kappa: spec.kappa,
            beta: spec.beta,
            domain: spec.domain,
            y_cap: spec.y_cap,
            ell: spec.ell,
        })
    }

    fn clamp_y(&self, y: f64) -> f64 {
        let y = self.domain.project(y);
        match self.y_cap {
            Some(cap) => y.clamp(-cap, cap),
            None => y,
        }
    }

    fn indices<'s>(&'s self, batch: Batch<'s>) -> Box<dyn Iterator<Item = usize> + 's> {
        match batch {
            Batch::Full => Box::new(0..self.a.len()),
            Batch::Indices(idx) => Box::new(idx.iter().copied()),
        }
    }

    /// `(l_i, dl_i/du)` at `u = <e_i, x> + c_i`.
    fn ell_i(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let u: f64 = self.e[i].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + self.c[i];
        match self.ell {
            EllKind::Linear => (u, 1.0),
            EllKind::Softplus => {
                let (v, d) = crate::loss::logistic_margin(-u);
                (v, -d)
            }
        }
    }

    /// Largest `|a_i|²` and `|e_i|²` over samples.
    pub fn row_bounds(&self) -> (f64, f64) {
        let sq = |v: &Vec<f64>| v.iter().map(|t| t * t).sum::<f64>();
        let a2 = self.a.iter().map(sq).fold(0.0, f64::max);
        let e2 = self.e.iter().map(sq).fold(0.0, f64::max);
        (a2, e2)
    }

    fn check(&self, x: &[f64], batch: Batch) -> Result<()> {
        if x.len() != self.dim_x() {
            return Err(Error::LengthMismatch {
                expected: self.dim_x(),
                got: x.len(),
            });
        }
        batch.validate(self.a.len())
    }
}

impl InfProjection for QuadraticInfProj {
    fn dim_x(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    fn num_samples(&self) -> usize {
        self.a.len()
    }

    fn domain_y(&self) -> DomainY {
        self.domain
    }

    fn g_value_grad(&self, x: &[f64], batch: Batch, grad: &mut [f64]) -> Result<f64> {
        self.check(x, batch)?;
        let m = batch.len(self.a.len()) as f64;
        grad.fill(0.0);
        let mut value = 0.0;
        for i in self.indices(batch) {
            let r: f64 = self.a[i].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - self.b[i];
            value += 0.5 * r * r;
            grad.iter_mut()
                .zip(&self.a[i])
                .for_each(|(g, ai)| *g += r * ai);
        }
        let sq: f64 = x.iter().map(|v| v * v).sum();
        grad.iter_mut()
            .zip(x)
            .for_each(|(g, xi)| *g = *g / m + self.kappa * xi);
        Ok(value / m + 0.5 * self.kappa * sq)
    }

    fn ell_value(&self, x: &[f64], batch: Batch) -> Result<f64> {
        self.check(x, batch)?;
        let m = batch.len(self.a.len()) as f64;
        Ok(self.indices(batch).map(|i| self.ell_i(i, x).0).sum::<f64>() / m)
    }

    fn ell_jacobian_vec(&self, x: &[f64], y: f64, batch: Batch, out: &mut [f64]) -> Result<()> {
        self.check(x, batch)?;
        let m = batch.len(self.a.len()) as f64;
        out.fill(0.0);
        for i in self.indices(batch) {
            let s = y * self.ell_i(i, x).1 / m;
            out.iter_mut()
                .zip(&self.e[i])
                .for_each(|(o, ei)| *o += s * ei);
        }
        Ok(())
    }

    fn y_interval(&self) -> (f64, f64) {
        let cap = self.y_cap.unwrap_or(f64::INFINITY);
        match self.domain {
            DomainY::NonNegOrthant => (0.0, cap),
            DomainY::NonPosOrthant => (-cap, 0.0),
            DomainY::Free => (-cap, cap),
        }
    }

    fn h_value(&self, y: f64) -> f64 {
        if self.clamp_y(y) != y {
            f64::INFINITY
        } else {
            0.5 * self.beta * y * y
        }
    }

    fn h_grad(&self, y: f64) -> f64 {
        self.beta * y
    }

    fn prox_h(&self, y_hat: f64, eta: f64) -> f64 {
        self.clamp_y(y_hat / (1.0 + eta * self.beta))
    }

    fn y_star(&self, x: &[f64]) -> Result<f64> {
        Ok(self.clamp_y(self.ell_value(x, Batch::Full)? / self.beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_dataset_shapes() {
        let d = logistic_dataset(40, 6, 0.5, 0.2, 3).unwrap();
        assert_eq!((d.n(), d.dim()), (40, 6));
        assert!(d.labels().iter().any(|&l| l > 0.0) && d.labels().iter().any(|&l| l < 0.0));
        assert_eq!(d, logistic_dataset(40, 6, 0.5, 0.2, 3).unwrap());
    }

    #[test]
    fn prox_and_ystar_respect_domain() {
        let spec = QuadraticSpec {
            n: 10,
            d: 3,
            kappa: 0.5,
            beta: 2.0,
            domain: DomainY::NonPosOrthant,
            y_cap: Some(1.0),
            ell: EllKind::Softplus,
            offset: 0.0,
            coupling: 1.0,
        };
        let p = QuadraticInfProj::random(spec, 1).unwrap();
        assert_eq!(p.prox_h(5.0, 1.0), 0.0);
        assert_eq!(p.prox_h(-30.0, 1.0), -1.0);
        // softplus is positive, so y* sits on the boundary of the nonpositive side
        assert_eq!(p.y_star(&[0.1, 0.2, 0.3]).unwrap(), 0.0);
    }
}
