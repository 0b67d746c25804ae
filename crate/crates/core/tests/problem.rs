use approx::assert_relative_eq;
use infproj::loss::LossKind;
use infproj::synthetic::logistic_dataset;
use infproj::{Batch, Dataset, InfProjection, SparseVec, VarianceRegProblem};
use proptest::prelude::*;
use std::sync::Arc;

fn dense_rows(d: &Dataset) -> Vec<Vec<f64>> {
    d.rows()
        .map(|r| {
            let mut v = vec![0.0; d.dim()];
            r.iter().for_each(|(i, x)| v[i] = x);
            v
        })
        .collect()
}

/// Plain logistic loss, computed without the library's stable split.
fn naive_losses(d: &Dataset, x: &[f64]) -> Vec<f64> {
    dense_rows(d)
        .iter()
        .zip(d.labels())
        .map(|(a, &y)| {
            let m: f64 = y * a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            (1.0 + (-m).exp()).ln()
        })
        .collect()
}

fn problem(n: usize, d: usize, lambda: f64, seed: u64) -> VarianceRegProblem {
    let data = Arc::new(logistic_dataset(n, d, 0.6, 0.1, seed).unwrap());
    VarianceRegProblem::new(data, lambda, LossKind::Logistic).unwrap()
}

fn point(d: usize, seed: u64) -> Vec<f64> {
    (0..d)
        .map(|j| ((j as f64 + 1.0) * 0.7 + seed as f64).sin() * 0.8)
        .collect()
}

#[test]
fn objective_is_mean_plus_half_lambda_variance() {
    let p = problem(30, 6, 1.7, 3);
    let x = point(6, 1);
    let l = naive_losses(p.data(), &x);
    let n = l.len() as f64;
    let mean = l.iter().sum::<f64>() / n;
    let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert_relative_eq!(
        p.eval_f(&x).unwrap(),
        mean + 0.5 * 1.7 * var,
        max_relative = 1e-12
    );
}

#[test]
fn ystar_matches_grid_search() {
    let p = problem(20, 5, 2.0, 4);
    let x = point(5, 2);
    let l = naive_losses(p.data(), &x);
    let mean = l.iter().sum::<f64>() / l.len() as f64;
    let top = 2.0 * l.iter().cloned().fold(0.0, f64::max);
    // minimize λy²/2 - λ y mean(l) over the grid
    let steps = (top / 1e-5) as usize;
    let best = (0..=steps)
        .map(|k| k as f64 * 1e-5)
        .min_by(|a, b| {
            let f = |y: f64| 0.5 * y * y - y * mean;
            f(*a).total_cmp(&f(*b))
        })
        .unwrap();
    assert!((p.y_star(&x).unwrap() - best).abs() <= 1e-4);
}

#[test]
fn gradient_matches_central_differences_of_objective() {
    for (seed, loss) in [
        (5, LossKind::Logistic),
        (6, LossKind::TruncatedLogistic { alpha: 2.0 }),
    ] {
        let data = Arc::new(logistic_dataset(20, 7, 0.7, 0.1, seed).unwrap());
        let p = VarianceRegProblem::new(data, 0.9, loss).unwrap();
        let x = point(7, seed);
        let g = p.full_gradient_f(&x).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..7)
            .map(|j| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[j] += h;
                b[j] -= h;
                (p.eval_f(&a).unwrap() - p.eval_f(&b).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / scale <= 1e-5, "{loss:?}: rel err {}", diff / scale);
    }
}

#[test]
fn zero_lambda_gradient_is_erm_gradient() {
    let p = problem(25, 4, 0.0, 8);
    let x = point(4, 3);
    let rows = dense_rows(p.data());
    let mut erm = vec![0.0; 4];
    for (a, &y) in rows.iter().zip(p.data().labels()) {
        let m: f64 = y * a.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>();
        let s = -y / (1.0 + m.exp());
        erm.iter_mut().zip(a).for_each(|(e, v)| *e += s * v / 25.0);
    }
    for (a, b) in p.full_gradient_f(&x).unwrap().iter().zip(&erm) {
        assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
    }
}

#[test]
fn singleton_batches_average_to_full_batch() {
    let p = problem(12, 5, 1.3, 9);
    let x = point(5, 4);
    let y = 0.4;
    let (full_x, full_y) = p.stochastic_grads(&x, y, Batch::Full).unwrap();
    let mut sum = vec![0.0; 5];
    let mut sum_y = 0.0;
    for i in 0..12 {
        let (gx, gy) = p.stochastic_grads(&x, y, Batch::Indices(&[i])).unwrap();
        gx.axpy_into(1.0 / 12.0, &mut sum);
        sum_y += gy / 12.0;
    }
    for (a, b) in sum.iter().zip(full_x.to_dense()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!((sum_y - full_y).abs() <= 1e-12);
}

#[test]
fn prox_matches_grid_minimization() {
    let p = problem(5, 2, 2.0, 1);
    let got = p.prox(3.0, 0.5);
    assert_relative_eq!(got, 1.5, max_relative = 1e-15);
    let best = (0..=10_000_000)
        .map(|k| k as f64 * 1e-6)
        .min_by(|a, b| {
            let f = |y: f64| y * y + (y - 3.0).powi(2);
            f(*a).total_cmp(&f(*b))
        })
        .unwrap();
    assert!((got - best).abs() <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_gradients_are_means_of_singletons(
        seed in 0u64..1000,
        lambda in 0.0f64..5.0,
        idx in prop::collection::vec(0usize..15, 1..20),
    ) {
        let p = problem(15, 4, lambda, seed);
        let x = point(4, seed);
        let (gx, gy) = p.stochastic_grads(&x, 0.3, Batch::Indices(&idx)).unwrap();
        let mut sum = vec![0.0; 4];
        let mut sy = 0.0;
        for &i in &idx {
            let (a, b) = p.stochastic_grads(&x, 0.3, Batch::Indices(&[i])).unwrap();
            a.axpy_into(1.0 / idx.len() as f64, &mut sum);
            sy += b / idx.len() as f64;
        }
        let gx = gx.to_dense();
        for j in 0..4 {
            prop_assert!((gx[j] - sum[j]).abs() <= 1e-12 * (1.0 + sum[j].abs()));
        }
        prop_assert!((gy - sy).abs() <= 1e-12 * (1.0 + sy.abs()));
    }

    #[test]
    fn objective_never_below_mean_loss(seed in 0u64..1000, lambda in 0.0f64..10.0, s in -3.0f64..3.0) {
        let p = problem(10, 3, lambda, seed);
        let x = vec![s, -0.5 * s, 0.25];
        let mean = p.mean_loss(&x).unwrap();
        prop_assert!(p.eval_f(&x).unwrap() >= mean - 1e-12);
        prop_assert!((p.y_star(&x).unwrap() - mean).abs() <= 1e-12 * (1.0 + mean));
    }

    #[test]
    fn truncated_loss_bounded_by_logistic(m in -50.0f64..50.0, alpha in 0.1f64..20.0) {
        let (a, _) = LossKind::Logistic.eval_margin(m);
        let (b, _) = LossKind::TruncatedLogistic { alpha }.eval_margin(m);
        prop_assert!(b <= a + 1e-15);
        prop_assert!(b >= 0.0);
    }
}

#[test]
fn sparse_gradient_has_dataset_dimension() {
    let p = problem(8, 6, 1.0, 2);
    let (g, _): (SparseVec, f64) = p.stochastic_grads(&[0.1; 6], 0.0, Batch::Full).unwrap();
    assert_eq!(g.dim(), 6);
}
