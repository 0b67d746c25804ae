use approx::assert_relative_eq;
use infproj::loss::LossKind;
use infproj::mspg::{mspg, MspgConfig, SmoothConstants};
use infproj::rng::{self, SolverRng};
use infproj::spg::{spg, ConvexSet, FnOracle, SpgConfig, StepRule, StochasticOracle};
use infproj::stspg::{
    build_subproblem_x, build_subproblem_y, st_spg, Sampling, StSpgConfig, SubproblemMode,
};
use infproj::synthetic::{logistic_dataset, EllKind, QuadraticInfProj, QuadraticSpec};
use infproj::{DomainY, InfProjection, VarianceRegProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::ops::AddAssign;
use std::sync::Arc;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn variance_problem(n: usize, d: usize, lambda: f64, seed: u64) -> VarianceRegProblem {
    let data = Arc::new(logistic_dataset(n, d, 0.6, 0.1, seed).unwrap());
    VarianceRegProblem::new(data, lambda, LossKind::Logistic).unwrap()
}

#[test]
fn spg_reaches_closed_form_prox_minimizer() {
    let a = [1.5, -2.0, 0.25];
    let z1 = [0.5, 0.5, -1.0];
    let gamma = 3.0;
    let mut oracle = FnOracle::new(3, |z: &[f64], _: &mut SolverRng, out: &mut [f64]| {
        for i in 0..3 {
            out[i] = z[i] - a[i];
        }
        Ok(())
    });
    let z = spg(
        &mut oracle,
        &z1,
        ConvexSet::Whole,
        &SpgConfig::new(500, gamma, StepRule::Smooth),
    )
    .unwrap();
    let h = |z: &[f64]| -> f64 {
        (0..3)
            .map(|i| 0.5 * (z[i] - a[i]).powi(2) + 0.5 * gamma * (z[i] - z1[i]).powi(2))
            .sum()
    };
    let zstar: Vec<f64> = (0..3)
        .map(|i| (gamma * z1[i] + a[i]) / (gamma + 1.0))
        .collect();
    let scale = h(&z1) - h(&zstar);
    assert!(h(&z) - h(&zstar) <= 1e-3 * scale);
}

#[test]
fn spg_respects_nonnegative_set() {
    let mut oracle = FnOracle::new(2, |z: &[f64], _: &mut SolverRng, out: &mut [f64]| {
        out[0] = z[0] + 5.0;
        out[1] = z[1] - 1.0;
        Ok(())
    });
    let z = spg(
        &mut oracle,
        &[1.0, 1.0],
        ConvexSet::NonNegative,
        &SpgConfig::new(300, 3.0, StepRule::Smooth),
    )
    .unwrap();
    // every iterate after z₁ sits on the boundary, so only z₁ carries weight
    assert_relative_eq!(z[0], 2.0 / (300.0 * 301.0), max_relative = 1e-12);
    // unconstrained in the second coordinate: (3 * 1 + 1) / 4
    assert_relative_eq!(z[1], 1.0, epsilon = 1e-3);
}

#[test]
fn dc_oracle_matches_hand_assembly() {
    let p = variance_problem(5, 4, 1.4, 11);
    let xk = [0.3, -0.2, 0.5, 0.1];
    let yk = 0.7;
    let z = [-0.4, 0.6, 0.2, -0.3];
    let mut o =
        build_subproblem_x(&p, &xk, yk, SubproblemMode::DcLinearized, Sampling::Full).unwrap();
    let mut got = vec![0.0; 4];
    o.subgradient(&z, &mut rng::stream(0, 0), &mut got).unwrap();

    // ∇g(z) = mean (1 + λ l_i(z)) ∇l_i(z), ∇l̄(x_k) = λ mean ∇l_i(x_k)
    let data = p.data();
    let mut expect = vec![0.0; 4];
    for i in 0..5 {
        let (lz, sz) = p.sample_loss(&z, i);
        let (_, sk) = p.sample_loss(&xk, i);
        for (j, v) in data.row(i).iter() {
            expect[j] += ((1.0 + 1.4 * lz) * sz - yk * 1.4 * sk) * v / 5.0;
        }
    }
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-12);
    }

    // with y_k = 0 the oracle reduces to ∇g
    for sampling in [Sampling::Full, Sampling::MiniBatch(5)] {
        let mut o =
            build_subproblem_x(&p, &xk, 0.0, SubproblemMode::DcLinearized, sampling).unwrap();
        let mut g0 = vec![0.0; 4];
        o.subgradient(&z, &mut rng::stream(0, 0), &mut g0).unwrap();
        let mut g = vec![0.0; 4];
        p.g_value_grad(&z, infproj::Batch::Full, &mut g).unwrap();
        if sampling == Sampling::Full {
            assert_eq!(g0, g);
        } else {
            assert!(g0.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn y_stage_minimizer_is_closed_form() {
    let p = variance_problem(10, 3, 2.0, 12);
    let x = [0.4, -0.1, 0.3];
    let lbar = p.mean_loss(&x).unwrap() * 2.0;
    let o = build_subproblem_y(&p, &x, Sampling::Full).unwrap();
    for (mu, yk) in [(6.0, 0.5), (1.0, 0.0), (3.0, 2.5)] {
        let got = o.quadratic_stage_minimizer(2.0, mu, yk).unwrap();
        assert_relative_eq!(
            got,
            ((lbar + mu * yk) / (2.0 + mu)).max(0.0),
            max_relative = 1e-14
        );
    }
}

#[test]
fn full_batch_stages_do_not_increase_the_joint_objective() {
    let p = variance_problem(40, 6, 1.0, 13);
    let k = SmoothConstants::variance(&p, 10.0 * p.mean_loss(&[0.0; 6]).unwrap());
    let mut cfg = StSpgConfig::new(40, 3.0 * k.l_g, 3.0);
    cfg.sampling = Sampling::Full;
    let out = st_spg(&p, &[0.0; 6], 0.0, &cfg).unwrap();
    let mut prev = p.joint_value(&[0.0; 6], 0.0).unwrap();
    for s in &out.snapshots {
        assert!(
            s.f_joint <= prev + 1e-9,
            "stage {}: {} > {prev}",
            s.k,
            s.f_joint
        );
        prev = s.f_joint;
    }
    assert!(out.snapshots.last().unwrap().objective <= out.snapshots[0].objective);
}

#[test]
fn st_spg_is_reproducible_and_tau_indexes_snapshots() {
    let p = variance_problem(60, 5, 1.0, 14);
    let mut cfg = StSpgConfig::new(12, 1.0, 1.0);
    cfg.sampling = Sampling::MiniBatch(8);
    cfg.seed = 3;
    let a = st_spg(&p, &[0.0; 5], 0.0, &cfg).unwrap();
    let b = st_spg(&p, &[0.0; 5], 0.0, &cfg).unwrap();
    assert_eq!(a.x_last, b.x_last);
    assert_eq!(a.tau, b.tau);
    let snap = &a.snapshots[a.tau - 1];
    assert_eq!(snap.k, a.tau);
    assert_eq!(snap.x_next, a.x_tau_next);
    assert_eq!(snap.x_k, a.x_tau);
    for s in &a.snapshots {
        assert_eq!((s.iters_x, s.iters_y), (s.k + 1, s.k + 1));
    }
}

fn quadratic(n: usize) -> QuadraticInfProj {
    let spec = QuadraticSpec {
        n,
        d: 5,
        kappa: 1.0,
        beta: 1.0,
        domain: DomainY::Free,
        y_cap: Some(100.0),
        ell: EllKind::Linear,
        offset: 0.5,
        coupling: 0.3,
    };
    QuadraticInfProj::random(spec, 21).unwrap()
}

/// Stationary point of `mean ½(<a_i,x> - b_i)² + κ|x|²/2 + β y²/2 - y mean(<e_i,x> + c_i)`.
fn joint_minimizer(p: &QuadraticInfProj) -> (DVector<f64>, f64) {
    let (n, d) = (p.a.len(), p.a[0].len());
    let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut rhs = DVector::<f64>::zeros(d + 1);
    for i in 0..n {
        let a = DVector::from_column_slice(&p.a[i]);
        let e = DVector::from_column_slice(&p.e[i]);
        h.view_mut((0, 0), (d, d))
            .add_assign(&(&a * a.transpose() / n as f64));
        rhs.rows_mut(0, d).add_assign(&(&a * (p.b[i] / n as f64)));
        for j in 0..d {
            h[(j, d)] -= e[j] / n as f64;
            h[(d, j)] -= e[j] / n as f64;
        }
        rhs[d] += p.c[i] / n as f64;
    }
    for j in 0..d {
        h[(j, j)] += p.kappa;
    }
    h[(d, d)] = p.beta;
    let w = h.lu().solve(&rhs).expect("nonsingular");
    (w.rows(0, d).into_owned(), w[d])
}

#[test]
fn mspg_finds_the_joint_minimizer() {
    let p = quadratic(200);
    let (xs, ys) = joint_minimizer(&p);
    let k = SmoothConstants::quadratic(&p, None).unwrap();
    let mut cfg = MspgConfig::new(2000, 0.3, 2, 200);
    cfg.seed = 4;
    let out = mspg(&p, &[0.0; 5], 0.0, &k, &cfg).unwrap();
    assert!(norm(&p.full_gradient(&out.x_tau).unwrap()) <= 1e-2);
    let err: Vec<f64> = out
        .x_last
        .iter()
        .zip(xs.iter())
        .map(|(a, b)| a - b)
        .collect();
    assert!(norm(&err) <= 1e-6, "x error {}", norm(&err));
    assert!((out.y_last - ys).abs() <= 1e-6);
    assert!(norm(&p.full_gradient(xs.as_slice()).unwrap()) <= 1e-9);
}

#[test]
fn joint_gradient_ratios_stay_below_l() {
    let p = quadratic(100);
    let k = SmoothConstants::quadratic(&p, None).unwrap();
    let l = k.joint_l();
    let grad = |x: &[f64], y: f64| -> Vec<f64> {
        let mut g = vec![0.0; 5];
        let gy = p.grad_f0(x, y, infproj::Batch::Full, &mut g).unwrap();
        g.push(gy);
        g
    };
    let mut r = rng::stream(9, 9);
    use rand::Rng;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..5).map(|_| r.random_range(-5.0..5.0)).collect();
        let x2: Vec<f64> = (0..5).map(|_| r.random_range(-5.0..5.0)).collect();
        let (y, y2) = (r.random_range(-100.0..100.0), r.random_range(-100.0..100.0));
        let d: Vec<f64> = grad(&x, y)
            .iter()
            .zip(grad(&x2, y2))
            .map(|(a, b)| a - b)
            .collect();
        let mut w: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| a - b).collect();
        w.push(y - y2);
        assert!(norm(&d) <= l * norm(&w) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spg_average_stays_in_box(lo in -3.0f64..0.0, width in 0.1f64..4.0, shift in -10.0f64..10.0, t in 1usize..60) {
        let hi = lo + width;
        let mut oracle = FnOracle::new(2, |z: &[f64], r: &mut SolverRng, out: &mut [f64]| {
            use rand::Rng;
            out[0] = z[0] - shift + r.random_range(-1.0..1.0);
            out[1] = z[1] + shift;
            Ok(())
        });
        let z1 = [lo.max(0.0).min(hi), hi];
        let z = spg(&mut oracle, &z1, ConvexSet::Box { lo, hi }, &SpgConfig::new(t, 2.0, StepRule::Nonsmooth)).unwrap();
        prop_assert!(z.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }
}
