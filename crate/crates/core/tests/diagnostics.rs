use infproj::diagnostics::{
    check_lemma1, finite_diff_audit, rate_slope, rate_slope_trace, stationarity_report, Coords,
};
use infproj::loss::LossKind;
use infproj::synthetic::logistic_dataset;
use infproj::trace::{fmt_f64, parse_trace, timing_csv, trace_csv, TraceRecord};
use infproj::{Error, VarianceRegProblem};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::sync::Arc;

#[test]
fn slope_of_reciprocal_is_minus_one() {
    let xs: Vec<f64> = (1..=40).map(|k| k as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
    assert!((rate_slope(&xs, &ys).unwrap() + 1.0).abs() <= 1e-9);
    let flat = vec![2.5; 40];
    assert!(rate_slope(&xs, &flat).unwrap().abs() <= 1e-12);
}

#[test]
fn slope_uses_only_the_trailing_half() {
    // the head follows x², the tail x^-0.5
    let xs: Vec<f64> = (1..=20).map(|k| k as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| if i < 10 { x * x } else { 100.0 * x.powf(-0.5) })
        .collect();
    assert!((rate_slope(&xs, &ys).unwrap() + 0.5).abs() <= 1e-9);
}

#[test]
fn slope_rejects_bad_input() {
    let xs: Vec<f64> = (1..=9).map(|k| k as f64).collect();
    assert!(matches!(
        rate_slope(&xs, &xs),
        Err(Error::TooFewPoints { .. })
    ));
    let xs: Vec<f64> = (1..=12).map(|k| k as f64).collect();
    let mut ys = xs.clone();
    ys[3] = 0.0;
    assert!(matches!(
        rate_slope(&xs, &ys),
        Err(Error::NonPositive { row: 3, .. })
    ));
    assert!(rate_slope(&xs, &ys[..11]).is_err());
}

#[test]
fn conjugate_pairs_hold_for_every_power() {
    for p in [2.0, 2.5, 3.0, 4.0, 6.0] {
        let r = check_lemma1(p, 5000, 8).unwrap();
        assert_eq!(
            (r.holder_violations, r.convexity_violations),
            (0, 0),
            "p = {p}"
        );
        assert!(r.worst_holder_ratio <= 1.0 + 1e-9);
        assert!(
            r.worst_holder_ratio > 0.5,
            "the bound should be reasonably tight"
        );
    }
    assert!(check_lemma1(1.5, 10, 0).is_err());
}

#[test]
fn audit_flags_a_wrong_gradient() {
    let f = |x: &[f64]| -> infproj::Result<f64> { Ok(x.iter().map(|v| v.powi(3)).sum()) };
    let good =
        |x: &[f64]| -> infproj::Result<Vec<f64>> { Ok(x.iter().map(|v| 3.0 * v * v).collect()) };
    let bad =
        |x: &[f64]| -> infproj::Result<Vec<f64>> { Ok(x.iter().map(|v| 2.9 * v * v).collect()) };
    let pts = vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.1, -0.7]];
    let ok = finite_diff_audit(&f, &good, &pts, 1e-5, &Coords::All).unwrap();
    assert!(ok.max_rel_error <= 1e-8);
    let off = finite_diff_audit(&f, &bad, &pts, 1e-5, &Coords::All).unwrap();
    assert!(off.max_rel_error > 1e-2);
}

#[test]
fn stationarity_report_decomposes_the_gradient() {
    let data = Arc::new(logistic_dataset(40, 5, 0.6, 0.1, 3).unwrap());
    let p = VarianceRegProblem::new(data, 1.0, LossKind::Logistic).unwrap();
    let x = [0.2, -0.1, 0.4, 0.0, 0.3];
    let r = stationarity_report(&p, &x, 1e-3).unwrap();
    assert!((r.y_star - p.mean_loss(&x).unwrap()).abs() <= 1e-12);
    assert!(r.grad_norm <= r.grad_g_norm + r.coupling_norm + 1e-12);
    assert!(r.grad_norm >= (r.grad_g_norm - r.coupling_norm).abs() - 1e-12);
    assert_eq!(r.stationary, r.grad_norm <= 1e-3);
    assert!((r.objective - p.eval_f(&x).unwrap()).abs() <= 1e-12);
}

fn record(solver: &str, k: usize, vals: [f64; 5], extra: Option<f64>) -> TraceRecord {
    let mut extras = BTreeMap::new();
    if let Some(v) = extra {
        extras.insert("tau".to_string(), v);
    }
    let mut timings = BTreeMap::new();
    timings.insert("wall_seconds".to_string(), vals[0] * 2.0);
    TraceRecord {
        solver: solver.into(),
        stage_or_iter: k,
        cpu_seconds: vals[0],
        objective_f: vals[1],
        grad_norm: vals[2],
        train_error: vals[3],
        test_error: vals[4],
        extras,
        timings,
    }
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

#[test]
fn trace_slope_reads_named_columns() {
    let recs: Vec<TraceRecord> = (1..=20)
        .map(|k| {
            record(
                "spg",
                k,
                [k as f64, 1.0, 3.0 / (k as f64).powi(2), f64::NAN, f64::NAN],
                None,
            )
        })
        .collect();
    let s = rate_slope_trace(&recs, "stage_or_iter", "grad_norm").unwrap();
    assert!((s + 2.0).abs() <= 1e-9);
    assert!(rate_slope_trace(&recs, "stage_or_iter", "missing").is_err());
}

fn finite_or_nan() -> impl Strategy<Value = f64> {
    prop_oneof![
        9 => prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        1 => Just(f64::NAN),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fmt_f64_round_trips(v in finite_or_nan()) {
        let s = fmt_f64(v);
        if v.is_nan() {
            prop_assert_eq!(s, "nan");
        } else {
            prop_assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn trace_and_timing_round_trip(
        rows in prop::collection::vec(
            (0usize..10_000, prop::array::uniform5(finite_or_nan()), prop::option::of(-1e6f64..1e6)),
            1..20,
        )
    ) {
        let recs: Vec<TraceRecord> = rows
            .iter()
            .map(|(k, vals, extra)| record("st-spg", *k, *vals, *extra))
            .collect();
        let back = parse_trace(&trace_csv(&recs), Some(&timing_csv(&recs))).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            prop_assert_eq!(&a.solver, &b.solver);
            prop_assert_eq!(a.stage_or_iter, b.stage_or_iter);
            prop_assert!(same(a.cpu_seconds, b.cpu_seconds));
            prop_assert!(same(a.objective_f, b.objective_f));
            prop_assert!(same(a.grad_norm, b.grad_norm));
            prop_assert!(same(a.train_error, b.train_error));
            prop_assert!(same(a.test_error, b.test_error));
            prop_assert_eq!(&a.extras, &b.extras);
            // nan timings read back as absent
            for (key, v) in &a.timings {
                prop_assert!(same(*v, b.timings.get(key).copied().unwrap_or(f64::NAN)));
            }
        }
    }
}
