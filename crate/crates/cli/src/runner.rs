//! Data loading and solver dispatch shared by `run` and `bench`.

use crate::config::{
    resolve, resolve_rho, DataConfig, LossName, ModeName, ProblemConfig, RuleName, SolverKind,
    SolverSpec,
};
use anyhow::{bail, Context, Result};
use infproj::baselines::{bmd_minmax_recorded, sgd_erm_recorded, BmdConfig, SgdConfig};
use infproj::data::{read_libsvm, split_train_test, subsample};
use infproj::loss::LossKind;
use infproj::mspg::{mspg_recorded, MspgConfig, SmoothConstants};
use infproj::spg::StepRule;
use infproj::stspg::{
    st_spg_recorded, InnerRecord, Sampling, StSpgConfig, StageSchedule, SubproblemMode,
};
use infproj::trace::{Evaluator, Recorder, TraceRecord};
use infproj::{Dataset, Error, VarianceRegProblem};
use serde_json::{json, Map, Value};
use std::path::Path;
use std::sync::Arc;

pub struct Data {
    pub train: Arc<Dataset>,
    pub test: Option<Dataset>,
}

pub fn load_data(cfg: &DataConfig, base: &Path) -> Result<Data> {
    let path = resolve(base, &cfg.path);
    let mut full =
        read_libsvm(&path, cfg.dim).with_context(|| format!("loading {}", path.display()))?;
    if let Some(sub) = &cfg.subsample {
        let count = sub.resolve(full.n())?;
        full = subsample(&full, count, sub.seed)?;
    }
    match &cfg.test_path {
        Some(t) => {
            let tpath = resolve(base, t);
            let test = read_libsvm(&tpath, Some(full.dim()))
                .with_context(|| format!("loading {}", tpath.display()))?;
            Ok(Data {
                train: Arc::new(full),
                test: Some(test),
            })
        }
        None if cfg.split.train_fraction >= 1.0 => Ok(Data {
            train: Arc::new(full),
            test: None,
        }),
        None => {
            let (train, test) = split_train_test(&full, cfg.split.train_fraction, cfg.split.seed)?;
            Ok(Data {
                train: Arc::new(train),
                test: Some(test),
            })
        }
    }
}

pub fn build_problem(train: &Arc<Dataset>, p: &ProblemConfig) -> Result<VarianceRegProblem> {
    let loss = match p.loss {
        LossName::Logistic => {
            if p.alpha_trunc.is_some() {
                bail!("alpha_trunc is only used with loss = \"truncated\"");
            }
            LossKind::Logistic
        }
        LossName::Truncated => LossKind::TruncatedLogistic {
            alpha: p
                .alpha_trunc
                .unwrap_or_else(|| VarianceRegProblem::default_alpha(train.n())),
        },
    };
    Ok(VarianceRegProblem::new(Arc::clone(train), p.lambda, loss)?)
}

pub struct RunOutcome {
    pub records: Vec<TraceRecord>,
    pub inner: Vec<InnerRecord>,
    /// Final model, if the solver finished.
    pub model: Option<Vec<f64>>,
    pub details: Map<String, Value>,
    pub warnings: Vec<String>,
    pub error: Option<Error>,
}

impl RunOutcome {
    /// `"ok"`, `"diverged"` or `"failed"`.
    pub fn status(&self) -> &'static str {
        match &self.error {
            None => "ok",
            Some(Error::NonFinite { .. }) => "diverged",
            Some(_) => "failed",
        }
    }

    /// Errors caused by the configuration rather than the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self.error,
            Some(
                Error::InvalidConfig(_)
                    | Error::ModeDomainMismatch { .. }
                    | Error::Infeasible
                    | Error::TooFewSamples { .. }
            )
        )
    }
}

fn rule(r: RuleName) -> StepRule {
    match r {
        RuleName::Smooth => StepRule::Smooth,
        RuleName::Nonsmooth => StepRule::Nonsmooth,
    }
}

/// Runs the selected solver from `x = 0`. Solver errors are captured in the
/// outcome together with the records logged before them.
pub fn execute(
    spec: &SolverSpec,
    problem: &VarianceRegProblem,
    data: &Data,
    seed: u64,
    log_every: usize,
    dense_trace: bool,
) -> Result<RunOutcome> {
    let eval = Evaluator::new(problem).with_data(&data.train, data.test.as_ref());
    let mut rec = Recorder::new(spec.solver.name(), eval, log_every);
    let x1 = vec![0.0; problem.data().dim()];
    let n = problem.n();
    let mut details = Map::new();
    let mut warnings = Vec::new();
    let mut inner = Vec::new();

    let result: infproj::Result<Vec<f64>> = match spec.solver {
        SolverKind::StSpg => {
            let s = &spec.st_spg;
            let mut cfg = StSpgConfig::new(s.stages, s.gamma, s.mu);
            cfg.alpha_samp = s.alpha_samp;
            cfg.schedule = s
                .fixed_iterations
                .map_or(StageSchedule::Linear, StageSchedule::Fixed);
            cfg.rule_x = rule(s.rule_x);
            cfg.rule_y = rule(s.rule_y);
            cfg.sampling = s.batch_size.map_or(Sampling::Full, Sampling::MiniBatch);
            cfg.mode = s.mode.map(|m| match m {
                ModeName::Dc => SubproblemMode::DcLinearized,
                ModeName::Biconvex => SubproblemMode::BiConvex,
            });
            cfg.seed = seed;
            cfg.diagnostic = s.diagnostic;
            cfg.dense_trace = dense_trace;
            st_spg_recorded(problem, &x1, s.y1, &cfg, &mut rec).map(|out| {
                details.insert("tau".into(), json!(out.tau));
                details.insert("y_last".into(), json!(out.y_last));
                details.insert("y_tau_next".into(), json!(out.y_tau_next));
                details.insert("x_tau_next".into(), json!(out.x_tau_next));
                inner = out.inner;
                out.x_last
            })
        }
        SolverKind::Mspg => {
            let s = &spec.mspg;
            let d_y = match s.d_y {
                Some(d) => d,
                None => 10.0 * problem.mean_loss(&x1)?,
            };
            let constants = SmoothConstants::variance(problem, d_y);
            let cfg = MspgConfig {
                iterations: s.iterations,
                c: s.c,
                b: s.b,
                l_override: s.l_override,
                batch_cap: s.batch_cap.unwrap_or(n),
                seed,
            };
            mspg_recorded(problem, &x1, s.y1, &constants, &cfg, &mut rec, false).map(|out| {
                details.insert("tau".into(), json!(out.tau));
                details.insert("x_tau".into(), json!(out.x_tau));
                details.insert("y_tau".into(), json!(out.y_tau));
                details.insert("y_last".into(), json!(out.y_last));
                details.insert("L".into(), json!(out.l));
                details.insert("eta".into(), json!(out.eta));
                details.insert("d_y".into(), json!(d_y));
                details.insert("full_batch_from".into(), json!(out.full_batch_from));
                details.insert("bridge_violations".into(), json!(out.bridge_violations));
                out.x_last
            })
        }
        SolverKind::Bmd => {
            let s = &spec.bmd;
            let rho = resolve_rho(&s.rho, n)?;
            let cfg = BmdConfig {
                eta_theta: s.eta_theta,
                eta_p: s.eta_p,
                rho,
                iterations: s.iterations,
                batch_size: s.batch_size,
                seed,
            };
            bmd_minmax_recorded(problem, &x1, &cfg, &mut rec).map(|out| {
                details.insert("rho".into(), json!(rho));
                details.insert("dual_seconds".into(), json!(out.dual_seconds));
                details.insert(
                    "dual_seconds_per_iter".into(),
                    json!(out.dual_seconds / out.iterations as f64),
                );
                if let Some(p) = &out.dual {
                    details.insert("divergence".into(), json!(p.divergence()));
                }
                out.theta
            })
        }
        SolverKind::SgdErm => {
            let s = &spec.sgd_erm;
            if problem.lambda() != 0.0 {
                let w = format!(
                    "sgd_erm ignores lambda = {} during training; it only enters the reported objective",
                    problem.lambda()
                );
                log::warn!("{w}");
                warnings.push(w);
            }
            let cfg = SgdConfig {
                step: s.step,
                iterations: s.iterations,
                batch_size: s.batch_size,
                seed,
            };
            sgd_erm_recorded(problem, &x1, &cfg, &mut rec).map(|out| out.theta)
        }
    };

    let (model, error) = match result {
        Ok(x) => (Some(x), None),
        Err(e) => (None, Some(e)),
    };
    Ok(RunOutcome {
        records: rec.into_records(),
        inner,
        model,
        details,
        warnings,
        error,
    })
}

/// `{objective_F, grad_norm, train_error, test_error}` at `x`.
pub fn final_metrics(problem: &VarianceRegProblem, data: &Data, x: &[f64]) -> Result<Value> {
    let eval = Evaluator::new(problem).with_data(&data.train, data.test.as_ref());
    let (f, g, train, test) = eval.metrics(x)?;
    Ok(json!({
        "objective_F": finite_or_null(f),
        "grad_norm": finite_or_null(g),
        "train_error": finite_or_null(train),
        "test_error": finite_or_null(test),
    }))
}

pub fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}
