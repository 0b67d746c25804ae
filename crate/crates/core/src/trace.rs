//! Run traces: one record per logging event, CPU-time accounting that
//! excludes evaluation work, and the CSV encoding.
//!
//! Two files are produced per run. The trace file carries every deterministic
//! column, so repeated runs with the same seed produce identical bytes. Time
//! measurements (`cpu_seconds` and any `timings` entries) go to a companion
//! timing file keyed by `(solver, stage_or_iter)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::problem::InfProjection;
use crate::sparse::norm;

pub const TRACE_VERSION: &str = "# infproj-trace v1";
pub const TIMING_VERSION: &str = "# infproj-timing v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub solver: String,
    pub stage_or_iter: usize,
    pub cpu_seconds: f64,
    pub objective_f: f64,
    pub grad_norm: f64,
    /// NaN when the problem has no labelled data.
    pub train_error: f64,
    pub test_error: f64,
    /// Deterministic per-record values.
    pub extras: BTreeMap<String, f64>,
    /// Time-derived values (wall clock, per-phase CPU time).
    pub timings: BTreeMap<String, f64>,
}

fn clock_seconds(clock: libc::clockid_t) -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: clock_gettime only writes into the provided timespec.
    let rc = unsafe { libc::clock_gettime(clock, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

/// CPU time consumed by the whole process (all threads), in seconds.
///
/// Includes rayon workers, so parallel reductions are charged to the solver.
/// Concurrent unrelated work in the same process inflates it.
pub fn process_cpu_seconds() -> f64 {
    clock_seconds(libc::CLOCK_PROCESS_CPUTIME_ID)
}

/// CPU time consumed by the calling thread, in seconds.
pub fn thread_cpu_seconds() -> f64 {
    clock_seconds(libc::CLOCK_THREAD_CPUTIME_ID)
}

/// Accumulating CPU stopwatch.
#[derive(Debug, Clone)]
pub struct Stopwatch {
    accumulated: f64,
    started: Option<f64>,
}

impl Default for Stopwatch {
    fn default() -> Self {
        Self::new()
    }
}

impl Stopwatch {
    pub fn new() -> Self {
        Stopwatch {
            accumulated: 0.0,
            started: None,
        }
    }

    pub fn start(&mut self) {
        if self.started.is_none() {
            self.started = Some(process_cpu_seconds());
        }
    }

    pub fn stop(&mut self) {
        if let Some(s) = self.started.take() {
            self.accumulated += (process_cpu_seconds() - s).max(0.0);
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.accumulated
            + self
                .started
                .map_or(0.0, |s| (process_cpu_seconds() - s).max(0.0))
    }
}

/// Computes the metric columns of a [`TraceRecord`] for a model point.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub problem: &'a dyn InfProjection,
    pub train: Option<&'a Dataset>,
    pub test: Option<&'a Dataset>,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a dyn InfProjection) -> Self {
        Evaluator {
            problem,
            train: None,
            test: None,
        }
    }

    pub fn with_data(mut self, train: &'a Dataset, test: Option<&'a Dataset>) -> Self {
        self.train = Some(train);
        self.test = test;
        self
    }

    /// `(F(x), |∇F(x)|, train error, test error)`.
    pub fn metrics(&self, x: &[f64]) -> Result<(f64, f64, f64, f64)> {
        let f = self.problem.objective(x)?;
        let g = norm(&self.problem.full_gradient(x)?);
        let train = self.train.map_or(f64::NAN, |d| d.error_rate(x));
        let test = self.test.map_or(f64::NAN, |d| d.error_rate(x));
        Ok((f, g, train, test))
    }
}

/// Collects trace records during a solver run and keeps the CPU clock paused
/// while it evaluates.
pub struct Recorder<'a> {
    solver: String,
    eval: Evaluator<'a>,
    log_every: usize,
    clock: Stopwatch,
    wall: Instant,
    records: Vec<TraceRecord>,
}

impl<'a> Recorder<'a> {
    pub fn new(solver: impl Into<String>, eval: Evaluator<'a>, log_every: usize) -> Self {
        Recorder {
            solver: solver.into(),
            eval,
            log_every: log_every.max(1),
            clock: Stopwatch::new(),
            wall: Instant::now(),
            records: Vec::new(),
        }
    }

    /// A recorder that never logs, for runs without a trace.
    pub fn quiet(eval: Evaluator<'a>) -> Self {
        let mut r = Self::new("quiet", eval, 1);
        r.log_every = usize::MAX;
        r
    }

    pub fn solver(&self) -> &str {
        &self.solver
    }

    pub fn evaluator(&self) -> Evaluator<'a> {
        self.eval
    }

    /// Starts the CPU clock; call once when the solver loop begins.
    pub fn start(&mut self) {
        self.wall = Instant::now();
        self.clock.start();
    }

    pub fn pause(&mut self) {
        self.clock.stop();
    }

    pub fn resume(&mut self) {
        self.clock.start();
    }

    pub fn cpu_seconds(&self) -> f64 {
        self.clock.elapsed()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.wall.elapsed().as_secs_f64()
    }

    /// Whether iteration `it` falls on the logging grid.
    pub fn due(&self, it: usize) -> bool {
        self.log_every != usize::MAX && it.is_multiple_of(self.log_every)
    }

    /// Evaluates `x` and appends a record, with the clock paused.
    pub fn log(
        &mut self,
        it: usize,
        x: &[f64],
        extras: BTreeMap<String, f64>,
        mut timings: BTreeMap<String, f64>,
    ) -> Result<&TraceRecord> {
        self.clock.stop();
        let cpu = self.clock.elapsed();
        timings.insert("wall_seconds".into(), self.wall_seconds());
        let result = self.eval.metrics(x);
        self.clock.start();
        let (f, g, train, test) = result?;
        if !f.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite {
                what: "objective",
                iteration: it,
            });
        }
        self.records.push(TraceRecord {
            solver: self.solver.clone(),
            stage_or_iter: it,
            cpu_seconds: cpu,
            objective_f: f,
            grad_norm: g,
            train_error: train,
            test_error: test,
            extras,
            timings,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// Like [`Recorder::log`] for callers that already hold `F(x)` and
    /// `|∇F(x)|`; only the error rates are evaluated.
    pub fn log_known(
        &mut self,
        it: usize,
        x: &[f64],
        objective: f64,
        grad_norm: f64,
        extras: BTreeMap<String, f64>,
        mut timings: BTreeMap<String, f64>,
    ) -> Result<()> {
        self.clock.stop();
        let cpu = self.clock.elapsed();
        timings.insert("wall_seconds".into(), self.wall_seconds());
        let train = self.eval.train.map_or(f64::NAN, |d| d.error_rate(x));
        let test = self.eval.test.map_or(f64::NAN, |d| d.error_rate(x));
        self.clock.start();
        if !objective.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                what: "objective",
                iteration: it,
            });
        }
        self.records.push(TraceRecord {
            solver: self.solver.clone(),
            stage_or_iter: it,
            cpu_seconds: cpu,
            objective_f: objective,
            grad_norm,
            train_error: train,
            test_error: test,
            extras,
            timings,
        });
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small or
/// large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == 0.0 || (1e-4..1e15).contains(&v.abs()) || v.is_infinite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        _ => s.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad number '{s}'"),
        }),
    }
}

fn extra_keys<'r>(records: impl Iterator<Item = &'r BTreeMap<String, f64>>) -> Vec<String> {
    let mut keys: Vec<String> = records.flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Trace CSV: version line, header, one row per record. Extras are flattened
/// into sorted columns; a record without a given extra writes `nan`.
pub fn trace_csv(records: &[TraceRecord]) -> String {
    let keys = extra_keys(records.iter().map(|r| &r.extras));
    let mut out = String::new();
    out.push_str(TRACE_VERSION);
    out.push('\n');
    out.push_str("solver,stage_or_iter,objective_F,grad_norm,train_error,test_error");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.solver,
            r.stage_or_iter,
            fmt_f64(r.objective_f),
            fmt_f64(r.grad_norm),
            fmt_f64(r.train_error),
            fmt_f64(r.test_error)
        );
        for k in &keys {
            out.push(',');
            out.push_str(&fmt_f64(r.extras.get(k).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

/// Timing CSV: `solver,stage_or_iter,cpu_seconds` plus sorted timing columns.
pub fn timing_csv(records: &[TraceRecord]) -> String {
    let keys = extra_keys(records.iter().map(|r| &r.timings));
    let mut out = String::new();
    out.push_str(TIMING_VERSION);
    out.push('\n');
    out.push_str("solver,stage_or_iter,cpu_seconds");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{}",
            r.solver,
            r.stage_or_iter,
            fmt_f64(r.cpu_seconds)
        );
        for k in &keys {
            out.push(',');
            out.push_str(&fmt_f64(r.timings.get(k).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

type Table = (Vec<String>, Vec<(usize, Vec<String>)>);

fn split_table(text: &str, version: &str) -> Result<Table> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == version => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected '{version}'"),
            })
        }
    }
    let header: Vec<String> = lines
        .next()
        .ok_or(Error::Parse {
            line: 2,
            message: "missing header".into(),
        })?
        .1
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::to_string).collect::<Vec<_>>()))
        .collect::<Vec<_>>();
    for (line, row) in &rows {
        if row.len() != header.len() {
            return Err(Error::Parse {
                line: *line,
                message: "column count differs from header".into(),
            });
        }
    }
    Ok((header, rows))
}

/// Parses a trace CSV and, optionally, its timing companion. Extras that were
/// written as `nan` fill-ins are dropped.
pub fn parse_trace(trace: &str, timing: Option<&str>) -> Result<Vec<TraceRecord>> {
    let (header, rows) = split_table(trace, TRACE_VERSION)?;
    const FIXED: [&str; 6] = [
        "solver",
        "stage_or_iter",
        "objective_F",
        "grad_norm",
        "train_error",
        "test_error",
    ];
    if header.len() < 6 || header[..6] != FIXED {
        return Err(Error::Parse {
            line: 2,
            message: "unexpected trace header".into(),
        });
    }
    let mut records = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let mut extras = BTreeMap::new();
        for (k, v) in header[6..].iter().zip(&row[6..]) {
            let v = parse_f64(v, line)?;
            if !v.is_nan() {
                extras.insert(k.clone(), v);
            }
        }
        records.push(TraceRecord {
            solver: row[0].clone(),
            stage_or_iter: row[1].parse().map_err(|_| Error::Parse {
                line,
                message: "bad stage_or_iter".into(),
            })?,
            cpu_seconds: f64::NAN,
            objective_f: parse_f64(&row[2], line)?,
            grad_norm: parse_f64(&row[3], line)?,
            train_error: parse_f64(&row[4], line)?,
            test_error: parse_f64(&row[5], line)?,
            extras,
            timings: BTreeMap::new(),
        });
    }
    if let Some(timing) = timing {
        let (header, rows) = split_table(timing, TIMING_VERSION)?;
        if rows.len() != records.len() {
            return Err(Error::Parse {
                line: 0,
                message: "timing rows do not match trace rows".into(),
            });
        }
        for (rec, (line, row)) in records.iter_mut().zip(rows) {
            if row[0] != rec.solver || row[1] != rec.stage_or_iter.to_string() {
                return Err(Error::Parse {
                    line,
                    message: "timing row key mismatch".into(),
                });
            }
            rec.cpu_seconds = parse_f64(&row[2], line)?;
            for (k, v) in header[3..].iter().zip(&row[3..]) {
                let v = parse_f64(v, line)?;
                if !v.is_nan() {
                    rec.timings.insert(k.clone(), v);
                }
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(it: usize, cpu: f64) -> TraceRecord {
        let mut extras = BTreeMap::new();
        extras.insert("y".to_string(), 0.25 * it as f64);
        let mut timings = BTreeMap::new();
        timings.insert("wall_seconds".to_string(), cpu * 1.5);
        TraceRecord {
            solver: "st_spg".into(),
            stage_or_iter: it,
            cpu_seconds: cpu,
            objective_f: std::f64::consts::LN_2 / (it as f64 + 1.0),
            grad_norm: 1.234e-9,
            train_error: 0.25,
            test_error: 1.0 / 3.0,
            extras,
            timings,
        }
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![rec(0, 0.0), rec(5, 0.125), rec(10, 3.5e-7)];
        let t = trace_csv(&records);
        let c = timing_csv(&records);
        let back = parse_trace(&t, Some(&c)).unwrap();
        assert_eq!(back, records);
        assert!(t.starts_with(TRACE_VERSION));
        assert!(!t.contains("cpu_seconds"));
    }

    #[test]
    fn stopwatch_is_monotone() {
        let mut s = Stopwatch::new();
        s.start();
        let mut acc = 0u64;
        for i in 0..200_000u64 {
            acc = acc.wrapping_add(i * i);
        }
        std::hint::black_box(acc);
        let a = s.elapsed();
        s.stop();
        let b = s.elapsed();
        assert!(b >= a && a >= 0.0);
        assert_eq!(s.elapsed(), b);
    }

    #[test]
    fn formats_round_trip() {
        for v in [
            0.0,
            1e-300,
            -2.5e-7,
            0.1,
            123456.789,
            1e20,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
