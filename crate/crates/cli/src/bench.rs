//! `bench`: several solvers on shared data, long-format CSV and SVG chart.

use crate::chart::{self, Series};
use crate::config::{expand_entry, load_json, sort_keys, BenchConfig, BenchEntry};
use crate::runner::{self, Data, RunOutcome};
use crate::{config_dir, out_dir, EXIT_SOLVER};
use anyhow::{bail, Context, Result};
use infproj::trace::fmt_f64;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const BENCH_VERSION: &str = "# infproj-bench v1";

struct Finished {
    name: String,
    entry: BenchEntry,
    outcome: Result<RunOutcome>,
    final_metrics: Option<Value>,
}

pub fn cmd_bench(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    log_every: Option<usize>,
    parallel: bool,
    log_x: bool,
) -> Result<ExitCode> {
    let mut cfg: BenchConfig = load_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = log_every {
        cfg.log_every = k;
    }
    if cfg.solvers.is_empty() {
        bail!("bench config lists no solvers");
    }
    let mut entries = Vec::new();
    for e in &cfg.solvers {
        entries.extend(expand_entry(e)?);
    }
    let names = unique_names(&entries);

    let base = config_dir(config);
    let out = out_dir(out, cfg.out_dir.as_deref(), &base)?;
    let data = runner::load_data(&cfg.data, &base)?;

    let run_one = |entry: &BenchEntry| -> (Result<RunOutcome>, Option<Value>) {
        let problem_cfg = entry.problem.clone().unwrap_or_else(|| cfg.problem.clone());
        let problem = match runner::build_problem(&data.train, &problem_cfg) {
            Ok(p) => p,
            Err(e) => return (Err(e), None),
        };
        let outcome = runner::execute(
            &entry.spec(),
            &problem,
            &data,
            cfg.seed,
            cfg.log_every,
            false,
        );
        let metrics = match &outcome {
            Ok(o) => o
                .model
                .as_ref()
                .and_then(|x| runner::final_metrics(&problem, &data, x).ok()),
            Err(_) => None,
        };
        (outcome, metrics)
    };

    let results: Vec<(Result<RunOutcome>, Option<Value>)> = if parallel {
        log::warn!(
            "parallel bench: cpu_seconds include time from concurrent runs and are not comparable"
        );
        std::thread::scope(|s| {
            let handles: Vec<_> = entries.iter().map(|e| s.spawn(|| run_one(e))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench worker panicked"))
                .collect()
        })
    } else {
        entries.iter().map(run_one).collect()
    };

    let finished: Vec<Finished> = entries
        .into_iter()
        .zip(names)
        .zip(results)
        .map(|((entry, name), (outcome, final_metrics))| Finished {
            name,
            entry,
            outcome,
            final_metrics,
        })
        .collect();

    write_outputs(&cfg, &out, &data, &finished, parallel, log_x || cfg.log_x)?;

    let failed: Vec<&str> = finished
        .iter()
        .filter(|f| !matches!(&f.outcome, Ok(o) if o.error.is_none()))
        .map(|f| f.name.as_str())
        .collect();
    for f in &finished {
        match &f.outcome {
            Ok(o) => {
                for w in &o.warnings {
                    eprintln!("warning: {}: {w}", f.name);
                }
                match &o.error {
                    None => println!("{}: ok ({} records)", f.name, o.records.len()),
                    Some(e) => eprintln!("{}: {}: {e}", f.name, o.status()),
                }
            }
            Err(e) => eprintln!("{}: failed: {e:#}", f.name),
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("bench finished with failed runs: {}", failed.join(","));
        Ok(ExitCode::from(EXIT_SOLVER))
    }
}

fn unique_names(entries: &[BenchEntry]) -> Vec<String> {
    let base: Vec<String> = entries
        .iter()
        .map(|e| {
            e.name
                .clone()
                .unwrap_or_else(|| e.solver.name().to_string())
        })
        .collect();
    base.iter()
        .enumerate()
        .map(|(i, n)| {
            if base.iter().filter(|m| *m == n).count() > 1 {
                let k = base[..i].iter().filter(|m| *m == n).count() + 1;
                format!("{n}#{k}")
            } else {
                n.clone()
            }
        })
        .collect()
}

/// Long-format rows: one per (run, record, metric).
pub fn long_csv(runs: &[(String, &RunOutcome)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "solver",
        "stage_or_iter",
        "cpu_seconds",
        "metric",
        "value",
    ])?;
    for (name, o) in runs {
        for r in &o.records {
            let (it, cpu) = (r.stage_or_iter.to_string(), fmt_f64(r.cpu_seconds));
            let fixed = [
                ("objective_F", r.objective_f),
                ("grad_norm", r.grad_norm),
                ("train_error", r.train_error),
                ("test_error", r.test_error),
            ];
            let rest = r
                .extras
                .iter()
                .chain(&r.timings)
                .map(|(k, v)| (k.as_str(), *v));
            for (k, v) in fixed.into_iter().chain(rest) {
                w.write_record([name.as_str(), r.solver.as_str(), &it, &cpu, k, &fmt_f64(v)])?;
            }
        }
    }
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(format!("{BENCH_VERSION}\n{body}"))
}

/// Rebuilds the chart series from a long-format bench CSV, in run order.
pub fn parse_long_csv(text: &str) -> Result<Vec<Series>> {
    let body = text
        .strip_prefix(BENCH_VERSION)
        .and_then(|t| t.strip_prefix('\n'))
        .ok_or_else(|| anyhow::anyhow!("not an infproj bench CSV (missing {BENCH_VERSION:?})"))?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>()
        != [
            "run",
            "solver",
            "stage_or_iter",
            "cpu_seconds",
            "metric",
            "value",
        ]
    {
        bail!("unexpected bench CSV header");
    }
    let mut series: Vec<Series> = Vec::new();
    let mut last_key: Option<(String, String)> = None;
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let number = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .with_context(|| format!("bad number {:?} in bench CSV", field(i)))
        };
        let (run, cpu, value) = (field(0), number(3)?, number(5)?);
        if series.last().is_none_or(|s| s.name != run) {
            series.push(Series {
                name: run.to_string(),
                points: Vec::new(),
            });
            last_key = None;
        }
        let s = series.last_mut().expect("pushed above");
        let key = (field(2).to_string(), field(3).to_string());
        if last_key.as_ref() != Some(&key) {
            s.points.push((cpu, f64::NAN, f64::NAN));
            last_key = Some(key);
        }
        let p = s.points.last_mut().expect("pushed above");
        match field(4) {
            "train_error" => p.1 = value,
            "test_error" => p.2 = value,
            _ => {}
        }
    }
    Ok(series)
}

pub fn chart_from_csv(text: &str, log_x: bool) -> Result<String> {
    Ok(chart::render(&parse_long_csv(text)?, log_x))
}

fn write_outputs(
    cfg: &BenchConfig,
    out: &Path,
    data: &Data,
    finished: &[Finished],
    parallel: bool,
    log_x: bool,
) -> Result<()> {
    let ok_runs: Vec<(String, &RunOutcome)> = finished
        .iter()
        .filter_map(|f| f.outcome.as_ref().ok().map(|o| (f.name.clone(), o)))
        .collect();
    let csv_path = out.join(&cfg.outputs.csv);
    let long = long_csv(&ok_runs)?;
    std::fs::write(&csv_path, &long).with_context(|| format!("writing {}", csv_path.display()))?;

    let svg_path = out.join(&cfg.outputs.svg);
    std::fs::write(&svg_path, chart_from_csv(&long, log_x)?)
        .with_context(|| format!("writing {}", svg_path.display()))?;

    let runs: Vec<Value> = finished
        .iter()
        .map(|f| {
            let mut v = json!({
                "name": f.name,
                "solver": f.entry.solver.name(),
                "entry": sort_keys(&crate::config::echo(&f.entry)),
            });
            match &f.outcome {
                Ok(o) => {
                    v["status"] = json!(o.status());
                    v["records"] = json!(o.records.len());
                    v["cpu_seconds"] = json!(o.records.last().map_or(0.0, |r| r.cpu_seconds));
                    v["details"] = Value::Object(
                        o.details
                            .iter()
                            .filter(|(_, d)| !d.is_array())
                            .map(|(k, d)| (k.clone(), d.clone()))
                            .collect(),
                    );
                    v["warnings"] = json!(o.warnings);
                    if let Some(e) = &o.error {
                        v["error"] = json!(e.to_string());
                    }
                }
                Err(e) => {
                    v["status"] = json!("failed");
                    v["error"] = json!(format!("{e:#}"));
                }
            }
            if let Some(m) = &f.final_metrics {
                v["final"] = m.clone();
            }
            v
        })
        .collect();
    let summary = json!({
        "seed": cfg.seed,
        "n_train": data.train.n(),
        "n_test": data.test.as_ref().map_or(0, |t| t.n()),
        "parallel": parallel,
        "cpu_time_comparable": !parallel,
        "runs": runs,
        "config": sort_keys(&crate::config::echo(cfg)),
    });
    let sum_path = out.join(&cfg.outputs.summary);
    std::fs::write(&sum_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", sum_path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_run_names_survive() {
        let text = format!(
            "{BENCH_VERSION}\nrun,solver,stage_or_iter,cpu_seconds,metric,value\n\
             \"a[x=1,y=2]\",bmd,0,0,train_error,0.5\n\
             \"a[x=1,y=2]\",bmd,0,0,test_error,0.4\n"
        );
        let s = parse_long_csv(&text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].name, "a[x=1,y=2]");
        assert_eq!(s[0].points, vec![(0.0, 0.5, 0.4)]);
    }

    #[test]
    fn long_csv_rejects_foreign_header() {
        assert!(parse_long_csv("run,solver\n").is_err());
    }
}
