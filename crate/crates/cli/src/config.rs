//! JSON run and bench configurations.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// libsvm file; relative paths resolve against the config file.
    pub path: PathBuf,
    /// Separate test file. When present no split is made.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub subsample: Option<SubsampleConfig>,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleConfig {
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default = "one")]
    pub seed: u64,
}

impl SubsampleConfig {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        match (self.count, self.fraction) {
            (Some(c), None) => Ok(c),
            (None, Some(f)) if f > 0.0 && f <= 1.0 => {
                Ok(((n as f64) * f).round().max(1.0) as usize)
            }
            (None, Some(f)) => bail!("subsample fraction {f} not in (0, 1]"),
            _ => bail!("subsample needs exactly one of `count` and `fraction`"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: default_train_fraction(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    StSpg,
    Mspg,
    Bmd,
    SgdErm,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::StSpg => "st_spg",
            SolverKind::Mspg => "mspg",
            SolverKind::Bmd => "bmd",
            SolverKind::SgdErm => "sgd_erm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Logistic,
    Truncated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "one_f")]
    pub lambda: f64,
    #[serde(default = "default_loss")]
    pub loss: LossName,
    /// Truncation level; `n^{1/2}` of the training set when absent.
    #[serde(default)]
    pub alpha_trunc: Option<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            lambda: 1.0,
            loss: LossName::Logistic,
            alpha_trunc: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Smooth,
    Nonsmooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Dc,
    Biconvex,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StSpgSection {
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "one_f")]
    pub gamma: f64,
    #[serde(default = "one_f")]
    pub mu: f64,
    #[serde(default = "one_f")]
    pub alpha_samp: f64,
    /// Same inner budget for every stage instead of `⌈k/γ⌉ + 1`.
    #[serde(default)]
    pub fixed_iterations: Option<usize>,
    #[serde(default = "smooth")]
    pub rule_x: RuleName,
    #[serde(default = "smooth")]
    pub rule_y: RuleName,
    /// Mini-batch size; exact full-batch oracles when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub mode: Option<ModeName>,
    #[serde(default)]
    pub diagnostic: bool,
    #[serde(default)]
    pub y1: f64,
}

impl Default for StSpgSection {
    fn default() -> Self {
        from_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MspgSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_b")]
    pub b: usize,
    /// Defaults to the training-set size.
    #[serde(default)]
    pub batch_cap: Option<usize>,
    #[serde(default)]
    pub l_override: Option<f64>,
    /// y-domain radius; ten times the mean loss at the start when absent.
    #[serde(default)]
    pub d_y: Option<f64>,
    #[serde(default)]
    pub y1: f64,
}

impl Default for MspgSection {
    fn default() -> Self {
        from_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmdSection {
    #[serde(default = "default_step")]
    pub eta_theta: f64,
    #[serde(default = "default_eta_p")]
    pub eta_p: f64,
    /// A number, or `"n*<factor>"` scaled by the training-set size, where
    /// the factor may be written `10^j`.
    #[serde(default = "default_rho")]
    pub rho: Value,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl Default for BmdSection {
    fn default() -> Self {
        from_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl Default for SgdSection {
    fn default() -> Self {
        from_empty()
    }
}

/// Solver choice plus the hyperparameter sections. Only the selected
/// solver's section is read.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub solver: SolverKind,
    #[serde(default)]
    pub st_spg: StSpgSection,
    #[serde(default)]
    pub mspg: MspgSection,
    #[serde(default)]
    pub bmd: BmdSection,
    #[serde(default)]
    pub sgd_erm: SgdSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOutputs {
    #[serde(default = "default_trace")]
    pub trace: PathBuf,
    #[serde(default = "default_timing")]
    pub timing: PathBuf,
    #[serde(default = "default_summary")]
    pub summary: PathBuf,
    #[serde(default = "default_inner")]
    pub inner: PathBuf,
}

impl Default for RunOutputs {
    fn default() -> Self {
        from_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub solver: SolverKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub st_spg: StSpgSection,
    #[serde(default)]
    pub mspg: MspgSection,
    #[serde(default)]
    pub bmd: BmdSection,
    #[serde(default)]
    pub sgd_erm: SgdSection,
    #[serde(default = "one_usize")]
    pub log_every: usize,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub outputs: RunOutputs,
}

impl RunConfig {
    pub fn spec(&self) -> SolverSpec {
        SolverSpec {
            solver: self.solver,
            st_spg: self.st_spg.clone(),
            mspg: self.mspg.clone(),
            bmd: self.bmd.clone(),
            sgd_erm: self.sgd_erm.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOutputs {
    #[serde(default = "default_bench_csv")]
    pub csv: PathBuf,
    #[serde(default = "default_bench_svg")]
    pub svg: PathBuf,
    #[serde(default = "default_bench_summary")]
    pub summary: PathBuf,
}

impl Default for BenchOutputs {
    fn default() -> Self {
        from_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default = "one_usize")]
    pub log_every: usize,
    /// Solver entries; each may carry a `grid` object mapping a field to a
    /// list or a `10^{a:b}` range, expanded into one run per combination.
    pub solvers: Vec<Value>,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub outputs: BenchOutputs,
}

/// One expanded bench run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEntry {
    #[serde(default)]
    pub name: Option<String>,
    pub solver: SolverKind,
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub st_spg: StSpgSection,
    #[serde(default)]
    pub mspg: MspgSection,
    #[serde(default)]
    pub bmd: BmdSection,
    #[serde(default)]
    pub sgd_erm: SgdSection,
}

impl BenchEntry {
    pub fn spec(&self) -> SolverSpec {
        SolverSpec {
            solver: self.solver,
            st_spg: self.st_spg.clone(),
            mspg: self.mspg.clone(),
            bmd: self.bmd.clone(),
            sgd_erm: self.sgd_erm.clone(),
        }
    }
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Resolves `p` against the directory holding the config file.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses `rho` given the training-set size.
pub fn resolve_rho(v: &Value, n: usize) -> Result<f64> {
    let rho = match v {
        Value::Number(x) => x
            .as_f64()
            .ok_or_else(|| anyhow!("rho is not a finite number"))?,
        Value::String(s) => {
            let s = s.replace(' ', "");
            match s.strip_prefix("n*") {
                Some(factor) => n as f64 * parse_scalar(factor)?,
                None => parse_scalar(&s)?,
            }
        }
        other => bail!("rho must be a number or a string like \"n*10^-3\", got {other}"),
    };
    if !(rho > 0.0 && rho.is_finite()) {
        bail!("rho {rho} must be positive");
    }
    Ok(rho)
}

/// A float or `10^j`.
fn parse_scalar(s: &str) -> Result<f64> {
    if let Some(exp) = s.strip_prefix("10^") {
        let exp = exp.trim_matches(|c| c == '{' || c == '}');
        let j: f64 = exp
            .parse()
            .with_context(|| format!("bad exponent in {s:?}"))?;
        return Ok(10f64.powf(j));
    }
    s.parse::<f64>()
        .with_context(|| format!("bad number {s:?}"))
}

/// Expands a grid value: a JSON list, a single scalar, or a string such as
/// `"10^{-5:2}"` / `"{10^{-5:2}}"` (every integer power in the range).
pub fn expand_grid_values(v: &Value) -> Result<Vec<Value>> {
    match v {
        Value::Array(items) if !items.is_empty() => Ok(items.clone()),
        Value::Array(_) => bail!("empty grid list"),
        Value::String(s) => {
            let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            let inner = s
                .strip_prefix('{')
                .and_then(|t| t.strip_suffix('}'))
                .unwrap_or(&s);
            let range = inner
                .strip_prefix("10^{")
                .and_then(|t| t.strip_suffix('}'))
                .ok_or_else(|| anyhow!("grid string {s:?} is not of the form 10^{{a:b}}"))?;
            let (a, b) = range
                .split_once(':')
                .ok_or_else(|| anyhow!("grid range {range:?} needs a:b"))?;
            let a: i32 = a
                .parse()
                .with_context(|| format!("bad grid start in {s:?}"))?;
            let b: i32 = b
                .parse()
                .with_context(|| format!("bad grid end in {s:?}"))?;
            if a > b {
                bail!("grid range {s:?} is empty");
            }
            Ok((a..=b).map(|j| Value::from(10f64.powi(j))).collect())
        }
        other => Ok(vec![other.clone()]),
    }
}

/// Expands one bench solver entry into its grid combinations. Grid keys
/// name a field of the entry's solver section (`"gamma"`) or a dotted path
/// from the entry root (`"problem.lambda"`).
pub fn expand_entry(entry: &Value) -> Result<Vec<BenchEntry>> {
    let mut base = entry.clone();
    let obj = base
        .as_object_mut()
        .ok_or_else(|| anyhow!("solver entry must be an object"))?;
    let grid = obj.remove("grid");
    let solver = obj
        .get("solver")
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow!("solver entry needs a `solver` name"))?
        .to_string();
    let label = obj
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or(&solver)
        .to_string();

    let axes: Vec<(String, Vec<Value>)> = match grid {
        None => Vec::new(),
        Some(Value::Object(m)) => m
            .iter()
            .map(|(k, v)| Ok((k.clone(), expand_grid_values(v)?)))
            .collect::<Result<_>>()?,
        Some(_) => bail!("`grid` must be an object"),
    };

    let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }

    let mut out = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut e = base.clone();
        let mut tags = Vec::new();
        for (key, v) in &combo {
            let path: Vec<&str> = if key.contains('.') {
                key.split('.').collect()
            } else {
                vec![&solver, key]
            };
            set_path(&mut e, &path, v.clone())?;
            tags.push(format!("{key}={}", compact(v)));
        }
        if !tags.is_empty() {
            e["name"] = Value::from(format!("{label}[{}]", tags.join(",")));
        }
        let parsed: BenchEntry =
            serde_json::from_value(e).with_context(|| format!("invalid solver entry {label:?}"))?;
        out.push(parsed);
    }
    Ok(out)
}

fn set_path(root: &mut Value, path: &[&str], v: Value) -> Result<()> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| anyhow!("grid path {} crosses a non-object", path.join(".")))?;
        if i + 1 == path.len() {
            obj.insert((*key).to_string(), v);
            return Ok(());
        }
        cur = obj
            .entry((*key).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    bail!("empty grid key")
}

fn compact(v: &Value) -> String {
    match v {
        Value::Number(x) => match x.as_f64() {
            Some(f) => format!("{f}"),
            None => x.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn echo<T: Serialize>(cfg: &T) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

pub fn sort_keys(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<_, _> = m.iter().map(|(k, v)| (k.clone(), sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

fn from_empty<T: serde::de::DeserializeOwned>() -> T {
    serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
}

fn one() -> u64 {
    1
}
fn one_usize() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_loss() -> LossName {
    LossName::Logistic
}
fn smooth() -> RuleName {
    RuleName::Smooth
}
fn default_stages() -> usize {
    50
}
fn default_iterations() -> usize {
    1000
}
fn default_c() -> f64 {
    0.25
}
fn default_b() -> usize {
    8
}
fn default_step() -> f64 {
    0.1
}
fn default_eta_p() -> f64 {
    1e-3
}
fn default_rho() -> Value {
    Value::from("n*10^-3")
}
fn default_batch() -> usize {
    64
}
fn default_trace() -> PathBuf {
    "trace.csv".into()
}
fn default_timing() -> PathBuf {
    "timing.csv".into()
}
fn default_summary() -> PathBuf {
    "summary.json".into()
}
fn default_inner() -> PathBuf {
    "inner.csv".into()
}
fn default_bench_csv() -> PathBuf {
    "bench.csv".into()
}
fn default_bench_svg() -> PathBuf {
    "bench.svg".into()
}
fn default_bench_summary() -> PathBuf {
    "bench_summary.json".into()
}
