//! Batch driver behind the `cvarbound` binary: argument parsing, record
//! building, schema validation and deterministic JSON/CSV output.
//!
//! Every command yields a manifest (what was run, with every derived sample
//! size and the formula it came from) and a flat list of records. Floats are
//! written with 17 significant digits, so equal runs produce equal bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::estimation::{
    certified_trials, certify_tight_lower, certify_uniform, cvar_deviation_trials, epsilon_trials, g_trials, h_trials,
    n_delta_for_certify_tight, n_delta_for_certify_uniform, n_delta_for_epsilon, n_delta_for_g, n_delta_for_h,
    BinGrid, CertifiedBound, CertifiedStudy, ProposalQ0, RolloutConfig, ViolationRate,
};
use crate::pomdp::{enumerate_return_distribution, enumerate_trajectory_expectations, EnumerationOptions, Model};
use crate::problem::Problem;
use crate::risk::ConfidenceLevel;
use crate::scenarios::builtin;
use crate::value::{q_exact, ExactAnalysis, ValueQuery};

/// Version of the manifest and record layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Malformed arguments, problem files or parameters.
    pub const INVALID_INPUT: i32 = 2;
    /// The enumeration budget was exceeded, or another computation could not
    /// be carried out (degenerate particle weights, impossible observation).
    pub const BUDGET: i32 = 3;
    /// A requested bound case is inapplicable for the estimates obtained.
    pub const INAPPLICABLE: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "cvarbound", version, about = "CVaR value bounds for POMDP policies under simplified models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact return distributions, envelopes and closed-form bounds.
    Enumerate(EnumerateArgs),
    /// Certified bounds from rollouts and importance-sampled estimates.
    Certify(CertifyArgs),
    /// Repeated trials measuring how often a guarantee is violated.
    Concentration(ConcentrationArgs),
    /// Writes a built-in scenario as a problem file.
    ExportScenario(ExportArgs),
}

impl Command {
    /// Shared options of an analysis command.
    pub fn common(&self) -> Option<&Common> {
        match self {
            Command::Enumerate(a) => Some(&a.common),
            Command::Certify(a) => Some(&a.common),
            Command::Concentration(a) => Some(&a.common),
            Command::ExportScenario(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Guarantee {
    CvarDeviation,
    Epsilon,
    G,
    H,
    Certified,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "problem", required_unless_present = "problem")]
    pub scenario: Option<String>,
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// First action; defaults to the policy's action at the initial belief.
    #[arg(long)]
    pub action: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "CVARBOUND_WORKERS")]
    pub workers: Option<usize>,
    /// Maximum number of enumerated leaves.
    #[arg(long, default_value_t = crate::pomdp::DEFAULT_BUDGET)]
    pub budget: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.25, 0.5, 0.9])]
    pub alpha: Vec<f64>,
    /// Also report the uniform bounds with the enumerated return range.
    #[arg(long)]
    pub enumerated_support: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub v: f64,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Simplified-model rollouts `C` (sample size `n` for cvar_deviation).
    #[arg(long, default_value_t = 500)]
    pub rollouts: usize,
    /// Particles `Nx` per belief.
    #[arg(long, default_value_t = 64)]
    pub particles: usize,
    /// Delta-belief draws: a count or `auto` for the smallest admissible one.
    #[arg(long, default_value = "auto")]
    pub ndelta: String,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25])]
    pub alpha: Vec<f64>,
    /// Also enumerate the exact value for comparison.
    #[arg(long)]
    pub with_exact: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConcentrationArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_enum)]
    pub guarantee: Guarantee,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25])]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    pub trials: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed run, with the exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BudgetExceeded { .. }
            | Error::DegenerateWeights
            | Error::ImpossibleObservation { .. }
            | Error::UnsupportedBelief(_) => exit::BUDGET,
            Error::InapplicableCase(_) | Error::UndefinedBound(_) => exit::INAPPLICABLE,
            _ => exit::INVALID_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: String) -> RunError {
    RunError {
        code: exit::INVALID_INPUT,
        message,
    }
}

/// Manifest plus records of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub manifest: Map<String, Value>,
    pub records: Vec<Map<String, Value>>,
    /// Exit code once the output is written: `OK`, or `INAPPLICABLE` when a
    /// certified lower bound could not be formed.
    pub status: i32,
}

/// Required keys per record type, beyond `record_type` itself.
pub const RECORD_SCHEMA: &[(&str, &[&str])] = &[
    (
        "bound_report",
        &[
            "alpha",
            "q_true",
            "q_simplified",
            "lower_uniform",
            "upper_uniform",
            "lower_tight",
            "epsilon",
            "upper_case",
            "lower_case",
            "sandwich_ok",
        ],
    ),
    ("trajectory_summary", &["first_action", "first_cost", "epsilon"]),
    ("return_atom", &["model", "value", "probability"]),
    ("envelope_point", &["l", "g", "cdf_gap"]),
    ("delta_estimates", &["n_delta", "b_bound", "epsilon_hat"]),
    (
        "certified_bound",
        &["kind", "value", "alpha", "delta", "radius", "n_delta_used", "n_delta_required", "c_used", "nx_used"],
    ),
    ("omitted_bound", &["kind", "alpha", "reason", "inapplicable"]),
    ("exact_value", &["alpha", "q_true"]),
    (
        "violation_rate",
        &["guarantee", "event", "trials", "violations", "delta", "frequency", "binomial_p_value", "frequency_pass"],
    ),
    ("check", &["name", "failures"]),
];

/// Required manifest keys.
pub const MANIFEST_SCHEMA: &[&str] = &["schema_version", "command", "source", "seed", "parameters"];

/// Checks a report against the embedded schema.
pub fn validate(report: &Report) -> std::result::Result<(), String> {
    for key in MANIFEST_SCHEMA {
        if !report.manifest.contains_key(*key) {
            return Err(format!("manifest is missing '{key}'"));
        }
    }
    for (i, r) in report.records.iter().enumerate() {
        let ty = r
            .get("record_type")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("record {i} has no record_type"))?;
        let required = RECORD_SCHEMA
            .iter()
            .find(|(name, _)| *name == ty)
            .map(|(_, keys)| *keys)
            .ok_or_else(|| format!("record {i} has unknown type '{ty}'"))?;
        for key in required {
            if !r.contains_key(*key) {
                return Err(format!("record {i} ({ty}) is missing '{key}'"));
            }
        }
        if let Some((k, _)) = r.iter().find(|(_, v)| v.is_object() || v.is_array()) {
            return Err(format!("record {i} ({ty}) has nested field '{k}'"));
        }
    }
    Ok(())
}

/// Flattens nested objects and arrays into dotted keys.
fn flatten(prefix: &str, value: Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(a) => {
            for (i, v) in a.into_iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, out);
            }
        }
        v => {
            out.insert(prefix.to_string(), v);
        }
    }
}

fn record(record_type: &str, body: impl Serialize) -> Map<String, Value> {
    let mut out = Map::new();
    out.insert("record_type".into(), Value::String(record_type.into()));
    flatten("", serde_json::to_value(body).expect("records serialize"), &mut out);
    out
}

/// 17 significant digits; integers stay integers, non-finite values are null.
pub fn format_number(n: &serde_json::Number) -> String {
    if n.is_f64() {
        let x = n.as_f64().expect("f64 number");
        format!("{x:.16e}")
    } else {
        n.to_string()
    }
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |d: usize| "  ".repeat(d);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&format_number(n)),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(x, indent + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            out.push_str("{\n");
            for (i, (k, x)) in m.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push_str(": ");
                write_value(x, indent + 1, out);
                out.push_str(if i + 1 < m.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// `{"manifest": ..., "records": [...]}` with fixed float formatting.
pub fn to_json(report: &Report) -> String {
    let doc = json!({
        "manifest": Value::Object(report.manifest.clone()),
        "records": report.records.iter().cloned().map(Value::Object).collect::<Vec<_>>(),
    });
    let mut out = String::new();
    write_value(&doc, 0, &mut out);
    out.push('\n');
    out
}

fn csv_cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::Number(n)) => format_number(n),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

/// One CSV row per record; columns are `record_type` and then the union of
/// all other keys in sorted order.
pub fn to_csv(report: &Report) -> String {
    let keys: BTreeSet<&str> = report
        .records
        .iter()
        .flat_map(|r| r.keys().map(String::as_str))
        .filter(|k| *k != "record_type")
        .collect();
    let header: Vec<&str> = std::iter::once("record_type").chain(keys).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in &report.records {
        w.write_record(header.iter().map(|k| csv_cell(r.get(*k)))).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

struct Loaded {
    problem: Problem,
    source: Value,
}

fn load(common: &Common) -> std::result::Result<Loaded, RunError> {
    match (&common.scenario, &common.problem) {
        (Some(name), None) => Ok(Loaded {
            problem: builtin(name)?.problem,
            source: json!({ "scenario": name }),
        }),
        (None, Some(path)) => Ok(Loaded {
            problem: Problem::load(path)?,
            source: json!({ "problem": path.display().to_string() }),
        }),
        _ => Err(invalid("give exactly one of --scenario and --problem".into())),
    }
}

fn levels(alphas: &[f64]) -> std::result::Result<Vec<ConfidenceLevel>, RunError> {
    if alphas.is_empty() {
        return Err(invalid("--alpha needs at least one value".into()));
    }
    Ok(alphas.iter().map(|&a| ConfidenceLevel::new(a)).collect::<crate::Result<_>>()?)
}

fn query(problem: &Problem, action: Option<usize>, alpha: ConfidenceLevel) -> ValueQuery {
    ValueQuery {
        belief: problem.pair.original().initial_belief(),
        action,
        alpha,
    }
}

fn manifest(command: &str, source: Value, common: &Common, parameters: Value) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("command".into(), json!(command));
    m.insert("source".into(), source);
    m.insert("seed".into(), json!(common.seed));
    m.insert("out".into(), json!(common.out.as_ref().map(|p| p.display().to_string())));
    m.insert("parameters".into(), parameters);
    m
}

/// A sample size together with the rule that produced it.
#[derive(Debug, Clone, Serialize)]
struct SampleSize {
    value: u64,
    /// `derived` when computed from the rule, `explicit` when given.
    mode: &'static str,
    /// Which guarantee the requirement comes from.
    rule: &'static str,
    required: u64,
    formula: String,
}

fn resolve_ndelta(
    arg: &str,
    rule: &'static str,
    required: u64,
    formula: String,
) -> std::result::Result<SampleSize, RunError> {
    let value = if arg == "auto" {
        required
    } else {
        arg.parse::<u64>()
            .map_err(|_| invalid(format!("--ndelta must be a count or 'auto', got '{arg}'")))?
    };
    Ok(SampleSize {
        value,
        mode: if arg == "auto" { "derived" } else { "explicit" },
        rule,
        required,
        formula,
    })
}

fn run_enumerate(args: &EnumerateArgs) -> std::result::Result<Report, RunError> {
    let Loaded { problem, source } = load(&args.common)?;
    let alphas = levels(&args.alpha)?;
    let opts = EnumerationOptions {
        budget: args.common.budget,
    };
    let b = problem.pair.original().initial_belief();
    let analysis = ExactAnalysis::new(&problem.pair, &problem.policy, &b, args.common.action, &[], opts)?;
    let e = &analysis.expectations;
    let mut records = vec![record(
        "trajectory_summary",
        json!({
            "first_action": e.first_action,
            "first_cost": e.first_cost,
            "epsilon": e.epsilon,
            "per_step_m": e.per_step_m,
            "atoms_original": analysis.dist_original.len(),
            "atoms_simplified": analysis.dist_simplified.len(),
        }),
    )];
    for (model, dist) in [("original", &analysis.dist_original), ("simplified", &analysis.dist_simplified)] {
        records.extend(dist.atoms().iter().map(|&(value, probability)| {
            record("return_atom", json!({ "model": model, "value": value, "probability": probability }))
        }));
    }
    for (&l, &g) in analysis.grid.iter().zip(&e.g_values) {
        let cdf_gap = (analysis.dist_original.cdf(l) - analysis.dist_simplified.cdf(l)).abs();
        records.push(record("envelope_point", json!({ "l": l, "g": g, "cdf_gap": cdf_gap })));
    }
    for &a in &alphas {
        records.push(record("bound_report", &analysis.report(a, args.enumerated_support)?));
    }
    Ok(Report {
        manifest: manifest(
            "enumerate",
            source,
            &args.common,
            json!({
                "alpha": args.alpha,
                "action": args.common.action,
                "budget": args.common.budget,
                "enumerated_support": args.enumerated_support,
            }),
        ),
        records,
        status: exit::OK,
    })
}

fn bound_record(b: &CertifiedBound) -> Map<String, Value> {
    record("certified_bound", b)
}

fn horizon(problem: &Problem) -> (usize, usize, f64) {
    let p = problem.pair.original();
    (p.horizon_t(), p.start_k(), p.return_bound())
}

fn run_certify(args: &CertifyArgs) -> std::result::Result<Report, RunError> {
    let Loaded { problem, source } = load(&args.common)?;
    let alphas = levels(&args.alpha)?;
    let s = &args.sampling;
    let opts = EnumerationOptions {
        budget: args.common.budget,
    };
    let (t, k, rb) = horizon(&problem);
    let b = problem.pair.original().initial_belief();
    let q0 = ProposalQ0::build(&problem.pair, &problem.policy, &b, args.common.action, opts)?;
    let bb = q0.b_bound();
    let grid = BinGrid::for_return_range(rb, s.bins)?;
    let nu = resolve_ndelta(
        &s.ndelta,
        "uniform_certificate",
        n_delta_for_certify_uniform(s.v, s.delta, bb, t, k)?,
        "ceil(-8 B^2 ln((delta/2) / (4 (T-k))) / (v / (T-k))^2)".into(),
    )?;
    let nt = resolve_ndelta(
        &s.ndelta,
        "tight_certificate",
        n_delta_for_certify_tight(s.eta, s.delta, bb, t, k, s.bins)?,
        "ceil(-ln(((delta/4) / I) / m / 2) 2 B^2 / (eta / m)^2), m = T-1-k".into(),
    )?;
    let config = RolloutConfig::new(s.rollouts, s.particles, args.common.seed)?;
    let mut records = Vec::new();
    let mut status = exit::OK;
    for &a in &alphas {
        let q = query(&problem, args.common.action, a);
        let uniform = certify_uniform(&problem.pair, &problem.policy, &q, &config, &q0, nu.value, s.v, s.delta)?;
        if records.is_empty() {
            let est = &uniform.estimates;
            records.push(record(
                "delta_estimates",
                json!({
                    "n_delta": est.n_delta,
                    "b_bound": est.b_bound,
                    "epsilon_hat": est.epsilon_hat,
                    "m_hat": est.m_hat,
                    "g_hat_steps": est.g_hat.breakpoints().len(),
                }),
            ));
        }
        records.extend(uniform.bounds.iter().map(bound_record));
        for o in &uniform.omitted {
            if o.inapplicable {
                status = exit::INAPPLICABLE;
            }
            let mut r = record("omitted_bound", o);
            r.insert("alpha".into(), json!(a.value()));
            records.push(r);
        }
        let tight = certify_tight_lower(
            &problem.pair,
            &problem.policy,
            &q,
            &config,
            &q0,
            nt.value,
            s.eta,
            s.delta,
            &grid,
        )?;
        let mut r = bound_record(&tight.bound);
        r.insert("f_hat_atoms".into(), json!(tight.f_hat.len()));
        records.push(r);
        if args.with_exact {
            let q_true = q_exact(&problem.pair, &problem.policy, &q, Model::Original, opts)?;
            records.push(record("exact_value", json!({ "alpha": a.value(), "q_true": q_true })));
        }
    }
    Ok(Report {
        manifest: manifest(
            "certify",
            source,
            &args.common,
            json!({
                "alpha": args.alpha,
                "action": args.common.action,
                "delta": s.delta,
                "v": s.v,
                "eta": s.eta,
                "rollouts": s.rollouts,
                "particles": s.particles,
                "bins": s.bins,
                "b_bound": bb,
                "n_delta_uniform": nu,
                "n_delta_tight": nt,
            }),
        ),
        records,
        status,
    })
}

fn rate_records(rates: &[ViolationRate], alpha: Option<f64>) -> Vec<Map<String, Value>> {
    rates
        .iter()
        .map(|r| {
            let mut rec = record("violation_rate", r);
            if let Some(a) = alpha {
                rec.insert("alpha".into(), json!(a));
            }
            rec
        })
        .collect()
}

fn run_concentration(args: &ConcentrationArgs) -> std::result::Result<Report, RunError> {
    let Loaded { problem, source } = load(&args.common)?;
    let alphas = levels(&args.alpha)?;
    let s = &args.sampling;
    let opts = EnumerationOptions {
        budget: args.common.budget,
    };
    let (t, k, rb) = horizon(&problem);
    let (pair, policy) = (&problem.pair, &problem.policy);
    let b = pair.original().initial_belief();
    let action = args.common.action;
    let seed = args.common.seed;
    let mut records = Vec::new();
    let mut sizes = Map::new();
    let needs_q0 = !matches!(args.guarantee, Guarantee::CvarDeviation);
    let q0 = if needs_q0 {
        Some(ProposalQ0::build(pair, policy, &b, action, opts)?)
    } else {
        None
    };
    let grid = BinGrid::for_return_range(rb, s.bins)?;
    match args.guarantee {
        _ if args.trials == 0 => {}
        Guarantee::CvarDeviation => {
            let dist = enumerate_return_distribution(pair, policy, &b, action, Model::Original, opts)?;
            for &a in &alphas {
                let rates = cvar_deviation_trials(&dist, s.rollouts, a, s.delta, args.trials, seed)?;
                records.extend(rate_records(&rates, Some(a.value())));
            }
        }
        Guarantee::Epsilon | Guarantee::G | Guarantee::H => {
            let q0 = q0.as_ref().expect("built above");
            let bb = q0.b_bound();
            let exact = enumerate_trajectory_expectations(pair, policy, &b, action, &[], opts)?;
            let n = match args.guarantee {
                Guarantee::Epsilon => resolve_ndelta(
                    &s.ndelta,
                    "epsilon_estimate",
                    n_delta_for_epsilon(s.v, s.delta, bb, t, k)?,
                    "ceil(-8 B^2 ln(delta / (4 m)) / (v / m)^2), m = T-1-k".into(),
                )?,
                Guarantee::G => resolve_ndelta(
                    &s.ndelta,
                    "g_estimate",
                    n_delta_for_g(s.v, s.delta, bb, t, k)?,
                    "ceil(-ln((delta / m) / 2) 2 B^2 / (v / m)^2), m = T-1-k".into(),
                )?,
                _ => resolve_ndelta(
                    &s.ndelta,
                    "binned_envelope",
                    n_delta_for_h(s.v, s.delta, bb, t, k, s.bins)?,
                    "ceil(-ln(((delta / I) / m) / 2) 2 B^2 / (v / m)^2), m = T-1-k".into(),
                )?,
            };
            match args.guarantee {
                Guarantee::Epsilon => {
                    let r = epsilon_trials(q0, exact.epsilon, n.value, s.v, s.delta, args.trials, seed)?;
                    records.extend(rate_records(&[r], None));
                }
                Guarantee::G => {
                    let rates =
                        g_trials(q0, &exact.envelope, grid.edges(), n.value, s.v, s.delta, args.trials, seed)?;
                    records.extend(rate_records(&rates, None));
                }
                _ => {
                    let study = h_trials(q0, &exact.envelope, &grid, n.value, s.v, s.delta, args.trials, seed)?;
                    records.extend(rate_records(&study.rates, None));
                    records.push(record(
                        "check",
                        json!({ "name": "h_minus_le_h_plus", "failures": study.ordering_failures }),
                    ));
                }
            }
            sizes.insert("n_delta".into(), json!(n));
        }
        Guarantee::Certified => {
            let q0 = q0.as_ref().expect("built above");
            let bb = q0.b_bound();
            let nu = resolve_ndelta(
                &s.ndelta,
                "uniform_certificate",
                n_delta_for_certify_uniform(s.v, s.delta, bb, t, k)?,
                "ceil(-8 B^2 ln((delta/2) / (4 (T-k))) / (v / (T-k))^2)".into(),
            )?;
            let nt = resolve_ndelta(
                &s.ndelta,
                "tight_certificate",
                n_delta_for_certify_tight(s.eta, s.delta, bb, t, k, s.bins)?,
                "ceil(-ln(((delta/4) / I) / m / 2) 2 B^2 / (eta / m)^2), m = T-1-k".into(),
            )?;
            let study = CertifiedStudy {
                rollouts: s.rollouts,
                particles: s.particles,
                v: s.v,
                eta: s.eta,
                delta: s.delta,
                n_delta_uniform: nu.value,
                n_delta_tight: nt.value,
                grid: grid.clone(),
            };
            for &a in &alphas {
                let q = query(&problem, action, a);
                let q_true = q_exact(pair, policy, &q, Model::Original, opts)?;
                let out = certified_trials(pair, policy, &q, q_true, q0, &study, args.trials, seed)?;
                records.extend(rate_records(&out.rates, Some(a.value())));
                let mut c = record("check", json!({ "name": "f_hat_valid", "failures": out.invalid_f_hat }));
                c.insert("alpha".into(), json!(a.value()));
                records.push(c);
                let mut c = record("check", json!({ "name": "lower_bound_applicable", "failures": out.inapplicable }));
                c.insert("alpha".into(), json!(a.value()));
                records.push(c);
            }
            sizes.insert("n_delta_uniform".into(), json!(nu));
            sizes.insert("n_delta_tight".into(), json!(nt));
        }
    }
    let mut parameters = json!({
        "guarantee": args.guarantee,
        "alpha": args.alpha,
        "action": action,
        "trials": args.trials,
        "delta": s.delta,
        "v": s.v,
        "eta": s.eta,
        "rollouts": s.rollouts,
        "particles": s.particles,
        "bins": s.bins,
    });
    if let Some(q0) = &q0 {
        parameters["b_bound"] = json!(q0.b_bound());
    }
    for (key, value) in sizes {
        parameters[key.as_str()] = value;
    }
    Ok(Report {
        manifest: manifest("concentration", source, &args.common, parameters),
        records,
        status: exit::OK,
    })
}

fn pool(workers: Option<usize>) -> std::result::Result<rayon::ThreadPool, RunError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(invalid("--workers must be at least 1".into()));
        }
        b = b.num_threads(w);
    }
    b.build().map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Runs an analysis command on its own worker pool.
pub fn build_report(command: &Command) -> std::result::Result<Report, RunError> {
    let common = command
        .common()
        .ok_or_else(|| invalid("export-scenario produces no report".into()))?;
    let report = pool(common.workers)?.install(|| match command {
        Command::Enumerate(a) => run_enumerate(a),
        Command::Certify(a) => run_certify(a),
        Command::Concentration(a) => run_concentration(a),
        Command::ExportScenario(_) => unreachable!("rejected above"),
    })?;
    validate(&report).map_err(|m| RunError {
        code: exit::BUDGET,
        message: format!("report failed schema validation: {m}"),
    })?;
    Ok(report)
}

/// Rendered output of a report in the requested format.
pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => to_json(report),
        Format::Csv => to_csv(report),
    }
}

fn write_out(path: Option<&PathBuf>, text: &str) -> std::result::Result<(), RunError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| invalid(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| invalid(format!("cannot write to stdout: {e}"))),
    }
}

/// Executes a parsed command line and returns the process exit code.
/// With CSV output to a file, the manifest goes to `<out>.manifest.json`.
pub fn run(cli: &Cli) -> std::result::Result<i32, RunError> {
    if let Command::ExportScenario(a) = &cli.command {
        let spec = builtin(&a.scenario)?;
        write_out(a.out.as_ref(), &spec.problem.to_json())?;
        return Ok(exit::OK);
    }
    let report = build_report(&cli.command)?;
    let common = cli.command.common().expect("analysis command");
    write_out(common.out.as_ref(), &render(&report, common.format))?;
    if let (Format::Csv, Some(out)) = (common.format, &common.out) {
        let mut path = out.clone().into_os_string();
        path.push(".manifest.json");
        let mut text = String::new();
        write_value(&Value::Object(report.manifest.clone()), 0, &mut text);
        text.push('\n');
        write_out(Some(&PathBuf::from(path)), &text)?;
    }
    Ok(report.status)
}

/// Column names of a CSV rendering, for consumers that need them.
pub fn csv_columns(report: &Report) -> Vec<String> {
    let mut cols: BTreeMap<&str, ()> = BTreeMap::new();
    for r in &report.records {
        for k in r.keys() {
            if k != "record_type" {
                cols.insert(k, ());
            }
        }
    }
    std::iter::once("record_type".to_string())
        .chain(cols.keys().map(|k| k.to_string()))
        .collect()
}
