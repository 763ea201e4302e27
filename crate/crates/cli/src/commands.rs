use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hmlab_core::dynamics::{Checkpoint, Evolution};
use hmlab_core::fields::{make_dual_data, make_reflective_dual_data, make_spin_data, SigmaKind};
use hmlab_core::monodromy::{default_lambdas, default_time_lambdas, scan, TransportScheme};
use hmlab_core::{
    charges, evolve, run_suite, sensitivity, Axis, Check, CheckKind, ConservationReport, Criterion, DualGrid, Error,
    EvolutionConfig, FlowGrid, FlowKind, GridSpec, Orientation, SpinDataKind, SpinGrid, Suite, SuiteOptions,
    SuiteReport, SENSITIVITY_EPS, C64,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BoundaryConfig, CommandName, RunConfig};
use crate::output::{write_atomic, write_json};

pub const VERIFY_FILE: &str = "verify.json";
pub const SIMULATE_FILE: &str = "simulate.json";
pub const CONSERVATION_FILE: &str = "conservation_report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const REPORT_FILE: &str = "report.json";

// ---------------------------------------------------------------- verify

/// A suite result without wall-clock data, so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub criterion: Criterion,
    pub perturbation: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl From<&SuiteReport> for SuiteOutcome {
    fn from(r: &SuiteReport) -> Self {
        SuiteOutcome {
            suite: r.suite,
            criterion: r.criterion,
            perturbation: r.perturbation,
            passed: r.passed(),
            checks: r.checks.iter().filter(|c| c.kind != CheckKind::Budget).cloned().collect(),
            series: r.series.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub command: CommandName,
    pub seed: u64,
    pub samples: usize,
    pub perturb_r_matrix: bool,
    pub suites: Vec<SuiteOutcome>,
    pub sensitivity: Option<Vec<Check>>,
    pub failing: Vec<String>,
    pub passed: bool,
}

/// `--only` accepts a comma-separated list of suite names, `identities`, or `all`.
pub fn select_suites(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<Suite>> {
    let Some(only) = only else {
        return Ok(cfg.suites.clone().unwrap_or_else(|| Suite::IDENTITIES.to_vec()));
    };
    let mut out = Vec::new();
    for name in only.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "all" => out.extend(Suite::ALL),
            "identities" => out.extend(Suite::IDENTITIES),
            _ => out.push(name.parse::<Suite>().map_err(|_| anyhow::anyhow!("unknown suite `{name}`"))?),
        }
    }
    if out.is_empty() {
        bail!("--only names no suite");
    }
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|s| seen.insert(*s));
    Ok(out)
}

pub fn verify(cfg: &RunConfig, only: Option<&str>, out_dir: &Path) -> Result<bool> {
    let suites = select_suites(cfg, only)?;
    let base = SuiteOptions {
        seed: cfg.seed,
        samples: cfg.samples,
        perturbation: 0.0,
        tolerances: cfg.tolerances.clone(),
    };
    let reports = suites
        .par_iter()
        .map(|&s| {
            let mut o = base.clone();
            if cfg.perturb_r_matrix && s.uses_r_matrix() {
                o.perturbation = SENSITIVITY_EPS;
            }
            run_suite(s, &o).with_context(|| format!("suite {s}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let sens = if cfg.sensitivity {
        Some(
            suites
                .par_iter()
                .map(|&s| sensitivity(s, &base).with_context(|| format!("sensitivity of {s}")))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let mut failing: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.suite.to_string()).collect();
    if let Some(checks) = &sens {
        failing.extend(checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()));
    }
    for r in &reports {
        println!("{} {:<18} residual {:.3e}", if r.passed() { "PASS" } else { "FAIL" }, r.suite.name(), r.residual());
        for c in r.failing() {
            eprintln!("  {}: {} = {:.16e} (threshold {:.3e})", r.suite, c.name, c.value, c.threshold);
        }
    }
    for c in sens.iter().flatten() {
        println!("{} {:<32} {:.3e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value);
    }

    let output = VerifyOutput {
        command: CommandName::Verify,
        seed: cfg.seed,
        samples: cfg.samples,
        perturb_r_matrix: cfg.perturb_r_matrix,
        suites: reports.iter().map(SuiteOutcome::from).collect(),
        sensitivity: sens,
        passed: failing.is_empty(),
        failing: failing.clone(),
    };
    write_json(&out_dir.join(VERIFY_FILE), &output)?;
    let timings: BTreeMap<String, serde_json::Value> = reports
        .iter()
        .map(|r| {
            let budget: Vec<&Check> = r.checks.iter().filter(|c| c.kind == CheckKind::Budget).collect();
            (r.suite.to_string(), serde_json::json!({ "seconds": r.seconds, "budgets": budget }))
        })
        .collect();
    write_json(&out_dir.join(TIMINGS_FILE), &timings)?;
    if !failing.is_empty() {
        eprintln!("failing suites: {}", failing.join(", "));
    }
    Ok(output.passed)
}

// ---------------------------------------------------------------- grids

/// Spin data for `hm`; spin plus auxiliary fields for every other flow.
enum Grid {
    Spin(SpinGrid),
    Dual(DualGrid),
}

fn build_grid(cfg: &RunConfig) -> Result<Grid> {
    let spec = cfg.grid_spec()?;
    let c = cfg.c();
    let d = &cfg.data;
    if cfg.flow == FlowKind::Hm {
        if matches!(cfg.boundary, BoundaryConfig::Reflective {}) {
            bail!("reflective boundary data is built for grids with auxiliary fields; use a dual flow");
        }
        return Ok(Grid::Spin(make_spin_data(spec, c, d.spin, cfg.seed, d.amplitude)?));
    }
    if matches!(cfg.boundary, BoundaryConfig::Reflective {}) {
        if spec.is_periodic() {
            bail!("the reflective boundary mode needs an open grid");
        }
        // The reflective builder draws both fields from the same low modes.
        let (sig_amp, modes) = match (d.sigma, d.spin) {
            (SigmaKind::Random { amplitude, modes }, _) => (amplitude, modes),
            (_, SpinDataKind::FourierRandom { modes }) => (0.0, modes),
            _ => (0.0, 3),
        };
        return Ok(Grid::Dual(make_reflective_dual_data(spec, c, cfg.seed, d.amplitude, sig_amp, modes)?));
    }
    Ok(Grid::Dual(make_dual_data(spec, c, d.spin, d.sigma, cfg.seed, d.amplitude)?))
}

fn orientation(spec: &GridSpec) -> Orientation {
    match spec.axis {
        Axis::Space => Orientation::Space,
        Axis::Time => Orientation::Time,
    }
}

fn lambdas(cfg: &RunConfig, spec: &GridSpec) -> Vec<C64> {
    cfg.lambdas.clone().unwrap_or_else(|| match spec.axis {
        Axis::Space => default_lambdas(),
        Axis::Time => default_time_lambdas(),
    })
}

fn open_boundary(cfg: &RunConfig, spec: &GridSpec) -> Result<Option<(hmlab_core::BoundaryParams, hmlab_core::BoundaryParams)>> {
    match (spec.is_periodic(), cfg.boundary.params()) {
        (true, _) => Ok(None),
        (false, Some(b)) => Ok(Some(b)),
        (false, None) => bail!("open grids need boundary matrices (boundary.mode `reflective` or `custom`)"),
    }
}

// ---------------------------------------------------------------- charges, scan

pub fn charges_table(cfg: &RunConfig, out_dir: &Path) -> Result<bool> {
    let spec = cfg.grid_spec()?;
    let bnd = open_boundary(cfg, &spec)?;
    let b = bnd.as_ref().map(|(p, m)| (p, m));
    let o = orientation(&spec);
    let series = match build_grid(cfg)? {
        Grid::Spin(g) => charges(&g, o, cfg.convention, cfg.charges_order(), b),
        Grid::Dual(g) => charges(&g, o, cfg.convention, cfg.charges_order(), b),
    }
    .context("computing charges")?;
    let path = out_dir.join("charges.csv");
    write_atomic(&path, series.to_csv().as_bytes())?;
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn scan_table(cfg: &RunConfig, out_dir: &Path) -> Result<bool> {
    let spec = cfg.grid_spec()?;
    let bnd = open_boundary(cfg, &spec)?;
    let b = bnd.as_ref().map(|(p, m)| (p, m));
    let ls = lambdas(cfg, &spec);
    let o = orientation(&spec);
    let scheme = TransportScheme::Richardson { sub: 1 };
    let s = match build_grid(cfg)? {
        Grid::Spin(g) => scan(&g, &ls, o, cfg.convention, b, scheme),
        Grid::Dual(g) => scan(&g, &ls, o, cfg.convention, b, scheme),
    }
    .context("transfer scan")?;
    let path = out_dir.join("scan.csv");
    write_atomic(&path, s.to_csv().as_bytes())?;
    println!("wrote {}", path.display());
    Ok(true)
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub command: CommandName,
    pub flow: FlowKind,
    pub seed: u64,
    pub grid: GridSpec,
    pub checks: Vec<Check>,
    pub violation: Option<Violation>,
    pub passed: bool,
}

trait Snapshot: FlowGrid {
    fn csv(&self) -> String;
}

impl Snapshot for SpinGrid {
    fn csv(&self) -> String {
        self.to_csv()
    }
}

impl Snapshot for DualGrid {
    fn csv(&self) -> String {
        self.to_csv()
    }
}

fn evolution_config(cfg: &RunConfig, spec: &GridSpec) -> Result<EvolutionConfig> {
    let mut e = EvolutionConfig::with_span(cfg.flow, spec.spacing(), cfg.span);
    if let Some(h) = cfg.step {
        if !(h.is_finite() && h > 0.0) {
            bail!("step must be positive, got {h}");
        }
        e.n_steps = (cfg.span / h).ceil().max(1.0) as usize;
        e.step = cfg.span / e.n_steps as f64;
    }
    e.stride = e.n_steps.div_ceil(cfg.checkpoints).max(1);
    e.convention = cfg.convention;
    e.monitors.charges = Some(cfg.charges_order());
    e.monitors.transfer_scan = Some(lambdas(cfg, spec));
    e.monitors.boundary = if spec.is_periodic() { None } else { cfg.boundary.params() };
    e.keep_snapshots = cfg.snapshots;
    e.perturbation = cfg.perturbation;
    Ok(e)
}

/// Default thresholds: the HM flow is checked more tightly than the
/// first-order dual flows.
fn checks(cfg: &RunConfig, r: &ConservationReport) -> Vec<Check> {
    let hm = cfg.flow == FlowKind::Hm;
    let mut out = Vec::new();
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, |a, b| a.max(if b.is_finite() { b } else { f64::INFINITY }));
    let mut push = |name: &str, value: f64, default: f64| {
        out.push(Check::new(name, CheckKind::Residual, value, cfg.tolerance(name, default)));
    };
    push("casimir_drift", max(&mut r.casimir_drift.iter().copied()), 1e-10);
    if let Some(ch) = &r.charges {
        let v = max(&mut ch.iter().filter(|d| d.k >= 0).map(|d| d.relative_drift));
        push("charge_drift", v, if hm { 1e-8 } else { 1e-6 });
    }
    if let Some(t) = &r.transfer_scan {
        push("transfer_drift", t.max, if hm { 1e-6 } else { 1e-5 });
    }
    if let Some(b) = &r.boundary_residuals {
        push("boundary_residual", b.max.0.max(b.max.1), 1e-6);
    }
    out
}

fn trajectory_csv(checkpoints: &[Checkpoint]) -> String {
    let first = &checkpoints[0];
    let mut out = String::from("step,time");
    for j in 0..first.casimir_deviation.len() {
        let _ = write!(out, ",casimir_{j}");
    }
    if let Some(ch) = &first.charges {
        for (k, _) in &ch.values {
            let _ = write!(out, ",g{k}_re,g{k}_im");
        }
    }
    if let Some(t) = &first.transfer {
        for j in 0..t.len() {
            let _ = write!(out, ",t{j}_re,t{j}_im");
        }
    }
    if first.boundary_residuals.is_some() {
        out.push_str(",boundary_plus,boundary_minus");
    }
    out.push('\n');
    for c in checkpoints {
        let _ = write!(out, "{},{:.16e}", c.step, c.time);
        for d in &c.casimir_deviation {
            let _ = write!(out, ",{d:.16e}");
        }
        for (_, v) in c.charges.iter().flat_map(|ch| ch.values.iter()) {
            let _ = write!(out, ",{:.16e},{:.16e}", v.re, v.im);
        }
        for v in c.transfer.iter().flatten() {
            let _ = write!(out, ",{:.16e},{:.16e}", v.re, v.im);
        }
        if let Some((p, m)) = c.boundary_residuals {
            let _ = write!(out, ",{p:.16e},{m:.16e}");
        }
        out.push('\n');
    }
    out
}

fn run_flow<G: Snapshot>(g: &G, cfg: &RunConfig, out_dir: &Path) -> Result<(Vec<Check>, Option<Violation>)> {
    let e = evolution_config(cfg, g.spec())?;
    let ev: Evolution<G> = match evolve(g, cfg.flow, &e) {
        Ok(ev) => ev,
        Err(err @ Error::BoundaryViolation { .. }) => {
            return Ok((Vec::new(), Some(Violation { kind: "boundary".into(), message: err.to_string() })));
        }
        Err(err @ Error::Instability { .. }) => {
            return Ok((Vec::new(), Some(Violation { kind: "instability".into(), message: err.to_string() })));
        }
        Err(err) => return Err(err).context("evolution"),
    };
    write_json(&out_dir.join(CONSERVATION_FILE), &ev.report)?;
    write_atomic(&out_dir.join("trajectory.csv"), trajectory_csv(&ev.report.checkpoints).as_bytes())?;
    for (i, (_, snap)) in ev.snapshots.iter().enumerate() {
        write_atomic(&out_dir.join("snapshots").join(format!("snapshot_{i:04}.csv")), snap.csv().as_bytes())?;
    }
    Ok((checks(cfg, &ev.report), None))
}

pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<bool> {
    let spec = cfg.grid_spec()?;
    let (checks, violation) = match build_grid(cfg)? {
        Grid::Spin(g) => run_flow(&g, cfg, out_dir)?,
        Grid::Dual(g) => run_flow(&g, cfg, out_dir)?,
    };
    let passed = violation.is_none() && checks.iter().all(|c| c.passed);
    for c in &checks {
        println!("{} {:<18} {:.3e} (threshold {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    if let Some(v) = &violation {
        eprintln!("VIOLATION {}: {}", v.kind, v.message);
    }
    let output = SimulateOutput {
        command: CommandName::Simulate,
        flow: cfg.flow,
        seed: cfg.seed,
        grid: spec,
        checks,
        violation,
        passed,
    };
    write_json(&out_dir.join(SIMULATE_FILE), &output)?;
    Ok(passed)
}
