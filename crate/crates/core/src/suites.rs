//! Named verification suites. Each suite runs one family of checks against
//! fixed thresholds and reports every measured value; the CLI and the
//! acceptance harness both drive these.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    cybe_residual_with, k_matrix, push_through_residual_with, r_matrix, reflection_residual_with, BoundaryParams, Mat2,
    Mat4, Side, C64, ONE, ZERO,
};
use crate::dynamics::{
    closure_at, dual_consistency_residual, evolve, open_boundary_closure, space_patch, time_patch, ConservationReport,
    EvolutionConfig, FlowKind,
};
use crate::error::{Error, Result};
use crate::fields::{
    integrate, make_dual_data, make_reflective_dual_data, make_spin_data, Axis, DualGrid, DualPoint, Field, FieldGrid,
    GridSpec, SigmaKind, SpinDataKind, SpinGrid, SpinPoint,
};
use crate::hierarchy::{
    base_u_generator_coeffs, charges, local_jets, open_generator_coeffs, printed_open_generator, printed_w_boundary,
    u_generator_coeffs, v_generator_coeffs, wz_recursion, Region,
};
use crate::lax::{zero_curvature_residual, Convention, PairKind};
use crate::monodromy::{default_lambdas, default_time_lambdas, Orientation};
use crate::poisson::{canonical_gradients, functional_bracket, gradient_bracket, jacobi_residual, BracketTable, GradientOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Cybe,
    Reflection,
    PushThrough,
    Jacobi,
    Canonical,
    Involution,
    ZSeries,
    Generators,
    HmConservation,
    DualConservation,
    ZeroCurvature,
    Duality,
    Boundary,
}

/// Acceptance criterion a suite contributes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Algebra,
    Poisson,
    Hierarchy,
    Conservation,
    ZeroCurvature,
    Duality,
    Boundary,
    Sensitivity,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::Algebra,
        Criterion::Poisson,
        Criterion::Hierarchy,
        Criterion::Conservation,
        Criterion::ZeroCurvature,
        Criterion::Duality,
        Criterion::Boundary,
        Criterion::Sensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Algebra => "algebra",
            Criterion::Poisson => "poisson",
            Criterion::Hierarchy => "hierarchy",
            Criterion::Conservation => "conservation",
            Criterion::ZeroCurvature => "zero_curvature",
            Criterion::Duality => "duality",
            Criterion::Boundary => "boundary",
            Criterion::Sensitivity => "sensitivity",
        }
    }

    /// Suites whose checks make up the criterion (sensitivity reruns all of them).
    pub fn suites(self) -> &'static [Suite] {
        match self {
            Criterion::Algebra => &[Suite::Cybe, Suite::Reflection, Suite::PushThrough],
            Criterion::Poisson => &[Suite::Jacobi, Suite::Canonical, Suite::Involution],
            Criterion::Hierarchy => &[Suite::ZSeries, Suite::Generators],
            Criterion::Conservation => &[Suite::HmConservation, Suite::DualConservation],
            Criterion::ZeroCurvature => &[Suite::ZeroCurvature],
            Criterion::Duality => &[Suite::Duality],
            Criterion::Boundary => &[Suite::Boundary],
            Criterion::Sensitivity => &Suite::ALL,
        }
    }
}

impl Suite {
    pub const ALL: [Suite; 13] = [
        Suite::Cybe,
        Suite::Reflection,
        Suite::PushThrough,
        Suite::Jacobi,
        Suite::Canonical,
        Suite::Involution,
        Suite::ZSeries,
        Suite::Generators,
        Suite::HmConservation,
        Suite::DualConservation,
        Suite::ZeroCurvature,
        Suite::Duality,
        Suite::Boundary,
    ];

    /// What `verify` runs when no suite is named.
    pub const IDENTITIES: [Suite; 7] = [
        Suite::Cybe,
        Suite::Reflection,
        Suite::PushThrough,
        Suite::Jacobi,
        Suite::Canonical,
        Suite::ZSeries,
        Suite::Generators,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Cybe => "cybe",
            Suite::Reflection => "reflection",
            Suite::PushThrough => "push_through",
            Suite::Jacobi => "jacobi",
            Suite::Canonical => "canonical",
            Suite::Involution => "involution",
            Suite::ZSeries => "z_series",
            Suite::Generators => "generators",
            Suite::HmConservation => "hm_conservation",
            Suite::DualConservation => "dual_conservation",
            Suite::ZeroCurvature => "zero_curvature",
            Suite::Duality => "duality",
            Suite::Boundary => "boundary",
        }
    }

    pub fn criterion(self) -> Criterion {
        match self {
            Suite::Cybe | Suite::Reflection | Suite::PushThrough => Criterion::Algebra,
            Suite::Jacobi | Suite::Canonical | Suite::Involution => Criterion::Poisson,
            Suite::ZSeries | Suite::Generators => Criterion::Hierarchy,
            Suite::HmConservation | Suite::DualConservation => Criterion::Conservation,
            Suite::ZeroCurvature => Criterion::ZeroCurvature,
            Suite::Duality => Criterion::Duality,
            Suite::Boundary => Criterion::Boundary,
        }
    }

    /// Whether the suite's fault is the perturbed r-matrix.
    pub fn uses_r_matrix(self) -> bool {
        matches!(self, Suite::Cybe | Suite::PushThrough)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().replace('-', "_").to_ascii_lowercase();
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == key)
            .ok_or_else(|| Error::Parse(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Passes when `value ≤ threshold`.
    Residual,
    /// Passes when `value ≥ threshold` (observed convergence orders).
    Order,
    /// Wall-clock budget in seconds; passes when `value ≤ threshold`.
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, kind: CheckKind, value: f64, threshold: f64) -> Check {
        let passed = value.is_finite()
            && match kind {
                CheckKind::Residual | CheckKind::Budget => value <= threshold,
                CheckKind::Order => value >= threshold,
            };
        Check { name: name.to_string(), kind, value, threshold, passed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub criterion: Criterion,
    pub perturbation: f64,
    pub seconds: f64,
    pub checks: Vec<Check>,
    /// Named measurements kept for the record but not thresholded.
    pub series: BTreeMap<String, Vec<f64>>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Largest residual-type value: the headline number for fault detection.
    pub fn residual(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.kind == CheckKind::Residual)
            .map(|c| if c.value.is_finite() { c.value } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random samples per identity check.
    pub samples: usize,
    /// Injected fault size; see [`run_suite`].
    pub perturbation: f64,
    /// Threshold overrides keyed by check name.
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 7, samples: 100, perturbation: 0.0, tolerances: BTreeMap::new() }
    }
}

/// Fault size used by the sensitivity checks, and the residual a fault must
/// produce to count as detected.
pub const SENSITIVITY_EPS: f64 = 1e-3;
pub const SENSITIVITY_FLOOR: f64 = 1e-4;

struct Recorder<'a> {
    opts: &'a SuiteOptions,
    checks: Vec<Check>,
    series: BTreeMap<String, Vec<f64>>,
}

impl Recorder<'_> {
    fn residual(&mut self, name: &str, value: f64, threshold: f64) {
        let t = self.opts.tolerances.get(name).copied().unwrap_or(threshold);
        self.checks.push(Check::new(name, CheckKind::Residual, value, t));
    }

    fn order(&mut self, name: &str, value: f64, threshold: f64) {
        let t = self.opts.tolerances.get(name).copied().unwrap_or(threshold);
        self.checks.push(Check::new(name, CheckKind::Order, value, t));
    }

    /// Records a refinement ladder and checks the smallest observed order.
    fn ladder(&mut self, name: &str, residuals: &[f64], min_order: f64) {
        self.series.insert(name.to_string(), residuals.to_vec());
        let orders: Vec<f64> = residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let worst = orders.iter().copied().fold(f64::INFINITY, f64::min);
        self.series.insert(format!("{name}_orders"), orders);
        self.order(&format!("{name}_order"), worst, min_order);
    }
}

/// Runs one suite. With `perturbation = ε ≠ 0` each suite injects its own
/// fault of size ε:
///
/// - cybe, push_through: `r(λ) + ε E₁₁`;
/// - reflection: `K(λ) + ε E₁₂`;
/// - jacobi, involution: the `{S_±, S_z}` and `{Σ_±, S_z}` table entries
///   rescaled by `1 + ε`;
/// - canonical: the equal-space table scaled by `1 + ε`;
/// - z_series, generators: recursion fed data rotated about z by `ε sin`,
///   oracle fed the original data;
/// - conservation, zero_curvature, duality, boundary runs: `ε c` added to
///   the `S_z` right-hand side; boundary matching: `δ± + ε`; closure:
///   `S′ + ε`.
pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rec = Recorder { opts, checks: Vec::new(), series: BTreeMap::new() };
    let eps = opts.perturbation;
    match suite {
        Suite::Cybe => cybe(&mut rec, eps)?,
        Suite::Reflection => reflection(&mut rec, eps)?,
        Suite::PushThrough => push_through(&mut rec, eps)?,
        Suite::Jacobi => jacobi(&mut rec, eps),
        Suite::Canonical => canonical(&mut rec, eps)?,
        Suite::Involution => involution(&mut rec, eps)?,
        Suite::ZSeries => z_series(&mut rec, eps)?,
        Suite::Generators => generators(&mut rec, eps)?,
        Suite::HmConservation => hm_conservation(&mut rec, eps)?,
        Suite::DualConservation => dual_conservation(&mut rec, eps)?,
        Suite::ZeroCurvature => zero_curvature(&mut rec, eps)?,
        Suite::Duality => duality(&mut rec, eps)?,
        Suite::Boundary => boundary(&mut rec, eps)?,
    }
    Ok(SuiteReport {
        suite,
        criterion: suite.criterion(),
        perturbation: eps,
        seconds: start.elapsed().as_secs_f64(),
        checks: rec.checks,
        series: rec.series,
    })
}

/// Reruns `suite` with an injected fault of [`SENSITIVITY_EPS`]; detected
/// when the suite fails with a residual of at least [`SENSITIVITY_FLOOR`].
pub fn sensitivity(suite: Suite, opts: &SuiteOptions) -> Result<Check> {
    let faulty = SuiteOptions { perturbation: SENSITIVITY_EPS, ..opts.clone() };
    let r = run_suite(suite, &faulty)?;
    let value = if r.passed() { 0.0 } else { r.residual() };
    Ok(Check::new(
        &format!("{}_fault_residual", suite.name()),
        CheckKind::Order,
        value,
        SENSITIVITY_FLOOR,
    ))
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

fn rc(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Spectral parameter in `[−2, 2]²` at least 0.2 away from the pole.
fn spectral(rng: &mut ChaCha8Rng) -> C64 {
    loop {
        let z = rc(rng) * 2.0;
        if z.norm() > 0.2 {
            return z;
        }
    }
}

fn random_params(rng: &mut ChaCha8Rng, side: Side) -> BoundaryParams {
    BoundaryParams::new(side, rc(rng) + 1.5, rc(rng), rc(rng), rc(rng))
}

/// Complex point with both Casimirs enforced.
fn random_dual(rng: &mut ChaCha8Rng, c: C64) -> DualPoint {
    let sp = rc(rng);
    let sz = rc(rng) * 0.5 + c;
    let sm = (c * c - sz * sz) / sp;
    let gp = rc(rng);
    let gz = rc(rng);
    let gm = -(sz * gz * 2.0 + sm * gp) / sp;
    DualPoint::new(SpinPoint::new(sp, sm, sz), gp, gm, gz)
}

fn perturbed_r(eps: f64) -> impl Fn(C64) -> Result<Mat4> {
    move |z| Ok(r_matrix(z)? + Mat4::unit(0, 0).scale(C64::new(eps, 0.0)))
}

fn cybe(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let mut rng = rng(rec.opts.seed, 1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < rec.opts.samples {
        let (l, m) = (spectral(&mut rng), spectral(&mut rng));
        if (l - m).norm() < 0.2 {
            continue;
        }
        worst = worst.max(cybe_residual_with(perturbed_r(eps), l, m)?);
        n += 1;
    }
    rec.residual("cybe_max_residual", worst, 1e-12);
    Ok(())
}

fn reflection(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let mut rng = rng(rec.opts.seed, 2);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < rec.opts.samples {
        let side = if n % 2 == 0 { Side::Plus } else { Side::Minus };
        let p = random_params(&mut rng, side);
        let (l, m) = (spectral(&mut rng), spectral(&mut rng));
        if (l - m).norm() < 0.2 || (l + m).norm() < 0.2 {
            continue;
        }
        let k = |z: C64| k_matrix(&p, z) + Mat2::unit(0, 1).scale(C64::new(eps, 0.0));
        worst = worst.max(reflection_residual_with(k, l, m)?);
        n += 1;
    }
    rec.residual("reflection_max_residual", worst, 1e-12);
    Ok(())
}

fn push_through(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let mut rng = rng(rec.opts.seed, 3);
    let r = perturbed_r(eps);
    let mut worst: f64 = 0.0;
    for _ in 0..rec.opts.samples {
        let m = Mat2::new(rc(&mut rng), rc(&mut rng), rc(&mut rng), rc(&mut rng));
        worst = worst.max(push_through_residual_with(&r(spectral(&mut rng))?, &m));
    }
    rec.residual("push_through_max_residual", worst, 1e-13);
    Ok(())
}

/// The equal-time and equal-space tables, with the `{S_±, S_z}` and
/// `{Σ_±, S_z}` entries rescaled by `1 + eps` (unequal rescalings break Jacobi).
fn tables(eps: f64) -> Result<(BracketTable, BracketTable)> {
    let mut et = BracketTable::equal_time();
    let mut es = BracketTable::equal_space();
    if eps != 0.0 {
        let s = C64::new(1.0 + eps, 0.0);
        let p = et.get(Field::SPlus, Field::SZ)?;
        et.set(Field::SPlus, Field::SZ, p.scale(s));
        let p = es.get(Field::SigmaPlus, Field::SZ)?;
        es.set(Field::SigmaPlus, Field::SZ, p.scale(s));
    }
    Ok((et, es))
}

fn jacobi(rec: &mut Recorder<'_>, eps: f64) {
    let mut rng = rng(rec.opts.seed, 4);
    let (et, es) = tables(eps).expect("both tables carry the rescaled entries");
    let (mut wt, mut ws): (f64, f64) = (0.0, 0.0);
    for _ in 0..rec.opts.samples {
        let p = random_dual(&mut rng, ONE);
        wt = wt.max(jacobi_residual(&et, &p));
        ws = ws.max(jacobi_residual(&es, &p));
    }
    rec.residual("jacobi_equal_time", wt, 1e-12);
    rec.residual("jacobi_equal_space", ws, 1e-12);
}

fn canonical(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let mut rng = rng(rec.opts.seed, 5);
    let es = scaled_table(BracketTable::equal_space(), eps)?;
    let cc = ONE;
    let mut worst: f64 = 0.0;
    for _ in 0..rec.opts.samples {
        let p = random_dual(&mut rng, cc);
        let gr = canonical_gradients(&p, cc)?;
        let b = |i: usize, j: usize| gradient_bracket(&es, &gr[i], &gr[j], &p);
        // {ψ₁, φ₁} = {ψ₂, φ₂} = 1, every other pair vanishes.
        let errs = [
            b(0, 1).norm(),
            b(2, 3).norm(),
            (b(0, 2) - 1.0).norm(),
            (b(1, 3) - 1.0).norm(),
            b(0, 3).norm(),
            b(1, 2).norm(),
        ];
        worst = errs.into_iter().fold(worst, f64::max);
    }
    rec.residual("canonical_max_error", worst, 1e-10);
    Ok(())
}

fn scaled_table(mut t: BracketTable, eps: f64) -> Result<BracketTable> {
    if eps != 0.0 {
        let fields = t.fields().to_vec();
        for &f in &fields {
            for &g in &fields {
                if let Ok(p) = t.get(f, g) {
                    t.set(f, g, p.scale(C64::new(1.0 + eps, 0.0)));
                }
            }
        }
    }
    Ok(t)
}

/// Refinement levels for the charge-involution brackets.
pub const INVOLUTION_LEVELS: [usize; 3] = [32, 64, 128];

/// The fault adds `eps ∫ sin(πx/L) S_z` to `G^(0)`, which breaks involution at O(eps).
fn involution(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let (et, es) = tables(0.0)?;
    let opts = GradientOptions::default();
    let seed = rec.opts.seed;
    let mut space = Vec::new();
    let mut time = Vec::new();
    for n in INVOLUTION_LEVELS {
        let spec = GridSpec::periodic(n, std::f64::consts::PI, Axis::Space)?;
        let g = make_spin_data(spec, ONE, SpinDataKind::FourierRandom { modes: 2 }, seed, 0.3)?;
        let q = |k: i32| {
            move |g: &SpinGrid| {
                let weighted: Vec<C64> = g.values.iter().zip(g.spec.coords()).map(|(p, x)| p.s_z * (std::f64::consts::PI * x / g.spec.half_length).sin()).collect();
                let fault = if k == 0 { integrate(&weighted, &g.spec) * eps } else { ZERO };
                charges(g, Orientation::Space, Convention::Paper, 1, None).map(|s| s.get(k).unwrap_or(ZERO) + fault)
            }
        };
        space.push(functional_bracket(&q(0), &q(1), &g, &et, opts)?.norm());

        let spec = GridSpec::periodic(n, 1.0, Axis::Time)?;
        let sigma = SigmaKind::Random { amplitude: 0.3, modes: 2 };
        let d = make_dual_data(spec, ONE, SpinDataKind::FourierRandom { modes: 2 }, sigma, seed, 0.3)?;
        let q = |k: i32| {
            move |g: &DualGrid| {
                let weighted: Vec<C64> = g.values.iter().zip(g.spec.coords()).map(|(p, x)| p.spin.s_z * (std::f64::consts::PI * x / g.spec.half_length).sin()).collect();
                let fault = if k == 0 { integrate(&weighted, &g.spec) * eps } else { ZERO };
                charges(g, Orientation::Time, Convention::Paper, 1, None).map(|s| s.get(k).unwrap_or(ZERO) + fault)
            }
        };
        time.push(functional_bracket(&q(0), &q(1), &d, &es, opts)?.norm());
    }
    rec.ladder("space_g0_g1", &space, 2.0);
    rec.ladder("time_g0_g1", &time, 2.0);
    rec.residual("space_g0_g1_finest", *space.last().unwrap(), 1e-5);
    rec.residual("time_g0_g1_finest", *time.last().unwrap(), 1e-5);
    Ok(())
}

/// Rotates the data about the z axis by `eps · sin(π x / L)`: both Casimirs
/// are kept, the fields change at O(eps).
fn rotate_spin(p: &SpinPoint, phi: f64) -> SpinPoint {
    let e = C64::from_polar(1.0, phi);
    SpinPoint::new(p.s_plus * e, p.s_minus / e, p.s_z)
}

fn rotated_spin_grid(g: &SpinGrid, eps: f64) -> SpinGrid {
    let mut out = g.clone();
    let l = g.spec.half_length;
    for (p, x) in out.values.iter_mut().zip(g.spec.coords()) {
        *p = rotate_spin(p, eps * (std::f64::consts::PI * x / l).sin());
    }
    out
}

fn rotated_dual_grid(g: &DualGrid, eps: f64) -> DualGrid {
    let mut out = g.clone();
    let l = g.spec.half_length;
    for (p, x) in out.values.iter_mut().zip(g.spec.coords()) {
        let phi = eps * (std::f64::consts::PI * x / l).sin();
        let e = C64::from_polar(1.0, phi);
        *p = DualPoint::new(rotate_spin(&p.spin, phi), p.sigma_plus * e, p.sigma_minus / e, p.sigma_z);
    }
    out
}

fn z_series(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let cc = ONE;
    let pi = std::f64::consts::PI;
    // A θ-only twist exercises Z^(1); a slow full winding makes Z^(0) nonzero.
    let grids = [
        (GridSpec::periodic(256, pi, Axis::Space)?, SpinDataKind::Twist { theta0: 0.8, winding: 0 }, 0.4),
        (GridSpec::periodic(256, 4.0 * pi, Axis::Space)?, SpinDataKind::Twist { theta0: 0.8, winding: 1 }, 0.1),
    ];
    let (mut w0, mut w1, mut wm1): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (spec, kind, amplitude) in grids {
        let g = make_spin_data(spec, cc, kind, 0, amplitude)?;
        let s = wz_recursion(&rotated_spin_grid(&g, eps), Orientation::Space, Convention::Paper, 1)?;
        let d = |f| g.derivative(f, 1);
        let (dp, dm, dz) = (d(Field::SPlus)?, d(Field::SMinus)?, d(Field::SZ)?);
        let z0: Vec<C64> = (0..g.len())
            .map(|i| {
                let p = g.values[i];
                (p.s_plus * dm[i] - dp[i] * p.s_minus) / ((cc + p.s_z) * cc * 4.0)
            })
            .collect();
        let z1: Vec<C64> = (0..g.len()).map(|i| -(dp[i] * dm[i] + dz[i] * dz[i]) / (cc * cc * cc * 4.0)).collect();
        let diag = |m: Mat2, v: C64| (m - Mat2::diag(v, -v)).max_norm();
        let z_at = |k| s.z_at(k).ok_or_else(|| Error::Index(format!("Z^({k})")));
        w0 = w0.max(diag(z_at(0)?, integrate(&z0, &spec)));
        w1 = w1.max(diag(z_at(1)?, integrate(&z1, &spec)));
        let q = charges(&g, Orientation::Space, Convention::Paper, 1, None)?;
        wm1 = wm1.max((q.get(-1).unwrap_or(ZERO) - cc * spec.half_length).norm());
    }
    rec.residual("space_z0", w0, 1e-8);
    rec.residual("space_z1", w1, 1e-8);
    rec.residual("space_g_minus1_is_cl", wm1, 1e-8);

    let cc = C64::new(1.1, 0.0);
    let spec = GridSpec::periodic(256, 1.0, Axis::Time)?;
    let sigma = SigmaKind::Random { amplitude: 0.4, modes: 3 };
    let d = make_dual_data(spec, cc, SpinDataKind::FourierRandom { modes: 2 }, sigma, rec.opts.seed, 0.3)?;
    let fed = rotated_dual_grid(&d, eps);
    let (mut w11, mut w22, mut wm2, mut wm1): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for conv in [Convention::Paper, Convention::Real] {
        let a = conv.time_factor();
        let s = wz_recursion(&fed, Orientation::Time, conv, 1)?;
        let dv = |f| -> Result<Vec<C64>> { Ok(d.derivative(f, 1)?.into_iter().map(|z| z * a).collect()) };
        let (dp, dm, dz) = (dv(Field::SPlus)?, dv(Field::SMinus)?, dv(Field::SZ)?);
        let (mut z11, mut z22) = (Vec::new(), Vec::new());
        for i in 0..d.len() {
            let p = d.values[i];
            let sp = p.spin;
            let sig2 = p.sigma_sq() / (cc * cc * 2.0);
            z11.push((dz[i] + sp.s_plus * dm[i] / (cc + sp.s_z) - sig2) / (cc * 2.0));
            z22.push((dz[i] + sp.s_minus * dp[i] / (cc + sp.s_z) + sig2) / (cc * 2.0));
        }
        let z0 = s.z_at(0).ok_or_else(|| Error::Index("Z^(0)".into()))?;
        w11 = w11.max((z0[(0, 0)] - integrate(&z11, &spec) / a).norm());
        w22 = w22.max((z0[(1, 1)] - integrate(&z22, &spec) / a).norm());
        if conv == Convention::Paper {
            let q = charges(&d, Orientation::Time, conv, 1, None)?;
            wm2 = (q.get(-2).unwrap_or(ZERO) - cc * spec.half_length).norm();
            wm1 = q.get(-1).unwrap_or(ONE).norm();
        }
    }
    rec.residual("time_z0_11", w11, 1e-8);
    rec.residual("time_z0_22", w22, 1e-8);
    rec.residual("time_g_minus2_is_ctau", wm2, 1e-8);
    rec.residual("time_g_minus1_vanishes", wm1, 1e-12);
    Ok(())
}

fn generators(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let cc = C64::new(1.1, 0.0);
    let l = C64::new(0.7, 0.2);
    let seed = rec.opts.seed;
    let mismatch = |a: &[Mat2], b: &[Mat2]| a.iter().zip(b).map(|(x, y)| (*x - *y).max_norm()).fold(0.0, f64::max);

    let spec = GridSpec::periodic(64, 2.0, Axis::Space)?;
    let g = make_spin_data(spec, cc, SpinDataKind::FourierRandom { modes: 3 }, seed, 0.4)?;
    let gp = rotated_spin_grid(&g, eps);
    let mut worst: f64 = 0.0;
    for i in 0..g.len() {
        let want = v_generator_coeffs(&g, i, l, 2)?.printed;
        worst = worst.max(mismatch(&v_generator_coeffs(&gp, i, l, 2)?.series, &want));
    }
    rec.residual("v_mats", worst, 1e-8);

    let tspec = GridSpec::periodic(64, 1.0, Axis::Time)?;
    let sigma = SigmaKind::Random { amplitude: 0.3, modes: 2 };
    let d = make_dual_data(tspec, cc, SpinDataKind::FourierRandom { modes: 2 }, sigma, seed, 0.3)?;
    let dp = rotated_dual_grid(&d, eps);
    let (base, base_p) = (d.spin(), dp.spin());
    let (mut wu, mut wb): (f64, f64) = (0.0, 0.0);
    for conv in [Convention::Paper, Convention::Real] {
        for i in 0..d.len() {
            let want = u_generator_coeffs(&d, i, l, conv, 2)?.printed;
            wu = wu.max(mismatch(&u_generator_coeffs(&dp, i, l, conv, 2)?.series, &want));
            let want = base_u_generator_coeffs(&base, i, l, conv, 2)?.printed;
            wb = wb.max(mismatch(&base_u_generator_coeffs(&base_p, i, l, conv, 2)?.series, &want));
        }
    }
    rec.residual("u_mats", wu, 1e-8);
    rec.residual("base_u_mats", wb, 1e-8);

    // Open space generators, order μ¹.
    let l = C64::new(0.6, -0.3);
    let spec = GridSpec::open(65, 1.5, Axis::Space)?;
    let g = make_spin_data(spec, C64::new(0.9, 0.0), SpinDataKind::FourierRandom { modes: 3 }, seed, 0.4)?;
    let gp = rotated_spin_grid(&g, eps);
    let mut krng = rng(seed, 6);
    let kp = random_params(&mut krng, Side::Plus);
    let km = random_params(&mut krng, Side::Minus);
    let jets = local_jets(&g, Orientation::Space, Convention::Paper, 1)?;
    let mut worst: f64 = 0.0;
    let n = g.len();
    let mut cases: Vec<(Region, usize, Option<&BoundaryParams>)> =
        (1..n - 1).step_by(7).map(|i| (Region::Bulk, i, None)).collect();
    cases.push((Region::Plus, n - 1, Some(&kp)));
    cases.push((Region::Minus, 0, Some(&km)));
    for (region, node, k) in cases {
        let got = open_generator_coeffs(&gp, Orientation::Space, Convention::Paper, region, node, l, k, 1)?;
        let want =
            printed_open_generator(Orientation::Space, region, &g.values[node], &jets[node].s[1], g.c, l, k, ZERO)?;
        worst = worst.max((got - want).max_norm());
    }
    rec.residual("v_mats_open", worst, 1e-8);

    // Time bulk and boundary generators, order μ⁰.
    let cc = C64::new(1.2, 0.0);
    let l = C64::new(0.8, 0.1);
    let spec = GridSpec::open(49, 1.0, Axis::Time)?;
    let sigma = SigmaKind::Random { amplitude: 0.5, modes: 2 };
    let d = make_dual_data(spec, cc, SpinDataKind::FourierRandom { modes: 2 }, sigma, seed, 0.4)?;
    let dp = rotated_dual_grid(&d, eps);
    let n = d.len();
    let kp = random_params(&mut krng, Side::Plus);
    let km = random_params(&mut krng, Side::Minus);
    let mut worst: f64 = 0.0;
    for conv in [Convention::Paper, Convention::Real] {
        for i in (0..n).step_by(6) {
            let got = open_generator_coeffs(&dp, Orientation::Time, conv, Region::Bulk, i, l, None, 0)?;
            let want =
                printed_open_generator(Orientation::Time, Region::Bulk, &d.values[i].spin, &Mat2::zero(), cc, l, None, ZERO)?;
            worst = worst.max((got - want).max_norm());
        }
        for (k, node, region) in [(&kp, n - 1, Region::Plus), (&km, 0, Region::Minus)] {
            let w1 = printed_w_boundary(&d.values[node], cc, k);
            let got = open_generator_coeffs(&dp, Orientation::Time, conv, region, 0, l, Some(k), 0)?;
            let want =
                printed_open_generator(Orientation::Time, region, &d.values[node].spin, &Mat2::zero(), cc, l, Some(k), w1)?;
            worst = worst.max((got - want).max_norm());
        }
    }
    rec.residual("u_boundary_mats", worst, 1e-8);
    Ok(())
}

fn record_runtime(rec: &mut Recorder<'_>, name: &str, start: Instant) {
    let t = rec.opts.tolerances.get(name).copied().unwrap_or(120.0);
    rec.checks.push(Check::new(name, CheckKind::Budget, start.elapsed().as_secs_f64(), t));
}

/// The HM conservation run: N = 256, c = 1, T = 1, real convention.
pub fn hm_conservation_run(perturbation: f64) -> Result<ConservationReport> {
    let spec = GridSpec::periodic(256, std::f64::consts::PI, Axis::Space)?;
    let g = make_spin_data(spec, ONE, SpinDataKind::Twist { theta0: 0.8, winding: 1 }, 0, 0.2)?;
    let mut cfg = EvolutionConfig::with_span(FlowKind::Hm, spec.spacing(), 1.0);
    cfg.monitors.charges = Some(1);
    cfg.monitors.transfer_scan = Some(default_lambdas()[..8].to_vec());
    cfg.perturbation = perturbation;
    Ok(evolve(&g, FlowKind::Hm, &cfg)?.report)
}

fn hm_conservation(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let start = Instant::now();
    let r = hm_conservation_run(eps)?;
    record_runtime(rec, "runtime_seconds", start);
    rec.residual("casimir_drift", r.casimir_drift.iter().copied().fold(0.0, f64::max), 1e-10);
    for k in [0, 1] {
        let d = r.charge_drift(k).unwrap_or(f64::INFINITY);
        rec.residual(&format!("g_s{k}_relative_drift"), d, 1e-8);
    }
    let scan = r.transfer_scan.as_ref().map(|s| s.max).unwrap_or(f64::INFINITY);
    rec.residual("transfer_relative_drift", scan, 1e-6);
    Ok(())
}

/// The dual conservation run: N_t = 256, X = 0.5.
pub fn dual_conservation_run(perturbation: f64) -> Result<ConservationReport> {
    let spec = GridSpec::periodic(256, 1.0, Axis::Time)?;
    let sigma = SigmaKind::Random { amplitude: 0.3, modes: 2 };
    let g = make_dual_data(spec, ONE, SpinDataKind::FourierRandom { modes: 2 }, sigma, 1, 0.3)?;
    let mut cfg = EvolutionConfig::with_span(FlowKind::DualSpace, spec.spacing(), 0.5);
    cfg.monitors.charges = Some(1);
    cfg.monitors.transfer_scan = Some(default_time_lambdas());
    cfg.perturbation = perturbation;
    Ok(evolve(&g, FlowKind::DualSpace, &cfg)?.report)
}

fn dual_conservation(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let start = Instant::now();
    let r = dual_conservation_run(eps)?;
    record_runtime(rec, "runtime_seconds", start);
    for (i, name) in ["casimir_drift", "dual_casimir_drift"].iter().enumerate() {
        rec.residual(name, r.casimir_drift.get(i).copied().unwrap_or(f64::INFINITY), 1e-10);
    }
    rec.residual("g_t0_relative_drift", r.charge_drift(0).unwrap_or(f64::INFINITY), 1e-6);
    let scan = r.transfer_scan.as_ref().map(|s| s.max).unwrap_or(f64::INFINITY);
    rec.residual("transfer_relative_drift", scan, 1e-5);
    Ok(())
}

/// Refinement levels for the patch checks.
pub const PATCH_LEVELS: [usize; 3] = [64, 128, 256];
const PATCH_LAMBDA: f64 = 0.8;
const PATCH_SLICES: usize = 12;

fn hm_patch(n: usize, eps: f64) -> Result<crate::lax::Patch> {
    let spec = GridSpec::periodic(n, std::f64::consts::PI, Axis::Space)?;
    let g = make_spin_data(spec, ONE, SpinDataKind::Twist { theta0: 0.8, winding: 1 }, 0, 0.4)?;
    time_patch(&g, Convention::Real, PATCH_SLICES, spec.spacing() / 2.0, eps)
}

fn higher_patch(n: usize, seed: u64, eps: f64) -> Result<crate::lax::Patch> {
    let spec = GridSpec::periodic(n, 1.0, Axis::Time)?;
    let sigma = SigmaKind::Random { amplitude: 0.3, modes: 2 };
    let g = make_dual_data(spec, ONE, SpinDataKind::FourierRandom { modes: 2 }, sigma, seed, 0.3)?;
    space_patch(&g, FlowKind::HigherSpace, Convention::Real, PATCH_SLICES, 0.1 * spec.spacing().powf(1.5), eps)
}

fn zero_curvature(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let l = C64::new(PATCH_LAMBDA, 0.0);
    let (mut hm, mut higher) = (Vec::new(), Vec::new());
    for n in PATCH_LEVELS {
        hm.push(zero_curvature_residual(&hm_patch(n, eps)?, PairKind::Hm, l, Convention::Real)?);
        let p = higher_patch(n, rec.opts.seed, eps)?;
        higher.push(zero_curvature_residual(&p, PairKind::U2Dual, l, Convention::Real)?);
    }
    rec.ladder("hm_pair", &hm, 3.0);
    rec.ladder("higher_pair", &higher, 3.0);
    rec.residual("hm_pair_finest", *hm.last().unwrap(), 1e-4);
    rec.residual("higher_pair_finest", *higher.last().unwrap(), 1e-4);
    Ok(())
}

fn duality(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let l = C64::new(PATCH_LAMBDA, 0.0);
    let (mut dual, mut redundancy) = (Vec::new(), Vec::new());
    for n in PATCH_LEVELS {
        dual.push(dual_consistency_residual(&hm_patch(n, eps)?, Convention::Real)?);
        let p = higher_patch(n, rec.opts.seed, eps)?;
        redundancy.push(zero_curvature_residual(&p, PairKind::Comm, l, Convention::Real)?);
    }
    rec.ladder("dual_equations", &dual, 3.0);
    rec.ladder("redundancy", &redundancy, 3.0);
    rec.residual("dual_equations_finest", *dual.last().unwrap(), 1e-4);
    rec.residual("redundancy_finest", *redundancy.last().unwrap(), 1e-4);
    Ok(())
}

/// Open reflective dual run with `K± = σ_z` over X = 0.5.
pub fn open_dual_run(perturbation: f64) -> Result<ConservationReport> {
    let spec = GridSpec::open(257, 1.0, Axis::Time)?;
    let g = make_reflective_dual_data(spec, ONE, 3, 0.4, 0.3, 3)?;
    let kp = BoundaryParams::new(Side::Plus, ZERO, ZERO, ZERO, ONE);
    let km = BoundaryParams::new(Side::Minus, ZERO, ZERO, ZERO, ONE);
    let mut cfg = EvolutionConfig::with_span(FlowKind::DualSpace, spec.spacing(), 0.5);
    cfg.monitors.charges = Some(1);
    cfg.monitors.transfer_scan = Some(default_time_lambdas());
    cfg.monitors.boundary = Some((kp, km));
    cfg.perturbation = perturbation;
    Ok(evolve(&g, FlowKind::DualSpace, &cfg)?.report)
}

/// `α` values for the boundary-matching sweep.
pub const ALPHA_SWEEP: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

/// `‖𝕌_±^(0) − 𝕌_B^(0)‖` at the boundary node for each `±α` in
/// [`ALPHA_SWEEP`] and for `α = 0`, with `δ` chosen so the λ⁻¹ boundary
/// relation holds. Returns `(mismatch at 0, [(α, mismatch)])`.
pub fn boundary_matching(seed: u64, delta_shift: f64) -> Result<(f64, Vec<(f64, f64)>)> {
    let cc = C64::new(1.1, 0.0);
    let l = C64::new(0.8, 0.1);
    let spec = GridSpec::open(65, 1.0, Axis::Time)?;
    let sigma = SigmaKind::Random { amplitude: 0.4, modes: 2 };
    let d = make_dual_data(spec, cc, SpinDataKind::FourierRandom { modes: 2 }, sigma, seed, 0.4)?;
    let mut krng = rng(seed, 7);
    let mut at_zero: f64 = 0.0;
    let mut sweep = vec![(0.0f64, 0.0f64); ALPHA_SWEEP.len() * 2];
    for (side, node, region) in [(Side::Plus, d.len() - 1, Region::Plus), (Side::Minus, 0, Region::Minus)] {
        let s = d.values[node].spin;
        let (beta, gamma) = (rc(&mut krng), rc(&mut krng));
        let delta = -(beta * s.s_plus + gamma * s.s_minus) / (s.s_z * 2.0) + delta_shift;
        let bulk = open_generator_coeffs(&d, Orientation::Time, Convention::Paper, Region::Bulk, node, l, None, 0)?;
        let mismatch = |alpha: f64| -> Result<f64> {
            let k = BoundaryParams::new(side, C64::new(alpha, 0.0), beta, gamma, delta);
            let u = open_generator_coeffs(&d, Orientation::Time, Convention::Paper, region, 0, l, Some(&k), 0)?;
            Ok((u - bulk).max_norm())
        };
        at_zero = at_zero.max(mismatch(0.0)?);
        for (i, a) in ALPHA_SWEEP.iter().flat_map(|a| [*a, -a]).enumerate() {
            sweep[i].0 = a;
            sweep[i].1 = sweep[i].1.max(mismatch(a)?);
        }
    }
    Ok((at_zero, sweep))
}

fn boundary(rec: &mut Recorder<'_>, eps: f64) -> Result<()> {
    let r = open_dual_run(eps)?;
    let scan = r.transfer_scan.as_ref().map(|s| s.max).unwrap_or(f64::INFINITY);
    rec.residual("open_transfer_relative_drift", scan, 1e-5);
    if let Some(b) = &r.boundary_residuals {
        rec.series.insert("boundary_residual_max".into(), vec![b.max.0, b.max.1]);
    }

    let (at_zero, sweep) = boundary_matching(rec.opts.seed, eps)?;
    rec.residual("matching_mismatch_at_zero_alpha", at_zero, 1e-10);
    // Linear growth: mismatch / |α| is flat across the small-α decades.
    let ratios: Vec<f64> = sweep.iter().filter(|(a, _)| a.abs() <= 1e-2).map(|(a, m)| m / a.abs()).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    rec.series.insert("matching_alpha".into(), sweep.iter().map(|p| p.0).collect());
    rec.series.insert("matching_mismatch".into(), sweep.iter().map(|p| p.1).collect());
    rec.residual("matching_linearity_spread", if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY }, 0.05);

    let mut rng = rng(rec.opts.seed, 8);
    let cc = C64::new(1.1, 0.0);
    let mut worst: f64 = 0.0;
    let mut worst_condition: f64 = 0.0;
    for i in 0..rec.opts.samples {
        let v = [rc(&mut rng), rc(&mut rng), rc(&mut rng) + 1.5];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let p = SpinPoint::from_cartesian(v.map(|x| x * cc / norm));
        let k = random_params(&mut rng, if i % 2 == 0 { Side::Plus } else { Side::Minus });
        let (dv, _, cond) = closure_at(&p, cc, &k)?;
        worst = worst.max(closure_residual(&p, dv.map(|z| z + eps), cc, &k));
        worst_condition = worst_condition.max(cond);
    }
    let spec = GridSpec::open(65, 1.0, Axis::Space)?;
    let g = make_spin_data(spec, cc, SpinDataKind::FourierRandom { modes: 2 }, rec.opts.seed, 0.3)?;
    let kp = random_params(&mut rng, Side::Plus);
    let km = random_params(&mut rng, Side::Minus);
    for (b, k) in open_boundary_closure(&g, &kp, &km)?.iter().zip([&kp, &km]) {
        worst = worst.max(closure_residual(&g.values[b.index], b.derivative.map(|z| z + eps), cc, k));
        worst_condition = worst_condition.max(b.condition);
    }
    rec.residual("closure_residual", worst, 1e-10);
    rec.series.insert("closure_condition_max".into(), vec![worst_condition]);
    Ok(())
}

/// Max of the three boundary relations and tangency.
fn closure_residual(p: &SpinPoint, d: [C64; 3], c: C64, k: &BoundaryParams) -> f64 {
    let viol = crate::hierarchy::space_bc_violations(p, d, c, k);
    let tangency = p.s_minus * d[0] * 0.5 + p.s_plus * d[1] * 0.5 + p.s_z * d[2];
    viol.iter().map(|z| z.norm()).fold(tangency.norm(), f64::max)
}
