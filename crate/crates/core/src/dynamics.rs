//! Evolution engines: the HM time flow, the dual space flow, the higher
//! 6-field space flow and their space↔time swapped versions, with RK4
//! integration and conservation monitoring.
//!
//! All right-hand sides return `d/dτ` (time flows) or `d/dx` (space flows)
//! of the nodal values. Printed overdots are `a·d/dτ` with `a` the
//! convention's time factor, so a time flow's printed rhs is divided by `a`.

use serde::{Deserialize, Serialize};

use crate::algebra::{BoundaryParams, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::fields::{dual_casimir, Axis, DualGrid, Field, FieldGrid, SpinGrid, SpinPoint};
use crate::hierarchy::{boundary_residual, charges, space_bc_violations, ChargeSeries};
use crate::lax::{Convention, Patch};
use crate::monodromy::{scan, Orientation, TransportScheme};
use crate::poisson::Coords;

/// Printed-variable derivatives along the grid axis at one node.
#[derive(Clone, Copy, Debug, Default)]
struct Inner {
    s1: [C64; 3],
    s2: [C64; 3],
    sig1: [C64; 3],
}

fn sq(p: &[C64; 3]) -> C64 {
    p[0] * p[1] + p[2] * p[2]
}

/// The HM component equations for printed `∂_t S` given `S″`.
pub fn hm_printed(s: &SpinPoint, s2: &[C64; 3], c: C64) -> [C64; 3] {
    let c2 = c * c;
    let (p, m, z) = (s.s_plus, s.s_minus, s.s_z);
    let [p2, m2, z2] = *s2;
    [
        (p * z2 - p2 * z) / c2,
        -(m * z2 - m2 * z) / c2,
        (p2 * m - p * m2) / (c2 * 2.0),
    ]
}

/// The dual flow: `(S′, Σ′)` from `S`, `Σ` and the printed `Ṡ`.
pub fn dual_printed(u: &Coords, sdot: &[C64; 3], c: C64) -> Coords {
    let c2 = c * c;
    let [p, m, z, gp, gm, gz] = *u;
    let [dp, dm, dz] = *sdot;
    let q = sq(&[gp, gm, gz]) / c2;
    [
        gp,
        gm,
        gz,
        (p * dz - dp * z) - p * q,
        -(m * dz - dm * z) - m * q,
        (dp * m - p * dm) * 0.5 - z * q,
    ]
}

/// The higher (`U₂`, `V`) flow in component form.
pub fn higher_printed(u: &Coords, sdot: &[C64; 3], sddot: &[C64; 3], sigdot: &[C64; 3], c: C64) -> Coords {
    let c2 = c * c;
    let c4 = c2 * c2;
    let [p, m, z, gp, gm, gz] = *u;
    let [dp, dm, dz] = *sdot;
    let [ep, em, ez] = *sigdot;
    let big = gz * gz + gp * gm;
    let small = dz * dz + dp * dm;
    let h = big / (c4 * 2.0);
    let tail = small / c2 - big * big / (c4 * c2 * 2.0);
    let cross = dp * m - p * dm;
    [
        (p * ez - z * ep) / c2 + h * gp,
        (z * em - m * ez) / c2 + h * gm,
        (m * ep - p * em) / (c2 * 2.0) + h * gz,
        (gp * ez - ep * gz) / c2 + sddot[0] + p * tail
            + (gz * gz * (dp * z - p * dz) + gp * gp * (dm * z - m * dz) + gp * gz * cross) / (c4 * 2.0),
        (em * gz - gm * ez) / c2 + sddot[1] + m * tail
            + (gz * gz * (m * dz - dm * z) + gm * gm * (p * dz - dp * z) + gm * gz * cross) / (c4 * 2.0),
        (ep * gm - gp * em) / (c2 * 2.0) + sddot[2] + z * tail
            + (gm * gz * (p * dz - dp * z) + gp * gz * (dm * z - m * dz) + (gz * gz - gp * gm) * cross * 0.5)
                / (c4 * 2.0),
    ]
}

fn cross(a: &[C64; 3], b: &[C64; 3]) -> [C64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[C64; 3], b: &[C64; 3]) -> C64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cart(v: &[C64; 3]) -> [C64; 3] {
    SpinPoint::from_array(*v).cartesian()
}

fn uncart(v: [C64; 3]) -> [C64; 3] {
    SpinPoint::from_cartesian(v).as_array()
}

/// The higher flow in Cartesian vector form; independent of
/// [`higher_printed`] and used to cross-check it.
pub fn higher_printed_vector(u: &Coords, sdot: &[C64; 3], sddot: &[C64; 3], sigdot: &[C64; 3], c: C64) -> Coords {
    let i = C64::i();
    let c2 = c * c;
    let c4 = c2 * c2;
    let s = cart(&[u[0], u[1], u[2]]);
    let g = cart(&[u[3], u[4], u[5]]);
    let sd = cart(sdot);
    let sdd = cart(sddot);
    let gd = cart(sigdot);
    let g2 = dot(&g, &g);
    let sxsd = cross(&s, &sd);
    let sxgd = cross(&s, &gd);
    let gxgd = cross(&g, &gd);
    let coef = dot(&sd, &sd) / c2 - g2 * g2 / (c4 * c2 * 2.0);
    let proj = dot(&g, &sxsd);
    let ds: [C64; 3] = std::array::from_fn(|k| i / c2 * sxgd[k] + g2 / (c4 * 2.0) * g[k]);
    let dg: [C64; 3] = std::array::from_fn(|k| {
        i / c2 * gxgd[k] - i * g2 / (c4 * 2.0) * sxsd[k] + sdd[k] + s[k] * coef + i / c4 * g[k] * proj
    });
    let a = uncart(ds);
    let b = uncart(dg);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

/// First and second derivatives along the grid of the spin fields and the
/// first derivative of `Σ`, each scaled by `scale^order`.
fn inner_derivatives<G: FieldGrid>(g: &G, scale: C64, with_sigma: bool) -> Result<Vec<Inner>> {
    let n = g.len();
    let mut out = vec![Inner::default(); n];
    for (k, f) in Field::SPIN.iter().enumerate() {
        let d1 = g.derivative(*f, 1)?;
        let d2 = g.derivative(*f, 2)?;
        for i in 0..n {
            out[i].s1[k] = d1[i] * scale;
            out[i].s2[k] = d2[i] * scale * scale;
        }
    }
    if with_sigma {
        for (k, f) in [Field::SigmaPlus, Field::SigmaMinus, Field::SigmaZ].iter().enumerate() {
            let d1 = g.derivative(*f, 1)?;
            for i in 0..n {
                out[i].sig1[k] = d1[i] * scale;
            }
        }
    }
    Ok(out)
}

fn check_axis(g: &impl FieldGrid, want: Axis, what: &str) -> Result<()> {
    if g.spec().axis != want {
        return Err(Error::InvalidGrid(format!("{what} needs a grid along the {want:?} axis")));
    }
    Ok(())
}

fn check_finite<const K: usize>(v: &[[C64; K]], what: &str) -> Result<()> {
    if v.iter().flatten().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `d/dτ (S₊, S₋, S_z)` of the HM flow on a space grid.
pub fn hm_time_rhs(g: &SpinGrid, convention: Convention) -> Result<Vec<[C64; 3]>> {
    check_axis(g, Axis::Space, "hm_time_rhs")?;
    let inv_a = ONE / convention.time_factor();
    let d = inner_derivatives(g, ONE, false)?;
    let out: Vec<[C64; 3]> = g
        .values
        .iter()
        .zip(&d)
        .map(|(s, d)| hm_printed(s, &d.s2, g.c).map(|v| v * inv_a))
        .collect();
    check_finite(&out, "hm_time_rhs")?;
    Ok(out)
}

/// `d/dx (S, Σ)` of the dual flow on a time grid.
pub fn dual_space_rhs(g: &DualGrid, convention: Convention) -> Result<Vec<Coords>> {
    check_axis(g, Axis::Time, "dual_space_rhs")?;
    let d = inner_derivatives(g, convention.time_factor(), false)?;
    let out: Vec<Coords> = g
        .values
        .iter()
        .zip(&d)
        .map(|(p, d)| dual_printed(&p.as_array(), &d.s1, g.c))
        .collect();
    check_finite(&out, "dual_space_rhs")?;
    Ok(out)
}

/// `d/dx (S, Σ)` of the `(U₂, V)` flow on a time grid.
pub fn higher_space_rhs(g: &DualGrid, convention: Convention) -> Result<Vec<Coords>> {
    check_axis(g, Axis::Time, "higher_space_rhs")?;
    let d = inner_derivatives(g, convention.time_factor(), true)?;
    let out: Vec<Coords> = g
        .values
        .iter()
        .zip(&d)
        .map(|(p, d)| higher_printed(&p.as_array(), &d.s1, &d.s2, &d.sig1, g.c))
        .collect();
    check_finite(&out, "higher_space_rhs")?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwappedFlow {
    /// `S̈ = i S × S′ − S|Ṡ|²/c²` as the first-order pair `Ṡ = Σ`.
    TEvoDual,
    /// The higher flow with `x` and `t` exchanged.
    TEvoHigher,
}

/// `d/dτ (S, Σ)` of a swapped flow on a space grid: the dual or higher
/// equations with the roles of `x` and `t` exchanged.
pub fn swapped_flows(g: &DualGrid, which: SwappedFlow, convention: Convention) -> Result<Vec<Coords>> {
    check_axis(g, Axis::Space, "swapped_flows")?;
    let inv_a = ONE / convention.time_factor();
    let d = inner_derivatives(g, ONE, which == SwappedFlow::TEvoHigher)?;
    let out: Vec<Coords> = g
        .values
        .iter()
        .zip(&d)
        .map(|(p, d)| {
            let u = p.as_array();
            let v = match which {
                SwappedFlow::TEvoDual => dual_printed(&u, &d.s1, g.c),
                SwappedFlow::TEvoHigher => higher_printed(&u, &d.s1, &d.s2, &d.sig1, g.c),
            };
            v.map(|x| x * inv_a)
        })
        .collect();
    check_finite(&out, "swapped_flows")?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// HM flow in `τ` of a space grid.
    Hm,
    /// Dual flow in `x` of a time grid.
    DualSpace,
    /// `(U₂, V)` flow in `x` of a time grid.
    HigherSpace,
    TEvoDual,
    TEvoHigher,
}

impl FlowKind {
    /// Axis of the grid the flow acts on.
    pub fn grid_axis(self) -> Axis {
        match self {
            FlowKind::DualSpace | FlowKind::HigherSpace => Axis::Time,
            _ => Axis::Space,
        }
    }

    /// Orientation of the transport whose charges the flow conserves.
    pub fn charge_orientation(self) -> Orientation {
        match self {
            FlowKind::Hm => Orientation::Space,
            _ => Orientation::Time,
        }
    }

    /// Convention the charge machinery needs on this flow's grid. The
    /// swapped flows carry their `V`-type transport along the real `x`.
    fn charge_convention(self, convention: Convention) -> Convention {
        match self {
            FlowKind::TEvoDual | FlowKind::TEvoHigher => Convention::Paper,
            _ => convention,
        }
    }

    /// Default step: `0.1·Δ²` for the HM flow, `0.1·Δ` for the first-order
    /// dual flows, `0.1·Δ^{3/2}` for the higher flows.
    pub fn default_step(self, spacing: f64) -> f64 {
        match self {
            FlowKind::Hm => 0.1 * spacing * spacing,
            FlowKind::DualSpace | FlowKind::TEvoDual => 0.1 * spacing,
            FlowKind::HigherSpace | FlowKind::TEvoHigher => 0.1 * spacing.powf(1.5),
        }
    }

    /// Largest accepted step: five times the default (for the HM flow,
    /// `0.5·Δ²`, inside the RK4 limit of the 4th-order Laplacian).
    pub fn max_step(self, spacing: f64) -> f64 {
        5.0 * self.default_step(spacing)
    }
}

/// A grid that one of the flows can advance.
pub trait FlowGrid: FieldGrid {
    /// Flattened node-major derivative of the nodal values under `flow`.
    fn flow_rhs(&self, flow: FlowKind, convention: Convention) -> Result<Vec<C64>>;

    /// Pointwise Casimirs: `S·S` and, for dual grids, `2 S·Σ`.
    fn casimirs(&self) -> Vec<Vec<C64>>;
}

impl FlowGrid for SpinGrid {
    fn flow_rhs(&self, flow: FlowKind, convention: Convention) -> Result<Vec<C64>> {
        match flow {
            FlowKind::Hm => Ok(hm_time_rhs(self, convention)?.into_iter().flatten().collect()),
            _ => Err(Error::Unsupported(format!("{flow:?} needs a grid with auxiliary fields"))),
        }
    }

    fn casimirs(&self) -> Vec<Vec<C64>> {
        vec![self.values.iter().map(|p| p.casimir()).collect()]
    }
}

impl FlowGrid for DualGrid {
    fn flow_rhs(&self, flow: FlowKind, convention: Convention) -> Result<Vec<C64>> {
        let v = match flow {
            FlowKind::Hm => return Err(Error::Unsupported("the HM flow acts on spin grids".into())),
            FlowKind::DualSpace => dual_space_rhs(self, convention)?,
            FlowKind::HigherSpace => higher_space_rhs(self, convention)?,
            FlowKind::TEvoDual => swapped_flows(self, SwappedFlow::TEvoDual, convention)?,
            FlowKind::TEvoHigher => swapped_flows(self, SwappedFlow::TEvoHigher, convention)?,
        };
        Ok(v.into_iter().flatten().collect())
    }

    fn casimirs(&self) -> Vec<Vec<C64>> {
        vec![
            self.values.iter().map(|p| p.spin.casimir()).collect(),
            self.values.iter().map(dual_casimir).collect(),
        ]
    }
}

fn flat<G: FieldGrid>(g: &G) -> Vec<C64> {
    (0..g.len()).flat_map(|i| G::FIELDS.iter().map(move |f| g.get(i, *f))).collect()
}

fn unflat<G: FieldGrid>(g: &mut G, v: &[C64]) {
    let nf = G::FIELDS.len();
    for i in 0..g.len() {
        for (k, f) in G::FIELDS.iter().enumerate() {
            g.set(i, *f, v[i * nf + k]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monitors {
    #[serde(default = "default_true")]
    pub casimirs: bool,
    /// Truncation order of the monitored charges.
    #[serde(default)]
    pub charges: Option<usize>,
    /// Spectral parameters of the monitored transfer scan.
    #[serde(default)]
    pub transfer_scan: Option<Vec<C64>>,
    /// `(K₊, K₋)` for open grids: enables the open charges and transfer
    /// matrix, and the boundary residual monitor.
    #[serde(default)]
    pub boundary: Option<(BoundaryParams, BoundaryParams)>,
    /// Transport scheme of the transfer scan.
    #[serde(default = "default_scheme")]
    pub scheme: TransportScheme,
}

impl Default for Monitors {
    fn default() -> Self {
        Monitors {
            casimirs: true,
            charges: None,
            transfer_scan: None,
            boundary: None,
            scheme: default_scheme(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_scheme() -> TransportScheme {
    TransportScheme::Richardson { sub: 1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub step: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default)]
    pub monitors: Monitors,
    /// Steps between checkpoints; the final step is always a checkpoint.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Keep a copy of the state at every checkpoint.
    #[serde(default)]
    pub keep_snapshots: bool,
    /// Adds `ε·c` to the `S_z` increment; a fault-injection hook.
    #[serde(default)]
    pub perturbation: f64,
}

fn default_stride() -> usize {
    100
}

impl EvolutionConfig {
    /// Default step for `flow` on a grid of spacing `spacing`, covering
    /// `[0, span]`.
    pub fn with_span(flow: FlowKind, spacing: f64, span: f64) -> Self {
        let h = flow.default_step(spacing);
        let n_steps = (span / h).ceil().max(1.0) as usize;
        EvolutionConfig {
            step: span / n_steps as f64,
            n_steps,
            convention: Convention::Real,
            monitors: Monitors::default(),
            stride: n_steps.div_ceil(10).max(1),
            keep_snapshots: false,
            perturbation: 0.0,
        }
    }

    pub fn validate(&self, flow: FlowKind, spacing: f64) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidGrid(format!("step {} must be positive", self.step)));
        }
        if self.step > flow.max_step(spacing) {
            return Err(Error::InvalidGrid(format!(
                "step {:e} exceeds the stability bound {:e} of the {flow:?} flow",
                self.step,
                flow.max_step(spacing)
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidGrid("monitor stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub time: f64,
    /// `max_i |C(x_i, now) − C(x_i, 0)|` per Casimir.
    pub casimir_deviation: Vec<f64>,
    pub charges: Option<ChargeSeries>,
    pub transfer: Option<Vec<C64>>,
    /// `(plus, minus)` boundary residuals.
    pub boundary_residuals: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeDrift {
    pub k: i32,
    pub initial: C64,
    pub relative_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanDrift {
    pub lambdas: Vec<C64>,
    pub relative_drift: Vec<f64>,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDrift {
    pub initial: (f64, f64),
    pub max: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub flow: FlowKind,
    pub convention: Convention,
    pub step: f64,
    pub n_steps: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// Max over checkpoints of each Casimir's pointwise deviation.
    pub casimir_drift: Vec<f64>,
    /// Max over checkpoints of `|𝒢(now) − 𝒢(0)| / |𝒢(0)|` per order.
    pub charges: Option<Vec<ChargeDrift>>,
    pub transfer_scan: Option<ScanDrift>,
    pub boundary_residuals: Option<BoundaryDrift>,
}

impl ConservationReport {
    pub fn charge_drift(&self, k: i32) -> Option<f64> {
        self.charges.as_ref()?.iter().find(|d| d.k == k).map(|d| d.relative_drift)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Result of [`evolve`].
#[derive(Clone, Debug)]
pub struct Evolution<G> {
    pub state: G,
    /// `(time, state)` at every checkpoint when requested, starting at 0.
    pub snapshots: Vec<(f64, G)>,
    pub report: ConservationReport,
}

/// Absolute floor of the relative drift denominators.
const DRIFT_FLOOR: f64 = 1e-12;

struct Monitor<'a> {
    flow: FlowKind,
    convention: Convention,
    monitors: &'a Monitors,
    casimir0: Vec<Vec<C64>>,
    prev_charges: Option<ChargeSeries>,
}

impl Monitor<'_> {
    fn sample<G: FlowGrid>(&mut self, g: &G, step: usize, time: f64) -> Result<Checkpoint> {
        let open = !g.spec().is_periodic();
        let orientation = self.flow.charge_orientation();
        let conv = self.flow.charge_convention(self.convention);
        let casimir_deviation = if self.monitors.casimirs {
            g.casimirs()
                .iter()
                .zip(&self.casimir0)
                .map(|(now, then)| now.iter().zip(then).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
                .collect()
        } else {
            Vec::new()
        };
        let monitors = self.monitors;
        let bnd = match &monitors.boundary {
            Some((p, m)) if open => Some((p, m)),
            _ => None,
        };
        let charges = match self.monitors.charges {
            Some(k_max) if !open || bnd.is_some() => {
                let mut ch = charges(g, orientation, conv, k_max, bnd)?;
                if let Some(prev) = &self.prev_charges {
                    for (k, v) in ch.values.iter_mut() {
                        if let Some(r) = prev.get(*k) {
                            *v = crate::hierarchy::unwrap_log(r, *v);
                        }
                    }
                }
                self.prev_charges = Some(ch.clone());
                Some(ch)
            }
            _ => None,
        };
        let transfer = match &self.monitors.transfer_scan {
            Some(ls) if !open || bnd.is_some() => Some(scan(g, ls, orientation, conv, bnd, monitors.scheme)?.values),
            _ => None,
        };
        let boundary_residuals = match bnd {
            Some((kp, km)) => Some((boundary_residual(g, orientation, kp)?, boundary_residual(g, orientation, km)?)),
            None => None,
        };
        Ok(Checkpoint { step, time, casimir_deviation, charges, transfer, boundary_residuals })
    }
}

fn summarize(flow: FlowKind, cfg: &EvolutionConfig, checkpoints: Vec<Checkpoint>) -> ConservationReport {
    let first = &checkpoints[0];
    let n_cas = first.casimir_deviation.len();
    let casimir_drift = (0..n_cas)
        .map(|j| checkpoints.iter().map(|c| c.casimir_deviation[j]).fold(0.0, f64::max))
        .collect();
    let charges = first.charges.as_ref().map(|c0| {
        c0.values
            .iter()
            .map(|(k, v0)| {
                let drift = checkpoints
                    .iter()
                    .filter_map(|c| c.charges.as_ref()?.get(*k))
                    .map(|v| (v - v0).norm() / v0.norm().max(DRIFT_FLOOR))
                    .fold(0.0, f64::max);
                ChargeDrift { k: *k, initial: *v0, relative_drift: drift }
            })
            .collect()
    });
    let transfer_scan = first.transfer.as_ref().map(|t0| {
        let relative_drift: Vec<f64> = (0..t0.len())
            .map(|j| {
                checkpoints
                    .iter()
                    .filter_map(|c| c.transfer.as_ref())
                    .map(|t| (t[j] - t0[j]).norm() / t0[j].norm().max(DRIFT_FLOOR))
                    .fold(0.0, f64::max)
            })
            .collect();
        let max = relative_drift.iter().cloned().fold(0.0, f64::max);
        ScanDrift { lambdas: cfg.monitors.transfer_scan.clone().unwrap_or_default(), relative_drift, max }
    });
    let boundary_residuals = first.boundary_residuals.map(|b0| {
        let max = checkpoints
            .iter()
            .filter_map(|c| c.boundary_residuals)
            .fold((0.0f64, 0.0f64), |acc, b| (acc.0.max(b.0), acc.1.max(b.1)));
        BoundaryDrift { initial: b0, max }
    });
    ConservationReport {
        flow,
        convention: cfg.convention,
        step: cfg.step,
        n_steps: cfg.n_steps,
        checkpoints,
        casimir_drift,
        charges,
        transfer_scan,
        boundary_residuals,
    }
}

fn rhs_with_fault<G: FlowGrid>(g: &G, flow: FlowKind, cfg: &EvolutionConfig) -> Result<Vec<C64>> {
    let mut k = g.flow_rhs(flow, cfg.convention)?;
    if cfg.perturbation != 0.0 {
        let nf = G::FIELDS.len();
        let bump = g.casimir_c() * cfg.perturbation;
        for i in 0..g.len() {
            k[i * nf + 2] += bump;
        }
    }
    Ok(k)
}

/// Blow-up guard: abort once a field exceeds this multiple of `max(|c|, 1)`.
const BLOWUP_FACTOR: f64 = 1e3;

/// Classical RK4 in the flow's evolution variable with monitors at every
/// `stride` steps. Open grids with a boundary monitor must start with
/// boundary residuals at most `1e−8`.
pub fn evolve<G: FlowGrid>(g: &G, flow: FlowKind, cfg: &EvolutionConfig) -> Result<Evolution<G>> {
    if g.spec().axis != flow.grid_axis() {
        return Err(Error::InvalidGrid(format!("{flow:?} acts on grids along the {:?} axis", flow.grid_axis())));
    }
    cfg.validate(flow, g.spec().spacing())?;
    let mut mon = Monitor {
        flow,
        convention: cfg.convention,
        monitors: &cfg.monitors,
        casimir0: g.casimirs(),
        prev_charges: None,
    };
    let first = mon.sample(g, 0, 0.0)?;
    if let Some((p, m)) = first.boundary_residuals {
        let r = p.max(m);
        if r > 1e-8 {
            return Err(Error::BoundaryViolation { residual: r, threshold: 1e-8 });
        }
    }
    let mut checkpoints = vec![first];
    let mut snapshots = Vec::new();
    if cfg.keep_snapshots {
        snapshots.push((0.0, g.clone()));
    }
    let limit = BLOWUP_FACTOR * g.casimir_c().norm().max(1.0);
    let h = cfg.step;
    let mut state = g.clone();
    let mut y = flat(&state);
    let mut work = state.clone();
    for step in 1..=cfg.n_steps {
        let eval = |w: &mut G, base: &[C64], k: Option<(&[C64], f64)>| -> Result<Vec<C64>> {
            match k {
                Some((k, s)) => {
                    let v: Vec<C64> = base.iter().zip(k).map(|(b, d)| b + d * s).collect();
                    unflat(w, &v);
                }
                None => unflat(w, base),
            }
            rhs_with_fault(w, flow, cfg)
        };
        let k1 = eval(&mut work, &y, None)?;
        let k2 = eval(&mut work, &y, Some((&k1, h / 2.0)))?;
        let k3 = eval(&mut work, &y, Some((&k2, h / 2.0)))?;
        let k4 = eval(&mut work, &y, Some((&k3, h)))?;
        for j in 0..y.len() {
            y[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0);
        }
        if let Some(bad) = y.iter().find(|z| !z.is_finite() || z.norm() > limit) {
            return Err(Error::Instability { step, reason: format!("field value {bad}") });
        }
        if step % cfg.stride == 0 || step == cfg.n_steps {
            unflat(&mut state, &y);
            let t = step as f64 * h;
            checkpoints.push(mon.sample(&state, step, t)?);
            if cfg.keep_snapshots {
                snapshots.push((t, state.clone()));
            }
        }
    }
    unflat(&mut state, &y);
    Ok(Evolution { state, snapshots, report: summarize(flow, cfg, checkpoints) })
}

/// Boundary derivative data closing the space-like boundary relations at one
/// end of an open grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClosure {
    pub index: usize,
    /// `(S₊′, S₋′, S_z′)` at the boundary node.
    pub derivative: [C64; 3],
    /// Max violation of the three relations and of `S·S′ = 0`.
    pub residual: f64,
    /// Ratio of the extreme singular values of the 4×3 system.
    pub condition: f64,
}

/// Least-squares solution of the space-like boundary relations together with
/// tangency `S·S′ = 0`, for the derivative at a boundary point.
pub fn closure_at(p: &SpinPoint, c: C64, k: &BoundaryParams) -> Result<([C64; 3], f64, f64)> {
    if k.alpha.norm() < 1e-12 {
        return Err(Error::BoundaryDegenerate("space-like closure needs α ≠ 0".into()));
    }
    let (sp, sm, sz) = (p.s_plus, p.s_minus, p.s_z);
    let a = k.alpha;
    let sc = c * c * k.side.sign();
    let m = nalgebra::Matrix4x3::new(
        -a * sm, a * sp, ZERO, //
        -a * sz, ZERO, a * sp, //
        ZERO, -a * sz, a * sm, //
        sm * 0.5, sp * 0.5, sz,
    );
    let b = nalgebra::Vector4::new(
        sc * (k.beta * sp - k.gamma * sm),
        sc * (k.delta * sp - k.gamma * sz),
        sc * (k.delta * sm - k.beta * sz),
        ZERO,
    );
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > smax * 1e-13) {
        return Err(Error::BoundaryDegenerate("singular boundary system".into()));
    }
    let condition = smax / smin;
    let qr = m.qr();
    let rhs = qr.q().adjoint() * b;
    let x = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::BoundaryDegenerate("singular boundary system".into()))?;
    let d = [x[0], x[1], x[2]];
    let viol = space_bc_violations(p, d, c, k);
    let tangency = sm * d[0] * 0.5 + sp * d[1] * 0.5 + sz * d[2];
    let residual = viol.iter().map(|z| z.norm()).fold(tangency.norm(), f64::max);
    Ok((d, residual, condition))
}

/// Closure data at both ends of an open space grid.
pub fn open_boundary_closure(
    g: &SpinGrid,
    kplus: &BoundaryParams,
    kminus: &BoundaryParams,
) -> Result<[BoundaryClosure; 2]> {
    if g.spec.is_periodic() {
        return Err(Error::InvalidGrid("boundary closure needs an open grid".into()));
    }
    let n = g.len();
    let at = |k: &BoundaryParams| -> Result<BoundaryClosure> {
        let index = match k.side {
            crate::algebra::Side::Plus => n - 1,
            crate::algebra::Side::Minus => 0,
        };
        let (derivative, residual, condition) = closure_at(&g.values[index], g.c, k)?;
        Ok(BoundaryClosure { index, derivative, residual, condition })
    };
    Ok([at(kplus)?, at(kminus)?])
}

fn stacked<G: FlowGrid>(
    g: &G,
    flow: FlowKind,
    convention: Convention,
    n_slices: usize,
    slice: f64,
    perturbation: f64,
) -> Result<Vec<G>> {
    if n_slices < 2 || !(slice > 0.0) {
        return Err(Error::InvalidGrid("a patch needs at least two slices a positive distance apart".into()));
    }
    let m = (slice / flow.default_step(g.spec().spacing())).ceil().max(1.0) as usize;
    let cfg = EvolutionConfig {
        step: slice / m as f64,
        n_steps: m * (n_slices - 1),
        convention,
        monitors: Monitors { casimirs: false, ..Monitors::default() },
        stride: m,
        keep_snapshots: true,
        perturbation,
    };
    Ok(evolve(g, flow, &cfg)?.snapshots.into_iter().map(|(_, s)| s).collect())
}

/// HM evolution of `g` sampled every `slice` in `τ`; `Σ := ∂_x S`.
/// `perturbation` is passed to [`EvolutionConfig::perturbation`].
pub fn time_patch(g: &SpinGrid, convention: Convention, n_slices: usize, slice: f64, perturbation: f64) -> Result<Patch> {
    let slices = stacked(g, FlowKind::Hm, convention, n_slices, slice, perturbation)?;
    let mut patch = Patch::from_time_slices(&slices, slice)?;
    patch.fill_sigma_from_space_derivative()?;
    Ok(patch)
}

/// Space evolution of the time grid `g` by `flow`, sampled every `slice`.
pub fn space_patch(
    g: &DualGrid,
    flow: FlowKind,
    convention: Convention,
    n_slices: usize,
    slice: f64,
    perturbation: f64,
) -> Result<Patch> {
    if flow.grid_axis() != Axis::Time {
        return Err(Error::Unsupported(format!("{flow:?} does not evolve in x")));
    }
    let slices = stacked(g, flow, convention, n_slices, slice, perturbation)?;
    Patch::from_space_slices(&slices, slice)
}

/// Max over interior patch points of `|∂_x(S, Σ) − dual rhs|`, with `Σ`,
/// `∂_x Σ` and `Ṡ` taken from the patch by finite differences.
pub fn dual_consistency_residual(patch: &Patch, convention: Convention) -> Result<f64> {
    let a = convention.time_factor();
    let dx = patch.derivative(false, 1)?;
    let dt = patch.derivative(true, 1)?;
    let mut worst: f64 = 0.0;
    for it in patch.interior(true) {
        for ix in patch.interior(false) {
            let u = patch.values[it][ix];
            let sdot = [dt[it][ix][0] * a, dt[it][ix][1] * a, dt[it][ix][2] * a];
            let want = dual_printed(&u, &sdot, patch.c);
            for k in 0..6 {
                worst = worst.max((dx[it][ix][k] - want[k]).norm());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c, Side};
    use crate::fields::{make_dual_data, make_reflective_dual_data, make_spin_data, DualPoint, GridSpec, SigmaKind, SpinDataKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rc(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn twist(n: usize) -> SpinGrid {
        let spec = GridSpec::periodic(n, PI, Axis::Space).unwrap();
        make_spin_data(spec, c(1.0), SpinDataKind::Twist { theta0: 0.8, winding: 1 }, 0, 0.4).unwrap()
    }

    fn time_data(n: usize, axis: Axis) -> DualGrid {
        let spec = GridSpec::periodic(n, 1.0, axis).unwrap();
        let sigma = SigmaKind::Random { amplitude: 0.3, modes: 2 };
        make_dual_data(spec, c(1.0), SpinDataKind::FourierRandom { modes: 2 }, sigma, 1, 0.3).unwrap()
    }

    #[test]
    fn hm_rhs_examples() {
        let spec = GridSpec::periodic(32, 1.0, Axis::Space).unwrap();
        let np = make_spin_data(spec, c(1.3), SpinDataKind::NorthPole, 0, 0.0).unwrap();
        for conv in [Convention::Paper, Convention::Real] {
            assert!(hm_time_rhs(&np, conv).unwrap().iter().flatten().all(|z| z.norm() == 0.0));
        }

        let g = twist(128);
        for (k, p) in hm_time_rhs(&g, Convention::Real).unwrap().iter().enumerate() {
            assert!((p[1] - p[0].conj()).norm() < 1e-13, "node {k}");
            assert!(p[2].im.abs() < 1e-13);
        }

        // A uniformly precessing plane wave solves the flow exactly.
        let n = 256;
        let spec = GridSpec::periodic(n, PI, Axis::Space).unwrap();
        let (cc, eps, k) = (c(1.2), 0.05, 2.0);
        let sz = (cc * cc - eps * eps).sqrt();
        let values = spec
            .coords()
            .iter()
            .map(|&x| SpinPoint::new(C64::from_polar(eps, k * x), C64::from_polar(eps, -k * x), sz))
            .collect();
        let g = SpinGrid::new(spec, cc, values).unwrap();
        let rhs = hm_time_rhs(&g, Convention::Paper).unwrap();
        for (p, r) in g.values.iter().zip(&rhs) {
            let want = p.s_plus * sz * (k * k) / (cc * cc);
            assert!((r[0] - want).norm() < 1e-7 * want.norm());
            assert!(r[2].norm() < 1e-12);
        }
        assert!(matches!(hm_time_rhs(&SpinGrid { spec: GridSpec::periodic(32, 1.0, Axis::Time).unwrap(), ..np }, Convention::Real), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn dual_and_higher_rhs_examples() {
        let spec = GridSpec::periodic(32, 1.0, Axis::Time).unwrap();
        let cc = c(0.9);
        let still = make_dual_data(spec, cc, SpinDataKind::NorthPole, SigmaKind::Zero, 0, 0.0).unwrap();
        for conv in [Convention::Paper, Convention::Real] {
            // Stencil weights of a constant sum to zero only up to rounding.
            assert!(dual_space_rhs(&still, conv).unwrap().iter().flatten().all(|z| z.norm() < 1e-12));
            assert!(higher_space_rhs(&still, conv).unwrap().iter().flatten().all(|z| z.norm() < 1e-12));
        }
        // Σ = 0, constant in t, anywhere on the sphere.
        let p = SpinPoint::from_cartesian([c(0.3), c(-0.4), (cc * cc - c(0.25)).sqrt()]);
        let flat = DualGrid::new(spec, cc, vec![DualPoint::new(p, ZERO, ZERO, ZERO); 32], 1e-12).unwrap();
        assert!(higher_space_rhs(&flat, Convention::Real).unwrap().iter().flatten().all(|z| z.norm() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u: Coords = std::array::from_fn(|_| rc(&mut rng));
            let a = [rc(&mut rng), rc(&mut rng), rc(&mut rng)];
            let b = [rc(&mut rng), rc(&mut rng), rc(&mut rng)];
            let d = [rc(&mut rng), rc(&mut rng), rc(&mut rng)];
            let cc = rc(&mut rng) * 0.3 + 1.2;
            let x = higher_printed(&u, &a, &b, &d, cc);
            let y = higher_printed_vector(&u, &a, &b, &d, cc);
            for k in 0..6 {
                assert!((x[k] - y[k]).norm() < 1e-12, "component {k}");
            }
        }
    }

    #[test]
    fn dual_flow_keeps_both_casimirs_pointwise() {
        let g = time_data(64, Axis::Time);
        let c2 = g.c * g.c;
        for conv in [Convention::Paper, Convention::Real] {
            let rhs = dual_space_rhs(&g, conv).unwrap();
            for (p, r) in g.values.iter().zip(&rhs) {
                let s = p.spin;
                let ds = SpinPoint::new(r[0], r[1], r[2]);
                let dg = SpinPoint::new(r[3], r[4], r[5]);
                // d(S·S) = 2 S·S′ and d(2 S·Σ) = 2 (S′·Σ + S·Σ′).
                let d1 = s.s_plus * ds.s_minus + s.s_minus * ds.s_plus + s.s_z * ds.s_z * 2.0;
                let d2 = dual_casimir(&DualPoint::new(ds, p.sigma_plus, p.sigma_minus, p.sigma_z))
                    + dual_casimir(&DualPoint::new(s, dg.s_plus, dg.s_minus, dg.s_z));
                assert!(d1.norm() < 1e-13 * c2.norm());
                assert!(d2.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn swapped_flows_exchange_the_axes() {
        let spec = GridSpec::periodic(32, 1.0, Axis::Space).unwrap();
        let np = make_dual_data(spec, c(1.0), SpinDataKind::NorthPole, SigmaKind::Zero, 0, 0.0).unwrap();
        for which in [SwappedFlow::TEvoDual, SwappedFlow::TEvoHigher] {
            assert!(swapped_flows(&np, which, Convention::Real).unwrap().iter().flatten().all(|z| z.norm() < 1e-12));
        }
        let tg = time_data(48, Axis::Time);
        let mut xg = tg.clone();
        xg.spec.axis = Axis::Space;
        let a = swapped_flows(&xg, SwappedFlow::TEvoDual, Convention::Paper).unwrap();
        assert_eq!(a, dual_space_rhs(&tg, Convention::Paper).unwrap());
        let b = swapped_flows(&xg, SwappedFlow::TEvoHigher, Convention::Paper).unwrap();
        assert_eq!(b, higher_space_rhs(&tg, Convention::Paper).unwrap());
        assert!(swapped_flows(&tg, SwappedFlow::TEvoDual, Convention::Paper).is_err());
    }

    fn endpoint<G: FlowGrid>(g: &G, flow: FlowKind, span: f64, n_steps: usize) -> Vec<C64> {
        let cfg = EvolutionConfig {
            step: span / n_steps as f64,
            n_steps,
            convention: Convention::Real,
            monitors: Monitors { casimirs: false, ..Monitors::default() },
            stride: n_steps,
            keep_snapshots: false,
            perturbation: 0.0,
        };
        flat(&evolve(g, flow, &cfg).unwrap().state)
    }

    fn observed_order<G: FlowGrid>(g: &G, flow: FlowKind, span: f64, n: usize) -> f64 {
        let y: Vec<Vec<C64>> = [n, 2 * n, 4 * n].iter().map(|&m| endpoint(g, flow, span, m)).collect();
        let diff = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        (diff(&y[0], &y[1]) / diff(&y[1], &y[2])).log2()
    }

    #[test]
    fn rk4_self_convergence() {
        let g = twist(32);
        let h = g.spec.spacing();
        assert!(observed_order(&g, FlowKind::Hm, 20.0 * 0.2 * h * h, 20) > 3.8);
        let t = time_data(32, Axis::Time);
        let h = t.spec.spacing();
        assert!(observed_order(&t, FlowKind::DualSpace, 0.1, 10) > 3.8);
        assert!(observed_order(&t, FlowKind::HigherSpace, 10.0 * 0.1 * h.powf(1.5), 20) > 3.8);
        let x = time_data(32, Axis::Space);
        assert!(observed_order(&x, FlowKind::TEvoDual, 0.1, 10) > 3.8);
        assert!(observed_order(&x, FlowKind::TEvoHigher, 10.0 * 0.1 * h.powf(1.5), 20) > 3.8);
    }

    #[test]
    fn north_pole_runs_are_still() {
        let spec = GridSpec::periodic(32, 1.0, Axis::Space).unwrap();
        let g = make_spin_data(spec, c(1.0), SpinDataKind::NorthPole, 0, 0.0).unwrap();
        let mut cfg = EvolutionConfig::with_span(FlowKind::Hm, spec.spacing(), 1.0);
        cfg.n_steps = 1000;
        cfg.monitors.charges = Some(2);
        cfg.monitors.transfer_scan = Some(vec![c(0.7), c(1.3)]);
        let r = evolve(&g, FlowKind::Hm, &cfg).unwrap().report;
        assert_eq!(r.casimir_drift, vec![0.0]);
        assert!(r.charges.as_ref().unwrap().iter().all(|d| d.relative_drift == 0.0));
        assert_eq!(r.transfer_scan.as_ref().unwrap().max, 0.0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["casimir_drift", "charges", "transfer_scan", "boundary_residuals"] {
            assert!(json.get(key).is_some(), "{key}");
        }

        let tspec = GridSpec::periodic(32, 1.0, Axis::Time).unwrap();
        let d = make_dual_data(tspec, c(1.0), SpinDataKind::NorthPole, SigmaKind::Zero, 0, 0.0).unwrap();
        for flow in [FlowKind::DualSpace, FlowKind::HigherSpace] {
            let mut cfg = EvolutionConfig::with_span(flow, tspec.spacing(), 1.0);
            cfg.n_steps = 1000;
            let r = evolve(&d, flow, &cfg).unwrap().report;
            assert!(r.casimir_drift.iter().all(|x| *x < 1e-12), "{:?}", r.casimir_drift);
        }
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let g = twist(32);
        let mut cfg = EvolutionConfig::with_span(FlowKind::Hm, g.spec.spacing(), 0.01);
        let t = time_data(32, Axis::Time);
        assert!(matches!(evolve(&t, FlowKind::Hm, &cfg), Err(Error::InvalidGrid(_))));
        assert!(matches!(evolve(&t, FlowKind::TEvoDual, &cfg), Err(Error::InvalidGrid(_))));
        cfg.step *= 100.0;
        assert!(matches!(evolve(&g, FlowKind::Hm, &cfg), Err(Error::InvalidGrid(_))));

        let spec = GridSpec::open(65, 1.0, Axis::Time).unwrap();
        let d = make_reflective_dual_data(spec, c(1.0), 2, 0.3, 0.2, 2).unwrap();
        let good = BoundaryParams::new(Side::Plus, ZERO, ZERO, ZERO, ONE);
        let bad = BoundaryParams::new(Side::Minus, ZERO, ONE, ZERO, ZERO);
        let mut cfg = EvolutionConfig::with_span(FlowKind::DualSpace, spec.spacing(), 0.05);
        cfg.monitors.boundary = Some((good, BoundaryParams { side: Side::Minus, ..good }));
        assert!(evolve(&d, FlowKind::DualSpace, &cfg).is_ok());
        cfg.monitors.boundary = Some((good, bad));
        assert!(matches!(evolve(&d, FlowKind::DualSpace, &cfg), Err(Error::BoundaryViolation { .. })));
    }

    #[test]
    fn injected_fault_breaks_conservation() {
        let g = twist(64);
        let mut cfg = EvolutionConfig::with_span(FlowKind::Hm, g.spec.spacing(), 1.0);
        cfg.monitors.charges = Some(1);
        let clean = evolve(&g, FlowKind::Hm, &cfg).unwrap().report;
        cfg.perturbation = 1e-3;
        let dirty = evolve(&g, FlowKind::Hm, &cfg).unwrap().report;
        assert!(clean.casimir_drift[0] < 1e-12);
        assert!(dirty.casimir_drift[0] > 1e-4);
        assert!(dirty.charge_drift(0).unwrap() > 1e-4);
    }

    #[test]
    fn reflective_data_keeps_the_boundary_relation() {
        let spec = GridSpec::open(129, 1.0, Axis::Time).unwrap();
        let d = make_reflective_dual_data(spec, c(1.0), 5, 0.4, 0.3, 3).unwrap();
        let kp = BoundaryParams::new(Side::Plus, ZERO, ZERO, ZERO, c(0.7));
        let km = BoundaryParams::new(Side::Minus, ZERO, ZERO, ZERO, c(-1.1));
        let mut cfg = EvolutionConfig::with_span(FlowKind::DualSpace, spec.spacing(), 0.25);
        cfg.monitors.boundary = Some((kp, km));
        let r = evolve(&d, FlowKind::DualSpace, &cfg).unwrap().report;
        let b = r.boundary_residuals.unwrap();
        assert!(b.initial.0 < 1e-15 && b.initial.1 < 1e-15);
        assert!(b.max.0 < 1e-5 && b.max.1 < 1e-5, "{b:?}");
    }

    #[test]
    fn closure_examples() {
        let cc = c(1.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // K ∝ I: only S′ = 0 is tangent and satisfies S × S′ = 0.
        for _ in 0..10 {
            let v = [rc(&mut rng), rc(&mut rng), rc(&mut rng)];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let p = SpinPoint::from_cartesian(v.map(|x| x * cc / norm));
            let k = BoundaryParams::new(Side::Plus, rc(&mut rng) + 2.0, ZERO, ZERO, ZERO);
            let (d, res, _) = closure_at(&p, cc, &k).unwrap();
            assert!(d.iter().all(|z| z.norm() < 1e-12) && res < 1e-12);
        }
        let k = BoundaryParams::new(Side::Minus, c(0.5), ZERO, ZERO, c(3.0));
        let (d, res, _) = closure_at(&SpinPoint::north_pole(cc), cc, &k).unwrap();
        assert!(d.iter().all(|z| z.norm() < 1e-14) && res < 1e-14);

        for side in [Side::Plus, Side::Minus] {
            for _ in 0..50 {
                let v = [rc(&mut rng), rc(&mut rng), rc(&mut rng) + 1.5];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let p = SpinPoint::from_cartesian(v.map(|x| x * cc / norm));
                let k = BoundaryParams::new(side, rc(&mut rng) + 1.5, rc(&mut rng), rc(&mut rng), rc(&mut rng));
                let (d, res, cond) = closure_at(&p, cc, &k).unwrap();
                assert!(res < 1e-10, "{res:e} (condition {cond:e})");
                assert!(space_bc_violations(&p, d, cc, &k).iter().all(|z| z.norm() < 1e-10));
            }
        }
        let bad = BoundaryParams::new(Side::Plus, ZERO, ONE, ZERO, ZERO);
        assert!(matches!(closure_at(&SpinPoint::north_pole(cc), cc, &bad), Err(Error::BoundaryDegenerate(_))));

        let spec = GridSpec::open(33, 1.0, Axis::Space).unwrap();
        let g = make_spin_data(spec, cc, SpinDataKind::FourierRandom { modes: 2 }, 4, 0.3).unwrap();
        let kp = BoundaryParams::new(Side::Plus, c(1.0), c(0.2), c(-0.1), c(0.3));
        let km = BoundaryParams::new(Side::Minus, c(2.0), c(0.1), c(0.4), c(-0.2));
        let [a, b] = open_boundary_closure(&g, &kp, &km).unwrap();
        assert_eq!((a.index, b.index), (32, 0));
        assert!(a.residual < 1e-10 && b.residual < 1e-10, "{a:?} {b:?}");
        assert!(a.condition.is_finite());
    }
}
