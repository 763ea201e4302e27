//! Sampled spin fields `(S₊, S₋, S_z)` and their auxiliary partners
//! `(Σ₊, Σ₋, Σ_z)` on a one-dimensional grid.
//!
//! Fields are complex throughout; real-structured data (`S₋ = conj(S₊)`,
//! `S_z` real) is just a special case. Periodic grids identify index
//! `n_points` with index `0`; open grids include both endpoints.
//!
//! Initial data is assumed smooth and, for periodic grids, smoothly periodic.
//! The Casimir is never re-projected once a grid exists: steppers hand back
//! whatever drift they produced.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{Mat2, C64, ZERO};
use crate::error::{Error, Result};

/// Relative Casimir tolerance enforced by the checked constructors.
pub const CASIMIR_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Space,
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    pub half_length: f64,
    pub boundary: Boundary,
    pub axis: Axis,
}

impl GridSpec {
    pub fn new(n_points: usize, half_length: f64, boundary: Boundary, axis: Axis) -> Result<Self> {
        if n_points < 8 {
            return Err(Error::InvalidGrid(format!("n_points = {n_points} < 8")));
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::InvalidGrid(format!("half_length = {half_length}")));
        }
        Ok(GridSpec {
            n_points,
            half_length,
            boundary,
            axis,
        })
    }

    pub fn periodic(n_points: usize, half_length: f64, axis: Axis) -> Result<Self> {
        Self::new(n_points, half_length, Boundary::Periodic, axis)
    }

    pub fn open(n_points: usize, half_length: f64, axis: Axis) -> Result<Self> {
        Self::new(n_points, half_length, Boundary::Open, axis)
    }

    pub fn spacing(&self) -> f64 {
        match self.boundary {
            Boundary::Periodic => 2.0 * self.half_length / self.n_points as f64,
            Boundary::Open => 2.0 * self.half_length / (self.n_points - 1) as f64,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.coord(i)).collect()
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinPoint {
    pub s_plus: C64,
    pub s_minus: C64,
    pub s_z: C64,
}

impl SpinPoint {
    pub fn new(s_plus: C64, s_minus: C64, s_z: C64) -> Self {
        SpinPoint {
            s_plus,
            s_minus,
            s_z,
        }
    }

    pub fn north_pole(casimir_c: C64) -> Self {
        SpinPoint::new(ZERO, ZERO, casimir_c)
    }

    pub fn from_cartesian([x, y, z]: [C64; 3]) -> Self {
        let i = C64::i();
        SpinPoint::new(x + i * y, x - i * y, z)
    }

    pub fn cartesian(&self) -> [C64; 3] {
        cartesian(self)
    }

    pub fn casimir(&self) -> C64 {
        casimir(self)
    }

    /// `[[S_z, S₋], [S₊, −S_z]]`.
    pub fn matrix(&self) -> Mat2 {
        Mat2::sl2(self.s_plus, self.s_minus, self.s_z)
    }

    pub fn as_array(&self) -> [C64; 3] {
        [self.s_plus, self.s_minus, self.s_z]
    }

    pub fn from_array(a: [C64; 3]) -> Self {
        SpinPoint::new(a[0], a[1], a[2])
    }
}

/// `(S_x, S_y, S_z)` from `S± = S_x ± i S_y`.
pub fn cartesian(p: &SpinPoint) -> [C64; 3] {
    let sx = (p.s_plus + p.s_minus) * 0.5;
    let sy = (p.s_plus - p.s_minus) / C64::new(0.0, 2.0);
    [sx, sy, p.s_z]
}

/// `S_z² + S₊ S₋`.
pub fn casimir(p: &SpinPoint) -> C64 {
    p.s_z * p.s_z + p.s_plus * p.s_minus
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub spin: SpinPoint,
    pub sigma_plus: C64,
    pub sigma_minus: C64,
    pub sigma_z: C64,
}

impl DualPoint {
    pub fn new(spin: SpinPoint, sigma_plus: C64, sigma_minus: C64, sigma_z: C64) -> Self {
        DualPoint {
            spin,
            sigma_plus,
            sigma_minus,
            sigma_z,
        }
    }

    pub fn sigma(&self) -> SpinPoint {
        SpinPoint::new(self.sigma_plus, self.sigma_minus, self.sigma_z)
    }

    /// `[[Σ_z, Σ₋], [Σ₊, −Σ_z]]`.
    pub fn sigma_matrix(&self) -> Mat2 {
        Mat2::sl2(self.sigma_plus, self.sigma_minus, self.sigma_z)
    }

    /// `Σ₊Σ₋ + Σ_z²`, i.e. `Σ·Σ` in Cartesian components.
    pub fn sigma_sq(&self) -> C64 {
        self.sigma_plus * self.sigma_minus + self.sigma_z * self.sigma_z
    }

    pub fn as_array(&self) -> [C64; 6] {
        [
            self.spin.s_plus,
            self.spin.s_minus,
            self.spin.s_z,
            self.sigma_plus,
            self.sigma_minus,
            self.sigma_z,
        ]
    }

    pub fn from_array(a: [C64; 6]) -> Self {
        DualPoint::new(SpinPoint::new(a[0], a[1], a[2]), a[3], a[4], a[5])
    }
}

/// `2 S_z Σ_z + S₊ Σ₋ + S₋ Σ₊` (twice the Cartesian `S·Σ`).
pub fn dual_casimir(p: &DualPoint) -> C64 {
    p.spin.s_z * p.sigma_z * 2.0 + p.spin.s_plus * p.sigma_minus + p.spin.s_minus * p.sigma_plus
}

/// Local field identifiers. The first three exist on every grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    SPlus,
    SMinus,
    SZ,
    SigmaPlus,
    SigmaMinus,
    SigmaZ,
}

impl Field {
    pub const SPIN: [Field; 3] = [Field::SPlus, Field::SMinus, Field::SZ];
    pub const ALL: [Field; 6] = [
        Field::SPlus,
        Field::SMinus,
        Field::SZ,
        Field::SigmaPlus,
        Field::SigmaMinus,
        Field::SigmaZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::SPlus => "S+",
            Field::SMinus => "S-",
            Field::SZ => "Sz",
            Field::SigmaPlus => "Sig+",
            Field::SigmaMinus => "Sig-",
            Field::SigmaZ => "Sigz",
        }
    }
}

/// Shared access to the nodal values of a grid of local fields.
pub trait FieldGrid: Clone + Send + Sync {
    const FIELDS: &'static [Field];

    fn spec(&self) -> &GridSpec;
    fn casimir_c(&self) -> C64;
    fn get(&self, i: usize, f: Field) -> C64;
    fn set(&mut self, i: usize, f: Field, v: C64);

    fn len(&self) -> usize {
        self.spec().n_points
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spin_at(&self, i: usize) -> SpinPoint {
        SpinPoint::new(
            self.get(i, Field::SPlus),
            self.get(i, Field::SMinus),
            self.get(i, Field::SZ),
        )
    }

    fn field_values(&self, f: Field) -> Vec<C64> {
        (0..self.len()).map(|i| self.get(i, f)).collect()
    }

    fn derivative(&self, f: Field, order: usize) -> Result<Vec<C64>> {
        derivative(&self.field_values(f), self.spec(), order)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinGrid {
    pub spec: GridSpec,
    pub c: C64,
    pub values: Vec<SpinPoint>,
}

impl SpinGrid {
    /// Checked constructor: length must match and every point must lie on the
    /// Casimir sphere to within `CASIMIR_TOL`.
    pub fn new(spec: GridSpec, c: C64, values: Vec<SpinPoint>) -> Result<Self> {
        let g = Self::from_values_unchecked(spec, c, values)?;
        let dev = g.max_casimir_deviation();
        if dev > CASIMIR_TOL * (c * c).norm().max(1e-300) {
            return Err(Error::CasimirUnreachable(format!(
                "max |S_z² + S₊S₋ − c²| = {dev:e}"
            )));
        }
        Ok(g)
    }

    /// Length check only; used for evolved states whose drift is reported elsewhere.
    pub fn from_values_unchecked(spec: GridSpec, c: C64, values: Vec<SpinPoint>) -> Result<Self> {
        if values.len() != spec.n_points {
            return Err(Error::InvalidGrid(format!(
                "{} values for {} points",
                values.len(),
                spec.n_points
            )));
        }
        Ok(SpinGrid { spec, c, values })
    }

    pub fn max_casimir_deviation(&self) -> f64 {
        let c2 = self.c * self.c;
        self.values
            .iter()
            .map(|p| (casimir(p) - c2).norm())
            .fold(0.0, f64::max)
    }

    /// Pairs the spin values with auxiliary fields.
    pub fn with_sigma(&self, sigma: &[SpinPoint]) -> Result<DualGrid> {
        if sigma.len() != self.values.len() {
            return Err(Error::InvalidGrid("sigma length mismatch".into()));
        }
        let values = self
            .values
            .iter()
            .zip(sigma)
            .map(|(s, g)| DualPoint::new(*s, g.s_plus, g.s_minus, g.s_z))
            .collect();
        DualGrid::from_values_unchecked(self.spec, self.c, values)
    }

    pub fn to_csv(&self) -> String {
        snapshot_csv(&self.spec, |i| self.values[i].as_array().to_vec(), 3)
    }

    pub fn from_csv(spec: GridSpec, c: C64, text: &str) -> Result<Self> {
        let rows = parse_snapshot(text, 3)?;
        let values = rows
            .into_iter()
            .map(|r| SpinPoint::new(r[0], r[1], r[2]))
            .collect();
        Self::from_values_unchecked(spec, c, values)
    }
}

impl FieldGrid for SpinGrid {
    const FIELDS: &'static [Field] = &Field::SPIN;

    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn casimir_c(&self) -> C64 {
        self.c
    }

    fn get(&self, i: usize, f: Field) -> C64 {
        let p = &self.values[i];
        match f {
            Field::SPlus => p.s_plus,
            Field::SMinus => p.s_minus,
            Field::SZ => p.s_z,
            _ => panic!("spin grid has no field {}", f.name()),
        }
    }

    fn set(&mut self, i: usize, f: Field, v: C64) {
        let p = &mut self.values[i];
        match f {
            Field::SPlus => p.s_plus = v,
            Field::SMinus => p.s_minus = v,
            Field::SZ => p.s_z = v,
            _ => panic!("spin grid has no field {}", f.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualGrid {
    pub spec: GridSpec,
    pub c: C64,
    pub values: Vec<DualPoint>,
}

impl DualGrid {
    /// Checked constructor: Casimir to `CASIMIR_TOL` (relative) and dual Casimir
    /// to `dual_tol` (absolute).
    pub fn new(spec: GridSpec, c: C64, values: Vec<DualPoint>, dual_tol: f64) -> Result<Self> {
        let g = Self::from_values_unchecked(spec, c, values)?;
        let dev = g.spin().max_casimir_deviation();
        if dev > CASIMIR_TOL * (c * c).norm().max(1e-300) {
            return Err(Error::CasimirUnreachable(format!(
                "max |S_z² + S₊S₋ − c²| = {dev:e}"
            )));
        }
        let dual = g.max_dual_casimir();
        if dual > dual_tol {
            return Err(Error::CasimirUnreachable(format!("max |c̃| = {dual:e}")));
        }
        Ok(g)
    }

    pub fn from_values_unchecked(spec: GridSpec, c: C64, values: Vec<DualPoint>) -> Result<Self> {
        if values.len() != spec.n_points {
            return Err(Error::InvalidGrid(format!(
                "{} values for {} points",
                values.len(),
                spec.n_points
            )));
        }
        Ok(DualGrid { spec, c, values })
    }

    pub fn spin(&self) -> SpinGrid {
        SpinGrid {
            spec: self.spec,
            c: self.c,
            values: self.values.iter().map(|p| p.spin).collect(),
        }
    }

    pub fn max_dual_casimir(&self) -> f64 {
        self.values
            .iter()
            .map(|p| dual_casimir(p).norm())
            .fold(0.0, f64::max)
    }

    /// Removes the component of `Σ` along `S`, pointwise.
    pub fn project_sigma(&mut self) {
        let c2 = self.c * self.c;
        for p in &mut self.values {
            *p = project_dual_point(p, c2);
        }
    }

    pub fn to_csv(&self) -> String {
        snapshot_csv(&self.spec, |i| self.values[i].as_array().to_vec(), 6)
    }

    pub fn from_csv(spec: GridSpec, c: C64, text: &str) -> Result<Self> {
        let rows = parse_snapshot(text, 6)?;
        let values = rows
            .into_iter()
            .map(|r| DualPoint::from_array([r[0], r[1], r[2], r[3], r[4], r[5]]))
            .collect();
        Self::from_values_unchecked(spec, c, values)
    }
}

impl FieldGrid for DualGrid {
    const FIELDS: &'static [Field] = &Field::ALL;

    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn casimir_c(&self) -> C64 {
        self.c
    }

    fn get(&self, i: usize, f: Field) -> C64 {
        let p = &self.values[i];
        match f {
            Field::SPlus => p.spin.s_plus,
            Field::SMinus => p.spin.s_minus,
            Field::SZ => p.spin.s_z,
            Field::SigmaPlus => p.sigma_plus,
            Field::SigmaMinus => p.sigma_minus,
            Field::SigmaZ => p.sigma_z,
        }
    }

    fn set(&mut self, i: usize, f: Field, v: C64) {
        let p = &mut self.values[i];
        match f {
            Field::SPlus => p.spin.s_plus = v,
            Field::SMinus => p.spin.s_minus = v,
            Field::SZ => p.spin.s_z = v,
            Field::SigmaPlus => p.sigma_plus = v,
            Field::SigmaMinus => p.sigma_minus = v,
            Field::SigmaZ => p.sigma_z = v,
        }
    }
}

/// `Σ → Σ − (S·Σ / c²) S` in Cartesian components.
pub fn project_dual_point(p: &DualPoint, c2: C64) -> DualPoint {
    let s = cartesian(&p.spin);
    let g = cartesian(&p.sigma());
    let dot: C64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
    let k = dot / c2;
    let projected = [g[0] - k * s[0], g[1] - k * s[1], g[2] - k * s[2]];
    let sig = SpinPoint::from_cartesian(projected);
    DualPoint::new(p.spin, sig.s_plus, sig.s_minus, sig.s_z)
}

/// Finite-difference weights for derivative `order` at `x0` from `nodes`
/// (Fornberg's recursion).
pub(crate) fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    w[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    w[i][k] = c1 * (k as f64 * w[i - 1][k - 1] - c5 * w[i - 1][k]) / c2;
                }
                w[i][0] = -c1 * c5 * w[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                w[j][k] = (c4 * w[j][k] - k as f64 * w[j][k - 1]) / c3;
            }
            w[j][0] = c4 * w[j][0] / c3;
        }
        c1 = c2;
    }
    w.into_iter().map(|row| row[order]).collect()
}

/// A stencil: offsets (relative to the evaluation index) and weights in units
/// of the grid spacing.
struct Stencil {
    offsets: Vec<isize>,
    weights: Vec<f64>,
}

fn stencil(offsets: Vec<isize>, at: isize, order: usize) -> Stencil {
    let nodes: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
    let weights = fd_weights(at as f64, &nodes, order);
    Stencil {
        offsets: offsets.iter().map(|o| o - at).collect(),
        weights,
    }
}

/// Fourth-order finite-difference derivative of nodal values along the grid
/// axis. Periodic grids wrap; open grids switch to one-sided stencils
/// (5 points for first, 6 for second derivatives) within two nodes of an end.
pub fn derivative(values: &[C64], spec: &GridSpec, order: usize) -> Result<Vec<C64>> {
    derivative_generic(values, spec, order, C64::default(), |a, w| a * w)
}

/// Entrywise `derivative` of a matrix-valued grid function.
pub fn derivative_mat2(values: &[Mat2], spec: &GridSpec, order: usize) -> Result<Vec<Mat2>> {
    derivative_generic(values, spec, order, Mat2::zero(), |a, w| a.scale_re(w))
}

fn derivative_generic<T, F>(
    values: &[T],
    spec: &GridSpec,
    order: usize,
    zero: T,
    scale: F,
) -> Result<Vec<T>>
where
    T: Copy + std::ops::Add<Output = T>,
    F: Fn(T, f64) -> T,
{
    if !(order == 1 || order == 2) {
        return Err(Error::Unsupported(format!("derivative order {order}")));
    }
    let n = values.len();
    if n != spec.n_points {
        return Err(Error::InvalidGrid("value count does not match grid".into()));
    }
    let need = if order == 1 { 5 } else { 6 };
    if n < need.max(8) {
        return Err(Error::GridTooSmall { have: n, need });
    }
    let h = spec.spacing().powi(order as i32);
    let central = stencil((-2..=2).collect(), 0, order);
    let mut out = vec![zero; n];
    match spec.boundary {
        Boundary::Periodic => {
            for (i, slot) in out.iter_mut().enumerate() {
                let mut acc = zero;
                for (o, w) in central.offsets.iter().zip(&central.weights) {
                    let j = (i as isize + o).rem_euclid(n as isize) as usize;
                    acc = acc + scale(values[j], *w);
                }
                *slot = scale(acc, 1.0 / h);
            }
        }
        Boundary::Open => {
            let left: Vec<Stencil> = (0..2)
                .map(|at| stencil((0..need as isize).collect(), at, order))
                .collect();
            let right: Vec<Stencil> = (0..2)
                .map(|k| {
                    let at = need as isize - 1 - k;
                    stencil((0..need as isize).collect(), at, order)
                })
                .collect();
            for (i, slot) in out.iter_mut().enumerate() {
                let st = if i < 2 {
                    &left[i]
                } else if i >= n - 2 {
                    &right[n - 1 - i]
                } else {
                    &central
                };
                let mut acc = zero;
                for (o, w) in st.offsets.iter().zip(&st.weights) {
                    let j = (i as isize + o) as usize;
                    acc = acc + scale(values[j], *w);
                }
                *slot = scale(acc, 1.0 / h);
            }
        }
    }
    Ok(out)
}

/// Quadrature over the whole grid interval: the trapezoid rule on periodic
/// grids, composite Simpson on open grids (an odd count of intervals finishes
/// with Simpson's 3/8 rule).
pub fn integrate(values: &[C64], spec: &GridSpec) -> C64 {
    integrate_generic(values, spec, C64::default(), |a, w| a * w)
}

pub fn integrate_mat2(values: &[Mat2], spec: &GridSpec) -> Mat2 {
    integrate_generic(values, spec, Mat2::zero(), |a, w| a.scale_re(w))
}

fn integrate_generic<T, F>(values: &[T], spec: &GridSpec, zero: T, scale: F) -> T
where
    T: Copy + std::ops::Add<Output = T>,
    F: Fn(T, f64) -> T,
{
    let h = spec.spacing();
    if spec.is_periodic() {
        // Uniform weights: spectrally accurate, and consistent with δ → δ_mn/Δ.
        return values.iter().fold(zero, |acc, v| acc + scale(*v, h));
    }
    let pts: Vec<T> = values.to_vec();
    let intervals = pts.len() - 1;
    let simpson_end = if intervals.is_multiple_of(2) { intervals } else { intervals - 3 };
    let mut acc = zero;
    let mut i = 0;
    while i < simpson_end {
        acc = acc + scale(pts[i], h / 3.0) + scale(pts[i + 1], 4.0 * h / 3.0) + scale(pts[i + 2], h / 3.0);
        i += 2;
    }
    if simpson_end < intervals {
        let k = simpson_end;
        let w = 3.0 * h / 8.0;
        acc = acc
            + scale(pts[k], w)
            + scale(pts[k + 1], 3.0 * w)
            + scale(pts[k + 2], 3.0 * w)
            + scale(pts[k + 3], w);
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpinDataKind {
    /// `S = (0, 0, c)` everywhere.
    NorthPole,
    /// `S₊ = c sin θ e^{iφ}`, `S_z = c cos θ` with
    /// `θ(ξ) = theta0 + amplitude·cos(πξ)`, `φ(ξ) = winding·πξ`, `ξ = x / half_length`.
    Twist { theta0: f64, winding: i32 },
    /// A few low Fourier modes of amplitude `amplitude` around the north
    /// pole, normalized onto the sphere.
    FourierRandom { modes: usize },
}

/// Builds smooth, real-structured spin data on `spec`.
pub fn make_spin_data(
    spec: GridSpec,
    c: C64,
    kind: SpinDataKind,
    seed: u64,
    amplitude: f64,
) -> Result<SpinGrid> {
    let xi: Vec<f64> = spec.coords().iter().map(|x| x / spec.half_length).collect();
    let unit: Vec<[f64; 3]> = match kind {
        SpinDataKind::NorthPole => vec![[0.0, 0.0, 1.0]; spec.n_points],
        SpinDataKind::Twist { theta0, winding } => xi
            .iter()
            .map(|&s| {
                let theta = theta0 + amplitude * (PI * s).cos();
                let phi = winding as f64 * PI * s;
                [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
            })
            .collect(),
        SpinDataKind::FourierRandom { modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut coeffs = vec![[[0.0; 2]; 3]; modes.max(1)];
            for mode in coeffs.iter_mut() {
                for comp in mode.iter_mut() {
                    comp[0] = rng.gen_range(-1.0..1.0);
                    comp[1] = rng.gen_range(-1.0..1.0);
                }
            }
            xi.iter()
                .map(|&s| {
                    let mut v = [0.0, 0.0, 1.0];
                    for (k, mode) in coeffs.iter().enumerate() {
                        let arg = PI * (k + 1) as f64 * s;
                        for d in 0..3 {
                            v[d] += amplitude * (mode[d][0] * arg.cos() + mode[d][1] * arg.sin())
                                / (k + 1) as f64;
                        }
                    }
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    [v[0] / norm, v[1] / norm, v[2] / norm]
                })
                .collect()
        }
    };
    let mut values = Vec::with_capacity(spec.n_points);
    for (i, u) in unit.iter().enumerate() {
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::CasimirUnreachable(format!("degenerate direction at {i}")));
        }
        // Guard keeps the c + S_z denominators well conditioned.
        if 1.0 + u[2] < 0.1 {
            return Err(Error::CasimirUnreachable(format!(
                "|c + S_z| < 0.1|c| at index {i}; reduce the amplitude"
            )));
        }
        let sxy = C64::new(u[0], u[1]);
        values.push(SpinPoint::new(c * sxy, c * sxy.conj(), c * u[2]));
    }
    SpinGrid::new(spec, c, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaKind {
    Zero,
    /// `Σ = κ S` before projection.
    ParallelToSpin,
    /// Random low modes, amplitude `amplitude`.
    Random { amplitude: f64, modes: usize },
}

/// Spin data as in [`make_spin_data`] plus auxiliary fields projected onto the
/// tangent plane so that the dual Casimir vanishes pointwise.
pub fn make_dual_data(
    spec: GridSpec,
    c: C64,
    kind: SpinDataKind,
    sigma: SigmaKind,
    seed: u64,
    amplitude: f64,
) -> Result<DualGrid> {
    let spin = make_spin_data(spec, c, kind, seed, amplitude)?;
    let xi: Vec<f64> = spec.coords().iter().map(|x| x / spec.half_length).collect();
    let raw: Vec<[C64; 3]> = match sigma {
        SigmaKind::Zero => vec![[ZERO; 3]; spec.n_points],
        SigmaKind::ParallelToSpin => spin
            .values
            .iter()
            .map(|p| {
                let s = cartesian(p);
                [s[0] * 0.7, s[1] * 0.7, s[2] * 0.7]
            })
            .collect(),
        SigmaKind::Random { amplitude, modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
            let coeffs: Vec<[[f64; 2]; 3]> = (0..modes.max(1))
                .map(|_| {
                    let mut m = [[0.0; 2]; 3];
                    for comp in m.iter_mut() {
                        comp[0] = rng.gen_range(-1.0..1.0);
                        comp[1] = rng.gen_range(-1.0..1.0);
                    }
                    m
                })
                .collect();
            xi.iter()
                .map(|&s| {
                    let mut v = [0.0; 3];
                    for (k, mode) in coeffs.iter().enumerate() {
                        let arg = PI * k as f64 * s;
                        for d in 0..3 {
                            v[d] += amplitude * (mode[d][0] * arg.cos() + mode[d][1] * arg.sin())
                                / (k + 1) as f64;
                        }
                    }
                    [C64::new(v[0], 0.0), C64::new(v[1], 0.0), C64::new(v[2], 0.0)]
                })
                .collect()
        }
    };
    let c2 = spin.c * spin.c;
    let values = spin
        .values
        .iter()
        .zip(&raw)
        .map(|(s, g)| {
            let sig = SpinPoint::from_cartesian(*g);
            project_dual_point(&DualPoint::new(*s, sig.s_plus, sig.s_minus, sig.s_z), c2)
        })
        .collect();
    DualGrid::new(spec, c, values, 1e-12 * c2.norm().max(1.0))
}

/// Open-grid data whose transverse components `(x, y)` are even and whose
/// `z` components are odd about both ends, for `S` and `Σ` alike. Every flow
/// here commutes with reflecting the grid coordinate about an end while
/// flipping the `z` components, so `S_z = Σ_z = 0` at both ends for as long
/// as the symmetry is kept. `S` stays within `amplitude` of the `x` axis.
pub fn make_reflective_dual_data(
    spec: GridSpec,
    c: C64,
    seed: u64,
    amplitude: f64,
    sigma_amplitude: f64,
    modes: usize,
) -> Result<DualGrid> {
    if spec.is_periodic() {
        return Err(Error::InvalidGrid("reflective data needs an open grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect()
    };
    let modes = modes.max(1);
    let spin_c = draw(modes);
    let sig_c = draw(modes + 1);
    let l = spec.half_length;
    let eval = |coef: &[[f64; 3]], t: f64, amp: f64, base: [f64; 3]| -> [f64; 3] {
        let mut v = base;
        for (m, a) in coef.iter().enumerate() {
            let arg = m as f64 * PI * (t + l) / (2.0 * l);
            let w = amp / (m + 1) as f64;
            v[0] += w * a[0] * arg.cos();
            v[1] += w * a[1] * arg.cos();
            v[2] += w * a[2] * (arg + PI * (t + l) / (2.0 * l)).sin();
        }
        v
    };
    let c2 = c * c;
    let mut values = Vec::with_capacity(spec.n_points);
    for t in spec.coords() {
        let v = eval(&spin_c, t, amplitude, [1.0, 0.0, 0.0]);
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let u = v.map(|x| C64::new(x / norm, 0.0) * c);
        let spin = SpinPoint::from_cartesian(u);
        let g = eval(&sig_c, t, sigma_amplitude, [0.0; 3]).map(|x| C64::new(x, 0.0));
        let sig = SpinPoint::from_cartesian(g);
        values.push(project_dual_point(&DualPoint::new(spin, sig.s_plus, sig.s_minus, sig.s_z), c2));
    }
    DualGrid::new(spec, c, values, 1e-12 * c2.norm().max(1.0))
}

fn snapshot_csv<F>(spec: &GridSpec, row: F, n_fields: usize) -> String
where
    F: Fn(usize) -> Vec<C64>,
{
    let mut out = String::new();
    out.push_str(&snapshot_header(n_fields));
    out.push('\n');
    for i in 0..spec.n_points {
        let _ = write!(out, "{},{:.16e}", i, spec.coord(i));
        for z in row(i) {
            let _ = write!(out, ",{:.16e},{:.16e}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

/// Column header of grid snapshots: `index,x,S+re,S+im,S-re,S-im,Szre,Szim`
/// followed, for dual grids, by `Sig+re,Sig+im,Sig-re,Sig-im,Sigzre,Sigzim`.
pub fn snapshot_header(n_fields: usize) -> String {
    let mut cols = vec!["index".to_string(), "x".to_string()];
    for f in &Field::ALL[..n_fields] {
        cols.push(format!("{}re", f.name()));
        cols.push(format!("{}im", f.name()));
    }
    cols.join(",")
}

fn parse_snapshot(text: &str, n_fields: usize) -> Result<Vec<Vec<C64>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty snapshot".into()))?;
    if header.trim() != snapshot_header(n_fields) {
        return Err(Error::Parse(format!("unexpected header `{header}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cells: Vec<f64> = line
                .split(',')
                .skip(2)
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if cells.len() != 2 * n_fields {
                return Err(Error::Parse(format!("bad row `{line}`")));
            }
            Ok(cells.chunks(2).map(|p| C64::new(p[0], p[1])).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c, ONE};

    fn periodic(n: usize) -> GridSpec {
        GridSpec::periodic(n, PI, Axis::Space).unwrap()
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::periodic(4, 1.0, Axis::Space).is_err());
        assert!(GridSpec::open(16, 0.0, Axis::Time).is_err());
        let g = GridSpec::open(11, 1.0, Axis::Time).unwrap();
        assert!((g.spacing() - 0.2).abs() < 1e-15);
        assert!((g.coord(10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cartesian_examples() {
        let cc = c(1.5);
        assert_eq!(cartesian(&SpinPoint::north_pole(cc)), [ZERO, ZERO, cc]);
        let p = SpinPoint::new(C64::new(1.0, 1.0), C64::new(1.0, -1.0), ZERO);
        let [x, y, z] = cartesian(&p);
        assert!((x - ONE).norm() < 1e-16 && (y - ONE).norm() < 1e-16 && z == ZERO);
        let q = SpinPoint::new(C64::new(0.3, -0.2), C64::new(-0.7, 0.1), C64::new(0.4, 0.9));
        let back = SpinPoint::from_cartesian(cartesian(&q));
        assert!((back.s_plus - q.s_plus).norm() < 1e-15);
        assert!((back.s_minus - q.s_minus).norm() < 1e-15);
    }

    #[test]
    fn casimir_examples() {
        assert_eq!(casimir(&SpinPoint::north_pole(c(2.0))), c(4.0));
        assert_eq!(casimir(&SpinPoint::new(ONE, ONE, ZERO)), ONE);
        let spec = periodic(64);
        let g = make_spin_data(spec, c(2.0), SpinDataKind::FourierRandom { modes: 3 }, 4, 0.4).unwrap();
        assert!(g.max_casimir_deviation() < 1e-14 * 4.0);
    }

    #[test]
    fn dual_casimir_of_derivative_profile_is_small() {
        let spec = periodic(128);
        let g = make_spin_data(spec, ONE, SpinDataKind::Twist { theta0: 0.6, winding: 1 }, 0, 0.3).unwrap();
        let d: Vec<Vec<C64>> = Field::SPIN.iter().map(|f| g.derivative(*f, 1).unwrap()).collect();
        let sigma: Vec<SpinPoint> = (0..128).map(|i| SpinPoint::new(d[0][i], d[1][i], d[2][i])).collect();
        let dual = g.with_sigma(&sigma).unwrap();
        let h4 = spec.spacing().powi(4);
        assert!(dual.max_dual_casimir() < 10.0 * h4, "{}", dual.max_dual_casimir());
        let zero = DualPoint::new(SpinPoint::north_pole(ONE), ZERO, ZERO, ZERO);
        assert_eq!(dual_casimir(&zero), ZERO);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let spec = periodic(16);
        let v = vec![C64::new(0.3, 1.0); 16];
        for order in [1, 2] {
            assert!(derivative(&v, &spec, order).unwrap().iter().all(|z| z.norm() < 1e-12));
        }
        let open = GridSpec::open(16, 1.0, Axis::Space).unwrap();
        for order in [1, 2] {
            assert!(derivative(&v, &open, order).unwrap().iter().all(|z| z.norm() < 1e-10));
        }
    }

    #[test]
    fn derivative_exact_on_quartics_open_grid() {
        let spec = GridSpec::open(21, 1.3, Axis::Space).unwrap();
        let xs = spec.coords();
        let p = |x: f64| 0.5 - 1.2 * x + 0.7 * x * x - 0.3 * x.powi(3) + 0.11 * x.powi(4);
        let dp = |x: f64| -1.2 + 1.4 * x - 0.9 * x * x + 0.44 * x.powi(3);
        let ddp = |x: f64| 1.4 - 1.8 * x + 1.32 * x * x;
        let v: Vec<C64> = xs.iter().map(|&x| c(p(x))).collect();
        let d1 = derivative(&v, &spec, 1).unwrap();
        let d2 = derivative(&v, &spec, 2).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert!((d1[i].re - dp(x)).abs() < 1e-11, "d1 at {i}");
            assert!((d2[i].re - ddp(x)).abs() < 1e-9, "d2 at {i}");
        }
        let lin: Vec<C64> = xs.iter().map(|&x| c(3.0 * x - 1.0)).collect();
        assert!(derivative(&lin, &spec, 1).unwrap().iter().all(|z| (z.re - 3.0).abs() < 1e-12));
    }

    #[test]
    fn derivative_converges_at_fourth_order() {
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| {
                let spec = periodic(n);
                let xs = spec.coords();
                let v: Vec<C64> = xs.iter().map(|&x| c((PI * x / PI).sin())).collect();
                let d = derivative(&v, &spec, 1).unwrap();
                xs.iter()
                    .zip(&d)
                    .map(|(&x, z)| (z.re - x.cos()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 3.8, "{errs:?}");
        }
    }

    #[test]
    fn simpson_matches_analytic_integrals() {
        let spec = periodic(64);
        let v: Vec<C64> = spec.coords().iter().map(|x| c(1.0 + x.cos().powi(2))).collect();
        assert!((integrate(&v, &spec).re - 3.0 * PI).abs() < 1e-12);
        for n in [20, 21] {
            let open = GridSpec::open(n, 1.0, Axis::Time).unwrap();
            let v: Vec<C64> = open.coords().iter().map(|x| c(x.powi(3) + x * x)).collect();
            assert!((integrate(&v, &open).re - 2.0 / 3.0).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn spin_data_examples() {
        let spec = periodic(32);
        let np = make_spin_data(spec, c(1.3), SpinDataKind::NorthPole, 0, 0.0).unwrap();
        assert!(np.values.iter().all(|p| *p == SpinPoint::north_pole(c(1.3))));
        let tw = make_spin_data(spec, c(2.0), SpinDataKind::Twist { theta0: PI / 2.0, winding: 1 }, 0, 0.0).unwrap();
        for p in &tw.values {
            assert!(p.s_z.norm() < 1e-15);
            assert!((p.s_plus.norm() - 2.0).abs() < 1e-14);
        }
        let fr = make_spin_data(spec, ONE, SpinDataKind::FourierRandom { modes: 3 }, 7, 0.5).unwrap();
        assert!(fr.max_casimir_deviation() < 1e-14);
        let bad = make_spin_data(spec, ONE, SpinDataKind::Twist { theta0: 3.0, winding: 0 }, 0, 0.0);
        assert!(matches!(bad, Err(Error::CasimirUnreachable(_))));
    }

    #[test]
    fn dual_data_examples() {
        let spec = GridSpec::periodic(32, 1.0, Axis::Time).unwrap();
        let tw = SpinDataKind::Twist { theta0: 0.8, winding: 1 };
        let z = make_dual_data(spec, ONE, tw, SigmaKind::Zero, 1, 0.2).unwrap();
        assert!(z.values.iter().all(|p| p.sigma_plus == ZERO && p.sigma_minus == ZERO && p.sigma_z == ZERO));
        let par = make_dual_data(spec, ONE, tw, SigmaKind::ParallelToSpin, 1, 0.2).unwrap();
        assert!(par.values.iter().all(|p| p.sigma().as_array().iter().all(|s| s.norm() < 1e-15)));
        let r = make_dual_data(
            spec,
            c(1.5),
            SpinDataKind::FourierRandom { modes: 2 },
            SigmaKind::Random { amplitude: 0.5, modes: 3 },
            3,
            0.3,
        )
        .unwrap();
        assert!(r.max_dual_casimir() < 1e-13);
        assert!(r.values.iter().any(|p| p.sigma_z.norm() > 1e-3));
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let spec = GridSpec::periodic(16, 1.0, Axis::Time).unwrap();
        let g = make_dual_data(
            spec,
            ONE,
            SpinDataKind::FourierRandom { modes: 2 },
            SigmaKind::Random { amplitude: 0.5, modes: 2 },
            9,
            0.3,
        )
        .unwrap();
        let text = g.to_csv();
        assert!(text.starts_with("index,x,S+re,S+im,S-re,S-im,Szre,Szim,Sig+re,Sig+im,Sig-re,Sig-im,Sigzre,Sigzim\n"));
        assert_eq!(DualGrid::from_csv(spec, ONE, &text).unwrap(), g);
        assert!(SpinGrid::from_csv(spec, ONE, &text).is_err());
    }
}
