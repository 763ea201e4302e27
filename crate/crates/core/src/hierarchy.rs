//! W/Z diagonalisation of the transport matrices, conserved charges, and
//! the generators of the partner Lax matrices.
//!
//! The recursions are solved pointwise on truncated Taylor jets of the
//! fields: `W^(k)` at a node only needs the first few derivatives of `S`
//! (and `Σ`) there, which are taken from the grid by finite differences.
//! Time-orientation jets are in the printed time `t`, so a grid derivative
//! along `τ` picks up one factor of the convention's time factor `a`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::algebra::{BoundaryParams, Mat2, Side, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::fields::{derivative, integrate_mat2, DualGrid, DualPoint, Field, FieldGrid, GridSpec, SpinGrid, SpinPoint};
use crate::lax::Convention;
use crate::monodromy::Orientation;

/// Smallest admissible `|c + S_z| / max(|c|, 1)`.
pub const BRANCH_EPS: f64 = 1e-8;

/// Largest supported truncation order.
pub const K_MAX_LIMIT: usize = 4;

// Truncated power series with matrix coefficients. Jets share the same
// product: coefficient `k` of a jet is `f^(k)/k!`.

fn ser_mul(a: &[Mat2], b: &[Mat2], n: usize) -> Vec<Mat2> {
    let n = n.min(a.len()).min(b.len());
    (0..n)
        .map(|k| {
            let mut acc = Mat2::zero();
            for j in 0..=k {
                acc += a[j] * b[k - j];
            }
            acc
        })
        .collect()
}

fn ser_inv(a: &[Mat2]) -> Result<Vec<Mat2>> {
    let b0 = a[0].inverse()?;
    let mut b = vec![b0];
    for k in 1..a.len() {
        let mut acc = Mat2::zero();
        for j in 1..=k {
            acc += a[j] * b[k - j];
        }
        b.push(-(b0 * acc));
    }
    Ok(b)
}

fn scalar_recip(a: &[C64]) -> Vec<C64> {
    let r0 = ONE / a[0];
    let mut r = vec![r0];
    for k in 1..a.len() {
        let mut acc = ZERO;
        for j in 1..=k {
            acc += a[j] * r[k - j];
        }
        r.push(-acc * r0);
    }
    r
}

fn jet_deriv(a: &[Mat2]) -> Vec<Mat2> {
    (1..a.len()).map(|k| a[k] * (k as f64)).collect()
}

fn ser_add(a: &[Mat2], b: &[Mat2]) -> Vec<Mat2> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

/// `(I + W(σμ)) M(μ)`-style products need `W(−μ)`: flip odd coefficients.
fn ser_reflect(a: &[Mat2]) -> Vec<Mat2> {
    a.iter()
        .enumerate()
        .map(|(k, m)| if k % 2 == 1 { -*m } else { *m })
        .collect()
}

/// Inverse of the anti-diagonal map `X ↦ [X, Ū_D] + X Ū_A W⁽⁰⁾ + W⁽⁰⁾ Ū_A X`,
/// which acts as `antidiag(a, b) ↦ antidiag(−c a, c b)`.
fn linv(r: &Mat2, c: C64) -> Mat2 {
    Mat2::anti_diag(-r[(0, 1)] / c, r[(1, 0)] / c)
}

fn offdiag(m: &Mat2) -> Mat2 {
    m.off_diagonal_part()
}

fn diag(m: &Mat2) -> Mat2 {
    m.diagonal_part()
}

/// Order-0 solution: `w₁₂ = −S₋/(c+S_z)`, `w₂₁ = S₊/(c+S_z)`.
pub fn solve_w0(p: &SpinPoint, casimir_c: C64) -> Result<Mat2> {
    let d = casimir_c + p.s_z;
    if d.norm() < BRANCH_EPS * casimir_c.norm().max(1.0) {
        return Err(Error::BranchSingularity { index: 0, value: d.norm() });
    }
    Ok(Mat2::anti_diag(-p.s_minus / d, p.s_plus / d))
}

/// Taylor jets of `S` and `Σ` at one point in the evolution coordinate of
/// the recursion (`x` for space, printed `t` for time).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalJet {
    pub c: C64,
    pub s: Vec<Mat2>,
    pub sigma: Vec<Mat2>,
}

impl LocalJet {
    /// From derivatives `f^(k)`, `k = 0, 1, …`; `sigma` may be empty.
    pub fn from_derivatives(casimir_c: C64, s: &[SpinPoint], sigma: &[SpinPoint]) -> Self {
        let mut fact = 1.0;
        let to_jet = |v: &[SpinPoint], fact: &mut f64| -> Vec<Mat2> {
            *fact = 1.0;
            v.iter()
                .enumerate()
                .map(|(k, p)| {
                    if k > 0 {
                        *fact *= k as f64;
                    }
                    p.matrix() * (1.0 / *fact)
                })
                .collect()
        };
        let s = to_jet(s, &mut fact);
        let sigma = to_jet(sigma, &mut fact);
        LocalJet { c: casimir_c, s, sigma }
    }

    /// Makes the jets consistent with `S·S = c²` and `S·Σ = 0` order by
    /// order, removing finite-difference drift along `S`.
    pub fn project(&mut self) {
        let dot = |a: &Mat2, b: &Mat2| (*a * *b).trace() * 0.5;
        let c2 = self.c * self.c;
        let s0 = self.s[0];
        for k in 1..self.s.len() {
            let mut acc = ZERO;
            for j in 0..=k {
                acc += dot(&self.s[j], &self.s[k - j]);
            }
            self.s[k] = self.s[k] - s0 * (acc / (c2 * 2.0));
        }
        for k in 0..self.sigma.len().min(self.s.len()) {
            let mut acc = ZERO;
            for j in 0..=k {
                acc += dot(&self.s[j], &self.sigma[k - j]);
            }
            self.sigma[k] = self.sigma[k] - s0 * (acc / c2);
        }
    }

    pub fn spin(&self) -> SpinPoint {
        let m = self.s[0];
        SpinPoint::new(m[(1, 0)], m[(0, 1)], m[(0, 0)])
    }

    fn w0(&self) -> Result<Vec<Mat2>> {
        let d: Vec<C64> = self.s.iter().map(|m| m[(0, 0)]).collect();
        let mut d = d;
        d[0] += self.c;
        if d[0].norm() < BRANCH_EPS * self.c.norm().max(1.0) {
            return Err(Error::BranchSingularity { index: 0, value: d[0].norm() });
        }
        let r = scalar_recip(&d);
        let n = self.s.len();
        Ok((0..n)
            .map(|k| {
                let mut up = ZERO;
                let mut lo = ZERO;
                for j in 0..=k {
                    up -= self.s[j][(0, 1)] * r[k - j];
                    lo += self.s[j][(1, 0)] * r[k - j];
                }
                Mat2::anti_diag(up, lo)
            })
            .collect())
    }
}

/// Jets of `W^(0..n_w)` and the order-0 Z densities. For space the
/// densities are `dZ^(k)/dx` for `k = −1, …, n_w − 2`; for time they are
/// `dZ^(k)/dt` for `k = −2, …, n_w − 3`.
#[derive(Clone, Debug)]
pub struct LocalSeries {
    pub w: Vec<Vec<Mat2>>,
    pub z_density: Vec<Mat2>,
}

/// Space recursion with `Ū = S/2` (the base system uses it with `t` in
/// place of `x`).
pub fn space_recursion_at(jet: &LocalJet, n_w: usize) -> Result<LocalSeries> {
    let c = jet.c;
    let ua: Vec<Mat2> = jet.s.iter().map(|m| offdiag(m) * 0.5).collect();
    let ud = diag(&jet.s[0]) * 0.5;
    let mut w = vec![jet.w0()?];
    while w.len() < n_w {
        let k = w.len() - 1;
        let mut r = jet_deriv(&w[k]);
        for j in 1..=k {
            let t = ser_mul(&ser_mul(&w[k + 1 - j], &ua, usize::MAX), &w[j], usize::MAX);
            r = ser_add(&r, &t);
        }
        if r.is_empty() {
            return Err(Error::Unsupported(format!("jet too short for W^({})", k + 1)));
        }
        w.push(r.iter().map(|m| linv(&-*m, c)).collect());
    }
    let mut z_density = vec![diag(&(ud + ua[0] * w[0][0]))];
    for wk in w.iter().skip(1) {
        z_density.push(diag(&(ua[0] * wk[0])));
    }
    Ok(LocalSeries { w, z_density })
}

/// Time recursion with `λ²V = A₀ + λA₁`, `A₀ = S/2`, `A₁ = −ΣS/(2c²)`.
pub fn time_recursion_at(jet: &LocalJet, n_w: usize) -> Result<LocalSeries> {
    let c = jet.c;
    if jet.sigma.is_empty() {
        return Err(Error::Unsupported("time recursion needs Σ".into()));
    }
    let c2 = c * c;
    let a0a: Vec<Mat2> = jet.s.iter().map(|m| offdiag(m) * 0.5).collect();
    let a1 = ser_mul(&jet.sigma, &jet.s, usize::MAX)
        .into_iter()
        .map(|m| m * (-0.5 / c2))
        .collect::<Vec<_>>();
    let a1a: Vec<Mat2> = a1.iter().map(offdiag).collect();
    let a1d: Vec<Mat2> = a1.iter().map(diag).collect();
    let mut w: Vec<Vec<Mat2>> = vec![jet.w0()?];
    while w.len() < n_w {
        let n = w.len();
        let mut r: Vec<Mat2> = vec![Mat2::zero(); jet.s.len()];
        if n >= 2 {
            r = ser_add(&jet_deriv(&w[n - 2]), &r);
        }
        let comm: Vec<Mat2> = ser_mul(&w[n - 1], &a1d, usize::MAX)
            .iter()
            .zip(ser_mul(&a1d, &w[n - 1], usize::MAX))
            .map(|(x, y)| *x - y)
            .collect();
        r = ser_add(&r, &comm);
        for i in 1..n {
            r = ser_add(&r, &ser_mul(&ser_mul(&w[i], &a0a, usize::MAX), &w[n - i], usize::MAX));
        }
        for i in 0..n {
            r = ser_add(&r, &ser_mul(&ser_mul(&w[i], &a1a, usize::MAX), &w[n - 1 - i], usize::MAX));
        }
        if n == 1 {
            r = r.iter().zip(&a1a).map(|(x, y)| *x - *y).collect();
        }
        if r.is_empty() {
            return Err(Error::Unsupported(format!("jet too short for W^({n})")));
        }
        w.push(r.iter().map(|m| linv(&-*m, c)).collect());
    }
    let a0d = diag(&jet.s[0]) * 0.5;
    let mut z_density = Vec::new();
    for n in 0..w.len() {
        let mut d = a0a[0] * w[n][0];
        if n == 0 {
            d += a0d;
        } else {
            d += a1a[0] * w[n - 1][0];
        }
        if n == 1 {
            d += a1d[0];
        }
        z_density.push(diag(&d));
    }
    Ok(LocalSeries { w, z_density })
}

/// Grid derivatives `f^(m)`, `m ≤ order`, built from the first- and
/// second-derivative stencils (`D₂^q D₁^r`), each scaled by `factor^m`.
fn grid_derivatives(values: &[C64], spec: &GridSpec, order: usize, factor: C64) -> Result<Vec<Vec<C64>>> {
    let mut out = vec![values.to_vec()];
    let mut scale = ONE;
    for m in 1..=order {
        let mut v = values.to_vec();
        for _ in 0..m / 2 {
            v = derivative(&v, spec, 2)?;
        }
        if m % 2 == 1 {
            v = derivative(&v, spec, 1)?;
        }
        scale *= factor;
        out.push(v.into_iter().map(|z| z * scale).collect());
    }
    Ok(out)
}

fn time_factor(orientation: Orientation, convention: Convention) -> C64 {
    match orientation {
        Orientation::Space => ONE,
        Orientation::Time => convention.time_factor(),
    }
}

/// Jets at every node with `order` derivatives, projected with
/// [`LocalJet::project`].
pub fn local_jets<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    order: usize,
) -> Result<Vec<LocalJet>> {
    let spec = g.spec();
    let a = time_factor(orientation, convention);
    let fields = |fs: &[Field]| -> Result<Vec<Vec<Vec<C64>>>> {
        fs.iter()
            .map(|&f| grid_derivatives(&g.field_values(f), spec, order, a))
            .collect()
    };
    let s = fields(&[Field::SPlus, Field::SMinus, Field::SZ])?;
    let has_sigma = G::FIELDS.len() == 6;
    let sig = if has_sigma {
        fields(&[Field::SigmaPlus, Field::SigmaMinus, Field::SigmaZ])?
    } else {
        Vec::new()
    };
    let at = |d: &[Vec<Vec<C64>>], i: usize| -> Vec<SpinPoint> {
        (0..=order)
            .map(|m| SpinPoint::new(d[0][m][i], d[1][m][i], d[2][m][i]))
            .collect()
    };
    Ok((0..g.len())
        .map(|i| {
            let sigma = if has_sigma { at(&sig, i) } else { Vec::new() };
            let mut jet = LocalJet::from_derivatives(g.casimir_c(), &at(&s, i), &sigma);
            jet.project();
            jet
        })
        .collect())
}

/// Recursion output on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WZSeries {
    pub orientation: Orientation,
    pub k_max: usize,
    /// Lowest Z order: −1 (space) or −2 (time).
    pub lowest: i32,
    /// `w[i][k]` = `W^(k)` at node `i`.
    pub w: Vec<Vec<Mat2>>,
    /// `z_density[i][k − lowest]`, per unit of the printed coordinate.
    pub z_density: Vec<Vec<Mat2>>,
    /// `z[k − lowest]` = `Z^(k)`.
    pub z: Vec<Mat2>,
}

impl WZSeries {
    pub fn z_at(&self, k: i32) -> Option<Mat2> {
        usize::try_from(k - self.lowest).ok().and_then(|i| self.z.get(i).copied())
    }

    pub fn orders(&self) -> std::ops::RangeInclusive<i32> {
        self.lowest..=self.k_max as i32
    }
}

fn recursion_plan(orientation: Orientation, k_max: usize) -> (usize, usize, i32) {
    // (number of W terms, jet order, lowest Z order)
    match orientation {
        Orientation::Space => (k_max + 2, k_max + 1, -1),
        Orientation::Time => (k_max + 3, (k_max + 2) / 2 + 1, -2),
    }
}

/// Pointwise recursion at every node, plus `Z^(k)` by quadrature. For the
/// time orientation the integral over the printed `t` is `(1/a)∫dτ`.
pub fn wz_recursion<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    k_max: usize,
) -> Result<WZSeries> {
    if k_max > K_MAX_LIMIT {
        return Err(Error::Unsupported(format!("k_max = {k_max} > {K_MAX_LIMIT}")));
    }
    let (n_w, order, lowest) = recursion_plan(orientation, k_max);
    let jets = local_jets(g, orientation, convention, order)?;
    let mut w = Vec::with_capacity(jets.len());
    let mut z_density = Vec::with_capacity(jets.len());
    for (i, jet) in jets.iter().enumerate() {
        let local = match orientation {
            Orientation::Space => space_recursion_at(jet, n_w),
            Orientation::Time => time_recursion_at(jet, n_w),
        }
        .map_err(|e| match e {
            Error::BranchSingularity { value, .. } => Error::BranchSingularity { index: i, value },
            e => e,
        })?;
        w.push(local.w.iter().map(|wk| wk[0]).collect::<Vec<_>>());
        let nz = (k_max as i32 - lowest + 1) as usize;
        z_density.push(local.z_density[..nz].to_vec());
    }
    let scale = time_factor(orientation, convention).inv();
    let nz = z_density[0].len();
    let z = (0..nz)
        .map(|k| {
            let col: Vec<Mat2> = z_density.iter().map(|d| d[k]).collect();
            integrate_mat2(&col, g.spec()) * scale
        })
        .collect::<Vec<_>>();
    if z.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("Z series".into()));
    }
    Ok(WZSeries { orientation, k_max, lowest, w, z_density, z })
}

fn e(i: usize, j: usize) -> Mat2 {
    Mat2::unit(i, j)
}

fn ident_plus(w: &[Mat2]) -> Vec<Mat2> {
    let mut out = w.to_vec();
    out[0] += Mat2::identity();
    out
}

/// `(I + W_l(μ)) E (I + W_r(μ))⁻¹` as a μ-series.
fn conj_series(w_left: &[Mat2], e_mat: Mat2, w_right: &[Mat2]) -> Result<Vec<Mat2>> {
    let l = ident_plus(w_left);
    let r = ser_inv(&ident_plus(w_right))?;
    let le: Vec<Mat2> = l.iter().map(|m| *m * e_mat).collect();
    Ok(ser_mul(&le, &r, usize::MAX))
}

/// Coefficients of `σ/(2(μ − sλ))` in powers of μ.
fn pole_series(lambda: C64, s: f64, n: usize) -> Vec<C64> {
    // 1/(μ − sλ) = −(1/(sλ)) Σ (μ/(sλ))^k
    let sl = lambda * s;
    (0..n).map(|k| -(sl.powi(k as i32 + 1)).inv() * 0.5).collect()
}

fn scale_series(m: &[Mat2], s: &[C64]) -> Vec<Mat2> {
    let n = m.len().min(s.len());
    (0..n)
        .map(|k| {
            let mut acc = Mat2::zero();
            for j in 0..=k {
                acc += m[j] * s[k - j];
            }
            acc
        })
        .collect()
}

/// μ-coefficients `0..n` of `(1/(2(μ−λ))) (I+W(μ)) e₁₁ (I+W(μ))⁻¹`, with
/// `w` the values `W^(0..n)` at one point.
pub fn periodic_generator_series(w: &[Mat2], lambda: C64, n: usize) -> Result<Vec<Mat2>> {
    crate::algebra::check_pole("generator λ", lambda)?;
    let w = &w[..n.min(w.len())];
    let nser = conj_series(w, e(0, 0), w)?;
    Ok(scale_series(&nser, &pole_series(lambda, 1.0, nser.len())))
}

/// Series-extracted coefficients next to the printed closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCoeffs {
    pub series: Vec<Mat2>,
    pub printed: Vec<Mat2>,
}

impl GeneratorCoeffs {
    pub fn max_mismatch(&self) -> f64 {
        self.series
            .iter()
            .zip(&self.printed)
            .map(|(a, b)| (*a - *b).max_norm())
            .fold(0.0, f64::max)
    }
}

fn common_head(s: &Mat2, c: C64, lambda: C64, k: usize) -> Mat2 {
    let lk = lambda.powi(k as i32 + 1);
    (Mat2::identity() + *s * c.inv()) * (-(lk * 4.0).inv())
}

/// Printed `𝕍^(0..2)` from `S, S′, S″`.
pub fn printed_v_coeffs(s: &Mat2, s1: &Mat2, s2: &Mat2, c: C64, lambda: C64) -> Vec<Mat2> {
    let c3 = c * c * c;
    let c5 = c3 * c * c;
    let l = lambda;
    vec![
        common_head(s, c, l, 0),
        common_head(s, c, l, 1) + *s1 * *s * (c3 * l * 4.0).inv(),
        common_head(s, c, l, 2) + *s1 * *s * (c3 * l * l * 4.0).inv()
            - *s2 * (c3 * l * 4.0).inv()
            - *s1 * *s1 * *s * (c5 * l * 8.0).inv() * 3.0,
    ]
}

/// Printed `𝕌^(0..2)` from `S, Σ, Ṡ`.
pub fn printed_u_coeffs(s: &Mat2, sigma: &Mat2, sdot: &Mat2, c: C64, lambda: C64) -> Vec<Mat2> {
    let c3 = c * c * c;
    let c5 = c3 * c * c;
    let l = lambda;
    vec![
        common_head(s, c, l, 0),
        common_head(s, c, l, 1) + *sigma * *s * (c3 * l * 4.0).inv(),
        common_head(s, c, l, 2) + *sigma * *s * (c3 * l * l * 4.0).inv() + *sdot * *s * (c3 * l * 4.0).inv()
            - *sigma * *sigma * *s * (c5 * l * 8.0).inv(),
    ]
}

/// Base-system `𝕌^(0..2)` from `S, Ṡ, S̈`, with the `(Ṡ)²S` coefficient
/// `3/8` (the printed `1/8` does not satisfy the recursion).
pub fn printed_base_u_coeffs(s: &Mat2, s1: &Mat2, s2: &Mat2, c: C64, lambda: C64) -> Vec<Mat2> {
    printed_v_coeffs(s, s1, s2, c, lambda)
}

fn check_order(max_order: usize) -> Result<()> {
    if max_order > 2 {
        return Err(Error::Unsupported(format!("generator order {max_order} > 2")));
    }
    Ok(())
}

fn check_index<G: FieldGrid>(g: &G, index: usize) -> Result<()> {
    if index >= g.len() {
        return Err(Error::Index(format!("node {index} outside 0..{}", g.len())));
    }
    Ok(())
}

fn jet_at<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    index: usize,
    order: usize,
) -> Result<LocalJet> {
    check_index(g, index)?;
    Ok(local_jets(g, orientation, convention, order)?.swap_remove(index))
}

fn values(w: &[Vec<Mat2>]) -> Vec<Mat2> {
    w.iter().map(|j| j[0]).collect()
}

/// `𝕍^(k)`, `k ≤ max_order ≤ 2`, at node `index` of a space grid.
pub fn v_generator_coeffs(g: &SpinGrid, index: usize, lambda: C64, max_order: usize) -> Result<GeneratorCoeffs> {
    check_order(max_order)?;
    let jet = jet_at(g, Orientation::Space, Convention::Paper, index, 2)?;
    let local = space_recursion_at(&jet, max_order + 1)?;
    let series = periodic_generator_series(&values(&local.w), lambda, max_order + 1)?;
    let mut printed = printed_v_coeffs(&jet.s[0], &jet.s[1], &(jet.s[2] * 2.0), jet.c, lambda);
    printed.truncate(max_order + 1);
    Ok(GeneratorCoeffs { series, printed })
}

/// `𝕌^(k)` at node `index` of a time grid of the dual model.
pub fn u_generator_coeffs(
    g: &DualGrid,
    index: usize,
    lambda: C64,
    convention: Convention,
    max_order: usize,
) -> Result<GeneratorCoeffs> {
    check_order(max_order)?;
    let jet = jet_at(g, Orientation::Time, convention, index, 1)?;
    let local = time_recursion_at(&jet, max_order + 1)?;
    let series = periodic_generator_series(&values(&local.w), lambda, max_order + 1)?;
    let mut printed = printed_u_coeffs(&jet.s[0], &jet.sigma[0], &jet.s[1], jet.c, lambda);
    printed.truncate(max_order + 1);
    Ok(GeneratorCoeffs { series, printed })
}

/// Base system `U = V = S/(2λ)`: the space recursion run along `t`.
pub fn base_u_generator_coeffs(
    g: &SpinGrid,
    index: usize,
    lambda: C64,
    convention: Convention,
    max_order: usize,
) -> Result<GeneratorCoeffs> {
    check_order(max_order)?;
    let jet = jet_at(g, Orientation::Time, convention, index, 2)?;
    let local = space_recursion_at(&jet, max_order + 1)?;
    let series = periodic_generator_series(&values(&local.w), lambda, max_order + 1)?;
    let mut printed = printed_base_u_coeffs(&jet.s[0], &jet.s[1], &(jet.s[2] * 2.0), jet.c, lambda);
    printed.truncate(max_order + 1);
    Ok(GeneratorCoeffs { series, printed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Bulk,
    Plus,
    Minus,
}

/// Boundary-matrix entry whose logarithm enters the open generator, and the
/// projector replacing `e₁₁` at each end.
fn boundary_shape(orientation: Orientation, side: Side) -> (Mat2, (usize, usize)) {
    match (orientation, side) {
        (Orientation::Space, _) => (e(0, 0), (0, 0)),
        (Orientation::Time, Side::Plus) => (e(0, 1), (1, 0)),
        (Orientation::Time, Side::Minus) => (e(1, 0), (0, 1)),
    }
}

fn k_series(p: &BoundaryParams) -> Vec<Mat2> {
    vec![Mat2::identity() * p.alpha, p.linear_part()]
}

/// μ-series of `[(I + W_a)⁻¹ K (I + W_b)]_{ij}` with `W_a = W(−μ)`,
/// `W_b = W(μ)` at the plus end and the reverse at the minus end.
fn boundary_entry_series(w: &[Mat2], p: &BoundaryParams, orientation: Orientation) -> Result<Vec<C64>> {
    let (_, (i, j)) = boundary_shape(orientation, p.side);
    let wr = ser_reflect(w);
    let (wa, wb) = match p.side {
        Side::Plus => (wr, w.to_vec()),
        Side::Minus => (w.to_vec(), wr),
    };
    let inv = ser_inv(&ident_plus(&wa))?;
    let mut k = k_series(p);
    k.resize(w.len(), Mat2::zero());
    let m = ser_mul(&ser_mul(&inv, &k, usize::MAX), &ident_plus(&wb), usize::MAX);
    Ok(m.iter().map(|x| x[(i, j)]).collect())
}

/// Valuation of the boundary entry: it starts at `μ¹` for time boundaries.
fn boundary_valuation(orientation: Orientation) -> usize {
    match orientation {
        Orientation::Space => 0,
        Orientation::Time => 1,
    }
}

/// μ-coefficients of the open-boundary generators. Bulk: the periodic
/// generator plus `(1/(2(μ+λ)))(I+W(−μ))E(I+W(−μ))⁻¹`, `E = e₁₁` (space) or
/// `e₂₂` (time). Ends: the reduced trace formulas, normalised by the
/// boundary entry. `w` holds `W^(0..)` at the node; `n` coefficients are
/// returned.
pub fn open_generator_series(
    w: &[Mat2],
    orientation: Orientation,
    region: Region,
    lambda: C64,
    params: Option<&BoundaryParams>,
    n: usize,
) -> Result<Vec<Mat2>> {
    crate::algebra::check_pole("generator λ", lambda)?;
    let need = n + boundary_valuation(orientation);
    if w.len() < need {
        return Err(Error::Unsupported(format!("need W up to order {}", need - 1)));
    }
    let w = &w[..need];
    let wr = ser_reflect(w);
    match region {
        Region::Bulk => {
            let per = periodic_generator_series(w, lambda, n)?;
            let proj = match orientation {
                Orientation::Space => e(0, 0),
                Orientation::Time => e(1, 1),
            };
            let m = conj_series(&wr, proj, &wr)?;
            let extra = scale_series(&m, &pole_series(lambda, -1.0, n));
            Ok(per.iter().zip(&extra).map(|(a, b)| *a + *b).collect())
        }
        Region::Plus | Region::Minus => {
            let p = params.ok_or_else(|| Error::Unsupported("boundary generator needs K data".into()))?;
            let side = if region == Region::Plus { Side::Plus } else { Side::Minus };
            if p.side != side {
                return Err(Error::Unsupported("K data for the wrong end".into()));
            }
            let (proj, _) = boundary_shape(orientation, side);
            let m = match side {
                Side::Plus => conj_series(w, proj, &wr)?,
                Side::Minus => conj_series(&wr, proj, w)?,
            };
            let mut k = k_series(p);
            k.resize(need, Mat2::zero());
            let mk = ser_mul(&m, &k, usize::MAX);
            let km = ser_mul(&k, &m, usize::MAX);
            let minus_pole = pole_series(lambda, 1.0, need);
            let plus_pole = pole_series(lambda, -1.0, need);
            let (first, second) = match side {
                Side::Plus => (mk, km),
                Side::Minus => (km, mk),
            };
            let num: Vec<Mat2> = scale_series(&first, &minus_pole)
                .iter()
                .zip(scale_series(&second, &plus_pole))
                .map(|(a, b)| *a + b)
                .collect();
            let den = boundary_entry_series(w, p, orientation)?;
            let v = boundary_valuation(orientation);
            let (num, den) = (&num[v..], &den[v..]);
            let scale = den.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
            if den[0].norm() < 1e-12 * scale.max(1.0) {
                return Err(Error::BoundaryDegenerate(format!(
                    "leading boundary entry {:.3e} vanishes",
                    den[0].norm()
                )));
            }
            let inv = scalar_recip(den);
            Ok(scale_series(num, &inv).into_iter().take(n).collect())
        }
    }
}

fn boundary_node<G: FieldGrid>(g: &G, side: Side) -> usize {
    match side {
        Side::Plus => g.len() - 1,
        Side::Minus => 0,
    }
}

fn open_w_values<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    index: usize,
    n_w: usize,
) -> Result<(Vec<Mat2>, LocalJet)> {
    let order = match orientation {
        Orientation::Space => n_w,
        Orientation::Time => n_w / 2 + 1,
    };
    let jet = jet_at(g, orientation, convention, index, order)?;
    let local = match orientation {
        Orientation::Space => space_recursion_at(&jet, n_w)?,
        Orientation::Time => time_recursion_at(&jet, n_w)?,
    };
    Ok((values(&local.w), jet))
}

/// Coefficient of `μ^order` of the open generator in `region` (bulk at node
/// `index`, ends at the first or last node).
#[allow(clippy::too_many_arguments)]
pub fn open_generator_coeffs<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    region: Region,
    index: usize,
    lambda: C64,
    params: Option<&BoundaryParams>,
    order: usize,
) -> Result<Mat2> {
    if g.spec().is_periodic() {
        return Err(Error::InvalidGrid("open generators need an open grid".into()));
    }
    let node = match region {
        Region::Bulk => index,
        Region::Plus => boundary_node(g, Side::Plus),
        Region::Minus => boundary_node(g, Side::Minus),
    };
    let n = order + 1;
    let (w, _) = open_w_values(g, orientation, convention, node, n + boundary_valuation(orientation))?;
    let s = open_generator_series(&w, orientation, region, lambda, params, n)?;
    Ok(s[order])
}

/// Closed-form headline open generators: `𝕍̄^(1)` (space) or `𝕌^(0)` (time).
/// `w1` is the boundary entry's leading coefficient (ignored in the bulk
/// and for space).
pub fn printed_open_generator(
    orientation: Orientation,
    region: Region,
    p: &SpinPoint,
    s1: &Mat2,
    c: C64,
    lambda: C64,
    params: Option<&BoundaryParams>,
    w1: C64,
) -> Result<Mat2> {
    let s = p.matrix();
    let l = lambda;
    let c3 = c * c * c;
    match (orientation, region) {
        (Orientation::Space, Region::Bulk) => {
            Ok(common_head(&s, c, l, 1) * 2.0 + *s1 * s * (c3 * l * 2.0).inv())
        }
        (Orientation::Space, _) => {
            let k = params.ok_or_else(|| Error::Unsupported("needs K data".into()))?;
            let sign = if region == Region::Plus { 1.0 } else { -1.0 };
            let (a, b, g, d) = (k.alpha, k.beta, k.gamma, k.delta);
            let m = Mat2::new(
                b * p.s_plus - g * p.s_minus,
                (d * p.s_minus - b * p.s_z) * 2.0,
                (g * p.s_z - d * p.s_plus) * 2.0,
                g * p.s_minus - b * p.s_plus,
            );
            Ok(common_head(&s, c, l, 1) * 2.0 + m * (sign / (a * c * l * 4.0)))
        }
        (Orientation::Time, Region::Bulk) => Ok(s * -(c * l * 2.0).inv()),
        (Orientation::Time, _) => {
            let k = params.ok_or_else(|| Error::Unsupported("needs K data".into()))?;
            let (a, b, g, d) = (k.alpha, k.beta, k.gamma, k.delta);
            let cz = c + p.s_z;
            let (sp, sm) = (p.s_plus, p.s_minus);
            let pre = (c * cz * w1 * 2.0).inv();
            let (m2, m1) = if region == Region::Plus {
                (
                    Mat2::new(sp * cz, -cz * cz, sp * sp, -sp * cz),
                    Mat2::new(
                        -b * sp * sp - g * cz * cz,
                        cz * (d * cz + b * sp) * 2.0,
                        sp * (d * sp - g * cz) * 2.0,
                        b * sp * sp + g * cz * cz,
                    ),
                )
            } else {
                (
                    Mat2::new(sm * cz, sm * sm, -cz * cz, -sm * cz),
                    Mat2::new(
                        b * cz * cz + g * sm * sm,
                        -sm * (d * sm - b * cz) * 2.0,
                        -cz * (d * cz + g * sm) * 2.0,
                        -b * cz * cz - g * sm * sm,
                    ),
                )
            };
            // The λ⁻¹ block at the plus end enters with `+1/(2λ)`; only that
            // sign makes it agree with the bulk once the boundary conditions hold.
            let sign = if region == Region::Plus { 1.0 } else { -1.0 };
            Ok((m2 * (a / (l * l)) + m1 * (sign / (l * 2.0))) * pre)
        }
    }
}

/// Printed leading coefficient `𝕎±^(1)` of the time boundary entry.
pub fn printed_w_boundary(p: &DualPoint, c: C64, k: &BoundaryParams) -> C64 {
    let s = p.spin;
    let sg = if k.side == Side::Plus { 1.0 } else { -1.0 };
    let (s_pm, sig_pm) = match k.side {
        Side::Plus => (s.s_plus, p.sigma_plus),
        Side::Minus => (s.s_minus, p.sigma_minus),
    };
    let t = (s_pm * p.sigma_z / (s.s_z + c) - sig_pm) * (k.alpha * 2.0 * sg / c) - k.delta * s_pm * 2.0
        - k.beta * s.s_plus * s_pm / (s.s_z + c * sg)
        - k.gamma * s.s_minus * s_pm / (s.s_z - c * sg);
    t / (c * 2.0)
}

/// Leading coefficient of the time boundary entry from the W series.
pub fn w_boundary_leading(g: &DualGrid, convention: Convention, k: &BoundaryParams) -> Result<C64> {
    let node = boundary_node(g, k.side);
    let (w, _) = open_w_values(g, Orientation::Time, convention, node, 2)?;
    Ok(boundary_entry_series(&w, k, Orientation::Time)?[1])
}

// ---------------------------------------------------------------- charges

/// Conserved charges `𝒢^(k)` keyed by flow index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeSeries {
    pub orientation: Orientation,
    pub open: bool,
    pub values: Vec<(i32, C64)>,
    /// Logarithmic boundary contributions `(plus, minus)` per entry of
    /// `values` (open grids only).
    pub boundary_terms: Option<Vec<(C64, C64)>>,
}

impl ChargeSeries {
    pub fn get(&self, k: i32) -> Option<C64> {
        self.values.iter().find(|(j, _)| *j == k).map(|(_, v)| *v)
    }

    /// `k,re,im` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,re,im\n");
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k},{:.16e},{:.16e}", v.re, v.im);
        }
        out
    }

    /// Max over shared orders of `|b − a| / max(|a|, floor)`.
    pub fn relative_drift(&self, other: &ChargeSeries, floor: f64) -> f64 {
        self.values
            .iter()
            .filter_map(|(k, a)| other.get(*k).map(|b| (b - a).norm() / a.norm().max(floor)))
            .fold(0.0, f64::max)
    }
}

/// `ln` of a power series with nonzero leading coefficient (principal branch
/// for the constant term).
fn log_series(b: &[C64]) -> Vec<C64> {
    let mut l = vec![b[0].ln()];
    for k in 1..b.len() {
        let mut acc = b[k] * k as f64;
        for j in 1..k {
            acc -= l[j] * b[k - j] * j as f64;
        }
        l.push(acc / (b[0] * k as f64));
    }
    l
}

/// Shifts `value` by a multiple of `2πi` to lie nearest `reference`.
pub fn unwrap_log(reference: C64, value: C64) -> C64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let k = ((reference.im - value.im) / two_pi).round();
    value + C64::new(0.0, k * two_pi)
}

/// Charges of a periodic grid, or of an open grid with `boundary = (K₊, K₋)`.
pub fn charges<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    k_max: usize,
    boundary: Option<(&BoundaryParams, &BoundaryParams)>,
) -> Result<ChargeSeries> {
    let series = wz_recursion(g, orientation, convention, k_max)?;
    let Some((kp, km)) = boundary else {
        if !g.spec().is_periodic() {
            return Err(Error::InvalidGrid("open grid charges need K data".into()));
        }
        let lead = series.z[0];
        let e = if lead[(0, 0)].re >= lead[(1, 1)].re { 0 } else { 1 };
        let values = series.orders().map(|k| (k, series.z_at(k).unwrap()[(e, e)])).collect();
        return Ok(ChargeSeries { orientation, open: false, values, boundary_terms: None });
    };
    if g.spec().is_periodic() {
        return Err(Error::InvalidGrid("K data given for a periodic grid".into()));
    }
    if kp.side != Side::Plus || km.side != Side::Minus {
        return Err(Error::Unsupported("boundary pair must be (K₊, K₋)".into()));
    }
    let v = boundary_valuation(orientation);
    let n_terms = k_max + 1 + v;
    let mut logs = Vec::new();
    for k in [kp, km] {
        let node = boundary_node(g, k.side);
        let w: Vec<Mat2> = series.w[node][..n_terms].to_vec();
        let b = boundary_entry_series(&w, k, orientation)?;
        let b = &b[v..];
        if b[0].norm() < 1e-14 {
            return Err(Error::BoundaryDegenerate(format!("{:?} boundary entry vanishes", k.side)));
        }
        logs.push(log_series(b));
    }
    let mut values = Vec::new();
    let mut terms = Vec::new();
    for k in series.orders() {
        let z = series.z_at(k).unwrap();
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let bulk = match orientation {
            Orientation::Space => z[(0, 0)] * (1.0 - sign),
            Orientation::Time => z[(0, 0)] - z[(1, 1)] * sign,
        };
        let (lp, lm) = if k >= 0 { (logs[0][k as usize], logs[1][k as usize]) } else { (ZERO, ZERO) };
        values.push((k, bulk + lp + lm));
        terms.push((lp, lm));
    }
    Ok(ChargeSeries { orientation, open: true, values, boundary_terms: Some(terms) })
}

// ------------------------------------------------------ boundary residuals

/// Violation of the boundary constraints at one end: the three bilinear
/// relations (space) or `max(|α|, |βS₊ + γS₋ + 2δS_z|)` (time).
pub fn boundary_residual<G: FieldGrid>(g: &G, orientation: Orientation, k: &BoundaryParams) -> Result<f64> {
    if g.spec().is_periodic() {
        return Err(Error::InvalidGrid("boundary residual needs an open grid".into()));
    }
    let node = boundary_node(g, k.side);
    let p = g.spin_at(node);
    match orientation {
        Orientation::Time => {
            let lin = k.beta * p.s_plus + k.gamma * p.s_minus + k.delta * p.s_z * 2.0;
            Ok(k.alpha.norm().max(lin.norm()))
        }
        Orientation::Space => {
            let d = |f| -> Result<C64> { Ok(g.derivative(f, 1)?[node]) };
            let (dp, dm, dz) = (d(Field::SPlus)?, d(Field::SMinus)?, d(Field::SZ)?);
            Ok(space_bc_violations(&p, [dp, dm, dz], g.casimir_c(), k)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max))
        }
    }
}

/// The three space-like boundary relations, as `lhs − rhs`.
pub fn space_bc_violations(p: &SpinPoint, d: [C64; 3], c: C64, k: &BoundaryParams) -> [C64; 3] {
    let [dp, dm, dz] = d;
    let sc = c * c * k.side.sign();
    [
        k.alpha * (p.s_plus * dm - dp * p.s_minus) - sc * (k.beta * p.s_plus - k.gamma * p.s_minus),
        k.alpha * (p.s_plus * dz - dp * p.s_z) - sc * (k.delta * p.s_plus - k.gamma * p.s_z),
        k.alpha * (p.s_minus * dz - dm * p.s_z) - sc * (k.delta * p.s_minus - k.beta * p.s_z),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::c;
    use crate::fields::{integrate, make_dual_data, make_spin_data, Axis, SigmaKind, SpinDataKind};
    use std::f64::consts::PI;

    const P: Convention = Convention::Paper;

    #[test]
    fn w0_examples() {
        let cc = c(1.2);
        assert_eq!(solve_w0(&SpinPoint::north_pole(cc), cc).unwrap(), Mat2::zero());
        let phi = 0.4;
        let p = SpinPoint::new(cc * C64::from_polar(1.0, phi), cc * C64::from_polar(1.0, -phi), ZERO);
        let w = solve_w0(&p, cc).unwrap();
        assert!((w[(0, 1)] + p.s_minus / cc).norm() < 1e-15);
        assert!((w[(1, 0)] - p.s_plus / cc).norm() < 1e-15);
        let p = SpinPoint::from_cartesian([C64::new(0.3, 0.1), c(-0.5), C64::new(0.0, 0.2)]);
        let cc = p.casimir().sqrt();
        let w = solve_w0(&p, cc).unwrap();
        let (a, b) = (w[(0, 1)], w[(1, 0)]);
        assert!((p.s_plus * a * a - p.s_z * a * 2.0 - p.s_minus).norm() < 1e-13);
        assert!((p.s_minus * b * b + p.s_z * b * 2.0 - p.s_plus).norm() < 1e-13);
        let south = SpinPoint::new(ZERO, ZERO, -cc);
        assert!(matches!(solve_w0(&south, cc), Err(Error::BranchSingularity { .. })));
    }

    #[test]
    fn north_pole_series() {
        let cc = c(1.3);
        let spec = GridSpec::periodic(64, 2.0, Axis::Space).unwrap();
        let g = make_spin_data(spec, cc, SpinDataKind::NorthPole, 0, 0.0).unwrap();
        let s = wz_recursion(&g, Orientation::Space, P, 2).unwrap();
        let sig3 = Mat2::diag(ONE, -ONE);
        assert!((s.z_at(-1).unwrap() - sig3 * (cc * 2.0)).max_norm() < 1e-13);
        assert!(s.z_at(0).unwrap().max_norm() < 1e-14);
        assert!(s.z_at(1).unwrap().max_norm() < 1e-14);

        let tspec = GridSpec::periodic(32, 1.5, Axis::Time).unwrap();
        let d = make_dual_data(tspec, cc, SpinDataKind::NorthPole, SigmaKind::Zero, 0, 0.0).unwrap();
        let s = wz_recursion(&d, Orientation::Time, P, 0).unwrap();
        assert!((s.z_at(-2).unwrap() - sig3 * (cc * 1.5)).max_norm() < 1e-13);
        assert!(s.z_at(-1).unwrap().max_norm() < 1e-14);
        assert!(s.z_at(0).unwrap().max_norm() < 1e-14);
        let s = wz_recursion(&d, Orientation::Time, Convention::Real, 0).unwrap();
        assert!((s.z_at(-2).unwrap() - sig3 * (cc * C64::new(0.0, -1.5))).max_norm() < 1e-13);
    }

    fn printed_space_densities(g: &crate::fields::SpinGrid) -> (Vec<C64>, Vec<C64>) {
        let cc = g.c;
        let d = |f| g.derivative(f, 1).unwrap();
        let (dp, dm, dz) = (d(Field::SPlus), d(Field::SMinus), d(Field::SZ));
        let z0 = (0..g.len())
            .map(|i| {
                let p = g.values[i];
                (p.s_plus * dm[i] - dp[i] * p.s_minus) / ((cc + p.s_z) * cc * 4.0)
            })
            .collect();
        let z1 = (0..g.len())
            .map(|i| -(dp[i] * dm[i] + dz[i] * dz[i]) / (cc * cc * cc * 4.0))
            .collect();
        (z0, z1)
    }

    #[test]
    fn space_series_matches_printed_densities() {
        let spec = GridSpec::periodic(256, PI, Axis::Space).unwrap();
        let g = make_spin_data(spec, c(1.0), SpinDataKind::Twist { theta0: 0.8, winding: 0 }, 0, 0.4).unwrap();
        let s = wz_recursion(&g, Orientation::Space, P, 2).unwrap();
        let (z0, z1) = printed_space_densities(&g);
        let (z0, z1) = (integrate(&z0, &spec), integrate(&z1, &spec));
        let sig = |m: Mat2, v: C64| (m - Mat2::diag(v, -v)).max_norm();
        assert!(sig(s.z_at(0).unwrap(), z0) < 1e-8, "{:?} {z0}", s.z_at(0));
        assert!(sig(s.z_at(1).unwrap(), z1) < 1e-8, "{:?} {z1}", s.z_at(1));
        assert!((s.z_at(-1).unwrap()[(0, 0)] - PI).norm() < 1e-12);
    }

    #[test]
    fn time_series_matches_printed_densities() {
        let spec = GridSpec::periodic(256, 1.0, Axis::Time).unwrap();
        let cc = c(1.1);
        let kind = SpinDataKind::FourierRandom { modes: 2 };
        let d = make_dual_data(spec, cc, kind, SigmaKind::Random { amplitude: 0.4, modes: 3 }, 7, 0.3).unwrap();
        for conv in [Convention::Paper, Convention::Real] {
            let a = conv.time_factor();
            let s = wz_recursion(&d, Orientation::Time, conv, 1).unwrap();
            assert!(s.z_at(-1).unwrap().max_norm() < 1e-12);
            let dv = |f| -> Vec<C64> { d.derivative(f, 1).unwrap().into_iter().map(|z| z * a).collect() };
            let (dp, dm, dz) = (dv(Field::SPlus), dv(Field::SMinus), dv(Field::SZ));
            let (mut z11, mut z22) = (Vec::new(), Vec::new());
            for i in 0..d.len() {
                let p = d.values[i];
                let s = p.spin;
                let sig2 = p.sigma_sq() / (cc * cc * 2.0);
                z11.push((dz[i] + s.s_plus * dm[i] / (cc + s.s_z) - sig2) / (cc * 2.0));
                z22.push((dz[i] + s.s_minus * dp[i] / (cc + s.s_z) + sig2) / (cc * 2.0));
            }
            let z11 = integrate(&z11, &spec) / a;
            let z22 = integrate(&z22, &spec) / a;
            let z0 = s.z_at(0).unwrap();
            assert!((z0[(0, 0)] - z11).norm() < 1e-8, "{conv:?} {} {z11}", z0[(0, 0)]);
            assert!((z0[(1, 1)] - z22).norm() < 1e-8, "{conv:?} {} {z22}", z0[(1, 1)]);
        }
    }

    fn random_params(side: Side, seed: u64) -> BoundaryParams {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut z = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        BoundaryParams::new(side, z() + 1.5, z(), z(), z())
    }

    #[test]
    fn periodic_generators_match_closed_forms() {
        let cc = c(1.1);
        let l = C64::new(0.7, 0.2);
        let spec = GridSpec::periodic(64, 2.0, Axis::Space).unwrap();
        let np = make_spin_data(spec, cc, SpinDataKind::NorthPole, 0, 0.0).unwrap();
        let v = v_generator_coeffs(&np, 3, l, 2).unwrap();
        assert!((v.series[0] - Mat2::diag(-(l * 2.0).inv(), ZERO)).max_norm() < 1e-14);
        let g = make_spin_data(spec, cc, SpinDataKind::FourierRandom { modes: 3 }, 11, 0.4).unwrap();
        for i in 0..g.len() {
            let v = v_generator_coeffs(&g, i, l, 2).unwrap();
            assert!(v.max_mismatch() < 1e-8, "node {i}: {:?}", v.series.iter().zip(&v.printed).map(|(a, b)| (*a - *b).max_norm()).collect::<Vec<_>>());
            let u = (v.series[0] + Mat2::identity() * (l * 4.0).inv()) * (-cc * 2.0);
            assert!((u - g.values[i].matrix() * (l * 2.0).inv()).max_norm() < 1e-13);
        }
        let tspec = GridSpec::periodic(64, 1.0, Axis::Time).unwrap();
        let d = make_dual_data(tspec, cc, SpinDataKind::FourierRandom { modes: 2 }, SigmaKind::Random { amplitude: 0.3, modes: 2 }, 4, 0.3)
            .unwrap();
        let base = d.spin();
        for conv in [Convention::Paper, Convention::Real] {
            for i in 0..d.len() {
                let u = u_generator_coeffs(&d, i, l, conv, 2).unwrap();
                assert!(u.max_mismatch() < 1e-8, "node {i}: {}", u.max_mismatch());
                let b = base_u_generator_coeffs(&base, i, l, conv, 2).unwrap();
                assert!(b.max_mismatch() < 1e-8, "node {i}: {}", b.max_mismatch());
            }
        }
    }

    #[test]
    fn open_space_generators_match_printed() {
        let cc = c(0.9);
        let l = C64::new(0.6, -0.3);
        let spec = GridSpec::open(65, 1.5, Axis::Space).unwrap();
        let g = make_spin_data(spec, cc, SpinDataKind::FourierRandom { modes: 3 }, 2, 0.4).unwrap();
        let kp = random_params(Side::Plus, 1);
        let km = random_params(Side::Minus, 2);
        let jets = local_jets(&g, Orientation::Space, P, 1).unwrap();
        let s1 = |i: usize| jets[i].s[1];
        for i in [3, 30, 60] {
            let got = open_generator_coeffs(&g, Orientation::Space, P, Region::Bulk, i, l, None, 1).unwrap();
            let want = printed_open_generator(Orientation::Space, Region::Bulk, &g.values[i], &s1(i), cc, l, None, ZERO).unwrap();
            assert!((got - want).max_norm() < 1e-10, "{got:?} {want:?}");
            let z = open_generator_coeffs(&g, Orientation::Space, P, Region::Bulk, i, l, None, 0).unwrap();
            assert!(z.max_norm() < 1e-13);
        }
        for (region, k, node) in [(Region::Plus, &kp, 64), (Region::Minus, &km, 0)] {
            let got = open_generator_coeffs(&g, Orientation::Space, P, region, 0, l, Some(k), 1).unwrap();
            let want = printed_open_generator(Orientation::Space, region, &g.values[node], &s1(node), cc, l, Some(k), ZERO).unwrap();
            assert!((got - want).max_norm() < 1e-10, "{region:?} {got:?} {want:?}");
            let z = open_generator_coeffs(&g, Orientation::Space, P, region, 0, l, Some(k), 0).unwrap();
            assert!(z.max_norm() < 1e-12);
        }
    }

    #[test]
    fn open_time_generators_match_printed() {
        let cc = c(1.2);
        let l = C64::new(0.8, 0.1);
        let spec = GridSpec::open(49, 1.0, Axis::Time).unwrap();
        let d = make_dual_data(spec, cc, SpinDataKind::FourierRandom { modes: 2 }, SigmaKind::Random { amplitude: 0.5, modes: 2 }, 9, 0.4)
            .unwrap();
        for conv in [Convention::Paper, Convention::Real] {
            let got = open_generator_coeffs(&d, Orientation::Time, conv, Region::Bulk, 20, l, None, 0).unwrap();
            let want = printed_open_generator(Orientation::Time, Region::Bulk, &d.values[20].spin, &Mat2::zero(), cc, l, None, ZERO).unwrap();
            assert!((got - want).max_norm() < 1e-12);
            for (k, node, region) in [
                (random_params(Side::Plus, 5), 48, Region::Plus),
                (random_params(Side::Minus, 6), 0, Region::Minus),
            ] {
                let w1 = w_boundary_leading(&d, conv, &k).unwrap();
                let w1p = printed_w_boundary(&d.values[node], cc, &k);
                assert!((w1 - w1p).norm() < 1e-12, "{conv:?} {region:?} {w1} {w1p}");
                let got = open_generator_coeffs(&d, Orientation::Time, conv, region, 0, l, Some(&k), 0).unwrap();
                let want = printed_open_generator(Orientation::Time, region, &d.values[node].spin, &Mat2::zero(), cc, l, Some(&k), w1p).unwrap();
                assert!((got - want).max_norm() < 1e-10, "{region:?} {got:?} {want:?}");
            }
        }
    }

    #[test]
    fn periodic_charge_examples() {
        let cc = c(1.0);
        let spec = GridSpec::periodic(64, 1.5, Axis::Space).unwrap();
        let np = make_spin_data(spec, cc, SpinDataKind::NorthPole, 0, 0.0).unwrap();
        let q = charges(&np, Orientation::Space, P, 2, None).unwrap();
        assert!((q.get(-1).unwrap() - 1.5).norm() < 1e-13);
        assert!(q.get(0).unwrap().norm() < 1e-14 && q.get(1).unwrap().norm() < 1e-14);
        assert!(q.to_csv().starts_with("k,re,im\n-1,"));

        let spec = GridSpec::periodic(256, PI, Axis::Space).unwrap();
        let g = make_spin_data(spec, cc, SpinDataKind::Twist { theta0: 0.8, winding: 0 }, 0, 0.4).unwrap();
        let q = charges(&g, Orientation::Space, P, 1, None).unwrap();
        let d = |f| g.derivative(f, 1).unwrap();
        let (dp, dm, dz) = (d(Field::SPlus), d(Field::SMinus), d(Field::SZ));
        let h: Vec<C64> = (0..g.len()).map(|i| (dp[i] * dm[i] + dz[i] * dz[i]) * 0.5).collect();
        let h = integrate(&h, &spec);
        assert!((q.get(1).unwrap() * (-2.0) - h).norm() < 1e-8);
    }

    #[test]
    fn boundary_residual_examples() {
        let cc = c(1.3);
        let spec = GridSpec::open(33, 1.0, Axis::Time).unwrap();
        let d = make_dual_data(spec, cc, SpinDataKind::NorthPole, SigmaKind::Zero, 0, 0.0).unwrap();
        let k = BoundaryParams::new(Side::Plus, ZERO, ZERO, ZERO, ONE);
        assert!((boundary_residual(&d, Orientation::Time, &k).unwrap() - 2.6).abs() < 1e-14);
        let sp = GridSpec::open(33, 1.0, Axis::Space).unwrap();
        let g = make_spin_data(sp, cc, SpinDataKind::NorthPole, 0, 0.0).unwrap();
        let k = BoundaryParams::new(Side::Minus, c(0.7), ZERO, ZERO, c(-2.0));
        assert_eq!(boundary_residual(&g, Orientation::Space, &k).unwrap(), 0.0);
        let g = make_spin_data(sp, cc, SpinDataKind::FourierRandom { modes: 2 }, 3, 0.3).unwrap();
        let p = g.values[32];
        let k = BoundaryParams::new(Side::Plus, ZERO, p.s_minus * 2.0, C64::new(0.0, 0.0), -p.s_minus);
        let k = BoundaryParams::new(Side::Plus, ZERO, k.beta, (p.s_z * 2.0 * (-k.delta) - k.beta * p.s_plus) / p.s_minus, k.delta);
        assert!(boundary_residual(&g, Orientation::Time, &k).unwrap() < 1e-14);
    }

    fn open_space_h(g: &crate::fields::SpinGrid, kp: &BoundaryParams, km: &BoundaryParams) -> C64 {
        let cc = g.c;
        let n = g.len();
        let d = |f| g.derivative(f, 1).unwrap();
        let (dp, dm, dz) = (d(Field::SPlus), d(Field::SMinus), d(Field::SZ));
        let h: Vec<C64> = (0..n).map(|i| dp[i] * dm[i] + dz[i] * dz[i]).collect();
        let bt = |k: &BoundaryParams, p: &SpinPoint| {
            (k.delta * p.s_z * 2.0 + k.beta * p.s_plus + k.gamma * p.s_minus) / (k.alpha * cc * 2.0)
        };
        -integrate(&h, &g.spec) / (cc * cc * cc * 2.0) + bt(kp, &g.values[n - 1]) + bt(km, &g.values[0])
    }

    #[test]
    fn open_space_charges() {
        let cc = c(1.0);
        let kp = BoundaryParams::new(Side::Plus, c(1.3), C64::new(0.2, 0.1), c(-0.4), c(0.3));
        let km = BoundaryParams::new(Side::Minus, c(0.9), c(0.1), C64::new(0.0, 0.3), c(-0.5));
        let mut errs = Vec::new();
        for n in [65, 129, 257] {
            let spec = GridSpec::open(n, 1.5, Axis::Space).unwrap();
            let g = make_spin_data(spec, cc, SpinDataKind::FourierRandom { modes: 3 }, 2, 0.4).unwrap();
            let q = charges(&g, Orientation::Space, P, 1, Some((&kp, &km))).unwrap();
            errs.push((q.get(1).unwrap() - open_space_h(&g, &kp, &km)).norm());
            let g0 = q.get(0).unwrap();
            assert!((g0 - (kp.alpha.ln() + km.alpha.ln())).norm() < 1e-12);
            assert!((q.get(-1).unwrap() - cc * 3.0).norm() < 1e-12);
        }
        assert!(errs[2] < 2e-5 && errs[0] / errs[1] > 12.0 && errs[1] / errs[2] > 12.0, "{errs:?}");
    }

    #[test]
    fn open_time_charges_match_printed() {
        let cc = c(1.0);
        let n = 129;
        let spec = GridSpec::open(n, 1.0, Axis::Time).unwrap();
        let kind = SpinDataKind::FourierRandom { modes: 2 };
        let d = make_dual_data(spec, cc, kind, SigmaKind::Random { amplitude: 0.5, modes: 2 }, 9, 0.4).unwrap();
        let kp = BoundaryParams::new(Side::Plus, c(0.3), C64::new(0.2, 0.1), c(-0.4), c(0.3));
        let km = BoundaryParams::new(Side::Minus, c(0.5), c(0.1), C64::new(0.0, 0.3), c(-0.5));
        let q = charges(&d, Orientation::Time, P, 0, Some((&kp, &km))).unwrap();
        let dv = |f| d.derivative(f, 1).unwrap();
        let (dp, dm) = (dv(Field::SPlus), dv(Field::SMinus));
        let b: Vec<C64> = (0..n)
            .map(|i| {
                let p = d.values[i];
                let s = p.spin;
                ((s.s_plus * dm[i] - dp[i] * s.s_minus) / (cc + s.s_z) - p.sigma_sq() / (cc * cc)) / (cc * 2.0)
            })
            .collect();
        let want = integrate(&b, &spec)
            + printed_w_boundary(&d.values[n - 1], cc, &kp).ln()
            + printed_w_boundary(&d.values[0], cc, &km).ln();
        assert!((q.get(0).unwrap() - want).norm() < 1e-10);
        assert!((q.get(-2).unwrap() - cc * 2.0).norm() < 1e-12);
        assert!(q.get(-1).unwrap().norm() < 1e-12);
        assert!((unwrap_log(C64::new(0.0, 3.0), C64::new(1.0, -3.0)) - C64::new(1.0, 2.0 * PI - 3.0)).norm() < 1e-15);
    }
}
