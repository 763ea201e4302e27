//! Lax matrices and zero-curvature residuals on sampled space-time patches.
//!
//! Time convention: under [`Convention::Paper`] the printed time derivative
//! is the integrator's time. Under [`Convention::Real`] the printed `∂_t`
//! equals `i ∂_τ`, with `τ` the integrator's real time; this turns the
//! HM flow into the real Landau-Lifshitz flow `∂_τ S = S × S'' / c²`. Every
//! overdot entering a matrix formula is converted accordingly, and the
//! zero-curvature residual reads `i ∂_τ U − ∂_x V + [U, V]`.

use serde::{Deserialize, Serialize};

use crate::algebra::{check_pole, Mat2, C64, ZERO};
use crate::error::{Error, Result};
use crate::fields::{derivative, derivative_mat2, Boundary, DualGrid, DualPoint, GridSpec, SpinGrid, SpinPoint};
use crate::poisson::Coords;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Paper,
    #[default]
    Real,
}

impl Convention {
    /// Factor `a` with printed `∂_t = a · d/dτ`.
    pub fn time_factor(self) -> C64 {
        match self {
            Convention::Paper => C64::new(1.0, 0.0),
            Convention::Real => C64::new(0.0, 1.0),
        }
    }
}

fn sl2(p: &SpinPoint) -> Mat2 {
    p.matrix()
}

/// `S / (2λ)`.
pub fn u_hm(p: &SpinPoint, lambda: C64) -> Result<Mat2> {
    check_pole("u_hm", lambda)?;
    Ok(sl2(p) * (0.5 / lambda))
}

/// `S / (2λ²) − Σ S / (2c²λ)`.
pub fn v_hm(p: &DualPoint, casimir_c: C64, lambda: C64) -> Result<Mat2> {
    check_pole("v_hm", lambda)?;
    let s = sl2(&p.spin);
    let c2 = casimir_c * casimir_c;
    Ok(s * (0.5 / (lambda * lambda)) - (p.sigma_matrix() * s) * (0.5 / (c2 * lambda)))
}

/// `S/(2λ³) − ΣS/(2c²λ²) − ṠS/(2c²λ) + Σ²S/(4c⁴λ)`; `sdot` is the printed
/// time derivative.
pub fn u2_dual(p: &DualPoint, sdot: &SpinPoint, casimir_c: C64, lambda: C64) -> Result<Mat2> {
    check_pole("u2_dual", lambda)?;
    let s = sl2(&p.spin);
    let sig = p.sigma_matrix();
    let c2 = casimir_c * casimir_c;
    let l2 = lambda * lambda;
    Ok(s * (0.5 / (l2 * lambda)) - (sig * s) * (0.5 / (c2 * l2)) - (sl2(sdot) * s) * (0.5 / (c2 * lambda))
        + s * (p.sigma_sq() * 0.25 / (c2 * c2 * lambda)))
}

/// `U = V = S/(2λ)`.
pub fn base_lax(p: &SpinPoint, lambda: C64) -> Result<(Mat2, Mat2)> {
    let u = u_hm(p, lambda)?;
    Ok((u, u))
}

/// Spin plus the independent first- and second-derivative proxies `P`, `𝕡`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint {
    pub spin: SpinPoint,
    pub p: SpinPoint,
    pub pp: SpinPoint,
}

/// `S/(2λ³) − PS/(2c²λ²) + 𝕡/(2c²λ) + 3P²S/(4c⁴λ)`.
pub fn u2_comm(e: &ExtendedPoint, casimir_c: C64, lambda: C64) -> Result<Mat2> {
    check_pole("u2_comm", lambda)?;
    let s = sl2(&e.spin);
    let p = sl2(&e.p);
    let c2 = casimir_c * casimir_c;
    let l2 = lambda * lambda;
    Ok(s * (0.5 / (l2 * lambda)) - (p * s) * (0.5 / (c2 * l2))
        + sl2(&e.pp) * (0.5 / (c2 * lambda))
        + (p * p * s) * (0.75 / (c2 * c2 * lambda)))
}

/// `S/(2λ²) − PS/(2c²λ)`.
pub fn v1_comm(e: &ExtendedPoint, casimir_c: C64, lambda: C64) -> Result<Mat2> {
    let d = DualPoint::new(e.spin, e.p.s_plus, e.p.s_minus, e.p.s_z);
    v_hm(&d, casimir_c, lambda)
}

/// `𝕡 = SṠ − P²S/c²` in sl(2) components.
pub fn redundant_pp(spin: &SpinPoint, sdot: &SpinPoint, p: &SpinPoint, casimir_c: C64) -> SpinPoint {
    let s = sl2(spin);
    let pm = sl2(p);
    let m = s * sl2(sdot) - (pm * pm * s) * (1.0 / (casimir_c * casimir_c));
    SpinPoint::new(m[(1, 0)], m[(0, 1)], (m[(0, 0)] - m[(1, 1)]) * 0.5)
}

/// Fields sampled on a rectangle: `values[it][ix]` holds
/// `(S₊, S₋, S_z, Σ₊, Σ₋, Σ_z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub x: GridSpec,
    pub t: GridSpec,
    pub c: C64,
    pub values: Vec<Vec<Coords>>,
}

fn coords_of_spin(p: &SpinPoint) -> Coords {
    [p.s_plus, p.s_minus, p.s_z, ZERO, ZERO, ZERO]
}

impl Patch {
    pub fn new(x: GridSpec, t: GridSpec, c: C64, values: Vec<Vec<Coords>>) -> Result<Self> {
        if values.len() != t.n_points || values.iter().any(|r| r.len() != x.n_points) {
            return Err(Error::InvalidGrid("patch shape does not match its grids".into()));
        }
        Ok(Patch { x, t, c, values })
    }

    /// Stacks spatial snapshots taken every `dt`; the time axis is open.
    pub fn from_time_slices(slices: &[SpinGrid], dt: f64) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::InvalidGrid("no slices".into()))?;
        let n_t = slices.len();
        let t = GridSpec::open(n_t, 0.5 * dt * (n_t as f64 - 1.0), crate::fields::Axis::Time)?;
        let values = slices
            .iter()
            .map(|g| g.values.iter().map(coords_of_spin).collect())
            .collect();
        Patch::new(first.spec, t, first.c, values)
    }

    /// Stacks temporal snapshots (dual grids) taken every `dx`; the space
    /// axis is open.
    pub fn from_space_slices(slices: &[DualGrid], dx: f64) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::InvalidGrid("no slices".into()))?;
        let n_x = slices.len();
        let x = GridSpec::open(n_x, 0.5 * dx * (n_x as f64 - 1.0), crate::fields::Axis::Space)?;
        let t = first.spec;
        let mut values = vec![vec![[ZERO; 6]; n_x]; t.n_points];
        for (ix, g) in slices.iter().enumerate() {
            for (it, p) in g.values.iter().enumerate() {
                values[it][ix] = p.as_array();
            }
        }
        Patch::new(x, t, first.c, values)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.t.n_points, self.x.n_points)
    }

    pub fn point(&self, it: usize, ix: usize) -> DualPoint {
        DualPoint::from_array(self.values[it][ix])
    }

    /// `∂_x` (axis = Space) or `∂_τ` (axis = Time) of every component.
    pub fn derivative(&self, along_time: bool, order: usize) -> Result<Vec<Vec<Coords>>> {
        let (nt, nx) = self.shape();
        let mut out = vec![vec![[ZERO; 6]; nx]; nt];
        for k in 0..6 {
            if along_time {
                for ix in 0..nx {
                    let col: Vec<C64> = (0..nt).map(|it| self.values[it][ix][k]).collect();
                    for (it, v) in derivative(&col, &self.t, order)?.into_iter().enumerate() {
                        out[it][ix][k] = v;
                    }
                }
            } else {
                for it in 0..nt {
                    let row: Vec<C64> = (0..nx).map(|ix| self.values[it][ix][k]).collect();
                    for (ix, v) in derivative(&row, &self.x, order)?.into_iter().enumerate() {
                        out[it][ix][k] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Sets `Σ := ∂_x S`.
    pub fn fill_sigma_from_space_derivative(&mut self) -> Result<()> {
        let d = self.derivative(false, 1)?;
        for (row, drow) in self.values.iter_mut().zip(&d) {
            for (v, dv) in row.iter_mut().zip(drow) {
                v[3] = dv[0];
                v[4] = dv[1];
                v[5] = dv[2];
            }
        }
        Ok(())
    }

    pub(crate) fn interior(&self, along_time: bool) -> std::ops::Range<usize> {
        let spec = if along_time { &self.t } else { &self.x };
        match spec.boundary {
            Boundary::Periodic => 0..spec.n_points,
            Boundary::Open => 2..spec.n_points - 2,
        }
    }
}

/// Which Lax pair is inserted into the zero-curvature condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `(S/(2λ), S/(2λ²) − ΣS/(2c²λ))` with the patch's `Σ`.
    Hm,
    /// `(U₂, V)` with `Ṡ` from the patch.
    U2Dual,
    /// `(u2_comm, v1_comm)` with `P = Σ` and `𝕡 = SṠ − P²S/c²`.
    Comm,
    /// `U = V = S/(2λ)`.
    Base,
}

fn spin_of(c: &Coords) -> SpinPoint {
    SpinPoint::new(c[0], c[1], c[2])
}

/// Max over interior patch points of `‖a ∂_τU − ∂_xV + [U, V]‖`, `a` the
/// convention's time factor.
pub fn zero_curvature_residual(patch: &Patch, pair: PairKind, lambda: C64, convention: Convention) -> Result<f64> {
    let (nt, nx) = patch.shape();
    if nt < 8 || nx < 8 {
        return Err(Error::GridTooSmall { have: nt.min(nx), need: 8 });
    }
    let a = convention.time_factor();
    let cc = patch.c;
    let dt = patch.derivative(true, 1)?;
    let mut u = vec![vec![Mat2::zero(); nx]; nt];
    let mut v = vec![vec![Mat2::zero(); nx]; nt];
    for it in 0..nt {
        for ix in 0..nx {
            let p = patch.point(it, ix);
            let d = &dt[it][ix];
            let sdot = SpinPoint::new(d[0] * a, d[1] * a, d[2] * a);
            let (uu, vv) = match pair {
                PairKind::Hm => (u_hm(&p.spin, lambda)?, v_hm(&p, cc, lambda)?),
                PairKind::U2Dual => (u2_dual(&p, &sdot, cc, lambda)?, v_hm(&p, cc, lambda)?),
                PairKind::Comm => {
                    let e = ExtendedPoint {
                        spin: p.spin,
                        p: p.sigma(),
                        pp: redundant_pp(&p.spin, &sdot, &p.sigma(), cc),
                    };
                    (u2_comm(&e, cc, lambda)?, v1_comm(&e, cc, lambda)?)
                }
                PairKind::Base => base_lax(&spin_of(&patch.values[it][ix]), lambda)?,
            };
            u[it][ix] = uu;
            v[it][ix] = vv;
        }
    }
    let mut du = vec![vec![Mat2::zero(); nx]; nt];
    for ix in 0..nx {
        let col: Vec<Mat2> = (0..nt).map(|it| u[it][ix]).collect();
        for (it, m) in derivative_mat2(&col, &patch.t, 1)?.into_iter().enumerate() {
            du[it][ix] = m;
        }
    }
    let mut worst: f64 = 0.0;
    for it in patch.interior(true) {
        let dv = derivative_mat2(&v[it], &patch.x, 1)?;
        for ix in patch.interior(false) {
            let r = du[it][ix] * a - dv[ix] + u[it][ix].commutator(&v[it][ix]);
            worst = worst.max(r.max_norm());
        }
    }
    Ok(worst)
}
