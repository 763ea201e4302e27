//! Path-ordered transport along either axis, periodic and double-row
//! transfer matrices, and λ-scans.
//!
//! Each grid cell contributes `exp(Δ M(mid))`, with `M = U` (space) or
//! `M = V` (time) evaluated on fields interpolated to the cell midpoint by
//! four-point Lagrange interpolation. Later cells multiply from the left.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{k_matrix, BoundaryParams, Mat2, C64, ZERO};
use crate::error::{Error, Result};
use crate::fields::{fd_weights, Boundary, DualPoint, FieldGrid, GridSpec};
use crate::hierarchy::wz_recursion;
use crate::lax::{u_hm, v_hm, Convention};
use crate::poisson::Coords;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Space,
    Time,
}

/// `U(λ)` for space transport, `V(λ)/a` for time transport, where `a` is
/// the convention's time factor (the grid coordinate is the real `τ`).
pub fn generator(
    orientation: Orientation,
    convention: Convention,
    u: &Coords,
    casimir_c: C64,
    lambda: C64,
) -> Result<Mat2> {
    let p = DualPoint::from_array(*u);
    match orientation {
        Orientation::Space => u_hm(&p.spin, lambda),
        Orientation::Time => Ok(v_hm(&p, casimir_c, lambda)? * convention.time_factor().inv()),
    }
}

fn node_coords<G: FieldGrid>(g: &G, i: usize) -> Coords {
    let mut u = [ZERO; 6];
    for &f in G::FIELDS {
        u[f.index()] = g.get(i, f);
    }
    u
}

/// Fields at fractional index `s` (node units).
pub fn interpolate<G: FieldGrid>(g: &G, s: f64) -> Coords {
    let n = g.len();
    let spec = g.spec();
    let base = s.floor() as isize;
    let (lo, wrap) = match spec.boundary {
        Boundary::Periodic => (base - 1, true),
        Boundary::Open => ((base - 1).clamp(0, n as isize - 4), false),
    };
    let nodes: Vec<f64> = (0..4).map(|k| (lo + k) as f64).collect();
    let w = fd_weights(s, &nodes, 0);
    let mut u = [ZERO; 6];
    for (k, wk) in w.iter().enumerate() {
        let mut j = lo + k as isize;
        if wrap {
            j = j.rem_euclid(n as isize);
        }
        let v = node_coords(g, j as usize);
        for f in 0..6 {
            u[f] += v[f] * *wk;
        }
    }
    u
}

fn cell_count(spec: &GridSpec) -> usize {
    match spec.boundary {
        Boundary::Periodic => spec.n_points,
        Boundary::Open => spec.n_points - 1,
    }
}

/// Propagator of cell `[i, i+1]` split into `sub` equal midpoint steps,
/// at `sign·λ`; `inverse` returns its inverse.
fn cell_propagator<G: FieldGrid>(
    g: &G,
    orientation: Orientation,
    convention: Convention,
    lambda: C64,
    i: usize,
    sub: usize,
    inverse: bool,
) -> Result<Mat2> {
    let h = g.spec().spacing() / sub as f64;
    let mut acc = Mat2::identity();
    for k in 0..sub {
        let s = i as f64 + (k as f64 + 0.5) / sub as f64;
        let m = generator(orientation, convention, &interpolate(g, s), g.casimir_c(), lambda)?;
        if inverse {
            acc = acc * (m * (-h)).exp();
        } else {
            acc = (m * h).exp() * acc;
        }
    }
    Ok(acc)
}

/// Step refinement for [`transport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum TransportScheme {
    /// `sub` midpoint-exponential steps per cell.
    Midpoint { sub: usize },
    /// `(4 T_{2·sub} − T_{sub}) / 3`.
    Richardson { sub: usize },
}

impl Default for TransportScheme {
    fn default() -> Self {
        TransportScheme::Midpoint { sub: 1 }
    }
}

fn check_range(spec: &GridSpec, from: usize, to: usize) -> Result<()> {
    let max = cell_count(spec);
    if from > to || to > max {
        return Err(Error::Index(format!("transport {from} → {to} outside 0..={max}")));
    }
    Ok(())
}

/// `T(x_to, x_from; λ)`. On periodic grids `to = n_points` closes the loop.
pub fn transport<G: FieldGrid>(
    g: &G,
    lambda: C64,
    from: usize,
    to: usize,
    orientation: Orientation,
    convention: Convention,
    scheme: TransportScheme,
) -> Result<Mat2> {
    check_range(g.spec(), from, to)?;
    let product = |sub: usize| -> Result<Mat2> {
        let mut t = Mat2::identity();
        for i in from..to {
            t = cell_propagator(g, orientation, convention, lambda, i, sub, false)? * t;
        }
        Ok(t)
    };
    match scheme {
        TransportScheme::Midpoint { sub } => product(sub.max(1)),
        TransportScheme::Richardson { sub } => {
            let coarse = product(sub.max(1))?;
            let fine = product(2 * sub.max(1))?;
            Ok((fine * 4.0 - coarse) * (1.0 / 3.0))
        }
    }
}

/// `T(x_to, x_from; λ)⁻¹` from inverse cell propagators in reverse order.
pub fn inverse_transport<G: FieldGrid>(
    g: &G,
    lambda: C64,
    from: usize,
    to: usize,
    orientation: Orientation,
    convention: Convention,
    sub: usize,
) -> Result<Mat2> {
    check_range(g.spec(), from, to)?;
    let mut t = Mat2::identity();
    for i in from..to {
        t = t * cell_propagator(g, orientation, convention, lambda, i, sub.max(1), true)?;
    }
    Ok(t)
}

/// Full-interval transport.
pub fn monodromy<G: FieldGrid>(
    g: &G,
    lambda: C64,
    orientation: Orientation,
    convention: Convention,
) -> Result<Mat2> {
    let n = cell_count(g.spec());
    transport(g, lambda, 0, n, orientation, convention, TransportScheme::default())
}

/// `tr T(λ)` over the full interval.
pub fn transfer<G: FieldGrid>(
    g: &G,
    lambda: C64,
    orientation: Orientation,
    convention: Convention,
) -> Result<C64> {
    transfer_with(g, lambda, orientation, convention, TransportScheme::default())
}

pub fn transfer_with<G: FieldGrid>(
    g: &G,
    lambda: C64,
    orientation: Orientation,
    convention: Convention,
    scheme: TransportScheme,
) -> Result<C64> {
    let n = cell_count(g.spec());
    Ok(transport(g, lambda, 0, n, orientation, convention, scheme)?.trace())
}

/// `tr[K₊(λ) T(λ) K₋(λ) T⁻¹(−λ)]`.
pub fn open_transfer<G: FieldGrid>(
    g: &G,
    lambda: C64,
    orientation: Orientation,
    convention: Convention,
    kplus: &BoundaryParams,
    kminus: &BoundaryParams,
) -> Result<C64> {
    open_transfer_with(g, lambda, orientation, convention, kplus, kminus, TransportScheme::default())
}

pub fn open_transfer_with<G: FieldGrid>(
    g: &G,
    lambda: C64,
    orientation: Orientation,
    convention: Convention,
    kplus: &BoundaryParams,
    kminus: &BoundaryParams,
    scheme: TransportScheme,
) -> Result<C64> {
    let n = cell_count(g.spec());
    let t = transport(g, lambda, 0, n, orientation, convention, scheme)?;
    let inv = |sub| inverse_transport(g, -lambda, 0, n, orientation, convention, sub);
    let tinv = match scheme {
        TransportScheme::Midpoint { sub } => inv(sub)?,
        TransportScheme::Richardson { sub } => {
            let sub = sub.max(1);
            (inv(2 * sub)? * 4.0 - inv(sub)?) * (1.0 / 3.0)
        }
    };
    Ok((k_matrix(kplus, lambda) * t * k_matrix(kminus, lambda) * tinv).trace())
}

/// 8 log-spaced real samples in `[lo, 2]` plus 4 complex ones.
pub fn lambdas_from(lo: f64) -> Vec<C64> {
    let mut out: Vec<C64> = (0..8)
        .map(|k| {
            let s = k as f64 / 7.0;
            C64::new((lo.ln() * (1.0 - s) + 2f64.ln() * s).exp(), 0.0)
        })
        .collect();
    out.extend([
        C64::new(0.3, 0.1),
        C64::new(0.5, -0.2),
        C64::new(1.0, 0.5),
        C64::new(1.5, -0.3),
    ]);
    out
}

/// 8 log-spaced real samples in `[0.05, 2]` plus 4 complex ones.
pub fn default_lambdas() -> Vec<C64> {
    lambdas_from(0.05)
}

/// Time-orientation scan: the generator grows like `λ⁻²`, so the real
/// samples start at `0.3`.
pub fn default_time_lambdas() -> Vec<C64> {
    lambdas_from(0.3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferScan {
    pub orientation: Orientation,
    pub open: bool,
    pub lambdas: Vec<C64>,
    pub values: Vec<C64>,
}

impl TransferScan {
    /// Header `lambda_re,lambda_im,t_re,t_im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_re,lambda_im,t_re,t_im\n");
        for (l, t) in self.lambdas.iter().zip(&self.values) {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", l.re, l.im, t.re, t.im);
        }
        out
    }

    /// Max over samples of `|t_other − t_self| / |t_self|`.
    pub fn relative_drift(&self, other: &TransferScan) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (b - a).norm() / a.norm().max(1e-300))
            .fold(0.0, f64::max)
    }
}

/// Periodic (or, with `boundary`, double-row) transfer matrix at each λ.
pub fn scan<G: FieldGrid>(
    g: &G,
    lambdas: &[C64],
    orientation: Orientation,
    convention: Convention,
    boundary: Option<(&BoundaryParams, &BoundaryParams)>,
    scheme: TransportScheme,
) -> Result<TransferScan> {
    let values = lambdas
        .par_iter()
        .map(|&l| match boundary {
            None => transfer_with(g, l, orientation, convention, scheme),
            Some((kp, km)) => open_transfer_with(g, l, orientation, convention, kp, km, scheme),
        })
        .collect::<Result<Vec<_>>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transfer scan".into()));
    }
    Ok(TransferScan {
        orientation,
        open: boundary.is_some(),
        lambdas: lambdas.to_vec(),
        values,
    })
}

/// `‖T − (I+W(x₂)) e^{Z} (I+W(x₁))⁻¹‖ / ‖T‖` over the whole grid interval,
/// with `W` and `Z` truncated at `k_max`.
pub fn diagonalization_residual<G: FieldGrid>(
    g: &G,
    lambda: C64,
    orientation: Orientation,
    convention: Convention,
    k_max: usize,
) -> Result<f64> {
    let series = wz_recursion(g, orientation, convention, k_max)?;
    let t = monodromy(g, lambda, orientation, convention)?;
    let last = cell_count(g.spec()) % g.len();
    let w_at = |i: usize| {
        let mut acc = Mat2::identity();
        for (k, wk) in series.w[i].iter().take(k_max + 1).enumerate() {
            acc += *wk * lambda.powi(k as i32);
        }
        acc
    };
    let mut z = Mat2::zero();
    for k in series.orders() {
        z += series.z_at(k).unwrap() * lambda.powi(k);
    }
    let ez = Mat2::diag(z[(0, 0)].exp(), z[(1, 1)].exp());
    let approx = w_at(last) * ez * w_at(0).inverse()?;
    let r = (t - approx).max_norm() / t.max_norm();
    if !r.is_finite() {
        return Err(Error::NonFinite("diagonalization residual".into()));
    }
    Ok(r)
}
