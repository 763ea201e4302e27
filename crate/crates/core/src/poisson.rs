//! Ultralocal Poisson structures on the local fields.
//!
//! A [`BracketTable`] stores the δ-stripped structure functions
//! `{u_f, u_g} = J_fg(u)` as polynomials, so the Jacobi identity can be
//! checked pointwise by exact differentiation of the table. On a grid the
//! delta function becomes `δ_mn / Δ`.
//!
//! Field coordinates are always ordered as [`Field::ALL`]:
//! `(S₊, S₋, S_z, Σ₊, Σ₋, Σ_z)`. Spin points simply carry `Σ = 0`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{C64, ZERO};
use crate::error::{Error, Result};
use crate::fields::{DualPoint, Field, FieldGrid, SpinPoint};

pub type Coords = [C64; 6];

pub trait LocalPoint {
    fn coords(&self) -> Coords;
}

impl LocalPoint for SpinPoint {
    fn coords(&self) -> Coords {
        [self.s_plus, self.s_minus, self.s_z, ZERO, ZERO, ZERO]
    }
}

impl LocalPoint for DualPoint {
    fn coords(&self) -> Coords {
        self.as_array()
    }
}

impl LocalPoint for Coords {
    fn coords(&self) -> Coords {
        *self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: C64,
    pub powers: [u8; 6],
}

/// Polynomial in the six local fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Poly(pub Vec<Monomial>);

impl Poly {
    pub fn zero() -> Self {
        Poly(Vec::new())
    }

    pub fn var(f: Field) -> Self {
        let mut powers = [0; 6];
        powers[f.index()] = 1;
        Poly(vec![Monomial {
            coeff: C64::new(1.0, 0.0),
            powers,
        }])
    }

    /// `coeff · Π u_f` over the listed fields (repeats allowed).
    pub fn term(coeff: f64, fields: &[Field]) -> Self {
        let mut powers = [0; 6];
        for f in fields {
            powers[f.index()] += 1;
        }
        Poly(vec![Monomial {
            coeff: C64::new(coeff, 0.0),
            powers,
        }])
    }

    pub fn plus(mut self, other: Poly) -> Self {
        self.0.extend(other.0);
        self
    }

    pub fn scale(mut self, s: C64) -> Self {
        for m in &mut self.0 {
            m.coeff *= s;
        }
        self
    }

    pub fn eval(&self, u: &Coords) -> C64 {
        self.0
            .iter()
            .map(|m| {
                let mut v = m.coeff;
                for (x, &p) in u.iter().zip(&m.powers) {
                    for _ in 0..p {
                        v *= x;
                    }
                }
                v
            })
            .sum()
    }

    pub fn partial(&self, f: Field) -> Poly {
        let k = f.index();
        Poly(
            self.0
                .iter()
                .filter(|m| m.powers[k] > 0)
                .map(|m| {
                    let mut powers = m.powers;
                    powers[k] -= 1;
                    Monomial {
                        coeff: m.coeff * m.powers[k] as f64,
                        powers,
                    }
                })
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketKind {
    EqualTime,
    EqualSpace,
}

/// Structure functions of an ultralocal bracket, stored for ordered pairs
/// `f < g`; the other orientation follows by antisymmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketTable {
    pub kind: BracketKind,
    fields: Vec<Field>,
    entries: BTreeMap<(Field, Field), Poly>,
}

impl BracketTable {
    /// `{S±, S_z} = ±S±`, `{S₊, S₋} = −2 S_z`.
    pub fn equal_time() -> Self {
        use Field::*;
        let mut t = BracketTable {
            kind: BracketKind::EqualTime,
            fields: Field::SPIN.to_vec(),
            entries: BTreeMap::new(),
        };
        t.set(SPlus, SZ, Poly::term(1.0, &[SPlus]));
        t.set(SMinus, SZ, Poly::term(-1.0, &[SMinus]));
        t.set(SPlus, SMinus, Poly::term(-2.0, &[SZ]));
        t
    }

    /// The bracket generated by the auxiliary-field `V`-matrix.
    pub fn equal_space() -> Self {
        use Field::*;
        let mut t = BracketTable {
            kind: BracketKind::EqualSpace,
            fields: Field::ALL.to_vec(),
            entries: BTreeMap::new(),
        };
        t.set(SPlus, SigmaZ, Poly::term(1.0, &[SPlus, SZ]));
        t.set(SMinus, SigmaZ, Poly::term(1.0, &[SMinus, SZ]));
        t.set(SZ, SigmaPlus, Poly::term(1.0, &[SPlus, SZ]));
        t.set(SZ, SigmaMinus, Poly::term(1.0, &[SMinus, SZ]));
        t.set(SZ, SigmaZ, Poly::term(-1.0, &[SPlus, SMinus]));
        t.set(SPlus, SigmaPlus, Poly::term(1.0, &[SPlus, SPlus]));
        t.set(SMinus, SigmaMinus, Poly::term(1.0, &[SMinus, SMinus]));
        let mixed = Poly::term(-2.0, &[SZ, SZ]).plus(Poly::term(-1.0, &[SPlus, SMinus]));
        t.set(SPlus, SigmaMinus, mixed.clone());
        t.set(SMinus, SigmaPlus, mixed);
        t.set(
            SigmaPlus,
            SigmaZ,
            Poly::term(1.0, &[SPlus, SigmaZ]).plus(Poly::term(-1.0, &[SigmaPlus, SZ])),
        );
        t.set(
            SigmaMinus,
            SigmaZ,
            Poly::term(1.0, &[SMinus, SigmaZ]).plus(Poly::term(-1.0, &[SigmaMinus, SZ])),
        );
        t.set(
            SigmaPlus,
            SigmaMinus,
            Poly::term(1.0, &[SPlus, SigmaMinus]).plus(Poly::term(-1.0, &[SigmaPlus, SMinus])),
        );
        t
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// Overwrites `{f, g}` (and hence `{g, f}`).
    pub fn set(&mut self, f: Field, g: Field, p: Poly) {
        if f < g {
            self.entries.insert((f, g), p);
        } else if g < f {
            self.entries.insert((g, f), p.scale(C64::new(-1.0, 0.0)));
        }
    }

    /// Structure function `J_fg`; unlisted pairs of known fields are zero.
    pub fn get(&self, f: Field, g: Field) -> Result<Poly> {
        if !self.fields.contains(&f) || !self.fields.contains(&g) {
            return Err(Error::UnknownBracket(f.name().into(), g.name().into()));
        }
        if f == g {
            return Ok(Poly::zero());
        }
        Ok(if f < g {
            self.entries.get(&(f, g)).cloned().unwrap_or_default()
        } else {
            self.entries
                .get(&(g, f))
                .cloned()
                .unwrap_or_default()
                .scale(C64::new(-1.0, 0.0))
        })
    }

    /// `J(u)` as a 6×6 array in [`Field::ALL`] order; rows/columns of fields
    /// absent from the table are zero.
    pub fn matrix_at(&self, u: &Coords) -> [[C64; 6]; 6] {
        let mut j = [[ZERO; 6]; 6];
        for &f in &self.fields {
            for &g in &self.fields {
                j[f.index()][g.index()] = self.get(f, g).map(|p| p.eval(u)).unwrap_or(ZERO);
            }
        }
        j
    }
}

/// `{f, g}` at a point, without the `δ` weight.
pub fn point_bracket(t: &BracketTable, f: Field, g: Field, p: &impl LocalPoint) -> Result<C64> {
    Ok(t.get(f, g)?.eval(&p.coords()))
}

/// Point bracket of two functions given through their gradients with
/// respect to [`Field::ALL`].
pub fn gradient_bracket(t: &BracketTable, df: &Coords, dg: &Coords, p: &impl LocalPoint) -> C64 {
    let j = t.matrix_at(&p.coords());
    let mut acc = ZERO;
    for a in 0..6 {
        for b in 0..6 {
            acc += df[a] * j[a][b] * dg[b];
        }
    }
    acc
}

/// Cartesian components `S_x, S_y, S_z, Σ_x, Σ_y, Σ_z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CartesianField {
    Sx,
    Sy,
    Sz,
    SigX,
    SigY,
    SigZ,
}

impl CartesianField {
    /// Gradient of the component with respect to [`Field::ALL`].
    pub fn gradient(self) -> Coords {
        let half = C64::new(0.5, 0.0);
        let mi_half = C64::new(0.0, -0.5);
        let i_half = C64::new(0.0, 0.5);
        let one = C64::new(1.0, 0.0);
        let mut g = [ZERO; 6];
        match self {
            CartesianField::Sx => (g[0], g[1]) = (half, half),
            CartesianField::Sy => (g[0], g[1]) = (mi_half, i_half),
            CartesianField::Sz => g[2] = one,
            CartesianField::SigX => (g[3], g[4]) = (half, half),
            CartesianField::SigY => (g[3], g[4]) = (mi_half, i_half),
            CartesianField::SigZ => g[5] = one,
        }
        g
    }
}

pub fn cartesian_bracket(
    t: &BracketTable,
    f: CartesianField,
    g: CartesianField,
    p: &impl LocalPoint,
) -> C64 {
    gradient_bracket(t, &f.gradient(), &g.gradient(), p)
}

/// Max over field triples of `|{{f,g},h} + cyclic|`, with
/// `{{f,g},h} = Σ_d J_hd ∂_d J_fg` expanded from the polynomial table.
pub fn jacobi_residual(t: &BracketTable, p: &impl LocalPoint) -> f64 {
    let u = p.coords();
    let fs = t.fields();
    let j = t.matrix_at(&u);
    let dj = |a: Field, b: Field, d: Field| -> C64 {
        t.get(a, b).map(|q| q.partial(d).eval(&u)).unwrap_or(ZERO)
    };
    let mut worst: f64 = 0.0;
    for (ia, &a) in fs.iter().enumerate() {
        for (ib, &b) in fs.iter().enumerate().skip(ia + 1) {
            for &cc in fs.iter().skip(ib + 1) {
                let mut acc = ZERO;
                for &d in fs {
                    acc += j[a.index()][d.index()] * dj(b, cc, d)
                        + j[b.index()][d.index()] * dj(cc, a, d)
                        + j[cc.index()][d.index()] * dj(a, b, d);
                }
                worst = worst.max(acc.norm());
            }
        }
    }
    worst
}

/// `ψ₁, ψ₂, φ₁, φ₂` built from a dual point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPoint {
    pub psi1: C64,
    pub psi2: C64,
    pub phi1: C64,
    pub phi2: C64,
}

const COORD_GUARD: f64 = 1e-8;

fn canonical_parts(p: &DualPoint, c2: C64) -> Result<([C64; 3], [C64; 3])> {
    let s = p.spin.cartesian();
    let g = p.sigma().cartesian();
    if s.iter().any(|x| x.norm() < COORD_GUARD) {
        return Err(Error::CoordinateSingularity(
            "canonical coordinates need S_x, S_y, S_z ≠ 0",
        ));
    }
    if c2.norm() < COORD_GUARD {
        return Err(Error::CoordinateSingularity("vanishing Casimir"));
    }
    Ok((s, g))
}

/// `ψ₁ = S_x²`, `φ₁ = (Σ_z/S_z − Σ_x/S_x)/(2c²)` and likewise with `y`.
pub fn canonical_coords(p: &DualPoint, casimir_c: C64) -> Result<CanonicalPoint> {
    let c2 = casimir_c * casimir_c;
    let (s, g) = canonical_parts(p, c2)?;
    let k = 1.0 / (c2 * 2.0);
    Ok(CanonicalPoint {
        psi1: s[0] * s[0],
        psi2: s[1] * s[1],
        phi1: (g[2] / s[2] - g[0] / s[0]) * k,
        phi2: (g[2] / s[2] - g[1] / s[1]) * k,
    })
}

/// Gradients of `(ψ₁, ψ₂, φ₁, φ₂)` with respect to [`Field::ALL`], treating
/// `c` as a constant.
pub fn canonical_gradients(p: &DualPoint, casimir_c: C64) -> Result<[Coords; 4]> {
    let c2 = casimir_c * casimir_c;
    let (s, g) = canonical_parts(p, c2)?;
    let k = 1.0 / (c2 * 2.0);
    let cart = |d: [C64; 6]| -> Coords {
        let mut out = [ZERO; 6];
        let comps = [
            CartesianField::Sx,
            CartesianField::Sy,
            CartesianField::Sz,
            CartesianField::SigX,
            CartesianField::SigY,
            CartesianField::SigZ,
        ];
        for (dc, comp) in d.iter().zip(comps) {
            let gr = comp.gradient();
            for a in 0..6 {
                out[a] += dc * gr[a];
            }
        }
        out
    };
    let psi1 = cart([s[0] * 2.0, ZERO, ZERO, ZERO, ZERO, ZERO]);
    let psi2 = cart([ZERO, s[1] * 2.0, ZERO, ZERO, ZERO, ZERO]);
    let phi = |i: usize| {
        let mut d = [ZERO; 6];
        d[i] = g[i] / (s[i] * s[i]) * k;
        d[2] += -g[2] / (s[2] * s[2]) * k;
        d[3 + i] = -k / s[i];
        d[5] += k / s[2];
        cart(d)
    };
    Ok([psi1, psi2, phi(0), phi(1)])
}

/// A functional of a grid, e.g. a charge.
pub type Functional<'a, G> = dyn Fn(&G) -> Result<C64> + Sync + 'a;

/// Step control for numerical variational derivatives: central differences
/// with step `rel_step · max(1, |u|)` and one Richardson refinement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientOptions {
    pub rel_step: f64,
    pub richardson: bool,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions {
            rel_step: 1e-4,
            richardson: true,
        }
    }
}

/// `∂F/∂u_{f,n}` for every node `n` and every field of the grid, ordered as
/// [`Field::ALL`] (absent fields stay zero).
pub fn functional_gradient<G: FieldGrid>(
    functional: &Functional<'_, G>,
    g: &G,
    opts: GradientOptions,
) -> Result<Vec<Coords>> {
    (0..g.len())
        .into_par_iter()
        .map(|n| {
            let mut work = g.clone();
            let mut out = [ZERO; 6];
            for &f in G::FIELDS {
                let u0 = g.get(n, f);
                let h = opts.rel_step * u0.norm().max(1.0);
                let mut central = |h: f64| -> Result<C64> {
                    work.set(n, f, u0 + h);
                    let up = functional(&work)?;
                    work.set(n, f, u0 - h);
                    let dn = functional(&work)?;
                    work.set(n, f, u0);
                    Ok((up - dn) / (2.0 * h))
                };
                let d1 = central(h)?;
                let d = if opts.richardson {
                    let d2 = central(h / 2.0)?;
                    (d2 * 4.0 - d1) / 3.0
                } else {
                    d1
                };
                if !d.is_finite() {
                    return Err(Error::NonFinite(format!("gradient at node {n}")));
                }
                out[f.index()] = d;
            }
            Ok(out)
        })
        .collect()
}

/// `{F, G} = Σ_n (1/Δ) ∂F/∂u_n · J(u_n) · ∂G/∂u_n`.
pub fn functional_bracket<G: FieldGrid>(
    f: &Functional<'_, G>,
    h: &Functional<'_, G>,
    g: &G,
    t: &BracketTable,
    opts: GradientOptions,
) -> Result<C64> {
    let df = functional_gradient(f, g, opts)?;
    let dh = functional_gradient(h, g, opts)?;
    Ok(bracket_from_gradients(&df, &dh, g, t))
}

pub fn bracket_from_gradients<G: FieldGrid>(df: &[Coords], dh: &[Coords], g: &G, t: &BracketTable) -> C64 {
    let inv_d = 1.0 / g.spec().spacing();
    (0..g.len())
        .map(|n| gradient_bracket(t, &df[n], &dh[n], &point_coords(g, n)) * inv_d)
        .sum()
}

fn point_coords<G: FieldGrid>(g: &G, n: usize) -> Coords {
    let mut u = [ZERO; 6];
    for &f in G::FIELDS {
        u[f.index()] = g.get(n, f);
    }
    u
}

/// `{F, u_f(n)}` for every node and field: the Hamiltonian vector field of `F`.
pub fn hamilton_flow<G: FieldGrid>(
    charge: &Functional<'_, G>,
    g: &G,
    t: &BracketTable,
    opts: GradientOptions,
) -> Result<Vec<Coords>> {
    let df = functional_gradient(charge, g, opts)?;
    let inv_d = 1.0 / g.spec().spacing();
    Ok((0..g.len())
        .map(|n| {
            let j = t.matrix_at(&point_coords(g, n));
            let mut out = [ZERO; 6];
            for &f in G::FIELDS {
                let mut acc = ZERO;
                for a in 0..6 {
                    acc += df[n][a] * j[a][f.index()];
                }
                out[f.index()] = acc * inv_d;
            }
            out
        })
        .collect())
}

/// Max over nodes and the selected fields of `|{F, u_f(n)} − rhs_f(n)|`.
/// Nodes outside `nodes` (e.g. near open ends) are skipped.
pub fn hamilton_flow_residual<G: FieldGrid>(
    charge: &Functional<'_, G>,
    g: &G,
    rhs: &[Coords],
    fields: &[Field],
    nodes: std::ops::Range<usize>,
    t: &BracketTable,
    opts: GradientOptions,
) -> Result<f64> {
    let flow = hamilton_flow(charge, g, t, opts)?;
    let mut worst: f64 = 0.0;
    for n in nodes {
        for f in fields {
            worst = worst.max((flow[n][f.index()] - rhs[n][f.index()]).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rc(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    /// Random complex point with both Casimirs enforced.
    fn random_dual(rng: &mut ChaCha8Rng, cc: C64) -> DualPoint {
        let sp = rc(rng);
        let sz = rc(rng) * 0.5 + cc;
        let sm = (cc * cc - sz * sz) / sp;
        let gp = rc(rng);
        let gz = rc(rng);
        let gm = -(sz * gz * 2.0 + sm * gp) / sp;
        DualPoint::new(SpinPoint::new(sp, sm, sz), gp, gm, gz)
    }

    #[test]
    fn point_bracket_examples() {
        let et = BracketTable::equal_time();
        let p = SpinPoint::new(C64::new(2.0, 0.0), ZERO, C64::new(1.0, 0.0));
        assert_eq!(point_bracket(&et, Field::SPlus, Field::SZ, &p).unwrap(), C64::new(2.0, 0.0));
        assert_eq!(point_bracket(&et, Field::SZ, Field::SPlus, &p).unwrap(), C64::new(-2.0, 0.0));
        assert!(point_bracket(&et, Field::SPlus, Field::SigmaZ, &p).is_err());

        let es = BracketTable::equal_space();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_dual(&mut rng, C64::new(1.0, 0.0));
        for a in Field::SPIN {
            for b in Field::SPIN {
                assert_eq!(point_bracket(&es, a, b, &q).unwrap(), ZERO);
            }
        }
        let np = DualPoint::new(SpinPoint::north_pole(C64::new(1.0, 0.0)), ZERO, ZERO, ZERO);
        let v = cartesian_bracket(&es, CartesianField::Sx, CartesianField::SigX, &np);
        assert!((v + 1.0).norm() < 1e-15);
    }

    #[test]
    fn equal_space_matches_vector_form() {
        use CartesianField::*;
        let es = BracketTable::equal_space();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_dual(&mut rng, C64::new(1.3, 0.2));
        let s = p.spin.cartesian();
        let g = p.sigma().cartesian();
        let c2 = p.spin.casimir();
        let sc = [Sx, Sy, Sz];
        let gc = [SigX, SigY, SigZ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(cartesian_bracket(&es, sc[i], sc[j], &p).norm() < 1e-14);
                let want = s[i] * s[j] - if i == j { c2 } else { ZERO };
                assert!((cartesian_bracket(&es, sc[i], gc[j], &p) - want).norm() < 1e-13);
                let want = s[i] * g[j] - s[j] * g[i];
                assert!((cartesian_bracket(&es, gc[i], gc[j], &p) - want).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn jacobi_holds_for_both_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let et = BracketTable::equal_time();
        let es = BracketTable::equal_space();
        for _ in 0..100 {
            let p = random_dual(&mut rng, C64::new(1.0, 0.0));
            assert!(jacobi_residual(&et, &p) < 1e-12);
            assert!(jacobi_residual(&es, &p) < 1e-12, "{}", jacobi_residual(&es, &p));
        }
    }

    #[test]
    fn casimirs_are_central() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let et = BracketTable::equal_time();
        let es = BracketTable::equal_space();
        for _ in 0..20 {
            let p = random_dual(&mut rng, C64::new(0.9, 0.0));
            let u = p.as_array();
            let dc2 = [u[1], u[0], u[2] * 2.0, ZERO, ZERO, ZERO];
            let dct = [u[4], u[3], u[5] * 2.0, u[1], u[0], u[2] * 2.0];
            for f in Field::ALL {
                let mut e = [ZERO; 6];
                e[f.index()] = C64::new(1.0, 0.0);
                if f.index() < 3 {
                    assert!(gradient_bracket(&et, &dc2, &e, &p).norm() < 1e-14);
                }
                assert!(gradient_bracket(&es, &dc2, &e, &p).norm() < 1e-14);
                assert!(gradient_bracket(&es, &dct, &e, &p).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn canonical_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let es = BracketTable::equal_space();
        let cc = C64::new(1.0, 0.0);
        for _ in 0..100 {
            let p = random_dual(&mut rng, cc);
            let gr = canonical_gradients(&p, cc).unwrap();
            let b = |i: usize, j: usize| gradient_bracket(&es, &gr[i], &gr[j], &p);
            assert!(b(0, 1).norm() < 1e-10);
            assert!(b(2, 3).norm() < 1e-10);
            assert!((b(0, 2) - 1.0).norm() < 1e-10, "{}", b(0, 2));
            assert!((b(1, 3) - 1.0).norm() < 1e-10);
            assert!(b(0, 3).norm() < 1e-10 && b(1, 2).norm() < 1e-10);
        }
        let s = 1.0 / 3f64.sqrt();
        let sp = SpinPoint::from_cartesian([C64::new(s, 0.0); 3]);
        let zero_sigma = DualPoint::new(sp, ZERO, ZERO, ZERO);
        let cp = canonical_coords(&zero_sigma, cc).unwrap();
        assert_eq!((cp.phi1, cp.phi2), (ZERO, ZERO));
        assert!((cp.psi1 - 1.0 / 3.0).norm() < 1e-15);
        let np = DualPoint::new(SpinPoint::north_pole(cc), ZERO, ZERO, ZERO);
        assert!(matches!(canonical_coords(&np, cc), Err(Error::CoordinateSingularity(_))));
    }

    #[test]
    fn flipped_bracket_sign_keeps_jacobi() {
        // Any rescaling of {S₊, S₋} is still a Lie bracket; an unequal
        // rescaling of the two {S±, S_z} entries is not.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_dual(&mut rng, C64::new(1.0, 0.0));
        let mut flipped = BracketTable::equal_time();
        flipped.set(Field::SPlus, Field::SMinus, Poly::term(2.0, &[Field::SZ]));
        assert!(jacobi_residual(&flipped, &p) < 1e-12);
        let mut skew = BracketTable::equal_time();
        skew.set(Field::SPlus, Field::SZ, Poly::term(1.0 + 1e-3, &[Field::SPlus]));
        assert!(jacobi_residual(&skew, &p) >= 1e-4);
    }
}
