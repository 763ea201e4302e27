//! Complex 2×2 / 4×4 matrix arithmetic, the rational r-matrix, the boundary
//! K-matrices, and residuals for the identities they satisfy.
//!
//! Tensor products follow a fixed leg convention: in `A ⊗ B` leg `a` (the
//! factor `A`) is the slow, row-block index, so entry `(2i + k, 2j + l)` of
//! `A ⊗ B` is `A[i][j] * B[k][l]`.
//!
//! The K-matrix uses the same printed form `α I + λ [[δ, β], [γ, −δ]]` for
//! both boundaries. The reflection equations for the two ends differ by the
//! sign of the spectral parameter; that sign is absorbed into `β₊, γ₊, δ₊`.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Minimum modulus accepted for any spectral-parameter denominator.
pub const POLE_EPS: f64 = 1e-9;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Rejects spectral-parameter values sitting on a pole.
pub fn check_pole(what: &'static str, z: C64) -> Result<()> {
    if z.norm() < POLE_EPS || !z.is_finite() {
        return Err(Error::Pole { what, value: z });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub const fn zero() -> Self {
        Mat2([[ZERO; 2]; 2])
    }

    pub const fn identity() -> Self {
        Mat2([[ONE, ZERO], [ZERO, ONE]])
    }

    /// The matrix unit `e_ij` (zero-based indices).
    pub fn unit(i: usize, j: usize) -> Self {
        let mut m = Self::zero();
        m.0[i][j] = ONE;
        m
    }

    pub fn diag(a: C64, b: C64) -> Self {
        Mat2::new(a, ZERO, ZERO, b)
    }

    pub fn anti_diag(upper: C64, lower: C64) -> Self {
        Mat2::new(ZERO, upper, lower, ZERO)
    }

    /// `[[z, m], [p, −z]]`, the layout used for every sl(2) field matrix.
    pub fn sl2(plus: C64, minus: C64, z: C64) -> Self {
        Mat2::new(z, minus, plus, -z)
    }

    pub fn scale(self, s: C64) -> Self {
        let m = self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn scale_re(self, s: f64) -> Self {
        self.scale(c(s))
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> C64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn transpose(&self) -> Self {
        let m = self.0;
        Mat2::new(m[0][0], m[1][0], m[0][1], m[1][1])
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.norm() < 1e-300 || !d.is_finite() {
            return Err(Error::Singular("2x2 matrix"));
        }
        let m = self.0;
        Ok(Mat2::new(m[1][1], -m[0][1], -m[1][0], m[0][0]).scale(d.inv()))
    }

    pub fn commutator(&self, other: &Mat2) -> Mat2 {
        *self * *other - *other * *self
    }

    pub fn diagonal_part(&self) -> Mat2 {
        Mat2::diag(self.0[0][0], self.0[1][1])
    }

    pub fn off_diagonal_part(&self) -> Mat2 {
        Mat2::anti_diag(self.0[0][1], self.0[1][0])
    }

    /// Max of entrywise moduli.
    pub fn max_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, z| acc.max(z.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|z| z.is_finite())
    }

    /// Matrix exponential via the closed form for 2×2 matrices:
    /// `exp(M) = e^{tr/2} (cosh κ I + sinh κ / κ (M − tr/2 I))`, `κ² = −det(M − tr/2 I)`.
    pub fn exp(&self) -> Mat2 {
        let half_tr = self.trace() * 0.5;
        let traceless = *self - Mat2::identity().scale(half_tr);
        let kappa = (-traceless.det()).sqrt();
        let (ch, sh_over) = if kappa.norm() < 1e-8 {
            let k2 = kappa * kappa;
            (
                ONE + k2 * 0.5 + k2 * k2 / 24.0,
                ONE + k2 / 6.0 + k2 * k2 / 120.0,
            )
        } else {
            (kappa.cosh(), kappa.sinh() / kappa)
        };
        (Mat2::identity().scale(ch) + traceless.scale(sh_over)).scale(half_tr.exp())
    }

    pub fn kron(&self, other: &Mat2) -> Mat4 {
        let mut out = Mat4::zero();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        out.0[2 * i + k][2 * j + l] = self.0[i][j] * other.0[k][l];
                    }
                }
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Mat2 {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat2 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + (-o)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(c(-1.0))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

impl Mul<C64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: C64) -> Mat2 {
        self.scale(s)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        self.scale_re(s)
    }
}

/// Operator on `V_a ⊗ V_b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4(pub [[C64; 4]; 4]);

impl Mat4 {
    pub const fn zero() -> Self {
        Mat4([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            m.0[i][i] = ONE;
        }
        m
    }

    /// The swap `P (u ⊗ v) = v ⊗ u`.
    pub fn permutation() -> Self {
        let mut m = Self::zero();
        for i in 0..2 {
            for k in 0..2 {
                m.0[2 * k + i][2 * i + k] = ONE;
            }
        }
        m
    }

    pub fn unit(i: usize, j: usize) -> Self {
        let mut m = Self::zero();
        m.0[i][j] = ONE;
        m
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|z| *z *= s);
        m
    }

    pub fn commutator(&self, other: &Mat4) -> Mat4 {
        *self * *other - *other * *self
    }

    pub fn max_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, z| acc.max(z.norm()))
    }
}

impl Add for Mat4 {
    type Output = Mat4;
    fn add(self, o: Mat4) -> Mat4 {
        let mut m = self;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }
}

impl Sub for Mat4 {
    type Output = Mat4;
    fn sub(self, o: Mat4) -> Mat4 {
        self + o.scale(c(-1.0))
    }
}

impl Mul for Mat4 {
    type Output = Mat4;
    fn mul(self, o: Mat4) -> Mat4 {
        let mut m = Mat4::zero();
        for i in 0..4 {
            for k in 0..4 {
                let a = self.0[i][k];
                if a == ZERO {
                    continue;
                }
                for j in 0..4 {
                    m.0[i][j] += a * o.0[k][j];
                }
            }
        }
        m
    }
}

/// Dense square complex matrix, used for the three-leg (8×8) identities.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DMat {
    n: usize,
    data: Vec<C64>,
}

impl DMat {
    fn zero(n: usize) -> Self {
        DMat {
            n,
            data: vec![ZERO; n * n],
        }
    }

    fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    fn mul(&self, o: &DMat) -> DMat {
        let n = self.n;
        let mut out = DMat::zero(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * o.at(k, j);
                }
            }
        }
        out
    }

    fn add(&self, o: &DMat) -> DMat {
        DMat {
            n: self.n,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        }
    }

    fn sub(&self, o: &DMat) -> DMat {
        DMat {
            n: self.n,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect(),
        }
    }

    fn commutator(&self, o: &DMat) -> DMat {
        self.mul(o).sub(&o.mul(self))
    }

    fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
    }
}

/// Embeds a two-leg operator into legs `(first, second)` of `V ⊗ V ⊗ V`,
/// acting as the identity on the remaining leg. Leg 0 is the slowest index.
fn embed_three(m: &Mat4, first: usize, second: usize) -> DMat {
    let bits = |idx: usize| [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
    let other = 3 - first - second;
    let mut out = DMat::zero(8);
    for row in 0..8 {
        let r = bits(row);
        for col in 0..8 {
            let cl = bits(col);
            if r[other] != cl[other] {
                continue;
            }
            out.data[row * 8 + col] = m.0[2 * r[first] + r[second]][2 * cl[first] + cl[second]];
        }
    }
    out
}

/// `r(λ) = P / (2λ)`.
pub fn r_matrix(lambda: C64) -> Result<Mat4> {
    check_pole("r-matrix spectral parameter", lambda)?;
    Ok(Mat4::permutation().scale((lambda * 2.0).inv()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Constants of a non-dynamical boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub alpha: C64,
    pub beta: C64,
    pub gamma: C64,
    pub delta: C64,
    pub side: Side,
}

impl BoundaryParams {
    pub fn new(side: Side, alpha: C64, beta: C64, gamma: C64, delta: C64) -> Self {
        BoundaryParams {
            alpha,
            beta,
            gamma,
            delta,
            side,
        }
    }

    /// `K ∝ I`.
    pub fn free(side: Side) -> Self {
        Self::new(side, ONE, ZERO, ZERO, ZERO)
    }

    /// The traceless part `[[δ, β], [γ, −δ]]`.
    pub fn linear_part(&self) -> Mat2 {
        Mat2::new(self.delta, self.beta, self.gamma, -self.delta)
    }
}

/// `K(λ) = α I + λ [[δ, β], [γ, −δ]]`.
pub fn k_matrix(p: &BoundaryParams, lambda: C64) -> Mat2 {
    Mat2::identity().scale(p.alpha) + p.linear_part().scale(lambda)
}

/// Max-norm of the classical Yang-Baxter combination
/// `[r₁₂(λ−μ), r₁₃(λ)] + [r₁₂(λ−μ), r₂₃(μ)] + [r₁₃(λ), r₂₃(μ)]`
/// for an arbitrary r-matrix family.
pub fn cybe_residual_with<F>(r: F, lambda: C64, mu: C64) -> Result<f64>
where
    F: Fn(C64) -> Result<Mat4>,
{
    let r_lm = r(lambda - mu)?;
    let r_l = r(lambda)?;
    let r_m = r(mu)?;
    let r_ab = embed_three(&r_lm, 0, 1);
    let r_ac = embed_three(&r_l, 0, 2);
    let r_bc = embed_three(&r_m, 1, 2);
    let total = r_ab
        .commutator(&r_ac)
        .add(&r_ab.commutator(&r_bc))
        .add(&r_ac.commutator(&r_bc));
    Ok(total.max_norm())
}

pub fn cybe_residual(lambda: C64, mu: C64) -> Result<f64> {
    cybe_residual_with(r_matrix, lambda, mu)
}

/// Max-norm of the classical reflection equation
/// `[r(λ−μ), K_a(λ)K_b(μ)] + K_a(λ) r(λ+μ) K_b(μ) − K_b(μ) r(λ+μ) K_a(λ)`
/// for an arbitrary K-matrix family.
pub fn reflection_residual_with<F>(k: F, lambda: C64, mu: C64) -> Result<f64>
where
    F: Fn(C64) -> Mat2,
{
    let r_minus = r_matrix(lambda - mu)?;
    let r_plus = r_matrix(lambda + mu)?;
    let id = Mat2::identity();
    let k_a = k(lambda).kron(&id);
    let k_b = id.kron(&k(mu));
    let total = r_minus.commutator(&(k_a * k_b)) + k_a * r_plus * k_b - k_b * r_plus * k_a;
    Ok(total.max_norm())
}

pub fn reflection_residual(p: &BoundaryParams, lambda: C64, mu: C64) -> Result<f64> {
    reflection_residual_with(|z| k_matrix(p, z), lambda, mu)
}

/// Max-norm of `r(λ) (M ⊗ I) − (I ⊗ M) r(λ)` for an arbitrary r-matrix.
pub fn push_through_residual_with(r: &Mat4, m: &Mat2) -> f64 {
    let id = Mat2::identity();
    (*r * m.kron(&id) - id.kron(m) * *r).max_norm()
}

pub fn push_through_residual(m: &Mat2, lambda: C64) -> Result<f64> {
    Ok(push_through_residual_with(&r_matrix(lambda)?, m))
}

/// Traces out leg `a` of an operator on `V_a ⊗ V_b`.
pub fn partial_trace_first(m: &Mat4) -> Mat2 {
    let mut out = Mat2::zero();
    for k in 0..2 {
        for l in 0..2 {
            out.0[k][l] = m.0[k][l] + m.0[2 + k][2 + l];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn rand_mat2(rng: &mut ChaCha8Rng) -> Mat2 {
        Mat2::new(rand_c(rng), rand_c(rng), rand_c(rng), rand_c(rng))
    }

    /// Plain index-sum matrix product, independent of `Mul for Mat4`.
    fn naive_mul4(a: &Mat4, b: &Mat4) -> Mat4 {
        let mut out = Mat4::zero();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = (0..4).map(|k| a.0[i][k] * b.0[k][j]).sum();
            }
        }
        out
    }

    #[test]
    fn r_matrix_at_half_is_the_permutation() {
        let r = r_matrix(c(0.5)).unwrap();
        let expected = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.0[i][j], c(expected[i][j]));
            }
        }
        assert_eq!(r_matrix(c(1.0)).unwrap(), Mat4::permutation().scale(c(0.5)));
    }

    #[test]
    fn r_matrix_at_i_squares_to_scaled_identity() {
        let i = C64::new(0.0, 1.0);
        let r = r_matrix(i).unwrap();
        for z in r.0.iter().flatten() {
            assert!(*z == ZERO || (*z - C64::new(0.0, -0.5)).norm() < 1e-15);
        }
        // P² = I, so r(λ) r(−λ) = −I / (4λ²) = I/4 at λ = i.
        let prod = naive_mul4(&r, &r_matrix(-i).unwrap());
        let expected = Mat4::identity().scale(c(0.25));
        assert!((prod - expected).max_norm() < 1e-15);
    }

    #[test]
    fn r_matrix_rejects_pole() {
        assert!(matches!(r_matrix(c(1e-12)), Err(Error::Pole { .. })));
        assert!(cybe_residual(c(1.0), c(1.0)).is_err());
    }

    #[test]
    fn k_matrix_examples() {
        let id = BoundaryParams::free(Side::Plus);
        assert_eq!(k_matrix(&id, C64::new(3.0, -2.0)), Mat2::identity());
        let p = BoundaryParams::new(Side::Minus, ZERO, ZERO, ZERO, ONE);
        assert_eq!(k_matrix(&p, c(2.0)), Mat2::diag(c(2.0), c(-2.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = BoundaryParams::new(
            Side::Plus,
            rand_c(&mut rng),
            rand_c(&mut rng),
            rand_c(&mut rng),
            rand_c(&mut rng),
        );
        assert_eq!(k_matrix(&q, ZERO), Mat2::identity().scale(q.alpha));
    }

    #[test]
    fn cybe_examples() {
        assert!(cybe_residual(c(1.0), c(1.0 / 3.0)).unwrap() < 1e-12);
        assert!(cybe_residual(C64::new(0.0, 2.0), c(-1.0)).unwrap() < 1e-12);
    }

    #[test]
    fn cybe_detects_perturbation() {
        // Only r₁₂ is perturbed, mirroring the injected-fault check.
        let eps = 1e-3;
        let (l, m) = (c(1.0), c(1.0 / 3.0));
        let r_ab = embed_three(
            &(r_matrix(l - m).unwrap() + Mat4::unit(0, 0).scale(c(eps))),
            0,
            1,
        );
        let r_ac = embed_three(&r_matrix(l).unwrap(), 0, 2);
        let r_bc = embed_three(&r_matrix(m).unwrap(), 1, 2);
        let res = r_ab
            .commutator(&r_ac)
            .add(&r_ab.commutator(&r_bc))
            .add(&r_ac.commutator(&r_bc))
            .max_norm();
        assert!(res >= eps / 2.0, "residual {res}");
    }

    #[test]
    fn reflection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = BoundaryParams::new(
            Side::Plus,
            rand_c(&mut rng),
            rand_c(&mut rng),
            rand_c(&mut rng),
            rand_c(&mut rng),
        );
        assert!(reflection_residual(&p, c(1.0), c(0.5)).unwrap() < 1e-12);
        let id = BoundaryParams::free(Side::Minus);
        for (l, m) in [(0.3, 1.7), (-2.0, 0.4), (5.0, 1.1)] {
            assert!(reflection_residual(&id, c(l), c(m)).unwrap() < 1e-15);
        }
        // Quadratic-in-λ ansatz is not a solution.
        let bad = |z: C64| Mat2::identity() + Mat2::diag(z * z, -z * z);
        assert!(reflection_residual_with(bad, c(0.7), c(0.2)).unwrap() > 1e-3);
    }

    #[test]
    fn push_through_examples() {
        assert!(push_through_residual(&Mat2::identity(), c(0.7)).unwrap() == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = rand_mat2(&mut rng);
        assert!(push_through_residual(&m, c(0.7)).unwrap() < 1e-13);
        let mut bad = Mat4::identity();
        bad.0[3][3] = c(2.0);
        let bad = bad.scale(c(1.0 / 1.4));
        assert!(push_through_residual_with(&bad, &m) > 1e-3);
    }

    #[test]
    fn partial_trace_examples() {
        assert_eq!(partial_trace_first(&Mat4::identity()), Mat2::identity().scale(c(2.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_mat2(&mut rng);
        let b = rand_mat2(&mut rng);
        let pt = partial_trace_first(&a.kron(&b));
        assert!((pt - b.scale(a.trace())).max_norm() < 1e-15);

        let mut m = Mat4::zero();
        for z in m.0.iter_mut().flatten() {
            *z = rand_c(&mut rng);
        }
        let pt = partial_trace_first(&m);
        for k in 0..2 {
            for l in 0..2 {
                let oracle: C64 = (0..2).map(|i| m.0[2 * i + k][2 * i + l]).sum();
                assert_eq!(pt.0[k][l], oracle);
            }
        }
    }

    #[test]
    fn exp_of_traceless_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut m = rand_mat2(&mut rng);
            let t = m.trace() * 0.5;
            m = m - Mat2::identity().scale(t);
            assert!((m.exp().det() - ONE).norm() < 1e-13);
            // exp(M) exp(−M) = I
            let prod = m.exp() * (-m).exp();
            assert!((prod - Mat2::identity()).max_norm() < 1e-13);
        }
        let d = Mat2::diag(c(0.3), c(-1.2)).exp();
        assert!((d.0[0][0] - c(0.3f64.exp())).norm() < 1e-15);
        assert!((d.0[1][1] - c((-1.2f64).exp())).norm() < 1e-15);
    }
}
