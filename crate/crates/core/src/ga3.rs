//! Geometric algebra of three-dimensional Euclidean space.
//!
//! Multivectors are stored over the canonical blade order
//! `{1, e1, e2, e3, e12, e13, e23, e123}` of a right-handed orthonormal frame.
//! Rotors act on vectors through the sandwich product `x -> R x ~R`, and a
//! rotation bivector `A = θ Â` generates the rotor `R = exp(-A/2)`. With this
//! convention `exp(-(π/2) e12 / 2)` carries `e1` onto `e2`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Index of each blade in [`Multivector::coeffs`].
pub mod blade {
    pub const SCALAR: usize = 0;
    pub const E1: usize = 1;
    pub const E2: usize = 2;
    pub const E3: usize = 3;
    pub const E12: usize = 4;
    pub const E13: usize = 5;
    pub const E23: usize = 6;
    pub const E123: usize = 7;
}

// Blade bitmaps (bit k set <=> e_{k+1} present), indexed by canonical position.
const BITMAP: [u8; 8] = [0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];
const GRADE: [usize; 8] = [0, 1, 1, 1, 2, 2, 2, 3];

const fn index_of(bitmap: u8) -> usize {
    match bitmap {
        0b000 => 0,
        0b001 => 1,
        0b010 => 2,
        0b100 => 3,
        0b011 => 4,
        0b101 => 5,
        0b110 => 6,
        _ => 7,
    }
}

// Sign picked up when reordering the concatenation of two ascending blades.
const fn reorder_sign(a: u8, b: u8) -> f64 {
    let mut a = a >> 1;
    let mut swaps = 0u32;
    while a != 0 {
        swaps += (a & b).count_ones();
        a >>= 1;
    }
    if swaps % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

const fn product_table() -> [[(f64, usize); 8]; 8] {
    let mut table = [[(0.0, 0usize); 8]; 8];
    let mut i = 0;
    while i < 8 {
        let mut j = 0;
        while j < 8 {
            let (a, b) = (BITMAP[i], BITMAP[j]);
            table[i][j] = (reorder_sign(a, b), index_of(a ^ b));
            j += 1;
        }
        i += 1;
    }
    table
}

const PRODUCT: [[(f64, usize); 8]; 8] = product_table();

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaError {
    #[error("expected a pure vector, found non-vector grade content of magnitude {0:e}")]
    NotAVector(f64),
}

/// General element of the 8-dimensional algebra.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Multivector {
    pub coeffs: [f64; 8],
}

impl fmt::Debug for Multivector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [&str; 8] = ["", "e1", "e2", "e3", "e12", "e13", "e23", "e123"];
        let mut first = true;
        for (c, name) in self.coeffs.iter().zip(NAMES) {
            if *c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            write!(f, "{c}{name}")?;
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl Multivector {
    pub const ZERO: Self = Self { coeffs: [0.0; 8] };

    pub const fn new(coeffs: [f64; 8]) -> Self {
        Self { coeffs }
    }

    pub const fn scalar(s: f64) -> Self {
        Self::basis(blade::SCALAR, s)
    }

    pub const fn basis(index: usize, value: f64) -> Self {
        let mut coeffs = [0.0; 8];
        coeffs[index] = value;
        Self { coeffs }
    }

    pub fn vector(v: &Vec3) -> Self {
        Self::new([0.0, v.x, v.y, v.z, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn e1() -> Self {
        Self::basis(blade::E1, 1.0)
    }

    pub fn e2() -> Self {
        Self::basis(blade::E2, 1.0)
    }

    pub fn e3() -> Self {
        Self::basis(blade::E3, 1.0)
    }

    /// Unit pseudoscalar `I3 = e1 e2 e3`.
    pub fn pseudoscalar() -> Self {
        Self::basis(blade::E123, 1.0)
    }

    pub fn grade(&self, k: usize) -> Self {
        let mut out = Self::ZERO;
        for (i, g) in GRADE.iter().enumerate() {
            if *g == k {
                out.coeffs[i] = self.coeffs[i];
            }
        }
        out
    }

    pub fn scalar_part(&self) -> f64 {
        self.coeffs[blade::SCALAR]
    }

    pub fn vector_part(&self) -> Vec3 {
        Vec3::new(self.coeffs[1], self.coeffs[2], self.coeffs[3])
    }

    pub fn bivector_part(&self) -> Bivector {
        Bivector::new(self.coeffs[4], self.coeffs[5], self.coeffs[6])
    }

    /// Reverse: flips the sign of grades 2 and 3.
    pub fn reverse(&self) -> Self {
        let mut out = *self;
        for (i, g) in GRADE.iter().enumerate() {
            if *g >= 2 {
                out.coeffs[i] = -out.coeffs[i];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn norm_squared(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Full geometric product.
    pub fn geometric(&self, other: &Self) -> Self {
        self.graded(other, |_, _, _| true)
    }

    /// Grade-lowering inner product: `<A_r B_s>_{|r-s|}` for non-scalar
    /// operands, zero whenever either operand is a scalar.
    pub fn inner(&self, other: &Self) -> Self {
        self.graded(other, |r, s, g| r > 0 && s > 0 && g == r.abs_diff(s))
    }

    /// Outer (wedge) product: `<A_r B_s>_{r+s}`.
    pub fn outer(&self, other: &Self) -> Self {
        self.graded(other, |r, s, g| g == r + s)
    }

    /// Commutator product `(ab - ba) / 2`.
    pub fn commutator(&self, other: &Self) -> Self {
        (self.geometric(other) - other.geometric(self)).scale(0.5)
    }

    // Blade-by-blade product keeping the terms selected by
    // `keep(grade_a, grade_b, grade_of_result)`.
    fn graded(&self, other: &Self, keep: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut out = Self::ZERO;
        for i in 0..8 {
            let a = self.coeffs[i];
            if a == 0.0 {
                continue;
            }
            for j in 0..8 {
                let b = other.coeffs[j];
                let (sign, k) = PRODUCT[i][j];
                if b != 0.0 && keep(GRADE[i], GRADE[j], GRADE[k]) {
                    out.coeffs[k] += sign * a * b;
                }
            }
        }
        out
    }
}

impl Add for Multivector {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.coeffs.iter_mut().zip(rhs.coeffs) {
            *a += b;
        }
        self
    }
}

impl Sub for Multivector {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.coeffs.iter_mut().zip(rhs.coeffs) {
            *a -= b;
        }
        self
    }
}

impl Neg for Multivector {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for Multivector {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.geometric(&rhs)
    }
}

/// Classical cross product realised as `-I3 (a ∧ b)`.
pub fn cross_product(a: &Multivector, b: &Multivector) -> Result<Vec3, GaError> {
    for m in [a, b] {
        let off = (*m - m.grade(1)).max_abs();
        if off > 0.0 {
            return Err(GaError::NotAVector(off));
        }
    }
    let w = a.outer(b);
    Ok((-(Multivector::pseudoscalar() * w)).vector_part())
}

/// Pure grade-2 element on `{e12, e13, e23}`.
#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Bivector {
    pub e12: f64,
    pub e13: f64,
    pub e23: f64,
}

impl Bivector {
    pub const ZERO: Self = Self { e12: 0.0, e13: 0.0, e23: 0.0 };

    pub const fn new(e12: f64, e13: f64, e23: f64) -> Self {
        Self { e12, e13, e23 }
    }

    /// Bivector dual to a rotation vector: `I3 a`. A rotation bivector built
    /// this way rotates right-handedly about `a` by `|a|`.
    pub fn from_axis(a: &Vec3) -> Self {
        Self::new(a.z, -a.y, a.x)
    }

    /// Inverse of [`Bivector::from_axis`].
    pub fn axis(&self) -> Vec3 {
        Vec3::new(self.e23, -self.e13, self.e12)
    }

    /// `a ∧ b` for two vectors.
    pub fn wedge(a: &Vec3, b: &Vec3) -> Self {
        Self::new(
            a.x * b.y - a.y * b.x,
            a.x * b.z - a.z * b.x,
            a.y * b.z - a.z * b.y,
        )
    }

    pub fn magnitude(&self) -> f64 {
        (self.e12 * self.e12 + self.e13 * self.e13 + self.e23 * self.e23).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.e12 * s, self.e13 * s, self.e23 * s)
    }

    pub fn to_multivector(&self) -> Multivector {
        Multivector::new([0.0, 0.0, 0.0, 0.0, self.e12, self.e13, self.e23, 0.0])
    }

    /// Left inner product of a vector with this bivector, `v · B`.
    pub fn left_dot(&self, v: &Vec3) -> Vec3 {
        // v·(I w) = w × v for B = I w.
        self.axis().cross(v)
    }
}

impl Add for Bivector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.e12 + o.e12, self.e13 + o.e13, self.e23 + o.e23)
    }
}

impl Sub for Bivector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.e12 - o.e12, self.e13 - o.e13, self.e23 - o.e23)
    }
}

/// Even, normalised multivector encoding a rotation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rotor {
    pub scalar: f64,
    pub bivector: Bivector,
}

impl Default for Rotor {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Result of taking a rotor logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotorLog {
    /// Rotation bivector `A = θ Â`.
    pub bivector: Bivector,
    /// Set when the rotation angle is π and `Â` is not unique.
    pub degenerate: bool,
}

impl Rotor {
    pub const IDENTITY: Self = Self { scalar: 1.0, bivector: Bivector::ZERO };

    /// Tolerance on `|cos(θ/2)|` below which the angle is treated as π.
    pub const HALF_TURN_TOL: f64 = 1e-12;

    pub fn from_multivector(m: &Multivector) -> Self {
        Self { scalar: m.scalar_part(), bivector: m.bivector_part() }
    }

    pub fn to_multivector(&self) -> Multivector {
        let mut m = self.bivector.to_multivector();
        m.coeffs[blade::SCALAR] = self.scalar;
        m
    }

    pub fn reverse(&self) -> Self {
        Self { scalar: self.scalar, bivector: self.bivector.scale(-1.0) }
    }

    pub fn negate(&self) -> Self {
        Self { scalar: -self.scalar, bivector: self.bivector.scale(-1.0) }
    }

    /// Component-wise dot product of two rotors viewed as 4-vectors.
    pub fn correlation(&self, other: &Self) -> f64 {
        self.scalar * other.scalar
            + self.bivector.e12 * other.bivector.e12
            + self.bivector.e13 * other.bivector.e13
            + self.bivector.e23 * other.bivector.e23
    }

    pub fn norm(&self) -> f64 {
        self.correlation(self).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self { scalar: self.scalar / n, bivector: self.bivector.scale(1.0 / n) }
    }

    /// `R = exp(-A/2) = cos(θ/2) - Â sin(θ/2)`.
    pub fn exp(a: &Bivector) -> Self {
        let theta = a.magnitude();
        if theta == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (theta / 2.0).sin_cos();
        Self { scalar: c, bivector: a.scale(-s / theta) }
    }

    /// Principal logarithm: `θ ∈ [0, π]`, `rotor_exp(log(R)) = ±R`.
    pub fn log(&self) -> RotorLog {
        let r = if self.scalar < 0.0 { self.negate() } else { *self };
        let degenerate = r.scalar.abs() <= Self::HALF_TURN_TOL;
        let mut log = r.log_unwrapped();
        if degenerate && log.bivector.magnitude() == 0.0 {
            log.bivector = Bivector::new(std::f64::consts::PI, 0.0, 0.0);
        }
        log.degenerate = degenerate;
        log
    }

    /// Logarithm without sign folding: the angle lies in `[0, 2π)` and varies
    /// smoothly with the rotor, which is what a sign-continuous rotor field
    /// needs. Flags the half-turn where the principal branch would flip.
    pub fn log_unwrapped(&self) -> RotorLog {
        let b = self.bivector.magnitude();
        let half = b.atan2(self.scalar);
        let bivector = if b == 0.0 {
            Bivector::ZERO
        } else {
            // sin(θ/2)/θ form, smooth through b -> 0.
            self.bivector.scale(-2.0 * half / b)
        };
        RotorLog { bivector, degenerate: self.scalar.abs() <= Self::HALF_TURN_TOL && b > 0.0 }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.bivector.magnitude().atan2(self.scalar.abs())
    }

    /// Sandwich product `R x ~R`.
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        // Equivalent quaternion rotation, q = (s, -b23, b13, -b12).
        let w = self.scalar;
        let u = Vec3::new(-self.bivector.e23, self.bivector.e13, -self.bivector.e12);
        let t = 2.0 * u.cross(x);
        x + w * t + u.cross(&t)
    }

    /// Sandwich product evaluated with the full geometric product.
    pub fn apply_multivector(&self, x: &Multivector) -> Multivector {
        let r = self.to_multivector();
        r * *x * r.reverse()
    }

    /// Composition: `a.then(b)` applies `a` first, i.e. the rotor `b a`.
    pub fn then(&self, b: &Rotor) -> Rotor {
        *b * *self
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[
            self.apply(&Vec3::x()),
            self.apply(&Vec3::y()),
            self.apply(&Vec3::z()),
        ])
    }

    /// Rotor of a proper rotation matrix, using the largest-diagonal branch
    /// so that no branch divides by a small quantity.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m.trace();
        let (w, x, y, z);
        let d = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        if trace >= d[0] && trace >= d[1] && trace >= d[2] {
            let s = 2.0 * (1.0 + trace).sqrt();
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if d[0] >= d[1] && d[0] >= d[2] {
            let s = 2.0 * (1.0 + d[0] - d[1] - d[2]).sqrt();
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if d[1] >= d[2] {
            let s = 2.0 * (1.0 + d[1] - d[0] - d[2]).sqrt();
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 + d[2] - d[0] - d[1]).sqrt();
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        let r = Self { scalar: w, bivector: Bivector::new(-z, y, -x) }.normalized();
        if r.scalar < 0.0 {
            r.negate()
        } else {
            r
        }
    }
}

impl Mul for Rotor {
    type Output = Rotor;
    fn mul(self, rhs: Rotor) -> Rotor {
        Rotor::from_multivector(&(self.to_multivector() * rhs.to_multivector()))
    }
}

/// Left Jacobian of the rotation exponential: maps the derivative of a
/// rotation vector `a` to the spatial angular rate `ω` with
/// `dRot Rotᵀ = [ω]×`.
pub fn exp_left_jacobian(a: &Vec3) -> Matrix3<f64> {
    let theta = a.norm();
    let k = a.cross_matrix();
    let (c1, c2) = if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * c1 + k * k * c2
}
