//! Deformation of a reference chart onto a spatial chart sharing convected
//! coordinates: deformation gradient, polar decomposition, strain, and the
//! change-of-curvature tensor computed two ways.
//!
//! The classical route evaluates `H = F̄ b F - B` directly. The rotor route
//! splits it as
//!
//! ```text
//! H(Y) = (U - G) B(Y) - F̄( e3 · D(Y) ),   D(Y) = -2 (Y·∂R) ~R
//! ```
//!
//! where `R = exp(-A/2)`. `D(Y)` is obtained from central differences of the
//! rotation bivector field `A` pushed through the left Jacobian of the
//! exponential map, so it reduces to `Y·∂A` whenever `A` and its derivative
//! commute and stays exact when the plane of rotation varies.
//!
//! All tangent tensors are components in the orthonormal frame `{t1, t2}` of
//! the reference surface (see [`crate::surface`]).

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector3};
use thiserror::Error;

use crate::ga3::{exp_left_jacobian, Bivector, Rotor, Vec3};
use crate::par::{self, Execution};
use crate::surface::{
    default_fd_step, local_geometry, principal_decomposition, Chart, Coords, Domain, Grid,
    LocalGeometry, SurfaceError, Tensor2,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("deformation gradient is singular (det F̄F = {0:e})")]
    SingularStretch(f64),
    #[error("deformation gradient reverses orientation")]
    OrientationReversed,
    #[error("rotation bivector branch is discontinuous near ({0}, {1})")]
    BranchDiscontinuity(f64, f64),
    #[error("rotation about the normal is {ratio:.3} of |A|, above the small-angle limit {limit}")]
    SmallAngleViolated { ratio: f64, limit: f64 },
}

/// Reference chart, spatial chart and the finite-difference step used for
/// derivatives of the rotation field. Both charts are evaluated at the same
/// coordinates.
#[derive(Clone)]
pub struct Deformation {
    pub reference: Arc<dyn Chart>,
    pub spatial: Arc<dyn Chart>,
    pub fd_step: [f64; 2],
}

impl Deformation {
    pub fn new(reference: impl Chart + 'static, spatial: impl Chart + 'static) -> Self {
        Self::from_arcs(Arc::new(reference), Arc::new(spatial))
    }

    pub fn from_arcs(reference: Arc<dyn Chart>, spatial: Arc<dyn Chart>) -> Self {
        let fd_step = default_fd_step(&reference.domain());
        Self { reference, spatial, fd_step }
    }

    /// The same chart as reference and spatial configuration.
    pub fn identity(chart: impl Chart + 'static) -> Self {
        let c: Arc<dyn Chart> = Arc::new(chart);
        Self::from_arcs(c.clone(), c)
    }

    pub fn with_fd_step(mut self, step: [f64; 2]) -> Self {
        self.fd_step = step;
        self
    }

    pub fn domain(&self) -> Domain {
        self.reference.domain()
    }

    pub fn geometry(&self, c: Coords) -> Result<(LocalGeometry, LocalGeometry), KinematicsError> {
        Ok((local_geometry(&*self.reference, c)?, local_geometry(&*self.spatial, c)?))
    }
}

/// Tangent map `F` stored as its action on the reference orthonormal frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentMap {
    /// `{t1, t2, E3}` of the reference surface.
    pub reference: [Vec3; 3],
    /// `F(t1), F(t2)` in world coordinates.
    pub columns: [Vec3; 2],
    /// Unit normal of the target surface, `e3`.
    pub target_normal: Vec3,
}

impl TangentMap {
    /// `F(Y)` for a reference tangent vector `Y`.
    pub fn apply(&self, y: &Vec3) -> Vec3 {
        self.columns[0] * y.dot(&self.reference[0]) + self.columns[1] * y.dot(&self.reference[1])
    }

    /// Adjoint `F̄(y)`, defined by `F(Y)·y = Y·F̄(y)`.
    pub fn adjoint(&self, y: &Vec3) -> Vec3 {
        self.reference[0] * self.columns[0].dot(y) + self.reference[1] * self.columns[1].dot(y)
    }

    /// `F̄F` in orthonormal components.
    pub fn right_cauchy_green(&self) -> Tensor2 {
        let [a, b] = self.columns;
        Matrix2::new(a.dot(&a), a.dot(&b), b.dot(&a), b.dot(&b))
    }

    /// Components `s_a·F(t_b)` against an orthonormal target frame.
    pub fn components_in(&self, target: &[Vec3; 2]) -> Matrix2<f64> {
        Matrix2::from_fn(|a, b| target[a].dot(&self.columns[b]))
    }
}

pub fn deformation_gradient(def: &Deformation, c: Coords) -> Result<TangentMap, KinematicsError> {
    let (r, s) = def.geometry(c)?;
    Ok(tangent_map(&r, &s))
}

fn tangent_map(r: &LocalGeometry, s: &LocalGeometry) -> TangentMap {
    // F(Eᵢ) = eᵢ, so F(t_a) = (t_a·Eⁱ) eᵢ.
    let q = r.frame.reciprocal_projection();
    let e = s.frame.tangents;
    let columns = [0, 1].map(|a| e[0] * q[(a, 0)] + e[1] * q[(a, 1)]);
    TangentMap {
        reference: [r.frame.orthonormal[0], r.frame.orthonormal[1], r.frame.normal],
        columns,
        target_normal: s.frame.normal,
    }
}

/// `F = R∘U`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarDecomposition {
    pub rotor: Rotor,
    /// Rotation matrix induced on ℝ³; carries `t_a` to `F U⁻¹ t_a` and `E3` to `e3`.
    pub rotation: Matrix3<f64>,
    /// Symmetric positive-definite stretch `U`.
    pub stretch: Tensor2,
}

impl PolarDecomposition {
    /// `max_a |F(t_a) - R(U t_a)|`.
    pub fn reconstruction_error(&self, f: &TangentMap) -> f64 {
        (0..2)
            .map(|a| {
                let u_ta = f.reference[0] * self.stretch[(0, a)] + f.reference[1] * self.stretch[(1, a)];
                (self.rotation * u_ta - f.columns[a]).norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn polar_decompose(f: &TangentMap) -> Result<PolarDecomposition, KinematicsError> {
    let c = f.right_cauchy_green();
    let det = c.determinant();
    if !(det > 0.0) {
        return Err(KinematicsError::SingularStretch(det));
    }
    if f.columns[0].cross(&f.columns[1]).dot(&f.target_normal) <= 0.0 {
        return Err(KinematicsError::OrientationReversed);
    }
    let p = principal_decomposition(&c);
    if p.values[1] <= 0.0 {
        return Err(KinematicsError::SingularStretch(det));
    }
    let mut stretch = Tensor2::zeros();
    let mut inv = Tensor2::zeros();
    for k in 0..2 {
        let v = p.vectors[k];
        let outer = v * v.transpose();
        stretch += outer * p.values[k].sqrt();
        inv += outer / p.values[k].sqrt();
    }
    // r_a = F U⁻¹ t_a
    let r = [0, 1].map(|a| f.columns[0] * inv[(0, a)] + f.columns[1] * inv[(1, a)]);
    let n = r[0].cross(&r[1]);
    let target = Matrix3::from_columns(&[r[0], r[1], n]);
    let source = Matrix3::from_columns(&f.reference);
    let rotation = target * source.transpose();
    Ok(PolarDecomposition { rotor: Rotor::from_matrix(&rotation), rotation, stretch })
}

/// Green–Lagrange strain `½(F̄F - G)`.
pub fn strain(f: &TangentMap) -> Tensor2 {
    (f.right_cauchy_green() - Tensor2::identity()) * 0.5
}

fn classical_h(r: &LocalGeometry, s: &LocalGeometry, f: &TangentMap) -> Tensor2 {
    let m = f.components_in(&s.frame.orthonormal);
    let b_spatial = s.curvature();
    let h = m.transpose() * b_spatial * m - r.curvature();
    h
}

/// `F̄ b F - B` in reference orthonormal components [1/mm].
pub fn curvature_change_classical(def: &Deformation, c: Coords) -> Result<Tensor2, KinematicsError> {
    let (r, s) = def.geometry(c)?;
    let f = tangent_map(&r, &s);
    Ok(classical_h(&r, &s, &f))
}

/// The two contributions of the rotor decomposition of `H`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotorRouteH {
    /// `(U - G) B`: strain acting on the initial curvature.
    pub stretch_term: Tensor2,
    /// `-F̄(e3 · D(Y))`: variation of the rotation over the surface.
    pub rotation_term: Tensor2,
    pub total: Tensor2,
}

/// Rotation vector `a` with `A = I3 a`, on the branch continuous with
/// `centre`, for the rotor at `c`.
fn rotation_vector_near(
    def: &Deformation,
    c: Coords,
    centre: &Rotor,
) -> Result<Vec3, KinematicsError> {
    let f = deformation_gradient(def, c)?;
    let mut r = polar_decompose(&f)?.rotor;
    let corr = r.correlation(centre);
    if corr.abs() < AMBIGUOUS_CORRELATION {
        return Err(KinematicsError::BranchDiscontinuity(c[0], c[1]));
    }
    if corr < 0.0 {
        r = r.negate();
    }
    Ok(r.log_unwrapped().bivector.axis())
}

/// `|R₁·R₂|` below this means the two rotations differ by close to a half
/// turn, so the sign continuation between them is ambiguous.
pub const AMBIGUOUS_CORRELATION: f64 = 0.156;

/// First derivative along one coordinate with central differences, or
/// second-order one-sided differences at a non-periodic boundary.
pub fn coordinate_derivative<E>(
    domain: &Domain,
    step: [f64; 2],
    c: Coords,
    axis: usize,
    f: &dyn Fn(Coords) -> Result<Vec3, E>,
) -> Result<Vec3, E> {
    let h = step[axis];
    let at = |k: f64| {
        let mut x = c;
        x[axis] += k * h;
        f(domain.wrap(x))
    };
    let lo_ok = domain.periodic[axis] || c[axis] - h >= domain.min[axis];
    let hi_ok = domain.periodic[axis] || c[axis] + h <= domain.max[axis];
    if lo_ok && hi_ok {
        Ok((at(1.0)? - at(-1.0)?) / (2.0 * h))
    } else {
        let s = if lo_ok { -1.0 } else { 1.0 };
        Ok((at(0.0)? * -3.0 + at(s)? * 4.0 - at(2.0 * s)?) / (2.0 * s * h))
    }
}

/// Spatial angular-rate bivectors `Dᵢ = -2 (∂R/∂Xⁱ) ~R` at `c`, using the
/// supplied rotor sign at the centre.
pub fn rotation_rate_bivectors(
    def: &Deformation,
    c: Coords,
    centre: &Rotor,
) -> Result<[Bivector; 2], KinematicsError> {
    let log = centre.log_unwrapped();
    let a0 = log.bivector.axis();
    if a0.norm() > 2.0 * std::f64::consts::PI - 0.1 {
        return Err(KinematicsError::BranchDiscontinuity(c[0], c[1]));
    }
    let jac = exp_left_jacobian(&a0);
    let domain = def.domain();
    let field = |x: Coords| rotation_vector_near(def, x, centre);
    let mut out = [Bivector::ZERO; 2];
    for (axis, d) in out.iter_mut().enumerate() {
        let da = coordinate_derivative(&domain, def.fd_step, c, axis, &field)?;
        *d = Bivector::from_axis(&(jac * da));
    }
    Ok(out)
}

fn rotor_route(
    r: &LocalGeometry,
    s: &LocalGeometry,
    f: &TangentMap,
    polar: &PolarDecomposition,
    rates: &[Bivector; 2],
) -> RotorRouteH {
    let b = r.curvature();
    let stretch_term = (polar.stretch - Tensor2::identity()) * b;
    let e3 = s.frame.normal;
    let q = r.frame.reciprocal_projection();
    let mut rotation_term = Tensor2::zeros();
    for bcol in 0..2 {
        // D(t_b) = (t_b·Eⁱ) Dᵢ
        let d = rates[0].scale(q[(bcol, 0)]) + rates[1].scale(q[(bcol, 1)]);
        let v = d.left_dot(&e3);
        for a in 0..2 {
            rotation_term[(a, bcol)] = -f.columns[a].dot(&v);
        }
    }
    RotorRouteH { stretch_term, rotation_term, total: stretch_term + rotation_term }
}

/// Rotor decomposition of `H` at a point. Builds its own 5-point stencil of
/// step `def.fd_step` around `c`; the centre rotor is taken with a
/// non-negative scalar part.
pub fn curvature_change_rotor(def: &Deformation, c: Coords) -> Result<RotorRouteH, KinematicsError> {
    curvature_change_rotor_with(def, c, None)
}

/// As [`curvature_change_rotor`], continuing the rotation field from a
/// given (sign-continuised) centre rotor.
pub fn curvature_change_rotor_with(
    def: &Deformation,
    c: Coords,
    centre: Option<Rotor>,
) -> Result<RotorRouteH, KinematicsError> {
    let (r, s) = def.geometry(c)?;
    let f = tangent_map(&r, &s);
    let polar = polar_decompose(&f)?;
    let centre = centre.unwrap_or(if polar.rotor.scalar < 0.0 { polar.rotor.negate() } else { polar.rotor });
    let rates = rotation_rate_bivectors(def, c, &centre)?;
    Ok(rotor_route(&r, &s, &f, &polar, &rates))
}

/// Everything known about the deformation at one coordinate point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicState {
    pub coords: Coords,
    pub reference: LocalGeometry,
    pub spatial: LocalGeometry,
    pub gradient: TangentMap,
    pub polar: PolarDecomposition,
    /// `E`, dimensionless.
    pub strain: Tensor2,
    /// `B` in reference orthonormal components [1/mm].
    pub reference_curvature: Tensor2,
    /// `b` in spatial orthonormal components [1/mm].
    pub spatial_curvature: Tensor2,
    pub h_classical: Tensor2,
    pub h_rotor: RotorRouteH,
    /// Rotation bivector `A` on the branch of the supplied rotor sign [rad].
    pub rotation_bivector: Bivector,
}

impl KinematicState {
    pub fn rotor(&self) -> Rotor {
        self.polar.rotor
    }
}

/// Full kinematic state at `c`. `centre` fixes the rotor sign (from a
/// continuised field); `None` picks the non-negative scalar branch.
pub fn kinematic_state(
    def: &Deformation,
    c: Coords,
    centre: Option<Rotor>,
) -> Result<KinematicState, KinematicsError> {
    let (r, s) = def.geometry(c)?;
    let f = tangent_map(&r, &s);
    let mut polar = polar_decompose(&f)?;
    let rotor = match centre {
        Some(sign) if sign.correlation(&polar.rotor) < 0.0 => polar.rotor.negate(),
        Some(_) => polar.rotor,
        None if polar.rotor.scalar < 0.0 => polar.rotor.negate(),
        None => polar.rotor,
    };
    polar.rotor = rotor;
    let rates = rotation_rate_bivectors(def, c, &rotor)?;
    Ok(KinematicState {
        coords: c,
        reference: r,
        spatial: s,
        gradient: f,
        polar,
        strain: strain(&f),
        reference_curvature: r.curvature(),
        spatial_curvature: s.curvature(),
        h_classical: classical_h(&r, &s, &f),
        h_rotor: rotor_route(&r, &s, &f, &polar, &rates),
        rotation_bivector: rotor.log_unwrapped().bivector,
    })
}

/// Rotor per grid point with signs continued across the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RotorField {
    pub grid: Grid,
    pub rotors: Vec<Rotor>,
    /// Grid point where the sweep started (smallest rotation angle).
    pub seed: usize,
    /// Neighbour pairs whose relative rotation is close to a half turn, or
    /// whose signs could not be made consistent around a loop.
    pub ambiguous: Vec<(usize, usize)>,
}

pub fn rotor_field(def: &Deformation, grid: &Grid, exec: Execution) -> Result<RotorField, KinematicsError> {
    let pts = grid.points();
    let rotors: Vec<Rotor> = par::map(exec, &pts, |c| {
        deformation_gradient(def, *c).and_then(|f| polar_decompose(&f)).map(|p| p.rotor)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    Ok(continue_signs(grid, rotors))
}

/// Breadth-first sign continuation from the smallest-angle rotor.
pub fn continue_signs(grid: &Grid, mut rotors: Vec<Rotor>) -> RotorField {
    let n = rotors.len();
    let seed = (0..n)
        .min_by(|&a, &b| rotors[a].angle().total_cmp(&rotors[b].angle()))
        .unwrap_or(0);
    let mut ambiguous = Vec::new();
    if n == 0 {
        return RotorField { grid: *grid, rotors, seed, ambiguous };
    }
    if rotors[seed].scalar < 0.0 {
        rotors[seed] = rotors[seed].negate();
    }
    let mut visited = vec![false; n];
    visited[seed] = true;
    let mut queue = VecDeque::from([seed]);
    while let Some(k) = queue.pop_front() {
        for nb in grid.neighbours(k) {
            let corr = rotors[nb].correlation(&rotors[k]);
            if visited[nb] {
                if corr < AMBIGUOUS_CORRELATION && k < nb {
                    ambiguous.push((k, nb));
                }
                continue;
            }
            if corr.abs() < AMBIGUOUS_CORRELATION {
                ambiguous.push((k.min(nb), k.max(nb)));
            }
            if corr < 0.0 {
                rotors[nb] = rotors[nb].negate();
            }
            visited[nb] = true;
            queue.push_back(nb);
        }
    }
    ambiguous.sort_unstable();
    ambiguous.dedup();
    RotorField { grid: *grid, rotors, seed, ambiguous }
}

/// Rotation bivector per grid point, continuous across the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BivectorField {
    pub grid: Grid,
    pub bivectors: Vec<Bivector>,
    /// Points whose rotation is close enough to a half turn that the branch
    /// is ambiguous.
    pub flagged: Vec<usize>,
}

pub fn bivector_field(field: &RotorField) -> BivectorField {
    let mut flagged = Vec::new();
    let bivectors = field
        .rotors
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let log = r.log_unwrapped();
            if log.degenerate || r.scalar < -(1.0 - 1e-6) {
                flagged.push(k);
            }
            log.bivector
        })
        .collect();
    BivectorField { grid: field.grid, bivectors, flagged }
}

/// Output of the small-angle component formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallAngleH {
    /// `θᵢ` with `A ≈ θᵢ eⁱ∧e3`.
    pub theta: [f64; 2],
    /// Coefficient of `e¹∧e²` relative to `|A|`.
    pub normal_fraction: f64,
    /// `Hᵢⱼ = ∂ⱼθᵢ - θₖγᵏⱼᵢ` against the coordinate frame.
    pub coordinate: Matrix2<f64>,
    /// Same tensor in reference orthonormal components.
    pub orthonormal: Tensor2,
    /// `|∂₁θ₂ - ∂₂θ₁|`.
    pub symmetry_defect: f64,
}

pub const DEFAULT_SMALL_ANGLE_LIMIT: f64 = 0.05;

// (θ1, θ2, θ3) with A = θ1 e¹∧e3 + θ2 e²∧e3 + θ3 e¹∧e².
fn split_bivector(s: &LocalGeometry, a: &Bivector) -> Vector3<f64> {
    let [u1, u2] = s.frame.reciprocal;
    let n = s.frame.normal;
    let cols = [Bivector::wedge(&u1, &n), Bivector::wedge(&u2, &n), Bivector::wedge(&u1, &u2)];
    let m = Matrix3::from_fn(|r, c| {
        let b = cols[c];
        [b.e12, b.e13, b.e23][r]
    });
    let rhs = Vector3::new(a.e12, a.e13, a.e23);
    m.lu().solve(&rhs).unwrap_or_else(Vector3::zeros)
}

pub fn h_components_smallangle(
    def: &Deformation,
    c: Coords,
    limit: f64,
) -> Result<SmallAngleH, KinematicsError> {
    let (r, s) = def.geometry(c)?;
    let polar = polar_decompose(&tangent_map(&r, &s))?;
    let centre = if polar.rotor.scalar < 0.0 { polar.rotor.negate() } else { polar.rotor };
    let a0 = centre.log_unwrapped().bivector;
    let th0 = split_bivector(&s, &a0);
    let mag = a0.magnitude();
    let normal_fraction = if mag > 0.0 {
        Bivector::wedge(&s.frame.reciprocal[0], &s.frame.reciprocal[1]).scale(th0.z).magnitude() / mag
    } else {
        0.0
    };
    if normal_fraction > limit {
        return Err(KinematicsError::SmallAngleViolated { ratio: normal_fraction, limit });
    }
    let theta_at = |x: Coords| -> Result<Vec3, KinematicsError> {
        let a = Bivector::from_axis(&rotation_vector_near(def, x, &centre)?);
        let s = local_geometry(&*def.spatial, x)?;
        Ok(split_bivector(&s, &a))
    };
    let domain = def.domain();
    let d = [
        coordinate_derivative(&domain, def.fd_step, c, 0, &theta_at)?,
        coordinate_derivative(&domain, def.fd_step, c, 1, &theta_at)?,
    ];
    let gamma = s.christoffels();
    // Hᵢⱼ = ∂ⱼθᵢ - θₖ γᵏⱼᵢ
    let coordinate = Matrix2::from_fn(|i, j| {
        d[j][i] - (0..2).map(|k| th0[k] * gamma.get(k, j, i)).sum::<f64>()
    });
    let q = r.frame.reciprocal_projection();
    Ok(SmallAngleH {
        theta: [th0.x, th0.y],
        normal_fraction,
        coordinate,
        orthonormal: q * coordinate * q.transpose(),
        symmetry_defect: (d[0][1] - d[1][0]).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{Cylinder, Perturbation, PerturbedChart, Plane, RolledPlate, Sphere, TubeSquash};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn plate() -> Plane {
        Plane::new(Domain::new([-3.0, -2.0], [3.0, 2.0]))
    }

    /// Plane stretched by λ along the first coordinate.
    struct Stretched(f64);
    impl Chart for Stretched {
        fn domain(&self) -> Domain {
            plate().domain
        }
        fn position(&self, c: Coords) -> Vec3 {
            Vec3::new(self.0 * c[0], c[1], 0.0)
        }
        fn derivatives(&self, c: Coords) -> crate::surface::Derivatives {
            let mut d = plate().derivatives(c);
            d.position = self.position(c);
            d.first[0] *= self.0;
            d
        }
    }

    /// Plane rotated rigidly about its normal by `angle`.
    struct Spun(f64);
    impl Chart for Spun {
        fn domain(&self) -> Domain {
            plate().domain
        }
        fn position(&self, c: Coords) -> Vec3 {
            let r = Rotor::exp(&Bivector::new(self.0, 0.0, 0.0));
            r.apply(&Vec3::new(c[0], c[1], 0.0))
        }
        fn derivatives(&self, c: Coords) -> crate::surface::Derivatives {
            let r = Rotor::exp(&Bivector::new(self.0, 0.0, 0.0));
            let mut d = plate().derivatives(c);
            d.position = self.position(c);
            d.first = d.first.map(|v| r.apply(&v));
            d
        }
    }

    #[test]
    fn identity_deformation() {
        let def = Deformation::identity(Cylinder::new(3.0, 10.0));
        let c = [2.0, 1.0];
        let f = deformation_gradient(&def, c).unwrap();
        for a in 0..2 {
            assert_abs_diff_eq!((f.columns[a] - f.reference[a]).norm(), 0.0, epsilon = 1e-15);
        }
        let p = polar_decompose(&f).unwrap();
        assert_abs_diff_eq!(p.rotor.angle(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((p.stretch - Tensor2::identity()).amax(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(strain(&f).amax(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(curvature_change_classical(&def, c).unwrap().amax(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(curvature_change_rotor(&def, c).unwrap().total.amax(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn uniaxial_stretch() {
        let def = Deformation::new(plate(), Stretched(1.3));
        let f = deformation_gradient(&def, [0.5, 0.5]).unwrap();
        assert_abs_diff_eq!((f.columns[0] - Vec3::new(1.3, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((f.columns[1] - Vec3::y()).norm(), 0.0, epsilon = 1e-15);
        let p = polar_decompose(&f).unwrap();
        assert_abs_diff_eq!(p.rotor.angle(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((p.stretch - Tensor2::new(1.3, 0.0, 0.0, 1.0)).amax(), 0.0, epsilon = 1e-15);
        let e = principal_decomposition(&strain(&f));
        assert_abs_diff_eq!(e.values[0], 0.345, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pure_rotation_about_normal() {
        let def = Deformation::new(plate(), Spun(PI / 4.0));
        let f = deformation_gradient(&def, [0.5, 0.5]).unwrap();
        let p = polar_decompose(&f).unwrap();
        assert_abs_diff_eq!((p.stretch - Tensor2::identity()).amax(), 0.0, epsilon = 1e-15);
        let a = p.rotor.log().bivector;
        assert_abs_diff_eq!(a.magnitude(), PI / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a.e12, PI / 4.0, epsilon = 1e-14);
        assert!(p.reconstruction_error(&f) < 1e-12);
    }

    #[test]
    fn sphere_inflation() {
        let (r0, r1) = (3.0, 4.5);
        let def = Deformation::new(Sphere::new(r0), Sphere::new(r1));
        let c = [0.7, 1.1];
        let f = deformation_gradient(&def, c).unwrap();
        let p = polar_decompose(&f).unwrap();
        assert_abs_diff_eq!(p.rotor.angle(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((p.stretch - Tensor2::identity() * 1.5).amax(), 0.0, epsilon = 1e-14);
        let h = curvature_change_classical(&def, c).unwrap();
        let expected = Tensor2::identity() * ((r1 - r0) / (r0 * r0));
        assert_abs_diff_eq!((h - expected).amax(), 0.0, epsilon = 1e-13);
        let hr = curvature_change_rotor(&def, c).unwrap();
        assert!(hr.rotation_term.amax() < 1e-9);
        assert_abs_diff_eq!((hr.total - expected).amax(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rolled_plate() {
        let rho = 4.0;
        let d = plate().domain;
        let def = Deformation::new(plate(), RolledPlate::new(rho, d));
        for c in [[0.0, 0.0], [1.5, -1.0], [-2.5, 1.5]] {
            let h = curvature_change_classical(&def, c).unwrap();
            let p = principal_decomposition(&h);
            assert_abs_diff_eq!(p.values[0], 1.0 / rho, epsilon = 1e-13);
            assert_abs_diff_eq!(p.values[1], 0.0, epsilon = 1e-13);
            let hr = curvature_change_rotor(&def, c).unwrap();
            assert_eq!(hr.stretch_term, Tensor2::zeros());
            assert!((hr.total - h).amax() < 1e-8, "{:?} vs {:?}", hr.total, h);
            let sa = h_components_smallangle(&def, c, DEFAULT_SMALL_ANGLE_LIMIT).unwrap();
            assert!((sa.orthonormal - h).amax() < 1e-8, "{:?} vs {h:?}", sa.orthonormal);
            assert!(sa.symmetry_defect < 1e-8);
        }
    }

    #[test]
    fn rolled_plate_rotation_is_linear_in_rolled_coordinate() {
        let rho = 4.0;
        let d = plate().domain;
        let def = Deformation::new(plate(), RolledPlate::new(rho, d));
        let grid = Grid::new(d, [12, 5]);
        let field = rotor_field(&def, &grid, Execution::Sequential).unwrap();
        assert!(field.ambiguous.is_empty());
        let a = bivector_field(&field);
        for (k, b) in a.bivectors.iter().enumerate() {
            let u = grid.points()[k][0];
            // Tangent tilts from x toward z: rotation by u/ρ about -ŷ.
            assert_abs_diff_eq!(b.e13, u / rho, epsilon = 1e-12);
            assert_abs_diff_eq!(b.e12, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.e23, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sphere_rotor_field_is_identity() {
        let def = Deformation::new(Sphere::new(3.0), Sphere::new(4.5));
        let grid = Grid::new(def.domain(), [8, 6]);
        let f = rotor_field(&def, &grid, Execution::Parallel).unwrap();
        assert!(f.rotors.iter().all(|r| r.angle() < 1e-12));
        assert!(bivector_field(&f).bivectors.iter().all(|b| b.magnitude() < 1e-12));
    }

    #[test]
    fn rotor_field_signs_are_continuous() {
        let tube = TubeSquash::new(3.0, 19.0, 25.0 / 19.0, 0.6);
        let def = Deformation::new(tube.reference(), tube);
        let grid = Grid::new(def.domain(), [10, 24]);
        // Scramble signs first; continuation must undo it.
        let mut f = rotor_field(&def, &grid, Execution::Parallel).unwrap();
        for (k, r) in f.rotors.iter_mut().enumerate() {
            if k % 3 == 0 {
                *r = r.negate();
            }
        }
        let f = continue_signs(&grid, f.rotors);
        assert!(f.ambiguous.is_empty());
        for k in 0..grid.len() {
            for nb in grid.neighbours(k) {
                assert!(f.rotors[k].correlation(&f.rotors[nb]) > 0.0);
            }
            let e3 = f.rotors[k].apply(&def.geometry(grid.points()[k]).unwrap().0.frame.normal);
            let s = def.geometry(grid.points()[k]).unwrap().1.frame.normal;
            assert!((e3 - s).norm() < 1e-8);
        }
    }

    #[test]
    fn half_turn_neighbours_are_flagged() {
        let grid = Grid::new(Domain::new([0.0, 0.0], [1.0, 1.0]), [1, 2]);
        let r0 = Rotor::IDENTITY;
        let r1 = Rotor::exp(&Bivector::new(0.0, PI, 0.0));
        let f = continue_signs(&grid, vec![r0, r1]);
        assert_eq!(f.ambiguous, vec![(0, 1)]);
    }

    #[test]
    fn rotation_rate_matches_rotor_derivative() {
        // D = -2 (∂R) ~R by direct rotor differences, against the
        // Jacobian-of-exp route used by the rotor decomposition.
        let tube = TubeSquash::new(3.0, 19.0, 25.0 / 19.0, 0.6);
        let def = Deformation::new(tube.reference(), tube);
        let c = [6.0, 0.9];
        let rotor = |x: Coords| polar_decompose(&deformation_gradient(&def, x).unwrap()).unwrap().rotor;
        let r0 = rotor(c);
        let rates = rotation_rate_bivectors(&def, c, &r0).unwrap();
        for axis in 0..2 {
            let h = def.fd_step[axis];
            let mut p = c;
            p[axis] += h;
            let mut m = c;
            m[axis] -= h;
            let align = |r: Rotor| if r.correlation(&r0) < 0.0 { r.negate() } else { r };
            let dr = (align(rotor(p)).to_multivector() - align(rotor(m)).to_multivector()).scale(1.0 / (2.0 * h));
            let d = (dr * r0.reverse().to_multivector()).scale(-2.0);
            assert!((d.bivector_part() - rates[axis]).magnitude() < 1e-7);
            assert!(d.scalar_part().abs() < 1e-7);
        }
    }

    #[test]
    fn rotor_reverse_derivative_identity() {
        // Y·∂~R = -~R (Y·∂R) ~R on a smooth rotor field.
        let field = |t: f64| Rotor::exp(&Bivector::new(0.3 * t, t * t, -0.5 + t));
        let (t, h) = (0.4, 1e-5);
        let d = |f: &dyn Fn(f64) -> crate::ga3::Multivector| (f(t + h) - f(t - h)).scale(1.0 / (2.0 * h));
        let drev = d(&|x| field(x).reverse().to_multivector());
        let dr = d(&|x| field(x).to_multivector());
        let rr = field(t).reverse().to_multivector();
        let rhs = -(rr * dr * rr);
        assert!((drev - rhs).max_abs() < 1e-9);
    }

    #[test]
    fn adjoint_maps_reciprocal_frames() {
        let tube = TubeSquash::new(3.0, 19.0, 25.0 / 19.0, 0.6);
        let def = Deformation::new(tube.reference(), tube);
        let c = [7.0, 2.1];
        let (r, s) = def.geometry(c).unwrap();
        let f = deformation_gradient(&def, c).unwrap();
        for i in 0..2 {
            assert!((f.adjoint(&s.frame.reciprocal[i]) - r.frame.reciprocal[i]).norm() < 1e-9);
            assert!((f.apply(&r.frame.tangents[i]) - s.frame.tangents[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn normal_transport_derivative() {
        // Y·∂e3 on the reference equals F(Y)·∂e3 on the spatial surface.
        let tube = TubeSquash::new(3.0, 19.0, 25.0 / 19.0, 0.6);
        let def = Deformation::new(tube.reference(), tube);
        let c = [7.0, 2.1];
        let (r, s) = def.geometry(c).unwrap();
        let f = deformation_gradient(&def, c).unwrap();
        let y = r.frame.orthonormal[0] * 0.6 + r.frame.orthonormal[1] * 0.8;
        let fy = f.apply(&y);
        let dir_ref = [y.dot(&r.frame.reciprocal[0]), y.dot(&r.frame.reciprocal[1])];
        let dir_sp = [fy.dot(&s.frame.reciprocal[0]), fy.dot(&s.frame.reciprocal[1])];
        let e3 = |x: Coords| local_geometry(&tube, x).unwrap().frame.normal;
        let h = 1e-5;
        let along = |d: [f64; 2]| {
            (e3([c[0] + h * d[0], c[1] + h * d[1]]) - e3([c[0] - h * d[0], c[1] - h * d[1]])) / (2.0 * h)
        };
        assert!((along(dir_ref) - along(dir_sp)).norm() < 1e-8);
    }

    #[test]
    fn routes_agree_on_tube_squash_and_perturbed_sphere() {
        let tube = TubeSquash::new(3.0, 19.0, 25.0 / 19.0, 0.6);
        let def = Deformation::new(tube.reference(), tube);
        for c in [[3.0, 0.3], [9.5, 1.2], [12.0, 4.0]] {
            let hc = curvature_change_classical(&def, c).unwrap();
            let hr = curvature_change_rotor(&def, c).unwrap();
            assert!((hc - hr.total).amax() < 1e-4 / 3.0, "{hc:?} vs {:?}", hr.total);
            assert!((hr.total[(0, 1)] - hr.total[(1, 0)]).abs() < 1e-6);
        }
        let modes = vec![
            Perturbation { amplitude: Vec3::new(0.3, -0.2, 0.4), wavenumber: [1.0, 2.0], phase: 0.3 },
            Perturbation { amplitude: Vec3::new(-0.1, 0.25, 0.1), wavenumber: [2.0, -1.0], phase: 1.1 },
        ];
        let def = Deformation::new(Sphere::new(3.0), PerturbedChart::new(Sphere::new(3.6), modes));
        for c in [[0.5, 1.0], [3.0, 1.7], [5.5, 2.2]] {
            let hc = curvature_change_classical(&def, c).unwrap();
            let hr = curvature_change_rotor(&def, c).unwrap();
            assert!((hc - hr.total).amax() < 1e-4 / 3.0, "{hc:?} vs {:?}", hr.total);
        }
    }

    #[test]
    fn small_angle_on_identity_is_zero() {
        let def = Deformation::identity(Cylinder::new(3.0, 10.0));
        let sa = h_components_smallangle(&def, [5.0, 1.0], DEFAULT_SMALL_ANGLE_LIMIT).unwrap();
        assert_abs_diff_eq!(sa.coordinate.amax(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn small_angle_rejects_normal_rotation() {
        let def = Deformation::new(plate(), Spun(0.3));
        assert!(matches!(
            h_components_smallangle(&def, [0.5, 0.5], DEFAULT_SMALL_ANGLE_LIMIT),
            Err(KinematicsError::SmallAngleViolated { .. })
        ));
    }

    #[test]
    fn orientation_reversal_is_rejected() {
        let f = TangentMap {
            reference: [Vec3::x(), Vec3::y(), Vec3::z()],
            columns: [Vec3::y(), Vec3::x()],
            target_normal: Vec3::z(),
        };
        assert_eq!(polar_decompose(&f), Err(KinematicsError::OrientationReversed));
        let f = TangentMap { columns: [Vec3::x(), Vec3::x()], ..f };
        assert!(matches!(polar_decompose(&f), Err(KinematicsError::SingularStretch(_))));
    }
}
