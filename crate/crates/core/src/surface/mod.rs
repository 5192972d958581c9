//! Parametric surface charts and their local differential geometry.
//!
//! A [`Chart`] maps coordinates `(X¹, X²)` to points of ℝ³ together with
//! first and second partial derivatives. Frames, curvature tensors and
//! Christoffel coefficients are computed pointwise from those derivatives.
//!
//! Tensors on the tangent plane are stored as 2×2 component matrices in the
//! local orthonormal frame `{t1, t2}` obtained by Gram–Schmidt of `E1, E2`;
//! in that frame curvature and strain tensors are plain symmetric matrices.
//! The unit normal is always `E3 = unit(E1 × E2)`.

mod charts;
mod poly;

pub use charts::{
    Cylinder, FiniteDifferenceChart, Perturbation, PerturbedChart, Plane, RolledPlate, Sphere,
    TubeSquash,
};
pub use poly::PolySurface;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ga3::Vec3;

/// Surface coordinates `(X¹, X²)`.
pub type Coords = [f64; 2];

/// Components of a tangent-plane tensor in an orthonormal frame.
pub type Tensor2 = Matrix2<f64>;

/// Determinant of the metric below which a parametrisation is singular.
pub const SINGULAR_METRIC: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("singular parametrisation at ({0}, {1}): metric determinant {2:e}")]
    Singular(f64, f64, f64),
    #[error("coordinates ({0}, {1}) outside the chart domain")]
    OutOfDomain(f64, f64),
}

/// Rectangular coordinate domain with optional periodicity per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub min: Coords,
    pub max: Coords,
    pub periodic: [bool; 2],
}

impl Domain {
    pub fn new(min: Coords, max: Coords) -> Self {
        Self { min, max, periodic: [false, false] }
    }

    pub fn with_periodic(mut self, periodic: [bool; 2]) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn span(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn contains(&self, c: Coords) -> bool {
        (0..2).all(|i| self.periodic[i] || (c[i] >= self.min[i] && c[i] <= self.max[i]))
    }

    /// Maps periodic coordinates back into `[min, max)`.
    pub fn wrap(&self, mut c: Coords) -> Coords {
        for i in 0..2 {
            if self.periodic[i] {
                let span = self.span(i);
                c[i] = self.min[i] + (c[i] - self.min[i]).rem_euclid(span);
            }
        }
        c
    }
}

/// Position and partial derivatives of a chart at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivatives {
    pub position: Vec3,
    /// `∂X/∂Xⁱ`.
    pub first: [Vec3; 2],
    /// `∂²X/∂Xⁱ∂Xʲ`.
    pub second: [[Vec3; 2]; 2],
    /// Set by finite-difference charts when a one-sided stencil was needed.
    pub reduced_accuracy: bool,
}

pub trait Chart: Send + Sync {
    fn domain(&self) -> Domain;

    fn position(&self, c: Coords) -> Vec3;

    fn derivatives(&self, c: Coords) -> Derivatives;
}

impl<C: Chart + ?Sized> Chart for Box<C> {
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn position(&self, c: Coords) -> Vec3 {
        (**self).position(c)
    }
    fn derivatives(&self, c: Coords) -> Derivatives {
        (**self).derivatives(c)
    }
}

impl<C: Chart + ?Sized> Chart for std::sync::Arc<C> {
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn position(&self, c: Coords) -> Vec3 {
        (**self).position(c)
    }
    fn derivatives(&self, c: Coords) -> Derivatives {
        (**self).derivatives(c)
    }
}

/// Frame, reciprocal frame, unit normal and metric at a surface point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceFrame {
    pub position: Vec3,
    /// `Eᵢ = ∂X/∂Xⁱ`.
    pub tangents: [Vec3; 2],
    /// `Eⁱ` with `Eⁱ·Eⱼ = δⁱⱼ`.
    pub reciprocal: [Vec3; 2],
    /// `E3 = unit(E1 × E2)`.
    pub normal: Vec3,
    /// `Eᵢ·Eⱼ`.
    pub metric: Matrix2<f64>,
    /// Gram–Schmidt orthonormalisation `{t1, t2}` of `{E1, E2}`.
    pub orthonormal: [Vec3; 2],
}

impl SurfaceFrame {
    pub fn from_derivatives(d: &Derivatives, c: Coords) -> Result<Self, SurfaceError> {
        let [e1, e2] = d.first;
        let metric = Matrix2::new(e1.dot(&e1), e1.dot(&e2), e2.dot(&e1), e2.dot(&e2));
        let det = metric.determinant();
        if !(det >= SINGULAR_METRIC) {
            return Err(SurfaceError::Singular(c[0], c[1], det));
        }
        let inv = Matrix2::new(metric[(1, 1)], -metric[(0, 1)], -metric[(1, 0)], metric[(0, 0)])
            / det;
        let reciprocal = [e1 * inv[(0, 0)] + e2 * inv[(0, 1)], e1 * inv[(1, 0)] + e2 * inv[(1, 1)]];
        let normal = e1.cross(&e2).normalize();
        let t1 = e1.normalize();
        let t2 = normal.cross(&t1);
        Ok(Self {
            position: d.position,
            tangents: d.first,
            reciprocal,
            normal,
            metric,
            orthonormal: [t1, t2],
        })
    }

    /// `√det(Eᵢ·Eⱼ)`, the area element per unit coordinate area.
    pub fn area_element(&self) -> f64 {
        self.metric.determinant().sqrt()
    }

    /// `Q[a][k] = t_a·Eᵏ`; converts covariant coordinate components
    /// `T_jk` to orthonormal components via `Q T Qᵀ`.
    pub fn reciprocal_projection(&self) -> Matrix2<f64> {
        let [t1, t2] = self.orthonormal;
        let [r1, r2] = self.reciprocal;
        Matrix2::new(t1.dot(&r1), t1.dot(&r2), t2.dot(&r1), t2.dot(&r2))
    }

    /// World vector of a tangent vector given by orthonormal components.
    pub fn tangent_vector(&self, v: &Vector2<f64>) -> Vec3 {
        self.orthonormal[0] * v.x + self.orthonormal[1] * v.y
    }
}

/// Frame together with the derivatives needed for curvature quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalGeometry {
    pub frame: SurfaceFrame,
    pub second: [[Vec3; 2]; 2],
    /// `∂E3/∂Xⁱ`.
    pub normal_derivatives: [Vec3; 2],
    pub reduced_accuracy: bool,
}

impl LocalGeometry {
    pub fn from_derivatives(d: &Derivatives, c: Coords) -> Result<Self, SurfaceError> {
        let frame = SurfaceFrame::from_derivatives(d, c)?;
        let [e1, e2] = d.first;
        let raw = e1.cross(&e2);
        let len = raw.norm();
        let n = frame.normal;
        let normal_derivatives = [0, 1].map(|i| {
            let dn = d.second[i][0].cross(&e2) + e1.cross(&d.second[i][1]);
            (dn - n * n.dot(&dn)) / len
        });
        Ok(Self { frame, second: d.second, normal_derivatives, reduced_accuracy: d.reduced_accuracy })
    }

    /// Second fundamental form `L_ij = E3·∂ᵢ∂ⱼX = -Eⱼ·∂ᵢE3`.
    pub fn second_fundamental_form(&self) -> Matrix2<f64> {
        let n = self.frame.normal;
        Matrix2::from_fn(|i, j| n.dot(&self.second[i][j]))
    }

    /// Orthonormal components of `Y ↦ -Y·∂E3`.
    pub fn curvature(&self) -> Tensor2 {
        let q = self.frame.reciprocal_projection();
        let l = self.second_fundamental_form();
        let b = q * l * q.transpose();
        // Symmetrise away round-off only.
        (b + b.transpose()) * 0.5
    }

    /// `γᵃᵢᵦ = eᵃ·∂eᵦ/∂xⁱ` with `e³ = e₃` appended to the frame.
    pub fn christoffels(&self) -> Christoffels {
        let f = &self.frame;
        let up = [f.reciprocal[0], f.reciprocal[1], f.normal];
        let mut gamma = [[[0.0; 3]; 3]; 2];
        for (i, g) in gamma.iter_mut().enumerate() {
            let d_down = [self.second[i][0], self.second[i][1], self.normal_derivatives[i]];
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] = up[a].dot(&d_down[b]);
                }
            }
        }
        Christoffels { gamma }
    }
}

/// Frame-derivative coefficients `γᵃᵢᵦ`, indexed `gamma[i][a][b]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Christoffels {
    pub gamma: [[[f64; 3]; 3]; 2],
}

impl Christoffels {
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.gamma[i][a][b]
    }
}

pub fn frame_at(chart: &dyn Chart, c: Coords) -> Result<SurfaceFrame, SurfaceError> {
    check_domain(chart, c)?;
    SurfaceFrame::from_derivatives(&chart.derivatives(c), c)
}

pub fn local_geometry(chart: &dyn Chart, c: Coords) -> Result<LocalGeometry, SurfaceError> {
    check_domain(chart, c)?;
    LocalGeometry::from_derivatives(&chart.derivatives(c), c)
}

pub fn curvature_tensor(chart: &dyn Chart, c: Coords) -> Result<Tensor2, SurfaceError> {
    Ok(local_geometry(chart, c)?.curvature())
}

pub fn christoffels(chart: &dyn Chart, c: Coords) -> Result<Christoffels, SurfaceError> {
    Ok(local_geometry(chart, c)?.christoffels())
}

fn check_domain(chart: &dyn Chart, c: Coords) -> Result<(), SurfaceError> {
    let slack = 1e-12;
    let d = chart.domain();
    let inside = (0..2).all(|i| {
        d.periodic[i] || (c[i] >= d.min[i] - slack * d.span(i) && c[i] <= d.max[i] + slack * d.span(i))
    });
    if inside {
        Ok(())
    } else {
        Err(SurfaceError::OutOfDomain(c[0], c[1]))
    }
}

/// Eigen-decomposition of a symmetric 2×2 tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Principal {
    /// Sorted descending.
    pub values: [f64; 2],
    /// Orthonormal eigenvectors (orthonormal-frame components).
    pub vectors: [Vector2<f64>; 2],
}

pub fn principal_decomposition(t: &Tensor2) -> Principal {
    let (a, b, d) = (t[(0, 0)], 0.5 * (t[(0, 1)] + t[(1, 0)]), t[(1, 1)]);
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = half_diff.hypot(b);
    let values = [mean + radius, mean - radius];
    // Angle of the leading eigenvector; atan2(0, 0) = 0 picks the frame axis.
    let phi = 0.5 * (2.0 * b).atan2(a - d);
    let v1 = Vector2::new(phi.cos(), phi.sin());
    let v2 = Vector2::new(-phi.sin(), phi.cos());
    Principal { values, vectors: [v1, v2] }
}

/// Cell-centred sample grid over a chart domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: Domain,
    pub n: [usize; 2],
}

impl Grid {
    pub fn new(domain: Domain, n: [usize; 2]) -> Self {
        Self { domain, n }
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 2] {
        [0, 1].map(|i| self.domain.span(i) / self.n[i] as f64)
    }

    /// Flat index, first coordinate varying slowest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n[1] + j
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k / self.n[1], k % self.n[1])
    }

    pub fn coords(&self, i: usize, j: usize) -> Coords {
        let h = self.spacing();
        [
            self.domain.min[0] + (i as f64 + 0.5) * h[0],
            self.domain.min[1] + (j as f64 + 0.5) * h[1],
        ]
    }

    pub fn points(&self) -> Vec<Coords> {
        (0..self.len()).map(|k| {
            let (i, j) = self.ij(k);
            self.coords(i, j)
        })
        .collect()
    }

    /// 4-neighbourhood, wrapping across periodic coordinates.
    pub fn neighbours(&self, k: usize) -> Vec<usize> {
        let (i, j) = self.ij(k);
        let mut out = Vec::with_capacity(4);
        for (axis, delta) in [(0, -1i64), (0, 1), (1, -1), (1, 1)] {
            let (mut a, mut b) = (i as i64, j as i64);
            let n = self.n[axis] as i64;
            let idx = if axis == 0 { &mut a } else { &mut b };
            *idx += delta;
            if *idx < 0 || *idx >= n {
                if !self.domain.periodic[axis] || n < 3 {
                    continue;
                }
                *idx = idx.rem_euclid(n);
            }
            out.push(self.index(a as usize, b as usize));
        }
        out
    }
}

/// Default finite-difference step: `1e-4` of the domain span per coordinate.
pub fn default_fd_step(domain: &Domain) -> [f64; 2] {
    [1e-4 * domain.span(0), 1e-4 * domain.span(1)]
}
