//! Two-camera measurement of dotted surfaces: pinhole cameras with lens
//! distortion, epipolar geometry, blob detection, stereo pairing, temporal
//! association, triangulation and a synthetic renderer.
//!
//! Pixel centres sit at integer coordinates; `u` runs along image columns
//! and `v` along rows.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ga3::{Rotor, Vec3};
use crate::par::{self, Execution};
use crate::surface::{frame_at, Chart, Coords};

pub type Pixel = [f64; 2];

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("point is at or behind the camera plane (depth {0})")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("cameras share a centre")]
    CoLocated,
    #[error("viewing rays are parallel")]
    ParallelRays,
    #[error("kernel width {0} px must be at least 1 px")]
    SigmaTooSmall(f64),
    #[error("kernel width {0} px too large for a {1}×{2} image")]
    SigmaTooLarge(f64, usize, usize),
    #[error("{0} seed pairs, need at least {1}")]
    TooFewSeeds(usize, usize),
    #[error("seed pairs are collinear")]
    DegenerateSeeds,
    #[error("seed index out of range")]
    SeedOutOfRange,
    #[error("no dots visible to the camera")]
    NoVisibleDots,
    #[error("bad PGM data: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Pinhole camera with two radial and two tangential distortion terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// [mm]
    pub focal_length: f64,
    /// [mm/px]
    pub pixel_pitch: f64,
    /// [px]
    pub principal_point: Pixel,
    pub skew: f64,
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    /// Carries camera axes to world axes: `world = R cam ~R`.
    pub orientation: Rotor,
    /// Centre of projection [mm].
    pub position: Vec3,
    pub width: usize,
    pub height: usize,
}

/// Number of fixed-point iterations used to invert the distortion.
pub const UNDISTORT_ITERATIONS: usize = 10;

impl Camera {
    /// Distortion-free camera at `position` looking at `target`, with its
    /// `x` axis as close to `right` as the viewing direction allows.
    pub fn look_at(
        focal_length: f64,
        pixel_pitch: f64,
        size: [usize; 2],
        position: Vec3,
        target: Vec3,
        right: Vec3,
    ) -> Result<Self, StereoError> {
        let z = (target - position).try_normalize(1e-12).ok_or(StereoError::InvalidCamera("target at camera centre"))?;
        let x = (right - z * right.dot(&z))
            .try_normalize(1e-12)
            .ok_or(StereoError::InvalidCamera("right vector along the viewing direction"))?;
        let y = z.cross(&x);
        let cam = Self {
            focal_length,
            pixel_pitch,
            principal_point: [(size[0] as f64 - 1.0) / 2.0, (size[1] as f64 - 1.0) / 2.0],
            skew: 0.0,
            k1: 0.0,
            k2: 0.0,
            p1: 0.0,
            p2: 0.0,
            orientation: Rotor::from_matrix(&Matrix3::from_columns(&[x, y, z])),
            position,
            width: size[0],
            height: size[1],
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Toed-in pair looking along `-x` at `target` from `distance`, separated
    /// by `baseline` along the world `z` axis, which maps to image `u`.
    pub fn stereo_pair(
        focal_length: f64,
        pixel_pitch: f64,
        size: [usize; 2],
        target: Vec3,
        distance: f64,
        baseline: f64,
    ) -> Result<[Self; 2], StereoError> {
        let half = baseline / 2.0;
        let along = (distance * distance - half * half).max(0.0).sqrt();
        let make = |s: f64| {
            let pos = target + Vec3::new(along, 0.0, s * half);
            Camera::look_at(focal_length, pixel_pitch, size, pos, target, Vec3::z())
        };
        Ok([make(-1.0)?, make(1.0)?])
    }

    /// 57 mm lens, 17 µm pixels, 512×256 sensor, 335 mm away so one pixel
    /// covers about 0.1 mm, 200 mm baseline.
    pub fn replica_pair(target: Vec3) -> [Self; 2] {
        Self::stereo_pair(57.0, 0.017, [512, 256], target, 335.0, 200.0).expect("fixed geometry is valid")
    }

    pub fn validate(&self) -> Result<(), StereoError> {
        if !(self.focal_length > 0.0) {
            return Err(StereoError::InvalidCamera("focal length must be positive"));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(StereoError::InvalidCamera("pixel pitch must be positive"));
        }
        if (self.orientation.norm() - 1.0).abs() > 1e-9 {
            return Err(StereoError::InvalidCamera("orientation rotor is not normalised"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(StereoError::InvalidCamera("empty sensor"));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        self.focal_length / self.pixel_pitch
    }

    /// Intrinsic matrix acting on normalised image coordinates.
    pub fn intrinsics(&self) -> Matrix3<f64> {
        let f = self.focal_px();
        Matrix3::new(f, f * self.skew, self.principal_point[0], 0.0, f, self.principal_point[1], 0.0, 0.0, 1.0)
    }

    /// Camera-to-world rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.orientation.to_matrix()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.orientation.reverse().apply(&(p - self.position))
    }

    pub fn distort(&self, n: [f64; 2]) -> [f64; 2] {
        let [x, y] = n;
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        [
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        ]
    }

    pub fn undistort(&self, d: [f64; 2]) -> [f64; 2] {
        let mut n = d;
        for _ in 0..UNDISTORT_ITERATIONS {
            let [x, y] = n;
            let r2 = x * x + y * y;
            let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            n = [(d[0] - dx) / radial, (d[1] - dy) / radial];
        }
        n
    }

    pub fn normalised_to_pixel(&self, n: [f64; 2]) -> Pixel {
        let f = self.focal_px();
        [f * (n[0] + self.skew * n[1]) + self.principal_point[0], f * n[1] + self.principal_point[1]]
    }

    pub fn pixel_to_normalised(&self, p: Pixel) -> [f64; 2] {
        let f = self.focal_px();
        let y = (p[1] - self.principal_point[1]) / f;
        [(p[0] - self.principal_point[0]) / f - self.skew * y, y]
    }

    /// Pixel of a distortion-free camera with the same intrinsics.
    pub fn ideal_pixel(&self, p: Pixel) -> Pixel {
        self.normalised_to_pixel(self.undistort(self.pixel_to_normalised(p)))
    }

    pub fn project(&self, p: &Vec3) -> Result<Pixel, StereoError> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return Err(StereoError::BehindCamera(c.z));
        }
        Ok(self.normalised_to_pixel(self.distort([c.x / c.z, c.y / c.z])))
    }

    /// Unit world direction of the viewing ray through a pixel.
    pub fn ray(&self, p: Pixel) -> Vec3 {
        let n = self.undistort(self.pixel_to_normalised(p));
        self.orientation.apply(&Vec3::new(n[0], n[1], 1.0)).normalize()
    }

    pub fn contains(&self, p: Pixel, margin: f64) -> bool {
        p[0] >= margin
            && p[1] >= margin
            && p[0] <= self.width as f64 - 1.0 - margin
            && p[1] <= self.height as f64 - 1.0 - margin
    }

    pub fn has_distortion(&self) -> bool {
        [self.k1, self.k2, self.p1, self.p2].iter().any(|k| *k != 0.0)
    }
}

fn skew_matrix(t: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix between ideal (undistorted) pixels:
/// `ideal2ᵀ F ideal1 = 0`.
pub fn fundamental_matrix(cam1: &Camera, cam2: &Camera) -> Result<Matrix3<f64>, StereoError> {
    let baseline = cam1.position - cam2.position;
    if baseline.norm() <= 1e-12 * (1.0 + cam1.position.norm()) {
        return Err(StereoError::CoLocated);
    }
    let r2t = cam2.rotation().transpose();
    let rel = r2t * cam1.rotation();
    let t = r2t * baseline;
    let e = skew_matrix(&t) * rel;
    let k1 = cam1.intrinsics().try_inverse().ok_or(StereoError::InvalidCamera("singular intrinsics"))?;
    let k2 = cam2.intrinsics().try_inverse().ok_or(StereoError::InvalidCamera("singular intrinsics"))?;
    Ok(k2.transpose() * e * k1)
}

/// The image in camera 2 of a viewing ray from camera 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum EpipolarCurve {
    /// `a u + b v + c = 0` with `a² + b² = 1`.
    Line([f64; 3]),
    /// Projected ray samples, for cameras with distortion.
    Polyline(Vec<Pixel>),
}

fn unit_line(l: Vector3<f64>) -> [f64; 3] {
    let n = l.x.hypot(l.y);
    [l.x / n, l.y / n, l.z / n]
}

fn line_distance(l: &[f64; 3], p: Pixel) -> f64 {
    (l[0] * p[0] + l[1] * p[1] + l[2]).abs()
}

impl EpipolarCurve {
    pub fn distance(&self, p: Pixel) -> f64 {
        match self {
            EpipolarCurve::Line(l) => line_distance(l, p),
            EpipolarCurve::Polyline(pts) => pts
                .windows(2)
                .map(|w| segment_distance(w[0], w[1], p))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn segment_distance(a: Pixel, b: Pixel, p: Pixel) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

pub fn epipolar_line(cam1: &Camera, cam2: &Camera, p1: Pixel) -> Result<EpipolarCurve, StereoError> {
    let f = fundamental_matrix(cam1, cam2)?;
    if !cam1.has_distortion() && !cam2.has_distortion() {
        return Ok(EpipolarCurve::Line(unit_line(f * Vector3::new(p1[0], p1[1], 1.0))));
    }
    let dir = cam1.ray(p1);
    let pts = (0..=400)
        .filter_map(|k| {
            let depth = 10f64.powf(-1.0 + 6.0 * k as f64 / 400.0);
            cam2.project(&(cam1.position + dir * depth)).ok()
        })
        .collect();
    Ok(EpipolarCurve::Polyline(pts))
}

/// Larger of the two point-to-epipolar-line distances, in ideal pixels.
pub fn epipolar_distance(f: &Matrix3<f64>, cam1: &Camera, cam2: &Camera, p1: Pixel, p2: Pixel) -> f64 {
    let a = cam1.ideal_pixel(p1);
    let b = cam2.ideal_pixel(p2);
    let x1 = Vector3::new(a[0], a[1], 1.0);
    let x2 = Vector3::new(b[0], b[1], 1.0);
    let d2 = line_distance(&unit_line(f * x1), b);
    let d1 = line_distance(&unit_line(f.transpose() * x2), a);
    d1.max(d2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Triangulation {
    pub point: Vec3,
    /// Length of the shortest segment between the two rays [mm].
    pub gap: f64,
}

/// Midpoint of the common perpendicular of the two viewing rays.
pub fn triangulate(cam1: &Camera, cam2: &Camera, p1: Pixel, p2: Pixel) -> Result<Triangulation, StereoError> {
    let (d1, d2) = (cam1.ray(p1), cam2.ray(p2));
    let w0 = cam1.position - cam2.position;
    let b = d1.dot(&d2);
    let (d, e) = (d1.dot(&w0), d2.dot(&w0));
    let den = 1.0 - b * b;
    if den < 1e-12 {
        return Err(StereoError::ParallelRays);
    }
    let s = (b * e - d) / den;
    let t = (e - b * d) / den;
    let a = cam1.position + d1 * s;
    let c = cam2.position + d2 * t;
    Ok(Triangulation { point: (a + c) * 0.5, gap: (a - c).norm() })
}

/// Grayscale image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRaster {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn write_pgm(&self, mut w: impl Write) -> Result<(), StereoError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm(r: impl Read) -> Result<Self, StereoError> {
        let mut r = BufReader::new(r);
        let mut fields = Vec::new();
        let mut line = String::new();
        while fields.len() < 4 {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(StereoError::Pgm("truncated header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            fields.extend(content.split_whitespace().map(str::to_owned));
        }
        if fields[0] != "P5" {
            return Err(StereoError::Pgm(format!("unsupported magic {}", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| StereoError::Pgm(format!("bad header field {s}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(StereoError::Pgm(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes)?;
        let data = bytes.iter().map(|b| *b as f64 / maxval as f64).collect();
        Ok(Self { width, height, data })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotDetection {
    pub u: f64,
    pub v: f64,
    pub response: f64,
}

impl DotDetection {
    pub fn pixel(&self) -> Pixel {
        [self.u, self.v]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectOptions {
    /// Kernel width [px]. For a dot of imaged radius `r` the response
    /// peaks most sharply near `σ = r/√2`.
    pub sigma: f64,
    /// Peaks below this fraction of the strongest response are dropped.
    pub threshold: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self { sigma: 2.5, threshold: 0.25 }
    }
}

fn convolve_rows(exec: Execution, src: &[f64], w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    par::for_each_chunk(exec, &mut out, w, |row, dst| {
        let line = &src[row * w..(row + 1) * w];
        for (x, o) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xi = x as isize + k as isize - r;
                if xi >= 0 && (xi as usize) < w {
                    acc += kv * line[xi as usize];
                }
            }
            *o = acc;
        }
    });
    out
}

fn convolve_cols(exec: Execution, src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    par::for_each_chunk(exec, &mut out, w, |row, dst| {
        for (k, kv) in kernel.iter().enumerate() {
            let yi = row as isize + k as isize - r;
            if yi < 0 || yi as usize >= h {
                continue;
            }
            let line = &src[yi as usize * w..(yi as usize + 1) * w];
            for (o, s) in dst.iter_mut().zip(line) {
                *o += kv * s;
            }
        }
    });
    out
}

/// Convolution with `(1/(πσ⁴)) (1 - r²/(2σ²)) exp(-r²/(2σ²))`, truncated to
/// `|x|, |y| ≤ 4σ`, with zero padding.
pub fn mexican_hat_response(img: &ImageRaster, sigma: f64, exec: Execution) -> Result<Vec<f64>, StereoError> {
    if !(sigma >= 1.0) {
        return Err(StereoError::SigmaTooSmall(sigma));
    }
    let r = (4.0 * sigma).ceil() as usize;
    if 2 * r + 1 > img.width.min(img.height) {
        return Err(StereoError::SigmaTooLarge(sigma, img.width, img.height));
    }
    let s2 = 2.0 * sigma * sigma;
    let g: Vec<f64> = (0..=2 * r).map(|k| (-((k as f64 - r as f64).powi(2)) / s2).exp()).collect();
    let q: Vec<f64> = g.iter().enumerate().map(|(k, gk)| (k as f64 - r as f64).powi(2) / s2 * gk).collect();
    // The kernel splits as g⊗g - q⊗g - g⊗q.
    let (w, h) = (img.width, img.height);
    let rg = convolve_rows(exec, &img.data, w, &g);
    let rq = convolve_rows(exec, &img.data, w, &q);
    let gg = convolve_cols(exec, &rg, w, h, &g);
    let qg = convolve_cols(exec, &rq, w, h, &g);
    let gq = convolve_cols(exec, &rg, w, h, &q);
    let norm = 1.0 / (std::f64::consts::PI * sigma.powi(4));
    Ok((0..w * h).map(|k| norm * (gg[k] - qg[k] - gq[k])).collect())
}

pub fn mexican_hat_detect(img: &ImageRaster, opts: &DetectOptions, exec: Execution) -> Result<Vec<DotDetection>, StereoError> {
    let resp = mexican_hat_response(img, opts.sigma, exec)?;
    let (w, h) = (img.width, img.height);
    let max = resp.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Ok(vec![]);
    }
    let floor = opts.threshold * max;
    let at = |x: usize, y: usize| resp[y * w + x];
    let mut out = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let c = at(x, y);
            if c <= floor {
                continue;
            }
            // Plateaus resolve to the first pixel in raster order.
            let is_max = (0..9).filter(|&k| k != 4).all(|k| {
                let (dx, dy) = (k % 3, k / 3);
                let n = at(x + dx - 1, y + dy - 1);
                if k < 4 { c > n } else { c >= n }
            });
            if !is_max {
                continue;
            }
            let f = |dx: i32, dy: i32| at((x as i32 + dx) as usize, (y as i32 + dy) as usize);
            let (off, value) = quadratic_peak(&f);
            out.push(DotDetection { u: x as f64 + off[0], v: y as f64 + off[1], response: value });
        }
    }
    Ok(out)
}

/// Least-squares quadratic through a 3×3 patch; returns the offset of its
/// stationary point (clamped to the patch) and the fitted peak value.
fn quadratic_peak(f: &dyn Fn(i32, i32) -> f64) -> ([f64; 2], f64) {
    let (mut s, mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let v = f(dx, dy);
            let (x, y) = (dx as f64, dy as f64);
            s += v;
            sx += x * v;
            sy += y * v;
            sxy += x * y * v;
            sxx += (x * x - 2.0 / 3.0) * v;
            syy += (y * y - 2.0 / 3.0) * v;
        }
    }
    // f ≈ a + b x + c y + d x² + e xy + g y²
    let (b, c, e) = (sx / 6.0, sy / 6.0, sxy / 4.0);
    let (d, g) = (sxx / 2.0, syy / 2.0);
    let a = s / 9.0 - 2.0 / 3.0 * (d + g);
    let det = 4.0 * d * g - e * e;
    if !(d < 0.0 && det > 0.0) {
        return ([0.0, 0.0], f(0, 0));
    }
    let x = ((-b * 2.0 * g + c * e) / det).clamp(-1.0, 1.0);
    let y = ((-c * 2.0 * d + b * e) / det).clamp(-1.0, 1.0);
    ([x, y], a + b * x + c * y + d * x * x + e * x * y + g * y * y)
}

/// Rounds pixel coordinates to a grid of `step` pixels.
pub fn quantise_pixel(p: Pixel, step: f64) -> Pixel {
    p.map(|x| (x / step).round() * step)
}

/// Normalised direct linear fit of `dst ≈ H src`.
pub fn fit_homography(src: &[Pixel], dst: &[Pixel]) -> Result<Matrix3<f64>, StereoError> {
    if src.len() < 4 || src.len() != dst.len() {
        return Err(StereoError::TooFewSeeds(src.len(), 4));
    }
    let (ts, ns) = normalising_transform(src)?;
    let (td, nd) = normalising_transform(dst)?;
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (k, (p, q)) in ns.iter().zip(&nd).enumerate() {
        let (x, y, u, v) = (p[0], p[1], q[0], q[1]);
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * k, j)] = r1[j];
            a[(2 * k + 1, j)] = r2[j];
        }
    }
    // Null vector via the 9×9 normal matrix, which works for 4 points too.
    let ata = a.tr_mul(&a);
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("nine eigenvalues");
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tdi = td.try_inverse().ok_or(StereoError::DegenerateSeeds)?;
    let out = tdi * hn * ts;
    let scale = out[(2, 2)];
    Ok(if scale.abs() > 1e-300 { out / scale } else { out })
}

fn normalising_transform(pts: &[Pixel]) -> Result<(Matrix3<f64>, Vec<Pixel>), StereoError> {
    let n = pts.len() as f64;
    let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    // Second moments reveal collinear configurations.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (x, y) = (p[0] - c[0], p[1] - c[1]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    if !(tr > 0.0) || det <= 1e-6 * tr * tr {
        return Err(StereoError::DegenerateSeeds);
    }
    let mean_dist = pts.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).sum::<f64>() / n;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * c[0], 0.0, s, -s * c[1], 0.0, 0.0, 1.0);
    Ok((t, pts.iter().map(|p| [s * (p[0] - c[0]), s * (p[1] - c[1])]).collect()))
}

pub fn apply_homography(h: &Matrix3<f64>, p: Pixel) -> Pixel {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Predicts where `p` appears in view 2 from nearby pairs by fitting the
/// disparity `p2 - p1` as a quadratic in `p1`, or as an affine function
/// when the pairs cannot support a quadratic. `None` when neither fit is
/// determined.
pub fn disparity_transfer(pairs: &[(Pixel, Pixel)], p: Pixel) -> Option<Pixel> {
    let scale = pairs.iter().map(|(a, _)| dist2(*a, p)).fold(0.0, f64::max).sqrt().max(1.0);
    for terms in [6, 3] {
        if pairs.len() < terms {
            continue;
        }
        let basis = |q: Pixel| {
            let (u, v) = ((q[0] - p[0]) / scale, (q[1] - p[1]) / scale);
            [1.0, u, v, u * u, u * v, v * v]
        };
        let m = DMatrix::from_fn(pairs.len(), terms, |r, c| basis(pairs[r].0)[c]);
        let svd = m.svd(true, true);
        let (hi, lo) = svd.singular_values.iter().fold((0.0f64, f64::INFINITY), |(h, l), &x| (h.max(x), l.min(x)));
        if lo <= 1e-6 * hi {
            continue;
        }
        let mut out = p;
        for (c, o) in out.iter_mut().enumerate() {
            let y = DVector::from_fn(pairs.len(), |r, _| pairs[r].1[c] - pairs[r].0[c]);
            *o += svd.solve(&y, 0.0).ok()?[0];
        }
        return Some(out);
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    /// Largest distance between a predicted and a detected point [px].
    pub radius: f64,
    /// Largest symmetric epipolar distance [px].
    pub epipolar_tolerance: f64,
    /// Matched pairs used for each local disparity fit.
    pub neighbours: usize,
    pub min_seeds: usize,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self { radius: 5.0, epipolar_tolerance: 1.5, neighbours: 10, min_seeds: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    /// `(index in image 1, index in image 2)`, seeds first.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched1: Vec<usize>,
    pub unmatched2: Vec<usize>,
    /// Image-1 points whose nearest candidate failed the epipolar check.
    pub epipolar_rejections: Vec<usize>,
}

fn dist2(a: Pixel, b: Pixel) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Pairs detections across two views starting from seed correspondences.
///
/// Points are matched outward from the seeds: each unmatched point is
/// mapped into view 2 by [`disparity_transfer`] over its nearest matched
/// pairs (the seed homography when that is undetermined), paired with the
/// closest free detection within `radius`, and kept only if the pair
/// satisfies the epipolar constraint.
pub fn pair_points(
    det1: &[Pixel],
    det2: &[Pixel],
    seeds: &[(usize, usize)],
    cams: [&Camera; 2],
    opts: &PairOptions,
) -> Result<Pairing, StereoError> {
    if seeds.len() < opts.min_seeds.max(4) {
        return Err(StereoError::TooFewSeeds(seeds.len(), opts.min_seeds.max(4)));
    }
    if seeds.iter().any(|&(i, j)| i >= det1.len() || j >= det2.len()) {
        return Err(StereoError::SeedOutOfRange);
    }
    let src: Vec<Pixel> = seeds.iter().map(|s| det1[s.0]).collect();
    let dst: Vec<Pixel> = seeds.iter().map(|s| det2[s.1]).collect();
    let global = fit_homography(&src, &dst)?;
    let f = fundamental_matrix(cams[0], cams[1])?;

    let mut match1: Vec<Option<usize>> = vec![None; det1.len()];
    let mut used2 = vec![false; det2.len()];
    let mut pairs = Vec::new();
    for &(i, j) in seeds {
        if match1[i].is_none() && !used2[j] {
            match1[i] = Some(j);
            used2[j] = true;
            pairs.push((i, j));
        }
    }
    let mut tried = vec![false; det1.len()];
    let mut rejections = Vec::new();
    loop {
        // Next point: the untried, unmatched one closest to any match.
        let next = (0..det1.len())
            .filter(|&i| match1[i].is_none() && !tried[i])
            .map(|i| {
                let d = pairs.iter().map(|p| dist2(det1[p.0], det1[i])).fold(f64::INFINITY, f64::min);
                (d, i)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, i)) = next else { break };
        tried[i] = true;
        let mut near: Vec<(f64, usize)> = pairs.iter().enumerate().map(|(k, p)| (dist2(det1[p.0], det1[i]), k)).collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let local: Vec<(Pixel, Pixel)> =
            near.iter().take(opts.neighbours).map(|n| (det1[pairs[n.1].0], det2[pairs[n.1].1])).collect();
        let predicted = disparity_transfer(&local, det1[i]).unwrap_or_else(|| apply_homography(&global, det1[i]));
        let best = (0..det2.len())
            .filter(|&j| !used2[j])
            .map(|j| (dist2(det2[j], predicted), j))
            .filter(|(d, _)| *d <= opts.radius * opts.radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, j)) = best else { continue };
        if epipolar_distance(&f, cams[0], cams[1], det1[i], det2[j]) > opts.epipolar_tolerance {
            rejections.push(i);
            continue;
        }
        match1[i] = Some(j);
        used2[j] = true;
        pairs.push((i, j));
        // A new match can make earlier failures reachable.
        tried.iter_mut().for_each(|t| *t = false);
    }
    rejections.retain(|&i| match1[i].is_none());
    rejections.sort_unstable();
    rejections.dedup();
    Ok(Pairing {
        pairs,
        unmatched1: (0..det1.len()).filter(|&i| match1[i].is_none()).collect(),
        unmatched2: (0..det2.len()).filter(|&j| !used2[j]).collect(),
        epipolar_rejections: rejections,
    })
}

/// `count` indices spread over the points by farthest-point sampling,
/// starting from the point nearest the centroid.
pub fn spread_selection(points: &[Pixel], count: usize) -> Vec<usize> {
    if points.is_empty() {
        return vec![];
    }
    let n = points.len() as f64;
    let c = [points.iter().map(|p| p[0]).sum::<f64>() / n, points.iter().map(|p| p[1]).sum::<f64>() / n];
    let first = (0..points.len()).min_by(|&a, &b| dist2(points[a], c).total_cmp(&dist2(points[b], c))).unwrap_or(0);
    let mut chosen = vec![first];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(*p, points[first])).collect();
    while chosen.len() < count.min(points.len()) {
        let (k, _) = d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).expect("non-empty");
        chosen.push(k);
        for (i, di) in d.iter_mut().enumerate() {
            *di = di.min(dist2(points[i], points[k]));
        }
    }
    chosen
}

/// Index of the nearest candidate within `tolerance` for each query.
pub fn nearest_within(queries: &[Pixel], candidates: &[Pixel], tolerance: f64) -> Vec<Option<usize>> {
    queries
        .iter()
        .map(|q| {
            candidates
                .iter()
                .enumerate()
                .map(|(k, c)| (dist2(*q, *c), k))
                .filter(|(d, _)| *d <= tolerance * tolerance)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, k)| k)
        })
        .collect()
}

/// A detection followed through consecutive frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTrack {
    pub id: usize,
    pub start_frame: usize,
    /// Detection index in each frame from `start_frame` on.
    pub detections: Vec<usize>,
    pub points: Vec<Pixel>,
}

/// Links detections frame to frame by nearest neighbour. A link is made
/// only when it is unambiguous both ways: the track has exactly one
/// candidate within `max_dist` and that candidate is claimed by no other
/// track. Anything else ends the track; unclaimed detections start new ones.
pub fn associate_over_time(frames: &[Vec<Pixel>], max_dist: f64) -> Vec<ImageTrack> {
    let mut finished = Vec::new();
    let mut active: Vec<ImageTrack> = Vec::new();
    let mut next_id = 0;
    let r2 = max_dist * max_dist;
    for (f, dets) in frames.iter().enumerate() {
        let mut claims = vec![0usize; dets.len()];
        let candidates: Vec<Vec<usize>> = active
            .iter()
            .map(|t| {
                let last = *t.points.last().expect("tracks are never empty");
                (0..dets.len()).filter(|&k| dist2(dets[k], last) <= r2).collect()
            })
            .collect();
        for c in &candidates {
            for &k in c {
                claims[k] += 1;
            }
        }
        let mut taken = vec![false; dets.len()];
        let mut still = Vec::new();
        for (t, c) in active.into_iter().zip(&candidates) {
            if c.len() == 1 && claims[c[0]] == 1 {
                let k = c[0];
                taken[k] = true;
                let mut t = t;
                t.detections.push(k);
                t.points.push(dets[k]);
                still.push(t);
            } else {
                finished.push(t);
            }
        }
        for (k, p) in dets.iter().enumerate() {
            if !taken[k] {
                still.push(ImageTrack { id: next_id, start_frame: f, detections: vec![k], points: vec![*p] });
                next_id += 1;
            }
        }
        active = still;
    }
    finished.extend(active);
    finished.sort_by_key(|t| t.id);
    finished
}

/// Dots painted on a surface, placed by convected coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotPattern {
    pub coords: Vec<Coords>,
    /// [mm]
    pub radius: f64,
}

impl DotPattern {
    /// `counts[0] × counts[1]` dots at `origin + (i, j) ∘ step`, first
    /// index slowest.
    pub fn grid(origin: Coords, step: Coords, counts: [usize; 2], radius: f64) -> Self {
        let coords = (0..counts[0])
            .flat_map(|i| (0..counts[1]).map(move |j| [origin[0] + i as f64 * step[0], origin[1] + j as f64 * step[1]]))
            .collect();
        Self { coords, radius }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// `+1` when the dots face along the chart normal `E1 × E2`, `-1` when
    /// they face the other way.
    pub normal_side: f64,
    pub intensity: f64,
    /// Dots closer than this to the image edge are not drawn [px].
    pub margin: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { normal_side: 1.0, intensity: 1.0, margin: 8.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RenderedDot {
    /// Index into the dot pattern.
    pub label: usize,
    pub world: Vec3,
    pub pixel: Pixel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub image: ImageRaster,
    pub dots: Vec<RenderedDot>,
}

/// Renders the dots visible to `cam` as Gaussian blobs with standard
/// deviation half the imaged dot radius. Dots on faces turned away from the camera
/// are skipped.
pub fn render_view(
    cam: &Camera,
    surface: &dyn Chart,
    pattern: &DotPattern,
    opts: &RenderOptions,
    exec: Execution,
) -> Result<Rendering, StereoError> {
    let mut dots = Vec::new();
    let mut blobs = Vec::new();
    for (label, c) in pattern.coords.iter().enumerate() {
        let Ok(frame) = frame_at(surface, *c) else { continue };
        let x = frame.position;
        if opts.normal_side * frame.normal.dot(&(cam.position - x)) <= 0.0 {
            continue;
        }
        let Ok(pixel) = cam.project(&x) else { continue };
        if !cam.contains(pixel, opts.margin) {
            continue;
        }
        let depth = cam.to_camera(&x).z;
        let sigma = 0.5 * pattern.radius * cam.focal_px() / depth;
        dots.push(RenderedDot { label, world: x, pixel });
        blobs.push((pixel, sigma));
    }
    if dots.is_empty() {
        return Err(StereoError::NoVisibleDots);
    }
    let (w, h) = (cam.width, cam.height);
    let mut image = ImageRaster::new(w, h);
    par::for_each_chunk(exec, &mut image.data, w, |row, dst| {
        let y = row as f64;
        for (p, s) in &blobs {
            let reach = 4.0 * s;
            if (p[1] - y).abs() > reach {
                continue;
            }
            let lo = (p[0] - reach).floor().max(0.0) as usize;
            let hi = ((p[0] + reach).ceil() as usize).min(w - 1);
            for (x, v) in dst.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let r2 = (x as f64 - p[0]).powi(2) + (y - p[1]).powi(2);
                *v += opts.intensity * (-r2 / (2.0 * s * s)).exp();
            }
        }
        dst.iter_mut().for_each(|v| *v = v.min(1.0));
    });
    Ok(Rendering { image, dots })
}

pub fn render_synthetic(
    cams: [&Camera; 2],
    surface: &dyn Chart,
    pattern: &DotPattern,
    opts: &RenderOptions,
    exec: Execution,
) -> Result<[Rendering; 2], StereoError> {
    Ok([
        render_view(cams[0], surface, pattern, opts, exec)?,
        render_view(cams[1], surface, pattern, opts, exec)?,
    ])
}

pub fn write_cameras_json(w: impl Write, cams: &[Camera]) -> Result<(), StereoError> {
    serde_json::to_writer_pretty(w, cams)?;
    Ok(())
}

pub fn read_cameras_json(r: impl Read) -> Result<Vec<Camera>, StereoError> {
    let cams: Vec<Camera> = serde_json::from_reader(r)?;
    cams.iter().try_for_each(Camera::validate)?;
    Ok(cams)
}

pub fn write_detections_json(w: impl Write, dets: &[DotDetection]) -> Result<(), StereoError> {
    serde_json::to_writer_pretty(w, dets)?;
    Ok(())
}

pub fn read_detections_json(r: impl Read) -> Result<Vec<DotDetection>, StereoError> {
    Ok(serde_json::from_reader(r)?)
}
