//! Point tracks: temporal smoothing with a sum of sinusoids, polynomial
//! surface fits over convected coordinates, and CSV/JSON I/O.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ga3::Vec3;
use crate::kinematics::Deformation;
use crate::par::{self, Execution};
use crate::surface::{Coords, Domain, PolySurface};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("track {id}: {samples} samples, need at least {needed}")]
    TooFewSamples { id: u64, samples: usize, needed: usize },
    #[error("track {0}: timestamps must be strictly increasing")]
    NonMonotonicTime(u64),
    #[error("surface fit needs {needed} points, got {got}")]
    TooFewPoints { got: usize, needed: usize },
    #[error("surface design matrix is rank deficient (condition number {0:e})")]
    RankDeficient(f64),
    #[error("track {0} has no reference position")]
    MissingReference(u64),
    #[error("{0} tracks but {1} fits")]
    FitCountMismatch(usize, usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A tracked material point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointTrack {
    pub id: u64,
    /// Convected coordinates `(x¹, x²)` assigned to the dot.
    pub coords: Coords,
    /// Sample times [s], strictly increasing.
    pub times: Vec<f64>,
    /// Positions [mm].
    pub positions: Vec<Vec3>,
    /// Unstrained position [mm].
    pub reference: Option<Vec3>,
}

impl PointTrack {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TrackError::NonMonotonicTime(self.id));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Number of sinusoids per component.
    pub n_terms: usize,
    /// Fit `Aᵢ sin(ωᵢt + φᵢ)` instead of `Aᵢ sin(ωᵢt)`.
    pub with_phase: bool,
    /// Alternating amplitude/frequency sweeps.
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { n_terms: 8, with_phase: false, max_iterations: 30 }
    }
}

/// `offset + Σ Aᵢ sin(ωᵢ τ) + Bᵢ cos(ωᵢ τ)` with `τ = t - t0`; the cosine
/// amplitudes are zero unless the phase mode is on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub offset: f64,
    /// [mm]
    pub amplitudes: Vec<f64>,
    /// [mm]
    pub cos_amplitudes: Vec<f64>,
    /// [rad/s]
    pub omegas: Vec<f64>,
    /// [mm]
    pub residual_rms: f64,
}

impl ComponentFit {
    fn constant(offset: f64) -> Self {
        Self { offset, amplitudes: vec![], cos_amplitudes: vec![], omegas: vec![], residual_rms: 0.0 }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.offset
            + self
                .omegas
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let (s, c) = (w * tau).sin_cos();
                    self.amplitudes[k] * s + self.cos_amplitudes.get(k).copied().unwrap_or(0.0) * c
                })
                .sum::<f64>()
    }

    pub fn derivative(&self, tau: f64) -> f64 {
        self.omegas
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let (s, c) = (w * tau).sin_cos();
                w * (self.amplitudes[k] * c - self.cos_amplitudes.get(k).copied().unwrap_or(0.0) * s)
            })
            .sum()
    }

    /// `(Aᵢ, fᵢ)` pairs [mm, Hz] sorted by descending amplitude.
    pub fn terms(&self) -> Vec<(f64, f64)> {
        let mut t: Vec<(f64, f64)> = self
            .omegas
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let b = self.cos_amplitudes.get(k).copied().unwrap_or(0.0);
                (self.amplitudes[k].hypot(b), w / (2.0 * PI))
            })
            .collect();
        t.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
        t
    }
}

/// Smoothing fit of one track, one [`ComponentFit`] per spatial axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub id: u64,
    /// Time origin: the first sample [s].
    pub t0: f64,
    pub components: [ComponentFit; 3],
    /// RMS distance between fit and samples [mm].
    pub residual_rms: f64,
}

impl SinusoidFit {
    pub fn eval(&self, t: f64) -> Vec3 {
        let tau = t - self.t0;
        Vec3::from_fn(|i, _| self.components[i].eval(tau))
    }

    /// Velocity [mm/s].
    pub fn velocity(&self, t: f64) -> Vec3 {
        let tau = t - self.t0;
        Vec3::from_fn(|i, _| self.components[i].derivative(tau))
    }
}

pub fn fit_sinusoids(track: &PointTrack, opts: &FitOptions) -> Result<SinusoidFit, TrackError> {
    track.validate()?;
    let needed = 16 * opts.n_terms.max(1);
    if track.times.len() < needed {
        return Err(TrackError::TooFewSamples { id: track.id, samples: track.times.len(), needed });
    }
    let t0 = track.times[0];
    let tau: Vec<f64> = track.times.iter().map(|t| t - t0).collect();
    let components = [0, 1, 2].map(|i| {
        let y: Vec<f64> = track.positions.iter().map(|p| p[i]).collect();
        fit_series(&tau, &y, opts)
    });
    let residual_rms = components.iter().map(|c| c.residual_rms.powi(2)).sum::<f64>().sqrt();
    Ok(SinusoidFit { id: track.id, t0, components, residual_rms })
}

/// Fits one scalar series sampled at `tau` (starting at 0).
pub fn fit_series(tau: &[f64], y: &[f64], opts: &FitOptions) -> ComponentFit {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * mean.abs().max(1.0) || opts.n_terms == 0 {
        return ComponentFit::constant(mean);
    }
    let duration = tau[n - 1] - tau[0];
    let dt = duration / (n - 1) as f64;
    let demeaned: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut omegas = spectral_peaks(&demeaned, dt, opts.n_terms);

    let (mut coef, mut sse) = linear_solve(tau, y, &omegas, opts.with_phase);
    let max_step = PI / duration;
    for _ in 0..opts.max_iterations {
        let before = sse;
        for k in 0..omegas.len() {
            let model = evaluate(tau, &coef, &omegas, opts.with_phase);
            let (a, b) = amplitude_pair(&coef, k, opts.with_phase);
            // Gauss–Newton on ωₖ with the amplitudes held fixed.
            let (mut num, mut den) = (0.0, 0.0);
            for (j, &t) in tau.iter().enumerate() {
                let (s, c) = (omegas[k] * t).sin_cos();
                let jac = t * (a * c - b * s);
                num += (y[j] - model[j]) * jac;
                den += jac * jac;
            }
            if den <= 0.0 {
                continue;
            }
            let mut step = (num / den).clamp(-max_step, max_step);
            for _ in 0..8 {
                let mut trial = omegas.clone();
                trial[k] = (trial[k] + step).abs();
                let (tc, ts) = linear_solve(tau, y, &trial, opts.with_phase);
                if ts < sse {
                    omegas = trial;
                    coef = tc;
                    sse = ts;
                    break;
                }
                step *= 0.5;
            }
        }
        if before - sse <= 1e-12 * before.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (amplitudes, cos_amplitudes) = (0..omegas.len())
        .map(|k| amplitude_pair(&coef, k, opts.with_phase))
        .unzip();
    ComponentFit {
        offset: coef[0],
        amplitudes,
        cos_amplitudes: if opts.with_phase { cos_amplitudes } else { vec![] },
        omegas,
        residual_rms: (sse / n as f64).sqrt(),
    }
}

fn amplitude_pair(coef: &DVector<f64>, k: usize, with_phase: bool) -> (f64, f64) {
    if with_phase {
        (coef[1 + 2 * k], coef[2 + 2 * k])
    } else {
        (coef[1 + k], 0.0)
    }
}

fn design(tau: &[f64], omegas: &[f64], with_phase: bool) -> DMatrix<f64> {
    let cols = 1 + omegas.len() * if with_phase { 2 } else { 1 };
    DMatrix::from_fn(tau.len(), cols, |r, c| {
        if c == 0 {
            return 1.0;
        }
        if with_phase {
            let (s, co) = (omegas[(c - 1) / 2] * tau[r]).sin_cos();
            if (c - 1) % 2 == 0 { s } else { co }
        } else {
            (omegas[c - 1] * tau[r]).sin()
        }
    })
}

fn evaluate(tau: &[f64], coef: &DVector<f64>, omegas: &[f64], with_phase: bool) -> Vec<f64> {
    (design(tau, omegas, with_phase) * coef).iter().copied().collect()
}

fn linear_solve(tau: &[f64], y: &[f64], omegas: &[f64], with_phase: bool) -> (DVector<f64>, f64) {
    let a = design(tau, omegas, with_phase);
    let b = DVector::from_column_slice(y);
    // Normal equations are well conditioned for distinct frequencies; fall
    // back to SVD when two frequencies merge.
    let coef = (a.tr_mul(&a))
        .cholesky()
        .map(|c| c.solve(&a.tr_mul(&b)))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            let svd = a.clone().svd(true, true);
            let eps = svd.singular_values.max() * 1e-12;
            svd.solve(&b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
        });
    let sse = (a * &coef - b).norm_squared();
    (coef, sse)
}

/// Angular frequencies of the `count` strongest spectral peaks of a
/// zero-mean series sampled every `dt`. Ties go to the lower frequency.
pub fn spectral_peaks(y: &[f64], dt: f64, count: usize) -> Vec<f64> {
    let n = y.len();
    let len = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|k| {
            if k < n {
                let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1).max(1) as f64).cos();
                Complex::new(y[k] * w, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let half = len / 2;
    let power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    let mut peaks: Vec<(f64, f64)> = (1..half)
        .filter(|&k| power[k] > power[k - 1] && power[k] >= power[k + 1])
        .map(|k| {
            // Parabolic interpolation on log power.
            let (a, b, c) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
            let den = a - 2.0 * b + c;
            let shift = if den.abs() > 0.0 && den.is_finite() { (0.5 * (a - c) / den).clamp(-0.5, 0.5) } else { 0.0 };
            (power[k], (k as f64 + shift) / (len as f64 * dt))
        })
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    let mut freqs: Vec<f64> = peaks.iter().take(count).map(|p| p.1).collect();
    // Too few peaks: pad with harmonics of the resolution so the basis stays full rank.
    let resolution = 1.0 / (n as f64 * dt);
    let mut extra = 1.0;
    while freqs.len() < count {
        let f = extra * resolution;
        if freqs.iter().all(|g| (g - f).abs() > 0.5 * resolution) {
            freqs.push(f);
        }
        extra += 1.0;
    }
    freqs.into_iter().map(|f| 2.0 * PI * f).collect()
}

/// Fits every track; results are in input order.
pub fn fit_tracks(
    tracks: &[PointTrack],
    opts: &FitOptions,
    exec: Execution,
) -> Result<Vec<SinusoidFit>, TrackError> {
    par::map(exec, tracks, |t| fit_sinusoids(t, opts)).into_iter().collect()
}

/// Condition number above which a surface design matrix is rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Least-squares tensor-product polynomial through `(coords, position)`
/// pairs, with normalised coordinates over their bounding box.
pub fn fit_surface(points: &[(Coords, Vec3)], degree: [usize; 2]) -> Result<PolySurface, TrackError> {
    let terms = PolySurface::n_terms(degree);
    if points.len() < terms {
        return Err(TrackError::TooFewPoints { got: points.len(), needed: terms });
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for (c, _) in points {
        for i in 0..2 {
            min[i] = min[i].min(c[i]);
            max[i] = max[i].max(c[i]);
        }
    }
    let centre = [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1])];
    let scale = [0.5 * (max[0] - min[0]), 0.5 * (max[1] - min[1])].map(|s| if s > 0.0 { s } else { 1.0 });
    let mut surface = PolySurface {
        degree,
        centre,
        scale,
        coeffs: [vec![], vec![], vec![]],
        domain: Domain::new(min, max),
        residual_rms: 0.0,
    };
    let n1 = degree[1] + 1;
    let mut a = DMatrix::zeros(points.len(), terms);
    for (r, (c, _)) in points.iter().enumerate() {
        let x = surface.normalise(*c);
        let [p0, _, _] = PolySurface::powers(x[0], degree[0]);
        let [p1, _, _] = PolySurface::powers(x[1], degree[1]);
        for p in 0..=degree[0] {
            for q in 0..n1 {
                a[(r, p * n1 + q)] = p0[p] * p1[q];
            }
        }
    }
    let svd = a.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < MAX_CONDITION) {
        return Err(TrackError::RankDeficient(cond));
    }
    let mut sse = 0.0;
    for comp in 0..3 {
        let b = DVector::from_iterator(points.len(), points.iter().map(|(_, p)| p[comp]));
        let x = svd.solve(&b, 0.0).map_err(|_| TrackError::RankDeficient(cond))?;
        sse += (&a * &x - b).norm_squared();
        surface.coeffs[comp] = x.iter().copied().collect();
    }
    surface.residual_rms = (sse / points.len() as f64).sqrt();
    Ok(surface)
}

/// Reference and spatial surfaces at time `t` on shared convected
/// coordinates.
pub fn tracks_to_deformation(
    tracks: &[PointTrack],
    fits: &[SinusoidFit],
    t: f64,
    degree: [usize; 2],
) -> Result<(Deformation, [PolySurface; 2]), TrackError> {
    if tracks.len() != fits.len() {
        return Err(TrackError::FitCountMismatch(tracks.len(), fits.len()));
    }
    let reference: Vec<(Coords, Vec3)> = tracks
        .iter()
        .map(|tr| tr.reference.map(|p| (tr.coords, p)).ok_or(TrackError::MissingReference(tr.id)))
        .collect::<Result<_, _>>()?;
    let spatial: Vec<(Coords, Vec3)> = tracks.iter().zip(fits).map(|(tr, f)| (tr.coords, f.eval(t))).collect();
    let r = fit_surface(&reference, degree)?;
    let s = fit_surface(&spatial, degree)?;
    let def = Deformation::from_arcs(Arc::new(r.clone()), Arc::new(s.clone()));
    Ok((def, [r, s]))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    id: u64,
    x1: f64,
    x2: f64,
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceRow {
    id: u64,
    x1: f64,
    x2: f64,
    px: f64,
    py: f64,
    pz: f64,
}

/// Reads `id,x1,x2,t,px,py,pz` rows, grouping by id in ascending id order.
pub fn read_tracks(reader: impl Read) -> Result<Vec<PointTrack>, TrackError> {
    let mut by_id: BTreeMap<u64, PointTrack> = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: TrackRow = row?;
        let tr = by_id.entry(row.id).or_insert_with(|| PointTrack {
            id: row.id,
            coords: [row.x1, row.x2],
            times: vec![],
            positions: vec![],
            reference: None,
        });
        tr.times.push(row.t);
        tr.positions.push(Vec3::new(row.px, row.py, row.pz));
    }
    let tracks: Vec<PointTrack> = by_id.into_values().collect();
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

/// Attaches `id,x1,x2,px,py,pz` reference positions to matching tracks.
pub fn read_references(reader: impl Read, tracks: &mut [PointTrack]) -> Result<(), TrackError> {
    let mut refs = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: ReferenceRow = row?;
        refs.insert(row.id, Vec3::new(row.px, row.py, row.pz));
    }
    for t in tracks.iter_mut() {
        t.reference = Some(*refs.get(&t.id).ok_or(TrackError::MissingReference(t.id))?);
    }
    Ok(())
}

pub fn write_tracks(writer: impl Write, tracks: &[PointTrack]) -> Result<(), TrackError> {
    let mut w = csv::Writer::from_writer(writer);
    for tr in tracks {
        for (t, p) in tr.times.iter().zip(&tr.positions) {
            w.serialize(TrackRow { id: tr.id, x1: tr.coords[0], x2: tr.coords[1], t: *t, px: p.x, py: p.y, pz: p.z })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_references(writer: impl Write, tracks: &[PointTrack]) -> Result<(), TrackError> {
    let mut w = csv::Writer::from_writer(writer);
    for tr in tracks {
        let p = tr.reference.ok_or(TrackError::MissingReference(tr.id))?;
        w.serialize(ReferenceRow { id: tr.id, x1: tr.coords[0], x2: tr.coords[1], px: p.x, py: p.y, pz: p.z })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_fits_json(writer: impl Write, fits: &[SinusoidFit]) -> Result<(), TrackError> {
    serde_json::to_writer_pretty(writer, fits)?;
    Ok(())
}

pub fn read_fits_json(reader: impl Read) -> Result<Vec<SinusoidFit>, TrackError> {
    Ok(serde_json::from_reader(reader)?)
}

/// Synthetic benchmark series: eight sines between about 120 Hz and 1 kHz
/// with amplitudes falling from 1 mm to 0.1 mm.
pub fn benchmark_terms() -> Vec<(f64, f64)> {
    vec![
        (1.0, 123.0),
        (0.8, 247.0),
        (0.6, 371.0),
        (0.45, 498.0),
        (0.3, 612.0),
        (0.2, 747.0),
        (0.15, 889.0),
        (0.1, 1043.0),
    ]
}

/// `Σ Aᵢ sin(2π fᵢ t)` and its time derivative.
pub fn sum_of_sines(terms: &[(f64, f64)], t: f64) -> (f64, f64) {
    terms.iter().fold((0.0, 0.0), |(y, dy), (a, f)| {
        let w = 2.0 * PI * f;
        let (s, c) = (w * t).sin_cos();
        (y + a * s, dy + a * w * c)
    })
}

/// Rounds to the nearest multiple of `step`.
pub fn quantise(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}
