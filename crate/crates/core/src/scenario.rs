//! Named, reproducible experiments built from the library modules.
//!
//! A scenario file is a JSON object whose `scenario` field picks one of the
//! built-in experiments; every other field is optional and falls back to the
//! defaults listed by [`describe`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::energy::{scaling_estimates, EnergyError, Material, ScalingParams};
use crate::field::{evaluate_field, Field, FieldPoint};
use crate::ga3::Vec3;
use crate::kinematics::{deformation_gradient, strain, Deformation, KinematicsError};
use crate::par::Execution;
use crate::stereo::{
    mexican_hat_detect, nearest_within, pair_points, quantise_pixel, render_synthetic, spread_selection,
    triangulate, Camera, DetectOptions, DotPattern, ImageRaster, PairOptions, Pixel, RenderOptions, StereoError,
};
use crate::surface::{
    principal_decomposition, Chart, Coords, Domain, Grid, Plane, RolledPlate, Sphere, TubeSquash,
};
use crate::tracks::{
    benchmark_terms, fit_tracks, quantise, read_references, read_tracks, sum_of_sines, tracks_to_deformation,
    FitOptions, PointTrack, TrackError,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown scenario `{name}`; did you mean {suggestion}?")]
    Unknown { name: String, suggestion: String },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Stereo(#[from] StereoError),
    #[error(transparent)]
    Tracks(#[from] TrackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field, reason: reason.into() }
}

fn positive(field: &'static str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn grid_ok(grid: [usize; 2]) -> Result<(), ScenarioError> {
    if grid[0] == 0 || grid[1] == 0 {
        return Err(invalid("grid", "needs at least one point per direction"));
    }
    Ok(())
}

/// Accepts and discards the `scenario` key so a parameter struct can be
/// read straight from a scenario file, keeping line numbers in errors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScenarioTag;

impl<'de> Deserialize<'de> for ScenarioTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        serde::de::IgnoredAny::deserialize(d).map(|_| ScenarioTag)
    }
}

fn default_grid() -> [usize; 2] {
    [50, 50]
}

fn default_material() -> Material {
    Material::latex()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereInflate {
    #[serde(rename = "scenario", skip_serializing)]
    pub tag: ScenarioTag,
    /// Reference radius [mm].
    pub r0: f64,
    /// Inflated radius [mm].
    pub r1: f64,
    /// Colatitude band [rad]; the poles are excluded.
    pub colatitude: [f64; 2],
    pub grid: [usize; 2],
    pub material: Material,
}

impl Default for SphereInflate {
    fn default() -> Self {
        Self {
            tag: ScenarioTag,
            r0: 3.0, r1: 4.5, colatitude: [0.2 * PI, 0.8 * PI], grid: default_grid(), material: default_material() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateBend {
    #[serde(rename = "scenario", skip_serializing)]
    pub tag: ScenarioTag,
    /// Plate extent along the rolled direction [mm].
    pub length: f64,
    /// Plate extent along the roll axis [mm].
    pub width: f64,
    /// Roll radius ρ [mm].
    pub roll_radius: f64,
    /// Stretch along the roll axis.
    pub stretch: f64,
    pub grid: [usize; 2],
    pub material: Material,
}

impl Default for PlateBend {
    fn default() -> Self {
        Self {
            tag: ScenarioTag,
            length: 12.0, width: 8.0, roll_radius: 4.0, stretch: 1.0, grid: default_grid(), material: default_material() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeSquashScenario {
    #[serde(rename = "scenario", skip_serializing)]
    pub tag: ScenarioTag,
    /// Tube radius a [mm].
    pub radius: f64,
    /// Unstrained length l₀ [mm].
    pub unstrained_length: f64,
    /// Mounted length l [mm].
    pub length: f64,
    /// Fraction of the radius lost at mid-length.
    pub collapse: f64,
    pub grid: [usize; 2],
    pub material: Material,
}

impl Default for TubeSquashScenario {
    fn default() -> Self {
        Self {
            tag: ScenarioTag,
            radius: 3.0,
            unstrained_length: 19.0,
            length: 25.0,
            collapse: 0.5,
            grid: default_grid(),
            material: default_material(),
        }
    }
}

impl TubeSquashScenario {
    pub fn stretch(&self) -> f64 {
        self.length / self.unstrained_length
    }

    pub fn chart(&self) -> TubeSquash {
        TubeSquash::new(self.radius, self.unstrained_length, self.stretch(), self.collapse)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        positive("radius", self.radius)?;
        positive("unstrained_length", self.unstrained_length)?;
        positive("length", self.length)?;
        if !(0.0..1.0).contains(&self.collapse) {
            return Err(invalid("collapse", format!("must lie in [0, 1), got {}", self.collapse)));
        }
        grid_ok(self.grid)?;
        Ok(self.material.validate()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoSynthetic {
    #[serde(rename = "scenario", skip_serializing)]
    pub tag: ScenarioTag,
    pub tube: TubeSquashScenario,
    /// Dot spacing on the unstrained tube [mm].
    pub dot_spacing: f64,
    /// Dot radius [mm].
    pub dot_radius: f64,
    /// Dot rows around the tube, centred on the side facing the cameras.
    pub rows: usize,
    /// Seed correspondences given to the pairing step.
    pub seeds: usize,
    /// Round detections to multiples of this many pixels.
    pub quantise_px: Option<f64>,
    /// Standard deviation of Gaussian noise added to detections [px].
    pub pixel_noise: f64,
    pub detect: DetectOptions,
    /// Defaults to half the imaged dot spacing.
    pub pair_radius: Option<f64>,
    pub epipolar_tolerance: f64,
    pub seed: u64,
}

impl Default for StereoSynthetic {
    fn default() -> Self {
        Self {
            tag: ScenarioTag,
            tube: TubeSquashScenario::default(),
            dot_spacing: 1.0,
            dot_radius: 0.35,
            rows: 5,
            seeds: 10,
            quantise_px: None,
            pixel_noise: 0.0,
            detect: DetectOptions::default(),
            pair_radius: None,
            epipolar_tolerance: 1.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracksReplay {
    #[serde(rename = "scenario", skip_serializing)]
    pub tag: ScenarioTag,
    /// Track CSV (`id,x1,x2,t,px,py,pz`); synthetic tracks when absent.
    pub tracks_csv: Option<PathBuf>,
    /// Reference CSV (`id,x1,x2,px,py,pz`); required with `tracks_csv`.
    pub reference_csv: Option<PathBuf>,
    /// Geometry of the synthetic tube.
    pub tube: TubeSquashScenario,
    /// Peak change of the collapse fraction during the oscillation.
    pub collapse_amplitude: f64,
    /// Dot rows around the tube for synthetic tracks.
    pub rows: usize,
    /// [Hz]
    pub sample_rate: f64,
    /// [s]
    pub duration: f64,
    /// Position quantisation of synthetic samples [mm]; 0 disables.
    pub quantise_mm: f64,
    /// Standard deviation of Gaussian noise on synthetic samples [mm].
    pub noise_mm: f64,
    pub fit: FitOptions,
    pub degree: [usize; 2],
    /// Time at which the surface is reconstructed [s].
    pub time: f64,
    pub seed: u64,
}

impl Default for TracksReplay {
    fn default() -> Self {
        Self {
            tag: ScenarioTag,
            tracks_csv: None,
            reference_csv: None,
            tube: TubeSquashScenario { grid: [30, 30], ..Default::default() },
            collapse_amplitude: 0.3,
            rows: 5,
            sample_rate: 12_500.0,
            duration: 0.1,
            quantise_mm: 0.1,
            noise_mm: 0.0,
            fit: FitOptions::default(),
            degree: [4, 4],
            time: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Scenario {
    SphereInflate(SphereInflate),
    PlateBend(PlateBend),
    TubeSquash(TubeSquashScenario),
    StereoSynthetic(StereoSynthetic),
    TracksReplay(TracksReplay),
}

pub const SCENARIO_NAMES: [&str; 5] = ["sphere-inflate", "plate-bend", "tube-squash", "stereo-synthetic", "tracks-replay"];

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SphereInflate(_) => SCENARIO_NAMES[0],
            Scenario::PlateBend(_) => SCENARIO_NAMES[1],
            Scenario::TubeSquash(_) => SCENARIO_NAMES[2],
            Scenario::StereoSynthetic(_) => SCENARIO_NAMES[3],
            Scenario::TracksReplay(_) => SCENARIO_NAMES[4],
        }
    }

    pub fn default_for(name: &str) -> Result<Self, ScenarioError> {
        Ok(match name {
            "sphere-inflate" => Scenario::SphereInflate(Default::default()),
            "plate-bend" => Scenario::PlateBend(Default::default()),
            "tube-squash" => Scenario::TubeSquash(Default::default()),
            "stereo-synthetic" => Scenario::StereoSynthetic(Default::default()),
            "tracks-replay" => Scenario::TracksReplay(Default::default()),
            other => {
                return Err(ScenarioError::Unknown { name: other.to_owned(), suggestion: suggest(other) });
            }
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        #[derive(Deserialize)]
        struct Head {
            scenario: String,
        }
        let head: Head = serde_json::from_str(text)?;
        let s = match Scenario::default_for(&head.scenario)? {
            Scenario::SphereInflate(_) => Scenario::SphereInflate(serde_json::from_str(text)?),
            Scenario::PlateBend(_) => Scenario::PlateBend(serde_json::from_str(text)?),
            Scenario::TubeSquash(_) => Scenario::TubeSquash(serde_json::from_str(text)?),
            Scenario::StereoSynthetic(_) => Scenario::StereoSynthetic(serde_json::from_str(text)?),
            Scenario::TracksReplay(_) => Scenario::TracksReplay(serde_json::from_str(text)?),
        };
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario file; relative CSV paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.into(), source })?;
        let mut s = Self::from_json(&text)?;
        if let Scenario::TracksReplay(t) = &mut s {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut t.tracks_csv, &mut t.reference_csv].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            for p in [&t.tracks_csv, &t.reference_csv].into_iter().flatten() {
                if !p.exists() {
                    return Err(invalid("tracks_csv", format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        match self {
            Scenario::SphereInflate(s) => {
                positive("r0", s.r0)?;
                positive("r1", s.r1)?;
                let [lo, hi] = s.colatitude;
                if !(0.0 < lo && lo < hi && hi < PI) {
                    return Err(invalid("colatitude", "needs 0 < lo < hi < π"));
                }
                grid_ok(s.grid)?;
                Ok(s.material.validate()?)
            }
            Scenario::PlateBend(s) => {
                positive("length", s.length)?;
                positive("width", s.width)?;
                positive("roll_radius", s.roll_radius)?;
                positive("stretch", s.stretch)?;
                if s.length >= 2.0 * PI * s.roll_radius {
                    return Err(invalid("length", "rolled plate would overlap itself"));
                }
                grid_ok(s.grid)?;
                Ok(s.material.validate()?)
            }
            Scenario::TubeSquash(s) => s.validate(),
            Scenario::StereoSynthetic(s) => {
                s.tube.validate()?;
                positive("dot_spacing", s.dot_spacing)?;
                positive("dot_radius", s.dot_radius)?;
                positive("epipolar_tolerance", s.epipolar_tolerance)?;
                if s.rows == 0 {
                    return Err(invalid("rows", "needs at least one row"));
                }
                if s.pixel_noise < 0.0 {
                    return Err(invalid("pixel_noise", "must be non-negative"));
                }
                if let Some(q) = s.quantise_px {
                    positive("quantise_px", q)?;
                }
                Ok(())
            }
            Scenario::TracksReplay(s) => {
                s.tube.validate()?;
                positive("sample_rate", s.sample_rate)?;
                positive("duration", s.duration)?;
                if s.tracks_csv.is_some() != s.reference_csv.is_some() {
                    return Err(invalid("reference_csv", "tracks_csv and reference_csv go together"));
                }
                if s.rows < 2 {
                    return Err(invalid("rows", "needs at least two rows"));
                }
                if s.quantise_mm < 0.0 || s.noise_mm < 0.0 {
                    return Err(invalid("quantise_mm", "quantisation and noise must be non-negative"));
                }
                if !(0.0..1.0).contains(&(s.tube.collapse + s.collapse_amplitude)) || s.collapse_amplitude < 0.0 {
                    return Err(invalid("collapse_amplitude", "collapse must stay within [0, 1)"));
                }
                Ok(())
            }
        }
    }

    pub fn set_grid(&mut self, n: usize) {
        let g = [n, n];
        match self {
            Scenario::SphereInflate(s) => s.grid = g,
            Scenario::PlateBend(s) => s.grid = g,
            Scenario::TubeSquash(s) => s.grid = g,
            Scenario::StereoSynthetic(s) => s.tube.grid = g,
            Scenario::TracksReplay(s) => s.tube.grid = g,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Scenario::StereoSynthetic(s) => s.seed = seed,
            Scenario::TracksReplay(s) => s.seed = seed,
            _ => {}
        }
    }
}

fn suggest(name: &str) -> String {
    let score = |candidate: &str| strsim::levenshtein(name, candidate);
    let mut names: Vec<&str> = SCENARIO_NAMES.to_vec();
    names.sort_by_key(|n| score(n));
    names.iter().take(2).map(|n| format!("`{n}`")).collect::<Vec<_>>().join(" or ")
}


/// One parameter of a scenario, for `describe`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamDoc {
    pub name: &'static str,
    pub unit: &'static str,
    pub default: Value,
    pub doc: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioDoc {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: Vec<ParamDoc>,
}

fn p(name: &'static str, unit: &'static str, default: impl Serialize, doc: &'static str) -> ParamDoc {
    ParamDoc { name, unit, default: serde_json::to_value(default).expect("plain data"), doc }
}

fn tube_params(t: &TubeSquashScenario) -> Vec<ParamDoc> {
    vec![
        p("radius", "mm", t.radius, "tube radius a"),
        p("unstrained_length", "mm", t.unstrained_length, "unstrained length l0"),
        p("length", "mm", t.length, "mounted length l; the axial stretch is l/l0"),
        p("collapse", "-", t.collapse, "fraction of the radius lost at mid-length, in [0, 1)"),
        p("grid", "points", t.grid, "cell-centred samples along (z, azimuth)"),
        p("material", "MPa, -, mm", t.material, "youngs_modulus, poisson, thickness"),
    ]
}

pub fn describe(name: &str) -> Result<ScenarioDoc, ScenarioError> {
    let doc = match Scenario::default_for(name)? {
        Scenario::SphereInflate(s) => ScenarioDoc {
            name: SCENARIO_NAMES[0],
            summary: "Sphere of radius r0 inflated to r1; pure stretch, no rotation.",
            params: vec![
                p("r0", "mm", s.r0, "reference radius"),
                p("r1", "mm", s.r1, "inflated radius"),
                p("colatitude", "rad", s.colatitude, "sampled colatitude band"),
                p("grid", "points", s.grid, "cell-centred samples along (longitude, colatitude)"),
                p("material", "MPa, -, mm", s.material, "youngs_modulus, poisson, thickness"),
            ],
        },
        Scenario::PlateBend(s) => ScenarioDoc {
            name: SCENARIO_NAMES[1],
            summary: "Flat plate rolled onto a cylinder of radius roll_radius.",
            params: vec![
                p("length", "mm", s.length, "extent along the rolled direction"),
                p("width", "mm", s.width, "extent along the roll axis"),
                p("roll_radius", "mm", s.roll_radius, "cylinder radius the plate is rolled onto"),
                p("stretch", "-", s.stretch, "stretch along the roll axis"),
                p("grid", "points", s.grid, "cell-centred samples"),
                p("material", "MPa, -, mm", s.material, "youngs_modulus, poisson, thickness"),
            ],
        },
        Scenario::TubeSquash(s) => ScenarioDoc {
            name: SCENARIO_NAMES[2],
            summary: "Pre-stretched tube clamped circular at both ends and squashed into two lobes at mid-length.",
            params: tube_params(&s),
        },
        Scenario::StereoSynthetic(s) => ScenarioDoc {
            name: SCENARIO_NAMES[3],
            summary: "Dotted squashed tube rendered by two cameras, then detected, paired and triangulated.",
            params: vec![
                p("tube", "object", &s.tube, "tube-squash geometry (see `describe tube-squash`)"),
                p("dot_spacing", "mm", s.dot_spacing, "dot pitch on the unstrained tube"),
                p("dot_radius", "mm", s.dot_radius, "dot radius"),
                p("rows", "-", s.rows, "dot rows around the side facing the cameras"),
                p("seeds", "-", s.seeds, "seed correspondences for pairing"),
                p("quantise_px", "px", s.quantise_px, "round detections to this pixel step (null: off)"),
                p("pixel_noise", "px", s.pixel_noise, "Gaussian detection noise"),
                p("detect", "object", s.detect, "sigma [px] and relative threshold of the blob detector"),
                p("pair_radius", "px", s.pair_radius, "pairing search radius (null: half the dot spacing)"),
                p("epipolar_tolerance", "px", s.epipolar_tolerance, "largest accepted epipolar distance"),
                p("seed", "-", s.seed, "random seed for pixel noise"),
            ],
        },
        Scenario::TracksReplay(s) => ScenarioDoc {
            name: SCENARIO_NAMES[4],
            summary: "Point tracks smoothed with sinusoid fits, fitted with polynomial surfaces and analysed.",
            params: vec![
                p("tracks_csv", "path", &s.tracks_csv, "id,x1,x2,t,px,py,pz; null generates synthetic tracks"),
                p("reference_csv", "path", &s.reference_csv, "id,x1,x2,px,py,pz unstrained positions"),
                p("tube", "object", &s.tube, "geometry of the synthetic tube and analysis grid"),
                p("collapse_amplitude", "-", s.collapse_amplitude, "oscillation amplitude of the collapse fraction"),
                p("rows", "-", s.rows, "dot rows for synthetic tracks"),
                p("sample_rate", "Hz", s.sample_rate, "synthetic frame rate"),
                p("duration", "s", s.duration, "synthetic recording length"),
                p("quantise_mm", "mm", s.quantise_mm, "position quantisation of synthetic samples"),
                p("noise_mm", "mm", s.noise_mm, "Gaussian noise on synthetic samples"),
                p("fit", "object", s.fit, "n_terms, with_phase, max_iterations"),
                p("degree", "-", s.degree, "polynomial surface degree per coordinate"),
                p("time", "s", s.time, "instant at which the surface is analysed"),
                p("seed", "-", s.seed, "random seed for synthetic noise"),
            ],
        },
    };
    Ok(doc)
}

/// Rows of numbers under a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), csv::Error> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Version of [`FIELD_COLUMNS`]; bumped whenever the columns change.
pub const FIELD_SCHEMA_VERSION: u32 = 1;

pub const FIELD_COLUMNS: [&str; 50] = [
    "i", "j", "x1", "x2", "px", "py", "pz",
    "lambda1", "lambda2", "strain1", "strain2",
    "strain_dir1_x", "strain_dir1_y", "strain_dir1_z", "strain_dir2_x", "strain_dir2_y", "strain_dir2_z",
    "kappa1", "kappa2",
    "curv_dir1_x", "curv_dir1_y", "curv_dir1_z", "curv_dir2_x", "curv_dir2_y", "curv_dir2_z",
    "trE2", "trE_sq", "trH2", "trH_sq", "stretch_density", "bend_density",
    "theta", "axis_x", "axis_y", "axis_z",
    "H11", "H12", "H21", "H22",
    "Hrot11", "Hrot12", "Hrot21", "Hrot22",
    "Hstretch11", "Hstretch12", "Hstretch21", "Hstretch22",
    "route_diff", "area", "reduced_accuracy",
];

fn field_row(grid: &Grid, k: usize, fp: &FieldPoint) -> Vec<f64> {
    let s = &fp.state;
    let (i, j) = grid.ij(k);
    let pos = s.spatial.frame.position;
    let e = principal_decomposition(&s.strain);
    let t = s.reference.frame.orthonormal;
    let sdir = |v: nalgebra::Vector2<f64>| t[0] * v.x + t[1] * v.y;
    let b = principal_decomposition(&s.spatial_curvature);
    let so = s.spatial.frame.orthonormal;
    let cdir = |v: nalgebra::Vector2<f64>| so[0] * v.x + so[1] * v.y;
    let log = s.polar.rotor.log();
    let theta = log.bivector.magnitude();
    let axis = if theta > 0.0 { log.bivector.axis() / theta } else { Vec3::zeros() };
    let h = s.h_classical;
    let hr = s.h_rotor.total;
    let hs = s.h_rotor.stretch_term;
    let (d1, d2) = (sdir(e.vectors[0]), sdir(e.vectors[1]));
    let (c1, c2) = (cdir(b.vectors[0]), cdir(b.vectors[1]));
    vec![
        i as f64, j as f64, s.coords[0], s.coords[1], pos.x, pos.y, pos.z,
        (1.0 + 2.0 * e.values[0]).sqrt(), (1.0 + 2.0 * e.values[1]).sqrt(), e.values[0], e.values[1],
        d1.x, d1.y, d1.z, d2.x, d2.y, d2.z,
        b.values[0], b.values[1],
        c1.x, c1.y, c1.z, c2.x, c2.y, c2.z,
        fp.strain_invariants.0, fp.strain_invariants.1, fp.curvature_invariants.0, fp.curvature_invariants.1,
        fp.energy.stretching, fp.energy.bending,
        theta, axis.x, axis.y, axis.z,
        h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)],
        hr[(0, 0)], hr[(0, 1)], hr[(1, 0)], hr[(1, 1)],
        hs[(0, 0)], hs[(0, 1)], hs[(1, 0)], hs[(1, 1)],
        fp.route_difference(), fp.cell_area,
        f64::from(u8::from(s.reference.reduced_accuracy || s.spatial.reduced_accuracy)),
    ]
}

pub fn field_table(field: &Field) -> Table {
    Table {
        header: FIELD_COLUMNS.to_vec(),
        rows: field.points.iter().enumerate().map(|(k, fp)| field_row(&field.grid, k, fp)).collect(),
    }
}

/// Everything a run produces, keyed by output file name.
#[derive(Clone, Debug, Default)]
pub struct ScenarioOutput {
    pub summary: Value,
    pub tables: BTreeMap<String, Table>,
    pub images: BTreeMap<String, ImageRaster>,
    pub documents: BTreeMap<String, Value>,
    /// Files written verbatim.
    pub raw: BTreeMap<String, Vec<u8>>,
}

impl ScenarioOutput {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut json_file = |name: &str, v: &Value| -> Result<(), ScenarioError> {
            let path = dir.join(name);
            let mut text = serde_json::to_string_pretty(v)?;
            text.push('\n');
            std::fs::write(&path, text)?;
            written.push(path);
            Ok(())
        };
        json_file("summary.json", &self.summary)?;
        for (name, v) in &self.documents {
            json_file(name, v)?;
        }
        for (name, t) in &self.tables {
            let path = dir.join(name);
            t.write_csv(File::create(&path)?)?;
            written.push(path);
        }
        for (name, img) in &self.images {
            let path = dir.join(name);
            img.write_pgm(std::io::BufWriter::new(File::create(&path)?))?;
            written.push(path);
        }
        for (name, bytes) in &self.raw {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn run(scenario: &Scenario, exec: Execution) -> Result<ScenarioOutput, ScenarioError> {
    scenario.validate()?;
    match scenario {
        Scenario::SphereInflate(s) => run_sphere(s, exec),
        Scenario::PlateBend(s) => run_plate(s, exec),
        Scenario::TubeSquash(s) => run_tube(s, exec),
        Scenario::StereoSynthetic(s) => run_stereo(s, exec),
        Scenario::TracksReplay(s) => run_tracks(s, exec),
    }
}

fn field_output(name: &str, config: &impl Serialize, field: &Field, checks: Value) -> ScenarioOutput {
    let mut out = ScenarioOutput {
        summary: json!({
            "scenario": name,
            "config": config,
            "field_schema_version": FIELD_SCHEMA_VERSION,
            "field": field.summary,
            "checks": checks,
        }),
        ..Default::default()
    };
    out.tables.insert("field.csv".into(), field_table(field));
    out
}

fn max_over(field: &Field, f: impl Fn(&FieldPoint) -> f64) -> f64 {
    field.points.iter().map(f).fold(0.0, f64::max)
}

pub fn sphere_deformation(s: &SphereInflate) -> Deformation {
    let [lo, hi] = s.colatitude;
    Deformation::new(Sphere::new(s.r0).with_colatitude(lo, hi), Sphere::new(s.r1).with_colatitude(lo, hi))
}

fn run_sphere(s: &SphereInflate, exec: Execution) -> Result<ScenarioOutput, ScenarioError> {
    let def = sphere_deformation(s);
    let field = evaluate_field(&def, &Grid::new(def.domain(), s.grid), &s.material, exec)?;
    let expected = (s.r1 - s.r0) / (s.r0 * s.r0);
    let checks = json!({
        "expected_H": expected,
        "max_H_error": max_over(&field, |p| (p.state.h_classical - crate::surface::Tensor2::identity() * expected).amax()),
        "max_rotation_term": max_over(&field, |p| p.state.h_rotor.rotation_term.amax()),
    });
    Ok(field_output(SCENARIO_NAMES[0], s, &field, checks))
}

pub fn plate_deformation(s: &PlateBend) -> Deformation {
    let domain = Domain::new([-s.length / 2.0, -s.width / 2.0], [s.length / 2.0, s.width / 2.0]);
    Deformation::new(Plane::new(domain), RolledPlate::new(s.roll_radius, domain).with_stretch(s.stretch))
}

fn run_plate(s: &PlateBend, exec: Execution) -> Result<ScenarioOutput, ScenarioError> {
    let def = plate_deformation(s);
    let field = evaluate_field(&def, &Grid::new(def.domain(), s.grid), &s.material, exec)?;
    let k = 1.0 / s.roll_radius;
    let checks = json!({
        "expected_principal_H": [k, 0.0],
        "max_principal_H_relative_error": max_over(&field, |p| {
            let v = principal_decomposition(&p.state.h_classical).values;
            (v[0] - k).abs().max(v[1].abs()) / k
        }),
        "max_stretch_term": max_over(&field, |p| p.state.h_rotor.stretch_term.amax()),
    });
    Ok(field_output(SCENARIO_NAMES[1], s, &field, checks))
}

pub fn tube_deformation(s: &TubeSquashScenario) -> Deformation {
    let tube = s.chart();
    Deformation::new(tube.reference(), tube)
}

pub fn tube_scaling(s: &TubeSquashScenario) -> Result<crate::energy::ScalingReport, ScenarioError> {
    Ok(scaling_estimates(&ScalingParams {
        radius: s.radius,
        unstrained_length: s.unstrained_length,
        stretch: s.stretch(),
        material: s.material,
    })?)
}

fn run_tube(s: &TubeSquashScenario, exec: Execution) -> Result<ScenarioOutput, ScenarioError> {
    let def = tube_deformation(s);
    let field = evaluate_field(&def, &Grid::new(def.domain(), s.grid), &s.material, exec)?;
    let scaling = tube_scaling(s)?;
    let f = &field.summary;
    let checks = json!({
        "trE2_over_scaling": f.mean_tr_e2 / scaling.tr_e2,
        "trH2_over_scaling": f.mean_tr_h2 / scaling.tr_h2,
        "stretch_over_bend": f.stretching_energy / f.bending_energy,
    });
    let mut out = field_output(SCENARIO_NAMES[2], s, &field, checks);
    out.summary["scaling"] = serde_json::to_value(scaling)?;
    Ok(out)
}

/// Result for one dot of the stereo scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StereoDot {
    pub label: usize,
    pub coords: Coords,
    pub pixels: [Pixel; 2],
    pub truth: Vec3,
    pub reconstructed: Vec3,
    pub error: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StereoSummary {
    pub dots: usize,
    pub visible_both: usize,
    pub detections: [usize; 2],
    pub seeds: usize,
    pub pairs: usize,
    pub correct_pairs: usize,
    /// Correct pairs over all pairs.
    pub pairing_accuracy: f64,
    /// Pairs over dots visible in both views.
    pub pairing_completeness: f64,
    pub epipolar_rejections: usize,
    /// [mm]
    pub rms_error: f64,
    /// [mm]
    pub max_error: f64,
    /// [mm]
    pub max_gap: f64,
}

pub struct StereoRun {
    pub cameras: [Camera; 2],
    pub images: [ImageRaster; 2],
    pub detections: [Vec<Pixel>; 2],
    pub dots: Vec<StereoDot>,
    pub summary: StereoSummary,
}

pub fn stereo_pattern(s: &StereoSynthetic) -> DotPattern {
    let t = &s.tube;
    let along = (t.unstrained_length / s.dot_spacing).floor().max(1.0) as usize;
    let dphi = s.dot_spacing / t.radius;
    let origin = [0.5 * (t.unstrained_length - (along - 1) as f64 * s.dot_spacing), -dphi * (s.rows - 1) as f64 / 2.0];
    DotPattern::grid(origin, [s.dot_spacing, dphi], [along, s.rows], s.dot_radius)
}

pub fn run_stereo_pipeline(s: &StereoSynthetic, exec: Execution) -> Result<StereoRun, ScenarioError> {
    let tube = s.tube.chart();
    let target = Vec3::new(0.0, 0.0, 0.5 * s.tube.length);
    let cams = Camera::replica_pair(target);
    let pattern = stereo_pattern(s);
    // The chart normal points into the tube; the dots are on the outside.
    let ropts = RenderOptions { normal_side: -1.0, ..Default::default() };
    let renders = render_synthetic([&cams[0], &cams[1]], &tube, &pattern, &ropts, exec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut detections: [Vec<Pixel>; 2] = [vec![], vec![]];
    for (v, r) in renders.iter().enumerate() {
        detections[v] = mexican_hat_detect(&r.image, &s.detect, exec)?
            .iter()
            .map(|d| {
                let mut p = d.pixel();
                if s.pixel_noise > 0.0 {
                    p = p.map(|x| x + s.pixel_noise * standard_normal(&mut rng));
                }
                if let Some(q) = s.quantise_px {
                    p = quantise_pixel(p, q);
                }
                p
            })
            .collect();
    }
    // Ground truth: each detection takes the label of the rendered dot it lies on.
    let label_of = |v: usize| -> Vec<Option<usize>> {
        let truth: Vec<Pixel> = renders[v].dots.iter().map(|d| d.pixel).collect();
        nearest_within(&detections[v], &truth, 2.0).into_iter().map(|m| m.map(|k| renders[v].dots[k].label)).collect()
    };
    let labels = [label_of(0), label_of(1)];
    let index2: BTreeMap<usize, usize> = labels[1].iter().enumerate().filter_map(|(j, l)| l.map(|l| (l, j))).collect();
    let common: Vec<(usize, usize)> = labels[0]
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.and_then(|l| index2.get(&l).map(|&j| (i, j))))
        .collect();
    let common_px: Vec<Pixel> = common.iter().map(|c| detections[0][c.0]).collect();
    let seeds: Vec<(usize, usize)> = spread_selection(&common_px, s.seeds).into_iter().map(|k| common[k]).collect();

    let spacing_px = s.dot_spacing * cams[0].focal_px() / (cams[0].position - target).norm();
    let popts = PairOptions {
        radius: s.pair_radius.unwrap_or(0.5 * spacing_px),
        epipolar_tolerance: s.epipolar_tolerance,
        ..Default::default()
    };
    let pairing = pair_points(&detections[0], &detections[1], &seeds, [&cams[0], &cams[1]], &popts)?;

    let visible: BTreeMap<usize, Vec3> = renders[0].dots.iter().map(|d| (d.label, d.world)).collect();
    let mut dots = Vec::new();
    let mut correct = 0;
    for &(i, j) in &pairing.pairs {
        let (Some(l1), Some(l2)) = (labels[0][i], labels[1][j]) else { continue };
        if l1 != l2 {
            continue;
        }
        correct += 1;
        let tri = triangulate(&cams[0], &cams[1], detections[0][i], detections[1][j])?;
        let truth = visible[&l1];
        dots.push(StereoDot {
            label: l1,
            coords: pattern.coords[l1],
            pixels: [detections[0][i], detections[1][j]],
            truth,
            reconstructed: tri.point,
            error: (tri.point - truth).norm(),
            gap: tri.gap,
        });
    }
    dots.sort_by_key(|d| d.label);
    let n = dots.len().max(1) as f64;
    let summary = StereoSummary {
        dots: pattern.coords.len(),
        visible_both: common.len(),
        detections: [detections[0].len(), detections[1].len()],
        seeds: seeds.len(),
        pairs: pairing.pairs.len(),
        correct_pairs: correct,
        pairing_accuracy: correct as f64 / pairing.pairs.len().max(1) as f64,
        pairing_completeness: pairing.pairs.len() as f64 / common.len().max(1) as f64,
        epipolar_rejections: pairing.epipolar_rejections.len(),
        rms_error: (dots.iter().map(|d| d.error * d.error).sum::<f64>() / n).sqrt(),
        max_error: dots.iter().map(|d| d.error).fold(0.0, f64::max),
        max_gap: dots.iter().map(|d| d.gap).fold(0.0, f64::max),
    };
    let [r0, r1] = renders;
    Ok(StereoRun { cameras: cams, images: [r0.image, r1.image], detections, dots, summary })
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub const STEREO_COLUMNS: [&str; 17] = [
    "label", "x1", "x2", "u1", "v1", "u2", "v2", "truth_x", "truth_y", "truth_z", "rec_x", "rec_y", "rec_z",
    "error", "gap", "dx", "dz",
];

fn run_stereo(s: &StereoSynthetic, exec: Execution) -> Result<ScenarioOutput, ScenarioError> {
    let run = run_stereo_pipeline(s, exec)?;
    let rows = run
        .dots
        .iter()
        .map(|d| {
            let diff = d.reconstructed - d.truth;
            vec![
                d.label as f64, d.coords[0], d.coords[1], d.pixels[0][0], d.pixels[0][1], d.pixels[1][0], d.pixels[1][1],
                d.truth.x, d.truth.y, d.truth.z, d.reconstructed.x, d.reconstructed.y, d.reconstructed.z,
                d.error, d.gap, diff.x, diff.z,
            ]
        })
        .collect();
    let mut out = ScenarioOutput {
        summary: json!({ "scenario": SCENARIO_NAMES[3], "config": s, "stereo": run.summary }),
        ..Default::default()
    };
    out.tables.insert("dots.csv".into(), Table { header: STEREO_COLUMNS.to_vec(), rows });
    out.documents.insert("cameras.json".into(), serde_json::to_value(run.cameras)?);
    out.documents.insert("detections.json".into(), serde_json::to_value(&run.detections)?);
    let [a, b] = run.images;
    out.images.insert("left.pgm".into(), a);
    out.images.insert("right.pgm".into(), b);
    Ok(out)
}

/// Collapse fraction of the synthetic oscillation at time `t`: the benchmark
/// eight-sine signal scaled to peak `amplitude`.
pub fn oscillating_collapse(s: &TracksReplay, t: f64) -> f64 {
    let terms = benchmark_terms();
    let total: f64 = terms.iter().map(|(a, _)| a).sum();
    s.tube.collapse + s.collapse_amplitude * sum_of_sines(&terms, t).0 / total
}

/// Tube chart at time `t` of the synthetic oscillation.
pub fn oscillating_tube(s: &TracksReplay, t: f64) -> TubeSquash {
    TubeSquash { collapse: oscillating_collapse(s, t), ..s.tube.chart() }
}

/// Tracks of a dot grid on the oscillating tube. Dots carry grid
/// coordinates `(i, j)` scaled by a 1 mm spacing.
pub fn synthetic_tracks(s: &TracksReplay) -> Vec<PointTrack> {
    let t = &s.tube;
    let n_along = t.unstrained_length.floor() as usize;
    let z0 = 0.5 * (t.unstrained_length - (n_along - 1) as f64);
    let n = (s.duration * s.sample_rate).round() as usize;
    let times: Vec<f64> = (0..n).map(|k| k as f64 / s.sample_rate).collect();
    let charts: Vec<TubeSquash> = times.iter().map(|&tt| oscillating_tube(s, tt)).collect();
    let reference = t.chart().reference();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut tracks = Vec::new();
    for i in 0..n_along {
        for j in 0..s.rows {
            let label = [i as f64, j as f64 - (s.rows - 1) as f64 / 2.0];
            let c = [z0 + label[0], label[1] / t.radius];
            let positions = charts
                .iter()
                .map(|ch| {
                    ch.position(c).map(|x| {
                        let x = if s.noise_mm > 0.0 { x + s.noise_mm * standard_normal(&mut rng) } else { x };
                        if s.quantise_mm > 0.0 { quantise(x, s.quantise_mm) } else { x }
                    })
                })
                .collect();
            tracks.push(PointTrack {
                id: (i * s.rows + j) as u64,
                coords: label,
                times: times.clone(),
                positions,
                reference: Some(reference.position(c)),
            });
        }
    }
    tracks
}

/// Analytic deformation of the synthetic oscillation at time `t` in the
/// track label coordinates.
pub fn synthetic_deformation(s: &TracksReplay, t: f64) -> Deformation {
    let tube = oscillating_tube(s, t);
    let n_along = s.tube.unstrained_length.floor();
    let z0 = 0.5 * (s.tube.unstrained_length - (n_along - 1.0));
    let a = s.tube.radius;
    let domain = Domain::new([0.0, -a * PI * 0.9], [n_along - 1.0, a * PI * 0.9]);
    let to_tube = move |c: Coords| [z0 + c[0], c[1] / a];
    let reference = tube.reference();
    let r = crate::surface::FiniteDifferenceChart::new(move |c: Coords| reference.position(to_tube(c)), domain);
    let sp = crate::surface::FiniteDifferenceChart::new(move |c: Coords| tube.position(to_tube(c)), domain);
    Deformation::from_arcs(Arc::new(r), Arc::new(sp))
}

pub const TRACK_COLUMNS: [&str; 7] = ["id", "x1", "x2", "residual_x", "residual_y", "residual_z", "residual_rms"];

fn run_tracks(s: &TracksReplay, exec: Execution) -> Result<ScenarioOutput, ScenarioError> {
    let synthetic = s.tracks_csv.is_none();
    let tracks = match (&s.tracks_csv, &s.reference_csv) {
        (Some(tp), Some(rp)) => {
            let mut tracks = read_tracks(BufReader::new(File::open(tp)?))?;
            read_references(BufReader::new(File::open(rp)?), &mut tracks)?;
            tracks
        }
        _ => synthetic_tracks(s),
    };
    let fits = fit_tracks(&tracks, &s.fit, exec)?;
    let (def, [rsurf, ssurf]) = tracks_to_deformation(&tracks, &fits, s.time, s.degree)?;
    let grid = Grid::new(def.domain(), s.tube.grid);
    let field = evaluate_field(&def, &grid, &s.tube.material, exec)?;

    let mut checks = json!({
        "reference_surface_residual": rsurf.residual_rms,
        "spatial_surface_residual": ssurf.residual_rms,
        "max_fit_residual": fits.iter().map(|f| f.residual_rms).fold(0.0, f64::max),
    });
    if synthetic {
        let truth = synthetic_deformation(s, s.time);
        let dom = grid.domain;
        let interior = |c: Coords| {
            (0..2).all(|k| (c[k] - 0.5 * (dom.min[k] + dom.max[k])).abs() <= 0.4 * dom.span(k))
        };
        let (mut worst, mut worst_inner, mut scale) = (0.0f64, 0.0f64, 0.0f64);
        for fp in &field.points {
            let e = strain(&deformation_gradient(&truth, fp.state.coords)?);
            let d = (fp.state.strain - e).amax();
            worst = worst.max(d);
            if interior(fp.state.coords) {
                worst_inner = worst_inner.max(d);
            }
            scale = scale.max(e.amax());
        }
        checks["strain_relative_error"] = json!(worst / scale);
        checks["interior_strain_relative_error"] = json!(worst_inner / scale);
        checks["collapse_at_time"] = json!(oscillating_collapse(s, s.time));
    }
    let rows = tracks
        .iter()
        .zip(&fits)
        .map(|(t, f)| {
            let c = &f.components;
            vec![
                t.id as f64, t.coords[0], t.coords[1],
                c[0].residual_rms, c[1].residual_rms, c[2].residual_rms, f.residual_rms,
            ]
        })
        .collect();
    let mut out = field_output(SCENARIO_NAMES[4], s, &field, checks);
    out.summary["scaling"] = serde_json::to_value(tube_scaling(&s.tube)?)?;
    out.tables.insert("fits.csv".into(), Table { header: TRACK_COLUMNS.to_vec(), rows });
    out.documents.insert("fits.json".into(), serde_json::to_value(&fits)?);
    out.documents.insert("surfaces.json".into(), json!({ "reference": rsurf, "spatial": ssurf }));
    if synthetic {
        let mut tbuf = Vec::new();
        crate::tracks::write_tracks(&mut tbuf, &tracks)?;
        let mut rbuf = Vec::new();
        crate::tracks::write_references(&mut rbuf, &tracks)?;
        out.summary["synthetic_tracks"] = json!({ "tracks": tracks.len(), "samples": tracks[0].times.len() });
        out.raw.insert("tracks.csv".into(), tbuf);
        out.raw.insert("reference.csv".into(), rbuf);
    }
    Ok(out)
}
