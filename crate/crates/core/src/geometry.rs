//! Array geometry, candidate-direction grids, pairwise delays and transfer models.
//!
//! Conventions used throughout the crate:
//!
//! * Azimuth is measured in the array plane from +x toward +y, elevation from
//!   that plane toward +z. A direction `(elevation θ, azimuth φ)` maps to the
//!   unit vector `(cos θ cos φ, cos θ sin φ, sin θ)`.
//! * Microphone pairs `(m, m')` with `m < m'` are enumerated lexicographically:
//!   `(0,1), (0,2), …, (0,M−1), (1,2), …, (M−2,M−1)`.
//! * STFT bin `k` maps to physical frequency `f_k = k · fs / frame_length` and
//!   to wavenumber `2π f_k / c`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Speed of sound in air at roughly 20 °C, m/s.
pub const DEFAULT_SOUND_SPEED: f64 = 343.0;

/// A 3-D point or direction in meters / dimensionless units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// What a steering operation points at: a near-field point at an absolute
/// position, or a far-field plane wave from a unit direction.
#[derive(Debug, Clone, Copy)]
pub enum Target {
    /// Near-field point source position in meters.
    Point(Vec3),
    /// Far-field arrival direction; must be a unit vector.
    Direction(Vec3),
}

/// Microphone positions plus the sound speed they share.
#[derive(Debug, Clone)]
pub struct MicArray {
    positions: Vec<Vec3>,
    sound_speed: f64,
    pairs: Vec<(usize, usize)>,
}

impl MicArray {
    /// Builds an array from explicit positions. Requires at least two
    /// microphones, all distinct, and a positive sound speed.
    pub fn new(positions: Vec<Vec3>, sound_speed: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::config("microphone array needs at least 2 elements"));
        }
        if !(sound_speed > 0.0) {
            return Err(Error::config("sound speed must be positive"));
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if positions[i] == positions[j] {
                    return Err(Error::config(format!(
                        "microphones {i} and {j} share position {}",
                        positions[i]
                    )));
                }
            }
        }
        let m = positions.len();
        let pairs = (0..m)
            .flat_map(|a| ((a + 1)..m).map(move |b| (a, b)))
            .collect();
        Ok(Self {
            positions,
            sound_speed,
            pairs,
        })
    }

    /// Builds the array with [`DEFAULT_SOUND_SPEED`].
    pub fn with_default_sound_speed(positions: Vec<Vec3>) -> Result<Self> {
        Self::new(positions, DEFAULT_SOUND_SPEED)
    }

    /// Built-in 16-element planar grid: 4×4, 42 mm pitch, centered at the
    /// origin in the x–z plane (a wall-mounted array facing +y). With this
    /// orientation the front-back mirror direction of every hemisphere grid
    /// point (azimuth in [0°, 180°]) lies outside the grid, so elevation
    /// stays observable.
    pub fn planar16() -> Self {
        const PITCH: f64 = 0.042;
        let mut positions = Vec::with_capacity(16);
        for row in 0..4 {
            for col in 0..4 {
                positions.push(Vec3::new(
                    (col as f64 - 1.5) * PITCH,
                    0.0,
                    (row as f64 - 1.5) * PITCH,
                ));
            }
        }
        Self::new(positions, DEFAULT_SOUND_SPEED).expect("static geometry is valid")
    }

    /// Parses a plain-text geometry description: one microphone per line,
    /// whitespace-separated `x y z` in meters. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn from_text(text: &str, sound_speed: f64) -> Result<Self> {
        let mut positions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "geometry line {}: expected 3 coordinates, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut coords = [0.0; 3];
            for (slot, field) in coords.iter_mut().zip(&fields) {
                *slot = field.parse::<f64>().map_err(|e| {
                    Error::Format(format!("geometry line {}: {e}", lineno + 1))
                })?;
            }
            positions.push(Vec3::new(coords[0], coords[1], coords[2]));
        }
        Self::new(positions, sound_speed)
    }

    pub fn n_mics(&self) -> usize {
        self.positions.len()
    }

    /// Number of unordered microphone pairs, `M(M−1)/2`.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn position(&self, m: usize) -> Vec3 {
        self.positions[m]
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    /// Pair enumeration in the documented lexicographic order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn centroid(&self) -> Vec3 {
        let mut acc = Vec3::default();
        for &p in &self.positions {
            acc = acc + p;
        }
        acc * (1.0 / self.positions.len() as f64)
    }
}

/// One candidate direction of arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub unit: Vec3,
}

impl GridPoint {
    pub fn new(elevation_deg: f64, azimuth_deg: f64) -> Self {
        let el = elevation_deg.to_radians();
        let az = azimuth_deg.to_radians();
        Self {
            elevation_deg,
            azimuth_deg,
            unit: Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()),
        }
    }
}

/// An ordered set of candidate directions, elevation-major then azimuth.
#[derive(Debug, Clone)]
pub struct DoaGrid {
    points: Vec<GridPoint>,
    elevation_step_deg: f64,
    azimuth_step_deg: f64,
    n_elevation: usize,
    n_azimuth: usize,
}

fn steps_in_range(step: f64, range: f64) -> Result<usize> {
    if !(step > 0.0) {
        return Err(Error::config("grid step must be positive"));
    }
    let n = range / step;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::config(format!(
            "step {step}° does not evenly divide {range}°"
        )));
    }
    Ok(n.round() as usize)
}

/// Hemispherical grid spanning elevation [−90°, 90°] and azimuth [0°, 180°],
/// both endpoint-inclusive. Both steps must divide 180° evenly.
pub fn build_doa_grid(elevation_step_deg: f64, azimuth_step_deg: f64) -> Result<DoaGrid> {
    build_grid_spans(elevation_step_deg, azimuth_step_deg, 180.0, true)
}

/// Full-sphere variant for non-planar arrays: azimuth spans [0°, 360°) with
/// the duplicate 360° column dropped.
pub fn build_full_sphere_grid(elevation_step_deg: f64, azimuth_step_deg: f64) -> Result<DoaGrid> {
    build_grid_spans(elevation_step_deg, azimuth_step_deg, 360.0, false)
}

fn build_grid_spans(
    elevation_step_deg: f64,
    azimuth_step_deg: f64,
    azimuth_range_deg: f64,
    azimuth_inclusive: bool,
) -> Result<DoaGrid> {
    let n_elevation = steps_in_range(elevation_step_deg, 180.0)? + 1;
    let mut n_azimuth = steps_in_range(azimuth_step_deg, azimuth_range_deg)?;
    if azimuth_inclusive {
        n_azimuth += 1;
    }
    let mut points = Vec::with_capacity(n_elevation * n_azimuth);
    for ei in 0..n_elevation {
        let el = -90.0 + ei as f64 * elevation_step_deg;
        for ai in 0..n_azimuth {
            let az = ai as f64 * azimuth_step_deg;
            points.push(GridPoint::new(el, az));
        }
    }
    Ok(DoaGrid {
        points,
        elevation_step_deg,
        azimuth_step_deg,
        n_elevation,
        n_azimuth,
    })
}

impl DoaGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, n: usize) -> &GridPoint {
        &self.points[n]
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn elevation_step_deg(&self) -> f64 {
        self.elevation_step_deg
    }

    pub fn azimuth_step_deg(&self) -> f64 {
        self.azimuth_step_deg
    }

    pub fn n_elevation(&self) -> usize {
        self.n_elevation
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_azimuth
    }

    /// Grid index of the point nearest (great-circle) to `direction`.
    pub fn nearest(&self, direction: Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = p.unit.dot(direction);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        best
    }
}

/// Time difference of arrival (seconds) at pair `(m, m')` for `target`.
///
/// Near field: `(‖y−x_m‖ − ‖y−x_m'‖)/c`. Far field: `((x_m − x_m')·ŷ)/c`.
/// Antisymmetric under pair swap.
pub fn tdoa(array: &MicArray, pair: (usize, usize), target: Target) -> Result<f64> {
    let xm = array.position(pair.0);
    let xmp = array.position(pair.1);
    let c = array.sound_speed();
    match target {
        Target::Point(y) => {
            let dm = (y - xm).norm();
            let dmp = (y - xmp).norm();
            if dm == 0.0 || dmp == 0.0 {
                return Err(Error::domain(format!(
                    "near-field target {y} coincides with a microphone"
                )));
            }
            Ok((dm - dmp) / c)
        }
        Target::Direction(dir) => Ok((xm - xmp).dot(dir) / c),
    }
}

/// Free-field Green's function from `target` to a microphone at `mic`.
///
/// Near field: `e^{jk‖x−y‖} / (4π‖x−y‖)`. Far field: `e^{−jk ŷ·x}`, which has
/// unit magnitude.
pub fn green(target: Target, mic: Vec3, wavenumber: f64) -> Result<Complex64> {
    if wavenumber < 0.0 {
        return Err(Error::domain("wavenumber must be nonnegative"));
    }
    match target {
        Target::Point(y) => {
            let r = (mic - y).norm();
            if r == 0.0 {
                return Err(Error::Singularity(format!(
                    "near-field candidate {y} coincides with microphone at {mic}"
                )));
            }
            Ok(Complex64::from_polar(1.0 / (4.0 * PI * r), wavenumber * r))
        }
        Target::Direction(dir) => Ok(Complex64::from_polar(1.0, -wavenumber * dir.dot(mic))),
    }
}

/// Relative transfer function of a pair at explicit positions:
/// `H = G(x_m) · conj(G(x_m'))`. Unit magnitude in the far field.
pub fn rtf_at(target: Target, mic_a: Vec3, mic_b: Vec3, wavenumber: f64) -> Result<Complex64> {
    Ok(green(target, mic_a, wavenumber)? * green(target, mic_b, wavenumber)?.conj())
}

/// Relative transfer function of array pair `(m, m')`.
pub fn rtf(
    array: &MicArray,
    pair: (usize, usize),
    target: Target,
    wavenumber: f64,
) -> Result<Complex64> {
    rtf_at(target, array.position(pair.0), array.position(pair.1), wavenumber)
}

/// Recovers the far-field pair TDOA from its relative transfer function at a
/// single frequency: `τ = −arg(H) / (2πf)`.
///
/// Only valid while the phase has not wrapped, i.e. `|2πfτ| < π`; callers
/// wanting delays near or beyond that bound must lower the probe frequency.
pub fn tdoa_from_rtf(h: Complex64, frequency_hz: f64) -> Result<f64> {
    let mag = h.norm();
    if (mag - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "RTF magnitude {mag} is not unit; far-field input required"
        )));
    }
    if frequency_hz <= 0.0 {
        return Err(Error::domain("frequency must be positive"));
    }
    Ok(-h.arg() / (2.0 * PI * frequency_hz))
}

/// Physical frequency of STFT bin `k` in Hz.
pub fn bin_frequency_hz(bin: usize, sample_rate: f64, frame_length: usize) -> f64 {
    bin as f64 * sample_rate / frame_length as f64
}

/// Acoustic wavenumber (rad/m) of a frequency.
pub fn wavenumber(frequency_hz: f64, sound_speed: f64) -> f64 {
    2.0 * PI * frequency_hz / sound_speed
}
