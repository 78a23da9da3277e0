//! Ground-state populations across the inhomogeneous line and the absorption
//! spectra they produce.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::levels::{HyperfineScheme, TransitionLabel};
use crate::{Error, Result};

/// Uniform frequency axis. A grid always holds at least one point; grids built
/// with [`SpectralGrid::new`] hold at least two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    start: f64,
    step: f64,
    len: usize,
}

/// Serialized form of a grid in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nu_min: f64,
    pub nu_max: f64,
    pub step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nu_min: -60.0,
            nu_max: 60.0,
            step: 0.01,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(self.nu_min, self.nu_max, self.step)
    }
}

impl SpectralGrid {
    pub fn new(nu_min: f64, nu_max: f64, step: f64) -> Result<Self> {
        if !(nu_min.is_finite() && nu_max.is_finite() && nu_min < nu_max) {
            return Err(Error::InvalidGrid(format!("need nu_min < nu_max, got [{nu_min}, {nu_max}]")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        let intervals = ((nu_max - nu_min) / step + 1e-6).floor() as usize;
        Ok(Self {
            start: nu_min,
            step,
            len: intervals.max(1) + 1,
        })
    }

    /// A grid of `n` points spanning `[nu_min, nu_max]`, or the midpoint when `n == 1`.
    pub fn with_points(nu_min: f64, nu_max: f64, n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::InvalidGrid("a grid needs at least one point".into())),
            1 => Ok(Self::single(0.5 * (nu_min + nu_max))),
            _ => {
                let grid = Self::new(nu_min, nu_max, (nu_max - nu_min) / (n - 1) as f64)?;
                Ok(Self { len: n, ..grid })
            }
        }
    }

    pub fn single(nu: f64) -> Self {
        Self {
            start: nu,
            step: 1.0,
            len: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn nu_min(&self) -> f64 {
        self.start
    }

    pub fn nu_max(&self) -> f64 {
        self.nu(self.len - 1)
    }

    pub fn nu(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    /// Fractional index of `nu`.
    pub fn position(&self, nu: f64) -> f64 {
        (nu - self.start) / self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.nu(i))
    }

    /// Index range of points inside `[lo, hi]` (inclusive, with a small tolerance).
    pub fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let tol = 1e-6;
        let first = self.position(lo) - tol;
        let last = self.position(hi) + tol;
        let first = first.ceil().max(0.0) as usize;
        let last = if last < 0.0 { return 0..0 } else { last.floor() as usize };
        first..(last + 1).min(self.len).max(first)
    }

    pub fn config(&self) -> GridConfig {
        GridConfig {
            nu_min: self.nu_min(),
            nu_max: self.nu_max(),
            step: self.step,
        }
    }
}

/// How a single transition's depth is spread over the frequency axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lineshape {
    /// Deposit into the two nearest bins with linear weights.
    #[default]
    Interpolated,
    /// Area-normalised Lorentzian integrated over each bin.
    Lorentzian { fwhm_khz: f64 },
}

/// Ground-level occupations of every ion class in the simulated window.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationField {
    grid: SpectralGrid,
    occupations: Vec<[f64; 3]>,
    density: Vec<f64>,
    background_depth: f64,
}

impl PopulationField {
    pub fn new(grid: SpectralGrid, occupations: Vec<[f64; 3]>, density: Vec<f64>) -> Result<Self> {
        if occupations.len() != grid.len() || density.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field arrays must have {} bins (got {} occupations, {} densities)",
                grid.len(),
                occupations.len(),
                density.len()
            )));
        }
        for (i, occ) in occupations.iter().enumerate() {
            let sum: f64 = occ.iter().sum();
            if occ.iter().any(|p| !(-1e-12..=1.0 + 1e-12).contains(p)) || sum > 1.0 + 1e-9 {
                return Err(Error::InvalidParameter(format!("occupation {occ:?} in bin {i}")));
            }
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidParameter("class density must be finite and >= 0".into()));
        }
        Ok(Self {
            grid,
            occupations,
            density,
            background_depth: 0.0,
        })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn occupations(&self) -> &[[f64; 3]] {
        &self.occupations
    }

    pub(crate) fn occupations_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.occupations
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Flat depth not attributed to any transition (off-resonant excitation).
    pub fn background_depth(&self) -> f64 {
        self.background_depth
    }

    pub fn set_background_depth(&mut self, depth: f64) {
        self.background_depth = depth.max(0.0);
    }

    /// Density-weighted sum over all bins and levels.
    pub fn total_population(&self) -> f64 {
        // Kahan summation keeps the conservation check meaningful at 1e-12.
        let mut sum = 0.0;
        let mut carry = 0.0;
        for (occ, rho) in self.occupations.iter().zip(&self.density) {
            let y = rho * (occ[0] + occ[1] + occ[2]) - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// Depth of the untouched line when every class is equally spread over the
    /// three ground levels.
    pub fn nominal_depth(&self, scheme: &HyperfineScheme) -> f64 {
        let rho = self.density.iter().copied().fold(0.0, f64::max);
        rho * scheme.total_strength() / 3.0
    }

    /// Probe frequencies at which every resonant class is inside the window.
    pub fn interior(&self, scheme: &HyperfineScheme) -> (f64, f64) {
        (self.grid.nu_min() + scheme.max_line_offset(), self.grid.nu_max())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# afc-population-snapshot v1 background_depth={}",
            self.background_depth
        );
        out.push_str("nu_MHz,density,p_1/2g,p_3/2g,p_5/2g\n");
        for (i, (occ, rho)) in self.occupations.iter().zip(&self.density).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", self.grid.nu(i), rho, occ[0], occ[1], occ[2]);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let err = |message: String| Error::Format {
            what: "population snapshot",
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))?;
        let background = header
            .strip_prefix("# afc-population-snapshot v1 background_depth=")
            .ok_or_else(|| err(format!("unsupported header `{header}`")))?
            .trim()
            .parse::<f64>()
            .map_err(|e| err(e.to_string()))?;
        match lines.next() {
            Some("nu_MHz,density,p_1/2g,p_3/2g,p_5/2g") => {}
            other => return Err(err(format!("unexpected column header {other:?}"))),
        }
        let mut nu = Vec::new();
        let mut density = Vec::new();
        let mut occupations = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("row {}: {e}", n + 3)))?;
            let [f, rho, a, b, c] = values[..] else {
                return Err(err(format!("row {} has {} columns", n + 3, values.len())));
            };
            nu.push(f);
            density.push(rho);
            occupations.push([a, b, c]);
        }
        let grid = uniform_grid_from(&nu)?;
        let mut field = Self::new(grid, occupations, density)?;
        field.background_depth = background;
        Ok(field)
    }
}

/// Recover a uniform grid from explicit sample frequencies.
fn uniform_grid_from(nu: &[f64]) -> Result<SpectralGrid> {
    match nu {
        [] => Err(Error::InvalidGrid("no samples".into())),
        [single] => Ok(SpectralGrid::single(*single)),
        _ => {
            let step = (nu[nu.len() - 1] - nu[0]) / (nu.len() - 1) as f64;
            for (i, &f) in nu.iter().enumerate() {
                let expected = nu[0] + i as f64 * step;
                if (f - expected).abs() > 1e-6 * step.abs().max(1e-12) + 1e-9 {
                    return Err(Error::NonUniformGrid { index: i });
                }
            }
            let grid = SpectralGrid::new(nu[0], nu[nu.len() - 1], step)?;
            Ok(SpectralGrid { len: nu.len(), ..grid })
        }
    }
}

/// Field with every class spread equally over the three ground levels and a
/// class density chosen so the full line absorbs `d0` in the interior.
pub fn uniform_field(grid: SpectralGrid, scheme: &HyperfineScheme, d0: f64) -> Result<PopulationField> {
    if !(d0 > 0.0 && d0.is_finite()) {
        return Err(Error::InvalidParameter(format!("background depth must be positive, got {d0}")));
    }
    let rho = d0 / (scheme.total_strength() / 3.0);
    let n = grid.len();
    PopulationField::new(grid, vec![[1.0 / 3.0; 3]; n], vec![rho; n])
}

/// Optical depth on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSpectrum {
    grid: SpectralGrid,
    depth: Vec<f64>,
    /// Which transitions contributed, e.g. `all` or `1/2g->5/2e`.
    pub context: String,
}

impl AbsorptionSpectrum {
    pub fn new(grid: SpectralGrid, depth: Vec<f64>, context: impl Into<String>) -> Result<Self> {
        if depth.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "spectrum has {} samples for a {}-point grid",
                depth.len(),
                grid.len()
            )));
        }
        if let Some(i) = depth.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidParameter(format!("depth {} at sample {i}", depth[i])));
        }
        Ok(Self {
            grid,
            depth,
            context: context.into(),
        })
    }

    /// Build from explicit (frequency, depth) samples; the frequencies must be uniform.
    pub fn from_points(nu: &[f64], depth: Vec<f64>, context: impl Into<String>) -> Result<Self> {
        Self::new(uniform_grid_from(nu)?, depth, context)
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.iter().copied().fold(0.0, f64::max)
    }

    /// Linear interpolation, clamped to the edge values outside the grid.
    pub fn depth_at(&self, nu: f64) -> f64 {
        interpolate(&self.depth, self.grid.position(nu))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid,
            self.depth.iter().map(|d| d * factor).collect(),
            self.context.clone(),
        )
    }

    /// Same samples on an axis moved by `offset` MHz.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            grid: SpectralGrid {
                start: self.grid.start + offset,
                ..self.grid
            },
            ..self.clone()
        }
    }

    /// Resample onto another grid by linear interpolation.
    pub fn resampled(&self, grid: SpectralGrid) -> Self {
        let depth = grid.points().map(|nu| self.depth_at(nu)).collect();
        Self {
            grid,
            depth,
            context: self.context.clone(),
        }
    }

    pub fn with_background(&self, extra: f64) -> Result<Self> {
        Self::new(
            self.grid,
            self.depth.iter().map(|d| d + extra).collect(),
            self.context.clone(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("nu_MHz,d\n");
        for (nu, d) in self.grid.points().zip(&self.depth) {
            let _ = writeln!(out, "{nu},{d}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let err = |message: String| Error::Format {
            what: "spectrum CSV",
            message,
        };
        let mut nu = Vec::new();
        let mut depth = Vec::new();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next().map(str::trim) {
            Some("nu_MHz,d") => {}
            other => return Err(err(format!("expected header `nu_MHz,d`, found {other:?}"))),
        }
        for (n, line) in lines.enumerate() {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| err(format!("data row {} has no comma", n + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("data row {}: {e}", n + 1)))
            };
            nu.push(parse(a)?);
            depth.push(parse(b)?);
        }
        Self::from_points(&nu, depth, "file")
    }
}

pub(crate) fn interpolate(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    if pos <= 0.0 {
        return values[0];
    }
    if pos >= last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

fn transition_mask(filter: Option<&[TransitionLabel]>) -> [[bool; 3]; 3] {
    match filter {
        None => [[true; 3]; 3],
        Some(labels) => {
            let mut mask = [[false; 3]; 3];
            for t in labels {
                mask[t.ground.index()][t.excited.index()] = true;
            }
            mask
        }
    }
}

fn context_of(filter: Option<&[TransitionLabel]>) -> String {
    match filter {
        None => "all".into(),
        Some(labels) => labels.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("+"),
    }
}

/// Depth on the native axis (class step, starting at the first class) before
/// any lineshape convolution.
fn native_depth(field: &PopulationField, scheme: &HyperfineScheme, mask: [[bool; 3]; 3]) -> Vec<f64> {
    let grid = field.grid;
    let span = (scheme.max_line_offset() / grid.step).ceil() as usize;
    let mut native = vec![0.0; grid.len + span + 2];
    for t in TransitionLabel::all() {
        let (g, e) = (t.ground.index(), t.excited.index());
        if !mask[g][e] {
            continue;
        }
        let shift = scheme.line_offset(t) / grid.step;
        let base = shift.floor();
        let w = shift - base;
        let base = base as usize;
        let strength = scheme.strength(t);
        for (i, (occ, rho)) in field.occupations.iter().zip(&field.density).enumerate() {
            let amount = rho * occ[g] * strength;
            if amount == 0.0 {
                continue;
            }
            native[i + base] += amount * (1.0 - w);
            native[i + base + 1] += amount * w;
        }
    }
    native
}

fn lorentzian_weights(fwhm_mhz: f64, step: f64) -> Vec<f64> {
    // Bin-integrated Lorentzian, truncated where the tail drops below 1e-6.
    let half = 0.5 * fwhm_mhz;
    let reach = ((half / (std::f64::consts::PI * 1e-6)) / step).ceil().min(2000.0) as i64;
    let cdf = |x: f64| (x / half).atan() / std::f64::consts::PI;
    let mut weights: Vec<f64> = (-reach..=reach)
        .map(|k| {
            let x = k as f64 * step;
            cdf(x + 0.5 * step) - cdf(x - 0.5 * step)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

fn convolve(native: &[f64], weights: &[f64]) -> Vec<f64> {
    let reach = weights.len() / 2;
    let mut out = vec![0.0; native.len()];
    for (i, &v) in native.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        for (k, w) in weights.iter().enumerate() {
            let j = i as i64 + k as i64 - reach as i64;
            if (0..out.len() as i64).contains(&j) {
                out[j as usize] += v * w;
            }
        }
    }
    out
}

/// Forward model: depth = Σ classes Σ transitions density × occupation ×
/// strength × lineshape, sampled on `probe_grid`.
pub fn synthesize_absorption(
    field: &PopulationField,
    scheme: &HyperfineScheme,
    probe_grid: &SpectralGrid,
    filter: Option<&[TransitionLabel]>,
) -> Result<AbsorptionSpectrum> {
    synthesize_absorption_with(field, scheme, probe_grid, filter, Lineshape::Interpolated)
}

pub fn synthesize_absorption_with(
    field: &PopulationField,
    scheme: &HyperfineScheme,
    probe_grid: &SpectralGrid,
    filter: Option<&[TransitionLabel]>,
    lineshape: Lineshape,
) -> Result<AbsorptionSpectrum> {
    let window = field.grid;
    let tol = 1e-9 * window.step;
    if probe_grid.nu_min() < window.nu_min() - tol || probe_grid.nu_max() > window.nu_max() + tol {
        return Err(Error::OutsideWindow {
            lo: probe_grid.nu_min(),
            hi: probe_grid.nu_max(),
            window_lo: window.nu_min(),
            window_hi: window.nu_max(),
        });
    }
    let mut native = native_depth(field, scheme, transition_mask(filter));
    if let Lineshape::Lorentzian { fwhm_khz } = lineshape {
        if !(fwhm_khz > 0.0) {
            return Err(Error::InvalidParameter(format!("Lorentzian FWHM {fwhm_khz} kHz")));
        }
        native = convolve(&native, &lorentzian_weights(fwhm_khz * 1e-3, window.step));
    }
    let background = if filter.is_none() { field.background_depth } else { 0.0 };
    let depth = probe_grid
        .points()
        .map(|nu| (interpolate(&native, window.position(nu)) + background).max(0.0))
        .collect();
    AbsorptionSpectrum::new(*probe_grid, depth, context_of(filter))
}
