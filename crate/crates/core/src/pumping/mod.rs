//! Optical pumping: chirped hole-burning scans, coherent burn-back of narrow
//! peaks into an emptied pit, and whole pulse sequences built from both.
//!
//! Pumping is a rate-equation model. Every pulse is followed by a wait much
//! longer than the excited-state lifetime, so excited population is always
//! fully returned to the ground levels before the next pulse.

pub mod sequence;

use serde::{Deserialize, Serialize};

use crate::levels::{afc_bandwidth_limit, GroundLevel, HyperfineScheme, TransitionLabel};
use crate::population::{synthesize_absorption, PopulationField, SpectralGrid};
use crate::{Error, Result};

pub use sequence::{parse_sequence, PulseSequence, RepeatBlock, SequenceProgram, PIT_TABLE};

#[derive(Debug, Clone, PartialEq)]
pub enum PulseKind {
    /// Frequency scan over `[nu_start, nu_end]` (either direction).
    ChirpScan {
        nu_start: f64,
        nu_end: f64,
        /// Line the pulse intensity is matched to.
        target: TransitionLabel,
        relative_power: f64,
    },
    /// `5/2g -> 5/2e` followed by `5/2e -> 1/2g`, moving a narrow slice of
    /// reservoir ions whose `1/2g -> 1/2e` line sits at `center`.
    Burnback {
        center: f64,
        chirp_width_khz: f64,
        transfer_efficiency: f64,
        relative_power: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSpec {
    pub name: String,
    pub kind: PulseKind,
}

/// Calibration of the burn-back peaks.
///
/// The transferred slice has a super-Gaussian profile
/// `exp(-ln2 |2x / w|^order)` of FWHM
/// `w = (base_width_khz + width_per_chirp * chirp) * (1 + power_broadening * power)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurnbackModel {
    pub profile_order: f64,
    pub base_width_khz: f64,
    pub width_per_chirp: f64,
    pub power_broadening: f64,
    /// Transfer efficiency reached at a given power: `1 - exp(-transfer_saturation * power)`.
    pub transfer_saturation: f64,
    /// Flat off-resonant background depth added per unit burn-back power.
    pub background_per_power: f64,
}

impl Default for BurnbackModel {
    fn default() -> Self {
        Self {
            profile_order: 2.0,
            base_width_khz: 33.0,
            width_per_chirp: 0.655,
            power_broadening: 0.12,
            transfer_saturation: 0.45,
            background_per_power: 0.0,
        }
    }
}

impl BurnbackModel {
    pub fn peak_width_khz(&self, chirp_width_khz: f64, power: f64) -> f64 {
        (self.base_width_khz + self.width_per_chirp * chirp_width_khz) * (1.0 + self.power_broadening * power)
    }

    pub fn transfer_efficiency(&self, power: f64) -> f64 {
        1.0 - (-self.transfer_saturation * power).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.profile_order >= 1.0 && self.profile_order.is_finite()) {
            return Err(Error::InvalidParameter(format!("profile order {}", self.profile_order)));
        }
        let non_negative = [
            self.base_width_khz,
            self.width_per_chirp,
            self.power_broadening,
            self.transfer_saturation,
            self.background_per_power,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("burn-back calibration values must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpingModel {
    /// `kappa` in the excitation probability `1 - exp(-kappa * x)`, where `x`
    /// is the pulse power scaled by the line strength relative to the target line.
    pub saturation: f64,
    /// Half width at half maximum of the Gaussian roll-off of pulse intensity
    /// beyond the ends of a scan, MHz. Zero gives hard scan edges.
    pub scan_edge_mhz: f64,
    pub burnback: BurnbackModel,
}

impl Default for PumpingModel {
    fn default() -> Self {
        Self {
            saturation: 2.0,
            scan_edge_mhz: 0.1,
            burnback: BurnbackModel::default(),
        }
    }
}

impl PumpingModel {
    pub fn excitation_probability(&self, x: f64) -> f64 {
        1.0 - (-self.saturation * x).exp()
    }

    /// Relative intensity at `distance` MHz outside a scanned interval.
    pub fn edge_factor(&self, distance: f64) -> f64 {
        if distance <= 0.0 {
            1.0
        } else if self.scan_edge_mhz == 0.0 || distance > self.edge_reach() {
            0.0
        } else {
            (-std::f64::consts::LN_2 * (distance / self.scan_edge_mhz).powi(2)).exp()
        }
    }

    /// Distance beyond a scan end where the roll-off drops below 1e-15.
    pub fn edge_reach(&self) -> f64 {
        self.scan_edge_mhz * (15.0 * std::f64::consts::LN_10 / std::f64::consts::LN_2).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation > 0.0 && self.saturation.is_finite()) {
            return Err(Error::InvalidParameter(format!("saturation {}", self.saturation)));
        }
        if !(self.scan_edge_mhz >= 0.0 && self.scan_edge_mhz.is_finite()) {
            return Err(Error::InvalidParameter(format!("scan edge width {}", self.scan_edge_mhz)));
        }
        self.burnback.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PumpReport {
    pub pulses_applied: usize,
    pub warnings: Vec<String>,
}

impl PumpReport {
    fn warn(&mut self, message: String) {
        if !self.warnings.contains(&message) {
            log::warn!("{message}");
            self.warnings.push(message);
        }
    }

    fn merge(&mut self, other: PumpReport) {
        self.pulses_applied += other.pulses_applied;
        for w in other.warnings {
            self.warn(w);
        }
    }
}

struct Line {
    offset: f64,
    ground: usize,
    branching: [f64; 3],
    x: f64,
}

/// Optical pumping by one chirped scan.
///
/// Every line of every class resonant inside the scanned interval excites a
/// fraction `p_exc` of its ground level, which then decays back to the three
/// ground levels with the branching ratios of the excited level. Lines of one
/// class are visited in order of increasing frequency.
pub fn apply_chirp_scan(
    field: &mut PopulationField,
    scheme: &HyperfineScheme,
    model: &PumpingModel,
    pulse: &PulseSpec,
) -> Result<PumpReport> {
    let PulseKind::ChirpScan {
        nu_start,
        nu_end,
        target,
        relative_power,
    } = pulse.kind
    else {
        return Err(Error::InvalidParameter(format!("`{}` is not a chirp scan", pulse.name)));
    };
    if !(relative_power >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative power in `{}`", pulse.name)));
    }
    model.validate()?;
    let mut report = PumpReport {
        pulses_applied: 1,
        ..Default::default()
    };
    if relative_power == 0.0 {
        return Ok(report);
    }

    let grid = *field.grid();
    let (mut lo, mut hi) = (nu_start.min(nu_end), nu_start.max(nu_end));
    let modeled = (grid.nu_min() + scheme.max_line_offset(), grid.nu_max());
    if lo < modeled.0 || hi > modeled.1 {
        report.warn(format!(
            "scan `{}` [{lo}, {hi}] MHz reaches classes outside the simulated window; clipped to [{}, {}]",
            pulse.name, modeled.0, modeled.1
        ));
        lo = lo.max(modeled.0);
        hi = hi.min(modeled.1);
        if lo > hi {
            return Ok(report);
        }
    }

    let target_strength = scheme.strength(target);
    let mut lines: Vec<Line> = TransitionLabel::all()
        .map(|t| Line {
            offset: scheme.line_offset(t),
            ground: t.ground.index(),
            branching: scheme.branching(t.excited),
            x: relative_power * scheme.strength(t) / target_strength,
        })
        .collect();
    lines.sort_by(|a, b| a.offset.total_cmp(&b.offset));

    let tol = 1e-6;
    let reach = model.edge_reach();
    let classes = grid.index_range(lo - reach - scheme.max_line_offset(), hi + reach);
    for i in classes {
        let c = grid.nu(i);
        let occ = &mut field.occupations_mut()[i];
        for line in &lines {
            let f = c + line.offset;
            let outside = (lo - f).max(f - hi);
            if outside > tol && (reach == 0.0 || outside > reach) {
                continue;
            }
            let p_exc = if outside > tol {
                model.excitation_probability(line.x * model.edge_factor(outside))
            } else {
                model.excitation_probability(line.x)
            };
            let moved = p_exc * occ[line.ground];
            occ[line.ground] -= moved;
            for (k, b) in line.branching.iter().enumerate() {
                occ[k] += moved * b;
            }
        }
    }
    Ok(report)
}

fn super_gaussian(x: f64, fwhm: f64, order: f64) -> f64 {
    (-std::f64::consts::LN_2 * (2.0 * x.abs() / fwhm).powf(order)).exp()
}

/// Half-width beyond which the profile is below 1e-15 and treated as zero.
fn profile_support(fwhm: f64, order: f64) -> f64 {
    0.5 * fwhm * (15.0 * std::f64::consts::LN_10 / std::f64::consts::LN_2).powf(1.0 / order)
}

/// Coherent two-pulse burn-back of one peak from the 5/2g reservoir into 1/2g.
pub fn apply_burnback(field: &mut PopulationField, model: &PumpingModel, pulse: &PulseSpec) -> Result<PumpReport> {
    let PulseKind::Burnback {
        center,
        chirp_width_khz,
        transfer_efficiency,
        relative_power,
    } = pulse.kind
    else {
        return Err(Error::InvalidParameter(format!("`{}` is not a burn-back pulse", pulse.name)));
    };
    if !(0.0..=1.0).contains(&transfer_efficiency) {
        return Err(Error::InvalidParameter(format!(
            "transfer efficiency {transfer_efficiency} outside [0, 1]"
        )));
    }
    if !(chirp_width_khz > 0.0) || !(relative_power >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "burn-back `{}` needs a positive chirp width and non-negative power",
            pulse.name
        )));
    }
    model.burnback.validate()?;
    let bb = &model.burnback;
    let fwhm = bb.peak_width_khz(chirp_width_khz, relative_power) * 1e-3;
    let reach = profile_support(fwhm, bb.profile_order);
    let grid = *field.grid();
    let reservoir = GroundLevel::FiveHalves.index();
    let storage = GroundLevel::Half.index();
    if transfer_efficiency > 0.0 {
        for i in grid.index_range(center - reach, center + reach) {
            let fraction = transfer_efficiency * super_gaussian(grid.nu(i) - center, fwhm, bb.profile_order);
            let occ = &mut field.occupations_mut()[i];
            let moved = fraction * occ[reservoir];
            occ[reservoir] -= moved;
            occ[storage] += moved;
        }
    }
    let background = field.background_depth() + bb.background_per_power * relative_power;
    field.set_background_depth(background);
    Ok(PumpReport {
        pulses_applied: 1,
        warnings: Vec::new(),
    })
}

pub fn apply_pulse(
    field: &mut PopulationField,
    scheme: &HyperfineScheme,
    model: &PumpingModel,
    pulse: &PulseSpec,
) -> Result<PumpReport> {
    match pulse.kind {
        PulseKind::ChirpScan { .. } => apply_chirp_scan(field, scheme, model, pulse),
        PulseKind::Burnback { .. } => apply_burnback(field, model, pulse),
    }
}

/// Play a whole sequence file in order.
pub fn run_sequence(
    field: &mut PopulationField,
    scheme: &HyperfineScheme,
    model: &PumpingModel,
    sequence: &PulseSequence,
) -> Result<PumpReport> {
    let min_wait_ms = 5.0 * scheme.excited_lifetime_us * 1e-3;
    let mut report = PumpReport::default();
    if sequence.program.wait_ms < min_wait_ms {
        report.warn(format!(
            "wait of {} ms is short compared to the {} µs excited lifetime; full decay is still assumed",
            sequence.program.wait_ms, scheme.excited_lifetime_us
        ));
    }
    for pulse in sequence.schedule() {
        report.merge(apply_pulse(field, scheme, model, pulse)?);
    }
    Ok(report)
}

/// Parameters of a comb burnt back into a prepared pit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombRecipe {
    pub n_peaks: usize,
    pub delta_mhz: f64,
    pub chirp_width_khz: f64,
    pub power: f64,
    /// Center of the first peak; the others follow at `k * delta_mhz` above it.
    pub first_center_mhz: f64,
}

impl Default for CombRecipe {
    fn default() -> Self {
        Self {
            n_peaks: 4,
            delta_mhz: 1.2,
            chirp_width_khz: 150.0,
            power: 0.85,
            first_center_mhz: 0.0,
        }
    }
}

impl CombRecipe {
    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_peaks).map(|k| self.first_center_mhz + k as f64 * self.delta_mhz)
    }

    /// Center of the comb, where the input carrier goes by default.
    pub fn midpoint(&self) -> f64 {
        self.first_center_mhz + 0.5 * (self.n_peaks.saturating_sub(1)) as f64 * self.delta_mhz
    }

    pub fn span(&self) -> f64 {
        self.n_peaks.saturating_sub(1) as f64 * self.delta_mhz
    }
}

/// Burn back `n_peaks` peaks spaced by `delta_mhz` into an emptied pit.
///
/// Fails if any peak would land where the field still absorbs more than 1 %
/// of its nominal depth; warns if the comb is wider than the storage-line
/// bandwidth.
pub fn create_afc(
    field: &mut PopulationField,
    scheme: &HyperfineScheme,
    model: &PumpingModel,
    recipe: &CombRecipe,
) -> Result<PumpReport> {
    if recipe.n_peaks == 0 || !(recipe.delta_mhz > 0.0) {
        return Err(Error::InvalidParameter("a comb needs at least one peak and a positive period".into()));
    }
    if !(recipe.power >= 0.0) {
        return Err(Error::InvalidParameter(format!("burn-back power {}", recipe.power)));
    }
    let mut report = PumpReport::default();
    let limit = afc_bandwidth_limit(scheme);
    if recipe.span() > limit {
        report.warn(format!(
            "comb span {:.3} MHz exceeds the {limit} MHz bandwidth of the storage line",
            recipe.span()
        ));
    }

    let half = model.burnback.peak_width_khz(recipe.chirp_width_khz, recipe.power) * 1e-3;
    let threshold = 0.01 * field.nominal_depth(scheme);
    for center in recipe.centers() {
        let probe = SpectralGrid::with_points(center - half, center + half, 21)?;
        let spectrum = synthesize_absorption(field, scheme, &probe, None)?;
        if spectrum.max_depth() > threshold {
            return Err(Error::CombOutsidePit(format!(
                "depth {:.3} near {center:.3} MHz exceeds {threshold:.3}",
                spectrum.max_depth()
            )));
        }
    }

    let transfer = model.burnback.transfer_efficiency(recipe.power);
    for (k, center) in recipe.centers().enumerate() {
        let pulse = PulseSpec {
            name: format!("Peak{k}"),
            kind: PulseKind::Burnback {
                center,
                chirp_width_khz: recipe.chirp_width_khz,
                transfer_efficiency: transfer,
                relative_power: recipe.power,
            },
        };
        report.merge(apply_burnback(field, model, &pulse)?);
    }
    Ok(report)
}
