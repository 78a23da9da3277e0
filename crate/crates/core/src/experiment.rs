//! Experiment configuration and the pipelines behind the command-line runner:
//! pit preparation, comb creation and readout, echo measurement, power sweeps
//! and closed-form curves.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, DephasingConvention};
use crate::levels::{max_pit_width, HyperfineScheme, TransitionLabel};
use crate::population::{synthesize_absorption, uniform_field, AbsorptionSpectrum, GridConfig, PopulationField, SpectralGrid};
use crate::probe::{add_noise, fit_comb, infer_from_scheme, scan_spectrum, CombFit};
use crate::propagation::{echo_experiment, oracle_sweep, EchoRun, InputPulse, OracleRow, OracleSetup, PropagationOptions};
use crate::pumping::{create_afc, parse_sequence, run_sequence, CombRecipe, PulseSequence, PumpReport, PumpingModel, PIT_TABLE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scheme: HyperfineScheme,
    pub grid: GridConfig,
    pub medium: MediumConfig,
    pub pumping: PumpingModel,
    pub sequence: SequenceConfig,
    pub comb: CombRecipe,
    pub pulse: PulseConfig,
    pub propagation: PropagationOptions,
    pub probe: ProbeConfig,
    pub sweep: SweepConfig,
    pub theory: TheoryConfig,
    pub acceptance: AcceptanceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scheme: HyperfineScheme::default(),
            grid: GridConfig::default(),
            medium: MediumConfig::default(),
            pumping: PumpingModel::default(),
            sequence: SequenceConfig::default(),
            comb: CombRecipe::default(),
            pulse: PulseConfig::default(),
            propagation: PropagationOptions {
                window_us: 64.0,
                ..PropagationOptions::default()
            },
            probe: ProbeConfig::default(),
            sweep: SweepConfig::default(),
            theory: TheoryConfig::default(),
            acceptance: AcceptanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumConfig {
    /// Optical depth of the unpumped line, summed over all transitions.
    pub d0: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self { d0: 60.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    /// Sequence file; the bundled pit table when absent. Relative paths are
    /// resolved against the config file's directory.
    pub path: Option<PathBuf>,
    /// Run only these pulses from the schedule.
    pub only: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseConfig {
    pub fwhm_ns: f64,
    /// Carrier detuning; the comb midpoint when absent.
    pub carrier_mhz: Option<f64>,
    pub amplitude: f64,
    pub center_us: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        let p = InputPulse::default();
        Self {
            fwhm_ns: p.fwhm_ns,
            carrier_mhz: None,
            amplitude: p.amplitude,
            center_us: p.center_us,
        }
    }
}

impl PulseConfig {
    pub fn pulse(&self, comb: &CombRecipe) -> InputPulse {
        InputPulse {
            fwhm_ns: self.fwhm_ns,
            carrier_mhz: self.carrier_mhz.unwrap_or_else(|| comb.midpoint()),
            amplitude: self.amplitude,
            center_us: self.center_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Line scanned to read out the comb; its depth is rescaled to the
    /// storage line before fitting.
    pub readout: String,
    pub step_mhz: f64,
    /// Standard deviation of additive noise on the readout scan.
    pub noise: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            readout: TransitionLabel::WEAK_READOUT.to_string(),
            step_mhz: 0.005,
            noise: 0.0,
        }
    }
}

impl ProbeConfig {
    pub fn readout_line(&self) -> Result<TransitionLabel> {
        self.readout.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub powers: Vec<f64>,
    /// Finesse values for the closed-form columns.
    pub finesses: Vec<f64>,
    /// Overrides the off-resonant background growth of the burn-back model.
    pub background_per_power: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            powers: (1..=12).map(|k| 0.1 * k as f64).collect(),
            finesses: vec![4.0, 5.0, 7.0],
            background_per_power: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Peak optical depths for the closed-form curves.
    pub depths: Vec<f64>,
    pub finesses: Vec<f64>,
    /// Also propagate Gaussian combs and compare with the closed form.
    pub oracle: bool,
    pub oracle_depths: Vec<f64>,
    pub oracle_finesses: Vec<f64>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            depths: (0..=60).map(|k| 0.25 * k as f64).collect(),
            finesses: vec![3.0, 4.0, 5.0, 7.0],
            oracle: false,
            oracle_depths: vec![0.5, 1.0, 2.0, 3.0],
            oracle_finesses: vec![8.0, 10.0, 12.0, 16.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceConfig {
    /// Interval that must be emptied by the pit sequence.
    pub pit_range_mhz: [f64; 2],
    /// Largest depth allowed inside it.
    pub pit_max_depth: f64,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            pit_range_mhz: [-1.1, 16.0],
            pit_max_depth: 0.6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.grid.build()?;
        self.pumping.validate()?;
        self.propagation.validate()?;
        self.pulse.pulse(&self.comb).validate()?;
        self.probe.readout_line()?;
        if !(self.medium.d0 > 0.0 && self.medium.d0.is_finite()) {
            return Err(Error::InvalidParameter(format!("d0 = {}", self.medium.d0)));
        }
        if !(self.probe.step_mhz > 0.0 && self.probe.noise >= 0.0) {
            return Err(Error::InvalidParameter("probe step must be positive and noise non-negative".into()));
        }
        Ok(())
    }

    /// Resolve a relative sequence path against `base`.
    pub fn resolve_paths(&mut self, base: &std::path::Path) {
        if let Some(p) = &self.sequence.path {
            if p.is_relative() {
                self.sequence.path = Some(base.join(p));
            }
        }
    }

    pub fn load_sequence(&self) -> Result<PulseSequence> {
        let seq = match &self.sequence.path {
            Some(path) => parse_sequence(&std::fs::read_to_string(path)?)?,
            None => parse_sequence(PIT_TABLE)?,
        };
        Ok(match &self.sequence.only {
            Some(keep) => seq.filtered(|name| keep.iter().any(|k| k == name)),
            None => seq,
        })
    }

    fn pumping_for_sweep(&self) -> PumpingModel {
        let mut model = self.pumping.clone();
        if let Some(b) = self.sweep.background_per_power {
            model.burnback.background_per_power = b;
        }
        model
    }
}

/// Pit preparation: the field before and after the schedule.
#[derive(Debug, Clone)]
pub struct PitOutcome {
    pub initial: PopulationField,
    pub field: PopulationField,
    pub before: AbsorptionSpectrum,
    pub after: AbsorptionSpectrum,
    pub report: PumpReport,
    /// Largest depth inside the acceptance interval.
    pub max_depth_in_range: f64,
    pub max_pit_width_mhz: f64,
}

impl PitOutcome {
    pub fn passed(&self, cfg: &AcceptanceConfig) -> bool {
        self.max_depth_in_range < cfg.pit_max_depth
    }
}

/// Grid on which full spectra are reported: every frequency whose absorbing
/// classes all lie inside the simulated window.
pub fn interior_grid(field: &PopulationField, scheme: &HyperfineScheme) -> Result<SpectralGrid> {
    let (lo, hi) = field.interior(scheme);
    SpectralGrid::new(lo, hi, field.grid().step())
}

pub fn run_pit(cfg: &ExperimentConfig) -> Result<PitOutcome> {
    let grid = cfg.grid.build()?;
    let initial = uniform_field(grid, &cfg.scheme, cfg.medium.d0)?;
    let sequence = cfg.load_sequence()?;
    let mut field = initial.clone();
    let report = run_sequence(&mut field, &cfg.scheme, &cfg.pumping, &sequence)?;
    let probe = interior_grid(&field, &cfg.scheme)?;
    let before = synthesize_absorption(&initial, &cfg.scheme, &probe, None)?;
    let after = synthesize_absorption(&field, &cfg.scheme, &probe, None)?;
    let [lo, hi] = cfg.acceptance.pit_range_mhz;
    let max_depth_in_range = after
        .grid()
        .points()
        .zip(after.depth())
        .filter(|(nu, _)| (lo..=hi).contains(nu))
        .map(|(_, d)| *d)
        .fold(0.0, f64::max);
    Ok(PitOutcome {
        initial,
        field,
        before,
        after,
        report,
        max_depth_in_range,
        max_pit_width_mhz: max_pit_width(&cfg.scheme)?,
    })
}

/// Comb burnt into a prepared pit and its readout.
#[derive(Debug)]
pub struct CombOutcome {
    pub field: PopulationField,
    pub report: PumpReport,
    /// Storage-line depth across the comb, computed directly.
    pub strong: AbsorptionSpectrum,
    /// Readout scan on the weaker line, with noise if configured.
    pub readout: AbsorptionSpectrum,
    /// Storage-line depth inferred from the readout.
    pub inferred: AbsorptionSpectrum,
    pub fit: Result<CombFit>,
}

pub fn run_comb_on(cfg: &ExperimentConfig, pit: &PopulationField, model: &PumpingModel, recipe: &CombRecipe, seed: u64) -> Result<CombOutcome> {
    let mut field = pit.clone();
    let report = create_afc(&mut field, &cfg.scheme, model, recipe)?;
    let lo = recipe.first_center_mhz - 0.5 * recipe.delta_mhz;
    let hi = lo + recipe.n_peaks as f64 * recipe.delta_mhz;
    let n = ((hi - lo) / cfg.probe.step_mhz).round() as usize + 1;
    let storage = TransitionLabel::STRONG;
    let readout_line = cfg.probe.readout_line()?;
    let strong = scan_spectrum(&field, &cfg.scheme, storage, (lo, hi), n)?;
    let shift = cfg.scheme.line_offset(readout_line) - cfg.scheme.line_offset(storage);
    let mut readout = scan_spectrum(&field, &cfg.scheme, readout_line, (lo + shift, hi + shift), n)?;
    if cfg.probe.noise > 0.0 {
        readout = add_noise(&readout, cfg.probe.noise, seed)?;
    }
    let inferred = infer_from_scheme(&readout, &cfg.scheme, readout_line, storage)?;
    let fit = fit_comb(&inferred);
    Ok(CombOutcome {
        field,
        report,
        strong,
        readout,
        inferred,
        fit,
    })
}

pub fn run_comb(cfg: &ExperimentConfig, pit: &PopulationField) -> Result<CombOutcome> {
    run_comb_on(cfg, pit, &cfg.pumping, &cfg.comb, cfg.seed)
}

/// Closed-form values for a fitted comb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryPoint {
    pub d_eff: f64,
    pub transmission: f64,
    pub efficiency: f64,
}

pub fn theory_point(d: f64, finesse: f64) -> Result<TheoryPoint> {
    let d_eff = d / finesse;
    Ok(TheoryPoint {
        d_eff,
        transmission: analytic::transmission(d_eff)?,
        efficiency: analytic::efficiency(d_eff, finesse, DephasingConvention::Single),
    })
}

#[derive(Debug)]
pub struct EchoOutcome {
    pub comb: CombOutcome,
    pub empty: AbsorptionSpectrum,
    pub prepared: AbsorptionSpectrum,
    pub run: EchoRun,
    pub pulse: InputPulse,
}

impl EchoOutcome {
    /// Closed form evaluated at the fitted comb parameters.
    pub fn theory(&self) -> Option<TheoryPoint> {
        let p = self.comb.fit.as_ref().ok()?.params;
        theory_point(p.d, p.finesse()).ok()
    }

    pub fn delay_us(&self) -> f64 {
        self.run.measurement.echo_centroid_us - self.run.measurement.transmitted_centroid_us
    }
}

fn echo_on(cfg: &ExperimentConfig, pit: &PopulationField, model: &PumpingModel, recipe: &CombRecipe, seed: u64) -> Result<EchoOutcome> {
    let comb = run_comb_on(cfg, pit, model, recipe, seed)?;
    let grid = interior_grid(pit, &cfg.scheme)?;
    let empty = synthesize_absorption(pit, &cfg.scheme, &grid, None)?;
    let prepared = synthesize_absorption(&comb.field, &cfg.scheme, &grid, None)?;
    let pulse = cfg.pulse.pulse(recipe);
    let run = echo_experiment(&pulse, &empty, &prepared, 1.0 / recipe.delta_mhz, &cfg.propagation)?;
    Ok(EchoOutcome {
        comb,
        empty,
        prepared,
        run,
        pulse,
    })
}

/// Reference through the empty pit, then through the comb.
pub fn run_echo(cfg: &ExperimentConfig, pit: &PopulationField) -> Result<EchoOutcome> {
    echo_on(cfg, pit, &cfg.pumping, &cfg.comb, cfg.seed)
}

/// One burn-back power of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub power: f64,
    pub d: f64,
    pub gamma_khz: f64,
    pub delta_mhz: f64,
    pub finesse: f64,
    pub t_meas: f64,
    pub eta_meas: f64,
    /// `(T, η)` from the closed form at the fitted `d`, one per configured finesse.
    pub theory: Vec<(f64, f64)>,
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn sweep_point(cfg: &ExperimentConfig, pit: &PopulationField, model: &PumpingModel, power: f64, index: usize) -> SweepRow {
    let recipe = CombRecipe {
        power,
        ..cfg.comb.clone()
    };
    let nan = f64::NAN;
    let mut row = SweepRow {
        power,
        d: nan,
        gamma_khz: nan,
        delta_mhz: nan,
        finesse: nan,
        t_meas: nan,
        eta_meas: nan,
        theory: vec![(nan, nan); cfg.sweep.finesses.len()],
        status: "ok".into(),
    };
    let outcome = match echo_on(cfg, pit, model, &recipe, cfg.seed.wrapping_add(index as u64)) {
        Ok(o) => o,
        Err(e) => {
            row.status = format!("error: {e}");
            return row;
        }
    };
    row.t_meas = outcome.run.measurement.transmission;
    row.eta_meas = outcome.run.measurement.eta;
    match &outcome.comb.fit {
        Ok(fit) => {
            let p = fit.params;
            row.d = p.d;
            row.gamma_khz = p.gamma_khz;
            row.delta_mhz = p.delta_mhz;
            row.finesse = p.finesse();
            for (slot, &f) in row.theory.iter_mut().zip(&cfg.sweep.finesses) {
                if let Ok(t) = theory_point(p.d, f) {
                    *slot = (t.transmission, t.efficiency);
                }
            }
        }
        Err(e) => row.status = format!("fit failed: {e}"),
    }
    row
}

/// Echo and comb fit for every configured burn-back power. The pit is
/// prepared once and shared; rows come back in the order of `powers`.
pub fn run_sweep(cfg: &ExperimentConfig, pit: &PopulationField, workers: Option<usize>) -> Result<Vec<SweepRow>> {
    if cfg.sweep.powers.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one power".into()));
    }
    let model = cfg.pumping_for_sweep();
    let work = || {
        cfg.sweep
            .powers
            .par_iter()
            .enumerate()
            .map(|(i, &p)| sweep_point(cfg, pit, &model, p, i))
            .collect::<Vec<_>>()
    };
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
            .map(|pool| pool.install(work)),
        None => Ok(work()),
    }
}

pub fn sweep_header(finesses: &[f64]) -> String {
    let mut h = String::from("power,d,gamma_kHz,delta_MHz,F,T_meas,eta_meas");
    for f in finesses {
        let _ = write!(h, ",T_theory_F{f},eta_theory_F{f}");
    }
    h.push_str(",status");
    h
}

pub fn sweep_csv(rows: &[SweepRow], finesses: &[f64]) -> String {
    let mut out = sweep_header(finesses);
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.power, r.d, r.gamma_khz, r.delta_mhz, r.finesse, r.t_meas, r.eta_meas
        );
        for (t, e) in &r.theory {
            let _ = write!(out, ",{t},{e}");
        }
        let _ = writeln!(out, ",{}", r.status.replace(',', ";"));
    }
    out
}

/// Width and finesse averaged over the successful rows.
pub fn sweep_summary(rows: &[SweepRow]) -> String {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.ok()).collect();
    let n = ok.len().max(1) as f64;
    let gamma = ok.iter().map(|r| r.gamma_khz).sum::<f64>() / n;
    let finesse = ok.iter().map(|r| r.finesse).sum::<f64>() / n;
    format!("points,mean_gamma_kHz,mean_F\n{},{gamma},{finesse}\n", ok.len())
}

/// Structural properties expected of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepChecks {
    pub columns_complete: bool,
    pub depth_increasing: bool,
    pub efficiency_rises_then_flattens: bool,
    /// Closed-form efficiency higher for higher finesse at every fitted `d >= 2`.
    pub theory_efficiency_ordered: bool,
    /// Closed-form transmission higher for higher finesse at every fitted `d > 0`.
    pub theory_transmission_ordered: bool,
    pub notes: Vec<String>,
}

pub fn check_sweep(rows: &[SweepRow], finesses: &[f64]) -> SweepChecks {
    let mut notes = Vec::new();
    let csv = sweep_csv(rows, finesses);
    let header: Vec<&str> = csv.lines().next().unwrap_or("").split(',').collect();
    let columns_complete = header.len() == 8 + 2 * finesses.len()
        && rows.iter().all(|r| r.ok() && r.theory.iter().all(|(t, e)| t.is_finite() && e.is_finite()));

    let depth_increasing = rows.windows(2).all(|w| w[1].d > w[0].d);

    let eta: Vec<f64> = rows.iter().map(|r| r.eta_meas).collect();
    let efficiency_rises_then_flattens = if eta.len() < 4 {
        notes.push("too few points to judge the efficiency trend".into());
        false
    } else {
        let k = eta.len() / 3;
        let early = (eta[k] - eta[0]) / (rows[k].power - rows[0].power);
        let n = eta.len() - 1;
        let late = (eta[n] - eta[n - k]) / (rows[n].power - rows[n - k].power);
        let peak = eta.iter().copied().fold(f64::MIN, f64::max);
        notes.push(format!("efficiency slope early {early:.3}, late {late:.3} per unit power"));
        early > 0.0 && late < 0.5 * early && eta[n] > 0.7 * peak
    };

    let mut order: Vec<usize> = (0..finesses.len()).collect();
    order.sort_by(|&a, &b| finesses[b].total_cmp(&finesses[a]));
    let mut theory_efficiency_ordered = true;
    let mut theory_transmission_ordered = true;
    for r in rows.iter().filter(|r| r.ok()) {
        for w in order.windows(2) {
            let (hi, lo) = (r.theory[w[0]], r.theory[w[1]]);
            if r.d >= 2.0 && hi.1 <= lo.1 {
                if theory_efficiency_ordered {
                    notes.push(format!(
                        "at d = {:.2}: eta(F={}) = {:.4} is not above eta(F={}) = {:.4}",
                        r.d, finesses[w[0]], hi.1, finesses[w[1]], lo.1
                    ));
                }
                theory_efficiency_ordered = false;
            }
            if r.d > 0.0 && hi.0 <= lo.0 {
                theory_transmission_ordered = false;
            }
        }
    }
    SweepChecks {
        columns_complete,
        depth_increasing,
        efficiency_rises_then_flattens,
        theory_efficiency_ordered,
        theory_transmission_ordered,
        notes,
    }
}

/// Closed-form curves and, optionally, the propagation cross-check.
#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub curves: String,
    pub optimum: String,
    pub oracle: Option<Vec<OracleRow>>,
}

pub fn run_theory(cfg: &ExperimentConfig) -> Result<TheoryOutcome> {
    let t = &cfg.theory;
    let mut curves = String::from("d,F,d_eff,T_theory,eta_theory\n");
    for &f in &t.finesses {
        for &d in &t.depths {
            let p = theory_point(d, f)?;
            let _ = writeln!(curves, "{d},{f},{},{},{}", p.d_eff, p.transmission, p.efficiency);
        }
    }
    let mut optimum = String::from("F,d_eff_opt,eta_max\n");
    for &f in t.finesses.iter().chain([f64::INFINITY].iter()) {
        let (d, eta) = analytic::optimal_depth(f);
        let _ = writeln!(optimum, "{f},{d},{eta}");
    }
    let oracle = if t.oracle {
        Some(oracle_sweep(&OracleSetup::default(), &t.oracle_depths, &t.oracle_finesses)?)
    } else {
        None
    };
    Ok(TheoryOutcome { curves, optimum, oracle })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial = ExperimentConfig::from_toml("[comb]\nchirp_width_khz = 200.0\n").unwrap();
        assert_eq!(partial.comb.chirp_width_khz, 200.0);
        assert_eq!(partial.comb.n_peaks, 4);
        assert!(ExperimentConfig::from_toml("[comb]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[probe]\nreadout = \"1/2g->7/2e\"\n").is_err());
    }

    #[test]
    fn partial_pit_clears_only_the_low_side() {
        let cfg = ExperimentConfig {
            sequence: SequenceConfig {
                path: None,
                only: Some(vec!["BurnPit5".into(), "BurnPit6".into()]),
            },
            ..ExperimentConfig::default()
        };
        let pit = run_pit(&cfg).unwrap();
        let d = |nu: f64| pit.after.depth_at(nu);
        assert!(d(-5.0) < 0.6, "{}", d(-5.0));
        assert!(d(10.0) > 6.0, "{}", d(10.0));
        assert!(!pit.passed(&cfg.acceptance));
    }

    #[test]
    fn zero_power_comb_gives_no_echo() {
        let cfg = ExperimentConfig {
            comb: CombRecipe {
                power: 0.0,
                ..CombRecipe::default()
            },
            ..ExperimentConfig::default()
        };
        let pit = run_pit(&cfg).unwrap();
        let echo = run_echo(&cfg, &pit.field).unwrap();
        // Only the pit walls' own ringing of the reference reaches the echo window.
        let m = &echo.run.measurement;
        assert!(m.eta < 1e-3, "{m:?}");
        assert!(m.transmission > 0.999 && m.transmission + m.eta <= 1.0 + 1e-12, "{m:?}");
        assert!(matches!(echo.comb.fit, Err(Error::NoPeaks)));
    }

    #[test]
    fn sweep_rows_follow_power_order() {
        let cfg = ExperimentConfig {
            sweep: SweepConfig {
                powers: vec![0.6, 0.2, 0.9],
                ..SweepConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let pit = run_pit(&cfg).unwrap();
        let rows = run_sweep(&cfg, &pit.field, Some(2)).unwrap();
        assert_eq!(rows.iter().map(|r| r.power).collect::<Vec<_>>(), vec![0.6, 0.2, 0.9]);
        assert!(rows.iter().all(SweepRow::ok));
        assert!(rows[1].d < rows[0].d && rows[0].d < rows[2].d);
        let again = run_sweep(&cfg, &pit.field, Some(1)).unwrap();
        assert_eq!(sweep_csv(&rows, &cfg.sweep.finesses), sweep_csv(&again, &cfg.sweep.finesses));
        let single = ExperimentConfig {
            sweep: SweepConfig {
                powers: vec![cfg.comb.power],
                ..SweepConfig::default()
            },
            ..cfg.clone()
        };
        let row = &run_sweep(&single, &pit.field, None).unwrap()[0];
        let echo = run_echo(&cfg, &pit.field).unwrap();
        assert_eq!(row.eta_meas, echo.run.measurement.eta);
        assert_eq!(row.d, echo.comb.fit.as_ref().unwrap().params.d);
    }

    #[test]
    fn sweep_header_lists_every_finesse() {
        assert_eq!(
            sweep_header(&[3.0, 4.0, 5.0]),
            "power,d,gamma_kHz,delta_MHz,F,T_meas,eta_meas,T_theory_F3,eta_theory_F3,T_theory_F4,eta_theory_F4,T_theory_F5,eta_theory_F5,status"
        );
    }
}
