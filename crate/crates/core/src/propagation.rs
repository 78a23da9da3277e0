//! Weak-pulse propagation through an absorption spectrum.
//!
//! The medium acts as a linear filter with transfer function
//! `H(ν) = exp(-d(ν)/2 + i φ(ν))`. The phase `φ` is the Kramers–Kronig
//! partner of the log-amplitude, obtained by making the cepstrum of
//! `-d/2` causal; this yields the minimum-phase (causal) response of the
//! absorbing sample. Output traces are computed by FFT in the frame rotating
//! at the pulse carrier.

use std::f64::consts::{LN_2, PI};
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, comb_spectrum, peak_depth_for_mean, CombParams, DephasingConvention};
use crate::population::{AbsorptionSpectrum, SpectralGrid};
use crate::{Error, Result};

/// Gaussian input pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPulse {
    /// FWHM of the pulse intensity, ns.
    pub fwhm_ns: f64,
    pub carrier_mhz: f64,
    pub amplitude: f64,
    /// Time of the pulse maximum inside the simulation window, µs.
    pub center_us: f64,
}

impl Default for InputPulse {
    fn default() -> Self {
        Self {
            fwhm_ns: 200.0,
            carrier_mhz: 0.0,
            amplitude: 1.0,
            center_us: 1.0,
        }
    }
}

impl InputPulse {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_ns > 0.0 && self.fwhm_ns.is_finite()) {
            return Err(Error::InvalidParameter(format!("pulse duration {} ns", self.fwhm_ns)));
        }
        if !(self.carrier_mhz.is_finite() && self.amplitude.is_finite() && self.center_us.is_finite()) {
            return Err(Error::InvalidParameter("pulse parameters must be finite".into()));
        }
        Ok(())
    }

    /// FWHM of the power spectrum in MHz, `2 ln2 / (π τ)`.
    pub fn spectral_fwhm_mhz(&self) -> f64 {
        2.0 * LN_2 / (PI * self.fwhm_ns * 1e-3)
    }

    pub fn envelope(&self, t_us: f64) -> Complex64 {
        let tau = self.fwhm_ns * 1e-3;
        let x = t_us - self.center_us;
        Complex64::new(self.amplitude * (-2.0 * LN_2 * x * x / (tau * tau)).exp(), 0.0)
    }
}

/// Complex field envelope sampled in time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub t0_us: f64,
    pub dt_ns: f64,
    pub samples: Vec<Complex64>,
}

impl TimeTrace {
    pub fn dt_us(&self) -> f64 {
        self.dt_ns * 1e-3
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t0_us + i as f64 * self.dt_us()
    }

    pub fn duration_us(&self) -> f64 {
        self.samples.len() as f64 * self.dt_us()
    }

    fn indices(&self, t1: f64, t2: f64) -> std::ops::Range<usize> {
        let a = ((t1 - self.t0_us) / self.dt_us()).ceil().max(0.0) as usize;
        let b = ((t2 - self.t0_us) / self.dt_us()).ceil().max(0.0) as usize;
        a.min(self.samples.len())..b.min(self.samples.len())
    }

    /// `Σ |s|² dt` over the whole trace.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt_us()
    }

    /// Energy of samples with `t1 <= t < t2`.
    pub fn energy_in(&self, t1: f64, t2: f64) -> f64 {
        self.samples[self.indices(t1, t2)].iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt_us()
    }

    /// Intensity-weighted mean time over `[t1, t2)`.
    pub fn centroid_in(&self, t1: f64, t2: f64) -> f64 {
        let range = self.indices(t1, t2);
        let (mut w, mut wt) = (0.0, 0.0);
        for i in range {
            let p = self.samples[i].norm_sqr();
            w += p;
            wt += p * self.t(i);
        }
        wt / w
    }

    pub fn centroid(&self) -> f64 {
        self.centroid_in(self.t0_us, self.t0_us + self.duration_us())
    }

    pub fn delayed_samples(&self, shift: usize) -> Vec<Complex64> {
        let mut out = self.samples.clone();
        let n = out.len().max(1);
        out.rotate_right(shift % n);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us,re,im,abs2\n");
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", self.t(i), s.re, s.im, s.norm_sqr());
        }
        out
    }
}

/// FFT grid: `n` samples spaced by `window_us / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationOptions {
    pub window_us: f64,
    /// Minimum frequency span covered by the grid; the sample count is the
    /// next power of two of `window_us * span_mhz`.
    pub span_mhz: f64,
    /// Include the Kramers–Kronig phase. Without it the filter is real and
    /// acausal, which is only useful for pure-absorption comparisons.
    pub dispersion: bool,
    /// Largest tolerated fraction of output energy in the wrap-around guard
    /// region before the run is rejected as aliased.
    pub leak_tolerance: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            window_us: 16.0,
            span_mhz: 64.0,
            dispersion: true,
            leak_tolerance: 1e-6,
        }
    }
}

impl PropagationOptions {
    pub fn samples(&self) -> usize {
        ((self.window_us * self.span_mhz).ceil() as usize).next_power_of_two().max(16)
    }

    pub fn dt_us(&self) -> f64 {
        self.window_us / self.samples() as f64
    }

    pub fn df_mhz(&self) -> f64 {
        1.0 / self.window_us
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_us > 0.0 && self.span_mhz > 0.0 && self.leak_tolerance > 0.0) {
            return Err(Error::InvalidParameter("window, span and leak tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Ascending frequency grid of the FFT, centred on `carrier`.
    pub fn frequency_grid(&self, carrier: f64) -> SpectralGrid {
        let n = self.samples();
        let df = self.df_mhz();
        let lo = carrier - (n / 2) as f64 * df;
        let grid = SpectralGrid::new(lo, lo + (n - 1) as f64 * df, df).expect("valid FFT grid");
        debug_assert_eq!(grid.len(), n);
        grid
    }
}

fn fft(data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    plan.process(data);
}

/// Minimum-phase transfer function on the spectrum's own grid.
///
/// `|H| = exp(-d/2)`; with `dispersion` the phase is the discrete Hilbert
/// transform of `-d/2`, computed by folding the real cepstrum onto
/// non-negative quefrencies.
pub fn transfer_function(spec: &AbsorptionSpectrum, dispersion: bool) -> Vec<Complex64> {
    let log_amp: Vec<f64> = spec.depth().iter().map(|d| -0.5 * d).collect();
    if !dispersion {
        return log_amp.iter().map(|a| Complex64::new(a.exp(), 0.0)).collect();
    }
    let n = log_amp.len();
    let mut cep: Vec<Complex64> = log_amp.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    fft(&mut cep, true);
    let scale = 1.0 / n as f64;
    for (k, c) in cep.iter_mut().enumerate() {
        let fold = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *c *= fold * scale;
    }
    fft(&mut cep, false);
    cep.iter()
        .zip(&log_amp)
        .map(|(l, &a)| Complex64::from_polar(a.exp(), l.im))
        .collect()
}

/// Output field after the sample, on the grid described by `options`.
pub fn propagate(pulse: &InputPulse, spec: &AbsorptionSpectrum, options: &PropagationOptions) -> Result<TimeTrace> {
    pulse.validate()?;
    options.validate()?;
    let n = options.samples();
    let dt = options.dt_us();
    let span = n as f64 * options.df_mhz();
    if pulse.spectral_fwhm_mhz() * 4.0 > span {
        return Err(Error::InvalidParameter(format!(
            "pulse bandwidth {:.2} MHz does not fit the {span:.1} MHz grid",
            pulse.spectral_fwhm_mhz()
        )));
    }
    let grid = options.frequency_grid(pulse.carrier_mhz);
    let h_asc = transfer_function(&spec.resampled(grid), options.dispersion);

    let mut field: Vec<Complex64> = (0..n).map(|i| pulse.envelope(i as f64 * dt)).collect();
    fft(&mut field, false);
    for (k, x) in field.iter_mut().enumerate() {
        *x *= h_asc[(k + n / 2) % n];
    }
    fft(&mut field, true);
    let scale = 1.0 / n as f64;
    field.iter_mut().for_each(|x| *x *= scale);

    let trace = TimeTrace {
        t0_us: 0.0,
        dt_ns: dt * 1e3,
        samples: field,
    };
    check_aliasing(&trace, pulse, options)?;
    Ok(trace)
}

fn check_aliasing(trace: &TimeTrace, pulse: &InputPulse, options: &PropagationOptions) -> Result<()> {
    let total = trace.energy();
    if total == 0.0 {
        return Ok(());
    }
    let end = trace.duration_us();
    let mut leak = trace.energy_in(end - end / 8.0, end);
    if options.dispersion {
        // A causal response leaves nothing before the input pulse arrives.
        let quiet = pulse.center_us - 4.0 * pulse.fwhm_ns * 1e-3;
        if quiet > 0.0 {
            leak += trace.energy_in(0.0, quiet);
        }
    }
    let leak = leak / total;
    if leak > options.leak_tolerance {
        return Err(Error::Aliasing {
            window_us: options.window_us,
            required_us: 2.0 * options.window_us,
            leak,
        });
    }
    Ok(())
}

/// Transmission and echo efficiency measured as energy ratios to a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub eta: f64,
    pub transmission: f64,
    pub transmitted_centroid_us: f64,
    pub echo_centroid_us: f64,
    pub warnings: Vec<String>,
}

/// Disjoint time windows for the transmitted pulse and the first echo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoWindows {
    pub transmitted: (f64, f64),
    pub echo: (f64, f64),
}

impl EchoWindows {
    /// Windows one storage time wide, centred on `t_pulse` and `t_pulse + storage`.
    pub fn around(t_pulse: f64, storage_us: f64) -> Self {
        let h = 0.5 * storage_us;
        Self {
            transmitted: (t_pulse - h, t_pulse + h),
            echo: (t_pulse + h, t_pulse + storage_us + h),
        }
    }
}

pub fn measure_efficiency(out: &TimeTrace, reference: &TimeTrace, windows: EchoWindows) -> Result<Measurement> {
    let (t1, t2) = windows.transmitted;
    let (e1, e2) = windows.echo;
    if !(t1 < t2 && e1 < e2) {
        return Err(Error::Windows("each window must have positive length".into()));
    }
    if t1 < e2 && e1 < t2 {
        return Err(Error::Windows(format!(
            "transmitted window [{t1}, {t2}] overlaps echo window [{e1}, {e2}]"
        )));
    }
    let e_ref = reference.energy();
    if !(e_ref > 0.0) {
        return Err(Error::Windows("reference trace carries no energy".into()));
    }
    let echo = out.energy_in(e1, e2);
    let mut warnings = Vec::new();
    let pad = 0.1 * (e2 - e1);
    let lo = if t2 <= e1 { (e1 - pad).max(t2) } else { e1 - pad };
    let wide = out.energy_in(lo, e2 + pad);
    if echo > 0.0 && wide > 1.01 * echo {
        warnings.push(format!(
            "echo window [{e1:.3}, {e2:.3}] µs misses {:.1} % of the echo energy",
            100.0 * (wide / echo - 1.0)
        ));
    }
    Ok(Measurement {
        eta: echo / e_ref,
        transmission: out.energy_in(t1, t2) / e_ref,
        transmitted_centroid_us: out.centroid_in(t1, t2),
        echo_centroid_us: if echo > 0.0 { out.centroid_in(e1, e2) } else { f64::NAN },
        warnings,
    })
}

/// Reference run, comb run and their efficiency measurement.
#[derive(Debug, Clone)]
pub struct EchoRun {
    pub reference: TimeTrace,
    pub output: TimeTrace,
    pub windows: EchoWindows,
    pub measurement: Measurement,
}

/// Propagate through `empty` (the unprepared pit) and `prepared`, then measure
/// the echo expected `storage_us` after the transmitted pulse.
pub fn echo_experiment(
    pulse: &InputPulse,
    empty: &AbsorptionSpectrum,
    prepared: &AbsorptionSpectrum,
    storage_us: f64,
    options: &PropagationOptions,
) -> Result<EchoRun> {
    if options.window_us < 5.0 * storage_us {
        return Err(Error::InvalidParameter(format!(
            "a {} µs window cannot hold five {storage_us:.3} µs storage periods",
            options.window_us
        )));
    }
    let reference = propagate(pulse, empty, options)?;
    let output = propagate(pulse, prepared, options)?;
    let windows = EchoWindows::around(reference.centroid(), storage_us);
    let measurement = measure_efficiency(&output, &reference, windows)?;
    Ok(EchoRun {
        reference,
        output,
        windows,
        measurement,
    })
}

/// One point of the numerical-versus-closed-form comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    /// Period-averaged depth the comb was built for.
    pub d_eff: f64,
    pub finesse: f64,
    /// Peak depth of the generated comb.
    pub d: f64,
    pub t_meas: f64,
    pub eta_meas: f64,
    pub t_theory: f64,
    /// Closed-form efficiency as written (single dephasing factor).
    pub eta_theory: f64,
    /// Same with the dephasing factor squared.
    pub eta_theory_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSetup {
    pub delta_mhz: f64,
    pub n_peaks: usize,
    pub pulse: InputPulse,
    pub options: PropagationOptions,
}

impl Default for OracleSetup {
    fn default() -> Self {
        Self {
            delta_mhz: 1.0,
            n_peaks: 40,
            pulse: InputPulse {
                center_us: 2.0,
                ..InputPulse::default()
            },
            options: PropagationOptions {
                window_us: 128.0,
                ..PropagationOptions::default()
            },
        }
    }
}

/// Gaussian comb centred on the carrier with period-averaged depth `d_eff`.
pub fn oracle_comb(setup: &OracleSetup, d_eff: f64, finesse: f64) -> Result<(CombParams, AbsorptionSpectrum)> {
    let gamma_khz = setup.delta_mhz * 1e3 / finesse;
    let params = CombParams::new(peak_depth_for_mean(d_eff, finesse), gamma_khz, setup.delta_mhz, setup.n_peaks)?;
    let first = setup.pulse.carrier_mhz - 0.5 * (setup.n_peaks - 1) as f64 * setup.delta_mhz;
    let grid = setup.options.frequency_grid(setup.pulse.carrier_mhz);
    let spec = comb_spectrum(&params, first, &grid, 2.0, 0.0)?;
    Ok((params, spec))
}

pub fn oracle_point(setup: &OracleSetup, d_eff: f64, finesse: f64) -> Result<OracleRow> {
    let (params, spec) = oracle_comb(setup, d_eff, finesse)?;
    let grid = setup.options.frequency_grid(setup.pulse.carrier_mhz);
    let empty = AbsorptionSpectrum::new(grid, vec![0.0; grid.len()], "empty")?;
    let run = echo_experiment(&setup.pulse, &empty, &spec, 1.0 / setup.delta_mhz, &setup.options)?;
    Ok(OracleRow {
        d_eff,
        finesse,
        d: params.d,
        t_meas: run.measurement.transmission,
        eta_meas: run.measurement.eta,
        t_theory: analytic::transmission(d_eff)?,
        eta_theory: analytic::efficiency(d_eff, finesse, DephasingConvention::Single),
        eta_theory_squared: analytic::efficiency(d_eff, finesse, DephasingConvention::Squared),
    })
}

/// Compare propagation against the closed form over a grid of points.
pub fn oracle_sweep(setup: &OracleSetup, depths: &[f64], finesses: &[f64]) -> Result<Vec<OracleRow>> {
    use rayon::prelude::*;
    let points: Vec<(f64, f64)> = finesses
        .iter()
        .flat_map(|&f| depths.iter().map(move |&d| (d, f)))
        .collect();
    points.par_iter().map(|&(d, f)| oracle_point(setup, d, f)).collect()
}

/// `d,F,T_meas,eta_meas,T_theory,eta_theory` with `d` the period-averaged depth.
pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from("d,F,T_meas,eta_meas,T_theory,eta_theory\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.d_eff, r.finesse, r.t_meas, r.eta_meas, r.t_theory, r.eta_theory
        );
    }
    out
}

/// Which dephasing convention fits the measured efficiencies better, with the
/// RMS relative residual of each.
pub fn preferred_convention(rows: &[OracleRow]) -> (DephasingConvention, f64, f64) {
    let rms = |f: fn(&OracleRow) -> f64| {
        let sum: f64 = rows.iter().map(|r| ((r.eta_meas - f(r)) / f(r)).powi(2)).sum();
        (sum / rows.len() as f64).sqrt()
    };
    let single = rms(|r| r.eta_theory);
    let squared = rms(|r| r.eta_theory_squared);
    let best = if squared < single {
        DephasingConvention::Squared
    } else {
        DephasingConvention::Single
    };
    (best, single, squared)
}
