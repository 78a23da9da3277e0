//! Closed-form comb theory: effective depth, transmission, dephasing and
//! forward echo efficiency of a comb of well-separated Gaussian peaks.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::population::{AbsorptionSpectrum, SpectralGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakShape {
    #[default]
    Gaussian,
}

/// Summary of a prepared comb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombParams {
    /// Peak optical depth.
    pub d: f64,
    /// Peak FWHM in kHz.
    pub gamma_khz: f64,
    /// Comb period in MHz.
    pub delta_mhz: f64,
    pub n_peaks: usize,
    #[serde(default)]
    pub shape: PeakShape,
}

impl CombParams {
    pub fn new(d: f64, gamma_khz: f64, delta_mhz: f64, n_peaks: usize) -> Result<Self> {
        let p = Self {
            d,
            gamma_khz,
            delta_mhz,
            n_peaks,
            shape: PeakShape::Gaussian,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidParameter(format!("peak depth {}", self.d)));
        }
        if !(self.gamma_khz > 0.0 && self.delta_mhz.is_finite()) {
            return Err(Error::InvalidParameter(format!("peak width {} kHz", self.gamma_khz)));
        }
        if !(self.finesse() > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "peaks of {} kHz are not separated at a {} MHz period",
                self.gamma_khz, self.delta_mhz
            )));
        }
        Ok(())
    }

    pub fn finesse(&self) -> f64 {
        self.delta_mhz * 1e3 / self.gamma_khz
    }

    pub fn gamma_mhz(&self) -> f64 {
        self.gamma_khz * 1e-3
    }

    /// Storage time of the first echo, `1/Δ`, in µs.
    pub fn echo_delay_us(&self) -> f64 {
        1.0 / self.delta_mhz
    }
}

/// `d̃ ≈ d / F` for Gaussian peaks.
pub fn effective_depth(p: &CombParams) -> f64 {
    match p.shape {
        PeakShape::Gaussian => p.d / p.finesse(),
    }
}

/// Exact period-averaged depth of a Gaussian comb, `d √(π / 4 ln 2) / F`.
///
/// This is what a pulse much broader than the period actually sees; the
/// `d / F` approximation is about 6 % lower.
pub fn mean_depth(p: &CombParams) -> f64 {
    p.d * (PI / (4.0 * LN_2)).sqrt() / p.finesse()
}

/// Peak depth of a Gaussian comb whose period-averaged depth is `d_eff`.
pub fn peak_depth_for_mean(d_eff: f64, finesse: f64) -> f64 {
    d_eff * finesse / (PI / (4.0 * LN_2)).sqrt()
}

pub fn transmission(d_eff: f64) -> Result<f64> {
    if !(d_eff >= 0.0) {
        return Err(Error::InvalidParameter(format!("effective depth {d_eff} is negative")));
    }
    Ok((-d_eff).exp())
}

/// Echo-amplitude attenuation at the first echo, `exp(-π² / (4 ln2 F²))`.
pub fn dephasing_factor(finesse: f64) -> f64 {
    (-PI * PI / (4.0 * LN_2 * finesse * finesse)).exp()
}

/// How many times the amplitude dephasing factor enters the efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DephasingConvention {
    /// As written in the closed-form efficiency: `d̃² e^{-d̃} D`.
    Single,
    /// Echo intensity from an amplitude attenuation: `d̃² e^{-d̃} D²`.
    /// Propagating exact Gaussian combs reproduces this form.
    Squared,
}

pub fn efficiency(d_eff: f64, finesse: f64, convention: DephasingConvention) -> f64 {
    let deph = dephasing_factor(finesse);
    let deph = match convention {
        DephasingConvention::Single => deph,
        DephasingConvention::Squared => deph * deph,
    };
    d_eff * d_eff * (-d_eff).exp() * deph
}

/// Forward echo efficiency `η = d̃² e^{-d̃} e^{-π²/(4 ln2 F²)}`.
pub fn echo_efficiency(p: &CombParams) -> f64 {
    efficiency(effective_depth(p), p.finesse(), DephasingConvention::Single)
}

/// Echo-amplitude envelope `exp(-t² γ̃² / 2)` with `γ̃ = 2π γ / √(8 ln 2)`.
///
/// Evaluated at `t = 1/Δ` this equals [`dephasing_factor`] of `F = Δ/γ`.
pub fn amplitude_decay(t_us: f64, gamma_khz: f64) -> Result<f64> {
    if !(t_us >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative time {t_us} µs")));
    }
    let gamma_tilde = 2.0 * PI * gamma_khz * 1e-3 / (8.0 * LN_2).sqrt();
    Ok((-0.5 * (t_us * gamma_tilde).powi(2)).exp())
}

/// Best effective depth and efficiency at fixed finesse.
///
/// The dephasing factor does not depend on `d̃`, so the maximiser of
/// `d̃² e^{-d̃}` is always `d̃ = 2`.
pub fn optimal_depth(finesse: f64) -> (f64, f64) {
    let d_eff = 2.0;
    (d_eff, 4.0 * (-2.0f64).exp() * dephasing_factor(finesse))
}

/// Comb of `params.n_peaks` super-Gaussian peaks (`order = 2` is Gaussian),
/// the first centred at `first_center`, plus a flat `background`.
pub fn comb_spectrum(
    params: &CombParams,
    first_center: f64,
    grid: &SpectralGrid,
    order: f64,
    background: f64,
) -> Result<AbsorptionSpectrum> {
    let fwhm = params.gamma_mhz();
    let depth = grid
        .points()
        .map(|nu| {
            let peaks: f64 = (0..params.n_peaks)
                .map(|k| {
                    let x = nu - first_center - k as f64 * params.delta_mhz;
                    (-LN_2 * (2.0 * x.abs() / fwhm).powf(order)).exp()
                })
                .sum();
            background + params.d * peaks
        })
        .collect();
    AbsorptionSpectrum::new(*grid, depth, "synthetic comb")
}
