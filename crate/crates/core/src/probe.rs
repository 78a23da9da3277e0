//! Simulated readout: frequency scans of a prepared field, strong-line depth
//! inferred from a weak-line scan, and Gaussian comb fitting.

use std::fmt::Write as _;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, Dyn, OMatrix, OVector, Vector4, U4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::analytic::CombParams;
use crate::levels::{HyperfineScheme, TransitionLabel};
use crate::population::{synthesize_absorption, AbsorptionSpectrum, PopulationField, SpectralGrid};
use crate::{Error, Result};

/// Measure the depth seen on a single transition at `n_points` frequencies
/// spanning `range` (the midpoint when `n_points == 1`).
pub fn scan_spectrum(
    field: &PopulationField,
    scheme: &HyperfineScheme,
    transition: TransitionLabel,
    range: (f64, f64),
    n_points: usize,
) -> Result<AbsorptionSpectrum> {
    let grid = SpectralGrid::with_points(range.0, range.1, n_points)?;
    synthesize_absorption(field, scheme, &grid, Some(&[transition]))
}

/// `d_strong(ν) = ratio · d_weak(ν + offset)`, where `offset` is how far the
/// weak line sits above the strong one within a class.
pub fn infer_strong_depth(weak: &AbsorptionSpectrum, ratio: f64, offset_mhz: f64) -> Result<AbsorptionSpectrum> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("strength ratio must be positive, got {ratio}")));
    }
    let mut out = weak.shifted(-offset_mhz).scaled(ratio)?;
    out.context = format!("inferred from {}", weak.context);
    Ok(out)
}

/// [`infer_strong_depth`] with ratio and offset taken from the level scheme.
pub fn infer_from_scheme(
    weak: &AbsorptionSpectrum,
    scheme: &HyperfineScheme,
    weak_line: TransitionLabel,
    strong_line: TransitionLabel,
) -> Result<AbsorptionSpectrum> {
    let mut out = infer_strong_depth(
        weak,
        scheme.strength(strong_line) / scheme.strength(weak_line),
        scheme.line_offset(weak_line) - scheme.line_offset(strong_line),
    )?;
    out.context = strong_line.to_string();
    Ok(out)
}

/// Add zero-mean Gaussian noise of standard deviation `sigma`, clamping at zero.
pub fn add_noise(spec: &AbsorptionSpectrum, sigma: f64, seed: u64) -> Result<AbsorptionSpectrum> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = spec
        .depth()
        .iter()
        .map(|d| (d + normal.sample(&mut rng)).max(0.0))
        .collect();
    AbsorptionSpectrum::new(*spec.grid(), depth, spec.context.clone())
}

/// Peak detection and per-peak fit settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Local maxima below this fraction of the global maximum are ignored.
    pub threshold: f64,
    /// Maxima closer than this to a stronger one are suppressed, MHz.
    pub min_separation_mhz: f64,
    /// Absolute floor: nothing shallower than this counts as a peak.
    pub min_depth: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            min_separation_mhz: 0.2,
            min_depth: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    pub center_mhz: f64,
    pub amplitude: f64,
    pub fwhm_khz: f64,
    pub baseline: f64,
    /// RMS of the fit residual inside the window.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombFit {
    pub params: CombParams,
    pub peaks: Vec<PeakFit>,
}

impl CombFit {
    pub fn finesse(&self) -> f64 {
        self.params.finesse()
    }

    pub fn max_residual(&self) -> f64 {
        self.peaks.iter().map(|p| p.residual).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "# d={} gamma_kHz={} delta_MHz={} F={}\ncenter_MHz,amplitude,fwhm_kHz,baseline,residual\n",
            p.d,
            p.gamma_khz,
            p.delta_mhz,
            p.finesse()
        );
        for k in &self.peaks {
            let _ = writeln!(out, "{},{},{},{},{}", k.center_mhz, k.amplitude, k.fwhm_khz, k.baseline, k.residual);
        }
        out
    }
}

/// Indices of detected peaks in ascending frequency.
pub fn find_peaks(spec: &AbsorptionSpectrum, options: &FitOptions) -> Vec<usize> {
    let d = spec.depth();
    let max = spec.max_depth();
    if d.len() < 3 || max <= 0.0 {
        return Vec::new();
    }
    let floor = (options.threshold * max).max(options.min_depth);
    let mut candidates: Vec<usize> = (1..d.len() - 1)
        .filter(|&i| d[i] >= floor && d[i] >= d[i - 1] && d[i] > d[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let sep = options.min_separation_mhz / spec.grid().step();
    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        if kept.iter().all(|&k| (k as f64 - i as f64).abs() >= sep) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

const SIGMA_PER_FWHM: f64 = 0.424_660_900_144_009_5; // 1 / (2 √(2 ln 2))

struct GaussianPeak {
    nu: Vec<f64>,
    d: Vec<f64>,
    /// amplitude, centre, sigma, baseline
    p: Vector4<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U4> for GaussianPeak {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U4>;
    type ParameterStorage = Owned<f64, U4>;

    fn set_params(&mut self, x: &Vector4<f64>) {
        self.p = *x;
    }

    fn params(&self) -> Vector4<f64> {
        self.p
    }

    fn residuals(&self) -> Option<OVector<f64, Dyn>> {
        let [a, mu, s, b] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        Some(OVector::<f64, Dyn>::from_iterator(
            self.nu.len(),
            self.nu
                .iter()
                .zip(&self.d)
                .map(|(x, y)| a * (-(x - mu).powi(2) / (2.0 * s * s)).exp() + b - y),
        ))
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U4>> {
        let [a, mu, s, _] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        let mut j = OMatrix::<f64, Dyn, U4>::zeros(self.nu.len());
        for (r, x) in self.nu.iter().enumerate() {
            let u = x - mu;
            let g = (-u * u / (2.0 * s * s)).exp();
            j[(r, 0)] = g;
            j[(r, 1)] = a * g * u / (s * s);
            j[(r, 2)] = a * g * u * u / (s * s * s);
            j[(r, 3)] = 1.0;
        }
        Some(j)
    }
}

fn fit_peak(spec: &AbsorptionSpectrum, index: usize, half_window: f64) -> Result<PeakFit> {
    let grid = spec.grid();
    let center = grid.nu(index);
    let range = grid.index_range(center - half_window, center + half_window);
    let nu: Vec<f64> = range.clone().map(|i| grid.nu(i)).collect();
    let d: Vec<f64> = spec.depth()[range].to_vec();
    let peak = spec.depth()[index];
    let base = d.iter().copied().fold(f64::INFINITY, f64::min);
    // Initial width from the half-maximum crossing on either side.
    let half = base + 0.5 * (peak - base);
    let i0 = nu.iter().position(|&x| x >= center).unwrap_or(0);
    let right = d[i0..].iter().position(|&v| v < half).map(|k| k as f64);
    let left = d[..=i0].iter().rev().position(|&v| v < half).map(|k| k as f64);
    let hw = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        (Some(w), None) | (None, Some(w)) => w,
        (None, None) => 0.25 * nu.len() as f64,
    }
    .max(1.0)
        * grid.step();
    let problem = GaussianPeak {
        nu,
        d,
        p: Vector4::new(peak - base, center, 2.0 * hw * SIGMA_PER_FWHM, base),
    };
    let n = problem.nu.len() as f64;
    let (problem, report) = LevenbergMarquardt::new().minimize(problem);
    let [a, mu, s, b] = [problem.p[0], problem.p[1], problem.p[2].abs(), problem.p[3]];
    let ok = report.termination.was_successful()
        && [a, mu, s, b].iter().all(|v| v.is_finite())
        && a > 0.0
        && (mu - center).abs() < half_window;
    if !ok {
        return Err(Error::FitDidNotConverge { center });
    }
    Ok(PeakFit {
        center_mhz: mu,
        amplitude: a,
        fwhm_khz: s / SIGMA_PER_FWHM * 1e3,
        baseline: b,
        residual: (2.0 * report.objective_function / n).sqrt(),
    })
}

/// Fit every detected peak with a Gaussian on a constant baseline inside
/// ±Δ/2, with Δ estimated from the median peak spacing.
pub fn fit_comb(spec: &AbsorptionSpectrum) -> Result<CombFit> {
    fit_comb_with(spec, &FitOptions::default())
}

pub fn fit_comb_with(spec: &AbsorptionSpectrum, options: &FitOptions) -> Result<CombFit> {
    let peaks = find_peaks(spec, options);
    match peaks.len() {
        0 => return Err(Error::NoPeaks),
        1 => return Err(Error::TooFewPeaks(1)),
        _ => {}
    }
    let mut spacings: Vec<f64> = peaks
        .windows(2)
        .map(|w| spec.grid().nu(w[1]) - spec.grid().nu(w[0]))
        .collect();
    spacings.sort_by(f64::total_cmp);
    let median = spacings[spacings.len() / 2];
    let fits = peaks
        .iter()
        .map(|&i| fit_peak(spec, i, 0.5 * median))
        .collect::<Result<Vec<_>>>()?;
    let n = fits.len();
    let d = fits.iter().map(|p| p.amplitude).sum::<f64>() / n as f64;
    let gamma = fits.iter().map(|p| p.fwhm_khz).sum::<f64>() / n as f64;
    let delta = (fits[n - 1].center_mhz - fits[0].center_mhz) / (n - 1) as f64;
    let params = CombParams::new(d, gamma, delta, n)?;
    Ok(CombFit { params, peaks: fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::comb_spectrum;
    use crate::levels::ExcitedLevel;
    use crate::population::uniform_field;
    use crate::pumping::{apply_burnback, PulseKind, PulseSpec, PumpingModel};
    use proptest::prelude::*;

    fn comb(d: f64, gamma: f64, delta: f64, n: usize, order: f64) -> AbsorptionSpectrum {
        let p = CombParams::new(d, gamma, delta, n).unwrap();
        let grid = SpectralGrid::new(-1.0, (n - 1) as f64 * delta + 1.0, 0.005).unwrap();
        comb_spectrum(&p, 0.0, &grid, order, 0.0).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() < rel
    }

    #[test]
    fn fitting_recovers_a_clean_comb() {
        let fit = fit_comb(&comb(6.0, 175.0, 1.2, 4, 2.0)).unwrap();
        let p = fit.params;
        assert_eq!(p.n_peaks, 4);
        assert!(close(p.d, 6.0, 1e-3), "{p:?}");
        assert!(close(p.gamma_khz, 175.0, 1e-3));
        assert!(close(p.delta_mhz, 1.2, 1e-3));
        assert!((p.finesse() - 6.857).abs() < 0.01);
        assert!(fit.max_residual() < 1e-6);
    }

    #[test]
    fn flat_and_single_peak_spectra_are_rejected() {
        let grid = SpectralGrid::new(0.0, 5.0, 0.01).unwrap();
        let flat = AbsorptionSpectrum::new(grid, vec![0.3; grid.len()], "flat").unwrap();
        assert!(matches!(fit_comb(&flat), Err(Error::NoPeaks)));
        let zero = AbsorptionSpectrum::new(grid, vec![0.0; grid.len()], "empty").unwrap();
        assert!(matches!(fit_comb(&zero), Err(Error::NoPeaks)));
        let one = comb(3.0, 150.0, 1.2, 1, 2.0);
        assert!(matches!(fit_comb(&one), Err(Error::TooFewPeaks(1))));
    }

    #[test]
    fn super_gaussian_peaks_leave_a_visible_residual() {
        let fit = fit_comb(&comb(5.0, 200.0, 1.2, 4, 3.0)).unwrap();
        let gauss = fit_comb(&comb(5.0, 200.0, 1.2, 4, 2.0)).unwrap();
        assert!(fit.max_residual() > 1e-2, "{}", fit.max_residual());
        assert!(fit.max_residual() > 1e3 * gauss.max_residual());
        assert!(!close(fit.params.gamma_khz, 200.0, 0.01), "{}", fit.params.gamma_khz);
    }

    #[test]
    fn scan_of_one_peak_on_two_lines() {
        let scheme = HyperfineScheme::default();
        let grid = SpectralGrid::new(-60.0, 60.0, 0.01).unwrap();
        let mut field = uniform_field(grid, &scheme, 60.0).unwrap();
        // Empty a window completely, then burn one peak back.
        for i in field.grid().index_range(-5.0, 5.0) {
            field.occupations_mut()[i] = [0.0, 0.0, 1.0];
        }
        let model = PumpingModel::default();
        let pulse = PulseSpec {
            name: "peak".into(),
            kind: PulseKind::Burnback {
                center: 0.0,
                chirp_width_khz: 150.0,
                transfer_efficiency: 1.0,
                relative_power: 1.0,
            },
        };
        apply_burnback(&mut field, &model, &pulse).unwrap();
        let strong = scan_spectrum(&field, &scheme, TransitionLabel::STRONG, (-1.0, 1.0), 201).unwrap();
        let weak_line = TransitionLabel::WEAK_READOUT;
        let off = scheme.line_offset(weak_line);
        let weak = scan_spectrum(&field, &scheme, weak_line, (off - 1.0, off + 1.0), 201).unwrap();
        let r = scheme.strength(weak_line) / scheme.strength(TransitionLabel::STRONG);
        for (s, w) in strong.depth().iter().zip(weak.depth()) {
            assert!((w - r * s).abs() < 1e-9 * strong.max_depth());
        }
        let inferred = infer_from_scheme(&weak, &scheme, weak_line, TransitionLabel::STRONG).unwrap();
        for (nu, d) in strong.grid().points().zip(strong.depth()) {
            assert!((inferred.depth_at(nu) - d).abs() < 1e-9 * strong.max_depth());
        }
        let mid = scan_spectrum(&field, &scheme, TransitionLabel::STRONG, (-1.0, 1.0), 1).unwrap();
        assert_eq!(mid.grid().nu(0), 0.0);
        assert!((mid.depth()[0] - strong.max_depth()).abs() < 1e-9);
        assert!(scan_spectrum(&field, &scheme, TransitionLabel::STRONG, (50.0, 70.0), 11).is_err());
        assert_eq!(scheme.line_offset(weak_line), scheme.excited_offset(ExcitedLevel::FiveHalves));
    }

    #[test]
    fn inference_scales_and_shifts() {
        let grid = SpectralGrid::new(9.0, 11.0, 0.01).unwrap();
        let p = CombParams::new(1.5, 150.0, 1.2, 2).unwrap();
        let weak = comb_spectrum(&p, 9.4, &grid, 2.0, 0.0).unwrap();
        let strong = infer_strong_depth(&weak, 4.0, 9.4).unwrap();
        assert!((strong.depth_at(0.0) - 6.0).abs() < 1e-9);
        assert!((strong.grid().nu_min() + 0.4).abs() < 1e-12);
        let same = infer_strong_depth(&weak, 1.0, 0.0).unwrap();
        assert_eq!(same.depth(), weak.depth());
        assert!(infer_strong_depth(&weak, 0.0, 9.4).is_err());
        assert!(infer_strong_depth(&weak, -2.0, 9.4).is_err());
    }

    #[test]
    fn moderate_noise_still_fits() {
        let clean = comb(4.0, 175.0, 1.2, 4, 2.0);
        let noisy = add_noise(&clean, 0.02, 7).unwrap();
        assert_eq!(noisy, add_noise(&clean, 0.02, 7).unwrap());
        let fit = fit_comb(&noisy).unwrap();
        assert_eq!(fit.params.n_peaks, 4);
        assert!(close(fit.params.gamma_khz, 175.0, 0.03));
        assert!(fit.to_csv().starts_with("# d="));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fit_round_trip(d in 0.5f64..10.0, gamma in 100.0f64..300.0, n in 2usize..7) {
            let fit = fit_comb(&comb(d, gamma, 1.2, n, 2.0)).unwrap();
            prop_assert_eq!(fit.params.n_peaks, n);
            prop_assert!(close(fit.params.d, d, 0.01));
            prop_assert!(close(fit.params.gamma_khz, gamma, 0.01));
            prop_assert!(close(fit.params.delta_mhz, 1.2, 0.01));
        }

        #[test]
        fn scaling_commutes_with_fitting(d in 0.5f64..5.0, gamma in 120.0f64..260.0, r in 0.2f64..8.0) {
            let spec = comb(d, gamma, 1.2, 4, 2.0);
            let a = fit_comb(&spec).unwrap().params;
            let b = fit_comb(&infer_strong_depth(&spec, r, 0.0).unwrap()).unwrap().params;
            prop_assert!(close(b.d, r * a.d, 1e-6));
            prop_assert!(close(b.gamma_khz, a.gamma_khz, 1e-6));
            prop_assert!(close(b.delta_mhz, a.delta_mhz, 1e-9));
        }

        #[test]
        fn every_peak_is_detected(d in 0.2f64..10.0, gamma in 100.0f64..300.0, n in 1usize..9) {
            prop_assert_eq!(find_peaks(&comb(d, gamma, 1.2, n, 2.0), &FitOptions::default()).len(), n);
        }
    }
}
