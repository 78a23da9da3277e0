//! Hyperfine level structure of a Pr³⁺-like ion.
//!
//! Frequency convention, used by every other module: the optical transition
//! of an ion class is labelled by the frequency of its `1/2g -> 1/2e` line
//! (the class detuning `c`). Any other line of that class sits at
//!
//! ```text
//! c + ground_offset(g) + excited_offset(e)
//! ```
//!
//! where both offsets are cumulative level spacings and therefore
//! non-negative. Transitions out of the deeper ground reservoirs (3/2g, 5/2g)
//! appear at positive detunings, as in the pit-burning pulse table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroundLevel {
    Half,
    ThreeHalves,
    FiveHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExcitedLevel {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl GroundLevel {
    pub const ALL: [GroundLevel; 3] = [Self::Half, Self::ThreeHalves, Self::FiveHalves];

    pub fn index(self) -> usize {
        self as usize
    }

    fn spin(self) -> &'static str {
        ["1/2", "3/2", "5/2"][self.index()]
    }
}

impl ExcitedLevel {
    pub const ALL: [ExcitedLevel; 3] = [Self::Half, Self::ThreeHalves, Self::FiveHalves];

    pub fn index(self) -> usize {
        self as usize
    }

    fn spin(self) -> &'static str {
        ["1/2", "3/2", "5/2"][self.index()]
    }
}

/// One of the nine optical transitions of an ion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransitionLabel {
    pub ground: GroundLevel,
    pub excited: ExcitedLevel,
}

impl TransitionLabel {
    pub const fn new(ground: GroundLevel, excited: ExcitedLevel) -> Self {
        Self { ground, excited }
    }

    /// The storage transition, `1/2g -> 1/2e`.
    pub const STRONG: Self = Self::new(GroundLevel::Half, ExcitedLevel::Half);
    /// The weak readout transition used to measure deep combs, `1/2g -> 5/2e`.
    pub const WEAK_READOUT: Self = Self::new(GroundLevel::Half, ExcitedLevel::FiveHalves);

    pub fn all() -> impl Iterator<Item = TransitionLabel> {
        GroundLevel::ALL
            .into_iter()
            .flat_map(|g| ExcitedLevel::ALL.into_iter().map(move |e| Self::new(g, e)))
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}g->{}e", self.ground.spin(), self.excited.spin())
    }
}

fn parse_level(s: &str, suffix: char) -> Option<usize> {
    let s = s.trim();
    let s = s.strip_suffix(suffix)?;
    let s = s.strip_suffix('_').unwrap_or(s);
    match s {
        "1/2" => Some(0),
        "3/2" => Some(1),
        "5/2" => Some(2),
        _ => None,
    }
}

impl FromStr for TransitionLabel {
    type Err = Error;

    /// Accepts `3/2g->1/2e`, `3/2_g -> 1/2_e` and the arrow `→`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown transition label `{s}`"));
        let (g, e) = s
            .split_once("->")
            .or_else(|| s.split_once('→'))
            .ok_or_else(bad)?;
        let g = parse_level(g, 'g').ok_or_else(bad)?;
        let e = parse_level(e, 'e').ok_or_else(bad)?;
        Ok(Self::new(GroundLevel::ALL[g], ExcitedLevel::ALL[e]))
    }
}

/// Level spacings, relative oscillator strengths and excited-state lifetime.
///
/// The default oscillator-strength matrix is a configuration value, not a
/// measured quantity: it reproduces the ordering the pumping and readout
/// procedures rely on (`1/2g -> 1/2e` strongest line out of 1/2g,
/// `5/2g -> 5/2e` strongest overall, `1/2g -> 5/2e` and `3/2g -> 5/2e` weak).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperfineScheme {
    /// `|1/2g>-|3/2g>` and `|3/2g>-|5/2g>` in MHz.
    pub ground_spacings_mhz: [f64; 2],
    /// `|1/2e>-|3/2e>` and `|3/2e>-|5/2e>` in MHz.
    pub excited_spacings_mhz: [f64; 2],
    /// Rows: ground level, columns: excited level.
    pub oscillator_strengths: [[f64; 3]; 3],
    pub excited_lifetime_us: f64,
    pub homogeneous_linewidth_khz: f64,
}

impl Default for HyperfineScheme {
    fn default() -> Self {
        Self {
            ground_spacings_mhz: [10.2, 17.3],
            excited_spacings_mhz: [4.6, 4.8],
            oscillator_strengths: [
                [0.55, 0.38, 0.07],
                [0.40, 0.60, 0.01],
                [0.05, 0.02, 0.93],
            ],
            excited_lifetime_us: 164.0,
            homogeneous_linewidth_khz: 1.0,
        }
    }
}

impl HyperfineScheme {
    pub fn new(
        ground_spacings_mhz: [f64; 2],
        excited_spacings_mhz: [f64; 2],
        oscillator_strengths: [[f64; 3]; 3],
    ) -> Result<Self> {
        let scheme = Self {
            ground_spacings_mhz,
            excited_spacings_mhz,
            oscillator_strengths,
            ..Self::default()
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        let spacings = self.ground_spacings_mhz.iter().chain(&self.excited_spacings_mhz);
        for &s in spacings {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidScheme(format!("level spacing {s} MHz")));
            }
        }
        for (g, row) in self.oscillator_strengths.iter().enumerate() {
            for &s in row {
                if !(s > 0.0 && s <= 1.0) {
                    return Err(Error::InvalidScheme(format!(
                        "oscillator strength {s} in row {g} is outside (0, 1]"
                    )));
                }
            }
        }
        let first = &self.oscillator_strengths[0];
        if first[0] < first[1] || first[0] < first[2] {
            return Err(Error::InvalidScheme(
                "1/2g -> 1/2e must be the strongest line out of 1/2g".into(),
            ));
        }
        if !(self.excited_lifetime_us > 0.0) || !(self.homogeneous_linewidth_khz > 0.0) {
            return Err(Error::InvalidScheme(
                "lifetime and homogeneous linewidth must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_ground_splitting(&self) -> f64 {
        self.ground_spacings_mhz[0] + self.ground_spacings_mhz[1]
    }

    pub fn total_excited_splitting(&self) -> f64 {
        self.excited_spacings_mhz[0] + self.excited_spacings_mhz[1]
    }

    pub fn ground_offset(&self, g: GroundLevel) -> f64 {
        let [a, b] = self.ground_spacings_mhz;
        [0.0, a, a + b][g.index()]
    }

    pub fn excited_offset(&self, e: ExcitedLevel) -> f64 {
        let [a, b] = self.excited_spacings_mhz;
        [0.0, a, a + b][e.index()]
    }

    /// Offset of a line from the `1/2g -> 1/2e` line of the same class.
    pub fn line_offset(&self, t: TransitionLabel) -> f64 {
        self.ground_offset(t.ground) + self.excited_offset(t.excited)
    }

    /// Largest line offset; every line of a class lies in `[c, c + max_line_offset]`.
    pub fn max_line_offset(&self) -> f64 {
        self.total_ground_splitting() + self.total_excited_splitting()
    }

    pub fn strength(&self, t: TransitionLabel) -> f64 {
        self.oscillator_strengths[t.ground.index()][t.excited.index()]
    }

    pub fn total_strength(&self) -> f64 {
        self.oscillator_strengths.iter().flatten().sum()
    }

    /// Decay probabilities from excited level `e` into each ground level.
    pub fn branching(&self, e: ExcitedLevel) -> [f64; 3] {
        let col = e.index();
        let s = &self.oscillator_strengths;
        let total = s[0][col] + s[1][col] + s[2][col];
        [s[0][col] / total, s[1][col] / total, s[2][col] / total]
    }
}

pub fn transition_offset(scheme: &HyperfineScheme, class_detuning: f64, t: TransitionLabel) -> f64 {
    class_detuning + scheme.line_offset(t)
}

/// Widest interval a single scan can empty on all lines.
pub fn max_pit_width(scheme: &HyperfineScheme) -> Result<f64> {
    let width = scheme.total_ground_splitting() - scheme.total_excited_splitting();
    if width < 0.0 {
        return Err(Error::InvalidScheme(format!(
            "excited splitting exceeds ground splitting (pit width {width:.3} MHz)"
        )));
    }
    Ok(width)
}

/// Comb bandwidth available on the storage line before the next excited level.
pub fn afc_bandwidth_limit(scheme: &HyperfineScheme) -> f64 {
    scheme.excited_spacings_mhz[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn label(s: &str) -> TransitionLabel {
        s.parse().unwrap()
    }

    #[test]
    fn offsets_of_defaults() {
        let s = HyperfineScheme::default();
        assert_eq!(transition_offset(&s, 0.0, label("1/2g->1/2e")), 0.0);
        assert_abs_diff_eq!(transition_offset(&s, 0.0, label("1/2g->5/2e")), 9.4, epsilon = 1e-12);
        assert_abs_diff_eq!(transition_offset(&s, 2.0, label("1/2g->3/2e")), 6.6, epsilon = 1e-12);
    }

    #[test]
    fn totals_match_level_structure() {
        let s = HyperfineScheme::default();
        assert_abs_diff_eq!(s.total_ground_splitting(), 27.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.total_excited_splitting(), 9.4, epsilon = 1e-12);
        let pit = max_pit_width(&s).unwrap();
        assert_abs_diff_eq!(pit, 18.1, epsilon = 1e-12);
        assert_eq!(pit + s.total_excited_splitting(), s.total_ground_splitting());
    }

    #[test]
    fn pit_width_examples() {
        let strengths = HyperfineScheme::default().oscillator_strengths;
        let wide = HyperfineScheme::new([20.0, 20.0], [0.0, 0.0], strengths).unwrap();
        assert_eq!(max_pit_width(&wide).unwrap(), 40.0);
        let inverted = HyperfineScheme::new([5.0, 5.0], [6.0, 6.0], strengths).unwrap();
        assert!(matches!(max_pit_width(&inverted), Err(Error::InvalidScheme(_))));
    }

    #[test]
    fn bandwidth_limit() {
        let strengths = HyperfineScheme::default().oscillator_strengths;
        assert_eq!(afc_bandwidth_limit(&HyperfineScheme::default()), 4.6);
        let s = HyperfineScheme::new([10.2, 17.3], [3.0, 5.0], strengths).unwrap();
        assert_eq!(afc_bandwidth_limit(&s), 3.0);
        let s = HyperfineScheme::new([10.2, 17.3], [4.6, 4.8], strengths).unwrap();
        assert_eq!(afc_bandwidth_limit(&s), 4.6);
        assert_abs_diff_eq!(s.total_excited_splitting(), 9.4, epsilon = 1e-12);
    }

    #[test]
    fn default_strengths_satisfy_invariants() {
        let s = HyperfineScheme::default();
        s.validate().unwrap();
        for e in ExcitedLevel::ALL {
            let b: f64 = s.branching(e).iter().sum();
            assert_abs_diff_eq!(b, 1.0, epsilon = 1e-12);
        }
        // 5/2e decays only weakly into 1/2g.
        assert!(s.branching(ExcitedLevel::FiveHalves)[0] < 0.1);
    }

    #[test]
    fn rejects_bad_strengths() {
        let mut m = HyperfineScheme::default().oscillator_strengths;
        m[1][2] = 0.0;
        assert!(HyperfineScheme::new([10.2, 17.3], [4.6, 4.8], m).is_err());
        let mut m = HyperfineScheme::default().oscillator_strengths;
        m[0][1] = 0.9;
        assert!(HyperfineScheme::new([10.2, 17.3], [4.6, 4.8], m).is_err());
    }

    #[test]
    fn label_parsing() {
        assert_eq!(label("3/2_g -> 1/2_e"), label("3/2g->1/2e"));
        assert_eq!(label("5/2g→5/2e").to_string(), "5/2g->5/2e");
        assert!("7/2g->1/2e".parse::<TransitionLabel>().is_err());
        assert!("1/2g-1/2e".parse::<TransitionLabel>().is_err());
        assert_eq!(TransitionLabel::all().count(), 9);
        for t in TransitionLabel::all() {
            assert_eq!(label(&t.to_string()), t);
        }
    }

    proptest! {
        #[test]
        fn same_ground_differences_are_detuning_free(
            c1 in -100.0f64..100.0,
            c2 in -100.0f64..100.0,
            g in 0usize..3, e1 in 0usize..3, e2 in 0usize..3,
        ) {
            let s = HyperfineScheme::default();
            let a = TransitionLabel::new(GroundLevel::ALL[g], ExcitedLevel::ALL[e1]);
            let b = TransitionLabel::new(GroundLevel::ALL[g], ExcitedLevel::ALL[e2]);
            let d1 = transition_offset(&s, c1, b) - transition_offset(&s, c1, a);
            let d2 = transition_offset(&s, c2, b) - transition_offset(&s, c2, a);
            let expected = s.excited_offset(b.excited) - s.excited_offset(a.excited);
            prop_assert!((d1 - expected).abs() < 1e-9);
            prop_assert!((d2 - expected).abs() < 1e-9);
        }
    }
}
