//! Atomic-frequency-comb (AFC) photon-echo memory simulator.
//!
//! The crate models a rare-earth-doped crystal with three hyperfine ground and
//! three hyperfine excited levels, prepares spectral pits and combs in it by
//! optical pumping, and predicts the resulting echo efficiency twice: once from
//! the closed-form comb theory ([`analytic`]) and once by propagating a weak
//! pulse through the prepared absorption spectrum ([`propagation`]).
//!
//! Frequencies are in MHz unless a name says otherwise (`_khz`), times are in
//! µs (`_us`) or ns (`_ns`).

pub mod analytic;
pub mod error;
pub mod experiment;
pub mod levels;
pub mod population;
pub mod probe;
pub mod propagation;
pub mod pumping;

pub use error::{Error, Result};
