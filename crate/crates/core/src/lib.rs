//! Training and certification of smoothed classifiers.
//!
//! A base classifier `f` is turned into a smoothed classifier `g` by voting
//! under isotropic Gaussian input noise: `g(x) = argmax_c P(f(x + eta) = c)`
//! with `eta ~ N(0, sigma^2 I)`. Around any input, `g` is provably constant
//! within an L2 ball whose radius depends on how decisively the vote comes
//! out; this crate estimates that radius with one-sided confidence bounds
//! (hard votes via Clopper-Pearson, expected soft likelihoods via Hoeffding
//! or empirical Bernstein) and trains networks to enlarge it by attaching a
//! hinge penalty on the certified-radius surrogate to the usual
//! cross-entropy objective.
//!
//! Module map:
//!
//! - [`statmath`]: normal CDF/quantile, confidence lower bounds, seeded
//!   Gaussian sampling on splittable streams. Everything downstream builds
//!   on these primitives.
//! - [`net`]: a small dense ReLU network with hand-written reverse-mode
//!   gradients and a binary checkpoint format.
//! - [`smoothing`]: Monte-Carlo certification of a smoothed classifier.
//! - [`macer`]: the radius-maximizing training loop.
//! - [`data`]: synthetic blob datasets and an IDX image loader.
//! - [`eval`]: certified-accuracy curves, ACR, and CSV reports.
//!
//! All randomness flows through [`statmath::RngStream`], so every run is a
//! pure function of its seeds: training twice with the same config yields
//! bit-identical parameters, and certifying twice yields identical radii.

pub mod data;
pub mod eval;
pub mod macer;
pub mod net;
pub mod smoothing;
pub mod statmath;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
