//! Simulation and analysis of hybrid systems that combine rapid Markovian
//! regime switching with a slow diffusion.
//!
//! The object of study is the pair `(X(t), α(t))` where `α` is a continuous
//! time Markov chain on finitely many regimes, sped up by a factor `1/ε`,
//! and `X` solves
//!
//! ```text
//! dX(t) = f(X(t), α(t)) dt + sqrt(δ) σ(X(t), α(t)) dW(t)
//! ```
//!
//! for small `δ`. As `ε, δ → 0` the pair averages out: `X` tracks the
//! deterministic flow of the averaged field `f̄(x) = Σ_i f(x, i) ν_i`
//! (`ν` the stationary law of the chain), and when that flow has an
//! attracting periodic orbit the invariant measures of `(X, α)` collapse
//! onto the orbit's occupation measure. The crate provides each ingredient
//! and the experiments that exhibit the collapse:
//!
//! - [`ctmc`] — generators, stationary laws, exact jump-time sampling;
//! - [`sde`] — hybrid Euler–Maruyama integration, ensembles, deviation and
//!   exit-time experiments, scaling schedules;
//! - [`averaging`] — the averaged field, fixed-step ODE integration,
//!   critical points, limit-cycle detection and occupation measures;
//! - [`measures`] — gridded empirical measures, bounded-Lipschitz distance,
//!   convergence sweeps over a scaling schedule;
//! - [`predprey`] — a two-regime stochastic predator–prey family used as
//!   the worked example throughout;
//! - [`rng`] — splittable counter-based random streams so every experiment
//!   is reproducible bit for bit, independent of thread count.

pub mod averaging;
pub mod ctmc;
pub mod error;
pub mod measures;
pub mod model;
pub mod predprey;
pub mod rng;
pub mod sde;

pub use error::Error;
pub use model::HybridModel;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
