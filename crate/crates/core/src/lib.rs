//! Denoising-autoencoder transport in closed form.
//!
//! A Gaussian denoising autoencoder trained to optimality on data `μ0` with
//! noise variance `t` is the map `Φ_t(x) = x + t ∇log[N(0, tI) * μ0](x)`.
//! This crate evaluates those maps exactly for Gaussian mixtures, estimates
//! them from samples, composes them into deep and continuous flows, tracks
//! the resulting pushforward measures, and checks the PDE identities the
//! flows satisfy (continuity equation, backward heat equation, entropy
//! decrease) against independent numerical oracles.
//!
//! | module | contents |
//! |--------|----------|
//! | [`measures`] | [`GaussianMixture`], sampling, scores, entropies |
//! | [`transport`] | [`DaeMap`], [`compose`], [`continuous_flow`] |
//! | [`pushforward`] | closed-form pushforwards and `(σ1, σ2)` coordinates |
//! | [`verify`] | residual checks producing [`ResidualReport`]s |
//! | [`io`] | CSV/JSON export |

pub mod error;
pub mod io;
pub mod linalg;
pub mod measures;
pub mod pushforward;
pub mod rng;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Spd;
pub use measures::{
    stein_residual, Component, Estimate, GaussianMixture, McSettings, MixtureSpec, NoiseVariance,
    ParticleEnsemble,
};
pub use pushforward::{
    abstract_coordinates, empirical_moments, push_continuous, push_one_shot, w2_distance,
    AbstractPoint, GaussianPushforward, PushforwardSource,
};
pub use transport::{
    analytic_continuous_map, compose, continuous_flow, one_shot_family, DaeMap, Diagnostics, FlowSchedule,
    RetrainMode, Trajectory,
};
pub use verify::{run_suite, Manifest, ResidualReport, SuiteConfig, Tolerances};
