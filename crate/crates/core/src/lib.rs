//! Excited random walks (cookie walks) on Z^d.
//!
//! - [`env`]: cookies, stack models, lazily realized environments, δ and phases.
//! - [`walk`]: the walk itself, with hitting times, jump counts and local times.
//! - [`branching`]: the dual branching process with migration.
//! - [`regen`]: regeneration times, speed estimation, cycle correspondence.
//! - [`stats`]: stable sampling, Hill estimation, KS tests, bootstrap.
//! - [`limits`]: scaling-limit checks against stable laws and perturbed Brownian motion.
//! - [`cli`]: declarative experiment configs and the batch suites.

pub mod branching;
pub mod cli;
pub mod env;
pub mod harness;
pub mod limits;
pub mod regen;
pub mod rng;
pub mod stats;
pub mod walk;

pub use env::{classify_phase, delta, Cookie, CookieStack, Direction, Environment, Phase, Site, StackModel};

