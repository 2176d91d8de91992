//! Bayesian neural stochastic pedestrian dynamics: data handling, a small
//! neural-network engine, force networks, SDE rollouts, training,
//! forecasting and crowd simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod explain;
pub mod forecast;
pub mod io;
pub mod losses;
pub mod model;
pub mod networks;
pub mod nn;
pub mod rng;
pub mod rollout;
pub mod simulator;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

/// 2-D vector in pixel coordinates.
pub type Vec2 = nalgebra::Vector2<f64>;
