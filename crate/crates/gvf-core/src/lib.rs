//! General value function question networks with a self-contained learning
//! stack: graph construction and random generation, transition features,
//! TD target computation, a small dense neural network engine, the empty
//! room grid world, and analytic oracles for policy evaluation.

pub mod agent;
pub mod config;
pub mod envs;
pub mod features;
pub mod oracle;
pub mod qnet;
pub mod rng;
pub mod tabular;
pub mod targets;
pub mod tinynn;
