//! Lane changing in dense highway traffic as a POMDP with latent driver
//! behavior, plus the planners, belief filters and experiment drivers used to
//! study it.

pub mod behavior_priors;
pub mod belief;
pub mod cli;
pub mod experiments;
pub mod highway_sim;
pub mod lanechange_pomdp;
pub mod planners;
pub mod rng;
pub mod traffic_models;
