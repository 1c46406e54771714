//! Self-supervised neural path planning for car-like vehicles.
//!
//! A small network proposes the gluing points of a quintic spline, one at a
//! time, and the last segment is closed analytically onto the goal pose.
//! Training needs no demonstrations: the losses in [`loss`] penalize
//! collisions with the free space, curvature above the vehicle's limit,
//! overshooting the goal and unbalanced segment lengths, and all of them are
//! differentiated through the spline construction by the tape in
//! [`autodiff`].
//!
//! The crate also ships the scenario generator with a Dubins feasibility
//! gate, two baseline planners (RRT* and a state lattice), an independent
//! path validator and the evaluation harness.

pub mod autodiff;
pub mod baselines;
pub mod dubins;
pub mod evaluate;
pub mod geometry;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod scenario;
pub mod selftest;
pub mod spline;
pub mod task;
pub mod trainer;
pub mod validate;
pub mod vehicle;
