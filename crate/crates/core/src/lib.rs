//! Monte Carlo laboratory for Poisson-Voronoi percolation.
//!
//! The crate samples marked Poisson processes on flat, hyperbolic, product and
//! graph geometries, builds their Voronoi tessellations with witness-certified
//! adjacency, and runs percolation, touching, frequency, thickening and
//! sparse-graph estimators on top of them.

pub mod error;
pub mod experiment;
pub mod factorgraph;
pub mod frequency;
pub mod geometry;
pub mod parallel;
pub mod percolation;
pub mod pointprocess;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod tessellation;
pub mod thickening;
pub mod unionfind;
pub mod vptree;

pub use error::{Error, Result};
pub use geometry::{Point, Space};
pub use rng::RandomStream;
