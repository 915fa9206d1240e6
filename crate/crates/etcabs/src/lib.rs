//! Finite-state traffic abstractions of nonlinear homogeneous event-triggered
//! control (ETC) systems.
//!
//! The state space of a planar homogeneous ETC loop is partitioned into
//! regions bounded by inner approximations of isochronous manifolds (level
//! sets of equal inter-event time) intersected with a conic covering. Each
//! region becomes one state of a finite transition system whose output is a
//! certified interval containing every inter-event time the region can
//! produce, and whose transitions overapproximate the sampled successor
//! relation via validated reachability. The resulting system approximately
//! simulates the sampling traffic of the original loop with precision equal
//! to the largest output-interval length.
//!
//! Pipeline stages, bottom to top:
//!
//! * [`poly`] - exact sparse polynomial arithmetic, Lie derivatives and
//!   homogeneity analysis;
//! * [`etc`] - the closed loop, its extended (state, error) dynamics and the
//!   high-accuracy inter-event-time oracle;
//! * [`delta`] - certified coefficients bounding the p-th Lie derivative of
//!   the triggering function over a ball;
//! * [`isochron`] - the analytic manifold approximation built from those
//!   coefficients and its ray geometry;
//! * [`partition`] / [`overapprox`] - cones, bands, and certified
//!   ball-segment overapproximations of the regions;
//! * [`reach`] - interval flowpipes, upper-bound certification and the
//!   transition test;
//! * [`abstraction`] - assembly, precision, validation and exports;
//! * [`config`] - run configuration and its canonical digest.

pub mod abstraction;
pub mod config;
pub mod delta;
pub mod etc;
pub mod expm;
pub mod interval;
pub mod isochron;
pub mod ode;
pub mod overapprox;
pub mod partition;
pub mod poly;
pub mod reach;

pub use abstraction::{build_abstraction, precision, validate_trace, Abstraction};
pub use config::RunConfig;
pub use delta::DeltaCertificate;
pub use etc::{EtcSystem, ExtendedSystem, TraceEvent};
pub use isochron::MuFunction;
pub use overapprox::BallSegment;
pub use partition::{Cone, Region};
pub use poly::{PolyVectorField, Polynomial};
