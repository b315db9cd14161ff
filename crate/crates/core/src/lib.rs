//! Models of hybrid DRAM + NVM page caches.
//!
//! The crate offers three views of the same list-based cache and checks them
//! against each other:
//!
//! * [`simulator`] replays an independent-reference request stream through the
//!   randomized list replacement algorithm,
//! * [`meanfield`] integrates the per-page occupancy ODEs and solves for their
//!   fixed point,
//! * [`oracle`] enumerates the exact Markov chain on tiny instances.
//!
//! [`latency`] turns a cache content distribution into an average request
//! latency, and [`explorer`] drives parameter sweeps and validation runs.

pub mod error;
pub mod explorer;
pub mod latency;
pub mod meanfield;
pub mod model;
pub mod oracle;
pub mod simulator;
pub mod workload;

pub use error::{Error, Result};
pub use latency::DeviceTimings;
pub use meanfield::{ContentDistribution, FixedPoint, MeanFieldState};
pub use model::{Architecture, Budget, CacheGeometry, Device};
pub use simulator::{CacheState, SimConfig, SimMetrics};
pub use workload::PopularityDist;
