//! Cycle-level model of a hybrid mesh-crossbar core-to-L1-bank interconnect:
//! tiles of cores and banks behind single-cycle crossbars, groups of tiles
//! joined by a second crossbar stage, and groups joined by replicated
//! word-width 2D-mesh channels with XY routers and pseudorandom router
//! remapping. A closed-form latency/complexity co-model and a cycle-driven
//! simulator share one configuration.

pub mod analytic;
pub mod cli;
pub mod config;
pub mod endpoints;
pub mod engine;
pub mod metrics;
pub mod remapper;
pub mod router;
pub mod xbar;

pub use analytic::{critical_complexity, hop_round_trip, zero_load_latency, LatencyModel, XbarInventory};
pub use config::{
    classify_destination, decode_address, encode_address, structural_counts, BankCoordinate,
    DestClass, NetworkConfig, NodeId, StructuralCounts,
};
pub use endpoints::{generate_pattern, AccessKind, PatternKind, TrafficPattern};
pub use engine::{measure_isolated_round_trip, SimError, Simulation};
pub use metrics::SimReport;
