//! Closed-form design equations: critical crossbar routing complexity and
//! zero-load round-trip latency of the group mesh, plus the flat-mesh
//! comparison point.

use crate::config::NetworkConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("crossbar inventory is empty")]
    EmptyInventory,
    #[error("zero-load latency needs a square mesh; {0} nodes is not a perfect square")]
    NotSquare(usize),
}

/// One crossbar instance class in the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XbarStage {
    pub label: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl XbarStage {
    pub fn new(label: &str, inputs: usize, outputs: usize) -> Self {
        XbarStage { label: label.to_string(), inputs, outputs }
    }

    pub fn complexity(&self) -> u64 {
        self.inputs as u64 * self.outputs as u64
    }
}

/// Every crossbar instance class in a hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XbarInventory {
    pub stages: Vec<XbarStage>,
}

impl XbarInventory {
    /// The crossbar classes instantiated by `cfg`: the tile core-to-bank
    /// crossbar (fed by the M cores, the intra-group port, and the K remote
    /// receive ports), the QxQ intra-group crossbar, and the QxQ receive-side
    /// crossbars of both networks.
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        let m = cfg.cores_per_tile;
        let n = cfg.banks_per_tile;
        let q = cfg.tiles_per_group;
        let k = cfg.channels_per_tile;
        XbarInventory {
            stages: vec![
                XbarStage::new("tile core-to-bank (incl. receive paths)", m + 1 + k, n),
                XbarStage::new("intra-group tile-to-tile", q, q),
                XbarStage::new("router-to-tile receive (request)", q, q),
                XbarStage::new("router-to-tile receive (response)", q, q),
            ],
        }
    }

    /// A single flat crossbar connecting every core to every bank, the
    /// non-hierarchical comparison point.
    pub fn flat(cfg: &NetworkConfig) -> Self {
        XbarInventory {
            stages: vec![XbarStage::new("flat core-to-bank", cfg.total_cores(), cfg.total_banks())],
        }
    }
}

/// Max over the inventory of inputs x outputs; the routing-dominant instance.
pub fn critical_complexity(inv: &XbarInventory) -> Result<u64, AnalyticError> {
    inv.stages
        .iter()
        .map(XbarStage::complexity)
        .max()
        .ok_or(AnalyticError::EmptyInventory)
}

/// Inputs to the zero-load latency equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Nodes in the top-level square mesh.
    pub n_top: usize,
    /// Cycles per hop.
    pub hop_latency: u64,
    /// Constant round-trip overhead (crossbar stages and spill registers).
    pub spill_const: u64,
}

impl LatencyModel {
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        LatencyModel {
            n_top: cfg.total_groups(),
            hop_latency: cfg.hop_latency,
            spill_const: cfg.spill_const,
        }
    }

    /// The comparison point where every tile is its own mesh node.
    pub fn flat_tile_mesh(cfg: &NetworkConfig) -> Self {
        LatencyModel {
            n_top: cfg.total_tiles(),
            hop_latency: cfg.hop_latency,
            spill_const: cfg.spill_const,
        }
    }
}

/// Zero-load round-trip latencies of a square mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroLoadLatency {
    pub max_cycles: u64,
    /// Expected value over uniform random node pairs, reported to one decimal.
    pub avg_cycles: f64,
}

fn integer_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// max = 2*L_hop*(2*sqrt(N) - 1) + spill; avg = (4/3)*L_hop*sqrt(N) + spill.
/// avg is rounded half-up to one decimal.
pub fn zero_load_latency(model: &LatencyModel) -> Result<ZeroLoadLatency, AnalyticError> {
    let root = integer_sqrt(model.n_top).ok_or(AnalyticError::NotSquare(model.n_top))? as u64;
    let max_cycles = 2 * model.hop_latency * (2 * root - 1) + model.spill_const;
    let avg = 4.0 / 3.0 * model.hop_latency as f64 * root as f64 + model.spill_const as f64;
    Ok(ZeroLoadLatency { max_cycles, avg_cycles: (avg * 10.0).round() / 10.0 })
}

/// Round trip for a given hop count. Zero hops never touch the mesh, so the
/// caller supplies the crossbar-path constant for that case.
pub fn hop_round_trip(model: &LatencyModel, hops: u64, zero_hop_cycles: u64) -> u64 {
    if hops == 0 {
        zero_hop_cycles
    } else {
        2 * model.hop_latency * hops + model.spill_const
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_complexity_of_testbed_is_256() {
        let inv = XbarInventory::from_config(&NetworkConfig::teranoc_1024());
        assert_eq!(critical_complexity(&inv).unwrap(), 256);
    }

    #[test]
    fn critical_complexity_flat_and_identity() {
        let flat = XbarInventory::flat(&NetworkConfig::teranoc_1024());
        assert_eq!(critical_complexity(&flat).unwrap(), 4_194_304);
        let one = XbarInventory { stages: vec![XbarStage::new("unit", 1, 1)] };
        assert_eq!(critical_complexity(&one).unwrap(), 1);
        let empty = XbarInventory { stages: vec![] };
        assert_eq!(critical_complexity(&empty), Err(AnalyticError::EmptyInventory));
    }

    #[test]
    fn critical_complexity_is_permutation_invariant() {
        let mut inv = XbarInventory::from_config(&NetworkConfig::teranoc_1024());
        let forward = critical_complexity(&inv).unwrap();
        inv.stages.reverse();
        assert_eq!(critical_complexity(&inv).unwrap(), forward);
    }

    #[test]
    fn zero_load_testbed_and_flat() {
        let z = zero_load_latency(&LatencyModel { n_top: 16, hop_latency: 2, spill_const: 3 }).unwrap();
        assert_eq!(z.max_cycles, 31);
        assert_eq!(z.avg_cycles, 13.7);
        let flat = zero_load_latency(&LatencyModel { n_top: 256, hop_latency: 2, spill_const: 3 }).unwrap();
        assert_eq!(flat.max_cycles, 127);
        assert_eq!(flat.avg_cycles, 45.7);
    }

    #[test]
    fn zero_load_degenerate_single_node() {
        // Formula evaluated directly at n_top=1: 2*2*(2*1-1) = 4 and 4/3*2 = 2.7.
        let z = zero_load_latency(&LatencyModel { n_top: 1, hop_latency: 2, spill_const: 0 }).unwrap();
        assert_eq!(z.max_cycles, 4);
        assert_eq!(z.avg_cycles, 2.7);
    }

    #[test]
    fn zero_load_rejects_non_square() {
        assert_eq!(
            zero_load_latency(&LatencyModel { n_top: 12, hop_latency: 2, spill_const: 3 }),
            Err(AnalyticError::NotSquare(12))
        );
    }

    #[test]
    fn zero_load_is_monotonic() {
        let base = LatencyModel { n_top: 16, hop_latency: 2, spill_const: 3 };
        let z0 = zero_load_latency(&base).unwrap();
        for bigger in [
            LatencyModel { n_top: 25, ..base },
            LatencyModel { hop_latency: 3, ..base },
            LatencyModel { spill_const: 4, ..base },
        ] {
            let z1 = zero_load_latency(&bigger).unwrap();
            assert!(z1.max_cycles > z0.max_cycles);
            assert!(z1.avg_cycles > z0.avg_cycles);
        }
    }

    #[test]
    fn hop_round_trip_matches_reported_latencies() {
        let m = LatencyModel { n_top: 16, hop_latency: 2, spill_const: 3 };
        assert_eq!(hop_round_trip(&m, 1, 3), 7);
        assert_eq!(hop_round_trip(&m, 7, 3), 31);
        assert_eq!(hop_round_trip(&m, 0, 3), 3);
    }

    #[test]
    fn worst_case_hop_round_trip_equals_zero_load_max() {
        // The equations count 2*sqrt(N)-1 hops for the farthest round trip.
        let m = LatencyModel::from_config(&NetworkConfig::teranoc_1024());
        let root = (m.n_top as f64).sqrt() as u64;
        let z = zero_load_latency(&m).unwrap();
        assert_eq!(hop_round_trip(&m, 2 * root - 1, 0), z.max_cycles);
    }
}
