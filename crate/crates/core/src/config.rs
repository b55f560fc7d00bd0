//! Interconnect parameterization, the interleaved global address map, and
//! structural (counting-based) bandwidth figures.
//!
//! The hierarchy is: `mesh_x * mesh_y` groups on a 2D mesh, each group holding
//! `tiles_per_group` tiles, each tile holding `cores_per_tile` cores and
//! `banks_per_tile` single-port memory banks behind a local crossbar.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Byte address into the interleaved L1 space.
pub type GlobalAddress = u64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("unknown preset `{0}` (expected TERANOC_1024 or TINY_2x2)")]
    UnknownPreset(String),
    #[error("config i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AddressError {
    #[error("address {0:#x} is not word-aligned")]
    Misaligned(GlobalAddress),
    #[error("address {addr:#x} outside L1 capacity of {capacity} bytes")]
    OutOfRange { addr: GlobalAddress, capacity: u64 },
}

/// Request channel flavor. Read-only channels omit the data payload field and
/// can therefore never carry write requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelClass {
    ReadWrite,
    ReadOnly,
}

impl FromStr for ChannelClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ReadWrite" | "readwrite" | "rw" => Ok(ChannelClass::ReadWrite),
            "ReadOnly" | "readonly" | "ro" => Ok(ChannelClass::ReadOnly),
            other => Err(format!("expected ReadWrite or ReadOnly, got `{other}`")),
        }
    }
}

/// How the router remapper advances its pseudorandom rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemapMode {
    /// Identity binding; tiles are statically wired to their own routers.
    Off,
    /// A fixed rotation derived from the seed, constant over the whole run.
    Static,
    /// The shift register steps once per cycle.
    PerCycle,
}

impl FromStr for RemapMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" => Ok(RemapMode::Off),
            "static" => Ok(RemapMode::Static),
            "percycle" | "per-cycle" | "per_cycle" => Ok(RemapMode::PerCycle),
            other => Err(format!("expected off, static or percycle, got `{other}`")),
        }
    }
}

/// Full parameterization of the hierarchy, mesh, channels, and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Cores per tile (M).
    pub cores_per_tile: usize,
    /// Memory banks per tile (N).
    pub banks_per_tile: usize,
    /// Tiles per group (Q).
    pub tiles_per_group: usize,
    /// Width of the top-level group mesh.
    pub mesh_x: usize,
    /// Height of the top-level group mesh.
    pub mesh_y: usize,
    /// Mesh channels (routers) per tile (K).
    pub channels_per_tile: usize,
    /// Tile ports served by one router remapper (q, must divide Q).
    pub remapper_arity: usize,
    /// Per-hop mesh latency in cycles (L_hop).
    pub hop_latency: u64,
    /// Constant round-trip overhead added to the mesh latency for crossbar
    /// stages and spill registers.
    pub spill_const: u64,
    /// Depth of the router input/output FIFOs.
    pub fifo_depth: usize,
    /// Per-core outstanding-transaction table size.
    pub outstanding_entries: usize,
    /// Bytes per word (data width of every channel).
    pub word_bytes: u64,
    /// Bytes per bank; bounds the address space, contents are not modeled.
    pub bank_capacity: u64,
    /// Class of each of the K request channels.
    pub channel_classes: Vec<ChannelClass>,
    pub remap_mode: RemapMode,
    /// Nonzero seed for the remapper shift registers.
    pub remap_seed: u16,
    /// Stride-based tile-to-remapper grouping (spreads one remapper over
    /// spatially distant tiles) instead of contiguous blocks.
    pub tile_stride_assignment: bool,
}

impl NetworkConfig {
    /// The 1024-core / 4096-bank testbed: M=4, N=16, Q=16, 4x4 mesh, K=2, q=4.
    pub fn teranoc_1024() -> Self {
        NetworkConfig {
            cores_per_tile: 4,
            banks_per_tile: 16,
            tiles_per_group: 16,
            mesh_x: 4,
            mesh_y: 4,
            channels_per_tile: 2,
            remapper_arity: 4,
            hop_latency: 2,
            spill_const: 3,
            fifo_depth: 2,
            outstanding_entries: 8,
            word_bytes: 4,
            bank_capacity: 1024,
            channel_classes: vec![ChannelClass::ReadWrite, ChannelClass::ReadOnly],
            remap_mode: RemapMode::PerCycle,
            remap_seed: 0xACE1,
            tile_stride_assignment: true,
        }
    }

    /// Desk-scale configuration for exhaustive checks: 32 cores, 64 banks.
    pub fn tiny_2x2() -> Self {
        NetworkConfig {
            cores_per_tile: 2,
            banks_per_tile: 4,
            tiles_per_group: 4,
            mesh_x: 2,
            mesh_y: 2,
            channels_per_tile: 2,
            remapper_arity: 2,
            hop_latency: 2,
            spill_const: 3,
            fifo_depth: 2,
            outstanding_entries: 8,
            word_bytes: 4,
            bank_capacity: 1024,
            channel_classes: vec![ChannelClass::ReadWrite, ChannelClass::ReadOnly],
            remap_mode: RemapMode::PerCycle,
            remap_seed: 0xACE1,
            tile_stride_assignment: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name.to_ascii_uppercase().as_str() {
            "TERANOC_1024" => Ok(Self::teranoc_1024()),
            "TINY_2X2" => Ok(Self::tiny_2x2()),
            _ => Err(ConfigError::UnknownPreset(name.to_string())),
        }
    }

    pub fn total_groups(&self) -> usize {
        self.mesh_x * self.mesh_y
    }

    pub fn total_tiles(&self) -> usize {
        self.total_groups() * self.tiles_per_group
    }

    pub fn total_cores(&self) -> usize {
        self.total_tiles() * self.cores_per_tile
    }

    pub fn total_banks(&self) -> usize {
        self.total_tiles() * self.banks_per_tile
    }

    pub fn words_per_bank(&self) -> u64 {
        self.bank_capacity / self.word_bytes
    }

    pub fn total_capacity_bytes(&self) -> u64 {
        self.total_banks() as u64 * self.bank_capacity
    }

    /// Mesh coordinate of a group id (row-major).
    pub fn group_coord(&self, group: usize) -> (usize, usize) {
        (group % self.mesh_x, group / self.mesh_x)
    }

    pub fn group_at(&self, x: usize, y: usize) -> usize {
        y * self.mesh_x + x
    }

    /// Manhattan hop count between two groups.
    pub fn hops_between(&self, a: usize, b: usize) -> u64 {
        let (ax, ay) = self.group_coord(a);
        let (bx, by) = self.group_coord(b);
        (ax.abs_diff(bx) + ay.abs_diff(by)) as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.cores_per_tile == 0 {
            return inv("cores_per_tile must be positive");
        }
        if self.banks_per_tile == 0 {
            return inv("banks_per_tile must be positive");
        }
        if self.tiles_per_group == 0 {
            return inv("tiles_per_group must be positive");
        }
        if self.mesh_x == 0 || self.mesh_y == 0 {
            return inv("mesh_x and mesh_y must be at least 1");
        }
        if self.channels_per_tile == 0 {
            return inv("channels_per_tile (K) must be at least 1");
        }
        if self.remapper_arity == 0 || self.tiles_per_group % self.remapper_arity != 0 {
            return inv("remapper_arity (q) must be positive and divide tiles_per_group (Q)");
        }
        if self.channel_classes.len() != self.channels_per_tile {
            return inv("channel_classes must list exactly K entries");
        }
        if !self.channel_classes.contains(&ChannelClass::ReadWrite) {
            return inv("at least one channel class must be ReadWrite (writes need a payload path)");
        }
        if self.remap_seed == 0 {
            return inv("remap_seed must be nonzero");
        }
        if self.hop_latency == 0 {
            return inv("hop_latency must be positive");
        }
        if self.fifo_depth == 0 {
            return inv("fifo_depth must be positive");
        }
        if self.outstanding_entries == 0 {
            return inv("outstanding_entries must be positive");
        }
        if self.word_bytes == 0 {
            return inv("word_bytes must be positive");
        }
        if self.bank_capacity == 0 || self.bank_capacity % self.word_bytes != 0 {
            return inv("bank_capacity must be a positive multiple of word_bytes");
        }
        Ok(())
    }

    /// Parse the key-value config format. Keys mirror the field names exactly;
    /// unknown keys are an error. Missing keys keep the TERANOC_1024 defaults.
    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::teranoc_1024();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Invalid(
                format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
            ))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |msg: String| ConfigError::BadValue { key: key.to_string(), msg };
            macro_rules! num {
                ($t:ty) => {
                    value.parse::<$t>().map_err(|e| bad(e.to_string()))?
                };
            }
            match key {
                "cores_per_tile" => cfg.cores_per_tile = num!(usize),
                "banks_per_tile" => cfg.banks_per_tile = num!(usize),
                "tiles_per_group" => cfg.tiles_per_group = num!(usize),
                "mesh_x" => cfg.mesh_x = num!(usize),
                "mesh_y" => cfg.mesh_y = num!(usize),
                "channels_per_tile" => cfg.channels_per_tile = num!(usize),
                "remapper_arity" => cfg.remapper_arity = num!(usize),
                "hop_latency" => cfg.hop_latency = num!(u64),
                "spill_const" => cfg.spill_const = num!(u64),
                "fifo_depth" => cfg.fifo_depth = num!(usize),
                "outstanding_entries" => cfg.outstanding_entries = num!(usize),
                "word_bytes" => cfg.word_bytes = num!(u64),
                "bank_capacity" => cfg.bank_capacity = num!(u64),
                "channel_classes" => {
                    let list = value.trim_start_matches('[').trim_end_matches(']');
                    cfg.channel_classes = list
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.parse::<ChannelClass>().map_err(|e| bad(e)))
                        .collect::<Result<Vec<_>, _>>()?;
                }
                "remap_mode" => cfg.remap_mode = value.parse().map_err(bad)?,
                "remap_seed" => cfg.remap_seed = num!(u16),
                "tile_stride_assignment" => {
                    cfg.tile_stride_assignment = value.parse::<bool>().map_err(|e| bad(e.to_string()))?
                }
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv_text(&text)
    }
}

/// Position of one word in the hierarchy, decoded from a global address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCoordinate {
    pub group_id: usize,
    pub tile_id: usize,
    pub bank_id: usize,
    pub word_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Core,
    Bank,
}

/// Identity of a core or bank endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub group_id: usize,
    pub tile_id: usize,
    pub local_index: usize,
}

impl NodeId {
    pub fn core(group_id: usize, tile_id: usize, local_index: usize) -> Self {
        NodeId { kind: NodeKind::Core, group_id, tile_id, local_index }
    }

    pub fn bank(group_id: usize, tile_id: usize, local_index: usize) -> Self {
        NodeId { kind: NodeKind::Bank, group_id, tile_id, local_index }
    }

    /// Mesh coordinate of this node's group.
    pub fn mesh_coord(&self, cfg: &NetworkConfig) -> (usize, usize) {
        cfg.group_coord(self.group_id)
    }

    /// Flat core index across the whole cluster.
    pub fn core_index(&self, cfg: &NetworkConfig) -> usize {
        debug_assert_eq!(self.kind, NodeKind::Core);
        (self.group_id * cfg.tiles_per_group + self.tile_id) * cfg.cores_per_tile
            + self.local_index
    }

    pub fn core_from_index(cfg: &NetworkConfig, index: usize) -> Self {
        let tile = index / cfg.cores_per_tile;
        NodeId::core(
            tile / cfg.tiles_per_group,
            tile % cfg.tiles_per_group,
            index % cfg.cores_per_tile,
        )
    }
}

/// Steering class of a (core, bank) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DestClass {
    LocalTile,
    IntraGroup,
    InterGroup,
}

impl fmt::Display for DestClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DestClass::LocalTile => "local_tile",
            DestClass::IntraGroup => "intra_group",
            DestClass::InterGroup => "inter_group",
        };
        f.write_str(s)
    }
}

/// Decode a byte address into its bank coordinate. Words interleave bank-first,
/// then tile, then group, so consecutive words fill one tile's banks before
/// crossing tiles.
pub fn decode_address(addr: GlobalAddress, cfg: &NetworkConfig) -> Result<BankCoordinate, AddressError> {
    if addr % cfg.word_bytes != 0 {
        return Err(AddressError::Misaligned(addr));
    }
    let capacity = cfg.total_capacity_bytes();
    if addr >= capacity {
        return Err(AddressError::OutOfRange { addr, capacity });
    }
    let word = addr / cfg.word_bytes;
    let total_banks = cfg.total_banks() as u64;
    let global_bank = word % total_banks;
    let n = cfg.banks_per_tile as u64;
    let q = cfg.tiles_per_group as u64;
    Ok(BankCoordinate {
        bank_id: (global_bank % n) as usize,
        tile_id: ((global_bank / n) % q) as usize,
        group_id: (global_bank / (n * q)) as usize,
        word_offset: word / total_banks,
    })
}

/// Inverse of [`decode_address`].
pub fn encode_address(coord: &BankCoordinate, cfg: &NetworkConfig) -> GlobalAddress {
    let global_bank = (coord.group_id * cfg.tiles_per_group + coord.tile_id) * cfg.banks_per_tile
        + coord.bank_id;
    (coord.word_offset * cfg.total_banks() as u64 + global_bank as u64) * cfg.word_bytes
}

/// Which of the three steering paths a request from `src` to `dst` takes.
pub fn classify_destination(src: &NodeId, dst: &BankCoordinate) -> DestClass {
    debug_assert_eq!(src.kind, NodeKind::Core);
    if src.group_id != dst.group_id {
        DestClass::InterGroup
    } else if src.tile_id != dst.tile_id {
        DestClass::IntraGroup
    } else {
        DestClass::LocalTile
    }
}

/// Counting-based bandwidth structure of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralCounts {
    /// Unidirectional word-width response channels over the whole mesh.
    pub response_channels_total: u64,
    /// Bytes per cycle across the narrower mid-cut, one direction.
    pub bisection_bytes_per_cycle: u64,
    /// Peak core-to-bank bandwidth when every core hits its own tile.
    pub peak_local_bytes_per_cycle: u64,
    /// Remote read requests per core per cycle (all K channels carry reads).
    pub remote_read_rate: f64,
    /// Remote write requests per core per cycle (ReadWrite channels only).
    pub remote_write_rate: f64,
    /// Local-tile requests per core per cycle.
    pub local_rate: f64,
    /// Intra-group requests per core per cycle (one shared tile port).
    pub intra_group_rate: f64,
}

/// Unidirectional link-directions of an X x Y mesh.
pub fn mesh_link_directions(mesh_x: usize, mesh_y: usize) -> u64 {
    2 * (mesh_x as u64 * (mesh_y as u64 - 1) + mesh_y as u64 * (mesh_x as u64 - 1))
}

/// Links crossing the narrower mid-cut of the mesh, counted in one direction.
pub fn bisection_links(mesh_x: usize, mesh_y: usize) -> u64 {
    let mut cuts = Vec::new();
    if mesh_x >= 2 {
        cuts.push(mesh_y as u64);
    }
    if mesh_y >= 2 {
        cuts.push(mesh_x as u64);
    }
    cuts.into_iter().min().unwrap_or(0)
}

pub fn structural_counts(cfg: &NetworkConfig) -> StructuralCounts {
    let bundle = (cfg.tiles_per_group * cfg.channels_per_tile) as u64;
    let rw_classes = cfg
        .channel_classes
        .iter()
        .filter(|c| **c == ChannelClass::ReadWrite)
        .count();
    let m = cfg.cores_per_tile as f64;
    StructuralCounts {
        response_channels_total: mesh_link_directions(cfg.mesh_x, cfg.mesh_y) * bundle,
        bisection_bytes_per_cycle: bisection_links(cfg.mesh_x, cfg.mesh_y) * bundle * cfg.word_bytes,
        peak_local_bytes_per_cycle: cfg.total_cores() as u64 * cfg.word_bytes,
        remote_read_rate: cfg.channels_per_tile as f64 / m,
        remote_write_rate: rw_classes as f64 / m,
        local_rate: 1.0,
        intra_group_rate: 1.0 / m,
    }
}
