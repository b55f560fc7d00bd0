//! Traffic endpoints: cores issue read/write requests against an
//! outstanding-transaction table and banks answer one request per cycle.
//! Pattern generators approximate data-parallel kernel access behavior at the
//! address-stream level; they carry no instruction semantics.

use crate::config::{
    classify_destination, decode_address, AddressError, DestClass, GlobalAddress, NetworkConfig,
    NodeId,
};
use crate::router::{Flit, FlitKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

/// One generated memory access, due no earlier than `due`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessIntent {
    pub kind: AccessKind,
    pub addr: GlobalAddress,
    pub due: u64,
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("invalid pattern: {0}")]
    Invalid(String),
    #[error("trace parse error on line {line}: {msg}")]
    Trace { line: usize, msg: String },
}

/// Synthetic access-stream families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PatternKind {
    /// Uniform over all banks.
    UniformRandom,
    /// Only the core's own tile banks.
    LocalTile,
    /// Uniform over the core's own group.
    IntraGroup,
    /// Every core targets one group.
    Hotspot(usize),
    /// Row/column sweeps over the whole address space with per-tile shifted
    /// starting offsets; store-starved like a matmul inner loop.
    MatMulLike,
    /// Local streaming, one store per two loads.
    AxpyLike,
    /// Local streaming plus a periodic global reduction exchange.
    DotpLike,
    /// Neighborhood-biased: own group plus mesh-adjacent groups.
    Conv2dLike,
    /// No traffic at all.
    Idle,
}

impl PatternKind {
    pub fn name(&self) -> String {
        match self {
            PatternKind::UniformRandom => "uniform".into(),
            PatternKind::LocalTile => "local".into(),
            PatternKind::IntraGroup => "intragroup".into(),
            PatternKind::Hotspot(g) => format!("hotspot:{g}"),
            PatternKind::MatMulLike => "matmul".into(),
            PatternKind::AxpyLike => "axpy".into(),
            PatternKind::DotpLike => "dotp".into(),
            PatternKind::Conv2dLike => "conv2d".into(),
            PatternKind::Idle => "idle".into(),
        }
    }

    /// Default store-to-load request ratio of the modeled kernel.
    pub fn default_store_fraction(&self) -> f64 {
        match self {
            PatternKind::MatMulLike => 0.016,
            PatternKind::Conv2dLike => 0.056,
            PatternKind::DotpLike => 0.33,
            PatternKind::Idle => 0.0,
            _ => 0.5,
        }
    }
}

impl std::str::FromStr for PatternKind {
    type Err = PatternError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("hotspot") {
            let g = rest.trim_start_matches(':').trim();
            let group = if g.is_empty() {
                0
            } else {
                g.parse::<usize>().map_err(|e| PatternError::Invalid(e.to_string()))?
            };
            return Ok(PatternKind::Hotspot(group));
        }
        match lower.as_str() {
            "uniform" | "uniformrandom" => Ok(PatternKind::UniformRandom),
            "local" | "localtile" => Ok(PatternKind::LocalTile),
            "intragroup" | "intra" => Ok(PatternKind::IntraGroup),
            "matmul" | "matmullike" => Ok(PatternKind::MatMulLike),
            "axpy" | "axpylike" => Ok(PatternKind::AxpyLike),
            "dotp" | "dotplike" => Ok(PatternKind::DotpLike),
            "conv2d" | "conv2dlike" => Ok(PatternKind::Conv2dLike),
            "idle" => Ok(PatternKind::Idle),
            other => Err(PatternError::Invalid(format!("unknown pattern `{other}`"))),
        }
    }
}

/// A pattern plus its knobs. `store_fraction` is the store-to-load request
/// ratio (AXPY issues one store per two loads, so 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficPattern {
    pub kind: PatternKind,
    pub store_fraction: f64,
    pub injection_rate: f64,
    pub seed: u64,
}

impl TrafficPattern {
    pub fn new(kind: PatternKind) -> Self {
        TrafficPattern {
            kind,
            store_fraction: kind.default_store_fraction(),
            injection_rate: 1.0,
            seed: 1,
        }
    }

    pub fn validate(&self, cfg: &NetworkConfig) -> Result<(), PatternError> {
        if !(0.0..=1.0).contains(&self.store_fraction) {
            return Err(PatternError::Invalid("store_fraction must be in [0, 1]".into()));
        }
        if !(self.injection_rate > 0.0 && self.injection_rate <= 1.0) {
            return Err(PatternError::Invalid("injection_rate must be in (0, 1]".into()));
        }
        if let PatternKind::Hotspot(g) = self.kind {
            if g >= cfg.total_groups() {
                return Err(PatternError::Invalid(format!(
                    "hotspot group {g} out of range (have {} groups)",
                    cfg.total_groups()
                )));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-core intent stream for one pattern.
pub struct PatternGen {
    pattern: TrafficPattern,
    rng: ChaCha8Rng,
    node: NodeId,
    core_flat: usize,
    idx: u64,
    phase: f64,
    store_prob: f64,
    // config-derived geometry
    total_banks: u64,
    group_banks: u64,
    tile_banks: u64,
    word_bytes: u64,
    total_cores: usize,
    cores_per_tile: usize,
    neighborhood: Vec<usize>,
    // sweep cursors for the matmul-like pattern
    row_cursor: u64,
    col_cursor: u64,
    a_base: u64,
}

impl PatternGen {
    pub fn new(pattern: &TrafficPattern, cfg: &NetworkConfig, core_flat: usize) -> Self {
        let node = NodeId::core_from_index(cfg, core_flat);
        let rng = ChaCha8Rng::seed_from_u64(splitmix64(pattern.seed ^ (core_flat as u64) << 20));
        let group_banks = (cfg.tiles_per_group * cfg.banks_per_tile) as u64;
        let core_spread = (cfg.banks_per_tile / cfg.cores_per_tile).max(1) as u64;
        // both operand streams are tile-coherent: the cores of a tile walk
        // the same region a few banks apart, so a tile's mesh traffic points
        // one way at a time
        let a_base = node.group_id as u64 * cfg.banks_per_tile as u64
            + node.local_index as u64 * core_spread;
        let tile_flat = (core_flat / cfg.cores_per_tile) as u64;
        let col_start = splitmix64(pattern.seed ^ 0xB0 ^ (tile_flat << 8))
            % (cfg.total_banks() as u64)
            + node.local_index as u64 * core_spread;
        let mut neighborhood = vec![node.group_id];
        let (x, y) = cfg.group_coord(node.group_id);
        if x + 1 < cfg.mesh_x {
            neighborhood.push(cfg.group_at(x + 1, y));
        }
        if x > 0 {
            neighborhood.push(cfg.group_at(x - 1, y));
        }
        if y + 1 < cfg.mesh_y {
            neighborhood.push(cfg.group_at(x, y + 1));
        }
        if y > 0 {
            neighborhood.push(cfg.group_at(x, y - 1));
        }
        let sf = pattern.store_fraction;
        PatternGen {
            pattern: *pattern,
            rng,
            node,
            core_flat,
            idx: 0,
            phase: (splitmix64(pattern.seed ^ 0x5EED ^ core_flat as u64) % 997) as f64 / 997.0,
            store_prob: sf / (1.0 + sf),
            total_banks: cfg.total_banks() as u64,
            group_banks,
            tile_banks: cfg.banks_per_tile as u64,
            word_bytes: cfg.word_bytes,
            total_cores: cfg.total_cores(),
            cores_per_tile: cfg.cores_per_tile,
            neighborhood,
            row_cursor: 0,
            col_cursor: col_start,
            a_base,
        }
    }

    fn own_tile_base(&self) -> u64 {
        (self.node.group_id as u64 * self.group_banks / self.tile_banks
            + self.node.tile_id as u64)
            * self.tile_banks
    }

    fn bank_addr(&self, global_bank: u64) -> GlobalAddress {
        global_bank * self.word_bytes
    }

    /// Next intent, or None once the stream ends (only Idle ends).
    pub fn next_intent(&mut self) -> Option<AccessIntent> {
        if matches!(self.pattern.kind, PatternKind::Idle) {
            return None;
        }
        let due = ((self.idx as f64 + self.phase) / self.pattern.injection_rate).floor() as u64;
        let is_store = self.rng.random_bool(self.store_prob);
        let kind = if is_store { AccessKind::Write } else { AccessKind::Read };
        let intent = match self.pattern.kind {
            PatternKind::UniformRandom => {
                let bank = self.rng.random_range(0..self.total_banks);
                AccessIntent { kind, addr: self.bank_addr(bank), due }
            }
            PatternKind::LocalTile | PatternKind::AxpyLike => {
                let bank = self.own_tile_base() + self.rng.random_range(0..self.tile_banks);
                AccessIntent { kind, addr: self.bank_addr(bank), due }
            }
            PatternKind::IntraGroup => {
                let base = self.node.group_id as u64 * self.group_banks;
                let bank = base + self.rng.random_range(0..self.group_banks);
                AccessIntent { kind, addr: self.bank_addr(bank), due }
            }
            PatternKind::Hotspot(g) => {
                let base = g as u64 * self.group_banks;
                let bank = base + self.rng.random_range(0..self.group_banks);
                AccessIntent { kind, addr: self.bank_addr(bank), due }
            }
            PatternKind::MatMulLike => {
                // Register-blocked inner loop: most accesses reuse the tile's
                // resident panel, the rest stream operands across the mesh.
                // Global row-operand fetches are tile-coherent toward one
                // slowly rotating remote group (offset by tile and group so
                // simultaneous flows never converge on one destination);
                // global column-operand fetches sweep the whole space from a
                // per-core shifted start. With remapping off, a tile's entire
                // mesh stream rides its statically bound routers.
                const BLOCK: u64 = 32;
                const GLOBALS_PER_BLOCK: u64 = 5;
                let phase = self.idx % BLOCK;
                let bank = if phase >= GLOBALS_PER_BLOCK {
                    self.own_tile_base() + self.rng.random_range(0..self.tile_banks)
                } else if phase % 2 == 0 {
                    let dest = (self.node.group_id
                        + self.node.tile_id
                        + (self.row_cursor / 512) as usize)
                        % (self.total_banks / self.group_banks) as usize;
                    let within = (self.a_base + self.row_cursor) % self.group_banks;
                    self.row_cursor += 1;
                    dest as u64 * self.group_banks + within
                } else {
                    let b = self.col_cursor % self.total_banks;
                    self.col_cursor += 1;
                    b
                };
                AccessIntent { kind, addr: self.bank_addr(bank), due }
            }
            PatternKind::Conv2dLike => {
                // half the accesses stay in the own group, the rest spread
                // over the mesh-adjacent groups
                let g = if self.neighborhood.len() == 1 || self.rng.random_bool(0.5) {
                    self.neighborhood[0]
                } else {
                    self.neighborhood[1 + self.rng.random_range(0..self.neighborhood.len() - 1)]
                };
                let bank = g as u64 * self.group_banks + self.rng.random_range(0..self.group_banks);
                AccessIntent { kind, addr: self.bank_addr(bank), due }
            }
            PatternKind::DotpLike => {
                // stream locally; every 1024 intents, exchange partial sums
                // with hypercube partners across the cluster
                let rounds = self.total_cores.trailing_zeros().max(1) as u64;
                let epoch = 1024 + 2 * rounds;
                let epoch_pos = self.idx % epoch;
                if epoch_pos >= 1024 {
                    let round = (epoch_pos - 1024) / 2;
                    let partner = (self.core_flat ^ (1usize << round)) % self.total_cores;
                    let partner_tile = (partner / self.cores_per_tile) as u64;
                    let bank = partner_tile * self.tile_banks + partner as u64 % self.tile_banks;
                    let kind = if epoch_pos % 2 == 0 { AccessKind::Read } else { AccessKind::Write };
                    AccessIntent { kind, addr: self.bank_addr(bank), due }
                } else {
                    let bank = self.own_tile_base() + self.rng.random_range(0..self.tile_banks);
                    AccessIntent { kind, addr: self.bank_addr(bank), due }
                }
            }
            PatternKind::Idle => unreachable!(),
        };
        self.idx += 1;
        Some(intent)
    }
}

/// Materialize `length` intents for one core; the engine consumes the same
/// generator lazily.
pub fn generate_pattern(
    pattern: &TrafficPattern,
    cfg: &NetworkConfig,
    core_flat: usize,
    length: usize,
) -> Vec<AccessIntent> {
    let mut gen = PatternGen::new(pattern, cfg, core_flat);
    (0..length).map_while(|_| gen.next_intent()).collect()
}

/// Per-core instruction source.
pub enum Program {
    Pattern(Box<PatternGen>),
    Trace(VecDeque<AccessIntent>),
    Idle,
}

impl Program {
    fn peek(&mut self, slot: &mut Option<AccessIntent>) -> Option<AccessIntent> {
        if slot.is_none() {
            *slot = match self {
                Program::Pattern(g) => g.next_intent(),
                Program::Trace(q) => q.pop_front(),
                Program::Idle => None,
            };
        }
        *slot
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreStats {
    pub issued: u64,
    pub retired: u64,
    pub stall_table_full: u64,
    pub stall_backpressure: u64,
    pub stall_idle: u64,
}

/// An entry of the outstanding-transaction table.
#[derive(Debug, Clone, Copy)]
struct Outstanding {
    seq: u16,
    issue_cycle: u64,
    class: DestClass,
    hops: u64,
}

/// A request the core holds valid at its port until some entry stage accepts it.
#[derive(Debug, Clone, Copy)]
pub struct PostedRequest {
    pub kind: AccessKind,
    pub dst_group: usize,
    pub dst_tile: usize,
    pub dst_bank: usize,
    pub class: DestClass,
    pub seq: u16,
}

#[derive(Debug, Clone, Copy)]
pub struct Retired {
    pub latency: u64,
    pub class: DestClass,
    pub hops: u64,
}

pub struct CoreState {
    pub node: NodeId,
    pub flat_id: usize,
    pub posted: Option<PostedRequest>,
    table: Vec<Option<Outstanding>>,
    in_flight: usize,
    next_seq: u16,
    seq_modulus: u16,
    program: Program,
    staged: Option<AccessIntent>,
    transferred: bool,
    pub stats: CoreStats,
}

impl CoreState {
    pub fn new(cfg: &NetworkConfig, flat_id: usize, program: Program) -> Self {
        CoreState {
            node: NodeId::core_from_index(cfg, flat_id),
            flat_id,
            posted: None,
            table: vec![None; cfg.outstanding_entries],
            in_flight: 0,
            next_seq: 0,
            seq_modulus: (2 * cfg.outstanding_entries) as u16,
            program,
            staged: None,
            transferred: false,
            stats: CoreStats::default(),
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    /// Retire a response; unknown tags are a protocol violation.
    pub fn retire(&mut self, tag_seq: u16, now: u64) -> Result<Retired, String> {
        let slot = self
            .table
            .iter()
            .position(|e| e.map(|o| o.seq) == Some(tag_seq))
            .ok_or_else(|| format!("core {} got response with unknown tag {tag_seq}", self.flat_id))?;
        let entry = self.table[slot].take().unwrap();
        self.in_flight -= 1;
        self.stats.retired += 1;
        Ok(Retired { latency: now - entry.issue_cycle, class: entry.class, hops: entry.hops })
    }

    /// Stage the next due intent as a posted request if the table has room.
    /// Stalls are classified here (table-full, idle) and in [`Self::end_cycle`]
    /// (backpressure).
    pub fn maybe_post(&mut self, now: u64, cfg: &NetworkConfig) -> Result<(), AddressError> {
        if self.posted.is_some() {
            return Ok(());
        }
        let Some(intent) = self.program.peek(&mut self.staged) else {
            return Ok(());
        };
        if intent.due > now {
            self.stats.stall_idle += 1;
            return Ok(());
        }
        if self.in_flight == self.table.len() {
            self.stats.stall_table_full += 1;
            return Ok(());
        }
        let coord = decode_address(intent.addr, cfg)?;
        let class = classify_destination(&self.node, &coord);
        let hops = if class == DestClass::InterGroup {
            cfg.hops_between(self.node.group_id, coord.group_id)
        } else {
            0
        };
        let seq = self.next_seq;
        self.next_seq = (self.next_seq + 1) % self.seq_modulus;
        let slot = self.table.iter().position(Option::is_none).unwrap();
        self.table[slot] = Some(Outstanding { seq, issue_cycle: now, class, hops });
        self.in_flight += 1;
        self.staged = None;
        self.posted = Some(PostedRequest {
            kind: intent.kind,
            dst_group: coord.group_id,
            dst_tile: coord.tile_id,
            dst_bank: coord.bank_id,
            class,
            seq,
        });
        Ok(())
    }

    /// The posted request left the core this cycle.
    pub fn on_transfer(&mut self) -> PostedRequest {
        self.transferred = true;
        self.stats.issued += 1;
        self.posted.take().expect("transfer without a posted request")
    }

    pub fn end_cycle(&mut self) {
        if self.posted.is_some() && !self.transferred {
            self.stats.stall_backpressure += 1;
        }
        self.transferred = false;
    }

    /// Request flit for the posted request (built at the commit point).
    pub fn request_flit(post: &PostedRequest, src_core: usize, channel: usize) -> Flit {
        Flit {
            src_core,
            dst_group: post.dst_group,
            dst_tile: post.dst_tile,
            dst_slot: post.dst_bank,
            kind: match post.kind {
                AccessKind::Read => FlitKind::ReadReq,
                AccessKind::Write => FlitKind::WriteReq,
            },
            tag_seq: post.seq,
            channel,
            has_payload: post.kind == AccessKind::Write,
            last_move: u64::MAX,
        }
    }
}

/// Single-port bank: accepts one request per cycle and answers it on the next.
#[derive(Debug, Default)]
pub struct BankState {
    pub serving: Option<Flit>,
    pub response: Option<Flit>,
    pub accepted: u64,
}

impl BankState {
    /// Ready for a new request only with the full pipeline clear, so a
    /// response that cannot drain backpressures the bank.
    pub fn ready(&self) -> bool {
        self.serving.is_none() && self.response.is_none()
    }

    pub fn accept(&mut self, flit: Flit) {
        debug_assert!(self.ready());
        self.serving = Some(flit);
        self.accepted += 1;
    }

    /// Turn last cycle's request into a response (read data or write ack).
    pub fn emit(&mut self, cfg: &NetworkConfig) {
        if self.response.is_none() {
            if let Some(req) = self.serving.take() {
                self.response = Some(make_response(&req, cfg));
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.serving.is_none() && self.response.is_none()
    }
}

/// Response flit addressed back to the initiating core. Read responses carry
/// the data word; write responses are bare acknowledgments.
pub fn make_response(req: &Flit, cfg: &NetworkConfig) -> Flit {
    let core = NodeId::core_from_index(cfg, req.src_core);
    Flit {
        src_core: req.src_core,
        dst_group: core.group_id,
        dst_tile: core.tile_id,
        dst_slot: core.local_index,
        kind: FlitKind::Response,
        tag_seq: req.tag_seq,
        channel: req.channel,
        has_payload: req.kind == FlitKind::ReadReq,
        last_move: u64::MAX,
    }
}

/// Parse a replay trace: one request per line as
/// `cycle core kind address` (whitespace or comma separated, kind read/write,
/// address decimal or 0x-hex, `#` comments).
pub fn parse_trace(text: &str) -> Result<Vec<(u64, usize, AccessKind, GlobalAddress)>, PatternError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| PatternError::Trace { line: i + 1, msg };
        let fields: Vec<&str> =
            line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        }
        let cycle = fields[0].parse::<u64>().map_err(|e| err(e.to_string()))?;
        let core = fields[1].parse::<usize>().map_err(|e| err(e.to_string()))?;
        let kind = match fields[2].to_ascii_lowercase().as_str() {
            "r" | "read" | "load" => AccessKind::Read,
            "w" | "write" | "store" => AccessKind::Write,
            other => return Err(err(format!("unknown kind `{other}`"))),
        };
        let addr_str = fields[3];
        let addr = if let Some(hex) = addr_str.strip_prefix("0x") {
            u64::from_str_radix(hex, 16).map_err(|e| err(e.to_string()))?
        } else {
            addr_str.parse::<u64>().map_err(|e| err(e.to_string()))?
        };
        out.push((cycle, core, kind, addr));
    }
    Ok(out)
}

/// Split a parsed trace into per-core programs.
pub fn trace_programs(
    cfg: &NetworkConfig,
    entries: &[(u64, usize, AccessKind, GlobalAddress)],
) -> Result<Vec<Program>, PatternError> {
    let mut per_core: Vec<VecDeque<AccessIntent>> = vec![VecDeque::new(); cfg.total_cores()];
    for &(cycle, core, kind, addr) in entries {
        if core >= per_core.len() {
            return Err(PatternError::Invalid(format!("trace core {core} out of range")));
        }
        per_core[core].push_back(AccessIntent { kind, addr, due: cycle });
    }
    Ok(per_core.into_iter().map(Program::Trace).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_intent(addr: u64) -> AccessIntent {
        AccessIntent { kind: AccessKind::Read, addr, due: 0 }
    }

    #[test]
    fn core_issues_when_table_has_room() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut core = CoreState::new(&cfg, 0, Program::Trace(VecDeque::from([read_intent(0)])));
        core.maybe_post(0, &cfg).unwrap();
        assert!(core.posted.is_some());
        assert_eq!(core.in_flight(), 1);
        let post = core.on_transfer();
        assert_eq!(post.class, DestClass::LocalTile);
        assert_eq!(core.stats.issued, 1);
    }

    #[test]
    fn full_table_stalls_without_posting() {
        let cfg = NetworkConfig::tiny_2x2();
        let intents: VecDeque<_> = (0..20).map(|i| read_intent(i * 4)).collect();
        let mut core = CoreState::new(&cfg, 0, Program::Trace(intents));
        for _ in 0..cfg.outstanding_entries {
            core.maybe_post(0, &cfg).unwrap();
            core.on_transfer();
        }
        assert_eq!(core.in_flight(), cfg.outstanding_entries);
        core.maybe_post(1, &cfg).unwrap();
        assert!(core.posted.is_none());
        assert_eq!(core.stats.stall_table_full, 1);
    }

    #[test]
    fn retire_frees_the_table_and_unknown_tags_fail() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut core = CoreState::new(&cfg, 0, Program::Trace(VecDeque::from([read_intent(0)])));
        core.maybe_post(0, &cfg).unwrap();
        let post = core.on_transfer();
        let retired = core.retire(post.seq, 5).unwrap();
        assert_eq!(retired.latency, 5);
        assert_eq!(core.in_flight(), 0);
        assert!(core.retire(99, 6).is_err());
    }

    #[test]
    fn backpressure_stall_is_counted_at_end_of_cycle() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut core = CoreState::new(&cfg, 0, Program::Trace(VecDeque::from([read_intent(0)])));
        core.maybe_post(0, &cfg).unwrap();
        core.end_cycle();
        assert_eq!(core.stats.stall_backpressure, 1);
    }

    #[test]
    fn bank_turns_a_request_into_one_response() {
        let cfg = NetworkConfig::tiny_2x2();
        let req = CoreState::request_flit(
            &PostedRequest {
                kind: AccessKind::Read,
                dst_group: 0,
                dst_tile: 0,
                dst_bank: 1,
                class: DestClass::LocalTile,
                seq: 3,
            },
            0,
            0,
        );
        let mut bank = BankState::default();
        assert!(bank.ready());
        bank.accept(req);
        assert!(!bank.ready());
        bank.emit(&cfg);
        let rsp = bank.response.take().unwrap();
        assert_eq!(rsp.kind, FlitKind::Response);
        assert!(rsp.has_payload, "read responses carry data");
        assert_eq!(rsp.tag_seq, 3);
        assert_eq!((rsp.dst_group, rsp.dst_tile, rsp.dst_slot), (0, 0, 0));
    }

    #[test]
    fn write_ack_has_no_payload() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut req = CoreState::request_flit(
            &PostedRequest {
                kind: AccessKind::Write,
                dst_group: 0,
                dst_tile: 0,
                dst_bank: 0,
                class: DestClass::LocalTile,
                seq: 0,
            },
            0,
            0,
        );
        req.has_payload = true;
        assert!(!make_response(&req, &cfg).has_payload);
    }

    #[test]
    fn local_pattern_stays_in_the_own_tile() {
        let cfg = NetworkConfig::tiny_2x2();
        let pattern = TrafficPattern::new(PatternKind::LocalTile);
        for core in [0usize, 7, 31] {
            let node = NodeId::core_from_index(&cfg, core);
            for intent in generate_pattern(&pattern, &cfg, core, 200) {
                let c = decode_address(intent.addr, &cfg).unwrap();
                assert_eq!((c.group_id, c.tile_id), (node.group_id, node.tile_id));
            }
        }
    }

    #[test]
    fn hotspot_pattern_targets_the_hot_group() {
        let cfg = NetworkConfig::tiny_2x2();
        let pattern = TrafficPattern::new(PatternKind::Hotspot(3));
        for intent in generate_pattern(&pattern, &cfg, 0, 200) {
            assert_eq!(decode_address(intent.addr, &cfg).unwrap().group_id, 3);
        }
    }

    #[test]
    fn conv2d_stays_in_the_neighborhood() {
        let cfg = NetworkConfig::teranoc_1024();
        let pattern = TrafficPattern::new(PatternKind::Conv2dLike);
        let core = 130; // group 2, somewhere in the bottom row
        let node = NodeId::core_from_index(&cfg, core);
        let (x, y) = cfg.group_coord(node.group_id);
        for intent in generate_pattern(&pattern, &cfg, core, 500) {
            let g = decode_address(intent.addr, &cfg).unwrap().group_id;
            let (gx, gy) = cfg.group_coord(g);
            assert!(gx.abs_diff(x) + gy.abs_diff(y) <= 1, "group {g} not adjacent");
        }
    }

    #[test]
    fn store_to_load_ratios_match_the_kernels() {
        let cfg = NetworkConfig::teranoc_1024();
        for (kind, expect, tol) in [
            (PatternKind::MatMulLike, 0.016, 0.005),
            (PatternKind::Conv2dLike, 0.056, 0.01),
            (PatternKind::AxpyLike, 0.5, 0.05),
        ] {
            let pattern = TrafficPattern::new(kind);
            let mut loads = 0u64;
            let mut stores = 0u64;
            for core in [0usize, 511] {
                for intent in generate_pattern(&pattern, &cfg, core, 10_000) {
                    match intent.kind {
                        AccessKind::Read => loads += 1,
                        AccessKind::Write => stores += 1,
                    }
                }
            }
            let ratio = stores as f64 / loads as f64;
            assert!(
                (ratio - expect).abs() <= tol,
                "{}: store/load {ratio:.4}, want {expect} +- {tol}",
                pattern.kind.name()
            );
        }
    }

    #[test]
    fn patterns_are_deterministic_per_seed_and_core() {
        let cfg = NetworkConfig::tiny_2x2();
        for kind in [
            PatternKind::UniformRandom,
            PatternKind::MatMulLike,
            PatternKind::DotpLike,
            PatternKind::Conv2dLike,
        ] {
            let pattern = TrafficPattern::new(kind);
            let a = generate_pattern(&pattern, &cfg, 5, 300);
            let b = generate_pattern(&pattern, &cfg, 5, 300);
            assert_eq!(a, b);
            let other_core = generate_pattern(&pattern, &cfg, 6, 300);
            assert_ne!(a, other_core, "{:?} streams should differ per core", kind);
        }
    }

    #[test]
    fn injection_rate_paces_due_cycles() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut pattern = TrafficPattern::new(PatternKind::UniformRandom);
        pattern.injection_rate = 0.25;
        let intents = generate_pattern(&pattern, &cfg, 0, 100);
        // consecutive due cycles are 4 apart on average
        let span = intents.last().unwrap().due - intents[0].due;
        assert!((span as f64 - 99.0 / 0.25).abs() <= 4.0, "span {span}");
        assert!(intents.windows(2).all(|w| w[0].due <= w[1].due));
    }

    #[test]
    fn matmul_row_stream_is_group_coherent_within_a_tile() {
        // the cores of one tile fetch the row operand from the same group,
        // and tiles of one group fan out over distinct destinations
        let cfg = NetworkConfig::teranoc_1024();
        let pattern = TrafficPattern::new(PatternKind::MatMulLike);
        let group = 2;
        let mut dest_by_tile = Vec::new();
        for tile_in_group in [0usize, 1, 5, 9] {
            let tile = group * cfg.tiles_per_group + tile_in_group;
            let streams: Vec<Vec<AccessIntent>> = (0..cfg.cores_per_tile)
                .map(|m| generate_pattern(&pattern, &cfg, tile * cfg.cores_per_tile + m, 64))
                .collect();
            for i in (0..64).step_by(2) {
                let groups: Vec<usize> = streams
                    .iter()
                    .map(|s| decode_address(s[i].addr, &cfg).unwrap().group_id)
                    .collect();
                assert!(groups.windows(2).all(|w| w[0] == w[1]), "divergent groups {groups:?}");
            }
            dest_by_tile.push(decode_address(streams[0][0].addr, &cfg).unwrap().group_id);
        }
        dest_by_tile.dedup();
        assert_eq!(dest_by_tile.len(), 4, "tiles target distinct groups");
    }

    #[test]
    fn trace_parsing_roundtrip_and_errors() {
        let text = "# replay\n0 0 read 0x40\n3, 1, w, 64\n";
        let entries = parse_trace(text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0], (0, 0, AccessKind::Read, 0x40));
        assert_eq!(entries[1], (3, 1, AccessKind::Write, 64));
        assert!(parse_trace("1 2 3").is_err());
        assert!(parse_trace("0 0 bogus 0").is_err());
    }
}
