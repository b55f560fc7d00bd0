//! Cycle-driven simulation kernel. Each cycle advances in a fixed phase
//! order: (1) banks emit responses, (2) the response side moves (deliveries,
//! mesh, injections), (3) cores retire and stage new requests, (4) request
//! steering into spills and routers, (5) the request mesh moves, (6) arriving
//! and local requests are delivered to banks, (7) bookkeeping. Per-flit move
//! stamps enforce at most one registered stage per cycle, which pins the
//! class round trips to 1 (local), 3 (intra-group) and 2*L_hop*hops + 3
//! (inter-group) exactly.

use crate::config::{
    ChannelClass, ConfigError, DestClass, GlobalAddress, NetworkConfig, AddressError,
};
use crate::endpoints::{
    AccessIntent, AccessKind, BankState, CoreState, PatternGen, Program, Retired, TrafficPattern,
};
use crate::metrics::{
    build_heatmaps, congestion, delivered_bandwidth, net_congestion, Audit, ChannelRecord,
    CongestionReport, RunMeta, SimReport, Totals,
};
use crate::remapper::{
    assign_tiles_to_remappers, derive_instance_seed, inverse_slot, tile_binding, RemapperState,
};
use crate::router::{dir_name, Fifo, Flit, FlitKind, MeshGrid};
use crate::xbar::{rr_advance, rr_pick};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deadlock: drain incomplete after {cycles} cycles; blocked FIFOs:\n{dump}")]
    Deadlock { cycles: u64, dump: String },
    #[error("protocol violation at cycle {cycle}: {msg}")]
    Protocol { cycle: u64, msg: String },
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Spill registers are two entries deep (register plus skid) so they sustain
/// one transfer per cycle under registered-ready handshaking while still
/// adding exactly one cycle of latency.
const SPILL_DEPTH: usize = 2;

pub struct Simulation {
    pub cfg: NetworkConfig,
    now: u64,
    in_window: bool,
    frozen: bool,
    workers: usize,
    cores: Vec<CoreState>,
    banks: Vec<BankState>,
    /// K*Q request grids, indexed k * Q + lane.
    req_grids: Vec<MeshGrid>,
    rsp_grids: Vec<MeshGrid>,
    /// Per tile: egress spill toward the intra-group crossbars.
    intra_req_spill: Vec<Fifo>,
    intra_rsp_spill: Vec<Fifo>,
    /// Request remappers, indexed (group * rem_groups + rg) * K + k.
    remappers: Vec<RemapperState>,
    /// Tiles (in-group ids) served by each remapper; identical per group.
    remapper_tiles: Vec<Vec<usize>>,
    /// Channel indices in the order reads try them (ReadOnly first).
    read_channel_order: Vec<usize>,
    /// Channel indices writes may use (ReadWrite classes).
    write_channels: Vec<usize>,
    // round-robin pointers for every arbitration site
    tile_intra_ptr: Vec<usize>,
    tile_chan_ptr: Vec<usize>,
    bank_rsp_spill_ptr: Vec<usize>,
    bank_rsp_chan_ptr: Vec<usize>,
    rsp_inject_ptr: Vec<usize>,
    group_req_ptr: Vec<usize>,
    group_rsp_ptr: Vec<usize>,
    recv_req_ptr: Vec<usize>,
    recv_rsp_ptr: Vec<usize>,
    bank_ptr: Vec<usize>,
    inbox: Vec<Vec<Flit>>,
    // measurement
    pub last_retirement: Option<Retired>,
    latency_hist: BTreeMap<String, BTreeMap<u64, u64>>,
    retired_in_window: u64,
    issued_total: u64,
    retired_total: u64,
    retired_hop_sum: u64,
}

/// Component totals of a built simulation, for the `describe` dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Describe {
    pub groups: usize,
    pub tiles: usize,
    pub cores: usize,
    pub banks: usize,
    pub tile_crossbars: usize,
    pub intra_group_crossbars: usize,
    pub receive_crossbars: usize,
    pub routers: usize,
    pub remappers: usize,
    pub response_channels_total: u64,
    pub critical_complexity: u64,
}

impl Simulation {
    /// Build the wired network with one program per core.
    pub fn build(cfg: &NetworkConfig, mut programs: Vec<Program>) -> Result<Self, SimError> {
        cfg.validate()?;
        if cfg.hop_latency < 2 {
            return Err(SimError::Config(ConfigError::Invalid(
                "simulation realizes hops as switch allocation plus link traversal; hop_latency must be >= 2"
                    .into(),
            )));
        }
        let groups = cfg.total_groups();
        let tiles = cfg.total_tiles();
        let q = cfg.tiles_per_group;
        let k = cfg.channels_per_tile;
        let m = cfg.cores_per_tile;
        let rem_groups = q / cfg.remapper_arity;
        assert_eq!(programs.len(), cfg.total_cores(), "one program per core");

        let cores = programs
            .drain(..)
            .enumerate()
            .map(|(i, p)| CoreState::new(cfg, i, p))
            .collect::<Vec<_>>();
        let banks = (0..cfg.total_banks()).map(|_| BankState::default()).collect();
        let grid = || MeshGrid::new(cfg.mesh_x, cfg.mesh_y, cfg.fifo_depth, cfg.hop_latency);
        let req_grids = (0..k * q).map(|_| grid()).collect();
        let rsp_grids = (0..k * q).map(|_| grid()).collect();
        let mut remappers = Vec::with_capacity(groups * rem_groups * k);
        for g in 0..groups {
            for rg in 0..rem_groups {
                for ch in 0..k {
                    let idx = ((g * rem_groups + rg) * k + ch) as u64;
                    let seed = derive_instance_seed(cfg.remap_seed, idx);
                    remappers.push(
                        RemapperState::new(cfg.remapper_arity, cfg.remap_mode, seed)
                            .expect("derived seeds are nonzero"),
                    );
                }
            }
        }
        let mut read_channel_order: Vec<usize> = (0..k)
            .filter(|&c| cfg.channel_classes[c] == ChannelClass::ReadOnly)
            .collect();
        let write_channels: Vec<usize> = (0..k)
            .filter(|&c| cfg.channel_classes[c] == ChannelClass::ReadWrite)
            .collect();
        read_channel_order.extend(write_channels.iter().copied());

        Ok(Simulation {
            now: 0,
            in_window: false,
            frozen: false,
            workers: 1,
            cores,
            banks,
            req_grids,
            rsp_grids,
            intra_req_spill: (0..tiles).map(|_| Fifo::new(SPILL_DEPTH)).collect(),
            intra_rsp_spill: (0..tiles).map(|_| Fifo::new(SPILL_DEPTH)).collect(),
            remappers,
            remapper_tiles: assign_tiles_to_remappers(cfg),
            read_channel_order,
            write_channels,
            tile_intra_ptr: vec![0; tiles],
            tile_chan_ptr: vec![0; tiles * k],
            bank_rsp_spill_ptr: vec![0; tiles],
            bank_rsp_chan_ptr: vec![0; tiles * k],
            rsp_inject_ptr: vec![0; groups * k * q],
            group_req_ptr: vec![0; groups * q],
            group_rsp_ptr: vec![0; groups * q],
            recv_req_ptr: vec![0; groups * k * q],
            recv_rsp_ptr: vec![0; groups * k * q],
            bank_ptr: vec![0; tiles * cfg.banks_per_tile],
            inbox: vec![Vec::new(); tiles * m],
            last_retirement: None,
            latency_hist: BTreeMap::new(),
            retired_in_window: 0,
            issued_total: 0,
            retired_total: 0,
            retired_hop_sum: 0,
            cfg: cfg.clone(),
        })
    }

    /// Build with every core running the same traffic pattern.
    pub fn with_pattern(cfg: &NetworkConfig, pattern: &TrafficPattern) -> Result<Self, SimError> {
        pattern
            .validate(cfg)
            .map_err(|e| SimError::Config(ConfigError::Invalid(e.to_string())))?;
        let programs = (0..cfg.total_cores())
            .map(|c| Program::Pattern(Box::new(PatternGen::new(pattern, cfg, c))))
            .collect();
        Self::build(cfg, programs)
    }

    pub fn set_workers(&mut self, workers: usize) {
        self.workers = workers.max(1);
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn describe(cfg: &NetworkConfig) -> Result<Describe, SimError> {
        cfg.validate()?;
        let groups = cfg.total_groups();
        let k = cfg.channels_per_tile;
        let inv = crate::analytic::XbarInventory::from_config(cfg);
        Ok(Describe {
            groups,
            tiles: cfg.total_tiles(),
            cores: cfg.total_cores(),
            banks: cfg.total_banks(),
            tile_crossbars: cfg.total_tiles(),
            intra_group_crossbars: 2 * groups,
            receive_crossbars: 2 * groups * k,
            routers: 2 * groups * cfg.tiles_per_group * k,
            remappers: 2 * groups * (cfg.tiles_per_group / cfg.remapper_arity) * k,
            response_channels_total: crate::config::structural_counts(cfg).response_channels_total,
            critical_complexity: crate::analytic::critical_complexity(&inv).unwrap(),
        })
    }

    // ---- indexing helpers ----

    fn q(&self) -> usize {
        self.cfg.tiles_per_group
    }

    fn k(&self) -> usize {
        self.cfg.channels_per_tile
    }

    fn m(&self) -> usize {
        self.cfg.cores_per_tile
    }

    fn n(&self) -> usize {
        self.cfg.banks_per_tile
    }

    fn remapper_index(&self, group: usize, rem: usize, channel: usize) -> usize {
        (group * (self.q() / self.cfg.remapper_arity) + rem) * self.k() + channel
    }

    /// Router (lane) the request remapper binds for `tile_in_group` on
    /// `channel` this cycle.
    fn request_lane(&self, group: usize, tile_in_group: usize, channel: usize) -> usize {
        let (rem, slot) = tile_binding(&self.cfg, tile_in_group);
        let offset = self.remappers[self.remapper_index(group, rem, channel)].offset();
        let lane_slot = (slot + offset) % self.cfg.remapper_arity;
        self.remapper_tiles[rem][lane_slot]
    }

    /// Router (lane) the response remapper binds for `tile_in_group` this
    /// cycle: the inverse of the request rotation in effect when the response
    /// is bound, so the binding stays a bijection cycle by cycle.
    fn response_lane(&self, group: usize, tile_in_group: usize, channel: usize) -> usize {
        let (rem, slot) = tile_binding(&self.cfg, tile_in_group);
        let offset = self.remappers[self.remapper_index(group, rem, channel)].offset();
        let lane_slot = inverse_slot(slot, offset, self.cfg.remapper_arity);
        self.remapper_tiles[rem][lane_slot]
    }

    fn core_flat(&self, group: usize, tile: usize, core: usize) -> usize {
        (group * self.q() + tile) * self.m() + core
    }

    // ---- phases ----

    pub fn step(&mut self) -> Result<(), SimError> {
        let now = self.now;
        self.phase1_bank_emit();
        self.phase2_response_network(now);
        self.phase3_cores(now)?;
        self.phase4_request_steering(now);
        self.phase5_request_mesh(now);
        self.phase6_request_delivery(now);
        self.phase7_commit();
        self.now += 1;
        Ok(())
    }

    /// Banks turn last cycle's request into a response.
    fn phase1_bank_emit(&mut self) {
        for bank in &mut self.banks {
            bank.emit(&self.cfg);
        }
    }

    /// Response side: deliver arrived responses to cores, step the response
    /// meshes, then inject fresh bank responses toward spills and routers.
    fn phase2_response_network(&mut self, now: u64) {
        let (q, k, n) = (self.q(), self.k(), self.n());
        let groups = self.cfg.total_groups();

        // local responses go straight back through the tile crossbar
        for tile in 0..self.cfg.total_tiles() {
            let (group, t) = (tile / q, tile % q);
            for b in 0..n {
                let bank = &mut self.banks[tile * n + b];
                if bank
                    .response
                    .as_ref()
                    .is_some_and(|r| r.dst_group == group && r.dst_tile == t)
                {
                    let rsp = bank.response.take().unwrap();
                    let inbox = (group * q + t) * self.cfg.cores_per_tile + rsp.dst_slot;
                    self.inbox[inbox].push(rsp);
                }
            }
        }

        // group response crossbar: one spill head per destination tile
        for group in 0..groups {
            for dst_tile in 0..q {
                let ptr = self.group_rsp_ptr[group * q + dst_tile];
                let pick = rr_pick(q, ptr, |src| {
                    let f = &self.intra_rsp_spill[group * q + src];
                    !f.popped_at(now)
                        && f.front().is_some_and(|x| x.movable(now) && x.dst_tile == dst_tile)
                });
                if let Some(src) = pick {
                    let rsp = self.intra_rsp_spill[group * q + src].pop(now);
                    self.group_rsp_ptr[group * q + dst_tile] = rr_advance(q, src);
                    let inbox = self.core_flat(group, dst_tile, rsp.dst_slot);
                    self.inbox[inbox].push(rsp);
                }
            }
        }

        // response receive crossbars: per channel, one ejected flit per tile
        for group in 0..groups {
            for ch in 0..k {
                let mut cand: Vec<Option<(usize, usize, usize)>> = vec![None; q];
                for lane in 0..q {
                    if let Some((dir, flit)) =
                        self.rsp_grids[ch * q + lane].eject_candidate(group, now)
                    {
                        cand[lane] = Some((dir, flit.dst_tile, flit.dst_slot));
                    }
                }
                for dst_tile in 0..q {
                    let pidx = (group * k + ch) * q + dst_tile;
                    let pick = rr_pick(q, self.recv_rsp_ptr[pidx], |lane| {
                        cand[lane].is_some_and(|(_, dt, _)| dt == dst_tile)
                    });
                    if let Some(lane) = pick {
                        let (dir, _, slot) = cand[lane].unwrap();
                        let rsp = self.rsp_grids[ch * q + lane].commit_eject(group, dir, now);
                        debug_assert_eq!(rsp.kind, FlitKind::Response);
                        self.recv_rsp_ptr[pidx] = rr_advance(q, lane);
                        let inbox = self.core_flat(group, dst_tile, slot);
                        self.inbox[inbox].push(rsp);
                    }
                }
            }
        }

        // response meshes advance one cycle
        let in_window = self.in_window;
        if self.workers > 1 {
            self.rsp_grids.par_iter_mut().for_each(|g| g.step(now, in_window));
        } else {
            for grid in &mut self.rsp_grids {
                grid.step(now, in_window);
            }
        }

        // inject pending bank responses: intra-group ones into the response
        // spill, remote ones into the response routers via the inverse of the
        // rotation their request latched
        for tile in 0..self.cfg.total_tiles() {
            let (group, t) = (tile / q, tile % q);
            if self.intra_rsp_spill[tile].has_space() {
                let pick = rr_pick(n, self.bank_rsp_spill_ptr[tile], |b| {
                    self.banks[tile * n + b]
                        .response
                        .as_ref()
                        .is_some_and(|r| r.dst_group == group && r.dst_tile != t)
                });
                if let Some(b) = pick {
                    let rsp = self.banks[tile * n + b].response.take().unwrap();
                    self.bank_rsp_spill_ptr[tile] = rr_advance(n, b);
                    self.intra_rsp_spill[tile].push(rsp, now);
                }
            }
        }
        for group in 0..groups {
            for ch in 0..k {
                // per-tile winning bank, then per-lane arbitration over the
                // remapper block's source slots
                let mut lane_cand: Vec<Vec<(usize, usize)>> = vec![Vec::new(); q];
                for t in 0..q {
                    let tile = group * q + t;
                    let pick = rr_pick(n, self.bank_rsp_chan_ptr[tile * k + ch], |b| {
                        self.banks[tile * n + b]
                            .response
                            .as_ref()
                            .is_some_and(|r| r.dst_group != group && r.channel == ch)
                    });
                    if let Some(b) = pick {
                        let lane = self.response_lane(group, t, ch);
                        let (_, slot) = tile_binding(&self.cfg, t);
                        lane_cand[lane].push((slot, tile * n + b));
                    }
                }
                for lane in 0..q {
                    if lane_cand[lane].is_empty() || !self.rsp_grids[ch * q + lane].can_inject(group)
                    {
                        continue;
                    }
                    let pidx = (group * k + ch) * q + lane;
                    let arity = self.cfg.remapper_arity;
                    let pick = rr_pick(arity, self.rsp_inject_ptr[pidx], |s| {
                        lane_cand[lane].iter().any(|&(slot, _)| slot == s)
                    })
                    .expect("non-empty candidate set");
                    let (_, bank_idx) =
                        *lane_cand[lane].iter().find(|&&(slot, _)| slot == pick).unwrap();
                    let rsp = self.banks[bank_idx].response.take().unwrap();
                    self.rsp_inject_ptr[pidx] = rr_advance(arity, pick);
                    let tile = bank_idx / n;
                    self.bank_rsp_chan_ptr[tile * k + ch] = rr_advance(n, bank_idx % n);
                    self.rsp_grids[ch * q + lane].inject(group, rsp, now);
                }
            }
        }
    }

    /// Cores retire delivered responses, then stage their next request.
    fn phase3_cores(&mut self, now: u64) -> Result<(), SimError> {
        for c in 0..self.cores.len() {
            let responses = std::mem::take(&mut self.inbox[c]);
            for rsp in responses {
                let retired = self.cores[c]
                    .retire(rsp.tag_seq, now)
                    .map_err(|msg| SimError::Protocol { cycle: now, msg })?;
                self.retired_total += 1;
                self.retired_hop_sum += retired.hops;
                self.last_retirement = Some(retired);
                if self.in_window {
                    self.retired_in_window += 1;
                    *self
                        .latency_hist
                        .entry(retired.class.to_string())
                        .or_default()
                        .entry(retired.latency)
                        .or_default() += 1;
                }
            }
            if !self.frozen {
                self.cores[c].maybe_post(now, &self.cfg)?;
            }
        }
        Ok(())
    }

    /// Posted intra-group requests enter their tile's egress spill; posted
    /// inter-group requests enter a router picked by the remapper, reads
    /// preferring the read-only channels. Local requests wait for phase 6.
    fn phase4_request_steering(&mut self, now: u64) {
        let (q, k, m) = (self.q(), self.k(), self.m());
        for tile in 0..self.cfg.total_tiles() {
            let (group, t) = (tile / q, tile % q);
            if self.intra_req_spill[tile].has_space() {
                let pick = rr_pick(m, self.tile_intra_ptr[tile], |c| {
                    self.cores[tile * m + c]
                        .posted
                        .is_some_and(|p| p.class == DestClass::IntraGroup)
                });
                if let Some(c) = pick {
                    let core = tile * m + c;
                    let post = self.cores[core].on_transfer();
                    self.issued_total += 1;
                    self.tile_intra_ptr[tile] = rr_advance(m, c);
                    let flit = CoreState::request_flit(&post, core, 0);
                    self.intra_req_spill[tile].push(flit, now);
                }
            }
            for &ch in &self.read_channel_order {
                let writable = self.write_channels.contains(&ch);
                let lane = self.request_lane(group, t, ch);
                if !self.req_grids[ch * q + lane].can_inject(group) {
                    continue;
                }
                let pick = rr_pick(m, self.tile_chan_ptr[tile * k + ch], |c| {
                    self.cores[tile * m + c].posted.is_some_and(|p| {
                        p.class == DestClass::InterGroup
                            && (p.kind == AccessKind::Read || writable)
                    })
                });
                if let Some(c) = pick {
                    let core = tile * m + c;
                    let post = self.cores[core].on_transfer();
                    self.issued_total += 1;
                    self.tile_chan_ptr[tile * k + ch] = rr_advance(m, c);
                    let flit = CoreState::request_flit(&post, core, ch);
                    self.req_grids[ch * q + lane].inject(group, flit, now);
                }
            }
        }
    }

    fn phase5_request_mesh(&mut self, now: u64) {
        let in_window = self.in_window;
        if self.workers > 1 {
            self.req_grids.par_iter_mut().for_each(|g| g.step(now, in_window));
        } else {
            for grid in &mut self.req_grids {
                grid.step(now, in_window);
            }
        }
    }

    /// Bank-side delivery: local posted requests, intra-group spill heads and
    /// mesh arrivals all arbitrate per bank through the tile crossbar.
    fn phase6_request_delivery(&mut self, now: u64) {
        let (q, k, m, n) = (self.q(), self.k(), self.m(), self.n());
        let groups = self.cfg.total_groups();
        // tile crossbar input indexing: cores, then the intra-group port,
        // then the K receive ports
        let inputs = m + 1 + k;

        for group in 0..groups {
            // candidate of the intra-group crossbar per destination tile
            let mut group_cand: Vec<Option<usize>> = vec![None; q];
            for dst_tile in 0..q {
                let ptr = self.group_req_ptr[group * q + dst_tile];
                group_cand[dst_tile] = rr_pick(q, ptr, |src| {
                    let f = &self.intra_req_spill[group * q + src];
                    !f.popped_at(now)
                        && f.front().is_some_and(|x| x.movable(now) && x.dst_tile == dst_tile)
                });
            }
            // candidate of each receive crossbar per (channel, destination tile)
            let mut eject: Vec<Vec<Option<(usize, usize, usize)>>> = vec![vec![None; q]; k];
            for ch in 0..k {
                for lane in 0..q {
                    if let Some((dir, flit)) =
                        self.req_grids[ch * q + lane].eject_candidate(group, now)
                    {
                        eject[ch][lane] = Some((dir, flit.dst_tile, flit.dst_slot));
                    }
                }
            }
            let mut recv_cand: Vec<Vec<Option<usize>>> = vec![vec![None; q]; k];
            for ch in 0..k {
                for dst_tile in 0..q {
                    let pidx = (group * k + ch) * q + dst_tile;
                    recv_cand[ch][dst_tile] = rr_pick(q, self.recv_req_ptr[pidx], |lane| {
                        eject[ch][lane].is_some_and(|(_, dt, _)| dt == dst_tile)
                    });
                }
            }

            for t in 0..q {
                let tile = group * q + t;
                // which bank each crossbar input wants this cycle
                let mut wants: Vec<Option<usize>> = vec![None; inputs];
                for c in 0..m {
                    if let Some(p) = self.cores[tile * m + c].posted {
                        if p.class == DestClass::LocalTile {
                            wants[c] = Some(p.dst_bank);
                        }
                    }
                }
                if let Some(src) = group_cand[t] {
                    let bank = self.intra_req_spill[group * q + src].front().unwrap().dst_slot;
                    wants[m] = Some(bank);
                }
                for ch in 0..k {
                    if let Some(lane) = recv_cand[ch][t] {
                        wants[m + 1 + ch] = Some(eject[ch][lane].unwrap().2);
                    }
                }
                for b in 0..n {
                    let bank_idx = tile * n + b;
                    if !self.banks[bank_idx].ready() {
                        continue;
                    }
                    let Some(w) = rr_pick(inputs, self.bank_ptr[bank_idx], |i| wants[i] == Some(b))
                    else {
                        continue;
                    };
                    self.bank_ptr[bank_idx] = rr_advance(inputs, w);
                    let mut flit = if w < m {
                        let core = tile * m + w;
                        let post = self.cores[core].on_transfer();
                        self.issued_total += 1;
                        CoreState::request_flit(&post, core, 0)
                    } else if w == m {
                        let src = group_cand[t].unwrap();
                        self.group_req_ptr[group * q + t] = rr_advance(q, src);
                        self.intra_req_spill[group * q + src].pop(now)
                    } else {
                        let ch = w - m - 1;
                        let lane = recv_cand[ch][t].unwrap();
                        let (dir, _, _) = eject[ch][lane].unwrap();
                        let pidx = (group * k + ch) * q + t;
                        self.recv_req_ptr[pidx] = rr_advance(q, lane);
                        self.req_grids[ch * q + lane].commit_eject(group, dir, now)
                    };
                    flit.last_move = now;
                    self.banks[bank_idx].accept(flit);
                }
            }
        }
    }

    fn phase7_commit(&mut self) {
        for core in &mut self.cores {
            core.end_cycle();
        }
        for r in &mut self.remappers {
            r.step_cycle();
        }
    }

    // ---- runs and reports ----

    fn quiescent(&self) -> bool {
        self.cores.iter().all(|c| c.in_flight() == 0)
            && self.banks.iter().all(BankState::is_empty)
            && self.intra_req_spill.iter().all(Fifo::is_empty)
            && self.intra_rsp_spill.iter().all(Fifo::is_empty)
            && self.req_grids.iter().all(|g| g.in_flight() == 0)
            && self.rsp_grids.iter().all(|g| g.in_flight() == 0)
    }

    pub fn in_flight_messages(&self) -> u64 {
        self.cores.iter().map(|c| c.in_flight() as u64).sum()
    }

    fn blocked_dump(&self) -> String {
        let mut out = String::new();
        use std::fmt::Write;
        for (label, grids) in [("request", &self.req_grids), ("response", &self.rsp_grids)] {
            for (i, grid) in grids.iter().enumerate() {
                if grid.in_flight() > 0 {
                    let _ = writeln!(
                        out,
                        "{label} grid channel {} lane {} ({} flits):",
                        i / self.q(),
                        i % self.q(),
                        grid.in_flight()
                    );
                    grid.dump_blocked(&mut out);
                }
            }
        }
        for (tile, f) in self.intra_req_spill.iter().enumerate() {
            if !f.is_empty() {
                let _ = writeln!(out, "request spill tile {tile}: {} flits", f.len());
            }
        }
        for (tile, f) in self.intra_rsp_spill.iter().enumerate() {
            if !f.is_empty() {
                let _ = writeln!(out, "response spill tile {tile}: {} flits", f.len());
            }
        }
        let stuck_cores = self.cores.iter().filter(|c| c.in_flight() > 0).count();
        let _ = writeln!(out, "{stuck_cores} cores with in-flight requests");
        out
    }

    /// Warmup (stats suppressed), a measured window, then optionally drain
    /// every in-flight message. Drain must finish within 10x the window.
    pub fn run(&mut self, warmup: u64, window: u64, drain: bool) -> Result<SimReport, SimError> {
        for _ in 0..warmup {
            self.step()?;
        }
        self.in_window = true;
        for _ in 0..window {
            self.step()?;
        }
        self.in_window = false;
        let mut drain_cycles = 0u64;
        if drain {
            self.frozen = true;
            while !self.quiescent() {
                if drain_cycles >= 10 * window {
                    return Err(SimError::Deadlock {
                        cycles: drain_cycles,
                        dump: self.blocked_dump(),
                    });
                }
                self.step()?;
                drain_cycles += 1;
            }
        }
        Ok(self.collect_report(warmup, window, drain_cycles))
    }

    fn channel_records(&self) -> Vec<ChannelRecord> {
        let q = self.q();
        let mut out = Vec::new();
        for (net, grids) in [("request", &self.req_grids), ("response", &self.rsp_grids)] {
            for (gi, grid) in grids.iter().enumerate() {
                for r in 0..grid.router_count() {
                    for dir in 0..4 {
                        if grid.neighbor(r, dir).is_none() {
                            continue;
                        }
                        let s = grid.link_stats[r][dir];
                        out.push(ChannelRecord {
                            net: net.to_string(),
                            channel: gi / q,
                            lane: gi % q,
                            x: grid.router(r).x,
                            y: grid.router(r).y,
                            dir: dir_name(dir).to_string(),
                            valid: s.valid,
                            stall: s.stall,
                            moved: s.moved,
                            congestion: congestion(s.valid, s.stall),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn collect_report(&self, warmup: u64, window: u64, drain_cycles: u64) -> SimReport {
        let channels = self.channel_records();
        let req: Vec<ChannelRecord> =
            channels.iter().filter(|c| c.net == "request").cloned().collect();
        let rsp: Vec<ChannelRecord> =
            channels.iter().filter(|c| c.net == "response").cloned().collect();
        let max_router_fifo = self
            .req_grids
            .iter()
            .chain(self.rsp_grids.iter())
            .map(MeshGrid::max_fifo_occupancy)
            .max()
            .unwrap_or(0);
        let max_spill = self
            .intra_req_spill
            .iter()
            .chain(self.intra_rsp_spill.iter())
            .map(|f| f.max_occupancy)
            .max()
            .unwrap_or(0);
        SimReport {
            run: RunMeta {
                warmup,
                window,
                drain_cycles,
                total_cycles: self.now,
                workers: self.workers,
            },
            config: self.cfg.clone(),
            totals: Totals {
                issued: self.issued_total,
                retired: self.retired_total,
                retired_in_window: self.retired_in_window,
            },
            bandwidth: delivered_bandwidth(self.retired_in_window, window, self.cfg.word_bytes, None),
            congestion: CongestionReport {
                request: net_congestion(&req),
                response: net_congestion(&rsp),
                combined: net_congestion(&channels),
            },
            heatmap_request: build_heatmaps(&req, self.cfg.mesh_x, self.cfg.mesh_y),
            heatmap_response: build_heatmaps(&rsp, self.cfg.mesh_x, self.cfg.mesh_y),
            latency_histogram: self.latency_hist.clone(),
            per_core: self.cores.iter().map(|c| c.stats).collect(),
            channels,
            audit: Audit {
                request_link_moves: self
                    .req_grids
                    .iter()
                    .flat_map(|g| g.link_stats.iter().flatten().map(|s| s.moved_total))
                    .sum(),
                response_link_moves: self
                    .rsp_grids
                    .iter()
                    .flat_map(|g| g.link_stats.iter().flatten().map(|s| s.moved_total))
                    .sum(),
                retired_hop_sum: self.retired_hop_sum,
                max_router_fifo_occupancy: max_router_fifo,
                max_spill_occupancy: max_spill,
                in_flight_at_end: self.in_flight_messages(),
            },
        }
    }
}

/// Round trip of one isolated request from `core_flat` to `addr` on an
/// otherwise idle network.
pub fn measure_isolated_round_trip(
    cfg: &NetworkConfig,
    core_flat: usize,
    addr: GlobalAddress,
    kind: AccessKind,
) -> Result<u64, SimError> {
    let mut programs: Vec<Program> = (0..cfg.total_cores()).map(|_| Program::Idle).collect();
    programs[core_flat] = Program::Trace([AccessIntent { kind, addr, due: 0 }].into());
    let mut sim = Simulation::build(cfg, programs)?;
    for _ in 0..10_000 {
        sim.step()?;
        if let Some(r) = sim.last_retirement {
            return Ok(r.latency);
        }
    }
    Err(SimError::Deadlock { cycles: 10_000, dump: sim.blocked_dump() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{decode_address, encode_address, BankCoordinate};
    use crate::endpoints::PatternKind;

    fn bank_addr(cfg: &NetworkConfig, group: usize, tile: usize, bank: usize) -> u64 {
        encode_address(&BankCoordinate { group_id: group, tile_id: tile, bank_id: bank, word_offset: 0 }, cfg)
    }

    #[test]
    fn local_read_round_trip_is_one_cycle() {
        let cfg = NetworkConfig::tiny_2x2();
        let rt = measure_isolated_round_trip(&cfg, 0, bank_addr(&cfg, 0, 0, 1), AccessKind::Read).unwrap();
        assert_eq!(rt, 1);
    }

    #[test]
    fn intra_group_round_trip_is_three_cycles() {
        let cfg = NetworkConfig::tiny_2x2();
        let rt = measure_isolated_round_trip(&cfg, 0, bank_addr(&cfg, 0, 2, 3), AccessKind::Read).unwrap();
        assert_eq!(rt, 3);
    }

    #[test]
    fn one_hop_round_trip_is_seven_cycles() {
        let cfg = NetworkConfig::tiny_2x2();
        for kind in [AccessKind::Read, AccessKind::Write] {
            let rt = measure_isolated_round_trip(&cfg, 0, bank_addr(&cfg, 1, 0, 0), kind).unwrap();
            assert_eq!(rt, 7);
        }
    }

    #[test]
    fn two_hop_round_trip_is_eleven_cycles() {
        let cfg = NetworkConfig::tiny_2x2();
        // group 0 at (0,0) to group 3 at (1,1): 2 hops
        let rt = measure_isolated_round_trip(&cfg, 0, bank_addr(&cfg, 3, 1, 2), AccessKind::Read).unwrap();
        assert_eq!(rt, 11);
    }

    #[test]
    fn hop_latency_three_stretches_the_round_trip() {
        let mut cfg = NetworkConfig::tiny_2x2();
        cfg.hop_latency = 3;
        let rt = measure_isolated_round_trip(&cfg, 0, bank_addr(&cfg, 1, 0, 0), AccessKind::Read).unwrap();
        assert_eq!(rt, 2 * 3 + 3);
    }

    #[test]
    fn build_rejects_single_cycle_hops() {
        let mut cfg = NetworkConfig::tiny_2x2();
        cfg.hop_latency = 1;
        assert!(Simulation::with_pattern(&cfg, &TrafficPattern::new(PatternKind::Idle)).is_err());
    }

    #[test]
    fn zero_injection_produces_zero_stats() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut sim = Simulation::with_pattern(&cfg, &TrafficPattern::new(PatternKind::Idle)).unwrap();
        let report = sim.run(10, 100, true).unwrap();
        assert_eq!(report.totals.issued, 0);
        assert_eq!(report.bandwidth.bytes_per_cycle, 0.0);
        assert_eq!(report.congestion.combined.active_channels, 0);
        assert!(report.latency_histogram.is_empty());
    }

    #[test]
    fn uniform_traffic_conserves_and_drains() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut pattern = TrafficPattern::new(PatternKind::UniformRandom);
        pattern.seed = 7;
        let mut sim = Simulation::with_pattern(&cfg, &pattern).unwrap();
        let report = sim.run(0, 500, true).unwrap();
        assert!(report.totals.issued > 0);
        assert_eq!(report.totals.issued, report.totals.retired);
        assert_eq!(report.audit.in_flight_at_end, 0);
        // every retired message crossed the mesh once per direction
        assert_eq!(report.audit.request_link_moves, report.audit.retired_hop_sum);
        assert_eq!(report.audit.response_link_moves, report.audit.retired_hop_sum);
        assert!(report.audit.max_router_fifo_occupancy <= cfg.fifo_depth);
    }

    #[test]
    fn latency_floor_matches_the_class_values() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut pattern = TrafficPattern::new(PatternKind::UniformRandom);
        pattern.injection_rate = 0.3;
        let mut sim = Simulation::with_pattern(&cfg, &pattern).unwrap();
        let report = sim.run(0, 400, true).unwrap();
        let floor = [("local_tile", 1u64), ("intra_group", 3), ("inter_group", 7)];
        for (class, min_latency) in floor {
            if let Some(hist) = report.latency_histogram.get(class) {
                let observed_min = *hist.keys().next().unwrap();
                assert!(
                    observed_min >= min_latency,
                    "{class}: observed {observed_min} below floor {min_latency}"
                );
            }
        }
    }

    #[test]
    fn determinism_across_worker_counts() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut pattern = TrafficPattern::new(PatternKind::UniformRandom);
        pattern.seed = 99;
        let mut a = Simulation::with_pattern(&cfg, &pattern).unwrap();
        a.set_workers(1);
        let ra = a.run(20, 300, true).unwrap().to_json();
        let mut b = Simulation::with_pattern(&cfg, &pattern).unwrap();
        b.set_workers(4);
        let mut rb = b.run(20, 300, true).unwrap();
        rb.run.workers = 1; // the only field allowed to differ
        assert_eq!(ra, rb.to_json());
    }

    #[test]
    fn hotspot_concentrates_traffic_toward_the_hot_group() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut pattern = TrafficPattern::new(PatternKind::Hotspot(3));
        pattern.seed = 5;
        let mut sim = Simulation::with_pattern(&cfg, &pattern).unwrap();
        let report = sim.run(50, 400, true).unwrap();
        // links entering group 3 at (1,1) carry the most moved flits
        let into_hot: u64 = report
            .channels
            .iter()
            .filter(|c| {
                c.net == "request"
                    && ((c.x == 0 && c.y == 1 && c.dir == "E") || (c.x == 1 && c.y == 0 && c.dir == "N"))
            })
            .map(|c| c.moved)
            .sum();
        let elsewhere: u64 = report
            .channels
            .iter()
            .filter(|c| {
                c.net == "request"
                    && !((c.x == 0 && c.y == 1 && c.dir == "E") || (c.x == 1 && c.y == 0 && c.dir == "N"))
            })
            .map(|c| c.moved)
            .sum();
        assert!(into_hot > elsewhere, "hotspot links {into_hot} vs rest {elsewhere}");
    }

    #[test]
    fn describe_reports_component_totals() {
        let d = Simulation::describe(&NetworkConfig::teranoc_1024()).unwrap();
        assert_eq!(d.cores, 1024);
        assert_eq!(d.banks, 4096);
        assert_eq!(d.routers, 2 * 16 * 16 * 2);
        assert_eq!(d.remappers, 2 * 16 * 4 * 2);
        assert_eq!(d.response_channels_total, 1536);
        assert_eq!(d.critical_complexity, 256);
    }

    #[test]
    fn protocol_violation_on_unknown_tag_aborts() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut sim = Simulation::with_pattern(&cfg, &TrafficPattern::new(PatternKind::Idle)).unwrap();
        // forge a response nobody asked for
        sim.inbox[0].push(crate::endpoints::make_response(
            &CoreState::request_flit(
                &crate::endpoints::PostedRequest {
                    kind: AccessKind::Read,
                    dst_group: 0,
                    dst_tile: 0,
                    dst_bank: 0,
                    class: DestClass::LocalTile,
                    seq: 5,
                },
                0,
                0,
            ),
            &cfg,
        ));
        assert!(matches!(sim.step(), Err(SimError::Protocol { .. })));
    }

    #[test]
    fn address_fault_in_a_trace_aborts() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut programs: Vec<Program> = (0..cfg.total_cores()).map(|_| Program::Idle).collect();
        programs[0] = Program::Trace(
            [AccessIntent { kind: AccessKind::Read, addr: cfg.total_capacity_bytes(), due: 0 }].into(),
        );
        let mut sim = Simulation::build(&cfg, programs).unwrap();
        assert!(matches!(sim.step(), Err(SimError::Address(_))));
    }

    #[test]
    fn responses_use_the_same_channel_as_their_request() {
        // reads prefer the read-only channel: lane traffic appears on k=1
        let cfg = NetworkConfig::tiny_2x2();
        let mut programs: Vec<Program> = (0..cfg.total_cores()).map(|_| Program::Idle).collect();
        programs[0] = Program::Trace(
            [AccessIntent { kind: AccessKind::Read, addr: bank_addr(&cfg, 1, 0, 0), due: 0 }].into(),
        );
        let mut sim = Simulation::build(&cfg, programs).unwrap();
        let report = sim.run(0, 20, false).unwrap();
        assert!(sim.last_retirement.is_some());
        let moved_by_channel = |net: &str, ch: usize| -> u64 {
            report
                .channels
                .iter()
                .filter(|c| c.net == net && c.channel == ch)
                .map(|c| c.moved)
                .sum()
        };
        assert_eq!(moved_by_channel("request", 1), 1, "read rides the read-only channel");
        assert_eq!(moved_by_channel("request", 0), 0);
        assert_eq!(moved_by_channel("response", 1), 1, "response mirrors the request channel");
        assert_eq!(moved_by_channel("response", 0), 0);
    }

    #[test]
    fn writes_never_use_the_read_only_channel() {
        let cfg = NetworkConfig::tiny_2x2();
        assert_eq!(cfg.channel_classes[1], crate::config::ChannelClass::ReadOnly);
        let mut pattern = TrafficPattern::new(PatternKind::UniformRandom);
        pattern.store_fraction = 1.0; // as many stores as loads
        pattern.seed = 11;
        let mut sim = Simulation::with_pattern(&cfg, &pattern).unwrap();
        let q = cfg.tiles_per_group;
        let mut saw_read_on_ro = false;
        for _ in 0..300 {
            sim.step().unwrap();
            for lane in 0..q {
                let grid = &sim.req_grids[q + lane]; // channel 1 grids
                for r in 0..grid.router_count() {
                    for d in 0..5 {
                        for f in grid.router(r).input[d].iter() {
                            assert_ne!(f.kind, FlitKind::WriteReq, "write on a read-only channel");
                            saw_read_on_ro |= f.kind == FlitKind::ReadReq;
                        }
                    }
                }
            }
        }
        assert!(saw_read_on_ro, "reads should actually use the read-only channel");
    }

    #[test]
    fn remapper_modes_all_conserve() {
        let base = NetworkConfig::tiny_2x2();
        for mode in [crate::config::RemapMode::Off, crate::config::RemapMode::Static, crate::config::RemapMode::PerCycle] {
            let mut cfg = base.clone();
            cfg.remap_mode = mode;
            let mut pattern = TrafficPattern::new(PatternKind::UniformRandom);
            pattern.seed = 3;
            let mut sim = Simulation::with_pattern(&cfg, &pattern).unwrap();
            let report = sim.run(0, 300, true).unwrap();
            assert_eq!(report.totals.issued, report.totals.retired, "mode {mode:?}");
        }
    }

    #[test]
    fn all_destinations_reachable_under_stride_and_block_assignment() {
        for stride in [true, false] {
            let mut cfg = NetworkConfig::tiny_2x2();
            cfg.tile_stride_assignment = stride;
            for dst_group in 1..cfg.total_groups() {
                let addr = bank_addr(&cfg, dst_group, 1, 0);
                let rt = measure_isolated_round_trip(&cfg, 0, addr, AccessKind::Read).unwrap();
                assert_eq!(rt, 2 * cfg.hop_latency * cfg.hops_between(0, dst_group) + 3);
            }
        }
    }

    #[test]
    fn report_roundtrips_through_json() {
        let cfg = NetworkConfig::tiny_2x2();
        let mut sim = Simulation::with_pattern(&cfg, &TrafficPattern::new(PatternKind::UniformRandom)).unwrap();
        let report = sim.run(0, 100, true).unwrap();
        let json = report.to_json();
        let back: SimReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn decode_of_generated_addresses_always_succeeds() {
        let cfg = NetworkConfig::teranoc_1024();
        for kind in [PatternKind::MatMulLike, PatternKind::DotpLike, PatternKind::Conv2dLike] {
            let pattern = TrafficPattern::new(kind);
            for intent in crate::endpoints::generate_pattern(&pattern, &cfg, 777, 2000) {
                decode_address(intent.addr, &cfg).unwrap();
            }
        }
    }
}
