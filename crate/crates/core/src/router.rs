//! Word-width 5x5-port mesh router with input/output FIFOs and dimension-
//! ordered XY routing. Routers of one (network, channel, lane) form a
//! [`MeshGrid`] whose links are stepped with registered-ready semantics: a
//! flit makes at most one registered move per cycle, enforced by per-flit
//! move stamps, so one hop costs exactly one switch-allocation cycle plus one
//! link-traversal cycle.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlitKind {
    ReadReq,
    WriteReq,
    Response,
}

/// One message; the network is single-flit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flit {
    /// Flat index of the initiating core.
    pub src_core: usize,
    pub dst_group: usize,
    pub dst_tile: usize,
    /// Bank within the tile for requests; core within the tile for responses.
    pub dst_slot: usize,
    pub kind: FlitKind,
    pub tag_seq: u16,
    /// Channel class index (the K replication axis).
    pub channel: usize,
    pub has_payload: bool,
    /// Cycle of the last registered move; `u64::MAX` until the first move.
    pub last_move: u64,
}

impl Flit {
    pub fn movable(&self, now: u64) -> bool {
        self.last_move != now
    }
}

pub const NORTH: usize = 0;
pub const EAST: usize = 1;
pub const SOUTH: usize = 2;
pub const WEST: usize = 3;
pub const LOCAL: usize = 4;

pub fn opposite(dir: usize) -> usize {
    match dir {
        NORTH => SOUTH,
        EAST => WEST,
        SOUTH => NORTH,
        WEST => EAST,
        other => other,
    }
}

pub fn dir_name(dir: usize) -> &'static str {
    ["N", "E", "S", "W", "L"][dir]
}

/// Dimension-ordered routing: resolve X fully, then Y, else eject.
pub fn route_xy(at: (usize, usize), dst: (usize, usize)) -> usize {
    if at.0 != dst.0 {
        if dst.0 > at.0 { EAST } else { WEST }
    } else if at.1 != dst.1 {
        if dst.1 > at.1 { NORTH } else { SOUTH }
    } else {
        LOCAL
    }
}

/// Bounded FIFO that additionally tracks its occupancy watermark and the last
/// cycle it was popped, so at most one dequeue happens per cycle.
#[derive(Debug, Clone)]
pub struct Fifo {
    queue: VecDeque<Flit>,
    depth: usize,
    last_pop: u64,
    pub max_occupancy: usize,
}

impl Fifo {
    pub fn new(depth: usize) -> Self {
        Fifo { queue: VecDeque::with_capacity(depth), depth, last_pop: u64::MAX, max_occupancy: 0 }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn has_space(&self) -> bool {
        self.queue.len() < self.depth
    }

    pub fn front(&self) -> Option<&Flit> {
        self.queue.front()
    }

    pub fn popped_at(&self, now: u64) -> bool {
        self.last_pop == now
    }

    pub fn push(&mut self, mut flit: Flit, now: u64) {
        assert!(self.has_space(), "FIFO overflow");
        flit.last_move = now;
        self.queue.push_back(flit);
        self.max_occupancy = self.max_occupancy.max(self.queue.len());
    }

    pub fn pop(&mut self, now: u64) -> Flit {
        debug_assert!(self.last_pop != now, "double dequeue in one cycle");
        self.last_pop = now;
        self.queue.pop_front().expect("pop from empty FIFO")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Flit> {
        self.queue.iter()
    }
}

/// Valid/stall/moved counters for one unidirectional link channel. The window
/// counters feed the congestion metric; `moved_total` is lifetime and feeds
/// the conservation audit.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ChannelCounters {
    pub valid: u64,
    pub stall: u64,
    pub moved: u64,
    pub moved_total: u64,
}

#[derive(Debug, Clone)]
pub struct Router {
    pub x: usize,
    pub y: usize,
    /// Input FIFOs indexed N, E, S, W, Local.
    pub input: [Fifo; 5],
    /// Output FIFOs for the four link directions.
    pub output: [Fifo; 4],
    sa_ptr: [usize; 4],
    eject_ptr: usize,
}

impl Router {
    fn new(x: usize, y: usize, depth: usize) -> Self {
        Router {
            x,
            y,
            input: std::array::from_fn(|_| Fifo::new(depth)),
            output: std::array::from_fn(|_| Fifo::new(depth)),
            sa_ptr: [0; 4],
            eject_ptr: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.input.iter().chain(self.output.iter()).map(Fifo::len).sum()
    }
}

/// One mesh of routers carrying a single word-width channel; the full network
/// replicates this per (request/response, channel class, lane).
///
/// A hop is one switch allocation plus `hop_latency - 1` cycles of wire: the
/// direct output-to-input transfer, preceded by `hop_latency - 2` pipeline
/// stages when hops are longer than two cycles.
#[derive(Debug, Clone)]
pub struct MeshGrid {
    pub mesh_x: usize,
    pub mesh_y: usize,
    routers: Vec<Router>,
    /// Per router per direction, the extra link pipeline stages.
    link_stages: Vec<[Vec<Fifo>; 4]>,
    /// Link-stage counters per router per out direction.
    pub link_stats: Vec<[ChannelCounters; 4]>,
    /// Aggregate switch-allocation stalls (input head valid but not moved).
    pub sa_stalls: u64,
}

impl MeshGrid {
    pub fn new(mesh_x: usize, mesh_y: usize, fifo_depth: usize, hop_latency: u64) -> Self {
        assert!(mesh_x >= 1 && mesh_y >= 1 && fifo_depth >= 1 && hop_latency >= 2);
        let routers = (0..mesh_x * mesh_y)
            .map(|i| Router::new(i % mesh_x, i / mesh_x, fifo_depth))
            .collect::<Vec<_>>();
        let stages = (hop_latency - 2) as usize;
        let link_stages = (0..mesh_x * mesh_y)
            .map(|_| std::array::from_fn(|_| (0..stages).map(|_| Fifo::new(2)).collect()))
            .collect();
        let link_stats = vec![[ChannelCounters::default(); 4]; mesh_x * mesh_y];
        MeshGrid { mesh_x, mesh_y, routers, link_stages, link_stats, sa_stalls: 0 }
    }

    pub fn router(&self, idx: usize) -> &Router {
        &self.routers[idx]
    }

    pub fn router_count(&self) -> usize {
        self.routers.len()
    }

    fn index(&self, x: usize, y: usize) -> usize {
        y * self.mesh_x + x
    }

    /// Router index one link away in `dir`; None at the mesh boundary.
    pub fn neighbor(&self, idx: usize, dir: usize) -> Option<usize> {
        let (x, y) = (self.routers[idx].x, self.routers[idx].y);
        match dir {
            NORTH if y + 1 < self.mesh_y => Some(self.index(x, y + 1)),
            EAST if x + 1 < self.mesh_x => Some(self.index(x + 1, y)),
            SOUTH if y > 0 => Some(self.index(x, y - 1)),
            WEST if x > 0 => Some(self.index(x - 1, y)),
            _ => None,
        }
    }

    fn coord_of_group(&self, group: usize) -> (usize, usize) {
        (group % self.mesh_x, group / self.mesh_x)
    }

    /// One cycle of this grid: link traversals and switch allocations, all
    /// decided from the state at entry and committed together.
    pub fn step(&mut self, now: u64, in_window: bool) {
        let n = self.routers.len();
        let stages = self.link_stages[0][0].len();
        let occ_in: Vec<[usize; 5]> =
            self.routers.iter().map(|r| std::array::from_fn(|d| r.input[d].len())).collect();
        let occ_out: Vec<[usize; 4]> =
            self.routers.iter().map(|r| std::array::from_fn(|d| r.output[d].len())).collect();
        let occ_stage: Vec<[Vec<usize>; 4]> = self
            .link_stages
            .iter()
            .map(|per_dir| std::array::from_fn(|d| per_dir[d].iter().map(Fifo::len).collect()))
            .collect();

        // Link stage: the output-FIFO head departs onto the wire (directly
        // into the downstream input FIFO, or into the first pipeline stage)
        // when there was space at the start of the cycle. Later pipeline
        // stages shift forward under the same rule.
        enum LinkMove {
            OutToIn(usize, usize, usize),
            OutToStage(usize, usize),
            StageShift(usize, usize, usize),
            StageToIn(usize, usize, usize),
        }
        let mut link_moves: Vec<LinkMove> = Vec::new();
        for r in 0..n {
            for dir in 0..4 {
                let neighbor = self.neighbor(r, dir);
                if stages > 0 {
                    if let Some(nb) = neighbor {
                        let depth = self.routers[nb].input[0].depth();
                        if occ_stage[r][dir][stages - 1] > 0
                            && self.link_stages[r][dir][stages - 1].front().unwrap().movable(now)
                            && occ_in[nb][opposite(dir)] < depth
                        {
                            link_moves.push(LinkMove::StageToIn(r, dir, nb));
                        }
                    }
                    for s in (0..stages - 1).rev() {
                        if occ_stage[r][dir][s] > 0
                            && self.link_stages[r][dir][s].front().unwrap().movable(now)
                            && occ_stage[r][dir][s + 1] < 2
                        {
                            link_moves.push(LinkMove::StageShift(r, dir, s));
                        }
                    }
                }
                if occ_out[r][dir] == 0 {
                    continue;
                }
                let entered_wire = if stages > 0 {
                    if occ_stage[r][dir][0] < 2 {
                        link_moves.push(LinkMove::OutToStage(r, dir));
                        true
                    } else {
                        false
                    }
                } else {
                    match neighbor {
                        Some(nb)
                            if occ_in[nb][opposite(dir)] < self.routers[nb].input[0].depth() =>
                        {
                            link_moves.push(LinkMove::OutToIn(r, dir, nb));
                            true
                        }
                        _ => false,
                    }
                };
                let stats = &mut self.link_stats[r][dir];
                if in_window {
                    stats.valid += 1;
                }
                if entered_wire {
                    stats.moved_total += 1;
                    if in_window {
                        stats.moved += 1;
                    }
                } else if in_window {
                    stats.stall += 1;
                }
            }
        }

        // Switch allocation: one input head per output FIFO with space,
        // round-robin over the five input directions. Heads that moved this
        // cycle (stamped `now`) or whose FIFO was already dequeued wait for
        // the next edge.
        let mut sa_moves: Vec<(usize, usize, usize)> = Vec::new();
        for r in 0..n {
            let pos = (self.routers[r].x, self.routers[r].y);
            let mut head_dir: [Option<usize>; 5] = [None; 5];
            let mut valid_heads = 0usize;
            for in_dir in 0..5 {
                if self.routers[r].input[in_dir].popped_at(now) {
                    continue;
                }
                if let Some(f) = self.routers[r].input[in_dir].front() {
                    if f.movable(now) {
                        let out = route_xy(pos, self.coord_of_group(f.dst_group));
                        if out != LOCAL {
                            head_dir[in_dir] = Some(out);
                            valid_heads += 1;
                        }
                    }
                }
            }
            let mut granted = 0usize;
            for out_dir in 0..4 {
                if occ_out[r][out_dir] >= self.routers[r].output[out_dir].depth() {
                    continue;
                }
                let ptr = self.routers[r].sa_ptr[out_dir];
                if let Some(w) = crate::xbar::rr_pick(5, ptr, |i| head_dir[i] == Some(out_dir)) {
                    sa_moves.push((r, w, out_dir));
                    self.routers[r].sa_ptr[out_dir] = crate::xbar::rr_advance(5, w);
                    granted += 1;
                }
            }
            self.sa_stalls += (valid_heads - granted) as u64;
        }

        for mv in link_moves {
            match mv {
                LinkMove::OutToIn(r, dir, nb) => {
                    let flit = self.routers[r].output[dir].pop(now);
                    self.routers[nb].input[opposite(dir)].push(flit, now);
                }
                LinkMove::OutToStage(r, dir) => {
                    let flit = self.routers[r].output[dir].pop(now);
                    self.link_stages[r][dir][0].push(flit, now);
                }
                LinkMove::StageShift(r, dir, s) => {
                    let flit = self.link_stages[r][dir][s].pop(now);
                    self.link_stages[r][dir][s + 1].push(flit, now);
                }
                LinkMove::StageToIn(r, dir, nb) => {
                    let flit = self.link_stages[r][dir][stages - 1].pop(now);
                    self.routers[nb].input[opposite(dir)].push(flit, now);
                }
            }
        }
        for (r, in_dir, out_dir) in sa_moves {
            let flit = self.routers[r].input[in_dir].pop(now);
            self.routers[r].output[out_dir].push(flit, now);
        }
    }

    /// Whether the injection (Local input) FIFO of `router` can accept a flit.
    pub fn can_inject(&self, router: usize) -> bool {
        self.routers[router].input[LOCAL].has_space()
    }

    pub fn inject(&mut self, router: usize, flit: Flit, now: u64) {
        self.routers[router].input[LOCAL].push(flit, now);
    }

    /// The input head this router would eject this cycle (round-robin over
    /// input directions), without committing to it.
    pub fn eject_candidate(&self, router: usize, now: u64) -> Option<(usize, &Flit)> {
        let rt = &self.routers[router];
        let pos = (rt.x, rt.y);
        let eligible = |d: usize| {
            !rt.input[d].popped_at(now)
                && rt.input[d].front().is_some_and(|f| {
                    f.movable(now) && route_xy(pos, self.coord_of_group(f.dst_group)) == LOCAL
                })
        };
        let dir = crate::xbar::rr_pick(5, rt.eject_ptr, eligible)?;
        Some((dir, rt.input[dir].front().unwrap()))
    }

    pub fn commit_eject(&mut self, router: usize, dir: usize, now: u64) -> Flit {
        let rt = &mut self.routers[router];
        rt.eject_ptr = crate::xbar::rr_advance(5, dir);
        rt.input[dir].pop(now)
    }

    /// Flits currently buffered anywhere in this grid.
    pub fn in_flight(&self) -> usize {
        self.routers.iter().map(Router::occupancy).sum::<usize>()
            + self.link_stages.iter().flatten().flatten().map(Fifo::len).sum::<usize>()
    }

    pub fn max_fifo_occupancy(&self) -> usize {
        self.routers
            .iter()
            .flat_map(|r| r.input.iter().chain(r.output.iter()).map(|f| f.max_occupancy))
            .max()
            .unwrap_or(0)
    }

    /// Text dump of every non-empty FIFO, for deadlock diagnostics.
    pub fn dump_blocked(&self, out: &mut String) {
        use std::fmt::Write;
        for r in &self.routers {
            for (d, f) in r.input.iter().enumerate() {
                if !f.is_empty() {
                    let _ = writeln!(out, "  router ({},{}) in[{}]: {} flits", r.x, r.y, dir_name(d), f.len());
                }
            }
            for (d, f) in r.output.iter().enumerate() {
                if !f.is_empty() {
                    let _ = writeln!(out, "  router ({},{}) out[{}]: {} flits", r.x, r.y, dir_name(d), f.len());
                }
            }
        }
    }
}
