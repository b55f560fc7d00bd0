//! Router remapper: a seeded 16-bit shift register drives a rotation of the
//! tile-to-router port bindings within each block of `q` tiles, spreading
//! traffic across mesh channels that would otherwise be statically bound.

use crate::config::{NetworkConfig, RemapMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RemapError {
    #[error("LFSR state must be nonzero")]
    ZeroState,
}

/// One step of the maximal-length 16-bit Fibonacci LFSR (taps 16,14,13,11,
/// counted from the output side), shifting right with feedback into the top
/// bit. Period 65535 over the nonzero states.
pub fn lfsr16_step(state: u16) -> Result<u16, RemapError> {
    if state == 0 {
        return Err(RemapError::ZeroState);
    }
    let bit = (state ^ (state >> 2) ^ (state >> 3) ^ (state >> 5)) & 1;
    Ok((state >> 1) | (bit << 15))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lfsr16 {
    state: u16,
}

impl Lfsr16 {
    pub fn new(seed: u16) -> Result<Self, RemapError> {
        if seed == 0 {
            return Err(RemapError::ZeroState);
        }
        Ok(Lfsr16 { state: seed })
    }

    pub fn state(&self) -> u16 {
        self.state
    }

    pub fn step(&mut self) -> u16 {
        // invariant: state is never zero, so the unwrap cannot fire
        self.state = lfsr16_step(self.state).unwrap();
        self.state
    }
}

/// Derive a nonzero per-instance seed from the config seed (splitmix64).
pub fn derive_instance_seed(base: u16, index: u64) -> u16 {
    let mut z = (base as u64) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    let s = (z ^ (z >> 31)) as u16;
    if s == 0 { base } else { s }
}

/// Control state of one remapper instance serving `q` tile ports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemapperState {
    pub q: usize,
    pub mode: RemapMode,
    lfsr: Lfsr16,
    static_offset: usize,
}

impl RemapperState {
    pub fn new(q: usize, mode: RemapMode, seed: u16) -> Result<Self, RemapError> {
        Ok(RemapperState { q, mode, lfsr: Lfsr16::new(seed)?, static_offset: seed as usize % q })
    }

    /// Rotation offset in effect this cycle.
    pub fn offset(&self) -> usize {
        match self.mode {
            RemapMode::Off => 0,
            RemapMode::Static => self.static_offset,
            RemapMode::PerCycle => self.lfsr.state() as usize % self.q,
        }
    }

    /// Router slot bound to `tile_slot` this cycle.
    pub fn remap(&self, tile_slot: usize) -> usize {
        debug_assert!(tile_slot < self.q);
        (tile_slot + self.offset()) % self.q
    }

    /// Advance the shift register; called once per simulated cycle.
    pub fn step_cycle(&mut self) {
        if self.mode == RemapMode::PerCycle {
            self.lfsr.step();
        }
    }

    pub fn lfsr_state(&self) -> u16 {
        self.lfsr.state()
    }
}

/// Inverse rotation: the router slot a response bound with `offset` uses for
/// the tile at `tile_slot`.
pub fn inverse_slot(tile_slot: usize, offset: usize, q: usize) -> usize {
    (tile_slot + q - offset % q) % q
}

/// Which tiles each remapper serves. With stride assignment on, remapper g
/// serves tiles {g, g + Q/q, g + 2Q/q, ...}; off, contiguous blocks of q.
pub fn assign_tiles_to_remappers(cfg: &NetworkConfig) -> Vec<Vec<usize>> {
    let q = cfg.remapper_arity;
    let big_q = cfg.tiles_per_group;
    let groups = big_q / q;
    (0..groups)
        .map(|g| {
            (0..q)
                .map(|slot| if cfg.tile_stride_assignment { g + slot * groups } else { g * q + slot })
                .collect()
        })
        .collect()
}

/// (remapper id, slot within it) serving `tile` under `cfg`'s assignment.
pub fn tile_binding(cfg: &NetworkConfig, tile: usize) -> (usize, usize) {
    let q = cfg.remapper_arity;
    let groups = cfg.tiles_per_group / q;
    if cfg.tile_stride_assignment {
        (tile % groups, tile / groups)
    } else {
        (tile / q, tile % q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lfsr_single_step_reference_value() {
        assert_eq!(lfsr16_step(0xACE1).unwrap(), 0x5670);
    }

    #[test]
    fn lfsr_rejects_zero() {
        assert_eq!(lfsr16_step(0), Err(RemapError::ZeroState));
        assert!(Lfsr16::new(0).is_err());
    }

    #[test]
    fn lfsr_full_period_covers_all_nonzero_states() {
        // One orbit through all 65535 nonzero states proves the period for
        // every nonzero seed at once.
        let mut lfsr = Lfsr16::new(1).unwrap();
        let mut seen = vec![false; 1 << 16];
        for _ in 0..65535 {
            let s = lfsr.step();
            assert_ne!(s, 0);
            assert!(!seen[s as usize], "state {s:#x} repeated early");
            seen[s as usize] = true;
        }
        assert_eq!(lfsr.state(), 1, "period is exactly 65535");
        assert_eq!(seen.iter().filter(|&&b| b).count(), 65535);
    }

    #[test]
    fn remap_offsets() {
        let mut r = RemapperState::new(4, RemapMode::Static, 8).unwrap();
        // seed 8 mod 4 = 0: identity
        assert_eq!((0..4).map(|s| r.remap(s)).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        r.static_offset = 1;
        assert_eq!((0..4).map(|s| r.remap(s)).collect::<Vec<_>>(), vec![1, 2, 3, 0]);
        let off = RemapperState::new(4, RemapMode::Off, 0xACE1).unwrap();
        for cycle_slot in 0..4 {
            assert_eq!(off.remap(cycle_slot), cycle_slot);
        }
    }

    #[test]
    fn remap_is_a_bijection_every_cycle() {
        for mode in [RemapMode::Off, RemapMode::Static, RemapMode::PerCycle] {
            let mut r = RemapperState::new(4, mode, 0xACE1).unwrap();
            for _ in 0..10_000 {
                let mut hit = [false; 4];
                for slot in 0..4 {
                    let out = r.remap(slot);
                    assert!(!hit[out]);
                    hit[out] = true;
                }
                r.step_cycle();
            }
        }
    }

    #[test]
    fn inverse_undoes_remap() {
        let mut r = RemapperState::new(4, RemapMode::PerCycle, 0xBEEF).unwrap();
        for _ in 0..100 {
            let offset = r.offset();
            for slot in 0..4 {
                assert_eq!(inverse_slot(r.remap(slot), offset, 4), slot);
            }
            r.step_cycle();
        }
    }

    #[test]
    fn static_mode_never_advances() {
        let mut r = RemapperState::new(4, RemapMode::Static, 0xACE1).unwrap();
        let first = r.offset();
        assert_eq!(first, 0xACE1 % 4);
        for _ in 0..100 {
            r.step_cycle();
            assert_eq!(r.offset(), first);
        }
    }

    #[test]
    fn tile_assignment_stride_and_contiguous() {
        let mut cfg = NetworkConfig::teranoc_1024();
        cfg.tile_stride_assignment = true;
        let strided = assign_tiles_to_remappers(&cfg);
        assert_eq!(strided[0], vec![0, 4, 8, 12]);
        assert_eq!(strided.len(), 4);
        cfg.tile_stride_assignment = false;
        let blocks = assign_tiles_to_remappers(&cfg);
        assert_eq!(blocks[0], vec![0, 1, 2, 3]);

        // bindings agree with the assignment lists either way
        for stride in [true, false] {
            cfg.tile_stride_assignment = stride;
            let lists = assign_tiles_to_remappers(&cfg);
            for tile in 0..cfg.tiles_per_group {
                let (rem, slot) = tile_binding(&cfg, tile);
                assert_eq!(lists[rem][slot], tile);
            }
        }
    }

    #[test]
    fn q_equals_big_q_is_a_single_remapper() {
        let mut cfg = NetworkConfig::tiny_2x2();
        cfg.remapper_arity = cfg.tiles_per_group;
        for stride in [true, false] {
            cfg.tile_stride_assignment = stride;
            let lists = assign_tiles_to_remappers(&cfg);
            assert_eq!(lists, vec![(0..cfg.tiles_per_group).collect::<Vec<_>>()]);
        }
    }

    #[test]
    fn derived_seeds_are_nonzero() {
        for i in 0..1000 {
            assert_ne!(derive_instance_seed(0xACE1, i), 0);
        }
    }
}
