//! Evaluation quantities: per-channel congestion ratios, link heatmaps,
//! delivered bandwidth, latency histograms, and per-core accounting, plus the
//! serializable run report and its CSV/PGM writers.

use crate::config::NetworkConfig;
use crate::endpoints::CoreStats;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Stall cycles over valid cycles; 0 for an idle channel.
pub fn congestion(valid: u64, stall: u64) -> f64 {
    if valid == 0 {
        0.0
    } else {
        stall as f64 / valid as f64
    }
}

/// Window counters of one unidirectional link channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    /// "request" or "response".
    pub net: String,
    /// Channel class index (K axis).
    pub channel: usize,
    /// Lane (tile slot) within the channel bundle.
    pub lane: usize,
    pub x: usize,
    pub y: usize,
    /// Link direction leaving (x, y).
    pub dir: String,
    pub valid: u64,
    pub stall: u64,
    pub moved: u64,
    pub congestion: f64,
}

/// Congestion summary over one network's channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetCongestion {
    /// Mean ratio over channels that saw traffic.
    pub mean: f64,
    /// Worst single channel.
    pub peak: f64,
    pub active_channels: usize,
    /// Total stalls over total valid cycles.
    pub global_ratio: f64,
}

pub fn net_congestion(records: &[ChannelRecord]) -> NetCongestion {
    let active: Vec<&ChannelRecord> = records.iter().filter(|r| r.valid > 0).collect();
    let peak = active.iter().map(|r| r.congestion).fold(0.0, f64::max);
    let mean = if active.is_empty() {
        0.0
    } else {
        active.iter().map(|r| r.congestion).sum::<f64>() / active.len() as f64
    };
    let valid: u64 = active.iter().map(|r| r.valid).sum();
    let stall: u64 = active.iter().map(|r| r.stall).sum();
    NetCongestion { mean, peak, active_channels: active.len(), global_ratio: congestion(valid, stall) }
}

/// Mean and max congestion over the channels bundled on each link direction,
/// as `[y][x]` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirHeatmap {
    pub dir: String,
    pub mean: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
}

pub fn build_heatmaps(records: &[ChannelRecord], mesh_x: usize, mesh_y: usize) -> Vec<DirHeatmap> {
    ["N", "E", "S", "W"]
        .iter()
        .map(|d| {
            let mut mean = vec![vec![0.0; mesh_x]; mesh_y];
            let mut max = vec![vec![0.0; mesh_x]; mesh_y];
            for y in 0..mesh_y {
                for x in 0..mesh_x {
                    let bundle: Vec<&ChannelRecord> = records
                        .iter()
                        .filter(|r| r.dir == *d && r.x == x && r.y == y)
                        .collect();
                    if bundle.is_empty() {
                        continue;
                    }
                    mean[y][x] =
                        bundle.iter().map(|r| r.congestion).sum::<f64>() / bundle.len() as f64;
                    max[y][x] = bundle.iter().map(|r| r.congestion).fold(0.0, f64::max);
                }
            }
            DirHeatmap { dir: d.to_string(), mean, max }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub warmup: u64,
    pub window: u64,
    pub drain_cycles: u64,
    pub total_cycles: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub issued: u64,
    pub retired: u64,
    pub retired_in_window: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub bytes_per_cycle: f64,
    /// Present when a clock frequency was supplied.
    pub gib_per_second: Option<f64>,
}

/// Retired words per window cycle times the word width.
pub fn delivered_bandwidth(
    retired_in_window: u64,
    window: u64,
    word_bytes: u64,
    freq_mhz: Option<f64>,
) -> Bandwidth {
    let bytes_per_cycle = if window == 0 {
        0.0
    } else {
        retired_in_window as f64 * word_bytes as f64 / window as f64
    };
    Bandwidth {
        bytes_per_cycle,
        gib_per_second: freq_mhz.map(|f| bytes_per_cycle * f * 1e6 / (1u64 << 30) as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub request: NetCongestion,
    pub response: NetCongestion,
    pub combined: NetCongestion,
}

/// Lifetime counters for the conservation audit. After a drained run, each
/// network's link moves equal the summed hop counts of all retired messages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub request_link_moves: u64,
    pub response_link_moves: u64,
    pub retired_hop_sum: u64,
    pub max_router_fifo_occupancy: usize,
    pub max_spill_occupancy: usize,
    pub in_flight_at_end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub run: RunMeta,
    pub config: NetworkConfig,
    pub totals: Totals,
    pub bandwidth: Bandwidth,
    pub congestion: CongestionReport,
    pub heatmap_request: Vec<DirHeatmap>,
    pub heatmap_response: Vec<DirHeatmap>,
    /// destination class -> (round-trip latency -> count), window only.
    pub latency_histogram: BTreeMap<String, BTreeMap<u64, u64>>,
    pub per_core: Vec<CoreStats>,
    /// Raw per-channel counters; every aggregate above is recomputable from
    /// these.
    pub channels: Vec<ChannelRecord>,
    pub audit: Audit,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn mean_latency(&self, class: &str) -> Option<f64> {
        let hist = self.latency_histogram.get(class)?;
        let n: u64 = hist.values().sum();
        if n == 0 {
            return None;
        }
        Some(hist.iter().map(|(l, c)| l * c).sum::<u64>() as f64 / n as f64)
    }
}

/// Aggregated heatmap CSV: one row per (network, x, y, direction).
pub fn heatmap_csv(report: &SimReport) -> String {
    let mut out = String::from("net,x,y,dir,mean_congestion,max_congestion\n");
    for (net, maps) in
        [("request", &report.heatmap_request), ("response", &report.heatmap_response)]
    {
        for map in maps.iter() {
            for (y, row) in map.mean.iter().enumerate() {
                for (x, mean) in row.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{net},{x},{y},{},{:.6},{:.6}",
                        map.dir, mean, map.max[y][x]
                    );
                }
            }
        }
    }
    out
}

/// Latency histogram CSV: class,latency,count.
pub fn latency_csv(report: &SimReport) -> String {
    let mut out = String::from("class,latency_cycles,count\n");
    for (class, hist) in &report.latency_histogram {
        for (latency, count) in hist {
            let _ = writeln!(out, "{class},{latency},{count}");
        }
    }
    out
}

/// Portable graymap of one network's mean-congestion heatmaps, the four
/// direction matrices stacked vertically (N, E, S, W), 0..255 gray levels.
pub fn heatmap_pgm(maps: &[DirHeatmap], mesh_x: usize, mesh_y: usize) -> String {
    let mut out = format!("P2\n{} {}\n255\n", mesh_x, mesh_y * maps.len());
    for map in maps {
        for row in &map.mean {
            let line: Vec<String> =
                row.iter().map(|v| format!("{}", (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn congestion_ratio_definition() {
        assert_eq!(congestion(100, 40), 0.40);
        assert_eq!(congestion(0, 0), 0.0);
        assert_eq!(congestion(7, 7), 1.0);
    }

    #[test]
    fn bandwidth_peak_case() {
        // 1024 retirements per cycle of 4 bytes each
        let bw = delivered_bandwidth(1024 * 3000, 3000, 4, None);
        assert_eq!(bw.bytes_per_cycle, 4096.0);
        assert!(bw.gib_per_second.is_none());
        let with_freq = delivered_bandwidth(1024 * 3000, 3000, 4, Some(936.0));
        let gib = with_freq.gib_per_second.unwrap();
        assert!((gib - 4096.0 * 936e6 / (1u64 << 30) as f64).abs() < 1e-9);
    }

    #[test]
    fn zero_traffic_bandwidth_is_zero() {
        let bw = delivered_bandwidth(0, 1000, 4, Some(936.0));
        assert_eq!(bw.bytes_per_cycle, 0.0);
        assert_eq!(bw.gib_per_second, Some(0.0));
    }

    fn record(dir: &str, x: usize, y: usize, valid: u64, stall: u64) -> ChannelRecord {
        ChannelRecord {
            net: "request".into(),
            channel: 0,
            lane: 0,
            x,
            y,
            dir: dir.into(),
            valid,
            stall,
            moved: valid - stall,
            congestion: congestion(valid, stall),
        }
    }

    #[test]
    fn net_congestion_over_active_channels() {
        let records = vec![record("E", 0, 0, 100, 40), record("E", 1, 0, 0, 0), record("W", 1, 0, 10, 10)];
        let c = net_congestion(&records);
        assert_eq!(c.active_channels, 2);
        assert!((c.mean - 0.70).abs() < 1e-12);
        assert_eq!(c.peak, 1.0);
        assert!((c.global_ratio - 50.0 / 110.0).abs() < 1e-12);
    }

    #[test]
    fn idle_network_heatmap_is_all_zero() {
        let maps = build_heatmaps(&[], 3, 2);
        assert_eq!(maps.len(), 4);
        for m in &maps {
            assert!(m.mean.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn heatmap_aggregates_mean_and_max_over_the_bundle() {
        let records = vec![record("E", 0, 0, 100, 20), record("E", 0, 0, 100, 60)];
        let maps = build_heatmaps(&records, 2, 1);
        let east = maps.iter().find(|m| m.dir == "E").unwrap();
        assert!((east.mean[0][0] - 0.40).abs() < 1e-12);
        assert!((east.max[0][0] - 0.60).abs() < 1e-12);
    }

    #[test]
    fn pgm_shape_is_stacked_directions() {
        let maps = build_heatmaps(&[record("N", 0, 0, 10, 5)], 2, 2);
        let pgm = heatmap_pgm(&maps, 2, 2);
        assert!(pgm.starts_with("P2\n2 8\n255\n"));
        assert!(pgm.contains("128"));
    }
}
