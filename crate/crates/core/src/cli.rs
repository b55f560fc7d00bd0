//! Command implementations behind the binary: analytic tables, single runs,
//! remapper A/B studies, component dumps, and parameter sweeps.

use crate::analytic::{
    critical_complexity, zero_load_latency, LatencyModel, XbarInventory, ZeroLoadLatency,
};
use crate::config::{structural_counts, ChannelClass, ConfigError, NetworkConfig, RemapMode, StructuralCounts};
use crate::endpoints::{parse_trace, trace_programs, PatternError, PatternGen, PatternKind, Program, TrafficPattern};
use crate::engine::{Describe, SimError, Simulation};
use crate::metrics::{heatmap_csv, heatmap_pgm, latency_csv, SimReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Stable exit codes: 2 for configuration problems, 3 for deadlock.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Pattern(_) | CliError::Usage(_) => 2,
            CliError::Sim(SimError::Deadlock { .. }) => 3,
            CliError::Sim(SimError::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// Everything a run needs; echoed into every output so results are
/// reproducible from the spec alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub pattern: String,
    pub injection: f64,
    pub store_fraction: Option<f64>,
    pub warmup: u64,
    pub window: u64,
    pub drain: bool,
    pub remap: Option<RemapMode>,
    pub stride: Option<bool>,
    pub seed: u64,
    pub freq_mhz: Option<f64>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub trace: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            preset: Some("TERANOC_1024".into()),
            config: None,
            pattern: "uniform".into(),
            injection: 1.0,
            store_fraction: None,
            warmup: 0,
            window: 1000,
            drain: true,
            remap: None,
            stride: None,
            seed: 1,
            freq_mhz: None,
            out: None,
            workers: 1,
            trace: None,
        }
    }
}

impl RunSpec {
    pub fn resolve_config(&self) -> Result<NetworkConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => NetworkConfig::from_file(path)?,
            (None, Some(name)) => NetworkConfig::preset(name)?,
            (None, None) => NetworkConfig::teranoc_1024(),
        };
        if let Some(mode) = self.remap {
            cfg.remap_mode = mode;
        }
        if let Some(stride) = self.stride {
            cfg.tile_stride_assignment = stride;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn traffic(&self, cfg: &NetworkConfig) -> Result<TrafficPattern, CliError> {
        let kind: PatternKind = self.pattern.parse()?;
        let mut pattern = TrafficPattern::new(kind);
        pattern.injection_rate = self.injection;
        pattern.seed = self.seed;
        if let Some(sf) = self.store_fraction {
            pattern.store_fraction = sf;
        }
        pattern.validate(cfg).map_err(CliError::Pattern)?;
        Ok(pattern)
    }

    fn build_simulation(&self, cfg: &NetworkConfig) -> Result<Simulation, CliError> {
        let mut sim = if let Some(path) = &self.trace {
            let text = std::fs::read_to_string(path)?;
            let entries = parse_trace(&text)?;
            Simulation::build(cfg, trace_programs(cfg, &entries)?)?
        } else {
            let pattern = self.traffic(cfg)?;
            let programs = (0..cfg.total_cores())
                .map(|c| Program::Pattern(Box::new(PatternGen::new(&pattern, cfg, c))))
                .collect();
            Simulation::build(cfg, programs)?
        };
        sim.set_workers(self.workers);
        Ok(sim)
    }
}

/// Analytic figures for one configuration, with the flat comparison points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub preset: Option<String>,
    pub critical_complexity: u64,
    pub inventory: XbarInventory,
    pub zero_load: ZeroLoadLatency,
    pub flat_mesh_nodes: usize,
    pub flat_mesh_zero_load: Option<ZeroLoadLatency>,
    pub flat_xbar_complexity: u64,
    pub structural: StructuralCounts,
}

pub fn cmd_analyze(spec: &RunSpec) -> Result<AnalyzeReport, CliError> {
    let cfg = spec.resolve_config()?;
    let inventory = XbarInventory::from_config(&cfg);
    let zero_load = zero_load_latency(&LatencyModel::from_config(&cfg))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let flat_model = LatencyModel::flat_tile_mesh(&cfg);
    Ok(AnalyzeReport {
        preset: spec.preset.clone(),
        critical_complexity: critical_complexity(&inventory).unwrap(),
        inventory: inventory.clone(),
        zero_load,
        flat_mesh_nodes: flat_model.n_top,
        flat_mesh_zero_load: zero_load_latency(&flat_model).ok(),
        flat_xbar_complexity: critical_complexity(&XbarInventory::flat(&cfg)).unwrap(),
        structural: structural_counts(&cfg),
    })
}

pub fn analyze_table(report: &AnalyzeReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<44} {:>14}", "quantity", "value");
    let _ = writeln!(out, "{:-<59}", "");
    let _ = writeln!(out, "{:<44} {:>14}", "critical routing complexity", report.critical_complexity);
    for stage in &report.inventory.stages {
        let _ = writeln!(
            out,
            "  {:<42} {:>14}",
            format!("{} ({}x{})", stage.label, stage.inputs, stage.outputs),
            stage.complexity()
        );
    }
    let _ = writeln!(out, "{:<44} {:>14}", "zero-load max round trip (cycles)", report.zero_load.max_cycles);
    let _ = writeln!(out, "{:<44} {:>14.1}", "zero-load avg round trip (cycles)", report.zero_load.avg_cycles);
    if let Some(flat) = report.flat_mesh_zero_load {
        let _ = writeln!(
            out,
            "{:<44} {:>7} / {:>4.1}",
            format!("flat {}-tile mesh max/avg (cycles)", report.flat_mesh_nodes),
            flat.max_cycles,
            flat.avg_cycles
        );
    }
    let _ = writeln!(out, "{:<44} {:>14}", "flat crossbar complexity", report.flat_xbar_complexity);
    let s = &report.structural;
    let _ = writeln!(out, "{:<44} {:>14}", "response channels (total)", s.response_channels_total);
    let _ = writeln!(out, "{:<44} {:>14}", "bisection bandwidth (B/cycle)", s.bisection_bytes_per_cycle);
    let _ = writeln!(out, "{:<44} {:>14}", "peak local bandwidth (B/cycle)", s.peak_local_bytes_per_cycle);
    let _ = writeln!(out, "{:<44} {:>14.2}", "remote read rate (req/core/cycle)", s.remote_read_rate);
    let _ = writeln!(out, "{:<44} {:>14.2}", "remote write rate (req/core/cycle)", s.remote_write_rate);
    let _ = writeln!(out, "{:<44} {:>14.2}", "intra-group rate (req/core/cycle)", s.intra_group_rate);
    out
}

/// Run report wrapped with the spec that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub spec: RunSpec,
    pub report: SimReport,
}

pub fn cmd_run(spec: &RunSpec) -> Result<RunOutput, CliError> {
    let cfg = spec.resolve_config()?;
    let mut sim = spec.build_simulation(&cfg)?;
    let mut report = sim.run(spec.warmup, spec.window, spec.drain)?;
    report.bandwidth = crate::metrics::delivered_bandwidth(
        report.totals.retired_in_window,
        spec.window,
        cfg.word_bytes,
        spec.freq_mhz,
    );
    let output = RunOutput { spec: spec.clone(), report };
    if let Some(dir) = &spec.out {
        write_run_outputs(dir, &output)?;
    }
    Ok(output)
}

fn spec_comment(spec: &RunSpec) -> String {
    format!("# spec: {}", serde_json::to_string(spec).unwrap())
}

pub fn write_run_outputs(dir: &std::path::Path, output: &RunOutput) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(output).unwrap())?;
    let comment = spec_comment(&output.spec);
    std::fs::write(dir.join("heatmap.csv"), format!("{comment}\n{}", heatmap_csv(&output.report)))?;
    std::fs::write(dir.join("latency_hist.csv"), format!("{comment}\n{}", latency_csv(&output.report)))?;
    let (mx, my) = (output.report.config.mesh_x, output.report.config.mesh_y);
    for (name, maps) in [
        ("heatmap_request.pgm", &output.report.heatmap_request),
        ("heatmap_response.pgm", &output.report.heatmap_response),
    ] {
        let pgm = heatmap_pgm(maps, mx, my);
        let with_comment = pgm.replacen("P2\n", &format!("P2\n{comment}\n"), 1);
        std::fs::write(dir.join(name), with_comment)?;
    }
    Ok(())
}

pub fn run_summary(output: &RunOutput) -> String {
    let r = &output.report;
    let mut out = String::new();
    let _ = writeln!(out, "cycles: {} warmup + {} window + {} drain", r.run.warmup, r.run.window, r.run.drain_cycles);
    let _ = writeln!(out, "issued {} / retired {} (window {})", r.totals.issued, r.totals.retired, r.totals.retired_in_window);
    let _ = writeln!(out, "delivered bandwidth: {:.1} B/cycle", r.bandwidth.bytes_per_cycle);
    if let Some(gib) = r.bandwidth.gib_per_second {
        let _ = writeln!(out, "                     {gib:.1} GiB/s");
    }
    let _ = writeln!(
        out,
        "request congestion: mean {:.3} peak {:.3} over {} active channels",
        r.congestion.request.mean, r.congestion.request.peak, r.congestion.request.active_channels
    );
    let _ = writeln!(
        out,
        "response congestion: mean {:.3} peak {:.3}",
        r.congestion.response.mean, r.congestion.response.peak
    );
    for class in ["local_tile", "intra_group", "inter_group"] {
        if let Some(mean) = r.mean_latency(class) {
            let _ = writeln!(out, "mean {class} round trip: {mean:.1} cycles");
        }
    }
    out
}

/// One arm of the remapper comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbArm {
    pub remap: RemapMode,
    pub stride: bool,
    pub mean_congestion: f64,
    pub peak_congestion: f64,
    pub bytes_per_cycle: f64,
    pub retired_in_window: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbReport {
    pub spec: RunSpec,
    pub arms: Vec<AbArm>,
    /// (off - on) / off over the request network, stride as configured.
    pub mean_congestion_reduction: f64,
    pub peak_congestion_reduction: f64,
    /// on / off.
    pub bandwidth_ratio: f64,
}

fn run_arm(spec: &RunSpec, remap: RemapMode, stride: bool) -> Result<AbArm, CliError> {
    let mut arm_spec = spec.clone();
    arm_spec.remap = Some(remap);
    arm_spec.stride = Some(stride);
    arm_spec.out = None;
    let output = cmd_run(&arm_spec)?;
    Ok(AbArm {
        remap,
        stride,
        mean_congestion: output.report.congestion.request.mean,
        peak_congestion: output.report.congestion.request.peak,
        bytes_per_cycle: output.report.bandwidth.bytes_per_cycle,
        retired_in_window: output.report.totals.retired_in_window,
    })
}

pub fn cmd_ab_remap(spec: &RunSpec, stride_axis: bool) -> Result<AbReport, CliError> {
    let cfg = spec.resolve_config()?;
    let stride_base = spec.stride.unwrap_or(cfg.tile_stride_assignment);
    let mut arms = vec![
        run_arm(spec, RemapMode::Off, stride_base)?,
        run_arm(spec, RemapMode::PerCycle, stride_base)?,
    ];
    if stride_axis {
        arms.push(run_arm(spec, RemapMode::Off, !stride_base)?);
        arms.push(run_arm(spec, RemapMode::PerCycle, !stride_base)?);
    }
    let off = &arms[0];
    let on = &arms[1];
    let reduction = |a: f64, b: f64| if a > 0.0 { (a - b) / a } else { 0.0 };
    let report = AbReport {
        spec: spec.clone(),
        mean_congestion_reduction: reduction(off.mean_congestion, on.mean_congestion),
        peak_congestion_reduction: reduction(off.peak_congestion, on.peak_congestion),
        bandwidth_ratio: if off.bytes_per_cycle > 0.0 {
            on.bytes_per_cycle / off.bytes_per_cycle
        } else {
            1.0
        },
        arms,
    };
    if let Some(dir) = &spec.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ab_remap.json"), serde_json::to_string_pretty(&report).unwrap())?;
    }
    Ok(report)
}

pub fn ab_table(report: &AbReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<7} {:>12} {:>12} {:>14} {:>10}",
        "remap", "stride", "mean cong.", "peak cong.", "B/cycle", "retired"
    );
    for arm in &report.arms {
        let _ = writeln!(
            out,
            "{:<10} {:<7} {:>12.3} {:>12.3} {:>14.1} {:>10}",
            format!("{:?}", arm.remap),
            arm.stride,
            arm.mean_congestion,
            arm.peak_congestion,
            arm.bytes_per_cycle,
            arm.retired_in_window
        );
    }
    let _ = writeln!(
        out,
        "mean congestion -{:.0}%, peak -{:.0}%, bandwidth x{:.2}",
        report.mean_congestion_reduction * 100.0,
        report.peak_congestion_reduction * 100.0,
        report.bandwidth_ratio
    );
    out
}

/// A swept axis: `K=1,2,4`, `q=2,4`, `fifo_depth=1,2,4`, `mesh=2x2,4x4`,
/// `injection=0.25,1.0`.
#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<String>,
}

pub fn parse_axis(text: &str) -> Result<SweepAxis, CliError> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("axis `{text}` is not name=v1,v2,...")))?;
    let name = name.trim().to_string();
    if !["K", "q", "fifo_depth", "mesh", "injection"].contains(&name.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown sweep axis `{name}` (expected K, q, fifo_depth, mesh or injection)"
        )));
    }
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.is_empty() || values.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("axis `{name}` has empty values")));
    }
    Ok(SweepAxis { name, values })
}

fn apply_axis(cfg: &mut NetworkConfig, pattern_injection: &mut f64, name: &str, value: &str) -> Result<(), CliError> {
    let bad = |msg: String| CliError::Usage(format!("axis {name}={value}: {msg}"));
    match name {
        "K" => {
            let k: usize = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            cfg.channels_per_tile = k;
            cfg.channel_classes = (0..k)
                .map(|i| if i % 2 == 0 { ChannelClass::ReadWrite } else { ChannelClass::ReadOnly })
                .collect();
        }
        "q" => cfg.remapper_arity = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "fifo_depth" => {
            cfg.fifo_depth = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
        }
        "mesh" => {
            let (x, y) = value
                .split_once('x')
                .ok_or_else(|| bad("expected WIDTHxHEIGHT".into()))?;
            cfg.mesh_x = x.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            cfg.mesh_y = y.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        }
        "injection" => {
            *pattern_injection = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
        }
        _ => unreachable!("axis names validated in parse_axis"),
    }
    Ok(())
}

/// Every axis combination as one row of key metrics. Points run in parallel;
/// combinations that fail validation are skipped with a note on stderr.
pub fn cmd_sweep(spec: &RunSpec, axes: &[SweepAxis]) -> Result<String, CliError> {
    let base_cfg = spec.resolve_config()?;
    // cartesian product in axis order
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::new();
        for p in &points {
            for v in &axis.values {
                let mut row = p.clone();
                row.push((axis.name.clone(), v.clone()));
                next.push(row);
            }
        }
        points = next;
    }

    let results: Vec<Result<Option<String>, CliError>> = points
        .par_iter()
        .map(|assignment| {
            let mut cfg = base_cfg.clone();
            let mut injection = spec.injection;
            for (name, value) in assignment {
                apply_axis(&mut cfg, &mut injection, name, value)?;
            }
            if cfg.validate().is_err() {
                return Ok(None);
            }
            let mut point_spec = spec.clone();
            point_spec.injection = injection;
            point_spec.out = None;
            let pattern = point_spec.traffic(&cfg)?;
            let mut sim = Simulation::with_pattern(&cfg, &pattern)?;
            sim.set_workers(1);
            let report = sim.run(point_spec.warmup, point_spec.window, point_spec.drain)?;
            let labels: Vec<String> =
                assignment.iter().map(|(_, v)| v.clone()).collect();
            Ok(Some(format!(
                "{},{},{},{:.3},{:.4},{:.4},{:.4}",
                labels.join(","),
                report.totals.issued,
                report.totals.retired_in_window,
                report.bandwidth.bytes_per_cycle,
                report.congestion.request.mean,
                report.congestion.request.peak,
                report.congestion.response.mean,
            )))
        })
        .collect();

    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "{}{}issued,retired_in_window,bytes_per_cycle,req_mean_congestion,req_peak_congestion,rsp_mean_congestion",
        axes.iter().map(|a| a.name.as_str()).collect::<Vec<_>>().join(","),
        if axes.is_empty() { "" } else { "," }
    );
    for (assignment, row) in points.iter().zip(results) {
        match row? {
            Some(line) => {
                let _ = writeln!(csv, "{line}");
            }
            None => eprintln!(
                "skipping invalid combination: {}",
                assignment.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(" ")
            ),
        }
    }
    if let Some(dir) = &spec.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), format!("{}\n{csv}", spec_comment(spec)))?;
    }
    Ok(csv)
}

pub fn cmd_describe(spec: &RunSpec) -> Result<Describe, CliError> {
    let cfg = spec.resolve_config()?;
    Ok(Simulation::describe(&cfg)?)
}
