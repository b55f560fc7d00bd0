use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use teranoc::cli::{
    ab_table, analyze_table, cmd_ab_remap, cmd_analyze, cmd_describe, cmd_run, cmd_sweep,
    parse_axis, run_summary, CliError, RunSpec,
};
use teranoc::config::RemapMode;

#[derive(Parser)]
#[command(name = "teranoc", about = "Hybrid mesh-crossbar interconnect model", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Built-in configuration: TERANOC_1024 or TINY_2x2.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Key-value config file (field names mirror NetworkConfig).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Traffic pattern: uniform, local, intragroup, hotspot[:G], matmul,
    /// axpy, dotp, conv2d, idle.
    #[arg(long, default_value = "uniform")]
    pattern: String,
    /// Requests per core per cycle, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    injection: f64,
    /// Override the pattern's store-to-load ratio.
    #[arg(long)]
    store_fraction: Option<f64>,
    /// Cycles simulated before statistics collection starts.
    #[arg(long, default_value_t = 0)]
    warmup: u64,
    /// Measured window in cycles.
    #[arg(long, default_value_t = 1000)]
    window: u64,
    /// Complete all in-flight requests after the window.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    drain: bool,
    /// Override the configured remapper mode (off, static, percycle).
    #[arg(long)]
    remap: Option<String>,
    /// Override stride-based tile-to-remapper assignment.
    #[arg(long)]
    stride: Option<bool>,
    /// Top-level seed for traffic generation.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Clock frequency for bytes-per-second conversion.
    #[arg(long)]
    freq_mhz: Option<f64>,
    /// Directory for report.json, heatmap CSV/PGM and latency CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for stepping independent channel grids.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Replay trace file (lines of: cycle core kind address).
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl SpecArgs {
    fn into_spec(self) -> Result<RunSpec, CliError> {
        let remap = match self.remap.as_deref() {
            None => None,
            Some(text) => Some(text.parse::<RemapMode>().map_err(CliError::Usage)?),
        };
        Ok(RunSpec {
            preset: self.preset,
            config: self.config,
            pattern: self.pattern,
            injection: self.injection,
            store_fraction: self.store_fraction,
            warmup: self.warmup,
            window: self.window,
            drain: self.drain,
            remap,
            stride: self.stride,
            seed: self.seed,
            freq_mhz: self.freq_mhz,
            out: self.out,
            workers: self.workers,
            trace: self.trace,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the analytic latency/complexity table and structural counts.
    Analyze {
        #[command(flatten)]
        spec: SpecArgs,
        /// Emit machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Dump the component totals a configuration instantiates.
    Describe {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Simulate one run and write its report artifacts.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Run the identical spec with the remapper off and per-cycle and report deltas.
    AbRemap {
        #[command(flatten)]
        spec: SpecArgs,
        /// Also toggle stride assignment for a four-way table.
        #[arg(long)]
        stride_axis: bool,
    },
    /// Sweep axes (K, q, fifo_depth, mesh, injection) and emit CSV.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Axis spec, repeatable: --axis K=1,2,4
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { spec, json } => {
            let report = cmd_analyze(&spec.into_spec()?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                print!("{}", analyze_table(&report));
            }
        }
        Command::Describe { spec } => {
            let d = cmd_describe(&spec.into_spec()?)?;
            println!("{}", serde_json::to_string_pretty(&d).unwrap());
        }
        Command::Run { spec } => {
            let output = cmd_run(&spec.into_spec()?)?;
            print!("{}", run_summary(&output));
        }
        Command::AbRemap { spec, stride_axis } => {
            let report = cmd_ab_remap(&spec.into_spec()?, stride_axis)?;
            print!("{}", ab_table(&report));
        }
        Command::Sweep { spec, axes } => {
            let axes = axes
                .iter()
                .map(|a| parse_axis(a))
                .collect::<Result<Vec<_>, _>>()?;
            let csv = cmd_sweep(&spec.into_spec()?, &axes)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
