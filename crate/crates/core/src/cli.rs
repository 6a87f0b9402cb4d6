//! Command-line front end: `plan`, `run`, `verify`, `simulate` and `compare`.
//!
//! Settings come from built-in defaults, then a flat JSON config file
//! (`--config` or `OOCSTENCIL_CONFIG`), then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codec::CodecSpec;
use crate::domain::{coverage_check, plan_decomposition, GridSpec};
use crate::error::{Error, Result};
use crate::pipeline::{self, Backend, Mode, RunConfig, RunReport};
use crate::stencil::Initializer;
use crate::trace::{self, memory_comparison, CostModel};

pub const CONFIG_ENV: &str = "OOCSTENCIL_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_OUT_OF_MEMORY: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Decomposition(_) | Error::Json(_) => EXIT_CONFIG,
        Error::OutOfDeviceMemory { .. } => EXIT_OUT_OF_MEMORY,
        Error::Verification(_) => EXIT_VERIFY_FAILED,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ooc-stencil", version, about = "Out-of-core stencil runs with on-the-fly compression")]
pub struct Cli {
    /// Flat JSON config file; overrides OOCSTENCIL_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the chunk plan as JSON.
    Plan {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a run and print its report.
    Run {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Chrome trace-event JSON output.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Directory for raw little-endian f64 dumps of the final fields.
        #[arg(long)]
        dump_fields: Option<PathBuf>,
    },
    /// Run on real data and compare with the in-core reference.
    Verify {
        #[command(flatten)]
        settings: Settings,
    },
    /// Simulate modes under the cost model and predict the speedup.
    Simulate {
        #[command(flatten)]
        settings: Settings,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "ooc-baseline,ooc-compress-swb")]
        modes: Vec<String>,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tabulate saved run reports.
    Compare {
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Every setting as an optional override.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Cubic interior edge; sets nx, ny and nz.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    #[arg(long)]
    pub halo: Option<usize>,
    #[arg(long)]
    pub chunks: Option<usize>,
    #[arg(long)]
    pub tb_steps: Option<usize>,
    #[arg(long)]
    pub sharing: Option<bool>,
    #[arg(long)]
    pub mode: Option<String>,
    /// identity, truncate or block-quant[:q]
    #[arg(long)]
    pub codec: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Random initial state with this seed instead of the Gaussian pulse.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lanes: Option<usize>,
    #[arg(long)]
    pub device_capacity_bytes: Option<u64>,
    #[arg(long)]
    pub h2d_gbps: Option<f64>,
    #[arg(long)]
    pub d2h_gbps: Option<f64>,
    #[arg(long)]
    pub d2d_gbps: Option<f64>,
    #[arg(long)]
    pub compute_cells_per_s: Option<f64>,
    #[arg(long)]
    pub decompress_cells_per_s: Option<f64>,
    #[arg(long)]
    pub compress_cells_per_s: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident: $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` win.
    pub fn overlay(mut self, other: &Settings) -> Self {
        overlay!(self, other: grid, nx, ny, nz, halo, chunks, tb_steps, sharing, mode, codec,
            steps, backend, seed, lanes, device_capacity_bytes, h2d_gbps, d2h_gbps, d2d_gbps,
            compute_cells_per_s, decompress_cells_per_s, compress_cells_per_s, tolerance);
        if other.grid.is_some() && other.nx.is_none() && other.ny.is_none() && other.nz.is_none() {
            self.nx = None;
            self.ny = None;
            self.nz = None;
        }
        self
    }

    pub fn to_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        let base = self.grid.unwrap_or(c.grid.nx);
        let grid = GridSpec::new(
            self.nx.unwrap_or(base),
            self.ny.unwrap_or(base),
            self.nz.unwrap_or(base),
            self.halo.unwrap_or(c.grid.halo_radius),
        )?;
        c.grid = grid;
        if let Some(v) = self.chunks {
            c.chunks = v;
        }
        if let Some(v) = self.tb_steps {
            c.tb_steps = v;
        }
        if let Some(v) = self.sharing {
            c.sharing = v;
        }
        if let Some(v) = &self.mode {
            c.mode = v.parse()?;
        }
        if let Some(v) = &self.codec {
            c.codec = v.parse()?;
        } else if c.mode == Mode::OocBaseline {
            c.codec = CodecSpec::Identity;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = &self.backend {
            c.backend = v.parse()?;
        }
        if let Some(seed) = self.seed {
            c.init = Initializer::Random { seed };
        }
        if let Some(v) = self.lanes {
            c.lanes = v;
        }
        if let Some(v) = self.device_capacity_bytes {
            c.device_capacity_bytes = v;
        }
        let d = CostModel::default();
        c.cost = CostModel {
            h2d_gbps: self.h2d_gbps.unwrap_or(d.h2d_gbps),
            d2h_gbps: self.d2h_gbps.unwrap_or(d.d2h_gbps),
            d2d_gbps: self.d2d_gbps.unwrap_or(d.d2d_gbps),
            compute_cells_per_s: self.compute_cells_per_s.unwrap_or(d.compute_cells_per_s),
            decompress_cells_per_s: self.decompress_cells_per_s.unwrap_or(d.decompress_cells_per_s),
            compress_cells_per_s: self.compress_cells_per_s.unwrap_or(d.compress_cells_per_s),
        };
        if let Some(v) = self.tolerance {
            c.tolerance = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Resolves defaults, config file and flags into a run configuration.
pub fn resolve(config_path: Option<&Path>, flags: &Settings) -> Result<RunConfig> {
    let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let file = match config_path.map(Path::to_path_buf).or(env_path) {
        Some(p) => Settings::from_file(&p)?,
        None => Settings::default(),
    };
    file.overlay(flags).to_config()
}

fn write_or_print(path: Option<&Path>, text: &str, out: &mut String) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.push_str(text),
    }
    Ok(())
}

/// Executes a parsed command; returns the text for stdout and the exit code.
pub fn execute(cli: &Cli) -> Result<(String, i32)> {
    let mut out = String::new();
    let cfg = cli.config.as_deref();
    let code = match &cli.command {
        Command::Plan { settings, out: path } => {
            let c = resolve(cfg, settings)?;
            let plan = plan_decomposition(&c.grid, c.chunks, c.tb_steps, c.sharing)?;
            let violations = coverage_check(&plan);
            if !violations.is_empty() {
                return Err(Error::Decomposition(format!("{violations:?}")));
            }
            write_or_print(path.as_deref(), &(plan.to_json()? + "\n"), &mut out)?;
            EXIT_OK
        }
        Command::Run {
            settings,
            report,
            trace: trace_path,
            dump_fields,
        } => {
            let c = resolve(cfg, settings)?;
            let outcome = pipeline::run(&c)?;
            if let Some(p) = trace_path {
                trace::export_trace(&outcome.trace, p)?;
            }
            if let (Some(dir), Some(state)) = (dump_fields, &outcome.state) {
                std::fs::create_dir_all(dir)?;
                state.prev.write_raw(&dir.join("pressure_prev.f64"))?;
                state.curr.write_raw(&dir.join("pressure_curr.f64"))?;
            }
            write_or_print(report.as_deref(), &(outcome.report.to_json()? + "\n"), &mut out)?;
            EXIT_OK
        }
        Command::Verify { settings } => {
            let c = resolve(cfg, settings)?;
            let v = pipeline::verify(&c)?;
            out.push_str(&serde_json::to_string_pretty(&v)?);
            out.push('\n');
            if v.pass {
                EXIT_OK
            } else {
                EXIT_VERIFY_FAILED
            }
        }
        Command::Simulate {
            settings,
            modes,
            trace_dir,
            csv,
        } => {
            let mut base = resolve(cfg, settings)?;
            base.backend = Backend::Simulated;
            let mut reports = Vec::new();
            let mut traces = Vec::new();
            for m in modes {
                let mut c = base.clone();
                c.mode = m.parse()?;
                if c.mode == Mode::OocBaseline {
                    c.codec = CodecSpec::Identity;
                }
                let o = pipeline::run(&c)?;
                if let Some(dir) = trace_dir {
                    std::fs::create_dir_all(dir)?;
                    trace::export_trace(&o.trace, &dir.join(format!("{}.trace.json", c.mode)))?;
                }
                traces.push((c.mode.to_string(), o.trace));
                reports.push(o.report);
            }
            if let Some(p) = csv {
                let rows: Vec<(String, &[_])> =
                    traces.iter().map(|(l, t)| (l.clone(), t.as_slice())).collect();
                std::fs::write(p, trace::category_csv(&rows))?;
            }
            out.push_str(&summary_table(&reports));
            EXIT_OK
        }
        Command::Compare { reports, csv } => {
            let loaded = reports
                .iter()
                .map(|p| RunReport::from_json(&std::fs::read_to_string(p)?))
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = csv {
                std::fs::write(p, report_csv(&loaded))?;
            }
            out.push_str(&summary_table(&loaded));
            EXIT_OK
        }
    };
    Ok((out, code))
}

/// Makespan, bottleneck and memory per report; speedups are relative to the first.
pub fn summary_table(reports: &[RunReport]) -> String {
    let mut s = format!(
        "{:<20} {:<10} {:>12} {:>9} {:>16}\n",
        "mode", "codec", "makespan_s", "speedup", "bottleneck"
    );
    let first = reports.first().map(|r| r.makespan_s).unwrap_or(0.0);
    for r in reports {
        let label = r.bottleneck.map(|b| b.label.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<20} {:<10} {:>12.4} {:>8.3}x {:>16}",
            r.mode.as_str(),
            r.codec,
            r.makespan_s,
            if r.makespan_s > 0.0 { first / r.makespan_s } else { 0.0 },
            label
        );
    }
    let memory: Vec<_> = reports
        .iter()
        .filter_map(|r| r.memory.clone().map(|m| (r.mode.to_string(), m)))
        .collect();
    if !memory.is_empty() {
        s.push('\n');
        s.push_str(&memory_comparison(&memory).to_table());
    }
    s
}

pub fn report_csv(reports: &[RunReport]) -> String {
    let kinds = [
        crate::OpKind::H2D,
        crate::OpKind::ShareCopy,
        crate::OpKind::Decompress,
        crate::OpKind::Compute,
        crate::OpKind::Compress,
        crate::OpKind::D2H,
    ];
    let mut s = String::from("mode,codec");
    for k in kinds {
        let _ = write!(s, ",{k}_s");
    }
    s.push_str(",makespan_s,peak_units\n");
    for r in reports {
        let _ = write!(s, "{},{}", r.mode, r.codec);
        for k in kinds {
            let _ = write!(s, ",{:.6}", r.category_seconds.get(&k).copied().unwrap_or(0.0));
        }
        let units = r.memory.as_ref().map(|m| m.peak_units).unwrap_or(0.0);
        let _ = writeln!(s, ",{:.6},{units:.4}", r.makespan_s);
    }
    s
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok((text, code)) => {
            print!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
