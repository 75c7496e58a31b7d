use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use olrn_core::credit::CreditSpec;
use olrn_core::diagnostics::MemoryEstimate;
use olrn_core::harness::experiments::{self, Preset};
use olrn_core::harness::{
    run_grid, run_stream, Axes, ExperimentConfig, GridFile, GridOptions, GridReport, OutputFormat,
};
use olrn_core::tasks::{self, TaskKind, TaskSpec};

#[derive(Parser)]
#[command(name = "olrn", version, about = "Online recurrent learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML config: an experiment for `run`, a `[base]` + `[axes]` grid for
    /// `grid`, or a replacement base experiment for the presets.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds, as a list (`0,1,2`) or a half-open range (`0..5`).
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value = "csv")]
    format: OutputFormat,
    /// Worker threads for grid cells (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress per-run progress lines on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One experiment config, scored against its frozen and reference companions.
    Run,
    /// A grid file with `[base]` and `[axes]` tables.
    Grid,
    /// Recovery against trace decay, Adam, n=64.
    SweepDecay,
    /// Decay {0.95, 0} by optimizer {SGD, Adam}.
    #[command(name = "grid-2x2")]
    Grid2x2,
    /// Six optimizers on zero-decay gradients, sine and delayed tasks.
    IsolateOptim,
    /// SGD across vanilla RNN, GRU, LSTM and CTRNN.
    CrossArch,
    /// Train with Adam, switch optimizer at the shift.
    SwitchControl,
    /// Modeled memory per credit method and hidden size; optional timing.
    Memscale {
        #[arg(long, default_value_t = 4)]
        bpe: u64,
        /// Hidden sizes (comma list); defaults to 16..2048 in powers of two.
        #[arg(long)]
        n: Option<String>,
        /// Adaptation steps timed per method at `--timing-n`; 0 skips timing.
        #[arg(long, default_value_t = 0)]
        timing_steps: usize,
        #[arg(long, default_value_t = 256)]
        timing_n: usize,
        /// Steps for the full-RTRL timing run (it is orders of magnitude slower).
        #[arg(long, default_value_t = 20)]
        rtrl_timing_steps: usize,
    },
    /// Gradient-norm, self-propagation, radius and trace-staleness diagnostics.
    Diagnose,
    /// Writes a task stream as CSV.
    ExportTask {
        #[arg(long, default_value = "sine_shift")]
        task: TaskKind,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 500)]
        shift: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Run => {
            let path = c.config.as_ref().context("run needs --config <path>")?;
            let base = ExperimentConfig::from_path(path)?;
            grid(c, base, Axes::default())
        }
        Command::Grid => {
            let path = c.config.as_ref().context("grid needs --config <path>")?;
            let g = GridFile::from_path(path)?;
            grid(c, g.base, g.axes)
        }
        Command::SweepDecay => preset(c, "sweep-decay"),
        Command::Grid2x2 => preset(c, "grid-2x2"),
        Command::IsolateOptim => preset(c, "isolate-optim"),
        Command::CrossArch => preset(c, "cross-arch"),
        Command::SwitchControl => preset(c, "switch-control"),
        Command::Diagnose => preset(c, "diagnose"),
        Command::Memscale {
            bpe,
            n,
            timing_steps,
            timing_n,
            rtrl_timing_steps,
        } => memscale(c, *bpe, n.as_deref(), *timing_steps, *timing_n, *rtrl_timing_steps),
        Command::ExportTask {
            task,
            steps,
            shift,
            seed,
        } => export_task(c, *task, *steps, *shift, *seed),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        bail!("--seeds selects no seeds");
    }
    Ok(seeds)
}

fn preset(c: &Common, name: &str) -> Result<()> {
    let Preset {
        mut base,
        axes,
        companions,
        ..
    } = experiments::by_name(name).expect("known preset");
    if let Some(path) = &c.config {
        base = ExperimentConfig::from_path(path)?;
    }
    grid_with(c, base, axes, companions)
}

fn grid(c: &Common, base: ExperimentConfig, axes: Axes) -> Result<()> {
    grid_with(c, base, axes, true)
}

fn grid_with(c: &Common, mut base: ExperimentConfig, axes: Axes, companions: bool) -> Result<()> {
    if let Some(s) = &c.seeds {
        base.seeds = parse_seeds(s)?;
    }
    let base = base.normalized()?;
    let threads = c
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let options = GridOptions {
        threads,
        progress: !c.quiet,
        companions,
    };
    let report = run_grid(&base, &axes, &options)?;
    report.write_all(&c.out, c.format)?;
    print_summary(&report);
    println!("wrote {} ({:.1}s)", c.out.display(), report.wall_time);
    Ok(())
}

fn fmt_ms(m: Option<olrn_core::harness::MeanStd>, pct: bool) -> String {
    match m {
        Some(m) if pct => format!("{:.1} ± {:.1}%", m.mean, m.std),
        Some(m) => format!("{:.3e} ± {:.1e}", m.mean, m.std),
        None => "-".into(),
    }
}

fn print_summary(report: &GridReport) {
    for s in &report.summaries {
        let coords: Vec<String> = s.coords.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let b = &s.best;
        println!(
            "{:<40} lr={:<6} recovery {:<18} post {:<20} frozen {:<20} ref {:<20} diverged {}",
            if coords.is_empty() { "(base)".to_string() } else { coords.join(" ") },
            s.best_lr,
            fmt_ms(b.recovery, true),
            fmt_ms(b.post_mse, false),
            fmt_ms(b.frozen_mse, false),
            fmt_ms(b.reference_mse, false),
            b.diverged,
        );
    }
}

fn memscale(
    c: &Common,
    bpe: u64,
    n: Option<&str>,
    timing_steps: usize,
    timing_n: usize,
    rtrl_timing_steps: usize,
) -> Result<()> {
    let ns: Vec<usize> = match n {
        Some(text) => text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?,
        None => experiments::MEMSCALE_N.to_vec(),
    };
    let rows = experiments::memscale(&ns, bpe)?;
    std::fs::create_dir_all(&c.out)?;
    match c.format {
        OutputFormat::Csv => write_memory_csv(&c.out.join("memory.csv"), &rows)?,
        OutputFormat::Json => write_json(&c.out.join("memory.json"), &rows)?,
    }
    for r in &rows {
        println!(
            "n={:<5} {:<10} sensitivity {:>14} B  total {:>14} B",
            r.n_hidden, r.method, r.bytes_sensitivity, r.bytes_total
        );
    }
    if timing_steps > 0 {
        let mut w = BufWriter::new(File::create(c.out.join("timing.csv"))?);
        writeln!(w, "method,n_hidden,steps,wall_time,step_time")?;
        let methods = [
            (CreditSpec::trace(0.0), timing_steps),
            (CreditSpec::trace(0.95), timing_steps),
            (CreditSpec::full_rtrl(), rtrl_timing_steps.max(1)),
        ];
        for (credit, steps) in methods {
            let cfg = experiments::timing_config(credit, timing_n, steps).normalized()?;
            let r = run_stream(&cfg, 0)?;
            writeln!(
                w,
                "{},{timing_n},{},{:.6},{:e}",
                credit.label(),
                r.adapt_steps_run,
                r.adapt_wall_time,
                r.step_time()
            )?;
            println!("timing n={timing_n} {:<10} {:.3} ms/step", credit.label(), r.step_time() * 1e3);
        }
        w.flush()?;
    }
    Ok(())
}

fn write_memory_csv(path: &Path, rows: &[MemoryEstimate]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "method,n_hidden,n_in,n_out,bytes_sensitivity,bytes_workspace,bytes_params,bytes_optstate,bytes_total"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n_hidden,
            r.n_in,
            r.n_out,
            r.bytes_sensitivity,
            r.bytes_workspace,
            r.bytes_params,
            r.bytes_optstate,
            r.bytes_total
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn export_task(c: &Common, kind: TaskKind, steps: usize, shift: usize, seed: u64) -> Result<()> {
    let spec = TaskSpec::new(kind, shift).with_seed(seed);
    let samples = tasks::reference_trajectory(&spec, steps)?;
    std::fs::create_dir_all(&c.out)?;
    let path = c.out.join(format!("{}.csv", kind.name()));
    let mut w = BufWriter::new(File::create(&path)?);
    tasks::write_stream_csv(&mut w, &samples)?;
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}
