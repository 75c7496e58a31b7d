use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::recovery;
use super::run::{run_stream_cached, PretrainCache, RunResult};
use crate::cells::Architecture;
use crate::credit::{CreditMethod, CreditSpec};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::optim::{OptimMethod, OptimSpec};
use crate::tasks::TaskKind;

/// Values swept by a grid. An empty axis keeps the base config's value.
///
/// `lr` is special: cells differing only in learning rate are summarized
/// together and the best one is reported.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default)]
    pub task: Vec<TaskKind>,
    #[serde(default)]
    pub arch: Vec<Architecture>,
    #[serde(default)]
    pub n_hidden: Vec<usize>,
    #[serde(default)]
    pub credit: Vec<CreditSpec>,
    /// Trace decays; each value replaces the credit method with a trace.
    #[serde(default)]
    pub decay: Vec<f64>,
    #[serde(default)]
    pub optim: Vec<OptimMethod>,
    /// Optimizers switched to at the shift.
    #[serde(default)]
    pub switch_to: Vec<OptimMethod>,
    /// Learning rates of the post-shift optimizer.
    #[serde(default)]
    pub lr: Vec<f64>,
}

/// Coordinate names in column order. `lr` always comes last.
const AXIS_ORDER: [&str; 7] = ["task", "arch", "n_hidden", "credit", "decay", "optim", "switch_to"];

impl Axes {
    /// Names of the non-empty axes plus `lr`, in column order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = AXIS_ORDER
            .iter()
            .filter(|n| self.len_of(n) > 0)
            .map(|n| n.to_string())
            .collect();
        names.push("lr".into());
        names
    }

    fn len_of(&self, name: &str) -> usize {
        match name {
            "task" => self.task.len(),
            "arch" => self.arch.len(),
            "n_hidden" => self.n_hidden.len(),
            "credit" => self.credit.len(),
            "decay" => self.decay.len(),
            "optim" => self.optim.len(),
            "switch_to" => self.switch_to.len(),
            "lr" => self.lr.len(),
            _ => 0,
        }
    }

    /// The Cartesian product of the axes applied to `base`.
    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<GridCell>> {
        let mut cells = vec![GridCell {
            coords: BTreeMap::new(),
            config: base.clone(),
        }];
        for name in AXIS_ORDER.iter().chain(std::iter::once(&"lr")) {
            let n = self.len_of(name);
            if n == 0 {
                continue;
            }
            let mut next = Vec::with_capacity(cells.len() * n);
            for cell in &cells {
                for i in 0..n {
                    let mut c = cell.clone();
                    let value = self.apply(name, i, &mut c.config);
                    c.coords.insert(name.to_string(), value);
                    next.push(c);
                }
            }
            cells = next;
        }
        for c in &mut cells {
            c.coords.entry("lr".into()).or_insert_with(|| post_lr(&c.config).to_string());
            c.config = c.config.clone().normalized()?;
        }
        Ok(cells)
    }

    fn apply(&self, name: &str, i: usize, cfg: &mut ExperimentConfig) -> String {
        match name {
            "task" => {
                let kind = self.task[i];
                cfg.task.kind = kind;
                cfg.cell.n_in = kind.io_dim();
                cfg.cell.n_out = kind.io_dim();
                kind.name().to_string()
            }
            "arch" => {
                cfg.cell.arch = self.arch[i];
                self.arch[i].name().to_string()
            }
            "n_hidden" => {
                cfg.cell.n_hidden = self.n_hidden[i];
                self.n_hidden[i].to_string()
            }
            "credit" => {
                cfg.credit = self.credit[i];
                self.credit[i].label()
            }
            "decay" => {
                cfg.credit.method = CreditMethod::Trace { decay: self.decay[i] };
                self.decay[i].to_string()
            }
            "optim" => {
                cfg.optim.method = self.optim[i];
                self.optim[i].name().to_string()
            }
            "switch_to" => {
                let lr = post_lr(cfg);
                cfg.mode = Mode::OptimizerSwitch {
                    to: OptimSpec::new(self.switch_to[i], lr),
                };
                self.switch_to[i].name().to_string()
            }
            "lr" => {
                let lr = self.lr[i];
                match &mut cfg.mode {
                    Mode::OptimizerSwitch { to } => to.lr = lr,
                    _ => cfg.optim.lr = lr,
                }
                lr.to_string()
            }
            _ => unreachable!("unknown axis {name}"),
        }
    }
}

/// Learning rate of the optimizer in force after the shift.
fn post_lr(cfg: &ExperimentConfig) -> f64 {
    match cfg.mode {
        Mode::OptimizerSwitch { to } => to.lr,
        _ => cfg.optim.lr,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    /// Axis name to value, `lr` included.
    pub coords: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub threads: usize,
    /// Print one line per finished run to stderr.
    pub progress: bool,
    /// Run the frozen and reference companions and score recovery.
    pub companions: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            threads: 1,
            progress: false,
            companions: true,
        }
    }
}

/// Finished runs and pre-shift phases shared between grids, so that presets
/// run back to back reuse each other's companions.
#[derive(Default)]
pub struct RunCache {
    pretrain: PretrainCache,
    runs: Mutex<HashMap<(String, u64), RunResult>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(config: &ExperimentConfig, seed: u64) -> (String, u64) {
        let mut c = config.clone();
        c.name.clear();
        (c.hash(), seed)
    }

    fn run(&self, config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
        let key = Self::key(config, seed);
        if let Some(hit) = self.runs.lock().unwrap().get(&key) {
            let mut r = hit.clone();
            r.config_hash = config.hash();
            r.run_id = format!("{}-{}-s{seed}", config.name, &r.config_hash[..12]);
            return Ok(r);
        }
        let r = run_stream_cached(config, seed, &self.pretrain)?;
        self.runs.lock().unwrap().insert(key, r.clone());
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Cell,
    Frozen,
    Reference,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Cell => "cell",
            RunKind::Frozen => "frozen",
            RunKind::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub kind: RunKind,
    #[serde(flatten)]
    pub result: RunResult,
    /// Post-shift MSE used for aggregation: the frozen MSE for diverged runs.
    pub effective_post_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, n })
    }
}

/// Aggregate over seeds of one learning rate of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSummary {
    pub lr: f64,
    pub recovery: Option<MeanStd>,
    /// Per-seed recovery in seed order; `None` where the reference was unusable.
    pub recoveries: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
    pub pre_mse: Option<MeanStd>,
    pub post_mse: Option<MeanStd>,
    pub frozen_mse: Option<MeanStd>,
    pub reference_mse: Option<MeanStd>,
    pub grad_ratio: Option<MeanStd>,
    pub step_time: Option<MeanStd>,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    /// Coordinates without `lr`.
    pub coords: BTreeMap<String, String>,
    pub best_lr: f64,
    pub best: LrSummary,
    pub per_lr: Vec<LrSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub name: String,
    /// Coordinate columns, `lr` last.
    pub axes: Vec<String>,
    pub runs: Vec<ScoredRun>,
    pub summaries: Vec<CellSummary>,
    /// Union of parameter-group names over the grid, for `diag.csv`.
    pub groups: Vec<String>,
    pub wall_time: f64,
}

struct Job {
    kind: RunKind,
    config: ExperimentConfig,
    seed: u64,
    coords: BTreeMap<String, String>,
}

/// Frozen companion of a cell: same pre-shift phase, no updates afterwards.
fn frozen_companion(cfg: &ExperimentConfig) -> ExperimentConfig {
    let pre = cfg.pre_recipe();
    let mut c = cfg.clone();
    c.name = "frozen".into();
    c.pretrain = Some(pre);
    c.credit = pre.credit;
    c.optim = pre.optim;
    c.mode = Mode::FrozenBaseline;
    c.reference_lr = None;
    c
}

/// Reference companion: same pre-shift phase, then unclipped full RTRL with Adam.
fn reference_companion(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.name = "reference".into();
    c.pretrain = Some(cfg.pre_recipe());
    c.credit = CreditSpec::full_rtrl();
    c.optim = OptimSpec::new(OptimMethod::Adam, cfg.reference_lr.unwrap_or_else(|| post_lr(cfg)));
    c.mode = Mode::RtrlReference;
    c.reference_lr = None;
    c
}

/// Runs every cell of `axes` over `base` for each seed, plus the frozen and
/// reference companions each cell needs (each computed once), and scores
/// recovery. Diverged runs do not stop the grid.
pub fn run_grid(base: &ExperimentConfig, axes: &Axes, options: &GridOptions) -> Result<GridReport> {
    run_grid_cached(base, axes, options, &RunCache::new())
}

/// [`run_grid`] reusing (and filling) `cache`.
pub fn run_grid_cached(
    base: &ExperimentConfig,
    axes: &Axes,
    options: &GridOptions,
    cache: &RunCache,
) -> Result<GridReport> {
    let start = Instant::now();
    let cells = axes.cells(base)?;
    let mut jobs: Vec<Job> = Vec::new();
    let mut companion_index: HashMap<(String, u64), usize> = HashMap::new();
    // Per cell and seed: (cell job, frozen job, reference job).
    let mut links: Vec<(usize, Option<(usize, usize)>)> = Vec::new();
    for cell in &cells {
        for &seed in &cell.config.seeds {
            let mut add_companion = |kind: RunKind, config: ExperimentConfig| {
                let key = (config.hash(), seed);
                *companion_index.entry(key).or_insert_with(|| {
                    jobs.push(Job {
                        kind,
                        config,
                        seed,
                        coords: BTreeMap::new(),
                    });
                    jobs.len() - 1
                })
            };
            let companions = options.companions.then(|| {
                let f = add_companion(RunKind::Frozen, frozen_companion(&cell.config));
                let r = add_companion(RunKind::Reference, reference_companion(&cell.config));
                (f, r)
            });
            jobs.push(Job {
                kind: RunKind::Cell,
                config: cell.config.clone(),
                seed,
                coords: cell.coords.clone(),
            });
            links.push((jobs.len() - 1, companions));
        }
    }

    let results = execute(&jobs, options, cache)?;

    let mut runs: Vec<ScoredRun> = results
        .into_iter()
        .zip(&jobs)
        .map(|(mut result, job)| {
            result.coords = job.coords.clone();
            let effective_post_mse = result.post_shift_mse;
            ScoredRun {
                kind: job.kind,
                result,
                effective_post_mse,
            }
        })
        .collect();
    for &(c, companions) in &links {
        let Some((f, r)) = companions else { continue };
        let frozen = &runs[f].result;
        let reference = &runs[r].result;
        let m_frozen = (!frozen.diverged).then_some(frozen.post_shift_mse);
        let m_ref = (!reference.diverged).then_some(reference.post_shift_mse);
        let margin = jobs[c].config.recovery_margin;
        let cell = &mut runs[c];
        cell.result.frozen_mse = m_frozen;
        cell.result.reference_mse = m_ref;
        if cell.result.diverged {
            cell.effective_post_mse = m_frozen.unwrap_or(f64::NAN);
        }
        cell.result.recovery_pct = match (m_frozen, m_ref) {
            (Some(mf), Some(mr)) => recovery(mf, cell.effective_post_mse, mr, margin).ok(),
            _ => None,
        };
    }

    let summaries = summarize(&runs);
    let mut groups = BTreeSet::new();
    let mut ordered = Vec::new();
    for job in &jobs {
        for g in diagnostics::group_names(&job.config.cell) {
            if groups.insert(g.clone()) {
                ordered.push(g);
            }
        }
    }
    Ok(GridReport {
        name: base.name.clone(),
        axes: axes.names(),
        runs,
        summaries,
        groups: ordered,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn execute(jobs: &[Job], options: &GridOptions, cache: &RunCache) -> Result<Vec<RunResult>> {
    for job in jobs {
        job.config.validate()?;
    }
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let threads = options.threads.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let out = cache.run(&job.config, job.seed);
                if options.progress {
                    let k = done.fetch_add(1, Ordering::SeqCst) + 1;
                    eprintln!("{}", progress_line(k, jobs.len(), job, &out));
                }
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn progress_line(k: usize, total: usize, job: &Job, out: &Result<RunResult>) -> String {
    let coords: Vec<String> = job.coords.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let status = match out {
        Ok(r) if r.diverged => format!("diverged at {}", r.diverged_at.unwrap_or(0)),
        Ok(r) => format!("post={:.4e} {:.1}s", r.post_shift_mse, r.wall_time),
        Err(e) => format!("error: {e}"),
    };
    format!("[{k}/{total}] {} seed={} {} {status}", job.kind.name(), job.seed, coords.join(" "))
}

fn summarize(runs: &[ScoredRun]) -> Vec<CellSummary> {
    // Cell key (coords without lr) -> lr -> runs, in first-seen order.
    let mut order: Vec<BTreeMap<String, String>> = Vec::new();
    let mut by_cell: HashMap<BTreeMap<String, String>, Vec<(f64, Vec<&ScoredRun>)>> = HashMap::new();
    for run in runs.iter().filter(|r| r.kind == RunKind::Cell) {
        let mut key = run.result.coords.clone();
        let lr: f64 = key.remove("lr").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        let entry = by_cell.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        match entry.iter_mut().find(|(l, _)| l.to_bits() == lr.to_bits()) {
            Some((_, v)) => v.push(run),
            None => entry.push((lr, vec![run])),
        }
    }
    order
        .into_iter()
        .map(|coords| {
            let per_lr: Vec<LrSummary> = by_cell[&coords].iter().map(|(lr, rs)| lr_summary(*lr, rs)).collect();
            let best = best_of(&per_lr).clone();
            CellSummary {
                coords,
                best_lr: best.lr,
                best,
                per_lr,
            }
        })
        .collect()
}

fn lr_summary(lr: f64, runs: &[&ScoredRun]) -> LrSummary {
    let mut runs = runs.to_vec();
    runs.sort_by_key(|r| r.result.seed);
    let finite = |f: &dyn Fn(&ScoredRun) -> Option<f64>| -> Option<MeanStd> {
        let v: Vec<f64> = runs.iter().filter_map(|r| f(r)).filter(|x| x.is_finite()).collect();
        MeanStd::of(&v)
    };
    let recoveries: Vec<Option<f64>> = runs.iter().map(|r| r.result.recovery_pct).collect();
    let rec: Vec<f64> = recoveries.iter().flatten().copied().collect();
    LrSummary {
        lr,
        recovery: MeanStd::of(&rec),
        recoveries,
        seeds: runs.iter().map(|r| r.result.seed).collect(),
        pre_mse: finite(&|r| Some(r.result.pre_shift_mse)),
        post_mse: finite(&|r| Some(r.effective_post_mse)),
        frozen_mse: finite(&|r| r.result.frozen_mse),
        reference_mse: finite(&|r| r.result.reference_mse),
        grad_ratio: finite(&|r| r.result.adapt_grad_norms.as_ref().map(|g| g.ratio_out_over_hh)),
        step_time: finite(&|r| Some(r.result.step_time())),
        diverged: runs.iter().filter(|r| r.result.diverged).count(),
    }
}

/// Highest mean recovery; lowest mean post-shift MSE when no recovery is defined.
fn best_of(per_lr: &[LrSummary]) -> &LrSummary {
    let by_recovery = per_lr
        .iter()
        .filter_map(|s| s.recovery.map(|r| (r.mean, s)))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((_, s)) = by_recovery {
        return s;
    }
    per_lr
        .iter()
        .min_by(|a, b| {
            let ma = a.post_mse.map_or(f64::INFINITY, |m| m.mean);
            let mb = b.post_mse.map_or(f64::INFINITY, |m| m.mean);
            ma.total_cmp(&mb)
        })
        .expect("a cell has at least one lr")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl GridReport {
    /// Summary of the cell whose coordinates include every pair in `coords`.
    pub fn summary(&self, coords: &[(&str, &str)]) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| coords.iter().all(|(k, v)| s.coords.get(*k).map(String::as_str) == Some(*v)))
    }

    pub fn cell_runs(&self) -> impl Iterator<Item = &ScoredRun> {
        self.runs.iter().filter(|r| r.kind == RunKind::Cell)
    }

    pub fn results_csv_header(&self) -> Vec<String> {
        let mut cols = vec!["run_id".to_string(), "kind".into(), "seed".into()];
        cols.extend(self.axes.iter().cloned());
        cols.extend(
            [
                "pre_mse",
                "post_mse",
                "effective_post_mse",
                "frozen_mse",
                "reference_mse",
                "recovery",
                "diverged",
                "diverged_at",
                "grad_ratio",
                "wall_time",
                "adapt_wall_time",
                "step_time",
                "config_hash",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    pub fn write_results_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.results_csv_header().join(","))?;
        for run in &self.runs {
            let r = &run.result;
            let mut row = vec![r.run_id.clone(), run.kind.name().into(), r.seed.to_string()];
            for axis in &self.axes {
                row.push(r.coords.get(axis).cloned().unwrap_or_default());
            }
            row.extend([
                format!("{:e}", r.pre_shift_mse),
                format!("{:e}", r.post_shift_mse),
                format!("{:e}", run.effective_post_mse),
                opt(r.frozen_mse),
                opt(r.reference_mse),
                opt(r.recovery_pct),
                r.diverged.to_string(),
                r.diverged_at.map(|t| t.to_string()).unwrap_or_default(),
                opt(r.adapt_grad_norms.as_ref().map(|g| g.ratio_out_over_hh)),
                format!("{:.6}", r.wall_time),
                format!("{:.6}", r.adapt_wall_time),
                format!("{:e}", r.step_time()),
                r.config_hash.clone(),
            ]);
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_results_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.runs)
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            name: &'a str,
            axes: &'a [String],
            wall_time: f64,
            cells: &'a [CellSummary],
        }
        write_json(
            path,
            &Summary {
                name: &self.name,
                axes: &self.axes,
                wall_time: self.wall_time,
                cells: &self.summaries,
            },
        )
    }

    pub fn write_diag_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", diagnostics::diag_csv_header_for(&self.groups).join(","))?;
        for run in &self.runs {
            for s in &run.result.diag_series {
                diagnostics::write_diag_row_for(&mut w, &run.result.run_id, &self.groups, s)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the results table in `format`, plus `summary.json` and `diag.csv`.
    pub fn write_all(&self, dir: &Path, format: OutputFormat) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        match format {
            OutputFormat::Csv => self.write_results_csv(&dir.join("results.csv"))?,
            OutputFormat::Json => self.write_results_json(&dir.join("results.json"))?,
        }
        self.write_summary_json(&dir.join("summary.json"))?;
        self.write_diag_csv(&dir.join("diag.csv"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format {other:?} (expected csv or json)"))),
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Config(e.to_string()))?;
    w.flush()?;
    Ok(())
}
