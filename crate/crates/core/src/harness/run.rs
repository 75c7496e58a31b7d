use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, Recipe};
use crate::cells::{self, Architecture, CellSpec, CellState, ParamSet, StepCache};
use crate::credit::CreditState;
use crate::diagnostics::{self, DiagSnapshot, GradNormReport, GradNormWindow};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::optim::{self, OptimSpec, OptimState};
use crate::tasks::{StreamSample, TaskStream};

/// Stream id of the parameter-initialization generator for a seed.
const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    /// Grid coordinates of the cell this run belongs to (empty for single runs).
    pub coords: BTreeMap<String, String>,
    /// Mean MSE over the `eval_window` steps before the shift.
    pub pre_shift_mse: f64,
    /// Mean MSE over the final `eval_window` adaptation steps (over the steps
    /// that ran, for a diverged run).
    pub post_shift_mse: f64,
    pub frozen_mse: Option<f64>,
    pub reference_mse: Option<f64>,
    pub recovery_pct: Option<f64>,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
    /// Per-step MSE; `NaN` for warmup steps without a defined target.
    #[serde(skip)]
    pub mse_series: Vec<f64>,
    #[serde(skip)]
    pub diag_series: Vec<DiagSnapshot>,
    /// Mean gradient norms over the adaptation phase.
    pub adapt_grad_norms: Option<GradNormReport>,
    /// Seconds for the whole run, including the shared pre-shift phase when
    /// it was computed for this run.
    pub wall_time: f64,
    /// Seconds spent in the adaptation phase alone.
    pub adapt_wall_time: f64,
    pub adapt_steps_run: usize,
    pub config_hash: String,
}

impl RunResult {
    /// Seconds per adaptation step.
    pub fn step_time(&self) -> f64 {
        self.adapt_wall_time / self.adapt_steps_run.max(1) as f64
    }
}

/// Credit assignment and optimizer state of a learning stream.
#[derive(Debug, Clone)]
struct Learner {
    credit: CreditState,
    optim_spec: OptimSpec,
    optim: OptimState,
}

impl Learner {
    fn new(recipe: &Recipe, cell: &CellSpec, params: &ParamSet) -> Result<Self> {
        Ok(Learner {
            credit: CreditState::new(recipe.credit, cell)?,
            optim_spec: recipe.optim,
            optim: OptimState::new(&recipe.optim, params),
        })
    }
}

/// Everything the post-shift phase resumes from.
#[derive(Debug, Clone)]
pub struct PreShift {
    pub params: ParamSet,
    pub state: CellState,
    stream: TaskStream,
    learner: Option<Learner>,
    pub mse: Vec<f64>,
    pub diag: Vec<DiagSnapshot>,
    pub diverged_at: Option<usize>,
    pub wall_time: f64,
}

/// Pre-shift phases keyed by everything they depend on, computed at most once.
#[derive(Default)]
pub struct PretrainCache {
    map: Mutex<HashMap<String, Arc<OnceLock<Arc<PreShift>>>>>,
}

impl PretrainCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached phase and whether this call computed it.
    fn get_or_run(&self, config: &ExperimentConfig, seed: u64) -> Result<(Arc<PreShift>, bool)> {
        let key = pretrain_key(config, seed);
        let slot = self.map.lock().unwrap().entry(key).or_default().clone();
        if let Some(p) = slot.get() {
            return Ok((p.clone(), false));
        }
        // Errors here are config/IO errors and are reported, not cached.
        let computed = Arc::new(run_pre_shift(config, seed)?);
        let mut fresh = false;
        let stored = slot.get_or_init(|| {
            fresh = true;
            computed
        });
        Ok((stored.clone(), fresh))
    }
}

fn pretrain_key(config: &ExperimentConfig, seed: u64) -> String {
    serde_json::to_string(&(
        &config.cell,
        &config.task,
        config.pre_recipe(),
        config.train_steps,
        seed,
        &config.checkpoint.load,
        config.diag_every,
    ))
    .expect("key serializes")
}

fn initial_params(config: &ExperimentConfig, seed: u64) -> Result<ParamSet> {
    match &config.checkpoint.load {
        Some(path) => {
            let params = super::checkpoint_load(path)?;
            config.cell.check_params(&params).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(params)
        }
        None => config.cell.init_params(&mut Rng::stream(seed, INIT_STREAM)),
    }
}

fn task_stream(config: &ExperimentConfig, seed: u64) -> Result<TaskStream> {
    let mut task = config.task;
    task.shift_step = config.train_steps;
    task.seed = seed;
    TaskStream::new(task).map_err(|e| Error::Config(e.to_string()))
}

struct StepOutcome {
    state: CellState,
    mse: f64,
    grads: Option<ParamSet>,
    diag: Option<DiagSnapshot>,
}

fn sample_mse(y: &crate::linalg::Tensor, sample: &StreamSample) -> f64 {
    if sample.warmup {
        return f64::NAN;
    }
    let n = y.len() as f64;
    y.data()
        .iter()
        .zip(sample.y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

fn numeric(step: usize, what: &str) -> Error {
    Error::Numeric {
        step,
        what: what.into(),
    }
}

/// Forward, loss, credit step, gradient and update for one sample. The
/// snapshot, when requested, is taken before the update.
fn online_step(
    cell: &CellSpec,
    params: &mut ParamSet,
    state: &CellState,
    sample: &StreamSample,
    mut learner: Option<&mut Learner>,
    want_diag: bool,
) -> Result<StepOutcome> {
    let (new, y) = cells::forward(cell, params, state, &sample.x)?;
    let mse = sample_mse(&y, sample);
    let mut grads = None;
    if let Some(l) = learner.as_deref_mut() {
        l.credit.step(cell, params, state, &new, &sample.x)?;
        if !sample.warmup {
            let (delta, out) = cells::output_gradient(cell, params, &new, &y, &sample.y)?;
            let g = l.credit.gradient(&delta, &out)?;
            if !g.is_finite() {
                return Err(numeric(new.t, "gradient"));
            }
            grads = Some(g);
        }
    }
    let diag = if want_diag {
        let credit = learner.as_deref().map(|l| &l.credit);
        Some(snapshot(cell, params, state, &new, sample, grads.as_ref(), credit)?)
    } else {
        None
    };
    if let (Some(l), Some(g)) = (learner, grads.as_ref()) {
        optim::step(&l.optim_spec, &mut l.optim, params, g)?;
        if !params.is_finite() {
            return Err(numeric(new.t, "parameters"));
        }
    }
    Ok(StepOutcome {
        state: new,
        mse,
        grads,
        diag,
    })
}

fn snapshot(
    cell: &CellSpec,
    params: &ParamSet,
    prev: &CellState,
    new: &CellState,
    sample: &StreamSample,
    grads: Option<&ParamSet>,
    credit: Option<&CreditState>,
) -> Result<DiagSnapshot> {
    let act: Option<Vec<f64>> = match (&new.cache, cell.arch) {
        (_, Architecture::Vanilla) => Some(new.h.data().to_vec()),
        (Some(StepCache::Ctrnn { u }), Architecture::Ctrnn) => Some(u.clone()),
        _ => None,
    };
    let self_prop = match act {
        Some(a) => diagnostics::cell_self_propagation(cell, params, &a)?,
        None => None,
    };
    let jac = cells::state_jacobian(cell, params, prev, new, &sample.x)?;
    let spec_radius = diagnostics::spectral_radius_of_state_jacobian(&jac)?;
    let (grad_norms, grad_ratio) = match grads {
        Some(g) => {
            let r = diagnostics::grad_norm_report(g, cell.arch)?;
            (r.norms, r.ratio_out_over_hh)
        }
        None => (BTreeMap::new(), f64::NAN),
    };
    let (trace_mag_ratio, trace_cosine) = match credit {
        Some(c) => match diagnostics::trace_staleness(c.sensitivity(), c.direct()) {
            Ok((m, cos)) => (Some(m), Some(cos)),
            Err(Error::UndefinedCosine) => (None, None),
            Err(e) => return Err(e),
        },
        None => (None, None),
    };
    Ok(DiagSnapshot {
        t: sample.t,
        self_prop,
        spec_radius,
        grad_norms,
        grad_ratio,
        trace_mag_ratio,
        trace_cosine,
    })
}

/// Mutable state of one phase loop.
struct Phase<'a> {
    cell: &'a CellSpec,
    params: ParamSet,
    state: CellState,
    stream: TaskStream,
    learner: Option<Learner>,
    mse: Vec<f64>,
    diag: Vec<DiagSnapshot>,
    diag_every: usize,
    grad_window: Option<GradNormWindow>,
    /// Learning-rate schedule applied to the learner, if any.
    schedule: Option<Recipe>,
}

impl Phase<'_> {
    /// Runs `steps` samples; returns the step index of a divergence.
    fn run(&mut self, steps: usize) -> Result<Option<usize>> {
        for i in 0..steps {
            if let (Some(r), Some(l)) = (&self.schedule, self.learner.as_mut()) {
                l.optim_spec.lr = r.lr_at(i, steps);
            }
            let sample = self.stream.next_sample();
            let t = sample.t;
            let want_diag = self.diag_every > 0 && (t + 1) % self.diag_every == 0;
            let out = match online_step(
                self.cell,
                &mut self.params,
                &self.state,
                &sample,
                self.learner.as_mut(),
                want_diag,
            ) {
                Ok(o) => o,
                Err(e) if e.is_divergence() => return Ok(Some(t)),
                Err(e) => return Err(e),
            };
            self.mse.push(out.mse);
            if let (Some(w), Some(g)) = (self.grad_window.as_mut(), out.grads.as_ref()) {
                w.add(g, self.cell.arch)?;
            }
            self.diag.extend(out.diag);
            self.state = out.state;
        }
        Ok(None)
    }
}

fn run_pre_shift(config: &ExperimentConfig, seed: u64) -> Result<PreShift> {
    let start = Instant::now();
    let params = initial_params(config, seed)?;
    let recipe = config.pre_recipe();
    let learner = Learner::new(&recipe, &config.cell, &params)?;
    let mut phase = Phase {
        cell: &config.cell,
        params,
        state: config.cell.initial_state(),
        stream: task_stream(config, seed)?,
        learner: Some(learner),
        mse: Vec::with_capacity(config.total_steps()),
        diag: Vec::new(),
        diag_every: config.diag_every,
        grad_window: None,
        schedule: recipe.lr_end.map(|_| recipe),
    };
    let diverged_at = phase.run(config.train_steps)?;
    if let (Some(dir), None) = (&config.checkpoint.save_dir, diverged_at) {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}-seed{seed}.ckpt", config.name));
        super::checkpoint_save(&config.cell, &phase.params, &path)?;
    }
    Ok(PreShift {
        params: phase.params,
        state: phase.state,
        stream: phase.stream,
        learner: phase.learner,
        mse: phase.mse,
        diag: phase.diag,
        diverged_at,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn window_mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// One seeded run with a private pre-shift cache.
pub fn run_stream(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    run_stream_cached(config, seed, &PretrainCache::new())
}

/// One seeded run, reusing (or filling) `cache` for the pre-shift phase.
pub fn run_stream_cached(config: &ExperimentConfig, seed: u64, cache: &PretrainCache) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let (pre, _) = cache.get_or_run(config, seed)?;
    let run_id = format!("{}-{}-s{seed}", config.name, &config.hash()[..12]);
    let pre_shift_mse = window_mean(&pre.mse[pre.mse.len().saturating_sub(config.eval_window)..]);

    if let Some(t) = pre.diverged_at {
        return Ok(RunResult {
            run_id,
            seed,
            coords: BTreeMap::new(),
            pre_shift_mse,
            post_shift_mse: f64::NAN,
            frozen_mse: None,
            reference_mse: None,
            recovery_pct: None,
            diverged: true,
            diverged_at: Some(t),
            mse_series: pre.mse.clone(),
            diag_series: pre.diag.clone(),
            adapt_grad_norms: None,
            wall_time: start.elapsed().as_secs_f64(),
            adapt_wall_time: 0.0,
            adapt_steps_run: 0,
            config_hash: config.hash(),
        });
    }

    let learner = match (config.post_recipe(), config.pretrain.is_some()) {
        (None, _) => None,
        (Some(recipe), true) => Some(Learner::new(&recipe, &config.cell, &pre.params)?),
        (Some(recipe), false) => {
            let mut l = pre.learner.clone().expect("pre-shift learner");
            if let Mode::OptimizerSwitch { to } = config.mode {
                l.optim = optim::switch_optimizer(&l.optim, &to);
                l.optim_spec = to;
            }
            debug_assert_eq!(l.optim_spec, recipe.optim);
            Some(l)
        }
    };
    let mut phase = Phase {
        cell: &config.cell,
        params: pre.params.clone(),
        state: pre.state.clone(),
        stream: pre.stream.clone(),
        learner,
        mse: pre.mse.clone(),
        diag: pre.diag.clone(),
        diag_every: config.diag_every,
        grad_window: Some(GradNormWindow::default()),
        schedule: None,
    };
    let adapt_start = Instant::now();
    let diverged_at = phase.run(config.adapt_steps)?;
    let adapt_wall_time = adapt_start.elapsed().as_secs_f64();
    let adapt_steps_run = phase.mse.len() - config.train_steps;
    let post = &phase.mse[config.train_steps..];
    let post_shift_mse = window_mean(&post[post.len().saturating_sub(config.eval_window)..]);
    Ok(RunResult {
        run_id,
        seed,
        coords: BTreeMap::new(),
        pre_shift_mse,
        post_shift_mse,
        frozen_mse: None,
        reference_mse: None,
        recovery_pct: None,
        diverged: diverged_at.is_some(),
        diverged_at,
        adapt_grad_norms: phase.grad_window.as_ref().and_then(|w| w.report()),
        mse_series: phase.mse,
        diag_series: phase.diag,
        wall_time: start.elapsed().as_secs_f64(),
        adapt_wall_time,
        adapt_steps_run,
        config_hash: config.hash(),
    })
}

/// Writes `diag.csv` rows for a set of runs sharing one cell layout.
pub fn write_diag_csv(path: &std::path::Path, cell: &CellSpec, runs: &[RunResult]) -> Result<()> {
    use std::io::Write;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", diagnostics::diag_csv_header(cell).join(","))?;
    for r in runs {
        for s in &r.diag_series {
            diagnostics::write_diag_row(&mut w, &r.run_id, cell, s)?;
        }
    }
    w.flush()?;
    Ok(())
}
