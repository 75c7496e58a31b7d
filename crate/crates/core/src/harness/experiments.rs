//! Preset protocols. Each preset is a base config plus the axes swept over it.

use super::config::{CheckpointPaths, ExperimentConfig, Mode, Recipe, DEFAULT_RECOVERY_MARGIN};
use super::grid::Axes;
use crate::cells::{Architecture, CellSpec};
use crate::credit::CreditSpec;
use crate::diagnostics::{memory_model, MemoryEstimate};
use crate::error::Result;
use crate::optim::{OptimMethod, OptimSpec};
use crate::tasks::{TaskKind, TaskSpec};

pub const TRAIN_STEPS: usize = 20_000;
pub const ADAPT_STEPS: usize = 5_000;
pub const EVAL_WINDOW: usize = 2_000;
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const LR_GRID: [f64; 3] = [1e-2, 3e-3, 1e-3];
/// Adam learning rate of the shared pre-shift phase.
pub const PRETRAIN_LR: f64 = 1e-3;
/// Adam learning rate of the full-RTRL reference companions.
pub const REFERENCE_LR: f64 = 1e-3;
pub const DECAYS: [f64; 7] = [0.001, 0.01, 0.1, 0.3, 0.5, 0.7, 0.95];
/// Hidden size of the cross-architecture comparison (full RTRL on gated
/// cells at n=64 is too slow for a desk run).
pub const CROSS_ARCH_N: usize = 32;

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub base: ExperimentConfig,
    pub axes: Axes,
    /// Whether cells are scored against frozen and reference companions.
    pub companions: bool,
}

pub const NAMES: [&str; 6] = [
    "sweep-decay",
    "grid-2x2",
    "isolate-optim",
    "cross-arch",
    "switch-control",
    "diagnose",
];

pub fn by_name(name: &str) -> Option<Preset> {
    Some(match name {
        "sweep-decay" => sweep_decay(),
        "grid-2x2" => grid_2x2(),
        "isolate-optim" => isolate_optim(),
        "cross-arch" => cross_arch(),
        "switch-control" => switch_control(),
        "diagnose" => diagnose(),
        _ => return None,
    })
}

/// Shared-pretrain protocol on one task: zero-decay trace with Adam before
/// the shift, each cell's own recipe after it.
pub fn base_config(name: &str, arch: Architecture, n_hidden: usize, task: TaskKind) -> ExperimentConfig {
    let io = task.io_dim();
    ExperimentConfig {
        name: name.into(),
        cell: CellSpec::new(arch, io, n_hidden, io),
        credit: CreditSpec::immediate(),
        optim: OptimSpec::new(OptimMethod::Adam, LR_GRID[0]),
        task: TaskSpec::new(task, TRAIN_STEPS),
        train_steps: TRAIN_STEPS,
        adapt_steps: ADAPT_STEPS,
        eval_window: EVAL_WINDOW,
        seeds: SEEDS.to_vec(),
        mode: Mode::Standard,
        pretrain: Some(Recipe::immediate_adam(PRETRAIN_LR)),
        reference_lr: Some(REFERENCE_LR),
        diag_every: 100,
        recovery_margin: DEFAULT_RECOVERY_MARGIN,
        checkpoint: CheckpointPaths::default(),
    }
}

pub fn grid_2x2() -> Preset {
    Preset {
        name: "grid-2x2",
        base: base_config("grid-2x2", Architecture::Vanilla, 64, TaskKind::SineShift),
        axes: Axes {
            decay: vec![0.95, 0.0],
            optim: vec![OptimMethod::Sgd, OptimMethod::Adam],
            lr: LR_GRID.to_vec(),
            ..Axes::default()
        },
        companions: true,
    }
}

pub fn sweep_decay() -> Preset {
    Preset {
        name: "sweep-decay",
        base: base_config("sweep-decay", Architecture::Vanilla, 64, TaskKind::SineShift),
        axes: Axes {
            decay: DECAYS.to_vec(),
            lr: LR_GRID.to_vec(),
            ..Axes::default()
        },
        companions: true,
    }
}

/// All six optimizers on zero-decay gradients with global-norm clipping.
pub fn isolate_optim() -> Preset {
    let mut base = base_config("isolate-optim", Architecture::Vanilla, 64, TaskKind::SineShift);
    base.credit = CreditSpec::immediate().with_clip(Some(1.0));
    Preset {
        name: "isolate-optim",
        base,
        axes: Axes {
            task: vec![TaskKind::SineShift, TaskKind::Delayed],
            optim: OptimMethod::ALL.to_vec(),
            lr: LR_GRID.to_vec(),
            ..Axes::default()
        },
        companions: true,
    }
}

/// SGD on zero-decay gradients across the four cells.
pub fn cross_arch() -> Preset {
    let mut base = base_config("cross-arch", Architecture::Vanilla, CROSS_ARCH_N, TaskKind::SineShift);
    base.optim.method = OptimMethod::Sgd;
    Preset {
        name: "cross-arch",
        base,
        axes: Axes {
            arch: Architecture::ALL.to_vec(),
            lr: LR_GRID.to_vec(),
            ..Axes::default()
        },
        companions: true,
    }
}

/// Train with Adam, then switch optimizers at the shift with fresh moments.
pub fn switch_control() -> Preset {
    let mut base = base_config("switch-control", Architecture::Vanilla, 64, TaskKind::SineShift);
    base.pretrain = None;
    base.optim = OptimSpec::new(OptimMethod::Adam, PRETRAIN_LR);
    base.mode = Mode::OptimizerSwitch {
        to: OptimSpec::new(OptimMethod::Sgd, LR_GRID[0]),
    };
    Preset {
        name: "switch-control",
        base,
        axes: Axes {
            switch_to: vec![OptimMethod::Sgd, OptimMethod::Adam, OptimMethod::AdamB2Only],
            lr: LR_GRID.to_vec(),
            ..Axes::default()
        },
        companions: true,
    }
}

/// Diagnostics on trained cells: zero-decay and slow-decay traces under SGD,
/// for the vanilla RNN and the CTRNN.
pub fn diagnose() -> Preset {
    let mut base = base_config("diagnose", Architecture::Vanilla, 64, TaskKind::SineShift);
    base.optim = OptimSpec::new(OptimMethod::Sgd, LR_GRID[0]);
    Preset {
        name: "diagnose",
        base,
        axes: Axes {
            arch: vec![Architecture::Vanilla, Architecture::Ctrnn],
            decay: vec![0.0, 0.95],
            ..Axes::default()
        },
        companions: false,
    }
}

/// Hidden sizes of the memory table.
pub const MEMSCALE_N: [usize; 8] = [16, 32, 64, 128, 256, 512, 1024, 2048];

/// Modeled memory of full RTRL, the zero-decay and slow traces, and
/// four-column sparse RTRL, for a vanilla RNN under Adam.
pub fn memscale(ns: &[usize], bytes_per_element: u64) -> Result<Vec<MemoryEstimate>> {
    let credits = [
        CreditSpec::full_rtrl(),
        CreditSpec::trace(0.0),
        CreditSpec::trace(0.95),
        CreditSpec::sparse(4),
    ];
    let mut rows = Vec::new();
    for &n in ns {
        let cell = CellSpec::new(Architecture::Vanilla, 1, n, 1);
        for c in &credits {
            rows.push(memory_model(c, OptimMethod::Adam, &cell, bytes_per_element)?);
        }
    }
    Ok(rows)
}

/// Single-run config timing one credit method: a short pre-shift phase with
/// the method itself, then `steps` timed adaptation steps.
pub fn timing_config(credit: CreditSpec, n_hidden: usize, steps: usize) -> ExperimentConfig {
    let mut c = base_config("timing", Architecture::Vanilla, n_hidden, TaskKind::SineShift);
    c.credit = credit;
    c.optim = OptimSpec::new(OptimMethod::Adam, PRETRAIN_LR);
    c.pretrain = None;
    c.reference_lr = None;
    c.train_steps = steps.min(100);
    c.adapt_steps = steps;
    c.eval_window = c.train_steps;
    c.seeds = vec![0];
    c.diag_every = 0;
    c.task.shift_step = c.train_steps;
    c
}
