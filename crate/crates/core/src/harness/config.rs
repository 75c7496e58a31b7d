use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::CellSpec;
use crate::credit::{CreditMethod, CreditSpec};
use crate::error::{Error, Result};
use crate::optim::{OptimMethod, OptimSpec};
use crate::tasks::TaskSpec;

/// What happens after the shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Keep learning with the configured credit assignment and optimizer.
    Standard,
    /// Stop all updates at the shift.
    FrozenBaseline,
    /// Standard with full RTRL credit assignment.
    RtrlReference,
    /// Replace the optimizer at the shift; moments start from zero.
    OptimizerSwitch { to: OptimSpec },
}

/// Credit assignment and optimizer used for one phase of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub credit: CreditSpec,
    pub optim: OptimSpec,
    /// Final learning rate of a geometric anneal from `optim.lr` over the phase.
    #[serde(default)]
    pub lr_end: Option<f64>,
}

impl Recipe {
    /// Zero-decay trace with Adam: the pre-shift training recipe of the presets.
    pub fn immediate_adam(lr: f64) -> Self {
        Recipe {
            credit: CreditSpec::immediate(),
            optim: OptimSpec::new(OptimMethod::Adam, lr),
            lr_end: None,
        }
    }

    pub fn annealed_to(mut self, lr_end: f64) -> Self {
        self.lr_end = Some(lr_end);
        self
    }

    /// Learning rate at step `i` of an `n`-step phase.
    pub fn lr_at(&self, i: usize, n: usize) -> f64 {
        match self.lr_end {
            Some(end) if n > 1 => self.optim.lr * (end / self.optim.lr).powf(i as f64 / (n - 1) as f64),
            Some(end) => end,
            None => self.optim.lr,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPaths {
    /// Initial parameters (instead of a seeded init). Must match `cell`.
    #[serde(default)]
    pub load: Option<PathBuf>,
    /// Directory receiving the parameters reached at the shift, one file per seed.
    #[serde(default)]
    pub save_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub cell: CellSpec,
    pub credit: CreditSpec,
    pub optim: OptimSpec,
    pub task: TaskSpec,
    pub train_steps: usize,
    pub adapt_steps: usize,
    #[serde(default = "default_eval_window")]
    pub eval_window: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Pre-shift recipe shared by every cell of a grid. Without it, each run
    /// trains with its own credit assignment and optimizer from the start.
    #[serde(default)]
    pub pretrain: Option<Recipe>,
    /// Learning rate of the full-RTRL reference companions; defaults to the
    /// learning rate of the run being scored.
    #[serde(default)]
    pub reference_lr: Option<f64>,
    /// Steps between diagnostic snapshots; 0 disables them.
    #[serde(default = "default_diag_every")]
    pub diag_every: usize,
    /// Margin below which the frozen/reference gap makes recovery undefined.
    #[serde(default = "default_recovery_margin")]
    pub recovery_margin: f64,
    #[serde(default)]
    pub checkpoint: CheckpointPaths,
}

fn default_name() -> String {
    "run".into()
}

fn default_eval_window() -> usize {
    2000
}

fn default_mode() -> Mode {
    Mode::Standard
}

fn default_diag_every() -> usize {
    100
}

pub const DEFAULT_RECOVERY_MARGIN: f64 = 1e-6;

fn default_recovery_margin() -> f64 {
    DEFAULT_RECOVERY_MARGIN
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalized()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validates and fills derived fields: the shift happens at `train_steps`,
    /// and reference mode always uses full RTRL.
    pub fn normalized(mut self) -> Result<Self> {
        self.task.shift_step = self.train_steps;
        if self.mode == Mode::RtrlReference {
            self.credit.method = CreditMethod::FullRtrl;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.credit.validate().map_err(as_config)?;
        self.optim.validate().map_err(as_config)?;
        if let Mode::OptimizerSwitch { to } = &self.mode {
            to.validate().map_err(as_config)?;
        }
        if let Some(p) = &self.pretrain {
            p.credit.validate().map_err(as_config)?;
            p.optim.validate().map_err(as_config)?;
            if let Some(end) = p.lr_end {
                if !(end > 0.0 && end.is_finite()) {
                    return Err(Error::Config(format!("pretrain lr_end must be positive, got {end}")));
                }
            }
        }
        if let Some(lr) = self.reference_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("reference_lr must be positive, got {lr}")));
            }
        }
        let io = self.task.kind.io_dim();
        if self.cell.n_in != io || self.cell.n_out != io {
            return Err(Error::Config(format!(
                "task {} needs n_in = n_out = {io}, cell has n_in={} n_out={}",
                self.task.kind.name(),
                self.cell.n_in,
                self.cell.n_out
            )));
        }
        if self.train_steps == 0 || self.adapt_steps == 0 {
            return Err(Error::Config("train_steps and adapt_steps must be positive".into()));
        }
        if self.eval_window == 0 || self.eval_window > self.adapt_steps || self.eval_window > self.train_steps {
            return Err(Error::Config(format!(
                "eval_window must lie in 1..=min(train_steps, adapt_steps), got {}",
                self.eval_window
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.recovery_margin >= 0.0) {
            return Err(Error::Config("recovery_margin must be >= 0".into()));
        }
        let mut task = self.task;
        task.shift_step = self.train_steps;
        task.validate()
    }

    pub fn total_steps(&self) -> usize {
        self.train_steps + self.adapt_steps
    }

    /// Recipe in force before the shift.
    pub fn pre_recipe(&self) -> Recipe {
        self.pretrain.unwrap_or(Recipe {
            credit: self.credit,
            optim: self.optim,
            lr_end: None,
        })
    }

    /// Recipe in force after the shift; `None` when updates stop.
    pub fn post_recipe(&self) -> Option<Recipe> {
        match self.mode {
            Mode::Standard | Mode::RtrlReference => Some(Recipe {
                credit: self.credit,
                optim: self.optim,
                lr_end: None,
            }),
            Mode::FrozenBaseline => None,
            Mode::OptimizerSwitch { to } => Some(Recipe {
                credit: self.credit,
                optim: to,
                lr_end: None,
            }),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// A grid description: the base config plus the axes swept over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub axes: super::grid::Axes,
}

impl GridFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut g: GridFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        g.base = g.base.normalized()?;
        Ok(g)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}
