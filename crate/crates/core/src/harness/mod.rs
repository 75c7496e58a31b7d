//! Experiment runner: train, shift, adapt, measure recovery.
//!
//! Every run streams one task through one cell. Before the shift the cell
//! learns with the pre-shift recipe; after it, the run's mode decides what
//! happens (keep learning, freeze, or swap the optimizer). Grids share the
//! pre-shift phase and the frozen and full-RTRL companions that recovery is
//! measured against.

mod config;
pub mod experiments;
mod grid;
mod run;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use config::{CheckpointPaths, ExperimentConfig, GridFile, Mode, Recipe, DEFAULT_RECOVERY_MARGIN};
pub use grid::{
    run_grid, run_grid_cached, Axes, CellSummary, GridCell, GridOptions, GridReport, LrSummary, MeanStd, OutputFormat, RunCache, RunKind,
    ScoredRun,
};
pub use run::{run_stream, run_stream_cached, write_diag_csv, PreShift, PretrainCache, RunResult};

use crate::cells::{read_checkpoint, write_checkpoint, CellSpec, ParamSet};
use crate::error::{Error, Result};

/// `100 · (m_frozen − m_post) / (m_frozen − m_ref)`.
///
/// Fails with [`Error::IllConditionedReference`] when the reference does not
/// beat the frozen model by at least `margin`.
pub fn recovery(m_frozen: f64, m_post: f64, m_ref: f64, margin: f64) -> Result<f64> {
    let gap = m_frozen - m_ref;
    if !(gap >= margin) || !gap.is_finite() {
        return Err(Error::IllConditionedReference { gap, margin });
    }
    Ok(100.0 * (m_frozen - m_post) / gap)
}

pub fn checkpoint_save(spec: &CellSpec, params: &ParamSet, path: &Path) -> Result<()> {
    // Write to a sibling and rename, so a crash never leaves a torn file.
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(&mut w, spec, params)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<ParamSet> {
    checkpoint_load_with_spec(path).map(|(_, p)| p)
}

pub fn checkpoint_load_with_spec(path: &Path) -> Result<(CellSpec, ParamSet)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_checkpoint(&mut bytes.as_slice())
}
