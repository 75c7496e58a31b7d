//! Measurement instruments: self-propagation factor, state-Jacobian spectral
//! radius, per-group gradient norms, trace staleness and the analytic memory
//! model.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cells::{Architecture, CellSpec, ParamSet, Source};
use crate::credit::{CreditMethod, CreditSpec, Sensitivity};
use crate::error::{Error, Result};
use crate::linalg::{cosine_slices, spectral_radius, Tensor, RADIUS_SQUARINGS};
use crate::optim::OptimMethod;

/// Mean over units of `|(1 − h_i²) · W_hh[i, i]|`.
pub fn self_propagation(h: &Tensor, w_hh: &Tensor) -> Result<f64> {
    let n = h.len();
    if w_hh.dims() != [n, n] {
        return Err(Error::shape(format!(
            "self_propagation: h has {n} entries, W_hh is {:?}",
            w_hh.dims()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = h
        .data()
        .iter()
        .enumerate()
        .map(|(i, &hi)| ((1.0 - hi * hi) * w_hh.at(i, i)).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Dominant |eigenvalue| of a state Jacobian.
pub fn spectral_radius_of_state_jacobian(j: &Tensor) -> Result<f64> {
    spectral_radius(j, RADIUS_SQUARINGS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradNormReport {
    pub norms: BTreeMap<String, f64>,
    /// Norm of the readout-weight gradient over the norm of the recurrent
    /// (hidden-to-hidden) gradients; `+∞` when the latter is exactly zero.
    pub ratio_out_over_hh: f64,
}

impl GradNormReport {
    pub fn recurrent_is_zero(&self) -> bool {
        self.ratio_out_over_hh.is_infinite()
    }
}

fn out_over_recurrent(out: f64, rec: f64) -> f64 {
    if rec == 0.0 {
        f64::INFINITY
    } else {
        out / rec
    }
}

/// Combined norm of the recurrent groups present in `grads` (`w_hh`, or the
/// `u_*` gate matrices of gated cells).
fn recurrent_norm(grads: &ParamSet, arch: Architecture) -> Result<f64> {
    let mut sq = 0.0;
    for name in arch.recurrent_groups() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::shape(format!("gradient has no recurrent group {name}")))?;
        sq += g.sum_sq();
    }
    Ok(sq.sqrt())
}

/// Euclidean norm of every group, plus `‖g_w_out‖ / ‖g_recurrent‖`.
pub fn grad_norm_report(grads: &ParamSet, arch: Architecture) -> Result<GradNormReport> {
    let out = grads
        .get("w_out")
        .ok_or_else(|| Error::shape("gradient has no w_out group"))?
        .norm2();
    let rec = recurrent_norm(grads, arch)?;
    let norms = grads.iter().map(|g| (g.name.clone(), g.tensor.norm2())).collect();
    Ok(GradNormReport {
        norms,
        ratio_out_over_hh: out_over_recurrent(out, rec),
    })
}

/// Averages per-group gradient norms over a window of steps.
#[derive(Debug, Clone, Default)]
pub struct GradNormWindow {
    sums: BTreeMap<String, f64>,
    out: f64,
    rec: f64,
    count: usize,
}

impl GradNormWindow {
    pub fn add(&mut self, grads: &ParamSet, arch: Architecture) -> Result<()> {
        let rec = recurrent_norm(grads, arch)?;
        for g in grads.iter() {
            let norm = g.tensor.norm2();
            *self.sums.entry(g.name.clone()).or_default() += norm;
            if g.name == "w_out" {
                self.out += norm;
            }
        }
        self.rec += rec;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean norms over the window; the ratio is of the mean norms.
    pub fn report(&self) -> Option<GradNormReport> {
        if self.count == 0 {
            return None;
        }
        let c = self.count as f64;
        Some(GradNormReport {
            norms: self.sums.iter().map(|(k, v)| (k.clone(), v / c)).collect(),
            ratio_out_over_hh: out_over_recurrent(self.out, self.rec),
        })
    }
}

/// `(‖e‖ / ‖D‖, cos(e, D))` over the flattened sensitivities.
pub fn trace_staleness(e: &Sensitivity, d: &Sensitivity) -> Result<(f64, f64)> {
    e.expect_conforms(d, "trace_staleness")?;
    let (fe, fd) = (e.flatten_dense(), d.flatten_dense());
    let cos = cosine_slices(&fe, &fd)?;
    Ok((e.norm2() / d.norm2(), cos))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub method: String,
    pub n_hidden: usize,
    pub n_in: usize,
    pub n_out: usize,
    /// The sensitivity carried across steps (`P_t`, `e_t`, or the immediate
    /// derivative for the zero-decay trace).
    pub bytes_sensitivity: u64,
    /// Per-step buffers: the immediate derivative when a separate
    /// sensitivity is carried, and the matmul scratch of the Jacobian product.
    pub bytes_workspace: u64,
    pub bytes_params: u64,
    pub bytes_optstate: u64,
    pub bytes_total: u64,
}

/// Analytic memory footprint. Shape arithmetic only: nothing is allocated.
pub fn memory_model(
    credit: &CreditSpec,
    optim: OptimMethod,
    cell: &CellSpec,
    bytes_per_element: u64,
) -> Result<MemoryEstimate> {
    if bytes_per_element != 4 && bytes_per_element != 8 {
        return Err(Error::param(format!(
            "bytes per element must be 4 or 8, got {bytes_per_element}"
        )));
    }
    let elems = memory_elements(credit, cell);
    let bpe = bytes_per_element;
    let theta = cell.param_count() as u64;
    let bytes_sensitivity = elems.sensitivity * bpe;
    let bytes_workspace = elems.workspace * bpe;
    let bytes_params = theta * bpe;
    let bytes_optstate = optim.state_buffers() as u64 * theta * bpe;
    Ok(MemoryEstimate {
        method: credit.label(),
        n_hidden: cell.n_hidden,
        n_in: cell.n_in,
        n_out: cell.n_out,
        bytes_sensitivity,
        bytes_workspace,
        bytes_params,
        bytes_optstate,
        bytes_total: bytes_sensitivity + bytes_workspace + bytes_params + bytes_optstate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementCounts {
    pub sensitivity: u64,
    pub workspace: u64,
}

/// Element counts behind [`memory_model`], comparable with
/// `CreditState::allocated_elements` and `CreditState::workspace_elements`.
pub fn memory_elements(credit: &CreditSpec, cell: &CellSpec) -> ElementCounts {
    let theta_state = cell.state_param_count() as u64;
    let sd = cell.state_dim() as u64;
    let local = cell.arch.components() as u64 * theta_state;
    let widest_group = cell
        .arch
        .state_groups()
        .iter()
        .map(|&(_, src)| cell.n_hidden * cell.source_len(src))
        .max()
        .unwrap_or(0) as u64;
    match credit.method {
        CreditMethod::Trace { decay } if decay == 0.0 => ElementCounts {
            sensitivity: local,
            workspace: 0,
        },
        CreditMethod::Trace { .. } => ElementCounts {
            sensitivity: sd * theta_state,
            workspace: local,
        },
        CreditMethod::SparseK { k } if k == 1 && sd > 1 => ElementCounts {
            sensitivity: sd * theta_state,
            workspace: local,
        },
        CreditMethod::FullRtrl | CreditMethod::SparseK { .. } => ElementCounts {
            sensitivity: sd * theta_state,
            workspace: local + sd * widest_group,
        },
    }
}

/// One diagnostics record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagSnapshot {
    pub t: usize,
    /// Vanilla RNN and CTRNN only: gated cells have no single self-weight.
    pub self_prop: Option<f64>,
    pub spec_radius: f64,
    pub grad_norms: BTreeMap<String, f64>,
    pub grad_ratio: f64,
    /// `‖S_t‖ / ‖D_t‖` for the carried sensitivity against the immediate derivative.
    pub trace_mag_ratio: Option<f64>,
    pub trace_cosine: Option<f64>,
}

/// Self-propagation of a vanilla or CTRNN cell from the activations of its last step.
pub fn cell_self_propagation(spec: &CellSpec, params: &ParamSet, act: &[f64]) -> Result<Option<f64>> {
    match spec.arch {
        Architecture::Vanilla | Architecture::Ctrnn => {
            let w = params
                .get("w_hh")
                .ok_or_else(|| Error::shape("missing w_hh"))?;
            self_propagation(&Tensor::vector(act.to_vec()), w).map(Some)
        }
        _ => Ok(None),
    }
}

/// Column names of `diag.csv` for a parameter layout.
pub fn diag_csv_header(spec: &CellSpec) -> Vec<String> {
    diag_csv_header_for(&group_names(spec))
}

/// Parameter group names of a cell, in `group_shapes` order.
pub fn group_names(spec: &CellSpec) -> Vec<String> {
    spec.group_shapes().into_iter().map(|(name, _)| name.to_string()).collect()
}

/// Header with one gradient-norm column per named group. Mixed-architecture
/// files pass the union of their group names.
pub fn diag_csv_header_for(groups: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = [
        "run_id",
        "t",
        "self_prop",
        "spec_radius",
        "grad_ratio",
        "trace_mag_ratio",
        "trace_cosine",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(groups.iter().map(|name| format!("gn_{name}")));
    cols
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_diag_row<W: Write>(w: &mut W, run_id: &str, spec: &CellSpec, s: &DiagSnapshot) -> Result<()> {
    write_diag_row_for(w, run_id, &group_names(spec), s)
}

/// Row matching [`diag_csv_header_for`]; groups the run lacks stay empty.
pub fn write_diag_row_for<W: Write>(w: &mut W, run_id: &str, groups: &[String], s: &DiagSnapshot) -> Result<()> {
    let mut row = vec![
        run_id.to_string(),
        s.t.to_string(),
        opt(s.self_prop),
        format!("{:e}", s.spec_radius),
        format!("{:e}", s.grad_ratio),
        opt(s.trace_mag_ratio),
        opt(s.trace_cosine),
    ];
    for name in groups {
        row.push(opt(s.grad_norms.get(name.as_str()).copied()));
    }
    writeln!(w, "{}", row.join(","))?;
    Ok(())
}

/// Whether a state-map group multiplies the previous hidden state.
pub fn is_recurrent_group(arch: Architecture, name: &str) -> bool {
    arch.state_groups()
        .iter()
        .any(|&(g, src)| g == name && src == Source::Hidden)
}
