//! Credit assignment: full RTRL, eligibility traces (with the zero-decay
//! immediate-derivative fast path) and ring-masked sparse RTRL.

mod sensitivity;

use serde::{Deserialize, Serialize};

pub use sensitivity::{Layout, Sensitivity, SensitivityGroup};

use crate::cells::{self, is_output_group, CellSpec, CellState, ParamSet, Source};
use crate::error::{Error, Result};
use crate::linalg::{matmul_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CreditMethod {
    FullRtrl,
    Trace { decay: f64 },
    SparseK { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditSpec {
    #[serde(flatten)]
    pub method: CreditMethod,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl CreditSpec {
    pub fn full_rtrl() -> Self {
        CreditSpec {
            method: CreditMethod::FullRtrl,
            clip_norm: None,
        }
    }

    pub fn trace(decay: f64) -> Self {
        CreditSpec {
            method: CreditMethod::Trace { decay },
            clip_norm: None,
        }
    }

    /// Zero-decay trace: the immediate derivative alone.
    pub fn immediate() -> Self {
        Self::trace(0.0)
    }

    pub fn sparse(k: usize) -> Self {
        CreditSpec {
            method: CreditMethod::SparseK { k },
            clip_norm: None,
        }
    }

    pub fn with_clip(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            CreditMethod::Trace { decay } => check_decay(decay)?,
            CreditMethod::SparseK { k } if k == 0 => {
                return Err(Error::Config("sparse RTRL needs k >= 1".into()));
            }
            _ => {}
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match self.method {
            CreditMethod::FullRtrl => "rtrl".into(),
            CreditMethod::Trace { decay } => format!("trace{decay}"),
            CreditMethod::SparseK { k } => format!("sparse{k}"),
        }
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if (0.0..1.0).contains(&decay) {
        Ok(())
    } else {
        Err(Error::param(format!("trace decay must lie in [0, 1), got {decay}")))
    }
}

fn numeric(what: &str) -> Error {
    Error::Numeric {
        step: 0,
        what: what.into(),
    }
}

/// `P_t = J · P_{t-1} + D` applied to every group's leading (state) axis.
pub fn rtrl_step(p_prev: &Sensitivity, jacobian: &Tensor, direct: &Sensitivity) -> Result<Sensitivity> {
    let mut p = p_prev.to_dense();
    let mut scratch = Vec::new();
    rtrl_step_in_place(&mut p, &mut scratch, jacobian, direct)?;
    Ok(p)
}

fn rtrl_step_in_place(
    p: &mut Sensitivity,
    scratch: &mut Vec<f64>,
    jacobian: &Tensor,
    direct: &Sensitivity,
) -> Result<()> {
    let sd = p.state_dim();
    if p.layout() != Layout::Dense {
        return Err(Error::shape("RTRL sensitivity must be dense"));
    }
    if jacobian.dims() != [sd, sd] {
        return Err(Error::shape(format!(
            "jacobian {:?} does not match state dim {sd}",
            jacobian.dims()
        )));
    }
    p.expect_conforms(direct, "rtrl_step")?;
    for g in p.groups_mut() {
        let width = g.tensor.cols();
        if scratch.len() < sd * width {
            scratch.reserve_exact(sd * width - scratch.len());
        }
        scratch.resize(sd * width, 0.0);
        matmul_into(jacobian.data(), g.tensor.data(), scratch, sd, sd, width);
        g.tensor.data_mut().copy_from_slice(scratch);
    }
    p.add_scaled(1.0, direct)?;
    if !p.is_finite() {
        return Err(numeric("RTRL sensitivity"));
    }
    Ok(())
}

/// `e_t = λ e_{t-1} + D`. At `λ = 0` the result is `D` itself, bit for bit.
pub fn trace_step(e_prev: &Sensitivity, decay: f64, direct: &Sensitivity) -> Result<Sensitivity> {
    check_decay(decay)?;
    e_prev.expect_conforms(direct, "trace_step")?;
    if decay == 0.0 {
        return Ok(direct.clone());
    }
    let mut e = if e_prev.layout() == Layout::Local && direct.layout() == Layout::Dense {
        e_prev.to_dense()
    } else {
        e_prev.clone()
    };
    e.scale_in_place(decay);
    e.add_scaled(1.0, direct)?;
    if !e.is_finite() {
        return Err(numeric("eligibility trace"));
    }
    Ok(e)
}

/// Ring propagation mask for k-column sparse RTRL.
///
/// Column `j` of the Jacobian propagates into row `i` iff
/// `(j − i) mod n ∈ {1, …, k−1}`; `k = 1` is the empty mask and `k ≥ n`
/// the full one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMask {
    pub n: usize,
    pub k: usize,
}

impl ColumnMask {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::param(format!("column mask needs n, k >= 1 (n={n}, k={k})")));
        }
        Ok(ColumnMask { n, k })
    }

    pub fn is_full(&self) -> bool {
        self.k >= self.n
    }

    pub fn is_empty(&self) -> bool {
        self.k == 1 && self.n > 1
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        if self.is_full() {
            return true;
        }
        let offset = (j + self.n - i % self.n) % self.n;
        (1..self.k).contains(&offset)
    }

    /// `J ⊙ mask`
    pub fn apply(&self, jacobian: &Tensor) -> Result<Tensor> {
        if jacobian.dims() != [self.n, self.n] {
            return Err(Error::shape(format!(
                "mask for n={} applied to {:?}",
                self.n,
                jacobian.dims()
            )));
        }
        let mut out = jacobian.clone();
        for i in 0..self.n {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                if !self.allows(i, j) {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }
}

/// RTRL with the Jacobian restricted to `mask`.
pub fn sparse_step(
    p_prev: &Sensitivity,
    jacobian: &Tensor,
    direct: &Sensitivity,
    mask: &ColumnMask,
) -> Result<Sensitivity> {
    if mask.is_empty() {
        p_prev.expect_conforms(direct, "sparse_step")?;
        let mut p = p_prev.to_dense();
        p.fill_zero();
        p.add_scaled(1.0, direct)?;
        return Ok(p);
    }
    rtrl_step(p_prev, &mask.apply(jacobian)?, direct)
}

/// Parameter gradient from a sensitivity and the error signal `∂L/∂s`.
///
/// State-map groups get `δᵀ · S[g]`; output groups are copied from
/// `out_grads`. With `clip_norm`, the concatenated gradient is rescaled to
/// norm at most `clip_norm`.
pub fn assemble_gradient(
    sens: &Sensitivity,
    delta: &Tensor,
    out_grads: &ParamSet,
    clip_norm: Option<f64>,
) -> Result<ParamSet> {
    if delta.len() != sens.state_dim() {
        return Err(Error::shape(format!(
            "error signal has {} entries, sensitivity state dim is {}",
            delta.len(),
            sens.state_dim()
        )));
    }
    let n = sens.n_hidden();
    let d = delta.data();
    let mut groups: Vec<(String, Tensor)> = Vec::with_capacity(sens.groups().len() + out_grads.len());
    for g in sens.groups() {
        let width = g.tensor.cols();
        let mut out = vec![0.0; width];
        match sens.layout() {
            Layout::Dense => {
                for (row, &ds) in g.tensor.data().chunks_exact(width).zip(d) {
                    if ds != 0.0 {
                        crate::linalg::axpy(ds, row, &mut out);
                    }
                }
            }
            Layout::Local => {
                for (c, row) in g.tensor.data().chunks_exact(width).enumerate() {
                    for i in 0..n {
                        let ds = d[c * n + i];
                        let span = i * g.cols..(i + 1) * g.cols;
                        out[span.clone()]
                            .iter_mut()
                            .zip(&row[span])
                            .for_each(|(o, v)| *o += ds * v);
                    }
                }
            }
        }
        let dims = if g.source == Source::Unit { vec![n] } else { vec![n, g.cols] };
        groups.push((g.name.to_string(), Tensor::new(dims, out)?));
    }
    for og in out_grads.iter() {
        if !is_output_group(&og.name) {
            return Err(Error::shape(format!("{} is not an output group", og.name)));
        }
        groups.push((og.name.clone(), og.tensor.clone()));
    }
    let mut grads = ParamSet::new(groups)?;
    if let Some(c) = clip_norm {
        clip_global_norm(&mut grads, c);
    }
    Ok(grads)
}

/// Rescales so the global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}

/// Running credit-assignment state for one stream.
///
/// Owns the immediate-derivative buffer and, depending on the method, the
/// propagated sensitivity: RTRL and sparse RTRL keep a dense `P_t`, a
/// positive-decay trace keeps a dense `e_t`, and the zero-decay trace keeps
/// nothing beyond the immediate derivative.
#[derive(Debug, Clone)]
pub struct CreditState {
    spec: CreditSpec,
    direct: Sensitivity,
    carried: Option<Sensitivity>,
    mask: Option<ColumnMask>,
    scratch: Vec<f64>,
}

impl CreditState {
    pub fn new(spec: CreditSpec, cell: &CellSpec) -> Result<Self> {
        spec.validate()?;
        let carried = match spec.method {
            CreditMethod::Trace { decay } if decay == 0.0 => None,
            _ => Some(Sensitivity::dense_zeros(cell)),
        };
        let mask = match spec.method {
            CreditMethod::SparseK { k } => Some(ColumnMask::new(cell.state_dim(), k)?),
            _ => None,
        };
        Ok(CreditState {
            spec,
            direct: Sensitivity::local_zeros(cell),
            carried,
            mask,
            scratch: Vec::new(),
        })
    }

    pub fn spec(&self) -> &CreditSpec {
        &self.spec
    }

    /// Advances the sensitivity after `forward(prev, x) -> new`.
    pub fn step(
        &mut self,
        cell: &CellSpec,
        params: &ParamSet,
        prev: &CellState,
        new: &CellState,
        x: &Tensor,
    ) -> Result<()> {
        cells::immediate_derivative_into(cell, params, prev, new, x, &mut self.direct)?;
        let relabel = |e: Error| match e {
            Error::Numeric { what, .. } => Error::Numeric { step: new.t, what },
            other => other,
        };
        match self.spec.method {
            CreditMethod::Trace { decay } if decay == 0.0 => {
                if !self.direct.is_finite() {
                    return Err(relabel(numeric("immediate derivative")));
                }
            }
            CreditMethod::Trace { decay } => {
                let e = self.carried.as_mut().expect("trace buffer");
                // Checking λe and D separately skips a second pass over the
                // dense trace; their finite sum can only overflow near f64::MAX,
                // which the gradient check downstream still catches.
                let finite = e.scale_checked(decay) && self.direct.is_finite();
                if !finite {
                    return Err(relabel(numeric("eligibility trace")));
                }
                e.add_scaled(1.0, &self.direct)?;
            }
            CreditMethod::FullRtrl | CreditMethod::SparseK { .. } => {
                let p = self.carried.as_mut().expect("rtrl buffer");
                let mask = self.mask.filter(|m| !m.is_full());
                match mask {
                    Some(m) if m.is_empty() => {
                        p.fill_zero();
                        p.add_scaled(1.0, &self.direct)?;
                    }
                    _ => {
                        let mut j = cells::state_jacobian(cell, params, prev, new, x)?;
                        if let Some(m) = mask {
                            j = m.apply(&j)?;
                        }
                        rtrl_step_in_place(p, &mut self.scratch, &j, &self.direct).map_err(relabel)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// The sensitivity the gradient is assembled from.
    pub fn sensitivity(&self) -> &Sensitivity {
        self.carried.as_ref().unwrap_or(&self.direct)
    }

    /// The most recent immediate derivative.
    pub fn direct(&self) -> &Sensitivity {
        &self.direct
    }

    pub fn gradient(&self, delta: &Tensor, out_grads: &ParamSet) -> Result<ParamSet> {
        assemble_gradient(self.sensitivity(), delta, out_grads, self.spec.clip_norm)
    }

    /// Scalars held across steps for credit assignment: the immediate
    /// derivative plus any propagated sensitivity. The per-step matmul
    /// workspace is excluded; see [`CreditState::workspace_elements`].
    pub fn allocated_elements(&self) -> usize {
        self.direct.element_count() + self.carried.as_ref().map_or(0, |c| c.element_count())
    }

    pub fn workspace_elements(&self) -> usize {
        self.scratch.capacity()
    }

    /// Forgets accumulated history (a fresh stream).
    pub fn reset(&mut self) {
        if let Some(c) = self.carried.as_mut() {
            c.fill_zero();
        }
        self.direct.fill_zero();
    }
}
