//! Recurrent cells.
//!
//! Each architecture exposes the three quantities credit assignment needs:
//! the forward step, the state Jacobian `∂s_t/∂s_{t-1}`, and the immediate
//! parameter derivative `∂s_t/∂θ` with the previous state held fixed.
//!
//! The recurrent state `s` is `h` for the vanilla RNN, GRU and CTRNN, and the
//! concatenation `[h; c]` for the LSTM. Every state-map parameter belongs to
//! exactly one hidden unit (its row), and its immediate derivative touches
//! only that unit's state components. The derivative therefore factors as
//! `coef[c][i] * source[j]`, which is what [`DirectFactor`] records.

mod checkpoint;
mod ctrnn;
mod gru;
mod lstm;
mod params;
mod vanilla;

use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParamGroup, ParamSet};

use crate::credit::Sensitivity;
use crate::error::{Error, Result};
use crate::linalg::{gauss_init, matvec_into, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[serde(alias = "vanilla", alias = "rnn")]
    Vanilla,
    Gru,
    Lstm,
    Ctrnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Vanilla,
        Architecture::Gru,
        Architecture::Lstm,
        Architecture::Ctrnn,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Architecture::Vanilla => 1,
            Architecture::Gru => 2,
            Architecture::Lstm => 3,
            Architecture::Ctrnn => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vanilla => "vanilla",
            Architecture::Gru => "gru",
            Architecture::Lstm => "lstm",
            Architecture::Ctrnn => "ctrnn",
        }
    }

    /// State components per hidden unit (2 for the LSTM's `h` and `c`).
    pub fn components(self) -> usize {
        match self {
            Architecture::Lstm => 2,
            _ => 1,
        }
    }

    /// State-map groups in name order, with the operand each one multiplies.
    pub fn state_groups(self) -> &'static [(&'static str, Source)] {
        use Source::*;
        match self {
            Architecture::Vanilla | Architecture::Ctrnn => {
                &[("b_h", Unit), ("w_hh", Hidden), ("w_xh", Input)]
            }
            Architecture::Gru => &[
                ("b_n", Unit),
                ("b_r", Unit),
                ("b_z", Unit),
                ("u_n", Hidden),
                ("u_r", Hidden),
                ("u_z", Hidden),
                ("w_n", Input),
                ("w_r", Input),
                ("w_z", Input),
            ],
            Architecture::Lstm => &[
                ("b_f", Unit),
                ("b_g", Unit),
                ("b_i", Unit),
                ("b_o", Unit),
                ("u_f", Hidden),
                ("u_g", Hidden),
                ("u_i", Hidden),
                ("u_o", Hidden),
                ("w_f", Input),
                ("w_g", Input),
                ("w_i", Input),
                ("w_o", Input),
            ],
        }
    }

    /// Hidden-to-hidden weight groups; the "recurrent" side of gradient-scale reports.
    pub fn recurrent_groups(self) -> impl Iterator<Item = &'static str> {
        self.state_groups()
            .iter()
            .filter(|(_, s)| *s == Source::Hidden)
            .map(|(n, _)| *n)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "rnn" => Ok(Architecture::Vanilla),
            "gru" => Ok(Architecture::Gru),
            "lstm" => Ok(Architecture::Lstm),
            "ctrnn" => Ok(Architecture::Ctrnn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Operand multiplying a parameter inside its unit's pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// previous hidden state `h_{t-1}`
    Hidden,
    /// current input `x_t`
    Input,
    /// constant 1 (biases)
    Unit,
}

pub const OUTPUT_GROUPS: [&str; 2] = ["b_out", "w_out"];

pub fn is_output_group(name: &str) -> bool {
    OUTPUT_GROUPS.contains(&name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub arch: Architecture,
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    #[serde(default = "default_tau")]
    pub ctrnn_tau: f64,
    #[serde(default = "default_dt")]
    pub ctrnn_dt: f64,
}

fn default_tau() -> f64 {
    10.0
}

fn default_dt() -> f64 {
    1.0
}

impl CellSpec {
    pub fn new(arch: Architecture, n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        CellSpec {
            arch,
            n_in,
            n_hidden,
            n_out,
            ctrnn_tau: default_tau(),
            ctrnn_dt: default_dt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_hidden == 0 || self.n_out == 0 {
            return Err(Error::Config(format!(
                "cell sizes must be positive (n_in={}, n_hidden={}, n_out={})",
                self.n_in, self.n_hidden, self.n_out
            )));
        }
        let k = self.ctrnn_dt / self.ctrnn_tau;
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::Config(format!("ctrnn dt/tau must lie in (0, 1], got {k}")));
        }
        Ok(())
    }

    /// Leak rate dt/τ of the CTRNN.
    pub fn leak(&self) -> f64 {
        self.ctrnn_dt / self.ctrnn_tau
    }

    pub fn state_dim(&self) -> usize {
        self.arch.components() * self.n_hidden
    }

    pub fn source_len(&self, source: Source) -> usize {
        match source {
            Source::Hidden => self.n_hidden,
            Source::Input => self.n_in,
            Source::Unit => 1,
        }
    }

    /// Shape of every parameter group, state-map and output, in name order.
    pub fn group_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut shapes: Vec<(&'static str, Vec<usize>)> = self
            .arch
            .state_groups()
            .iter()
            .map(|&(name, src)| {
                let dims = match src {
                    Source::Unit => vec![self.n_hidden],
                    _ => vec![self.n_hidden, self.source_len(src)],
                };
                (name, dims)
            })
            .collect();
        shapes.push(("b_out", vec![self.n_out]));
        shapes.push(("w_out", vec![self.n_out, self.n_hidden]));
        shapes.sort_by(|a, b| a.0.cmp(b.0));
        shapes
    }

    /// |θ_state|: parameters that enter the state map.
    pub fn state_param_count(&self) -> usize {
        self.arch
            .state_groups()
            .iter()
            .map(|&(_, src)| self.n_hidden * self.source_len(src))
            .sum()
    }

    /// |θ|: all parameters including the readout.
    pub fn param_count(&self) -> usize {
        self.state_param_count() + self.n_out * (self.n_hidden + 1)
    }

    pub fn init_params(&self, rng: &mut Rng) -> Result<ParamSet> {
        self.validate()?;
        let scale = 1.0 / (self.n_hidden as f64).sqrt();
        let mut groups = Vec::new();
        for (name, dims) in self.group_shapes() {
            let t = if name.starts_with('b') {
                let fill = if name == "b_f" { 1.0 } else { 0.0 };
                Tensor::filled(&dims, fill)
            } else {
                gauss_init(rng, &dims, scale)?
            };
            groups.push((name.to_string(), t));
        }
        ParamSet::new(groups)
    }

    /// Checks that `params` has exactly this spec's groups and shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = self.group_shapes();
        let ok = params.len() == shapes.len()
            && params
                .iter()
                .zip(&shapes)
                .all(|(g, (name, dims))| g.name == *name && g.tensor.dims() == dims.as_slice());
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter set does not match {} cell (n_in={}, n_hidden={}, n_out={})",
                self.arch, self.n_in, self.n_hidden, self.n_out
            )))
        }
    }

    pub fn initial_state(&self) -> CellState {
        CellState {
            h: Tensor::zeros(&[self.n_hidden]),
            aux: (self.arch == Architecture::Lstm).then(|| Tensor::zeros(&[self.n_hidden])),
            cache: None,
            t: 0,
        }
    }
}

/// Activations cached by the forward step for the Jacobian and derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum StepCache {
    Vanilla { dact: Vec<f64> },
    Ctrnn { u: Vec<f64> },
    Gru { z: Vec<f64>, r: Vec<f64>, c: Vec<f64>, q: Vec<f64> },
    Lstm { i: Vec<f64>, f: Vec<f64>, g: Vec<f64>, o: Vec<f64>, tc: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    /// LSTM cell state `c`; `None` for the other architectures.
    pub aux: Option<Tensor>,
    pub cache: Option<StepCache>,
    /// Number of forward steps taken to reach this state.
    pub t: usize,
}

impl CellState {
    /// The full recurrent state `s` (h, then c for the LSTM).
    pub fn state_vector(&self) -> Vec<f64> {
        let mut s = self.h.data().to_vec();
        if let Some(c) = &self.aux {
            s.extend_from_slice(c.data());
        }
        s
    }

    pub fn from_state_vector(spec: &CellSpec, s: &[f64]) -> Result<Self> {
        if s.len() != spec.state_dim() {
            return Err(Error::shape(format!(
                "state vector has {} entries, {} cell needs {}",
                s.len(),
                spec.arch,
                spec.state_dim()
            )));
        }
        let n = spec.n_hidden;
        Ok(CellState {
            h: Tensor::vector(s[..n].to_vec()),
            aux: (spec.arch == Architecture::Lstm).then(|| Tensor::vector(s[n..].to_vec())),
            cache: None,
            t: 0,
        })
    }
}

/// Immediate derivative of one state-map group in factored form: entry
/// `(unit i, column j)` of the group affects state component `c` of unit `i`
/// with weight `coefs[c * n + i] * source[j]`.
#[derive(Debug, Clone)]
pub struct DirectFactor {
    pub group: &'static str,
    pub source: Source,
    pub coefs: Vec<f64>,
}

fn check_step_inputs(spec: &CellSpec, params: &ParamSet, state: &CellState, x: &Tensor) -> Result<()> {
    if x.len() != spec.n_in {
        return Err(Error::shape(format!("input has {} entries, expected {}", x.len(), spec.n_in)));
    }
    if state.h.len() != spec.n_hidden || state.aux.is_some() != (spec.arch == Architecture::Lstm) {
        return Err(Error::shape("cell state does not match spec"));
    }
    if let Some(c) = &state.aux {
        if c.len() != spec.n_hidden {
            return Err(Error::shape("cell state does not match spec"));
        }
    }
    spec.check_params(params)
}

/// `W x + U h + b` for the unit pre-activation built from the three named groups.
pub(crate) fn affine(params: &ParamSet, w: &str, u: &str, b: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut out = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    matvec_into(params.expect(w).data(), x, &mut out);
    matvec_into(params.expect(u).data(), h, &mut tmp);
    let bias = params.expect(b).data();
    for i in 0..n {
        out[i] += tmp[i] + bias[i];
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One forward step; returns the new state (with cached activations) and the readout `y`.
pub fn forward(spec: &CellSpec, params: &ParamSet, state: &CellState, x: &Tensor) -> Result<(CellState, Tensor)> {
    check_step_inputs(spec, params, state, x)?;
    let step = state.t + 1;
    let new = match spec.arch {
        Architecture::Vanilla => vanilla::forward(params, state, x.data()),
        Architecture::Ctrnn => ctrnn::forward(spec, params, state, x.data()),
        Architecture::Gru => gru::forward(params, state, x.data()),
        Architecture::Lstm => lstm::forward(params, state, x.data()),
    };
    let new = CellState { t: step, ..new };
    if !new.h.is_finite() || new.aux.as_ref().is_some_and(|c| !c.is_finite()) {
        return Err(Error::Numeric {
            step,
            what: "hidden state".into(),
        });
    }
    let y = readout(params, &new.h);
    if !y.is_finite() {
        return Err(Error::Numeric {
            step,
            what: "output".into(),
        });
    }
    Ok((new, y))
}

/// `y = W_out h + b_out`
pub fn readout(params: &ParamSet, h: &Tensor) -> Tensor {
    let w = params.expect("w_out");
    let mut y = params.expect("b_out").clone();
    for (yi, row) in y.data_mut().iter_mut().zip(w.data().chunks_exact(h.len())) {
        *yi += crate::linalg::dot(row, h.data());
    }
    y
}

fn cache_of(state: &CellState) -> Result<&StepCache> {
    state
        .cache
        .as_ref()
        .ok_or_else(|| Error::param("state has no cached activations; it was not produced by forward"))
}

/// Exact state Jacobian `∂s_t/∂s_{t-1}` (state_dim × state_dim).
///
/// `state_new` must come from `forward(spec, params, state_prev, x)`; that
/// provenance cannot be checked here.
pub fn state_jacobian(
    spec: &CellSpec,
    params: &ParamSet,
    state_prev: &CellState,
    state_new: &CellState,
    x: &Tensor,
) -> Result<Tensor> {
    check_step_inputs(spec, params, state_prev, x)?;
    let cache = cache_of(state_new)?;
    Ok(match spec.arch {
        Architecture::Vanilla => vanilla::jacobian(params, cache),
        Architecture::Ctrnn => ctrnn::jacobian(spec, params, cache),
        Architecture::Gru => gru::jacobian(params, state_prev, cache),
        Architecture::Lstm => lstm::jacobian(params, state_prev, cache),
    })
}

/// Immediate derivative in factored form, one entry per state-map group in name order.
pub fn direct_factors(
    spec: &CellSpec,
    params: &ParamSet,
    state_prev: &CellState,
    state_new: &CellState,
    x: &Tensor,
) -> Result<Vec<DirectFactor>> {
    check_step_inputs(spec, params, state_prev, x)?;
    let cache = cache_of(state_new)?;
    let mut factors = match spec.arch {
        Architecture::Vanilla => vanilla::factors(cache),
        Architecture::Ctrnn => ctrnn::factors(spec, cache),
        Architecture::Gru => gru::factors(state_prev, cache),
        Architecture::Lstm => lstm::factors(state_prev, cache),
    };
    factors.sort_by(|a, b| a.group.cmp(b.group));
    Ok(factors)
}

/// Immediate derivative `∂s_t/∂θ|direct` for every state-map group, in the
/// unit-local layout (one entry per parameter and state component).
pub fn immediate_derivative(
    spec: &CellSpec,
    params: &ParamSet,
    state_prev: &CellState,
    state_new: &CellState,
    x: &Tensor,
) -> Result<Sensitivity> {
    let mut out = Sensitivity::local_zeros(spec);
    immediate_derivative_into(spec, params, state_prev, state_new, x, &mut out)?;
    Ok(out)
}

/// As [`immediate_derivative`], writing into an existing local buffer.
pub fn immediate_derivative_into(
    spec: &CellSpec,
    params: &ParamSet,
    state_prev: &CellState,
    state_new: &CellState,
    x: &Tensor,
    out: &mut Sensitivity,
) -> Result<()> {
    let factors = direct_factors(spec, params, state_prev, state_new, x)?;
    out.fill_from_factors(spec, &factors, state_prev.h.data(), x.data())
}

/// Squared-error readout gradient.
///
/// Returns `∂L/∂s` (state_dim entries; the LSTM `c` half is zero) and the
/// gradients of `w_out` and `b_out` for `L = ½‖y_pred − y_true‖²`.
pub fn output_gradient(
    spec: &CellSpec,
    params: &ParamSet,
    state: &CellState,
    y_pred: &Tensor,
    y_true: &Tensor,
) -> Result<(Tensor, ParamSet)> {
    if y_pred.len() != spec.n_out || y_true.len() != spec.n_out {
        return Err(Error::shape(format!(
            "outputs have {} and {} entries, expected {}",
            y_pred.len(),
            y_true.len(),
            spec.n_out
        )));
    }
    if state.h.len() != spec.n_hidden {
        return Err(Error::shape("state does not match spec"));
    }
    let residual = y_pred.sub(y_true)?;
    let w_out = params
        .get("w_out")
        .ok_or_else(|| Error::shape("missing w_out"))?;
    let mut delta = vec![0.0; spec.state_dim()];
    for (row, &r) in w_out.data().chunks_exact(spec.n_hidden).zip(residual.data()) {
        crate::linalg::axpy(r, row, &mut delta[..spec.n_hidden]);
    }
    let grads = ParamSet::new([
        ("b_out".to_string(), residual.clone()),
        ("w_out".to_string(), Tensor::outer(&residual, &state.h)),
    ])?;
    Ok((Tensor::vector(delta), grads))
}

#[cfg(test)]
mod tests;
