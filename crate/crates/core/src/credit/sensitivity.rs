use crate::cells::{CellSpec, DirectFactor, Source};
use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// Storage layout of a [`Sensitivity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `state_dim × group_size` per group: every state entry against every parameter.
    Dense,
    /// `components × group_size` per group: each parameter against the state
    /// components of the unit that owns it. Exact for immediate derivatives,
    /// which never reach other units.
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGroup {
    pub name: &'static str,
    pub source: Source,
    /// Columns per unit row of the parameter group (1 for biases).
    pub cols: usize,
    pub tensor: Tensor,
}

/// `∂s/∂θ` for the state-map parameter groups (RTRL's `P_t`, a trace `e_t`,
/// or an immediate derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    layout: Layout,
    n_hidden: usize,
    components: usize,
    groups: Vec<SensitivityGroup>,
}

impl Sensitivity {
    fn zeros(spec: &CellSpec, layout: Layout) -> Self {
        let n = spec.n_hidden;
        let components = spec.arch.components();
        let groups = spec
            .arch
            .state_groups()
            .iter()
            .map(|&(name, src)| {
                let cols = spec.source_len(src);
                let rows = match layout {
                    Layout::Dense => components * n,
                    Layout::Local => components,
                };
                SensitivityGroup {
                    name,
                    source: src,
                    cols,
                    tensor: Tensor::zeros(&[rows, n * cols]),
                }
            })
            .collect();
        Sensitivity {
            layout,
            n_hidden: n,
            components,
            groups,
        }
    }

    pub fn dense_zeros(spec: &CellSpec) -> Self {
        Self::zeros(spec, Layout::Dense)
    }

    pub fn local_zeros(spec: &CellSpec) -> Self {
        Self::zeros(spec, Layout::Local)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn state_dim(&self) -> usize {
        self.n_hidden * self.components
    }

    /// Number of stored scalars.
    pub fn element_count(&self) -> usize {
        self.groups.iter().map(|g| g.tensor.len()).sum()
    }

    /// |θ_state| covered by this sensitivity.
    pub fn param_count(&self) -> usize {
        self.groups.iter().map(|g| g.tensor.cols()).sum()
    }

    pub fn groups(&self) -> &[SensitivityGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [SensitivityGroup] {
        &mut self.groups
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.groups.iter().find(|g| g.name == name).map(|g| &g.tensor)
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.tensor.is_finite())
    }

    pub fn conforms(&self, other: &Sensitivity) -> bool {
        self.n_hidden == other.n_hidden
            && self.components == other.components
            && self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.name == b.name && a.tensor.cols() == b.tensor.cols())
    }

    pub(crate) fn expect_conforms(&self, other: &Sensitivity, op: &str) -> Result<()> {
        if self.conforms(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{op}: sensitivities cover different parameter groups")))
        }
    }

    /// Writes the immediate derivative from its factored form. Local layout only.
    pub(crate) fn fill_from_factors(
        &mut self,
        spec: &CellSpec,
        factors: &[DirectFactor],
        h_prev: &[f64],
        x: &[f64],
    ) -> Result<()> {
        if self.layout != Layout::Local || self.n_hidden != spec.n_hidden || factors.len() != self.groups.len() {
            return Err(Error::shape("immediate derivative needs a local buffer for this cell"));
        }
        let n = self.n_hidden;
        let unit = [1.0];
        for (g, f) in self.groups.iter_mut().zip(factors) {
            debug_assert_eq!(g.name, f.group);
            let src: &[f64] = match f.source {
                Source::Hidden => h_prev,
                Source::Input => x,
                Source::Unit => &unit,
            };
            let cols = g.cols;
            let data = g.tensor.data_mut();
            let width = n * cols;
            for c in 0..self.components {
                let row = &mut data[c * width..(c + 1) * width];
                for i in 0..n {
                    let coef = f.coefs[c * n + i];
                    row[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(o, s)| *o = coef * s);
                }
            }
        }
        Ok(())
    }

    /// Dense copy; local entries are scattered onto their owning unit's rows.
    pub fn to_dense(&self) -> Sensitivity {
        match self.layout {
            Layout::Dense => self.clone(),
            Layout::Local => {
                let mut out = self.clone();
                let n = self.n_hidden;
                let sd = self.state_dim();
                for g in out.groups.iter_mut() {
                    let width = g.tensor.cols();
                    let mut dense = Tensor::zeros(&[sd, width]);
                    scatter_add_local(&g.tensor, g.cols, n, self.components, dense.data_mut());
                    g.tensor = dense;
                }
                out.layout = Layout::Dense;
                out
            }
        }
    }

    /// `self += alpha * other`, scattering when `other` is local and `self` dense.
    pub fn add_scaled(&mut self, alpha: f64, other: &Sensitivity) -> Result<()> {
        self.expect_conforms(other, "add_scaled")?;
        let (n, comps) = (self.n_hidden, self.components);
        match (self.layout, other.layout) {
            (a, b) if a == b => {
                for (g, o) in self.groups.iter_mut().zip(&other.groups) {
                    crate::linalg::axpy(alpha, o.tensor.data(), g.tensor.data_mut());
                }
            }
            (Layout::Dense, Layout::Local) => {
                for (g, o) in self.groups.iter_mut().zip(&other.groups) {
                    if alpha == 1.0 {
                        scatter_add_local(&o.tensor, o.cols, n, comps, g.tensor.data_mut());
                    } else {
                        scatter_add_local(&o.tensor.scale(alpha), o.cols, n, comps, g.tensor.data_mut());
                    }
                }
            }
            _ => {
                return Err(Error::shape("cannot accumulate a dense sensitivity into a local one"));
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.groups.iter_mut().for_each(|g| g.tensor.scale_in_place(s));
    }

    /// Scales every entry and reports whether all results are finite, in one pass.
    pub(crate) fn scale_checked(&mut self, s: f64) -> bool {
        let mut finite = true;
        for g in &mut self.groups {
            for v in g.tensor.data_mut() {
                *v *= s;
                finite &= v.is_finite();
            }
        }
        finite
    }

    pub fn fill_zero(&mut self) {
        self.groups.iter_mut().for_each(|g| g.tensor.fill(0.0));
    }

    /// All entries as one dense vector (state-major within each group).
    pub fn flatten_dense(&self) -> Vec<f64> {
        let d = self.to_dense();
        d.groups.iter().flat_map(|g| g.tensor.data().iter().copied()).collect()
    }

    pub fn norm2(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.tensor.sum_sq())
            .sum::<f64>()
            .sqrt()
    }
}

/// Adds a local `components × (n·cols)` tensor into a dense `(components·n) × (n·cols)` buffer.
fn scatter_add_local(local: &Tensor, cols: usize, n: usize, components: usize, dense: &mut [f64]) {
    let width = n * cols;
    let l = local.data();
    for c in 0..components {
        for i in 0..n {
            let row = (c * n + i) * width;
            let span = i * cols..(i + 1) * cols;
            dense[row + span.start..row + span.end]
                .iter_mut()
                .zip(&l[c * width + span.start..c * width + span.end])
                .for_each(|(d, v)| *d += v);
        }
    }
}
