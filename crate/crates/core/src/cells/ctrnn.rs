//! Leaky continuous-time RNN, Euler-discretized:
//! `h_t = h_{t-1} + κ(−h_{t-1} + tanh(W_hh h_{t-1} + W_xh x_t + b_h))`, `κ = dt/τ`.

use super::{affine, CellSpec, CellState, DirectFactor, ParamSet, Source, StepCache};
use crate::linalg::Tensor;

pub(super) fn forward(spec: &CellSpec, params: &ParamSet, state: &CellState, x: &[f64]) -> CellState {
    let k = spec.leak();
    let u: Vec<f64> = affine(params, "w_xh", "w_hh", "b_h", x, state.h.data())
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h = state
        .h
        .data()
        .iter()
        .zip(&u)
        .map(|(&hp, &ui)| hp + k * (ui - hp))
        .collect();
    CellState {
        h: Tensor::vector(h),
        aux: None,
        cache: Some(StepCache::Ctrnn { u }),
        t: state.t,
    }
}

/// `κ·(1 − u²)`, the sensitivity of `h_t` to the tanh pre-activation.
fn gain(spec: &CellSpec, cache: &StepCache) -> Vec<f64> {
    let k = spec.leak();
    match cache {
        StepCache::Ctrnn { u } => u.iter().map(|v| k * (1.0 - v * v)).collect(),
        _ => panic!("ctrnn cell given a foreign cache"),
    }
}

/// `(1 − κ) I + κ · diag(1 − u²) · W_hh`
pub(super) fn jacobian(spec: &CellSpec, params: &ParamSet, cache: &StepCache) -> Tensor {
    let g = gain(spec, cache);
    let mut j = params.expect("w_hh").clone();
    for (i, &gi) in g.iter().enumerate() {
        j.row_mut(i).iter_mut().for_each(|v| *v *= gi);
        let d = j.at(i, i) + (1.0 - spec.leak());
        j.set(i, i, d);
    }
    j
}

pub(super) fn factors(spec: &CellSpec, cache: &StepCache) -> Vec<DirectFactor> {
    let g = gain(spec, cache);
    vec![
        DirectFactor { group: "b_h", source: Source::Unit, coefs: g.clone() },
        DirectFactor { group: "w_hh", source: Source::Hidden, coefs: g.clone() },
        DirectFactor { group: "w_xh", source: Source::Input, coefs: g },
    ]
}
