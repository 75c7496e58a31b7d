//! `h_t = tanh(W_hh h_{t-1} + W_xh x_t + b_h)`

use super::{affine, CellState, DirectFactor, ParamSet, Source, StepCache};
use crate::linalg::Tensor;

pub(super) fn forward(params: &ParamSet, state: &CellState, x: &[f64]) -> CellState {
    let h: Vec<f64> = affine(params, "w_xh", "w_hh", "b_h", x, state.h.data())
        .into_iter()
        .map(f64::tanh)
        .collect();
    let dact = h.iter().map(|v| 1.0 - v * v).collect();
    CellState {
        h: Tensor::vector(h),
        aux: None,
        cache: Some(StepCache::Vanilla { dact }),
        t: state.t,
    }
}

fn dact(cache: &StepCache) -> &[f64] {
    match cache {
        StepCache::Vanilla { dact } => dact,
        _ => panic!("vanilla cell given a foreign cache"),
    }
}

/// `diag(1 − h_t²) · W_hh`
pub(super) fn jacobian(params: &ParamSet, cache: &StepCache) -> Tensor {
    let d = dact(cache);
    let mut j = params.expect("w_hh").clone();
    for (i, &di) in d.iter().enumerate() {
        j.row_mut(i).iter_mut().for_each(|v| *v *= di);
    }
    j
}

pub(super) fn factors(cache: &StepCache) -> Vec<DirectFactor> {
    let d = dact(cache).to_vec();
    vec![
        DirectFactor { group: "b_h", source: Source::Unit, coefs: d.clone() },
        DirectFactor { group: "w_hh", source: Source::Hidden, coefs: d.clone() },
        DirectFactor { group: "w_xh", source: Source::Input, coefs: d },
    ]
}
