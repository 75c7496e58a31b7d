//! Gated recurrent unit with the reset gate applied after the recurrent
//! product:
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! c = tanh(W_n x + b_n + r ⊙ (U_n h))
//! h' = (1 − z) ⊙ h + z ⊙ c
//! ```

use super::{affine, sigmoid, CellState, DirectFactor, ParamSet, Source, StepCache};
use crate::linalg::{matvec_into, Tensor};

pub(super) fn forward(params: &ParamSet, state: &CellState, x: &[f64]) -> CellState {
    let h = state.h.data();
    let n = h.len();
    let z: Vec<f64> = affine(params, "w_z", "u_z", "b_z", x, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = affine(params, "w_r", "u_r", "b_r", x, h).into_iter().map(sigmoid).collect();
    let mut q = vec![0.0; n];
    matvec_into(params.expect("u_n").data(), h, &mut q);
    let mut c = vec![0.0; n];
    matvec_into(params.expect("w_n").data(), x, &mut c);
    let b_n = params.expect("b_n").data();
    for i in 0..n {
        c[i] = (c[i] + b_n[i] + r[i] * q[i]).tanh();
    }
    let h_new = (0..n).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect();
    CellState {
        h: Tensor::vector(h_new),
        aux: None,
        cache: Some(StepCache::Gru { z, r, c, q }),
        t: state.t,
    }
}

struct Gains {
    /// ∂h'/∂(z pre-activation)
    z: Vec<f64>,
    /// ∂h'/∂(r pre-activation)
    r: Vec<f64>,
    /// ∂h'/∂(candidate pre-activation)
    c: Vec<f64>,
    /// ∂h'/∂(U_n h)
    q: Vec<f64>,
    /// ∂h'/∂h along the direct interpolation path
    carry: Vec<f64>,
}

fn gains(h_prev: &[f64], cache: &StepCache) -> Gains {
    let StepCache::Gru { z, r, c, q } = cache else {
        panic!("gru cell given a foreign cache");
    };
    let n = h_prev.len();
    let mut g = Gains {
        z: vec![0.0; n],
        r: vec![0.0; n],
        c: vec![0.0; n],
        q: vec![0.0; n],
        carry: vec![0.0; n],
    };
    for i in 0..n {
        g.z[i] = (c[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
        g.c[i] = z[i] * (1.0 - c[i] * c[i]);
        g.r[i] = g.c[i] * q[i] * r[i] * (1.0 - r[i]);
        g.q[i] = g.c[i] * r[i];
        g.carry[i] = 1.0 - z[i];
    }
    g
}

/// `diag(1 − z) + diag(g_z) U_z + diag(g_r) U_r + diag(g_q) U_n`
pub(super) fn jacobian(params: &ParamSet, prev: &CellState, cache: &StepCache) -> Tensor {
    let g = gains(prev.h.data(), cache);
    let n = g.z.len();
    let (uz, ur, un) = (params.expect("u_z"), params.expect("u_r"), params.expect("u_n"));
    let mut j = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let row = j.row_mut(i);
        for k in 0..n {
            row[k] = g.z[i] * uz.at(i, k) + g.r[i] * ur.at(i, k) + g.q[i] * un.at(i, k);
        }
        row[i] += g.carry[i];
    }
    j
}

pub(super) fn factors(prev: &CellState, cache: &StepCache) -> Vec<DirectFactor> {
    let g = gains(prev.h.data(), cache);
    vec![
        DirectFactor { group: "b_z", source: Source::Unit, coefs: g.z.clone() },
        DirectFactor { group: "u_z", source: Source::Hidden, coefs: g.z.clone() },
        DirectFactor { group: "w_z", source: Source::Input, coefs: g.z },
        DirectFactor { group: "b_r", source: Source::Unit, coefs: g.r.clone() },
        DirectFactor { group: "u_r", source: Source::Hidden, coefs: g.r.clone() },
        DirectFactor { group: "w_r", source: Source::Input, coefs: g.r },
        DirectFactor { group: "b_n", source: Source::Unit, coefs: g.c.clone() },
        DirectFactor { group: "w_n", source: Source::Input, coefs: g.c },
        DirectFactor { group: "u_n", source: Source::Hidden, coefs: g.q },
    ]
}
