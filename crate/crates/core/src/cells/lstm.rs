//! Standard LSTM without peepholes. State is `[h; c]`:
//!
//! ```text
//! i, f, o = σ(W x + U h + b)      g = tanh(W_g x + U_g h + b_g)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ```

use super::{affine, sigmoid, CellState, DirectFactor, ParamSet, Source, StepCache};
use crate::linalg::Tensor;

pub(super) fn forward(params: &ParamSet, state: &CellState, x: &[f64]) -> CellState {
    let h = state.h.data();
    let c = state.aux.as_ref().expect("lstm state carries c").data();
    let n = h.len();
    let i: Vec<f64> = affine(params, "w_i", "u_i", "b_i", x, h).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = affine(params, "w_f", "u_f", "b_f", x, h).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = affine(params, "w_g", "u_g", "b_g", x, h).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = affine(params, "w_o", "u_o", "b_o", x, h).into_iter().map(sigmoid).collect();
    let c_new: Vec<f64> = (0..n).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let tc: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new = (0..n).map(|k| o[k] * tc[k]).collect();
    CellState {
        h: Tensor::vector(h_new),
        aux: Some(Tensor::vector(c_new)),
        cache: Some(StepCache::Lstm { i, f, g, o, tc }),
        t: state.t,
    }
}

/// Per-unit sensitivities of `c'` and `h'` to each gate pre-activation.
struct Gains {
    /// (∂c'/∂pre, ∂h'/∂pre) for gates i, f, g, o
    ci: Vec<f64>,
    cf: Vec<f64>,
    cg: Vec<f64>,
    /// ∂h'/∂c' = o (1 − tanh²c')
    hc: Vec<f64>,
    /// ∂h'/∂(o pre-activation)
    ho: Vec<f64>,
    f: Vec<f64>,
}

fn gains(prev: &CellState, cache: &StepCache) -> Gains {
    let StepCache::Lstm { i, f, g, o, tc } = cache else {
        panic!("lstm cell given a foreign cache");
    };
    let c_prev = prev.aux.as_ref().expect("lstm state carries c").data();
    let n = i.len();
    let mut out = Gains {
        ci: vec![0.0; n],
        cf: vec![0.0; n],
        cg: vec![0.0; n],
        hc: vec![0.0; n],
        ho: vec![0.0; n],
        f: f.clone(),
    };
    for k in 0..n {
        out.ci[k] = g[k] * i[k] * (1.0 - i[k]);
        out.cf[k] = c_prev[k] * f[k] * (1.0 - f[k]);
        out.cg[k] = i[k] * (1.0 - g[k] * g[k]);
        out.hc[k] = o[k] * (1.0 - tc[k] * tc[k]);
        out.ho[k] = tc[k] * o[k] * (1.0 - o[k]);
    }
    out
}

/// 2n × 2n Jacobian of `[h'; c']` with respect to `[h; c]`.
pub(super) fn jacobian(params: &ParamSet, prev: &CellState, cache: &StepCache) -> Tensor {
    let gn = gains(prev, cache);
    let n = gn.f.len();
    let (ui, uf, ug, uo) = (
        params.expect("u_i"),
        params.expect("u_f"),
        params.expect("u_g"),
        params.expect("u_o"),
    );
    let mut j = Tensor::zeros(&[2 * n, 2 * n]);
    for r in 0..n {
        for k in 0..n {
            let dc_dh = gn.ci[r] * ui.at(r, k) + gn.cf[r] * uf.at(r, k) + gn.cg[r] * ug.at(r, k);
            j.set(n + r, k, dc_dh);
            j.set(r, k, gn.hc[r] * dc_dh + gn.ho[r] * uo.at(r, k));
        }
        j.set(n + r, n + r, gn.f[r]);
        j.set(r, n + r, gn.hc[r] * gn.f[r]);
    }
    j
}

pub(super) fn factors(prev: &CellState, cache: &StepCache) -> Vec<DirectFactor> {
    let gn = gains(prev, cache);
    let n = gn.f.len();
    // Component-major coefficients: h-component first, then c-component.
    let both = |dc: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|k| gn.hc[k] * dc[k]).collect();
        v.extend_from_slice(dc);
        v
    };
    let ci = both(&gn.ci);
    let cf = both(&gn.cf);
    let cg = both(&gn.cg);
    let mut co = gn.ho.clone();
    co.extend(std::iter::repeat(0.0).take(n));
    let mut out = Vec::with_capacity(12);
    for (gate, coefs) in [("i", ci), ("f", cf), ("g", cg), ("o", co)] {
        let names: [&'static str; 3] = match gate {
            "i" => ["b_i", "u_i", "w_i"],
            "f" => ["b_f", "u_f", "w_f"],
            "g" => ["b_g", "u_g", "w_g"],
            _ => ["b_o", "u_o", "w_o"],
        };
        out.push(DirectFactor { group: names[0], source: Source::Unit, coefs: coefs.clone() });
        out.push(DirectFactor { group: names[1], source: Source::Hidden, coefs: coefs.clone() });
        out.push(DirectFactor { group: names[2], source: Source::Input, coefs });
    }
    out
}
