//! The six optimizer variants, sharing one per-group moment record.

use serde::{Deserialize, Serialize};

use crate::cells::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimMethod {
    Sgd,
    SgdMomentum,
    #[serde(alias = "adam_full")]
    Adam,
    AdamB1Only,
    AdamB2Only,
    Rmsprop,
}

impl OptimMethod {
    pub const ALL: [OptimMethod; 6] = [
        OptimMethod::Sgd,
        OptimMethod::SgdMomentum,
        OptimMethod::AdamB1Only,
        OptimMethod::Rmsprop,
        OptimMethod::AdamB2Only,
        OptimMethod::Adam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimMethod::Sgd => "sgd",
            OptimMethod::SgdMomentum => "sgd_momentum",
            OptimMethod::Adam => "adam",
            OptimMethod::AdamB1Only => "adam_b1_only",
            OptimMethod::AdamB2Only => "adam_b2_only",
            OptimMethod::Rmsprop => "rmsprop",
        }
    }

    /// Whether the update divides by a running second moment.
    pub fn has_second_moment(self) -> bool {
        matches!(self, OptimMethod::Adam | OptimMethod::AdamB2Only | OptimMethod::Rmsprop)
    }

    /// Moment tensors kept per parameter (0, 1 or 2).
    pub fn state_buffers(self) -> usize {
        match self {
            OptimMethod::Sgd => 0,
            OptimMethod::SgdMomentum | OptimMethod::Rmsprop => 1,
            OptimMethod::Adam | OptimMethod::AdamB1Only | OptimMethod::AdamB2Only => 2,
        }
    }

    fn keeps_first_moment(self) -> bool {
        matches!(
            self,
            OptimMethod::SgdMomentum | OptimMethod::Adam | OptimMethod::AdamB1Only | OptimMethod::AdamB2Only
        )
    }

    fn keeps_second_moment(self) -> bool {
        matches!(
            self,
            OptimMethod::Rmsprop | OptimMethod::Adam | OptimMethod::AdamB1Only | OptimMethod::AdamB2Only
        )
    }
}

impl std::fmt::Display for OptimMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OptimMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or_else(|| (s == "adam_full").then_some(OptimMethod::Adam))
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

/// Optimizer hyperparameters. Fields the method does not use are kept so a
/// config round-trips unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    pub method: OptimMethod,
    pub lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn alpha() -> f64 {
        0.99
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn momentum() -> f64 {
        0.9
    }
}

impl OptimSpec {
    pub fn new(method: OptimMethod, lr: f64) -> Self {
        OptimSpec {
            method,
            lr,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            alpha: defaults::alpha(),
            eps: defaults::eps(),
            momentum: defaults::momentum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        unit("alpha", self.alpha)?;
        unit("momentum", self.momentum)
    }
}

/// Per-group moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub method: OptimMethod,
    /// First moment (momentum buffer for heavy-ball SGD).
    pub m: Option<ParamSet>,
    /// Second moment.
    pub v: Option<ParamSet>,
    pub t: u64,
    template: ParamSet,
}

impl OptimState {
    /// Zeroed state for `spec` over parameters shaped like `params`.
    pub fn new(spec: &OptimSpec, params: &ParamSet) -> Self {
        let template = params.zeros_like();
        OptimState {
            method: spec.method,
            m: spec.method.keeps_first_moment().then(|| template.clone()),
            v: spec.method.keeps_second_moment().then(|| template.clone()),
            t: 0,
            template,
        }
    }

    pub fn allocated_elements(&self) -> usize {
        self.m.as_ref().map_or(0, |m| m.param_count()) + self.v.as_ref().map_or(0, |v| v.param_count())
    }
}

/// Discards all moments and returns a fresh state for `new_spec`; parameters are untouched.
pub fn switch_optimizer(old: &OptimState, new_spec: &OptimSpec) -> OptimState {
    OptimState::new(new_spec, &old.template)
}

/// One update of `params` from `grads`.
pub fn step(spec: &OptimSpec, state: &mut OptimState, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
    if state.method != spec.method {
        return Err(Error::param(format!(
            "optimizer state is for {}, spec is {}",
            state.method, spec.method
        )));
    }
    if !params.conforms(grads) || !params.conforms(&state.template) {
        return Err(Error::shape("gradients and optimizer state must cover every parameter group"));
    }
    state.t += 1;
    let t = state.t as i32;
    let lr = spec.lr;
    let (b1, b2, eps) = (spec.beta1, spec.beta2, spec.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);

    for (gi, g) in grads.iter().enumerate() {
        let g = g.tensor.data();
        let p = params.iter_mut().nth(gi).expect("conforming sets").tensor.data_mut();
        let m = state
            .m
            .as_mut()
            .map(|m| m.iter_mut().nth(gi).expect("conforming sets").tensor.data_mut());
        let v = state
            .v
            .as_mut()
            .map(|v| v.iter_mut().nth(gi).expect("conforming sets").tensor.data_mut());
        match spec.method {
            OptimMethod::Sgd => {
                for (pk, gk) in p.iter_mut().zip(g) {
                    *pk -= lr * gk;
                }
            }
            OptimMethod::SgdMomentum => {
                let m = m.expect("momentum buffer");
                for k in 0..g.len() {
                    m[k] = spec.momentum * m[k] + g[k];
                    p[k] -= lr * m[k];
                }
            }
            OptimMethod::Rmsprop => {
                let v = v.expect("second moment");
                let a = spec.alpha;
                for k in 0..g.len() {
                    v[k] = a * v[k] + (1.0 - a) * g[k] * g[k];
                    p[k] -= lr * g[k] / (v[k].sqrt() + eps);
                }
            }
            OptimMethod::Adam | OptimMethod::AdamB1Only | OptimMethod::AdamB2Only => {
                let m = m.expect("first moment");
                let v = v.expect("second moment");
                for k in 0..g.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    let v_hat = v[k] / bc2;
                    p[k] -= match spec.method {
                        OptimMethod::Adam => lr * (m[k] / bc1) / (v_hat.sqrt() + eps),
                        OptimMethod::AdamB1Only => lr * (m[k] / bc1),
                        _ => lr * g[k] / (v_hat.sqrt() + eps),
                    };
                }
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric {
            step: state.t as usize,
            what: "parameter update".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Tensor;
    use proptest::prelude::*;

    fn scalar_set(v: f64) -> ParamSet {
        ParamSet::new([("w".to_string(), Tensor::scalar(v))]).unwrap()
    }

    fn run(spec: &OptimSpec, gs: &[f64]) -> Vec<f64> {
        let mut p = scalar_set(0.0);
        let mut st = OptimState::new(spec, &p);
        gs.iter()
            .map(|&g| {
                step(spec, &mut st, &mut p, &scalar_set(g)).unwrap();
                p.expect("w").data()[0]
            })
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for m in OptimMethod::ALL {
            let spec = OptimSpec::new(m, 1e-2);
            let mut p = scalar_set(0.7);
            let mut st = OptimState::new(&spec, &p);
            step(&spec, &mut st, &mut p, &scalar_set(0.0)).unwrap();
            assert_eq!(p.expect("w").data()[0], 0.7, "{m}");
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        let spec = OptimSpec::new(OptimMethod::Adam, 1e-3);
        let after = run(&spec, &[1.0])[0];
        assert!((after - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_is_scale_free() {
        let spec = OptimSpec::new(OptimMethod::Adam, 1e-3);
        let a = run(&spec, &[1.0])[0];
        let b = run(&spec, &[1e-4])[0];
        assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn b1_only_with_zero_beta1_is_sgd() {
        let gs = [0.3, -1.2, 0.05, 2.0, -0.7];
        let mut b1 = OptimSpec::new(OptimMethod::AdamB1Only, 1e-2);
        b1.beta1 = 0.0;
        let sgd = OptimSpec::new(OptimMethod::Sgd, 1e-2);
        assert_eq!(run(&b1, &gs), run(&sgd, &gs));
    }

    #[test]
    fn rmsprop_effective_window() {
        let spec = OptimSpec::new(OptimMethod::Rmsprop, 1e-3);
        let mut p = scalar_set(0.0);
        let mut st = OptimState::new(&spec, &p);
        for _ in 0..100 {
            step(&spec, &mut st, &mut p, &scalar_set(2.0)).unwrap();
        }
        let v = st.v.as_ref().unwrap().expect("w").data()[0];
        let expected = (1.0 - 0.99f64.powi(100)) * 4.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((v / 4.0 - 0.634).abs() < 1e-3);
    }

    #[test]
    fn switch_discards_moments() {
        let adam = OptimSpec::new(OptimMethod::Adam, 1e-3);
        let mut p = scalar_set(0.0);
        let mut st = OptimState::new(&adam, &p);
        step(&adam, &mut st, &mut p, &scalar_set(1.0)).unwrap();
        let sgd = OptimSpec::new(OptimMethod::Sgd, 1e-3);
        let fresh = switch_optimizer(&st, &sgd);
        assert_eq!(fresh.t, 0);
        assert!(fresh.m.is_none() && fresh.v.is_none());
        // Same spec again: equals a cold start.
        let again = switch_optimizer(&st, &adam);
        assert_eq!(again, OptimState::new(&adam, &p));
    }

    #[test]
    fn switch_to_b2_only_uses_raw_gradient() {
        let adam = OptimSpec::new(OptimMethod::Adam, 1e-3);
        let b2 = OptimSpec::new(OptimMethod::AdamB2Only, 1e-3);
        let mut p = scalar_set(0.0);
        let mut st = OptimState::new(&adam, &p);
        for g in [1.0, 1.0, 1.0] {
            step(&adam, &mut st, &mut p, &scalar_set(g)).unwrap();
        }
        let mut st = switch_optimizer(&st, &b2);
        let before = p.expect("w").data()[0];
        step(&b2, &mut st, &mut p, &scalar_set(0.5)).unwrap();
        // v̂ after one step is g², so the step is lr·g/(|g| + ε).
        let delta = before - p.expect("w").data()[0];
        assert!((delta - 1e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let adam = OptimSpec::new(OptimMethod::Adam, 1e-3);
        let sgd = OptimSpec::new(OptimMethod::Sgd, 1e-3);
        let mut p = scalar_set(0.0);
        let mut st = OptimState::new(&adam, &p);
        assert!(step(&sgd, &mut st, &mut p, &scalar_set(1.0)).is_err());
        let two = ParamSet::new([("w".to_string(), Tensor::vector(vec![1.0, 2.0]))]).unwrap();
        assert!(matches!(step(&adam, &mut st, &mut p, &two), Err(Error::Shape(_))));
    }

    #[test]
    fn sgd_state_is_empty() {
        let p = scalar_set(0.0);
        assert_eq!(OptimState::new(&OptimSpec::new(OptimMethod::Sgd, 0.1), &p).allocated_elements(), 0);
        assert_eq!(OptimState::new(&OptimSpec::new(OptimMethod::Adam, 0.1), &p).allocated_elements(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Second-moment methods are invariant to a global gradient scale up to
        /// the ε term; SGD scales exactly.
        #[test]
        fn second_moment_normalizes_scale(gs in prop::collection::vec(-1.0f64..1.0, 1..40)) {
            prop_assume!(gs.iter().all(|g| g.abs() > 1e-3));
            let c = 100.0;
            let scaled: Vec<f64> = gs.iter().map(|g| g * c).collect();
            for m in [OptimMethod::AdamB2Only, OptimMethod::Rmsprop] {
                let spec = OptimSpec::new(m, 1e-3);
                let a = run(&spec, &gs);
                let b = run(&spec, &scaled);
                // Per step the ε perturbation is at most lr·ε·|g|/v̂; summed over the run.
                let mut v = 0.0f64;
                let mut bound = 0.0;
                for (k, g) in gs.iter().enumerate() {
                    let (decay, corr) = match m {
                        OptimMethod::Rmsprop => (0.99, 1.0),
                        _ => (0.999, 1.0 - 0.999f64.powi(k as i32 + 1)),
                    };
                    v = decay * v + (1.0 - decay) * g * g;
                    bound += 1e-3 * 1e-8 * g.abs() / (v / corr);
                    prop_assert!((a[k] - b[k]).abs() <= bound * 1.01 + 1e-14, "{m} step {k}");
                }
            }
            let sgd = OptimSpec::new(OptimMethod::Sgd, 1e-3);
            let a = run(&sgd, &gs);
            let b = run(&sgd, &scaled);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - c * x).abs() <= 1e-12 * y.abs().max(1e-12));
            }
        }

        #[test]
        fn second_moment_is_bounded(gs in prop::collection::vec(-5.0f64..5.0, 1..60)) {
            let spec = OptimSpec::new(OptimMethod::Adam, 1e-3);
            let mut p = scalar_set(0.0);
            let mut st = OptimState::new(&spec, &p);
            let mut sup = 0.0f64;
            for g in gs {
                sup = sup.max(g * g);
                step(&spec, &mut st, &mut p, &scalar_set(g)).unwrap();
                let v = st.v.as_ref().unwrap().expect("w").data()[0];
                prop_assert!(v >= 0.0 && v <= sup * (1.0 + 1e-12));
            }
        }
    }
}
