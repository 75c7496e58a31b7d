//! Shared helpers for unit tests.

use crate::cells::{self, CellSpec, CellState, ParamSet};
use crate::linalg::{Rng, Tensor};

/// Parameters with random biases too, so gates sit away from their init values.
pub fn random_params(spec: &CellSpec, rng: &mut Rng) -> ParamSet {
    let mut p = spec.init_params(rng).unwrap();
    for g in p.iter_mut() {
        if g.name.starts_with('b') {
            g.tensor.data_mut().iter_mut().for_each(|v| *v += 0.5 * rng.normal());
        }
    }
    p
}

pub fn random_state(spec: &CellSpec, rng: &mut Rng) -> CellState {
    let n = spec.n_hidden;
    let mut s: Vec<f64> = (0..n).map(|_| 1.8 * rng.uniform() - 0.9).collect();
    if spec.state_dim() > n {
        s.extend((0..n).map(|_| 4.0 * rng.uniform() - 2.0));
    }
    CellState::from_state_vector(spec, &s).unwrap()
}

pub fn random_input(spec: &CellSpec, rng: &mut Rng) -> Tensor {
    Tensor::vector((0..spec.n_in).map(|_| rng.normal()).collect())
}

/// New state vector after one step from the state vector `s`.
pub fn step_state(spec: &CellSpec, params: &ParamSet, s: &[f64], x: &Tensor) -> Vec<f64> {
    let prev = CellState::from_state_vector(spec, s).unwrap();
    cells::forward(spec, params, &prev, x).unwrap().0.state_vector()
}

/// ‖a − b‖ / ‖b‖ (absolute when ‖b‖ is tiny).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / nb.max(1e-8)
}
