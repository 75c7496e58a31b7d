use super::*;
use crate::testutil::{random_input, random_params, random_state, rel_err, step_state};

const EPS: f64 = 1e-6;

fn spec(arch: Architecture, n: usize) -> CellSpec {
    CellSpec::new(arch, 3, n, 2)
}

fn fd_jacobian(spec: &CellSpec, params: &ParamSet, s: &[f64], x: &Tensor) -> Vec<f64> {
    let sd = s.len();
    let mut jac = vec![0.0; sd * sd];
    for j in 0..sd {
        let mut plus = s.to_vec();
        let mut minus = s.to_vec();
        plus[j] += EPS;
        minus[j] -= EPS;
        let (a, b) = (step_state(spec, params, &plus, x), step_state(spec, params, &minus, x));
        for i in 0..sd {
            jac[i * sd + j] = (a[i] - b[i]) / (2.0 * EPS);
        }
    }
    jac
}

/// Central differences of the new state against every state-map parameter,
/// laid out like the dense sensitivity (state rows, flat parameter columns).
fn fd_direct(spec: &CellSpec, params: &ParamSet, s: &[f64], x: &Tensor) -> Vec<f64> {
    let sd = s.len();
    let mut out = Vec::new();
    for &(name, _) in spec.arch.state_groups() {
        let len = params.get(name).unwrap().len();
        let mut block = vec![0.0; sd * len];
        for k in 0..len {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[k] += EPS;
            let a = step_state(spec, &p, s, x);
            p.get_mut(name).unwrap().data_mut()[k] -= 2.0 * EPS;
            let b = step_state(spec, &p, s, x);
            for i in 0..sd {
                block[i * len + k] = (a[i] - b[i]) / (2.0 * EPS);
            }
        }
        out.extend(block);
    }
    out
}

#[test]
fn zero_network_stays_at_zero() {
    for arch in Architecture::ALL {
        let spec = spec(arch, 4);
        let mut params = spec.init_params(&mut Rng::new(1)).unwrap();
        params.iter_mut().for_each(|g| g.tensor.fill(0.0));
        let state = spec.initial_state();
        let (new, y) = forward(&spec, &params, &state, &Tensor::vector(vec![0.3, -1.0, 2.0])).unwrap();
        if arch == Architecture::Lstm {
            // c' = σ(0)·c + σ(0)·tanh(0) = 0, h' = σ(0)·tanh(0) = 0
            assert!(new.state_vector().iter().all(|&v| v == 0.0));
        } else {
            assert!(new.h.data().iter().all(|&v| v == 0.0), "{arch}");
        }
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(new.t, 1);
    }
}

#[test]
fn scalar_vanilla_matches_hand_computation() {
    let spec = CellSpec::new(Architecture::Vanilla, 1, 1, 1);
    let params = ParamSet::new([
        ("b_h".to_string(), Tensor::vector(vec![0.0])),
        ("b_out".to_string(), Tensor::vector(vec![0.0])),
        ("w_hh".to_string(), Tensor::from_rows(&[&[0.5]]).unwrap()),
        ("w_out".to_string(), Tensor::from_rows(&[&[1.0]]).unwrap()),
        ("w_xh".to_string(), Tensor::from_rows(&[&[0.0]]).unwrap()),
    ])
    .unwrap();
    let prev = CellState::from_state_vector(&spec, &[1.0]).unwrap();
    let (new, _) = forward(&spec, &params, &prev, &Tensor::vector(vec![0.0])).unwrap();
    let h = new.h.data()[0];
    assert!((h - 0.5f64.tanh()).abs() < 1e-15);
    assert!((h - 0.462_117_157_260_009_7).abs() < 1e-12);
    let j = state_jacobian(&spec, &params, &prev, &new, &Tensor::vector(vec![0.0])).unwrap();
    assert!((j.data()[0] - (1.0 - h * h) * 0.5).abs() < 1e-15);
}

#[test]
fn saturated_gru_update_gate_reaches_endpoints() {
    let spec = spec(Architecture::Gru, 3);
    let mut rng = Rng::new(4);
    let prev = random_state(&spec, &mut rng);
    let x = random_input(&spec, &mut rng);
    for (bias, keeps_state) in [(-30.0, true), (30.0, false)] {
        let mut params = random_params(&spec, &mut rng);
        params.get_mut("b_z").unwrap().fill(bias);
        params.get_mut("u_z").unwrap().fill(0.0);
        params.get_mut("w_z").unwrap().fill(0.0);
        let (new, _) = forward(&spec, &params, &prev, &x).unwrap();
        let Some(StepCache::Gru { c, .. }) = &new.cache else { panic!("no GRU cache") };
        let target: &[f64] = if keeps_state { prev.h.data() } else { c };
        for (a, b) in new.h.data().iter().zip(target) {
            assert!((a - b).abs() < 1e-9, "bias {bias}: {a} vs {b}");
        }
    }
}

#[test]
fn ctrnn_full_leak_with_zero_recurrence_has_zero_jacobian() {
    let mut spec = spec(Architecture::Ctrnn, 5);
    spec.ctrnn_tau = 1.0;
    let mut rng = Rng::new(8);
    let mut params = random_params(&spec, &mut rng);
    params.get_mut("w_hh").unwrap().fill(0.0);
    let prev = random_state(&spec, &mut rng);
    let x = random_input(&spec, &mut rng);
    let (new, _) = forward(&spec, &params, &prev, &x).unwrap();
    let j = state_jacobian(&spec, &params, &prev, &new, &x).unwrap();
    assert!(j.data().iter().all(|&v| v == 0.0));
}

#[test]
fn ctrnn_default_leak() {
    let spec = spec(Architecture::Ctrnn, 2);
    assert_eq!(spec.leak(), 0.1);
    let mut bad = spec;
    bad.ctrnn_dt = 20.0;
    assert!(bad.validate().is_err());
}

#[test]
fn jacobian_matches_finite_differences() {
    for arch in Architecture::ALL {
        for n in [2, 6] {
            let spec = spec(arch, n);
            let mut rng = Rng::stream(17, n as u64 * 10 + arch.tag() as u64);
            for trial in 0..20 {
                let params = random_params(&spec, &mut rng);
                let prev = random_state(&spec, &mut rng);
                let x = random_input(&spec, &mut rng);
                let (new, _) = forward(&spec, &params, &prev, &x).unwrap();
                let j = state_jacobian(&spec, &params, &prev, &new, &x).unwrap();
                assert_eq!(j.dims(), [spec.state_dim(), spec.state_dim()]);
                let fd = fd_jacobian(&spec, &params, &prev.state_vector(), &x);
                let err = rel_err(j.data(), &fd);
                assert!(err < 1e-6, "{arch} n={n} trial {trial}: rel err {err:e}");
            }
        }
    }
}

#[test]
fn immediate_derivative_matches_finite_differences() {
    for arch in Architecture::ALL {
        for n in [2, 6] {
            let spec = spec(arch, n);
            let mut rng = Rng::stream(23, n as u64 * 10 + arch.tag() as u64);
            for trial in 0..20 {
                let params = random_params(&spec, &mut rng);
                let prev = random_state(&spec, &mut rng);
                let x = random_input(&spec, &mut rng);
                let (new, _) = forward(&spec, &params, &prev, &x).unwrap();
                let d = immediate_derivative(&spec, &params, &prev, &new, &x).unwrap();
                assert_eq!(d.param_count(), spec.state_param_count());
                let fd = fd_direct(&spec, &params, &prev.state_vector(), &x);
                let err = rel_err(&d.flatten_dense(), &fd);
                assert!(err < 1e-6, "{arch} n={n} trial {trial}: rel err {err:e}");
            }
        }
    }
}

#[test]
fn output_gradient_matches_finite_differences() {
    for arch in Architecture::ALL {
        let spec = spec(arch, 4);
        let mut rng = Rng::new(31);
        let params = random_params(&spec, &mut rng);
        let state = random_state(&spec, &mut rng);
        let target = Tensor::vector(vec![0.3, -0.8]);
        let loss = |p: &ParamSet, h: &Tensor| {
            let y = readout(p, h);
            0.5 * y.sub(&target).unwrap().sum_sq()
        };
        let y = readout(&params, &state.h);
        let (delta, grads) = output_gradient(&spec, &params, &state, &y, &target).unwrap();
        assert_eq!(delta.len(), spec.state_dim());
        for i in 0..spec.n_hidden {
            let mut hp = state.h.clone();
            hp.data_mut()[i] += EPS;
            let mut hm = state.h.clone();
            hm.data_mut()[i] -= EPS;
            let fd = (loss(&params, &hp) - loss(&params, &hm)) / (2.0 * EPS);
            assert!((delta.data()[i] - fd).abs() < 1e-8);
        }
        assert!(delta.data()[spec.n_hidden..].iter().all(|&v| v == 0.0));
        for name in OUTPUT_GROUPS {
            let g = grads.get(name).unwrap();
            for k in 0..g.len() {
                let mut p = params.clone();
                p.get_mut(name).unwrap().data_mut()[k] += EPS;
                let a = loss(&p, &state.h);
                p.get_mut(name).unwrap().data_mut()[k] -= 2.0 * EPS;
                let b = loss(&p, &state.h);
                assert!((g.data()[k] - (a - b) / (2.0 * EPS)).abs() < 1e-8, "{name}[{k}]");
            }
        }
    }
}

#[test]
fn states_stay_bounded_under_large_inputs() {
    for arch in Architecture::ALL {
        let spec = spec(arch, 8);
        let mut rng = Rng::new(5);
        let params = random_params(&spec, &mut rng);
        let mut state = spec.initial_state();
        for _ in 0..500 {
            let x = random_input(&spec, &mut rng).scale(50.0);
            state = forward(&spec, &params, &state, &x).unwrap().0;
            assert!(state.h.max_abs() <= 1.0, "{arch}");
        }
    }
}

#[test]
fn shape_errors() {
    let spec = spec(Architecture::Vanilla, 4);
    let params = spec.init_params(&mut Rng::new(1)).unwrap();
    let state = spec.initial_state();
    assert!(matches!(
        forward(&spec, &params, &state, &Tensor::vector(vec![1.0])),
        Err(Error::Shape(_))
    ));
    let other = CellSpec::new(Architecture::Vanilla, 3, 5, 2);
    assert!(matches!(forward(&other, &params, &other.initial_state(), &Tensor::zeros(&[3])), Err(Error::Shape(_))));
    // Jacobian needs a state produced by forward.
    let x = Tensor::zeros(&[3]);
    assert!(matches!(state_jacobian(&spec, &params, &state, &state, &x), Err(Error::Parameter(_))));
}

#[test]
fn non_finite_state_reports_step() {
    let spec = spec(Architecture::Vanilla, 2);
    let mut params = spec.init_params(&mut Rng::new(1)).unwrap();
    params.get_mut("b_h").unwrap().data_mut()[0] = f64::NAN;
    let mut state = spec.initial_state();
    state.t = 41;
    match forward(&spec, &params, &state, &Tensor::zeros(&[3])) {
        Err(Error::Numeric { step, .. }) => assert_eq!(step, 42),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn init_is_seeded_and_scaled() {
    let spec = spec(Architecture::Lstm, 16);
    let a = spec.init_params(&mut Rng::new(9)).unwrap();
    let b = spec.init_params(&mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
    assert!(a.get("b_f").unwrap().data().iter().all(|&v| v == 1.0));
    assert!(a.get("b_i").unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(a.param_count(), spec.param_count());
    assert_eq!(spec.state_param_count(), 4 * 16 * (16 + 3 + 1));
}

#[test]
fn checkpoint_round_trip() {
    for arch in Architecture::ALL {
        let spec = spec(arch, 5);
        let params = random_params(&spec, &mut Rng::new(arch.tag() as u64));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        assert_eq!(&buf[..4], CHECKPOINT_MAGIC);
        let (spec2, params2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            params2.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn checkpoint_rejects_corruption() {
    let spec = spec(Architecture::Gru, 3);
    let params = random_params(&spec, &mut Rng::new(2));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &spec, &params).unwrap();
    for cut in [0, 3, 7, 20, buf.len() / 2, buf.len() - 1] {
        assert!(matches!(read_checkpoint(&mut &buf[..cut]), Err(Error::Format(_))), "cut {cut}");
    }
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[6] = 99;
    assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Format(_))));
    let mut long = buf.clone();
    long.push(0);
    assert!(matches!(read_checkpoint(&mut long.as_slice()), Err(Error::Format(_))));
}
