//! Streaming regression tasks with one mid-stream distribution shift.
//!
//! * `sine_shift`: one-step-ahead prediction of a sine whose frequency jumps
//!   from `f1` to `f2` at `shift_step`, phase-continuously.
//! * `delayed`: the same noisy sine as input, target is the clean signal
//!   `delay` steps in the past. The first `delay` targets are zero and
//!   flagged as warmup.
//! * `lorenz`: one-step-ahead prediction of the RK4-integrated Lorenz
//!   system, normalized to unit scale; `ρ` jumps from `rho1` to `rho2`.
//!
//! Observation noise is drawn per step from `Rng::stream(seed, t)`, so every
//! sample is a pure function of `(spec, t)`.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SineShift,
    Delayed,
    Lorenz,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SineShift => "sine_shift",
            TaskKind::Delayed => "delayed",
            TaskKind::Lorenz => "lorenz",
        }
    }

    /// Input and output width.
    pub fn io_dim(self) -> usize {
        match self {
            TaskKind::Lorenz => 3,
            _ => 1,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine_shift" | "sine" => Ok(TaskKind::SineShift),
            "delayed" => Ok(TaskKind::Delayed),
            "lorenz" => Ok(TaskKind::Lorenz),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreShift,
    PostShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub x: Tensor,
    pub y: Tensor,
    pub t: usize,
    pub phase: Phase,
    /// Target not yet defined (delayed task before `delay` steps).
    pub warmup: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Set from the experiment's training length when run by the harness.
    #[serde(default)]
    pub shift_step: usize,
    #[serde(default = "defaults::f1")]
    pub f1: f64,
    #[serde(default = "defaults::f2")]
    pub f2: f64,
    #[serde(default = "defaults::delay")]
    pub delay: usize,
    #[serde(default = "defaults::rho1")]
    pub rho1: f64,
    #[serde(default = "defaults::rho2")]
    pub rho2: f64,
    #[serde(default = "defaults::sigma")]
    pub sigma: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::lorenz_dt")]
    pub lorenz_dt: f64,
    #[serde(default = "defaults::noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn f1() -> f64 {
        0.05
    }
    pub fn f2() -> f64 {
        0.10
    }
    pub fn delay() -> usize {
        50
    }
    pub fn rho1() -> f64 {
        28.0
    }
    pub fn rho2() -> f64 {
        35.0
    }
    pub fn sigma() -> f64 {
        10.0
    }
    pub fn beta() -> f64 {
        8.0 / 3.0
    }
    pub fn lorenz_dt() -> f64 {
        0.01
    }
    pub fn noise_std() -> f64 {
        0.01
    }
}

/// Integration steps discarded before the first Lorenz sample, so the stream
/// starts on the attractor rather than on the transient from (1, 1, 1).
pub const LORENZ_BURN_IN: usize = 1000;
/// Lorenz coordinates are divided by these before entering the network.
pub const LORENZ_SCALE: [f64; 3] = [30.0, 30.0, 50.0];

impl TaskSpec {
    pub fn new(kind: TaskKind, shift_step: usize) -> Self {
        TaskSpec {
            kind,
            shift_step,
            f1: defaults::f1(),
            f2: defaults::f2(),
            delay: defaults::delay(),
            rho1: defaults::rho1(),
            rho2: defaults::rho2(),
            sigma: defaults::sigma(),
            beta: defaults::beta(),
            lorenz_dt: defaults::lorenz_dt(),
            noise_std: defaults::noise_std(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        match self.kind {
            TaskKind::SineShift | TaskKind::Delayed => {
                if !(self.f1 > 0.0 && self.f2 > 0.0) {
                    return Err(Error::Config("sine frequencies must be positive".into()));
                }
            }
            TaskKind::Lorenz => {
                if !(self.lorenz_dt > 0.0) {
                    return Err(Error::Config("lorenz_dt must be positive".into()));
                }
            }
        }
        if self.kind == TaskKind::Delayed && (self.delay == 0 || self.delay >= self.shift_step) {
            return Err(Error::Config(format!(
                "delay must satisfy 0 < delay < shift_step (delay={}, shift_step={})",
                self.delay, self.shift_step
            )));
        }
        if self.shift_step == 0 {
            return Err(Error::Config("shift_step must be positive".into()));
        }
        Ok(())
    }

    pub fn phase(&self, t: usize) -> Phase {
        if t < self.shift_step {
            Phase::PreShift
        } else {
            Phase::PostShift
        }
    }

    /// Accumulated sine phase, continuous across the frequency switch.
    pub fn sine_phase(&self, t: usize) -> f64 {
        let s = self.shift_step;
        if t <= s {
            TAU * self.f1 * t as f64
        } else {
            TAU * (self.f1 * s as f64 + self.f2 * (t - s) as f64)
        }
    }

    pub fn clean_signal(&self, t: usize) -> f64 {
        self.sine_phase(t).sin()
    }

    fn noise(&self, t: usize, out: &mut [f64]) {
        if self.noise_std == 0.0 {
            return;
        }
        let mut rng = Rng::stream(self.seed, t as u64);
        for v in out {
            *v += self.noise_std * rng.normal();
        }
    }

    fn rho(&self, t: usize) -> f64 {
        match self.phase(t) {
            Phase::PreShift => self.rho1,
            Phase::PostShift => self.rho2,
        }
    }
}

/// Lorenz vector field.
pub fn lorenz_derivative(s: [f64; 3], sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    [sigma * (s[1] - s[0]), s[0] * (rho - s[2]) - s[1], s[0] * s[1] - beta * s[2]]
}

/// One classical RK4 step of the Lorenz system.
pub fn lorenz_rk4(s: [f64; 3], dt: f64, sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let f = |u: [f64; 3]| lorenz_derivative(u, sigma, rho, beta);
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = f(s);
    let k2 = f(add(s, k1, dt / 2.0));
    let k3 = f(add(s, k2, dt / 2.0));
    let k4 = f(add(s, k3, dt));
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

pub const LORENZ_START: [f64; 3] = [1.0, 1.0, 1.0];

/// Sequential sample source for one task. Sine-based tasks are random-access
/// internally; the Lorenz stream carries its integrator state.
#[derive(Debug, Clone)]
pub struct TaskStream {
    spec: TaskSpec,
    t: usize,
    lorenz: [f64; 3],
}

impl TaskStream {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut lorenz = LORENZ_START;
        if spec.kind == TaskKind::Lorenz {
            for _ in 0..LORENZ_BURN_IN {
                lorenz = lorenz_rk4(lorenz, spec.lorenz_dt, spec.sigma, spec.rho1, spec.beta);
            }
        }
        Ok(TaskStream { spec, t: 0, lorenz })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// Raw (unnormalized) Lorenz state at the current step.
    pub fn lorenz_state(&self) -> [f64; 3] {
        self.lorenz
    }

    pub fn next_sample(&mut self) -> StreamSample {
        let spec = &self.spec;
        let t = self.t;
        let (x, y, warmup) = match spec.kind {
            TaskKind::SineShift => {
                let mut x = [spec.clean_signal(t)];
                spec.noise(t, &mut x);
                (vec![x[0]], vec![spec.clean_signal(t + 1)], false)
            }
            TaskKind::Delayed => {
                let mut x = [spec.clean_signal(t)];
                spec.noise(t, &mut x);
                if t >= spec.delay {
                    (vec![x[0]], vec![spec.clean_signal(t - spec.delay)], false)
                } else {
                    (vec![x[0]], vec![0.0], true)
                }
            }
            TaskKind::Lorenz => {
                let cur = self.lorenz;
                let next = lorenz_rk4(cur, spec.lorenz_dt, spec.sigma, spec.rho(t), spec.beta);
                self.lorenz = next;
                let mut x: Vec<f64> = (0..3).map(|i| cur[i] / LORENZ_SCALE[i]).collect();
                spec.noise(t, &mut x);
                let y = (0..3).map(|i| next[i] / LORENZ_SCALE[i]).collect();
                (x, y, false)
            }
        };
        self.t += 1;
        StreamSample {
            x: Tensor::vector(x),
            y: Tensor::vector(y),
            t,
            phase: spec.phase(t),
            warmup,
        }
    }
}

impl Iterator for TaskStream {
    type Item = StreamSample;
    fn next(&mut self) -> Option<StreamSample> {
        Some(self.next_sample())
    }
}

/// Sample `t` of the stream (replays from the start for Lorenz).
pub fn next(spec: &TaskSpec, t: usize) -> Result<StreamSample> {
    let mut s = TaskStream::new(*spec)?;
    if spec.kind == TaskKind::Lorenz {
        for _ in 0..t {
            s.next_sample();
        }
    } else {
        s.t = t;
    }
    Ok(s.next_sample())
}

/// The first `len` samples of the stream.
pub fn reference_trajectory(spec: &TaskSpec, len: usize) -> Result<Vec<StreamSample>> {
    if len == 0 {
        return Err(Error::param("trajectory length must be positive"));
    }
    Ok(TaskStream::new(*spec)?.take(len).collect())
}

/// CSV columns: `t,phase,warmup,x0..,y0..`.
pub fn write_stream_csv<W: Write>(w: &mut W, samples: &[StreamSample]) -> Result<()> {
    let width = samples.first().map_or(1, |s| s.x.len());
    let mut header = vec!["t".to_string(), "phase".into(), "warmup".into()];
    header.extend((0..width).map(|i| format!("x{i}")));
    header.extend((0..width).map(|i| format!("y{i}")));
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let phase = match s.phase {
            Phase::PreShift => "pre",
            Phase::PostShift => "post",
        };
        let mut row = vec![s.t.to_string(), phase.into(), (s.warmup as u8).to_string()];
        row.extend(s.x.data().iter().map(|v| format!("{v:e}")));
        row.extend(s.y.data().iter().map(|v| format!("{v:e}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn sine(noise: f64) -> TaskSpec {
        TaskSpec {
            noise_std: noise,
            ..TaskSpec::new(TaskKind::SineShift, 1000)
        }
        .with_seed(3)
    }

    #[test]
    fn sine_zero_crossings() {
        let spec = sine(0.0);
        // f1 = 0.05: f·t integer at multiples of 20.
        for t in [0, 20, 40, 980] {
            assert!(next(&spec, t).unwrap().x.data()[0].abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn phase_flips_once() {
        let spec = sine(0.01);
        let samples = reference_trajectory(&spec, 2000).unwrap();
        let flips = samples.windows(2).filter(|w| w[0].phase != w[1].phase).count();
        assert_eq!(flips, 1);
        assert_eq!(samples[999].phase, Phase::PreShift);
        assert_eq!(samples[1000].phase, Phase::PostShift);
    }

    #[test]
    fn sine_is_phase_continuous_at_shift() {
        let spec = sine(0.01);
        let s = spec.shift_step;
        let a = next(&spec, s - 1).unwrap().x.data()[0];
        let b = next(&spec, s).unwrap().x.data()[0];
        // |Δ sin| ≤ 2π·max(f) plus the noise band on both samples.
        let bound = TAU * spec.f1.max(spec.f2) + 2.0 * 6.0 * spec.noise_std;
        assert!((b - a).abs() <= bound);
        // Post-shift, the clean signal advances by exactly 2π f2 per step.
        let d = spec.sine_phase(s + 1) - spec.sine_phase(s);
        assert!((d - TAU * spec.f2).abs() < 1e-12);
    }

    #[test]
    fn shift_isolation() {
        let shifted = sine(0.01);
        let flat = TaskSpec { f2: shifted.f1, ..shifted };
        let a = reference_trajectory(&shifted, shifted.shift_step).unwrap();
        let b = reference_trajectory(&flat, shifted.shift_step).unwrap();
        assert_eq!(a, b);
        let lz = TaskSpec::new(TaskKind::Lorenz, 300).with_seed(1);
        let lz_flat = TaskSpec { rho2: lz.rho1, ..lz };
        assert_eq!(
            reference_trajectory(&lz, 300).unwrap(),
            reference_trajectory(&lz_flat, 300).unwrap()
        );
    }

    #[test]
    fn trajectories_are_deterministic() {
        for kind in [TaskKind::SineShift, TaskKind::Delayed, TaskKind::Lorenz] {
            let spec = TaskSpec::new(kind, 500).with_seed(11);
            assert_eq!(
                reference_trajectory(&spec, 800).unwrap(),
                reference_trajectory(&spec, 800).unwrap()
            );
        }
        let spec = TaskSpec::new(TaskKind::SineShift, 500).with_seed(11);
        let traj = reference_trajectory(&spec, 50).unwrap();
        for s in &traj {
            assert_eq!(&next(&spec, s.t).unwrap(), s);
        }
    }

    #[test]
    fn delayed_targets_match_fifo() {
        let spec = TaskSpec::new(TaskKind::Delayed, 600).with_seed(5);
        let mut fifo: VecDeque<f64> = VecDeque::with_capacity(spec.delay + 1);
        for s in reference_trajectory(&spec, 1200).unwrap() {
            fifo.push_back(spec.clean_signal(s.t));
            if fifo.len() == spec.delay + 1 {
                let oldest = fifo.pop_front().unwrap();
                assert!(!s.warmup);
                assert_eq!(s.y.data()[0].to_bits(), oldest.to_bits());
            } else {
                assert!(s.warmup);
                assert_eq!(s.y.data()[0], 0.0);
            }
        }
    }

    #[test]
    fn delayed_rejects_delay_past_shift() {
        let spec = TaskSpec {
            delay: 600,
            ..TaskSpec::new(TaskKind::Delayed, 600)
        };
        assert!(TaskStream::new(spec).is_err());
    }

    #[test]
    fn lorenz_origin_is_fixed() {
        assert_eq!(lorenz_derivative([0.0; 3], 10.0, 28.0, 8.0 / 3.0), [0.0; 3]);
        let mut s = [0.0; 3];
        for _ in 0..100 {
            s = lorenz_rk4(s, 0.01, 10.0, 28.0, 8.0 / 3.0);
        }
        assert_eq!(s, [0.0; 3]);
    }

    #[test]
    fn lorenz_step_halving() {
        let (sigma, rho, beta) = (10.0, 28.0, 8.0 / 3.0);
        let mut coarse = [1.0, 1.0, 1.0];
        let mut fine = coarse;
        for _ in 0..1000 {
            // Compare one step of dt against two of dt/2 from the same point.
            let a = lorenz_rk4(coarse, 0.01, sigma, rho, beta);
            let b = lorenz_rk4(lorenz_rk4(coarse, 0.005, sigma, rho, beta), 0.005, sigma, rho, beta);
            let err = (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
            assert!(err < 1e-4, "local error {err}");
            coarse = a;
            fine = b;
        }
        assert!(fine.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lorenz_stays_on_attractor() {
        let mut s = LORENZ_START;
        for _ in 0..100_000 {
            s = lorenz_rk4(s, 0.01, 10.0, 28.0, 8.0 / 3.0);
            assert!(s[0].abs() < 30.0 && s[1].abs() < 30.0 && s[2] > 0.0 && s[2] < 60.0, "{s:?}");
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let spec = TaskSpec::new(TaskKind::Lorenz, 10).with_seed(1);
        let samples = reference_trajectory(&spec, 3).unwrap();
        let mut buf = Vec::new();
        write_stream_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,phase,warmup,x0,x1,x2,y0,y1,y2");
        assert_eq!(lines.count(), 3);
    }
}
