//! Fixed-step forward Euler and classical Runge-Kutta with trajectory
//! recording.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{Dynamics, KernelState};
use crate::matrix::Matrix;

/// Per-snapshot metrics: `(dirichlet_energy, diameter)`.
pub type Metrics<'a> = &'a dyn Fn(&Matrix) -> (f64, f64);

/// Metrics that record nothing useful; both values are 0.
pub fn no_metrics(_: &Matrix) -> (f64, f64) {
    (0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Matrix>,
    pub energy: Vec<f64>,
    pub diameter: Vec<f64>,
    pub kernel_tag: String,
    /// Full state (including velocity) after the last step.
    pub final_state: KernelState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Matrix {
        self.states.last().expect("a trajectory always holds the initial snapshot")
    }

    /// Index of the last snapshot with `t <= time`.
    pub fn index_at(&self, time: f64) -> Option<usize> {
        self.times.iter().rposition(|&t| t <= time + 1e-9)
    }

    /// `t,node,option,value`, one line per entry of every snapshot.
    pub fn states_csv(&self) -> String {
        let mut s = String::from("t,node,option,value\n");
        for (t, x) in self.times.iter().zip(&self.states) {
            for i in 0..x.rows() {
                for j in 0..x.cols() {
                    let _ = writeln!(s, "{t},{i},{j},{}", x[(i, j)]);
                }
            }
        }
        s
    }

    /// `t,dirichlet,diameter`.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("t,dirichlet,diameter\n");
        for ((t, e), d) in self.times.iter().zip(&self.energy).zip(&self.diameter) {
            let _ = writeln!(s, "{t},{e},{d}");
        }
        s
    }

    pub fn write_states_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.states_csv())?;
        Ok(())
    }

    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.metrics_csv())?;
        Ok(())
    }
}

struct Recorder<'a> {
    traj: Trajectory,
    metrics: Metrics<'a>,
}

impl<'a> Recorder<'a> {
    fn new(tag: &str, state0: &KernelState, metrics: Metrics<'a>) -> Self {
        let mut r = Recorder {
            traj: Trajectory {
                times: Vec::new(),
                states: Vec::new(),
                energy: Vec::new(),
                diameter: Vec::new(),
                kernel_tag: tag.to_string(),
                final_state: state0.clone(),
            },
            metrics,
        };
        r.push(0.0, &state0.x);
        r
    }

    fn push(&mut self, t: f64, x: &Matrix) {
        let (e, d) = (self.metrics)(x);
        self.traj.times.push(t);
        self.traj.states.push(x.clone());
        self.traj.energy.push(e);
        self.traj.diameter.push(d);
    }

    fn finish(mut self, state: KernelState) -> Trajectory {
        self.traj.final_state = state;
        self.traj
    }
}

fn check_schedule(dt: f64, steps: usize, record_every: usize) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    if record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be >= 1".into()));
    }
    Ok(())
}

/// Rejects `dt * d >= 1`.
pub fn check_step_size(dt: f64, damping: f64) -> Result<()> {
    if dt * damping >= 1.0 {
        return Err(Error::StepTooLarge { dt, damping, limit: 1.0 / damping });
    }
    Ok(())
}

/// One forward Euler step, `x + dt * f(x)`.
pub fn euler_step(state: &KernelState, dynamics: &dyn Dynamics, dt: f64) -> Result<KernelState> {
    state.add_scaled(dt, &dynamics.rhs(state)?)
}

/// Forward Euler. Snapshots are taken at `t = 0`, every `record_every`
/// steps, and after the final step; the time of step `k` is `k * dt`.
pub fn euler_integrate(
    state0: &KernelState,
    dynamics: &dyn Dynamics,
    dt: f64,
    steps: usize,
    record_every: usize,
    metrics: Metrics<'_>,
) -> Result<Trajectory> {
    check_schedule(dt, steps, record_every)?;
    if let Some(d) = dynamics.damping() {
        check_step_size(dt, d)?;
    }
    integrate(state0, dynamics, dt, steps, record_every, metrics, euler_step)
}

/// Classical fourth-order Runge-Kutta with the same recording contract.
pub fn rk4_integrate(
    state0: &KernelState,
    dynamics: &dyn Dynamics,
    dt: f64,
    steps: usize,
    record_every: usize,
    metrics: Metrics<'_>,
) -> Result<Trajectory> {
    check_schedule(dt, steps, record_every)?;
    integrate(state0, dynamics, dt, steps, record_every, metrics, rk4_step)
}

pub fn rk4_step(s: &KernelState, f: &dyn Dynamics, dt: f64) -> Result<KernelState> {
    let k1 = f.rhs(s)?;
    let k2 = f.rhs(&s.add_scaled(0.5 * dt, &k1)?)?;
    let k3 = f.rhs(&s.add_scaled(0.5 * dt, &k2)?)?;
    let k4 = f.rhs(&s.add_scaled(dt, &k3)?)?;
    let incr = k1.add_scaled(2.0, &k2)?.add_scaled(2.0, &k3)?.add_scaled(1.0, &k4)?;
    s.add_scaled(dt / 6.0, &incr)
}

type Stepper = fn(&KernelState, &dyn Dynamics, f64) -> Result<KernelState>;

fn integrate(
    state0: &KernelState,
    dynamics: &dyn Dynamics,
    dt: f64,
    steps: usize,
    record_every: usize,
    metrics: Metrics<'_>,
    step: Stepper,
) -> Result<Trajectory> {
    if !state0.is_finite() {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let mut rec = Recorder::new(dynamics.tag(), state0, metrics);
    let mut state = state0.clone();
    for k in 1..=steps {
        state = match step(&state, dynamics, dt) {
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteState { step: k }),
            other => other?,
        };
        if !state.is_finite() {
            return Err(Error::NonFiniteState { step: k });
        }
        if k % record_every == 0 || k == steps {
            rec.push(k as f64 * dt, &state.x);
        }
    }
    Ok(rec.finish(state))
}
