//! Fixed-step RK4 integration of the converter model under a
//! piecewise-constant reference schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    algebraic_outputs, rhs, AlgebraicOutputs, InputVector, ModelParams, StateVector, N_STATES,
};

/// Which reference input a schedule event retargets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefField {
    PRef,
    QRef,
}

/// A single reference step: at `time`, `field` jumps to `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEvent {
    pub time: f64,
    pub field: RefField,
    pub value: f64,
}

/// Piecewise-constant reference schedule: initial levels plus ordered steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSchedule {
    /// Initial `[p_ref, q_ref]` levels.
    pub initial: InputVector,
    /// Steps in strictly increasing time order.
    #[serde(default)]
    pub events: Vec<ScheduleEvent>,
}

impl Default for ReferenceSchedule {
    /// The baseline two-step disturbance protocol: start at
    /// `p_ref = 0.5`, `q_ref = 0.0`, step the active power to 0.7 at
    /// 0.3 s and the reactive power to 0.2 at 0.6 s.
    fn default() -> Self {
        Self {
            initial: [0.5, 0.0],
            events: vec![
                ScheduleEvent {
                    time: 0.3,
                    field: RefField::PRef,
                    value: 0.7,
                },
                ScheduleEvent {
                    time: 0.6,
                    field: RefField::QRef,
                    value: 0.2,
                },
            ],
        }
    }
}

impl ReferenceSchedule {
    /// Constant references with no events.
    pub fn constant(p_ref: f64, q_ref: f64) -> Self {
        Self {
            initial: [p_ref, q_ref],
            events: Vec::new(),
        }
    }

    /// Check event ordering and non-negativity.
    pub fn validate(&self) -> Result<()> {
        let mut prev = -1.0;
        for (k, ev) in self.events.iter().enumerate() {
            if !ev.time.is_finite() || ev.time < 0.0 {
                return Err(Error::Config(format!(
                    "schedule.events[{k}].time must be finite and >= 0, got {}",
                    ev.time
                )));
            }
            if ev.time <= prev {
                return Err(Error::Config(format!(
                    "schedule.events[{k}].time {} does not strictly increase (previous {prev})",
                    ev.time
                )));
            }
            prev = ev.time;
        }
        Ok(())
    }

    /// Reference values in effect at time `t`: each event applies from its
    /// own instant onward (value after the last event with time <= t).
    pub fn inputs_at(&self, t: f64) -> InputVector {
        let mut u = self.initial;
        for ev in &self.events {
            if ev.time <= t + 1e-12 {
                match ev.field {
                    RefField::PRef => u[0] = ev.value,
                    RefField::QRef => u[1] = ev.value,
                }
            } else {
                break;
            }
        }
        u
    }

    /// Copy of the schedule with every event time snapped to the nearest
    /// point of a `dt` grid.
    pub fn snapped(&self, dt: f64) -> Self {
        let mut out = self.clone();
        for ev in &mut out.events {
            ev.time = (ev.time / dt).round() * dt;
        }
        out
    }
}

/// A completed simulation run on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub inputs: Vec<InputVector>,
    /// Exact rhs at each sample (post-event inputs at event samples).
    pub derivs: Vec<StateVector>,
    pub algebraic: Vec<AlgebraicOutputs>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid spacing (the grid is uniform by construction).
    pub fn dt(&self) -> f64 {
        debug_assert!(self.times.len() >= 2);
        self.times[1] - self.times[0]
    }
}

/// One classic fourth-order Runge–Kutta step of size `dt` under a frozen
/// vector field `f`.
pub fn rk4_step<F>(f: F, x: &StateVector, dt: f64) -> Result<StateVector>
where
    F: Fn(&StateVector) -> Result<StateVector>,
{
    let k1 = f(x)?;
    let mut x2 = *x;
    for i in 0..N_STATES {
        x2[i] = x[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&x2)?;
    let mut x3 = *x;
    for i in 0..N_STATES {
        x3[i] = x[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&x3)?;
    let mut x4 = *x;
    for i in 0..N_STATES {
        x4[i] = x[i] + dt * k3[i];
    }
    let k4 = f(&x4)?;
    let mut out = *x;
    for i in 0..N_STATES {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Integrate the model from `x0` for `t_end` seconds at fixed step `dt`.
///
/// Inputs are held constant across each step; event times are snapped to
/// the sample grid, so the step starting at an event sample already uses
/// the post-event references, as does the derivative recorded there.
/// Aborts with a numerics error naming the step if the state leaves the
/// finite range (the signature of an unstable gain set).
pub fn integrate(
    params: &ModelParams,
    x0: &StateVector,
    schedule: &ReferenceSchedule,
    dt: f64,
    t_end: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("sim.dt must be positive, got {dt}")));
    }
    if !(t_end >= dt) || !t_end.is_finite() {
        return Err(Error::Config(format!(
            "sim.t_end must be >= dt, got t_end = {t_end}, dt = {dt}"
        )));
    }
    schedule.validate()?;
    let sched = schedule.snapped(dt);

    let n_steps = (t_end / dt).round() as usize;
    let n_samples = n_steps + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_samples),
        states: Vec::with_capacity(n_samples),
        inputs: Vec::with_capacity(n_samples),
        derivs: Vec::with_capacity(n_samples),
        algebraic: Vec::with_capacity(n_samples),
    };

    let mut x = *x0;
    for k in 0..n_samples {
        let t = k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics(format!(
                "non-finite state at step {k} (t = {t:.6} s); the gain set is unstable at this operating point"
            )));
        }
        let u = sched.inputs_at(t);
        let dx = rhs(&x, &u, params)?;
        let alg = algebraic_outputs(&x, &u, params)?;
        traj.times.push(t);
        traj.states.push(x);
        traj.inputs.push(u);
        traj.derivs.push(dx);
        traj.algebraic.push(alg);

        if k < n_steps {
            x = rk4_step(|y| rhs(y, &u, params), &x, dt)?;
        }
    }
    Ok(traj)
}
