//! Scalar Kalman filter over yaw rate with identity measurement.

use crate::sysid::LinearModel;
use crate::trajectory::Trajectory;
use crate::{Error, Result};

/// Default initial estimate variance, (rad/s)².
pub const DEFAULT_P0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub x: f64,
    pub p: f64,
}

impl FilterState {
    pub fn new(x: f64, p: f64) -> Result<Self> {
        let s = Self { x, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() || !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::invariant(format!("invalid filter state x={}, p={}", self.x, self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub state: FilterState,
    /// `z − x⁻`
    pub innovation: f64,
    /// `p⁻ + r`
    pub innovation_var: f64,
}

/// Time update: `x⁻ = a·x + b1·u_l + b2·u_r`, `p⁻ = a²·p + q`.
pub fn kf_predict(state: FilterState, model: &LinearModel, u: [f64; 2]) -> FilterState {
    FilterState {
        x: model.step(state.x, u),
        p: model.a * model.a * state.p + model.q,
    }
}

/// Measurement update with `z = x + v`, `v ~ N(0, r)`.
pub fn kf_update(prior: FilterState, z: f64, r: f64) -> UpdateOutcome {
    let y = z - prior.x;
    let s = prior.p + r;
    let k = prior.p / s;
    let post = FilterState {
        x: prior.x + k * y,
        p: (1.0 - k) * prior.p,
    };
    debug_assert!(post.p > 0.0 || prior.p == 0.0, "posterior variance collapsed");
    UpdateOutcome {
        state: post,
        innovation: y,
        innovation_var: s,
    }
}

/// Initial state for a run: first measurement with variance `p0`.
pub fn initial_state(traj: &Trajectory, p0: f64) -> Result<FilterState> {
    let first = traj
        .samples()
        .first()
        .ok_or_else(|| Error::param(format!("run {} is empty", traj.run_id())))?;
    FilterState::new(first.x, p0)
}

/// Single-model filter over a run: predicts with `u_k`, updates with
/// `z = x_{k+1}`. One outcome per sample.
pub fn run_kf(model: &LinearModel, traj: &Trajectory, p0: f64) -> Result<Vec<UpdateOutcome>> {
    model.validate()?;
    let mut state = initial_state(traj, p0)?;
    let mut out = Vec::with_capacity(traj.len());
    for s in traj.samples() {
        let o = kf_update(kf_predict(state, model, s.u), s.x_next, model.r);
        o.state.validate()?;
        state = o.state;
        out.push(o);
    }
    Ok(out)
}
