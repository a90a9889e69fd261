//! Coupled Heun stepper for `(eta, v)`.
//!
//! Each stage rebuilds `w` from the stage state, then evaluates the density
//! and momentum right-hand sides on that same triple.

use log::warn;

use crate::density::{self, check_floor, default_rho_floor, DensityStepParams};
use crate::domain::{ScalarField2D, VectorField3D};
use crate::error::{Error, Result};
use crate::momentum::{self, check_velocity, MomentumStepParams};
use crate::vertical::{decompose, reconstruct_w};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub epsilon: f64,
    pub p0: f64,
    pub gamma: f64,
    pub delta: f64,
    pub dt: f64,
    pub rho_floor: f64,
    pub c_cfl: f64,
    pub singular_source: bool,
    pub nonlinear: bool,
}

impl SolverParams {
    pub fn new(epsilon: f64, p0: f64, gamma: f64, dt: f64) -> Self {
        SolverParams {
            epsilon,
            p0,
            gamma,
            delta: 0.0,
            dt,
            rho_floor: default_rho_floor(epsilon, p0),
            c_cfl: 0.9,
            singular_source: true,
            nonlinear: true,
        }
    }

    pub fn density(&self) -> DensityStepParams {
        DensityStepParams {
            epsilon: self.epsilon,
            p0: self.p0,
            delta: self.delta,
            dt: self.dt,
            rho_floor: self.rho_floor,
            c_cfl: self.c_cfl,
            singular_source: self.singular_source,
        }
    }

    pub fn momentum(&self) -> MomentumStepParams {
        MomentumStepParams {
            epsilon: self.epsilon,
            p0: self.p0,
            gamma: self.gamma,
            dt: self.dt,
            c_cfl: self.c_cfl,
            nonlinear: self.nonlinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub eta: ScalarField2D,
    pub v: VectorField3D,
}

impl State {
    pub fn new(eta: ScalarField2D, v: VectorField3D) -> Result<Self> {
        if !eta.grid().same_shape(v.grid()) {
            return Err(Error::GridMismatch("eta and v live on different grids".into()));
        }
        Ok(State { t: 0.0, eta, v })
    }

    pub fn rho(&self) -> ScalarField2D {
        self.eta.map(|e| e * e)
    }
}

/// `(d_t eta, d_t v)` at a state.
pub fn coupled_rhs(eta: &ScalarField2D, v: &VectorField3D, p: &SolverParams) -> Result<(ScalarField2D, VectorField3D)> {
    let w = reconstruct_w(eta, v)?;
    let vbar = decompose(v).vbar;
    let de = density::density_rhs(eta, &vbar, &p.density())?;
    let dv = momentum::momentum_rhs(eta, v, &w, &p.momentum())?;
    Ok((de, dv))
}

pub fn stable_dt(state: &State, p: &SolverParams) -> f64 {
    let vbar = decompose(&state.v).vbar;
    let a = density::stable_dt(&state.eta, &vbar, &p.density());
    let b = momentum::stable_dt(&state.eta, &state.v, &p.momentum());
    a.min(b)
}

pub fn step(state: &State, p: &SolverParams) -> Result<State> {
    check_floor(&state.eta, p.rho_floor, "step")?;
    let (k1e, k1v) = coupled_rhs(&state.eta, &state.v, p)?;
    let mut se = state.eta.clone();
    se.add_scaled(p.dt, &k1e);
    let mut sv = state.v.clone();
    sv.add_scaled(p.dt, &k1v);
    check_floor(&se, p.rho_floor, "stage")?;
    check_velocity(&sv, "stage")?;
    let (k2e, k2v) = coupled_rhs(&se, &sv, p)?;
    let mut eta = state.eta.clone();
    eta.add_scaled(0.5 * p.dt, &k1e);
    eta.add_scaled(0.5 * p.dt, &k2e);
    let mut v = state.v.clone();
    v.add_scaled(0.5 * p.dt, &k1v);
    v.add_scaled(0.5 * p.dt, &k2v);
    check_floor(&eta, p.rho_floor, "step")?;
    check_velocity(&v, "step")?;
    Ok(State {
        t: state.t + p.dt,
        eta,
        v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_state: State,
    pub steps: usize,
    pub dt: f64,
}

/// Number of steps and the adjusted step reaching `t_end` exactly.
pub fn step_count(t_end: f64, dt: f64) -> (usize, f64) {
    let n = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, t_end / n as f64)
}

/// Advances `state` to `t_end`. `observe` sees the initial state, every
/// `every`-th step and the final state.
pub fn run(
    state: State,
    p: &SolverParams,
    t_end: f64,
    every: usize,
    mut observe: impl FnMut(&State) -> Result<()>,
) -> Result<RunSummary> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("final time must be positive, got {t_end}")));
    }
    let every = every.max(1);
    let (n, dt) = step_count(t_end, p.dt);
    let mut params = *p;
    params.dt = dt;
    let lim = stable_dt(&state, &params);
    if dt > lim {
        warn!("dt = {dt:e} exceeds the stability estimate {lim:e} at t = 0");
    }
    observe(&state)?;
    let mut s = state;
    let t0 = s.t;
    for i in 1..=n {
        s = step(&s, &params)?;
        // avoid drift in the clock over many steps
        s.t = t0 + i as f64 * dt;
        if i % every == 0 || i == n {
            observe(&s)?;
        }
    }
    Ok(RunSummary {
        final_state: s,
        steps: n,
        dt,
    })
}
