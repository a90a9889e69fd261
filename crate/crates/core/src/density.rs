//! The `eta = rho^{1/2}` equation and the density regularizer `G(rho)`.

use log::warn;

use crate::domain::{HorizontalOps, ScalarField2D, VectorField2D};
use crate::error::{Error, Result};
use crate::vertical::check_positive;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityStepParams {
    pub epsilon: f64,
    pub p0: f64,
    /// `0` recovers the un-regularized singular source `eps * eta^{-2 p0 - 1}`.
    pub delta: f64,
    pub dt: f64,
    /// Abort once `min eta^2` drops below this.
    pub rho_floor: f64,
    pub c_cfl: f64,
    /// Switch off `eps (eta^2 + delta)^{-p0-1/2}`; used by the dissipation checks.
    pub singular_source: bool,
}

pub fn default_rho_floor(epsilon: f64, p0: f64) -> f64 {
    epsilon.powf(2.0 / p0 + 2.0) / 10.0
}

impl DensityStepParams {
    pub fn new(epsilon: f64, p0: f64, dt: f64) -> Self {
        DensityStepParams {
            epsilon,
            p0,
            delta: 0.0,
            dt,
            rho_floor: default_rho_floor(epsilon, p0),
            c_cfl: 0.5,
            singular_source: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.dt > 0.0) || !(self.rho_floor > 0.0) || !(self.delta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "need dt > 0, rho_floor > 0, delta >= 0 (got {}, {}, {})",
                self.dt, self.rho_floor, self.delta
            )));
        }
        Ok(())
    }
}

/// `div_h(|grad_h eta|^2 grad_h eta)`.
pub fn p_laplacian(eta: &ScalarField2D) -> ScalarField2D {
    let g = eta.grad_h();
    let q = g.norm_sq();
    VectorField2D {
        x: &q * &g.x,
        y: &q * &g.y,
    }
    .div_h()
}

pub fn g_regularizer(eta: &ScalarField2D, epsilon: f64, p0: f64) -> Result<ScalarField2D> {
    check_positive(eta, "g_regularizer")?;
    let lap = eta.lap_h();
    let pl = p_laplacian(eta);
    let mut out = ScalarField2D::zeros(*eta.grid());
    for (((o, &e), &l), &p) in out.values_mut().iter_mut().zip(eta.values()).zip(lap.values()).zip(pl.values()) {
        *o = epsilon * (e * l + e * p + e.powf(-2.0 * p0));
    }
    if !out.is_finite() {
        return Err(Error::DegenerateDensity("g_regularizer: eta^{-2 p0} overflowed".into()));
    }
    Ok(out)
}

/// `eps (eta^2 + delta)^{-p0 - 1/2}`, or zero when the source is switched off.
pub fn singular_term(eta: &ScalarField2D, p: &DensityStepParams) -> Result<ScalarField2D> {
    if !p.singular_source {
        return Ok(ScalarField2D::zeros(*eta.grid()));
    }
    let s = eta.map(|e| p.epsilon * (e * e + p.delta).powf(-p.p0 - 0.5));
    if !s.is_finite() {
        return Err(Error::DegenerateDensity(format!(
            "singular source overflowed (min eta = {:e})",
            eta.min()
        )));
    }
    Ok(s)
}

/// `d_t eta`, i.e. half of
/// `eps div_h((1+|grad eta|^2) grad eta) - div_h(eta vbar) - vbar . grad eta + eps (eta^2+delta)^{-p0-1/2}`.
pub fn density_rhs(eta: &ScalarField2D, vbar: &VectorField2D, p: &DensityStepParams) -> Result<ScalarField2D> {
    check_positive(eta, "density_rhs")?;
    let ge = eta.grad_h();
    let q = ge.norm_sq();
    let flux = VectorField2D {
        x: ge.x.zip_map(&q, |a, b| (1.0 + b) * a),
        y: ge.y.zip_map(&q, |a, b| (1.0 + b) * a),
    };
    let diff = flux.div_h();
    let adv = VectorField2D {
        x: eta * &vbar.x,
        y: eta * &vbar.y,
    }
    .div_h();
    let trans = vbar.dot(&ge);
    let src = singular_term(eta, p)?;
    let mut out = ScalarField2D::zeros(*eta.grid());
    let it = out
        .values_mut()
        .iter_mut()
        .zip(diff.values())
        .zip(adv.values())
        .zip(trans.values())
        .zip(src.values());
    for ((((o, d), a), t), s) in it {
        *o = 0.5 * (p.epsilon * d - a - t + s);
    }
    Ok(out)
}

/// Largest explicit step the density equation tolerates at this state.
pub fn stable_dt(eta: &ScalarField2D, vbar: &VectorField2D, p: &DensityStepParams) -> f64 {
    let g = eta.grid();
    let h = g.hx.min(g.hy);
    let qmax = eta.grad_h().norm_sq().max();
    let diffusive = h * h / (p.epsilon * (1.0 + 3.0 * qmax));
    let umax = vbar.x.max_abs().max(vbar.y.max_abs());
    let advective = if umax > 0.0 { h / umax } else { f64::INFINITY };
    let stiff = if p.singular_source {
        let emin = eta.min();
        let rate = 0.5 * p.epsilon * (2.0 * p.p0 + 1.0) * emin * (emin * emin + p.delta).powf(-p.p0 - 1.5);
        if rate > 0.0 {
            2.0 / rate
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };
    p.c_cfl * (h * h).min(diffusive).min(advective).min(stiff)
}

pub(crate) fn check_floor(eta: &ScalarField2D, rho_floor: f64, what: &str) -> Result<()> {
    if !eta.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    let m = eta.min();
    if m <= 0.0 || m * m < rho_floor {
        return Err(Error::DegenerateDensity(format!(
            "{what}: min rho = {:e} below floor {:e}",
            m * m,
            rho_floor
        )));
    }
    Ok(())
}

/// One Heun step with `vbar` frozen.
pub fn step_density(eta: &ScalarField2D, vbar: &VectorField2D, p: &DensityStepParams) -> Result<ScalarField2D> {
    p.validate()?;
    check_floor(eta, p.rho_floor, "step_density")?;
    let lim = stable_dt(eta, vbar, p);
    if p.dt > lim {
        warn!("density step dt = {:e} exceeds stability estimate {:e}", p.dt, lim);
    }
    let k1 = density_rhs(eta, vbar, p)?;
    let mut stage = eta.clone();
    stage.add_scaled(p.dt, &k1);
    check_floor(&stage, p.rho_floor, "step_density stage")?;
    let k2 = density_rhs(&stage, vbar, p)?;
    let mut out = eta.clone();
    out.add_scaled(0.5 * p.dt, &k1);
    out.add_scaled(0.5 * p.dt, &k2);
    check_floor(&out, p.rho_floor, "step_density")?;
    Ok(out)
}
