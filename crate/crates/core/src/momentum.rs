//! Horizontal velocity equation in non-conservative form,
//!
//! `d_t v = (1/2 + sqrt(eps)) lap_h v + d_zz v + 1/2 grad_h div_h v + g`,
//!
//! with `g` collecting transport, pressure and the `eps`-regularisation
//! terms. [`conservative_rhs`] evaluates the same dynamics in momentum form
//! and is kept only as a cross-check.

use log::warn;

use crate::domain::{HorizontalOps, ScalarField2D, ScalarField3D, VectorField2D, VectorField3D};
use crate::error::{Error, Result};
use crate::vertical::{check_positive, reconstruct_w};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumStepParams {
    pub epsilon: f64,
    pub p0: f64,
    pub gamma: f64,
    pub dt: f64,
    pub c_cfl: f64,
    /// Transport `(v.grad) v + w d_z v` and the cubic drag. Off only in tests
    /// that need the linear operator.
    pub nonlinear: bool,
}

impl MomentumStepParams {
    pub fn new(epsilon: f64, p0: f64, gamma: f64, dt: f64) -> Self {
        MomentumStepParams {
            epsilon,
            p0,
            gamma,
            dt,
            c_cfl: 1.0,
            nonlinear: true,
        }
    }
}

/// First derivatives of both velocity components.
struct Jacobian {
    dx: [ScalarField3D; 2],
    dy: [ScalarField3D; 2],
    dz: [ScalarField3D; 2],
}

impl Jacobian {
    fn new(v: &VectorField3D) -> Self {
        Jacobian {
            dx: [v.x.d_x(), v.y.d_x()],
            dy: [v.x.d_y(), v.y.d_y()],
            dz: [v.x.d_z(true), v.y.d_z(true)],
        }
    }
}

/// `grad_h(eta^{2 gamma}) / eta^2`.
fn pressure_force(eta: &ScalarField2D, gamma: f64) -> VectorField2D {
    let p = eta.map(|e| e.powf(2.0 * gamma));
    let gp = p.grad_h();
    let inv = eta.map(|e| 1.0 / (e * e));
    VectorField2D {
        x: &gp.x * &inv,
        y: &gp.y * &inv,
    }
}

pub fn momentum_source(
    eta: &ScalarField2D,
    v: &VectorField3D,
    w: &ScalarField3D,
    p: &MomentumStepParams,
) -> Result<VectorField3D> {
    check_positive(eta, "momentum_source")?;
    let grid = *eta.grid();
    let n = grid.plane_len();
    let eps = p.epsilon;
    let visc = 0.5 + eps.sqrt();
    let ge = eta.grad_h();
    let q = ge.norm_sq();
    let pf = pressure_force(eta, p.gamma);
    let drag = eta.map(|e| eps * e.powf(-2.0 * p.p0 - 2.0));
    if !drag.is_finite() {
        return Err(Error::DegenerateDensity("momentum drag overflowed".into()));
    }
    let jac = Jacobian::new(v);
    let mut out = VectorField3D::zeros(grid);
    let vx = v.x.values();
    let vy = v.y.values();
    let wv = w.values();
    for k in 0..grid.nz {
        for pt in 0..n {
            let idx = k * n + pt;
            let e = eta.values()[pt];
            let (gx, gy) = (ge.x.values()[pt], ge.y.values()[pt]);
            let (lx, ly) = (2.0 * gx / e, 2.0 * gy / e);
            let a = eps * q.values()[pt] / e;
            let u = [vx[idx], vy[idx]];
            let speed2 = u[0] * u[0] + u[1] * u[1];
            let cubic = if p.nonlinear { eps * speed2 * speed2.sqrt() } else { 0.0 };
            let force = [pf.x.values()[pt], pf.y.values()[pt]];
            for c in 0..2 {
                let dxc = jac.dx[c].values()[idx];
                let dyc = jac.dy[c].values()[idx];
                // d_c v_j for j = 0, 1
                let dcv = if c == 0 {
                    [jac.dx[0].values()[idx], jac.dx[1].values()[idx]]
                } else {
                    [jac.dy[0].values()[idx], jac.dy[1].values()[idx]]
                };
                let mut s = visc * (lx * dxc + ly * dyc) + 0.5 * (dcv[0] * lx + dcv[1] * ly) - force[c]
                    + a * (gx * dxc + gy * dyc)
                    - drag.values()[pt] * u[c]
                    - cubic * u[c];
                if p.nonlinear {
                    s -= u[0] * dxc + u[1] * dyc + wv[idx] * jac.dz[c].values()[idx];
                }
                let dst = if c == 0 { &mut out.x } else { &mut out.y };
                dst.values_mut()[idx] = s;
            }
        }
    }
    Ok(out)
}

pub fn momentum_rhs(
    eta: &ScalarField2D,
    v: &VectorField3D,
    w: &ScalarField3D,
    p: &MomentumStepParams,
) -> Result<VectorField3D> {
    let mut out = momentum_source(eta, v, w, p)?;
    let visc = 0.5 + p.epsilon.sqrt();
    let div = v.div_h();
    let gd = div.grad_h();
    out.x.add_scaled(visc, &v.x.lap_h());
    out.y.add_scaled(visc, &v.y.lap_h());
    out.x.add_scaled(1.0, &v.x.d_zz());
    out.y.add_scaled(1.0, &v.y.d_zz());
    out.x.add_scaled(0.5, &gd.x);
    out.y.add_scaled(0.5, &gd.y);
    Ok(out)
}

/// Momentum-form right-hand side:
/// `div_h(rho D(v)) + d_z(rho d_z v) + sqrt(eps) div_h(rho grad_h v) + F~
///  - rho (v.grad) v - rho w d_z v - grad_h rho^gamma`.
/// Equal to `rho * momentum_rhs` up to discretisation error.
pub fn conservative_rhs(
    eta: &ScalarField2D,
    v: &VectorField3D,
    w: &ScalarField3D,
    p: &MomentumStepParams,
) -> Result<VectorField3D> {
    check_positive(eta, "conservative_rhs")?;
    let eps = p.epsilon;
    let rho = eta.map(|e| e * e);
    let ge = eta.grad_h();
    let q = ge.norm_sq();
    let jac = Jacobian::new(v);
    let pg = rho.map(|r| r.powf(p.gamma)).grad_h();
    let comps = [&v.x, &v.y];
    let mut out = [ScalarField3D::zeros(*v.grid()), ScalarField3D::zeros(*v.grid())];
    for c in 0..2 {
        // D_cj = (d_j v_c + d_c v_j) / 2
        let dcv = if c == 0 { &jac.dx } else { &jac.dy };
        let dcx = (&jac.dx[c] + &dcv[0]).scaled(0.5).mul_planar(&rho);
        let dcy = (&jac.dy[c] + &dcv[1]).scaled(0.5).mul_planar(&rho);
        let visc = VectorField3D { x: dcx, y: dcy }.div_h();
        let vert = comps[c].d_zz().mul_planar(&rho);
        let extra = VectorField3D {
            x: jac.dx[c].mul_planar(&rho),
            y: jac.dy[c].mul_planar(&rho),
        }
        .div_h();
        let mut s = &visc + &vert;
        s.add_scaled(eps.sqrt(), &extra);
        let cross = (&jac.dx[c].mul_planar(&ge.x) + &jac.dy[c].mul_planar(&ge.y)).mul_planar(&(eta * &q));
        s.add_scaled(eps, &cross);
        let drag = comps[c].mul_planar(&rho.map(|r| eps * r.powf(-p.p0)));
        s = &s - &drag;
        if p.nonlinear {
            let speed3 = v.norm_sq().map(|s2| s2 * s2.sqrt());
            s = &s - &(&speed3 * comps[c]).mul_planar(&rho).scaled(eps);
            let adv = &(&(&v.x * &jac.dx[c]) + &(&v.y * &jac.dy[c])) + &(w * &jac.dz[c]);
            s = &s - &adv.mul_planar(&rho);
        }
        let pc = if c == 0 { &pg.x } else { &pg.y };
        s = &s - &pc.lift();
        out[c] = s;
    }
    let [x, y] = out;
    Ok(VectorField3D { x, y })
}

/// Largest Heun step the momentum equation tolerates at this state.
pub fn stable_dt(eta: &ScalarField2D, v: &VectorField3D, p: &MomentumStepParams) -> f64 {
    let g = v.grid();
    let visc = 0.5 + p.epsilon.sqrt();
    // wide-stencil second differences are bounded by 1/h^2, the compact
    // vertical one by 4/hz^2
    let lam_h = (visc + 0.5) * (1.0 / (g.hx * g.hx) + 1.0 / (g.hy * g.hy));
    let lam_z = 4.0 / (g.hz * g.hz);
    let drag = p.epsilon * eta.min().powf(-2.0 * p.p0 - 2.0);
    let mut lim = 2.0 / (lam_h + lam_z + drag);
    let umax = v.max_abs();
    if umax > 0.0 {
        lim = lim.min(g.hx.min(g.hy) / umax);
    }
    p.c_cfl * lim
}

pub(crate) fn check_velocity(v: &VectorField3D, what: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// One Heun step with `eta` frozen; `w` is rebuilt from each stage velocity.
pub fn step_momentum(eta: &ScalarField2D, v: &VectorField3D, p: &MomentumStepParams) -> Result<VectorField3D> {
    let lim = stable_dt(eta, v, p);
    if p.dt > lim {
        warn!("momentum step dt = {:e} exceeds stability estimate {:e}", p.dt, lim);
    }
    let w = reconstruct_w(eta, v)?;
    let k1 = momentum_rhs(eta, v, &w, p)?;
    let mut stage = v.clone();
    stage.add_scaled(p.dt, &k1);
    check_velocity(&stage, "step_momentum stage")?;
    let w1 = reconstruct_w(eta, &stage)?;
    let k2 = momentum_rhs(eta, &stage, &w1, p)?;
    let mut out = v.clone();
    out.add_scaled(0.5 * p.dt, &k1);
    out.add_scaled(0.5 * p.dt, &k2);
    check_velocity(&out, "step_momentum")?;
    Ok(out)
}
