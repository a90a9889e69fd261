//! Initial data `(rho_0, v_0)`, the bound `E_0`, and the lifted and clamped
//! approximating data used by the `eps`-system.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::domain::{
    integral_omega, integral_omega_h, Grid, HorizontalOps, ScalarField2D, VectorField3D,
};
use crate::error::{Error, Result};

const TAU: f64 = 2.0 * PI;

/// Relative gap kept from the strict bounds `eps^{1/p0+1} < rho < eps^{-1/p0-1}`.
pub const BOUND_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoProfile {
    Constant,
    /// `mean + amp sin(2 pi x)`
    SineX,
    /// `mean + amp sin(2 pi x) sin(2 pi y)`
    SineXY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityProfile {
    Zero,
    /// `amp (sin(2 pi y) cos(pi z), 0)`
    Shear,
    /// `amp (sin(2 pi y) cos(pi z) + sin(2 pi x)/2, cos(2 pi x) cos(pi z)/2)`
    Mixed,
}

impl FromStr for RhoProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(RhoProfile::Constant),
            "sine_x" => Ok(RhoProfile::SineX),
            "sine_xy" => Ok(RhoProfile::SineXY),
            _ => Err(Error::Config(format!("unknown density profile `{s}`"))),
        }
    }
}

impl FromStr for VelocityProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(VelocityProfile::Zero),
            "shear" => Ok(VelocityProfile::Shear),
            "mixed" => Ok(VelocityProfile::Mixed),
            _ => Err(Error::Config(format!("unknown velocity profile `{s}`"))),
        }
    }
}

impl RhoProfile {
    pub fn name(&self) -> &'static str {
        match self {
            RhoProfile::Constant => "constant",
            RhoProfile::SineX => "sine_x",
            RhoProfile::SineXY => "sine_xy",
        }
    }
}

impl VelocityProfile {
    pub fn name(&self) -> &'static str {
        match self {
            VelocityProfile::Zero => "zero",
            VelocityProfile::Shear => "shear",
            VelocityProfile::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub gamma: f64,
    pub p0: f64,
    pub varpi: f64,
    pub epsilon: f64,
    pub rho_profile: RhoProfile,
    pub rho_mean: f64,
    pub rho_amp: f64,
    pub v_profile: VelocityProfile,
    pub v_amp: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            gamma: 2.0,
            p0: 25.0,
            varpi: 1.0,
            epsilon: 1e-2,
            rho_profile: RhoProfile::SineXY,
            rho_mean: 1.5,
            rho_amp: 0.3,
            v_profile: VelocityProfile::Mixed,
            v_amp: 0.5,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::Config(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.varpi > 0.0) {
            return Err(Error::Config(format!("varpi must be positive, got {}", self.varpi)));
        }
        let pmin = 24f64.max(self.gamma - 1.0);
        if !(self.p0 > pmin) {
            return Err(Error::Config(format!(
                "p0 must satisfy p0 > max(24, gamma - 1) = {pmin}, got {}",
                self.p0
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !self.rho_mean.is_finite() || !self.rho_amp.is_finite() || !self.v_amp.is_finite() {
            return Err(Error::Config("profile amplitudes must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitData {
    pub cfg: InitConfig,
    pub rho0: ScalarField2D,
    pub v0: VectorField3D,
    pub m0: VectorField3D,
    pub e0_bound: f64,
}

/// Individual terms of `E_0`, in the order they are summed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E0Terms {
    pub kinetic: f64,
    pub higher_moment: f64,
    pub grad_sqrt_rho: f64,
    pub mass: f64,
    pub pressure: f64,
}

impl E0Terms {
    pub fn total(&self) -> f64 {
        self.kinetic + self.higher_moment + self.grad_sqrt_rho + self.mass + self.pressure
    }
}

/// `|| grad_h rho^{1/2} ||_{L^2}` (not squared).
pub fn grad_sqrt_norm(rho: &ScalarField2D) -> f64 {
    let s = rho.map(|r| r.max(0.0).sqrt());
    integral_omega_h(&s.grad_h().norm_sq()).sqrt()
}

/// `int rho |v|^p` for z-independent `rho`, zero on vacuum by convention.
fn weighted_moment(rho: &ScalarField2D, v: &VectorField3D, power: f64) -> f64 {
    let s = v.norm_sq().map(|s2| s2.powf(0.5 * power));
    integral_omega(&s.mul_planar(rho))
}

pub fn e0_terms(rho0: &ScalarField2D, v0: &VectorField3D, gamma: f64, varpi: f64) -> E0Terms {
    E0Terms {
        kinetic: weighted_moment(rho0, v0, 2.0),
        // rho^{-1-varpi} |rho v|^{2+varpi} = rho |v|^{2+varpi}
        higher_moment: weighted_moment(rho0, v0, 2.0 + varpi),
        grad_sqrt_rho: grad_sqrt_norm(rho0),
        mass: integral_omega_h(&rho0.map(f64::abs)),
        pressure: integral_omega_h(&rho0.map(|r| r.abs().powf(gamma))),
    }
}

fn rho_field(grid: Grid, cfg: &InitConfig) -> ScalarField2D {
    let (m, a) = (cfg.rho_mean, cfg.rho_amp);
    match cfg.rho_profile {
        RhoProfile::Constant => ScalarField2D::constant(grid, m),
        RhoProfile::SineX => ScalarField2D::from_fn(grid, |x, _| m + a * (TAU * x).sin()),
        RhoProfile::SineXY => ScalarField2D::from_fn(grid, |x, y| m + a * (TAU * x).sin() * (TAU * y).sin()),
    }
}

fn velocity_field(grid: Grid, cfg: &InitConfig) -> VectorField3D {
    let a = cfg.v_amp;
    match cfg.v_profile {
        VelocityProfile::Zero => VectorField3D::zeros(grid),
        VelocityProfile::Shear => VectorField3D::from_fn(grid, |_, y, z| (a * (TAU * y).sin() * (PI * z).cos(), 0.0)),
        VelocityProfile::Mixed => VectorField3D::from_fn(grid, |x, y, z| {
            (
                a * ((TAU * y).sin() * (PI * z).cos() + 0.5 * (TAU * x).sin()),
                0.5 * a * (TAU * x).cos() * (PI * z).cos(),
            )
        }),
    }
}

/// Validates arbitrary sampled data and assembles [`InitData`].
pub fn from_fields(cfg: InitConfig, rho0: ScalarField2D, v0: VectorField3D) -> Result<InitData> {
    cfg.validate()?;
    if !rho0.grid().same_shape(v0.grid()) {
        return Err(Error::GridMismatch("rho0 and v0 live on different grids".into()));
    }
    if !rho0.is_finite() || !v0.is_finite() {
        return Err(Error::InvalidInput("initial data must be finite".into()));
    }
    if rho0.min() < 0.0 {
        return Err(Error::InvalidInput(format!("rho0 is negative somewhere (min {})", rho0.min())));
    }
    let g = *rho0.grid();
    let n = g.plane_len();
    for k in 0..g.nz {
        for p in 0..n {
            if rho0.values()[p] == 0.0 && (v0.x.level(k)[p] != 0.0 || v0.y.level(k)[p] != 0.0) {
                return Err(Error::InvalidInput(format!(
                    "nonzero momentum on the vacuum set at ({}, {}, {})",
                    g.x(p % g.nx),
                    g.y(p / g.nx),
                    g.z(k)
                )));
            }
        }
    }
    let m0 = v0.mul_planar(&rho0);
    let e0_bound = e0_terms(&rho0, &v0, cfg.gamma, cfg.varpi).total();
    Ok(InitData {
        cfg,
        rho0,
        v0,
        m0,
        e0_bound,
    })
}

pub fn build_initial_data(grid: Grid, cfg: &InitConfig) -> Result<InitData> {
    cfg.validate()?;
    let rho0 = rho_field(grid, cfg);
    if rho0.min() < 0.0 {
        return Err(Error::InvalidInput(format!(
            "density profile is negative (min {:e}); reduce rho_amp",
            rho0.min()
        )));
    }
    from_fields(*cfg, rho0, velocity_field(grid, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxData {
    pub epsilon: f64,
    pub rho: ScalarField2D,
    pub eta: ScalarField2D,
    pub v: VectorField3D,
    /// Left side of the admissibility inequality.
    pub lhs: f64,
    /// `C_0`.
    pub c0: f64,
}

pub fn rho_bounds(epsilon: f64, p0: f64) -> (f64, f64) {
    let e = 1.0 / p0 + 1.0;
    (epsilon.powf(e), epsilon.powf(-e))
}

/// Lift by `2 eps^{1/p0+1}` and clamp strictly inside the admissible band.
pub fn approximate_initial_data(data: &InitData, epsilon: f64) -> Result<ApproxData> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let cfg = &data.cfg;
    let (lo, hi) = rho_bounds(epsilon, cfg.p0);
    let (clo, chi) = (lo * (1.0 + BOUND_MARGIN), hi * (1.0 - BOUND_MARGIN));
    let rho = data.rho0.map(|r| (r + 2.0 * lo).clamp(clo, chi));
    if !(rho.min() > lo && rho.max() < hi) {
        return Err(Error::InvalidInput("strict density bounds violated after clamping".into()));
    }
    let v = data.v0.clone();
    let eta = rho.map(f64::sqrt);
    let q = eta.grad_h().norm_sq();
    let lhs = weighted_moment(&rho, &v, 2.0)
        + integral_omega_h(&rho.map(|r| r.powf(cfg.gamma)))
        + integral_omega_h(&rho)
        + integral_omega_h(&q)
        + weighted_moment(&rho, &v, 2.0 + cfg.varpi)
        + epsilon * integral_omega_h(&rho.map(|r| r.powf(-cfg.p0)))
        + epsilon * integral_omega_h(&q.map(|s| s * s));
    let t = e0_terms(&data.rho0, &data.v0, cfg.gamma, cfg.varpi);
    let c0 = 2.0 * t.total();
    if !(lhs < c0) {
        return Err(Error::InvalidInput(format!(
            "approximating data fails the admissibility bound: {lhs:e} >= C0 = {c0:e}"
        )));
    }
    Ok(ApproxData {
        epsilon,
        rho,
        eta,
        v,
        lhs,
        c0,
    })
}

/// Largest one-sided `|d_z v|` at the walls, for the boundary contract.
pub fn boundary_slope(v: &VectorField3D) -> f64 {
    let dx = v.x.d_z(false);
    let dy = v.y.d_z(false);
    let g = v.grid();
    let mut m: f64 = 0.0;
    for k in [0, g.nz - 1] {
        for (a, b) in dx.level(k).iter().zip(dy.level(k)) {
            m = m.max(a.abs()).max(b.abs());
        }
    }
    m
}

/// `L^1` distance between two z-independent fields.
pub fn l1_distance(a: &ScalarField2D, b: &ScalarField2D) -> f64 {
    integral_omega_h(&(a - b).map(f64::abs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(32, 32, 9).unwrap()
    }

    #[test]
    fn defaults_validate() {
        InitConfig::default().validate().unwrap();
    }

    #[test]
    fn p0_constraint() {
        let mut c = InitConfig::default();
        c.p0 = 25.0;
        assert!(c.validate().is_ok());
        c.p0 = 20.0;
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("p0 must satisfy"), "{e}");
        c.p0 = 30.0;
        c.gamma = 32.0;
        assert!(c.validate().is_err());
        c.gamma = 1.0;
        c.p0 = 25.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_data_gives_two() {
        let cfg = InitConfig {
            rho_profile: RhoProfile::Constant,
            rho_mean: 1.0,
            v_profile: VelocityProfile::Zero,
            ..InitConfig::default()
        };
        let d = build_initial_data(grid(), &cfg).unwrap();
        assert!((d.e0_bound - 2.0).abs() < 1e-14, "{}", d.e0_bound);
    }

    #[test]
    fn grad_sqrt_norm_converges_to_reference() {
        // reference from a very fine 1D midpoint rule of ((rho^{1/2})')^2
        let reference = {
            let n = 200_000;
            let mut s = 0.0;
            for i in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                let r = 1.0 + 0.5 * (TAU * x).sin();
                let d = 0.5 * TAU * (TAU * x).cos() / (2.0 * r.sqrt());
                s += d * d;
            }
            (s / n as f64).sqrt()
        };
        let cfg = InitConfig {
            rho_profile: RhoProfile::SineX,
            rho_mean: 1.0,
            rho_amp: 0.5,
            v_profile: VelocityProfile::Zero,
            ..InitConfig::default()
        };
        let errs: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let d = build_initial_data(Grid::new(n, 8, 3).unwrap(), &cfg).unwrap();
                let t = e0_terms(&d.rho0, &d.v0, 2.0, 1.0);
                assert!((d.e0_bound - t.total()).abs() < 1e-15);
                (t.grad_sqrt_rho - reference).abs()
            })
            .collect();
        assert!(errs[2] < 1e-3 && (errs[0] / errs[1]).log2() > 1.9, "{errs:?}");
        // the remaining terms have closed forms
        let d = build_initial_data(Grid::new(64, 8, 3).unwrap(), &cfg).unwrap();
        let t = e0_terms(&d.rho0, &d.v0, 2.0, 1.0);
        assert!((t.mass - 1.0).abs() < 1e-14);
        assert!((t.pressure - 1.125).abs() < 1e-14);
        assert_eq!(t.kinetic, 0.0);
    }

    #[test]
    fn vacuum_with_momentum_rejected() {
        let g = Grid::new(8, 8, 3).unwrap();
        let rho = ScalarField2D::from_fn(g, |x, _| if x < 0.25 { 0.0 } else { 1.0 });
        let v = VectorField3D::from_fn(g, |_, _, _| (0.1, 0.0));
        let e = from_fields(InitConfig::default(), rho.clone(), v).unwrap_err();
        assert!(e.to_string().contains("vacuum"), "{e}");
        // at rest the same vacuum patch is admissible, and the moment terms vanish there
        let v = VectorField3D::from_fn(g, |x, _, _| if x < 0.25 { (0.0, 0.0) } else { (0.1, 0.0) });
        let d = from_fields(InitConfig::default(), rho, v).unwrap();
        assert!(d.m0.x.values().iter().zip(d.rho0.lift().values()).all(|(m, r)| *r > 0.0 || *m == 0.0));
        assert!(d.e0_bound.is_finite());
    }

    #[test]
    fn negative_profile_rejected() {
        let cfg = InitConfig {
            rho_mean: 0.2,
            rho_amp: 0.5,
            ..InitConfig::default()
        };
        assert!(build_initial_data(grid(), &cfg).is_err());
    }

    #[test]
    fn clamp_formula_on_unit_density() {
        let cfg = InitConfig {
            rho_profile: RhoProfile::Constant,
            rho_mean: 1.0,
            v_profile: VelocityProfile::Zero,
            ..InitConfig::default()
        };
        let d = build_initial_data(grid(), &cfg).unwrap();
        let a = approximate_initial_data(&d, 1e-2).unwrap();
        let want = 1.0 + 2.0 * 0.01f64.powf(1.04);
        assert!(a.rho.values().iter().all(|r| (r - want).abs() < 1e-15));
        let (lo, hi) = rho_bounds(1e-2, 25.0);
        assert!(a.rho.min() > lo && a.rho.max() < hi);
        assert!(a.lhs < a.c0);
        assert!((a.eta.values()[0] - want.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vacuum_base_profile_is_inadmissible() {
        // the lifted vacuum sits at 2 eps^{1/p0+1}, where eps rho^{-p0} blows past C0
        let g = Grid::new(8, 8, 3).unwrap();
        let rho = ScalarField2D::from_fn(g, |x, _| if x < 0.25 { 0.0 } else { 1.0 });
        let d = from_fields(InitConfig::default(), rho, VectorField3D::zeros(g)).unwrap();
        let e = approximate_initial_data(&d, 0.1).unwrap_err();
        assert!(e.to_string().contains("admissibility"), "{e}");
    }

    #[test]
    fn lift_converges_in_l1() {
        let d = build_initial_data(grid(), &InitConfig::default()).unwrap();
        let dist: Vec<f64> = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
            .iter()
            .map(|&e| l1_distance(&approximate_initial_data(&d, e).unwrap().rho, &d.rho0))
            .collect();
        assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
        assert!(dist[4] < 3e-3);
    }

    #[test]
    fn default_velocity_obeys_wall_condition() {
        let mut prev = f64::INFINITY;
        for nz in [9usize, 17, 33] {
            let d = build_initial_data(Grid::new(16, 16, nz).unwrap(), &InitConfig::default()).unwrap();
            assert_eq!(d.v0.x.d_z(true).level(0).iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
            let s = boundary_slope(&d.v0);
            assert!(s < prev / 3.9, "{s} {prev}");
            prev = s;
        }
    }
}
