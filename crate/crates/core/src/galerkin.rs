//! Small-mode Galerkin replica of the approximating system.
//!
//! Velocity lives in `X_n = [span{e_1..e_n}]^2` with `e = h(x,y) c_m(z)`,
//! `c_m = sqrt(2) cos(m pi z)`; the density `eta` lives in the horizontal span
//! `span{h_1..h_m}`. All integrals use a fixed tensor quadrature: midpoint in
//! each direction, which is exact for the trigonometric products that appear
//! in the mass and orthonormality integrals.
//!
//! The momentum equation is solved in its integral form
//! `M[eta(t)] a(t) = M[eta(0)] a(0) + int_0^t F(eta, v) ds` by Picard iteration,
//! with `eta = S(v)` recomputed on every sweep.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::domain::{integral_omega, integral_omega_h, Grid, ScalarField2D, ScalarField3D, VectorField3D};
use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Parity {
    Cos,
    Sin,
}

/// Normalised horizontal trig mode on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HMode {
    pub k1: i32,
    pub k2: i32,
    pub parity: Parity,
}

impl HMode {
    pub fn k_sq(&self) -> i32 {
        self.k1 * self.k1 + self.k2 * self.k2
    }

    pub fn eigenvalue(&self) -> f64 {
        4.0 * PI * PI * self.k_sq() as f64
    }

    /// Value and horizontal gradient at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        if self.k1 == 0 && self.k2 == 0 {
            return (1.0, 0.0, 0.0);
        }
        let th = 2.0 * PI * (self.k1 as f64 * x + self.k2 as f64 * y);
        let (a, b) = (2.0 * PI * self.k1 as f64, 2.0 * PI * self.k2 as f64);
        let (s, c) = th.sin_cos();
        match self.parity {
            Parity::Cos => (SQRT2 * c, -SQRT2 * a * s, -SQRT2 * b * s),
            Parity::Sin => (SQRT2 * s, SQRT2 * a * c, SQRT2 * b * c),
        }
    }
}

/// All horizontal modes with `|k|^2 <= k_sq_max`, sorted by eigenvalue.
fn horizontal_modes(k_sq_max: i32) -> Vec<HMode> {
    let kmax = (k_sq_max as f64).sqrt().floor() as i32;
    let mut out = vec![HMode {
        k1: 0,
        k2: 0,
        parity: Parity::Cos,
    }];
    for k1 in 0..=kmax {
        for k2 in -kmax..=kmax {
            // one representative per +-k pair
            if k1 * k1 + k2 * k2 > k_sq_max || !(k1 > 0 || (k1 == 0 && k2 > 0)) {
                continue;
            }
            for parity in [Parity::Cos, Parity::Sin] {
                out.push(HMode { k1, k2, parity });
            }
        }
    }
    out.sort_by_key(|m| (m.k_sq(), m.k1, m.k2, m.parity));
    out
}

/// Tensor midpoint quadrature on `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nh: usize,
    pub nz: usize,
}

impl Quadrature {
    pub fn points_h(&self) -> usize {
        self.nh * self.nh
    }

    pub fn points(&self) -> usize {
        self.points_h() * self.nz
    }

    /// Horizontal point `p = i nh + j` at `((i+1/2)/nh, (j+1/2)/nh)`.
    pub fn xy(&self, p: usize) -> (f64, f64) {
        let (i, j) = (p / self.nh, p % self.nh);
        ((i as f64 + 0.5) / self.nh as f64, (j as f64 + 0.5) / self.nh as f64)
    }

    pub fn z(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.nz as f64
    }

    pub fn wh(&self) -> f64 {
        1.0 / self.points_h() as f64
    }

    pub fn w(&self) -> f64 {
        1.0 / self.points() as f64
    }

    /// Four times the Nyquist rate of the highest horizontal wavenumber and
    /// vertical index, never below 16 points.
    pub fn oversampled(kmax: i32, mmax: u32) -> Self {
        Quadrature {
            nh: (8 * kmax.max(1) as usize).max(16),
            nz: (8 * mmax.max(1) as usize).max(16),
        }
    }
}

const ORTHO_TOL: f64 = 1e-10;

/// Horizontal basis for the density layer.
#[derive(Debug, Clone)]
pub struct Basis2D {
    pub modes: Vec<HMode>,
    pub quad: Quadrature,
    val: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
    dy: Vec<Vec<f64>>,
}

impl Basis2D {
    /// Every mode with `|k|^2 <= k_sq_max`.
    pub fn with_k_sq_max(k_sq_max: i32, quad: Quadrature) -> Result<Self> {
        Self::build(horizontal_modes(k_sq_max), quad)
    }

    /// The first `m` modes in eigenvalue order.
    pub fn first(m: usize, quad: Quadrature) -> Result<Self> {
        if m == 0 || m > 64 {
            return Err(Error::InvalidInput(format!("density basis size must be in 1..=64, got {m}")));
        }
        let mut k = 1;
        let mut modes = horizontal_modes(k);
        while modes.len() < m {
            k += 1;
            modes = horizontal_modes(k);
        }
        modes.truncate(m);
        Self::build(modes, quad)
    }

    fn build(modes: Vec<HMode>, quad: Quadrature) -> Result<Self> {
        let np = quad.points_h();
        let mut val = vec![vec![0.0; np]; modes.len()];
        let mut dx = val.clone();
        let mut dy = val.clone();
        for (i, m) in modes.iter().enumerate() {
            for p in 0..np {
                let (x, y) = quad.xy(p);
                let (f, fx, fy) = m.eval(x, y);
                val[i][p] = f;
                dx[i][p] = fx;
                dy[i][p] = fy;
            }
        }
        let b = Basis2D { modes, quad, val, dx, dy };
        let drift = b.orthonormality_drift();
        if drift > ORTHO_TOL {
            return Err(Error::QuadratureResolution(format!(
                "horizontal basis drifts from orthonormality by {drift:e} on {}^2 points",
                b.quad.nh
            )));
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue()).collect()
    }

    pub fn orthonormality_drift(&self) -> f64 {
        let w = self.quad.wh();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..=i {
                let s: f64 = self.val[i].iter().zip(&self.val[j]).map(|(a, b)| a * b).sum::<f64>() * w;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// `eta`, its gradient and Laplacian at the quadrature points.
    pub fn eval(&self, b: &[f64]) -> EtaEval {
        let np = self.quad.points_h();
        let mut e = EtaEval {
            eta: vec![0.0; np],
            ex: vec![0.0; np],
            ey: vec![0.0; np],
            lap: vec![0.0; np],
        };
        for (i, &bi) in b.iter().enumerate() {
            if bi == 0.0 {
                continue;
            }
            let lam = self.modes[i].eigenvalue();
            for p in 0..np {
                e.eta[p] += bi * self.val[i][p];
                e.ex[p] += bi * self.dx[i][p];
                e.ey[p] += bi * self.dy[i][p];
                e.lap[p] -= bi * lam * self.val[i][p];
            }
        }
        e
    }

    /// L2 projection of samples at the quadrature points.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let w = self.quad.wh();
        self.val.iter().map(|e| e.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() * w).collect()
    }

    pub fn project_fn(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let s: Vec<f64> = (0..self.quad.points_h()).map(|p| {
            let (x, y) = self.quad.xy(p);
            f(x, y)
        }).collect();
        self.project(&s)
    }

    pub fn to_grid(&self, b: &[f64], grid: Grid) -> ScalarField2D {
        ScalarField2D::from_fn(grid, |x, y| {
            self.modes.iter().zip(b).map(|(m, c)| c * m.eval(x, y).0).sum()
        })
    }

    /// Projection of a grid field, integrated with the grid's own rule.
    pub fn project_grid(&self, f: &ScalarField2D) -> Vec<f64> {
        let g = *f.grid();
        self.modes
            .iter()
            .map(|m| integral_omega_h(&(f * &ScalarField2D::from_fn(g, |x, y| m.eval(x, y).0))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaEval {
    pub eta: Vec<f64>,
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    pub lap: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mode3 {
    pub h: HMode,
    pub m: u32,
}

impl Mode3 {
    /// `lambda / pi^2`, an exact integer used for ordering.
    pub fn key(&self) -> i64 {
        4 * self.h.k_sq() as i64 + (self.m as i64) * (self.m as i64)
    }

    pub fn eigenvalue(&self) -> f64 {
        PI * PI * self.key() as f64
    }

    pub fn cz(&self, z: f64) -> (f64, f64, f64) {
        if self.m == 0 {
            return (1.0, 0.0, z);
        }
        let a = self.m as f64 * PI;
        let (s, c) = (a * z).sin_cos();
        // value, derivative and primitive from 0
        (SQRT2 * c, -SQRT2 * a * s, SQRT2 * s / a)
    }
}

/// Eigenbasis of `-Laplacian`, periodic horizontally and Neumann in `z`.
#[derive(Debug, Clone)]
pub struct Basis3D {
    pub modes: Vec<Mode3>,
    pub quad: Quadrature,
    hval: Vec<Vec<f64>>,
    hdx: Vec<Vec<f64>>,
    hdy: Vec<Vec<f64>>,
    cz: Vec<Vec<f64>>,
    dcz: Vec<Vec<f64>>,
    icz: Vec<Vec<f64>>,
}

fn first_modes3(n: usize) -> Vec<Mode3> {
    let mut lim = 1i64;
    loop {
        let hm = horizontal_modes((lim / 4) as i32);
        let mmax = (lim as f64).sqrt().floor() as u32;
        let mut all: Vec<(usize, Mode3)> = Vec::new();
        for (idx, h) in hm.iter().enumerate() {
            for m in 0..=mmax {
                let mode = Mode3 { h: *h, m };
                if mode.key() <= lim {
                    all.push((idx, mode));
                }
            }
        }
        if all.len() >= n {
            all.sort_by_key(|(idx, md)| (md.key(), md.m, *idx));
            return all.into_iter().take(n).map(|x| x.1).collect();
        }
        lim *= 2;
    }
}

impl Basis3D {
    pub fn first(n: usize, quad: Quadrature) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::InvalidInput(format!("velocity basis size must be in 1..=64, got {n}")));
        }
        let modes = first_modes3(n);
        let np = quad.points_h();
        let mut b = Basis3D {
            hval: vec![vec![0.0; np]; n],
            hdx: vec![vec![0.0; np]; n],
            hdy: vec![vec![0.0; np]; n],
            cz: vec![vec![0.0; quad.nz]; n],
            dcz: vec![vec![0.0; quad.nz]; n],
            icz: vec![vec![0.0; quad.nz]; n],
            modes,
            quad,
        };
        for (i, md) in b.modes.iter().enumerate() {
            for p in 0..np {
                let (x, y) = b.quad.xy(p);
                let (f, fx, fy) = md.h.eval(x, y);
                b.hval[i][p] = f;
                b.hdx[i][p] = fx;
                b.hdy[i][p] = fy;
            }
            for k in 0..b.quad.nz {
                let (c, dc, ic) = md.cz(b.quad.z(k));
                b.cz[i][k] = c;
                b.dcz[i][k] = dc;
                b.icz[i][k] = ic;
            }
        }
        let drift = b.orthonormality_drift();
        if drift > ORTHO_TOL {
            return Err(Error::QuadratureResolution(format!(
                "velocity basis drifts from orthonormality by {drift:e} on {}^2 x {} points",
                b.quad.nh, b.quad.nz
            )));
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue()).collect()
    }

    /// Full 3D quadrature of `e_i e_j`, worst deviation from the identity.
    pub fn orthonormality_drift(&self) -> f64 {
        let (np, nz) = (self.quad.points_h(), self.quad.nz);
        let w = self.quad.w();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..=i {
                let mut s = 0.0;
                for p in 0..np {
                    let hh = self.hval[i][p] * self.hval[j][p];
                    for k in 0..nz {
                        s += hh * self.cz[i][k] * self.cz[j][k];
                    }
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s * w - target).abs());
            }
        }
        worst
    }

    pub fn max_wavenumber(&self) -> i32 {
        self.modes.iter().map(|m| m.h.k1.abs().max(m.h.k2.abs())).max().unwrap_or(0)
    }

    pub fn max_vertical(&self) -> u32 {
        self.modes.iter().map(|m| m.m).max().unwrap_or(0)
    }

    pub fn to_grid(&self, a: &[[f64; 2]], grid: Grid) -> VectorField3D {
        VectorField3D::from_fn(grid, |x, y, z| {
            let mut v = (0.0, 0.0);
            for (md, c) in self.modes.iter().zip(a) {
                let e = md.h.eval(x, y).0 * md.cz(z).0;
                v.0 += c[0] * e;
                v.1 += c[1] * e;
            }
            v
        })
    }

    pub fn project_grid(&self, v: &VectorField3D) -> Vec<[f64; 2]> {
        let g = *v.grid();
        self.modes
            .iter()
            .map(|md| {
                let e = ScalarField3D::from_fn(g, |x, y, z| md.h.eval(x, y).0 * md.cz(z).0);
                [integral_omega(&(&v.x * &e)), integral_omega(&(&v.y * &e))]
            })
            .collect()
    }

    pub fn project_fn(&self, f: impl Fn(f64, f64, f64) -> [f64; 2]) -> Vec<[f64; 2]> {
        let (np, nz) = (self.quad.points_h(), self.quad.nz);
        let w = self.quad.w();
        let mut out = vec![[0.0; 2]; self.len()];
        for p in 0..np {
            let (x, y) = self.quad.xy(p);
            for k in 0..nz {
                let val = f(x, y, self.quad.z(k));
                for (i, o) in out.iter_mut().enumerate() {
                    let e = self.hval[i][p] * self.cz[i][k] * w;
                    o[0] += val[0] * e;
                    o[1] += val[1] * e;
                }
            }
        }
        out
    }

    /// Depth average `vbar` at the horizontal quadrature points.
    pub fn vbar(&self, a: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.quad.points_h()];
        for (i, md) in self.modes.iter().enumerate() {
            if md.m != 0 {
                continue;
            }
            for (p, o) in out.iter_mut().enumerate() {
                o[0] += a[i][0] * self.hval[i][p];
                o[1] += a[i][1] * self.hval[i][p];
            }
        }
        out
    }

    /// Velocity, its first derivatives and the reconstructed `w` at every
    /// quadrature point. `w` is integrated in closed form:
    /// `w = -sum_j C_j(z) (a_j . grad h_j + 2 h_j a_j . grad eta / eta)` over
    /// modes with `m >= 1`, where `C_j` is the primitive of `c_{m_j}`.
    pub fn eval(&self, a: &[[f64; 2]], eta: &EtaEval) -> VEval {
        let (np, nz) = (self.quad.points_h(), self.quad.nz);
        let n = np * nz;
        let mut e = VEval {
            nz,
            v: [vec![0.0; n], vec![0.0; n]],
            dx: [vec![0.0; n], vec![0.0; n]],
            dy: [vec![0.0; n], vec![0.0; n]],
            dz: [vec![0.0; n], vec![0.0; n]],
            w: vec![0.0; n],
        };
        for (i, md) in self.modes.iter().enumerate() {
            let ai = a[i];
            if ai[0] == 0.0 && ai[1] == 0.0 {
                continue;
            }
            for p in 0..np {
                let (h, hx, hy) = (self.hval[i][p], self.hdx[i][p], self.hdy[i][p]);
                let src = if md.m > 0 {
                    ai[0] * hx + ai[1] * hy + 2.0 * h * (ai[0] * eta.ex[p] + ai[1] * eta.ey[p]) / eta.eta[p]
                } else {
                    0.0
                };
                for k in 0..nz {
                    let q = p * nz + k;
                    let (c, dc) = (self.cz[i][k], self.dcz[i][k]);
                    for comp in 0..2 {
                        e.v[comp][q] += ai[comp] * h * c;
                        e.dx[comp][q] += ai[comp] * hx * c;
                        e.dy[comp][q] += ai[comp] * hy * c;
                        e.dz[comp][q] += ai[comp] * h * dc;
                    }
                    if md.m > 0 {
                        e.w[q] -= self.icz[i][k] * src;
                    }
                }
            }
        }
        e
    }

    /// `sum_p w_p (s0 e_i + sx d_x e_i + sy d_y e_i + sz d_z e_i)` for each mode.
    fn test_against(&self, s: &Integrand) -> Vec<[f64; 2]> {
        let (np, nz) = (self.quad.points_h(), self.quad.nz);
        let w = self.quad.w();
        let mut out = vec![[0.0; 2]; self.len()];
        for (i, o) in out.iter_mut().enumerate() {
            for p in 0..np {
                let (h, hx, hy) = (self.hval[i][p], self.hdx[i][p], self.hdy[i][p]);
                for k in 0..nz {
                    let q = p * nz + k;
                    let (c, dc) = (self.cz[i][k], self.dcz[i][k]);
                    let (e, ex, ey, ez) = (h * c, hx * c, hy * c, h * dc);
                    for comp in 0..2 {
                        o[comp] += s.s0[comp][q] * e + s.sx[comp][q] * ex + s.sy[comp][q] * ey + s.sz[comp][q] * ez;
                    }
                }
            }
            o[0] *= w;
            o[1] *= w;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VEval {
    nz: usize,
    pub v: [Vec<f64>; 2],
    pub dx: [Vec<f64>; 2],
    pub dy: [Vec<f64>; 2],
    pub dz: [Vec<f64>; 2],
    pub w: Vec<f64>,
}

impl VEval {
    /// Horizontal point of flat index `q`.
    fn p(&self, q: usize) -> usize {
        q / self.nz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinParams {
    pub epsilon: f64,
    pub p0: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Inner time steps per window.
    pub steps: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for GalerkinParams {
    fn default() -> Self {
        GalerkinParams {
            epsilon: 1.0,
            p0: 25.0,
            gamma: 2.0,
            delta: 1e-6,
            steps: 32,
            max_iter: 60,
            tol: 1e-8,
            max_halvings: 8,
        }
    }
}

impl GalerkinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.delta > 0.0) || !(self.p0 > 0.0) || !(self.gamma > 1.0) {
            return Err(Error::InvalidInput(format!("invalid Galerkin parameters {self:?}")));
        }
        if self.steps == 0 || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidInput("steps, max_iter and tol must be positive".into()));
        }
        Ok(())
    }
}

fn check_eta(e: &EtaEval, what: &str) -> Result<()> {
    let min = e.eta.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() || !(min > 0.0) {
        return Err(Error::DegenerateDensity(format!("{what}: min eta = {min:e} on the quadrature grid")));
    }
    Ok(())
}

/// Coefficient derivative of the projected density equation
/// `d_t eta = 1/2 P(eps div((1+|grad eta|^2) grad eta) - div(eta vbar) - vbar . grad eta + eps (eta^2+delta)^{-p0-1/2})`,
/// with the divergence terms integrated by parts against each mode.
/// `vbar` is sampled at the basis' horizontal quadrature points.
pub fn eta_galerkin_rhs(basis: &Basis2D, b: &[f64], vbar: &[[f64; 2]], p: &GalerkinParams) -> Result<Vec<f64>> {
    let np = basis.quad.points_h();
    if b.len() != basis.len() || vbar.len() != np {
        return Err(Error::GridMismatch(format!(
            "expected {} coefficients and {np} samples, got {} and {}",
            basis.len(),
            b.len(),
            vbar.len()
        )));
    }
    let e = basis.eval(b);
    check_eta(&e, "eta_galerkin_rhs")?;
    eta_rhs_eval(basis, &e, vbar, p)
}

fn eta_rhs_eval(basis: &Basis2D, e: &EtaEval, vbar: &[[f64; 2]], p: &GalerkinParams) -> Result<Vec<f64>> {
    let np = basis.quad.points_h();
    let eps = p.epsilon;
    // integrand multiplying e_i, d_x e_i, d_y e_i
    let mut s0 = vec![0.0; np];
    let mut sx = vec![0.0; np];
    let mut sy = vec![0.0; np];
    for q in 0..np {
        let (n, gx, gy) = (e.eta[q], e.ex[q], e.ey[q]);
        let diff = eps * (1.0 + gx * gx + gy * gy);
        let [u1, u2] = vbar[q];
        s0[q] = -(u1 * gx + u2 * gy) + eps * (n * n + p.delta).powf(-p.p0 - 0.5);
        sx[q] = -diff * gx + n * u1;
        sy[q] = -diff * gy + n * u2;
    }
    let w = basis.quad.wh();
    let out: Vec<f64> = (0..basis.len())
        .map(|i| {
            let mut acc = 0.0;
            for q in 0..np {
                acc += s0[q] * basis.val[i][q] + sx[q] * basis.dx[i][q] + sy[q] * basis.dy[i][q];
            }
            0.5 * acc * w
        })
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("density layer right-hand side".into()));
    }
    Ok(out)
}

/// Velocity and density spaces sharing one horizontal quadrature.
#[derive(Debug, Clone)]
pub struct GalerkinSpace {
    pub velocity: Basis3D,
    pub density: Basis2D,
}

impl GalerkinSpace {
    /// `n` velocity modes, density modes with `|k|^2 <= k_sq_max`, quadrature
    /// oversampled four times past Nyquist for the highest mode of either.
    pub fn new(n: usize, k_sq_max: i32) -> Result<Self> {
        let probe = first_modes3(n.clamp(1, 64));
        let kv = probe.iter().map(|m| m.h.k1.abs().max(m.h.k2.abs())).max().unwrap_or(0);
        let mv = probe.iter().map(|m| m.m).max().unwrap_or(0);
        let kd = (k_sq_max.max(0) as f64).sqrt().floor() as i32;
        Self::with_quadrature(n, k_sq_max, Quadrature::oversampled(kv.max(kd), mv))
    }

    pub fn with_quadrature(n: usize, k_sq_max: i32, quad: Quadrature) -> Result<Self> {
        Ok(GalerkinSpace {
            velocity: Basis3D::first(n, quad.clone())?,
            density: Basis2D::with_k_sq_max(k_sq_max, quad)?,
        })
    }
}

/// `m_ij = int eta^2 e_i e_j`. Eta is z-independent and the `c_m` are
/// orthonormal, so only pairs with equal `m` couple.
pub fn mass_matrix(basis: &Basis3D, eta: &[f64]) -> Result<DMatrix<f64>> {
    let np = basis.quad.points_h();
    if eta.len() != np {
        return Err(Error::GridMismatch(format!("mass matrix needs {np} samples, got {}", eta.len())));
    }
    let min = eta.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotSpd(format!("min eta = {min:e}")));
    }
    let n = basis.len();
    let w = basis.quad.wh();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            if basis.modes[i].m != basis.modes[j].m {
                continue;
            }
            let s: f64 = (0..np).map(|p| eta[p] * eta[p] * basis.hval[i][p] * basis.hval[j][p]).sum::<f64>() * w;
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let sym = (&m + m.transpose()) * 0.5;
    if Cholesky::new(sym.clone()).is_none() {
        return Err(Error::NotSpd("mass matrix factorisation failed".into()));
    }
    Ok(sym)
}

fn factor(basis: &Basis3D, eta: &EtaEval) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let m = mass_matrix(basis, &eta.eta)?;
    let ch = Cholesky::new(m.clone()).ok_or_else(|| Error::NotSpd("mass matrix factorisation failed".into()))?;
    Ok((m, ch))
}

fn mat_apply(m: &DMatrix<f64>, a: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = a.len();
    let mut out = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][0] += m[(i, j)] * a[j][0];
            out[i][1] += m[(i, j)] * a[j][1];
        }
    }
    out
}

fn mat_solve(ch: &Cholesky<f64, Dyn>, r: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = r.len();
    let rhs = DMatrix::from_fn(n, 2, |i, c| r[i][c]);
    let x = ch.solve(&rhs);
    (0..n).map(|i| [x[(i, 0)], x[(i, 1)]]).collect()
}

/// Integrand fields of the weak momentum form, paired with `(e, d_x e, d_y e, d_z e)`.
struct Integrand {
    s0: [Vec<f64>; 2],
    sx: [Vec<f64>; 2],
    sy: [Vec<f64>; 2],
    sz: [Vec<f64>; 2],
}

/// Weak form of
/// `d_t(eta^2 v) = -div(eta^2 v (x) v) - d_z(eta^2 w v) - grad eta^{2 gamma} + div(eta^2 D(v))
///  + d_z(eta^2 d_z v) + sqrt(eps) div(eta^2 grad v)
///  + eps (eta lap(eta) v + div(eta |grad eta|^2 grad eta (x) v) - |grad eta|^4 v - eta^2 |v|^3 v)`.
fn integrand(e: &EtaEval, v: &VEval, p: &GalerkinParams) -> Integrand {
    let n = v.w.len();
    let eps = p.epsilon;
    let se = eps.sqrt();
    let mut s = Integrand {
        s0: [vec![0.0; n], vec![0.0; n]],
        sx: [vec![0.0; n], vec![0.0; n]],
        sy: [vec![0.0; n], vec![0.0; n]],
        sz: [vec![0.0; n], vec![0.0; n]],
    };
    for qi in 0..n {
        let pp = v.p(qi);
        let (et, gx, gy, lap) = (e.eta[pp], e.ex[pp], e.ey[pp], e.lap[pp]);
        let rho = et * et;
        let q = gx * gx + gy * gy;
        let press = rho.powf(p.gamma);
        let (v1, v2) = (v.v[0][qi], v.v[1][qi]);
        let speed3 = (v1 * v1 + v2 * v2).powf(1.5);
        let w = v.w[qi];
        // D_cj = (d_j v_c + d_c v_j)/2
        let d11 = v.dx[0][qi];
        let d22 = v.dy[1][qi];
        let d12 = 0.5 * (v.dy[0][qi] + v.dx[1][qi]);
        for c in 0..2 {
            let vc = v.v[c][qi];
            let (dcx, dcy) = (if c == 0 { d11 } else { d12 }, if c == 0 { d12 } else { d22 });
            s.s0[c][qi] = eps * (et * lap * vc - q * q * vc - rho * speed3 * vc);
            s.sx[c][qi] = rho * vc * v1 - rho * dcx - se * rho * v.dx[c][qi] - eps * et * q * vc * gx
                + if c == 0 { press } else { 0.0 };
            s.sy[c][qi] = rho * vc * v2 - rho * dcy - se * rho * v.dy[c][qi] - eps * et * q * vc * gy
                + if c == 1 { press } else { 0.0 };
            s.sz[c][qi] = rho * w * vc - rho * v.dz[c][qi];
        }
    }
    s
}

/// `F_i = int (momentum weak form) . e_i` for both components.
pub fn momentum_weak_rhs(space: &GalerkinSpace, a: &[[f64; 2]], b: &[f64], p: &GalerkinParams) -> Result<Vec<[f64; 2]>> {
    let e = space.density.eval(b);
    check_eta(&e, "momentum_weak_rhs")?;
    let v = space.velocity.eval(a, &e);
    Ok(space.velocity.test_against(&integrand(&e, &v, p)))
}

/// Coefficient trajectory sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub a: Vec<Vec<[f64; 2]>>,
    pub eta: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

/// The density solution map `v -> eta`: RK4 on the projected density
/// equation, with `v` linear in time between the nodes of `a`.
pub fn solve_map_s(space: &GalerkinSpace, times: &[f64], a: &[Vec<[f64; 2]>], b0: &[f64], p: &GalerkinParams) -> Result<Vec<Vec<f64>>> {
    if times.len() != a.len() || times.is_empty() {
        return Err(Error::InvalidInput("velocity trajectory and time grid differ in length".into()));
    }
    let basis = &space.density;
    let rhs = |b: &[f64], vb: &[[f64; 2]]| -> Result<Vec<f64>> {
        let e = basis.eval(b);
        check_eta(&e, "solve_map_s")?;
        eta_rhs_eval(basis, &e, vb, p)
    };
    let axpy = |x: &[f64], s: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a + s * b).collect() };
    let mut out = Vec::with_capacity(times.len());
    out.push(b0.to_vec());
    let mut b = b0.to_vec();
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let vb0 = space.velocity.vbar(&a[k]);
        let vb1 = space.velocity.vbar(&a[k + 1]);
        let vbh: Vec<[f64; 2]> = vb0.iter().zip(&vb1).map(|(x, y)| [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])]).collect();
        let k1 = rhs(&b, &vb0)?;
        let k2 = rhs(&axpy(&b, 0.5 * dt, &k1), &vbh)?;
        let k3 = rhs(&axpy(&b, 0.5 * dt, &k2), &vbh)?;
        let k4 = rhs(&axpy(&b, dt, &k3), &vb1)?;
        for i in 0..b.len() {
            b[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(b.clone());
    }
    Ok(out)
}

/// Vertical velocity of `(eta, v)` at the quadrature points.
pub fn vertical_velocity(space: &GalerkinSpace, a: &[[f64; 2]], b: &[f64]) -> Result<Vec<f64>> {
    let e = space.density.eval(b);
    check_eta(&e, "vertical_velocity")?;
    Ok(space.velocity.eval(a, &e).w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub traj: Trajectory,
    /// `M[eta]` at the final time.
    pub mass: DMatrix<f64>,
    /// Sup-in-time coefficient change of each Picard sweep.
    pub trace: Vec<f64>,
    /// Largest ratio of consecutive entries of `trace`.
    pub contraction: f64,
    pub t_n: f64,
    pub halvings: usize,
    /// Interval form of the coefficient equations at the converged iterate.
    pub weak_residual: f64,
}

impl GalerkinState {
    pub fn final_a(&self) -> &[[f64; 2]] {
        self.traj.a.last().expect("trajectory is never empty")
    }

    pub fn final_eta(&self) -> &[f64] {
        self.traj.eta.last().expect("trajectory is never empty")
    }
}

struct Sweep {
    a: Vec<Vec<[f64; 2]>>,
    change: f64,
}

fn picard_sweep(space: &GalerkinSpace, times: &[f64], a: &[Vec<[f64; 2]>], b0: &[f64], p: &GalerkinParams) -> Result<Sweep> {
    let eta = solve_map_s(space, times, a, b0, p)?;
    let basis = &space.velocity;
    let mut forces = Vec::with_capacity(times.len());
    let mut facts = Vec::with_capacity(times.len());
    for (ak, bk) in a.iter().zip(&eta) {
        let e = space.density.eval(bk);
        check_eta(&e, "picard_sweep")?;
        let v = basis.eval(ak, &e);
        forces.push(basis.test_against(&integrand(&e, &v, p)));
        facts.push(factor(basis, &e)?);
    }
    let mut acc = mat_apply(&facts[0].0, &a[0]);
    let mut out = vec![a[0].clone()];
    let mut change: f64 = 0.0;
    for k in 1..times.len() {
        let h = times[k] - times[k - 1];
        for i in 0..acc.len() {
            for c in 0..2 {
                acc[i][c] += 0.5 * h * (forces[k - 1][i][c] + forces[k][i][c]);
            }
        }
        let next = mat_solve(&facts[k].1, &acc);
        for (x, y) in next.iter().zip(&a[k]) {
            change = change.max((x[0] - y[0]).abs()).max((x[1] - y[1]).abs());
        }
        out.push(next);
    }
    if out.iter().flatten().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::NonFinite("Picard iterate".into()));
    }
    Ok(Sweep { a: out, change })
}

/// `max_k max_i |((M a)_{k+1} - (M a)_k)/dt - (F_k + F_{k+1})/2|`.
pub fn weak_residual(space: &GalerkinSpace, traj: &Trajectory, p: &GalerkinParams) -> Result<f64> {
    let basis = &space.velocity;
    let mut ma = Vec::new();
    let mut f = Vec::new();
    for (ak, bk) in traj.a.iter().zip(&traj.eta) {
        let e = space.density.eval(bk);
        check_eta(&e, "weak_residual")?;
        let v = basis.eval(ak, &e);
        f.push(basis.test_against(&integrand(&e, &v, p)));
        ma.push(mat_apply(&mass_matrix(basis, &e.eta)?, ak));
    }
    let mut worst: f64 = 0.0;
    for k in 0..traj.times.len().saturating_sub(1) {
        let h = traj.times[k + 1] - traj.times[k];
        for i in 0..basis.len() {
            for c in 0..2 {
                let r = (ma[k + 1][i][c] - ma[k][i][c]) / h - 0.5 * (f[k][i][c] + f[k + 1][i][c]);
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

fn try_window(
    space: &GalerkinSpace,
    a0: &[[f64; 2]],
    b0: &[f64],
    t0: f64,
    t_n: f64,
    p: &GalerkinParams,
) -> Result<Option<(Trajectory, Vec<f64>, f64)>> {
    let times: Vec<f64> = (0..=p.steps).map(|k| t0 + t_n * k as f64 / p.steps as f64).collect();
    let mut a = vec![a0.to_vec(); times.len()];
    let mut trace = Vec::new();
    let mut contraction: f64 = 0.0;
    for it in 0..p.max_iter {
        let sw = match picard_sweep(space, &times, &a, b0, p) {
            Ok(sw) => sw,
            // a diverging iterate is not a solution; shrink the window instead
            Err(Error::NonFinite(_) | Error::DegenerateDensity(_) | Error::NotSpd(_)) if it > 0 => return Ok(None),
            Err(e) => return Err(e),
        };
        if let Some(&prev) = trace.last() {
            if prev > 0.0 {
                let r: f64 = sw.change / prev;
                contraction = contraction.max(r);
                if r >= 1.0 {
                    return Ok(None);
                }
            }
        }
        trace.push(sw.change);
        a = sw.a;
        if sw.change < p.tol {
            // eta consistent with the accepted iterate
            let eta = solve_map_s(space, &times, &a, b0, p)?;
            return Ok(Some((Trajectory { times, a, eta }, trace, contraction)));
        }
    }
    Ok(None)
}

/// Picard iteration of the integral map on `[t0, t0 + t_n]`, halving `t_n`
/// until the iteration contracts.
pub fn fixed_point_iterate(
    space: &GalerkinSpace,
    a0: &[[f64; 2]],
    b0: &[f64],
    t0: f64,
    t_n: f64,
    p: &GalerkinParams,
) -> Result<GalerkinState> {
    p.validate()?;
    if a0.len() != space.velocity.len() || b0.len() != space.density.len() {
        return Err(Error::GridMismatch("initial coefficients do not match the bases".into()));
    }
    if !(t_n > 0.0) {
        return Err(Error::InvalidInput(format!("window length must be positive, got {t_n}")));
    }
    let mut len = t_n;
    for halvings in 0..=p.max_halvings {
        match try_window(space, a0, b0, t0, len, p)? {
            Some((traj, trace, contraction)) => {
                let e = space.density.eval(traj.eta.last().expect("nonempty"));
                let mass = mass_matrix(&space.velocity, &e.eta)?;
                let weak = weak_residual(space, &traj, p)?;
                return Ok(GalerkinState {
                    traj,
                    mass,
                    trace,
                    contraction,
                    t_n: len,
                    halvings,
                    weak_residual: weak,
                });
            }
            None => len *= 0.5,
        }
    }
    Err(Error::NoContraction(format!(
        "Picard iteration did not contract after {} halvings (last window {len:e})",
        p.max_halvings
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinRun {
    pub traj: Trajectory,
    pub windows: Vec<GalerkinState>,
}

/// Restarts [`fixed_point_iterate`] window by window until `t_end`.
pub fn galerkin_run(space: &GalerkinSpace, a0: &[[f64; 2]], b0: &[f64], t_end: f64, t_n: f64, p: &GalerkinParams) -> Result<GalerkinRun> {
    let mut t = 0.0;
    let mut a = a0.to_vec();
    let mut b = b0.to_vec();
    let mut traj = Trajectory {
        times: vec![0.0],
        a: vec![a.clone()],
        eta: vec![b.clone()],
    };
    let mut windows = Vec::new();
    while t < t_end * (1.0 - 1e-12) {
        let len = t_n.min(t_end - t);
        let st = fixed_point_iterate(space, &a, &b, t, len, p)?;
        t = *st.traj.times.last().expect("nonempty");
        a = st.final_a().to_vec();
        b = st.final_eta().to_vec();
        traj.times.extend_from_slice(&st.traj.times[1..]);
        traj.a.extend_from_slice(&st.traj.a[1..]);
        traj.eta.extend_from_slice(&st.traj.eta[1..]);
        windows.push(st);
    }
    Ok(GalerkinRun { traj, windows })
}

/// Terms of `dE/dt` for `E = 1/2 int eta^2 |v|^2` at one time node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTerms {
    pub energy: f64,
    /// `int eta^2 |D v|^2`
    pub diss_dv: f64,
    /// `int eta^2 |d_z v|^2`
    pub diss_dzv: f64,
    /// `sqrt(eps) int eta^2 |grad_h v|^2`
    pub diss_hv: f64,
    /// `int grad eta^{2 gamma} . v`
    pub pressure: f64,
    /// `int eta^2 ((v.grad) + w d_z) |v|^2/2`
    pub transport: f64,
    /// `int eta lap(eta) |v|^2 - int eta |grad eta|^2 grad eta . grad(|v|^2)/2 - int |grad eta|^4 |v|^2 - int eta^2 |v|^5`
    pub regularizer: f64,
    /// `1/2 int d_t(eta^2) |v|^2`
    pub density_change: f64,
}

impl EnergyTerms {
    pub fn dissipation(&self) -> f64 {
        self.diss_dv + self.diss_dzv + self.diss_hv
    }

    /// `dE/dt` assembled from the individual terms; `sign` multiplies the dissipation.
    pub fn rate(&self, eps: f64, sign: f64) -> f64 {
        -sign * self.dissipation() - self.pressure + self.transport + eps * self.regularizer - self.density_change
    }

    fn scale(&self, eps: f64) -> f64 {
        self.dissipation() + self.pressure.abs() + self.transport.abs() + eps * self.regularizer.abs() + self.density_change.abs()
    }
}

pub fn energy_terms(space: &GalerkinSpace, a: &[[f64; 2]], b: &[f64], vbar: Option<&[[f64; 2]]>, p: &GalerkinParams) -> Result<EnergyTerms> {
    let e = space.density.eval(b);
    check_eta(&e, "energy_terms")?;
    let v = space.velocity.eval(a, &e);
    let own;
    let vb = match vbar {
        Some(x) => x,
        None => {
            own = space.velocity.vbar(a);
            &own
        }
    };
    let db = eta_rhs_eval(&space.density, &e, vb, p)?;
    let de = space.density.eval(&db).eta;
    let nz = space.velocity.quad.nz;
    let w = space.velocity.quad.w();
    let mut t = EnergyTerms::default();
    for qi in 0..v.w.len() {
        let pp = qi / nz;
        let (et, gx, gy, lap) = (e.eta[pp], e.ex[pp], e.ey[pp], e.lap[pp]);
        let rho = et * et;
        let q = gx * gx + gy * gy;
        let (v1, v2) = (v.v[0][qi], v.v[1][qi]);
        let s2 = v1 * v1 + v2 * v2;
        let (a11, a12, a21, a22) = (v.dx[0][qi], v.dy[0][qi], v.dx[1][qi], v.dy[1][qi]);
        let d12 = 0.5 * (a12 + a21);
        let grad_half_s2 = [v1 * a11 + v2 * a21, v1 * a12 + v2 * a22];
        let dz_half_s2 = v1 * v.dz[0][qi] + v2 * v.dz[1][qi];
        t.energy += 0.5 * rho * s2;
        t.diss_dv += rho * (a11 * a11 + a22 * a22 + 2.0 * d12 * d12);
        t.diss_dzv += rho * (v.dz[0][qi].powi(2) + v.dz[1][qi].powi(2));
        t.diss_hv += p.epsilon.sqrt() * rho * (a11 * a11 + a12 * a12 + a21 * a21 + a22 * a22);
        t.pressure -= rho.powf(p.gamma) * (a11 + a22);
        t.transport += rho * (v1 * grad_half_s2[0] + v2 * grad_half_s2[1] + v.w[qi] * dz_half_s2);
        t.regularizer += et * lap * s2 - et * q * (gx * grad_half_s2[0] + gy * grad_half_s2[1]) - q * q * s2 - rho * s2 * s2.powf(1.5);
        t.density_change += et * de[pp] * s2;
    }
    for x in [
        &mut t.energy,
        &mut t.diss_dv,
        &mut t.diss_dzv,
        &mut t.diss_hv,
        &mut t.pressure,
        &mut t.transport,
        &mut t.regularizer,
        &mut t.density_change,
    ] {
        *x *= w;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    /// Allowed residual relative to the magnitude of the terms.
    pub tol: f64,
    /// Fault injection: flips the sign of every dissipation term.
    pub flip_dissipation: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            tol: 1e-3,
            flip_dissipation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinAuditReport {
    pub terms: Vec<EnergyTerms>,
    /// `|(E_{k+1} - E_k)/dt - (R_k + R_{k+1})/2|` per interval.
    pub residuals: Vec<f64>,
    pub relative: Vec<f64>,
    pub max_residual: f64,
    pub negative_dissipation: usize,
    pub flagged: bool,
}

/// Discrete energy identity along a Galerkin trajectory.
pub fn galerkin_energy_audit(space: &GalerkinSpace, traj: &Trajectory, p: &GalerkinParams, opts: AuditOptions) -> Result<GalerkinAuditReport> {
    let sign = if opts.flip_dissipation { -1.0 } else { 1.0 };
    let mut terms = Vec::with_capacity(traj.times.len());
    for (ak, bk) in traj.a.iter().zip(&traj.eta) {
        terms.push(energy_terms(space, ak, bk, None, p)?);
    }
    let mut residuals = Vec::new();
    let mut relative = Vec::new();
    let mut flagged = false;
    for k in 0..terms.len().saturating_sub(1) {
        let h = traj.times[k + 1] - traj.times[k];
        let de = (terms[k + 1].energy - terms[k].energy) / h;
        let r = 0.5 * (terms[k].rate(p.epsilon, sign) + terms[k + 1].rate(p.epsilon, sign));
        let res = (de - r).abs();
        let scale = de.abs() + 0.5 * (terms[k].scale(p.epsilon) + terms[k + 1].scale(p.epsilon));
        let rel = if scale > 0.0 { res / scale } else { 0.0 };
        // the absolute floor keeps rounding on a resting state from counting
        flagged |= res > opts.tol * scale + 1e-14;
        residuals.push(res);
        relative.push(rel);
    }
    let negative_dissipation = terms
        .iter()
        .filter(|t| sign * t.diss_dv < 0.0 || sign * t.diss_dzv < 0.0 || sign * t.diss_hv < 0.0)
        .count();
    flagged |= negative_dissipation > 0;
    Ok(GalerkinAuditReport {
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        terms,
        residuals,
        relative,
        negative_dissipation,
        flagged,
    })
}

/// Coefficient distance `sup_t |a - b|` on matched nodes.
pub fn sup_distance(a: &[Vec<[f64; 2]>], b: &[Vec<[f64; 2]>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u[0] - v[0]).abs().max((u[1] - v[1]).abs())))
        .fold(0.0, f64::max)
}

/// Coefficients of `(a, b)` in a larger space containing every mode of `small`.
pub fn embed(small: &GalerkinSpace, big: &GalerkinSpace, a: &[[f64; 2]], b: &[f64]) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let mut ab = vec![[0.0; 2]; big.velocity.len()];
    for (m, c) in small.velocity.modes.iter().zip(a) {
        let j = big.velocity.modes.iter().position(|x| x == m).ok_or_else(|| Error::InvalidInput(format!("mode {m:?} missing from the larger velocity basis")))?;
        ab[j] = *c;
    }
    let mut bb = vec![0.0; big.density.len()];
    for (m, c) in small.density.modes.iter().zip(b) {
        let j = big.density.modes.iter().position(|x| x == m).ok_or_else(|| Error::InvalidInput(format!("mode {m:?} missing from the larger density basis")))?;
        bb[j] = *c;
    }
    Ok((ab, bb))
}

fn l2_coeff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sum::<f64>().sqrt()
}

/// Galerkin iterate against the finite-difference stepper, both measured in
/// the `L2` norm of the velocity projected onto `X_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub times: Vec<f64>,
    /// Horizontal resolutions of the three stepper grids, `nz = n + 1`.
    pub grids: [usize; 3],
    /// `|P u_h - a|` for each grid and checkpoint.
    pub distance: Vec<[f64; 3]>,
    pub observed_order: Vec<f64>,
    /// Three-grid convergence index of the middle grid (safety factor 1.25).
    pub stepper_error: Vec<f64>,
    /// `|a_n - P_n a_{2n}|` from a Galerkin run with twice the modes.
    pub galerkin_error: Vec<f64>,
}

impl CrossCheck {
    /// The middle grid is the coarser method; its distance must stay within
    /// the two measured truncation errors at every checkpoint.
    pub fn passed(&self) -> bool {
        self.distance
            .iter()
            .zip(&self.stepper_error)
            .zip(&self.galerkin_error)
            .all(|((d, e), g)| d[1] <= e + g)
    }

    pub fn worst_ratio(&self) -> f64 {
        self.distance
            .iter()
            .zip(&self.stepper_error)
            .zip(&self.galerkin_error)
            .map(|((d, e), g)| d[1] / (e + g))
            .fold(0.0, f64::max)
    }
}

pub const GCI_SAFETY: f64 = 1.25;

/// Runs the coupled stepper from the Galerkin initial data on three grids and
/// compares at `checkpoints` evenly spaced nodes of the converged window.
pub fn pde_cross_check(space: &GalerkinSpace, st: &GalerkinState, grids: [usize; 3], checkpoints: usize, p: &GalerkinParams) -> Result<CrossCheck> {
    use crate::solver::{run, stable_dt, SolverParams, State};
    let traj = &st.traj;
    let nodes = traj.times.len() - 1;
    let every = (nodes / checkpoints.max(1)).max(1);
    let idx: Vec<usize> = (1..=nodes).filter(|k| k % every == 0).collect();
    let times: Vec<f64> = idx.iter().map(|&k| traj.times[k]).collect();
    let (a0, b0) = (&traj.a[0], &traj.eta[0]);
    let mut per_grid = Vec::new();
    for &n in &grids {
        let g = Grid::new(n, n, n + 1)?;
        let mut s = State::new(space.density.to_grid(b0, g), space.velocity.to_grid(a0, g))?;
        s.t = traj.times[0];
        let mut sp = SolverParams::new(p.epsilon, p.p0, p.gamma, 1.0);
        sp.delta = p.delta;
        sp.dt = 0.5 * stable_dt(&s, &sp);
        let mut proj = Vec::new();
        for &t in &times {
            let span = t - s.t;
            s = run(s, &sp, span, usize::MAX, |_| Ok(()))?.final_state;
            s.t = t;
            proj.push(space.velocity.project_grid(&s.v));
        }
        per_grid.push(proj);
    }
    // truncation of the Galerkin space itself
    let n2 = 2 * space.velocity.len();
    let k_sq = space.density.modes.iter().map(|m| m.k_sq()).max().unwrap_or(0);
    let big = GalerkinSpace::new(n2.min(64), k_sq)?;
    let (ab, bb) = embed(space, &big, a0, b0)?;
    let t_end = *times.last().expect("at least one checkpoint") - traj.times[0];
    let fine = galerkin_run(&big, &ab, &bb, t_end, st.t_n, p)?;
    let mut distance = Vec::new();
    let mut observed_order = Vec::new();
    let mut stepper_error = Vec::new();
    let mut galerkin_error = Vec::new();
    for (c, &k) in idx.iter().enumerate() {
        let a = &traj.a[k];
        distance.push([l2_coeff(&per_grid[0][c], a), l2_coeff(&per_grid[1][c], a), l2_coeff(&per_grid[2][c], a)]);
        let e01 = l2_coeff(&per_grid[0][c], &per_grid[1][c]);
        let e12 = l2_coeff(&per_grid[1][c], &per_grid[2][c]);
        let r = grids[1] as f64 / grids[0] as f64;
        let order = (e01 / e12).ln() / r.ln();
        let rp = r.powf(order);
        observed_order.push(order);
        stepper_error.push(GCI_SAFETY * e12 * rp / (rp - 1.0));
        let t = traj.times[k] - traj.times[0];
        let j = fine
            .traj
            .times
            .iter()
            .enumerate()
            .min_by(|x, y| (x.1 - t).abs().total_cmp(&(y.1 - t).abs()))
            .map(|x| x.0)
            .expect("nonempty");
        let projected: Vec<[f64; 2]> = space
            .velocity
            .modes
            .iter()
            .map(|m| fine.traj.a[j][big.velocity.modes.iter().position(|x| x == m).expect("embedded")])
            .collect();
        galerkin_error.push(l2_coeff(&projected, a));
    }
    Ok(CrossCheck {
        times,
        grids,
        distance,
        observed_order,
        stepper_error,
        galerkin_error,
    })
}
