//! The periodic channel `T^2 x (0,1)`, its field containers and the
//! finite-difference calculus shared by every other module.
//!
//! Horizontal samples sit at cell centres of a uniform `nx x ny` mesh on the
//! unit torus; vertical samples sit on `nz` nodes including both walls.
//! Horizontal derivatives are second-order centred differences, and the
//! horizontal Laplacian is defined as `div_h(grad_h f)` so that the discrete
//! integration-by-parts identity holds to rounding.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx < 8 || ny < 8 || nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "horizontal counts must be even and >= 8, got {nx} x {ny}"
            )));
        }
        if nz < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 vertical nodes, got {nz}"
            )));
        }
        Ok(Grid {
            nx,
            ny,
            nz,
            hx: 1.0 / nx as f64,
            hy: 1.0 / ny as f64,
            hz: 1.0 / (nz - 1) as f64,
        })
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.nx as f64
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.ny as f64
    }

    #[inline]
    pub fn z(&self, k: usize) -> f64 {
        k as f64 / (self.nz - 1) as f64
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn volume_len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Coarsest spacing, used when sizing tolerances.
    pub fn h_max(&self) -> f64 {
        self.hx.max(self.hy).max(self.hz)
    }

    /// Unnormalized trapezoid weight of vertical node `k` (1/2 at the walls).
    #[inline]
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.nz {
            0.5
        } else {
            1.0
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.nz == other.nz
    }
}

macro_rules! scalar_field {
    ($name:ident, $len:ident) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            grid: Grid,
            data: Vec<f64>,
        }

        impl $name {
            pub fn zeros(grid: Grid) -> Self {
                Self::constant(grid, 0.0)
            }

            pub fn constant(grid: Grid, value: f64) -> Self {
                $name {
                    grid,
                    data: vec![value; grid.$len()],
                }
            }

            pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
                if data.len() != grid.$len() {
                    return Err(Error::GridMismatch(format!(
                        "expected {} values, got {}",
                        grid.$len(),
                        data.len()
                    )));
                }
                Ok($name { grid, data })
            }

            #[inline]
            pub fn grid(&self) -> &Grid {
                &self.grid
            }

            #[inline]
            pub fn values(&self) -> &[f64] {
                &self.data
            }

            #[inline]
            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.data
            }

            pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
                $name {
                    grid: self.grid,
                    data: self.data.iter().map(|&v| f(v)).collect(),
                }
            }

            pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
                debug_assert!(self.grid.same_shape(&other.grid));
                $name {
                    grid: self.grid,
                    data: self
                        .data
                        .iter()
                        .zip(&other.data)
                        .map(|(&a, &b)| f(a, b))
                        .collect(),
                }
            }

            /// `self += s * other`
            pub fn add_scaled(&mut self, s: f64, other: &Self) {
                for (a, b) in self.data.iter_mut().zip(&other.data) {
                    *a += s * b;
                }
            }

            pub fn scaled(&self, s: f64) -> Self {
                self.map(|v| s * v)
            }

            pub fn min(&self) -> f64 {
                self.data.iter().copied().fold(f64::INFINITY, f64::min)
            }

            pub fn max(&self) -> f64 {
                self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }

            pub fn max_abs(&self) -> f64 {
                self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|v| v.is_finite())
            }
        }

        impl Add for &$name {
            type Output = $name;
            fn add(self, rhs: &$name) -> $name {
                self.zip_map(rhs, |a, b| a + b)
            }
        }

        impl Sub for &$name {
            type Output = $name;
            fn sub(self, rhs: &$name) -> $name {
                self.zip_map(rhs, |a, b| a - b)
            }
        }

        impl Mul for &$name {
            type Output = $name;
            fn mul(self, rhs: &$name) -> $name {
                self.zip_map(rhs, |a, b| a * b)
            }
        }
    };
}

scalar_field!(ScalarField2D, plane_len);
scalar_field!(ScalarField3D, volume_len);

impl ScalarField2D {
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.plane_len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                data.push(f(grid.x(i), grid.y(j)));
            }
        }
        ScalarField2D { grid, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.nx + i]
    }

    /// Broadcast to every vertical level.
    pub fn lift(&self) -> ScalarField3D {
        let mut data = Vec::with_capacity(self.grid.volume_len());
        for _ in 0..self.grid.nz {
            data.extend_from_slice(&self.data);
        }
        ScalarField3D {
            grid: self.grid,
            data,
        }
    }
}

impl ScalarField3D {
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.volume_len());
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    data.push(f(grid.x(i), grid.y(j), grid.z(k)));
                }
            }
        }
        ScalarField3D { grid, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(k * self.grid.ny + j) * self.grid.nx + i]
    }

    #[inline]
    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.plane_len();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.plane_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn level_field(&self, k: usize) -> ScalarField2D {
        ScalarField2D {
            grid: self.grid,
            data: self.level(k).to_vec(),
        }
    }

    /// Multiply every level pointwise by a z-independent field.
    pub fn mul_planar(&self, f: &ScalarField2D) -> ScalarField3D {
        let n = self.grid.plane_len();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(idx, &v)| v * f.data[idx % n])
            .collect();
        ScalarField3D {
            grid: self.grid,
            data,
        }
    }
}

/// Two horizontal components of a z-independent vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    pub x: ScalarField2D,
    pub y: ScalarField2D,
}

/// Two horizontal components of a vector field on the full channel.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3D {
    pub x: ScalarField3D,
    pub y: ScalarField3D,
}

impl VectorField2D {
    pub fn zeros(grid: Grid) -> Self {
        VectorField2D {
            x: ScalarField2D::zeros(grid),
            y: ScalarField2D::zeros(grid),
        }
    }

    pub fn constant(grid: Grid, a: f64, b: f64) -> Self {
        VectorField2D {
            x: ScalarField2D::constant(grid, a),
            y: ScalarField2D::constant(grid, b),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.x.grid()
    }

    pub fn lift(&self) -> VectorField3D {
        VectorField3D {
            x: self.x.lift(),
            y: self.y.lift(),
        }
    }

    pub fn dot(&self, other: &VectorField2D) -> ScalarField2D {
        &(&self.x * &other.x) + &(&self.y * &other.y)
    }

    pub fn norm_sq(&self) -> ScalarField2D {
        self.dot(self)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl VectorField3D {
    pub fn zeros(grid: Grid) -> Self {
        VectorField3D {
            x: ScalarField3D::zeros(grid),
            y: ScalarField3D::zeros(grid),
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> (f64, f64)) -> Self {
        VectorField3D {
            x: ScalarField3D::from_fn(grid, |x, y, z| f(x, y, z).0),
            y: ScalarField3D::from_fn(grid, |x, y, z| f(x, y, z).1),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.x.grid()
    }

    pub fn norm_sq(&self) -> ScalarField3D {
        self.x.zip_map(&self.y, |a, b| a * a + b * b)
    }

    pub fn add_scaled(&mut self, s: f64, other: &VectorField3D) {
        self.x.add_scaled(s, &other.x);
        self.y.add_scaled(s, &other.y);
    }

    pub fn scaled(&self, s: f64) -> Self {
        VectorField3D {
            x: self.x.scaled(s),
            y: self.y.scaled(s),
        }
    }

    pub fn mul_planar(&self, f: &ScalarField2D) -> Self {
        VectorField3D {
            x: self.x.mul_planar(f),
            y: self.y.mul_planar(f),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.x.max_abs().max(self.y.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Sub for &VectorField3D {
    type Output = VectorField3D;
    fn sub(self, rhs: &VectorField3D) -> VectorField3D {
        VectorField3D {
            x: &self.x - &rhs.x,
            y: &self.y - &rhs.y,
        }
    }
}

impl Add for &VectorField3D {
    type Output = VectorField3D;
    fn add(self, rhs: &VectorField3D) -> VectorField3D {
        VectorField3D {
            x: &self.x + &rhs.x,
            y: &self.y + &rhs.y,
        }
    }
}

// Plane kernels. `src` and `dst` hold any number of stacked (ny, nx) planes.

fn d_x_planes(src: &[f64], dst: &mut [f64], g: &Grid) {
    let (nx, ny) = (g.nx, g.ny);
    let c = 0.5 / g.hx;
    for (sp, dp) in src.chunks_exact(nx * ny).zip(dst.chunks_exact_mut(nx * ny)) {
        for j in 0..ny {
            let row = &sp[j * nx..(j + 1) * nx];
            let out = &mut dp[j * nx..(j + 1) * nx];
            out[0] = (row[1] - row[nx - 1]) * c;
            for i in 1..nx - 1 {
                out[i] = (row[i + 1] - row[i - 1]) * c;
            }
            out[nx - 1] = (row[0] - row[nx - 2]) * c;
        }
    }
}

fn d_y_planes(src: &[f64], dst: &mut [f64], g: &Grid) {
    let (nx, ny) = (g.nx, g.ny);
    let c = 0.5 / g.hy;
    for (sp, dp) in src.chunks_exact(nx * ny).zip(dst.chunks_exact_mut(nx * ny)) {
        for j in 0..ny {
            let jp = if j + 1 == ny { 0 } else { j + 1 };
            let jm = if j == 0 { ny - 1 } else { j - 1 };
            for i in 0..nx {
                dp[j * nx + i] = (sp[jp * nx + i] - sp[jm * nx + i]) * c;
            }
        }
    }
}

/// Horizontal calculus shared by z-independent and full-channel fields.
pub trait HorizontalOps: Sized {
    type Vector;

    fn d_x(&self) -> Self;
    fn d_y(&self) -> Self;
    fn pair(x: Self, y: Self) -> Self::Vector;

    fn grad_h(&self) -> Self::Vector {
        Self::pair(self.d_x(), self.d_y())
    }
}

macro_rules! horizontal_ops {
    ($s:ident, $v:ident) => {
        impl HorizontalOps for $s {
            type Vector = $v;

            fn d_x(&self) -> Self {
                let mut out = $s::zeros(self.grid);
                d_x_planes(&self.data, &mut out.data, &self.grid);
                out
            }

            fn d_y(&self) -> Self {
                let mut out = $s::zeros(self.grid);
                d_y_planes(&self.data, &mut out.data, &self.grid);
                out
            }

            fn pair(x: Self, y: Self) -> $v {
                $v { x, y }
            }
        }

        impl $v {
            pub fn div_h(&self) -> $s {
                let mut out = self.x.d_x();
                let dy = self.y.d_y();
                for (o, b) in out.data.iter_mut().zip(&dy.data) {
                    *o += b;
                }
                out
            }
        }

        impl $s {
            /// `div_h(grad_h f)`: the wide five-point stencil.
            pub fn lap_h(&self) -> $s {
                self.grad_h().div_h()
            }
        }
    };
}

horizontal_ops!(ScalarField2D, VectorField2D);
horizontal_ops!(ScalarField3D, VectorField3D);

pub fn grad_h<F: HorizontalOps>(f: &F) -> F::Vector {
    f.grad_h()
}

impl ScalarField3D {
    /// Vertical derivative. With `neumann` set, boundary nodes use the even
    /// reflection ghost value and therefore return exactly zero; otherwise a
    /// one-sided second-order stencil is used.
    pub fn d_z(&self, neumann: bool) -> ScalarField3D {
        let g = self.grid;
        let n = g.plane_len();
        let nz = g.nz;
        let c = 0.5 / g.hz;
        let mut out = ScalarField3D::zeros(g);
        for k in 1..nz - 1 {
            for p in 0..n {
                out.data[k * n + p] = (self.data[(k + 1) * n + p] - self.data[(k - 1) * n + p]) * c;
            }
        }
        if !neumann {
            let top = nz - 1;
            for p in 0..n {
                let f0 = self.data[p];
                let f1 = self.data[n + p];
                let f2 = self.data[2 * n + p];
                out.data[p] = (-3.0 * f0 + 4.0 * f1 - f2) * c;
                let fa = self.data[top * n + p];
                let fb = self.data[(top - 1) * n + p];
                let fc = self.data[(top - 2) * n + p];
                out.data[top * n + p] = (3.0 * fa - 4.0 * fb + fc) * c;
            }
        }
        out
    }

    /// Second vertical derivative with even-reflection ghost values.
    pub fn d_zz(&self) -> ScalarField3D {
        let g = self.grid;
        let n = g.plane_len();
        let nz = g.nz;
        let c = 1.0 / (g.hz * g.hz);
        let mut out = ScalarField3D::zeros(g);
        for k in 0..nz {
            let km = if k == 0 { 1 } else { k - 1 };
            let kp = if k + 1 == nz { nz - 2 } else { k + 1 };
            for p in 0..n {
                out.data[k * n + p] = (self.data[kp * n + p] - 2.0 * self.data[k * n + p]
                    + self.data[km * n + p])
                    * c;
            }
        }
        out
    }

    /// Trapezoid-rule depth average.
    pub fn depth_average(&self) -> ScalarField2D {
        let g = self.grid;
        let n = g.plane_len();
        let mut acc = vec![0.0; n];
        for k in 0..g.nz {
            let wk = g.trapezoid_weight(k);
            for (a, v) in acc.iter_mut().zip(self.level(k)) {
                *a += wk * v;
            }
        }
        let norm = (g.nz - 1) as f64;
        for a in &mut acc {
            *a /= norm;
        }
        ScalarField2D { grid: g, data: acc }
    }

    /// `F(z) = int_0^z f dz'` by the cumulative trapezoid rule. The top level
    /// reproduces [`ScalarField3D::depth_average`] up to summation order.
    pub fn cumulative_z(&self) -> ScalarField3D {
        let g = self.grid;
        let n = g.plane_len();
        let norm = (g.nz - 1) as f64;
        let mut out = ScalarField3D::zeros(g);
        let mut acc = vec![0.0; n];
        for k in 1..g.nz {
            for p in 0..n {
                acc[p] += 0.5 * (self.data[(k - 1) * n + p] + self.data[k * n + p]);
                out.data[k * n + p] = acc[p] / norm;
            }
        }
        out
    }
}

/// `int_{Omega_h} f` with unit torus measure.
pub fn integral_omega_h(f: &ScalarField2D) -> f64 {
    let s: f64 = f.values().iter().sum();
    s / f.grid().plane_len() as f64
}

/// `int_Omega f`: periodic midpoint horizontally, trapezoid vertically.
pub fn integral_omega(f: &ScalarField3D) -> f64 {
    let g = f.grid();
    let mut total = 0.0;
    for k in 0..g.nz {
        let s: f64 = f.level(k).iter().sum();
        total += g.trapezoid_weight(k) * s;
    }
    total / ((g.nz - 1) as f64 * g.plane_len() as f64)
}

/// `int_Omega rho * f` for z-independent `rho`, without forming the product.
pub fn integral_weighted(rho: &ScalarField2D, f: &ScalarField3D) -> f64 {
    let g = f.grid();
    let mut total = 0.0;
    for k in 0..g.nz {
        let s: f64 = f.level(k).iter().zip(rho.values()).map(|(a, b)| a * b).sum();
        total += g.trapezoid_weight(k) * s;
    }
    total / ((g.nz - 1) as f64 * g.plane_len() as f64)
}
