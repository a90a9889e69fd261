//! Depth averages, fluctuations and the diagnostic vertical velocity.
//!
//! `w` carries no evolution equation: it is rebuilt from `(eta, v)` as
//! `w = -rho^{-1} int_0^z div_h(rho v~) dz'` with `rho = eta^2`.

use crate::domain::{ScalarField2D, ScalarField3D, VectorField2D, VectorField3D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VerticalDecomposition {
    pub vbar: VectorField2D,
    pub vtilde: VectorField3D,
}

pub fn decompose(v: &VectorField3D) -> VerticalDecomposition {
    let vbar = VectorField2D {
        x: v.x.depth_average(),
        y: v.y.depth_average(),
    };
    let vtilde = v - &vbar.lift();
    VerticalDecomposition { vbar, vtilde }
}

pub(crate) fn check_positive(eta: &ScalarField2D, what: &str) -> Result<()> {
    let m = eta.min();
    if !(m > 0.0) || !eta.is_finite() {
        return Err(Error::DegenerateDensity(format!("{what}: min eta = {m:e}")));
    }
    Ok(())
}

/// Vertical velocity from the hydrostatic continuity constraint.
pub fn reconstruct_w(eta: &ScalarField2D, v: &VectorField3D) -> Result<ScalarField3D> {
    check_positive(eta, "reconstruct_w")?;
    let rho = eta.map(|e| e * e);
    let vt = decompose(v).vtilde;
    let flux = VectorField3D {
        x: vt.x.mul_planar(&rho),
        y: vt.y.mul_planar(&rho),
    };
    let inv_rho = rho.map(|r| -1.0 / r);
    Ok(flux.div_h().cumulative_z().mul_planar(&inv_rho))
}

/// Pointwise residual of `d_z(rho w) + div_h(rho v~) = 0`, using the
/// one-sided vertical stencil at the walls.
pub fn continuity_residual(eta: &ScalarField2D, v: &VectorField3D) -> Result<ScalarField3D> {
    let w = reconstruct_w(eta, v)?;
    let rho = eta.map(|e| e * e);
    let vt = decompose(v).vtilde;
    let flux = VectorField3D {
        x: vt.x.mul_planar(&rho),
        y: vt.y.mul_planar(&rho),
    };
    Ok(&w.mul_planar(&rho).d_z(false) + &flux.div_h())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::domain::Grid;

    #[test]
    fn z_independent_velocity_has_no_fluctuation() {
        let g = Grid::new(8, 8, 5).unwrap();
        let v = VectorField3D::from_fn(g, |x, y, _| ((2.0 * PI * x).sin(), y));
        let d = decompose(&v);
        assert!(d.vtilde.max_abs() < 1e-15);
        for k in 0..g.nz {
            for p in 0..g.plane_len() {
                assert!((d.vbar.x.values()[p] - v.x.level(k)[p]).abs() < 1e-15);
            }
        }
        let eta = ScalarField2D::constant(g, 1.3);
        assert!(reconstruct_w(&eta, &v).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn cosine_mode_has_zero_average() {
        // trapezoid on cos(pi z) is exact: the even extension is a trig polynomial
        let g = Grid::new(8, 8, 9).unwrap();
        let v = VectorField3D::from_fn(g, |x, _, z| ((2.0 * PI * x).sin() * (PI * z).cos(), 0.0));
        let d = decompose(&v);
        assert!(d.vbar.x.max_abs() < 1e-15);
        assert!((&d.vtilde - &v).max_abs() < 1e-15);
    }

    #[test]
    fn mean_plus_mode_recombines() {
        let g = Grid::new(8, 8, 6).unwrap();
        let v = VectorField3D::from_fn(g, |_, _, z| (0.7 + 0.2 * (PI * z).cos(), -0.1));
        let d = decompose(&v);
        assert!((d.vbar.x.max() - 0.7).abs() < 1e-14 && (d.vbar.x.min() - 0.7).abs() < 1e-14);
        let back = &d.vbar.lift() + &d.vtilde;
        assert!((&back - &v).max_abs() == 0.0 || (&back - &v).max_abs() < 1e-15);
    }

    #[test]
    fn w_closed_form() {
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid::new(n, 8, n / 2 + 1).unwrap();
            let eta = ScalarField2D::constant(g, 1.0);
            let v = VectorField3D::from_fn(g, |x, _, z| ((2.0 * PI * x).sin() * (PI * z).cos(), 0.0));
            let w = reconstruct_w(&eta, &v).unwrap();
            let exact = ScalarField3D::from_fn(g, |x, _, z| {
                -(2.0 * PI * (2.0 * PI * x).cos()) * (PI * z).sin() / PI
            });
            errs.push((&w - &exact).max_abs());
            for p in 0..g.plane_len() {
                assert_eq!(w.level(0)[p], 0.0);
                assert!(w.level(g.nz - 1)[p].abs() <= 1e-12 * w.max_abs());
            }
        }
        assert!((errs[0] / errs[1]).log2() > 1.9, "{errs:?}");
        assert!((errs[1] / errs[2]).log2() > 1.9, "{errs:?}");
    }

    #[test]
    fn w_is_linear_in_velocity() {
        let g = Grid::new(8, 8, 5).unwrap();
        let eta = ScalarField2D::from_fn(g, |x, y| 1.0 + 0.2 * (2.0 * PI * (x + y)).sin());
        let a = VectorField3D::from_fn(g, |x, y, z| ((PI * z).cos() * y.sin(), x * z));
        let b = VectorField3D::from_fn(g, |x, _, z| (z * z, (2.0 * PI * x).cos()));
        let mut ab = a.clone();
        ab.add_scaled(2.5, &b);
        let wa = reconstruct_w(&eta, &a).unwrap();
        let wb = reconstruct_w(&eta, &b).unwrap();
        let wab = reconstruct_w(&eta, &ab).unwrap();
        let mut combo = wa.clone();
        combo.add_scaled(2.5, &wb);
        assert!((&wab - &combo).max_abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_density() {
        let g = Grid::new(8, 8, 3).unwrap();
        let mut eta = ScalarField2D::constant(g, 1.0);
        eta.values_mut()[5] = 0.0;
        let v = VectorField3D::zeros(g);
        assert!(matches!(reconstruct_w(&eta, &v), Err(Error::DegenerateDensity(_))));
    }
}
