//! Energy, entropy and Mellet-Vasseur functionals, the mass balance, the
//! augmented-energy audit and level-set measures of `sigma = rho^{-1/2}`.

use std::f64::consts::E;

use crate::domain::{integral_omega, integral_omega_h, HorizontalOps, ScalarField2D, ScalarField3D, VectorField3D};
use crate::error::Result;
use crate::vertical::{check_positive, decompose};

pub const CSV_HEADER: &str = "t,energy_physical,energy_augmented,diss_Dv,diss_dzv,bd_grad,bd_grad4,bd_diss_hv,bd_diss_dzw,bd_pressure,mv,mass,mass_residual";

/// Number of dissipation / production terms on the left of the augmented
/// energy inequality.
pub const AUDIT_TERMS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsParams {
    pub epsilon: f64,
    pub p0: f64,
    pub gamma: f64,
    /// Whether `eps rho^{-p0}` feeds the mass balance.
    pub singular_source: bool,
}

impl DiagnosticsParams {
    pub fn new(epsilon: f64, p0: f64, gamma: f64) -> Self {
        DiagnosticsParams {
            epsilon,
            p0,
            gamma,
            singular_source: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy_physical: f64,
    pub energy_augmented: f64,
    /// `int rho |D(v)|^2`
    pub diss_dv: f64,
    /// `int rho |d_z v|^2`
    pub diss_dzv: f64,
    /// `sqrt(eps) int rho |grad_h v|^2`
    pub diss_hv: f64,
    /// `int |grad_h rho^{1/2}|^2`
    pub bd_grad: f64,
    /// `eps int |grad_h rho^{1/2}|^4`
    pub bd_grad4: f64,
    /// `int rho |grad_h v|^2`
    pub bd_diss_hv: f64,
    /// `int rho |d_z w|^2`
    pub bd_diss_dzw: f64,
    /// `int rho^{gamma-2} |grad_h rho|^2`
    pub bd_pressure: f64,
    pub mv: f64,
    pub mass: f64,
    /// Filled in by [`fill_mass_residuals`].
    pub mass_residual: f64,
    /// `eps int rho^{-p0} - eps/16 int rho^{-2} (4 rho + |grad rho|^2) |grad rho|^2`
    pub mass_flux: f64,
    /// Coefficient-weighted left-hand terms of the augmented inequality.
    pub audit_lhs: [f64; AUDIT_TERMS],
    /// `eps gamma/(gamma-1) int rho^{gamma-p0-1} + eps int rho^{-p0}`
    pub audit_rhs: f64,
    /// `int rho^{-p0}`
    pub rho_neg_p0: f64,
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        let cols = [
            self.t,
            self.energy_physical,
            self.energy_augmented,
            self.diss_dv,
            self.diss_dzv,
            self.bd_grad,
            self.bd_grad4,
            self.bd_diss_hv,
            self.bd_diss_dzw,
            self.bd_pressure,
            self.mv,
            self.mass,
            self.mass_residual,
        ];
        cols.iter().map(|c| format!("{c:e}")).collect::<Vec<_>>().join(",")
    }

    pub fn audit_lhs_total(&self) -> f64 {
        self.audit_lhs.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        [
            self.energy_physical,
            self.energy_augmented,
            self.diss_dv,
            self.diss_dzv,
            self.bd_grad,
            self.bd_grad4,
            self.bd_diss_hv,
            self.bd_diss_dzw,
            self.bd_pressure,
            self.mv,
            self.mass,
            self.mass_flux,
            self.audit_rhs,
        ]
        .iter()
        .chain(self.audit_lhs.iter())
        .all(|v| v.is_finite())
    }
}

pub fn write_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 256);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Coefficients of the left-hand terms, in [`DiagnosticsRecord::audit_lhs`] order.
pub fn audit_coefficients(epsilon: f64, p0: f64, gamma: f64) -> [f64; AUDIT_TERMS] {
    let e = epsilon;
    [
        1.0 - (p0 + 1.0) / (4.0 * p0),
        1.0,
        e.sqrt() - e,
        e / 2.0,
        e,
        e / 32.0,
        e / 16.0,
        e * (2.0 * gamma - 1.0) * gamma / (16.0 * (gamma - 1.0)),
        e / 16.0,
        e * e * p0 / (8.0 * (p0 + 1.0)),
        e * e * p0 * (2.0 * p0 + 1.0) / (64.0 * (p0 + 1.0)),
    ]
}

/// Closed form of `sup_rho (gamma/(gamma-1) rho^{gamma-p0-2} - rho^{-p0-1})`,
/// the constant turning the sharp production bound into
/// `2 eps int rho^{-p0} + eps C int rho`.
pub fn c_gamma(p0: f64, gamma: f64) -> f64 {
    let a = gamma / (gamma - 1.0);
    // stationary point of a rho^{gamma-p0-2} - rho^{-p0-1}
    let r = (p0 + 1.0) / (a * (p0 + 2.0 - gamma));
    let r = r.powf(1.0 / (gamma - 1.0));
    (a * r.powf(gamma - p0 - 2.0) - r.powf(-p0 - 1.0)).max(0.0)
}

fn sum_planar(rho: &ScalarField2D, f: &ScalarField3D) -> f64 {
    integral_omega(&f.mul_planar(rho))
}

pub fn compute_record(eta: &ScalarField2D, v: &VectorField3D, p: &DiagnosticsParams, t: f64) -> Result<DiagnosticsRecord> {
    check_positive(eta, "compute_record")?;
    let eps = p.epsilon;
    let (p0, gamma) = (p.p0, p.gamma);
    let rho = eta.map(|e| e * e);

    let speed2 = v.norm_sq();
    let kinetic = 0.5 * sum_planar(&rho, &speed2);
    let pressure = integral_omega_h(&rho.map(|r| r.powf(gamma))) / (gamma - 1.0);
    let mass = integral_omega_h(&rho);
    let rho_neg_p0 = integral_omega_h(&rho.map(|r| r.powf(-p0)));
    let energy_physical = kinetic + pressure;
    let energy_augmented = energy_physical + mass + eps / (4.0 * (1.0 + p0)) * rho_neg_p0;

    let (d11, d21) = (v.x.d_x(), v.x.d_y());
    let (d12, d22) = (v.y.d_x(), v.y.d_y());
    let grad_sq = &(&(&d11 * &d11) + &(&d21 * &d21)) + &(&(&d12 * &d12) + &(&d22 * &d22));
    let shear = (&d21 + &d12).map(|s| 0.5 * s * s);
    let dv_sq = &(&(&d11 * &d11) + &(&d22 * &d22)) + &shear;
    let diss_dv = sum_planar(&rho, &dv_sq);
    let bd_diss_hv = sum_planar(&rho, &grad_sq);
    let dz = VectorField3D {
        x: v.x.d_z(true),
        y: v.y.d_z(true),
    };
    let diss_dzv = sum_planar(&rho, &dz.norm_sq());

    // rho d_z w = -div_h(rho v~)
    let vt = decompose(v).vtilde;
    let flux = VectorField3D {
        x: vt.x.mul_planar(&rho),
        y: vt.y.mul_planar(&rho),
    };
    let dzw_rho = flux.div_h();
    let inv_rho = rho.map(|r| 1.0 / r);
    let bd_diss_dzw = integral_omega(&(&dzw_rho * &dzw_rho).mul_planar(&inv_rho));

    let q = eta.grad_h().norm_sq();
    let bd_grad = integral_omega_h(&q);
    let bd_grad4 = eps * integral_omega_h(&q.map(|s| s * s));
    let grho = rho.grad_h().norm_sq();
    let bd_pressure = integral_omega_h(&rho.zip_map(&grho, |r, g| r.powf(gamma - 2.0) * g));

    let mv = integral_omega(
        &speed2
            .map(|s| {
                let a = E + s;
                a * a.ln()
            })
            .mul_planar(&rho),
    );

    // (4 rho + |grad rho|^2) |grad rho|^2 appears in several terms
    let quartic = rho.zip_map(&grho, |r, g| (4.0 * r + g) * g);
    let weighted = |f: &dyn Fn(f64) -> f64| integral_omega_h(&rho.zip_map(&quartic, |r, qq| f(r) * qq));
    let mass_loss = 0.0625 * eps * weighted(&|r| r.powi(-2));
    let mass_flux = if p.singular_source { eps * rho_neg_p0 } else { 0.0 } - mass_loss;

    let c = audit_coefficients(eps, p0, gamma);
    let rv = |f: &dyn Fn(f64, f64) -> f64| integral_omega(&speed2.mul_planar(&rho.zip_map(&grho, f)));
    let raw = [
        diss_dv,
        diss_dzv,
        bd_diss_hv,
        integral_omega(&speed2.mul_planar(&rho.map(|r| r.powf(-p0)))),
        sum_planar(&rho, &speed2.map(|s| s * s * s.sqrt())),
        rv(&|r, g| g * g / (r * r)),
        rv(&|r, g| g / r),
        weighted(&|r| r.powf(gamma - 3.0)),
        weighted(&|r| r.powi(-2)),
        integral_omega_h(&rho.map(|r| r.powf(-2.0 * p0 - 1.0))),
        weighted(&|r| r.powf(-p0 - 3.0)),
    ];
    let mut audit_lhs = [0.0; AUDIT_TERMS];
    for i in 0..AUDIT_TERMS {
        audit_lhs[i] = c[i] * raw[i];
    }
    let audit_rhs = eps * gamma / (gamma - 1.0) * integral_omega_h(&rho.map(|r| r.powf(gamma - p0 - 1.0))) + eps * rho_neg_p0;

    Ok(DiagnosticsRecord {
        t,
        energy_physical,
        energy_augmented,
        diss_dv,
        diss_dzv,
        diss_hv: eps.sqrt() * bd_diss_hv,
        bd_grad,
        bd_grad4,
        bd_diss_hv,
        bd_diss_dzw,
        bd_pressure,
        mv,
        mass,
        mass_residual: 0.0,
        mass_flux,
        audit_lhs,
        audit_rhs,
        rho_neg_p0,
    })
}

/// Three-point derivative of `f` at `ts[i]` on a possibly nonuniform grid,
/// one-sided at the ends.
pub fn three_point_derivative(ts: &[f64], f: &[f64], i: usize) -> f64 {
    let n = ts.len();
    assert!(n >= 3 && f.len() == n);
    let j = i.clamp(1, n - 2);
    let (t0, t1, t2) = (ts[j - 1], ts[j], ts[j + 1]);
    let (f0, f1, f2) = (f[j - 1], f[j], f[j + 1]);
    let (h1, h2) = (t1 - t0, t2 - t1);
    let s = h1 + h2;
    if i < j {
        -(2.0 * h1 + h2) / (h1 * s) * f0 + s / (h1 * h2) * f1 - h1 / (h2 * s) * f2
    } else if i > j {
        h2 / (h1 * s) * f0 - s / (h1 * h2) * f1 + (h1 + 2.0 * h2) / (h2 * s) * f2
    } else {
        -h2 / (h1 * s) * f0 + (h2 - h1) / (h1 * h2) * f1 + h1 / (h2 * s) * f2
    }
}

/// Mass-balance residual `|d/dt int rho - mass_flux|` at each record.
/// Fewer than three records leave the residuals at zero.
pub fn mass_balance_residuals(records: &[DiagnosticsRecord]) -> Vec<f64> {
    if records.len() < 3 {
        return vec![0.0; records.len()];
    }
    let ts: Vec<f64> = records.iter().map(|r| r.t).collect();
    let ms: Vec<f64> = records.iter().map(|r| r.mass).collect();
    (0..records.len())
        .map(|i| (three_point_derivative(&ts, &ms, i) - records[i].mass_flux).abs())
        .collect()
}

pub fn fill_mass_residuals(records: &mut [DiagnosticsRecord]) {
    let r = mass_balance_residuals(records);
    for (rec, v) in records.iter_mut().zip(r) {
        rec.mass_residual = v;
    }
}

/// Largest residual over a window of interior records.
pub fn mass_balance_residual(records: &[DiagnosticsRecord]) -> f64 {
    let r = mass_balance_residuals(records);
    if r.len() < 3 {
        return 0.0;
    }
    r[1..r.len() - 1].iter().fold(0.0, |m, v| m.max(*v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditViolation {
    pub interval: usize,
    pub excess: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAuditReport {
    pub intervals: usize,
    pub violations: Vec<AuditViolation>,
    /// `(record index, term index)` of every negative dissipation term.
    pub negative_terms: Vec<(usize, usize)>,
    /// Largest `(dE/dt + lhs - rhs) / scale` seen.
    pub max_relative_excess: f64,
    /// Closed-form constant of the coarse production bound.
    pub c_gamma: f64,
    /// `max_t (rhs - 2 eps int rho^{-p0}) / (eps int rho)`, never above `c_gamma`.
    pub c_audit: f64,
}

impl EnergyAuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.negative_terms.is_empty()
    }
}

/// Checks `dE_aug/dt + lhs <= rhs + tol` over each interval with trapezoid
/// averages, `tol = c_tol (dt^2 + h^2) scale`.
pub fn audit_energy_inequality(records: &[DiagnosticsRecord], p: &DiagnosticsParams, h: f64, c_tol: f64) -> EnergyAuditReport {
    let mut violations = Vec::new();
    let mut negative_terms = Vec::new();
    let mut max_rel = f64::NEG_INFINITY;
    for (i, r) in records.iter().enumerate() {
        let diss = [r.diss_dv, r.diss_dzv, r.diss_hv, r.bd_diss_hv, r.bd_diss_dzw, r.bd_pressure];
        for (k, d) in r.audit_lhs.iter().chain(diss.iter()).enumerate() {
            if *d < 0.0 {
                negative_terms.push((i, k));
            }
        }
    }
    for (i, w) in records.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        let de = (w[1].energy_augmented - w[0].energy_augmented) / dt;
        let lhs = 0.5 * (w[0].audit_lhs_total() + w[1].audit_lhs_total());
        let rhs = 0.5 * (w[0].audit_rhs + w[1].audit_rhs);
        let scale = de.abs() + lhs.abs() + rhs.abs();
        let excess = de + lhs - rhs;
        let tol = c_tol * (dt * dt + h * h) * scale;
        if scale > 0.0 {
            max_rel = max_rel.max(excess / scale);
        }
        if excess > tol {
            violations.push(AuditViolation {
                interval: i,
                excess,
                tolerance: tol,
            });
        }
    }
    let c_audit = records
        .iter()
        .map(|r| (r.audit_rhs - 2.0 * p.epsilon * r.rho_neg_p0) / (p.epsilon * r.mass))
        .fold(0.0f64, f64::max);
    EnergyAuditReport {
        intervals: records.len().saturating_sub(1),
        violations,
        negative_terms,
        max_relative_excess: if max_rel.is_finite() { max_rel } else { 0.0 },
        c_gamma: c_gamma(p.p0, p.gamma),
        c_audit,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetProfile {
    pub thresholds: Vec<f64>,
    pub measures: Vec<f64>,
}

/// `a_k = |{(x, t) : sigma > k}|` with `sigma = 1/eta`, by point counting in
/// space and the trapezoid rule in time.
pub fn level_set_profile(frames: &[(f64, ScalarField2D)], thresholds: &[f64]) -> LevelSetProfile {
    let fractions: Vec<Vec<f64>> = frames
        .iter()
        .map(|(_, eta)| {
            let n = eta.values().len() as f64;
            thresholds
                .iter()
                .map(|&k| eta.values().iter().filter(|&&e| 1.0 / e > k).count() as f64 / n)
                .collect()
        })
        .collect();
    let mut measures = vec![0.0; thresholds.len()];
    for i in 1..frames.len() {
        let dt = frames[i].0 - frames[i - 1].0;
        for (m, (a, b)) in measures.iter_mut().zip(fractions[i - 1].iter().zip(&fractions[i])) {
            *m += 0.5 * dt * (a + b);
        }
    }
    LevelSetProfile {
        thresholds: thresholds.to_vec(),
        measures,
    }
}
