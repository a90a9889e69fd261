//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! Desk scale: the standard run is the default 64x64x16 grid to T = 0.25,
//! the smoke run is the default data at 16x16x5 .. 64x64x17 to T = 0.02.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpe_core::degiorgi::{compute_bound, saturated_log_sequence, verify_hypothesis, DecayParams, PowerFamily};
use cpe_core::density::p_laplacian;
use cpe_core::diagnostics::{
    audit_energy_inequality, compute_record, fill_mass_residuals, mass_balance_residual, write_csv, DiagnosticsParams,
    DiagnosticsRecord,
};
use cpe_core::galerkin::{fixed_point_iterate, pde_cross_check, GalerkinParams, GalerkinSpace};
use cpe_core::harness::{diagnose, run_trajectory, RunConfig, DIAGNOSTICS_CSV};
use cpe_core::init::{approximate_initial_data, build_initial_data, InitConfig};
use cpe_core::io::{read_snapshot, write_snapshot, Snapshot};
use cpe_core::solver::{run, stable_dt, SolverParams, State};
use cpe_core::sweep::{run_sweep, SweepPlan};
use cpe_core::vertical::{continuity_residual, reconstruct_w};
use cpe_core::{integral_omega, integral_omega_h, Grid, HorizontalOps, ScalarField2D, ScalarField3D, VectorField2D, VectorField3D};

const ORDER_OPS: f64 = 1.9;
const ADJOINT_TOL: f64 = 1e-12;
const W_TOP_TOL: f64 = 1e-10;
const ORDER_CONTINUITY: f64 = 1.8;
const ORDER_MASS: f64 = 1.8;
const AUDIT_C_TOL: f64 = 1.0;
const GALERKIN_TOL: f64 = 1e-8;
const WEAK_RESIDUAL_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = -1e-12;

type Verdict = (bool, String);

fn order(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

fn grid(n: usize, nz: usize) -> Grid {
    Grid::new(n, n, nz).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(f64::MIN_POSITIVE)
}

fn operators() -> Verdict {
    let f2 = |x: f64, y: f64| (2.0 * PI * x).sin() * (4.0 * PI * y).cos() + (2.0 * PI * (x + y)).cos();
    let fx = |x: f64, y: f64| 2.0 * PI * (2.0 * PI * x).cos() * (4.0 * PI * y).cos() - 2.0 * PI * (2.0 * PI * (x + y)).sin();
    let fy = |x: f64, y: f64| -4.0 * PI * (2.0 * PI * x).sin() * (4.0 * PI * y).sin() - 2.0 * PI * (2.0 * PI * (x + y)).sin();
    let lap = |x: f64, y: f64| -20.0 * PI * PI * (2.0 * PI * x).sin() * (4.0 * PI * y).cos() - 8.0 * PI * PI * (2.0 * PI * (x + y)).cos();
    let (mut eg, mut el, mut ez, mut ezz, mut ez1) = (vec![], vec![], vec![], vec![], vec![]);
    for (n, nz) in [(32, 9), (64, 17), (128, 33)] {
        let g = grid(n, nz);
        let f = ScalarField2D::from_fn(g, f2);
        let gr = f.grad_h();
        let ex = (&gr.x - &ScalarField2D::from_fn(g, fx)).max_abs();
        let ey = (&gr.y - &ScalarField2D::from_fn(g, fy)).max_abs();
        eg.push(ex.max(ey));
        el.push((&f.lap_h() - &ScalarField2D::from_fn(g, lap)).max_abs());
        let h = ScalarField3D::from_fn(g, |x, y, z| f2(x, y) * (PI * z).cos());
        let dz = ScalarField3D::from_fn(g, |x, y, z| -PI * f2(x, y) * (PI * z).sin());
        ez.push((&h.d_z(true) - &dz).max_abs());
        let dzz = ScalarField3D::from_fn(g, |x, y, z| -PI * PI * f2(x, y) * (PI * z).cos());
        ezz.push((&h.d_zz() - &dzz).max_abs());
        let e = ScalarField3D::from_fn(g, |x, _, z| x.cos() * (1.3 * z).exp());
        let de = ScalarField3D::from_fn(g, |x, _, z| 1.3 * x.cos() * (1.3 * z).exp());
        ez1.push((&e.d_z(false) - &de).max_abs());
    }
    let orders = [order(&eg), order(&el), order(&ez), order(&ezz), order(&ez1)];
    let worst_order = orders.iter().map(|o| min(o)).fold(f64::INFINITY, f64::min);

    // summation by parts on random data
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = grid(24, 7);
    let rnd2 = |rng: &mut ChaCha8Rng| {
        let mut f = ScalarField2D::zeros(g);
        f.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    };
    let rnd3 = |rng: &mut ChaCha8Rng| {
        let mut f = ScalarField3D::zeros(g);
        f.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    };
    let mut worst_adj: f64 = 0.0;
    for _ in 0..20 {
        let f = rnd2(&mut rng);
        let u = VectorField2D { x: rnd2(&mut rng), y: rnd2(&mut rng) };
        let gf = f.grad_h();
        let lhs = integral_omega_h(&(&(&gf.x * &u.x) + &(&gf.y * &u.y)));
        let rhs = -integral_omega_h(&(&f * &u.div_h()));
        worst_adj = worst_adj.max(rel(lhs, rhs));
        let q = rnd2(&mut rng);
        worst_adj = worst_adj.max(rel(integral_omega_h(&(&f.lap_h() * &q)), integral_omega_h(&(&f * &q.lap_h()))));

        let a = rnd3(&mut rng);
        let v = VectorField3D { x: rnd3(&mut rng), y: rnd3(&mut rng) };
        let ga = a.grad_h();
        let lhs = integral_omega(&(&(&ga.x * &v.x) + &(&ga.y * &v.y)));
        let rhs = -integral_omega(&(&a * &v.div_h()));
        worst_adj = worst_adj.max(rel(lhs, rhs));
        let b = rnd3(&mut rng);
        worst_adj = worst_adj.max(rel(integral_omega(&(&a.d_zz() * &b)), integral_omega(&(&a * &b.d_zz()))));
    }
    (
        worst_order >= ORDER_OPS && worst_adj <= ADJOINT_TOL,
        format!(
            "min order {worst_order:.3} (grad {:.3?}, lap {:.3?}, d_z {:.3?}, d_zz {:.3?}, one-sided d_z {:.3?}); worst adjointness {worst_adj:.2e}",
            orders[0], orders[1], orders[2], orders[3], orders[4]
        ),
    )
}

fn initial_state(g: Grid, cfg: &InitConfig) -> State {
    let d = build_initial_data(g, cfg).unwrap();
    let a = approximate_initial_data(&d, cfg.epsilon).unwrap();
    State::new(a.eta, a.v).unwrap()
}

fn params(cfg: &InitConfig) -> SolverParams {
    SolverParams::new(cfg.epsilon, cfg.p0, cfg.gamma, 1.0)
}

/// Standard run with a record and a `w` check at every step.
struct Standard {
    records: Vec<DiagnosticsRecord>,
    w_bottom_nonzero: usize,
    worst_top: f64,
    steps: usize,
    dt: f64,
    h: f64,
}

fn standard_run() -> Standard {
    let cfg = InitConfig::default();
    let g = grid(64, 16);
    let s = initial_state(g, &cfg);
    let mut p = params(&cfg);
    p.dt = 0.9 * stable_dt(&s, &p);
    let dp = DiagnosticsParams::new(cfg.epsilon, cfg.p0, cfg.gamma);
    let mut records = Vec::new();
    let (mut bottom, mut top) = (0usize, 0.0f64);
    let out = run(s, &p, 0.25, 1, |st| {
        records.push(compute_record(&st.eta, &st.v, &dp, st.t)?);
        let w = reconstruct_w(&st.eta, &st.v)?;
        bottom += w.level(0).iter().filter(|x| **x != 0.0).count();
        let m = w.max_abs();
        if m > 0.0 {
            top = top.max(w.level(g.nz - 1).iter().fold(0.0f64, |a, x| a.max(x.abs())) / m);
        }
        Ok(())
    })
    .unwrap();
    fill_mass_residuals(&mut records);
    Standard {
        records,
        w_bottom_nonzero: bottom,
        worst_top: top,
        steps: out.steps,
        dt: out.dt,
        h: g.h_max(),
    }
}

fn vertical_contract(std_run: &Standard) -> Verdict {
    let cfg = InitConfig::default();
    let mut errs = Vec::new();
    for (n, nz) in [(32, 9), (64, 17), (128, 33)] {
        let s = initial_state(grid(n, nz), &cfg);
        errs.push(continuity_residual(&s.eta, &s.v).unwrap().max_abs());
    }
    let o = order(&errs);
    (
        std_run.w_bottom_nonzero == 0 && std_run.worst_top <= W_TOP_TOL && min(&o) >= ORDER_CONTINUITY,
        format!(
            "{} states: w(.,0) nonzero at {} points, max|w(.,1)|/max|w| = {:.2e}; continuity residual [{}], orders {o:.3?}",
            std_run.steps + 1,
            std_run.w_bottom_nonzero,
            std_run.worst_top,
            sci(&errs)
        ),
    )
}

fn mass_balance() -> Verdict {
    let cfg = InitConfig::default();
    let levels = [(16, 5), (32, 9), (64, 17)];
    // (dt, h) halve together; dt is set from the finest grid's stability limit
    let fine = initial_state(grid(64, 17), &cfg);
    let dt_fine = 0.9 * stable_dt(&fine, &params(&cfg));
    let mut res = Vec::new();
    for (k, &(n, nz)) in levels.iter().enumerate() {
        let s = initial_state(grid(n, nz), &cfg);
        let mut p = params(&cfg);
        p.dt = dt_fine * 2f64.powi((levels.len() - 1 - k) as i32);
        let dp = DiagnosticsParams::new(cfg.epsilon, cfg.p0, cfg.gamma);
        let mut recs = Vec::new();
        run(s, &p, 0.02, 1, |st| {
            recs.push(compute_record(&st.eta, &st.v, &dp, st.t)?);
            Ok(())
        })
        .unwrap();
        res.push(mass_balance_residual(&recs));
    }
    let o = order(&res);
    (min(&o) >= ORDER_MASS, format!("residuals [{}], orders {o:.3?}", sci(&res)))
}

fn energy_audit(std_run: &Standard) -> Verdict {
    let cfg = InitConfig::default();
    let dp = DiagnosticsParams::new(cfg.epsilon, cfg.p0, cfg.gamma);
    let rep = audit_energy_inequality(&std_run.records, &dp, std_run.h, AUDIT_C_TOL);
    (
        rep.passed(),
        format!(
            "{} intervals (dt {:.3e}, h {:.3e}): {} violations, {} negative terms, max relative excess {:.3e}",
            rep.intervals,
            std_run.dt,
            std_run.h,
            rep.violations.len(),
            rep.negative_terms.len(),
            rep.max_relative_excess
        ),
    )
}

fn eps_ladder() -> Verdict {
    let plan = SweepPlan::new(InitConfig::default(), grid(64, 16), 0.25);
    let out = run_sweep(&plan).unwrap();
    let r = &out.report;
    let ratios: Vec<String> = r.uniformity.iter().map(|u| format!("{} {:.3}", u.name, u.ratio)).collect();
    let inv: Vec<String> = r.trends.iter().map(|t| format!("{} {}", t.name, t.inversions)).collect();
    let failed = r.rows.iter().filter(|x| x.failure.is_some()).count();
    (
        r.passed() && r.uniformity.len() == 3 && r.trends.len() == 2,
        format!("{failed} failed runs; max/min ratios [{}]; inversions [{}]", ratios.join(", "), inv.join(", ")),
    )
}

fn brute_force(samples: &[(f64, f64)], p: &DecayParams) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (k, gk) = samples[i];
            let (l, gl) = samples[j];
            if gl > p.c * (l - k).powf(-p.beta) * gk.powf(1.0 + p.alpha) * (1.0 + 1e-12) {
                v.push((i, j));
            }
        }
    }
    v
}

fn de_giorgi() -> Verdict {
    let mut families = 0;
    let mut vanishing = 0;
    let mut saturated = 0;
    let mut agree = 0;
    let mut sets = 0;
    let mut worst_margin = f64::INFINITY;
    let cs = [0.5, 1.0, 4.0];
    let shapes = [(1.0 / 3.0, 4.0), (0.5, 1.0), (1.0, 2.0), (0.25, 0.5), (2.0, 3.0), (1.0 / 3.0, 1.0), (1.5, 4.0)];
    for &c in &cs {
        for (si, &(alpha, beta)) in shapes.iter().enumerate() {
            let p = DecayParams::new(c, alpha, beta).unwrap();
            let root = 1.5 + 0.5 * si as f64;
            let fam = PowerFamily::minimal(p, root);
            let samples: Vec<(f64, f64)> = (0..60).map(|i| {
                let k = 0.1 * (i + 1) as f64;
                (k, fam.eval(k))
            }).collect();
            families += 1;
            let hyp = verify_hypothesis(&samples, &p).unwrap();
            let brute = brute_force(&samples, &p);
            sets += 1;
            if hyp.violations == brute {
                agree += 1;
            }
            let cert = compute_bound(fam.eval(1.0), &p).unwrap();
            if hyp.violations.is_empty() && fam.eval(cert.l) == 0.0 {
                vanishing += 1;
            }
            worst_margin = worst_margin.min(cert.l - root);
            // extremal recursion from the certified start must collapse to zero
            let y = saturated_log_sequence(&cert, &p, 400);
            let decreasing = y.windows(2).all(|w| w[1] < w[0] || w[1] == f64::NEG_INFINITY);
            let last = *y.last().unwrap();
            if decreasing && (last == f64::NEG_INFINITY || last < f64::MIN_POSITIVE.ln()) {
                saturated += 1;
            }
            // weakened and flattened variants must be judged the same way too
            for scale in [0.5, 0.9] {
                let weak: Vec<(f64, f64)> = samples.iter().map(|&(k, g)| (k, g * scale)).collect();
                let strong = PowerFamily { amp: fam.amp * scale, ..fam };
                let thin: Vec<(f64, f64)> = samples.iter().map(|&(k, _)| (k, strong.eval(k))).collect();
                for s in [weak, thin] {
                    sets += 1;
                    if verify_hypothesis(&s, &p).unwrap().violations == brute_force(&s, &p) {
                        agree += 1;
                    }
                }
            }
            let mut flat = samples.clone();
            for i in 10..flat.len() {
                flat[i].1 = flat[9].1;
            }
            sets += 1;
            if verify_hypothesis(&flat, &p).unwrap().violations == brute_force(&flat, &p) {
                agree += 1;
            }
        }
    }
    (
        families >= 20 && vanishing == families && saturated == families && agree == sets,
        format!(
            "{families} families: g(L) = 0 in {vanishing}, saturation oracle collapses in {saturated}, min L - root {worst_margin:.3}; brute-force agreement {agree}/{sets} sample sets"
        ),
    )
}

fn galerkin() -> Verdict {
    let space = GalerkinSpace::new(8, 4).unwrap();
    let p = GalerkinParams { tol: GALERKIN_TOL, delta: 1e-6, ..GalerkinParams::default() };
    let b0 = space.density.project_fn(|x, y| 1.2 + 0.1 * (2.0 * PI * x).cos() + 0.05 * (2.0 * PI * y).sin());
    let a0: Vec<[f64; 2]> = (0..space.velocity.len())
        .map(|i| if i == 0 { [0.0; 2] } else { [0.1 * (1.3 * i as f64).sin(), 0.1 * (0.7 * i as f64).cos()] })
        .collect();
    let st = fixed_point_iterate(&space, &a0, &b0, 0.0, 0.02, &p).unwrap();
    let last = *st.trace.last().unwrap();
    // geometric decay: least-squares rate of log(change) against the sweep index
    let n = st.trace.len() as f64;
    let (sx, sy) = st.trace.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, c)| (a + i as f64, b + c.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = st.trace.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, c)| {
        let dx = i as f64 - mx;
        (a + dx * (c.ln() - my), b + dx * dx)
    });
    let fitted_rate = (sxy / sxx).exp();
    let geometric = st.trace.len() >= 3 && fitted_rate < 1.0 && st.trace.windows(2).all(|w| w[1] < w[0]);
    let cc = pde_cross_check(&space, &st, [8, 16, 32], 4, &p).unwrap();
    (
        st.contraction < 1.0 && geometric && last <= GALERKIN_TOL && cc.passed() && st.weak_residual <= WEAK_RESIDUAL_TOL,
        format!(
            "T_n {:.3e} after {} halvings: contraction {:.4}, {} sweeps to {last:.2e}, fitted rate {fitted_rate:.4}; cross-check worst distance/tolerance {:.3} (observed order {:.2?}); weak residual {:.2e}",
            st.t_n,
            st.halvings,
            st.contraction,
            st.trace.len(),
            cc.worst_ratio(),
            cc.observed_order,
            st.weak_residual
        ),
    )
}

fn monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    for i in 0..100 {
        let n = [8, 12, 16, 24][i % 4];
        let g = Grid::new(n, n + 2 * (i % 3), 3).unwrap();
        let mut a = ScalarField2D::zeros(g);
        let mut b = ScalarField2D::zeros(g);
        for v in a.values_mut() {
            *v = rng.gen_range(0.05..3.0);
        }
        if i % 2 == 0 {
            for v in b.values_mut() {
                *v = rng.gen_range(0.05..3.0);
            }
        } else {
            // close pairs probe the degenerate end of the pairing
            let s = 10f64.powi(-(i as i32 % 8));
            for (x, y) in b.values_mut().iter_mut().zip(a.values()) {
                *x = y + s * rng.gen_range(-1.0..1.0) * 0.01;
            }
        }
        let d = &p_laplacian(&a) - &p_laplacian(&b);
        let pairing = -integral_omega_h(&(&d * &(&a - &b)));
        worst = worst.min(pairing);
    }
    (worst >= MONOTONE_TOL, format!("min pairing over 100 pairs {worst:.3e}"))
}

fn plumbing() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact = true;
    for i in 0..5 {
        let g = Grid::new(8 + 2 * i, 10, 4 + i).unwrap();
        let mut eta = ScalarField2D::zeros(g);
        eta.values_mut().iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let mut v = VectorField3D::zeros(g);
        v.x.values_mut().iter_mut().for_each(|x| *x = f64::from_bits(rng.gen::<u64>() >> 2));
        v.y.values_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1e3..1e3));
        let s = Snapshot::new(rng.gen(), 2.0, 1e-2, 25.0, eta, v).unwrap();
        let path = dir.path().join(format!("r{i}.bin"));
        write_snapshot(&path, &s).unwrap();
        let back = read_snapshot(&path).unwrap();
        exact &= back.encode() == s.encode() && back.header == s.header;
    }

    let cfg = RunConfig::parse("[grid]\nnx = 16\nny = 16\nnz = 9\n[run]\nt_end = 0.02\noutput_every = 3\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_trajectory(&cfg, &a).unwrap();
    let rb = run_trajectory(&cfg, &b).unwrap();
    let csv_a = std::fs::read(a.join(DIAGNOSTICS_CSV)).unwrap();
    let again = write_csv(&diagnose(&ra.snapshots, cfg.run.singular_source).unwrap());
    let reproduced = again.as_bytes() == csv_a.as_slice();
    let snaps_equal = ra.snapshots.len() == rb.snapshots.len()
        && ra.snapshots.iter().zip(&rb.snapshots).all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
    let run_det = csv_a == std::fs::read(b.join(DIAGNOSTICS_CSV)).unwrap() && snaps_equal;

    let mut plan = SweepPlan::new(InitConfig::default(), grid(16, 5), 0.02);
    plan.output_every = 0.005;
    let s1 = run_sweep(&plan).unwrap();
    let s2 = run_sweep(&plan).unwrap();
    let records = |o: &cpe_core::sweep::SweepOutput| -> Vec<String> {
        o.runs.iter().map(|(_, r)| write_csv(&r.as_ref().unwrap().records)).collect()
    };
    let sweep_det = s1.report == s2.report && records(&s1) == records(&s2);
    (
        exact && reproduced && run_det && sweep_det,
        format!(
            "snapshot round trip exact {exact}; diagnose bit-identical {reproduced} ({} records); run deterministic {run_det}; sweep deterministic {sweep_det}",
            ra.records.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let standard = catch_unwind(standard_run).ok();
    let with_standard = |f: fn(&Standard) -> Verdict| -> Verdict {
        match &standard {
            Some(s) => guarded(|| f(s)),
            None => (false, "standard run failed".into()),
        }
    };
    let results: Vec<(&str, Verdict)> = vec![
        ("operator suite", guarded(operators)),
        ("vertical-velocity contract", with_standard(vertical_contract)),
        ("mass balance", guarded(mass_balance)),
        ("energy audit", with_standard(energy_audit)),
        ("eps-uniformity ladder", guarded(eps_ladder)),
        ("De Giorgi soundness", guarded(de_giorgi)),
        ("Galerkin cross-validation", guarded(galerkin)),
        ("p-Laplacian monotonicity", guarded(monotonicity)),
        ("plumbing", guarded(plumbing)),
    ];
    let mut all = true;
    for (i, (name, (ok, detail))) in results.iter().enumerate() {
        all &= ok;
        println!("criterion {} {} {name}: {detail}", i + 1, if *ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance {} in {:.1?}", if all { "PASS" } else { "FAIL" }, start.elapsed());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
