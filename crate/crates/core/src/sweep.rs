//! The `eps`-continuation study: one trajectory per `eps` from shared base
//! data, then uniformity of the a priori functionals and Cauchy distances
//! between neighbouring rungs of the ladder.

use rayon::prelude::*;

use crate::diagnostics::{compute_record, fill_mass_residuals, DiagnosticsParams, DiagnosticsRecord};
use crate::domain::{integral_omega, integral_omega_h, Grid};
use crate::error::{Error, Result};
use crate::init::{approximate_initial_data, build_initial_data, InitConfig, InitData};
use crate::solver::{self, SolverParams, State};

pub const DEFAULT_LADDER: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    /// Fraction of the stability estimate at `t = 0`.
    Stable(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub epsilons: Vec<f64>,
    pub init: InitConfig,
    pub grid: Grid,
    pub t_end: f64,
    /// Spacing of stored frames; every run stores the same times.
    pub output_every: f64,
    pub dt: DtPolicy,
    pub uniformity_factor: f64,
    pub allowed_inversions: usize,
    pub delta: f64,
    pub singular_source: bool,
}

impl SweepPlan {
    pub fn new(init: InitConfig, grid: Grid, t_end: f64) -> Self {
        SweepPlan {
            epsilons: DEFAULT_LADDER.to_vec(),
            init,
            grid,
            t_end,
            output_every: t_end / 20.0,
            dt: DtPolicy::Stable(0.9),
            uniformity_factor: 3.0,
            allowed_inversions: 1,
            delta: 0.0,
            singular_source: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("the eps ladder is empty".into()));
        }
        for (i, &e) in self.epsilons.iter().enumerate() {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!("eps = {e} lies outside (0, 1)")));
            }
            if i > 0 && !(e < self.epsilons[i - 1]) {
                return Err(Error::Config("the eps ladder must decrease strictly".into()));
            }
        }
        if !(self.t_end > 0.0) || !(self.output_every > 0.0) || self.output_every > self.t_end * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "need 0 < output_every <= t_end, got {} and {}",
                self.output_every, self.t_end
            )));
        }
        match self.dt {
            DtPolicy::Fixed(dt) if !(dt > 0.0) => return Err(Error::Config(format!("dt must be positive, got {dt}"))),
            DtPolicy::Stable(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Config(format!("stability fraction must lie in (0, 1], got {f}")))
            }
            _ => {}
        }
        if !(self.uniformity_factor >= 1.0) {
            return Err(Error::Config("uniformity factor must be at least 1".into()));
        }
        self.init.validate()
    }

    pub fn frame_count(&self) -> usize {
        ((self.t_end / self.output_every) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn frame_times(&self) -> Vec<f64> {
        let n = self.frame_count();
        (0..=n).map(|k| self.t_end * k as f64 / n as f64).collect()
    }
}

/// Stored states of one trajectory at the plan's frame times.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub frames: Vec<State>,
}

impl Series {
    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|s| s.t).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub epsilon: f64,
    pub dt: f64,
    pub steps: usize,
    pub records: Vec<DiagnosticsRecord>,
    pub series: Series,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalMaxima {
    pub energy: f64,
    pub bd: f64,
    pub mv: f64,
}

impl FunctionalMaxima {
    pub fn of(records: &[DiagnosticsRecord]) -> Self {
        let mx = |f: fn(&DiagnosticsRecord) -> f64| records.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        FunctionalMaxima {
            energy: mx(|r| r.energy_augmented),
            bd: mx(|r| r.bd_grad),
            mv: mx(|r| r.mv),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub epsilon: f64,
    pub maxima: Option<FunctionalMaxima>,
    pub failure: Option<String>,
    pub numerical_failure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub eps: (f64, f64),
    /// `|| rho_i - rho_j ||_{L1(Omega x (0,T))}`
    pub rho_l1: f64,
    /// `|| rho_i^{1/2} v_i - rho_j^{1/2} v_j ||_{L2(Omega x (0,T))}`
    pub m_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformityVerdict {
    pub name: &'static str,
    pub max: f64,
    pub min: f64,
    pub ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendVerdict {
    pub name: &'static str,
    pub inversions: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<RunRow>,
    pub distances: Vec<Distance>,
    pub uniformity: Vec<UniformityVerdict>,
    pub trends: Vec<TrendVerdict>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.failure.is_none())
            && self.uniformity.iter().all(|u| u.passed)
            && self.trends.iter().all(|t| t.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# eps sweep report\n\nruns\n");
        for r in &self.rows {
            match (&r.maxima, &r.failure) {
                (Some(m), _) => s.push_str(&format!(
                    "  eps={:e} max_energy={:e} max_bd={:e} max_mv={:e}\n",
                    r.epsilon, m.energy, m.bd, m.mv
                )),
                (None, Some(f)) => s.push_str(&format!("  eps={:e} FAILED: {f}\n", r.epsilon)),
                _ => {}
            }
        }
        s.push_str("\ncauchy distances\n");
        for d in &self.distances {
            s.push_str(&format!("  {:e} vs {:e}: rho_L1={:e} m_L2={:e}\n", d.eps.0, d.eps.1, d.rho_l1, d.m_l2));
        }
        s.push_str("\nuniformity (max/min across eps)\n");
        for u in &self.uniformity {
            s.push_str(&format!(
                "  {}: ratio={:.4} [{}]\n",
                u.name,
                u.ratio,
                if u.passed { "pass" } else { "FAIL" }
            ));
        }
        s.push_str("\ntrends (decrease down the ladder)\n");
        for t in &self.trends {
            s.push_str(&format!(
                "  {}: inversions={} [{}]\n",
                t.name,
                t.inversions,
                if t.passed { "pass" } else { "FAIL" }
            ));
        }
        s.push_str(
            "\nnote: a monotone trend is only a practical proxy; convergence is known along subsequences only.\n",
        );
        s
    }
}

fn trapezoid(ts: &[f64], f: &[f64]) -> f64 {
    ts.windows(2).zip(f.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// Space-time distances between two series on matched grids and times.
pub fn cauchy_in_eps(a: &Series, b: &Series) -> Result<(f64, f64)> {
    if a.frames.len() != b.frames.len() || a.frames.is_empty() {
        return Err(Error::GridMismatch("series hold different numbers of frames".into()));
    }
    let mut ts = Vec::with_capacity(a.frames.len());
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for (x, y) in a.frames.iter().zip(&b.frames) {
        if !x.eta.grid().same_shape(y.eta.grid()) {
            return Err(Error::GridMismatch("series live on different grids".into()));
        }
        if (x.t - y.t).abs() > 1e-12 * (1.0 + x.t.abs()) {
            return Err(Error::GridMismatch(format!("frame times differ: {} vs {}", x.t, y.t)));
        }
        ts.push(x.t);
        l1.push(integral_omega_h(&x.rho().zip_map(&y.rho(), |p, q| (p - q).abs())));
        let mx = x.v.mul_planar(&x.eta);
        let my = y.v.mul_planar(&y.eta);
        let d = &mx - &my;
        l2.push(integral_omega(&d.norm_sq()));
    }
    if ts.len() == 1 {
        return Ok((l1[0], l2[0].sqrt()));
    }
    Ok((trapezoid(&ts, &l1), trapezoid(&ts, &l2).sqrt()))
}

fn run_one(plan: &SweepPlan, data: &InitData, eps: f64) -> Result<RunResult> {
    let approx = approximate_initial_data(data, eps)?;
    let state = State::new(approx.eta, approx.v)?;
    let mut p = SolverParams::new(eps, plan.init.p0, plan.init.gamma, 1.0);
    p.delta = plan.delta;
    p.singular_source = plan.singular_source;
    p.dt = match plan.dt {
        DtPolicy::Fixed(dt) => dt,
        DtPolicy::Stable(f) => f * solver::stable_dt(&state, &p),
    };
    let dp = DiagnosticsParams {
        epsilon: eps,
        p0: plan.init.p0,
        gamma: plan.init.gamma,
        singular_source: plan.singular_source,
    };
    let times = plan.frame_times();
    let mut records = vec![compute_record(&state.eta, &state.v, &dp, 0.0)?];
    let mut frames = vec![state.clone()];
    let mut s = state;
    let mut steps = 0;
    let mut dt_used = p.dt;
    for w in times.windows(2) {
        let out = solver::run(s, &p, w[1] - w[0], usize::MAX, |_| Ok(()))?;
        steps += out.steps;
        dt_used = out.dt;
        s = out.final_state;
        s.t = w[1];
        records.push(compute_record(&s.eta, &s.v, &dp, s.t)?);
        frames.push(s.clone());
    }
    fill_mass_residuals(&mut records);
    Ok(RunResult {
        epsilon: eps,
        dt: dt_used,
        steps,
        records,
        series: Series { frames },
    })
}

#[derive(Debug)]
pub struct SweepOutput {
    pub report: SweepReport,
    pub runs: Vec<(f64, Result<RunResult>)>,
}

fn inversions(xs: &[f64]) -> usize {
    xs.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Runs every rung concurrently; failures are recorded per run.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepOutput> {
    plan.validate()?;
    let data = build_initial_data(plan.grid, &plan.init)?;
    let runs: Vec<(f64, Result<RunResult>)> =
        plan.epsilons.par_iter().map(|&e| (e, run_one(plan, &data, e))).collect();
    Ok(SweepOutput {
        report: assemble(plan, &runs),
        runs,
    })
}

/// Builds the report from finished runs in ladder order.
pub fn assemble(plan: &SweepPlan, runs: &[(f64, Result<RunResult>)]) -> SweepReport {
    let rows: Vec<RunRow> = runs
        .iter()
        .map(|(e, r)| match r {
            Ok(res) => RunRow {
                epsilon: *e,
                maxima: Some(FunctionalMaxima::of(&res.records)),
                failure: None,
                numerical_failure: false,
            },
            Err(err) => RunRow {
                epsilon: *e,
                maxima: None,
                failure: Some(err.to_string()),
                numerical_failure: err.exit_code() == 2,
            },
        })
        .collect();
    let mut distances = Vec::new();
    for w in runs.windows(2) {
        if let (Ok(a), Ok(b)) = (&w[0].1, &w[1].1) {
            if let Ok((rho_l1, m_l2)) = cauchy_in_eps(&a.series, &b.series) {
                distances.push(Distance {
                    eps: (w[0].0, w[1].0),
                    rho_l1,
                    m_l2,
                });
            }
        }
    }
    let ok: Vec<FunctionalMaxima> = rows.iter().filter_map(|r| r.maxima).collect();
    let mut uniformity = Vec::new();
    if ok.len() > 1 {
        let verdict = |name: &'static str, f: fn(&FunctionalMaxima) -> f64| {
            let max = ok.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            let min = ok.iter().map(f).fold(f64::INFINITY, f64::min);
            let ratio = if min > 0.0 { max / min } else { f64::INFINITY };
            UniformityVerdict {
                name,
                max,
                min,
                ratio,
                passed: ratio <= plan.uniformity_factor,
            }
        };
        uniformity.push(verdict("energy", |m| m.energy));
        uniformity.push(verdict("bd", |m| m.bd));
        uniformity.push(verdict("mv", |m| m.mv));
    }
    let mut trends = Vec::new();
    if distances.len() > 1 {
        let rho: Vec<f64> = distances.iter().map(|d| d.rho_l1).collect();
        let m: Vec<f64> = distances.iter().map(|d| d.m_l2).collect();
        for (name, xs) in [("rho_l1", rho), ("m_l2", m)] {
            let inv = inversions(&xs);
            trends.push(TrendVerdict {
                name,
                inversions: inv,
                passed: inv <= plan.allowed_inversions,
            });
        }
    }
    SweepReport {
        rows,
        distances,
        uniformity,
        trends,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ScalarField2D, VectorField3D};
    use crate::init::{RhoProfile, VelocityProfile};

    fn small_plan(eps: Vec<f64>) -> SweepPlan {
        let mut p = SweepPlan::new(InitConfig::default(), Grid::new(8, 8, 5).unwrap(), 0.01);
        p.epsilons = eps;
        p.output_every = 0.0025;
        p
    }

    #[test]
    fn ladder_validation() {
        assert!(small_plan(vec![1e-1, 1e-2]).validate().is_ok());
        assert!(small_plan(vec![1e-2, 1e-1]).validate().is_err());
        assert!(small_plan(vec![1e-1, 1e-1]).validate().is_err());
        assert!(small_plan(vec![1.5]).validate().is_err());
        assert!(small_plan(vec![]).validate().is_err());
        assert_eq!(small_plan(vec![0.1]).frame_times().len(), 5);
    }

    fn const_series(c: f64, ts: &[f64]) -> Series {
        let g = Grid::new(8, 8, 3).unwrap();
        Series {
            frames: ts
                .iter()
                .map(|&t| State {
                    t,
                    eta: ScalarField2D::constant(g, c.sqrt()),
                    v: VectorField3D::zeros(g),
                })
                .collect(),
        }
    }

    #[test]
    fn cauchy_basics() {
        let ts = [0.0, 0.1, 0.2, 0.3];
        let a = const_series(1.0, &ts);
        assert_eq!(cauchy_in_eps(&a, &a).unwrap(), (0.0, 0.0));
        let b = const_series(1.25, &ts);
        let (l1, _) = cauchy_in_eps(&a, &b).unwrap();
        assert!((l1 - 0.25 * 0.3).abs() < 1e-14);
        let c = const_series(1.0, &ts[..3]);
        assert!(matches!(cauchy_in_eps(&a, &c), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn single_rung_has_no_distances() {
        let out = run_sweep(&small_plan(vec![0.05])).unwrap();
        assert_eq!(out.report.rows.len(), 1);
        assert!(out.report.rows[0].maxima.is_some());
        assert!(out.report.distances.is_empty());
        assert!(out.report.uniformity.is_empty());
    }

    #[test]
    fn constant_data_follows_scalar_ode() {
        let mut init = InitConfig::default();
        init.rho_profile = RhoProfile::Constant;
        init.v_profile = VelocityProfile::Zero;
        let mut plan = small_plan(vec![1e-1, 1e-2]);
        plan.init = init;
        plan.dt = DtPolicy::Fixed(2.5e-4);
        let out = run_sweep(&plan).unwrap();
        let data = build_initial_data(plan.grid, &plan.init).unwrap();
        // (eta^{2p0+2})' = (p0+1) eps for a spatially constant state at rest
        let rho_of = |eps: f64, t: f64| {
            let e0 = approximate_initial_data(&data, eps).unwrap().eta.max();
            let k = 2.0 * init.p0 + 2.0;
            (e0.powf(k) + (init.p0 + 1.0) * eps * t).powf(2.0 / k)
        };
        let ts = plan.frame_times();
        for (e, r) in &out.runs {
            let r = r.as_ref().unwrap();
            for f in &r.series.frames {
                assert_eq!(f.eta.max(), f.eta.min());
                assert_eq!(f.v.max_abs(), 0.0);
                assert!((f.eta.max().powi(2) - rho_of(*e, f.t)).abs() < 1e-9);
            }
        }
        let drift: Vec<f64> = ts.iter().map(|&t| (rho_of(1e-1, t) - rho_of(1e-2, t)).abs()).collect();
        let expect = trapezoid(&ts, &drift);
        let got = out.report.distances[0].rho_l1;
        assert!((got - expect).abs() < 1e-9 * (1.0 + expect), "{got} vs {expect}");
    }

    #[test]
    fn failure_is_isolated() {
        let mut plan = small_plan(vec![0.9, 1e-3]);
        // beyond the viscous limit for eps = 0.9, inside it for eps = 1e-3
        plan.dt = DtPolicy::Fixed(8e-3);
        plan.t_end = 1.0;
        plan.output_every = 0.25;
        let out = run_sweep(&plan).unwrap();
        assert!(out.runs[0].1.is_err());
        assert!(out.runs[1].1.is_ok());
        assert!(out.report.rows[0].numerical_failure);
        assert_eq!(out.report.rows.len(), 2);
        assert!(!out.report.passed());
        for (row, run) in out.report.rows.iter().zip(&out.runs) {
            assert_eq!(row.failure.is_some(), run.1.is_err());
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let plan = small_plan(vec![1e-1, 3e-2, 1e-2]);
        let a = run_sweep(&plan).unwrap();
        let b = run_sweep(&plan).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.render(), b.report.render());
    }

    #[test]
    fn trend_allows_one_inversion() {
        assert_eq!(inversions(&[3.0, 2.0, 2.5, 1.0]), 1);
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 0);
    }
}
