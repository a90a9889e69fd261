//! Run configuration and the subcommands behind the `cpelab` binary.
//!
//! Each subcommand writes its artefacts into an output directory and hands
//! back an [`Outcome`] with a short summary and the process exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::degiorgi::{empirical_vanishing_level, DecayParams, VanishingReport};
use crate::diagnostics::{compute_record, fill_mass_residuals, write_csv, DiagnosticsParams, DiagnosticsRecord};
use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::galerkin::{galerkin_energy_audit, galerkin_run, pde_cross_check, AuditOptions, GalerkinParams, GalerkinSpace};
use crate::init::{approximate_initial_data, build_initial_data, e0_terms, InitConfig, RhoProfile, VelocityProfile};
use crate::io::{self, ConfigDoc, Entry, Snapshot};
use crate::solver::{self, SolverParams, State};
use crate::sweep::{run_sweep, DtPolicy, SweepPlan, DEFAULT_LADDER};

pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub t_end: f64,
    /// `None` picks `cfl` times the stability estimate of the initial state.
    pub dt: Option<f64>,
    pub cfl: f64,
    /// Steps between stored snapshots and diagnostics records.
    pub output_every: usize,
    pub delta: f64,
    pub singular_source: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub epsilons: Vec<f64>,
    pub frames: usize,
    pub uniformity_factor: f64,
    pub allowed_inversions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinOptions {
    pub modes: usize,
    pub k_sq_max: i32,
    pub epsilon: f64,
    pub delta: f64,
    pub t_n: f64,
    pub t_end: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub steps: usize,
    pub cross_check: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: Grid,
    pub init: InitConfig,
    pub run: RunOptions,
    pub sweep: SweepOptions,
    pub galerkin: GalerkinOptions,
    pub degiorgi: Option<DecayParams>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: Grid::new(64, 64, 16).expect("default grid"),
            init: InitConfig::default(),
            run: RunOptions {
                t_end: 0.25,
                dt: None,
                cfl: 0.9,
                output_every: 50,
                delta: 0.0,
                singular_source: true,
            },
            sweep: SweepOptions {
                epsilons: DEFAULT_LADDER.to_vec(),
                frames: 20,
                uniformity_factor: 3.0,
                allowed_inversions: 1,
            },
            galerkin: GalerkinOptions {
                modes: 8,
                k_sq_max: 4,
                epsilon: 1.0,
                delta: 1e-6,
                t_n: 0.02,
                t_end: 0.02,
                tol: 1e-8,
                max_iter: 60,
                steps: 32,
                cross_check: false,
            },
            degiorgi: None,
        }
    }
}

fn parse_list(e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|err| Error::Config(format!("line {}: bad list item `{}` for `{}`: {err}", e.line, s.trim(), e.key)))
        })
        .collect()
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(Error::Config(format!("line {}: `{}` expects true or false, got `{v}`", e.line, e.key))),
    }
}

fn unknown(section: &str, e: &Entry) -> Error {
    Error::Config(format!("line {}: unknown key `{}` in [{section}]", e.line, e.key))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let doc = ConfigDoc::parse(text)?;
        let mut cfg = RunConfig::default();
        let (mut nx, mut ny, mut nz) = (cfg.grid.nx, cfg.grid.ny, cfg.grid.nz);
        let mut dg: [Option<f64>; 3] = [None; 3];
        for sec in &doc.sections {
            let name = sec.name.as_str();
            for e in &sec.entries {
                match (name, e.key.as_str()) {
                    ("grid", "nx") => nx = e.parse()?,
                    ("grid", "ny") => ny = e.parse()?,
                    ("grid", "nz") => nz = e.parse()?,
                    ("init", "gamma") => cfg.init.gamma = e.parse()?,
                    ("init", "p0") => cfg.init.p0 = e.parse()?,
                    ("init", "varpi") => cfg.init.varpi = e.parse()?,
                    ("init", "epsilon") => cfg.init.epsilon = e.parse()?,
                    ("init", "rho_profile") => cfg.init.rho_profile = e.parse::<RhoProfile>()?,
                    ("init", "rho_mean") => cfg.init.rho_mean = e.parse()?,
                    ("init", "rho_amp") => cfg.init.rho_amp = e.parse()?,
                    ("init", "v_profile") => cfg.init.v_profile = e.parse::<VelocityProfile>()?,
                    ("init", "v_amp") => cfg.init.v_amp = e.parse()?,
                    ("run", "t_end") => cfg.run.t_end = e.parse()?,
                    ("run", "dt") => cfg.run.dt = if e.value == "auto" { None } else { Some(e.parse()?) },
                    ("run", "cfl") => cfg.run.cfl = e.parse()?,
                    ("run", "output_every") => cfg.run.output_every = e.parse()?,
                    ("run", "delta") => cfg.run.delta = e.parse()?,
                    ("run", "singular_source") => cfg.run.singular_source = parse_bool(e)?,
                    ("sweep", "epsilons") => cfg.sweep.epsilons = parse_list(e)?,
                    ("sweep", "frames") => cfg.sweep.frames = e.parse()?,
                    ("sweep", "uniformity_factor") => cfg.sweep.uniformity_factor = e.parse()?,
                    ("sweep", "allowed_inversions") => cfg.sweep.allowed_inversions = e.parse()?,
                    ("galerkin", "modes") => cfg.galerkin.modes = e.parse()?,
                    ("galerkin", "k_sq_max") => cfg.galerkin.k_sq_max = e.parse()?,
                    ("galerkin", "epsilon") => cfg.galerkin.epsilon = e.parse()?,
                    ("galerkin", "delta") => cfg.galerkin.delta = e.parse()?,
                    ("galerkin", "t_n") => cfg.galerkin.t_n = e.parse()?,
                    ("galerkin", "t_end") => cfg.galerkin.t_end = e.parse()?,
                    ("galerkin", "tol") => cfg.galerkin.tol = e.parse()?,
                    ("galerkin", "max_iter") => cfg.galerkin.max_iter = e.parse()?,
                    ("galerkin", "steps") => cfg.galerkin.steps = e.parse()?,
                    ("galerkin", "cross_check") => cfg.galerkin.cross_check = parse_bool(e)?,
                    ("degiorgi", "c") => dg[0] = Some(e.parse()?),
                    ("degiorgi", "alpha") => dg[1] = Some(e.parse()?),
                    ("degiorgi", "beta") => dg[2] = Some(e.parse()?),
                    ("grid" | "init" | "run" | "sweep" | "galerkin" | "degiorgi", _) => return Err(unknown(name, e)),
                    ("", _) => return Err(Error::Config(format!("line {}: key `{}` outside any section", e.line, e.key))),
                    _ => return Err(Error::Config(format!("line {}: unknown section [{name}]", sec.line))),
                }
            }
            if !matches!(name, "" | "grid" | "init" | "run" | "sweep" | "galerkin" | "degiorgi") {
                return Err(Error::Config(format!("line {}: unknown section [{name}]", sec.line)));
            }
        }
        cfg.grid = Grid::new(nx, ny, nz)?;
        cfg.degiorgi = match dg {
            [None, None, None] => None,
            [Some(c), Some(a), Some(b)] => Some(DecayParams::new(c, a, b).map_err(|e| Error::Config(e.to_string()))?),
            _ => return Err(Error::Config("[degiorgi] needs all of c, alpha and beta or none".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Static checks; the CFL check needs the initial state and lives in
    /// [`RunConfig::initial_state`].
    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        let r = &self.run;
        if !(r.t_end > 0.0) {
            return Err(Error::Config(format!("t_end must be positive, got {}", r.t_end)));
        }
        if !(r.cfl > 0.0 && r.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", r.cfl)));
        }
        if let Some(dt) = r.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if r.output_every == 0 {
            return Err(Error::Config("output_every must be at least 1".into()));
        }
        if !(r.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be non-negative, got {}", r.delta)));
        }
        if self.sweep.frames == 0 {
            return Err(Error::Config("sweep frames must be at least 1".into()));
        }
        let g = &self.galerkin;
        if g.modes == 0 || g.modes > 64 || g.k_sq_max < 0 {
            return Err(Error::Config(format!("galerkin needs 1 <= modes <= 64 and k_sq_max >= 0, got {} and {}", g.modes, g.k_sq_max)));
        }
        if !(g.t_n > 0.0) || !(g.t_end > 0.0) {
            return Err(Error::Config("galerkin t_n and t_end must be positive".into()));
        }
        self.galerkin_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sweep_plan().validate()
    }

    pub fn solver_params(&self) -> SolverParams {
        let mut p = SolverParams::new(self.init.epsilon, self.init.p0, self.init.gamma, self.run.dt.unwrap_or(1.0));
        p.delta = self.run.delta;
        p.singular_source = self.run.singular_source;
        p.c_cfl = self.run.cfl;
        p
    }

    pub fn diagnostics_params(&self) -> DiagnosticsParams {
        DiagnosticsParams {
            singular_source: self.run.singular_source,
            ..DiagnosticsParams::new(self.init.epsilon, self.init.p0, self.init.gamma)
        }
    }

    /// Approximate initial state and the step to use. An explicit `dt`
    /// above the stability estimate is a configuration error.
    pub fn initial_state(&self) -> Result<(State, SolverParams)> {
        let data = build_initial_data(self.grid, &self.init)?;
        let approx = approximate_initial_data(&data, self.init.epsilon)?;
        let state = State::new(approx.eta, approx.v)?;
        let mut p = self.solver_params();
        let lim = solver::stable_dt(&state, &p);
        p.dt = match self.run.dt {
            Some(dt) if dt > lim => {
                return Err(Error::Config(format!(
                    "dt = {dt:e} fails the CFL pre-check: the stability estimate at t = 0 is {lim:e}"
                )))
            }
            Some(dt) => dt,
            None => self.run.cfl * lim,
        };
        Ok((state, p))
    }

    pub fn sweep_plan(&self) -> SweepPlan {
        let mut plan = SweepPlan::new(self.init, self.grid, self.run.t_end);
        plan.epsilons = self.sweep.epsilons.clone();
        plan.output_every = self.run.t_end / self.sweep.frames.max(1) as f64;
        plan.dt = match self.run.dt {
            Some(dt) => DtPolicy::Fixed(dt),
            None => DtPolicy::Stable(self.run.cfl),
        };
        plan.uniformity_factor = self.sweep.uniformity_factor;
        plan.allowed_inversions = self.sweep.allowed_inversions;
        plan.delta = self.run.delta;
        plan.singular_source = self.run.singular_source;
        plan
    }

    pub fn galerkin_params(&self) -> GalerkinParams {
        let g = &self.galerkin;
        GalerkinParams {
            epsilon: g.epsilon,
            p0: self.init.p0,
            gamma: self.init.gamma,
            delta: g.delta,
            steps: g.steps,
            max_iter: g.max_iter,
            tol: g.tol,
            ..GalerkinParams::default()
        }
    }
}

/// Summary text for stdout plus the exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub code: i32,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Outcome { summary, code: 0 }
    }
}

fn snapshot_name(i: usize) -> String {
    format!("snap_{i:06}.bin")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<PathBuf>,
    pub steps: usize,
    pub dt: f64,
}

/// One trajectory; a snapshot and a diagnostics record every
/// `output_every` steps and at the end.
pub fn run_trajectory(cfg: &RunConfig, out: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let (state, p) = cfg.initial_state()?;
    let dp = cfg.diagnostics_params();
    let snap_dir = out.join(SNAPSHOT_DIR);
    std::fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let summary = solver::run(state, &p, cfg.run.t_end, cfg.run.output_every, |s| {
        records.push(compute_record(&s.eta, &s.v, &dp, s.t)?);
        let snap = Snapshot::new(s.t, dp.gamma, dp.epsilon, dp.p0, s.eta.clone(), s.v.clone())?;
        let path = snap_dir.join(snapshot_name(snapshots.len()));
        io::write_snapshot(&path, &snap)?;
        snapshots.push(path);
        Ok(())
    })?;
    fill_mass_residuals(&mut records);
    io::write_text(&out.join(DIAGNOSTICS_CSV), &write_csv(&records))?;
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| vec![r.t, r.energy_physical, r.energy_augmented, r.bd_grad, r.mv, r.mass, r.mass_residual])
        .collect();
    io::write_text(
        &out.join("diagnostics.dat"),
        &io::dat_table(&["t", "energy_physical", "energy_augmented", "bd_grad", "mv", "mass", "mass_residual"], &rows),
    )?;
    io::write_text(&out.join("rho_final.dat"), &io::dat_field(&summary.final_state.rho()))?;
    Ok(RunArtifacts {
        records,
        snapshots,
        steps: summary.steps,
        dt: summary.dt,
    })
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let a = run_trajectory(cfg, out)?;
    let last = a.records.last().expect("the initial record is always stored");
    Ok(Outcome::ok(format!(
        "run: {} steps of dt = {:e} to t = {:e}; {} snapshots; final energy {:e}, mass {:e}\nwrote {}\n",
        a.steps,
        a.dt,
        last.t,
        a.snapshots.len(),
        last.energy_augmented,
        last.mass,
        out.join(DIAGNOSTICS_CSV).display()
    )))
}

/// Snapshot files of a directory in name order.
pub fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no .bin snapshots")));
    }
    Ok(v)
}

/// Recomputes the diagnostics series from stored snapshots.
pub fn diagnose(snapshots: &[PathBuf], singular_source: bool) -> Result<Vec<DiagnosticsRecord>> {
    let mut records = Vec::with_capacity(snapshots.len());
    for path in snapshots {
        let s = io::read_snapshot(path)?;
        let h = s.header;
        let dp = DiagnosticsParams {
            singular_source,
            ..DiagnosticsParams::new(h.epsilon, h.p0, h.gamma)
        };
        records.push(compute_record(&s.eta, &s.v, &dp, h.t)?);
    }
    fill_mass_residuals(&mut records);
    Ok(records)
}

pub fn cmd_diagnose(dir: &Path, singular_source: bool, out_csv: &Path) -> Result<Outcome> {
    let snaps = list_snapshots(dir)?;
    let records = diagnose(&snaps, singular_source)?;
    io::write_text(out_csv, &write_csv(&records))?;
    Ok(Outcome::ok(format!("diagnose: {} records from {}\nwrote {}\n", records.len(), dir.display(), out_csv.display())))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let plan = cfg.sweep_plan();
    let res = run_sweep(&plan)?;
    let report = res.report.render();
    io::write_text(&out.join("sweep_report.txt"), &report)?;
    let mut rows = String::from("epsilon,max_energy,max_bd,max_mv,status\n");
    for r in &res.report.rows {
        match r.maxima {
            Some(m) => {
                let _ = writeln!(rows, "{:e},{:e},{:e},{:e},ok", r.epsilon, m.energy, m.bd, m.mv);
            }
            None => {
                let _ = writeln!(rows, "{:e},,,,failed", r.epsilon);
            }
        }
    }
    io::write_text(&out.join("sweep_maxima.csv"), &rows)?;
    let mut d = String::from("eps_a,eps_b,rho_l1,m_l2\n");
    for x in &res.report.distances {
        let _ = writeln!(d, "{:e},{:e},{:e},{:e}", x.eps.0, x.eps.1, x.rho_l1, x.m_l2);
    }
    io::write_text(&out.join("sweep_distances.csv"), &d)?;
    for (eps, r) in &res.runs {
        if let Ok(r) = r {
            io::write_text(&out.join(format!("diagnostics_eps_{eps:e}.csv")), &write_csv(&r.records))?;
        }
    }
    let failed = res.report.rows.iter().filter(|r| r.failure.is_some()).count();
    let numerical = res.report.rows.iter().any(|r| r.numerical_failure);
    let code = match (failed, numerical) {
        (0, _) => 0,
        (_, true) => 2,
        _ => 1,
    };
    Ok(Outcome { summary: report, code })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinDemo {
    pub trace_csv: String,
    pub windows: usize,
    pub worst_contraction: f64,
    pub max_weak_residual: f64,
    pub audit_flagged: bool,
    pub cross_check: Option<(bool, f64)>,
}

/// Projects the configured initial data onto the Galerkin space and runs
/// the windowed Picard iteration.
pub fn galerkin_demo(cfg: &RunConfig) -> Result<GalerkinDemo> {
    cfg.validate()?;
    let g = &cfg.galerkin;
    let p = cfg.galerkin_params();
    let space = GalerkinSpace::new(g.modes, g.k_sq_max)?;
    let data = build_initial_data(cfg.grid, &cfg.init)?;
    let approx = approximate_initial_data(&data, cfg.init.epsilon)?;
    let b0 = space.density.project_grid(&approx.eta);
    let a0 = space.velocity.project_grid(&approx.v);
    let run = galerkin_run(&space, &a0, &b0, g.t_end, g.t_n, &p)?;
    let mut trace_csv = String::from("window,t_start,t_n,iteration,change\n");
    for (w, st) in run.windows.iter().enumerate() {
        let t0 = st.traj.times[0];
        for (i, c) in st.trace.iter().enumerate() {
            let _ = writeln!(trace_csv, "{w},{t0:e},{:e},{},{c:e}", st.t_n, i + 1);
        }
    }
    let audit = galerkin_energy_audit(&space, &run.traj, &p, AuditOptions::default())?;
    let cross_check = if g.cross_check {
        let cc = pde_cross_check(&space, &run.windows[0], [8, 16, 32], 4, &p)?;
        Some((cc.passed(), cc.worst_ratio()))
    } else {
        None
    };
    Ok(GalerkinDemo {
        trace_csv,
        windows: run.windows.len(),
        worst_contraction: run.windows.iter().map(|w| w.contraction).fold(0.0, f64::max),
        max_weak_residual: run.windows.iter().map(|w| w.weak_residual).fold(0.0, f64::max),
        audit_flagged: audit.flagged,
        cross_check,
    })
}

pub fn cmd_galerkin_demo(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let d = galerkin_demo(cfg)?;
    io::write_text(&out.join("galerkin_trace.csv"), &d.trace_csv)?;
    let mut s = format!(
        "galerkin-demo: {} window(s), worst contraction {:.4}, max weak residual {:e}, energy audit {}\n",
        d.windows,
        d.worst_contraction,
        d.max_weak_residual,
        if d.audit_flagged { "FLAGGED" } else { "clean" }
    );
    if let Some((ok, r)) = d.cross_check {
        let _ = writeln!(s, "pde cross-check: {} (worst distance / tolerance {r:.3})", if ok { "pass" } else { "FAIL" });
    }
    let _ = writeln!(s, "wrote {}", out.join("galerkin_trace.csv").display());
    let code = if d.cross_check.is_some_and(|(ok, _)| !ok) { 2 } else { 0 };
    Ok(Outcome { summary: s, code })
}

/// Certificate from a `(k, a_k)` CSV; fits the decay constants unless
/// they are given.
pub fn degiorgi_from_csv(path: &Path, params: Option<DecayParams>) -> Result<VanishingReport> {
    let text = io::read_text(path)?;
    let pairs = io::parse_pairs_csv(&text, path)?;
    let profile = crate::diagnostics::LevelSetProfile {
        thresholds: pairs.iter().map(|p| p.0).collect(),
        measures: pairs.iter().map(|p| p.1).collect(),
    };
    empirical_vanishing_level(&profile, params)
}

pub fn render_vanishing(r: &VanishingReport) -> String {
    let mut s = String::new();
    let p = &r.params;
    let _ = writeln!(
        s,
        "params: C = {:e}, alpha = {:e}, beta = {:e} ({})",
        p.c,
        p.alpha,
        p.beta,
        if r.fitted { "fitted" } else { "given" }
    );
    let _ = writeln!(s, "g(1) = {:e}", r.g1);
    let _ = writeln!(
        s,
        "hypothesis: {} pairs checked, {} violation(s)",
        r.hypothesis.pairs_checked,
        r.hypothesis.violations.len()
    );
    match &r.certificate {
        Some(c) => {
            let _ = writeln!(s, "certificate: C' = {:e}, kappa = 2^{}, L = {:e}", c.c_prime, c.kappa_exponent, c.l);
        }
        None => s.push_str("certificate: none\n"),
    }
    match (r.last_positive, r.l_observed) {
        (Some(k), Some(l)) => {
            let _ = writeln!(s, "observed: last positive level {k:e}, first vanishing level {l:e}");
        }
        (Some(k), None) => {
            let _ = writeln!(s, "observed: positive up to the last level {k:e}");
        }
        _ => s.push_str("observed: identically zero\n"),
    }
    if let Some(ok) = r.sound() {
        let _ = writeln!(s, "sound: {ok}");
    }
    s
}

pub fn cmd_degiorgi(path: &Path, params: Option<DecayParams>) -> Result<Outcome> {
    let r = degiorgi_from_csv(path, params)?;
    let s = render_vanishing(&r);
    if r.certificate.is_none() {
        return Err(Error::HypothesisViolated {
            count: r.hypothesis.violations.len(),
        });
    }
    let code = if r.sound() == Some(false) { 2 } else { 0 };
    Ok(Outcome { summary: s, code })
}

pub fn cmd_init_check(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = build_initial_data(cfg.grid, &cfg.init)?;
    let t = e0_terms(&data.rho0, &data.v0, cfg.init.gamma, cfg.init.varpi);
    let approx = approximate_initial_data(&data, cfg.init.epsilon)?;
    let (_, p) = cfg.initial_state()?;
    let mut s = String::from("init-check: configuration admissible\n");
    let _ = writeln!(s, "E0 = {:e}", data.e0_bound);
    let _ = writeln!(
        s,
        "  kinetic {:e}\n  higher moment {:e}\n  grad sqrt rho {:e}\n  mass {:e}\n  pressure {:e}",
        t.kinetic, t.higher_moment, t.grad_sqrt_rho, t.mass, t.pressure
    );
    let _ = writeln!(
        s,
        "approximate data at eps = {:e}: admissibility lhs {:e} <= C0 {:e}",
        cfg.init.epsilon, approx.lhs, approx.c0
    );
    let _ = writeln!(s, "dt = {:e}", p.dt);
    Ok(Outcome::ok(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "[grid]\nnx = 8\nny = 8\nnz = 5\n[run]\nt_end = 0.05\noutput_every = 2\n";

    #[test]
    fn defaults_are_valid_and_parse_round() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid, Grid::new(64, 64, 16).unwrap());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let e = RunConfig::parse("[grid]\nnx = 8\nnxx = 8\n").unwrap_err();
        assert!(e.to_string().contains("line 3") && e.to_string().contains("nxx"), "{e}");
        assert!(RunConfig::parse("[gird]\n").unwrap_err().to_string().contains("gird"));
        assert!(RunConfig::parse("nx = 3\n").is_err());
        assert!(RunConfig::parse("[degiorgi]\nc = 1\n").is_err());
    }

    #[test]
    fn p0_constraint_is_cited() {
        let e = RunConfig::parse("[init]\np0 = 20\n").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("p0 > max(24, gamma - 1)"), "{e}");
    }

    #[test]
    fn cfl_precheck_rejects_large_dt() {
        let cfg = RunConfig::parse(&format!("{SMALL}dt = 1.0\n")).unwrap();
        assert!(matches!(cfg.initial_state(), Err(Error::Config(m)) if m.contains("CFL")));
        let cfg = RunConfig::parse(&format!("{SMALL}t_end = -1\n"));
        assert!(cfg.is_err());
    }

    #[test]
    fn diagnose_reproduces_run_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse(SMALL).unwrap();
        let a = run_trajectory(&cfg, dir.path()).unwrap();
        assert!(a.snapshots.len() >= 3, "{} snapshots, {} steps of {:e}", a.snapshots.len(), a.steps, a.dt);
        let again = diagnose(&a.snapshots, true).unwrap();
        assert_eq!(write_csv(&again), io::read_text(&dir.path().join(DIAGNOSTICS_CSV)).unwrap());
    }

    #[test]
    fn degiorgi_csv_cutoff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let fam = crate::degiorgi::PowerFamily::minimal(DecayParams::new(1.0, 0.5, 1.0).unwrap(), 2.55);
        let mut text = String::from("k,a_k\n");
        for i in 0..40 {
            let k = 0.5 + 0.1 * i as f64;
            text.push_str(&format!("{k},{}\n", fam.eval(k)));
        }
        io::write_text(&path, &text).unwrap();
        let o = cmd_degiorgi(&path, None).unwrap();
        assert_eq!(o.code, 0);
        let r = degiorgi_from_csv(&path, None).unwrap();
        assert!(r.certificate.unwrap().l >= 2.55);
    }
}
