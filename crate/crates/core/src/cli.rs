//! Experiment configuration and the `solve`, `sweep` and `diag` commands.
//!
//! A configuration file has three tables:
//!
//! ```toml
//! [problem]
//! kind = "toy"        # or "plate"
//! case = 1            # toy cases 1-3, or give c1, c2 and d explicitly
//! horizon = 500
//!
//! [solver]
//! mode = ["fotd"]     # any of "fotd", "schwarz", "centralized"
//! subproblems = 10
//! overlap = 5
//! mu = 25.0
//!
//! [run]
//! inits = 5
//! seed = 0
//! ```
//!
//! Every field except `problem.kind` and `problem.horizon` has a default.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::benchmarks::{
    make_initializations, make_plate_problem, make_toy_problem, PlateSpec, ToyCase, ToySpec,
};
use crate::error::{Error, Result};
use crate::io::{round6, write_atomic, write_records, write_trajectory};
use crate::newton::{assemble_newton_data, theory_gamma_g, theory_mu_bar};
use crate::nldp::{PrimalDual, ProblemDef};
use crate::otd::{approximate_direction, make_plan};
use crate::schwarz::{one_newton_schwarz_step, schwarz_solve};
use crate::sqp::{direction_error_ratio, solve, AssertLevel, Mode, SolveReport, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    Fotd,
    Schwarz,
    Centralized,
}

impl SolveMode {
    pub fn name(self) -> &'static str {
        match self {
            SolveMode::Fotd => "fotd",
            SolveMode::Schwarz => "schwarz",
            SolveMode::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Toy,
    Plate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlateReference {
    /// `d(w, t) = sin(t)`.
    #[default]
    Sin,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    /// Constant toy reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ambient: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PlateReference>,
}

impl ProblemConfig {
    pub fn toy_case(case: ToyCase, horizon: usize) -> Self {
        ProblemConfig {
            kind: ProblemKind::Toy,
            horizon,
            case: Some(case.index()),
            c1: None,
            c2: None,
            d: None,
            mesh: None,
            h_c: None,
            kappa_c: None,
            epsilon_c: None,
            sigma_c: None,
            t_ambient: None,
            thickness: None,
            reference: None,
        }
    }

    pub fn plate(mesh: usize, horizon: usize) -> Self {
        ProblemConfig {
            kind: ProblemKind::Plate,
            mesh: Some(mesh),
            case: None,
            ..Self::toy_case(ToyCase::One, horizon)
        }
    }

    fn check_kind_fields(&self) -> Result<()> {
        let toy_only = [
            ("case", self.case.is_some()),
            ("c1", self.c1.is_some()),
            ("c2", self.c2.is_some()),
            ("d", self.d.is_some()),
        ];
        let plate_only = [
            ("mesh", self.mesh.is_some()),
            ("h_c", self.h_c.is_some()),
            ("kappa_c", self.kappa_c.is_some()),
            ("epsilon_c", self.epsilon_c.is_some()),
            ("sigma_c", self.sigma_c.is_some()),
            ("t_ambient", self.t_ambient.is_some()),
            ("thickness", self.thickness.is_some()),
            ("reference", self.reference.is_some()),
        ];
        let (wrong, kind) = match self.kind {
            ProblemKind::Toy => (&plate_only[..], "toy"),
            ProblemKind::Plate => (&toy_only[..], "plate"),
        };
        if let Some((key, _)) = wrong.iter().find(|(_, set)| *set) {
            return Err(Error::Config(format!(
                "problem.{key} does not apply to kind = \"{kind}\""
            )));
        }
        Ok(())
    }

    /// Same problem with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        ProblemConfig {
            horizon,
            ..self.clone()
        }
    }

    pub fn build(&self) -> Result<ProblemDef> {
        self.check_kind_fields()?;
        match self.kind {
            ProblemKind::Toy => {
                let spec = match (self.case, self.c1, self.c2) {
                    (Some(c), None, None) => {
                        if self.d.is_some() {
                            return Err(Error::Config(
                                "problem.d only applies to custom toy problems (c1, c2)".into(),
                            ));
                        }
                        ToyCase::from_index(c)
                            .ok_or_else(|| {
                                Error::Config(format!("problem.case must be 1, 2 or 3, got {c}"))
                            })?
                            .spec(self.horizon)
                    }
                    (None, Some(c1), Some(c2)) => {
                        ToySpec::constant(self.horizon, c1, c2, self.d.unwrap_or(1.0))
                    }
                    _ => {
                        return Err(Error::Config(
                            "toy problem needs either problem.case or both problem.c1 and problem.c2"
                                .into(),
                        ))
                    }
                };
                make_toy_problem(&spec)
            }
            ProblemKind::Plate => {
                let mut spec = PlateSpec::new(self.mesh.unwrap_or(4), self.horizon);
                let set = |slot: &mut f64, v: Option<f64>| {
                    if let Some(v) = v {
                        *slot = v;
                    }
                };
                set(&mut spec.h_c, self.h_c);
                set(&mut spec.kappa_c, self.kappa_c);
                set(&mut spec.epsilon_c, self.epsilon_c);
                set(&mut spec.sigma_c, self.sigma_c);
                set(&mut spec.t_ambient, self.t_ambient);
                set(&mut spec.thickness, self.thickness);
                if self.reference == Some(PlateReference::Zero) {
                    spec.reference = Arc::new(|_, _| 0.0);
                }
                make_plate_problem(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inits: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub diagnostics: bool,
    pub assert_level: AssertLevel,
    /// Write measured `wall_ms` into the CSVs; off keeps them reproducible.
    pub timing: bool,
    /// Also write the final primal-dual trajectory of every run.
    pub trajectories: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inits: 5,
            seed: 0,
            out: None,
            diagnostics: false,
            assert_level: AssertLevel::Off,
            timing: false,
            trajectories: false,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub modes: Vec<SolveMode>,
    pub solver: SolverConfig,
    pub run: RunConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: ProblemConfig,
    #[serde(default)]
    solver: toml::Table,
    #[serde(default)]
    run: RunConfig,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModeField {
    One(SolveMode),
    Many(Vec<SolveMode>),
}

impl ExperimentConfig {
    pub fn new(problem: ProblemConfig) -> Self {
        ExperimentConfig {
            problem,
            modes: vec![SolveMode::Fotd],
            solver: SolverConfig::default(),
            run: RunConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut solver = raw.solver;
        let modes = match solver.remove("mode") {
            None => vec![SolveMode::Fotd],
            Some(v) => match v.try_into::<ModeField>() {
                Ok(ModeField::One(m)) => vec![m],
                Ok(ModeField::Many(ms)) if !ms.is_empty() => ms,
                _ => {
                    return Err(Error::Config(
                        "solver.mode must be \"fotd\", \"schwarz\", \"centralized\" or a list of them"
                            .into(),
                    ))
                }
            },
        };
        let solver: SolverConfig = toml::Value::Table(solver)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[solver] {e}")))?;
        let cfg = ExperimentConfig {
            problem: raw.problem,
            modes,
            solver,
            run: raw.run,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical TOML form; parsing it gives back the same configuration.
    pub fn to_toml(&self) -> Result<String> {
        let mut solver = toml::Table::try_from(&self.solver).map_err(|e| Error::Config(e.to_string()))?;
        solver.insert(
            "mode".into(),
            toml::Value::Array(
                self.modes
                    .iter()
                    .map(|m| toml::Value::String(m.name().into()))
                    .collect(),
            ),
        );
        let raw = RawConfig {
            problem: self.problem.clone(),
            solver,
            run: self.run.clone(),
        };
        toml::to_string(&raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("[solver] {e}")))?;
        self.problem.check_kind_fields()?;
        self.solver
            .plan(self.problem.horizon)
            .map_err(|e| Error::Config(format!("[solver] {e}")))?;
        if self.run.inits == 0 {
            return Err(Error::Config("run.inits must be at least 1".into()));
        }
        Ok(())
    }

    /// Solver settings with the run-level switches folded in.
    pub fn effective_solver(&self) -> SolverConfig {
        SolverConfig {
            diagnostics: self.solver.diagnostics || self.run.diagnostics,
            assert_level: if self.run.assert_level == AssertLevel::On {
                AssertLevel::On
            } else {
                self.solver.assert_level
            },
            ..self.solver.clone()
        }
    }
}

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Solver mode; repeat to run several modes side by side.
    #[arg(long = "mode", value_enum)]
    pub modes: Vec<SolveMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub assert_level: Option<AssertArg>,
    /// Record the direction-error diagnostic every iteration.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssertArg {
    Off,
    On,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.run.out = Some(out.clone());
        }
        if !self.modes.is_empty() {
            cfg.modes = self.modes.clone();
        }
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.solver.workers = w;
        }
        if let Some(a) = self.assert_level {
            cfg.run.assert_level = match a {
                AssertArg::Off => AssertLevel::Off,
                AssertArg::On => AssertLevel::On,
            };
            cfg.solver.assert_level = cfg.run.assert_level;
        }
        if self.diagnostics {
            cfg.run.diagnostics = true;
        }
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run_mode(p: &ProblemDef, solver: &SolverConfig, init: PrimalDual, mode: SolveMode) -> SolveReport {
    match mode {
        SolveMode::Fotd => solve(p, solver, init, Mode::Fotd),
        SolveMode::Centralized => solve(p, solver, init, Mode::Centralized),
        SolveMode::Schwarz => schwarz_solve(p, solver, init),
    }
}

fn run_json(i: usize, r: &SolveReport) -> serde_json::Value {
    let mut v = json!({
        "init": i,
        "status": r.status,
        "final_kkt": round6(r.final_kkt()),
        "iterations": r.iterations(),
        "total_ms": round6(r.total_ms()),
        "descent_violations": r.descent_violations,
    });
    if r.adaptations > 0 {
        v["adaptations"] = json!(r.adaptations);
        v["final_eta"] = json!([round6(r.final_eta.eta1), round6(r.final_eta.eta2)]);
        v["final_overlap"] = json!(r.final_overlap);
    }
    if let Some(e) = &r.error {
        v["error"] = json!(e.to_string());
    }
    v
}

/// Result of running every mode on every initialization.
#[derive(Debug, Clone)]
pub struct CellResult {
    /// `reports[m][i]` for mode `m` and initialization `i`.
    pub reports: Vec<Vec<SolveReport>>,
    pub modes: Vec<SolveMode>,
}

impl CellResult {
    pub fn all_converged(&self) -> bool {
        self.reports.iter().flatten().all(|r| r.status.converged())
    }

    fn to_json(&self) -> serde_json::Value {
        let modes: Vec<_> = self
            .modes
            .iter()
            .zip(&self.reports)
            .map(|(m, rs)| {
                json!({
                    "mode": m.name(),
                    "converged": rs.iter().filter(|r| r.status.converged()).count(),
                    "runs": rs.iter().enumerate().map(|(i, r)| run_json(i, r)).collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut v = json!({ "modes": modes });
        if self.modes.len() > 1 {
            let n = self.reports[0].len();
            let cmp: Vec<_> = (0..n)
                .map(|i| {
                    let base = &self.reports[0][i].solution;
                    let diff = self.reports[1..]
                        .iter()
                        .map(|rs| rs[i].solution.sub(base).norm_inf())
                        .fold(0.0, f64::max);
                    json!({ "init": i, "max_abs_diff": round6(diff) })
                })
                .collect();
            v["comparison"] = json!(cmp);
        }
        v
    }
}

/// Runs all modes over all initializations, writing one CSV per run under
/// `dir` (`dir/<mode>/` when several modes are requested).
pub fn run_cell(
    p: &ProblemDef,
    cfg: &ExperimentConfig,
    solver: &SolverConfig,
    dir: &Path,
) -> Result<CellResult> {
    let inits = make_initializations(p, cfg.run.inits, cfg.run.seed);
    let mut reports = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let sub = if cfg.modes.len() > 1 {
            dir.join(mode.name())
        } else {
            dir.to_path_buf()
        };
        let mut rs = Vec::with_capacity(inits.len());
        for (i, init) in inits.iter().enumerate() {
            let r = run_mode(p, solver, init.clone(), mode);
            log::info!(
                "{} run {i}: {:?}, residual {:e} after {} iterations",
                mode.name(),
                r.status,
                r.final_kkt(),
                r.iterations()
            );
            write_records(&sub.join(format!("run_{i}.csv")), &r.records, cfg.run.timing)?;
            if cfg.run.trajectories {
                write_trajectory(&sub.join(format!("trajectory_{i}.csv")), &r.solution)?;
            }
            rs.push(r);
        }
        reports.push(rs);
    }
    Ok(CellResult {
        reports,
        modes: cfg.modes.clone(),
    })
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `solve`: one run per initialization and mode plus `summary.json`.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<CellResult> {
    let p = cfg.problem.build()?;
    for w in p.warnings() {
        log::warn!("{w}");
    }
    let dir = out_dir(cfg);
    let cell = run_cell(&p, cfg, &cfg.effective_solver(), &dir)?;
    let mut summary = cell.to_json();
    summary["warnings"] = json!(p.warnings());
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(cell)
}

/// One cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub overlap: usize,
    pub mu: f64,
    pub result: CellResult,
}

/// `sweep`: the Cartesian product of overlaps and penalties. Each cell goes
/// to `b<b>_mu<mu>/`, and `sweep_summary.csv` averages residual and time
/// over the converged runs of each (mode, b, mu).
pub fn cmd_sweep(cfg: &ExperimentConfig, overlaps: &[usize], mus: &[f64]) -> Result<Vec<SweepCell>> {
    if overlaps.is_empty() || mus.is_empty() {
        return Err(Error::Config("sweep lists must be non-empty".into()));
    }
    let p = cfg.problem.build()?;
    for w in p.warnings() {
        log::warn!("{w}");
    }
    let dir = out_dir(cfg);
    let mut cells = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "b",
        "mu",
        "converged",
        "runs",
        "mean_kkt_residual",
        "mean_ms",
        "mean_dir_err_ratio",
    ])?;
    for &b in overlaps {
        for &mu in mus {
            let solver = SolverConfig {
                overlap: b,
                mu,
                ..cfg.effective_solver()
            };
            solver
                .validate()
                .map_err(|e| Error::Config(format!("sweep cell b={b}, mu={mu}: {e}")))?;
            let cell_dir = dir.join(format!("b{b}_mu{mu}"));
            let result = run_cell(&p, cfg, &solver, &cell_dir)?;
            let mut summary = result.to_json();
            summary["b"] = json!(b);
            summary["mu"] = json!(mu);
            write_json(&cell_dir.join("summary.json"), &summary)?;
            for (mode, rs) in result.modes.iter().zip(&result.reports) {
                let conv: Vec<_> = rs.iter().filter(|r| r.status.converged()).collect();
                let mean = |f: &dyn Fn(&SolveReport) -> Option<f64>| {
                    let v: Vec<f64> = conv.iter().filter_map(|r| f(r)).collect();
                    if v.is_empty() {
                        String::new()
                    } else {
                        format!("{:.5e}", v.iter().sum::<f64>() / v.len() as f64)
                    }
                };
                let ratio = |r: &SolveReport| {
                    let v: Vec<f64> = r.records.iter().filter_map(|x| x.dir_err_ratio).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                };
                w.write_record([
                    mode.name().to_string(),
                    b.to_string(),
                    mu.to_string(),
                    conv.len().to_string(),
                    rs.len().to_string(),
                    mean(&|r| Some(r.final_kkt())),
                    mean(&|r| Some(r.total_ms())),
                    mean(&ratio),
                ])?;
            }
            cells.push(SweepCell {
                overlap: b,
                mu,
                result,
            });
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&dir.join("sweep_summary.csv"), &bytes)?;
    Ok(cells)
}

/// Output of `diag`.
#[derive(Debug, Clone, Serialize)]
pub struct DiagReport {
    pub gamma_g: f64,
    pub mu_bar: f64,
    /// Largest infinity-norm gap between the one-Newton-step Schwarz update
    /// and the unit-step overlapping update.
    pub newton_step_gap: f64,
    pub newton_step_pass: bool,
    pub overlaps: Vec<usize>,
    pub error_ratios: Vec<f64>,
    /// Least-squares slope of `ln(ratio)` against `b`.
    pub decay_slope: f64,
    pub decay_pass: bool,
}

impl DiagReport {
    pub fn passed(&self) -> bool {
        self.newton_step_pass && self.decay_pass
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Random iterate with `x_0` pinned, coordinates uniform on `(-scale, scale)`.
pub fn random_iterate(p: &ProblemDef, rng: &mut ChaCha8Rng, scale: f64) -> PrimalDual {
    let mut it = p.zero_iterate();
    for v in it.z.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    for v in it.lambda.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    it.z.x_mut(0).copy_from_slice(p.initial_state().as_slice());
    it
}

/// Infinity-norm gap between one Newton step on every nonlinear window and
/// the composed unit step of the linear-quadratic windows, at `it`.
pub fn newton_step_gap(p: &ProblemDef, it: &PrimalDual, subproblems: usize, overlap: usize, mu: f64) -> Result<f64> {
    let plan = make_plan(p.horizon(), subproblems, overlap)?;
    let schwarz = one_newton_schwarz_step(p, it, &plan, mu)?;
    let nd = assemble_newton_data(p, &it.z, &it.lambda)?;
    let mut fotd = it.clone();
    fotd.axpy(1.0, &approximate_direction(&nd, &plan, mu, None)?);
    Ok(schwarz.sub(&fotd).norm_inf())
}

/// `diag`: theory constants plus the one-Newton-step equivalence and the
/// overlap decay checks on small instances of the configured problem.
pub fn cmd_diag(cfg: &ExperimentConfig, gamma_c: f64, t: u32, upsilon: f64) -> Result<DiagReport> {
    let gamma_g = theory_gamma_g(gamma_c, t, upsilon)?;
    let mu_bar = theory_mu_bar(gamma_c, t, upsilon)?;
    let mu = cfg.solver.mu;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);

    let p = cfg.problem.with_horizon(100).build()?;
    let mut gap: f64 = 0.0;
    for b in [1, 5] {
        for _ in 0..3 {
            let it = random_iterate(&p, &mut rng, 10.0);
            gap = gap.max(newton_step_gap(&p, &it, 5, b, mu)?);
        }
    }

    let p = cfg.problem.with_horizon(200).build()?;
    let it = random_iterate(&p, &mut rng, 10.0);
    let nd = crate::newton::modify_hessian(
        &assemble_newton_data(&p, &it.z, &it.lambda)?,
        cfg.solver.definiteness_c,
        cfg.solver.gamma_step,
    )?;
    let overlaps = vec![1, 2, 4, 8];
    let error_ratios = overlaps
        .iter()
        .map(|&b| direction_error_ratio(&nd, &make_plan(200, 10, b)?, mu, cfg.solver.definiteness_c))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = overlaps.iter().map(|&b| b as f64).collect();
    let y: Vec<f64> = error_ratios.iter().map(|r| r.ln()).collect();
    let decay_slope = ls_slope(&x, &y);
    let decreasing = error_ratios.windows(2).all(|w| w[1] < w[0]);
    let report = DiagReport {
        gamma_g,
        mu_bar,
        newton_step_gap: gap,
        newton_step_pass: gap <= 1e-9,
        overlaps,
        error_ratios,
        decay_slope,
        decay_pass: decreasing && decay_slope < 0.0,
    };
    let dir = out_dir(cfg);
    write_json(
        &dir.join("diag.json"),
        &serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?,
    )?;
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(name = "fotd", version, about = "Overlapping temporal decomposition SQP for nonlinear dynamic programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve from every initialization and write per-run CSVs.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a grid over overlap sizes and penalties.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overlap sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 5, 25])]
        b: Vec<usize>,
        /// Penalties, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0f64, 25.0, 125.0])]
        mu: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print theory constants and run the equivalence and decay checks.
    Diag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gamma_c: f64,
        #[arg(long, default_value_t = 1)]
        t: u32,
        #[arg(long, default_value_t = 2.0)]
        upsilon: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn report_cell(cell: &CellResult) -> i32 {
    for (m, rs) in cell.modes.iter().zip(&cell.reports) {
        for (i, r) in rs.iter().enumerate() {
            println!(
                "{:<12} run {i}: {:<14} kkt {:.6e}  iters {:>3}  {:.1} ms",
                m.name(),
                format!("{:?}", r.status),
                r.final_kkt(),
                r.iterations(),
                r.total_ms()
            );
        }
    }
    if cell.all_converged() {
        0
    } else {
        1
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Solve { config, overrides } => {
            load_with(&config, &overrides).and_then(|cfg| cmd_solve(&cfg).map(|c| report_cell(&c)))
        }
        Command::Sweep {
            config,
            b,
            mu,
            overrides,
        } => load_with(&config, &overrides).and_then(|cfg| {
            let cells = cmd_sweep(&cfg, &b, &mu)?;
            let mut code = 0;
            for c in &cells {
                println!("b = {}, mu = {}", c.overlap, c.mu);
                code = code.max(report_cell(&c.result));
            }
            Ok(code)
        }),
        Command::Diag {
            config,
            gamma_c,
            t,
            upsilon,
            overrides,
        } => load_with(&config, &overrides).and_then(|cfg| {
            let start = Instant::now();
            let r = cmd_diag(&cfg, gamma_c, t, upsilon)?;
            println!("gamma_G({gamma_c}, {t}, {upsilon}) = {:.6e}", r.gamma_g);
            println!("mu_bar({gamma_c}, {t}, {upsilon}) = {:.6}", r.mu_bar);
            println!(
                "one-Newton-step equivalence: gap {:.3e} -> {}",
                r.newton_step_gap,
                if r.newton_step_pass { "pass" } else { "FAIL" }
            );
            for (b, ratio) in r.overlaps.iter().zip(&r.error_ratios) {
                println!("  b = {b:>2}: direction error ratio {ratio:.6e}");
            }
            println!(
                "overlap decay: slope {:.6} -> {}",
                r.decay_slope,
                if r.decay_pass { "pass" } else { "FAIL" }
            );
            log::info!("diag took {:.1} ms", start.elapsed().as_secs_f64() * 1e3);
            Ok(if r.passed() { 0 } else { 1 })
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
