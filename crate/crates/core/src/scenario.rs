//! Scenario files: schema, validation, execution and reporting.
//!
//! A scenario is a TOML file naming a grid, an operator, an integrand, a
//! boundary condition, an initial field and one job. Running it writes a
//! directory under the output root holding `metadata.json` and the job's CSV
//! tables; `report` turns such a directory into whitespace-separated `.dat`
//! columns and a short summary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffop::{Grid, GridFunction, OperatorKind, OperatorSpec};
use crate::energy::{relaxed_energy, AscentOptions, Boundary, DirichletData, Problem};
use crate::error::Error;
use crate::flow::{self, FlowOptions, FlowTrace};
use crate::integrand::{Integrand, Point};
use crate::resolvent::{resolve, SolverOptions};
use crate::trace_io::{self, fmt_f64, GridMeta, Metadata, TraceError};

/// Environment variable holding the output root; defaults to `./out`.
pub const OUTPUT_ROOT_VAR: &str = "LINFLOW_OUTPUT_ROOT";

const BUNDLED: [(&str, &str); 9] = [
    ("tvflow-step-1d", include_str!("../scenarios/tvflow-step-1d.toml")),
    ("badf-relaxation", include_str!("../scenarios/badf-relaxation.toml")),
    ("qladder-step-1d", include_str!("../scenarios/qladder-step-1d.toml")),
    ("bd-rotation-2d", include_str!("../scenarios/bd-rotation-2d.toml")),
    ("heat-q2-1d", include_str!("../scenarios/heat-q2-1d.toml")),
    ("dirichlet-1d", include_str!("../scenarios/dirichlet-1d.toml")),
    ("resolvent-step-1d", include_str!("../scenarios/resolvent-step-1d.toml")),
    ("energy-area-2d", include_str!("../scenarios/energy-area-2d.toml")),
    ("moreau-step-1d", include_str!("../scenarios/moreau-step-1d.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    pub integrand: IntegrandConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    pub initial: Profile,
    pub job: Job,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cells per axis; one entry in 1D, two in 2D.
    pub shape: Vec<usize>,
    /// Mesh width; defaults to `1/shape[0]`.
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(default = "default_kind")]
    pub kind: OperatorKind,
    /// Components of `u`; defaults to 1 for the full gradient and to the
    /// dimension otherwise.
    pub components: Option<usize>,
}

fn default_kind() -> OperatorKind {
    OperatorKind::FullGradient
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig { kind: default_kind(), components: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandConfig {
    pub id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    #[default]
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub mode: BoundaryKind,
    /// Boundary values in Dirichlet mode, given as a field whose trace is
    /// `u₁`; the field doubles as the interior extension.
    pub data: Option<Profile>,
}

/// Fields sampled at grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    /// `inside` on `lo ≤ x₁ ≤ hi`, `outside` elsewhere.
    Step {
        #[serde(default = "quarter")]
        lo: f64,
        #[serde(default = "three_quarters")]
        hi: f64,
        #[serde(default = "one")]
        inside: f64,
        #[serde(default)]
        outside: f64,
    },
    Constant {
        value: f64,
    },
    /// `offset + slope·x`
    Linear {
        slope: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `amp · Π cos(π freq x_d)`
    Cosine {
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        freq: f64,
    },
    /// `ω (−(x₂ − c₂), x₁ − c₁)` about the domain centre.
    Rotation {
        #[serde(default = "one")]
        omega: f64,
    },
    /// Independent uniform values in `[−amp, amp]` drawn from the scenario seed.
    Random {
        #[serde(default = "one")]
        amp: f64,
    },
}

fn quarter() -> f64 {
    0.25
}
fn three_quarters() -> f64 {
    0.75
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Job {
    /// Primal and relaxed dual energy of the initial field.
    Energy {},
    /// One resolvent step of size `lambda` from the initial field.
    Resolvent { lambda: f64 },
    /// Implicit-Euler flow; `q` switches to the q-power flow, `moreau` to
    /// its Moreau–Yosida regularization (`moreau_lambda` defaults to `q − 1`).
    Flow {
        dt: f64,
        steps: usize,
        q: Option<f64>,
        #[serde(default)]
        moreau: bool,
        moreau_lambda: Option<f64>,
        #[serde(default)]
        save_states: bool,
    },
    /// Distances at `t_star` between q-power flows and the linear-growth flow.
    Qladder { dt: f64, t_star: f64, qs: Vec<f64> },
    /// Relaxed energy of the initial field across resolutions.
    RefinementStudy { cells: Vec<usize> },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Energy {} => "energy",
            Job::Resolvent { .. } => "resolvent",
            Job::Flow { .. } => "flow",
            Job::Qladder { .. } => "qladder",
            Job::RefinementStudy { .. } => "refinement-study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: Option<usize>,
    pub gap_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub check_every: Option<usize>,
    pub primal_step: Option<f64>,
    pub energy_tol: Option<f64>,
    pub ascent_max_iters: Option<usize>,
    pub ascent_tol: Option<f64>,
}

impl SolverConfig {
    pub fn solver(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            gap_tol: self.gap_tol.unwrap_or(d.gap_tol),
            residual_tol: self.residual_tol.unwrap_or(d.residual_tol),
            check_every: self.check_every.unwrap_or(d.check_every),
            primal_step: self.primal_step.unwrap_or(d.primal_step),
        }
    }

    pub fn flow(&self) -> FlowOptions {
        FlowOptions { solver: self.solver(), energy_tol: self.energy_tol.unwrap_or(FlowOptions::default().energy_tol) }
    }

    pub fn ascent(&self) -> AscentOptions {
        let d = AscentOptions::default();
        AscentOptions { max_iters: self.ascent_max_iters.unwrap_or(d.max_iters), tol: self.ascent_tol.unwrap_or(d.tol) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory below the output root; defaults to the scenario name.
    pub dir: Option<String>,
}

/// A config problem, located by its dotted key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

fn bad(path: impl Into<String>, reason: impl Into<String>) -> ValidationError {
    ValidationError { path: path.into(), reason: reason.into() }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } | Error::InadmissibleCell { .. } | Error::InadmissibleFace { .. } => {
                CliError::NonConvergence(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Names and descriptions of the bundled scenarios.
pub fn bundled() -> Vec<(&'static str, String)> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let description = parse(text).map(|s| s.description).unwrap_or_default();
            (*name, description)
        })
        .collect()
}

/// Text of a bundled scenario.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Parses and validates scenario text.
pub fn parse(text: &str) -> Result<Scenario, CliError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

/// Loads a scenario from a file, or by bundled name when no such file exists.
pub fn load(arg: &str) -> Result<(Scenario, String), CliError> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| io_error(path, e))?
    } else if let Some(text) = bundled_text(arg) {
        text.to_string()
    } else {
        return Err(CliError::Io(format!("{arg}: no such file or bundled scenario")));
    };
    let scenario = parse(&text)?;
    Ok((scenario, text))
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn positive(path: &str, v: f64) -> Result<(), ValidationError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(path, format!("must be a positive finite number, got {v}")))
    }
}

fn exponent(path: &str, q: f64) -> Result<(), ValidationError> {
    if q > 1.0 && q <= 2.0 {
        Ok(())
    } else {
        Err(bad(path, format!("must lie in (1, 2], got {q}")))
    }
}

impl Scenario {
    fn dim(&self) -> usize {
        self.grid.shape.len()
    }

    fn components(&self) -> usize {
        self.operator.components.unwrap_or(match self.operator.kind {
            OperatorKind::FullGradient => 1,
            _ => self.dim(),
        })
    }

    /// Domain length along the first axis.
    fn length(&self) -> f64 {
        self.grid.h.unwrap_or(1.0 / self.grid.shape[0] as f64) * self.grid.shape[0] as f64
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(bad("name", "must be non-empty and use only letters, digits, `-`, `_` or `.`"));
        }
        match self.grid.shape.len() {
            1 | 2 => {}
            n => return Err(bad("grid.shape", format!("needs one or two entries, got {n}"))),
        }
        for (i, &c) in self.grid.shape.iter().enumerate() {
            if c == 0 {
                return Err(bad(format!("grid.shape[{i}]"), "must be at least 1"));
            }
        }
        if let Some(h) = self.grid.h {
            positive("grid.h", h)?;
        }
        let m = self.components();
        if m == 0 {
            return Err(bad("operator.components", "must be at least 1"));
        }
        let op = OperatorSpec::new(self.operator.kind, m, self.dim())
            .map_err(|e| bad("operator.components", e.to_string()))?;
        Integrand::parse_seeded(&self.integrand.id, self.seed).map_err(|e| bad("integrand.id", e.to_string()))?;
        self.initial.check("initial", self.dim(), m)?;
        match (self.boundary.mode, &self.boundary.data) {
            (BoundaryKind::Neumann, Some(_)) => {
                return Err(bad("boundary.data", "only allowed in dirichlet mode"));
            }
            (BoundaryKind::Dirichlet, None) => return Err(bad("boundary.data", "required in dirichlet mode")),
            (BoundaryKind::Dirichlet, Some(data)) => {
                if !op.c_elliptic() {
                    return Err(bad(
                        "boundary.mode",
                        format!("dirichlet data needs a C-elliptic operator; {} is not", op.kind().name()),
                    ));
                }
                data.check("boundary.data", self.dim(), m)?;
            }
            (BoundaryKind::Neumann, None) => {}
        }
        match &self.job {
            Job::Energy {} => {}
            Job::Resolvent { lambda } => positive("job.lambda", *lambda)?,
            Job::Flow { dt, steps, q, moreau, moreau_lambda, .. } => {
                positive("job.dt", *dt)?;
                if *steps == 0 {
                    return Err(bad("job.steps", "must be at least 1"));
                }
                if let Some(q) = q {
                    exponent("job.q", *q)?;
                }
                if *moreau && q.is_none() {
                    return Err(bad("job.q", "required when job.moreau is set"));
                }
                if let Some(l) = moreau_lambda {
                    if !moreau {
                        return Err(bad("job.moreau_lambda", "only used when job.moreau is set"));
                    }
                    positive("job.moreau_lambda", *l)?;
                }
            }
            Job::Qladder { dt, t_star, qs } => {
                positive("job.dt", *dt)?;
                positive("job.t_star", *t_star)?;
                let steps = (t_star / dt).round();
                if steps < 1.0 || (steps * dt - t_star).abs() > 1e-9 * t_star {
                    return Err(bad("job.t_star", "must be a whole number of steps job.dt"));
                }
                if qs.is_empty() {
                    return Err(bad("job.qs", "must list at least one exponent"));
                }
                for (i, q) in qs.iter().enumerate() {
                    exponent(&format!("job.qs[{i}]"), *q)?;
                }
            }
            Job::RefinementStudy { cells } => {
                if cells.is_empty() {
                    return Err(bad("job.cells", "must list at least one resolution"));
                }
                for (i, &c) in cells.iter().enumerate() {
                    if c == 0 {
                        return Err(bad(format!("job.cells[{i}]"), "must be at least 1"));
                    }
                }
            }
        }
        let s = &self.solver;
        for (key, v) in [("solver.max_iters", s.max_iters), ("solver.check_every", s.check_every), ("solver.ascent_max_iters", s.ascent_max_iters)] {
            if v == Some(0) {
                return Err(bad(key, "must be at least 1"));
            }
        }
        for (key, v) in [
            ("solver.gap_tol", s.gap_tol),
            ("solver.residual_tol", s.residual_tol),
            ("solver.primal_step", s.primal_step),
            ("solver.ascent_tol", s.ascent_tol),
        ] {
            if let Some(v) = v {
                positive(key, v)?;
            }
        }
        if let Some(t) = s.energy_tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(bad("solver.energy_tol", "must be a non-negative finite number"));
            }
        }
        if let Some(dir) = &self.output.dir {
            let p = Path::new(dir);
            if dir.is_empty() || p.is_absolute() || p.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
                return Err(bad("output.dir", "must be a relative path without `..`"));
            }
        }
        Ok(())
    }

    fn grid_with(&self, cells: Option<usize>) -> Result<Grid, Error> {
        let shape: Vec<usize> = match cells {
            Some(c) => vec![c; self.dim()],
            None => self.grid.shape.clone(),
        };
        let h = self.length() / shape[0] as f64;
        match shape[..] {
            [n] => Grid::line(n, h),
            [nx, ny] => Grid::square(nx, ny, h),
            _ => unreachable!("validated"),
        }
    }

    fn problem(&self, cells: Option<usize>) -> Result<Problem, Error> {
        let grid = self.grid_with(cells)?;
        let op = OperatorSpec::new(self.operator.kind, self.components(), self.dim())?;
        let f = Integrand::parse_seeded(&self.integrand.id, self.seed)?;
        Problem::new(op, grid, &f)
    }

    fn boundary(&self, grid: &Grid) -> Boundary {
        match &self.boundary.data {
            Some(data) if self.boundary.mode == BoundaryKind::Dirichlet => {
                Boundary::Dirichlet(DirichletData::from_extension(data.sample(grid, self.components(), self.seed, 1)))
            }
            _ => Boundary::Neumann,
        }
    }

    fn initial(&self, grid: &Grid) -> GridFunction {
        self.initial.sample(grid, self.components(), self.seed, 0)
    }

    fn output_dir(&self, root: &Path) -> PathBuf {
        root.join(self.output.dir.as_deref().unwrap_or(&self.name))
    }
}

impl Profile {
    fn check(&self, path: &str, dim: usize, m: usize) -> Result<(), ValidationError> {
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(bad(format!("{path}.{key}"), "must be finite"))
            }
        };
        match self {
            Profile::Step { lo, hi, inside, outside } => {
                for (k, v) in [("lo", lo), ("hi", hi), ("inside", inside), ("outside", outside)] {
                    finite(k, *v)?;
                }
                if lo > hi {
                    return Err(bad(format!("{path}.hi"), "must not be below lo"));
                }
            }
            Profile::Constant { value } => finite("value", *value)?,
            Profile::Linear { slope, offset } => {
                if slope.len() != dim {
                    return Err(bad(format!("{path}.slope"), format!("needs {dim} entries, got {}", slope.len())));
                }
                for s in slope {
                    finite("slope", *s)?;
                }
                finite("offset", *offset)?;
            }
            Profile::Cosine { amp, freq } => {
                finite("amp", *amp)?;
                finite("freq", *freq)?;
            }
            Profile::Rotation { omega } => {
                finite("omega", *omega)?;
                if dim != 2 || m != 2 {
                    return Err(bad(format!("{path}.kind"), "rotation needs a 2D grid and two components"));
                }
            }
            Profile::Random { amp } => finite("amp", *amp)?,
        }
        Ok(())
    }

    fn scalar(&self, x: Point, dim: usize) -> f64 {
        use std::f64::consts::PI;
        match self {
            Profile::Step { lo, hi, inside, outside } => {
                if *lo <= x[0] && x[0] <= *hi {
                    *inside
                } else {
                    *outside
                }
            }
            Profile::Constant { value } => *value,
            Profile::Linear { slope, offset } => offset + slope.iter().zip(x).map(|(s, x)| s * x).sum::<f64>(),
            Profile::Cosine { amp, freq } => amp * x[..dim].iter().map(|&x| (PI * freq * x).cos()).product::<f64>(),
            Profile::Rotation { .. } | Profile::Random { .. } => unreachable!("not a broadcast profile"),
        }
    }

    /// Samples the profile at the nodes; random draws use `stream` of the seed.
    fn sample(&self, grid: &Grid, m: usize, seed: u64, stream: u64) -> GridFunction {
        match self {
            Profile::Random { amp } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let values = (0..grid.nodes() * m).map(|_| amp * rng.gen_range(-1.0..=1.0)).collect();
                GridFunction::new(*grid, m, values).expect("samples are finite")
            }
            Profile::Rotation { omega } => {
                let shape = grid.shape();
                let (cx, cy) = (grid.h() * shape[0] as f64 / 2.0, grid.h() * shape[1] as f64 / 2.0);
                GridFunction::from_fn(*grid, m, |x| vec![-omega * (x[1] - cy), omega * (x[0] - cx)])
            }
            _ => {
                let dim = grid.dim();
                GridFunction::from_fn(*grid, m, |x| vec![self.scalar(x, dim); m])
            }
        }
    }
}

/// What a run left on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    /// Set when a solver stopped short; the artifacts are partial.
    pub failure: Option<String>,
}

impl RunOutcome {
    /// `Ok` for a complete run, the non-convergence error otherwise.
    pub fn into_result(self) -> Result<RunOutcome, CliError> {
        match &self.failure {
            Some(f) => Err(CliError::NonConvergence(format!("{f} (partial artifacts in {})", self.dir.display()))),
            None => Ok(self),
        }
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn row(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| fmt_f64(*v)).collect()
}

/// Runs a validated scenario, writing artifacts below `root`.
pub fn run(scenario: &Scenario, text: &str, root: &Path) -> Result<RunOutcome, CliError> {
    scenario.validate()?;
    let p = scenario.problem(None)?;
    let grid = *p.grid();
    let bc = scenario.boundary(&grid);
    let u0 = scenario.initial(&grid);
    let dir = scenario.output_dir(root);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;

    let mut files = Vec::new();
    let mut failure = None;
    let mut states = None;
    let mut dt = None;
    match &scenario.job {
        Job::Energy {} => {
            let r = relaxed_energy(&p, &u0, &bc, scenario.solver.ascent())?;
            if !r.converged {
                failure = Some(format!("dual ascent stopped after {} iterations", r.iterations));
            }
            trace_io::write_csv(
                &dir.join("energy.csv"),
                &["primal", "dual", "gap", "boundary_term", "iterations"],
                &[vec![fmt_f64(r.primal), fmt_f64(r.dual), fmt_f64(r.gap), fmt_f64(r.boundary_term), r.iterations.to_string()]],
            )?;
            files.push("energy.csv".into());
        }
        Job::Resolvent { lambda } => {
            let r = resolve(&p, &u0, *lambda, &bc, &scenario.solver.solver(), None)?;
            if !r.converged {
                failure = Some(format!("resolvent stopped after {} iterations", r.iterations));
            }
            let m = p.m();
            let mut header = vec!["node".to_string()];
            header.extend((0..grid.dim()).map(|d| format!("x{d}")));
            for name in ["w", "u"] {
                header.extend((0..m).map(|k| if m == 1 { name.to_string() } else { format!("{name}{k}") }));
            }
            let rows: Vec<Vec<String>> = (0..grid.nodes())
                .map(|i| {
                    let x = grid.node_coords(i);
                    let mut row = vec![i.to_string()];
                    row.extend(x[..grid.dim()].iter().map(|v| fmt_f64(*v)));
                    row.extend(u0.node(i).iter().chain(r.u.node(i)).map(|v| fmt_f64(*v)));
                    row
                })
                .collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            trace_io::write_csv(&dir.join("resolvent.csv"), &header, &rows)?;
            let cert = serde_json::json!({
                "lambda": lambda,
                "iterations": r.iterations,
                "converged": r.converged,
                "certificate": r.certificate,
            });
            write_text(&dir.join("certificate.json"), &(serde_json::to_string_pretty(&cert).expect("serializes") + "\n"))?;
            files.extend(["resolvent.csv".into(), "certificate.json".into()]);
        }
        Job::Flow { dt: step, steps, q, moreau, moreau_lambda, save_states } => {
            let opts = scenario.solver.flow();
            let trace = match (q, moreau) {
                (Some(q), true) => flow::moreau_flow(&p, *moreau_lambda, *q, &u0, *step, *steps, &bc, &opts)?,
                (Some(q), false) => flow::qflow(&p, *q, &u0, *step, *steps, &bc, &opts)?,
                (None, _) => flow::evolve(&p, &u0, *step, *steps, &bc, &opts)?,
            };
            failure = trace.failure.clone();
            states = trace_io::write_flow(&dir, &trace, *save_states)?;
            files.push(trace_io::TRACE_FILE.into());
            if states.is_some() {
                files.push(trace_io::STATES_FILE.into());
            }
            dt = Some(*step);
        }
        Job::Qladder { dt: step, t_star, qs } => {
            let steps = (t_star / step).round() as usize;
            let ladder: Vec<Option<f64>> = std::iter::once(None).chain(qs.iter().map(|q| Some(*q))).collect();
            let traces: Vec<FlowTrace> =
                flow::qladder(&p, &ladder, &u0, *step, steps, &bc, &scenario.solver.flow()).into_iter().collect::<Result<_, _>>()?;
            fn at(t: &FlowTrace, t_star: f64) -> Option<&GridFunction> {
                (t.times.last().copied().unwrap_or(0.0) >= t_star - 1e-12).then(|| t.state_at(t_star))
            }
            let reference = at(&traces[0], *t_star);
            let mut rows = Vec::new();
            for (q, trace) in ladder.iter().zip(&traces) {
                let sub = format!("q-{}", q.unwrap_or(1.0));
                let subdir = dir.join(&sub);
                fs::create_dir_all(&subdir).map_err(|e| io_error(&subdir, e))?;
                trace_io::write_flow(&subdir, trace, false)?;
                files.push(format!("{sub}/{}", trace_io::TRACE_FILE));
                if let Some(f) = &trace.failure {
                    failure.get_or_insert_with(|| format!("{sub}: {f}"));
                }
                if let Some(q) = q {
                    let distance = match (reference, at(trace, *t_star)) {
                        (Some(r), Some(u)) => u.distance(r),
                        _ => f64::NAN,
                    };
                    rows.push(vec![fmt_f64(*q), fmt_f64(distance), trace.iterations.iter().sum::<usize>().to_string()]);
                }
            }
            trace_io::write_csv(&dir.join("qladder.csv"), &["q", "distance", "iterations"], &rows)?;
            files.insert(0, "qladder.csv".into());
            dt = Some(*step);
        }
        Job::RefinementStudy { cells } => {
            use rayon::prelude::*;
            let reports: Vec<_> = cells
                .par_iter()
                .map(|&c| -> Result<_, Error> {
                    let p = scenario.problem(Some(c))?;
                    let grid = *p.grid();
                    let r = relaxed_energy(&p, &scenario.initial(&grid), &scenario.boundary(&grid), scenario.solver.ascent())?;
                    Ok((c, grid.h(), r))
                })
                .collect::<Result<_, _>>()?;
            let mut rows = Vec::new();
            for (c, h, r) in reports {
                if !r.converged {
                    failure.get_or_insert_with(|| format!("dual ascent at {c} cells stopped after {} iterations", r.iterations));
                }
                let mut row = vec![c.to_string()];
                row.extend(self::row(&[h, r.primal, r.dual, r.gap]));
                row.push(r.iterations.to_string());
                rows.push(row);
            }
            trace_io::write_csv(&dir.join("refinement.csv"), &["cells", "h", "primal", "dual", "gap", "iterations"], &rows)?;
            files.push("refinement.csv".into());
        }
    }

    let meta = Metadata {
        scenario: scenario.name.clone(),
        job: scenario.job.name().into(),
        grid: GridMeta { dim: grid.dim(), shape: grid.shape(), h: grid.h(), nodes: grid.nodes(), components: p.m() },
        operator: p.op().kind().name().into(),
        integrand: p.integrand().id(),
        boundary: match scenario.boundary.mode {
            BoundaryKind::Neumann => "neumann".into(),
            BoundaryKind::Dirichlet => "dirichlet".into(),
        },
        dt,
        seed: scenario.seed,
        config_sha256: config_hash(text),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        states,
        failure: failure.clone(),
        files: files.clone(),
    };
    trace_io::write_metadata(&dir, &meta)?;
    Ok(RunOutcome { dir, files, failure })
}

fn write_dat(path: &Path, header: &[&str], columns: &[Vec<f64>]) -> Result<(), CliError> {
    let mut out = format!("# {}\n", header.join(" "));
    let rows = columns.first().map_or(0, Vec::len);
    for r in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| fmt_f64(c[r])).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Observed order `log(|d_{k−1}| / |d_k|) / log(n_k / n_{k−1})` from the
/// successive differences `d_k = v_k − v_{k−1}`; NaN where undefined.
pub fn observed_order(cells: &[f64], values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|k| {
            if k < 2 {
                return f64::NAN;
            }
            let d1 = (values[k - 1] - values[k - 2]).abs();
            let d2 = (values[k] - values[k - 1]).abs();
            if d1 == 0.0 || d2 == 0.0 {
                f64::NAN
            } else {
                (d1 / d2).ln() / (cells[k] / cells[k - 1]).ln()
            }
        })
        .collect()
}

/// Writes plot-ready `.dat` files and `summary.txt` for a run directory and
/// returns the summary.
type Rows = Vec<Vec<String>>;

pub fn report(dir: &Path) -> Result<String, CliError> {
    let meta = trace_io::read_metadata(dir)?;
    let mut summary = vec![
        format!("scenario      {}", meta.scenario),
        format!("job           {}", meta.job),
        format!("config sha256 {}", meta.config_sha256),
        format!("grid          {:?} cells, h = {}", meta.grid.shape, meta.grid.h),
        format!("operator      {}", meta.operator),
        format!("integrand     {}", meta.integrand),
        format!("boundary      {}", meta.boundary),
    ];
    let table = |name: &str| -> Result<(PathBuf, Vec<String>, Rows), CliError> {
        let path = dir.join(name);
        let (h, rows) = trace_io::read_csv(&path)?;
        Ok((path, h, rows))
    };
    let flow_summary = |path: &Path, h: &[String], rows: &[Vec<String>], summary: &mut Vec<String>| -> Result<(), CliError> {
        let energy = trace_io::column(path, h, rows, "energy")?;
        let mass = trace_io::column(path, h, rows, "mass")?;
        let time = trace_io::column(path, h, rows, "time")?;
        let monotone = energy.windows(2).all(|e| e[1] <= e[0]);
        let drift = mass.iter().map(|m| (m - mass[0]).abs()).fold(0.0, f64::max);
        summary.push(format!("steps         {}", rows.len().saturating_sub(1)));
        summary.push(format!("final time    {}", time.last().copied().unwrap_or(0.0)));
        summary.push(format!("energy        {} -> {}", energy[0], energy.last().unwrap()));
        summary.push(format!("non-increasing energy: {}", if monotone { "yes" } else { "no" }));
        summary.push(format!("mass drift    {drift:e}"));
        Ok(())
    };
    match meta.job.as_str() {
        "energy" => {
            let (path, h, rows) = table("energy.csv")?;
            let cols = ["primal", "dual", "gap", "boundary_term"]
                .iter()
                .map(|c| trace_io::column(&path, &h, &rows, c))
                .collect::<Result<Vec<_>, _>>()?;
            write_dat(&dir.join("energy.dat"), &["primal", "dual", "gap", "boundary_term"], &cols)?;
            summary.push(format!("primal        {}", cols[0][0]));
            summary.push(format!("dual          {}", cols[1][0]));
            summary.push(format!("gap           {:e}", cols[2][0]));
        }
        "resolvent" => {
            let path = dir.join("resolvent.csv");
            let (h, rows) = trace_io::read_csv(&path)?;
            let names: Vec<&str> = h.iter().skip(1).map(String::as_str).collect();
            let cols = names.iter().map(|c| trace_io::column(&path, &h, &rows, c)).collect::<Result<Vec<_>, _>>()?;
            write_dat(&dir.join("resolvent.dat"), &names, &cols)?;
            let cert_path = dir.join("certificate.json");
            let cert: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(&cert_path).map_err(|e| io_error(&cert_path, e))?,
            )
            .map_err(|e| CliError::Io(format!("{}: {e}", cert_path.display())))?;
            summary.push(format!("iterations    {}", cert["iterations"]));
            for key in ["euler_lagrange_residual", "normal_trace_residual", "fenchel_gap", "energy"] {
                summary.push(format!("{key} {}", cert["certificate"][key]));
            }
        }
        "flow" => {
            let (path, h, rows) = table(trace_io::TRACE_FILE)?;
            let cols = ["time", "energy", "mass"]
                .iter()
                .map(|c| trace_io::column(&path, &h, &rows, c))
                .collect::<Result<Vec<_>, _>>()?;
            write_dat(&dir.join("energy.dat"), &["time", "energy", "mass"], &cols)?;
            flow_summary(&path, &h, &rows, &mut summary)?;
        }
        "qladder" => {
            let (path, h, rows) = table("qladder.csv")?;
            let q = trace_io::column(&path, &h, &rows, "q")?;
            let d = trace_io::column(&path, &h, &rows, "distance")?;
            write_dat(&dir.join("qladder.dat"), &["q", "distance"], &[q.clone(), d.clone()])?;
            for (q, d) in q.iter().zip(&d) {
                summary.push(format!("q = {q:<6} distance {d:e}"));
            }
            let decreasing = d.windows(2).all(|w| w[1] < w[0]);
            summary.push(format!("strictly decreasing: {}", if decreasing { "yes" } else { "no" }));
        }
        "refinement-study" => {
            let (path, h, rows) = table("refinement.csv")?;
            let cells = trace_io::column(&path, &h, &rows, "cells")?;
            let primal = trace_io::column(&path, &h, &rows, "primal")?;
            let dual = trace_io::column(&path, &h, &rows, "dual")?;
            let gap = trace_io::column(&path, &h, &rows, "gap")?;
            let order = observed_order(&cells, &dual);
            write_dat(
                &dir.join("refinement.dat"),
                &["cells", "primal", "dual", "gap", "order"],
                &[cells.clone(), primal.clone(), dual.clone(), gap, order.clone()],
            )?;
            for k in 0..cells.len() {
                summary.push(format!("cells {:<6} primal {:.6} dual {:.6} order {}", cells[k], primal[k], dual[k], order[k]));
            }
        }
        other => {
            return Err(CliError::Io(format!("{}: unknown job `{other}`", dir.join(trace_io::METADATA_FILE).display())));
        }
    }
    if let Some(f) = &meta.failure {
        summary.push(format!("FAILURE       {f}"));
    }
    let text = summary.join("\n") + "\n";
    write_text(&dir.join("summary.txt"), &text)?;
    Ok(text)
}
