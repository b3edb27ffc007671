//! Flat `section.key = value` run configuration.
//!
//! Every key has a default except the input paths. Relative paths are
//! resolved against the directory of the file they appear in. A key given
//! twice keeps its last value, which lets a generated file be extended by
//! appending lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gravinv::elasticity::DEFAULT_POISSON;
use gravinv::forward::{SolverConfig, DEFAULT_DENSITY, STANDARD_GRAVITY};
use gravinv::inverse::InverseConfig;
use gravinv::synth::RotationPlane;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub node: Option<PathBuf>,
    pub ele: Option<PathBuf>,
    /// One 0-based vertex index per line.
    pub fixed: Option<PathBuf>,
    /// One cluster label per element.
    pub labels: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    /// `.node` file with the full observed shape of the neutral pose.
    pub neutral: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    /// Known rest shape; defaults to the mesh nodes.
    pub rest: Option<PathBuf>,
    /// Output directory of a previous `invert` run, read by `validate`.
    pub inversion: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub density: f64,
    pub gravity: f64,
    pub poisson: f64,
    /// One modulus for every cluster or one per cluster.
    pub young: Vec<f64>,
    /// Gravity of the neutral observation; `None` hangs along `-z`.
    pub neutral_gravity: Option<[f64; 3]>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            density: DEFAULT_DENSITY,
            gravity: STANDARD_GRAVITY,
            poisson: DEFAULT_POISSON,
            young: vec![1e6],
            neutral_gravity: None,
        }
    }
}

impl PhysicsConfig {
    pub fn neutral_gravity(&self) -> [f64; 3] {
        self.neutral_gravity.unwrap_or([0.0, 0.0, -self.gravity])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvertMode {
    /// Rest shape and moduli together.
    #[default]
    Joint,
    /// Moduli only; the rest shape is known.
    Materials,
    /// Rest shape only; the moduli are `physics.young`.
    Rest,
}

impl FromStr for InvertMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(InvertMode::Joint),
            "materials" => Ok(InvertMode::Materials),
            "rest" => Ok(InvertMode::Rest),
            _ => Err(format!("unknown mode '{s}' (expected joint, materials or rest)")),
        }
    }
}

impl InvertMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InvertMode::Joint => "joint",
            InvertMode::Materials => "materials",
            InvertMode::Rest => "rest",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertConfig {
    pub mode: InvertMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    /// Gravity direction, scaled to `physics.gravity`.
    pub direction: [f64; 3],
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            direction: [0.0, 0.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub cells: [usize; 3],
    pub cell_size: f64,
    pub bands: usize,
    pub young: Vec<f64>,
    pub poses: usize,
    pub plane: String,
    /// Explicit pose angles in degrees; `None` spreads `poses` over
    /// [-60, 60].
    pub angles: Option<Vec<f64>>,
    pub noise_std: f64,
    pub heldout_angles: Vec<f64>,
    pub neutral_angle: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cells: [10, 2, 2],
            cell_size: 0.01,
            bands: 3,
            young: vec![2e4, 2e5, 8e5],
            poses: 5,
            plane: "xz".into(),
            angles: None,
            noise_std: 0.0,
            heldout_angles: vec![-45.0, 45.0],
            neutral_angle: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub probes: usize,
    /// Relative finite-difference step.
    pub step: f64,
    /// Factor by which the forward residual tolerance is tightened.
    pub tighten: f64,
    pub tolerance: f64,
    /// Moduli at the evaluation point; `None` uses `inverse.young_init`.
    pub young: Option<Vec<f64>>,
    /// Amplitude in meters of a random perturbation of the free rest
    /// vertices.
    pub perturb: f64,
    /// Relative error injected into the analytic gradient. Test hook.
    pub corrupt: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            probes: 10,
            step: 1e-5,
            tighten: 100.0,
            tolerance: 1e-3,
            young: None,
            perturb: 0.0,
            corrupt: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    /// Homogeneous modulus of the naive baseline.
    pub naive_young: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig { naive_young: 5e4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub physics: PhysicsConfig,
    pub solver: SolverConfig,
    pub inverse: InverseConfig,
    pub invert: InvertConfig,
    pub forward: ForwardConfig,
    pub synth: SynthConfig,
    pub gradcheck: GradcheckConfig,
    pub validate: ValidateConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig {
                output: PathBuf::from("out"),
                ..PathsConfig::default()
            },
            physics: PhysicsConfig::default(),
            solver: SolverConfig::default(),
            inverse: InverseConfig::default(),
            invert: InvertConfig::default(),
            forward: ForwardConfig::default(),
            synth: SynthConfig::default(),
            gradcheck: GradcheckConfig::default(),
            validate: ValidateConfig::default(),
            run: RunSection::default(),
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid number '{v}'"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(s.trim())).collect()
}

fn triple<T: FromStr + Copy>(v: &str) -> Result<[T; 3], String> {
    let xs = list::<T>(v)?;
    <[T; 3]>::try_from(xs).map_err(|_| format!("expected three comma-separated values, got '{v}'"))
}

fn auto<T>(v: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn path(base: &Path, v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| base.join(v))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show_auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".to_string(), T::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    /// Reads a configuration file and checks it.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        let base = file.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'section.key = value'", i + 1))?;
            cfg.set(key.trim(), value.trim(), base)
                .map_err(|m| format!("line {}: {}: {m}", i + 1, key.trim()))?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), String> {
        let p = &mut self.paths;
        let ph = &mut self.physics;
        let s = &mut self.solver;
        let inv = &mut self.inverse;
        let sy = &mut self.synth;
        let gc = &mut self.gradcheck;
        match key {
            "paths.node" => p.node = path(base, v),
            "paths.ele" => p.ele = path(base, v),
            "paths.fixed" => p.fixed = path(base, v),
            "paths.labels" => p.labels = path(base, v),
            "paths.poses" => p.poses = path(base, v),
            "paths.neutral" => p.neutral = path(base, v),
            "paths.heldout" => p.heldout = path(base, v),
            "paths.rest" => p.rest = path(base, v),
            "paths.inversion" => p.inversion = path(base, v),
            "paths.output" => p.output = path(base, v).ok_or("output directory must not be empty")?,

            "physics.density" => ph.density = num(v)?,
            "physics.gravity" => ph.gravity = num(v)?,
            "physics.poisson" => ph.poisson = num(v)?,
            "physics.young" => ph.young = list(v)?,
            "physics.neutral_gravity" => ph.neutral_gravity = auto(v, triple)?,

            "solver.residual_tol" => s.residual_tol = auto(v, num)?,
            "solver.relative_tol" => s.relative_tol = num(v)?,
            "solver.max_newton_iters" => s.max_newton_iters = num(v)?,
            "solver.inversion_threshold" => s.inversion_threshold = num(v)?,

            "inverse.alpha" => inv.alpha = auto(v, num)?,
            "inverse.alpha_factor" => inv.alpha_factor = num(v)?,
            "inverse.young_lower" => inv.young_lower = num(v)?,
            "inverse.young_upper" => inv.young_upper = num(v)?,
            "inverse.young_init" => inv.young_init = num(v)?,
            "inverse.young_reference" => inv.young_reference = num(v)?,
            "inverse.wolfe_gamma" => inv.wolfe_gamma = num(v)?,
            "inverse.material_max_iters" => inv.material_max_iters = num(v)?,
            "inverse.restshape_max_iters" => inv.restshape_max_iters = num(v)?,
            "inverse.bcd_max_outer" => inv.bcd_max_outer = num(v)?,
            "inverse.bcd_rel_tol" => inv.bcd_rel_tol = num(v)?,
            "inverse.grad_tol_material" => inv.grad_tol_material = num(v)?,
            "inverse.grad_tol_rest" => inv.grad_tol_rest = num(v)?,
            "inverse.rest_step_init" => inv.rest_step_init = num(v)?,

            "invert.mode" => self.invert.mode = v.parse()?,
            "forward.direction" => self.forward.direction = triple(v)?,

            "synth.cells" => sy.cells = triple(v)?,
            "synth.cell_size" => sy.cell_size = num(v)?,
            "synth.bands" => sy.bands = num(v)?,
            "synth.young" => sy.young = list(v)?,
            "synth.poses" => sy.poses = num(v)?,
            "synth.plane" => {
                v.parse::<RotationPlane>().map_err(|_| format!("unknown plane '{v}'"))?;
                sy.plane = v.to_string();
            }
            "synth.angles" => sy.angles = auto(v, list)?,
            "synth.noise_std" => sy.noise_std = num(v)?,
            "synth.heldout_angles" => sy.heldout_angles = list(v)?,
            "synth.neutral_angle" => sy.neutral_angle = num(v)?,

            "gradcheck.probes" => gc.probes = num(v)?,
            "gradcheck.step" => gc.step = num(v)?,
            "gradcheck.tighten" => gc.tighten = num(v)?,
            "gradcheck.tolerance" => gc.tolerance = num(v)?,
            "gradcheck.young" => gc.young = auto(v, list)?,
            "gradcheck.perturb" => gc.perturb = num(v)?,
            "gradcheck.corrupt" => gc.corrupt = num(v)?,

            "validate.naive_young" => self.validate.naive_young = num(v)?,

            "run.threads" => self.run.threads = auto(v, num)?,
            "run.seed" => self.run.seed = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.paths;
        let ph = &self.physics;
        let s = &self.solver;
        let inv = &self.inverse;
        let sy = &self.synth;
        let gc = &self.gradcheck;
        vec![
            ("paths.node", show_path(&p.node)),
            ("paths.ele", show_path(&p.ele)),
            ("paths.fixed", show_path(&p.fixed)),
            ("paths.labels", show_path(&p.labels)),
            ("paths.poses", show_path(&p.poses)),
            ("paths.neutral", show_path(&p.neutral)),
            ("paths.heldout", show_path(&p.heldout)),
            ("paths.rest", show_path(&p.rest)),
            ("paths.inversion", show_path(&p.inversion)),
            ("paths.output", p.output.display().to_string()),
            ("physics.density", ph.density.to_string()),
            ("physics.gravity", ph.gravity.to_string()),
            ("physics.poisson", ph.poisson.to_string()),
            ("physics.young", join(&ph.young)),
            ("physics.neutral_gravity", ph.neutral_gravity.map_or("auto".into(), |g| join(&g))),
            ("solver.residual_tol", show_auto(&s.residual_tol)),
            ("solver.relative_tol", s.relative_tol.to_string()),
            ("solver.max_newton_iters", s.max_newton_iters.to_string()),
            ("solver.inversion_threshold", s.inversion_threshold.to_string()),
            ("inverse.alpha", show_auto(&inv.alpha)),
            ("inverse.alpha_factor", inv.alpha_factor.to_string()),
            ("inverse.young_lower", inv.young_lower.to_string()),
            ("inverse.young_upper", inv.young_upper.to_string()),
            ("inverse.young_init", inv.young_init.to_string()),
            ("inverse.young_reference", inv.young_reference.to_string()),
            ("inverse.wolfe_gamma", inv.wolfe_gamma.to_string()),
            ("inverse.material_max_iters", inv.material_max_iters.to_string()),
            ("inverse.restshape_max_iters", inv.restshape_max_iters.to_string()),
            ("inverse.bcd_max_outer", inv.bcd_max_outer.to_string()),
            ("inverse.bcd_rel_tol", inv.bcd_rel_tol.to_string()),
            ("inverse.grad_tol_material", inv.grad_tol_material.to_string()),
            ("inverse.grad_tol_rest", inv.grad_tol_rest.to_string()),
            ("inverse.rest_step_init", inv.rest_step_init.to_string()),
            ("invert.mode", self.invert.mode.as_str().to_string()),
            ("forward.direction", join(&self.forward.direction)),
            ("synth.cells", join(&sy.cells)),
            ("synth.cell_size", sy.cell_size.to_string()),
            ("synth.bands", sy.bands.to_string()),
            ("synth.young", join(&sy.young)),
            ("synth.poses", sy.poses.to_string()),
            ("synth.plane", sy.plane.clone()),
            ("synth.angles", sy.angles.as_ref().map_or("auto".into(), |a| join(a))),
            ("synth.noise_std", sy.noise_std.to_string()),
            ("synth.heldout_angles", join(&sy.heldout_angles)),
            ("synth.neutral_angle", sy.neutral_angle.to_string()),
            ("gradcheck.probes", gc.probes.to_string()),
            ("gradcheck.step", gc.step.to_string()),
            ("gradcheck.tighten", gc.tighten.to_string()),
            ("gradcheck.tolerance", gc.tolerance.to_string()),
            ("gradcheck.young", gc.young.as_ref().map_or("auto".into(), |y| join(y))),
            ("gradcheck.perturb", gc.perturb.to_string()),
            ("gradcheck.corrupt", gc.corrupt.to_string()),
            ("validate.naive_young", self.validate.naive_young.to_string()),
            ("run.threads", show_auto(&self.run.threads)),
            ("run.seed", self.run.seed.to_string()),
        ]
    }

    /// Renders the configuration in the file format. Parsing the result
    /// gives back an identical configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Value checks and existence of every referenced input file.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let p = &self.paths;
        let inputs = [
            ("paths.node", &p.node),
            ("paths.ele", &p.ele),
            ("paths.fixed", &p.fixed),
            ("paths.labels", &p.labels),
            ("paths.poses", &p.poses),
            ("paths.neutral", &p.neutral),
            ("paths.heldout", &p.heldout),
            ("paths.rest", &p.rest),
            ("paths.inversion", &p.inversion),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                if !path.exists() {
                    return bad(format!("{key}: {} does not exist", path.display()));
                }
            }
        }
        let ph = &self.physics;
        if !(ph.density > 0.0 && ph.gravity >= 0.0 && ph.gravity.is_finite()) {
            return bad("physics.density must be positive and physics.gravity non-negative".into());
        }
        if !(ph.poisson > -1.0 && ph.poisson < 0.5) {
            return bad(format!("physics.poisson = {} is outside (-1, 0.5)", ph.poisson));
        }
        if ph.young.is_empty() || ph.young.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("physics.young must list positive moduli".into());
        }
        let s = &self.solver;
        if !(s.relative_tol > 0.0 && s.max_newton_iters > 0 && s.inversion_threshold > 0.0 && s.inversion_threshold < 1.0)
            || s.residual_tol.is_some_and(|t| !(t > 0.0))
        {
            return bad("solver settings must be positive (inversion_threshold below 1)".into());
        }
        self.inverse.validate().map_err(|e| CliError::Config(format!("inverse: {e}")))?;
        let sy = &self.synth;
        if sy.cells.contains(&0) || !(sy.cell_size > 0.0) || sy.bands == 0 || !(sy.noise_std >= 0.0) {
            return bad("synth.cells, synth.cell_size and synth.bands must be positive, synth.noise_std non-negative".into());
        }
        let gc = &self.gradcheck;
        if !(gc.step > 0.0 && gc.tighten >= 1.0 && gc.tolerance > 0.0 && gc.perturb >= 0.0) {
            return bad("gradcheck.step and gradcheck.tolerance must be positive, gradcheck.tighten at least 1".into());
        }
        if !(self.validate.naive_young > 0.0) {
            return bad("validate.naive_young must be positive".into());
        }
        if self.run.threads == Some(0) {
            return bad("run.threads must be positive or auto".into());
        }
        Ok(())
    }

    pub fn rotation_plane(&self) -> RotationPlane {
        self.synth.plane.parse().unwrap_or(RotationPlane::Xz)
    }
}
