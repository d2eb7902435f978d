//! Flat sectioned key-value run configuration. Sections: `[grid]`,
//! `[model]`, `[minimizer]`, `[run]`, `[sweep]`. Lines are `key = value`,
//! `#` starts a comment. Model invariants are checked at parse time and
//! violations are reported with the offending constraint spelled out.

use larche_core::evolution::{BoundaryLoad, RunConfig};
use larche_core::grid::{Face, FaceSet, GridSpec, ScalarField, VectorField};
use larche_core::io;
use larche_core::material::{ModelParams, PhiKind};
use larche_core::minimizer::MinimizerConfig;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug)]
pub enum ConfigError {
    Parse { line: usize, msg: String },
    Validation(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            ConfigError::Validation(msg) => write!(f, "validation error: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub minimizer: MinimizerConfig,
    pub sweep_eps: Vec<f64>,
    pub m_list: Vec<usize>,
    pub seed: u64,
    pub snapshot_stride: usize,
    // raw preset strings, kept for canonical re-emission
    c0_spec: String,
    z0_spec: String,
    load_spec: String,
}

struct RawConfig {
    // section -> key -> (line, value)
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();
        let mut current = String::new();
        for (n, raw_line) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        msg: "unterminated section header".into(),
                    });
                }
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            if current.is_empty() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: "key outside of any [section]".into(),
                });
            }
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            sections.entry(current.clone()).or_default().insert(key, (line_no, value));
        }
        Ok(RawConfig { sections })
    }

    fn get(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn f64(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| ConfigError::Parse {
                line: *line,
                msg: format!("`{key}` expects a number, found `{v}`"),
            }),
        }
    }

    fn usize(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| ConfigError::Parse {
                line: *line,
                msg: format!("`{key}` expects an integer, found `{v}`"),
            }),
        }
    }

    fn string(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).map(|(_, v)| v.clone()).unwrap_or_else(|| default.to_string())
    }
}

fn parse_faces(spec: &str, line: usize) -> Result<FaceSet, ConfigError> {
    let mut set = FaceSet::empty();
    for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let face = match tok {
            "xlow" => Face::Low(0),
            "xhigh" => Face::High(0),
            "ylow" => Face::Low(1),
            "yhigh" => Face::High(1),
            "zlow" => Face::Low(2),
            "zhigh" => Face::High(2),
            other => {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("unknown face `{other}` (use xlow/xhigh/ylow/yhigh/zlow/zhigh)"),
                })
            }
        };
        set.insert(face);
    }
    Ok(set)
}

fn parse_preset_args(spec: &str) -> (String, BTreeMap<String, String>) {
    let mut parts = spec.split_whitespace();
    let name = parts.next().unwrap_or("").to_string();
    let mut args = BTreeMap::new();
    for p in parts {
        if let Some(eq) = p.find('=') {
            args.insert(p[..eq].to_string(), p[eq + 1..].to_string());
        }
    }
    (name, args)
}

fn arg_f64(args: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, ConfigError> {
    match args.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| {
            ConfigError::Validation(format!("preset argument `{key}` expects a number, got `{v}`"))
        }),
    }
}

/// Builds the initial scalar field from a preset string: `constant value=V`,
/// `cosine amplitude=A mode=K offset=O`, `random amplitude=A offset=O
/// seed=S`, or `file path=P`.
fn build_scalar_field(
    spec: &str,
    grid: &GridSpec,
    base_dir: &Path,
    default_seed: u64,
) -> Result<ScalarField, ConfigError> {
    let (name, args) = parse_preset_args(spec);
    match name.as_str() {
        "constant" => Ok(ScalarField::constant(grid, arg_f64(&args, "value", 0.0)?)),
        "cosine" => {
            let amp = arg_f64(&args, "amplitude", 0.01)?;
            let mode = arg_f64(&args, "mode", 2.0)?;
            let offset = arg_f64(&args, "offset", 0.0)?;
            let l = grid.cells(0) as f64 * grid.spacing(0);
            Ok(ScalarField::from_fn(grid, |x| {
                offset + amp * (std::f64::consts::PI * mode * x[0] / l).cos()
            }))
        }
        "random" => {
            let amp = arg_f64(&args, "amplitude", 0.01)?;
            let offset = arg_f64(&args, "offset", 0.0)?;
            let seed = arg_f64(&args, "seed", default_seed as f64)? as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f = ScalarField::zeros(grid);
            for v in &mut f.data {
                *v = offset + amp * rng.gen_range(-1.0..1.0);
            }
            Ok(f)
        }
        "file" => {
            let path = args.get("path").ok_or_else(|| {
                ConfigError::Validation("file preset needs path=...".into())
            })?;
            let snap = io::read_snapshot(&base_dir.join(path))
                .map_err(|e| ConfigError::Validation(e.to_string()))?;
            snap.into_scalar(grid).map_err(|e| ConfigError::Validation(e.to_string()))
        }
        other => Err(ConfigError::Validation(format!("unknown field preset `{other}`"))),
    }
}

/// Builds the boundary load from a preset string: `zero` or `uniaxial axis=A
/// profile=t0:v0,t1:v1,...` meaning b(t,x) = g(t)·x_A·e_A with piecewise
/// linear g.
fn build_load(spec: &str, grid: &GridSpec) -> Result<BoundaryLoad, ConfigError> {
    let (name, args) = parse_preset_args(spec);
    match name.as_str() {
        "zero" => Ok(BoundaryLoad::zero(grid)),
        "uniaxial" => {
            let axis = arg_f64(&args, "axis", 0.0)? as usize;
            if axis >= grid.dim() {
                return Err(ConfigError::Validation(format!(
                    "load axis {axis} exceeds dimension {}",
                    grid.dim()
                )));
            }
            let profile = args.get("profile").ok_or_else(|| {
                ConfigError::Validation("uniaxial load needs profile=t0:v0,t1:v1,...".into())
            })?;
            let mut points = Vec::new();
            for pair in profile.split(',') {
                let Some(colon) = pair.find(':') else {
                    return Err(ConfigError::Validation(format!(
                        "bad profile entry `{pair}` (expected t:v)"
                    )));
                };
                let t: f64 = pair[..colon].parse().map_err(|_| {
                    ConfigError::Validation(format!("bad profile time in `{pair}`"))
                })?;
                let v: f64 = pair[colon + 1..].parse().map_err(|_| {
                    ConfigError::Validation(format!("bad profile value in `{pair}`"))
                })?;
                let field = VectorField::from_fn(grid, |x, comp| {
                    if comp == axis {
                        v * x[axis]
                    } else {
                        0.0
                    }
                });
                points.push((t, field));
            }
            BoundaryLoad::piecewise_linear(points).map_err(ConfigError::Validation)
        }
        other => Err(ConfigError::Validation(format!("unknown load preset `{other}`"))),
    }
}

fn parse_list_f64(spec: &str) -> Result<Vec<f64>, ConfigError> {
    spec.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| ConfigError::Validation(format!("bad number `{t}` in list")))
        })
        .collect()
}

fn parse_list_usize(spec: &str) -> Result<Vec<usize>, ConfigError> {
    spec.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| ConfigError::Validation(format!("bad integer `{t}` in list")))
        })
        .collect()
}

/// Parses and validates a configuration document. `base_dir` anchors
/// relative snapshot paths; `seed_override` substitutes the run seed.
pub fn parse_config(
    text: &str,
    base_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Resolved, ConfigError> {
    let raw = RawConfig::parse(text)?;

    // [grid]
    let dim = raw.usize("grid", "dim", 1)?;
    if dim == 0 || dim > 3 {
        return Err(ConfigError::Validation(format!("dim must be 1, 2 or 3, got {dim}")));
    }
    let cells_spec = raw.string("grid", "cells", "64");
    let cells = parse_list_usize(&cells_spec)?;
    let cells = if cells.len() == 1 { vec![cells[0]; dim] } else { cells };
    if cells.len() != dim {
        return Err(ConfigError::Validation(format!(
            "cells needs 1 or {dim} entries, got {}",
            cells.len()
        )));
    }
    if cells.iter().any(|&c| c < 2) {
        return Err(ConfigError::Validation(
            "runs need at least 2 cells per axis".into(),
        ));
    }
    let spacing_spec = raw.string("grid", "spacing", "auto");
    let spacing: Vec<f64> = if spacing_spec == "auto" {
        cells.iter().map(|&c| 1.0 / c as f64).collect()
    } else {
        let s = parse_list_f64(&spacing_spec)?;
        if s.len() == 1 {
            vec![s[0]; dim]
        } else {
            s
        }
    };
    if spacing.len() != dim || spacing.iter().any(|&h| !(h > 0.0)) {
        return Err(ConfigError::Validation("spacing must be positive, one per axis".into()));
    }
    let gamma_line = raw.get("grid", "gamma_faces").map(|(l, _)| *l).unwrap_or(0);
    let gamma_spec = raw.string("grid", "gamma_faces", "xlow");
    let gamma = parse_faces(&gamma_spec, gamma_line)?;
    let grid = GridSpec::new(dim, &cells, &spacing, gamma).map_err(ConfigError::Validation)?;

    // [model]
    let phi_spec = raw.string("model", "phi", "quadratic");
    let phi_kind = match phi_spec.as_str() {
        "linear" => PhiKind::Linear,
        "quadratic" => PhiKind::Quadratic,
        other => {
            return Err(ConfigError::Validation(format!(
                "phi must be `linear` or `quadratic`, got `{other}`"
            )))
        }
    };
    let defaults = ModelParams::default();
    let params = ModelParams {
        gamma: raw.f64("model", "gamma", defaults.gamma)?,
        delta: raw.f64("model", "delta", defaults.delta)?,
        p: raw.f64("model", "p", defaults.p)?,
        alpha: raw.f64("model", "alpha", defaults.alpha)?,
        beta: raw.f64("model", "beta", defaults.beta)?,
        eta_tilde: raw.f64("model", "eta_tilde", defaults.eta_tilde)?,
        epsilon: raw.f64("model", "epsilon", defaults.epsilon)?,
        lame_mu: raw.f64("model", "lame_mu", defaults.lame_mu)?,
        lame_lambda: raw.f64("model", "lame_lambda", defaults.lame_lambda)?,
        eigenstrain_slope: raw.f64("model", "eigenstrain_slope", defaults.eigenstrain_slope)?,
        phi_kind,
        sobolev_2star: raw.f64("model", "sobolev_2star", defaults.sobolev_2star)?,
    };
    params.validate(dim).map_err(ConfigError::Validation)?;

    // [minimizer]
    let min_defaults = MinimizerConfig::default();
    let minimizer = MinimizerConfig {
        el_tolerance: raw.f64("minimizer", "el_tolerance", min_defaults.el_tolerance)?,
        max_outer: raw.usize("minimizer", "max_outer", min_defaults.max_outer)?,
        max_inner: raw.usize("minimizer", "max_inner", min_defaults.max_inner)?,
        armijo_c: raw.f64("minimizer", "armijo_c", min_defaults.armijo_c)?,
        armijo_shrink: raw.f64("minimizer", "armijo_shrink", min_defaults.armijo_shrink)?,
    };
    if !(minimizer.el_tolerance > 0.0) || minimizer.max_outer == 0 || minimizer.max_inner == 0 {
        return Err(ConfigError::Validation(
            "minimizer tolerances must be positive and iteration caps at least 1".into(),
        ));
    }

    // [run]
    let horizon = raw.f64("run", "horizon", 1.0)?;
    let steps = raw.usize("run", "steps", 16)?;
    let seed = seed_override.unwrap_or(raw.usize("run", "seed", 0)? as u64);
    let snapshot_stride = raw.usize("run", "snapshot_stride", 1)?;
    let c0_spec = raw.string("run", "c0", "cosine amplitude=0.01 mode=2");
    let z0_spec = raw.string("run", "z0", "constant value=1.0");
    let load_spec = raw.string("run", "load", "zero");

    let c0 = build_scalar_field(&c0_spec, &grid, base_dir, seed)?;
    let z0 = build_scalar_field(&z0_spec, &grid, base_dir, seed.wrapping_add(1))?;
    if z0.data.iter().any(|&z| !(0.0..=1.0).contains(&z)) {
        return Err(ConfigError::Validation(
            "initial damage must satisfy 0 <= z0 <= 1".into(),
        ));
    }
    let load = build_load(&load_spec, &grid)?;

    let run = RunConfig { horizon, steps, grid, params, c0, z0, load };
    run.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;

    // [sweep]
    let sweep_eps = parse_list_f64(&raw.string("sweep", "eps", "1,0.5,0.25,0.125,0.0625"))?;
    let m_list = parse_list_usize(&raw.string("sweep", "m_list", "8,16,32,64"))?;

    Ok(Resolved {
        run,
        minimizer,
        sweep_eps,
        m_list,
        seed,
        snapshot_stride: snapshot_stride.max(1),
        c0_spec,
        z0_spec,
        load_spec,
    })
}

impl Resolved {
    /// Re-emits the configuration in canonical form; parsing the output
    /// reproduces this configuration exactly.
    pub fn canonical(&self) -> String {
        let g = &self.run.grid;
        let p = &self.run.params;
        let m = &self.minimizer;
        let mut out = String::new();
        let _ = writeln!(out, "[grid]");
        let _ = writeln!(out, "dim = {}", g.dim());
        let cells: Vec<String> = (0..g.dim()).map(|a| g.cells(a).to_string()).collect();
        let _ = writeln!(out, "cells = {}", cells.join(","));
        let spacing: Vec<String> =
            (0..g.dim()).map(|a| format!("{:.17e}", g.spacing(a))).collect();
        let _ = writeln!(out, "spacing = {}", spacing.join(","));
        let mut faces = Vec::new();
        for (face, name) in [
            (Face::Low(0), "xlow"),
            (Face::High(0), "xhigh"),
            (Face::Low(1), "ylow"),
            (Face::High(1), "yhigh"),
            (Face::Low(2), "zlow"),
            (Face::High(2), "zhigh"),
        ] {
            if g.gamma().contains(face) {
                faces.push(name);
            }
        }
        let _ = writeln!(out, "gamma_faces = {}", faces.join(","));
        let _ = writeln!(out);
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "gamma = {:.17e}", p.gamma);
        let _ = writeln!(out, "delta = {:.17e}", p.delta);
        let _ = writeln!(out, "p = {:.17e}", p.p);
        let _ = writeln!(out, "alpha = {:.17e}", p.alpha);
        let _ = writeln!(out, "beta = {:.17e}", p.beta);
        let _ = writeln!(out, "eta_tilde = {:.17e}", p.eta_tilde);
        let _ = writeln!(out, "epsilon = {:.17e}", p.epsilon);
        let _ = writeln!(out, "lame_mu = {:.17e}", p.lame_mu);
        let _ = writeln!(out, "lame_lambda = {:.17e}", p.lame_lambda);
        let _ = writeln!(out, "eigenstrain_slope = {:.17e}", p.eigenstrain_slope);
        let _ = writeln!(
            out,
            "phi = {}",
            match p.phi_kind {
                PhiKind::Linear => "linear",
                PhiKind::Quadratic => "quadratic",
            }
        );
        let _ = writeln!(out, "sobolev_2star = {:.17e}", p.sobolev_2star);
        let _ = writeln!(out);
        let _ = writeln!(out, "[minimizer]");
        let _ = writeln!(out, "el_tolerance = {:.17e}", m.el_tolerance);
        let _ = writeln!(out, "max_outer = {}", m.max_outer);
        let _ = writeln!(out, "max_inner = {}", m.max_inner);
        let _ = writeln!(out, "armijo_c = {:.17e}", m.armijo_c);
        let _ = writeln!(out, "armijo_shrink = {:.17e}", m.armijo_shrink);
        let _ = writeln!(out);
        let _ = writeln!(out, "[run]");
        let _ = writeln!(out, "horizon = {:.17e}", self.run.horizon);
        let _ = writeln!(out, "steps = {}", self.run.steps);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "snapshot_stride = {}", self.snapshot_stride);
        let _ = writeln!(out, "c0 = {}", self.c0_spec);
        let _ = writeln!(out, "z0 = {}", self.z0_spec);
        let _ = writeln!(out, "load = {}", self.load_spec);
        let _ = writeln!(out);
        let _ = writeln!(out, "[sweep]");
        let eps: Vec<String> = self.sweep_eps.iter().map(|e| format!("{e:.17e}")).collect();
        let _ = writeln!(out, "eps = {}", eps.join(","));
        let ms: Vec<String> = self.m_list.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "m_list = {}", ms.join(","));
        out
    }
}
