//! Run configuration: `[section]` headers, `key = value` lines, `#` comments.
//!
//! ```text
//! [model]
//! d1 = 1
//! ...
//! [grid]
//! lx = 1        # ly/ny present selects a 2D rectangle
//! nx = 33
//! [solver]
//! dt = 1e-3
//! t_end = 1
//! [initial]
//! kind = constant   # constant | eigenfunction | expression
//! u1 = 0.2
//! u2 = 0.3
//! [blowup]
//! mu1 = 1
//! mu2 = 1
//! lambda0_mode = principal
//! [output]
//! directory = out
//! formats = csv, json
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use skt_core::grid::{EigenMode, EigenPair, Grid, ScalarField};
use skt_core::iteration::SolverConfig;
use skt_core::model::{ModelParams, PARAM_KEYS};

use crate::expr::Expr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("model", &PARAM_KEYS),
    ("grid", &["lx", "ly", "nx", "ny"]),
    (
        "solver",
        &[
            "dt",
            "inner_tol",
            "max_inner_iters",
            "overflow_cap",
            "snapshot_every",
            "t_end",
            "phi1",
            "phi2",
            "max_dt_halvings",
            "require_window_bracket",
        ],
    ),
    ("initial", &["kind", "u1", "u2", "offset1", "offset2"]),
    ("blowup", &["mu1", "mu2", "lambda0_mode", "search", "search_resolution"]),
    ("output", &["directory", "snapshot_every", "formats"]),
];

/// Sections of raw `key = value` strings, with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        let mut current: Option<String> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return err(format!("line {lineno}: malformed section header '{line}'"));
                };
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return err(format!("line {lineno}: unknown section [{name}]"));
                }
                if raw.sections.contains_key(name) {
                    return err(format!("line {lineno}: duplicate section [{name}]"));
                }
                raw.sections.insert(name.to_owned(), BTreeMap::new());
                current = Some(name.to_owned());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {lineno}: expected 'key = value', got '{line}'"));
            };
            let Some(section) = current.as_deref() else {
                return err(format!("line {lineno}: key '{}' outside any section", key.trim()));
            };
            let key = key.trim();
            let allowed = SECTIONS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return err(format!("[{section}] unknown key '{key}' (line {lineno})"));
            }
            let value = value.trim().trim_matches('"').to_owned();
            let map = raw.sections.get_mut(section).expect("section inserted");
            if map.insert(key.to_owned(), (lineno, value)).is_some() {
                return err(format!("[{section}] duplicate key '{key}' (line {lineno})"));
            }
        }
        Ok(raw)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|(_, v)| v.as_str())
    }

    fn require_section(&self, section: &str) -> Result<(), ConfigError> {
        if !self.has_section(section) {
            return err(format!("missing section [{section}]"));
        }
        Ok(())
    }

    fn real(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(section, key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ConfigError(format!("[{section}] key '{key}': '{v}' is not a finite number")))
            })
            .transpose()
    }

    fn real_req(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.real(section, key)?
            .ok_or_else(|| ConfigError(format!("[{section}] missing key '{key}'")))
    }

    fn positive(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.real(section, key)?.unwrap_or(default);
        if !(v > 0.0) {
            return err(format!("[{section}] key '{key}': {v} must be > 0"));
        }
        Ok(v)
    }

    fn boolean(&self, section: &str, key: &str) -> Result<bool, ConfigError> {
        match self.get(section, key) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(v) => err(format!("[{section}] key '{key}': '{v}' is not true or false")),
        }
    }

    fn integer(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get(section, key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| ConfigError(format!("[{section}] key '{key}': '{v}' is not a nonnegative integer")))
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Constant { u1: f64, u2: f64 },
    /// `u_i = offset_i + scale_i Φ0`
    Eigenfunction { scale: [f64; 2], offset: [f64; 2] },
    Expression { u1: Expr, u2: Expr },
}

impl InitialSpec {
    pub fn fields(&self, grid: &Grid, eig: &EigenPair) -> Result<(ScalarField, ScalarField), ConfigError> {
        let build = |i: usize| -> Result<ScalarField, ConfigError> {
            let f = match self {
                Self::Constant { u1, u2 } => Ok(ScalarField::constant(*grid, if i == 0 { *u1 } else { *u2 })),
                Self::Eigenfunction { scale, offset } => Ok(eig.phi0.map(|p| offset[i] + scale[i] * p)),
                Self::Expression { u1, u2 } => {
                    let e = if i == 0 { u1 } else { u2 };
                    ScalarField::from_fn(*grid, |x, y| e.eval(x, y))
                        .map_err(|e| ConfigError(format!("[initial] key 'u{}': {e}", i + 1)))
                }
            }?;
            if let Some(v) = f.values().iter().find(|v| !(**v >= 0.0)) {
                return err(format!("[initial] key 'u{}': initial data takes the negative value {v}", i + 1));
            }
            Ok(f)
        };
        Ok((build(0)?, build(1)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupSection {
    pub mu1: f64,
    pub mu2: f64,
    pub lambda0_mode: EigenMode,
    /// Search multiplier ratios instead of using `mu1`, `mu2` directly.
    pub search: bool,
    pub search_resolution: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: Grid,
    pub solver: SolverConfig,
    pub t_end: f64,
    /// Refuse to simulate unless the global-existence window brackets the initial data.
    pub require_window_bracket: bool,
    pub initial: Option<InitialSpec>,
    pub blowup: BlowupSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        raw.require_section("model")?;
        let mut model = ModelParams {
            d1: 0.0,
            d2: 0.0,
            alpha1: 0.0,
            alpha2: 0.0,
            a1: 0.0,
            a2: 0.0,
            b1: 0.0,
            b2: 0.0,
            c1: 0.0,
            c2: 0.0,
        };
        for key in PARAM_KEYS {
            let v = raw.real_req("model", key)?;
            model.set(key, v).map_err(|e| ConfigError(format!("[model] key '{key}': {e}")))?;
        }
        let model = model.validated().map_err(|e| ConfigError(format!("[model] {e}")))?;

        raw.require_section("grid")?;
        let lx = raw.real_req("grid", "lx")?;
        let nx = raw
            .integer("grid", "nx")?
            .ok_or_else(|| ConfigError("[grid] missing key 'nx'".into()))?;
        let grid = match (raw.real("grid", "ly")?, raw.integer("grid", "ny")?) {
            (None, None) => Grid::new_1d(lx, nx),
            (Some(ly), Some(ny)) => Grid::new_2d(lx, ly, nx, ny),
            (Some(_), None) => return err("[grid] missing key 'ny' (ly given)"),
            (None, Some(_)) => return err("[grid] missing key 'ly' (ny given)"),
        }
        .map_err(|e| ConfigError(format!("[grid] {e}")))?;

        let d = SolverConfig::default();
        let mut solver = SolverConfig {
            dt: raw.positive("solver", "dt", d.dt)?,
            phi1: raw.positive("solver", "phi1", d.phi1)?,
            phi2: raw.positive("solver", "phi2", d.phi2)?,
            inner_tol: raw.positive("solver", "inner_tol", d.inner_tol)?,
            max_inner_iters: raw.integer("solver", "max_inner_iters")?.unwrap_or(d.max_inner_iters),
            overflow_cap: raw.positive("solver", "overflow_cap", d.overflow_cap)?,
            snapshot_every: raw.integer("solver", "snapshot_every")?.unwrap_or(d.snapshot_every),
            max_dt_halvings: raw
                .integer("solver", "max_dt_halvings")?
                .map_or(Ok(d.max_dt_halvings), |v| {
                    u32::try_from(v).map_err(|_| ConfigError("[solver] key 'max_dt_halvings' too large".into()))
                })?,
        };
        if let Some(every) = raw.integer("output", "snapshot_every")? {
            solver.snapshot_every = every;
        }
        if solver.max_inner_iters == 0 {
            return err("[solver] key 'max_inner_iters' must be >= 1");
        }
        if solver.snapshot_every == 0 {
            return err("snapshot_every must be >= 1");
        }
        let t_end = raw.positive("solver", "t_end", 1.0)?;
        let require_window_bracket = raw.boolean("solver", "require_window_bracket")?;

        let initial = if raw.has_section("initial") {
            Some(parse_initial(raw)?)
        } else {
            None
        };

        let lambda0_mode = match raw.get("blowup", "lambda0_mode") {
            None => EigenMode::default(),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError(format!("[blowup] key 'lambda0_mode': {e}")))?,
        };
        let search = raw.boolean("blowup", "search")?;
        let search_resolution = raw.integer("blowup", "search_resolution")?.unwrap_or(20);
        if search_resolution < 2 {
            return err("[blowup] key 'search_resolution' must be >= 2");
        }
        let blowup = BlowupSection {
            mu1: raw.positive("blowup", "mu1", 1.0)?,
            mu2: raw.positive("blowup", "mu2", 1.0)?,
            lambda0_mode,
            search,
            search_resolution,
        };

        let (mut csv, mut json) = (true, true);
        if let Some(formats) = raw.get("output", "formats") {
            csv = false;
            json = false;
            for f in formats.split(',').map(str::trim).filter(|f| !f.is_empty()) {
                match f {
                    "csv" => csv = true,
                    "json" => json = true,
                    other => return err(format!("[output] key 'formats': unknown format '{other}'")),
                }
            }
        }
        let output = OutputSection {
            directory: raw.get("output", "directory").map(PathBuf::from),
            csv,
            json,
        };
        Ok(Self { model, grid, solver, t_end, require_window_bracket, initial, blowup, output })
    }
}

fn parse_initial(raw: &RawConfig) -> Result<InitialSpec, ConfigError> {
    let kind = raw
        .get("initial", "kind")
        .ok_or_else(|| ConfigError("[initial] missing key 'kind'".into()))?;
    let has_offset = raw.get("initial", "offset1").is_some() || raw.get("initial", "offset2").is_some();
    if has_offset && kind != "eigenfunction" {
        return err(format!("[initial] offset1/offset2 only apply to kind = eigenfunction, not {kind}"));
    }
    match kind {
        "constant" => {
            let u1 = raw.real_req("initial", "u1")?;
            let u2 = raw.real_req("initial", "u2")?;
            for (k, v) in [("u1", u1), ("u2", u2)] {
                if v < 0.0 {
                    return err(format!("[initial] key '{k}': {v} must be >= 0"));
                }
            }
            Ok(InitialSpec::Constant { u1, u2 })
        }
        "eigenfunction" => Ok(InitialSpec::Eigenfunction {
            scale: [raw.real_req("initial", "u1")?, raw.real_req("initial", "u2")?],
            offset: [
                raw.real("initial", "offset1")?.unwrap_or(0.0),
                raw.real("initial", "offset2")?.unwrap_or(0.0),
            ],
        }),
        "expression" => {
            let expr = |k: &str| -> Result<Expr, ConfigError> {
                let src = raw
                    .get("initial", k)
                    .ok_or_else(|| ConfigError(format!("[initial] missing key '{k}'")))?;
                Expr::parse(src).map_err(|e| ConfigError(format!("[initial] key '{k}': {e}")))
            };
            Ok(InitialSpec::Expression { u1: expr("u1")?, u2: expr("u2")? })
        }
        other => err(format!(
            "[initial] key 'kind': unknown kind '{other}', expected constant, eigenfunction or expression"
        )),
    }
}
