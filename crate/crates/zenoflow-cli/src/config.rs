//! Run configuration: defaults, a flat `key = value` file and command-line
//! overrides, all funnelled through [`RunConfig::set`].

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use zenoflow::lattice::{Boundary, LatticeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Exact,
    Zeno,
    Floquet,
    NearZeno,
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Engine::Exact),
            "zeno" => Ok(Engine::Zeno),
            "floquet" => Ok(Engine::Floquet),
            "near_zeno" => Ok(Engine::NearZeno),
            other => Err(format!("unknown engine '{other}' (expected exact, zeno, floquet or near_zeno)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Exact => "exact",
            Engine::Zeno => "zeno",
            Engine::Floquet => "floquet",
            Engine::NearZeno => "near_zeno",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fill {
    LowerHalf,
    Uniform,
    SingleSite(usize),
    /// One density per line; blank lines and `#` comments are skipped.
    File(PathBuf),
}

impl FromStr for Fill {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "lower_half" => Ok(Fill::LowerHalf),
            None if s == "uniform" => Ok(Fill::Uniform),
            Some(("single_site", id)) => id
                .trim()
                .parse()
                .map(Fill::SingleSite)
                .map_err(|_| format!("bad site id '{id}' in fill")),
            Some(("file", path)) if !path.is_empty() => Ok(Fill::File(PathBuf::from(path))),
            _ => Err(format!(
                "unknown fill '{s}' (expected lower_half, uniform, single_site:<id> or file:<path>)"
            )),
        }
    }
}

impl fmt::Display for Fill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fill::LowerHalf => f.write_str("lower_half"),
            Fill::Uniform => f.write_str("uniform"),
            Fill::SingleSite(id) => write!(f, "single_site:{id}"),
            Fill::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    P,
    N,
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "p" => Ok(Axis::P),
            "n" => Ok(Axis::N),
            other => Err(format!("unknown scan axis '{other}' (expected p or n)")),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::P => "p",
            Axis::N => "n",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleChoice {
    Standard,
    /// The four-step square-lattice cycle of single plaquettes, which fails
    /// validation; kept as a negative example.
    Naive,
}

impl FromStr for ScheduleChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(ScheduleChoice::Standard),
            "naive" => Ok(ScheduleChoice::Naive),
            other => Err(format!("unknown schedule '{other}' (expected standard or naive)")),
        }
    }
}

impl fmt::Display for ScheduleChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleChoice::Standard => "standard",
            ScheduleChoice::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lattice: LatticeKind,
    pub lx: usize,
    pub ly: usize,
    pub boundary: Boundary,
    /// Cycle duration `T`.
    pub period: f64,
    pub nmeas: usize,
    pub cycles: usize,
    pub engine: Engine,
    pub fill: Fill,
    /// Cut position; defaults to the cell boundary in the middle column.
    pub cut_x: Option<f64>,
    pub out: Option<PathBuf>,
    pub schedule: ScheduleChoice,
    pub axis: Axis,
    /// Scan grid, see [`parse_grid`]; `None` means the axis default and an
    /// empty string an empty grid.
    pub grid: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lattice: LatticeKind::Lieb,
            lx: 8,
            ly: 8,
            boundary: Boundary::CylinderX,
            period: 4.0 * PI,
            nmeas: 100,
            cycles: 10,
            engine: Engine::Zeno,
            fill: Fill::LowerHalf,
            cut_x: None,
            out: None,
            schedule: ScheduleChoice::Standard,
            axis: Axis::P,
            grid: None,
        }
    }
}

/// Keys accepted by [`RunConfig::set`], in dump order.
pub const KEYS: [&str; 14] = [
    "lattice", "lx", "ly", "boundary", "period", "nmeas", "cycles", "engine", "fill", "cut_x", "out",
    "schedule", "axis", "grid",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("invalid value '{value}' for {key}: {e}"))
}

/// Parses a real number, also accepting multiples of pi such as `4pi`,
/// `4*pi` or `pi`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let value = match t.strip_suffix("pi") {
        Some(head) => {
            let head = head.trim().trim_end_matches('*').trim();
            let factor = if head.is_empty() { 1.0 } else { head.parse::<f64>().map_err(|e| e.to_string())? };
            factor * PI
        }
        None => t.parse::<f64>().map_err(|e| e.to_string())?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("'{s}' is not a finite number"))
    }
}

/// Parses a scan grid: a comma-separated list (`0.5,0.6`) or an inclusive
/// range `start:step:end`. An empty string is an empty grid.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(Vec::new());
    }
    let parts: Vec<&str> = t.split(':').collect();
    match parts.as_slice() {
        [start, step, end] => {
            let (a, h, b) = (parse_real(start)?, parse_real(step)?, parse_real(end)?);
            if !(h > 0.0) || b < a {
                return Err(format!("bad grid range '{s}'"));
            }
            let count = ((b - a) / h + 1e-9).floor() as usize;
            // Rounding keeps values such as 0.35 free of accumulated error.
            Ok((0..=count).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect())
        }
        [_] => t.split(',').map(parse_real).collect(),
        _ => Err(format!("bad grid '{s}' (expected a list or start:step:end)")),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key.replace('-', "_").as_str() {
            "lattice" => self.lattice = parse(key, value)?,
            "lx" => self.lx = parse(key, value)?,
            "ly" => self.ly = parse(key, value)?,
            "boundary" => self.boundary = parse(key, value)?,
            "period" => self.period = parse_real(value).map_err(|e| format!("invalid period '{value}': {e}"))?,
            "nmeas" => self.nmeas = parse(key, value)?,
            "cycles" => self.cycles = parse(key, value)?,
            "engine" => self.engine = parse(key, value)?,
            "fill" => self.fill = parse(key, value)?,
            "cut_x" => {
                self.cut_x = if value.is_empty() {
                    None
                } else {
                    Some(parse_real(value).map_err(|e| format!("invalid cut_x '{value}': {e}"))?)
                }
            }
            "out" => self.out = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "schedule" => self.schedule = parse(key, value)?,
            "axis" => self.axis = parse(key, value)?,
            "grid" => {
                parse_grid(value)?;
                self.grid = Some(value.to_string());
            }
            other => return Err(format!("unknown configuration key '{other}'")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value, got '{raw}'", lineno + 1))?;
            self.set(key.trim(), value).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(())
    }

    /// Checks cross-field constraints.
    pub fn check(&self) -> Result<(), String> {
        if self.lx == 0 || self.ly == 0 {
            return Err("lx and ly must be positive".into());
        }
        if !(self.period > 0.0) {
            return Err("period must be positive".into());
        }
        if self.nmeas == 0 {
            return Err("nmeas must be at least 1".into());
        }
        let steps = self.lattice.steps() as f64;
        if self.engine == Engine::NearZeno && (self.period / steps - PI / 2.0).abs() > 1e-9 {
            return Err(format!(
                "engine near_zeno needs perfect switching: period = {} for the {} lattice",
                steps * PI / 2.0,
                self.lattice
            ));
        }
        Ok(())
    }

    /// The configuration as a `key = value` text accepted by
    /// [`RunConfig::apply_text`].
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "lattice" => self.lattice.to_string(),
                "lx" => self.lx.to_string(),
                "ly" => self.ly.to_string(),
                "boundary" => self.boundary.to_string(),
                "period" => self.period.to_string(),
                "nmeas" => self.nmeas.to_string(),
                "cycles" => self.cycles.to_string(),
                "engine" => self.engine.to_string(),
                "fill" => self.fill.to_string(),
                "cut_x" => self.cut_x.map(|x| x.to_string()).unwrap_or_default(),
                "out" => self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "schedule" => self.schedule.to_string(),
                "axis" => self.axis.to_string(),
                "grid" => match &self.grid {
                    Some(g) => g.clone(),
                    None => continue,
                },
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
