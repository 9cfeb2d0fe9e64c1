//! Line-oriented `key = value` configuration with `[scenario]` and `[sweep]`
//! sections.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::risk::DivisionRule;
use crate::scenario::{AllocatorMode, Scenario};
use crate::solver::TauModel;
use crate::spatial::Region;

/// Environment variable consulted for the default master seed.
pub const SEED_ENV: &str = "DSRC_BACKOFF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    NCs,
    Cw,
    Sigma,
    Density,
}

impl SweepVariable {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVariable::NCs => "n_cs",
            SweepVariable::Cw => "cw",
            SweepVariable::Sigma => "sigma",
            SweepVariable::Density => "density",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n_cs" => Some(SweepVariable::NCs),
            "cw" => Some(SweepVariable::Cw),
            "sigma" => Some(SweepVariable::Sigma),
            "density" => Some(SweepVariable::Density),
            _ => None,
        }
    }

    fn integral(&self) -> bool {
        matches!(self, SweepVariable::NCs | SweepVariable::Cw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engines {
    Analytic,
    Simulate,
    Both,
}

impl Engines {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engines::Analytic => "analytic",
            Engines::Simulate => "simulate",
            Engines::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic" => Some(Engines::Analytic),
            "simulate" => Some(Engines::Simulate),
            "both" => Some(Engines::Both),
            _ => None,
        }
    }

    pub fn analytic(&self) -> bool {
        matches!(self, Engines::Analytic | Engines::Both)
    }

    pub fn simulate(&self) -> bool {
        matches!(self, Engines::Simulate | Engines::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub engines: Engines,
    pub allocators: Vec<AllocatorMode>,
}

impl SweepSpec {
    pub fn new(
        variable: SweepVariable,
        values: Vec<f64>,
        engines: Engines,
        allocators: Vec<AllocatorMode>,
    ) -> Result<Self> {
        let spec = Self {
            variable,
            values,
            engines,
            allocators,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep values must not be empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("sweep values must be finite and ≥ 0".into()));
        }
        if self.variable.integral() && self.values.iter().any(|v| v.fract() != 0.0) {
            return Err(Error::Config(format!(
                "sweep values for `{}` must be integers",
                self.variable.as_str()
            )));
        }
        if self.allocators.is_empty() {
            return Err(Error::Config("sweep allocators must not be empty".into()));
        }
        Ok(())
    }
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub scenario: Scenario,
    pub sweep: Option<SweepSpec>,
}

/// Scenario keys with their documentation, in `print-defaults` order.
pub const SCENARIO_KEYS: &[(&str, &str)] = &[
    ("side_length_m", "side of the square road region, metres"),
    ("density", "vehicle density per square metre"),
    (
        "expected_n_cs",
        "sets density so that density * pi * r_cs_m^2 equals this value",
    ),
    ("r_cs_m", "carrier-sense range, metres"),
    (
        "n_cs",
        "carrier-sense population for the analytic engine; `auto` derives it from density",
    ),
    ("cw", "contention window; counters are drawn from 0..cw"),
    ("l_bcn", "BSM airtime, slots"),
    ("big_l_bcn", "beaconing period, slots"),
    ("r_decay", "decay ratio of the decreasing allocation, in (0, 1)"),
    ("num_categories", "number of risk categories K"),
    ("step_size", "width Q of each risk category in psi"),
    ("sigma", "speed standard deviation, m/s"),
    ("mean_speed", "mean speed, m/s"),
    ("speed_limit", "speed limit v_L, m/s"),
    ("allocator_mode", "proposed | flat-only"),
    ("division_rule", "high_risk_decreasing | low_risk_decreasing"),
    ("tau_model", "truncated | untruncated"),
    ("num_periods", "beaconing periods per replication"),
    ("num_replications", "independent replications"),
    (
        "master_seed",
        "root seed; replication i uses stream i (default from DSRC_BACKOFF_SEED)",
    ),
    (
        "mobility_dt_s",
        "seconds of movement between periods; 0 freezes the field",
    ),
    ("tagged_interior", "draw the tagged vehicle away from the region edges"),
    ("tol", "fixed-point tolerance"),
    ("max_iter", "fixed-point iteration cap"),
    ("irt_max_nu", "largest IRT value reported"),
];

pub const SWEEP_KEYS: &[(&str, &str)] = &[
    ("variable", "n_cs | cw | sigma | density"),
    ("values", "comma list `a, b, c` or inclusive range `start:step:end`"),
    ("engines", "analytic | simulate | both"),
    ("allocators", "comma list of proposed, flat (default both)"),
];

fn parse_num<T: FromStr>(key: &str, value: &str, what: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("malformed value for `{key}`: expected {what}, got `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!(
            "malformed value for `{key}`: expected true or false, got `{value}`"
        )),
    }
}

/// Sets one scenario key. Unknown keys yield `Ok(false)`.
pub fn set_scenario_key(s: &mut Scenario, key: &str, value: &str) -> std::result::Result<bool, String> {
    const UINT: &str = "unsigned integer";
    const REAL: &str = "number";
    match key {
        "side_length_m" => {
            let side: f64 = parse_num(key, value, REAL)?;
            s.region = Region::new(side).map_err(|e| e.to_string())?;
        }
        "density" => s.density_per_m2 = parse_num(key, value, REAL)?,
        "expected_n_cs" => s.set_expected_n_cs(parse_num(key, value, REAL)?),
        "r_cs_m" => s.r_cs_m = parse_num(key, value, REAL)?,
        "n_cs" => {
            s.n_cs = if value == "auto" {
                None
            } else {
                Some(parse_num(key, value, "unsigned integer or `auto`")?)
            }
        }
        "cw" => s.mac.cw = parse_num(key, value, UINT)?,
        "l_bcn" => s.mac.l_bcn_slots = parse_num(key, value, UINT)?,
        "big_l_bcn" => s.mac.big_l_bcn_slots = parse_num(key, value, UINT)?,
        "r_decay" => s.mac.r_decay = parse_num(key, value, REAL)?,
        "num_categories" => s.risk.num_categories = parse_num(key, value, UINT)?,
        "step_size" => s.risk.step_size = parse_num(key, value, REAL)?,
        "sigma" => s.risk.sigma = parse_num(key, value, REAL)?,
        "mean_speed" => s.mean_speed = parse_num(key, value, REAL)?,
        "speed_limit" => s.risk.speed_limit = parse_num(key, value, REAL)?,
        "allocator_mode" => {
            s.allocator_mode = AllocatorMode::parse(value)
                .ok_or_else(|| format!("malformed value for `{key}`: expected proposed or flat-only, got `{value}`"))?
        }
        "division_rule" => {
            s.division_rule = DivisionRule::parse(value).ok_or_else(|| {
                format!(
                    "malformed value for `{key}`: expected high_risk_decreasing or low_risk_decreasing, got `{value}`"
                )
            })?
        }
        "tau_model" => {
            s.tau_model = TauModel::parse(value).ok_or_else(|| {
                format!("malformed value for `{key}`: expected truncated or untruncated, got `{value}`")
            })?
        }
        "num_periods" => s.num_periods = parse_num(key, value, UINT)?,
        "num_replications" => s.num_replications = parse_num(key, value, UINT)?,
        "master_seed" => s.master_seed = parse_num(key, value, UINT)?,
        "mobility_dt_s" => s.mobility_dt_s = parse_num(key, value, REAL)?,
        "tagged_interior" => s.tagged_interior = parse_bool(key, value)?,
        "tol" => s.tol = parse_num(key, value, REAL)?,
        "max_iter" => s.max_iter = parse_num(key, value, UINT)?,
        "irt_max_nu" => s.irt_max_nu = parse_num(key, value, UINT)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses `a, b, c` or an inclusive `start:step:end` range.
pub fn parse_values(value: &str) -> std::result::Result<Vec<f64>, String> {
    let bad = || format!("malformed value for `values`: `{value}`");
    if value.contains(':') {
        let parts: Vec<f64> = value
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?;
        let [start, step, end] = parts[..] else {
            return Err(format!(
                "malformed value for `values`: range must be start:step:end, got `{value}`"
            ));
        };
        if !(step > 0.0) || end < start {
            return Err(format!(
                "malformed value for `values`: empty or invalid range `{value}`"
            ));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + step * i as f64).collect());
    }
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn parse_allocators(value: &str) -> std::result::Result<Vec<AllocatorMode>, String> {
    value
        .split(',')
        .map(|p| {
            AllocatorMode::parse(p.trim())
                .ok_or_else(|| format!("malformed value for `allocators`: unknown allocator `{}`", p.trim()))
        })
        .collect()
}

#[derive(Debug, Default)]
struct SweepDraft {
    variable: Option<SweepVariable>,
    values: Option<Vec<f64>>,
    engines: Option<Engines>,
    allocators: Option<Vec<AllocatorMode>>,
}

impl SweepDraft {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        match key {
            "variable" => {
                self.variable = Some(SweepVariable::parse(value).ok_or_else(|| {
                    format!("malformed value for `variable`: expected n_cs, cw, sigma or density, got `{value}`")
                })?)
            }
            "values" => self.values = Some(parse_values(value)?),
            "engines" => {
                self.engines = Some(Engines::parse(value).ok_or_else(|| {
                    format!("malformed value for `engines`: expected analytic, simulate or both, got `{value}`")
                })?)
            }
            "allocators" => self.allocators = Some(parse_allocators(value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn finish(self, header_line: usize) -> Result<SweepSpec> {
        let missing = |k: &str| Error::Config(format!("line {header_line}: [sweep] is missing required key `{k}`"));
        let spec = SweepSpec {
            variable: self.variable.ok_or_else(|| missing("variable"))?,
            values: self.values.ok_or_else(|| missing("values"))?,
            engines: self.engines.unwrap_or(Engines::Analytic),
            allocators: self
                .allocators
                .unwrap_or_else(|| vec![AllocatorMode::Proposed, AllocatorMode::FlatOnly]),
        };
        spec.validate()
            .map_err(|e| Error::Config(format!("line {header_line}: {}", strip_prefix(&e))))?;
        Ok(spec)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Parameter(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Section {
    Scenario,
    Sweep,
}

/// Parses configuration text on top of `base`.
pub fn parse_config_with(text: &str, base: Scenario) -> Result<ConfigFile> {
    let mut scenario = base;
    let mut sweep: Option<(usize, SweepDraft)> = None;
    let mut section = Section::Scenario;
    let mut seen: HashMap<(Section, String), usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "scenario" => Section::Scenario,
                "sweep" => {
                    if let Some((first, _)) = &sweep {
                        return Err(Error::Config(format!(
                            "line {line_no}: duplicate section [sweep] (first at line {first})"
                        )));
                    }
                    sweep = Some((line_no, SweepDraft::default()));
                    Section::Sweep
                }
                other => return Err(Error::Config(format!("line {line_no}: unknown section [{other}]"))),
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {line_no}: expected `key = value`, got `{line}`"
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(first) = seen.insert((section, key.to_string()), line_no) {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key `{key}` (first set at line {first})"
            )));
        }
        let known = match section {
            Section::Scenario => set_scenario_key(&mut scenario, key, value),
            Section::Sweep => sweep.as_mut().expect("sweep section open").1.set(key, value),
        }
        .map_err(|m| Error::Config(format!("line {line_no}: {m}")))?;
        if !known {
            let name = match section {
                Section::Scenario => "scenario",
                Section::Sweep => "sweep",
            };
            return Err(Error::Config(format!(
                "line {line_no}: unknown key `{key}` in [{name}]"
            )));
        }
    }
    scenario.validate()?;
    let sweep = sweep.map(|(line, draft)| draft.finish(line)).transpose()?;
    Ok(ConfigFile { scenario, sweep })
}

pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    parse_config_with(text, Scenario::default())
}

pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_with(&text, default_scenario()?)
}

/// Default scenario, with the master seed taken from the environment when set.
pub fn default_scenario() -> Result<Scenario> {
    let mut s = Scenario::default();
    if let Ok(v) = std::env::var(SEED_ENV) {
        s.master_seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
    }
    Ok(s)
}

/// Applies a `key=value` override. Sweep keys take a `sweep.` prefix.
pub fn apply_override(cfg: &mut ConfigFile, assignment: &str) -> Result<()> {
    let Some((key, value)) = assignment.split_once('=') else {
        return Err(Error::Config(format!("override must be key=value, got `{assignment}`")));
    };
    let (key, value) = (key.trim(), value.trim());
    if let Some(sweep_key) = key.strip_prefix("sweep.") {
        let spec = cfg
            .sweep
            .as_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` needs a [sweep] section")))?;
        let mut draft = SweepDraft {
            variable: Some(spec.variable),
            values: Some(spec.values.clone()),
            engines: Some(spec.engines),
            allocators: Some(spec.allocators.clone()),
        };
        if !draft.set(sweep_key, value).map_err(Error::Config)? {
            return Err(Error::Config(format!("unknown key `{sweep_key}` in [sweep]")));
        }
        *spec = draft
            .finish(0)
            .map_err(|e| Error::Config(strip_prefix(&e).replace("line 0: ", "")))?;
        return Ok(());
    }
    if !set_scenario_key(&mut cfg.scenario, key, value).map_err(Error::Config)? {
        return Err(Error::Config(format!("unknown key `{key}` in [scenario]")));
    }
    cfg.scenario.validate()
}

/// Documented defaults in config syntax.
pub fn defaults_text() -> String {
    let s = Scenario::default();
    let values: HashMap<&str, String> = s.entries().into_iter().collect();
    let mut out = String::from("[scenario]\n");
    for (key, doc) in SCENARIO_KEYS {
        let _ = writeln!(out, "# {doc}");
        match values.get(key) {
            Some(v) => {
                let _ = writeln!(out, "{key} = {v}");
            }
            None => {
                let _ = writeln!(out, "# {key} = {}", s.expected_n_cs());
            }
        }
    }
    out.push_str("\n# [sweep]\n");
    for (key, doc) in SWEEP_KEYS {
        let _ = writeln!(out, "# {doc}");
        let default = match *key {
            "variable" => "n_cs   # required",
            "values" => "0:10:500   # required",
            "engines" => "analytic",
            _ => "proposed, flat",
        };
        let _ = writeln!(out, "# {key} = {default}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config_str("# nothing\n\n").unwrap();
        let s = cfg.scenario;
        assert_eq!((s.mac.cw, s.mac.big_l_bcn_slots, s.mac.l_bcn_slots), (15, 750, 8));
        assert_eq!(s.mac.r_decay, 0.5);
        assert_eq!((s.risk.num_categories, s.risk.step_size, s.risk.sigma), (11, 5.0, 5.0));
        assert_eq!((s.mean_speed, s.risk.speed_limit), (60.0, 60.0));
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn cw_zero_rejected() {
        let err = parse_config_str("[scenario]\ncw = 0\n").unwrap_err();
        assert!(err.to_string().contains("cw must be ≥ 1"), "{err}");
    }

    #[test]
    fn duplicate_key_reports_both_lines() {
        let err = parse_config_str("[scenario]\ncw = 31\n# c\ncw = 511\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn unknown_and_malformed_carry_line_numbers() {
        let msg = parse_config_str("[scenario]\n\nwidth = 3\n").unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("width"), "{msg}");
        let msg = parse_config_str("cw = fifteen\n").unwrap_err().to_string();
        assert!(msg.contains("line 1") && msg.contains("malformed"), "{msg}");
        let msg = parse_config_str("[plots]\n").unwrap_err().to_string();
        assert!(msg.contains("line 1"), "{msg}");
        let msg = parse_config_str("[sweep]\nvalues = 1, 2\n").unwrap_err().to_string();
        assert!(msg.contains("line 1") && msg.contains("variable"), "{msg}");
    }

    #[test]
    fn sweep_values() {
        assert_eq!(parse_values("0:10:30").unwrap(), vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(parse_values("1, 2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(parse_values("0:10:500").unwrap().len(), 51);
        let err = parse_config_str("[sweep]\nvariable = n_cs\nvalues =\n").unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        let err = parse_config_str("[sweep]\nvariable = n_cs\nvalues = 5, 3\n").unwrap_err();
        assert!(err.to_string().contains("increasing"), "{err}");
        let err = parse_config_str("[sweep]\nvariable = cw\nvalues = 1.5, 3\n").unwrap_err();
        assert!(err.to_string().contains("integers"), "{err}");
    }

    #[test]
    fn full_config() {
        let text = "[scenario]\ncw = 31\nn_cs = auto\nallocator_mode = flat-only\n\
                    [sweep]\nvariable = n_cs\nvalues = 0:50:100\nengines = both\nallocators = flat\n";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.scenario.mac.cw, 31);
        let sw = cfg.sweep.unwrap();
        assert_eq!(sw.values, vec![0.0, 50.0, 100.0]);
        assert_eq!(sw.engines, Engines::Both);
        assert_eq!(sw.allocators, vec![AllocatorMode::FlatOnly]);
    }

    #[test]
    fn overrides() {
        let mut cfg = parse_config_str("[sweep]\nvariable = n_cs\nvalues = 1, 2\n").unwrap();
        apply_override(&mut cfg, "cw=63").unwrap();
        apply_override(&mut cfg, "sweep.values = 3:1:5").unwrap();
        assert_eq!(cfg.scenario.mac.cw, 63);
        assert_eq!(cfg.sweep.as_ref().unwrap().values, vec![3.0, 4.0, 5.0]);
        assert!(apply_override(&mut cfg, "bogus=1").is_err());
        assert!(apply_override(&mut cfg, "cw=0").is_err());
    }

    #[test]
    fn defaults_text_round_trips() {
        let cfg = parse_config_str(&defaults_text()).unwrap();
        assert_eq!(cfg.scenario, Scenario::default());
        for (key, _) in SCENARIO_KEYS {
            assert!(defaults_text().contains(key));
        }
    }
}
