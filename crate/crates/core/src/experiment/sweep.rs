//! Parameter sweeps over either engine, written as CSV.

use std::io::{self, Write};

use rayon::prelude::*;

use super::config::{ConfigFile, Engines, SweepSpec, SweepVariable};
use crate::analysis::analyze;
use crate::error::{Error, Result};
use crate::scenario::{AllocatorMode, Scenario};
use crate::sim::simulate;

pub const SWEEP_HEADER: &str = "var,allocator,engine,tau,p_b,p_exp,p_sync,p_hn,p_col,pdr,e_nbo";
pub const IRT_HEADER: &str = "var,allocator,engine,nu,pmf_or_freq";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    Analytic,
    Simulate,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Analytic => "analytic",
            Engine::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub tau: f64,
    pub p_b: f64,
    pub p_exp: f64,
    pub p_sync: f64,
    pub p_hn: f64,
    pub p_col: f64,
    pub pdr: f64,
    pub e_nbo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok(RowMetrics),
    NoConverge,
    /// The simulated field is empty at this sweep value.
    EmptyField,
}

impl RowStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RowStatus::Ok(_) => "ok",
            RowStatus::NoConverge => "no_converge",
            RowStatus::EmptyField => "empty_field",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub var: f64,
    pub allocator: AllocatorMode,
    pub engine: Engine,
    pub status: RowStatus,
    /// `(nu, pmf)` for analytic rows, `(nu, relative frequency)` for simulated rows.
    pub irt: Vec<(u32, f64)>,
}

impl SweepRow {
    pub fn metrics(&self) -> Option<&RowMetrics> {
        match &self.status {
            RowStatus::Ok(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Rows for one allocator and engine, in sweep order.
    pub fn series(&self, allocator: AllocatorMode, engine: Engine) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.allocator == allocator && r.engine == engine)
            .collect()
    }
}

/// Scenario for one sweep point.
pub fn point_scenario(
    base: &Scenario,
    variable: SweepVariable,
    value: f64,
    allocator: AllocatorMode,
    engine: Engine,
) -> Scenario {
    let mut s = base.clone();
    s.allocator_mode = allocator;
    match variable {
        SweepVariable::NCs => {
            s.n_cs = Some(value as u32);
            if engine == Engine::Simulate {
                s.set_expected_n_cs(value);
            }
        }
        SweepVariable::Cw => s.mac.cw = value as u32,
        SweepVariable::Sigma => s.risk.sigma = value,
        SweepVariable::Density => s.density_per_m2 = value,
    }
    s
}

fn run_point(s: &Scenario, engine: Engine) -> Result<(RowStatus, Vec<(u32, f64)>)> {
    match engine {
        Engine::Analytic => match analyze(s) {
            Ok(r) => {
                let irt = r.irt_pmf.iter().enumerate().map(|(i, p)| (i as u32 + 1, *p)).collect();
                Ok((
                    RowStatus::Ok(RowMetrics {
                        tau: r.tau,
                        p_b: r.p_b,
                        p_exp: r.p_exp,
                        p_sync: r.p_sync,
                        p_hn: r.p_hn,
                        p_col: r.p_col,
                        pdr: r.pdr,
                        e_nbo: r.e_nbo,
                    }),
                    irt,
                ))
            }
            Err(Error::NoConvergence { .. }) => Ok((RowStatus::NoConverge, Vec::new())),
            Err(e) => Err(e),
        },
        Engine::Simulate => {
            if s.density_per_m2 <= 0.0 {
                return Ok((RowStatus::EmptyField, Vec::new()));
            }
            let (r, _) = simulate(s)?;
            if r.periods == 0 {
                return Ok((RowStatus::EmptyField, Vec::new()));
            }
            let irt = r
                .irt_frequencies(s.irt_max_nu)
                .into_iter()
                .enumerate()
                .map(|(i, f)| (i as u32 + 1, f))
                .collect();
            Ok((
                RowStatus::Ok(RowMetrics {
                    tau: r.tau_hat,
                    p_b: r.p_b_hat,
                    p_exp: r.p_exp_hat,
                    p_sync: r.p_sync_hat,
                    p_hn: r.p_hn_hat,
                    p_col: r.p_col_hat,
                    pdr: r.pdr_hat,
                    e_nbo: r.e_nbo_hat,
                }),
                irt,
            ))
        }
    }
}

/// Runs every (value, allocator, engine) point. Points run concurrently; rows
/// come back ordered by sweep value, then allocator, then engine.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let engines: Vec<Engine> = match spec.engines {
        Engines::Analytic => vec![Engine::Analytic],
        Engines::Simulate => vec![Engine::Simulate],
        Engines::Both => vec![Engine::Analytic, Engine::Simulate],
    };
    let mut points = Vec::new();
    for &v in &spec.values {
        for &a in &spec.allocators {
            for &e in &engines {
                let s = point_scenario(base, spec.variable, v, a, e);
                if e == Engine::Analytic || s.density_per_m2 > 0.0 {
                    s.validate()?;
                }
                points.push((v, a, e, s));
            }
        }
    }
    let rows = points
        .into_par_iter()
        .map(|(var, allocator, engine, s)| {
            let (status, irt) = run_point(&s, engine)?;
            Ok(SweepRow {
                var,
                allocator,
                engine,
                status,
                irt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        variable: spec.variable,
        rows,
    })
}

pub fn run_config(cfg: &ConfigFile) -> Result<SweepTable> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("configuration has no [sweep] section".into()))?;
    run_sweep(&cfg.scenario, spec)
}

pub fn write_sweep_csv<W: Write>(mut w: W, table: &SweepTable) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in &table.rows {
        write!(w, "{},{},{},", r.var, r.allocator.label(), r.engine.as_str())?;
        match &r.status {
            RowStatus::Ok(m) => writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                m.tau, m.p_b, m.p_exp, m.p_sync, m.p_hn, m.p_col, m.pdr, m.e_nbo
            )?,
            other => writeln!(w, "status={},,,,,,,", other.label())?,
        }
    }
    Ok(())
}

pub fn write_irt_csv<W: Write>(mut w: W, table: &SweepTable) -> io::Result<()> {
    writeln!(w, "{IRT_HEADER}")?;
    for r in &table.rows {
        for (nu, p) in &r.irt {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.var,
                r.allocator.label(),
                r.engine.as_str(),
                nu,
                p
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config_str;

    fn csv(table: &SweepTable) -> (String, String) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_sweep_csv(&mut a, table).unwrap();
        write_irt_csv(&mut b, table).unwrap();
        (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap())
    }

    #[test]
    fn both_engines_give_two_rows_per_allocator() {
        let cfg = parse_config_str(
            "[scenario]\nnum_periods = 30\nnum_replications = 2\nirt_max_nu = 3\n\
             [sweep]\nvariable = n_cs\nvalues = 0, 4\nengines = both\n",
        )
        .unwrap();
        let table = run_config(&cfg).unwrap();
        assert_eq!(table.rows.len(), 2 * 2 * 2);
        for v in [0.0, 4.0] {
            for a in [AllocatorMode::Proposed, AllocatorMode::FlatOnly] {
                assert_eq!(table.rows.iter().filter(|r| r.var == v && r.allocator == a).count(), 2);
            }
        }
        let (main, irt) = csv(&table);
        let lines: Vec<&str> = main.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert!(
            lines[1].starts_with("0,proposed,analytic,1,0,0,0,0,0,1,"),
            "{}",
            lines[1]
        );
        assert_eq!(lines[2], "0,proposed,simulate,status=empty_field,,,,,,,");
        assert!(irt.starts_with(&format!("{IRT_HEADER}\n0,proposed,analytic,1,1\n")));
    }

    #[test]
    fn output_is_deterministic() {
        let cfg = parse_config_str(
            "[scenario]\ncw = 31\nnum_periods = 40\nnum_replications = 3\n\
             [sweep]\nvariable = n_cs\nvalues = 3, 9\nengines = both\n",
        )
        .unwrap();
        let a = csv(&run_config(&cfg).unwrap());
        let b = csv(&run_config(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn no_converge_marks_row() {
        let base = Scenario {
            max_iter: 1,
            ..Scenario::default()
        };
        let spec = SweepSpec::new(
            SweepVariable::NCs,
            vec![10.0],
            Engines::Analytic,
            vec![AllocatorMode::FlatOnly],
        )
        .unwrap();
        let table = run_sweep(&base, &spec).unwrap();
        assert_eq!(table.rows[0].status, RowStatus::NoConverge);
        let (main, irt) = csv(&table);
        assert_eq!(
            main.lines().nth(1).unwrap(),
            "10,flat,analytic,status=no_converge,,,,,,,"
        );
        assert_eq!(irt.lines().count(), 1);
    }

    #[test]
    fn other_variables() {
        for (var, values) in [
            (SweepVariable::Cw, vec![15.0, 31.0]),
            (SweepVariable::Sigma, vec![2.0, 5.0]),
            (SweepVariable::Density, vec![1e-4, 2e-4]),
        ] {
            let spec = SweepSpec::new(var, values, Engines::Analytic, vec![AllocatorMode::Proposed]).unwrap();
            let t = run_sweep(&Scenario::default(), &spec).unwrap();
            assert_eq!(t.rows.len(), 2);
            assert!(t.rows.iter().all(|r| r.metrics().is_some()));
        }
        let t = run_sweep(
            &Scenario::default(),
            &SweepSpec::new(
                SweepVariable::Cw,
                vec![15.0, 511.0],
                Engines::Analytic,
                vec![AllocatorMode::FlatOnly],
            )
            .unwrap(),
        )
        .unwrap();
        assert!(t.rows[1].metrics().unwrap().pdr > t.rows[0].metrics().unwrap().pdr);
    }

    #[test]
    fn empty_values_rejected_before_work() {
        let spec = SweepSpec {
            variable: SweepVariable::NCs,
            values: vec![],
            engines: Engines::Both,
            allocators: vec![AllocatorMode::Proposed],
        };
        assert!(matches!(run_sweep(&Scenario::default(), &spec), Err(Error::Config(_))));
    }
}
