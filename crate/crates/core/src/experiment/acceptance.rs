//! Acceptance suites: one pass/fail result per criterion.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::config::{parse_config_str, ConfigFile};
use super::oracle::{enumerate_backoff, enumerate_p_hn, enumerate_p_sync};
use super::sweep::{run_config, Engine, SweepRow, SweepTable};
use crate::allocator::{allocation_pmf, build_transition_matrix, mixed_allocation_pmf, ChainState, MacParams};
use crate::analysis::analyze;
use crate::collision::{irt_pmf, p_hn, p_sync};
use crate::error::{param, Result};
use crate::risk::{p_dec, p_flat, psi_cdf, psi_pdf, Allocation, AllocationMix, DivisionRule, RiskModelParams};
use crate::scenario::{AllocatorMode, Scenario, DEFAULT_SEED};
use crate::sim::{compare_report, estimate_metrics, run_replication, simulate, CompareTolerances};
use crate::solver::{expected_backoff_slots, tau_for_branch, tau_given_pb, TauModel};

pub const NCS_SWEEP_CW15: &str = include_str!("../../../../configs/ncs_sweep_cw15.conf");
pub const NCS_SWEEP_CW31: &str = include_str!("../../../../configs/ncs_sweep_cw31.conf");
pub const NCS_SWEEP_CW511: &str = include_str!("../../../../configs/ncs_sweep_cw511.conf");
pub const IRT_CW31: &str = include_str!("../../../../configs/irt_cw31.conf");
pub const IRT_CW511: &str = include_str!("../../../../configs/irt_cw511.conf");

/// High-precision `erf(sqrt(30) / (5 sqrt(2)))`.
pub const P_DEC_REFERENCE: f64 = 0.726_678_321_707_701_854_965_377_164_947_815;

pub const SUITES: &[&str] = &["quick", "full"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub busy_target: f64,
    pub busy_tol: f64,
    pub cross_tau: f64,
    pub cross_p_b: f64,
    pub cross_pdr: f64,
    pub exact: f64,
    pub pdf_integral: f64,
    pub ks: f64,
    pub erf_reference: f64,
    pub row_sum: f64,
    /// Numerical slack allowed in monotonicity and ordering scans.
    pub trend_slack: f64,
    pub pmf_sum: f64,
    /// Significance level of the IRT goodness-of-fit test.
    pub chi_square_alpha: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            busy_target: 0.15,
            busy_tol: 0.05,
            cross_tau: 0.02,
            cross_p_b: 0.02,
            cross_pdr: 0.03,
            exact: 1e-10,
            pdf_integral: 1e-6,
            ks: 0.005,
            erf_reference: 1e-12,
            row_sum: 1e-12,
            trend_slack: 1e-9,
            pmf_sum: 1e-10,
            chi_square_alpha: 0.01,
        }
    }
}

impl Tolerances {
    /// Every tolerance set to zero; used to check that the harness can fail.
    pub fn zeroed() -> Self {
        Self {
            busy_tol: 0.0,
            cross_tau: 0.0,
            cross_p_b: 0.0,
            cross_pdr: 0.0,
            exact: 0.0,
            pdf_integral: 0.0,
            ks: 0.0,
            erf_reference: 0.0,
            row_sum: 0.0,
            trend_slack: 0.0,
            pmf_sum: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Quick,
    Full,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "quick" => Ok(Suite::Quick),
            "full" => Ok(Suite::Full),
            other => Err(param(format!(
                "unknown suite `{other}`; available suites: {}",
                SUITES.join(", ")
            ))),
        }
    }

    fn cross_periods(&self) -> (u32, u32) {
        // (periods per replication, replications)
        match self {
            Suite::Quick => (10_000, 2),
            Suite::Full => (10_000, 5),
        }
    }

    fn irt_periods(&self) -> u32 {
        match self {
            Suite::Quick => 20_000,
            Suite::Full => 100_000,
        }
    }
}

pub const KS_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub summary: String,
    pub failures: Vec<String>,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{verdict}] criterion {} {}: {} ({:.1}s)",
            self.id, self.name, self.summary, self.seconds
        )?;
        for line in self.failures.iter().take(8) {
            write!(f, "\n    {line}")?;
        }
        if self.failures.len() > 8 {
            write!(f, "\n    ... {} more", self.failures.len() - 8)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub suite: Suite,
    pub pass: bool,
    pub results: Vec<CriterionResult>,
}

impl AcceptanceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

struct Checker {
    failures: Vec<String>,
    checks: usize,
}

impl Checker {
    fn new() -> Self {
        Self {
            failures: Vec::new(),
            checks: 0,
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(msg());
        }
    }
}

pub const CRITERIA: &[(u8, &str)] = &[
    (1, "busy probability at high density"),
    (2, "cross-engine agreement"),
    (3, "small-instance exactness"),
    (4, "risk distribution"),
    (5, "chain validity"),
    (6, "figure trends"),
    (7, "IRT distribution"),
];

/// Runs one criterion.
pub fn run_criterion(id: u8, suite: Suite, tol: &Tolerances) -> Result<CriterionResult> {
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, n)| *n)
        .ok_or_else(|| param(format!("no criterion {id}")))?;
    let start = Instant::now();
    let (summary, c) = match id {
        1 => busy_at_high_density(tol)?,
        2 => cross_engine(suite, tol)?,
        3 => small_instances(tol)?,
        4 => distribution_suite(tol)?,
        5 => chain_validity(tol)?,
        6 => figure_trends(tol)?,
        _ => irt_suite(suite, tol)?,
    };
    Ok(CriterionResult {
        id,
        name: name.into(),
        pass: c.failures.is_empty(),
        summary: format!("{summary}; {}/{} checks passed", c.checks - c.failures.len(), c.checks),
        failures: c.failures,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_acceptance(suite_name: &str, tol: &Tolerances) -> Result<AcceptanceReport> {
    let suite = Suite::parse(suite_name)?;
    let results = CRITERIA
        .iter()
        .map(|(id, _)| run_criterion(*id, suite, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(AcceptanceReport {
        suite,
        pass: results.iter().all(|r| r.pass),
        results,
    })
}

fn load(text: &str) -> Result<ConfigFile> {
    parse_config_str(text)
}

fn busy_at_high_density(tol: &Tolerances) -> Result<(String, Checker)> {
    let table = run_config(&load(NCS_SWEEP_CW15)?)?;
    let mut c = Checker::new();
    let row = table
        .series(AllocatorMode::FlatOnly, Engine::Analytic)
        .into_iter()
        .find(|r| r.var == 500.0)
        .ok_or_else(|| param("sweep has no n_cs = 500 row"))?;
    let p_b = row.metrics().map(|m| m.p_b);
    c.check(p_b.is_some_and(|p| (p - tol.busy_target).abs() <= tol.busy_tol), || {
        format!(
            "flat CW=15 n_cs=500: P_b = {p_b:?}, want {} ± {}",
            tol.busy_target, tol.busy_tol
        )
    });
    Ok((
        format!("P_b(n_cs=500) = {}", p_b.map_or("none".into(), |p| format!("{p:.4}"))),
        c,
    ))
}

fn cross_engine(suite: Suite, tol: &Tolerances) -> Result<(String, Checker)> {
    let (periods, reps) = suite.cross_periods();
    let ctol = CompareTolerances {
        tau: Some(tol.cross_tau),
        p_b: Some(tol.cross_p_b),
        pdr: Some(tol.cross_pdr),
        ..CompareTolerances::default()
    };
    let mut c = Checker::new();
    let mut worst = [0.0f64; 3];
    for cw in [15u32, 511] {
        for n in [10.0, 50.0] {
            let mut s = Scenario {
                mac: MacParams::new(cw, 8, 750, 0.5)?,
                allocator_mode: AllocatorMode::FlatOnly,
                num_periods: periods,
                num_replications: reps,
                ..Scenario::default()
            };
            s.set_expected_n_cs(n);
            let a = analyze(&s)?;
            let (sim, _) = simulate(&s)?;
            let cmp = compare_report(&a, &sim, &ctol)?;
            for (k, m) in ["tau", "p_b", "pdr"].iter().enumerate() {
                let row = cmp.rows.iter().find(|r| r.metric == *m).expect("metric present");
                worst[k] = worst[k].max(row.abs_deviation);
                c.check(row.pass, || {
                    format!(
                        "CW={cw} E[n_cs]={n}: {m} analytic {:.4} vs simulated {:.4} (|d| = {:.4} > {})",
                        row.analytic,
                        row.simulated,
                        row.abs_deviation,
                        row.tolerance.unwrap_or(0.0)
                    )
                });
            }
        }
    }
    Ok((
        format!(
            "{} periods per point; max |d| tau {:.4}, p_b {:.4}, pdr {:.4}",
            periods * reps,
            worst[0],
            worst[1],
            worst[2]
        ),
        c,
    ))
}

fn small_instances(tol: &Tolerances) -> Result<(String, Checker)> {
    let mut c = Checker::new();
    let mut worst = 0.0f64;
    let mix = AllocationMix::from_risk(&RiskModelParams::default(), DivisionRule::HighRiskDecreasing);
    let mixes = [
        ("flat", AllocationMix::FLAT_ONLY),
        ("decreasing", AllocationMix::DECREASING_ONLY),
        ("mixed", mix),
    ];
    for cw in 1..=4u32 {
        for l in 1..=2u32 {
            for big_l in (cw + l)..=10 {
                let mac = MacParams::new(cw, l, big_l, 0.5)?;
                for p_b in [0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
                    for (label, m) in &mixes {
                        let alloc = mixed_allocation_pmf(m, &mac);
                        let (tau_o, nbo_o) = enumerate_backoff(&alloc, p_b, &mac);
                        let tau = tau_given_pb(p_b, m, &mac, TauModel::Truncated)?.tau;
                        let nbo = expected_backoff_slots(m, p_b, &mac, TauModel::Truncated)?;
                        for (what, x, o) in [("tau", tau, tau_o), ("E[N_bo]", nbo, nbo_o)] {
                            let d = (x - o).abs();
                            worst = worst.max(d);
                            c.check(d <= tol.exact, || {
                                format!("{what} cw={cw} l={l} L={big_l} p_b={p_b} {label}: {x} vs {o}")
                            });
                        }
                    }
                }
                for n in 0..=2u32 {
                    for tau in [0.0, 0.2, 0.5, 0.77, 1.0] {
                        let (x, o) = (p_sync(n, cw, tau), enumerate_p_sync(n, cw, tau));
                        worst = worst.max((x - o).abs());
                        c.check((x - o).abs() <= tol.exact, || {
                            format!("P_sync n={n} cw={cw} tau={tau}: {x} vs {o}")
                        });
                        for (label, m) in &mixes {
                            let alloc = mixed_allocation_pmf(m, &mac);
                            let x = p_hn(n, cw, tau, l, &alloc);
                            let o = enumerate_p_hn(n, cw, tau, l, &alloc);
                            worst = worst.max((x - o).abs());
                            c.check((x - o).abs() <= tol.exact, || {
                                format!("P_hn n={n} cw={cw} l={l} tau={tau} {label}: {x} vs {o}")
                            });
                        }
                    }
                }
            }
        }
    }
    Ok((format!("max |closed form - enumeration| = {worst:.2e}"), c))
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        go(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + go(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    go(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), eps, 50)
}

/// Kolmogorov-Smirnov statistic of `samples` (sorted in place) against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn distribution_suite(tol: &Tolerances) -> Result<(String, Checker)> {
    let mut c = Checker::new();
    let risk = RiskModelParams::default();
    let sigma = risk.sigma;

    // psi = u^2 removes the integrable singularity at zero
    let density = |u: f64| {
        if u == 0.0 {
            2.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
        } else {
            2.0 * u * psi_pdf(u * u, sigma).unwrap_or(0.0)
        }
    };
    let integral = adaptive_simpson(&density, 0.0, 40.0 * sigma, 1e-13);
    c.check((integral - 1.0).abs() <= tol.pdf_integral, || {
        format!("psi density integrates to {integral}")
    });

    let normal = Normal::new(risk.speed_limit, sigma).map_err(|e| param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut psi: Vec<f64> = (0..KS_SAMPLES)
        .map(|_| {
            let v: f64 = normal.sample(&mut rng);
            (v.max(0.0) - risk.speed_limit).powi(2)
        })
        .collect();
    let ks = ks_statistic(&mut psi, |x| psi_cdf(x, sigma));
    c.check(ks < tol.ks, || format!("KS statistic {ks} over {KS_SAMPLES} samples"));

    let mut split_failures = 0;
    for s in [0.5, 1.0, 2.5, 5.0, 7.3, 12.0] {
        for k in [1u32, 2, 5, 11, 20] {
            for q in [0.5, 1.0, 5.0, 25.0] {
                let p = RiskModelParams {
                    sigma: s,
                    num_categories: k,
                    step_size: q,
                    ..risk
                };
                if p_dec(&p) + p_flat(&p) != 1.0 {
                    split_failures += 1;
                }
            }
        }
    }
    c.check(split_failures == 0, || {
        format!("p_dec + p_flat != 1 in {split_failures} cases")
    });

    let d = (p_dec(&risk) - P_DEC_REFERENCE).abs();
    c.check(d <= tol.erf_reference, || {
        format!("p_dec = {} vs reference {P_DEC_REFERENCE} (|d| = {d:e})", p_dec(&risk))
    });
    Ok((format!("integral {integral:.9}, KS {ks:.5}, |p_dec - ref| {d:.1e}"), c))
}

fn chain_validity(tol: &Tolerances) -> Result<(String, Checker)> {
    let mut c = Checker::new();
    let mut chains = 0;
    let mut macs = Vec::new();
    for cw in [1u32, 2, 3, 4, 15, 31] {
        for l in [1u32, 2, 8] {
            for extra in [0u32, 3, 40] {
                macs.push(MacParams::new(cw, l, cw + l + extra, 0.5)?);
            }
        }
    }
    macs.push(MacParams::default());
    macs.push(MacParams::new(31, 8, 750, 0.5)?);
    macs.push(MacParams::new(511, 8, 750, 0.5)?);
    for mac in &macs {
        for p_b in [0.0, 0.3, 0.9, 1.0] {
            for branch in [Allocation::Flat, Allocation::Decreasing] {
                let alloc = allocation_pmf(branch, mac);
                let chain = build_transition_matrix(&alloc, p_b, mac)?;
                chains += 1;
                let mut worst = 0.0f64;
                for i in 0..chain.num_states() {
                    let s: f64 = chain.row(i).iter().map(|(_, p)| p).sum();
                    worst = worst.max((s - 1.0).abs());
                }
                c.check(worst <= tol.row_sum, || {
                    format!(
                        "cw={} l={} L={} p_b={p_b}: row sum off by {worst:e}",
                        mac.cw, mac.l_bcn_slots, mac.big_l_bcn_slots
                    )
                });
                let exp = chain.index(ChainState::Expired).expect("EXP state");
                c.check(chain.row(exp) == [(exp, 1.0)], || {
                    format!("EXP not absorbing for cw={}", mac.cw)
                });
            }
        }
        let tau = tau_for_branch(0.0, Allocation::Flat, mac, TauModel::Truncated)?;
        c.check((tau - 1.0).abs() <= tol.row_sum, || {
            format!("flat tau at P_b = 0 is {tau} for cw={}", mac.cw)
        });
        let chain = build_transition_matrix(&allocation_pmf(Allocation::Flat, mac), 0.0, mac)?;
        let (reached, _, _) = chain.absorption_within(&allocation_pmf(Allocation::Flat, mac), mac.backoff_horizon());
        c.check((reached - 1.0).abs() <= tol.row_sum, || {
            format!("idle chain reaches B_0 with probability {reached} for cw={}", mac.cw)
        });
    }
    Ok((format!("{chains} chains"), c))
}

fn metric_series(table: &SweepTable, allocator: AllocatorMode) -> Vec<&SweepRow> {
    table.series(allocator, Engine::Analytic)
}

fn figure_trends(tol: &Tolerances) -> Result<(String, Checker)> {
    let mut c = Checker::new();
    let slack = tol.trend_slack;
    let t31 = run_config(&load(NCS_SWEEP_CW31)?)?;
    let t511 = run_config(&load(NCS_SWEEP_CW511)?)?;
    let allocators = [AllocatorMode::Proposed, AllocatorMode::FlatOnly];

    for (cw, table) in [(31, &t31), (511, &t511)] {
        for a in allocators {
            let rows = metric_series(table, a);
            for r in &rows {
                c.check(r.metrics().is_some(), || {
                    format!("CW={cw} {} n_cs={}: {}", a.label(), r.var, r.status.label())
                });
            }
            let ok: Vec<_> = rows.iter().filter_map(|r| r.metrics().map(|m| (r.var, m))).collect();
            for w in ok.windows(2) {
                let ((n0, m0), (n1, m1)) = (w[0], w[1]);
                let tag = format!("CW={cw} {} n_cs {n0}->{n1}", a.label());
                c.check(m1.tau <= m0.tau + slack, || {
                    format!("{tag}: tau rises {} -> {}", m0.tau, m1.tau)
                });
                c.check(m1.pdr <= m0.pdr + slack, || {
                    format!("{tag}: PDR rises {} -> {}", m0.pdr, m1.pdr)
                });
                c.check(m1.p_sync + slack >= m0.p_sync, || {
                    format!("{tag}: P_sync falls {} -> {}", m0.p_sync, m1.p_sync)
                });
                c.check(m1.p_hn + slack >= m0.p_hn, || {
                    format!("{tag}: P_hn falls {} -> {}", m0.p_hn, m1.p_hn)
                });
                c.check(m1.p_col + slack >= m0.p_col, || {
                    format!("{tag}: P_col falls {} -> {}", m0.p_col, m1.p_col)
                });
            }
            for (n, m) in &ok {
                c.check(m.p_hn + slack >= m.p_sync, || {
                    format!("CW={cw} {} n_cs={n}: P_hn {} < P_sync {}", a.label(), m.p_hn, m.p_sync)
                });
            }
        }
    }

    for a in allocators {
        for (r31, r511) in metric_series(&t31, a).iter().zip(metric_series(&t511, a)) {
            if let (Some(m31), Some(m511)) = (r31.metrics(), r511.metrics()) {
                c.check(m511.p_col <= m31.p_col + slack, || {
                    format!(
                        "{} n_cs={}: P_col CW=511 {} > CW=31 {}",
                        a.label(),
                        r31.var,
                        m511.p_col,
                        m31.p_col
                    )
                });
            }
        }
    }

    let margins = |t: &SweepTable| -> Vec<(f64, f64)> {
        metric_series(t, AllocatorMode::Proposed)
            .iter()
            .zip(metric_series(t, AllocatorMode::FlatOnly))
            .filter_map(|(p, f)| Some((p.var, p.metrics()?.pdr - f.metrics()?.pdr)))
            .collect()
    };
    let (m31, m511) = (margins(&t31), margins(&t511));
    for (n, d) in &m511 {
        c.check(*d + slack >= 0.0, || {
            format!("CW=511 n_cs={n}: proposed PDR below flat by {:.3e}", -d)
        });
    }
    let mean = |v: &[(f64, f64)]| v.iter().map(|(_, d)| d).sum::<f64>() / v.len().max(1) as f64;
    let (mean31, mean511) = (mean(&m31), mean(&m511));
    c.check(mean511 > mean31, || {
        format!("mean PDR margin CW=511 {mean511:.4e} not above CW=31 {mean31:.4e}")
    });

    let i31 = run_config(&load(IRT_CW31)?)?;
    let i511 = run_config(&load(IRT_CW511)?)?;
    for (r31, r511) in i31.rows.iter().zip(&i511.rows) {
        let (mut f31, mut f511) = (0.0, 0.0);
        for ((nu, p31), (_, p511)) in r31.irt.iter().zip(&r511.irt) {
            f31 += p31;
            f511 += p511;
            if f511 + slack < f31 {
                c.check(false, || {
                    format!(
                        "IRT {} n_cs={} nu={nu}: CDF CW=511 {f511} < CW=31 {f31}",
                        r31.allocator.label(),
                        r31.var
                    )
                });
                break;
            }
        }
        c.check(!r31.irt.is_empty() && r31.irt.len() == r511.irt.len(), || {
            format!("IRT {} n_cs={}: missing pmf", r31.allocator.label(), r31.var)
        });
    }
    Ok((format!("mean PDR margin CW=31 {mean31:.3e}, CW=511 {mean511:.3e}"), c))
}

fn irt_suite(suite: Suite, tol: &Tolerances) -> Result<(String, Checker)> {
    let mut c = Checker::new();
    let mut worst = 0.0f64;
    for pdr in [1e-3f64, 0.01, 0.05, 0.3, 0.61, 0.9, 1.0] {
        let n = if pdr >= 1.0 {
            1
        } else {
            ((1e-18f64).ln() / (1.0 - pdr).ln()).ceil() as u32 + 1
        };
        let mut total = 0.0;
        for nu in 1..=n {
            total += irt_pmf(nu, pdr)?;
        }
        worst = worst.max((total - 1.0).abs());
        c.check((total - 1.0).abs() <= tol.pmf_sum, || {
            format!("IRT pmf at PDR {pdr} sums to {total}")
        });
    }

    let mut s = Scenario {
        mac: MacParams::new(511, 8, 750, 0.5)?,
        allocator_mode: AllocatorMode::FlatOnly,
        num_periods: suite.irt_periods(),
        num_replications: 1,
        ..Scenario::default()
    };
    s.set_expected_n_cs(10.0);
    let log = run_replication(&s, 0)?;
    let report = estimate_metrics(&s.hash(), "flat", &[log]);
    let (stat, dof, p_value) = geometric_chi_square(&report.irt_histogram, report.pdr_hat);
    c.check(p_value >= tol.chi_square_alpha, || {
        format!(
            "chi-square {stat:.2} on {dof} dof, p = {p_value:.4} < {}",
            tol.chi_square_alpha
        )
    });
    Ok((
        format!(
            "max |sum - 1| {worst:.1e}; {} periods, PDR {:.4}, chi-square p = {p_value:.3}",
            report.periods, report.pdr_hat
        ),
        c,
    ))
}

/// Pearson goodness of fit of an IRT histogram against `Geo(pdr)`. Bins
/// with expected count below 5 are pooled into the tail; one degree of
/// freedom is spent on the estimated `pdr`. Returns `(statistic, dof, p)`.
pub fn geometric_chi_square(hist: &std::collections::BTreeMap<u32, u64>, pdr: f64) -> (f64, u32, f64) {
    let total: u64 = hist.values().sum();
    if total == 0 || !(pdr > 0.0 && pdr < 1.0) {
        return (f64::NAN, 0, 0.0);
    }
    let n = total as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut nu = 1u32;
    let mut tail_prob = 1.0;
    loop {
        let p = (1.0 - pdr).powi(nu as i32 - 1) * pdr;
        let next_tail = tail_prob - p;
        if n * p < 5.0 || n * next_tail < 5.0 {
            break;
        }
        bins.push((*hist.get(&nu).unwrap_or(&0) as f64, n * p));
        tail_prob = next_tail;
        nu += 1;
    }
    let observed_tail: u64 = hist.range(nu..).map(|(_, c)| c).sum();
    bins.push((observed_tail as f64, n * tail_prob));
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (bins.len() as u32).saturating_sub(2).max(1);
    let p = 1.0 - ChiSquared::new(f64::from(dof)).expect("dof > 0").cdf(stat);
    (stat, dof, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_lists_available() {
        let err = run_acceptance("nightly", &Tolerances::default())
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("nightly") && err.contains("quick") && err.contains("full"),
            "{err}"
        );
    }

    #[test]
    fn simpson_on_known_integrals() {
        assert!((adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12) - 2.0).abs() < 1e-10);
        assert!((adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 50.0, 1e-12) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&mut xs, |x| x);
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn chi_square_accepts_exact_expectations() {
        let pdr: f64 = 0.3;
        let n = 100_000.0;
        let hist = (1..60u32)
            .map(|nu| (nu, (n * (1.0 - pdr).powi(nu as i32 - 1) * pdr).round() as u64))
            .collect();
        let (_, _, p) = geometric_chi_square(&hist, pdr);
        assert!(p > 0.99);
        let skewed = (1..60u32).map(|nu| (nu, if nu < 3 { 40_000 } else { 100 })).collect();
        assert!(geometric_chi_square(&skewed, pdr).2 < 1e-6);
    }

    #[test]
    fn tampered_tolerances_fail() {
        let tol = Tolerances::zeroed();
        let r = run_criterion(4, Suite::Quick, &tol).unwrap();
        assert!(!r.pass, "{r}");
    }
}
