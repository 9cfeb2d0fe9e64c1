//! Slot-level Monte Carlo engine over a marked Poisson field.
//!
//! Each beaconing period every node draws a fresh counter. In every slot a
//! node whose counter is zero starts its `l_bcn`-slot broadcast; any other
//! waiting node freezes if a carrier-sense neighbour is on air in that slot
//! and decrements otherwise. A node that can no longer fit its broadcast
//! before the period ends expires. One tagged node per period is classified
//! as SUC, SYNC, HN or EXP.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{BackoffSampler, MacParams};
use crate::analysis::AnalyticReport;
use crate::error::{param, Result};
use crate::risk::Allocation;
use crate::scenario::{AllocatorMode, Scenario};
use crate::spatial::{assign_speeds_with, generate_ppp_with, step_mobility, VehicleNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "SUC")]
    Success,
    #[serde(rename = "SYNC")]
    Sync,
    #[serde(rename = "HN")]
    HiddenNode,
    #[serde(rename = "EXP")]
    Expired,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "SUC",
            Outcome::Sync => "SYNC",
            Outcome::HiddenNode => "HN",
            Outcome::Expired => "EXP",
        })
    }
}

/// What happened to the tagged node in one beaconing period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub replication: u32,
    pub period: u32,
    pub tagged_id: u32,
    pub k: u32,
    pub branch: Allocation,
    pub counter_drawn: u32,
    pub outcome: Outcome,
    /// Start slot of the broadcast (`idle + busy` slots), if it went out.
    pub slots_to_tx: Option<u32>,
    pub idle_slots: u32,
    pub busy_slots: u32,
    pub n_cs: u32,
    pub sync_overlap: bool,
    pub hn_overlap: bool,
}

impl PeriodRecord {
    pub fn transmitted(&self) -> bool {
        self.slots_to_tx.is_some()
    }
}

pub const LOG_HEADER: &str = "replication,period,k,counter_drawn,outcome,slots_to_tx";

/// Writes the outcome stream: one comma-separated line per tagged period.
pub fn write_outcome_log<W: Write>(mut w: W, records: &[PeriodRecord]) -> io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in records {
        let slots = r.slots_to_tx.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.replication, r.period, r.k, r.counter_drawn, r.outcome, slots
        )?;
    }
    Ok(())
}

/// Uniform grid with cell side `cell`, used for range queries.
struct Grid {
    cell: f64,
    dim: usize,
    cells: Vec<Vec<u32>>,
}

impl Grid {
    fn new(nodes: &[VehicleNode], side: f64, cell: f64) -> Self {
        let dim = ((side / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); dim * dim];
        for (i, n) in nodes.iter().enumerate() {
            let (cx, cy) = Self::coord(n.position, cell, dim);
            cells[cy * dim + cx].push(i as u32);
        }
        Self { cell, dim, cells }
    }

    fn coord(p: (f64, f64), cell: f64, dim: usize) -> (usize, usize) {
        let cx = ((p.0 / cell) as usize).min(dim - 1);
        let cy = ((p.1 / cell) as usize).min(dim - 1);
        (cx, cy)
    }

    /// Indices `j != i` with `lo < dist(i, j) <= hi`.
    fn within(&self, nodes: &[VehicleNode], i: usize, lo: f64, hi: f64) -> Vec<u32> {
        let reach = (hi / self.cell).ceil() as isize;
        let (cx, cy) = Self::coord(nodes[i].position, self.cell, self.dim);
        let mut out = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if x < 0 || y < 0 || x >= self.dim as isize || y >= self.dim as isize {
                    continue;
                }
                for &j in &self.cells[y as usize * self.dim + x as usize] {
                    if j as usize == i {
                        continue;
                    }
                    let d = nodes[i].distance_to(&nodes[j as usize]);
                    if d > lo && d <= hi {
                        out.push(j);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Field state that stays fixed within a beaconing period.
struct Topology {
    neighbors: Vec<Vec<u32>>,
    grid: Grid,
    tagged_pool: Vec<u32>,
}

impl Topology {
    fn build(nodes: &[VehicleNode], scenario: &Scenario) -> Self {
        let r = scenario.r_cs_m;
        let side = scenario.region.side();
        let grid = Grid::new(nodes, side, r);
        let neighbors = (0..nodes.len()).map(|i| grid.within(nodes, i, -1.0, r)).collect();
        let margin = 2.0 * r;
        let mut tagged_pool: Vec<u32> = if scenario.tagged_interior {
            nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| {
                    let (x, y) = n.position;
                    x >= margin && y >= margin && x <= side - margin && y <= side - margin
                })
                .map(|(i, _)| i as u32)
                .collect()
        } else {
            Vec::new()
        };
        if tagged_pool.is_empty() {
            tagged_pool = (0..nodes.len() as u32).collect();
        }
        Self {
            neighbors,
            grid,
            tagged_pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeState {
    Waiting,
    OnAir,
    Done,
    Expired,
}

/// Per-node result of one period.
#[derive(Debug, Clone, Default)]
struct PeriodTrace {
    start: Vec<Option<u32>>,
    idle: Vec<u32>,
    busy: Vec<u32>,
}

/// Runs one beaconing period for every node given the drawn counters.
fn run_period(counters: &[u32], neighbors: &[Vec<u32>], mac: &MacParams) -> PeriodTrace {
    let n = counters.len();
    let l = mac.l_bcn_slots;
    let big_l = mac.big_l_bcn_slots;
    let mut counter = counters.to_vec();
    let mut state = vec![NodeState::Waiting; n];
    let mut on_air_neighbors = vec![0u32; n];
    let mut trace = PeriodTrace {
        start: vec![None; n],
        idle: vec![0; n],
        busy: vec![0; n],
    };
    let mut waiting: Vec<u32> = (0..n as u32).collect();
    // (end slot inclusive, node)
    let mut on_air: Vec<(u32, u32)> = Vec::new();
    let mut starters: Vec<u32> = Vec::new();
    let mut t: u32 = 0;

    while t < big_l && (!waiting.is_empty() || !on_air.is_empty()) {
        starters.clear();
        waiting.retain(|&i| {
            let iu = i as usize;
            let c = counter[iu];
            if t + c + l > big_l {
                state[iu] = NodeState::Expired;
                return false;
            }
            if c == 0 {
                starters.push(i);
                return false;
            }
            true
        });
        for &i in &starters {
            let iu = i as usize;
            state[iu] = NodeState::OnAir;
            trace.start[iu] = Some(t);
            on_air.push((t + l - 1, i));
            for &j in &neighbors[iu] {
                on_air_neighbors[j as usize] += 1;
            }
        }

        if on_air.is_empty() {
            // Quiet channel: every waiting node decrements together until the
            // smallest counter reaches zero.
            let Some(step) = waiting.iter().map(|&i| counter[i as usize]).min() else {
                break;
            };
            for &i in &waiting {
                counter[i as usize] -= step;
                trace.idle[i as usize] += step;
            }
            t += step;
            continue;
        }

        for &i in &waiting {
            let iu = i as usize;
            if on_air_neighbors[iu] > 0 {
                trace.busy[iu] += 1;
            } else {
                counter[iu] -= 1;
                trace.idle[iu] += 1;
            }
        }
        on_air.retain(|&(end, i)| {
            if end == t {
                state[i as usize] = NodeState::Done;
                for &j in &neighbors[i as usize] {
                    on_air_neighbors[j as usize] -= 1;
                }
                false
            } else {
                true
            }
        });
        t += 1;
    }
    debug_assert!(state.iter().all(|s| matches!(s, NodeState::Done | NodeState::Expired)));
    trace
}

fn branch_of(node: &VehicleNode, scenario: &Scenario) -> Allocation {
    match scenario.allocator_mode {
        AllocatorMode::FlatOnly => Allocation::Flat,
        AllocatorMode::Proposed => scenario.division_rule.branch(node.risk_category, &scenario.risk),
    }
}

/// RNG stream for one replication.
pub fn replication_rng(master_seed: u64, replication_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::from(replication_index));
    rng
}

/// Simulates `scenario.num_periods` periods over an explicit field.
pub fn run_on_field<R: Rng + ?Sized>(
    nodes: &mut [VehicleNode],
    scenario: &Scenario,
    replication_index: u32,
    rng: &mut R,
) -> Result<Vec<PeriodRecord>> {
    scenario.mac.validate()?;
    if nodes.is_empty() {
        return Ok(Vec::new());
    }
    let mac = &scenario.mac;
    let l = mac.l_bcn_slots;
    let dec = BackoffSampler::new(Allocation::Decreasing, mac);
    let flat = BackoffSampler::new(Allocation::Flat, mac);
    let mut topo = Topology::build(nodes, scenario);
    let mut branches: Vec<Allocation> = nodes.iter().map(|n| branch_of(n, scenario)).collect();
    let mut records = Vec::with_capacity(scenario.num_periods as usize);
    let mut counters = vec![0u32; nodes.len()];

    for period in 0..scenario.num_periods {
        if period > 0 && scenario.mobility_dt_s > 0.0 {
            step_mobility(nodes, scenario.mobility_dt_s, scenario.region)?;
            topo = Topology::build(nodes, scenario);
            branches = nodes.iter().map(|n| branch_of(n, scenario)).collect();
        }
        for (c, b) in counters.iter_mut().zip(&branches) {
            *c = match b {
                Allocation::Decreasing => dec.sample(rng),
                Allocation::Flat => flat.sample(rng),
            };
        }
        let tagged = topo.tagged_pool[rng.random_range(0..topo.tagged_pool.len())] as usize;
        let trace = run_period(&counters, &topo.neighbors, mac);

        let cs = &topo.neighbors[tagged];
        let (sync_overlap, hn_overlap) = match trace.start[tagged] {
            None => (false, false),
            Some(s) => {
                let sync = cs.iter().any(|&j| trace.start[j as usize] == Some(s));
                let annulus = topo.grid.within(nodes, tagged, scenario.r_cs_m, 2.0 * scenario.r_cs_m);
                let hn = annulus
                    .iter()
                    .any(|&j| trace.start[j as usize].is_some_and(|sj| sj < s + l && s < sj + l));
                (sync, hn)
            }
        };
        let outcome = match (trace.start[tagged], sync_overlap, hn_overlap) {
            (None, _, _) => Outcome::Expired,
            (Some(_), true, _) => Outcome::Sync,
            (Some(_), false, true) => Outcome::HiddenNode,
            (Some(_), false, false) => Outcome::Success,
        };
        records.push(PeriodRecord {
            replication: replication_index,
            period,
            tagged_id: nodes[tagged].id,
            k: nodes[tagged].risk_category,
            branch: branches[tagged],
            counter_drawn: counters[tagged],
            outcome,
            slots_to_tx: trace.start[tagged],
            idle_slots: trace.idle[tagged],
            busy_slots: trace.busy[tagged],
            n_cs: cs.len() as u32,
            sync_overlap,
            hn_overlap,
        });
    }
    Ok(records)
}

/// One replication: fresh field, fresh marks, `num_periods` periods.
pub fn run_replication(scenario: &Scenario, replication_index: u32) -> Result<Vec<PeriodRecord>> {
    scenario.validate()?;
    let mut rng = replication_rng(scenario.master_seed, replication_index);
    let mut nodes = generate_ppp_with(scenario.region, scenario.density_per_m2, &mut rng)?;
    assign_speeds_with(&mut nodes, scenario.mean_speed, &scenario.risk, &mut rng)?;
    run_on_field(&mut nodes, scenario, replication_index, &mut rng)
}

/// All replications, in replication order.
pub fn run_all(scenario: &Scenario) -> Result<Vec<Vec<PeriodRecord>>> {
    scenario.validate()?;
    (0..scenario.num_replications)
        .into_par_iter()
        .map(|i| run_replication(scenario, i))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub suc: u64,
    pub sync: u64,
    pub hn: u64,
    pub exp: u64,
    pub attempts: u64,
}

impl OutcomeCounts {
    fn add(&mut self, o: Outcome) {
        self.attempts += 1;
        match o {
            Outcome::Success => self.suc += 1,
            Outcome::Sync => self.sync += 1,
            Outcome::HiddenNode => self.hn += 1,
            Outcome::Expired => self.exp += 1,
        }
    }

    pub fn is_exhaustive(&self) -> bool {
        self.suc + self.sync + self.hn + self.exp == self.attempts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryPdr {
    pub periods: u64,
    pub successes: u64,
    pub pdr_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario_hash: String,
    pub allocator: String,
    pub periods: u64,
    pub counts: OutcomeCounts,
    pub tau_hat: f64,
    pub tau_se: f64,
    pub p_b_hat: f64,
    pub p_b_se: f64,
    pub p_exp_hat: f64,
    pub pdr_hat: f64,
    pub pdr_se: f64,
    /// Share of transmitted periods with a same-slot carrier-sense start.
    pub p_sync_hat: f64,
    /// Share of transmitted periods overlapped from the hidden annulus.
    pub p_hn_hat: f64,
    pub p_col_hat: f64,
    pub e_nbo_hat: f64,
    pub e_nbo_se: f64,
    pub mean_n_cs: f64,
    pub irt_histogram: BTreeMap<u32, u64>,
    pub pdr_by_category: BTreeMap<u32, CategoryPdr>,
    /// Breakdown by the tagged node's measured carrier-sense population.
    pub by_n_cs: BTreeMap<u32, NcsBin>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcsBin {
    pub periods: u64,
    pub transmitted: u64,
    pub successes: u64,
}

impl SimReport {
    /// Relative IRT frequencies for `nu = 1..=max_nu`.
    pub fn irt_frequencies(&self, max_nu: u32) -> Vec<f64> {
        let total: u64 = self.irt_histogram.values().sum();
        (1..=max_nu)
            .map(|nu| {
                if total == 0 {
                    0.0
                } else {
                    *self.irt_histogram.get(&nu).unwrap_or(&0) as f64 / total as f64
                }
            })
            .collect()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn binomial_se(p: f64, n: f64) -> f64 {
    if n > 0.0 {
        (p * (1.0 - p) / n).sqrt()
    } else {
        0.0
    }
}

/// Pools per-replication logs into empirical estimates.
pub fn estimate_metrics(scenario_hash: &str, allocator: &str, logs: &[Vec<PeriodRecord>]) -> SimReport {
    let mut counts = OutcomeCounts::default();
    let (mut busy, mut observed) = (0u64, 0u64);
    let (mut transmitted, mut sync, mut hn) = (0u64, 0u64, 0u64);
    let (mut nbo_sum, mut nbo_sq) = (0.0f64, 0.0f64);
    let mut n_cs_sum = 0u64;
    let mut irt = BTreeMap::new();
    let mut by_cat: BTreeMap<u32, CategoryPdr> = BTreeMap::new();
    let mut by_n_cs: BTreeMap<u32, NcsBin> = BTreeMap::new();

    for log in logs {
        let mut last_success: Option<u32> = None;
        for r in log {
            counts.add(r.outcome);
            busy += u64::from(r.busy_slots);
            observed += u64::from(r.busy_slots + r.idle_slots);
            n_cs_sum += u64::from(r.n_cs);
            let cat = by_cat.entry(r.k).or_default();
            cat.periods += 1;
            let bin = by_n_cs.entry(r.n_cs).or_default();
            bin.periods += 1;
            bin.transmitted += u64::from(r.transmitted());
            bin.successes += u64::from(r.outcome == Outcome::Success);
            if let Some(s) = r.slots_to_tx {
                transmitted += 1;
                sync += u64::from(r.sync_overlap);
                hn += u64::from(r.hn_overlap);
                nbo_sum += f64::from(s);
                nbo_sq += f64::from(s) * f64::from(s);
            }
            if r.outcome == Outcome::Success {
                cat.successes += 1;
                if let Some(prev) = last_success {
                    *irt.entry(r.period - prev).or_insert(0u64) += 1;
                }
                last_success = Some(r.period);
            }
        }
    }
    for cat in by_cat.values_mut() {
        cat.pdr_hat = ratio(cat.successes as f64, cat.periods as f64);
    }
    let periods = counts.attempts as f64;
    let tx = transmitted as f64;
    let tau_hat = ratio(tx, periods);
    let pdr_hat = ratio(counts.suc as f64, periods);
    let p_b_hat = ratio(busy as f64, observed as f64);
    let p_sync_hat = ratio(sync as f64, tx);
    let p_hn_hat = ratio(hn as f64, tx);
    let e_nbo_hat = ratio(nbo_sum, tx);
    let e_nbo_se = if transmitted > 1 {
        let var = (nbo_sq - tx * e_nbo_hat * e_nbo_hat) / (tx - 1.0);
        (var.max(0.0) / tx).sqrt()
    } else {
        0.0
    };
    SimReport {
        scenario_hash: scenario_hash.to_string(),
        allocator: allocator.to_string(),
        periods: counts.attempts,
        counts,
        tau_hat,
        tau_se: binomial_se(tau_hat, periods),
        p_b_hat,
        p_b_se: binomial_se(p_b_hat, observed as f64),
        p_exp_hat: ratio(counts.exp as f64, periods),
        pdr_hat,
        pdr_se: binomial_se(pdr_hat, periods),
        p_sync_hat,
        p_hn_hat,
        p_col_hat: 1.0 - (1.0 - p_sync_hat) * (1.0 - p_hn_hat),
        e_nbo_hat,
        e_nbo_se,
        mean_n_cs: ratio(n_cs_sum as f64, periods),
        irt_histogram: irt,
        pdr_by_category: by_cat,
        by_n_cs,
    }
}

/// Runs every replication and pools the result.
pub fn simulate(scenario: &Scenario) -> Result<(SimReport, Vec<Vec<PeriodRecord>>)> {
    let logs = run_all(scenario)?;
    let report = estimate_metrics(&scenario.hash(), scenario.allocator_mode.label(), &logs);
    Ok((report, logs))
}

/// Absolute tolerances per metric; `None` reports the deviation without
/// judging it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareTolerances {
    pub tau: Option<f64>,
    pub p_b: Option<f64>,
    pub p_exp: Option<f64>,
    pub pdr: Option<f64>,
    pub p_sync: Option<f64>,
    pub p_hn: Option<f64>,
    pub p_col: Option<f64>,
    pub e_nbo: Option<f64>,
}

impl Default for CompareTolerances {
    fn default() -> Self {
        Self {
            tau: Some(0.02),
            p_b: Some(0.02),
            p_exp: None,
            pdr: Some(0.03),
            p_sync: None,
            p_hn: None,
            p_col: None,
            e_nbo: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub metric: String,
    pub analytic: f64,
    pub simulated: f64,
    pub abs_deviation: f64,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario_hash: String,
    pub rows: Vec<Deviation>,
    pub pass: bool,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric,analytic,simulated,abs_deviation,tolerance,pass")?;
        for r in &self.rows {
            let tol = r.tolerance.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.metric, r.analytic, r.simulated, r.abs_deviation, tol, r.pass
            )?;
        }
        Ok(())
    }
}

/// Per-metric deviations between the two engines for one scenario.
pub fn compare_report(analytic: &AnalyticReport, sim: &SimReport, tol: &CompareTolerances) -> Result<Comparison> {
    if analytic.scenario_hash != sim.scenario_hash {
        return Err(param(format!(
            "scenario hash mismatch: analytic {} vs simulated {}",
            analytic.scenario_hash, sim.scenario_hash
        )));
    }
    let pairs = [
        ("tau", analytic.tau, sim.tau_hat, tol.tau),
        ("p_b", analytic.p_b, sim.p_b_hat, tol.p_b),
        ("p_exp", analytic.p_exp, sim.p_exp_hat, tol.p_exp),
        ("pdr", analytic.pdr, sim.pdr_hat, tol.pdr),
        ("p_sync", analytic.p_sync, sim.p_sync_hat, tol.p_sync),
        ("p_hn", analytic.p_hn, sim.p_hn_hat, tol.p_hn),
        ("p_col", analytic.p_col, sim.p_col_hat, tol.p_col),
        ("e_nbo", analytic.e_nbo, sim.e_nbo_hat, tol.e_nbo),
    ];
    let rows: Vec<Deviation> = pairs
        .into_iter()
        .map(|(metric, a, s, t)| {
            let d = (a - s).abs();
            Deviation {
                metric: metric.into(),
                analytic: a,
                simulated: s,
                abs_deviation: d,
                tolerance: t,
                pass: t.is_none_or(|t| d <= t),
            }
        })
        .collect();
    Ok(Comparison {
        scenario_hash: sim.scenario_hash.clone(),
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}
