//! Parameter bundle shared by the analytic engine and the simulator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::MacParams;
use crate::error::{param, Result};
use crate::risk::{AllocationMix, DivisionRule, RiskModelParams};
use crate::solver::TauModel;
use crate::spatial::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorMode {
    /// Risk-adaptive: decreasing or flat per vehicle category.
    Proposed,
    /// Every vehicle uses the flat allocation.
    FlatOnly,
}

impl AllocatorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AllocatorMode::Proposed => "proposed",
            AllocatorMode::FlatOnly => "flat-only",
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            AllocatorMode::Proposed => "proposed",
            AllocatorMode::FlatOnly => "flat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proposed" => Some(AllocatorMode::Proposed),
            "flat-only" | "flat" => Some(AllocatorMode::FlatOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub region: Region,
    pub density_per_m2: f64,
    pub r_cs_m: f64,
    pub mac: MacParams,
    pub risk: RiskModelParams,
    pub mean_speed: f64,
    pub num_periods: u32,
    pub num_replications: u32,
    pub master_seed: u64,
    pub allocator_mode: AllocatorMode,
    pub division_rule: DivisionRule,
    pub tau_model: TauModel,
    /// Carrier-sense population used by the analytic engine; derived from
    /// the density when absent.
    pub n_cs: Option<u32>,
    /// Seconds of movement between beaconing periods; zero freezes the field.
    pub mobility_dt_s: f64,
    /// Draw the tagged vehicle only from nodes at least `2 r_cs` from every
    /// edge, so its carrier-sense disc and hidden annulus lie inside the region.
    pub tagged_interior: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub irt_max_nu: u32,
}

pub const DEFAULT_SEED: u64 = 20_240_601;

impl Default for Scenario {
    fn default() -> Self {
        let r_cs_m = 100.0;
        Self {
            region: Region::new(600.0).expect("positive side"),
            density_per_m2: 50.0 / (std::f64::consts::PI * r_cs_m * r_cs_m),
            r_cs_m,
            mac: MacParams::default(),
            risk: RiskModelParams::default(),
            mean_speed: 60.0,
            num_periods: 1000,
            num_replications: 10,
            master_seed: DEFAULT_SEED,
            allocator_mode: AllocatorMode::Proposed,
            division_rule: DivisionRule::HighRiskDecreasing,
            tau_model: TauModel::Truncated,
            n_cs: None,
            mobility_dt_s: 0.0,
            tagged_interior: true,
            tol: 1e-10,
            max_iter: 10_000,
            irt_max_nu: 20,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.mac.validate()?;
        self.risk.validate()?;
        if !(self.density_per_m2 > 0.0) || !self.density_per_m2.is_finite() {
            return Err(param(format!("density must be > 0, got {}", self.density_per_m2)));
        }
        if !(self.r_cs_m > 0.0) {
            return Err(param(format!("r_cs_m must be > 0, got {}", self.r_cs_m)));
        }
        if self.num_periods < 1 {
            return Err(param("num_periods must be ≥ 1"));
        }
        if self.num_replications < 1 {
            return Err(param("num_replications must be ≥ 1"));
        }
        if self.mobility_dt_s < 0.0 {
            return Err(param("mobility_dt_s must be ≥ 0"));
        }
        if !(self.tol > 0.0) {
            return Err(param("tol must be > 0"));
        }
        if self.max_iter < 1 {
            return Err(param("max_iter must be ≥ 1"));
        }
        if self.irt_max_nu < 1 {
            return Err(param("irt_max_nu must be ≥ 1"));
        }
        Ok(())
    }

    /// Mean carrier-sense population `lambda pi r_cs^2`.
    pub fn expected_n_cs(&self) -> f64 {
        self.density_per_m2 * std::f64::consts::PI * self.r_cs_m * self.r_cs_m
    }

    /// Population the analytic engine is evaluated at.
    pub fn analytic_n_cs(&self) -> u32 {
        self.n_cs.unwrap_or_else(|| self.expected_n_cs().round() as u32)
    }

    /// Sets the density so that `lambda pi r_cs^2 = n_cs`.
    pub fn set_expected_n_cs(&mut self, n_cs: f64) {
        self.density_per_m2 = n_cs / (std::f64::consts::PI * self.r_cs_m * self.r_cs_m);
    }

    pub fn allocation_mix(&self) -> AllocationMix {
        match self.allocator_mode {
            AllocatorMode::FlatOnly => AllocationMix::FLAT_ONLY,
            AllocatorMode::Proposed => AllocationMix::from_risk(&self.risk, self.division_rule),
        }
    }

    /// `key = value` rendering of every scenario key, in config order.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub(crate) fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("side_length_m", self.region.side().to_string()),
            ("density", self.density_per_m2.to_string()),
            ("r_cs_m", self.r_cs_m.to_string()),
            (
                "n_cs",
                self.n_cs.map(|n| n.to_string()).unwrap_or_else(|| "auto".into()),
            ),
            ("cw", self.mac.cw.to_string()),
            ("l_bcn", self.mac.l_bcn_slots.to_string()),
            ("big_l_bcn", self.mac.big_l_bcn_slots.to_string()),
            ("r_decay", self.mac.r_decay.to_string()),
            ("num_categories", self.risk.num_categories.to_string()),
            ("step_size", self.risk.step_size.to_string()),
            ("sigma", self.risk.sigma.to_string()),
            ("mean_speed", self.mean_speed.to_string()),
            ("speed_limit", self.risk.speed_limit.to_string()),
            ("allocator_mode", self.allocator_mode.as_str().into()),
            ("division_rule", self.division_rule.as_str().into()),
            ("tau_model", self.tau_model.as_str().into()),
            ("num_periods", self.num_periods.to_string()),
            ("num_replications", self.num_replications.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("mobility_dt_s", self.mobility_dt_s.to_string()),
            ("tagged_interior", self.tagged_interior.to_string()),
            ("tol", self.tol.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("irt_max_nu", self.irt_max_nu.to_string()),
        ]
    }

    /// Hash of the model parameters. Run-size and seed keys are excluded, so
    /// analytic and simulated reports of one configuration compare equal.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if matches!(k, "num_periods" | "num_replications" | "master_seed") {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
