//! Marked Poisson field of vehicles on a square region.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::risk::{categorize, RiskModelParams};

/// Square system space `[0, D]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    side_length_m: f64,
}

impl Region {
    pub fn new(side_length_m: f64) -> Result<Self> {
        if !(side_length_m > 0.0) || !side_length_m.is_finite() {
            return Err(param(format!("side_length_m must be > 0, got {side_length_m}")));
        }
        Ok(Self { side_length_m })
    }

    pub fn side(&self) -> f64 {
        self.side_length_m
    }

    pub fn area(&self) -> f64 {
        self.side_length_m * self.side_length_m
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        (0.0..=self.side_length_m).contains(&p.0) && (0.0..=self.side_length_m).contains(&p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleNode {
    pub id: u32,
    pub position: (f64, f64),
    pub heading_rad: f64,
    pub speed_mps: f64,
    /// Squared deviation of speed from the limit.
    pub psi: f64,
    pub risk_category: u32,
}

impl VehicleNode {
    pub fn distance_to(&self, other: &VehicleNode) -> f64 {
        let dx = self.position.0 - other.position.0;
        let dy = self.position.1 - other.position.1;
        dx.hypot(dy)
    }
}

/// Neighbourhood sizes seen from one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub n_cs: u32,
    pub n_hn: u32,
}

impl Neighborhood {
    /// Hidden population from the carrier-sense count under equal density.
    pub fn from_carrier_sense(n_cs: u32) -> Self {
        Self {
            n_cs,
            n_hn: count_hidden_nodes(n_cs),
        }
    }
}

/// Homogeneous PPP of intensity `density_per_m2` on `region`. Speeds and marks
/// are zero; headings are uniform on `[0, 2pi)`.
pub fn generate_ppp(region: Region, density_per_m2: f64, seed: u64) -> Result<Vec<VehicleNode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_ppp_with(region, density_per_m2, &mut rng)
}

pub(crate) fn generate_ppp_with<R: Rng + ?Sized>(
    region: Region,
    density_per_m2: f64,
    rng: &mut R,
) -> Result<Vec<VehicleNode>> {
    if !(density_per_m2 > 0.0) || !density_per_m2.is_finite() {
        return Err(param(format!("density_per_m2 must be > 0, got {density_per_m2}")));
    }
    let mean = density_per_m2 * region.area();
    let count = Poisson::new(mean)
        .map_err(|e| param(format!("poisson mean {mean}: {e}")))?
        .sample(rng) as u32;
    let d = region.side();
    Ok((0..count)
        .map(|id| VehicleNode {
            id,
            position: (rng.random::<f64>() * d, rng.random::<f64>() * d),
            heading_rad: rng.random::<f64>() * TAU,
            speed_mps: 0.0,
            psi: 0.0,
            risk_category: 1,
        })
        .collect())
}

/// Draws speeds from `N(mean_speed, sigma^2)` (clamped at zero) and sets the
/// psi mark and risk category of each node.
pub fn assign_speeds(nodes: &mut [VehicleNode], mean_speed: f64, risk: &RiskModelParams, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assign_speeds_with(nodes, mean_speed, risk, &mut rng)
}

pub(crate) fn assign_speeds_with<R: Rng + ?Sized>(
    nodes: &mut [VehicleNode],
    mean_speed: f64,
    risk: &RiskModelParams,
    rng: &mut R,
) -> Result<()> {
    risk.validate()?;
    let normal = Normal::new(mean_speed, risk.sigma).map_err(|e| param(format!("speed distribution: {e}")))?;
    for node in nodes.iter_mut() {
        let speed = normal.sample(rng).max(0.0);
        set_speed(node, speed, risk);
    }
    Ok(())
}

/// Sets speed and recomputes the dependent mark and category.
pub fn set_speed(node: &mut VehicleNode, speed_mps: f64, risk: &RiskModelParams) {
    node.speed_mps = speed_mps;
    let dv = speed_mps - risk.speed_limit;
    node.psi = dv * dv;
    node.risk_category = categorize(node.psi, risk);
}

/// Number of other nodes within `r_cs` (inclusive) of `tagged`.
pub fn count_carrier_sense_neighbors(tagged: &VehicleNode, nodes: &[VehicleNode], r_cs: f64) -> u32 {
    nodes
        .iter()
        .filter(|n| n.id != tagged.id && tagged.distance_to(n) <= r_cs)
        .count() as u32
}

/// Hidden nodes in the annulus `(r_cs, 2 r_cs]`: its area is three times the
/// carrier-sense disc, so equal density triples the count.
pub fn count_hidden_nodes(n_cs: u32) -> u32 {
    3 * n_cs
}

/// Advances every node along its heading, reflecting off the region edges.
pub fn step_mobility(nodes: &mut [VehicleNode], dt_s: f64, region: Region) -> Result<()> {
    if !(dt_s > 0.0) {
        return Err(param(format!("dt_s must be > 0, got {dt_s}")));
    }
    let d = region.side();
    for node in nodes.iter_mut() {
        if node.speed_mps == 0.0 {
            continue;
        }
        let step = node.speed_mps * dt_s;
        let (mut vx, mut vy) = (node.heading_rad.cos(), node.heading_rad.sin());
        let (x, flip_x) = reflect(node.position.0 + step * vx, d);
        let (y, flip_y) = reflect(node.position.1 + step * vy, d);
        if flip_x {
            vx = -vx;
        }
        if flip_y {
            vy = -vy;
        }
        node.position = (x, y);
        if flip_x || flip_y {
            node.heading_rad = vy.atan2(vx).rem_euclid(TAU);
        }
    }
    Ok(())
}

/// Folds a coordinate back into `[0, d]`. The flag reports whether the net
/// number of reflections is odd, i.e. whether the velocity component flips.
fn reflect(v: f64, d: f64) -> (f64, bool) {
    let period = 2.0 * d;
    let m = v.rem_euclid(period);
    if m <= d {
        // an even number of wall hits; for v in [0, d] that is zero
        (m, false)
    } else {
        (period - m, true)
    }
}
