//! Speed-variance risk metric and its mapping onto backoff allocation branches.
//!
//! A vehicle's risk mark is `psi = (v - v_limit)^2`. With speeds drawn from
//! `N(mu, sigma^2)` and `v_limit = mu`, `psi / sigma^2` is chi-square with one
//! degree of freedom, which gives the density and CDF below.

use libm::erf;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskModelParams {
    /// Standard deviation of vehicle speed.
    pub sigma: f64,
    /// Number of risk categories `K`.
    pub num_categories: u32,
    /// Width `Q` of each category band in psi units.
    pub step_size: f64,
    /// Posted speed limit.
    pub speed_limit: f64,
}

impl Default for RiskModelParams {
    fn default() -> Self {
        Self {
            sigma: 5.0,
            num_categories: 11,
            step_size: 5.0,
            speed_limit: 60.0,
        }
    }
}

impl RiskModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.num_categories < 2 {
            return Err(param(format!(
                "num_categories must be >= 2, got {}",
                self.num_categories
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(param(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if !self.speed_limit.is_finite() {
            return Err(param("speed_limit must be finite"));
        }
        Ok(())
    }

    /// `ceil(K / 2)`: the category at which the population is split.
    pub fn division_category(&self) -> u32 {
        self.num_categories.div_ceil(2)
    }

    /// Psi value at the division point, `Q * ceil(K / 2)`.
    pub fn division_psi(&self) -> f64 {
        self.step_size * f64::from(self.division_category())
    }
}

/// Shape of the initial backoff-counter distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Geometric-like `r^(c+1)`, favouring small counters.
    Decreasing,
    /// Uniform over `0..CW`.
    Flat,
}

/// Which side of the division point receives the decreasing allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DivisionRule {
    /// High-risk categories (`k > ceil(K/2)`) are decreasing; the middle
    /// category folds into the flat side. Config value
    /// `high_risk_decreasing`.
    #[default]
    #[serde(rename = "high_risk_decreasing")]
    HighRiskDecreasing,
    /// Low-risk categories (`k <= ceil(K/2)`) are decreasing, matching the
    /// labels of the closed-form population masses. Config value
    /// `low_risk_decreasing`.
    #[serde(rename = "low_risk_decreasing")]
    LowRiskDecreasing,
}

impl DivisionRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            DivisionRule::HighRiskDecreasing => "high_risk_decreasing",
            DivisionRule::LowRiskDecreasing => "low_risk_decreasing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high_risk_decreasing" => Some(DivisionRule::HighRiskDecreasing),
            "low_risk_decreasing" => Some(DivisionRule::LowRiskDecreasing),
            _ => None,
        }
    }

    /// Allocation branch for a vehicle in category `k`.
    pub fn branch(&self, k: u32, params: &RiskModelParams) -> Allocation {
        let low_risk = k <= params.division_category();
        match (self, low_risk) {
            (DivisionRule::HighRiskDecreasing, false) => Allocation::Decreasing,
            (DivisionRule::HighRiskDecreasing, true) => Allocation::Flat,
            (DivisionRule::LowRiskDecreasing, true) => Allocation::Decreasing,
            (DivisionRule::LowRiskDecreasing, false) => Allocation::Flat,
        }
    }
}

/// Population weights of the two allocation branches. Always sums to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationMix {
    pub decreasing: f64,
    pub flat: f64,
}

impl AllocationMix {
    pub const FLAT_ONLY: AllocationMix = AllocationMix {
        decreasing: 0.0,
        flat: 1.0,
    };

    pub const DECREASING_ONLY: AllocationMix = AllocationMix {
        decreasing: 1.0,
        flat: 0.0,
    };

    pub fn new(decreasing: f64, flat: f64) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&decreasing)
            && (0.0..=1.0).contains(&flat)
            && ((decreasing + flat) - 1.0).abs() <= 1e-12;
        if !ok {
            return Err(param(format!(
                "mixture weights must be in [0,1] and sum to 1, got ({decreasing}, {flat})"
            )));
        }
        Ok(Self { decreasing, flat })
    }

    /// Branch masses implied by the risk distribution under `rule`.
    pub fn from_risk(params: &RiskModelParams, rule: DivisionRule) -> Self {
        // Mass at or below the division point and its complement.
        let below = p_dec(params);
        let above = p_flat(params);
        match rule {
            DivisionRule::HighRiskDecreasing => AllocationMix {
                decreasing: above,
                flat: below,
            },
            DivisionRule::LowRiskDecreasing => AllocationMix {
                decreasing: below,
                flat: above,
            },
        }
    }

    pub fn weight(&self, branch: Allocation) -> f64 {
        match branch {
            Allocation::Decreasing => self.decreasing,
            Allocation::Flat => self.flat,
        }
    }

    /// Branches with non-zero weight.
    pub fn branches(&self) -> impl Iterator<Item = (Allocation, f64)> + '_ {
        [(Allocation::Decreasing, self.decreasing), (Allocation::Flat, self.flat)]
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
    }
}

/// Density of psi. Returns 0 for negative psi and a domain error at exactly
/// zero, where the density has an integrable singularity.
pub fn psi_pdf(psi: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(param(format!("sigma must be > 0, got {sigma}")));
    }
    if psi < 0.0 {
        return Ok(0.0);
    }
    if psi == 0.0 {
        return Err(Error::Domain("psi_pdf is singular at psi = 0".into()));
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    Ok(norm * psi.powf(-0.5) * (-psi / (2.0 * sigma * sigma)).exp())
}

/// `P(Psi <= psi) = erf(sqrt(psi) / (sqrt(2) sigma))`.
pub fn psi_cdf(psi: f64, sigma: f64) -> f64 {
    if psi <= 0.0 {
        return 0.0;
    }
    erf(psi.sqrt() / (std::f64::consts::SQRT_2 * sigma))
}

/// Category `k = ceil(psi / Q)` clamped into `1..=K`.
pub fn categorize(psi: f64, params: &RiskModelParams) -> u32 {
    if !(psi > 0.0) {
        return 1;
    }
    let raw = (psi / params.step_size).ceil();
    if raw >= f64::from(params.num_categories) {
        params.num_categories
    } else {
        (raw as u32).max(1)
    }
}

/// Psi mass on `[0, Q * ceil(K/2)]`.
pub fn p_dec(params: &RiskModelParams) -> f64 {
    erf(params.division_psi().sqrt() / (std::f64::consts::SQRT_2 * params.sigma))
}

/// Psi mass above `Q * ceil(K/2)`.
pub fn p_flat(params: &RiskModelParams) -> f64 {
    1.0 - p_dec(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference_params() -> RiskModelParams {
        RiskModelParams::default()
    }

    #[test]
    fn pdf_matches_scaled_chi_square() {
        // Psi / sigma^2 ~ chi2(1): f(psi) = chi2_pdf(psi / s2) / s2
        let sigma: f64 = 5.0;
        let s2 = sigma * sigma;
        let x = 25.0 / s2;
        let chi2 = (-x / 2.0).exp() / ((2.0 * std::f64::consts::PI * x).sqrt());
        let got = psi_pdf(25.0, sigma).unwrap();
        assert_abs_diff_eq!(got, chi2 / s2, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.009_678_828_980_765_734, epsilon = 1e-15);
    }

    #[test]
    fn pdf_edges() {
        assert_eq!(psi_pdf(-1.0, 5.0).unwrap(), 0.0);
        assert!(matches!(psi_pdf(0.0, 5.0), Err(Error::Domain(_))));
        assert!(psi_pdf(1.0, 0.0).is_err());
    }

    #[test]
    fn one_sigma_mass() {
        assert_abs_diff_eq!(psi_cdf(25.0, 5.0), 0.682_689_492_137_085_9, epsilon = 1e-14);
    }

    #[test]
    fn categorize_examples() {
        let p = reference_params();
        assert_eq!(categorize(12.0, &p), 3);
        assert_eq!(categorize(0.0, &p), 1);
        assert_eq!(categorize(1e6, &p), 11);
        // band edges are right-closed
        assert_eq!(categorize(10.0, &p), 2);
        assert_eq!(categorize(10.000_001, &p), 3);
        assert_eq!(categorize(55.0, &p), 11);
    }

    #[test]
    fn division_masses() {
        let p = reference_params();
        assert_abs_diff_eq!(p_dec(&p), 0.726_678_321_707_701_9, epsilon = 1e-12);
        assert_abs_diff_eq!(p_flat(&p), 0.273_321_678_292_298_1, epsilon = 1e-12);

        let wide = RiskModelParams { sigma: 1e6, ..p };
        assert!(p_dec(&wide) < 1e-4);
        let many = RiskModelParams {
            num_categories: 1_000_000,
            ..p
        };
        assert_abs_diff_eq!(p_dec(&many), 1.0, epsilon = 1e-12);

        let two = RiskModelParams {
            num_categories: 2,
            step_size: 25.0,
            ..p
        };
        assert_abs_diff_eq!(p_flat(&two), 0.317_310_507_862_914_1, epsilon = 1e-12);
    }

    #[test]
    fn mix_follows_division_rule() {
        let p = reference_params();
        let high = AllocationMix::from_risk(&p, DivisionRule::HighRiskDecreasing);
        assert_abs_diff_eq!(high.decreasing, p_flat(&p), epsilon = 0.0);
        assert_abs_diff_eq!(high.flat, p_dec(&p), epsilon = 0.0);
        let labels = AllocationMix::from_risk(&p, DivisionRule::LowRiskDecreasing);
        assert_abs_diff_eq!(labels.decreasing, p_dec(&p), epsilon = 0.0);

        assert_eq!(DivisionRule::HighRiskDecreasing.branch(6, &p), Allocation::Flat);
        assert_eq!(DivisionRule::HighRiskDecreasing.branch(7, &p), Allocation::Decreasing);
        assert_eq!(DivisionRule::LowRiskDecreasing.branch(6, &p), Allocation::Decreasing);
    }

    #[test]
    fn mix_validation() {
        assert!(AllocationMix::new(0.3, 0.7).is_ok());
        assert!(AllocationMix::new(0.3, 0.6).is_err());
        assert!(AllocationMix::new(-0.1, 1.1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn categorize_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let p = reference_params();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(categorize(lo, &p) <= categorize(hi, &p));
        }

        #[test]
        fn masses_complement(sigma in 0.1f64..50.0, k in 2u32..40, q in 0.1f64..20.0) {
            let p = RiskModelParams { sigma, num_categories: k, step_size: q, speed_limit: 0.0 };
            proptest::prop_assert_eq!(p_dec(&p) + p_flat(&p), 1.0);
        }
    }

    #[test]
    fn categorize_surjective() {
        let p = reference_params();
        let mut seen = vec![false; p.num_categories as usize + 1];
        let mut psi = 0.0;
        while psi <= 55.0 {
            seen[categorize(psi, &p) as usize] = true;
            psi += 0.25;
        }
        assert!(seen[1..].iter().all(|&s| s));
    }
}
