//! Summary statistics of an equilibrium and the closed-form predictions
//! they are checked against.

use serde::{Deserialize, Serialize};

use crate::best_response::critical_reward;
use crate::equilibrium::EquilibriumReport;
use crate::error::{Error, Result};
use crate::math::{lambert_w, normal_cdf, normal_pdf, normal_sf, Branch};
use crate::model::{EffortDistribution, GameConfig, GroupModel};

pub fn average_effort(strategy: &EffortDistribution) -> f64 {
    strategy.mean()
}

/// x̄ = Σ w·Φ((m−θ)/σ̃).
pub fn selection_rate(strategy: &EffortDistribution, theta: f64, group: &GroupModel) -> f64 {
    strategy
        .support
        .iter()
        .map(|&(m, w)| w * normal_cdf((m - theta) / group.sigma))
        .sum()
}

/// E(W·1{score ≥ θ}) for one group playing `strategy`, from the mean of a
/// bivariate normal truncated on the score.
pub fn strategy_quality(strategy: &EffortDistribution, theta: f64, group: &GroupModel) -> f64 {
    let s = group.sigma;
    strategy
        .support
        .iter()
        .map(|&(m, w)| w * (m * normal_cdf((m - theta) / s) + group.loading * normal_pdf((theta - m) / s)))
        .sum()
}

/// Q = Σ p_G·E(W_G·1{selected}), each group at the threshold it faces.
pub fn selection_quality(report: &EquilibriumReport, config: &GameConfig) -> f64 {
    report
        .groups
        .iter()
        .enumerate()
        .map(|(g, out)| {
            let model = config.group_model(g);
            model.share * strategy_quality(&out.strategy, out.threshold, &model)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostRegime {
    EqualCost,
    CostGap,
}

/// Limit of μ̄ᵘⁿ_G/μ̄ᵈᵖ_G for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRatio {
    pub label: String,
    pub ratio: f64,
}

/// Large-reward limits for a two-group game. The advantaged group is the
/// one whose dropout threshold is asymptotically larger: the lower cost, or
/// at equal cost the smaller σ̃. Ratios are disadvantaged over advantaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPrediction {
    pub regime: CostRegime,
    pub advantaged: String,
    pub disadvantaged: String,
    pub predicted_rate_ratio: f64,
    pub predicted_effort_ratio: f64,
    /// Qᵘⁿ/Qᵈᵖ.
    pub predicted_quality_ratio: f64,
    pub dp_effort_ratio: f64,
    pub comparison_ratios: Vec<ComparisonRatio>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn require_two(config: &GameConfig) -> Result<()> {
    match config.groups.len() {
        2 => Ok(()),
        found => Err(Error::GroupCount { expected: 2, found }),
    }
}

pub fn asymptotic_predictions(config: &GameConfig) -> Result<AsymptoticPrediction> {
    require_two(config)?;
    let (g0, g1) = (config.group_model(0), config.group_model(1));
    let regime = if same(g0.cost, g1.cost) { CostRegime::EqualCost } else { CostRegime::CostGap };
    let adv = match regime {
        CostRegime::CostGap => usize::from(g1.cost < g0.cost),
        CostRegime::EqualCost if same(g0.sigma, g1.sigma) => return Err(Error::AmbiguousRegime),
        CostRegime::EqualCost => usize::from(g1.sigma < g0.sigma),
    };
    let dis = 1 - adv;
    let (a, d) = (config.group_model(adv), config.group_model(dis));
    let alpha = config.alpha;
    let p_adv = a.share;
    let p_dis = d.share;
    let c = match regime {
        CostRegime::EqualCost => 1.0,
        CostRegime::CostGap => (a.cost / d.cost).sqrt(),
    };
    let crowded = alpha <= p_adv;

    let rate_ratio = if crowded { 0.0 } else { (alpha - p_adv) / (1.0 - p_adv) };
    let quality_ratio = if crowded { 1.0 / (c * p_dis + p_adv) } else { c / (c * p_dis + p_adv) };
    let (cmp_adv, cmp_dis) = if crowded {
        (1.0 / p_adv, 0.0)
    } else {
        (c / alpha, (alpha - p_adv) / (alpha * (1.0 - p_adv)))
    };
    let label = |i: usize| config.groups[i].label.clone();
    let mut comparison_ratios = vec![
        ComparisonRatio { label: label(adv), ratio: cmp_adv },
        ComparisonRatio { label: label(dis), ratio: cmp_dis },
    ];
    comparison_ratios.sort_by_key(|r| config.group_index(&r.label));

    Ok(AsymptoticPrediction {
        regime,
        advantaged: label(adv),
        disadvantaged: label(dis),
        predicted_rate_ratio: rate_ratio,
        predicted_effort_ratio: rate_ratio,
        predicted_quality_ratio: match regime {
            CostRegime::EqualCost => 1.0,
            CostRegime::CostGap => quality_ratio,
        },
        dp_effort_ratio: c,
        comparison_ratios,
    })
}

/// Closed forms for a two-group game below both critical rewards. The first
/// group in the config plays the role of H and the second of L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallSCrossings {
    /// θ − m at which both groups exert equal effort; `None` when no real
    /// solution exists.
    pub k_mu: Option<f64>,
    pub k_x: f64,
    pub xi: f64,
    /// The two α values with equal average effort, ascending.
    pub alpha_effort_cross: Option<(f64, f64)>,
    /// α at which both groups are selected at equal rates; the first group
    /// is selected less below it.
    pub alpha_rate_cross: f64,
    /// (Φᶜ(K_x), Φᶜ(−K_x)), the unsigned candidates for the same crossing.
    pub alpha_rate_unsigned: (f64, f64),
}

pub fn small_s_crossings(config: &GameConfig) -> Result<SmallSCrossings> {
    require_two(config)?;
    let s = config.reward;
    for g in 0..2 {
        let model = config.group_model(g);
        let bound = critical_reward(&model);
        if s >= bound {
            return Err(Error::SubcriticalityViolated {
                group: config.groups[g].label.clone(),
                reward: s,
                bound,
            });
        }
    }
    let (h, l) = (config.group_model(0), config.group_model(1));
    if same(h.sigma, l.sigma) {
        return Err(Error::DegenerateVariance(h.sigma));
    }

    let k_mu_sq = -2.0 * (h.cost * h.sigma / (l.cost * l.sigma)).ln()
        / (1.0 / (h.sigma * h.sigma) - 1.0 / (l.sigma * l.sigma));
    let k_mu = (k_mu_sq >= 0.0).then(|| k_mu_sq.sqrt());
    let alpha_effort_cross = k_mu.map(|k| {
        let at = |z: f64| h.share * normal_sf(z / h.sigma) + l.share * normal_sf(z / l.sigma);
        (at(k), at(-k))
    });

    let xi = s * (1.0 / (h.cost * h.sigma) - 1.0 / (l.cost * l.sigma)) / (l.sigma - h.sigma);
    let k_x = lambert_w(Branch::Principal, xi * xi / (2.0 * std::f64::consts::PI))?.sqrt();
    let signed = if xi == 0.0 { 0.0 } else { k_x.copysign(xi) };

    Ok(SmallSCrossings {
        k_mu,
        k_x,
        xi,
        alpha_effort_cross,
        alpha_rate_cross: 1.0 - normal_cdf(signed),
        alpha_rate_unsigned: (normal_sf(k_x), normal_sf(-k_x)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupParams;

    fn two(s: f64, alpha: f64, h: (f64, f64), l: (f64, f64)) -> GameConfig {
        GameConfig {
            reward: s,
            alpha,
            eta_sq: 1.0,
            dm_mode: Default::default(),
            groups: vec![
                GroupParams::with_sigma("H", 0.5, h.0, h.1),
                GroupParams::with_sigma("L", 0.5, l.0, l.1),
            ],
        }
    }

    #[test]
    fn effort_and_rate_examples() {
        assert_eq!(average_effort(&EffortDistribution::point(1.7)), 1.7);
        assert_eq!(average_effort(&EffortDistribution { support: vec![(0.0, 0.5), (2.0, 0.5)] }), 1.0);
        let g = GroupModel::new(1.0, 1.0, 0.3);
        assert_eq!(selection_rate(&EffortDistribution::point(2.0), 2.0, &g), 0.5);
    }

    #[test]
    fn quality_examples() {
        let g = GroupModel::new(1.0, 1.0, 1.0);
        let q = strategy_quality(&EffortDistribution::point(0.0), 0.0, &g);
        assert!((q - 0.398_942_280_401_432_7).abs() < 1e-15);
        let mix = EffortDistribution { support: vec![(1.0, 0.25), (3.0, 0.75)] };
        let q = strategy_quality(&mix, -60.0, &g);
        assert!((q - mix.mean()).abs() < 1e-12);
    }

    #[test]
    fn rate_ratio_equal_cost() {
        let p = asymptotic_predictions(&two(1000.0, 0.7, (1.0, 0.6), (1.0, 1.0))).unwrap();
        assert_eq!(p.regime, CostRegime::EqualCost);
        assert_eq!(p.advantaged, "H");
        assert!((p.predicted_rate_ratio - 0.4).abs() < 1e-15);
        assert_eq!(p.predicted_quality_ratio, 1.0);
        assert_eq!(p.dp_effort_ratio, 1.0);
    }

    #[test]
    fn quality_ratio_cost_gap() {
        let p = asymptotic_predictions(&two(1000.0, 0.7, (1.5, 0.6), (1.0, 1.0))).unwrap();
        assert_eq!(p.regime, CostRegime::CostGap);
        assert_eq!(p.advantaged, "L");
        let c = (1.0f64 / 1.5).sqrt();
        assert!((p.predicted_quality_ratio - c / (c * 0.5 + 0.5)).abs() < 1e-15);
        assert!((p.predicted_quality_ratio - 0.8990).abs() < 1e-4);
        let low = asymptotic_predictions(&two(1000.0, 0.3, (1.5, 0.6), (1.0, 1.0))).unwrap();
        assert!((low.predicted_quality_ratio - 1.0 / (c * 0.5 + 0.5)).abs() < 1e-15);
        assert!((low.dp_effort_ratio - c).abs() < 1e-15);
    }

    #[test]
    fn symmetric_is_ambiguous() {
        let r = asymptotic_predictions(&two(10.0, 0.3, (1.0, 1.0), (1.0, 1.0)));
        assert_eq!(r, Err(Error::AmbiguousRegime));
    }

    #[test]
    fn small_s_balanced_products() {
        // C·σ̃ equal across groups: K_μ = 0, ξ = 0.
        let c = two(0.5, 0.3, (2.0, 0.5), (1.0, 1.0));
        let x = small_s_crossings(&c).unwrap();
        assert_eq!(x.k_mu, Some(0.0));
        assert_eq!(x.alpha_effort_cross, Some((0.5, 0.5)));
        assert_eq!(x.xi, 0.0);
        assert_eq!(x.alpha_rate_cross, 0.5);
    }

    #[test]
    fn small_s_errors() {
        let c = two(10.0, 0.3, (1.0, 0.6), (1.0, 1.0));
        assert!(matches!(small_s_crossings(&c), Err(Error::SubcriticalityViolated { .. })));
        let c = two(0.5, 0.3, (1.0, 1.0), (2.0, 1.0));
        assert_eq!(small_s_crossings(&c), Err(Error::DegenerateVariance(1.0)));
    }

    #[test]
    fn small_s_no_effort_crossing() {
        // C_H·σ̃_H > C_L·σ̃_L with σ̃_H < σ̃_L.
        let x = small_s_crossings(&two(0.5, 0.3, (3.0, 0.6), (1.0, 1.0))).unwrap();
        assert!(x.k_mu.is_none());
        assert!(x.alpha_effort_cross.is_none());
    }
}
