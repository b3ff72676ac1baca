//! A single candidate's problem: maximize S·Φ((m−θ)/σ̃) − C·m²/2 over m ≥ 0.
//!
//! In z = (m−θ)/σ̃ the first-order condition reads v(z) = C·θ with
//! v(z) = (S/σ̃)φ(z) − Cσ̃z. Once S ≥ Cσ̃²/φ(1), v has a local minimum at z₁
//! and a local maximum at z₂, both available in closed form through the two
//! real Lambert W branches. For θ strictly between θ₁ = v(z₁)/C and
//! θ₂ = v(z₂)/C the condition has three roots (max, min, max); elsewhere one.
//! The dropout threshold is the unique θ in that window at which the two
//! local maxima pay the same.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, find_root, normal_cdf, normal_pdf, Branch, RootConfig};
use crate::model::GroupModel;

/// Probability that a candidate with effort `m` clears threshold `theta`.
#[inline]
pub fn selection_probability(m: f64, theta: f64, sigma: f64) -> f64 {
    normal_cdf((m - theta) / sigma)
}

#[inline]
pub fn payoff(m: f64, theta: f64, group: &GroupModel, reward: f64) -> f64 {
    reward * selection_probability(m, theta, group.sigma) - 0.5 * group.cost * m * m
}

/// ∂payoff/∂m.
#[inline]
pub fn marginal_payoff(m: f64, theta: f64, group: &GroupModel, reward: f64) -> f64 {
    reward / group.sigma * normal_pdf((m - theta) / group.sigma) - group.cost * m
}

/// ∂²payoff/∂m².
pub fn payoff_curvature(m: f64, theta: f64, group: &GroupModel, reward: f64) -> f64 {
    let s = group.sigma;
    reward / s * normal_pdf((theta - m) / s) * (theta - m) / (s * s) - group.cost
}

/// Smallest reward for which the payoff can have two local maxima.
pub fn critical_reward(group: &GroupModel) -> f64 {
    group.cost * group.sigma * group.sigma / normal_pdf(1.0)
}

/// Largest effort any best response can take: payoff(0) > 0 forces
/// C·m²/2 < S.
pub fn effort_bound(group: &GroupModel, reward: f64) -> f64 {
    (2.0 * reward / group.cost).sqrt()
}

/// The θ-interval on which the first-order condition has three roots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutWindow {
    pub z1: f64,
    pub z2: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl DropoutWindow {
    pub fn contains(&self, theta: f64) -> bool {
        theta > self.theta1 && theta < self.theta2
    }
}

/// The window, or `None` below the critical reward.
pub fn dropout_window(group: &GroupModel, reward: f64) -> Result<Option<DropoutWindow>> {
    let (c, s) = (group.cost, group.sigma);
    if reward < critical_reward(group) {
        return Ok(None);
    }
    let arg = -2.0 * std::f64::consts::PI * (c * s * s / reward).powi(2);
    // Rounding can push the argument a hair past −1/e at the critical reward.
    let arg = arg.max(math::NEG_INV_E);
    let z1 = -(-math::lambert_w(Branch::MinusOne, arg)?).sqrt();
    let z2 = -(-math::lambert_w(Branch::Principal, arg)?).sqrt();
    let v = |z: f64| (reward / s * normal_pdf(z) - c * s * z) / c;
    Ok(Some(DropoutWindow { z1, z2, theta1: v(z1), theta2: v(z2) }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    LocalMax,
    LocalMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub effort: f64,
    pub kind: PointKind,
}

/// Roots of the first-order condition, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoints {
    pub points: Vec<StationaryPoint>,
    pub z_brackets: Option<(f64, f64)>,
}

impl StationaryPoints {
    pub fn lowest(&self) -> f64 {
        self.points[0].effort
    }

    pub fn highest(&self) -> f64 {
        self.points[self.points.len() - 1].effort
    }
}

const FOC_ROOT: RootConfig = RootConfig { abs_tol: 1e-13, max_iter: 200 };

/// Root of the first-order condition on `[lo, hi]`. Where rounding has
/// erased the sign change (a root sitting on a region boundary), the
/// endpoint closer to zero is the root.
fn foc_root(theta: f64, g: &GroupModel, reward: f64, lo: f64, hi: f64) -> Result<f64> {
    let f = |m: f64| marginal_payoff(m, theta, g, reward);
    match find_root(f, lo, hi, FOC_ROOT) {
        Err(Error::NoBracket { f_lo, f_hi, .. }) => {
            Ok(if f_lo.abs() <= f_hi.abs() { lo } else { hi })
        }
        other => other,
    }
}

fn with_window(
    theta: f64,
    g: &GroupModel,
    reward: f64,
    window: Option<&DropoutWindow>,
) -> Result<StationaryPoints> {
    let cap = reward / (g.cost * g.sigma) * math::FRAC_1_SQRT_2PI;
    let z_brackets = window.map(|w| (w.z1, w.z2));
    let max = |effort| StationaryPoint { effort, kind: PointKind::LocalMax };
    match window {
        Some(w) if w.contains(theta) => {
            let m_a = (theta + g.sigma * w.z1).clamp(0.0, cap);
            let m_b = (theta + g.sigma * w.z2).clamp(m_a, cap);
            let m1 = foc_root(theta, g, reward, 0.0, m_a)?;
            let m2 = foc_root(theta, g, reward, m_a, m_b)?;
            let m3 = foc_root(theta, g, reward, m_b, cap)?;
            Ok(StationaryPoints {
                points: vec![
                    max(m1),
                    StationaryPoint { effort: m2, kind: PointKind::LocalMin },
                    max(m3),
                ],
                z_brackets,
            })
        }
        _ => {
            let m = foc_root(theta, g, reward, 0.0, cap)?;
            Ok(StationaryPoints { points: vec![max(m)], z_brackets })
        }
    }
}

/// All stationary points of the payoff at threshold `theta`.
pub fn stationary_points(theta: f64, group: &GroupModel, reward: f64) -> Result<StationaryPoints> {
    let window = dropout_window(group, reward)?;
    with_window(theta, group, reward, window.as_ref())
}

/// The set of payoff-maximizing efforts: one point, or two at the dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestResponse {
    Unique(f64),
    Tie { low: f64, high: f64 },
}

impl BestResponse {
    pub fn efforts(&self) -> Vec<f64> {
        match *self {
            BestResponse::Unique(m) => vec![m],
            BestResponse::Tie { low, high } => vec![low, high],
        }
    }
}

/// Global maximizer(s) of the payoff. Two local maxima whose payoffs differ
/// by at most 1e-9·S are reported as a tie.
pub fn best_response(theta: f64, group: &GroupModel, reward: f64) -> Result<BestResponse> {
    let sp = stationary_points(theta, group, reward)?;
    Ok(pick_global(&sp, theta, group, reward))
}

fn pick_global(sp: &StationaryPoints, theta: f64, group: &GroupModel, reward: f64) -> BestResponse {
    if sp.points.len() == 1 {
        return BestResponse::Unique(sp.lowest());
    }
    let (low, high) = (sp.lowest(), sp.highest());
    let gap = payoff(high, theta, group, reward) - payoff(low, theta, group, reward);
    if gap.abs() <= 1e-9 * reward {
        BestResponse::Tie { low, high }
    } else if gap > 0.0 {
        BestResponse::Unique(high)
    } else {
        BestResponse::Unique(low)
    }
}

/// Which local maximum a group plays relative to its dropout threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// θ at or above the dropout: the low-effort maximum.
    Low,
    /// θ at or below the dropout: the high-effort maximum.
    High,
}

/// Precomputed per-group data for repeated best-response queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responder {
    pub group: GroupModel,
    pub reward: f64,
    pub window: Option<DropoutWindow>,
    pub dropout: Option<DropoutInfo>,
}

impl Responder {
    pub fn new(group: GroupModel, reward: f64) -> Result<Self> {
        let window = dropout_window(&group, reward)?;
        let dropout = match dropout_threshold(&group, reward) {
            Ok(d) => Some(d),
            Err(Error::SubcriticalReward { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { group, reward, window, dropout })
    }

    pub fn dropout_theta(&self) -> Option<f64> {
        self.dropout.as_ref().map(|d| d.theta_d)
    }

    /// Best response on the given side of the dropout. Away from the
    /// three-root window both sides coincide.
    pub fn respond(&self, theta: f64, side: Side) -> Result<f64> {
        let sp = with_window(theta, &self.group, self.reward, self.window.as_ref())?;
        Ok(match side {
            Side::Low => sp.lowest(),
            Side::High => sp.highest(),
        })
    }

    /// Side of the dropout that `theta` falls on (ties go to `at_dropout`).
    pub fn side_of(&self, theta: f64, at_dropout: Side) -> Side {
        match self.dropout_theta() {
            Some(d) if theta > d => Side::Low,
            Some(d) if theta < d => Side::High,
            Some(_) => at_dropout,
            None => Side::High,
        }
    }

    /// Unique best response away from the dropout, chosen by position
    /// relative to θᵈ rather than by comparing payoffs.
    pub fn respond_unique(&self, theta: f64) -> Result<f64> {
        self.respond(theta, self.side_of(theta, Side::High))
    }

    /// Same as [`best_response`], reusing the precomputed window.
    pub fn best(&self, theta: f64) -> Result<BestResponse> {
        let sp = with_window(theta, &self.group, self.reward, self.window.as_ref())?;
        Ok(pick_global(&sp, theta, &self.group, self.reward))
    }

    pub fn selection_probability(&self, m: f64, theta: f64) -> f64 {
        selection_probability(m, theta, self.group.sigma)
    }
}

/// The dropout threshold θᵈ and the two best responses there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutInfo {
    pub theta_d: f64,
    pub br_min: f64,
    pub br_max: f64,
    /// (θ₁, θ₂): the three-root window that brackets θᵈ.
    pub window: (f64, f64),
    pub payoff_at_dropout: f64,
}

/// Locates θᵈ by bisection on Δ(θ) = payoff(m₃) − payoff(m₁), which falls
/// strictly from positive at θ₁ to negative at θ₂.
pub fn dropout_threshold(group: &GroupModel, reward: f64) -> Result<DropoutInfo> {
    let bound = critical_reward(group);
    let window = match dropout_window(group, reward)? {
        Some(w) if w.theta2 - w.theta1 >= 1e-9 => w,
        _ => return Err(Error::SubcriticalReward { reward, bound }),
    };

    let maxima = |theta: f64| -> Result<(f64, f64)> {
        let sp = with_window(theta, group, reward, Some(&window))?;
        Ok((sp.lowest(), sp.highest()))
    };
    let gap = |theta: f64, (lo, hi): (f64, f64)| {
        payoff(hi, theta, group, reward) - payoff(lo, theta, group, reward)
    };

    let (mut lo, mut hi) = (window.theta1, window.theta2);
    let width_tol = 1e-11 * window.theta2.max(1.0);
    let mut iterations = 0;
    while hi - lo > width_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid, maxima(mid)?) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
        if iterations > 400 {
            return Err(Error::NoConvergence { iterations, estimate: mid });
        }
    }
    let theta_d = 0.5 * (lo + hi);
    let (br_min, br_max) = maxima(theta_d)?;
    Ok(DropoutInfo {
        theta_d,
        br_min,
        br_max,
        window: (window.theta1, window.theta2),
        payoff_at_dropout: payoff(br_max, theta_d, group, reward),
    })
}
