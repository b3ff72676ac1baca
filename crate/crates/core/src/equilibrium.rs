//! Equilibrium of the unconstrained game and of the demographic-parity game.
//!
//! The threshold θ is an equilibrium when the mass of candidates above it,
//! with every group best-responding to θ, equals α. That mass is strictly
//! decreasing in θ and jumps down exactly at each group's dropout threshold,
//! so the solver first locates the equilibrium relative to the sorted
//! dropouts and then either pins θ to a dropout (one group mixes) or solves
//! the smooth budget equation on the segment between two dropouts.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::best_response::{effort_bound, Responder, Side};
use crate::error::{Error, Result};
use crate::math::{find_root, quantile_unchecked, normal_sf, RootConfig};
use crate::metrics::strategy_quality;
use crate::model::{EffortDistribution, GameConfig, GroupModel};

const DROPOUT_MATCH_RTOL: f64 = 1e-9;
const TAU_SLACK: f64 = 1e-6;
const BUDGET_ROOT: RootConfig = RootConfig { abs_tol: 1e-12, max_iter: 300 };

/// Selected mass at θ. When θ sits on a group's dropout the two values use
/// that group's low and high best response; otherwise they coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessMassEvaluation {
    pub theta: f64,
    pub mass_lo: f64,
    pub mass_hi: f64,
}

impl ExcessMassEvaluation {
    pub fn straddles(&self, alpha: f64) -> bool {
        self.mass_lo <= alpha && alpha <= self.mass_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Unconstrained,
    DemographicParity,
}

/// How the budget constraint was met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// The mass curve crosses α continuously; every group plays a pure strategy.
    Smooth,
    /// θ sits on a dropout threshold and that group mixes its two responses.
    DropoutPinned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub label: String,
    pub share: f64,
    pub sigma_tilde: f64,
    /// Threshold this group faces: the global one, or its own under parity.
    pub threshold: f64,
    pub strategy: EffortDistribution,
    pub avg_effort: f64,
    pub selection_rate: f64,
    /// This group's contribution E(W·1{selected}) before weighting by share.
    pub quality: f64,
    pub dropout: Option<f64>,
    /// Weight on the high response when this group sits on its dropout.
    pub tau: Option<f64>,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub mode: SolveMode,
    /// Global threshold; `None` under demographic parity.
    pub threshold: Option<f64>,
    pub groups: Vec<GroupOutcome>,
    pub quality: f64,
    pub mixing_group: Option<String>,
    pub tau: Option<f64>,
    pub regime: Regime,
}

impl EquilibriumReport {
    pub fn group(&self, label: &str) -> Option<&GroupOutcome> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.threshold).collect()
    }

    pub fn strategies(&self) -> Vec<EffortDistribution> {
        self.groups.iter().map(|g| g.strategy.clone()).collect()
    }

    /// Σ p_G·x̄_G.
    pub fn selected_mass(&self) -> f64 {
        self.groups.iter().map(|g| g.share * g.selection_rate).sum()
    }
}

/// Raw solution of the budget equation for a list of groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub theta: f64,
    pub strategies: Vec<EffortDistribution>,
    pub taus: Vec<Option<f64>>,
    pub mixing: Option<usize>,
    pub regime: Regime,
}

/// Precomputed responders and dropouts for one game.
#[derive(Debug, Clone)]
pub struct Game {
    pub responders: Vec<Responder>,
    pub reward: f64,
    pub alpha: f64,
}

impl Game {
    pub fn new(models: &[GroupModel], reward: f64, alpha: f64) -> Result<Self> {
        let responders = models
            .iter()
            .map(|g| Responder::new(*g, reward))
            .collect::<Result<_>>()?;
        Ok(Self { responders, reward, alpha })
    }

    pub fn from_config(config: &GameConfig) -> Result<Self> {
        config.validate()?;
        Self::new(&config.group_models(), config.reward, config.alpha)
    }

    fn at_dropout(&self, g: usize, theta: f64) -> bool {
        self.responders[g]
            .dropout_theta()
            .is_some_and(|d| (theta - d).abs() <= DROPOUT_MATCH_RTOL * d.abs().max(1.0))
    }

    fn rate(&self, g: usize, theta: f64, side: Side) -> Result<f64> {
        let r = &self.responders[g];
        let m = r.respond(theta, side)?;
        Ok(r.selection_probability(m, theta))
    }

    /// Mass above θ with group `g` on `side(g)`.
    fn mass_with(&self, theta: f64, side: impl Fn(usize) -> Side) -> Result<f64> {
        let mut total = 0.0;
        for (g, r) in self.responders.iter().enumerate() {
            total += r.group.share * self.rate(g, theta, side(g))?;
        }
        Ok(total)
    }

    pub fn excess_mass(&self, theta: f64) -> Result<ExcessMassEvaluation> {
        let sides = |at: Side| {
            move |g: usize| {
                if self.at_dropout(g, theta) {
                    at
                } else {
                    self.responders[g].side_of(theta, Side::High)
                }
            }
        };
        Ok(ExcessMassEvaluation {
            theta,
            mass_lo: self.mass_with(theta, sides(Side::Low))?,
            mass_hi: self.mass_with(theta, sides(Side::High))?,
        })
    }

    /// h(θ) = mass − α away from dropouts (at one, the high side).
    fn h(&self, theta: f64) -> Result<f64> {
        Ok(self.excess_mass(theta)?.mass_hi - self.alpha)
    }

    /// θ solving Σ p·Φᶜ((θ − shift_G)/σ̃_G) = α.
    fn shifted_quantile(&self, shift: impl Fn(&Responder) -> f64) -> Result<f64> {
        let z = quantile_unchecked(1.0 - self.alpha);
        let singles: Vec<f64> = self
            .responders
            .iter()
            .map(|r| shift(r) + r.group.sigma * z)
            .collect();
        let lo = singles.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = singles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Ok(lo);
        }
        let f = |theta: f64| {
            self.responders
                .iter()
                .map(|r| r.group.share * normal_sf((theta - shift(r)) / r.group.sigma))
                .sum::<f64>()
                - self.alpha
        };
        find_root(f, lo, hi, BUDGET_ROOT)
    }

    /// Thresholds bounding the equilibrium: everyone at zero effort, and
    /// everyone at the largest effort any best response can take.
    pub fn bracket(&self) -> Result<(f64, f64)> {
        let lo = self.shifted_quantile(|_| 0.0)?;
        let hi = self.shifted_quantile(|r| effort_bound(&r.group, self.reward))?;
        Ok((lo, hi))
    }

    /// Solves over the full bracket.
    pub fn solve(&self) -> Result<Solution> {
        let bracket = self.bracket()?;
        self.solve_within(bracket, bracket)
    }

    /// Solves starting from the bracket `start`. An endpoint on the wrong
    /// side of the equilibrium is reset to the matching end of the full
    /// bracket.
    pub fn solve_from(&self, start: (f64, f64)) -> Result<Solution> {
        let full = self.bracket()?;
        self.solve_within(start, full)
    }

    fn solve_within(&self, start: (f64, f64), full: (f64, f64)) -> Result<Solution> {
        let (mut a, mut b) = (start.0.min(start.1), start.0.max(start.1));
        if self.h(a)? < 0.0 {
            a = full.0;
        }
        if self.h(b)? > 0.0 {
            b = full.1;
        }

        // Dropouts strictly inside (a, b), clustered when numerically equal.
        let mut order: Vec<usize> = (0..self.responders.len())
            .filter(|&g| self.responders[g].dropout_theta().is_some_and(|d| d > a && d < b))
            .collect();
        order.sort_by(|&i, &j| {
            let (di, dj) = (self.dropout_of(i), self.dropout_of(j));
            di.total_cmp(&dj).then(i.cmp(&j))
        });
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for g in order {
            match clusters.last_mut() {
                Some(c) if self.at_dropout(g, self.dropout_of(c[0])) => c.push(g),
                _ => clusters.push(vec![g]),
            }
        }

        let mut seg_lo = a;
        let mut seg_hi = b;
        for cluster in &clusters {
            let d = self.dropout_of(cluster[0]);
            let in_cluster = |g: usize| cluster.contains(&g);
            let side = |at: Side| {
                move |g: usize| {
                    if in_cluster(g) {
                        at
                    } else {
                        self.responders[g].side_of(d, Side::High)
                    }
                }
            };
            let mass_lo = self.mass_with(d, side(Side::Low))?;
            if mass_lo > self.alpha {
                seg_lo = d;
                continue;
            }
            let mass_hi = self.mass_with(d, side(Side::High))?;
            if mass_hi >= self.alpha {
                return self.pinned(d, cluster, mass_lo);
            }
            seg_hi = d;
            break;
        }
        self.smooth(seg_lo, seg_hi)
    }

    fn dropout_of(&self, g: usize) -> f64 {
        self.responders[g].dropout_theta().unwrap_or(f64::NAN)
    }

    fn smooth(&self, lo: f64, hi: f64) -> Result<Solution> {
        let mid = 0.5 * (lo + hi);
        let sides: Vec<Side> = self
            .responders
            .iter()
            .map(|r| r.side_of(mid, Side::High))
            .collect();
        let f = |theta: f64| match self.mass_with(theta, |g| sides[g]) {
            Ok(m) => m - self.alpha,
            Err(_) => f64::NAN,
        };
        let theta = find_root(f, lo, hi, BUDGET_ROOT)?;
        let strategies = self
            .responders
            .iter()
            .zip(&sides)
            .map(|(r, &s)| r.respond(theta, s).map(EffortDistribution::point))
            .collect::<Result<_>>()?;
        Ok(Solution {
            theta,
            strategies,
            taus: vec![None; self.responders.len()],
            mixing: None,
            regime: Regime::Smooth,
        })
    }

    /// θ fixed at the dropout `d` shared by `cluster`; their weights on the
    /// high response make the budget bind exactly.
    fn pinned(&self, d: f64, cluster: &[usize], mass_lo: f64) -> Result<Solution> {
        let n = self.responders.len();
        let mut strategies = Vec::with_capacity(n);
        let mut extremes = vec![(0.0, 0.0); n];
        for (g, r) in self.responders.iter().enumerate() {
            if cluster.contains(&g) {
                extremes[g] = (r.respond(d, Side::Low)?, r.respond(d, Side::High)?);
            }
            strategies.push(EffortDistribution::point(r.respond(d, r.side_of(d, Side::High))?));
        }

        // Groups whose dropouts coincide share one mixing weight, so identical
        // groups play identical strategies. The reported mixing group is the
        // one with the widest dropout window.
        let width = |g: usize| {
            let w = self.responders[g].dropout.as_ref().map(|x| x.window).unwrap_or((0.0, 0.0));
            w.1 - w.0
        };
        let mixing = cluster.iter().copied().min_by(|&i, &j| width(j).total_cmp(&width(i)).then(i.cmp(&j)));
        if cluster.len() > 1 {
            warn!("dropout thresholds of groups {cluster:?} coincide at {d}; using a common mixing weight");
        }

        let span: f64 = cluster
            .iter()
            .map(|&g| {
                let r = &self.responders[g];
                let (low, high) = extremes[g];
                r.group.share * (r.selection_probability(high, d) - r.selection_probability(low, d))
            })
            .sum();
        let raw = if span > 0.0 { (self.alpha - mass_lo) / span } else { 0.0 };
        if !(-TAU_SLACK..=1.0 + TAU_SLACK).contains(&raw) {
            let g = mixing.unwrap_or(cluster[0]);
            return Err(Error::MixingOutOfRange { group: g.to_string(), tau: raw });
        }
        let tau = raw.clamp(0.0, 1.0);
        let mut taus = vec![None; n];
        for &g in cluster {
            let (low, high) = extremes[g];
            taus[g] = Some(tau);
            strategies[g] = EffortDistribution::mixture(low, high, tau);
        }

        Ok(Solution { theta: d, strategies, taus, mixing, regime: Regime::DropoutPinned })
    }
}

/// Selected mass at θ for a validated configuration.
pub fn excess_mass(theta: f64, config: &GameConfig) -> Result<ExcessMassEvaluation> {
    Game::from_config(config)?.excess_mass(theta)
}

/// The bracket (θ_lo, θ_hi) that always contains the equilibrium threshold.
pub fn solver_bracket(config: &GameConfig) -> Result<(f64, f64)> {
    Game::from_config(config)?.bracket()
}

fn outcome(
    config: &GameConfig,
    g: usize,
    responder: &Responder,
    theta: f64,
    strategy: EffortDistribution,
    tau: Option<f64>,
    regime: Regime,
) -> GroupOutcome {
    let model = responder.group;
    let selection_rate = strategy
        .support
        .iter()
        .map(|&(m, w)| w * responder.selection_probability(m, theta))
        .sum();
    GroupOutcome {
        label: config.groups[g].label.clone(),
        share: config.groups[g].share,
        sigma_tilde: model.sigma,
        threshold: theta,
        avg_effort: strategy.mean(),
        selection_rate,
        quality: strategy_quality(&strategy, theta, &model),
        dropout: responder.dropout_theta(),
        tau,
        regime,
        strategy,
    }
}

fn unconstrained_report(config: &GameConfig, game: &Game, sol: Solution) -> EquilibriumReport {
    let groups: Vec<GroupOutcome> = sol
        .strategies
        .into_iter()
        .enumerate()
        .map(|(g, s)| {
            let regime = if sol.taus[g].is_some() { Regime::DropoutPinned } else { Regime::Smooth };
            outcome(config, g, &game.responders[g], sol.theta, s, sol.taus[g], regime)
        })
        .collect();
    let quality = groups.iter().map(|g| g.share * g.quality).sum();
    EquilibriumReport {
        mode: SolveMode::Unconstrained,
        threshold: Some(sol.theta),
        quality,
        mixing_group: sol.mixing.map(|g| groups[g].label.clone()),
        tau: sol.mixing.and_then(|g| sol.taus[g]),
        regime: sol.regime,
        groups,
    }
}

/// Equilibrium of the unconstrained game.
pub fn solve_unconstrained(config: &GameConfig) -> Result<EquilibriumReport> {
    let game = Game::from_config(config)?;
    let sol = game.solve()?;
    Ok(unconstrained_report(config, &game, sol))
}

/// As [`solve_unconstrained`], starting from the bracket `start`.
pub fn solve_unconstrained_from(config: &GameConfig, start: (f64, f64)) -> Result<EquilibriumReport> {
    let game = Game::from_config(config)?;
    let sol = game.solve_from(start)?;
    Ok(unconstrained_report(config, &game, sol))
}

/// Equilibrium under demographic parity: every group is selected at rate α,
/// which splits the game into one independent single-group game per group.
pub fn solve_demographic_parity(config: &GameConfig) -> Result<EquilibriumReport> {
    config.validate()?;
    let mut groups = Vec::with_capacity(config.groups.len());
    let mut mixing: Option<(String, Option<f64>)> = None;
    for g in 0..config.groups.len() {
        let model = GroupModel { share: 1.0, ..config.group_model(g) };
        let game = Game::new(&[model], config.reward, config.alpha)?;
        let sol = game.solve()?;
        let strategy = sol.strategies.into_iter().next().expect("one group");
        let o = outcome(config, g, &game.responders[0], sol.theta, strategy, sol.taus[0], sol.regime);
        if sol.regime == Regime::DropoutPinned && mixing.is_none() {
            mixing = Some((o.label.clone(), o.tau));
        }
        groups.push(o);
    }
    let quality = groups.iter().map(|g| g.share * g.quality).sum();
    let regime = if groups.iter().any(|g| g.regime == Regime::DropoutPinned) {
        Regime::DropoutPinned
    } else {
        Regime::Smooth
    };
    let (mixing_group, tau) = match mixing {
        Some((l, t)) => (Some(l), t),
        None => (None, None),
    };
    Ok(EquilibriumReport {
        mode: SolveMode::DemographicParity,
        threshold: None,
        groups,
        quality,
        mixing_group,
        tau,
        regime,
    })
}
