//! Discrete-time learning dynamics on the unconstrained game.
//!
//! Both dynamics update every group at once. Best-response dynamics answers
//! the threshold realized in the previous step; fictitious play answers the
//! running mean of all thresholds realized so far. A group whose target
//! threshold sits exactly on its dropout splits evenly between its two
//! best responses.

use serde::{Deserialize, Serialize};

use crate::best_response::BestResponse;
use crate::equilibrium::Game;
use crate::error::Result;
use crate::math::{find_root, normal_cdf, RootConfig};
use crate::model::{EffortDistribution, GameConfig, GroupModel};

const CYCLE_TOL: f64 = 1e-7;
const MAX_PERIOD: usize = 50;
const CYCLE_REPEATS: usize = 3;
const CONVERGED_RUN: usize = 10;
const THRESHOLD_ROOT: RootConfig = RootConfig { abs_tol: 1e-12, max_iter: 300 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    Br,
    Fp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsState {
    pub strategies: Vec<EffortDistribution>,
    /// Threshold induced by `strategies`.
    pub theta: f64,
    pub t: usize,
    /// Fictitious play only: mean of the thresholds realized up to and
    /// including this step.
    pub belief: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Convergence {
    Converged { theta: f64 },
    Cycle { period: usize, thetas: Vec<f64> },
    MaxStepsReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub mode: DynamicsMode,
    pub states: Vec<DynamicsState>,
    /// Per step, per group.
    pub avg_efforts: Vec<Vec<f64>>,
    pub selection_rates: Vec<Vec<f64>>,
    pub convergence: Convergence,
    /// Per-group effort averaged over the detected cycle, or taken at the
    /// final state otherwise.
    pub window_avg_effort: Vec<f64>,
}

impl DynamicsTrace {
    /// The series convergence is judged on: the belief under fictitious
    /// play, the realized threshold otherwise.
    pub fn tracked(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.belief.unwrap_or(s.theta)).collect()
    }

    pub fn last(&self) -> &DynamicsState {
        self.states.last().expect("a trace holds at least the initial state")
    }
}

fn threshold_of(strategies: &[EffortDistribution], models: &[GroupModel], alpha: f64) -> Result<f64> {
    let sigma_max = models.iter().map(|g| g.sigma).fold(0.0, f64::max);
    let efforts = strategies.iter().flat_map(|s| s.support.iter().map(|&(m, _)| m));
    let (m_lo, m_hi) = efforts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)));
    let below = |theta: f64| {
        strategies
            .iter()
            .zip(models)
            .map(|(s, g)| {
                g.share
                    * s.support
                        .iter()
                        .map(|&(m, w)| w * normal_cdf((theta - m) / g.sigma))
                        .sum::<f64>()
            })
            .sum::<f64>()
            - (1.0 - alpha)
    };
    find_root(below, m_lo - 10.0 * sigma_max, m_hi + 10.0 * sigma_max, THRESHOLD_ROOT)
}

/// The (1−α)-quantile of the score mixture induced by `strategies`.
pub fn induced_threshold(strategies: &[EffortDistribution], config: &GameConfig) -> Result<f64> {
    config.validate()?;
    threshold_of(strategies, &config.group_models(), config.alpha)
}

/// Precomputed game data shared by every step of a run.
#[derive(Debug, Clone)]
pub struct Dynamics {
    game: Game,
    models: Vec<GroupModel>,
}

impl Dynamics {
    pub fn new(config: &GameConfig) -> Result<Self> {
        Ok(Self { game: Game::from_config(config)?, models: config.group_models() })
    }

    pub fn from_models(models: &[GroupModel], reward: f64, alpha: f64) -> Result<Self> {
        Ok(Self { game: Game::new(models, reward, alpha)?, models: models.to_vec() })
    }

    pub fn threshold(&self, strategies: &[EffortDistribution]) -> Result<f64> {
        threshold_of(strategies, &self.models, self.game.alpha)
    }

    pub fn initial(&self, init: Vec<EffortDistribution>, mode: DynamicsMode) -> Result<DynamicsState> {
        let theta = self.threshold(&init)?;
        let belief = (mode == DynamicsMode::Fp).then_some(theta);
        Ok(DynamicsState { strategies: init, theta, t: 0, belief })
    }

    /// Every group's best response to `target`.
    pub fn respond(&self, target: f64) -> Result<Vec<EffortDistribution>> {
        self.game
            .responders
            .iter()
            .map(|r| {
                Ok(match r.best(target)? {
                    BestResponse::Unique(m) => EffortDistribution::point(m),
                    BestResponse::Tie { low, high } => EffortDistribution::mixture(low, high, 0.5),
                })
            })
            .collect()
    }

    pub fn br_step(&self, state: &DynamicsState) -> Result<DynamicsState> {
        let strategies = self.respond(state.theta)?;
        let theta = self.threshold(&strategies)?;
        Ok(DynamicsState { strategies, theta, t: state.t + 1, belief: None })
    }

    /// One fictitious-play step answering `belief`; `history_len` is the
    /// number of thresholds already averaged into it.
    fn fp_step_from(&self, belief: f64, history_len: usize, t: usize) -> Result<DynamicsState> {
        let strategies = self.respond(belief)?;
        let theta = self.threshold(&strategies)?;
        let n = history_len as f64;
        let belief = belief + (theta - belief) / (n + 1.0);
        Ok(DynamicsState { strategies, theta, t: t + 1, belief: Some(belief) })
    }

    pub fn fp_step(&self, history: &[DynamicsState]) -> Result<DynamicsState> {
        let last = history.last().expect("fictitious play needs a nonempty history");
        let mean = history.iter().map(|s| s.theta).sum::<f64>() / history.len() as f64;
        self.fp_step_from(mean, history.len(), last.t)
    }

    pub fn run(
        &self,
        mode: DynamicsMode,
        max_steps: usize,
        init: Vec<EffortDistribution>,
        tol: f64,
    ) -> Result<DynamicsTrace> {
        let mut states = vec![self.initial(init, mode)?];
        let mut tracked = vec![states[0].belief.unwrap_or(states[0].theta)];
        let mut calm = 0;
        let mut convergence = Convergence::MaxStepsReached;

        for _ in 0..max_steps {
            let prev = states.last().expect("nonempty");
            let next = match mode {
                DynamicsMode::Br => self.br_step(prev)?,
                DynamicsMode::Fp => {
                    let belief = prev.belief.expect("fp states carry a belief");
                    self.fp_step_from(belief, states.len(), prev.t)?
                }
            };
            let value = next.belief.unwrap_or(next.theta);
            calm = if (value - tracked[tracked.len() - 1]).abs() <= tol { calm + 1 } else { 0 };
            tracked.push(value);
            states.push(next);

            if calm >= CONVERGED_RUN {
                convergence = Convergence::Converged { theta: value };
                break;
            }
            if let Some(period) = detect_cycle(&tracked) {
                let thetas = tracked[tracked.len() - period..].to_vec();
                convergence = Convergence::Cycle { period, thetas };
                break;
            }
        }

        let avg_efforts: Vec<Vec<f64>> =
            states.iter().map(|s| s.strategies.iter().map(|d| d.mean()).collect()).collect();
        let selection_rates = states
            .iter()
            .map(|s| {
                s.strategies
                    .iter()
                    .zip(&self.models)
                    .map(|(d, g)| crate::metrics::selection_rate(d, s.theta, g))
                    .collect()
            })
            .collect();
        let window = match &convergence {
            Convergence::Cycle { period, .. } => *period,
            _ => 1,
        };
        let tail = &avg_efforts[avg_efforts.len() - window..];
        let window_avg_effort = (0..self.models.len())
            .map(|g| tail.iter().map(|e| e[g]).sum::<f64>() / window as f64)
            .collect();

        Ok(DynamicsTrace { mode, states, avg_efforts, selection_rates, convergence, window_avg_effort })
    }
}

/// Smallest period p ≤ 50 such that the last 3p values each repeat the
/// value p steps earlier within 1e-7. A pattern whose values all lie within
/// 1e-7 of each other is a settling sequence, not a cycle.
pub fn detect_cycle(series: &[f64]) -> Option<usize> {
    let n = series.len();
    (2..=MAX_PERIOD).find(|&p| {
        if n < (CYCLE_REPEATS + 1) * p {
            return false;
        }
        let last = &series[n - p..];
        let spread = last.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - last.iter().copied().fold(f64::INFINITY, f64::min);
        spread > CYCLE_TOL
            && (0..CYCLE_REPEATS * p).all(|k| (series[n - 1 - k] - series[n - 1 - k - p]).abs() <= CYCLE_TOL)
    })
}

pub fn br_step(state: &DynamicsState, config: &GameConfig) -> Result<DynamicsState> {
    Dynamics::new(config)?.br_step(state)
}

pub fn fp_step(history: &[DynamicsState], config: &GameConfig) -> Result<DynamicsState> {
    Dynamics::new(config)?.fp_step(history)
}

pub fn run(
    config: &GameConfig,
    mode: DynamicsMode,
    max_steps: usize,
    init: Vec<EffortDistribution>,
    tol: f64,
) -> Result<DynamicsTrace> {
    Dynamics::new(config)?.run(mode, max_steps, init, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupParams;

    fn config(s: f64, alpha: f64, h: (f64, f64), l: (f64, f64)) -> GameConfig {
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
    fn threshold_examples() {
        let one = |sigma: f64, alpha: f64, m: f64| {
            threshold_of(&[EffortDistribution::point(m)], &[GroupModel::new(1.0, 1.0, sigma)], alpha).unwrap()
        };
        assert!((one(0.7, 0.5, 2.5) - 2.5).abs() < 1e-12);
        let alpha = 1.0 - normal_cdf(1.0);
        assert!((one(1.0, alpha, 0.4) - 1.4).abs() < 1e-10);
        let c = config(1.0, 0.3, (1.0, 1.0), (1.0, 1.0));
        let strategies = vec![EffortDistribution::point(0.4); 2];
        assert!((induced_threshold(&strategies, &c).unwrap() - one(1.0, 0.3, 0.4)).abs() < 1e-12);
    }

    #[test]
    fn detects_period_two() {
        let s: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        assert_eq!(detect_cycle(&s), Some(2));
        let s: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(detect_cycle(&s), None);
        let s: Vec<f64> = (0..20).map(|i| 1.0 + if i % 2 == 0 { 1e-9 } else { -1e-9 }).collect();
        assert_eq!(detect_cycle(&s), None);
    }

    #[test]
    fn first_fp_step_is_br_step() {
        let c = config(10.0, 0.1, (1.0, 0.1), (1.0, 1.0));
        let d = Dynamics::new(&c).unwrap();
        let s0 = d.initial(vec![EffortDistribution::point(0.0); 2], DynamicsMode::Fp).unwrap();
        let fp = d.fp_step(std::slice::from_ref(&s0)).unwrap();
        let br = d.br_step(&s0).unwrap();
        assert_eq!(fp.strategies, br.strategies);
        assert_eq!(fp.theta, br.theta);
    }
}
