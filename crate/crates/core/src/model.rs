//! Game instances: groups, decision-maker mode, and the variance algebra that
//! turns observation noise into the spread of the decision-maker's score.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the decision-maker scores candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// Ranks by the posterior mean E(W | Ŵ); score spread η⁴/(σ̂²+η²).
    #[default]
    Bayesian,
    /// Ranks by the raw estimate Ŵ; score spread η²+σ̂².
    Oblivious,
}

/// One demographic group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub label: String,
    /// Population share p_G.
    pub share: f64,
    /// Quadratic cost coefficient C_G.
    pub cost: f64,
    /// Variance σ̂²_G of the noise added to the quality estimate.
    #[serde(default)]
    pub noise_var: f64,
    /// Group-specific quality variance; falls back to the game's `eta_sq`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_sq: Option<f64>,
    /// Score standard deviation given directly, bypassing the derivation
    /// from `noise_var` and `eta_sq`. Treated as a noiseless group whose
    /// quality variance is `sigma_tilde²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<f64>,
}

impl GroupParams {
    pub fn new(label: impl Into<String>, share: f64, cost: f64, noise_var: f64) -> Self {
        Self {
            label: label.into(),
            share,
            cost,
            noise_var,
            eta_sq: None,
            sigma_tilde: None,
        }
    }

    /// Group whose score deviation is fixed at `sigma`.
    pub fn with_sigma(label: impl Into<String>, share: f64, cost: f64, sigma: f64) -> Self {
        Self {
            sigma_tilde: Some(sigma),
            ..Self::new(label, share, cost, 0.0)
        }
    }
}

/// A complete game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Reward S paid to each selected candidate.
    pub reward: f64,
    /// Selected fraction α.
    pub alpha: f64,
    /// Quality variance η².
    pub eta_sq: f64,
    #[serde(default)]
    pub dm_mode: DecisionMode,
    pub groups: Vec<GroupParams>,
}

/// Variance of the decision-maker's score around a candidate's effort.
pub fn posterior_variance(noise_var: f64, eta_sq: f64, mode: DecisionMode) -> f64 {
    match mode {
        DecisionMode::Bayesian => eta_sq * eta_sq / (noise_var + eta_sq),
        DecisionMode::Oblivious => eta_sq + noise_var,
    }
}

/// Correlation ρ between quality W and its estimate Ŵ.
pub fn correlation_coefficient(noise_var: f64, eta_sq: f64) -> f64 {
    (eta_sq / (eta_sq + noise_var)).sqrt()
}

/// A group reduced to what the solvers need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub share: f64,
    pub cost: f64,
    /// Standard deviation σ̃ of the score around the effort.
    pub sigma: f64,
    /// Cov(W, score)/sd(score): the coefficient of φ in E(W·1{score ≥ θ}).
    pub loading: f64,
}

impl GroupModel {
    pub fn new(share: f64, cost: f64, sigma: f64) -> Self {
        Self { share, cost, sigma, loading: sigma }
    }
}

/// A finite-support effort strategy: (effort, weight) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortDistribution {
    pub support: Vec<(f64, f64)>,
}

impl EffortDistribution {
    pub fn point(m: f64) -> Self {
        Self { support: vec![(m, 1.0)] }
    }

    /// `high` with probability `tau`, `low` otherwise. Zero-weight atoms are
    /// dropped.
    pub fn mixture(low: f64, high: f64, tau: f64) -> Self {
        let support = [(low, 1.0 - tau), (high, tau)]
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .collect();
        Self { support }
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(m, w)| m * w).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.support.iter().map(|&(_, w)| w).sum()
    }

    pub fn is_valid(&self) -> bool {
        !self.support.is_empty()
            && self.support.iter().all(|&(m, w)| m >= 0.0 && (0.0..=1.0).contains(&w))
            && (self.total_weight() - 1.0).abs() <= 1e-12
    }
}

/// Quality and noise variances used when sampling a group's candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub eta_sq: f64,
    pub noise_var: f64,
}

impl GameConfig {
    pub fn group_eta_sq(&self, idx: usize) -> f64 {
        self.groups[idx].eta_sq.unwrap_or(self.eta_sq)
    }

    pub fn sampling_params(&self, idx: usize) -> SamplingParams {
        let g = &self.groups[idx];
        match g.sigma_tilde {
            Some(s) => SamplingParams { eta_sq: s * s, noise_var: 0.0 },
            None => SamplingParams { eta_sq: self.group_eta_sq(idx), noise_var: g.noise_var },
        }
    }

    /// σ̃ for group `idx`.
    pub fn sigma_tilde(&self, idx: usize) -> f64 {
        let sp = self.sampling_params(idx);
        posterior_variance(sp.noise_var, sp.eta_sq, self.dm_mode).sqrt()
    }

    pub fn group_model(&self, idx: usize) -> GroupModel {
        let g = &self.groups[idx];
        let sp = self.sampling_params(idx);
        let sigma = self.sigma_tilde(idx);
        let loading = match self.dm_mode {
            DecisionMode::Bayesian => sigma,
            DecisionMode::Oblivious => sp.eta_sq / sigma,
        };
        GroupModel { share: g.share, cost: g.cost, sigma, loading }
    }

    pub fn group_models(&self) -> Vec<GroupModel> {
        (0..self.groups.len()).map(|i| self.group_model(i)).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.label.as_str()).collect()
    }

    /// Index of the group with the given label.
    pub fn group_index(&self, label: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// One failed invariant, located by field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Every invariant violation in `config`; empty when it is valid.
pub fn validate(config: &GameConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });

    if !positive(config.reward) {
        push("reward".into(), format!("reward must be positive, got {}", config.reward));
    }
    if !open_unit(config.alpha) {
        push("alpha".into(), format!("α must lie in (0,1), got {}", config.alpha));
    }
    if !positive(config.eta_sq) {
        push("eta_sq".into(), format!("η² must be positive, got {}", config.eta_sq));
    }
    if config.groups.len() < 2 {
        push(
            "groups".into(),
            format!("at least 2 groups required, got {}", config.groups.len()),
        );
    }

    let mut seen = HashSet::new();
    for (i, g) in config.groups.iter().enumerate() {
        let at = |field: &str| format!("groups[{i}].{field}");
        if g.label.is_empty() {
            push(at("label"), "label must be non-empty".into());
        } else if !seen.insert(g.label.as_str()) {
            push(at("label"), format!("duplicate label {:?}", g.label));
        }
        if !open_unit(g.share) {
            push(at("share"), format!("share must lie in (0,1), got {}", g.share));
        }
        if !positive(g.cost) {
            push(at("cost"), format!("cost must be positive, got {}", g.cost));
        }
        if !(g.noise_var.is_finite() && g.noise_var >= 0.0) {
            push(at("noise_var"), format!("noise variance must be >= 0, got {}", g.noise_var));
        }
        if let Some(e) = g.eta_sq {
            if !positive(e) {
                push(at("eta_sq"), format!("η² must be positive, got {e}"));
            }
        }
        if let Some(s) = g.sigma_tilde {
            if !positive(s) {
                push(at("sigma_tilde"), format!("sigma_tilde must be positive, got {s}"));
            }
        }
    }

    if !config.groups.is_empty() {
        let total: f64 = config.groups.iter().map(|g| g.share).sum();
        if (total - 1.0).abs() > 1e-12 {
            push("groups".into(), format!("shares sum to {total}"));
        }
    }
    out
}
