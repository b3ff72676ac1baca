//! Monte Carlo and brute-force oracles that recompute the analytic
//! quantities from the sampling model directly.
//!
//! Samples are drawn in fixed-size chunks, chunk `k` from a ChaCha8 stream
//! keyed by `(seed, k)`, and the per-chunk sums are combined in chunk order.
//! Estimates therefore do not depend on the number of worker threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::best_response::{effort_bound, payoff, Responder};
use crate::equilibrium::EquilibriumReport;
use crate::math::quantile_unchecked;
use crate::model::{correlation_coefficient, DecisionMode, EffortDistribution, GameConfig, GroupModel};

const CHUNK: usize = 1 << 16;
/// Smallest sample size for which the normal approximation behind the
/// standard error is trusted.
pub const MIN_SAMPLES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
}

impl McEstimate {
    /// |mean − value| in standard errors. The error is floored at 1/n, the
    /// resolution of a sample mean, so an estimate with no spread (every
    /// draw equal) is still compared on a finite scale.
    pub fn z_score(&self, value: f64) -> f64 {
        let d = (self.mean - value).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error.max(1.0 / self.n as f64)
        }
    }

    pub fn agrees(&self, value: f64, sigmas: f64) -> bool {
        self.z_score(value) <= sigmas
    }
}

struct Draws(ChaCha8Rng);

impl Draws {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn normal(&mut self) -> f64 {
        quantile_unchecked(self.uniform())
    }
}

/// Mean and standard error of `n` draws of `sample`.
fn estimate<F>(n: usize, seed: u64, sample: F) -> McEstimate
where
    F: Fn(&mut Draws) -> f64 + Sync,
{
    let n = n.max(MIN_SAMPLES);
    let chunks = n.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut draws = Draws::new(seed, k as u64);
            let len = CHUNK.min(n - k * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let x = sample(&mut draws);
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    McEstimate { mean, std_error: (var / nf).sqrt(), n, seed }
}

/// How one group's candidates are sampled: quality W ~ N(m, η²), estimate
/// Ŵ = W + σ̂·ε, and the decision-maker's score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSampler {
    pub eta: f64,
    pub noise_sd: f64,
    pub mode: DecisionMode,
    rho_sq: f64,
}

impl CandidateSampler {
    pub fn new(eta_sq: f64, noise_var: f64, mode: DecisionMode) -> Self {
        let rho = correlation_coefficient(noise_var, eta_sq);
        Self { eta: eta_sq.sqrt(), noise_sd: noise_var.sqrt(), mode, rho_sq: rho * rho }
    }

    pub fn for_group(config: &GameConfig, group: usize) -> Self {
        let sp = config.sampling_params(group);
        Self::new(sp.eta_sq, sp.noise_var, config.dm_mode)
    }

    /// (W, score) for a candidate with effort `m`.
    #[inline]
    fn draw(&self, m: f64, d: &mut Draws) -> (f64, f64) {
        let w = m + self.eta * d.normal();
        let w_hat = w + self.noise_sd * d.normal();
        let score = match self.mode {
            DecisionMode::Bayesian => self.rho_sq * w_hat + (1.0 - self.rho_sq) * m,
            DecisionMode::Oblivious => w_hat,
        };
        (w, score)
    }
}

/// Fraction of candidates with effort `m` whose score clears `theta`.
pub fn mc_selection_probability(
    m: f64,
    theta: f64,
    sampler: &CandidateSampler,
    n: usize,
    seed: u64,
) -> McEstimate {
    estimate(n, seed, |d| {
        let (_, score) = sampler.draw(m, d);
        f64::from(u8::from(score >= theta))
    })
}

/// E(W·1{selected}) over the whole population, each group facing its own
/// threshold.
pub fn mc_selection_quality(
    strategies: &[EffortDistribution],
    thresholds: &[f64],
    config: &GameConfig,
    n: usize,
    seed: u64,
) -> McEstimate {
    let samplers: Vec<CandidateSampler> =
        (0..config.groups.len()).map(|g| CandidateSampler::for_group(config, g)).collect();
    let shares: Vec<f64> = config.groups.iter().map(|g| g.share).collect();
    let pick = |weights: &mut dyn Iterator<Item = f64>, u: f64| -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, w) in weights.enumerate() {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    };
    estimate(n, seed, |d| {
        let g = pick(&mut shares.iter().copied(), d.uniform());
        let support = &strategies[g].support;
        let k = pick(&mut support.iter().map(|&(_, w)| w), d.uniform());
        let (w, score) = samplers[g].draw(support[k].0, d);
        if score >= thresholds[g] {
            w
        } else {
            0.0
        }
    })
}

/// Effort maximizing the payoff over `grid_points` evenly spaced efforts on
/// [0, √(2S/C) + 6σ̃].
pub fn grid_argmax_payoff(theta: f64, group: &GroupModel, reward: f64, grid_points: usize) -> f64 {
    let (m, _) = grid_max(theta, group, reward, grid_points);
    m
}

fn grid_max(theta: f64, group: &GroupModel, reward: f64, grid_points: usize) -> (f64, f64) {
    let top = effort_bound(group, reward) + 6.0 * group.sigma;
    let step = if grid_points > 1 { top / (grid_points - 1) as f64 } else { 0.0 };
    (0..grid_points.max(1))
        .map(|i| {
            let m = i as f64 * step;
            (m, payoff(m, theta, group, reward))
        })
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Spacing of the grid used by [`grid_argmax_payoff`].
pub fn grid_step(group: &GroupModel, reward: f64, grid_points: usize) -> f64 {
    (effort_bound(group, reward) + 6.0 * group.sigma) / (grid_points.max(2) - 1) as f64
}

/// Largest payoff gain any candidate in `report` could obtain by switching
/// to an effort on the grid.
pub fn max_deviation_gain(report: &EquilibriumReport, config: &GameConfig, grid_points: usize) -> f64 {
    report
        .groups
        .iter()
        .enumerate()
        .map(|(g, out)| {
            let model = config.group_model(g);
            let (_, best) = grid_max(out.threshold, &model, config.reward, grid_points);
            out.strategy
                .support
                .iter()
                .filter(|&&(_, w)| w > 0.0)
                .map(|&(m, _)| best - payoff(m, out.threshold, &model, config.reward))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub analytic: f64,
    pub oracle: f64,
    /// Standard error for Monte Carlo checks, grid step for grid checks.
    pub scale: f64,
    pub passed: bool,
}

/// Oracle checks on one configuration: selection probability per group at
/// three efforts, quality of both equilibria, and every best response
/// against the effort grid.
pub fn verify_config(config: &GameConfig, n: usize, seed: u64) -> crate::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut next_seed = seed;
    let mut bump = || {
        next_seed = next_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        next_seed
    };
    let un = crate::equilibrium::solve_unconstrained(config)?;
    let dp = crate::equilibrium::solve_demographic_parity(config)?;

    for (g, params) in config.groups.iter().enumerate() {
        let model = config.group_model(g);
        let sampler = CandidateSampler::for_group(config, g);
        let theta = un.threshold.unwrap_or(0.0);
        for m in [0.0, theta, theta + model.sigma] {
            let analytic = crate::best_response::selection_probability(m, theta, model.sigma);
            let est = mc_selection_probability(m, theta, &sampler, n, bump());
            checks.push(Check {
                name: format!("selection_probability[{}](m={m:.4})", params.label),
                analytic,
                oracle: est.mean,
                scale: est.std_error,
                passed: est.agrees(analytic, 3.0),
            });
        }
        let responder = Responder::new(model, config.reward)?;
        for out in [&un, &dp] {
            let theta = out.groups[g].threshold;
            let grid = 10_000;
            let oracle = grid_argmax_payoff(theta, &model, config.reward, grid);
            let step = grid_step(&model, config.reward, grid);
            let br = responder.best(theta)?.efforts();
            let nearest = br.iter().copied().min_by(|a, b| (a - oracle).abs().total_cmp(&(b - oracle).abs()));
            let analytic = nearest.unwrap_or(f64::NAN);
            checks.push(Check {
                name: format!("best_response[{}](theta={theta:.4})", params.label),
                analytic,
                oracle,
                scale: step,
                passed: (analytic - oracle).abs() <= step,
            });
        }
    }
    for (name, report) in [("quality_unconstrained", &un), ("quality_parity", &dp)] {
        let est = mc_selection_quality(&report.strategies(), &report.thresholds(), config, n, bump());
        checks.push(Check {
            name: name.into(),
            analytic: report.quality,
            oracle: est.mean,
            scale: est.std_error,
            passed: est.agrees(report.quality, 3.0),
        });
    }
    Ok(checks)
}
