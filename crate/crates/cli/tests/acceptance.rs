//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stratsel::best_response::{critical_reward, dropout_threshold, payoff, selection_probability, Responder};
use stratsel::dynamics::{Convergence, Dynamics, DynamicsMode};
use stratsel::equilibrium::{
    solve_demographic_parity, solve_unconstrained, solve_unconstrained_from, solver_bracket,
};
use stratsel::math::{lambert_w, normal_cdf, normal_sf, Branch};
use stratsel::metrics::asymptotic_predictions;
use stratsel::oracle::{
    grid_argmax_payoff, grid_step, max_deviation_gain, mc_selection_probability, mc_selection_quality,
    CandidateSampler,
};
use stratsel::{DecisionMode, EffortDistribution, Error, GameConfig, GroupModel, GroupParams};

const SEED: u64 = 0x5EED;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn random_config(rng: &mut ChaCha8Rng, groups: usize) -> GameConfig {
    let weights: Vec<f64> = (0..groups).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    GameConfig {
        reward: 10f64.powf(rng.random_range(-0.3..2.5)),
        alpha: rng.random_range(0.05..0.9),
        eta_sq: rng.random_range(0.5..2.0),
        dm_mode: if rng.random_bool(0.5) { DecisionMode::Bayesian } else { DecisionMode::Oblivious },
        groups: weights
            .iter()
            .enumerate()
            .map(|(g, w)| {
                GroupParams::new(
                    format!("G{g}"),
                    w / total,
                    rng.random_range(0.5..3.0),
                    10f64.powf(rng.random_range(-1.0..0.7)),
                )
            })
            .collect(),
    }
}

/// Sign changes of `f` along `x`, located by linear interpolation.
fn crossings(x: &[f64], f: &[f64]) -> Vec<f64> {
    (1..x.len())
        .filter(|&i| f[i - 1].signum() != f[i].signum())
        .map(|i| x[i - 1] + (x[i] - x[i - 1]) * f[i - 1] / (f[i - 1] - f[i]))
        .collect()
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn parse(text: &str) -> Self {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().unwrap().split(',').map(String::from).collect();
        let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        Self { header, rows }
    }

    fn column(&self, name: &str) -> Vec<f64> {
        let k = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[k].parse().unwrap_or(f64::NAN)).collect()
    }
}

fn sweep(name: &str) -> Csv {
    let spec = stratsel_cli::load_sweep(&scenario(name)).unwrap();
    Csv::parse(&stratsel_cli::sweep_csv(&spec, None).unwrap())
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n = 1_000_000;
    let (mut mc_checks, mut exceed, mut grid_checks, mut grid_fail) = (0, 0, 0, 0);
    let (mut worst_z, mut worst_grid) = (0.0f64, 0.0f64);
    let mut errors = Vec::new();
    for k in 0..100u64 {
        let config = random_config(&mut rng, 2);
        let (un, dp) = match (solve_unconstrained(&config), solve_demographic_parity(&config)) {
            (Ok(u), Ok(d)) => (u, d),
            (Err(e), _) | (_, Err(e)) => {
                errors.push(format!("config {k}: {e}"));
                continue;
            }
        };

        let g = rng.random_range(0..2);
        let sigma = config.sigma_tilde(g);
        let theta = un.groups[g].threshold;
        let m = rng.random_range(0.0..theta.max(0.0) + 2.0 * sigma);
        let sampler = CandidateSampler::for_group(&config, g);
        let p = mc_selection_probability(m, theta, &sampler, n, SEED ^ (2 * k + 1) << 20);
        let q = mc_selection_quality(&un.strategies(), &un.thresholds(), &config, n, SEED ^ (2 * k + 2) << 20);
        for z in [p.z_score(selection_probability(m, theta, sigma)), q.z_score(un.quality)] {
            mc_checks += 1;
            worst_z = worst_z.max(z);
            if z > 3.0 {
                exceed += 1;
            }
        }

        for g in 0..2 {
            let model = config.group_model(g);
            let responder = Responder::new(model, config.reward).unwrap();
            for theta in [un.groups[g].threshold, dp.groups[g].threshold] {
                let grid = grid_argmax_payoff(theta, &model, config.reward, 10_000);
                let step = grid_step(&model, config.reward, 10_000);
                let off = responder
                    .best(theta)
                    .unwrap()
                    .efforts()
                    .iter()
                    .map(|m| (m - grid).abs())
                    .fold(f64::INFINITY, f64::min);
                grid_checks += 1;
                worst_grid = worst_grid.max(off / step);
                if off > step {
                    grid_fail += 1;
                }
            }
        }
    }
    let expected = mc_checks as f64 * 2.0 * normal_sf(3.0);
    outcome(
        errors.is_empty() && exceed == 0 && grid_fail == 0,
        format!(
            "MC checks {mc_checks}, beyond 3 SE {exceed} (binomial expectation {expected:.2}), worst z {worst_z:.2}; \
             grid checks {grid_checks}, failed {grid_fail}, worst |br-grid|/step {worst_grid:.3}; solver errors {}",
            errors.len()
        ),
    )
}

fn uniqueness_and_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut worst_theta, mut worst_budget, mut worst_gain) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut errors = Vec::new();
    for k in 0..200 {
        let config = random_config(&mut rng, if k < 100 { 2 } else { 3 });
        let result = (|| -> stratsel::Result<()> {
            let reference = solve_unconstrained(&config)?;
            let theta = reference.threshold.unwrap();
            let (lo, hi) = solver_bracket(&config)?;
            let w = hi - lo;
            for _ in 0..5 {
                let a = rng.random_range(lo - 0.5 * w..hi + 0.5 * w);
                let b = rng.random_range(lo - 0.5 * w..hi + 0.5 * w);
                let r = solve_unconstrained_from(&config, (a, b))?;
                worst_theta = worst_theta.max((r.threshold.unwrap() - theta).abs());
                worst_budget = worst_budget.max((r.selected_mass() - config.alpha).abs());
            }
            worst_budget = worst_budget.max((reference.selected_mass() - config.alpha).abs());
            worst_gain = worst_gain.max(max_deviation_gain(&reference, &config, 10_000) / config.reward);
            Ok(())
        })();
        if let Err(e) = result {
            errors.push(format!("config {k}: {e}"));
        }
    }
    outcome(
        errors.is_empty() && worst_theta <= 1e-8 && worst_budget <= 1e-8 && worst_gain <= 1e-7,
        format!(
            "max |theta - theta_ref| {worst_theta:.2e}, max budget error {worst_budget:.2e}, \
             max deviation gain / S {worst_gain:.2e}; errors {errors:?}"
        ),
    )
}

fn dropout_asymptotics() -> Outcome {
    let unit = GroupModel::new(1.0, 1.0, 1.0);
    let mut normalized = Vec::new();
    let mut worst_gap = 0.0f64;
    for s in [1e2, 1e3, 1e4, 1e5] {
        let d = match dropout_threshold(&unit, s) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("S={s}: {e}")),
        };
        normalized.push(d.theta_d * (1.0 / (2.0 * s)).sqrt());
        let gap = (payoff(d.br_min, d.theta_d, &unit, s) - payoff(d.br_max, d.theta_d, &unit, s)).abs();
        worst_gap = worst_gap.max(gap / s);
    }
    let monotone = normalized.windows(2).all(|w| w[0] < w[1] && w[1] < 1.0);

    let bound = (2.0 * std::f64::consts::PI).sqrt() * 0.5f64.exp();
    let critical = critical_reward(&unit);
    let below = f64::from_bits(critical.to_bits() - 1);
    let rejects = matches!(dropout_threshold(&unit, below), Err(Error::SubcriticalReward { .. }));
    let accepts = dropout_threshold(&unit, critical * 1.01).is_ok();
    let exact = (critical - bound).abs() <= 2.0 * f64::EPSILON * bound;
    outcome(
        monotone && worst_gap <= 1e-9 && rejects && accepts && exact,
        format!(
            "theta_d/sqrt(2S) = {normalized:?}; max payoff gap / S {worst_gap:.2e}; \
             critical reward {critical} (1/phi(1) = {bound}), error just below: {rejects}"
        ),
    )
}

fn small_reward_crossings() -> Outcome {
    let csv = sweep("small_reward_sweep.json");
    let alpha = csv.column("axis_value");
    let (eh, el) = (csv.column("effort_H_un"), csv.column("effort_L_un"));
    let (rh, rl) = (csv.column("rate_H_un"), csv.column("rate_L_un"));
    let effort_diff: Vec<f64> = eh.iter().zip(&el).map(|(a, b)| a - b).collect();
    let rate_diff: Vec<f64> = rh.iter().zip(&rl).map(|(a, b)| a - b).collect();
    let effort_cross = crossings(&alpha, &effort_diff);
    let rate_cross = crossings(&alpha, &rate_diff);

    let (s, p_h, p_l, c_h, c_l, s_h, s_l): (f64, f64, f64, f64, f64, f64, f64) = (1.0, 0.5, 0.5, 1.0, 1.0, 0.6, 1.0);
    let k_mu = (-2.0 * (c_h * s_h / (c_l * s_l)).ln() / (1.0 / (s_h * s_h) - 1.0 / (s_l * s_l))).sqrt();
    let mut effort_formula =
        [1.0, -1.0].map(|sign| p_h * normal_sf(sign * k_mu / s_h) + p_l * normal_sf(sign * k_mu / s_l));
    effort_formula.sort_by(f64::total_cmp);
    let xi = s * (1.0 / (c_h * s_h) - 1.0 / (c_l * s_l)) / (s_l - s_h);
    let k_x = lambert_w(Branch::Principal, xi * xi / (2.0 * std::f64::consts::PI)).unwrap().sqrt();
    let rate_formula = 1.0 - normal_cdf(xi.signum() * k_x);

    let ok = rate_cross.len() == 1
        && effort_cross.len() == 2
        && (rate_cross[0] - rate_formula).abs() <= 1e-3
        && effort_cross.iter().zip(&effort_formula).all(|(a, b)| (a - b).abs() <= 1e-3);
    outcome(
        ok,
        format!(
            "rate crossing sweep {rate_cross:.6?} vs formula {rate_formula:.6}; \
             effort crossings sweep {effort_cross:.6?} vs formula {effort_formula:.6?}"
        ),
    )
}

fn advantaged_share(config: &GameConfig) -> f64 {
    let p = asymptotic_predictions(config).unwrap();
    config.groups[config.group_index(&p.advantaged).unwrap()].share
}

fn rate_ratio_limits() -> Outcome {
    let mut worst = Vec::new();
    for name in ["alpha_sweep_equal_cost.json", "alpha_sweep_cost_gap.json"] {
        let spec = stratsel_cli::load_sweep(&scenario(name)).unwrap();
        let p = advantaged_share(&spec.base);
        let csv = sweep(name);
        let mut dev = 0.0f64;
        let mut points = 0;
        for (a, r) in csv.column("axis_value").iter().zip(csv.column("rate_ratio")) {
            if (a - p).abs() <= 0.05 {
                continue;
            }
            let limit = if *a < p { 0.0 } else { (a - p) / (1.0 - p) };
            dev = dev.max(if r.is_nan() { f64::INFINITY } else { (r - limit).abs() });
            points += 1;
        }
        worst.push((name, points, dev));
    }
    outcome(
        worst.iter().all(|w| w.2 <= 0.1),
        format!("(scenario, points, max |ratio - limit|) = {worst:.4?}"),
    )
}

fn quality_ratio() -> Outcome {
    let gap = sweep("alpha_sweep_cost_gap.json");
    let spec = stratsel_cli::load_sweep(&scenario("alpha_sweep_cost_gap.json")).unwrap();
    let (h, l) = (&spec.base.groups[0], &spec.base.groups[1]);
    let c = (l.cost / h.cost).sqrt();
    let crowded = 1.0 / (c * h.share + l.share);
    let open = c / (c * h.share + l.share);
    let (mut dev_low, mut dev_high) = (0.0f64, 0.0f64);
    for (a, q) in gap.column("axis_value").iter().zip(gap.column("quality_ratio")) {
        let q = if q.is_nan() { f64::INFINITY } else { q };
        if *a <= 0.4 {
            dev_low = dev_low.max((q - crowded).abs());
        } else if *a >= 0.6 {
            dev_high = dev_high.max((q - open).abs());
        }
    }
    let equal = sweep("alpha_sweep_equal_cost.json");
    let dev_equal = equal
        .column("quality_ratio")
        .iter()
        .map(|q| if q.is_nan() { f64::INFINITY } else { (q - 1.0).abs() })
        .fold(0.0, f64::max);
    outcome(
        dev_low <= 0.1 && dev_high <= 0.1 && dev_equal <= 0.05,
        format!(
            "cost gap: max dev {dev_low:.4} from {crowded:.4} (alpha <= 0.4), {dev_high:.4} from {open:.4} \
             (alpha >= 0.6); equal cost: max |ratio - 1| {dev_equal:.4}"
        ),
    )
}

fn parity_structure() -> Outcome {
    let spec = stratsel_cli::load_sweep(&scenario("alpha_sweep_cost_gap.json")).unwrap();
    let target = (spec.base.groups[1].cost / spec.base.groups[0].cost).sqrt();
    let (mut rate_dev, mut tau_dev, mut ratio_dev) = (0.0f64, 0.0f64, 0.0f64);
    for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let mut config = spec.base.clone();
        config.reward = 1e4;
        config.alpha = alpha;
        let dp = match solve_demographic_parity(&config) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("alpha {alpha}: {e}")),
        };
        for g in &dp.groups {
            rate_dev = rate_dev.max((g.selection_rate - alpha).abs());
            tau_dev = tau_dev.max(g.tau.map_or(f64::INFINITY, |t| (t - alpha).abs()));
        }
        ratio_dev = ratio_dev.max((dp.groups[0].avg_effort / dp.groups[1].avg_effort - target).abs());
    }
    outcome(
        rate_dev <= 1e-8 && tau_dev <= 0.05 && ratio_dev <= 0.05,
        format!(
            "max |rate - alpha| {rate_dev:.2e}; max |tau - alpha| {tau_dev:.4}; \
             max |effort ratio - {target:.4}| {ratio_dev:.4}"
        ),
    )
}

fn dynamics_properties() -> Outcome {
    let config = stratsel_cli::load_config(&scenario("low_spread_mixing.json")).unwrap();
    let eq = solve_unconstrained(&config).unwrap();
    let theta_un = eq.threshold.unwrap();
    let d = Dynamics::new(&config).unwrap();
    let zero = vec![EffortDistribution::point(0.0); config.groups.len()];

    let br = d.run(DynamicsMode::Br, 5000, zero.clone(), 1e-9).unwrap();
    let period = match br.convergence {
        Convergence::Cycle { period, .. } => Some(period),
        _ => None,
    };
    let eq_effort: Vec<f64> = eq.groups.iter().map(|g| g.avg_effort).collect();
    let higher = period.is_some() && br.window_avg_effort.iter().zip(&eq_effort).all(|(w, e)| w >= e);

    let fp = d.run(DynamicsMode::Fp, 5000, zero, 0.0).unwrap();
    let fp_err = (fp.tracked().last().unwrap() - theta_un).abs();
    outcome(
        higher && fp_err <= 1e-3,
        format!(
            "br cycle period {period:?}, cycle effort {:.4?} vs equilibrium {eq_effort:.4?}; \
             fp after {} steps |belief - theta_un| {fp_err:.2e}",
            br.window_avg_effort,
            fp.states.len() - 1
        ),
    )
}

fn run_binary(args: &[&str], threads: &str) -> Vec<u8> {
    let o = Command::new(env!("CARGO_BIN_EXE_stratsel"))
        .args(args)
        .env("SSL_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o.stdout
}

fn determinism() -> Outcome {
    let equal_cost = scenario("alpha_sweep_equal_cost.json");
    let low_spread = scenario("low_spread_mixing.json");
    let runs: [&[&str]; 3] = [
        &["sweep", "--config", equal_cost.to_str().unwrap()],
        &["dynamics", "--config", low_spread.to_str().unwrap(), "--mode", "br", "--steps", "500"],
        &["dynamics", "--config", low_spread.to_str().unwrap(), "--mode", "fp", "--steps", "2000"],
    ];
    let mut identical = 0;
    for args in runs {
        let outs = [run_binary(args, "1"), run_binary(args, "4"), run_binary(args, "4")];
        if outs.iter().all(|o| o == &outs[0]) && outs[0].starts_with(b"# config_hash=") {
            identical += 1;
        }
    }
    outcome(identical == runs.len(), format!("{identical}/{} commands byte-identical over 3 runs (1 and 4 threads)", runs.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Option<Duration>); 9] = [
        (1, "oracle equivalence", oracle_equivalence, Some(Duration::from_secs(120))),
        (2, "uniqueness and budget", uniqueness_and_budget, Some(Duration::from_secs(300))),
        (3, "dropout asymptotics", dropout_asymptotics, None),
        (4, "small-reward crossings", small_reward_crossings, None),
        (5, "large-reward rate ratios", rate_ratio_limits, Some(Duration::from_secs(180))),
        (6, "quality ratio", quality_ratio, None),
        (7, "demographic parity structure", parity_structure, None),
        (8, "dynamics", dynamics_properties, None),
        (9, "determinism", determinism, None),
    ];
    let mut failed = 0;
    for (n, name, check, limit) in criteria {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let passed = out.passed && in_time;
        if !passed {
            failed += 1;
        }
        let budget = limit.map(|l| format!(" of {}s", l.as_secs())).unwrap_or_default();
        println!(
            "criterion {n} {name} ... {} [{:.1}s{budget}] {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
