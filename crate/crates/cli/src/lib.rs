//! Command implementations behind the `stratsel` binary. Each command reads
//! its inputs, computes, and returns the text it would print, so the same
//! code serves the binary and the tests.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stratsel::dynamics::{Convergence, Dynamics, DynamicsMode};
use stratsel::equilibrium::{solve_demographic_parity, solve_unconstrained, EquilibriumReport};
use stratsel::metrics::{asymptotic_predictions, small_s_crossings, AsymptoticPrediction, SmallSCrossings};
use stratsel::oracle::{verify_config, Check};
use stratsel::{best_response, EffortDistribution, Error, GameConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Unreadable or invalid input; exit code 1.
    Input(String),
    /// A solver or verification failure; exit code 2.
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Compute(m) => write!(f, "computation error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Input(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> CliResult<GameConfig> {
    let config: GameConfig = read_json(path)?;
    config.validate()?;
    Ok(config)
}

pub fn load_sweep(path: &Path) -> CliResult<SweepSpec> {
    read_json(path)
}

/// SHA-256 of the canonical JSON of `input` followed by the command and
/// its arguments.
pub fn config_hash<T: Serialize>(command: &str, input: &T, args: &str) -> String {
    let canonical = serde_json::to_string(input).expect("inputs serialize");
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(canonical.as_bytes());
    h.update(b"\n");
    h.update(args.as_bytes());
    hex::encode(h.finalize())
}

/// Shortest round-trip text for a float; empty for missing or non-finite
/// values. Very small or large magnitudes use exponent notation.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => {
            let a = v.abs();
            if a == 0.0 || (1e-5..1e16).contains(&a) {
                format!("{v}")
            } else {
                format!("{v:e}")
            }
        }
        _ => String::new(),
    }
}

fn csv_line(cells: impl IntoIterator<Item = String>) -> String {
    let mut line = cells.into_iter().collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// Grid of axis values: explicit, or `count` evenly spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range {
        lo: f64,
        hi: f64,
        count: usize,
        #[serde(default)]
        scale: Scale,
    },
}

impl GridSpec {
    /// Parses `lo:hi:count[:log]` or a comma-separated list.
    pub fn parse(s: &str) -> CliResult<Self> {
        let bad = || CliError::Input(format!("cannot parse grid {s:?}; expected lo:hi:count[:log] or a comma list"));
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if !(3..=4).contains(&parts.len()) {
                return Err(bad());
            }
            let scale = match parts.get(3) {
                None | Some(&"linear") | Some(&"lin") => Scale::Linear,
                Some(&"log") => Scale::Log,
                Some(_) => return Err(bad()),
            };
            Ok(GridSpec::Range {
                lo: parts[0].trim().parse().map_err(|_| bad())?,
                hi: parts[1].trim().parse().map_err(|_| bad())?,
                count: parts[2].trim().parse().map_err(|_| bad())?,
                scale,
            })
        } else {
            let values = s
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<CliResult<Vec<_>>>()?;
            Ok(GridSpec::List(values))
        }
    }

    pub fn values(&self) -> CliResult<Vec<f64>> {
        match *self {
            GridSpec::List(ref v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(CliError::Input("grid must hold finite values".into()));
                }
                Ok(v.clone())
            }
            GridSpec::Range { lo, hi, count, scale } => {
                if count < 2 {
                    return Err(CliError::Input(format!("grid count must be at least 2, got {count}")));
                }
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(CliError::Input("grid bounds must be finite".into()));
                }
                if scale == Scale::Log && !(lo > 0.0 && hi > 0.0) {
                    return Err(CliError::Input("log grid needs positive bounds".into()));
                }
                let last = (count - 1) as f64;
                Ok((0..count)
                    .map(|k| {
                        if k + 1 == count {
                            return hi;
                        }
                        let t = k as f64 / last;
                        match scale {
                            Scale::Linear => lo + (hi - lo) * t,
                            Scale::Log => 10f64.powf(lo.log10() + (hi.log10() - lo.log10()) * t),
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Alpha,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Unconstrained,
    DemographicParity,
}

fn all_solvers() -> Vec<Solver> {
    vec![Solver::Unconstrained, Solver::DemographicParity]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub grid: GridSpec,
    pub base: GameConfig,
    #[serde(default = "all_solvers")]
    pub solvers: Vec<Solver>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    pub config_hash: String,
    pub unconstrained: EquilibriumReport,
    pub demographic_parity: Option<EquilibriumReport>,
    pub asymptotic: Option<AsymptoticPrediction>,
    pub small_s: Option<SmallSCrossings>,
    pub notes: Vec<String>,
}

pub fn solve(config: &GameConfig, with_dp: bool) -> CliResult<SolveOutput> {
    config.validate()?;
    let unconstrained = solve_unconstrained(config)?;
    let demographic_parity = if with_dp { Some(solve_demographic_parity(config)?) } else { None };
    let mut notes = Vec::new();
    let asymptotic = asymptotic_predictions(config)
        .map_err(|e| notes.push(format!("asymptotic predictions unavailable: {e}")))
        .ok();
    let small_s = small_s_crossings(config)
        .map_err(|e| notes.push(format!("small-reward crossings unavailable: {e}")))
        .ok();
    Ok(SolveOutput {
        config_hash: config_hash("solve", config, &format!("dp={with_dp}")),
        unconstrained,
        demographic_parity,
        asymptotic,
        small_s,
        notes,
    })
}

pub fn solve_json(config: &GameConfig, with_dp: bool) -> CliResult<String> {
    let out = solve(config, with_dp)?;
    let mut s = serde_json::to_string_pretty(&out).expect("reports serialize");
    s.push('\n');
    Ok(s)
}

fn with_axis(base: &GameConfig, axis: Axis, value: f64) -> GameConfig {
    let mut c = base.clone();
    match axis {
        Axis::Alpha => c.alpha = value,
        Axis::Reward => c.reward = value,
    }
    c
}

/// Disadvantaged over advantaged selection rate; for fully symmetric groups,
/// second over first.
fn rate_ratio(config: &GameConfig, un: &EquilibriumReport) -> Option<f64> {
    let (num, den) = match asymptotic_predictions(config) {
        Ok(p) => (un.group(&p.disadvantaged)?, un.group(&p.advantaged)?),
        Err(Error::AmbiguousRegime) => (&un.groups[1], &un.groups[0]),
        Err(_) => return None,
    };
    Some(num.selection_rate / den.selection_rate)
}

pub fn sweep_csv(spec: &SweepSpec, grid_override: Option<&GridSpec>) -> CliResult<String> {
    let grid = grid_override.unwrap_or(&spec.grid);
    let values = grid.values()?;
    for &v in &values {
        let ok = match spec.axis {
            Axis::Alpha => v > 0.0 && v < 1.0,
            Axis::Reward => v > 0.0,
        };
        if !ok {
            return Err(CliError::Input(format!("grid value {v} is invalid for axis {:?}", spec.axis)));
        }
    }
    with_axis(&spec.base, spec.axis, values[0]).validate()?;

    let labels: Vec<String> = spec.base.groups.iter().map(|g| g.label.clone()).collect();
    let run_un = spec.solvers.contains(&Solver::Unconstrained);
    let run_dp = spec.solvers.contains(&Solver::DemographicParity);

    let rows: Vec<String> = values
        .par_iter()
        .map(|&v| {
            let config = with_axis(&spec.base, spec.axis, v);
            let solve = |name: &str, f: fn(&GameConfig) -> stratsel::Result<EquilibriumReport>| match f(&config) {
                Ok(r) => Some(r),
                Err(e) => {
                    warn!("{name} solve failed at {v}: {e}");
                    None
                }
            };
            let un = if run_un { solve("unconstrained", solve_unconstrained) } else { None };
            let dp = if run_dp { solve("demographic parity", solve_demographic_parity) } else { None };
            let n = labels.len();
            let mut cells = vec![fmt_num(Some(v)), fmt_num(un.as_ref().and_then(|r| r.threshold))];
            for g in 0..n {
                cells.push(fmt_num(dp.as_ref().map(|r| r.groups[g].threshold)));
            }
            for g in 0..n {
                cells.push(fmt_num(un.as_ref().map(|r| r.groups[g].avg_effort)));
            }
            for g in 0..n {
                cells.push(fmt_num(un.as_ref().map(|r| r.groups[g].selection_rate)));
            }
            cells.push(fmt_num(un.as_ref().and_then(|r| rate_ratio(&config, r))));
            let (qu, qd) = (un.as_ref().map(|r| r.quality), dp.as_ref().map(|r| r.quality));
            cells.push(fmt_num(qu));
            cells.push(fmt_num(qd));
            cells.push(fmt_num(qu.zip(qd).map(|(a, b)| a / b)));
            csv_line(cells)
        })
        .collect();

    let mut header = vec!["axis_value".to_string(), "theta_un".to_string()];
    header.extend(labels.iter().map(|l| format!("theta_dp_{l}")));
    header.extend(labels.iter().map(|l| format!("effort_{l}_un")));
    header.extend(labels.iter().map(|l| format!("rate_{l}_un")));
    header.extend(["rate_ratio", "quality_un", "quality_dp", "quality_ratio"].map(String::from));

    let args = serde_json::to_string(grid).expect("grid serializes");
    let mut out = format!("# config_hash={}\n", config_hash("sweep", spec, &args));
    out.push_str(&csv_line(header));
    for r in rows {
        out.push_str(&r);
    }
    Ok(out)
}

pub fn dropout_csv(config: &GameConfig, grid: &GridSpec) -> CliResult<String> {
    config.validate()?;
    let rewards = grid.values()?;
    if let Some(bad) = rewards.iter().find(|&&s| s <= 0.0) {
        return Err(CliError::Input(format!("reward grid value {bad} must be positive")));
    }
    let mut header = vec!["reward".to_string()];
    for g in &config.groups {
        let l = &g.label;
        header.extend([
            format!("theta_d_{l}"),
            format!("br_min_{l}"),
            format!("br_max_{l}"),
            format!("normalized_{l}"),
        ]);
    }
    let mut out = format!(
        "# config_hash={}\n",
        config_hash("dropout", config, &serde_json::to_string(grid).expect("grid serializes"))
    );
    out.push_str(&csv_line(header));
    for &s in &rewards {
        let mut cells = vec![fmt_num(Some(s))];
        for (g, params) in config.groups.iter().enumerate() {
            let model = config.group_model(g);
            match best_response::dropout_threshold(&model, s) {
                Ok(d) => cells.extend([
                    fmt_num(Some(d.theta_d)),
                    fmt_num(Some(d.br_min)),
                    fmt_num(Some(d.br_max)),
                    fmt_num(Some(d.theta_d * (model.cost / (2.0 * s)).sqrt())),
                ]),
                Err(Error::SubcriticalReward { bound, .. }) => {
                    warn!("group {}: reward {s} is below the critical value {bound}; no dropout", params.label);
                    cells.extend(std::iter::repeat_n(String::new(), 4));
                }
                Err(e) => return Err(e.into()),
            }
        }
        out.push_str(&csv_line(cells));
    }
    Ok(out)
}

/// Runs the dynamics from zero effort for every group.
pub fn dynamics_csv(config: &GameConfig, mode: DynamicsMode, steps: usize, tol: f64) -> CliResult<String> {
    config.validate()?;
    if steps == 0 {
        return Err(CliError::Input("steps must be at least 1".into()));
    }
    let dynamics = Dynamics::new(config)?;
    let init = vec![EffortDistribution::point(0.0); config.groups.len()];
    let trace = dynamics.run(mode, steps, init, tol)?;

    let labels: Vec<&str> = config.labels();
    let mut header = vec!["t".to_string(), "theta".to_string()];
    header.extend(labels.iter().map(|l| format!("avg_effort_{l}")));
    header.extend(labels.iter().map(|l| format!("rate_{l}")));
    let args = format!("mode={mode:?};steps={steps};tol={tol:e}");
    let mut out = format!("# config_hash={}\n", config_hash("dynamics", config, &args));
    out.push_str(&csv_line(header));
    let tracked = trace.tracked();
    for (k, state) in trace.states.iter().enumerate() {
        let mut cells = vec![state.t.to_string(), fmt_num(Some(tracked[k]))];
        cells.extend(trace.avg_efforts[k].iter().map(|&e| fmt_num(Some(e))));
        cells.extend(trace.selection_rates[k].iter().map(|&x| fmt_num(Some(x))));
        out.push_str(&csv_line(cells));
    }
    match &trace.convergence {
        Convergence::Converged { theta } => log::info!("converged to {theta}"),
        Convergence::Cycle { period, .. } => log::info!("cycle of period {period}"),
        Convergence::MaxStepsReached => log::info!("reached {steps} steps"),
    }
    Ok(out)
}

/// Configurations checked by `verify` when none is given.
pub fn default_suite() -> Vec<(String, GameConfig)> {
    use stratsel::{DecisionMode, GroupParams};
    let two = |s: f64, alpha: f64, h: GroupParams, l: GroupParams, mode: DecisionMode| GameConfig {
        reward: s,
        alpha,
        eta_sq: 1.0,
        dm_mode: mode,
        groups: vec![h, l],
    };
    vec![
        (
            "low_spread_mixing".into(),
            two(10.0, 0.1, GroupParams::with_sigma("H", 0.5, 1.0, 0.1), GroupParams::with_sigma("L", 0.5, 1.0, 1.0), DecisionMode::Bayesian),
        ),
        (
            "costly_low_spread".into(),
            two(10.0, 0.1, GroupParams::with_sigma("H", 0.5, 5.0, 0.1), GroupParams::with_sigma("L", 0.5, 1.0, 1.0), DecisionMode::Bayesian),
        ),
        (
            "small_reward".into(),
            two(1.0, 0.3, GroupParams::with_sigma("H", 0.5, 1.0, 0.6), GroupParams::with_sigma("L", 0.5, 1.0, 1.0), DecisionMode::Bayesian),
        ),
        (
            "noisy_bayesian".into(),
            two(50.0, 0.25, GroupParams::new("H", 0.4, 1.0, 2.0), GroupParams::new("L", 0.6, 1.0, 0.5), DecisionMode::Bayesian),
        ),
        (
            "noisy_oblivious".into(),
            two(50.0, 0.25, GroupParams::new("H", 0.4, 1.0, 2.0), GroupParams::new("L", 0.6, 1.5, 0.5), DecisionMode::Oblivious),
        ),
    ]
}

/// Runs the oracle checks and renders the pass/fail table. The boolean is
/// true when every check passed.
pub fn verify(configs: &[(String, GameConfig)], n: usize, seed: u64) -> CliResult<(String, bool, Vec<Check>)> {
    let mut table = String::new();
    let mut failed = Vec::new();
    writeln!(table, "{:<16} {:<44} {:>16} {:>16} {:>12}  result", "config", "check", "analytic", "oracle", "scale")
        .expect("write to string");
    for (k, (name, config)) in configs.iter().enumerate() {
        config.validate()?;
        let checks = verify_config(config, n, seed.wrapping_add(k as u64 * 1_000_003))?;
        for c in checks {
            writeln!(
                table,
                "{:<16} {:<44} {:>16.10} {:>16.10} {:>12.3e}  {}",
                name,
                c.name,
                c.analytic,
                c.oracle,
                c.scale,
                if c.passed { "PASS" } else { "FAIL" }
            )
            .expect("write to string");
            if !c.passed {
                failed.push(c);
            }
        }
    }
    let ok = failed.is_empty();
    Ok((table, ok, failed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(GridSpec::parse("0:1:3").unwrap().values().unwrap(), vec![0.0, 0.5, 1.0]);
        let log = GridSpec::parse("100:100000:4:log").unwrap().values().unwrap();
        assert_eq!(log.len(), 4);
        assert!((log[1] - 1000.0).abs() < 1e-9);
        assert_eq!(log[3], 100000.0);
        assert_eq!(GridSpec::parse("1, 2.5").unwrap(), GridSpec::List(vec![1.0, 2.5]));
        assert!(GridSpec::parse("0:1").is_err());
        assert!(GridSpec::parse("0:1:1").unwrap().values().is_err());
        assert!(GridSpec::parse("a,b").is_err());
    }

    #[test]
    fn number_format_round_trips() {
        for v in [0.1, 4.222011246977919, 1e-300, 123456.789, -2.5e-7, 0.0] {
            let s = fmt_num(Some(v));
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_num(Some(f64::NAN)), "");
        assert_eq!(fmt_num(None), "");
    }

    #[test]
    fn sweep_spec_json_shape() {
        let spec: SweepSpec = serde_json::from_str(
            r#"{"axis":"reward","grid":{"lo":1,"hi":10,"count":2},
                "base":{"reward":1,"alpha":0.2,"eta_sq":1,
                        "groups":[{"label":"A","share":0.5,"cost":1},{"label":"B","share":0.5,"cost":2}]}}"#,
        )
        .unwrap();
        assert_eq!(spec.solvers, all_solvers());
        assert_eq!(spec.grid.values().unwrap(), vec![1.0, 10.0]);
    }
}
