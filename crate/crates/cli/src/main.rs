//! `koopman-uq`: expectations, moments, Monte Carlo baselines and launch
//! optimization for the built-in scenarios.
//!
//! Results go to stdout as JSON. Exit status is 0 on converged success,
//! 2 when a method stopped without meeting its tolerance, 1 on usage or
//! configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use koopman_uq::bench::{
    launch_optimization, BouncingBallParams, Scenario, ScenarioConfig, DECISION_BOUNDS, DECISION_NAMES, SCENARIOS,
};
use koopman_uq::koopman::{central_moments, koopman_expectation};
use koopman_uq::mc::{compare, mc_central_moments, mc_expectation};
use koopman_uq::optuu::{optimize, OptOptions, OptReport};
use koopman_uq::quad::QuadOptions;

const THREADS_ENV: &str = "KOOPMAN_UQ_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "koopman-uq",
    version,
    about = "Uncertainty propagation by Koopman expectation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expected value of the scenario observable by adaptive quadrature.
    Expect(Common),
    /// Central moments of the scenario observable.
    Moments(MomentsArgs),
    /// Seeded Monte Carlo estimate.
    Mc(McArgs),
    /// Quadrature and Monte Carlo side by side.
    Compare(CompareArgs),
    /// Minimize the expected squared miss over the launch state.
    Optimize(OptimizeArgs),
    /// Closed-form reference value.
    Oracle(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    max_evals: Option<usize>,
    /// Scenario parameter override, e.g. `--set z0=40` or `--set alpha.sigma=0.03`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write the JSON result here.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MomentsArgs {
    #[command(flatten)]
    common: Common,
    /// Highest moment order.
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Evaluate at the launch state found by `optimize` with default settings.
    #[arg(long)]
    optimized: bool,
    /// Cross-check against this many Monte Carlo samples.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct McArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sample counts at which prefix estimates are recorded.
    #[arg(long)]
    checkpoints: Option<String>,
    /// Convergence series CSV (n, estimate, std_error).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    /// Box as `lo:hi` per decision (x0, xdot0, z0), comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Initial decision vector, comma-separated; defaults to the scenario launch
    /// state projected into the box.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Relative merit-change stopping tolerance.
    #[arg(long, default_value_t = 1e-3)]
    ftol_rel: f64,
    /// Relative decision-change stopping tolerance.
    #[arg(long, default_value_t = 1e-3)]
    xtol_rel: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Per-iteration trace CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

struct Run {
    config: ScenarioConfig,
    scenario: Scenario,
}

fn load(common: &Common) -> Result<Run> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ScenarioConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = &common.scenario {
        config.scenario = s.clone();
    }
    if let Some(v) = common.rtol {
        config.method.rtol = v;
    }
    if let Some(v) = common.atol {
        config.method.atol = v;
    }
    if let Some(v) = common.max_evals {
        config.method.max_evals = v;
    }
    if let Some(p) = &common.json_out {
        config.output.json = Some(p.clone());
    }
    if !common.overrides.is_empty() {
        if config.scenario != SCENARIOS[0] {
            bail!("parameter overrides apply to the bouncing_ball scenario only");
        }
        config.bouncing_ball = apply_overrides(&config.bouncing_ball, &common.overrides)?;
    }
    if !(config.method.rtol > 0.0 && config.method.atol > 0.0) {
        bail!("tolerances must be positive");
    }
    let scenario = Scenario::from_config(&config)?;
    Ok(Run { config, scenario })
}

fn apply_overrides(params: &BouncingBallParams, overrides: &[String]) -> Result<BouncingBallParams> {
    let mut value = serde_json::to_value(params)?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{item}` is not KEY=VALUE"))?;
        let number: f64 = raw
            .trim()
            .parse()
            .with_context(|| format!("override `{item}`: not a number"))?;
        let mut slot = &mut value;
        for part in key.trim().split('.') {
            slot = slot.get_mut(part).ok_or_else(|| anyhow!("unknown parameter `{key}`"))?;
        }
        *slot = json!(number);
    }
    let out: BouncingBallParams = serde_json::from_value(value)?;
    out.validate()?;
    Ok(out)
}

fn quad_options(cfg: &ScenarioConfig) -> QuadOptions {
    QuadOptions::new(cfg.method.rtol, cfg.method.atol).with_max_evals(cfg.method.max_evals)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|_| anyhow!("bad {what} entry `{s}`")))
        .collect()
}

fn emit(cfg: &ScenarioConfig, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed pipe (e.g. `| head`) is not an error for the run itself
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    if let Some(path) = &cfg.output.json {
        fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn ball(run: &Run, command: &str) -> Result<BouncingBallParams> {
    match &run.scenario {
        Scenario::BouncingBall(p) => Ok(p.clone()),
        other => bail!("`{command}` is only defined for bouncing_ball, not {}", other.name()),
    }
}

fn parse_bounds(text: Option<&str>) -> Result<[(f64, f64); 3]> {
    let Some(text) = text else {
        return Ok(DECISION_BOUNDS);
    };
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        bail!("--bounds needs three lo:hi pairs");
    }
    let mut out = DECISION_BOUNDS;
    for (slot, p) in out.iter_mut().zip(parts) {
        let (lo, hi) = p.split_once(':').ok_or_else(|| anyhow!("bound `{p}` is not lo:hi"))?;
        *slot = (lo.trim().parse()?, hi.trim().parse()?);
    }
    Ok(out)
}

fn run_optimizer(base: &BouncingBallParams, args: &OptimizeArgs, quad: QuadOptions) -> Result<OptReport> {
    let bounds = parse_bounds(args.bounds.as_deref())?;
    let init: [f64; 3] = match &args.x0 {
        Some(text) => parse_list::<f64>(text, "--x0")?
            .try_into()
            .map_err(|_| anyhow!("--x0 needs three values"))?,
        None => {
            let d = base.decisions();
            std::array::from_fn(|i| d[i].clamp(bounds[i].0, bounds[i].1))
        }
    };
    let problem = launch_optimization(base, &bounds, &init)?
        .with_quad(quad)
        .with_options(OptOptions {
            xtol_rel: args.xtol_rel,
            ftol_rel: args.ftol_rel,
            max_iter: args.max_iter,
            ..OptOptions::default()
        });
    Ok(optimize(&problem)?)
}

fn default_optimize_args() -> OptimizeArgs {
    OptimizeArgs {
        common: Common {
            scenario: None,
            config: None,
            rtol: None,
            atol: None,
            max_evals: None,
            overrides: Vec::new(),
            json_out: None,
        },
        bounds: None,
        x0: None,
        ftol_rel: 1e-3,
        xtol_rel: 1e-3,
        max_iter: 200,
        csv: None,
    }
}

// Returns whether every method converged.
fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Expect(common) => {
            let run = load(&common)?;
            let r = koopman_expectation(
                &run.scenario.problem()?,
                &run.scenario.observable(),
                &quad_options(&run.config),
            )?;
            emit(
                &run.config,
                &json!({
                    "scenario": run.scenario.name(),
                    "labels": run.scenario.observable().labels(),
                    "result": to_value(&r)?,
                }),
            )?;
            Ok(r.converged)
        }
        Command::Oracle(common) => {
            let run = load(&common)?;
            let value = run.scenario.reference()?;
            let mut out = json!({ "scenario": run.scenario.name(), "value": value });
            if let Scenario::BouncingBall(p) = &run.scenario {
                let o = p.oracle()?;
                let (lo, hi) = o.two_impact_range().ok_or_else(|| anyhow!("no two-impact range"))?;
                out["two_impact_alpha_range"] = json!([lo, if hi.is_finite() { json!(hi) } else { json!(1.0) }]);
                out["miss_polynomial"] = json!(o.miss_polynomial());
                out["bounce_count_at_mean"] = json!(o.bounce_count(p.alpha.mean())?);
            }
            emit(&run.config, &out)?;
            Ok(true)
        }
        Command::Moments(args) => {
            let mut run = load(&args.common)?;
            let mut optimized = Value::Null;
            if args.optimized {
                let base = ball(&run, "moments --optimized")?;
                let report = run_optimizer(&base, &default_optimize_args(), QuadOptions::new(1e-4, 1e-10))?;
                let tuned = base.with_decisions(&report.u_star);
                optimized = json!({ "u_star": report.u_star, "objective_value": report.objective_value, "converged": report.converged });
                run.scenario = Scenario::BouncingBall(tuned);
            }
            let problem = run.scenario.problem()?;
            let g = run.scenario.moment_observable();
            let m = central_moments(&problem, &g, args.n, &quad_options(&run.config))?;
            let mut out = json!({
                "scenario": run.scenario.name(),
                "orders": (2..=args.n).collect::<Vec<_>>(),
                "mean": m.mean,
                "central_moments": m.values,
                "errors": m.errors,
                "evals": m.raw.evals,
                "wall_time": m.raw.wall_time,
                "converged": m.raw.converged,
            });
            if !optimized.is_null() {
                out["optimized"] = optimized;
            }
            if let Some(n) = args.mc {
                let seed = args.seed.unwrap_or(run.config.method.seed);
                let mc = mc_central_moments(&problem, &g, args.n, n, seed, 100)?;
                out["mc"] = to_value(&mc)?;
            }
            emit(&run.config, &out)?;
            Ok(m.raw.converged)
        }
        Command::Mc(args) => {
            let mut run = load(&args.common)?;
            if let Some(n) = args.n {
                run.config.method.n = n;
            }
            if let Some(s) = args.seed {
                run.config.method.seed = s;
            }
            if let Some(c) = &args.checkpoints {
                run.config.method.checkpoints = parse_list(c, "--checkpoints")?;
            }
            let csv = args.csv.clone().or(run.config.output.csv.clone());
            let m = &run.config.method;
            let r = mc_expectation(
                &run.scenario.problem()?,
                &run.scenario.observable(),
                m.n,
                m.seed,
                &m.checkpoints,
            )?;
            if let Some(path) = csv {
                write_csv(
                    &path,
                    "n,estimate,std_error",
                    r.convergence
                        .iter()
                        .map(|c| format!("{},{:e},{:e}", c.n, c.estimate, c.std_error)),
                )?;
            }
            emit(
                &run.config,
                &json!({ "scenario": run.scenario.name(), "result": to_value(&r)? }),
            )?;
            Ok(true)
        }
        Command::Compare(args) => {
            let mut run = load(&args.common)?;
            if let Some(n) = args.n {
                run.config.method.n = n;
            }
            if let Some(s) = args.seed {
                run.config.method.seed = s;
            }
            let problem = run.scenario.problem()?;
            let r = compare(
                &problem,
                &run.scenario.observable(),
                &quad_options(&run.config),
                run.config.method.n,
                run.config.method.seed,
            )?;
            let reference = run.scenario.reference().ok();
            let mut out = json!({ "scenario": run.scenario.name(), "report": to_value(&r)? });
            if let Some(truth) = reference {
                out["reference"] = json!(truth);
                out["koopman_abs_error"] = json!((r.koopman.value[0] - truth).abs());
                out["mc_abs_error"] = json!((r.mc.estimate[0] - truth).abs());
            }
            emit(&run.config, &out)?;
            Ok(r.koopman.converged)
        }
        Command::Optimize(args) => {
            let run = load(&args.common)?;
            let base = ball(&run, "optimize")?;
            let quad = if args.common.rtol.is_some() || args.common.atol.is_some() {
                quad_options(&run.config)
            } else {
                QuadOptions::new(1e-4, 1e-10)
            };
            let start = std::time::Instant::now();
            let report = run_optimizer(&base, &args, quad)?;
            let wall = start.elapsed().as_secs_f64();
            if let Some(path) = args.csv.clone().or(run.config.output.csv.clone()) {
                let header = format!("iteration,{},objective,merit,max_violation", DECISION_NAMES.join(","));
                write_csv(
                    &path,
                    &header,
                    report.trace.iter().map(|t| {
                        let u: Vec<String> = t.u.iter().map(|v| format!("{v:e}")).collect();
                        format!(
                            "{},{},{:e},{:e},{:e}",
                            t.iteration,
                            u.join(","),
                            t.objective,
                            t.merit,
                            t.max_violation
                        )
                    }),
                )?;
            }
            emit(
                &run.config,
                &json!({ "scenario": run.scenario.name(), "decisions": DECISION_NAMES, "wall_time": wall, "report": to_value(&report)? }),
            )?;
            Ok(report.converged)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(text) = std::env::var(THREADS_ENV) {
        let n: usize = text
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={text} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: tolerance not met");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
