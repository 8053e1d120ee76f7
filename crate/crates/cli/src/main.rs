use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coalition_nash::analysis::{cost_accounting, lemma1_residuals, sample_diagnostics, BlockTransforms, CostReport};
use coalition_nash::dynamics::{write_csv, DynamicsError, Seeker};
use coalition_nash::graph::interference_to_k_graph;
use coalition_nash::numeric::{inf_norm, round_trip};
use coalition_nash::oracle::{check_monotonicity, gradient_check, solve_stationary, verify_nash, StationaryReport};
use coalition_nash::presets;
use coalition_nash::scenario::{resolve, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const USAGE: u8 = 1;
const VALIDATION: u8 = 2;
const NUMERICAL: u8 = 3;

/// Nash equilibrium seeking for coalition games over interference graphs.
#[derive(Parser)]
#[command(name = "cnash", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the seeking dynamics and write the trajectory as CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Trajectory destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the run summary to this file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Find a stationary point with damped Newton and probe it for deviations.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
    },
    /// Print the interference, communication and block graphs of every coalition.
    Graphs {
        #[command(flatten)]
        common: Common,
    },
    /// Compare per-agent bookkeeping and traffic with the complete-graph baseline.
    Costs {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Gradient, monotonicity and consensus-bound spot checks.
    Check {
        #[command(flatten)]
        common: Common,
        /// Half-width of the sampling box around the initial point.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// List the bundled presets, or print one of them.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct Common {
    /// Preset name or path to a scenario file.
    scenario: String,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    step: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Kv,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure { code, message: message.to_string() }
}

fn dynamics_failure(e: DynamicsError) -> Failure {
    match e {
        DynamicsError::BadParams(_) | DynamicsError::BadInitialState(_) => fail(VALIDATION, e),
        _ => fail(NUMERICAL, e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out).and_then(|()| out.flush().map_err(|e| fail(VALIDATION, e))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(c: &Common) -> Result<Scenario, Failure> {
    let mut s = resolve(&c.scenario).map_err(|e| fail(VALIDATION, e))?;
    if let Some(d) = c.delta {
        s.game = s.game.clone().with_delta(d).map_err(|e| fail(VALIDATION, e))?;
    }
    if let Some(h) = c.step {
        s.integration.step = h;
    }
    if let Some(t) = c.horizon {
        s.integration.horizon = t;
    }
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    for w in s.warnings() {
        eprintln!("warning: {w}; convergence is not guaranteed");
    }
    Ok(s)
}

fn execute(cmd: Command, out: &mut impl Write) -> Result<(), Failure> {
    let text = match cmd {
        Command::Run { common, out: path, summary } => {
            let s = load(&common)?;
            return run(&s, out, path, summary);
        }
        Command::Solve { common, tol, max_iter } => return solve(&load(&common)?, out, tol, max_iter),
        Command::Graphs { common } => graphs(&load(&common)?),
        Command::Costs { common, format } => {
            let r = cost_accounting(&load(&common)?.game);
            match format {
                Format::Table => r.to_table(),
                Format::Csv => costs_csv(&r),
                Format::Kv => r.to_kv(),
            }
        }
        Command::Check { common, radius, samples } => return check(&load(&common)?, out, radius, samples),
        Command::Presets { name: None } => presets::names().map(|n| format!("{n}\n")).collect(),
        Command::Presets { name: Some(n) } => {
            presets::source(&n).ok_or_else(|| fail(VALIDATION, format!("unknown preset `{n}`")))?.to_string()
        }
    };
    out.write_all(text.as_bytes()).map_err(|e| fail(VALIDATION, e))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| round_trip(*x)).collect::<Vec<_>>().join(", ")
}

/// The pinned equilibrium when the scenario has one, otherwise a converged Newton solve from `x(0)`.
fn equilibrium(s: &Scenario) -> Option<Vec<f64>> {
    if let Some(x) = &s.x_star {
        return Some(x.clone());
    }
    let r = solve_stationary(&s.game, &s.initial_x, 1e-10, 100).ok()?;
    r.converged.then_some(r.x)
}

fn run(s: &Scenario, out: &mut impl Write, path: Option<PathBuf>, summary: Option<PathBuf>) -> Result<(), Failure> {
    let seeker = Seeker::new(&s.game);
    let s0 = s.initial_state(&seeker).map_err(dynamics_failure)?;
    let started = Instant::now();
    let traj = seeker.integrate(&s0, &s.integration).map_err(dynamics_failure)?;
    let wall = started.elapsed().as_secs_f64();

    let transforms = BlockTransforms::new(&seeker).map_err(|e| fail(VALIDATION, e))?;
    let x_star = equilibrium(s);
    let diag = sample_diagnostics(&seeker, &transforms, &traj, x_star.as_deref()).map_err(|e| fail(NUMERICAL, e))?;

    let mut csv = Vec::new();
    write_csv(&mut csv, &s.game, &traj, Some(&diag)).map_err(|e| fail(VALIDATION, e))?;
    match &path {
        Some(p) => std::fs::write(p, &csv).map_err(|e| fail(VALIDATION, format!("{}: {e}", p.display())))?,
        None => out.write_all(&csv).map_err(|e| fail(VALIDATION, e))?,
    }

    let last = traj.last();
    let pg = inf_norm(&s.game.pseudo_gradient(&last.x).map_err(|e| fail(NUMERICAL, e))?);
    let mut text = String::new();
    writeln!(text, "scenario = {}", s.name).unwrap();
    writeln!(text, "t_final = {}", round_trip(last.t)).unwrap();
    writeln!(text, "x_final = [{}]", join(&last.x)).unwrap();
    writeln!(text, "pseudo_gradient_norm = {}", round_trip(pg)).unwrap();
    if let Some(xs) = &x_star {
        let gap = last.x.iter().zip(xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        writeln!(text, "equilibrium_gap = {}", round_trip(gap)).unwrap();
    }
    writeln!(text, "steps = {}", traj.steps).unwrap();
    writeln!(text, "rejected_steps = {}", traj.rejected_steps).unwrap();
    writeln!(text, "stopped_early = {}", traj.stopped_early).unwrap();
    writeln!(text, "wall_seconds = {wall:.3}").unwrap();

    match summary {
        Some(p) => std::fs::write(&p, &text).map_err(|e| fail(VALIDATION, format!("{}: {e}", p.display()))),
        // keep stdout pure CSV when the trajectory goes there
        None if path.is_none() => {
            eprint!("{text}");
            Ok(())
        }
        None => out.write_all(text.as_bytes()).map_err(|e| fail(VALIDATION, e)),
    }
}

fn solve(s: &Scenario, out: &mut impl Write, tol: f64, max_iter: usize) -> Result<(), Failure> {
    let r: StationaryReport = solve_stationary(&s.game, &s.initial_x, tol, max_iter).map_err(|e| fail(NUMERICAL, e))?;
    let mut text = String::new();
    writeln!(text, "x = [{}]", join(&r.x)).unwrap();
    writeln!(text, "residual = {}", round_trip(r.residual)).unwrap();
    writeln!(text, "iterations = {}", r.iterations).unwrap();
    writeln!(text, "converged = {}", r.converged).unwrap();
    writeln!(text, "singular = {}", r.singular).unwrap();
    writeln!(text, "fd_fallbacks = {}", r.fd_fallbacks).unwrap();
    if r.converged {
        let radius = 0.1 * inf_norm(&r.x).max(1.0);
        let nash = verify_nash(&s.game, &r.x, radius, 200, s.seed).map_err(|e| fail(NUMERICAL, e))?;
        for c in &nash.coalitions {
            writeln!(
                text,
                "coalition.{}.worst_decrease = {} ({} probes, {} outside the domain)",
                c.coalition,
                round_trip(c.worst_decrease),
                c.evaluated,
                c.domain_errors
            )
            .unwrap();
        }
        writeln!(text, "locally_consistent = {}", nash.locally_consistent()).unwrap();
    }
    if let Some(xs) = &s.reference.x_star {
        let gap = r.x.iter().zip(xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        writeln!(text, "reference_gap = {} (informational)", round_trip(gap)).unwrap();
    }
    out.write_all(text.as_bytes()).map_err(|e| fail(VALIDATION, e))?;
    if r.converged {
        Ok(())
    } else {
        Err(fail(NUMERICAL, format!("no stationary point within {max_iter} iterations")))
    }
}

fn graphs(s: &Scenario) -> String {
    let mut text = String::new();
    for (i0, c) in s.game.coalitions().iter().enumerate() {
        let i = i0 + 1;
        writeln!(text, "coalition {i} (m = {})", c.size()).unwrap();
        writeln!(text, "  interference:  {}", c.interference()).unwrap();
        writeln!(text, "  communication: {}", c.communication()).unwrap();
        for k in 1..=c.size() {
            match interference_to_k_graph(c.communication(), c.interference(), k) {
                Ok(g) => {
                    let verdict = if g.is_connected() { "connected" } else { "disconnected" };
                    writeln!(text, "  block {k}: {g} {verdict}").unwrap();
                }
                Err(e) => writeln!(text, "  block {k}: {e}").unwrap(),
            }
        }
        let report = &s.assumption3[i0];
        if report.passed() {
            writeln!(text, "  assumption 3: holds").unwrap();
        } else {
            writeln!(text, "  assumption 3: fails ({})", report.failures().join("; ")).unwrap();
        }
        if let Some(k) = &report.kernel {
            writeln!(text, "  triangle-free kernel: {k}").unwrap();
        }
    }
    text
}

fn costs_csv(r: &CostReport) -> String {
    let mut s = String::from("coalition,agent,aux_proposed,aux_baseline,tx_proposed,tx_baseline,dropped\n");
    for a in &r.agents {
        let dropped: Vec<String> = a.dropped.iter().map(|k| k.to_string()).collect();
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            a.coalition,
            a.agent,
            a.aux_proposed,
            a.aux_baseline,
            a.tx_proposed,
            a.tx_baseline,
            dropped.join(" ")
        )
        .unwrap();
    }
    s
}

fn check(s: &Scenario, out: &mut impl Write, radius: f64, samples: usize) -> Result<(), Failure> {
    if !(radius > 0.0) || samples == 0 {
        return Err(fail(VALIDATION, "radius and samples must be positive"));
    }
    let game = &s.game;
    let mut text = String::new();
    let mut problems = Vec::new();

    let g = gradient_check(game, &s.initial_x, 1e-5).map_err(|e| fail(NUMERICAL, e))?;
    writeln!(text, "gradient.max_rel_error = {}", round_trip(g.max_rel_error)).unwrap();
    if let Some((i, j, k)) = g.worst {
        writeln!(text, "gradient.worst = df{i}_{j}/dx{i}_{k}").unwrap();
    }
    if g.flagged {
        problems.push("symbolic and finite-difference gradients disagree");
    }

    let region: Vec<(f64, f64)> = s.initial_x.iter().map(|x| (x - radius, x + radius)).collect();
    let m = check_monotonicity(game, &region, samples, s.seed, &[]).map_err(|e| fail(NUMERICAL, e))?;
    writeln!(text, "monotonicity.min_inner = {}", round_trip(m.min_inner)).unwrap();
    writeln!(text, "monotonicity.evaluated = {}", m.evaluated).unwrap();
    writeln!(text, "monotonicity.domain_errors = {}", m.domain_errors).unwrap();
    writeln!(text, "monotonicity.violated = {}", m.violated()).unwrap();

    let seeker = Seeker::new(game);
    let transforms = BlockTransforms::new(&seeker).map_err(|e| fail(VALIDATION, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (mut checked, mut skipped, mut violations, mut worst) = (0usize, 0usize, 0usize, f64::NEG_INFINITY);
    for _ in 0..samples {
        let x: Vec<f64> = region.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        let mut w: Vec<f64> = (0..seeker.estimate_count()).map(|_| rng.random_range(-radius..radius)).collect();
        for b in seeker.blocks() {
            let mean = b.slots.iter().map(|&p| w[p]).sum::<f64>() / b.slots.len() as f64;
            for &p in &b.slots {
                w[p] -= mean;
            }
        }
        if game.check_costs(&x).is_err() {
            skipped += 1;
            continue;
        }
        let state = seeker.state_with_w(&x, w).map_err(dynamics_failure)?;
        for r in lemma1_residuals(&seeker, &transforms, &state).map_err(|e| fail(NUMERICAL, e))? {
            worst = worst.max(r.deviation - r.bound);
            if !r.holds(1e-12 * (1.0 + r.bound)) {
                violations += 1;
            }
        }
        checked += 1;
    }
    writeln!(text, "consensus_bound.points = {checked}").unwrap();
    writeln!(text, "consensus_bound.skipped = {skipped}").unwrap();
    writeln!(text, "consensus_bound.worst_excess = {}", round_trip(worst)).unwrap();
    writeln!(text, "consensus_bound.violations = {violations}").unwrap();
    if violations > 0 {
        problems.push("consensus bound violated");
    }
    out.write_all(text.as_bytes()).map_err(|e| fail(VALIDATION, e))?;
    if problems.is_empty() {
        Ok(())
    } else {
        Err(fail(NUMERICAL, problems.join("; ")))
    }
}
