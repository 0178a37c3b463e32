mod config;
mod output;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use robust_synth::benchmarks::{brute_force_optimal, OracleInstance};
use robust_synth::bounds::{
    check_hypothesis, delta_disturbed, write_constants, BallRadiusSchedule, DisturbanceSpec, OslRegime,
};
use robust_synth::receding::{compare_robust_vs_receding, write_replan_log};
use robust_synth::synthesis::extract_pattern;
use robust_synth::{Error, F64Plan, Result, SynthesisOptions};

use config::{MethodName, Problem, RunConfig};
use output::{write_plot_script, write_run_files, SummaryRow, SummaryWriter};

#[derive(Parser)]
#[command(name = "robust-synth", version, about = "Robust grid-based controller synthesis for switched systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the method named by `run.method` in the configuration.
    Run(RunArgs),
    /// Robust synthesis: one pattern per initial cell.
    Synthesize(RunArgs),
    /// Receding-horizon variant, re-planning at every step.
    Receding(RunArgs),
    /// Both methods from every initial state, one summary table.
    Compare(RunArgs),
    /// Per-mode constants, (H) certificates and error-ball schedules.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        /// Points per schedule.
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Sampled estimate of the per-mode constants, as CSV.
    EstimateConstants {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive check of the dynamic program on the configured grid.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Only this start cell instead of all of them.
        #[arg(long)]
        cell: Option<u32>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory, overriding `output.dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Run even when (H) fails for some mode.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    no_cache: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run_method(args, Which::FromConfig),
        Command::Synthesize(args) => run_method(args, Which::Fixed(MethodName::Robust)),
        Command::Receding(args) => run_method(args, Which::Fixed(MethodName::Receding)),
        Command::Compare(args) => run_method(args, Which::Both),
        Command::Bounds { common, points } => bounds(&common.config, points),
        Command::EstimateConstants {
            common,
            samples,
            margin,
            seed,
            out,
        } => {
            let cfg = RunConfig::load(&common.config)?;
            let problem = Problem::from_config(&cfg)?;
            let c = &cfg.constants;
            let list = problem.estimated(samples.unwrap_or(c.samples), margin.unwrap_or(c.margin), seed.unwrap_or(c.seed))?;
            match out {
                Some(path) => write_constants(fs::File::create(path)?, &list)?,
                None => write_constants(io::stdout().lock(), &list)?,
            }
            Ok(())
        }
        Command::Oracle { common, cell } => oracle(&common.config, cell),
    }
}

struct Prepared {
    cfg: RunConfig,
    problem: Problem,
    plan: F64Plan,
    out: PathBuf,
}

fn prepare(args: &RunArgs) -> Result<Prepared> {
    let cfg = RunConfig::load(&args.common.config)?;
    let problem = Problem::from_config(&cfg)?;
    let constants = problem.constants(&cfg.constants)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out)?;
    let options = SynthesisOptions {
        force: args.force || cfg.output.force,
        cache_dir: (cfg.output.cache && !args.no_cache).then(|| out.join("cache")),
        ..SynthesisOptions::default()
    };
    let plan = F64Plan::build(
        &problem.system,
        problem.grid.clone(),
        problem.cost.clone(),
        problem.horizon,
        &constants,
        &options,
    )?;
    log::info!(
        "plan ready in {:.2}s: {} cells, horizon {}, cache hit {}",
        plan.build_seconds,
        plan.grid.len(),
        plan.horizon(),
        plan.cache_hit
    );
    Ok(Prepared { cfg, problem, plan, out })
}

fn run_dir(out: &Path, i: usize, total: usize) -> Result<PathBuf> {
    let dir = if total == 1 { out.to_path_buf() } else { out.join(format!("run_{i}")) };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn h_status(plan: &F64Plan) -> String {
    if plan.hypothesis.satisfied() {
        "satisfied".into()
    } else {
        format!("violated({})", plan.hypothesis.violations().iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";"))
    }
}

enum Which {
    Fixed(MethodName),
    FromConfig,
    Both,
}

fn run_method(args: RunArgs, which: Which) -> Result<()> {
    let Prepared { cfg, problem, plan, out } = prepare(&args)?;
    plan.policy.write_to(fs::File::create(out.join("policy.bin"))?)?;
    let provenance = plan.hypothesis.provenance;
    let h = h_status(&plan);
    let k_axis = plan.grid.k_per_axis();
    let total = problem.initial_states.len();
    let mut summary = SummaryWriter::create(&out.join("summary.csv"))?;

    let method = match which {
        Which::Fixed(m) => m,
        Which::FromConfig => cfg.run.method,
        Which::Both => {
            for row in compare_robust_vs_receding(&plan, &problem.initial_states)? {
                summary.push(&SummaryRow {
                    method: row.method.as_str(),
                    k_per_axis: k_axis,
                    horizon: plan.horizon(),
                    robust: row.method.is_robust(),
                    initial_state: &row.initial_state,
                    value: row.value,
                    metric: row.metric,
                    achieved_value: row.achieved_value,
                    achieved_metric: row.achieved_metric,
                    wall_seconds: row.wall_seconds,
                    provenance,
                    h_status: &h,
                })?;
            }
            return summary.finish();
        }
    };
    for (i, y0) in problem.initial_states.iter().enumerate() {
        let dir = run_dir(&out, i, total)?;
        let started = Instant::now();
        match method {
            MethodName::Robust => {
                let res = plan.robust(y0)?;
                let wall = plan.build_seconds + started.elapsed().as_secs_f64();
                write_run_files(&dir, &plan.system, &res.trajectory, &res.pattern)?;
                let mut extra = fs::File::create(dir.join("trajectory_from_y0.csv"))?;
                res.achieved_trajectory.write_csv(&mut extra)?;
                if res.trajectory.left_box_at.is_some() {
                    log::warn!("run {i}: trajectory left the domain box");
                }
                summary.push(&SummaryRow {
                    method: "robust",
                    k_per_axis: k_axis,
                    horizon: plan.horizon(),
                    robust: true,
                    initial_state: y0,
                    value: res.value,
                    metric: res.metric,
                    achieved_value: Some(res.achieved_value),
                    achieved_metric: res.achieved_metric,
                    wall_seconds: wall,
                    provenance,
                    h_status: &h,
                })?;
            }
            MethodName::Receding => {
                let res = plan.receding(y0)?;
                let wall = plan.build_seconds + started.elapsed().as_secs_f64();
                write_run_files(&dir, &plan.system, &res.trajectory, &res.applied_modes)?;
                write_replan_log(fs::File::create(dir.join("replan_log.csv"))?, &res.log)?;
                summary.push(&SummaryRow {
                    method: "receding",
                    k_per_axis: k_axis,
                    horizon: plan.horizon(),
                    robust: false,
                    initial_state: y0,
                    value: res.value,
                    metric: res.metric,
                    achieved_value: None,
                    achieved_metric: None,
                    wall_seconds: wall,
                    provenance,
                    h_status: &h,
                })?;
            }
        }
        write_plot_script(&dir, plan.system.dim(), plan.cost.metric_label())?;
    }
    summary.finish()
}

fn bounds(config: &Path, points: usize) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let problem = Problem::from_config(&cfg)?;
    let constants = problem.constants(&cfg.constants)?;
    let eps = problem.grid.eps();
    let tau = problem.system.tau();
    let report = check_hypothesis(&problem.system, &constants, eps)?;
    let w = DisturbanceSpec::new(cfg.disturbance.magnitude)?;
    let mut out = io::stdout().lock();
    writeln!(out, "# eps={eps} tau={tau} provenance={}", report.provenance)?;
    writeln!(out, "mode,L,C,lambda,gamma,G,alpha,max_step,h_holds,substeps")?;
    for (m, c) in report.modes.iter().zip(&constants) {
        let (g, a, s) = m
            .certificate
            .map(|cert| (cert.g.to_string(), cert.alpha.to_string(), cert.max_step.to_string()))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{g},{a},{s},{},{}",
            m.mode,
            c.lipschitz,
            c.growth,
            c.osl,
            c.disturbance_gain,
            m.failure.is_none(),
            m.substeps
        )?;
    }
    writeln!(out)?;
    writeln!(out, "mode,t,delta,delta_disturbed")?;
    for (m, c) in report.modes.iter().zip(&constants) {
        let h = tau / m.substeps as f64;
        let schedule = BallRadiusSchedule::new(m.mode, *c, eps, h)?;
        for (t, d) in schedule.sample(points) {
            let dw = if c.regime() == OslRegime::Contracting {
                delta_disturbed(c, eps, w, t)?.to_string()
            } else {
                String::new()
            };
            writeln!(out, "{},{t},{d},{dw}", m.mode)?;
        }
    }
    if !report.satisfied() && !cfg.output.force {
        return Err(report.into_error());
    }
    Ok(())
}

fn oracle(config: &Path, only: Option<u32>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let problem = Problem::from_config(&cfg)?;
    let constants = problem.constants(&cfg.constants)?;
    let options = SynthesisOptions {
        force: cfg.output.force,
        ..SynthesisOptions::default()
    };
    let m = problem.system.mode_count() as u128;
    let patterns = m.checked_pow(problem.horizon as u32).unwrap_or(u128::MAX);
    if patterns > robust_synth::benchmarks::ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            patterns,
            cap: robust_synth::benchmarks::ENUMERATION_CAP,
        });
    }
    let plan = F64Plan::build(
        &problem.system,
        problem.grid.clone(),
        problem.cost.clone(),
        problem.horizon,
        &constants,
        &options,
    )?;
    let cells: Vec<_> = match only {
        Some(z) if (z as usize) < plan.grid.len() => vec![robust_synth::GridIndex(z)],
        Some(z) => return Err(Error::Validation(format!("cell {z} outside the grid"))),
        None => plan.grid.iter().collect(),
    };
    let tau = problem.system.tau();
    let mut out = io::stdout().lock();
    writeln!(out, "cell,dp_value,brute_value,dp_pattern,brute_pattern,match")?;
    let mut mismatches = 0;
    for z in cells {
        let inst = OracleInstance {
            table: plan.successors.clone(),
            grid: plan.grid.clone(),
            cost: plan.cost.clone(),
            horizon: plan.horizon(),
            start: z,
            tau,
        };
        let brute = brute_force_optimal(&inst);
        let dp = extract_pattern(&plan.policy, &plan.successors, z, tau);
        let row = match (&brute, &dp) {
            (Ok((bp, bv)), Ok(dp)) => {
                let ok = bp.modes == dp.modes && bv.to_bits() == plan.values.at(z).to_bits();
                (plan.values.at(z).to_string(), bv.to_string(), fmt_modes(&dp.modes), fmt_modes(&bp.modes), ok)
            }
            (Err(Error::InvarianceViolation { .. }), Err(_)) => (String::new(), String::new(), String::new(), String::new(), true),
            (Err(e), _) if e.exit_code() == 2 => return Err(brute.unwrap_err()),
            _ => (String::new(), String::new(), String::new(), String::new(), false),
        };
        if !row.4 {
            mismatches += 1;
        }
        writeln!(out, "{},{},{},{},{},{}", z.0, row.0, row.1, row.2, row.3, row.4)?;
    }
    if mismatches > 0 {
        return Err(Error::Internal(format!("{mismatches} cells disagree with exhaustive search")));
    }
    Ok(())
}

fn fmt_modes(modes: &[robust_synth::ModeId]) -> String {
    modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ")
}
