//! Command-line harness: model generation, exact and sampled planning runs,
//! beacon episodes, and seed-sweep benchmarks. All outputs are plain CSV/JSON
//! and byte-identical across reruns with the same flags (wall-clock fields
//! are recorded only with `--timings`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use aotree::env::{gen_random_pomdp, BeaconConfig, BeaconEnv, RandomPomdpSpec};
use aotree::error::{AotError, Result};
use aotree::exact::ExactSolver;
use aotree::planner::{
    plan_exact, plan_sampled, replan_episode, PlanResult, SampledPlanConfig, TraceRow,
};
use aotree::pomdp::{DiscreteBelief, TabularPomdp, TabularSampler};
use aotree::sparse::{root_belief, SampleParams};
use aotree::topology::{RefinementSchedule, Topology};

#[derive(Parser)]
#[command(
    name = "aotree",
    version,
    about = "Belief-tree planning with adaptive observation topologies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded random tabular POMDP and write it as JSON.
    GenPomdp(GenArgs),
    /// Run the adaptive planner with exact bound evaluation on a tabular model.
    SolveExact(SolveArgs),
    /// Run the adaptive planner with sparse-sampled bounds on a tabular model.
    SolveSparse(SolveArgs),
    /// Run a closed-loop beacon-navigation episode with per-step replanning.
    BeaconRun(BeaconArgs),
    /// Sweep seeds and aggregate agreement, speedup and iteration counts.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct PlanOpts {
    /// Master seed for sampling, topology assignment and refinement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also run the all-original-topology baseline planner for comparison.
    #[arg(long)]
    compare_full: bool,
    /// Fraction of propagated nodes starting in the original regime.
    #[arg(long, default_value_t = 0.15)]
    init_fraction: f64,
    /// Regime flips per refinement iteration.
    #[arg(long, default_value_t = 5)]
    refine_step: usize,
    /// Planning-depth override.
    #[arg(long)]
    depth: Option<usize>,
    /// Observation samples per original-regime node (sampled mode).
    #[arg(long, default_value_t = 50)]
    obs_samples: usize,
    /// Particles per belief (sampled mode).
    #[arg(long, default_value_t = 50)]
    particles: usize,
    /// Interval-separation slack for identification and pruning.
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    /// Value-range bound override for the concentration calculator.
    #[arg(long)]
    vmax: Option<f64>,
    /// Maximum number of expanded tree nodes per evaluation.
    #[arg(long, default_value_t = 1 << 32)]
    budget_nodes: usize,
    /// Record wall-clock milliseconds in outputs (otherwise written as 0 so
    /// reruns are byte-identical).
    #[arg(long)]
    timings: bool,
}

impl PlanOpts {
    fn schedule(&self, seed: u64) -> RefinementSchedule {
        RefinementSchedule {
            flips_per_iteration: self.refine_step,
            max_iterations: usize::MAX,
            seed,
        }
    }

    fn sample_params(&self, seed: u64) -> SampleParams {
        SampleParams {
            obs_samples: self.obs_samples,
            particles: self.particles,
            seed,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 20)]
    observations: usize,
    /// Planning horizon stored in the model.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    reward_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    reward_hi: f64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Tabular model JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Optional topology JSON file overriding the seeded initial topology.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[command(flatten)]
    opts: PlanOpts,
}

#[derive(Args)]
struct BeaconArgs {
    /// World config JSON; the built-in default world when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Episode length in environment steps.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[command(flatten)]
    opts: PlanOpts,
}

#[derive(Copy, Clone, ValueEnum)]
enum BenchMode {
    Exact,
    Sparse,
    Beacon,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    mode: BenchMode,
    /// Number of seeds swept, starting at --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Tabular model file (exact/sparse modes); a fresh random instance per
    /// seed is generated when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Beacon world config (beacon mode).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 20)]
    observations: usize,
    /// Episode length (beacon mode).
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[command(flatten)]
    opts: PlanOpts,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AOT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let payload = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": e.to_string() },
                "exit_code": code,
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

fn error_kind(e: &AotError) -> &'static str {
    match e {
        AotError::Validation { .. } => "validation",
        AotError::MissingVmax => "validation",
        AotError::Json(_) => "validation",
        AotError::Io(_) => "io",
        _ => "planner",
    }
}

fn exit_code(e: &AotError) -> u8 {
    match error_kind(e) {
        "validation" => 2,
        "io" => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenPomdp(a) => cmd_gen_pomdp(a),
        Cmd::SolveExact(a) => cmd_solve(a, true),
        Cmd::SolveSparse(a) => cmd_solve(a, false),
        Cmd::BeaconRun(a) => cmd_beacon(a),
        Cmd::Bench(a) => cmd_bench(a),
    }
}

fn cmd_gen_pomdp(a: GenArgs) -> Result<()> {
    let spec = RandomPomdpSpec {
        num_states: a.states,
        num_actions: a.actions,
        num_observations: a.observations,
        horizon: a.depth,
        seed: a.seed,
        reward_range: [a.reward_lo, a.reward_hi],
    };
    let model = gen_random_pomdp(&spec)?;
    if let Some(dir) = a.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    model.to_json_file(&a.out)?;
    log::info!(
        "wrote {}x{}x{} model to {}",
        a.states,
        a.actions,
        a.observations,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    chosen_action: usize,
    identified: bool,
    iterations: usize,
    elapsed_ms: u64,
    baseline_action: Option<usize>,
    baseline_elapsed_ms: Option<u64>,
    agreement: Option<bool>,
}

fn write_trace(path: &Path, trace: &[TraceRow], timings: bool) -> Result<()> {
    let mut out = String::from("iteration,action,lb,ub,pruned,identified,flipped_cum,elapsed_ms\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.action,
            r.lb,
            r.ub,
            r.pruned as u8,
            r.identified as u8,
            r.flipped_cum,
            if timings { r.elapsed_ms } else { 0 },
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_model(args: &SolveArgs) -> Result<TabularPomdp<f64>> {
    let mut model = TabularPomdp::from_json_file(&args.model)?;
    if let Some(depth) = args.opts.depth {
        model.horizon = depth;
    }
    model.validate()?;
    Ok(model)
}

/// One exact or sampled planning run plus the optional all-original baseline.
/// Returns (plan, plan_time_s, baseline action, baseline_time_s).
fn solve_once(
    model: &TabularPomdp<f64>,
    initial: &Topology,
    opts: &PlanOpts,
    seed: u64,
    exact: bool,
    compare: bool,
) -> Result<(PlanResult, f64, Option<usize>, f64)> {
    if exact {
        let b0 = DiscreteBelief::new(model.initial_belief.clone());
        let t0 = Instant::now();
        let plan = plan_exact(
            model,
            initial,
            &b0,
            opts.epsilon,
            opts.budget_nodes,
            &opts.schedule(seed),
        )?;
        let plan_s = t0.elapsed().as_secs_f64();
        let (baseline, base_s) = if compare {
            let solver = ExactSolver::new(model, opts.budget_nodes);
            let t1 = Instant::now();
            let mut best = (0usize, f64::NEG_INFINITY);
            for a in 0..model.num_actions {
                let q = solver.q_optimal_full(&b0, a)?;
                if q > best.1 {
                    best = (a, q);
                }
            }
            (Some(best.0), t1.elapsed().as_secs_f64())
        } else {
            (None, 0.0)
        };
        Ok((plan, plan_s, baseline, base_s))
    } else {
        let sampler = TabularSampler::new(model);
        let params = opts.sample_params(seed);
        let b0 = root_belief(&sampler, &params);
        let t0 = Instant::now();
        let plan = plan_sampled(
            &sampler,
            initial,
            &b0,
            &params,
            opts.epsilon,
            &opts.schedule(seed),
        )?;
        let plan_s = t0.elapsed().as_secs_f64();
        let (baseline, base_s) = if compare {
            let t1 = Instant::now();
            let base = plan_sampled(
                &sampler,
                &Topology::tau_z(),
                &b0,
                &params,
                opts.epsilon,
                &opts.schedule(seed),
            )?;
            (Some(base.chosen_action), t1.elapsed().as_secs_f64())
        } else {
            (None, 0.0)
        };
        Ok((plan, plan_s, baseline, base_s))
    }
}

fn cmd_solve(args: SolveArgs, exact: bool) -> Result<()> {
    let model = load_model(&args)?;
    let opts = &args.opts;
    let initial = match &args.topology {
        Some(path) => Topology::from_json_file(path)?,
        None => Topology::initial(opts.init_fraction, opts.seed),
    };
    let (plan, plan_s, baseline, base_s) =
        solve_once(&model, &initial, opts, opts.seed, exact, opts.compare_full)?;

    std::fs::create_dir_all(&opts.out)?;
    write_trace(&opts.out.join("trace.csv"), &plan.trace, opts.timings)?;
    let summary = SolveSummary {
        chosen_action: plan.chosen_action,
        identified: plan.identified,
        iterations: plan.iterations,
        elapsed_ms: if opts.timings {
            (plan_s * 1000.0) as u64
        } else {
            0
        },
        baseline_action: baseline,
        baseline_elapsed_ms: baseline.map(|_| if opts.timings { (base_s * 1000.0) as u64 } else { 0 }),
        agreement: baseline.map(|b| b == plan.chosen_action),
    };
    write_json(&opts.out.join("summary.json"), &summary)?;
    log::info!(
        "chosen action {} (identified={}) in {} iterations",
        plan.chosen_action,
        plan.identified,
        plan.iterations
    );
    Ok(())
}

#[derive(Serialize)]
struct BeaconSummary {
    steps: usize,
    total_reward: f64,
    final_state: Vec<f64>,
    final_goal_distance: f64,
    planning_ms: u64,
    baseline_planning_ms: u64,
    agreement: Option<f64>,
    speedup: Option<f64>,
}

fn beacon_config(path: &Option<PathBuf>, opts: &PlanOpts) -> Result<BeaconConfig> {
    let mut config = match path {
        Some(p) => BeaconConfig::from_json_file(p)?,
        None => BeaconConfig::default(),
    };
    if let Some(depth) = opts.depth {
        config.horizon = depth;
    }
    if let Some(vmax) = opts.vmax {
        config.vmax = vmax;
    }
    Ok(config)
}

fn cmd_beacon(args: BeaconArgs) -> Result<()> {
    let opts = &args.opts;
    let env = BeaconEnv::new(beacon_config(&args.config, opts)?);
    let cfg = SampledPlanConfig {
        params: opts.sample_params(opts.seed),
        epsilon: opts.epsilon,
        init_fraction: opts.init_fraction,
        schedule: opts.schedule(opts.seed),
    };
    let episode = replan_episode(&env, args.steps, &cfg, opts.compare_full, opts.seed)?;

    std::fs::create_dir_all(&opts.out)?;
    let mut csv = String::from("step,action,reward,planning_ms,state_0,state_1\n");
    for s in &episode.steps {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.step,
            s.action,
            s.reward,
            if opts.timings { s.planning_ms } else { 0 },
            s.state[0],
            s.state[1],
        ));
    }
    std::fs::write(opts.out.join("episode.csv"), csv)?;

    let final_goal_distance = env.goal_distance(&[episode.final_state[0], episode.final_state[1]]);
    let summary = BeaconSummary {
        steps: episode.steps.len(),
        total_reward: episode.total_reward,
        final_state: episode.final_state.clone(),
        final_goal_distance,
        planning_ms: if opts.timings { episode.planning_ms } else { 0 },
        baseline_planning_ms: if opts.timings { episode.baseline_ms } else { 0 },
        agreement: episode.agreement,
        speedup: if opts.timings { episode.speedup } else { None },
    };
    write_json(&opts.out.join("summary.json"), &summary)?;
    log::info!(
        "episode finished at distance {:.3} from goal",
        final_goal_distance
    );
    Ok(())
}

/// Outcome of one bench run; `agreement` is a 0/1 match for planning modes
/// and the per-step match fraction for beacon episodes.
struct RunRecord {
    seed: u64,
    detail: std::result::Result<RunDetail, String>,
}

struct RunDetail {
    chosen: i64,
    baseline: i64,
    identified: bool,
    iterations: usize,
    agreement: Option<f64>,
    plan_s: f64,
    baseline_s: f64,
    extra: f64,
}

#[derive(Serialize)]
struct BenchReport {
    mode: String,
    runs: usize,
    failures: usize,
    agreement_rate: Option<f64>,
    median_speedup: Option<f64>,
    iteration_histogram: BTreeMap<usize, usize>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(v[v.len() / 2])
}

fn bench_plan_run(args: &BenchArgs, seed: u64, exact: bool) -> Result<RunDetail> {
    let model = match &args.model {
        Some(path) => {
            let mut m = TabularPomdp::from_json_file(path)?;
            if let Some(d) = args.opts.depth {
                m.horizon = d;
            }
            m.validate()?;
            m
        }
        None => gen_random_pomdp(&RandomPomdpSpec {
            num_states: args.states,
            num_actions: args.actions,
            num_observations: args.observations,
            horizon: args.opts.depth.unwrap_or(2),
            seed,
            reward_range: [0.0, 1.0],
        })?,
    };
    let initial = Topology::initial(args.opts.init_fraction, seed);
    let (plan, plan_s, baseline, base_s) =
        solve_once(&model, &initial, &args.opts, seed, exact, true)?;
    let baseline = baseline.unwrap();
    Ok(RunDetail {
        chosen: plan.chosen_action as i64,
        baseline: baseline as i64,
        identified: plan.identified,
        iterations: plan.iterations,
        agreement: Some((plan.chosen_action == baseline) as u8 as f64),
        plan_s,
        baseline_s: base_s,
        extra: 0.0,
    })
}

fn bench_beacon_run(args: &BenchArgs, seed: u64) -> Result<RunDetail> {
    let env = BeaconEnv::new(beacon_config(&args.config, &args.opts)?);
    let cfg = SampledPlanConfig {
        params: args.opts.sample_params(seed),
        epsilon: args.opts.epsilon,
        init_fraction: args.opts.init_fraction,
        schedule: args.opts.schedule(seed),
    };
    let t0 = Instant::now();
    let episode = replan_episode(&env, args.steps, &cfg, true, seed)?;
    let _total = t0.elapsed();
    let iterations = episode.steps.iter().map(|s| s.iterations).sum();
    let final_dist = env.goal_distance(&[episode.final_state[0], episode.final_state[1]]);
    Ok(RunDetail {
        chosen: -1,
        baseline: -1,
        identified: episode.steps.iter().all(|s| s.identified),
        iterations,
        agreement: episode.agreement,
        plan_s: episode.planning_ms as f64 / 1000.0,
        baseline_s: episode.baseline_ms as f64 / 1000.0,
        extra: final_dist,
    })
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let opts = &args.opts;
    let seeds: Vec<u64> = (opts.seed..opts.seed + args.seeds).collect();
    let records: Vec<RunRecord> = seeds
        .par_iter()
        .map(|&seed| {
            let detail = match args.mode {
                BenchMode::Exact => bench_plan_run(&args, seed, true),
                BenchMode::Sparse => bench_plan_run(&args, seed, false),
                BenchMode::Beacon => bench_beacon_run(&args, seed),
            }
            .map_err(|e| e.to_string());
            RunRecord { seed, detail }
        })
        .collect();

    std::fs::create_dir_all(&opts.out)?;
    let mut csv = String::from(
        "seed,chosen_action,baseline_action,identified,iterations,agreement,plan_ms,baseline_ms,final_dist,error\n",
    );
    for r in &records {
        match &r.detail {
            Ok(d) => csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},\n",
                r.seed,
                d.chosen,
                d.baseline,
                d.identified as u8,
                d.iterations,
                d.agreement.map(|a| a.to_string()).unwrap_or_default(),
                if opts.timings {
                    (d.plan_s * 1000.0) as u64
                } else {
                    0
                },
                if opts.timings {
                    (d.baseline_s * 1000.0) as u64
                } else {
                    0
                },
                d.extra,
            )),
            Err(msg) => csv.push_str(&format!(
                "{},,,,,,,,,{}\n",
                r.seed,
                msg.replace([',', '\n'], ";")
            )),
        }
    }
    std::fs::write(opts.out.join("runs.csv"), csv)?;

    let ok: Vec<&RunDetail> = records.iter().filter_map(|r| r.detail.as_ref().ok()).collect();
    let agreements: Vec<f64> = ok.iter().filter_map(|d| d.agreement).collect();
    let mut histogram = BTreeMap::new();
    for d in &ok {
        *histogram.entry(d.iterations).or_insert(0usize) += 1;
    }
    let report = BenchReport {
        mode: match args.mode {
            BenchMode::Exact => "exact",
            BenchMode::Sparse => "sparse",
            BenchMode::Beacon => "beacon",
        }
        .to_string(),
        runs: records.len(),
        failures: records.len() - ok.len(),
        agreement_rate: if agreements.is_empty() {
            None
        } else {
            Some(agreements.iter().sum::<f64>() / agreements.len() as f64)
        },
        median_speedup: if opts.timings {
            median(
                ok.iter()
                    .filter(|d| d.plan_s > 0.0)
                    .map(|d| d.baseline_s / d.plan_s)
                    .collect(),
            )
        } else {
            None
        },
        iteration_histogram: histogram,
    };
    write_json(&opts.out.join("report.json"), &report)?;
    log::info!(
        "bench finished: {} runs, {} failures",
        report.runs,
        report.failures
    );
    Ok(())
}
