use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use mrta_core::dataset::{build_artifacts, instance_id, replay_record, ReplayRecord};
use mrta_core::io::{
    read_instance, read_manifest, read_reward_matrix, read_schedule, write_decision_tensors, write_json_atomic,
    write_manifest, write_reward_matrix, write_schedule, DatasetManifest, TimingRecord,
};
use mrta_core::sim::{
    plot_data, run_policy, sampled_rollouts, summarize, write_csv, BenchRow, ExpertReplay, PolicyKind, PolicyRun,
    RandomRewards, RewardSequence, SimOptions, Simulation,
};
use mrta_core::{
    extract_tensors, generate_instance, solve_with, validate_schedule, GeneratorConfig, ProblemInstance, RewardMatrix,
    RolloutConfig, Schedule, SolveStatus,
};
use rayon::prelude::*;

use crate::config::FileConfig;
use crate::{data, BenchmarkArgs, CliError, ExtractArgs, GenDatasetArgs, ReplayArgs, ShapeArgs, SimulateArgs, SolveArgs, SolverArgs};

fn apply_solver(config: &mut FileConfig, args: &SolverArgs) {
    if let Some(t) = args.time_limit {
        config.time_limit_s = t;
    }
    if args.node_limit.is_some() {
        config.node_limit = args.node_limit;
    }
}

fn apply_shape(config: &mut GeneratorConfig, args: &ShapeArgs) {
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut config.n_robots, args.robots);
    set(&mut config.n_tasks, args.tasks);
    set(&mut config.n_skills, args.skills);
    set(&mut config.n_precedence, args.precedence);
}

fn apply_rollouts(config: &mut FileConfig, rollouts: Option<usize>, sigma: Option<f64>) {
    if let Some(n) = rollouts {
        config.rollouts.n_rollouts = n;
    }
    if let Some(s) = sigma {
        config.rollouts.sigma = s;
    }
}

fn load_instance(path: &Path) -> Result<(ProblemInstance, String), CliError> {
    read_instance(path).map_err(data)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(data)?);
    Ok(())
}

pub fn gen_dataset(mut config: FileConfig, args: GenDatasetArgs) -> Result<(), CliError> {
    apply_shape(&mut config.generator, &args.shape);
    apply_solver(&mut config, &args.solver);
    if let Some(n) = args.n {
        config.dataset_size = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    config.validate()?;
    let seeds: Vec<u64> = (0..config.dataset_size).map(|k| config.seed + k).collect();
    let solver = config.solver();
    let results: Vec<_> = seeds
        .par_iter()
        .map(|&seed| {
            build_artifacts(&args.out, &config.generator, seed, config.gamma, &solver)
                .with_context(|| format!("instance {}", instance_id(seed)))
        })
        .collect();

    let mut manifest = DatasetManifest::new(
        config.generator.clone(),
        config.seed,
        config.dataset_size,
        config.gamma,
        config.time_limit_s,
    );
    let mut timings = Vec::with_capacity(results.len());
    for r in results {
        let (record, timing): (_, TimingRecord) = r.map_err(data)?;
        manifest.records.push(record);
        timings.push(timing);
    }
    write_manifest(&args.out.join("manifest.json"), &manifest).map_err(data)?;
    write_json_atomic(&args.out.join("timings.json"), &timings).map_err(data)?;

    let optimal = manifest.records.iter().filter(|r| r.status == SolveStatus::Optimal).count();
    let timed_out: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| r.status == SolveStatus::FeasibleTimeout)
        .map(|r| r.instance_id.as_str())
        .collect();
    println!("wrote {} instances to {} ({optimal} solved optimally)", manifest.records.len(), args.out.display());
    if !timed_out.is_empty() {
        return Err(CliError::Timeout(format!(
            "{} instance(s) exceeded the solver budget and have no tensors: {}",
            timed_out.len(),
            timed_out.join(", ")
        )));
    }
    Ok(())
}

pub fn solve(mut config: FileConfig, args: SolveArgs) -> Result<(), CliError> {
    apply_solver(&mut config, &args.solver);
    config.validate()?;
    let (instance, id) = load_instance(&args.instance)?;
    let result = solve_with(&instance, &config.solver()).map_err(data)?;
    if let (Some(out), Some(schedule)) = (&args.out, &result.schedule) {
        write_schedule(out, schedule, &id).map_err(data)?;
    }
    print_json(&serde_json::json!({
        "instance_id": id,
        "status": result.status,
        "makespan": result.makespan(),
        "explored_nodes": result.explored_nodes,
        "wall_time_s": result.wall_time.as_secs_f64(),
    }))?;
    match result.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::FeasibleTimeout => Err(CliError::Timeout(format!(
            "solver budget exhausted for {id}; the best schedule found is not proven optimal"
        ))),
        SolveStatus::Infeasible => Err(data(anyhow!("instance {id} has a task no coalition can cover"))),
    }
}

pub fn extract_rewards(mut config: FileConfig, args: ExtractArgs) -> Result<(), CliError> {
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    config.validate()?;
    let (instance, id) = load_instance(&args.instance)?;
    let (schedule, schedule_id) = read_schedule(&args.schedule).map_err(data)?;
    if schedule_id != id {
        return Err(data(anyhow!("schedule belongs to {schedule_id}, instance is {id}")));
    }
    let points = extract_tensors(&schedule, &instance, config.gamma).map_err(data)?;
    write_decision_tensors(&args.out, &instance, &id, config.gamma, &points).map_err(data)?;
    if let Some(dir) = &args.reward_dir {
        for p in &points {
            let target = p.target_reward.as_ref().expect("extracted points carry targets");
            write_reward_matrix(&dir.join(format!("{id}-{:04}.json", p.index)), target, &id, p.index).map_err(data)?;
        }
    }
    println!("extracted {} decision points from {id}", points.len());
    Ok(())
}

fn load_rewards(paths: &[PathBuf], instance: &ProblemInstance, id: &str) -> Result<Vec<RewardMatrix>, CliError> {
    let mut loaded = Vec::with_capacity(paths.len());
    for path in paths {
        let (matrix, file) = read_reward_matrix(path, instance).map_err(data)?;
        if file.instance_id != id {
            return Err(data(anyhow!("{} is for instance {}, not {id}", path.display(), file.instance_id)));
        }
        loaded.push((file.decision_index, matrix));
    }
    loaded.sort_by_key(|(k, _)| *k);
    if let Some(w) = loaded.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(data(anyhow!("two reward files share decision index {}", w[0].0)));
    }
    Ok(loaded.into_iter().map(|(_, m)| m).collect())
}

pub fn simulate(mut config: FileConfig, args: SimulateArgs) -> Result<(), CliError> {
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let rollouts_requested = args.rollouts.is_some() || args.sigma.is_some();
    apply_rollouts(&mut config, args.rollouts, args.sigma);
    config.validate()?;
    let from_files = !args.rewards.is_empty();
    if rollouts_requested && !from_files && !args.policy.is_reward_based() {
        return Err(CliError::Usage(format!("--rollouts/--sigma apply to reward-based policies, not {}", args.policy)));
    }
    if args.trace.is_some() && (rollouts_requested || args.policy == PolicyKind::Sampled || args.policy == PolicyKind::Exact) {
        return Err(CliError::Usage("--trace records a single simulation; it cannot be combined with rollouts or the exact policy".into()));
    }
    if !from_files && args.policy.needs_expert() && args.schedule.is_none() {
        return Err(CliError::Usage(format!("policy {} needs --schedule", args.policy)));
    }
    let (instance, id) = load_instance(&args.instance)?;
    let expert = match &args.schedule {
        Some(path) => Some(read_schedule(path).map_err(data)?.0),
        None => None,
    };
    let rollouts = RolloutConfig { seed: config.seed, ..config.rollouts };

    let (schedule, label, trace) = if from_files {
        let seq = RewardSequence::new(load_rewards(&args.rewards, &instance, &id)?).map_err(data)?;
        if rollouts_requested {
            (sampled_rollouts(&instance, || seq.clone(), &rollouts).map_err(data)?.schedule, "reward-files", None)
        } else {
            let out = traced(&instance, seq, args.trace.is_some())?;
            (out.0, "reward-files", out.1)
        }
    } else if rollouts_requested && args.policy != PolicyKind::Sampled {
        let out = match args.policy {
            PolicyKind::Random => sampled_rollouts(&instance, || RandomRewards::new(config.seed), &rollouts),
            _ => {
                let base = expert_policy(expert.as_ref(), &instance, config.gamma)?;
                sampled_rollouts(&instance, || base.clone(), &rollouts)
            }
        };
        (out.map_err(data)?.schedule, args.policy.as_str(), None)
    } else if args.trace.is_some() {
        let out = match args.policy {
            PolicyKind::Greedy => traced(&instance, mrta_core::sim::GreedyPolicy::new(), true)?,
            PolicyKind::Random => traced(&instance, RandomRewards::new(config.seed), true)?,
            _ => traced(&instance, expert_policy(expert.as_ref(), &instance, config.gamma)?, true)?,
        };
        (out.0, args.policy.as_str(), out.1)
    } else {
        let run = run_policy(args.policy, &instance, expert.as_ref(), config.seed, config.gamma, &rollouts).map_err(data)?;
        (run.schedule, args.policy.as_str(), None)
    };

    let report = validate_schedule(&schedule, &instance);
    if !report.is_feasible() {
        return Err(data(anyhow!("simulated schedule is infeasible: {report}")));
    }
    if let Some(out) = &args.out {
        write_schedule(out, &schedule, &id).map_err(data)?;
    }
    if let (Some(path), Some(trace)) = (&args.trace, trace) {
        write_json_atomic(path, &trace).map_err(data)?;
    }
    println!("{id} {label}: makespan {}", schedule.makespan);
    Ok(())
}

fn expert_policy(expert: Option<&Schedule>, instance: &ProblemInstance, gamma: f64) -> Result<ExpertReplay, CliError> {
    let expert = expert.ok_or_else(|| CliError::Usage("this policy needs --schedule".into()))?;
    ExpertReplay::new(expert, instance, gamma).map_err(data)
}

type Traced = (Schedule, Option<Vec<mrta_core::sim::DecisionRecord>>);

fn traced<P: mrta_core::Policy>(instance: &ProblemInstance, policy: P, record: bool) -> Result<Traced, CliError> {
    let out = Simulation::new(instance, policy)
        .with_options(SimOptions { record_trace: record, ..SimOptions::default() })
        .run()
        .map_err(data)?;
    Ok((out.schedule, record.then_some(out.trace)))
}

pub fn benchmark(mut config: FileConfig, args: BenchmarkArgs) -> Result<(), CliError> {
    apply_solver(&mut config, &args.solver);
    apply_rollouts(&mut config, args.rollouts, args.sigma);
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    config.validate()?;
    if args.policies.is_empty() {
        return Err(CliError::Usage("--policies is empty".into()));
    }
    if args.no_exact {
        if let Some(p) = args.policies.iter().find(|p| p.needs_expert() || **p == PolicyKind::Exact) {
            return Err(CliError::Usage(format!("policy {p} needs the exact solver, which --no-exact disables")));
        }
    }
    let sizes = if args.sizes.is_empty() {
        vec![crate::Size { robots: config.generator.n_robots, tasks: config.generator.n_tasks, edges: None }]
    } else {
        args.sizes.clone()
    };
    let mut jobs = Vec::new();
    for size in &sizes {
        let mut gen = GeneratorConfig { n_robots: size.robots, n_tasks: size.tasks, ..config.generator.clone() };
        gen.n_precedence = size.edges.unwrap_or(gen.n_precedence.min(gen.max_precedence()));
        gen.validate().map_err(|e| CliError::Usage(format!("size {}x{}: {e}", size.robots, size.tasks)))?;
        for k in 0..args.n {
            jobs.push((gen.clone(), config.seed + k));
        }
    }

    let solver = config.solver();
    let outcomes: Vec<Result<(Vec<BenchRow>, bool), anyhow::Error>> = jobs
        .par_iter()
        .map(|(gen, seed)| {
            let id = format!("{}x{}-{}", gen.n_robots, gen.n_tasks, instance_id(*seed));
            let instance = generate_instance(gen, *seed).with_context(|| id.clone())?;
            let solved = if args.no_exact { None } else { Some(solve_with(&instance, &solver).with_context(|| id.clone())?) };
            let optimal = solved.as_ref().filter(|r| r.status == SolveStatus::Optimal);
            let expert = optimal.and_then(|r| r.schedule.as_ref());
            let timed_out = solved.as_ref().is_some_and(|r| r.status == SolveStatus::FeasibleTimeout);
            let size = (gen.n_robots, gen.n_tasks);
            let mut rows = Vec::new();
            for &kind in &args.policies {
                let run = match (kind, optimal) {
                    (PolicyKind::Exact, Some(r)) => PolicyRun {
                        schedule: r.schedule.clone().expect("optimal results carry a schedule"),
                        decisions: 1,
                        decision_time: r.wall_time,
                        full_time: r.wall_time,
                    },
                    (PolicyKind::Exact, None) => continue,
                    (k, None) if k.needs_expert() => {
                        warn!("{id}: no optimal schedule, skipping {k}");
                        continue;
                    }
                    _ => run_policy(kind, &instance, expert, *seed, config.gamma, &config.rollouts)
                        .with_context(|| format!("{id} {kind}"))?,
                };
                let report = validate_schedule(&run.schedule, &instance);
                if !report.is_feasible() {
                    return Err(anyhow!("{id} {kind}: infeasible schedule: {report}"));
                }
                rows.push(BenchRow::new(&id, kind, &run, expert.map(|s| s.makespan), *seed, size));
            }
            info!("{id}: {} rows", rows.len());
            Ok((rows, timed_out))
        })
        .collect();

    let mut rows = Vec::new();
    let mut timeouts = 0;
    for o in outcomes {
        let (r, t) = o.map_err(data)?;
        rows.extend(r);
        timeouts += usize::from(t);
    }
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display())).map_err(data)?;
    write_csv(&rows, file).map_err(data)?;
    let plot_path = args.plot_data.clone().unwrap_or_else(|| args.out.with_extension("plot.json"));
    write_json_atomic(&plot_path, &plot_data(&rows)).map_err(data)?;

    println!("{:<14} {:>5} {:>12} {:>10} {:>14}", "policy", "runs", "makespan", "gap", "ms/decision");
    for s in summarize(&rows) {
        let gap = s.gap.as_ref().map_or("-".to_string(), |g| format!("{:.2}%", g.mean * 100.0));
        println!(
            "{:<14} {:>5} {:>12.2} {:>10} {:>14.4}",
            s.policy, s.count, s.makespan.mean, gap, s.t_per_decision_ms.mean
        );
    }
    println!("wrote {} and {}", args.out.display(), plot_path.display());
    if timeouts > 0 {
        return Err(CliError::Timeout(format!("{timeouts} instance(s) exceeded the solver budget; their gaps are empty")));
    }
    Ok(())
}

pub fn replay_check(config: FileConfig, args: ReplayArgs) -> Result<(), CliError> {
    if let Some(rate) = args.min_rate {
        if !(0.0..=1.0).contains(&rate) {
            return Err(CliError::Usage(format!("--min-rate must lie in [0, 1], got {rate}")));
        }
    }
    let manifest = read_manifest(&args.manifest).map_err(data)?;
    let gamma = args.gamma.unwrap_or(manifest.gamma);
    FileConfig { gamma, ..config }.validate()?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let results: Vec<Option<ReplayRecord>> = manifest
        .records
        .par_iter()
        .map(|r| replay_record(base, r, gamma))
        .collect::<Result<_, _>>()
        .map_err(data)?;
    let records: Vec<ReplayRecord> = results.into_iter().flatten().collect();
    let ok = records.iter().filter(|r| r.reproduced).count();
    let rate = if records.is_empty() { 0.0 } else { ok as f64 / records.len() as f64 };
    for miss in records.iter().filter(|r| !r.reproduced) {
        warn!(
            "{}: expert {} replay {:?} {}",
            miss.instance_id,
            miss.expert_makespan,
            miss.replay_makespan,
            miss.error.as_deref().unwrap_or("")
        );
    }
    if let Some(out) = &args.out {
        write_json_atomic(out, &records).map_err(data)?;
    }
    println!("replay fidelity: {ok}/{} ({:.2}%)", records.len(), rate * 100.0);
    let skipped = manifest.records.len() - records.len();
    if skipped > 0 {
        println!("skipped {skipped} instance(s) without an optimal expert schedule");
    }
    match args.min_rate {
        Some(min) if rate < min => Err(data(anyhow!("fidelity {:.4} is below the required {min}", rate))),
        _ => Ok(()),
    }
}
