use std::fs;
use std::path::Path;
use std::time::Duration;

use mrta_core::dataset::{build_artifacts, instance_id, replay_record};
use mrta_core::io::{
    load_manifest_instances, read_decision_tensors, read_instance, read_reward_matrix, read_schedule,
    write_decision_tensors, write_instance, write_manifest, write_reward_matrix, write_schedule, DatasetManifest, IoError,
};
use mrta_core::sim::{RewardSequence, SimOptions, Simulation};
use mrta_core::*;
use tempfile::tempdir;

fn solved(seed: u64) -> (ProblemInstance, Schedule) {
    let inst = generate_instance(&GeneratorConfig::default(), seed).unwrap();
    let res = solve_optimal(&inst, Duration::from_secs(60)).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    (inst, res.schedule.unwrap())
}

#[test]
fn snapshots_agree_with_a_traced_replay() {
    for seed in 0..10 {
        let (inst, expert) = solved(seed);
        let points = extract_decision_points(&expert, &inst).unwrap();
        let policy = sim::ExpertReplay::new(&expert, &inst, DEFAULT_GAMMA).unwrap();
        let out = Simulation::new(&inst, policy)
            .with_options(SimOptions { record_trace: true, ..SimOptions::default() })
            .run()
            .unwrap();
        assert!((out.schedule.makespan - expert.makespan).abs() <= TIME_TOLERANCE);
        // The simulator skips steps where every robot is busy or every open
        // task is already running.
        let decides = |p: &&DecisionPoint| {
            p.robot_states.iter().any(|r| r.available) && p.task_statuses.iter().any(|s| s.incomplete && !s.assigned)
        };
        for p in points.iter().filter(decides) {
            let rec = out
                .trace
                .iter()
                .find(|r| (r.time - p.time).abs() <= TIME_TOLERANCE)
                .unwrap_or_else(|| panic!("seed {seed}: no simulator decision at {}", p.time));
            let live: Vec<TaskStatus> = rec.tasks.iter().map(|t| t.status).collect();
            assert_eq!(live, p.task_statuses, "seed {seed} at {}", p.time);
            let avail: Vec<bool> = rec.robots.iter().map(|r| r.available).collect();
            let expected: Vec<bool> = p.robot_states.iter().map(|r| r.available).collect();
            assert_eq!(avail, expected, "seed {seed} at {}", p.time);
        }
    }
}

#[test]
fn tensors_round_trip_and_count_decision_points() {
    let dir = tempdir().unwrap();
    let (inst, expert) = solved(3);
    let points = extract_tensors(&expert, &inst, DEFAULT_GAMMA).unwrap();
    assert_eq!(points.len(), extract_decision_points(&expert, &inst).unwrap().len());
    let path = dir.path().join("t.json");
    write_decision_tensors(&path, &inst, "x", DEFAULT_GAMMA, &points).unwrap();
    let back = read_decision_tensors(&path, Some(&inst)).unwrap();
    assert_eq!(back.decision_points, points);
    assert_eq!(back.gamma, DEFAULT_GAMMA);

    let other = generate_instance(&GeneratorConfig::sized(2, 8, 0), 0).unwrap();
    assert!(read_decision_tensors(&path, Some(&other)).is_err());
}

#[test]
fn tensor_writer_rejects_out_of_range_targets() {
    let dir = tempdir().unwrap();
    let (inst, expert) = solved(4);
    let mut points = extract_tensors(&expert, &inst, DEFAULT_GAMMA).unwrap();
    let target = points[0].target_reward.as_mut().unwrap();
    target.set(0, inst.n_tasks(), 1.5);
    let path = dir.path().join("bad.json");
    assert!(matches!(write_decision_tensors(&path, &inst, "x", DEFAULT_GAMMA, &points), Err(IoError::Invariant(_))));
    assert!(!path.exists());
}

#[test]
fn instance_and_schedule_files_round_trip() {
    let dir = tempdir().unwrap();
    let (inst, expert) = solved(5);
    let ip = dir.path().join("i.json");
    let sp = dir.path().join("s.json");
    write_instance(&ip, &inst, "inst-5").unwrap();
    write_schedule(&sp, &expert, "inst-5").unwrap();
    assert_eq!(read_instance(&ip).unwrap(), (inst, "inst-5".to_string()));
    assert_eq!(read_schedule(&sp).unwrap(), (expert, "inst-5".to_string()));

    let text = fs::read_to_string(&ip).unwrap();
    fs::write(&ip, &text[..text.len() / 2]).unwrap();
    assert!(matches!(read_instance(&ip), Err(IoError::Parse { .. })));
}

#[test]
fn reward_files_replay_to_feasible_schedules() {
    let dir = tempdir().unwrap();
    for seed in 0..5 {
        let (inst, expert) = solved(seed);
        let points = extract_tensors(&expert, &inst, DEFAULT_GAMMA).unwrap();
        let mut matrices = Vec::new();
        for p in &points {
            let path = dir.path().join(format!("r{seed}-{}.json", p.index));
            write_reward_matrix(&path, p.target_reward.as_ref().unwrap(), &instance_id(seed), p.index).unwrap();
            let (m, file) = read_reward_matrix(&path, &inst).unwrap();
            assert_eq!(file.decision_index, p.index);
            assert_eq!(&m, p.target_reward.as_ref().unwrap());
            matrices.push(m);
        }
        let s = sim::simulate(&inst, RewardSequence::new(matrices).unwrap()).unwrap();
        assert!(validate_schedule(&s, &inst).is_feasible(), "seed {seed}");
        assert!(s.makespan >= expert.makespan - TIME_TOLERANCE);
    }
}

#[test]
fn reward_reader_rejects_wrong_shape_and_nan() {
    let dir = tempdir().unwrap();
    let (inst, _) = solved(1);
    let path = dir.path().join("r.json");
    write_reward_matrix(&path, &RewardMatrix::zeros(2, 3), "x", 0).unwrap();
    let err = read_reward_matrix(&path, &inst).unwrap_err();
    assert!(err.to_string().contains(&format!("{}x{}", inst.n_robots(), inst.n_tasks() + 1)), "{err}");

    let text = fs::read_to_string(&path).unwrap().replacen("0.0", "NaN", 1);
    fs::write(&path, text).unwrap();
    assert!(read_reward_matrix(&path, &inst).is_err());
}

#[test]
fn replay_check_needs_the_expert_rewards() {
    let (inst, expert) = solved(2);
    assert!(replay_check(&expert, &inst, DEFAULT_GAMMA));
    let mut shuffled = expert.clone();
    for e in &mut shuffled.entries {
        e.start += 1.0;
        e.end += 1.0;
    }
    assert!(!replay_check(&shuffled, &inst, DEFAULT_GAMMA));
}

fn build(dir: &Path, seeds: std::ops::Range<u64>) -> DatasetManifest {
    let config = GeneratorConfig::default();
    let mut manifest = DatasetManifest::new(config.clone(), seeds.start, seeds.end - seeds.start, DEFAULT_GAMMA, 60.0);
    for seed in seeds {
        let (rec, _) = build_artifacts(dir, &config, seed, DEFAULT_GAMMA, &SolverOptions::default()).unwrap();
        manifest.records.push(rec);
    }
    write_manifest(&dir.join("manifest.json"), &manifest).unwrap();
    manifest
}

#[test]
fn manifest_with_a_hundred_instances_loads() {
    let dir = tempdir().unwrap();
    let config = GeneratorConfig::sized(3, 5, 1);
    let mut manifest = DatasetManifest::new(config.clone(), 0, 100, DEFAULT_GAMMA, 60.0);
    for seed in 0..100 {
        let (rec, _) = build_artifacts(dir.path(), &config, seed, DEFAULT_GAMMA, &SolverOptions::default()).unwrap();
        manifest.records.push(rec);
    }
    let path = dir.path().join("manifest.json");
    write_manifest(&path, &manifest).unwrap();
    let (back, instances) = load_manifest_instances(&path).unwrap();
    assert_eq!(back, manifest);
    assert_eq!(instances.len(), 100);
    assert!(instances.iter().all(|i| i.skill_count() == config.n_skills));
    for rec in &back.records {
        let replay = replay_record(dir.path(), rec, DEFAULT_GAMMA).unwrap().unwrap();
        assert!(replay.reproduced, "{replay:?}");
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn dataset_bytes_are_deterministic() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    build(a.path(), 10..16);
    build(b.path(), 10..16);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.len(), 1 + 6 * 3);
    assert_eq!(sa, sb);
}
