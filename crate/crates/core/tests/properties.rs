use std::time::Duration;

use mrta_core::matching::{check_assignment, AssignmentMatrix};
use mrta_core::reward::{raw_reward, ExpertTimeline};
use mrta_core::sim::{ExpertReplay, RandomRewards, SimOptions, Simulation};
use mrta_core::*;
use proptest::prelude::*;

fn small_instance(seed: u64, n: usize, m: usize, edges: usize) -> ProblemInstance {
    generate_instance(&GeneratorConfig { n_robots: n, n_tasks: m, n_precedence: edges, ..GeneratorConfig::default() }, seed)
        .unwrap()
}

fn expert(inst: &ProblemInstance) -> Schedule {
    solve_optimal(inst, Duration::from_secs(30)).unwrap().schedule.unwrap()
}

/// Feasibility written directly from the constraint list, sharing nothing
/// with the library validator.
fn independent_feasible(s: &Schedule, inst: &ProblemInstance) -> bool {
    let tol = TIME_TOLERANCE;
    let (n, m) = (inst.n_robots(), inst.n_tasks());
    let mut seen = std::collections::HashSet::new();
    for e in &s.entries {
        let Some(j) = e.task.index() else { continue };
        if e.robot >= n || j >= m || !e.start.is_finite() || !e.end.is_finite() || !seen.insert((e.robot, j)) {
            return false;
        }
        if (e.end - e.start - inst.task(j).duration).abs() > tol {
            return false;
        }
    }
    for j in 0..m {
        let team: Vec<&ScheduleEntry> = s.entries.iter().filter(|e| e.task == TaskRef::Task(j)).collect();
        let Some(first) = team.first() else { return false };
        let mut caps = SkillSet::EMPTY;
        for e in &team {
            if (e.start - first.start).abs() > tol || (e.end - first.end).abs() > tol {
                return false;
            }
            caps = caps.union(inst.robot(e.robot).capabilities);
        }
        if !caps.covers(inst.task(j).required) {
            return false;
        }
        for &p in inst.predecessors(j) {
            let Some(pe) = s.entries.iter().find(|e| e.task == TaskRef::Task(p)) else { return false };
            if pe.end > first.start + tol {
                return false;
            }
        }
    }
    let mut span = 0.0f64;
    for i in 0..n {
        let mut mine: Vec<&ScheduleEntry> =
            s.entries.iter().filter(|e| e.robot == i && e.task.index().is_some()).collect();
        mine.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut at = inst.start_position(i);
        let mut t = 0.0;
        for e in mine {
            let p = inst.task(e.task.index().unwrap()).position;
            if e.start + tol < t + at.distance(&p) / inst.speed() {
                return false;
            }
            at = p;
            t = e.end;
        }
        span = span.max(t + at.distance(&inst.end_position(i)) / inst.speed());
    }
    (span - s.makespan).abs() <= tol
}

#[derive(Debug, Clone)]
enum Mutation {
    Shift { entry: usize, delta: f64 },
    ShiftTask { entry: usize, delta: f64 },
    Drop { entry: usize },
    Reassign { entry: usize, robot: usize },
    Stretch { entry: usize, delta: f64 },
    Makespan { delta: f64 },
}

fn mutation() -> impl Strategy<Value = Mutation> {
    let delta = prop_oneof![Just(0.0), -40.0..40.0f64, Just(1e-7), Just(-1e-5)];
    prop_oneof![
        (0..64usize, delta.clone()).prop_map(|(entry, delta)| Mutation::Shift { entry, delta }),
        (0..64usize, delta.clone()).prop_map(|(entry, delta)| Mutation::ShiftTask { entry, delta }),
        (0..64usize).prop_map(|entry| Mutation::Drop { entry }),
        (0..64usize, 0..3usize).prop_map(|(entry, robot)| Mutation::Reassign { entry, robot }),
        (0..64usize, delta.clone()).prop_map(|(entry, delta)| Mutation::Stretch { entry, delta }),
        delta.prop_map(|delta| Mutation::Makespan { delta }),
    ]
}

fn apply(s: &mut Schedule, m: &Mutation, n_robots: usize) {
    let len = s.entries.len();
    if len == 0 {
        return;
    }
    match *m {
        Mutation::Shift { entry, delta } => {
            let e = &mut s.entries[entry % len];
            e.start += delta;
            e.end += delta;
        }
        Mutation::ShiftTask { entry, delta } => {
            let task = s.entries[entry % len].task;
            for e in s.entries.iter_mut().filter(|e| e.task == task) {
                e.start += delta;
                e.end += delta;
            }
        }
        Mutation::Drop { entry } => {
            s.entries.remove(entry % len);
        }
        Mutation::Reassign { entry, robot } => s.entries[entry % len].robot = robot % n_robots,
        Mutation::Stretch { entry, delta } => s.entries[entry % len].end += delta,
        Mutation::Makespan { delta } => s.makespan += delta,
    }
}

fn brute_force_match(r: &RewardMatrix, robots: &[RobotState], tasks: &[TaskSpec]) -> f64 {
    let (n, m) = (robots.len(), tasks.len());
    let mut best = f64::NEG_INFINITY;
    let total = (m + 2).pow(n as u32);
    for code in 0..total {
        let mut a = AssignmentMatrix::empty(n, m);
        let mut c = code;
        for i in 0..n {
            match c % (m + 2) {
                0 => {}
                1 => a.assign(i, TaskRef::Idle),
                k => a.assign(i, TaskRef::Task(k - 2)),
            }
            c /= m + 2;
        }
        if check_assignment(&a, robots, tasks).is_ok() {
            best = best.max(a.objective(r));
        }
    }
    best
}

fn matching_case(max_n: usize, max_m: usize) -> impl Strategy<Value = (Vec<RobotState>, Vec<TaskSpec>, RewardMatrix)> {
    (1..=max_n, 0..=max_m).prop_flat_map(|(n, m)| {
        let robot = (1u64..8, prop::bool::weighted(0.85), 0.0..10.0f64, 0.0..10.0f64).prop_map(|(caps, avail, x, y)| {
            let mut r = RobotState::idle_at(Point::new(x, y), SkillSet::from_bits(caps));
            r.available = avail;
            r
        });
        let task = (1u64..8, 0..4u8, 0.0..10.0f64, 0.0..10.0f64).prop_map(|(req, st, x, y)| {
            let mut t = TaskSpec::new(Point::new(x, y), 1.0, SkillSet::from_bits(req));
            t.status = match st {
                0 => TaskStatus::WAITING,
                1 => TaskStatus::ASSIGNED,
                _ => TaskStatus::READY,
            };
            t
        });
        (
            prop::collection::vec(robot, n),
            prop::collection::vec(task, m),
            prop::collection::vec(prop::collection::vec(-0.5..1.0f64, m + 1), n),
        )
            .prop_map(|(robots, tasks, rows)| (robots, tasks, RewardMatrix::from_rows(rows).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn travel_is_a_metric(ax in -50.0..50.0f64, ay in -50.0..50.0f64, bx in -50.0..50.0f64, by in -50.0..50.0f64,
                          cx in -50.0..50.0f64, cy in -50.0..50.0f64, speed in 0.1..5.0f64) {
        let (a, b, c) = (Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy));
        let t = |p, q| travel_time(p, q, speed).unwrap();
        prop_assert_eq!(t(a, b), t(b, a));
        prop_assert_eq!(t(a, a), 0.0);
        prop_assert!(t(a, c) <= t(a, b) + t(b, c) + 1e-9);
    }

    #[test]
    fn validator_agrees_with_independent_checker(seed in 0..400u64, muts in prop::collection::vec(mutation(), 0..3)) {
        let inst = small_instance(seed, 2 + (seed % 2) as usize, 3 + (seed % 3) as usize, (seed % 3) as usize);
        let mut s = expert(&inst);
        for m in &muts {
            apply(&mut s, m, inst.n_robots());
        }
        prop_assert_eq!(validate_schedule(&s, &inst).is_feasible(), independent_feasible(&s, &inst));
    }

    #[test]
    fn solver_matches_oracle(seed in 0..10_000u64) {
        let inst = small_instance(seed, 2 + (seed % 2) as usize, 2 + (seed % 3) as usize, (seed % 2) as usize);
        let exact = solve_optimal(&inst, Duration::from_secs(30)).unwrap();
        prop_assert_eq!(exact.status, SolveStatus::Optimal);
        let oracle = brute_force_oracle(&inst).unwrap();
        prop_assert!((exact.makespan().unwrap() - oracle.makespan).abs() <= 1e-6);
        prop_assert!(validate_schedule(exact.schedule.as_ref().unwrap(), &inst).is_feasible());
        let trace = &exact.incumbent_trace;
        prop_assert!(trace.windows(2).all(|w| w[0].0 <= w[1].0 && w[1].1 <= w[0].1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn matching_is_exact_and_feasible((robots, tasks, r) in matching_case(4, 5)) {
        let a = relaxed_match(&r, &robots, &tasks).unwrap();
        prop_assert!(check_assignment(&a, &robots, &tasks).is_ok());
        let want = brute_force_match(&r, &robots, &tasks);
        prop_assert!((a.objective(&r) - want).abs() <= 1e-7, "got {} want {}", a.objective(&r), want);
    }

    #[test]
    fn matching_is_scale_invariant((robots, tasks, r) in matching_case(5, 6), c in prop_oneof![Just(0.25), Just(3.0), Just(1000.0)]) {
        let a = relaxed_match(&r, &robots, &tasks).unwrap();
        let b = relaxed_match(&r.scaled(c), &robots, &tasks).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pruning_yields_minimal_covering_subsets((robots, tasks, r) in matching_case(6, 4)) {
        // a greedy-ish oversized assignment: every available robot joins its best ready task
        let mut a = AssignmentMatrix::empty(robots.len(), tasks.len());
        for (i, robot) in robots.iter().enumerate() {
            if !robot.available { continue; }
            let pick = (0..tasks.len()).filter(|&j| tasks[j].status.schedulable())
                .max_by(|&x, &y| r.get(i, x).total_cmp(&r.get(i, y)).then(y.cmp(&x)));
            if let Some(j) = pick { a.assign(i, TaskRef::Task(j)); }
        }
        let covered: Vec<usize> = a.assigned_tasks().into_iter().filter(|&j| {
            let caps = a.coalition(j).iter().fold(SkillSet::EMPTY, |s, &i| s.union(robots[i].capabilities));
            caps.covers(tasks[j].required)
        }).collect();
        for j in a.assigned_tasks() {
            if !covered.contains(&j) { for i in a.coalition(j) { a.clear(i); } }
        }
        let p = prune_redundant(&a, &robots, &tasks, 1.0);
        prop_assert!(check_assignment(&p, &robots, &tasks).is_ok());
        for j in a.assigned_tasks() {
            let before = a.coalition(j);
            let after = p.coalition(j);
            prop_assert!(after.iter().all(|i| before.contains(i)));
            prop_assert!(!after.is_empty());
            for &drop in &after {
                let rest = after.iter().filter(|&&o| o != drop)
                    .fold(SkillSet::EMPTY, |s, &o| s.union(robots[o].capabilities));
                prop_assert!(!rest.covers(tasks[j].required), "task {} still has removable robot {}", j, drop);
            }
        }
        prop_assert_eq!(prune_redundant(&p, &robots, &tasks, 1.0), p);
    }

    #[test]
    fn premove_matches_linear_scan(row in prop::collection::vec(prop_oneof![Just(0.5), -1.0..1.0f64], 2..8)) {
        let r = RewardMatrix::from_rows(vec![row.clone()]).unwrap();
        let m = row.len() - 1;
        let mut best = 0;
        for j in 1..m {
            if row[j] > row[best] { best = j; }
        }
        prop_assert_eq!(premove_target(&r, 0).unwrap(), best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn reward_tensors_respect_mask_range_and_gamma(seed in 0..1000u64, g1 in 0.5..1.0f64, g2 in 0.5..1.0f64) {
        let inst = small_instance(seed, 3, 6, 2);
        let s = expert(&inst);
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = extract_tensors(&s, &inst, lo).unwrap();
        let b = extract_tensors(&s, &inst, hi).unwrap();
        prop_assert_eq!(a.len(), s.finish_times().len() + 1);
        for (pa, pb) in a.iter().zip(&b) {
            let (oa, ob) = (pa.target_reward.as_ref().unwrap(), pb.target_reward.as_ref().unwrap());
            for i in 0..inst.n_robots() {
                for j in 0..=inst.n_tasks() {
                    let (va, vb) = (oa.get(i, j), ob.get(i, j));
                    prop_assert!((0.0..=1.0).contains(&va));
                    prop_assert!(va <= vb);
                    if !pa.feasibility_mask[i][j] { prop_assert_eq!(va, 0.0); }
                }
            }
        }
    }

    #[test]
    fn next_task_has_the_strictly_largest_reward(seed in 0..1000u64, gamma in 0.5..0.999f64) {
        let inst = small_instance(seed, 3, 8, 3);
        let s = expert(&inst);
        let tl = ExpertTimeline::new(&s, inst.n_robots(), inst.n_tasks());
        for p in extract_decision_points(&s, &inst).unwrap() {
            let r = raw_reward(&s, &inst, p.time, gamma).unwrap();
            for i in 0..inst.n_robots() {
                let upcoming: Vec<&ScheduleEntry> = tl.entries(i).iter().filter(|e| e.start >= p.time - 1e-6).collect();
                let Some(next) = upcoming.first() else { continue };
                let jn = next.task.index().unwrap();
                for later in &upcoming[1..] {
                    prop_assert!(r.get(i, jn) > r.get(i, later.task.index().unwrap()));
                }
            }
        }
    }

    #[test]
    fn rollouts_improve_with_more_samples(seed in 0..500u64) {
        let inst = small_instance(seed, 3, 8, 3);
        let s = expert(&inst);
        let base = ExpertReplay::new(&s, &inst, 0.99).unwrap();
        let mut last = f64::INFINITY;
        for n in 1..=4 {
            let cfg = RolloutConfig { sigma: 0.3, n_rollouts: n, seed };
            let out = sampled_rollouts(&inst, || base.clone(), &cfg).unwrap();
            prop_assert!(out.schedule.makespan <= last);
            prop_assert!(validate_schedule(&out.schedule, &inst).is_feasible());
            last = out.schedule.makespan;
        }
        let zero = sampled_rollouts(&inst, || base.clone(), &RolloutConfig { sigma: 0.0, n_rollouts: 3, seed }).unwrap();
        prop_assert_eq!(zero.schedule, simulate(&inst, base.clone()).unwrap());
    }

    #[test]
    fn random_rewards_are_feasible_deterministic_and_premovers_stay_free(seed in 0..1000u64) {
        let inst = small_instance(seed, 4, 10, 4);
        let run = || Simulation::new(&inst, RandomRewards::new(seed))
            .with_options(SimOptions { record_trace: true, ..SimOptions::default() })
            .run()
            .unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(&a.schedule, &b.schedule);
        prop_assert_eq!(&a.trace, &b.trace);
        prop_assert!(validate_schedule(&a.schedule, &inst).is_feasible());
        for w in a.trace.windows(2) {
            for (i, choice) in w[0].assignment.iter().enumerate() {
                if *choice == Some(TaskRef::Idle) {
                    prop_assert!(w[1].robots[i].available);
                }
            }
        }
    }
}
