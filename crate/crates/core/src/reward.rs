//! Decision points and discounted target rewards extracted from expert
//! schedules.
//!
//! A decision point is taken at time 0 and at every distinct task finish
//! time. Its snapshot is the world *after* the completions at that instant
//! and *before* any start at that instant, so a task that begins exactly at
//! the decision time still counts as not started, and the robots about to
//! begin it are still available.
//!
//! Robot `i` receives `gamma^(finish_j - T)` for each task `j` it executes in
//! the expert schedule that has not started by `T`. While a robot waits for
//! its next start it also receives the idle reward `gamma^(start_next - T)`,
//! which strictly dominates every task reward of that robot for `gamma < 1`.
//! Feeding these raw rewards to the matcher therefore commits robots exactly
//! at their expert start times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::RewardMatrix;
use crate::model::{
    validate_schedule, ModelError, Point, ProblemInstance, RobotState, Schedule, ScheduleEntry, TaskRef, TaskSpec, TaskStatus,
    Violation, TIME_TOLERANCE,
};

pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("schedule is infeasible: {0:?}")]
    Infeasible(Vec<Violation>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// World snapshot at one decision time, plus the extracted target once
/// computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub index: usize,
    pub time: f64,
    pub robot_states: Vec<RobotState>,
    pub task_statuses: Vec<TaskStatus>,
    /// `N x (M+1)`: robot available and task ready; idle column iff available.
    pub feasibility_mask: Vec<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_reward: Option<RewardMatrix>,
}

pub fn check_gamma(gamma: f64) -> Result<(), RewardError> {
    if gamma.is_finite() && gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(RewardError::InvalidGamma(gamma))
    }
}

/// Per-robot expert timelines, queried at arbitrary times.
#[derive(Debug, Clone)]
pub struct ExpertTimeline {
    n_tasks: usize,
    per_robot: Vec<Vec<ScheduleEntry>>,
}

impl ExpertTimeline {
    pub fn new(schedule: &Schedule, n_robots: usize, n_tasks: usize) -> Self {
        let per_robot = (0..n_robots)
            .map(|i| {
                schedule
                    .robot_entries(i)
                    .into_iter()
                    .filter(|e| matches!(e.task, TaskRef::Task(j) if j < n_tasks))
                    .collect()
            })
            .collect();
        Self { n_tasks, per_robot }
    }

    pub fn n_robots(&self) -> usize {
        self.per_robot.len()
    }

    pub fn entries(&self, robot: usize) -> &[ScheduleEntry] {
        &self.per_robot[robot]
    }

    /// First entry of `robot` not started before `time`.
    pub fn next_entry(&self, robot: usize, time: f64) -> Option<&ScheduleEntry> {
        self.per_robot[robot].iter().find(|e| e.start >= time - TIME_TOLERANCE)
    }

    /// Latest entry of `robot` finished by `time`.
    pub fn previous_entry(&self, robot: usize, time: f64) -> Option<&ScheduleEntry> {
        self.per_robot[robot].iter().rev().find(|e| e.end <= time + TIME_TOLERANCE)
    }

    /// Unmasked rewards at `time`; `n_tasks_total` may exceed the expert's
    /// task count, extra columns stay zero.
    pub fn raw_rewards(&self, time: f64, gamma: f64, n_tasks_total: usize) -> RewardMatrix {
        let total = n_tasks_total.max(self.n_tasks);
        let mut out = RewardMatrix::zeros(self.per_robot.len(), total);
        for (i, entries) in self.per_robot.iter().enumerate() {
            for e in entries {
                if e.start >= time - TIME_TOLERANCE {
                    if let TaskRef::Task(j) = e.task {
                        out.set(i, j, gamma.powf(e.end - time));
                    }
                }
            }
            if let Some(next) = self.next_entry(i, time) {
                if next.start > time + TIME_TOLERANCE {
                    out.set(i, total, gamma.powf(next.start - time));
                }
            }
        }
        out
    }

    /// Rewards against the live task states of a running simulation: a task
    /// keeps its reward until it has actually started, with the exponent
    /// clamped at zero once its expert finish time has passed. While the
    /// simulation follows the expert exactly this equals [`Self::raw_rewards`].
    pub fn live_rewards(&self, time: f64, gamma: f64, tasks: &[TaskSpec]) -> RewardMatrix {
        let total = tasks.len().max(self.n_tasks);
        let pending = |j: usize| tasks.get(j).is_none_or(|t| t.status.incomplete && !t.status.assigned);
        let mut out = RewardMatrix::zeros(self.per_robot.len(), total);
        for (i, entries) in self.per_robot.iter().enumerate() {
            let mut next: Option<f64> = None;
            for e in entries {
                let TaskRef::Task(j) = e.task else { continue };
                if !pending(j) {
                    continue;
                }
                out.set(i, j, gamma.powf((e.end - time).max(0.0)));
                next.get_or_insert(e.start);
            }
            if let Some(start) = next {
                if start > time + TIME_TOLERANCE {
                    out.set(i, total, gamma.powf(start - time));
                }
            }
        }
        out
    }

    /// Earliest expert start strictly after `time`, if any.
    pub fn next_start_after(&self, time: f64) -> Option<f64> {
        self.per_robot
            .iter()
            .flat_map(|es| es.iter())
            .map(|e| e.start)
            .filter(|&s| s > time + TIME_TOLERANCE)
            .min_by(f64::total_cmp)
    }
}

/// Decision times of a schedule: 0 and each distinct finish time.
pub fn decision_times(schedule: &Schedule) -> Vec<f64> {
    let mut times = vec![0.0];
    for t in schedule.finish_times() {
        if t > TIME_TOLERANCE {
            times.push(t);
        }
    }
    times
}

/// Slices a feasible schedule into decision-point snapshots (no targets).
pub fn extract_decision_points(
    schedule: &Schedule,
    instance: &ProblemInstance,
) -> Result<Vec<DecisionPoint>, RewardError> {
    let report = validate_schedule(schedule, instance);
    if !report.is_feasible() {
        return Err(RewardError::Infeasible(report.violations));
    }
    let timeline = ExpertTimeline::new(schedule, instance.n_robots(), instance.n_tasks());
    let windows: Vec<(f64, f64)> = (0..instance.n_tasks())
        .map(|j| schedule.task_window(j).expect("feasible schedules cover every task"))
        .collect();
    Ok(decision_times(schedule)
        .into_iter()
        .enumerate()
        .map(|(index, time)| snapshot(instance, &timeline, &windows, index, time))
        .collect())
}

fn snapshot(
    instance: &ProblemInstance,
    timeline: &ExpertTimeline,
    windows: &[(f64, f64)],
    index: usize,
    time: f64,
) -> DecisionPoint {
    let tol = TIME_TOLERANCE;
    let done = |j: usize| windows[j].1 <= time + tol;
    let task_statuses: Vec<TaskStatus> = (0..instance.n_tasks())
        .map(|j| {
            let (start, _) = windows[j];
            if done(j) {
                TaskStatus::DONE
            } else if start < time - tol {
                TaskStatus::ASSIGNED
            } else if instance.predecessors(j).iter().all(|&p| done(p)) {
                TaskStatus::READY
            } else {
                TaskStatus::WAITING
            }
        })
        .collect();

    let robot_states: Vec<RobotState> = (0..instance.n_robots())
        .map(|i| {
            let caps = instance.robot(i).capabilities;
            let executing = timeline
                .entries(i)
                .iter()
                .find(|e| e.start < time - tol && e.end > time + tol);
            if let Some(e) = executing {
                let j = e.task.index().expect("timeline holds task entries");
                return RobotState {
                    position: instance.task(j).position,
                    remaining_duration: e.end - time,
                    available: false,
                    capabilities: caps,
                };
            }
            let (from, depart) = match timeline.previous_entry(i, time) {
                Some(prev) => (instance.task(prev.task.index().unwrap_or(0)).position, prev.end),
                None => (instance.start_position(i), 0.0),
            };
            let position = match timeline.next_entry(i, time) {
                Some(next) => {
                    let to = instance.task(next.task.index().unwrap_or(0)).position;
                    along(from, to, depart, instance.travel(from, to), time)
                }
                None => from,
            };
            RobotState { position, remaining_duration: 0.0, available: true, capabilities: caps }
        })
        .collect();

    let m = instance.n_tasks();
    let feasibility_mask = robot_states
        .iter()
        .map(|r| {
            let mut row: Vec<bool> = task_statuses.iter().map(|s| r.available && s.schedulable()).collect();
            row.push(r.available);
            debug_assert_eq!(row.len(), m + 1);
            row
        })
        .collect();

    DecisionPoint { index, time, robot_states, task_statuses, feasibility_mask, target_reward: None }
}

fn along(from: Point, to: Point, depart: f64, travel: f64, time: f64) -> Point {
    if travel <= 0.0 || time <= depart {
        return from;
    }
    from.lerp(&to, ((time - depart) / travel).min(1.0))
}

/// Masked target `O_k` for one decision point.
pub fn optimal_reward(
    schedule: &Schedule,
    instance: &ProblemInstance,
    point: &DecisionPoint,
    gamma: f64,
) -> Result<RewardMatrix, RewardError> {
    check_gamma(gamma)?;
    let timeline = ExpertTimeline::new(schedule, instance.n_robots(), instance.n_tasks());
    Ok(masked(&timeline, point, gamma, instance.n_tasks()))
}

fn masked(timeline: &ExpertTimeline, point: &DecisionPoint, gamma: f64, m: usize) -> RewardMatrix {
    let mut out = timeline.raw_rewards(point.time, gamma, m);
    for (i, row) in point.feasibility_mask.iter().enumerate() {
        for (j, &ok) in row.iter().enumerate() {
            if !ok {
                out.set(i, j, 0.0);
            }
        }
    }
    out
}

/// Unmasked rewards at an arbitrary time, as fed to the matcher during replay.
pub fn raw_reward(schedule: &Schedule, instance: &ProblemInstance, time: f64, gamma: f64) -> Result<RewardMatrix, RewardError> {
    check_gamma(gamma)?;
    let timeline = ExpertTimeline::new(schedule, instance.n_robots(), instance.n_tasks());
    Ok(timeline.raw_rewards(time, gamma, instance.n_tasks()))
}

/// Decision points with their targets filled in.
pub fn extract_tensors(
    schedule: &Schedule,
    instance: &ProblemInstance,
    gamma: f64,
) -> Result<Vec<DecisionPoint>, RewardError> {
    check_gamma(gamma)?;
    let timeline = ExpertTimeline::new(schedule, instance.n_robots(), instance.n_tasks());
    let mut points = extract_decision_points(schedule, instance)?;
    for p in &mut points {
        p.target_reward = Some(masked(&timeline, p, gamma, instance.n_tasks()));
    }
    Ok(points)
}

/// Replays the expert rewards through matching inside the simulator and
/// reports whether the expert makespan is reproduced within tolerance.
pub fn replay_check(schedule: &Schedule, instance: &ProblemInstance, gamma: f64) -> bool {
    replay_makespan(schedule, instance, gamma)
        .map(|span| (span - schedule.makespan).abs() <= TIME_TOLERANCE)
        .unwrap_or(false)
}

/// Makespan reached by replaying the expert rewards, or the simulation error.
pub fn replay_makespan(schedule: &Schedule, instance: &ProblemInstance, gamma: f64) -> Result<f64, crate::sim::SimError> {
    let mut policy = crate::sim::ExpertReplay::new(schedule, instance, gamma)
        .map_err(|e| crate::sim::SimError::Policy(e.to_string()))?;
    Ok(crate::sim::simulate(instance, &mut policy)?.makespan)
}
