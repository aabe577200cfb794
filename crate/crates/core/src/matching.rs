//! Relaxed bipartite matching of idle robots to ready tasks.
//!
//! Given a reward matrix `R` of shape `N x (M+1)` (last column = idle), find
//! a binary assignment maximizing the selected reward such that each robot
//! takes at most one column, every task that receives robots is fully
//! covered by their joint skills, and only available robots and ready tasks
//! are matched. This is an integer program; it is solved exactly.
//!
//! # Search
//!
//! Every robot has a *solo* best: doing nothing, idling, or taking a task it
//! covers alone. Those choices never conflict, so all robots taking their
//! solo best is feasible. Anything better needs a *core*: a minimal robot set
//! that jointly covers a task, after which any other robot may ride along on
//! that task. The search walks candidate tasks, branching on which core (if
//! any) each receives, and bounds each node by the smaller of
//!
//! * the sum over remaining tasks of their best achievable gain, and
//! * the sum over free robots of their row maxima over remaining tasks.
//!
//! A core whose marginal gain is not positive when it is added can be dropped
//! from any solution without loss, so only improving cores are branched on.
//!
//! Ties are broken by subtracting `eps * (i * (M + 1) + j + 1)` from entry
//! `(i, j)` with `eps` far below any meaningful reward difference: among
//! equal-reward assignments, fewer and lower-indexed selections win.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Point, RobotState, SkillSet, TaskRef, TaskSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    Shape {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite reward at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("robot {0} has no finite task reward to move toward")]
    NoPremoveTarget(usize),
    #[error("robot index {0} out of range")]
    UnknownRobot(usize),
}

/// Real-valued `N x (M+1)` reward matrix; column `M` holds idle rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RewardMatrix {
    pub fn zeros(n_robots: usize, n_tasks: usize) -> Self {
        Self {
            rows: n_robots,
            cols: n_tasks + 1,
            values: vec![0.0; n_robots * (n_tasks + 1)],
        }
    }

    /// Builds from row vectors, each of length `M + 1`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MatchError> {
        let n = rows.len();
        let cols = rows.first().map_or(1, Vec::len);
        if cols == 0 {
            return Err(MatchError::Shape { expected_rows: n, expected_cols: 1, rows: n, cols: 0 });
        }
        let mut values = Vec::with_capacity(n * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(MatchError::Shape { expected_rows: n, expected_cols: cols, rows: n, cols: row.len() });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { rows: n, cols, values })
    }

    pub fn n_robots(&self) -> usize {
        self.rows
    }

    pub fn n_tasks(&self) -> usize {
        self.cols - 1
    }

    pub fn get(&self, robot: usize, col: usize) -> f64 {
        self.values[robot * self.cols + col]
    }

    pub fn set(&mut self, robot: usize, col: usize, value: f64) {
        self.values[robot * self.cols + col] = value;
    }

    pub fn idle(&self, robot: usize) -> f64 {
        self.get(robot, self.cols - 1)
    }

    pub fn row(&self, robot: usize) -> &[f64] {
        &self.values[robot * self.cols..(robot + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.cols.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.cols, k % self.cols))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `max - min` over all entries, 0 for an empty matrix.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn check_shape(&self, n_robots: usize, n_tasks: usize) -> Result<(), MatchError> {
        if self.rows != n_robots || self.cols != n_tasks + 1 {
            return Err(MatchError::Shape {
                expected_rows: n_robots,
                expected_cols: n_tasks + 1,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

/// Binary `N x (M+1)` assignment stored as one optional column per robot, so
/// row sums never exceed one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentMatrix {
    n_tasks: usize,
    choice: Vec<Option<TaskRef>>,
}

impl AssignmentMatrix {
    pub fn empty(n_robots: usize, n_tasks: usize) -> Self {
        Self { n_tasks, choice: vec![None; n_robots] }
    }

    pub fn n_robots(&self) -> usize {
        self.choice.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn assigned(&self, robot: usize) -> Option<TaskRef> {
        self.choice[robot]
    }

    pub fn assign(&mut self, robot: usize, task: TaskRef) {
        self.choice[robot] = Some(task);
    }

    pub fn clear(&mut self, robot: usize) {
        self.choice[robot] = None;
    }

    pub fn get(&self, robot: usize, col: usize) -> bool {
        match self.choice[robot] {
            Some(TaskRef::Task(j)) => j == col,
            Some(TaskRef::Idle) => col == self.n_tasks,
            None => false,
        }
    }

    /// Robots assigned to task `j`, ascending.
    pub fn coalition(&self, task: usize) -> Vec<usize> {
        (0..self.choice.len())
            .filter(|&i| self.choice[i] == Some(TaskRef::Task(task)))
            .collect()
    }

    /// Tasks that received at least one robot, ascending.
    pub fn assigned_tasks(&self) -> Vec<usize> {
        let mut tasks: Vec<usize> = self.choice.iter().filter_map(|c| c.and_then(TaskRef::index)).collect();
        tasks.sort_unstable();
        tasks.dedup();
        tasks
    }

    pub fn idle_robots(&self) -> Vec<usize> {
        (0..self.choice.len()).filter(|&i| self.choice[i] == Some(TaskRef::Idle)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.n_robots())
            .map(|i| (0..=self.n_tasks).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    /// Parses a dense 0/1 matrix; rows with more than one 1 are rejected.
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self, String> {
        let cols = rows.first().map_or(1, Vec::len);
        if cols == 0 {
            return Err("assignment needs at least the idle column".into());
        }
        let mut out = Self::empty(rows.len(), cols - 1);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(format!("row {i} has {} columns, expected {cols}", row.len()));
            }
            let ones: Vec<usize> = (0..cols).filter(|&j| row[j] != 0).collect();
            match ones.as_slice() {
                [] => {}
                [j] if *j == cols - 1 => out.assign(i, TaskRef::Idle),
                [j] => out.assign(i, TaskRef::Task(*j)),
                _ => return Err(format!("row {i} selects {} columns", ones.len())),
            }
        }
        Ok(out)
    }

    /// Sum of the rewards of the selected entries.
    pub fn objective(&self, reward: &RewardMatrix) -> f64 {
        (0..self.n_robots())
            .filter_map(|i| {
                self.choice[i].map(|c| match c {
                    TaskRef::Task(j) => reward.get(i, j),
                    TaskRef::Idle => reward.idle(i),
                })
            })
            .sum()
    }
}

/// Which matching constraint an assignment breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintViolation {
    Shape,
    /// A robot that is not available was assigned.
    UnavailableRobot { robot: usize },
    /// A task that is not ready (or already assigned/complete) was assigned.
    TaskNotReady { task: usize },
    /// The coalition does not cover the task's required skills.
    Uncovered { task: usize, missing: SkillSet },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintViolation::Shape => write!(f, "assignment shape does not match the world"),
            ConstraintViolation::UnavailableRobot { robot } => {
                write!(f, "robot {robot} is not available but was assigned")
            }
            ConstraintViolation::TaskNotReady { task } => write!(f, "task {task} is not ready but was assigned"),
            ConstraintViolation::Uncovered { task, missing } => {
                write!(f, "coalition for task {task} lacks skills {missing}")
            }
        }
    }
}

/// Checks one-column-per-robot (by construction), coverage and the
/// idle-robot / ready-task support.
pub fn check_assignment(
    assignment: &AssignmentMatrix,
    robots: &[RobotState],
    tasks: &[TaskSpec],
) -> Result<(), ConstraintViolation> {
    if assignment.n_robots() != robots.len() || assignment.n_tasks() != tasks.len() {
        return Err(ConstraintViolation::Shape);
    }
    for (i, r) in robots.iter().enumerate() {
        if assignment.assigned(i).is_some() && !r.available {
            return Err(ConstraintViolation::UnavailableRobot { robot: i });
        }
    }
    for j in assignment.assigned_tasks() {
        if !tasks[j].status.schedulable() {
            return Err(ConstraintViolation::TaskNotReady { task: j });
        }
        let caps = assignment
            .coalition(j)
            .iter()
            .fold(SkillSet::EMPTY, |a, &i| a.union(robots[i].capabilities));
        let missing = caps.missing(tasks[j].required);
        if !missing.is_empty() {
            return Err(ConstraintViolation::Uncovered { task: j, missing });
        }
    }
    Ok(())
}

/// Exact maximizer of the selected reward under the matching constraints.
pub fn relaxed_match(
    reward: &RewardMatrix,
    robots: &[RobotState],
    tasks: &[TaskSpec],
) -> Result<AssignmentMatrix, MatchError> {
    reward.check_shape(robots.len(), tasks.len())?;
    if let Some((row, col)) = reward.first_non_finite() {
        return Err(MatchError::NonFinite { row, col });
    }
    Ok(Matcher::new(reward, robots, tasks).solve())
}

/// Removes, per task, the assigned robot with the longest travel time whose
/// departure keeps the task covered, until no such robot remains.
pub fn prune_redundant(
    assignment: &AssignmentMatrix,
    robots: &[RobotState],
    tasks: &[TaskSpec],
    speed: f64,
) -> AssignmentMatrix {
    let mut out = assignment.clone();
    for j in assignment.assigned_tasks() {
        let target = tasks[j].position;
        let mut members = out.coalition(j);
        loop {
            let mut order: Vec<(f64, usize)> = members
                .iter()
                .map(|&i| (robots[i].position.distance(&target) / speed, i))
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            let removable = order.into_iter().map(|(_, i)| i).find(|&i| {
                let rest = members
                    .iter()
                    .filter(|&&o| o != i)
                    .fold(SkillSet::EMPTY, |a, &o| a.union(robots[o].capabilities));
                rest.covers(tasks[j].required)
            });
            match removable {
                Some(i) => {
                    out.clear(i);
                    members.retain(|&o| o != i);
                }
                None => break,
            }
        }
    }
    out
}

/// Task column with the highest reward for `robot` (idle column excluded);
/// ties go to the lowest task index.
pub fn premove_target(reward: &RewardMatrix, robot: usize) -> Result<usize, MatchError> {
    if robot >= reward.n_robots() {
        return Err(MatchError::UnknownRobot(robot));
    }
    let row = reward.row(robot);
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in row[..reward.n_tasks()].iter().enumerate() {
        if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j).ok_or(MatchError::NoPremoveTarget(robot))
}

/// Travel time helper for callers holding raw positions.
pub fn travel_between(a: Point, b: Point, speed: f64) -> f64 {
    a.distance(&b) / speed
}

struct TaskInfo {
    task: usize,
    /// Minimal covers over projected robot types, each a list of type keys.
    covers: Vec<Vec<u64>>,
    /// Robots (all available) grouped by projected type `caps & required`.
    by_type: BTreeMap<u64, Vec<usize>>,
}

struct Matcher<'a> {
    n_tasks: usize,
    avail: Vec<usize>,
    value: Vec<Vec<f64>>,
    tasks: Vec<TaskInfo>,
    solo: Vec<(f64, Option<TaskRef>)>,
    _reward: &'a RewardMatrix,
}

/// Node state: which robots are in cores, each free robot's current best
/// value and choice, and the cores chosen so far.
#[derive(Clone)]
struct State {
    in_core: Vec<bool>,
    cur: Vec<(f64, Option<TaskRef>)>,
    cores: Vec<(usize, Vec<usize>)>,
    core_value: f64,
}

impl State {
    fn value(&self) -> f64 {
        self.core_value
            + self
                .cur
                .iter()
                .zip(&self.in_core)
                .filter(|(_, &c)| !c)
                .map(|(v, _)| v.0)
                .sum::<f64>()
    }
}

impl<'a> Matcher<'a> {
    fn new(reward: &'a RewardMatrix, robots: &[RobotState], tasks: &[TaskSpec]) -> Self {
        let n = robots.len();
        let m = tasks.len();
        let avail: Vec<usize> = (0..n).filter(|&i| robots[i].available).collect();
        let ready: Vec<usize> = (0..m).filter(|&j| tasks[j].status.schedulable()).collect();

        let scale = avail
            .iter()
            .flat_map(|&i| reward.row(i).iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let eps = scale * 1e-9 / ((n * (m + 1)).max(1) as f64);
        // value[k][col] for the k-th available robot, perturbed
        let value: Vec<Vec<f64>> = avail
            .iter()
            .map(|&i| {
                (0..=m)
                    .map(|j| reward.get(i, j) - eps * ((i * (m + 1) + j + 1) as f64))
                    .collect()
            })
            .collect();

        let solo = avail
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let mut best = (0.0, None);
                if value[k][m] > best.0 {
                    best = (value[k][m], Some(TaskRef::Idle));
                }
                for &j in &ready {
                    if robots[i].capabilities.covers(tasks[j].required) && value[k][j] > best.0 {
                        best = (value[k][j], Some(TaskRef::Task(j)));
                    }
                }
                best
            })
            .collect();

        let infos = ready
            .iter()
            .map(|&j| {
                let req = tasks[j].required.bits();
                let mut by_type: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
                for (k, &i) in avail.iter().enumerate() {
                    let t = robots[i].capabilities.bits() & req;
                    if t != 0 {
                        by_type.entry(t).or_default().push(k);
                    }
                }
                let types: Vec<u64> = by_type.keys().copied().collect();
                let covers = crate::exact::minimal_coalitions(&types, req)
                    .into_iter()
                    .map(|mask| (0..types.len()).filter(|&t| mask & (1 << t) != 0).map(|t| types[t]).collect())
                    .collect();
                TaskInfo { task: j, covers, by_type }
            })
            .filter(|info: &TaskInfo| !info.covers.is_empty())
            .collect();

        Self { n_tasks: m, avail, value, tasks: infos, solo, _reward: reward }
    }

    /// Gain of the best positive core for `info` in `state`, or `None`.
    fn task_gain(&self, info: &TaskInfo, state: &State) -> Option<f64> {
        let j = info.task;
        let mut riders = 0.0;
        for k in 0..self.avail.len() {
            if !state.in_core[k] {
                riders += (self.value[k][j] - state.cur[k].0).max(0.0);
            }
        }
        let mut best: Option<f64> = None;
        for cover in &info.covers {
            let mut cost = 0.0;
            let mut ok = true;
            for t in cover {
                let pick = info.by_type[t]
                    .iter()
                    .filter(|&&k| !state.in_core[k])
                    .map(|&k| (self.value[k][j] - state.cur[k].0).min(0.0))
                    .fold(f64::NEG_INFINITY, f64::max);
                if pick == f64::NEG_INFINITY {
                    ok = false;
                    break;
                }
                cost += pick;
            }
            if ok {
                let g = riders + cost;
                if best.is_none_or(|b| g > b) {
                    best = Some(g);
                }
            }
        }
        best.filter(|&g| g > 0.0)
    }

    /// All cores of `info` with positive marginal gain, best first.
    fn improving_cores(&self, info: &TaskInfo, state: &State) -> Vec<(f64, Vec<usize>)> {
        let j = info.task;
        let mut riders = 0.0;
        for k in 0..self.avail.len() {
            if !state.in_core[k] {
                riders += (self.value[k][j] - state.cur[k].0).max(0.0);
            }
        }
        let mut out = Vec::new();
        for cover in &info.covers {
            let pools: Vec<Vec<(usize, f64)>> = cover
                .iter()
                .map(|t| {
                    info.by_type[t]
                        .iter()
                        .filter(|&&k| !state.in_core[k])
                        .map(|&k| (k, (self.value[k][j] - state.cur[k].0).min(0.0)))
                        .collect()
                })
                .collect();
            if pools.iter().any(Vec::is_empty) {
                continue;
            }
            let mut pick = Vec::with_capacity(pools.len());
            enumerate_cores(&pools, 0, riders, &mut pick, &mut out);
        }
        out.sort_by(|a, b| {
            b.0.total_cmp(&a.0).then_with(|| {
                let mut x = a.1.clone();
                let mut y = b.1.clone();
                x.sort_unstable();
                y.sort_unstable();
                x.cmp(&y)
            })
        });
        out
    }

    fn apply_core(&self, state: &mut State, j: usize, core: &[usize]) {
        for &k in core {
            state.in_core[k] = true;
            state.core_value += self.value[k][j];
        }
        for k in 0..self.avail.len() {
            if !state.in_core[k] && self.value[k][j] > state.cur[k].0 {
                state.cur[k] = (self.value[k][j], Some(TaskRef::Task(j)));
            }
        }
        state.cores.push((j, core.to_vec()));
    }

    fn bound(&self, state: &State, from: usize) -> f64 {
        let rest = &self.tasks[from..];
        let by_task: f64 = rest.iter().filter_map(|info| self.task_gain(info, state)).sum();
        let mut by_robot = 0.0;
        for k in 0..self.avail.len() {
            if state.in_core[k] {
                continue;
            }
            let best = rest
                .iter()
                .map(|info| self.value[k][info.task] - state.cur[k].0)
                .fold(0.0f64, f64::max);
            by_robot += best;
        }
        state.value() + by_task.min(by_robot)
    }

    fn solve(mut self) -> AssignmentMatrix {
        let root = State {
            in_core: vec![false; self.avail.len()],
            cur: self.solo.clone(),
            cores: Vec::new(),
            core_value: 0.0,
        };
        // visit tasks with the largest potential first
        let mut gains: Vec<(f64, usize)> = self
            .tasks
            .iter()
            .enumerate()
            .filter_map(|(idx, info)| self.task_gain(info, &root).map(|g| (g, idx)))
            .collect();
        gains.sort_by(|a, b| b.0.total_cmp(&a.0).then(self.tasks[a.1].task.cmp(&self.tasks[b.1].task)));
        let order: Vec<usize> = gains.iter().map(|&(_, idx)| idx).collect();
        let mut tasks = std::mem::take(&mut self.tasks);
        let mut sorted = Vec::with_capacity(order.len());
        for idx in order {
            sorted.push(std::mem::replace(
                &mut tasks[idx],
                TaskInfo { task: 0, covers: Vec::new(), by_type: BTreeMap::new() },
            ));
        }
        self.tasks = sorted;

        let mut best = (root.value(), root.clone());
        self.dfs(&root, 0, &mut best);
        self.materialize(&best.1)
    }

    fn dfs(&self, state: &State, depth: usize, best: &mut (f64, State)) {
        let value = state.value();
        if value > best.0 {
            *best = (value, state.clone());
        }
        if depth == self.tasks.len() || self.bound(state, depth) <= best.0 {
            return;
        }
        let info = &self.tasks[depth];
        for (_, core) in self.improving_cores(info, state) {
            let mut child = state.clone();
            self.apply_core(&mut child, info.task, &core);
            self.dfs(&child, depth + 1, best);
        }
        self.dfs(state, depth + 1, best);
    }

    fn materialize(&self, state: &State) -> AssignmentMatrix {
        let n = self._reward.n_robots();
        let mut out = AssignmentMatrix::empty(n, self.n_tasks);
        for (j, core) in &state.cores {
            for &k in core {
                out.assign(self.avail[k], TaskRef::Task(*j));
            }
        }
        for (k, &i) in self.avail.iter().enumerate() {
            if !state.in_core[k] {
                if let Some(choice) = state.cur[k].1 {
                    out.assign(i, choice);
                }
            }
        }
        out
    }
}

fn enumerate_cores(
    pools: &[Vec<(usize, f64)>],
    level: usize,
    acc: f64,
    pick: &mut Vec<usize>,
    out: &mut Vec<(f64, Vec<usize>)>,
) {
    if acc <= 0.0 {
        // costs are non-positive, so the gain can only shrink from here
        return;
    }
    if level == pools.len() {
        out.push((acc, pick.clone()));
        return;
    }
    for &(k, cost) in &pools[level] {
        pick.push(k);
        enumerate_cores(pools, level + 1, acc + cost, pick, out);
        pick.pop();
    }
}
