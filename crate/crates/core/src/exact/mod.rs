//! Makespan-optimal scheduling by depth-first branch-and-bound.
//!
//! A node is a partial schedule built by appending `(task, coalition)` pairs;
//! each appended task starts at the earliest time its coalition can gather
//! and its predecessors have finished. Any feasible schedule can be shifted
//! left to such a semi-active schedule without increasing the makespan, and
//! listing a semi-active schedule's tasks by start time replays it exactly, so
//! the search only appends tasks in non-decreasing start order (equal starts
//! by increasing task index). Coalitions are restricted to minimal covering
//! sets: dropping a member who adds no required skill only frees that robot.

mod oracle;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::{brute_force_oracle, OracleError, ORACLE_MAX_ROBOTS, ORACLE_MAX_TASKS};

use crate::model::{ModelError, ProblemInstance, Schedule, ScheduleEntry, TaskRef};

const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("instance too large for the exact solver: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    FeasibleTimeout,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub time_limit: Duration,
    /// Deterministic alternative to the wall-clock limit.
    pub node_limit: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            time_limit: Duration::from_secs(60),
            node_limit: None,
        }
    }
}

impl SolverOptions {
    pub fn with_time_limit(time_limit: Duration) -> Self {
        Self { time_limit, node_limit: None }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    /// Best schedule found; `None` only when the instance is infeasible.
    pub schedule: Option<Schedule>,
    pub status: SolveStatus,
    pub explored_nodes: u64,
    pub wall_time: Duration,
    /// `(explored_nodes, makespan)` each time the incumbent improved.
    pub incumbent_trace: Vec<(u64, f64)>,
}

impl SolverResult {
    pub fn makespan(&self) -> Option<f64> {
        self.schedule.as_ref().map(|s| s.makespan)
    }
}

/// Solves with the given wall-clock limit and no node limit.
pub fn solve_optimal(instance: &ProblemInstance, time_limit: Duration) -> Result<SolverResult, SolverError> {
    solve_with(instance, &SolverOptions::with_time_limit(time_limit))
}

pub fn solve_with(instance: &ProblemInstance, options: &SolverOptions) -> Result<SolverResult, SolverError> {
    let started = Instant::now();
    let n = instance.n_robots();
    let m = instance.n_tasks();
    if n > 64 || m > 64 {
        return Err(SolverError::TooLarge(format!("{n} robots, {m} tasks (limit 64 each)")));
    }
    let mut search = Search::new(instance, options, started);
    if search.coalitions.iter().any(Vec::is_empty) {
        return Ok(SolverResult {
            schedule: None,
            status: SolveStatus::Infeasible,
            explored_nodes: 0,
            wall_time: started.elapsed(),
            incumbent_trace: Vec::new(),
        });
    }

    search.dive();
    search.dfs();

    let status = if search.aborted {
        SolveStatus::FeasibleTimeout
    } else {
        SolveStatus::Optimal
    };
    let schedule = search.materialize()?;
    Ok(SolverResult {
        schedule: Some(schedule),
        status,
        explored_nodes: search.nodes,
        wall_time: started.elapsed(),
        incumbent_trace: search.trace,
    })
}

/// Minimal covering robot subsets of `required`, as bit masks sorted by
/// their member lists.
pub(crate) fn minimal_coalitions(caps: &[u64], required: u64) -> Vec<u64> {
    fn extend(caps: &[u64], required: u64, from: usize, mask: u64, union: u64, out: &mut Vec<u64>) {
        if union & required == required {
            // minimal iff every member provides a required skill no other member has
            let minimal = (0..caps.len()).filter(|&r| mask & (1 << r) != 0).all(|r| {
                let others = (0..caps.len())
                    .filter(|&o| o != r && mask & (1 << o) != 0)
                    .fold(0u64, |acc, o| acc | caps[o]);
                others & required != required
            });
            if minimal {
                out.push(mask);
            }
            return;
        }
        for r in from..caps.len() {
            if caps[r] & required & !union != 0 {
                extend(caps, required, r + 1, mask | (1 << r), union | caps[r], out);
            }
        }
    }
    let mut out = Vec::new();
    extend(caps, required, 0, 0, 0, &mut out);
    out.sort_by_key(|&mask| members(mask).collect::<Vec<_>>());
    out
}

fn members(mask: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |&r| mask & (1u64 << r) != 0)
}

struct Search<'a> {
    instance: &'a ProblemInstance,
    options: &'a SolverOptions,
    started: Instant,
    n: usize,
    m: usize,
    duration: Vec<f64>,
    /// `to_task[loc][j]`: travel time from location `loc` to task `j`.
    /// Locations `0..m` are tasks, `m..m+n` start depots.
    to_task: Vec<Vec<f64>>,
    /// `to_end[loc][r]`: travel time from location `loc` to robot `r`'s end depot.
    to_end: Vec<Vec<f64>>,
    coalitions: Vec<Vec<u64>>,
    pred_mask: Vec<u64>,
    topo: Vec<usize>,
    /// Robots holding at least one skill of each task's requirement.
    relevant: Vec<u64>,
    /// Per task, one robot mask per required skill.
    skill_holders: Vec<Vec<u64>>,
    required: Vec<u64>,
    /// Per skill `(bit, holders, total duration of tasks requiring it)`.
    skills: Vec<(u64, u64, f64)>,

    free: Vec<f64>,
    loc: Vec<usize>,
    start: Vec<f64>,
    end: Vec<f64>,
    scheduled: u64,
    last_start: f64,
    last_task: usize,
    path: Vec<(usize, u64)>,

    best: f64,
    best_path: Vec<(usize, u64, f64)>,
    nodes: u64,
    aborted: bool,
    trace: Vec<(u64, f64)>,
    head: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(instance: &'a ProblemInstance, options: &'a SolverOptions, started: Instant) -> Self {
        let n = instance.n_robots();
        let m = instance.n_tasks();
        let mut locations: Vec<_> = instance.tasks().iter().map(|t| t.position).collect();
        locations.extend_from_slice(instance.start_positions());
        let to_task = locations
            .iter()
            .map(|&a| instance.tasks().iter().map(|t| instance.travel(a, t.position)).collect())
            .collect();
        let to_end = locations
            .iter()
            .map(|&a| instance.end_positions().iter().map(|&e| instance.travel(a, e)).collect())
            .collect();
        let caps: Vec<u64> = instance.robots().iter().map(|r| r.capabilities.bits()).collect();
        let coalitions = instance
            .tasks()
            .iter()
            .map(|t| minimal_coalitions(&caps, t.required.bits()))
            .collect();
        let pred_mask = (0..m)
            .map(|j| instance.predecessors(j).iter().fold(0u64, |acc, &p| acc | (1 << p)))
            .collect();
        let holders_of = |s: usize| (0..n).filter(|&r| caps[r] & (1 << s) != 0).fold(0u64, |a, r| a | (1 << r));
        let relevant = instance
            .tasks()
            .iter()
            .map(|t| (0..n).filter(|&r| caps[r] & t.required.bits() != 0).fold(0u64, |a, r| a | (1 << r)))
            .collect();
        let skill_holders = instance
            .tasks()
            .iter()
            .map(|t| t.required.iter().map(holders_of).collect())
            .collect();
        let skills = (0..instance.skill_count())
            .map(|s| {
                let work = instance
                    .tasks()
                    .iter()
                    .filter(|t| t.required.contains(s))
                    .map(|t| t.duration)
                    .sum();
                (1u64 << s, holders_of(s), work)
            })
            .collect();
        Self {
            instance,
            options,
            started,
            n,
            m,
            duration: instance.tasks().iter().map(|t| t.duration).collect(),
            to_task,
            to_end,
            coalitions,
            pred_mask,
            topo: instance.topological_order().to_vec(),
            relevant,
            skill_holders,
            required: instance.tasks().iter().map(|t| t.required.bits()).collect(),
            skills,
            free: vec![0.0; n],
            loc: (0..n).map(|r| m + r).collect(),
            start: vec![0.0; m],
            end: vec![0.0; m],
            scheduled: 0,
            last_start: f64::NEG_INFINITY,
            last_task: 0,
            path: Vec::with_capacity(m),
            best: f64::INFINITY,
            best_path: Vec::new(),
            nodes: 0,
            aborted: false,
            trace: Vec::new(),
            head: vec![0.0; m],
        }
    }

    fn all_scheduled(&self) -> bool {
        self.scheduled.count_ones() as usize == self.m
    }

    fn current_makespan(&self) -> f64 {
        (0..self.n)
            .map(|r| self.free[r] + self.to_end[self.loc[r]][r])
            .fold(0.0, f64::max)
    }

    fn earliest_start(&self, j: usize, coalition: u64) -> f64 {
        let mut t = members(self.pred_mask[j]).map(|p| self.end[p]).fold(0.0, f64::max);
        for r in members(coalition) {
            t = t.max(self.free[r] + self.to_task[self.loc[r]][j]);
        }
        t
    }

    fn lower_bound(&mut self) -> f64 {
        let mut lb = self.current_makespan();
        let floor = self.last_start.max(0.0);
        for k in 0..self.m {
            let j = self.topo[k];
            if self.scheduled & (1 << j) != 0 {
                continue;
            }
            let mut h = floor;
            for p in members(self.pred_mask[j]) {
                let ready = if self.scheduled & (1 << p) != 0 {
                    self.end[p]
                } else {
                    self.head[p] + self.duration[p]
                };
                h = h.max(ready);
            }
            for &holders in &self.skill_holders[j] {
                let arrival = members(holders)
                    .map(|r| self.free[r] + self.to_task[self.loc[r]][j])
                    .fold(f64::INFINITY, f64::min);
                h = h.max(arrival);
            }
            self.head[j] = h;
            let back = members(self.relevant[j])
                .map(|r| self.to_end[j][r])
                .fold(f64::INFINITY, f64::min);
            lb = lb.max(h + self.duration[j] + back);
        }
        for &(bit, holders, total) in &self.skills {
            if holders == 0 || total == 0.0 {
                continue;
            }
            let done: f64 = members(self.scheduled)
                .filter(|&j| self.required[j] & bit != 0)
                .map(|j| self.duration[j])
                .sum();
            let remaining = total - done;
            let sum_free: f64 = members(holders).map(|r| self.free[r]).sum();
            lb = lb.max((sum_free + remaining) / holders.count_ones() as f64);
        }
        lb
    }

    fn push(&mut self, j: usize, coalition: u64, start: f64) -> Vec<(usize, f64, usize)> {
        let end = start + self.duration[j];
        let saved: Vec<_> = members(coalition).map(|r| (r, self.free[r], self.loc[r])).collect();
        for r in members(coalition) {
            self.free[r] = end;
            self.loc[r] = j;
        }
        self.start[j] = start;
        self.end[j] = end;
        self.scheduled |= 1 << j;
        self.path.push((j, coalition));
        saved
    }

    fn pop(&mut self, j: usize, saved: Vec<(usize, f64, usize)>) {
        for (r, free, loc) in saved {
            self.free[r] = free;
            self.loc[r] = loc;
        }
        self.scheduled &= !(1 << j);
        self.path.pop();
    }

    fn record_if_better(&mut self) {
        let span = self.current_makespan();
        if span < self.best - EPS {
            self.best = span;
            self.best_path = self.path.iter().map(|&(j, c)| (j, c, self.start[j])).collect();
            self.trace.push((self.nodes, span));
        }
    }

    fn eligible(&self, j: usize) -> bool {
        self.scheduled & (1 << j) == 0 && self.pred_mask[j] & !self.scheduled == 0
    }

    /// Greedy earliest-finish construction for a first incumbent.
    fn dive(&mut self) {
        let mut stack = Vec::new();
        while !self.all_scheduled() {
            let mut pick: Option<(f64, usize, u64, f64)> = None;
            for j in (0..self.m).filter(|&j| self.eligible(j)) {
                for &c in &self.coalitions[j] {
                    let s = self.earliest_start(j, c);
                    let finish = s + self.duration[j];
                    if pick.is_none_or(|(f, ..)| finish < f) {
                        pick = Some((finish, j, c, s));
                    }
                }
            }
            let (_, j, c, s) = pick.expect("an eligible task always exists in a DAG");
            let saved = self.push(j, c, s);
            stack.push((j, saved));
        }
        self.record_if_better();
        while let Some((j, saved)) = stack.pop() {
            self.pop(j, saved);
        }
    }

    fn out_of_budget(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        if let Some(limit) = self.options.node_limit {
            if self.nodes >= limit {
                self.aborted = true;
            }
        }
        if self.nodes.is_multiple_of(512) && self.started.elapsed() >= self.options.time_limit {
            self.aborted = true;
        }
        self.aborted
    }

    fn dfs(&mut self) {
        self.nodes += 1;
        if self.out_of_budget() {
            return;
        }
        if self.all_scheduled() {
            self.record_if_better();
            return;
        }
        if self.lower_bound() >= self.best - EPS {
            return;
        }
        for j in 0..self.m {
            if !self.eligible(j) {
                continue;
            }
            for k in 0..self.coalitions[j].len() {
                let c = self.coalitions[j][k];
                let s = self.earliest_start(j, c);
                if s < self.last_start || (s == self.last_start && j < self.last_task) {
                    continue;
                }
                let (prev_start, prev_task) = (self.last_start, self.last_task);
                let saved = self.push(j, c, s);
                self.last_start = s;
                self.last_task = j;
                self.dfs();
                self.last_start = prev_start;
                self.last_task = prev_task;
                self.pop(j, saved);
                if self.aborted {
                    return;
                }
            }
        }
    }

    fn materialize(&self) -> Result<Schedule, ModelError> {
        let mut entries = Vec::new();
        for &(j, c, s) in &self.best_path {
            for r in members(c) {
                entries.push(ScheduleEntry {
                    robot: r,
                    task: TaskRef::Task(j),
                    start: s,
                    end: s + self.duration[j],
                });
            }
        }
        Schedule::from_entries(entries, self.instance)
    }
}
