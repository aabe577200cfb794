//! Domain types shared by every other module: skills, robots, tasks, the
//! problem instance and materialized schedules.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute tolerance used for every time comparison in feasibility checks.
pub const TIME_TOLERANCE: f64 = 1e-6;

/// Largest skill alphabet a [`SkillSet`] can hold.
pub const MAX_SKILLS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Point at `fraction` of the way from `self` to `other`.
    pub fn lerp(&self, other: &Point, fraction: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * fraction,
            self.y + (other.y - self.y) * fraction,
        )
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Euclidean travel time between two points at a constant speed.
pub fn travel_time(a: Point, b: Point, speed: f64) -> Result<f64, ModelError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(ModelError::InvalidInput(format!(
            "non-finite coordinates in travel between {a} and {b}"
        )));
    }
    if !(speed.is_finite() && speed > 0.0) {
        return Err(ModelError::InvalidInput(format!(
            "speed must be positive and finite, got {speed}"
        )));
    }
    Ok(a.distance(&b) / speed)
}

/// Fixed-width bit vector over the global skill alphabet.
///
/// `a.covers(b)` is the element-wise `a >= b` test on the binary capability
/// vectors, i.e. every skill in `b` is also in `a`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct SkillSet(u64);

impl SkillSet {
    pub const EMPTY: SkillSet = SkillSet(0);

    pub const fn from_bits(bits: u64) -> Self {
        SkillSet(bits)
    }

    /// Build from skill indices. Panics if an index is `>= MAX_SKILLS`.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut bits = 0u64;
        for i in indices {
            assert!(i < MAX_SKILLS, "skill index {i} out of range");
            bits |= 1 << i;
        }
        SkillSet(bits)
    }

    /// All skills `0..width`.
    pub fn full(width: usize) -> Self {
        if width >= MAX_SKILLS {
            SkillSet(u64::MAX)
        } else {
            SkillSet((1u64 << width) - 1)
        }
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn contains(self, skill: usize) -> bool {
        skill < MAX_SKILLS && self.0 & (1 << skill) != 0
    }

    pub const fn union(self, other: SkillSet) -> SkillSet {
        SkillSet(self.0 | other.0)
    }

    pub const fn intersection(self, other: SkillSet) -> SkillSet {
        SkillSet(self.0 & other.0)
    }

    /// Skills of `required` that `self` does not provide.
    pub const fn missing(self, required: SkillSet) -> SkillSet {
        SkillSet(required.0 & !self.0)
    }

    pub const fn covers(self, required: SkillSet) -> bool {
        required.0 & !self.0 == 0
    }

    /// True if every set bit lies below `width`.
    pub fn fits_width(self, width: usize) -> bool {
        width >= MAX_SKILLS || self.0 >> width == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_SKILLS).filter(move |&i| self.contains(i))
    }
}

impl fmt::Debug for SkillSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for SkillSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, s) in self.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "s{s}")?;
        }
        write!(f, "}}")
    }
}

impl FromIterator<usize> for SkillSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SkillSet::from_indices(iter)
    }
}

impl Serialize for SkillSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for SkillSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let indices = Vec::<usize>::deserialize(deserializer)?;
        let mut bits = 0u64;
        for i in indices {
            if i >= MAX_SKILLS {
                return Err(serde::de::Error::custom(format!(
                    "skill index {i} exceeds the {MAX_SKILLS}-skill limit"
                )));
            }
            bits |= 1 << i;
        }
        Ok(SkillSet(bits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Point,
    /// Time left on the task the robot is currently executing.
    pub remaining_duration: f64,
    pub available: bool,
    pub capabilities: SkillSet,
}

impl RobotState {
    /// An idle robot waiting at `position`.
    pub fn idle_at(position: Point, capabilities: SkillSet) -> Self {
        Self {
            position,
            remaining_duration: 0.0,
            available: true,
            capabilities,
        }
    }
}

/// The `[ready, assigned, incomplete]` status triple of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskStatus {
    pub ready: bool,
    pub assigned: bool,
    pub incomplete: bool,
}

impl TaskStatus {
    pub const WAITING: TaskStatus = TaskStatus {
        ready: false,
        assigned: false,
        incomplete: true,
    };
    pub const READY: TaskStatus = TaskStatus {
        ready: true,
        assigned: false,
        incomplete: true,
    };
    pub const ASSIGNED: TaskStatus = TaskStatus {
        ready: false,
        assigned: true,
        incomplete: true,
    };
    pub const DONE: TaskStatus = TaskStatus {
        ready: false,
        assigned: false,
        incomplete: false,
    };

    /// Ready, unassigned and incomplete.
    pub const fn schedulable(&self) -> bool {
        self.ready && !self.assigned && self.incomplete
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub position: Point,
    pub duration: f64,
    pub required: SkillSet,
    pub status: TaskStatus,
}

impl TaskSpec {
    pub fn new(position: Point, duration: f64, required: SkillSet) -> Self {
        Self {
            position,
            duration,
            required,
            status: TaskStatus::WAITING,
        }
    }
}

/// A full static scenario: robots at their start depots, tasks with their
/// precedence DAG, end depots and the travel speed.
///
/// Construction validates every structural invariant, so downstream code can
/// rely on acyclic precedence and on every task being coverable by the team.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    robots: Vec<RobotState>,
    tasks: Vec<TaskSpec>,
    precedence: Vec<Vec<bool>>,
    predecessors: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
    robot_graph: Vec<Vec<bool>>,
    start_positions: Vec<Point>,
    end_positions: Vec<Point>,
    speed: f64,
    skill_count: usize,
}

impl ProblemInstance {
    /// Builds and validates an instance.
    ///
    /// Robots start at their current `position`, which becomes the start
    /// depot; they must be available with no remaining work. Task statuses are
    /// recomputed from the precedence edges (`(i, j)` means `i` before `j`).
    /// The robot communication graph defaults to fully connected.
    pub fn new(
        robots: Vec<RobotState>,
        tasks: Vec<TaskSpec>,
        precedence_edges: &[(usize, usize)],
        end_positions: Vec<Point>,
        speed: f64,
        skill_count: usize,
    ) -> Result<Self, ModelError> {
        let n = robots.len();
        let m = tasks.len();
        let bad = |msg: String| Err(ModelError::InvalidInstance(msg));

        if skill_count == 0 || skill_count > MAX_SKILLS {
            return bad(format!("skill_count must be in 1..={MAX_SKILLS}, got {skill_count}"));
        }
        if !(speed.is_finite() && speed > 0.0) {
            return bad(format!("speed must be positive and finite, got {speed}"));
        }
        if end_positions.len() != n {
            return bad(format!(
                "expected {n} end depots, got {}",
                end_positions.len()
            ));
        }
        for (i, r) in robots.iter().enumerate() {
            if !r.position.is_finite() || !end_positions[i].is_finite() {
                return bad(format!("robot {i} has non-finite depot coordinates"));
            }
            if !r.capabilities.fits_width(skill_count) {
                return bad(format!("robot {i} capabilities exceed {skill_count} skills"));
            }
            if !r.available || r.remaining_duration != 0.0 {
                return bad(format!("robot {i} must start available with no remaining work"));
            }
        }
        let team = robots
            .iter()
            .fold(SkillSet::EMPTY, |acc, r| acc.union(r.capabilities));
        for (j, t) in tasks.iter().enumerate() {
            if !t.position.is_finite() {
                return bad(format!("task {j} has non-finite coordinates"));
            }
            if !(t.duration.is_finite() && t.duration > 0.0) {
                return bad(format!("task {j} duration must be positive, got {}", t.duration));
            }
            if t.required.is_empty() {
                return bad(format!("task {j} requires no skills"));
            }
            if !t.required.fits_width(skill_count) {
                return bad(format!("task {j} requirements exceed {skill_count} skills"));
            }
            if !team.covers(t.required) {
                return bad(format!(
                    "task {j} requires {} but the team only offers {}",
                    t.required, team
                ));
            }
        }

        let mut precedence = vec![vec![false; m]; m];
        let mut predecessors = vec![Vec::new(); m];
        let mut successors = vec![Vec::new(); m];
        for &(a, b) in precedence_edges {
            if a >= m || b >= m {
                return bad(format!("precedence edge ({a}, {b}) references unknown task"));
            }
            if a == b {
                return bad(format!("precedence self-loop on task {a}"));
            }
            if !precedence[a][b] {
                precedence[a][b] = true;
                predecessors[b].push(a);
                successors[a].push(b);
            }
        }
        for list in predecessors.iter_mut().chain(successors.iter_mut()) {
            list.sort_unstable();
        }
        let topo_order = match topological_order(&predecessors, &successors) {
            Some(order) => order,
            None => return bad("precedence graph contains a cycle".into()),
        };

        let start_positions = robots.iter().map(|r| r.position).collect();
        let mut tasks = tasks;
        for (j, t) in tasks.iter_mut().enumerate() {
            t.status = if predecessors[j].is_empty() {
                TaskStatus::READY
            } else {
                TaskStatus::WAITING
            };
        }

        Ok(Self {
            robots,
            tasks,
            precedence,
            predecessors,
            successors,
            topo_order,
            robot_graph: vec![vec![true; n]; n],
            start_positions,
            end_positions,
            speed,
            skill_count,
        })
    }

    /// Replaces the robot communication graph. Carried for completeness; no
    /// scheduling algorithm in this crate reads it.
    pub fn with_robot_graph(mut self, graph: Vec<Vec<bool>>) -> Result<Self, ModelError> {
        let n = self.robots.len();
        if graph.len() != n || graph.iter().any(|row| row.len() != n) {
            return Err(ModelError::InvalidInstance(format!(
                "robot graph must be {n}x{n}"
            )));
        }
        self.robot_graph = graph;
        Ok(self)
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn robot(&self, i: usize) -> &RobotState {
        &self.robots[i]
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, j: usize) -> &TaskSpec {
        &self.tasks[j]
    }

    /// `P[i][j]`: task `i` must complete before task `j` becomes ready.
    pub fn precedence(&self) -> &[Vec<bool>] {
        &self.precedence
    }

    pub fn precedes(&self, i: usize, j: usize) -> bool {
        self.precedence[i][j]
    }

    pub fn predecessors(&self, j: usize) -> &[usize] {
        &self.predecessors[j]
    }

    pub fn successors(&self, j: usize) -> &[usize] {
        &self.successors[j]
    }

    /// Precedence edges in row-major order.
    pub fn precedence_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (a, succ) in self.successors.iter().enumerate() {
            edges.extend(succ.iter().map(|&b| (a, b)));
        }
        edges
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn robot_graph(&self) -> &[Vec<bool>] {
        &self.robot_graph
    }

    pub fn start_position(&self, i: usize) -> Point {
        self.start_positions[i]
    }

    pub fn start_positions(&self) -> &[Point] {
        &self.start_positions
    }

    pub fn end_position(&self, i: usize) -> Point {
        self.end_positions[i]
    }

    pub fn end_positions(&self) -> &[Point] {
        &self.end_positions
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn skill_count(&self) -> usize {
        self.skill_count
    }

    /// Union of all robot capabilities.
    pub fn team_skills(&self) -> SkillSet {
        self.robots
            .iter()
            .fold(SkillSet::EMPTY, |acc, r| acc.union(r.capabilities))
    }

    /// Travel time between two points at this instance's speed. Points of a
    /// validated instance are finite, so this never fails for them.
    pub fn travel(&self, a: Point, b: Point) -> f64 {
        a.distance(&b) / self.speed
    }
}

fn topological_order(predecessors: &[Vec<usize>], successors: &[Vec<usize>]) -> Option<Vec<usize>> {
    let m = predecessors.len();
    let mut indegree: Vec<usize> = predecessors.iter().map(Vec::len).collect();
    let mut ready: std::collections::BTreeSet<usize> =
        (0..m).filter(|&j| indegree[j] == 0).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(j) = ready.pop_first() {
        order.push(j);
        for &s in &successors[j] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert(s);
            }
        }
    }
    (order.len() == m).then_some(order)
}

/// Either a real task index or the idle pseudo-task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskRef {
    Task(usize),
    Idle,
}

impl TaskRef {
    pub fn index(self) -> Option<usize> {
        match self {
            TaskRef::Task(j) => Some(j),
            TaskRef::Idle => None,
        }
    }
}

impl Serialize for TaskRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TaskRef::Task(j) => serializer.serialize_u64(*j as u64),
            TaskRef::Idle => serializer.serialize_str("idle"),
        }
    }
}

impl<'de> Deserialize<'de> for TaskRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Index(j) => Ok(TaskRef::Task(j)),
            Raw::Name(s) if s == "idle" => Ok(TaskRef::Idle),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "expected task index or \"idle\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub robot: usize,
    pub task: TaskRef,
    pub start: f64,
    pub end: f64,
}

/// Per-robot timelines of task executions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    pub makespan: f64,
}

impl Schedule {
    /// Sorts entries by `(start, robot, task)` and computes the makespan.
    pub fn from_entries(
        mut entries: Vec<ScheduleEntry>,
        instance: &ProblemInstance,
    ) -> Result<Self, ModelError> {
        entries.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then(a.robot.cmp(&b.robot))
                .then(a.task.cmp(&b.task))
        });
        let mut schedule = Schedule {
            entries,
            makespan: 0.0,
        };
        schedule.makespan = makespan(&schedule, instance)?;
        Ok(schedule)
    }

    /// Entries of one robot, ordered by start time.
    pub fn robot_entries(&self, robot: usize) -> Vec<ScheduleEntry> {
        let mut list: Vec<_> = self
            .entries
            .iter()
            .filter(|e| e.robot == robot)
            .copied()
            .collect();
        list.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        list
    }

    /// Robots executing task `j`, in index order.
    pub fn coalition(&self, task: usize) -> Vec<usize> {
        let mut members: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.task == TaskRef::Task(task))
            .map(|e| e.robot)
            .collect();
        members.sort_unstable();
        members.dedup();
        members
    }

    /// `(start, end)` of task `j`, taken from its first entry.
    pub fn task_window(&self, task: usize) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .find(|e| e.task == TaskRef::Task(task))
            .map(|e| (e.start, e.end))
    }

    /// Distinct task finish times in increasing order, merged within
    /// [`TIME_TOLERANCE`].
    pub fn finish_times(&self) -> Vec<f64> {
        let mut ends: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.task != TaskRef::Idle)
            .map(|e| e.end)
            .collect();
        ends.sort_by(f64::total_cmp);
        let mut out: Vec<f64> = Vec::new();
        for t in ends {
            match out.last() {
                Some(&last) if t - last <= TIME_TOLERANCE => {}
                _ => out.push(t),
            }
        }
        out
    }
}

/// Latest arrival of any robot at its end depot: for each robot, the end of
/// its last task plus the trip home; robots without tasks drive straight from
/// start to end depot.
pub fn makespan(schedule: &Schedule, instance: &ProblemInstance) -> Result<f64, ModelError> {
    let n = instance.n_robots();
    let m = instance.n_tasks();
    let mut last: Vec<Option<(f64, usize)>> = vec![None; n];
    for e in &schedule.entries {
        if e.robot >= n {
            return Err(ModelError::InvalidSchedule(format!(
                "entry references unknown robot {}",
                e.robot
            )));
        }
        let TaskRef::Task(j) = e.task else { continue };
        if j >= m {
            return Err(ModelError::InvalidSchedule(format!(
                "entry references unknown task {j}"
            )));
        }
        match last[e.robot] {
            Some((end, _)) if end >= e.end => {}
            _ => last[e.robot] = Some((e.end, j)),
        }
    }
    let mut span = 0.0f64;
    for (i, l) in last.iter().enumerate() {
        let arrival = match l {
            Some((end, j)) => end + instance.travel(instance.task(*j).position, instance.end_position(i)),
            None => instance.travel(instance.start_position(i), instance.end_position(i)),
        };
        span = span.max(arrival);
    }
    Ok(span)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownRobot { robot: usize },
    UnknownTask { task: usize },
    NegativeInterval { robot: usize, task: TaskRef },
    WrongDuration { robot: usize, task: usize, expected: f64, actual: f64 },
    DuplicateAssignment { robot: usize, task: usize },
    MissingTask { task: usize },
    Coverage { task: usize, missing: SkillSet },
    Synchronization { task: usize },
    Precedence { before: usize, after: usize },
    Overlap { robot: usize, first: TaskRef, second: TaskRef },
    Travel { robot: usize, to: usize, gap: f64, needed: f64 },
    MakespanMismatch { recorded: f64, recomputed: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownRobot { robot } => write!(f, "unknown robot {robot}"),
            Violation::UnknownTask { task } => write!(f, "unknown task {task}"),
            Violation::NegativeInterval { robot, task } => {
                write!(f, "robot {robot} has an entry for {task:?} ending before it starts")
            }
            Violation::WrongDuration { robot, task, expected, actual } => write!(
                f,
                "robot {robot} executes task {task} for {actual} instead of {expected}"
            ),
            Violation::DuplicateAssignment { robot, task } => {
                write!(f, "robot {robot} appears twice on task {task}")
            }
            Violation::MissingTask { task } => write!(f, "task {task} is never executed"),
            Violation::Coverage { task, missing } => {
                write!(f, "coalition of task {task} lacks skills {missing}")
            }
            Violation::Synchronization { task } => {
                write!(f, "coalition members of task {task} do not share start/end times")
            }
            Violation::Precedence { before, after } => {
                write!(f, "task {after} starts before its predecessor {before} ends")
            }
            Violation::Overlap { robot, first, second } => {
                write!(f, "robot {robot} overlaps {first:?} and {second:?}")
            }
            Violation::Travel { robot, to, gap, needed } => write!(
                f,
                "robot {robot} has {gap} time to reach task {to} but needs {needed}"
            ),
            Violation::MakespanMismatch { recorded, recomputed } => {
                write!(f, "recorded makespan {recorded} differs from {recomputed}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "feasible");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks a schedule against every constraint of the scenario. Violations are
/// returned as data; an empty report means the schedule is feasible.
pub fn validate_schedule(schedule: &Schedule, instance: &ProblemInstance) -> ValidationReport {
    let n = instance.n_robots();
    let m = instance.n_tasks();
    let tol = TIME_TOLERANCE;
    let mut out = Vec::new();

    let mut structurally_ok = true;
    let mut by_task: Vec<Vec<&ScheduleEntry>> = vec![Vec::new(); m];
    let mut by_robot: Vec<Vec<&ScheduleEntry>> = vec![Vec::new(); n];
    for e in &schedule.entries {
        if e.robot >= n {
            out.push(Violation::UnknownRobot { robot: e.robot });
            structurally_ok = false;
            continue;
        }
        if !(e.end >= e.start - tol) || !e.start.is_finite() || !e.end.is_finite() {
            out.push(Violation::NegativeInterval { robot: e.robot, task: e.task });
        }
        match e.task {
            TaskRef::Task(j) if j >= m => {
                out.push(Violation::UnknownTask { task: j });
                structurally_ok = false;
                continue;
            }
            TaskRef::Task(j) => {
                let expected = instance.task(j).duration;
                let actual = e.end - e.start;
                if (actual - expected).abs() > tol {
                    out.push(Violation::WrongDuration { robot: e.robot, task: j, expected, actual });
                }
                if by_task[j].iter().any(|o| o.robot == e.robot) {
                    out.push(Violation::DuplicateAssignment { robot: e.robot, task: j });
                }
                by_task[j].push(e);
            }
            TaskRef::Idle => {}
        }
        by_robot[e.robot].push(e);
    }

    // coverage and synchronization
    for (j, members) in by_task.iter().enumerate() {
        if members.is_empty() {
            out.push(Violation::MissingTask { task: j });
            continue;
        }
        let caps = members
            .iter()
            .fold(SkillSet::EMPTY, |acc, e| acc.union(instance.robot(e.robot).capabilities));
        let missing = caps.missing(instance.task(j).required);
        if !missing.is_empty() {
            out.push(Violation::Coverage { task: j, missing });
        }
        let (s0, e0) = (members[0].start, members[0].end);
        if members
            .iter()
            .any(|e| (e.start - s0).abs() > tol || (e.end - e0).abs() > tol)
        {
            out.push(Violation::Synchronization { task: j });
        }
    }

    // precedence
    for (a, b) in instance.precedence_edges() {
        let (Some(pa), Some(pb)) = (by_task[a].first(), by_task[b].first()) else {
            continue;
        };
        if pa.end > pb.start + tol {
            out.push(Violation::Precedence { before: a, after: b });
        }
    }

    // per-robot sequencing and travel
    for (i, entries) in by_robot.iter_mut().enumerate() {
        entries.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        for w in entries.windows(2) {
            if w[1].start < w[0].end - tol {
                out.push(Violation::Overlap { robot: i, first: w[0].task, second: w[1].task });
            }
        }
        let mut pos = instance.start_position(i);
        let mut free_at = 0.0;
        for e in entries.iter() {
            let TaskRef::Task(j) = e.task else { continue };
            let target = instance.task(j).position;
            let needed = instance.travel(pos, target);
            let gap = e.start - free_at;
            if gap < needed - tol {
                out.push(Violation::Travel { robot: i, to: j, gap, needed });
            }
            pos = target;
            free_at = e.end;
        }
    }

    if structurally_ok {
        if let Ok(recomputed) = makespan(schedule, instance) {
            if (recomputed - schedule.makespan).abs() > tol {
                out.push(Violation::MakespanMismatch {
                    recorded: schedule.makespan,
                    recomputed,
                });
            }
        }
    }

    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> ProblemInstance {
        let robots = vec![RobotState::idle_at(Point::new(0.0, 0.0), SkillSet::from_indices([0]))];
        let tasks = vec![TaskSpec::new(Point::new(3.0, 4.0), 50.0, SkillSet::from_indices([0]))];
        ProblemInstance::new(robots, tasks, &[], vec![Point::new(3.0, 4.0)], 1.0, 1).unwrap()
    }

    #[test]
    fn travel_time_examples() {
        assert_eq!(travel_time(Point::new(0.0, 0.0), Point::new(3.0, 4.0), 1.0).unwrap(), 5.0);
        assert_eq!(travel_time(Point::new(7.0, 7.0), Point::new(7.0, 7.0), 1.0).unwrap(), 0.0);
        let t = travel_time(Point::new(0.0, 0.0), Point::new(1.0, 1.0), 2.0).unwrap();
        assert!((t - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((t - 0.707_106_781_186_547_5).abs() < 1e-15);
    }

    #[test]
    fn travel_time_rejects_bad_input() {
        assert!(travel_time(Point::new(f64::NAN, 0.0), Point::new(0.0, 0.0), 1.0).is_err());
        assert!(travel_time(Point::new(0.0, 0.0), Point::new(f64::INFINITY, 0.0), 1.0).is_err());
        assert!(travel_time(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn skill_cover_is_elementwise_ge() {
        let a = SkillSet::from_indices([0, 2]);
        assert!(a.covers(SkillSet::from_indices([2])));
        assert!(a.covers(SkillSet::EMPTY));
        assert!(!a.covers(SkillSet::from_indices([1, 2])));
        assert_eq!(a.missing(SkillSet::from_indices([1, 2])), SkillSet::from_indices([1]));
        assert!(SkillSet::full(3).covers(SkillSet::from_indices([0, 1, 2])));
        assert!(!SkillSet::from_indices([3]).fits_width(3));
    }

    #[test]
    fn makespan_single_robot_single_task() {
        let inst = single();
        let entries = vec![ScheduleEntry { robot: 0, task: TaskRef::Task(0), start: 5.0, end: 55.0 }];
        let s = Schedule::from_entries(entries, &inst).unwrap();
        assert_eq!(s.makespan, 55.0);
        assert!(validate_schedule(&s, &inst).is_feasible());
    }

    #[test]
    fn makespan_empty_schedule_coincident_depots() {
        let robots = vec![RobotState::idle_at(Point::new(1.0, 1.0), SkillSet::from_indices([0]))];
        let inst = ProblemInstance::new(robots, vec![], &[], vec![Point::new(1.0, 1.0)], 1.0, 1).unwrap();
        let s = Schedule::from_entries(vec![], &inst).unwrap();
        assert_eq!(s.makespan, 0.0);
    }

    #[test]
    fn makespan_rejects_unknown_references() {
        let inst = single();
        let s = Schedule {
            entries: vec![ScheduleEntry { robot: 0, task: TaskRef::Task(3), start: 0.0, end: 1.0 }],
            makespan: 0.0,
        };
        assert!(matches!(makespan(&s, &inst), Err(ModelError::InvalidSchedule(_))));
        let s = Schedule {
            entries: vec![ScheduleEntry { robot: 9, task: TaskRef::Task(0), start: 0.0, end: 1.0 }],
            makespan: 0.0,
        };
        assert!(makespan(&s, &inst).is_err());
    }

    #[test]
    fn instance_rejects_cycles_and_uncoverable_tasks() {
        let robots = vec![RobotState::idle_at(Point::default(), SkillSet::from_indices([0]))];
        let t = TaskSpec::new(Point::default(), 1.0, SkillSet::from_indices([0]));
        let err = ProblemInstance::new(
            robots.clone(),
            vec![t, t],
            &[(0, 1), (1, 0)],
            vec![Point::default()],
            1.0,
            1,
        );
        assert!(matches!(err, Err(ModelError::InvalidInstance(_))));

        let needs_two = TaskSpec::new(Point::default(), 1.0, SkillSet::from_indices([1]));
        let err = ProblemInstance::new(robots, vec![needs_two], &[], vec![Point::default()], 1.0, 2);
        assert!(err.is_err());
    }

    #[test]
    fn statuses_follow_precedence() {
        let robots = vec![RobotState::idle_at(Point::default(), SkillSet::from_indices([0]))];
        let t = TaskSpec::new(Point::default(), 1.0, SkillSet::from_indices([0]));
        let inst =
            ProblemInstance::new(robots, vec![t, t, t], &[(0, 2)], vec![Point::default()], 1.0, 1).unwrap();
        assert_eq!(inst.task(0).status, TaskStatus::READY);
        assert_eq!(inst.task(2).status, TaskStatus::WAITING);
        assert!(inst.task(1).status.schedulable());
        assert_eq!(inst.robot_graph()[0], vec![true]);
        let pos: Vec<usize> = inst.topological_order().to_vec();
        assert!(pos.iter().position(|&j| j == 0) < pos.iter().position(|&j| j == 2));
    }

    fn two_task_instance() -> ProblemInstance {
        let robots = vec![
            RobotState::idle_at(Point::new(0.0, 0.0), SkillSet::from_indices([0])),
            RobotState::idle_at(Point::new(10.0, 0.0), SkillSet::from_indices([1])),
        ];
        let tasks = vec![
            TaskSpec::new(Point::new(0.0, 10.0), 20.0, SkillSet::from_indices([0, 1])),
            TaskSpec::new(Point::new(10.0, 10.0), 30.0, SkillSet::from_indices([0])),
        ];
        ProblemInstance::new(robots, tasks, &[(0, 1)], vec![Point::new(0.0, 0.0); 2], 1.0, 2).unwrap()
    }

    #[test]
    fn validator_flags_precedence_violation() {
        let inst = two_task_instance();
        let d = 200f64.sqrt();
        let entries = vec![
            ScheduleEntry { robot: 0, task: TaskRef::Task(1), start: d, end: d + 30.0 },
            ScheduleEntry { robot: 0, task: TaskRef::Task(0), start: 100.0, end: 120.0 },
            ScheduleEntry { robot: 1, task: TaskRef::Task(0), start: 100.0, end: 120.0 },
        ];
        let s = Schedule::from_entries(entries, &inst).unwrap();
        let report = validate_schedule(&s, &inst);
        assert!(report
            .violations
            .contains(&Violation::Precedence { before: 0, after: 1 }));
    }

    #[test]
    fn validator_flags_missing_skill() {
        let inst = two_task_instance();
        let entries = vec![
            ScheduleEntry { robot: 0, task: TaskRef::Task(0), start: 10.0, end: 30.0 },
            ScheduleEntry { robot: 0, task: TaskRef::Task(1), start: 40.0, end: 70.0 },
        ];
        let s = Schedule::from_entries(entries, &inst).unwrap();
        let report = validate_schedule(&s, &inst);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::Coverage { task: 0, missing } if *missing == SkillSet::from_indices([1])
        )));
    }

    #[test]
    fn validator_flags_travel_sync_and_makespan() {
        let inst = two_task_instance();
        let entries = vec![
            ScheduleEntry { robot: 0, task: TaskRef::Task(0), start: 10.0, end: 30.0 },
            ScheduleEntry { robot: 1, task: TaskRef::Task(0), start: 11.0, end: 31.0 },
            ScheduleEntry { robot: 0, task: TaskRef::Task(1), start: 31.0, end: 61.0 },
        ];
        let mut s = Schedule::from_entries(entries, &inst).unwrap();
        s.makespan += 1.0;
        let report = validate_schedule(&s, &inst);
        assert!(report.violations.contains(&Violation::Synchronization { task: 0 }));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Travel { robot: 0, to: 1, .. })));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::MakespanMismatch { .. })));
        assert!(!report.is_feasible());
    }

    #[test]
    fn task_ref_serde() {
        assert_eq!(serde_json::to_string(&TaskRef::Task(3)).unwrap(), "3");
        assert_eq!(serde_json::to_string(&TaskRef::Idle).unwrap(), "\"idle\"");
        let back: TaskRef = serde_json::from_str("\"idle\"").unwrap();
        assert_eq!(back, TaskRef::Idle);
        assert!(serde_json::from_str::<TaskRef>("\"busy\"").is_err());
        let skills: SkillSet = serde_json::from_str("[0,2]").unwrap();
        assert_eq!(skills, SkillSet::from_indices([0, 2]));
    }
}
