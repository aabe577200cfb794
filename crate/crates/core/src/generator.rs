//! Seeded random instance generation.
//!
//! Every field family draws from its own ChaCha8 stream of the same seed, so
//! adding a new randomized field never shifts earlier draws:
//!
//! | stream | field                         |
//! |--------|-------------------------------|
//! | 0      | robot start and end depots    |
//! | 1      | task positions                |
//! | 2      | task durations                |
//! | 3      | robot capabilities            |
//! | 4      | task requirements (+ redraws) |
//! | 5      | precedence edges              |
//!
//! Uniform reals are `lo + (hi - lo) * u` with `u` the 53-bit float from
//! `Rng::random::<f64>()`; subsets use a partial Fisher-Yates shuffle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Point, ProblemInstance, RobotState, SkillSet, TaskSpec, MAX_SKILLS};

const STREAM_DEPOTS: u64 = 0;
const STREAM_TASK_POSITIONS: u64 = 1;
const STREAM_DURATIONS: u64 = 2;
const STREAM_ROBOT_SKILLS: u64 = 3;
const STREAM_TASK_SKILLS: u64 = 4;
const STREAM_PRECEDENCE: u64 = 5;

/// Redraws allowed per task before coverability is declared unreachable.
pub const MAX_REQUIREMENT_REDRAWS: usize = 1000;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("task {task} could not be made coverable by the team after {attempts} redraws")]
    Uncoverable { task: usize, attempts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub min: Point,
    pub max: Point,
}

impl Area {
    pub fn square(side: f64) -> Self {
        Self {
            min: Point::new(0.0, 0.0),
            max: Point::new(side, side),
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.min.distance(&self.max)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Closed range `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_robots: usize,
    pub n_tasks: usize,
    pub n_skills: usize,
    pub n_precedence: usize,
    pub area: Area,
    pub duration_range: Range<f64>,
    pub skills_per_robot: Range<usize>,
    pub skills_per_task: Range<usize>,
    pub speed: f64,
}

impl Default for GeneratorConfig {
    /// Three robots, eight tasks, three skills and three precedence edges in
    /// a 100x100 area with durations in `[50, 100]`.
    fn default() -> Self {
        Self {
            n_robots: 3,
            n_tasks: 8,
            n_skills: 3,
            n_precedence: 3,
            area: Area::square(100.0),
            duration_range: Range::new(50.0, 100.0),
            skills_per_robot: Range::new(1, 3),
            skills_per_task: Range::new(1, 3),
            speed: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn sized(n_robots: usize, n_tasks: usize, n_precedence: usize) -> Self {
        Self {
            n_robots,
            n_tasks,
            n_precedence,
            ..Self::default()
        }
    }

    /// Largest number of precedence edges an acyclic graph on the tasks holds.
    pub fn max_precedence(&self) -> usize {
        self.n_tasks * self.n_tasks.saturating_sub(1) / 2
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: String| Err(GenerationError::InvalidConfig(m));
        if self.n_skills == 0 || self.n_skills > MAX_SKILLS {
            return bad(format!("n_skills must be in 1..={MAX_SKILLS}"));
        }
        if self.n_robots == 0 && self.n_tasks > 0 {
            return bad("tasks need at least one robot".into());
        }
        let a = &self.area;
        if !(a.min.is_finite() && a.max.is_finite() && a.min.x <= a.max.x && a.min.y <= a.max.y) {
            return bad(format!("empty or non-finite area {:?}", a));
        }
        let d = &self.duration_range;
        if !(d.min.is_finite() && d.max.is_finite() && d.min > 0.0 && d.min <= d.max) {
            return bad(format!("duration range must satisfy 0 < min <= max, got {d:?}"));
        }
        for (name, r) in [("skills_per_robot", &self.skills_per_robot), ("skills_per_task", &self.skills_per_task)] {
            if r.min > r.max || r.min > self.n_skills {
                return bad(format!("{name} range {r:?} is empty for {} skills", self.n_skills));
            }
        }
        if self.skills_per_task.max == 0 {
            return bad("tasks must require at least one skill".into());
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return bad(format!("speed must be positive, got {}", self.speed));
        }
        Ok(())
    }
}

/// What the generator actually produced, for manifests and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationReport {
    pub precedence_requested: usize,
    pub precedence_placed: usize,
    pub requirement_redraws: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn uniform_point(rng: &mut ChaCha8Rng, area: &Area) -> Point {
    let x = uniform(rng, area.min.x, area.max.x);
    let y = uniform(rng, area.min.y, area.max.y);
    Point::new(x, y)
}

/// Integer uniform on `[lo, hi]`.
fn uniform_count(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.random::<u64>() % (hi - lo + 1) as u64) as usize
}

/// First `k` entries of a partial Fisher-Yates shuffle of `items`.
fn partial_shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T], k: usize) {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = i + (rng.random::<u64>() % (n - i) as u64) as usize;
        items.swap(i, j);
    }
}

fn random_skills(rng: &mut ChaCha8Rng, n_skills: usize, count: Range<usize>) -> SkillSet {
    let hi = count.max.min(n_skills);
    let k = uniform_count(rng, count.min, hi);
    let mut all: Vec<usize> = (0..n_skills).collect();
    partial_shuffle(rng, &mut all, k);
    SkillSet::from_indices(all[..k].iter().copied())
}

pub fn generate_instance(config: &GeneratorConfig, seed: u64) -> Result<ProblemInstance, GenerationError> {
    generate_instance_with_report(config, seed).map(|(inst, _)| inst)
}

/// Generates one instance; identical `(config, seed)` pairs give identical
/// instances on every platform.
pub fn generate_instance_with_report(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(ProblemInstance, GenerationReport), GenerationError> {
    config.validate()?;
    let n = config.n_robots;
    let m = config.n_tasks;

    let mut depots = stream(seed, STREAM_DEPOTS);
    let mut starts = Vec::with_capacity(n);
    let mut ends = Vec::with_capacity(n);
    for _ in 0..n {
        starts.push(uniform_point(&mut depots, &config.area));
        ends.push(uniform_point(&mut depots, &config.area));
    }

    let mut positions = stream(seed, STREAM_TASK_POSITIONS);
    let task_positions: Vec<Point> = (0..m).map(|_| uniform_point(&mut positions, &config.area)).collect();

    let mut durations = stream(seed, STREAM_DURATIONS);
    let d = config.duration_range;
    let task_durations: Vec<f64> = (0..m).map(|_| uniform(&mut durations, d.min, d.max)).collect();

    let mut robot_skills = stream(seed, STREAM_ROBOT_SKILLS);
    let capabilities: Vec<SkillSet> = (0..n)
        .map(|_| random_skills(&mut robot_skills, config.n_skills, config.skills_per_robot))
        .collect();
    let team = capabilities.iter().fold(SkillSet::EMPTY, |a, &c| a.union(c));

    let mut task_skills = stream(seed, STREAM_TASK_SKILLS);
    let mut requirements: Vec<SkillSet> = (0..m)
        .map(|_| random_skills(&mut task_skills, config.n_skills, config.skills_per_task))
        .collect();
    let mut redraws = 0;
    for (j, req) in requirements.iter_mut().enumerate() {
        let mut attempts = 0;
        while req.is_empty() || !team.covers(*req) {
            if attempts == MAX_REQUIREMENT_REDRAWS {
                return Err(GenerationError::Uncoverable { task: j, attempts });
            }
            *req = random_skills(&mut task_skills, config.n_skills, config.skills_per_task);
            attempts += 1;
            redraws += 1;
        }
    }

    let mut prec = stream(seed, STREAM_PRECEDENCE);
    let mut order: Vec<usize> = (0..m).collect();
    partial_shuffle(&mut prec, &mut order, m);
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(config.max_precedence());
    for a in 0..m {
        for b in a + 1..m {
            pairs.push((order[a], order[b]));
        }
    }
    let placed = config.n_precedence.min(pairs.len());
    if placed < config.n_precedence {
        log::warn!(
            "requested {} precedence edges but only {} fit acyclically on {} tasks",
            config.n_precedence,
            placed,
            m
        );
    }
    partial_shuffle(&mut prec, &mut pairs, placed);
    let mut edges = pairs[..placed].to_vec();
    edges.sort_unstable();

    let robots = starts
        .iter()
        .zip(&capabilities)
        .map(|(&p, &c)| RobotState::idle_at(p, c))
        .collect();
    let tasks = (0..m)
        .map(|j| TaskSpec::new(task_positions[j], task_durations[j], requirements[j]))
        .collect();
    let instance = ProblemInstance::new(robots, tasks, &edges, ends, config.speed, config.n_skills)?;
    Ok((
        instance,
        GenerationReport {
            precedence_requested: config.n_precedence,
            precedence_placed: placed,
            requirement_redraws: redraws,
        },
    ))
}
