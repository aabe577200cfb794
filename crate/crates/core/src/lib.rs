//! Heterogeneous multi-robot task allocation with coalitions and precedence
//! constraints.
//!
//! * [`model`]: robots, tasks, instances, schedules and the feasibility checker
//! * [`generator`]: seeded random instances
//! * [`exact`]: makespan-optimal branch-and-bound and a brute-force oracle
//! * [`reward`]: decision points and discounted target rewards
//! * [`matching`]: exact reward-maximizing coalition assignment
//! * [`sim`]: event-driven replanning simulator, policies and benchmarking
//! * [`io`] and [`dataset`]: versioned JSON artifacts

pub mod dataset;
pub mod exact;
pub mod generator;
pub mod io;
pub mod matching;
pub mod model;
pub mod reward;
pub mod sim;

pub use exact::{brute_force_oracle, solve_optimal, solve_with, SolveStatus, SolverOptions, SolverResult};
pub use generator::{generate_instance, GeneratorConfig};
pub use matching::{premove_target, prune_redundant, relaxed_match, AssignmentMatrix, RewardMatrix};
pub use model::{
    makespan, travel_time, validate_schedule, Point, ProblemInstance, RobotState, Schedule, ScheduleEntry, SkillSet,
    TaskRef, TaskSpec, TaskStatus, TIME_TOLERANCE,
};
pub use reward::{extract_decision_points, extract_tensors, optimal_reward, replay_check, DecisionPoint, DEFAULT_GAMMA};
pub use sim::{sampled_rollouts, simulate, Policy, RolloutConfig, SimError, Simulation};
