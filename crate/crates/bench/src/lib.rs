//! Shared fixtures for the criterion benches in `benches/`.

use mrta_core::{generate_instance, GeneratorConfig, ProblemInstance, RobotState, TaskSpec, TaskStatus};

/// Seeded instance of the given size; panics on invalid sizes.
pub fn instance(robots: usize, tasks: usize, edges: usize, seed: u64) -> ProblemInstance {
    generate_instance(&GeneratorConfig::sized(robots, tasks, edges), seed).expect("benchmark sizes are valid")
}

/// Start-of-episode world state: every robot at its depot, tasks without
/// predecessors ready.
pub fn initial_state(inst: &ProblemInstance) -> (Vec<RobotState>, Vec<TaskSpec>) {
    let robots = inst.robots().to_vec();
    let tasks = (0..inst.n_tasks())
        .map(|j| {
            let mut t = *inst.task(j);
            t.status = if inst.predecessors(j).is_empty() { TaskStatus::READY } else { TaskStatus::WAITING };
            t
        })
        .collect();
    (robots, tasks)
}
