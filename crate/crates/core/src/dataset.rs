//! Per-instance dataset pipeline: generate, solve, extract tensors, write.

use std::path::Path;

use thiserror::Error;

use crate::exact::{solve_with, SolveStatus, SolverError, SolverOptions};
use crate::generator::{generate_instance, GenerationError, GeneratorConfig};
use crate::io::{
    read_instance, read_schedule, write_decision_tensors, write_instance, write_schedule, IoError, ManifestRecord,
    TimingRecord,
};
use crate::reward::{extract_tensors, replay_makespan, RewardError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Stable identifier for the instance generated from `seed`.
pub fn instance_id(seed: u64) -> String {
    format!("inst-{seed:06}")
}

/// Generates, solves and exports one instance below `dir`. Tensors are only
/// written for optimally solved instances.
pub fn build_artifacts(
    dir: &Path,
    config: &GeneratorConfig,
    seed: u64,
    gamma: f64,
    solver: &SolverOptions,
) -> Result<(ManifestRecord, TimingRecord), DatasetError> {
    let id = instance_id(seed);
    let instance = generate_instance(config, seed)?;
    let instance_file = format!("instances/{id}.json");
    write_instance(&dir.join(&instance_file), &instance, &id)?;

    let result = solve_with(&instance, solver)?;
    let mut record = ManifestRecord {
        instance_id: id.clone(),
        seed,
        instance_file,
        schedule_file: None,
        tensor_file: None,
        status: result.status,
        makespan: result.makespan(),
        explored_nodes: result.explored_nodes,
        decision_points: 0,
        expert: result.status == SolveStatus::Optimal,
    };
    if let Some(schedule) = &result.schedule {
        let schedule_file = format!("schedules/{id}.json");
        write_schedule(&dir.join(&schedule_file), schedule, &id)?;
        record.schedule_file = Some(schedule_file);
        if record.expert {
            let points = extract_tensors(schedule, &instance, gamma)?;
            let tensor_file = format!("tensors/{id}.json");
            write_decision_tensors(&dir.join(&tensor_file), &instance, &id, gamma, &points)?;
            record.tensor_file = Some(tensor_file);
            record.decision_points = points.len();
        }
    }
    let timing = TimingRecord { instance_id: id, solver_wall_time_s: result.wall_time.as_secs_f64() };
    Ok((record, timing))
}

/// Outcome of replaying one expert schedule through matching.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReplayRecord {
    pub instance_id: String,
    pub expert_makespan: f64,
    pub replay_makespan: Option<f64>,
    pub reproduced: bool,
    pub error: Option<String>,
}

/// Replays the expert schedule of one manifest record; `None` when the
/// record has no expert schedule.
pub fn replay_record(base: &Path, record: &ManifestRecord, gamma: f64) -> Result<Option<ReplayRecord>, DatasetError> {
    let Some(schedule_file) = record.schedule_file.as_ref().filter(|_| record.expert) else {
        return Ok(None);
    };
    let (instance, _) = read_instance(&base.join(&record.instance_file))?;
    let (schedule, _) = read_schedule(&base.join(schedule_file))?;
    let (replay, error) = match replay_makespan(&schedule, &instance, gamma) {
        Ok(span) => (Some(span), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let reproduced = replay.is_some_and(|r| (r - schedule.makespan).abs() <= crate::model::TIME_TOLERANCE);
    Ok(Some(ReplayRecord {
        instance_id: record.instance_id.clone(),
        expert_makespan: schedule.makespan,
        replay_makespan: replay,
        reproduced,
        error,
    }))
}
