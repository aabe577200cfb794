//! JSON file formats for instances, schedules, decision tensors, reward
//! matrices and dataset manifests.
//!
//! Every file carries a `format` tag and a `version`; readers refuse other
//! tags or versions. Floats are written with shortest round-trip precision,
//! so reading a file back yields bit-identical values, and struct fields are
//! emitted in a fixed order so identical data gives identical bytes. Writers
//! go through a temporary file in the target directory and rename it into
//! place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::SolveStatus;
use crate::generator::GeneratorConfig;
use crate::matching::RewardMatrix;
use crate::model::{ModelError, Point, ProblemInstance, RobotState, Schedule, ScheduleEntry, SkillSet, TaskSpec};
use crate::reward::DecisionPoint;

pub const FORMAT_VERSION: u32 = 1;

pub const INSTANCE_FORMAT: &str = "mrta-instance";
pub const SCHEDULE_FORMAT: &str = "mrta-schedule";
pub const TENSOR_FORMAT: &str = "mrta-decision-tensors";
pub const REWARD_FORMAT: &str = "mrta-reward-matrix";
pub const MANIFEST_FORMAT: &str = "mrta-manifest";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: expected format {expected:?} version {expected_version}, found {found:?} version {found_version}")]
    Version { path: PathBuf, expected: &'static str, expected_version: u32, found: String, found_version: u32 },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("refusing to write invalid data: {0}")]
    Invariant(String),
    #[error("reward matrix shape mismatch: expected {expected_rows}x{expected_cols} (N x (M+1)), found {rows}x{cols}")]
    Shape { expected_rows: usize, expected_cols: usize, rows: usize, cols: usize },
}

impl IoError {
    fn schema(path: &Path, e: impl std::fmt::Display) -> Self {
        IoError::Schema { path: path.to_path_buf(), message: e.to_string() }
    }
}

/// Unit labels stored alongside every instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub distance: String,
    pub time: String,
    pub speed: String,
}

impl Default for Units {
    fn default() -> Self {
        Self { distance: "distance-unit".into(), time: "time-unit".into(), speed: "distance-unit per time-unit".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub start: Point,
    pub end: Point,
    pub capabilities: SkillSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub position: Point,
    pub duration: f64,
    pub required: SkillSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: String,
    pub version: u32,
    pub instance_id: String,
    pub units: Units,
    pub skill_count: usize,
    pub speed: f64,
    pub robots: Vec<RobotRecord>,
    pub tasks: Vec<TaskRecord>,
    /// `[before, after]` pairs.
    pub precedence: Vec<(usize, usize)>,
    pub robot_graph: Vec<Vec<bool>>,
}

impl InstanceFile {
    pub fn from_instance(instance: &ProblemInstance, instance_id: &str) -> Self {
        Self {
            format: INSTANCE_FORMAT.into(),
            version: FORMAT_VERSION,
            instance_id: instance_id.into(),
            units: Units::default(),
            skill_count: instance.skill_count(),
            speed: instance.speed(),
            robots: (0..instance.n_robots())
                .map(|i| RobotRecord {
                    start: instance.start_position(i),
                    end: instance.end_position(i),
                    capabilities: instance.robot(i).capabilities,
                })
                .collect(),
            tasks: instance
                .tasks()
                .iter()
                .map(|t| TaskRecord { position: t.position, duration: t.duration, required: t.required })
                .collect(),
            precedence: instance.precedence_edges(),
            robot_graph: instance.robot_graph().to_vec(),
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance, ModelError> {
        let robots = self.robots.iter().map(|r| RobotState::idle_at(r.start, r.capabilities)).collect();
        let tasks = self.tasks.iter().map(|t| TaskSpec::new(t.position, t.duration, t.required)).collect();
        let ends = self.robots.iter().map(|r| r.end).collect();
        ProblemInstance::new(robots, tasks, &self.precedence, ends, self.speed, self.skill_count)?
            .with_robot_graph(self.robot_graph.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub format: String,
    pub version: u32,
    pub instance_id: String,
    pub makespan: f64,
    pub entries: Vec<ScheduleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub format: String,
    pub version: u32,
    pub instance_id: String,
    pub gamma: f64,
    pub n_robots: usize,
    pub n_tasks: usize,
    pub decision_points: Vec<DecisionPoint>,
}

/// Reward matrix hand-off file; `values` has `rows` rows of `cols` entries,
/// the last column holding idle rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFile {
    pub format: String,
    pub version: u32,
    pub instance_id: String,
    pub decision_index: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub instance_id: String,
    pub seed: u64,
    pub instance_file: String,
    pub schedule_file: Option<String>,
    pub tensor_file: Option<String>,
    pub status: SolveStatus,
    pub makespan: Option<f64>,
    pub explored_nodes: u64,
    pub decision_points: usize,
    /// Only optimal schedules are used as demonstrations.
    pub expert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub generator: GeneratorConfig,
    pub seed_start: u64,
    pub seed_count: u64,
    pub gamma: f64,
    pub solver_time_limit_s: f64,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(generator: GeneratorConfig, seed_start: u64, seed_count: u64, gamma: f64, solver_time_limit_s: f64) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: FORMAT_VERSION,
            generator,
            seed_start,
            seed_count,
            gamma,
            solver_time_limit_s,
            records: Vec::new(),
        }
    }
}

/// Per-instance solver timings, kept apart from the manifest so the
/// manifest stays byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub instance_id: String,
    pub solver_wall_time_s: f64,
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<(), IoError> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(IoError::Invariant(format!("{what} contains a non-finite value")))
    }
}

/// Serializes `value` as pretty JSON and atomically replaces `path`.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.to_path_buf(), source };
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| IoError::Invariant(e.to_string()))?;
    text.push(b'\n');
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&text).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Parses JSON from `path`, mapping syntax errors to line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn read_tagged<T: DeserializeOwned>(path: &Path, format: &'static str) -> Result<T, IoError> {
    let header: Header = read_json(path)?;
    if header.format != format || header.version != FORMAT_VERSION {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            expected: format,
            expected_version: FORMAT_VERSION,
            found: header.format,
            found_version: header.version,
        });
    }
    read_json(path)
}

pub fn write_instance(path: &Path, instance: &ProblemInstance, instance_id: &str) -> Result<(), IoError> {
    write_json_atomic(path, &InstanceFile::from_instance(instance, instance_id))
}

pub fn read_instance(path: &Path) -> Result<(ProblemInstance, String), IoError> {
    let file: InstanceFile = read_tagged(path, INSTANCE_FORMAT)?;
    let instance = file.to_instance().map_err(|e| IoError::schema(path, e))?;
    Ok((instance, file.instance_id))
}

pub fn write_schedule(path: &Path, schedule: &Schedule, instance_id: &str) -> Result<(), IoError> {
    check_finite("schedule", schedule.entries.iter().flat_map(|e| [e.start, e.end]).chain([schedule.makespan]))?;
    write_json_atomic(
        path,
        &ScheduleFile {
            format: SCHEDULE_FORMAT.into(),
            version: FORMAT_VERSION,
            instance_id: instance_id.into(),
            makespan: schedule.makespan,
            entries: schedule.entries.clone(),
        },
    )
}

pub fn read_schedule(path: &Path) -> Result<(Schedule, String), IoError> {
    let file: ScheduleFile = read_tagged(path, SCHEDULE_FORMAT)?;
    Ok((Schedule { entries: file.entries, makespan: file.makespan }, file.instance_id))
}

fn check_tensors(points: &[DecisionPoint], n: usize, m: usize) -> Result<(), String> {
    let mut last = f64::NEG_INFINITY;
    for p in points {
        if !(p.time >= last) {
            return Err(format!("decision point {} is out of time order", p.index));
        }
        last = p.time;
        if p.robot_states.len() != n || p.task_statuses.len() != m {
            return Err(format!("decision point {} does not match {n} robots and {m} tasks", p.index));
        }
        if p.feasibility_mask.len() != n || p.feasibility_mask.iter().any(|r| r.len() != m + 1) {
            return Err(format!("decision point {} mask is not {n}x{}", p.index, m + 1));
        }
        if let Some(o) = &p.target_reward {
            if o.n_robots() != n || o.n_tasks() != m {
                return Err(format!("decision point {} target is not {n}x{}", p.index, m + 1));
            }
            for i in 0..n {
                for j in 0..=m {
                    let v = o.get(i, j);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(format!("decision point {} target ({i}, {j}) = {v} lies outside [0, 1]", p.index));
                    }
                    if v != 0.0 && !p.feasibility_mask[i][j] {
                        return Err(format!("decision point {} target ({i}, {j}) is non-zero outside the mask", p.index));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn write_decision_tensors(
    path: &Path,
    instance: &ProblemInstance,
    instance_id: &str,
    gamma: f64,
    points: &[DecisionPoint],
) -> Result<(), IoError> {
    let (n, m) = (instance.n_robots(), instance.n_tasks());
    check_tensors(points, n, m).map_err(IoError::Invariant)?;
    write_json_atomic(
        path,
        &TensorFile {
            format: TENSOR_FORMAT.into(),
            version: FORMAT_VERSION,
            instance_id: instance_id.into(),
            gamma,
            n_robots: n,
            n_tasks: m,
            decision_points: points.to_vec(),
        },
    )
}

/// Reads a tensor file; with `instance` given, shapes are checked against it.
pub fn read_decision_tensors(path: &Path, instance: Option<&ProblemInstance>) -> Result<TensorFile, IoError> {
    let file: TensorFile = read_tagged(path, TENSOR_FORMAT)?;
    if let Some(inst) = instance {
        if inst.n_robots() != file.n_robots || inst.n_tasks() != file.n_tasks {
            return Err(IoError::schema(
                path,
                format!(
                    "tensors are {}x{} but the instance has {} robots and {} tasks",
                    file.n_robots, file.n_tasks, inst.n_robots(), inst.n_tasks()
                ),
            ));
        }
    }
    check_tensors(&file.decision_points, file.n_robots, file.n_tasks).map_err(|e| IoError::schema(path, e))?;
    Ok(file)
}

pub fn write_reward_matrix(path: &Path, reward: &RewardMatrix, instance_id: &str, decision_index: usize) -> Result<(), IoError> {
    check_finite("reward matrix", reward.values().iter().copied())?;
    write_json_atomic(
        path,
        &RewardFile {
            format: REWARD_FORMAT.into(),
            version: FORMAT_VERSION,
            instance_id: instance_id.into(),
            decision_index,
            rows: reward.n_robots(),
            cols: reward.n_tasks() + 1,
            values: reward.to_rows(),
        },
    )
}

/// Reads a reward file and checks it against the instance's `N x (M+1)`.
pub fn read_reward_matrix(path: &Path, instance: &ProblemInstance) -> Result<(RewardMatrix, RewardFile), IoError> {
    let file: RewardFile = read_tagged(path, REWARD_FORMAT)?;
    let (er, ec) = (instance.n_robots(), instance.n_tasks() + 1);
    let shape_err = |rows, cols| IoError::Shape { expected_rows: er, expected_cols: ec, rows, cols };
    if file.rows != er || file.cols != ec {
        return Err(shape_err(file.rows, file.cols));
    }
    if file.values.len() != er {
        return Err(shape_err(file.values.len(), ec));
    }
    if let Some(row) = file.values.iter().find(|r| r.len() != ec) {
        return Err(shape_err(er, row.len()));
    }
    if file.values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(IoError::schema(path, "reward matrix contains a non-finite value"));
    }
    let matrix = RewardMatrix::from_rows(file.values.clone()).map_err(|e| IoError::schema(path, e))?;
    Ok((matrix, file))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), IoError> {
    write_json_atomic(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    read_tagged(path, MANIFEST_FORMAT)
}

/// Loads every instance a manifest references, resolving paths against the
/// manifest's directory, and checks that the skill alphabets agree.
pub fn load_manifest_instances(path: &Path) -> Result<(DatasetManifest, Vec<ProblemInstance>), IoError> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let (inst, id) = read_instance(&base.join(&rec.instance_file))?;
        if id != rec.instance_id {
            return Err(IoError::schema(path, format!("record {} points at instance {id}", rec.instance_id)));
        }
        if inst.skill_count() != manifest.generator.n_skills {
            return Err(IoError::schema(
                path,
                format!("instance {id} has {} skills, manifest says {}", inst.skill_count(), manifest.generator.n_skills),
            ));
        }
        out.push(inst);
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::generate_instance;

    #[test]
    fn instance_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_instance(&GeneratorConfig::default(), 42).unwrap();
        let p = dir.path().join("i.json");
        write_instance(&p, &inst, "i42").unwrap();
        let (back, id) = read_instance(&p).unwrap();
        assert_eq!(back, inst);
        assert_eq!(id, "i42");
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_instance(&GeneratorConfig::default(), 1).unwrap();
        let p = dir.path().join("i.json");
        write_instance(&p, &inst, "x").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..text.len() / 2]).unwrap();
        assert!(matches!(read_instance(&p), Err(IoError::Parse { .. })));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_instance(&GeneratorConfig::default(), 1).unwrap();
        let p = dir.path().join("i.json");
        let mut file = InstanceFile::from_instance(&inst, "x");
        file.version = 99;
        write_json_atomic(&p, &file).unwrap();
        assert!(matches!(read_instance(&p), Err(IoError::Version { found_version: 99, .. })));
        assert!(matches!(read_schedule(&p), Err(IoError::Version { .. })));
    }

    #[test]
    fn reward_files_check_shape_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_instance(&GeneratorConfig::default(), 3).unwrap();
        let p = dir.path().join("r.json");
        let r = RewardMatrix::zeros(3, 8);
        write_reward_matrix(&p, &r, "x", 0).unwrap();
        assert_eq!(read_reward_matrix(&p, &inst).unwrap().0, r);

        let bad = RewardMatrix::zeros(3, 7);
        write_reward_matrix(&p, &bad, "x", 0).unwrap();
        let err = read_reward_matrix(&p, &inst).unwrap_err();
        assert!(err.to_string().contains("expected 3x9"), "{err}");

        let mut nan = RewardMatrix::zeros(3, 8);
        nan.set(0, 0, f64::NAN);
        assert!(matches!(write_reward_matrix(&p, &nan, "x", 0), Err(IoError::Invariant(_))));
        let text = r#"{"format":"mrta-reward-matrix","version":1,"instance_id":"x","decision_index":0,"rows":1,"cols":2,"values":[[null,0.0]]}"#;
        fs::write(&p, text).unwrap();
        let one = ProblemInstance::new(
            vec![RobotState::idle_at(Point::default(), SkillSet::from_indices([0]))],
            vec![TaskSpec::new(Point::default(), 1.0, SkillSet::from_indices([0]))],
            &[],
            vec![Point::default()],
            1.0,
            1,
        )
        .unwrap();
        assert!(read_reward_matrix(&p, &one).is_err());
    }
}
