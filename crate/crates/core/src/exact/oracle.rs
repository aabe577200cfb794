//! Exhaustive reference scheduler for tiny instances.
//!
//! Enumerates every precedence-respecting task order and every covering robot
//! subset per task (not only minimal ones) under earliest-start timing. Shares
//! no search code with the branch-and-bound solver.

use thiserror::Error;

use crate::model::{ModelError, ProblemInstance, Schedule, ScheduleEntry, SkillSet, TaskRef};

pub const ORACLE_MAX_ROBOTS: usize = 3;
pub const ORACLE_MAX_TASKS: usize = 4;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle refuses {robots} robots x {tasks} tasks (limit {ORACLE_MAX_ROBOTS}x{ORACLE_MAX_TASKS})")]
    TooLarge { robots: usize, tasks: usize },
    #[error("no feasible schedule exists")]
    Infeasible,
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Oracle<'a> {
    inst: &'a ProblemInstance,
    covers: Vec<Vec<Vec<usize>>>,
    order: Vec<usize>,
    used: Vec<bool>,
    best: Option<(f64, Vec<ScheduleEntry>)>,
}

impl Oracle<'_> {
    fn permute(&mut self) {
        let m = self.inst.n_tasks();
        if self.order.len() == m {
            let mut picks = Vec::with_capacity(m);
            self.assign(&mut picks);
            return;
        }
        for j in 0..m {
            if self.used[j] || self.inst.predecessors(j).iter().any(|&p| !self.used[p]) {
                continue;
            }
            self.used[j] = true;
            self.order.push(j);
            self.permute();
            self.order.pop();
            self.used[j] = false;
        }
    }

    fn assign(&mut self, picks: &mut Vec<usize>) {
        let k = picks.len();
        if k == self.order.len() {
            self.evaluate(picks);
            return;
        }
        for c in 0..self.covers[self.order[k]].len() {
            picks.push(c);
            self.assign(picks);
            picks.pop();
        }
    }

    fn evaluate(&mut self, picks: &[usize]) {
        let inst = self.inst;
        let n = inst.n_robots();
        let mut avail = vec![0.0f64; n];
        let mut at: Vec<_> = inst.start_positions().to_vec();
        let mut finish = vec![0.0f64; inst.n_tasks()];
        let mut entries = Vec::new();
        for (k, &j) in self.order.iter().enumerate() {
            let task = inst.task(j);
            let team = &self.covers[j][picks[k]];
            let mut start = 0.0f64;
            for &p in inst.predecessors(j) {
                start = start.max(finish[p]);
            }
            for &r in team {
                start = start.max(avail[r] + inst.travel(at[r], task.position));
            }
            let end = start + task.duration;
            finish[j] = end;
            for &r in team {
                avail[r] = end;
                at[r] = task.position;
                entries.push(ScheduleEntry { robot: r, task: TaskRef::Task(j), start, end });
            }
        }
        let span = (0..n)
            .map(|r| avail[r] + inst.travel(at[r], inst.end_position(r)))
            .fold(0.0, f64::max);
        if self.best.as_ref().is_none_or(|(b, _)| span < *b) {
            self.best = Some((span, entries));
        }
    }
}

/// Minimum-makespan schedule by exhaustive enumeration. Refuses instances
/// larger than [`ORACLE_MAX_ROBOTS`] robots or [`ORACLE_MAX_TASKS`] tasks.
pub fn brute_force_oracle(instance: &ProblemInstance) -> Result<Schedule, OracleError> {
    let n = instance.n_robots();
    let m = instance.n_tasks();
    if n > ORACLE_MAX_ROBOTS || m > ORACLE_MAX_TASKS {
        return Err(OracleError::TooLarge { robots: n, tasks: m });
    }
    let covers: Vec<Vec<Vec<usize>>> = instance
        .tasks()
        .iter()
        .map(|t| {
            (1u32..1 << n)
                .map(|mask| (0..n).filter(|&r| mask & (1 << r) != 0).collect::<Vec<_>>())
                .filter(|team| {
                    let caps = team
                        .iter()
                        .fold(SkillSet::EMPTY, |a, &r| a.union(instance.robot(r).capabilities));
                    caps.covers(t.required)
                })
                .collect()
        })
        .collect();
    if covers.iter().any(Vec::is_empty) {
        return Err(OracleError::Infeasible);
    }
    let mut oracle = Oracle {
        inst: instance,
        covers,
        order: Vec::with_capacity(m),
        used: vec![false; m],
        best: None,
    };
    oracle.permute();
    let (_, entries) = oracle.best.ok_or(OracleError::Infeasible)?;
    Ok(Schedule::from_entries(entries, instance)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point, RobotState, TaskSpec};

    #[test]
    fn refuses_large_instances() {
        let robots = vec![RobotState::idle_at(Point::default(), SkillSet::from_indices([0])); 4];
        let inst = ProblemInstance::new(robots, vec![], &[], vec![Point::default(); 4], 1.0, 1).unwrap();
        assert!(matches!(brute_force_oracle(&inst), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn empty_instance_is_depot_to_depot() {
        let robots = vec![
            RobotState::idle_at(Point::new(0.0, 0.0), SkillSet::from_indices([0])),
            RobotState::idle_at(Point::new(0.0, 0.0), SkillSet::from_indices([0])),
        ];
        let ends = vec![Point::new(3.0, 4.0), Point::new(6.0, 8.0)];
        let inst = ProblemInstance::new(robots, vec![], &[], ends, 1.0, 1).unwrap();
        let s = brute_force_oracle(&inst).unwrap();
        assert!(s.entries.is_empty());
        assert_eq!(s.makespan, 10.0);
    }

    #[test]
    fn chain_with_one_robot_is_forced() {
        let p = [Point::new(10.0, 0.0), Point::new(10.0, 20.0), Point::new(40.0, 20.0)];
        let d = [50.0, 60.0, 70.0];
        let robots = vec![RobotState::idle_at(Point::new(0.0, 0.0), SkillSet::from_indices([0]))];
        let tasks = (0..3).map(|k| TaskSpec::new(p[k], d[k], SkillSet::from_indices([0]))).collect();
        let inst = ProblemInstance::new(
            robots,
            tasks,
            &[(0, 1), (1, 2), (0, 2)],
            vec![Point::new(40.0, 0.0)],
            1.0,
            1,
        )
        .unwrap();
        let s = brute_force_oracle(&inst).unwrap();
        // 10 + 50 + 20 + 60 + 30 + 70 + 20
        assert!((s.makespan - 260.0).abs() < 1e-12);
    }
}
