use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Decision, Policy, SimError, WorldView};
use crate::matching::{AssignmentMatrix, RewardMatrix};
use crate::model::{ProblemInstance, Schedule, TaskRef};
use crate::reward::{check_gamma, ExpertTimeline, RewardError};

/// Skill-reduction greedy baseline.
///
/// Picks the (available robot, ready task) pair whose robot removes the most
/// uncovered skills of the task, then keeps adding the robot that removes
/// the most remaining skills of that same task until it is covered. Ties go
/// to the shorter travel time, then the lower robot index, then the lower
/// task index. A task that cannot be completed with the remaining robots is
/// rolled back and skipped for this decision.
#[derive(Debug, Clone, Default)]
pub struct GreedyPolicy;

impl GreedyPolicy {
    pub fn new() -> Self {
        Self
    }

    pub fn assign(view: &WorldView<'_>) -> AssignmentMatrix {
        let n = view.robots.len();
        let m = view.tasks.len();
        let mut free: Vec<usize> = (0..n).filter(|&i| view.robots[i].available).collect();
        let mut open: Vec<usize> = (0..m).filter(|&j| view.tasks[j].status.schedulable()).collect();
        let mut out = AssignmentMatrix::empty(n, m);
        let travel = |i: usize, j: usize| view.travel(view.robots[i].position, view.tasks[j].position);
        // (gain, travel, robot, task), larger gain first, then smaller everything
        let better = |a: (usize, f64, usize, usize), b: Option<(usize, f64, usize, usize)>| match b {
            None => true,
            Some(b) => a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && (a.2, a.3) < (b.2, b.3)))),
        };
        loop {
            let mut best = None;
            for &i in &free {
                for &j in &open {
                    let gain = view.robots[i].capabilities.intersection(view.tasks[j].required).len();
                    let cand = (gain, travel(i, j), i, j);
                    if gain > 0 && better(cand, best) {
                        best = Some(cand);
                    }
                }
            }
            let Some((_, _, first, j)) = best else { break };
            let mut coalition = vec![first];
            let mut remaining = view.robots[first].capabilities.missing(view.tasks[j].required);
            while !remaining.is_empty() {
                let mut pick = None;
                for &i in free.iter().filter(|i| !coalition.contains(i)) {
                    let gain = view.robots[i].capabilities.intersection(remaining).len();
                    let cand = (gain, travel(i, j), i, j);
                    if gain > 0 && better(cand, pick) {
                        pick = Some(cand);
                    }
                }
                let Some((_, _, i, _)) = pick else { break };
                coalition.push(i);
                remaining = view.robots[i].capabilities.missing(remaining);
            }
            open.retain(|&o| o != j);
            if remaining.is_empty() {
                for &i in &coalition {
                    out.assign(i, TaskRef::Task(j));
                }
                free.retain(|i| !coalition.contains(i));
            }
        }
        out
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decide(&mut self, view: &WorldView<'_>) -> Result<Decision, SimError> {
        Ok(Decision::Direct(Self::assign(view)))
    }
}

/// Feeds the discounted expert rewards of a reference schedule.
#[derive(Debug, Clone)]
pub struct ExpertReplay {
    timeline: ExpertTimeline,
    gamma: f64,
}

impl ExpertReplay {
    pub fn new(schedule: &Schedule, instance: &ProblemInstance, gamma: f64) -> Result<Self, RewardError> {
        check_gamma(gamma)?;
        Ok(Self { timeline: ExpertTimeline::new(schedule, instance.n_robots(), instance.n_tasks()), gamma })
    }
}

impl Policy for ExpertReplay {
    fn name(&self) -> &str {
        "expert-replay"
    }

    fn decide(&mut self, view: &WorldView<'_>) -> Result<Decision, SimError> {
        Ok(Decision::Rewards(self.timeline.live_rewards(view.time, self.gamma, view.tasks)))
    }

    fn next_wakeup(&self, view: &WorldView<'_>) -> Option<f64> {
        self.timeline.next_start_after(view.time)
    }
}

/// Uniform rewards in `[0, 1)`, a reference point for learned rewards.
#[derive(Debug, Clone)]
pub struct RandomRewards {
    rng: ChaCha8Rng,
}

impl RandomRewards {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomRewards {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, view: &WorldView<'_>) -> Result<Decision, SimError> {
        let mut r = RewardMatrix::zeros(view.robots.len(), view.tasks.len());
        for v in r.values_mut() {
            *v = self.rng.random::<f64>();
        }
        Ok(Decision::Rewards(r))
    }
}

/// Plays back precomputed reward matrices, indexed by decision step. Once
/// the sequence is exhausted the last matrix keeps being used.
///
/// Matrices computed offline cannot react to the live state, so a stale idle
/// preference can leave the team waiting with nothing pending. When the
/// simulator calls again at an unchanged time (a stall retry), the idle column
/// is cleared and every ready pair gets at least [`Self::FLOOR`], which lets
/// the matcher commit the remaining work.
#[derive(Debug, Clone)]
pub struct RewardSequence {
    matrices: Vec<RewardMatrix>,
    last_time: Option<f64>,
}

impl RewardSequence {
    pub const FLOOR: f64 = 1e-6;

    pub fn new(matrices: Vec<RewardMatrix>) -> Result<Self, SimError> {
        if matrices.is_empty() {
            return Err(SimError::Policy("reward sequence is empty".into()));
        }
        Ok(Self { matrices, last_time: None })
    }
}

impl Policy for RewardSequence {
    fn name(&self) -> &str {
        "reward-sequence"
    }

    fn decide(&mut self, view: &WorldView<'_>) -> Result<Decision, SimError> {
        let k = view.decision_index.min(self.matrices.len() - 1);
        let mut r = self.matrices[k].clone();
        let stalled = self.last_time == Some(view.time);
        self.last_time = Some(view.time);
        if stalled && r.n_robots() == view.robots.len() {
            let m = r.n_tasks();
            for i in 0..r.n_robots() {
                r.set(i, m, 0.0);
                for j in 0..m.min(view.tasks.len()) {
                    if view.tasks[j].status.schedulable() && r.get(i, j) < Self::FLOOR {
                        r.set(i, j, Self::FLOOR);
                    }
                }
            }
        }
        Ok(Decision::Rewards(r))
    }
}

/// Adds zero-mean Gaussian noise to every reward matrix of the inner policy.
/// The standard deviation is `sigma` times the matrix's value spread. Direct
/// decisions pass through untouched.
pub struct NoisyRewards<P> {
    inner: P,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl<P: Policy> NoisyRewards<P> {
    pub fn new(inner: P, sigma: f64, rng: ChaCha8Rng) -> Self {
        Self { inner, sigma, rng }
    }
}

impl<P: Policy> Policy for NoisyRewards<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn decide(&mut self, view: &WorldView<'_>) -> Result<Decision, SimError> {
        match self.inner.decide(view)? {
            Decision::Rewards(mut r) => {
                let std = self.sigma * r.spread();
                if std > 0.0 {
                    let normal = Normal::new(0.0, std).map_err(|e| SimError::Policy(e.to_string()))?;
                    for v in r.values_mut() {
                        *v += normal.sample(&mut self.rng);
                    }
                }
                Ok(Decision::Rewards(r))
            }
            direct => Ok(direct),
        }
    }

    fn next_wakeup(&self, view: &WorldView<'_>) -> Option<f64> {
        self.inner.next_wakeup(view)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point, RobotState, SkillSet, TaskSpec, TaskStatus};

    fn view_of<'a>(robots: &'a [RobotState], tasks: &'a [TaskSpec], preds: &'a [Vec<usize>]) -> WorldView<'a> {
        WorldView { time: 0.0, decision_index: 0, robots, tasks, predecessors: preds, end_positions: &[], speed: 1.0 }
    }

    fn ready(p: Point, skills: &[usize]) -> TaskSpec {
        let mut t = TaskSpec::new(p, 1.0, SkillSet::from_indices(skills.iter().copied()));
        t.status = TaskStatus::READY;
        t
    }

    #[test]
    fn greedy_prefers_larger_skill_reduction() {
        let robots = [
            RobotState::idle_at(Point::new(0.0, 0.0), SkillSet::from_indices([0])),
            RobotState::idle_at(Point::new(50.0, 0.0), SkillSet::from_indices([0, 1])),
        ];
        let tasks = [ready(Point::new(1.0, 0.0), &[0, 1])];
        let a = GreedyPolicy::assign(&view_of(&robots, &tasks, &[vec![]]));
        assert_eq!(a.coalition(0), vec![1]);
        assert_eq!(a.assigned(0), None);
    }

    #[test]
    fn greedy_tie_rules() {
        let s = SkillSet::from_indices([0]);
        let robots = [RobotState::idle_at(Point::new(-1.0, 0.0), s), RobotState::idle_at(Point::new(1.0, 0.0), s)];
        let tasks = [ready(Point::new(0.0, 0.0), &[0])];
        assert_eq!(GreedyPolicy::assign(&view_of(&robots, &tasks, &[vec![]])).coalition(0), vec![0]);
        let robots = [RobotState::idle_at(Point::new(-2.0, 0.0), s), RobotState::idle_at(Point::new(1.0, 0.0), s)];
        assert_eq!(GreedyPolicy::assign(&view_of(&robots, &tasks, &[vec![]])).coalition(0), vec![1]);
    }

    #[test]
    fn greedy_rolls_back_partial_coalitions() {
        let robots = [RobotState::idle_at(Point::default(), SkillSet::from_indices([0]))];
        let tasks = [ready(Point::default(), &[0, 1]), ready(Point::new(9.0, 0.0), &[0])];
        let preds = [vec![], vec![]];
        let a = GreedyPolicy::assign(&view_of(&robots, &tasks, &preds));
        assert_eq!(a.assigned(0), Some(TaskRef::Task(1)));
    }

    #[test]
    fn sequence_holds_last_matrix() {
        let a = RewardMatrix::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let b = RewardMatrix::from_rows(vec![vec![0.0, 1.0]]).unwrap();
        let mut seq = RewardSequence::new(vec![a, b.clone()]).unwrap();
        let robots = [RobotState::idle_at(Point::default(), SkillSet::from_indices([0]))];
        let tasks = [ready(Point::default(), &[0])];
        let preds = [vec![]];
        let mut view = view_of(&robots, &tasks, &preds);
        view.decision_index = 5;
        assert_eq!(seq.decide(&view).unwrap(), Decision::Rewards(b));
        assert!(RewardSequence::new(vec![]).is_err());
        let Decision::Rewards(again) = seq.decide(&view).unwrap() else { panic!() };
        assert_eq!(again.to_rows(), vec![vec![RewardSequence::FLOOR, 0.0]]);
    }
}
