use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{sampled_rollouts, ExpertReplay, GreedyPolicy, RandomRewards, RolloutConfig, SimError, Simulation};
use crate::exact::{solve_with, SolverOptions};
use crate::model::{ProblemInstance, Schedule};

pub const CSV_HEADER: [&str; 7] = ["instance_id", "policy", "makespan", "gap", "t_per_decision_ms", "t_full_ms", "seed"];

/// Policies the benchmark harness knows how to run by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Greedy,
    ExpertReplay,
    Random,
    /// Best-of-N noisy replay of the expert rewards.
    Sampled,
    /// The exact solver itself (or the supplied expert schedule).
    Exact,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] =
        [PolicyKind::Greedy, PolicyKind::ExpertReplay, PolicyKind::Random, PolicyKind::Sampled, PolicyKind::Exact];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::ExpertReplay => "expert-replay",
            PolicyKind::Random => "random",
            PolicyKind::Sampled => "sampled",
            PolicyKind::Exact => "exact",
        }
    }

    pub fn needs_expert(self) -> bool {
        matches!(self, PolicyKind::ExpertReplay | PolicyKind::Sampled)
    }

    pub fn is_reward_based(self) -> bool {
        matches!(self, PolicyKind::ExpertReplay | PolicyKind::Random | PolicyKind::Sampled)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy {s:?}; expected one of greedy, expert-replay, random, sampled, exact"))
    }
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub schedule: Schedule,
    pub decisions: usize,
    pub decision_time: Duration,
    pub full_time: Duration,
}

impl PolicyRun {
    pub fn ms_per_decision(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.decision_time.as_secs_f64() * 1e3 / self.decisions as f64
        }
    }
}

/// Runs one policy on one instance.
pub fn run_policy(
    kind: PolicyKind,
    instance: &ProblemInstance,
    expert: Option<&Schedule>,
    seed: u64,
    gamma: f64,
    rollouts: &RolloutConfig,
) -> Result<PolicyRun, SimError> {
    let started = Instant::now();
    let need_expert = || {
        expert.ok_or_else(|| SimError::Policy(format!("policy {kind} needs an expert schedule")))
    };
    let (schedule, decisions, decision_time) = match kind {
        PolicyKind::Greedy => {
            let out = Simulation::new(instance, GreedyPolicy::new()).run()?;
            (out.schedule, out.decisions, out.decision_time)
        }
        PolicyKind::Random => {
            let out = Simulation::new(instance, RandomRewards::new(seed)).run()?;
            (out.schedule, out.decisions, out.decision_time)
        }
        PolicyKind::ExpertReplay => {
            let policy = ExpertReplay::new(need_expert()?, instance, gamma).map_err(|e| SimError::Policy(e.to_string()))?;
            let out = Simulation::new(instance, policy).run()?;
            (out.schedule, out.decisions, out.decision_time)
        }
        PolicyKind::Sampled => {
            let policy = ExpertReplay::new(need_expert()?, instance, gamma).map_err(|e| SimError::Policy(e.to_string()))?;
            let config = RolloutConfig { seed, ..*rollouts };
            let out = sampled_rollouts(instance, || policy.clone(), &config)?;
            (out.schedule, out.decisions, out.decision_time)
        }
        PolicyKind::Exact => match expert {
            Some(s) => (s.clone(), 0, Duration::ZERO),
            None => {
                let result = solve_with(instance, &SolverOptions::default()).map_err(|e| SimError::Policy(e.to_string()))?;
                let time = result.wall_time;
                let schedule = result.schedule.ok_or_else(|| SimError::Policy("exact solver found no schedule".into()))?;
                (schedule, 1, time)
            }
        },
    };
    Ok(PolicyRun { schedule, decisions, decision_time, full_time: started.elapsed() })
}

/// One benchmark result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance_id: String,
    pub policy: String,
    pub makespan: f64,
    pub gap: Option<f64>,
    pub t_per_decision_ms: f64,
    pub t_full_ms: f64,
    pub seed: u64,
    #[serde(skip)]
    pub size: (usize, usize),
}

impl BenchRow {
    pub fn new(instance_id: impl Into<String>, kind: PolicyKind, run: &PolicyRun, optimal: Option<f64>, seed: u64, size: (usize, usize)) -> Self {
        let makespan = run.schedule.makespan;
        Self {
            instance_id: instance_id.into(),
            policy: kind.to_string(),
            makespan,
            gap: optimal.filter(|&o| o > 0.0).map(|o| (makespan - o) / o),
            t_per_decision_ms: run.ms_per_decision(),
            t_full_ms: run.full_time.as_secs_f64() * 1e3,
            seed,
            size,
        }
    }
}

/// Writes rows in the documented column order; a missing gap is empty.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.instance_id.clone(),
            r.policy.clone(),
            r.makespan.to_string(),
            r.gap.map(|g| g.to_string()).unwrap_or_default(),
            r.t_per_decision_ms.to_string(),
            r.t_full_ms.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Stats { mean: v.iter().sum::<f64>() / v.len() as f64, median: rank(0.5), p5: rank(0.05), p95: rank(0.95) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub count: usize,
    pub makespan: Stats,
    pub gap: Option<Stats>,
    pub t_per_decision_ms: Stats,
    pub t_full_ms: Stats,
}

/// Aggregates rows per policy, ordered by policy name.
pub fn summarize(rows: &[BenchRow]) -> Vec<PolicySummary> {
    let mut groups: BTreeMap<&str, Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.policy).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(policy, rs)| {
            let col = |f: &dyn Fn(&BenchRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let gaps: Vec<f64> = rs.iter().filter_map(|r| r.gap).collect();
            PolicySummary {
                policy: policy.to_string(),
                count: rs.len(),
                makespan: Stats::of(&col(&|r| r.makespan)).expect("group is non-empty"),
                gap: Stats::of(&gaps),
                t_per_decision_ms: Stats::of(&col(&|r| r.t_per_decision_ms)).expect("group is non-empty"),
                t_full_ms: Stats::of(&col(&|r| r.t_full_ms)).expect("group is non-empty"),
            }
        })
        .collect()
}

/// Per-policy series for distribution plots and scaling curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub makespan: BTreeMap<String, Vec<f64>>,
    pub gap: BTreeMap<String, Vec<f64>>,
    /// `(robots, tasks) -> mean ms per decision`, per policy.
    pub scaling: BTreeMap<String, Vec<ScalingPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub robots: usize,
    pub tasks: usize,
    pub mean_ms_per_decision: f64,
    pub mean_full_ms: f64,
}

pub fn plot_data(rows: &[BenchRow]) -> PlotData {
    let mut makespan: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut gap: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut sums: BTreeMap<(String, (usize, usize)), (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        makespan.entry(r.policy.clone()).or_default().push(r.makespan);
        if let Some(g) = r.gap {
            gap.entry(r.policy.clone()).or_default().push(g);
        }
        let e = sums.entry((r.policy.clone(), r.size)).or_insert((0.0, 0.0, 0));
        e.0 += r.t_per_decision_ms;
        e.1 += r.t_full_ms;
        e.2 += 1;
    }
    let mut scaling: BTreeMap<String, Vec<ScalingPoint>> = BTreeMap::new();
    for ((policy, (robots, tasks)), (d, f, k)) in sums {
        scaling.entry(policy).or_default().push(ScalingPoint {
            robots,
            tasks,
            mean_ms_per_decision: d / k as f64,
            mean_full_ms: f / k as f64,
        });
    }
    PlotData { makespan, gap, scaling }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("milp".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn csv_has_documented_columns_and_empty_gap() {
        let row = BenchRow {
            instance_id: "a".into(),
            policy: "greedy".into(),
            makespan: 10.5,
            gap: None,
            t_per_decision_ms: 0.25,
            t_full_ms: 1.0,
            seed: 3,
            size: (3, 8),
        };
        let mut buf = Vec::new();
        write_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "instance_id,policy,makespan,gap,t_per_decision_ms,t_full_ms,seed\na,greedy,10.5,,0.25,1,3\n");
    }

    #[test]
    fn stats_use_nearest_rank() {
        let s = Stats::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.0);
        assert_eq!(s.p5, 1.0);
        assert_eq!(s.p95, 4.0);
    }
}
