//! Overlap-corrected rearrangement counts and utilities, and greedy
//! sequential single-robot task allocation maximizing combined utility.
//!
//! Two correction modes are provided. `Union` (default) counts the
//! objects of a rearrangement set not already claimed by earlier
//! allocations. `PairwiseEq1` subtracts the pairwise intra- and
//! inter-robot overlap cardinalities and clamps at zero, which can
//! over-subtract when the same object overlaps several earlier sets.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selection::select_obstacles;
use crate::world::{ObjectId, RobotId, WorkspaceModel};

/// Rearrangement set of one robot-task pair, or infeasibility when the
/// target admits no grasp angle for that robot.
pub type RearrangementSet = Option<BTreeSet<ObjectId>>;

/// All rearrangement sets, keyed by (robot, task). `None` records a
/// NoFeasibleGrasp outcome.
pub type SetTable = BTreeMap<(RobotId, ObjectId), RearrangementSet>;

/// A corrected rearrangement count; `None` means infeasible.
pub type CorrectedCount = Option<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Literal pairwise formula with clamp at zero.
    PairwiseEq1,
    /// Count objects not in the union of previously claimed sets.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEntry {
    pub raw_count: Option<usize>,
    pub corrected_count: CorrectedCount,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    pub entries: BTreeMap<(RobotId, ObjectId), UtilityEntry>,
    pub mode: CorrectionMode,
}

/// One greedy step, kept for replay checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationStep {
    pub task: ObjectId,
    pub evaluations: BTreeMap<RobotId, UtilityEntry>,
    pub chosen: RobotId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Per-robot ordered task lists, in greedy assignment order.
    pub schedule: BTreeMap<RobotId, Vec<ObjectId>>,
    /// Task -> robot; together with `schedule` this is the binary x matrix.
    pub assignment: BTreeMap<ObjectId, RobotId>,
    pub total_utility: f64,
    pub steps: Vec<AllocationStep>,
    pub table: UtilityTable,
}

impl Allocation {
    /// Binary assignment variable.
    pub fn x(&self, robot: &RobotId, task: &ObjectId) -> u8 {
        u8::from(self.assignment.get(task) == Some(robot))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("task {0} is infeasible for every robot")]
    TaskInfeasible(ObjectId),
    #[error("instance too large for exhaustive enumeration")]
    InstanceTooLarge,
}

/// Ordered prefix of assignments made so far: (robot, task) pairs.
pub type PartialAllocation = [(RobotId, ObjectId)];

/// Intra-robot overlap: objects shared between the candidate task's set
/// and a task previously allotted to the same robot. Empty when the
/// precedence does not hold.
pub fn intra_overlap(
    sets: &SetTable,
    partial: &PartialAllocation,
    robot: &RobotId,
    task_j: &ObjectId,
    task_k: &ObjectId,
) -> BTreeSet<ObjectId> {
    let allotted = partial
        .iter()
        .any(|(r, t)| r == robot && t == task_k);
    if !allotted {
        return BTreeSet::new();
    }
    overlap(sets, robot, task_j, robot, task_k)
}

/// Inter-robot overlap: objects shared with a task previously allotted to
/// a different robot.
pub fn inter_overlap(
    sets: &SetTable,
    partial: &PartialAllocation,
    robot_i: &RobotId,
    task_j: &ObjectId,
    robot_k: &RobotId,
    task_l: &ObjectId,
) -> BTreeSet<ObjectId> {
    debug_assert_ne!(robot_i, robot_k, "caller routes i == k to intra_overlap");
    let allotted = partial
        .iter()
        .any(|(r, t)| r == robot_k && t == task_l);
    if !allotted {
        return BTreeSet::new();
    }
    overlap(sets, robot_i, task_j, robot_k, task_l)
}

fn overlap(
    sets: &SetTable,
    robot_a: &RobotId,
    task_a: &ObjectId,
    robot_b: &RobotId,
    task_b: &ObjectId,
) -> BTreeSet<ObjectId> {
    let a = sets.get(&(robot_a.clone(), task_a.clone()));
    let b = sets.get(&(robot_b.clone(), task_b.clone()));
    match (a, b) {
        (Some(Some(a)), Some(Some(b))) => a.intersection(b).cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Corrected rearrangement count of (robot, task) against the partial
/// allocation, in the given mode. `None` when the pair is infeasible.
pub fn corrected_count(
    sets: &SetTable,
    partial: &PartialAllocation,
    robot: &RobotId,
    task: &ObjectId,
    mode: CorrectionMode,
) -> CorrectedCount {
    let own = match sets.get(&(robot.clone(), task.clone())) {
        Some(Some(s)) => s,
        _ => return None,
    };
    match mode {
        CorrectionMode::Union => {
            let mut claimed: BTreeSet<&ObjectId> = BTreeSet::new();
            for (r, t) in partial {
                // The correction sums run over the *other* allotted tasks.
                if r == robot && t == task {
                    continue;
                }
                if let Some(Some(s)) = sets.get(&(r.clone(), t.clone())) {
                    claimed.extend(s.iter());
                }
            }
            Some(own.iter().filter(|o| !claimed.contains(o)).count())
        }
        CorrectionMode::PairwiseEq1 => {
            let mut subtract = 0usize;
            for (r, t) in partial {
                if r == robot && t == task {
                    continue;
                }
                let common = if r == robot {
                    intra_overlap(sets, partial, robot, task, t)
                } else {
                    inter_overlap(sets, partial, robot, task, r, t)
                };
                subtract += common.len();
            }
            Some(own.len().saturating_sub(subtract))
        }
    }
}

/// Utility of a corrected count: 1/(1+count), 0 for infeasible.
pub fn utility(corrected: CorrectedCount) -> f64 {
    match corrected {
        Some(c) => 1.0 / (1.0 + c as f64),
        None => 0.0,
    }
}

/// Greedy allocation over precomputed rearrangement sets. Tasks are
/// visited in the given order; each goes to the robot with maximum
/// utility against the partial allocation. Ties prefer a robot with an
/// empty schedule, then a seeded-random choice.
pub fn allocate_from_sets(
    sets: &SetTable,
    robots: &[RobotId],
    task_order: &[ObjectId],
    mode: CorrectionMode,
    seed: u64,
) -> Result<Allocation, AllocationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partial: Vec<(RobotId, ObjectId)> = Vec::new();
    let mut schedule: BTreeMap<RobotId, Vec<ObjectId>> =
        robots.iter().map(|r| (r.clone(), Vec::new())).collect();
    let mut assignment = BTreeMap::new();
    let mut steps = Vec::new();
    let mut entries = BTreeMap::new();
    let mut total_utility = 0.0;

    for task in task_order {
        let mut evaluations = BTreeMap::new();
        for r in robots {
            let raw = match sets.get(&(r.clone(), task.clone())) {
                Some(Some(s)) => Some(s.len()),
                _ => None,
            };
            let corrected = corrected_count(sets, &partial, r, task, mode);
            evaluations.insert(
                r.clone(),
                UtilityEntry {
                    raw_count: raw,
                    corrected_count: corrected,
                    utility: utility(corrected),
                },
            );
        }
        let best = evaluations
            .values()
            .map(|e| e.utility)
            .fold(0.0_f64, f64::max);
        if best == 0.0 {
            return Err(AllocationError::TaskInfeasible(task.clone()));
        }
        let tied: Vec<&RobotId> = robots
            .iter()
            .filter(|r| evaluations[*r].utility == best)
            .collect();
        let chosen = if tied.len() == 1 {
            tied[0].clone()
        } else {
            let empties: Vec<&&RobotId> = tied
                .iter()
                .filter(|r| schedule[**r].is_empty())
                .collect();
            let pool: Vec<&RobotId> = if empties.is_empty() {
                tied.clone()
            } else {
                empties.into_iter().copied().collect()
            };
            pool[rng.gen_range(0..pool.len())].clone()
        };
        total_utility += evaluations[&chosen].utility;
        for (r, e) in &evaluations {
            entries.insert((r.clone(), task.clone()), e.clone());
        }
        schedule.get_mut(&chosen).unwrap().push(task.clone());
        assignment.insert(task.clone(), chosen.clone());
        partial.push((chosen.clone(), task.clone()));
        steps.push(AllocationStep {
            task: task.clone(),
            evaluations,
            chosen,
        });
    }
    Ok(Allocation {
        schedule,
        assignment,
        total_utility,
        steps,
        table: UtilityTable { entries, mode },
    })
}

/// Computes rearrangement sets for every robot-target pair of the world.
pub fn rearrangement_sets(world: &WorkspaceModel, step: f64) -> SetTable {
    let mut sets = SetTable::new();
    for robot in &world.robots {
        for target in world.targets() {
            let set = select_obstacles(world, &robot.id, &target.id, step).ok();
            sets.insert((robot.id.clone(), target.id.clone()), set);
        }
    }
    sets
}

/// Offline greedy allocation over a world: targets visited in seeded
/// random order.
pub fn allocate(
    world: &WorkspaceModel,
    step: f64,
    seed: u64,
    mode: CorrectionMode,
) -> Result<Allocation, AllocationError> {
    let sets = rearrangement_sets(world, step);
    let robots: Vec<RobotId> = world.robots.iter().map(|r| r.id.clone()).collect();
    let mut order: Vec<ObjectId> = world.targets().map(|t| t.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_1234_4321);
    // Fisher-Yates with the scenario-independent allocation seed.
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    allocate_from_sets(&sets, &robots, &order, mode, seed)
}

/// Exhaustive maximizer of the combined utility with fixed per-pair
/// utilities (schedule-order coupling ignored). `utilities[i][j]` is the
/// utility of robot i on task j.
pub fn brute_force_allocate(
    utilities: &[Vec<f64>],
) -> Result<(Vec<usize>, f64), AllocationError> {
    let r = utilities.len();
    assert!(r >= 1);
    let t = utilities[0].len();
    let total = (r as f64).powi(t as i32);
    if total > 1e6 {
        return Err(AllocationError::InstanceTooLarge);
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut assign = vec![0usize; t];
    loop {
        let sum: f64 = assign
            .iter()
            .enumerate()
            .map(|(j, &i)| utilities[i][j])
            .sum();
        if best.as_ref().map_or(true, |(_, b)| sum > *b) {
            best = Some((assign.clone(), sum));
        }
        // Odometer increment over robot indices.
        let mut k = 0;
        loop {
            if k == t {
                return Ok(best.unwrap());
            }
            assign[k] += 1;
            if assign[k] < r {
                break;
            }
            assign[k] = 0;
            k += 1;
        }
    }
}
