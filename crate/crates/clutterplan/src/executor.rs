//! The multi-robot TMP loop: allocation, per-robot network search,
//! grounding of abstract actions into motion queries, kinematic execution
//! with failure injection, knowledge-base updates, and trace replay.
//!
//! Robots execute under turn-based coordination: one complete sub-task
//! (a pick-and-place or a target grasp attempt) per turn, so execution
//! intervals never overlap and robot-robot collisions cannot occur.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{allocate, Allocation, AllocationError, CorrectionMode};
use crate::geometry::Point;
use crate::motion::{
    grasp_goal_poses, grasp_pose, plan_path, validate_plan, MotionError, MotionPlan,
    MotionQuery, DEFAULT_MAX_ITERATIONS,
};
use crate::selection::DEFAULT_ANGLE_STEP;
use crate::taskgraph::{
    ordered_candidates, AbstractAction, ArcEvaluation, AugmentedGraph, GraphNetwork, HyperArc,
    PlaceDestination, StepResult, TaskGraphError, TransitionRecord,
};
use crate::world::{
    Configuration, ObjectId, ObjectStatus, RobotId, RobotModel, WorkspaceModel, SAFE_GRID_PITCH,
};

/// Nominal end-effector speed used to convert path length into modeled
/// execution time.
pub const NOMINAL_SPEED: f64 = 0.1;

/// Fresh-seed retries for an infeasible motion plan before the arc is
/// declared infeasible.
const PLAN_SEED_RETRIES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    /// Per-execution probability of an injected failure, in [0, 1).
    pub failure_probability: f64,
    /// Maximum consecutive failure-driven re-expansions per task.
    pub retry_budget: usize,
    pub depth_cap: usize,
    pub angle_step: f64,
    pub mode: CorrectionMode,
    pub allocation_seed: u64,
    pub motion_seed: u64,
    pub failure_seed: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            failure_probability: 0.0,
            retry_budget: 5,
            depth_cap: 256,
            angle_step: DEFAULT_ANGLE_STEP,
            mode: CorrectionMode::Union,
            allocation_seed: 1,
            motion_seed: 2,
            failure_seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub config: Configuration,
    pub carried: Option<ObjectId>,
}

/// Single mutable copy of the world plus per-robot state and the
/// append-only event log.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub world: WorkspaceModel,
    pub robot_states: BTreeMap<RobotId, RobotState>,
    pub log: Vec<Event>,
}

impl KnowledgeBase {
    pub fn new(world: WorkspaceModel) -> Self {
        let robot_states = world
            .robots
            .iter()
            .map(|r| {
                (
                    r.id.clone(),
                    RobotState {
                        config: r.home,
                        carried: None,
                    },
                )
            })
            .collect();
        KnowledgeBase {
            world,
            robot_states,
            log: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TaskStarted {
        task: ObjectId,
    },
    /// An executed motion: the disc of `moving_radius` traversed the
    /// waypoints; `carried` names an in-hand object excluded from
    /// collision.
    Motion {
        object: ObjectId,
        carried: Option<ObjectId>,
        moving_radius: f64,
        waypoints: Vec<Configuration>,
    },
    Grasped {
        object: ObjectId,
    },
    GraspFailed {
        object: ObjectId,
    },
    Placed {
        object: ObjectId,
        center: Point,
        status: ObjectStatus,
    },
    PlaceFailed {
        object: ObjectId,
        restored_center: Point,
    },
    Ack {
        action: String,
    },
    Expanded {
        failure_retry: bool,
    },
    TaskSolved {
        task: ObjectId,
        depth: usize,
    },
    TaskFailed {
        task: ObjectId,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub robot: RobotId,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFragment {
    pub robot: RobotId,
    pub task: ObjectId,
    pub solved: bool,
    pub depth: usize,
    pub nodes_visited: u64,
    pub rearranged: u64,
    pub mp_attempts: u64,
    pub executions: u64,
    pub tp_time: f64,
    pub mp_time: f64,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotReport {
    pub robot: RobotId,
    pub tasks: Vec<TaskFragment>,
    pub depth_total: usize,
    pub tp_time: f64,
    pub mp_time: f64,
    pub mp_attempts: u64,
    pub executions: u64,
    pub rearranged: u64,
    pub nodes_visited: u64,
}

impl RobotReport {
    pub fn depth_mean(&self) -> f64 {
        if self.tasks.is_empty() {
            0.0
        } else {
            self.depth_total as f64 / self.tasks.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub success: bool,
    pub robots: Vec<RobotReport>,
    pub events: Vec<Event>,
    pub total_wall_time: f64,
    pub total_model_time: f64,
}

impl ExecutionReport {
    pub fn fragments(&self) -> impl Iterator<Item = &TaskFragment> {
        self.robots.iter().flat_map(|r| r.tasks.iter())
    }

    /// Mean network depth over all tasks of the run.
    pub fn mean_depth(&self) -> f64 {
        let frags: Vec<&TaskFragment> = self.fragments().collect();
        if frags.is_empty() {
            return 0.0;
        }
        frags.iter().map(|f| f.depth as f64).sum::<f64>() / frags.len() as f64
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroundingError {
    #[error("missing or incompatible object {0}")]
    MissingObject(ObjectId),
    #[error("no free safe cell")]
    NoFreeSafeCell,
    #[error("no valid grasp pose for {0}")]
    NoValidPose(ObjectId),
}

/// First free placement cell (row-major) across the robot's safe regions.
pub fn next_free_safe_cell(
    world: &WorkspaceModel,
    robot: &RobotId,
    needed_radius: f64,
) -> Option<Point> {
    for sr in world.safe_regions_for(robot) {
        let cols = (sr.rect.w / SAFE_GRID_PITCH).floor() as usize;
        let rows = (sr.rect.h / SAFE_GRID_PITCH).floor() as usize;
        for row in 0..rows {
            for col in 0..cols {
                let c = Point::new(
                    sr.rect.x + (col as f64 + 0.5) * SAFE_GRID_PITCH,
                    sr.rect.y + (row as f64 + 0.5) * SAFE_GRID_PITCH,
                );
                let occupied = world.objects.iter().any(|o| {
                    matches!(o.status, ObjectStatus::OnTable | ObjectStatus::RemovedToSafe)
                        && o.center.dist(&c) < o.radius + needed_radius
                });
                if !occupied {
                    return Some(c);
                }
            }
        }
    }
    None
}

/// Where retrieved targets are delivered: the robot's home position.
pub fn retrieval_point(robot: &RobotModel) -> Point {
    robot.home.position()
}

/// Maps an abstract action to a motion query against the knowledge base.
pub fn ground(
    kb: &KnowledgeBase,
    robot_id: &RobotId,
    action: &AbstractAction,
    angle_step: f64,
    seed: u64,
) -> Result<MotionQuery, GroundingError> {
    let world = &kb.world;
    let robot = world.robot(robot_id).expect("robot exists");
    let state = &kb.robot_states[robot_id];
    let bounds = world.bounds();
    match action {
        AbstractAction::Grasp { object } => {
            let o = world
                .object(object)
                .filter(|o| o.status == ObjectStatus::OnTable)
                .ok_or_else(|| GroundingError::MissingObject(object.clone()))?;
            // Keep only poses from which the subsequent transfer can start:
            // once grasped, the load is modeled as a disc of the combined
            // radius, which must already be free at the grasp pose.
            let carried_radius = robot.ee_radius + o.radius;
            let carried_ignore: BTreeSet<ObjectId> = [object.clone()].into();
            let goals: Vec<Configuration> = grasp_goal_poses(world, robot, o, angle_step)
                .into_iter()
                .filter(|g| world.disc_free(&g.position(), carried_radius, &carried_ignore))
                .collect();
            if goals.is_empty() {
                return Err(GroundingError::NoValidPose(object.clone()));
            }
            Ok(MotionQuery {
                start: state.config,
                goals,
                moving_radius: robot.ee_radius,
                ignore: BTreeSet::new(),
                bounds,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                seed,
            })
        }
        AbstractAction::Place { object, destination } => {
            let o = world
                .object(object)
                .filter(|o| o.status == ObjectStatus::Grasped)
                .ok_or_else(|| GroundingError::MissingObject(object.clone()))?;
            let carried_radius = robot.ee_radius + o.radius;
            let dest = match destination {
                PlaceDestination::SafeRegion => {
                    next_free_safe_cell(world, robot_id, carried_radius)
                        .ok_or(GroundingError::NoFreeSafeCell)?
                }
                PlaceDestination::Retrieval => retrieval_point(robot),
            };
            Ok(MotionQuery {
                start: state.config,
                goals: vec![Configuration::new(dest.x, dest.y, state.config.theta)],
                moving_radius: carried_radius,
                ignore: [object.clone()].into(),
                bounds,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                seed,
            })
        }
        AbstractAction::Approach { target, offset } => {
            let o = world
                .object(target)
                .filter(|o| o.status == ObjectStatus::OnTable)
                .ok_or_else(|| GroundingError::MissingObject(target.clone()))?;
            let axis = robot.base.sub(&o.center).angle();
            Ok(MotionQuery {
                start: state.config,
                goals: vec![grasp_pose(o, axis, *offset, robot.ee_radius)],
                moving_radius: robot.ee_radius,
                ignore: BTreeSet::new(),
                bounds,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                seed,
            })
        }
    }
}

struct ArcMetrics<'a> {
    frag: &'a mut TaskFragment,
}

pub struct Executor {
    pub kb: KnowledgeBase,
    pub cfg: ExecutorConfig,
    clock: f64,
    fail_rng: ChaCha8Rng,
    seed_counter: u64,
    seq: u64,
    /// Most recent planning error, folded into failure reasons.
    last_plan_error: Option<String>,
}

enum SubTaskOutcome {
    /// An obstacle was removed; the network must grow.
    Removed(ObjectId),
    /// An injected failure; re-expand without progress.
    Failure,
    Done,
    Infeasible,
}

impl Executor {
    pub fn new(world: WorkspaceModel, cfg: ExecutorConfig) -> Self {
        assert!(cfg.failure_probability < 1.0, "p < 1");
        Executor {
            kb: KnowledgeBase::new(world),
            cfg,
            clock: 0.0,
            fail_rng: ChaCha8Rng::seed_from_u64(cfg.failure_seed),
            seed_counter: 0,
            seq: 0,
            last_plan_error: None,
        }
    }

    fn emit(&mut self, robot: &RobotId, duration: f64, kind: EventKind) {
        let t_start = self.clock;
        self.clock += duration;
        self.kb.log.push(Event {
            seq: self.seq,
            t_start,
            t_end: self.clock,
            robot: robot.clone(),
            kind,
        });
        self.seq += 1;
    }

    fn next_motion_seed(&mut self) -> u64 {
        self.seed_counter += 1;
        self.cfg
            .motion_seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(self.seed_counter)
    }

    fn inject_failure(&mut self) -> bool {
        self.cfg.failure_probability > 0.0 && self.fail_rng.gen_bool(self.cfg.failure_probability)
    }

    /// Plans one grounded action with fresh-seed retries.
    fn plan_action(
        &mut self,
        robot: &RobotId,
        action: &AbstractAction,
        metrics: &mut ArcMetrics,
    ) -> Result<MotionPlan, String> {
        let mut last = String::from("grounding failed");
        for _ in 0..PLAN_SEED_RETRIES {
            let seed = self.next_motion_seed();
            let query = match ground(&self.kb, robot, action, self.cfg.angle_step, seed) {
                Ok(q) => q,
                Err(e) => return Err(e.to_string()),
            };
            let t = Instant::now();
            let res = plan_path(&self.kb.world, &query);
            metrics.frag.mp_time += t.elapsed().as_secs_f64();
            metrics.frag.mp_attempts += 1;
            match res {
                Ok(plan) => {
                    // The offline replay re-checks at half the planning
                    // resolution; hold executed plans to that standard and
                    // replan when a coarse edge check let a graze through.
                    match validate_plan(
                        &self.kb.world,
                        &plan,
                        &query.start,
                        &query.goals,
                        query.moving_radius,
                        &query.ignore,
                    ) {
                        Ok(()) => return Ok(plan),
                        Err(e) => last = e,
                    }
                }
                Err(MotionError::Infeasible) => {
                    last = MotionError::Infeasible.to_string();
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        Err(last)
    }

    /// Executes a planned motion: advances the clock by path length over
    /// nominal speed, moves the end-effector (and any carried object), and
    /// logs the motion with its acknowledgment.
    fn execute_motion(
        &mut self,
        robot: &RobotId,
        object: &ObjectId,
        carried: Option<ObjectId>,
        moving_radius: f64,
        plan: &MotionPlan,
        metrics: &mut ArcMetrics,
    ) {
        let end = *plan.waypoints.last().expect("plan non-empty");
        let duration = plan.length() / NOMINAL_SPEED;
        self.emit(
            robot,
            duration,
            EventKind::Motion {
                object: object.clone(),
                carried: carried.clone(),
                moving_radius,
                waypoints: plan.waypoints.clone(),
            },
        );
        self.emit(robot, 0.0, EventKind::Ack { action: "motion".into() });
        let state = self.kb.robot_states.get_mut(robot).unwrap();
        state.config = end;
        if let Some(obj) = carried {
            self.kb.world.object_mut(&obj).unwrap().center = end.position();
        }
        metrics.frag.executions += 1;
    }

    /// Grasp-then-place of one object. Returns Ok(true) when both actions
    /// executed, Ok(false) on an injected failure (world restored), and
    /// Err when no plan exists.
    fn pick_and_place(
        &mut self,
        robot_id: &RobotId,
        object: &ObjectId,
        destination: &PlaceDestination,
        metrics: &mut ArcMetrics,
    ) -> Result<bool, String> {
        let grasp = AbstractAction::Grasp { object: object.clone() };
        let approach = self.plan_action(robot_id, &grasp, metrics)?;
        let robot = self.kb.world.robot(robot_id).unwrap().clone();
        self.execute_motion(robot_id, object, None, robot.ee_radius, &approach, metrics);

        if self.inject_failure() {
            self.emit(robot_id, 0.0, EventKind::GraspFailed { object: object.clone() });
            self.emit(robot_id, 0.0, EventKind::Ack { action: "grasp".into() });
            return Ok(false);
        }
        let original_center = self.kb.world.object(object).unwrap().center;
        self.kb.world.object_mut(object).unwrap().status = ObjectStatus::Grasped;
        self.kb.robot_states.get_mut(robot_id).unwrap().carried = Some(object.clone());
        self.emit(robot_id, 0.0, EventKind::Grasped { object: object.clone() });
        self.emit(robot_id, 0.0, EventKind::Ack { action: "grasp".into() });

        let place = AbstractAction::Place {
            object: object.clone(),
            destination: destination.clone(),
        };
        let transfer = match self.plan_action(robot_id, &place, metrics) {
            Ok(p) => p,
            Err(e) => {
                // Could not even plan the transfer: put the object back.
                self.restore(robot_id, object, original_center);
                self.emit(
                    robot_id,
                    0.0,
                    EventKind::PlaceFailed {
                        object: object.clone(),
                        restored_center: original_center,
                    },
                );
                self.emit(robot_id, 0.0, EventKind::Ack { action: "place".into() });
                return Err(e);
            }
        };
        let carried_radius =
            robot.ee_radius + self.kb.world.object(object).unwrap().radius;
        self.execute_motion(
            robot_id,
            object,
            Some(object.clone()),
            carried_radius,
            &transfer,
            metrics,
        );

        if self.inject_failure() {
            self.restore(robot_id, object, original_center);
            self.emit(
                robot_id,
                0.0,
                EventKind::PlaceFailed {
                    object: object.clone(),
                    restored_center: original_center,
                },
            );
            self.emit(robot_id, 0.0, EventKind::Ack { action: "place".into() });
            return Ok(false);
        }
        let end = self.kb.robot_states[robot_id].config.position();
        let status = match destination {
            PlaceDestination::SafeRegion => ObjectStatus::RemovedToSafe,
            PlaceDestination::Retrieval => ObjectStatus::Retrieved,
        };
        {
            let o = self.kb.world.object_mut(object).unwrap();
            o.center = end;
            o.status = status;
        }
        self.kb.robot_states.get_mut(robot_id).unwrap().carried = None;
        if status == ObjectStatus::RemovedToSafe {
            metrics.frag.rearranged += 1;
        }
        self.emit(
            robot_id,
            0.0,
            EventKind::Placed {
                object: object.clone(),
                center: end,
                status,
            },
        );
        self.emit(robot_id, 0.0, EventKind::Ack { action: "place".into() });
        Ok(true)
    }

    fn restore(&mut self, robot_id: &RobotId, object: &ObjectId, center: Point) {
        let o = self.kb.world.object_mut(object).unwrap();
        o.center = center;
        o.status = ObjectStatus::OnTable;
        self.kb.robot_states.get_mut(robot_id).unwrap().carried = None;
    }

    /// Feasibility-and-execution callback for one hyper-arc.
    fn execute_arc(
        &mut self,
        graph: &AugmentedGraph,
        arc: &HyperArc,
        robot_id: &RobotId,
        task: &ObjectId,
        metrics: &mut ArcMetrics,
    ) -> (ArcEvaluation, SubTaskOutcome) {
        let is_removal = arc.children.contains(&graph.virtual_node);
        if is_removal {
            // Try selected obstacles in removal order until one admits a
            // complete pick-and-place plan.
            for cand in &graph.candidates {
                match self.pick_and_place(
                    robot_id,
                    cand,
                    &PlaceDestination::SafeRegion,
                    metrics,
                ) {
                    Ok(true) => {
                        return (
                            ArcEvaluation::Executed { world: self.kb.world.clone() },
                            SubTaskOutcome::Removed(cand.clone()),
                        );
                    }
                    Ok(false) => {
                        return (
                            ArcEvaluation::ExecutionFailed { world: self.kb.world.clone() },
                            SubTaskOutcome::Failure,
                        );
                    }
                    Err(e) => {
                        self.last_plan_error = Some(format!("{cand}: {e}"));
                        continue;
                    }
                }
            }
            (ArcEvaluation::Infeasible, SubTaskOutcome::Infeasible)
        } else {
            match self.pick_and_place(robot_id, task, &PlaceDestination::Retrieval, metrics) {
                Ok(true) => (
                    ArcEvaluation::Executed { world: self.kb.world.clone() },
                    SubTaskOutcome::Done,
                ),
                Ok(false) => (
                    ArcEvaluation::ExecutionFailed { world: self.kb.world.clone() },
                    SubTaskOutcome::Failure,
                ),
                Err(e) => {
                    self.last_plan_error = Some(format!("{task}: {e}"));
                    (ArcEvaluation::Infeasible, SubTaskOutcome::Infeasible)
                }
            }
        }
    }

    /// Runs one allocated task to completion (used by the turn scheduler
    /// one sub-task at a time via `TaskRun::advance`).
    pub fn run_task(&mut self, robot: &RobotId, task: &ObjectId) -> TaskFragment {
        let mut run = TaskRun::start(self, robot, task);
        loop {
            if let Some(frag) = run.advance(self) {
                return frag;
            }
        }
    }
}

/// In-flight execution of one task: one `advance` call performs one
/// sub-task (a complete pick-and-place or grasp attempt).
pub struct TaskRun {
    robot: RobotId,
    task: ObjectId,
    net: GraphNetwork,
    consecutive_failures: usize,
    frag: TaskFragment,
}

impl TaskRun {
    pub fn start(exec: &mut Executor, robot: &RobotId, task: &ObjectId) -> Self {
        exec.emit(robot, 0.0, EventKind::TaskStarted { task: task.clone() });
        let net = GraphNetwork::new(
            &exec.kb.world,
            robot,
            task,
            exec.cfg.angle_step,
            exec.cfg.depth_cap,
        );
        TaskRun {
            robot: robot.clone(),
            task: task.clone(),
            net,
            consecutive_failures: 0,
            frag: TaskFragment {
                robot: robot.clone(),
                task: task.clone(),
                solved: false,
                depth: 1,
                nodes_visited: 0,
                rearranged: 0,
                mp_attempts: 0,
                executions: 0,
                tp_time: 0.0,
                mp_time: 0.0,
                failure_reason: None,
            },
        }
    }

    fn finish(&mut self, exec: &mut Executor, solved: bool, reason: Option<String>) -> TaskFragment {
        self.frag.solved = solved;
        self.frag.depth = self.net.depth();
        self.frag.nodes_visited = self.net.nodes_visited;
        self.frag.failure_reason = reason.clone();
        if solved {
            exec.emit(
                &self.robot.clone(),
                0.0,
                EventKind::TaskSolved { task: self.task.clone(), depth: self.net.depth() },
            );
        } else {
            exec.emit(
                &self.robot.clone(),
                0.0,
                EventKind::TaskFailed {
                    task: self.task.clone(),
                    reason: reason.unwrap_or_else(|| "infeasible".into()),
                },
            );
        }
        self.frag.clone()
    }

    /// One sub-task turn. Returns the finished fragment when the task
    /// solved or failed, `None` while work remains.
    pub fn advance(&mut self, exec: &mut Executor) -> Option<TaskFragment> {
        let robot = self.robot.clone();
        let task = self.task.clone();
        // Another robot may have changed the scene between our turns. If
        // the selection this graph was built on no longer matches the
        // knowledge base, grow the network against the current world
        // instead of acting on stale candidates.
        if exec.kb.world.object(&task).is_some_and(|o| o.status == ObjectStatus::OnTable) {
            let current = ordered_candidates(
                &exec.kb.world,
                &robot,
                &task,
                self.net.angle_step,
            );
            if current != self.net.newest().candidates {
                exec.emit(&robot, 0.0, EventKind::Expanded { failure_retry: false });
                let world = exec.kb.world.clone();
                let record = TransitionRecord { failure_retry: false, removed: None };
                if let Err(e) = self.net.expand(&world, record) {
                    return Some(self.finish(exec, false, Some(e.to_string())));
                }
                return None;
            }
        }
        let frag = &mut self.frag;
        let mut outcome = SubTaskOutcome::Infeasible;
        let t0 = Instant::now();
        let mp_before = frag.mp_time;
        let step = self.net.network_step(|g, arc| {
            let mut m = ArcMetrics { frag: &mut *frag };
            let (eval, out) = exec.execute_arc(g, arc, &robot, &task, &mut m);
            outcome = out;
            eval
        });
        let total = t0.elapsed().as_secs_f64();
        let mp_delta = self.frag.mp_time - mp_before;
        self.frag.tp_time += (total - mp_delta).max(0.0);
        match step {
            StepResult::Solved => Some(self.finish(exec, true, None)),
            StepResult::Failed => {
                let reason = match exec.last_plan_error.take() {
                    Some(e) => format!("all alternatives infeasible (last: {e})"),
                    None => "all alternatives infeasible".into(),
                };
                Some(self.finish(exec, false, Some(reason)))
            }
            StepResult::NextActions { .. } => {
                unreachable!("executor callback never defers")
            }
            StepResult::Expand { world, failure_retry } => {
                if failure_retry {
                    self.consecutive_failures += 1;
                    if self.consecutive_failures > exec.cfg.retry_budget {
                        return Some(self.finish(
                            exec,
                            false,
                            Some("retry budget exceeded".into()),
                        ));
                    }
                } else {
                    self.consecutive_failures = 0;
                }
                let removed = match &outcome {
                    SubTaskOutcome::Removed(o) => Some(o.clone()),
                    _ => None,
                };
                exec.emit(&robot, 0.0, EventKind::Expanded { failure_retry });
                match self.net.expand(&world, TransitionRecord { failure_retry, removed }) {
                    Ok(()) => None,
                    Err(TaskGraphError::DepthBudgetExceeded) => {
                        Some(self.finish(exec, false, Some("depth budget exceeded".into())))
                    }
                    Err(e) => Some(self.finish(exec, false, Some(e.to_string()))),
                }
            }
        }
    }
}

/// Allocates and executes all tasks under turn-based coordination.
pub fn run(world: &WorkspaceModel, cfg: ExecutorConfig) -> Result<ExecutionReport, ExecError> {
    let wall = Instant::now();
    let allocation: Allocation =
        allocate(world, cfg.angle_step, cfg.allocation_seed, cfg.mode)?;
    let mut exec = Executor::new(world.clone(), cfg);

    struct Worker {
        robot: RobotId,
        queue: VecDeque<ObjectId>,
        current: Option<TaskRun>,
        fragments: Vec<TaskFragment>,
    }
    let mut workers: Vec<Worker> = world
        .robots
        .iter()
        .map(|r| Worker {
            robot: r.id.clone(),
            queue: allocation.schedule[&r.id].iter().cloned().collect(),
            current: None,
            fragments: Vec::new(),
        })
        .collect();

    loop {
        let mut any = false;
        for w in &mut workers {
            if w.current.is_none() {
                if let Some(task) = w.queue.pop_front() {
                    w.current = Some(TaskRun::start(&mut exec, &w.robot, &task));
                }
            }
            if let Some(run) = &mut w.current {
                any = true;
                if let Some(frag) = run.advance(&mut exec) {
                    w.fragments.push(frag);
                    w.current = None;
                }
            }
        }
        if !any {
            break;
        }
    }

    let robots: Vec<RobotReport> = workers
        .into_iter()
        .map(|w| {
            let tasks = w.fragments;
            RobotReport {
                robot: w.robot,
                depth_total: tasks.iter().map(|f| f.depth).sum(),
                tp_time: tasks.iter().map(|f| f.tp_time).sum(),
                mp_time: tasks.iter().map(|f| f.mp_time).sum(),
                mp_attempts: tasks.iter().map(|f| f.mp_attempts).sum(),
                executions: tasks.iter().map(|f| f.executions).sum(),
                rearranged: tasks.iter().map(|f| f.rearranged).sum(),
                nodes_visited: tasks.iter().map(|f| f.nodes_visited).sum(),
                tasks,
            }
        })
        .collect();
    let success = robots.iter().all(|r| r.tasks.iter().all(|f| f.solved))
        && exec
            .kb
            .world
            .targets()
            .all(|t| t.status == ObjectStatus::Retrieved);
    Ok(ExecutionReport {
        success,
        robots,
        events: exec.kb.log,
        total_wall_time: wall.elapsed().as_secs_f64(),
        total_model_time: exec.clock,
    })
}

/// Serializes the event trace as newline-delimited JSON.
pub fn trace_to_ndjson(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serialization"));
        out.push('\n');
    }
    out
}

pub fn trace_from_ndjson(text: &str) -> Result<Vec<Event>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Offline trace re-validation: replays the events against the initial
/// world and re-checks every safety and bookkeeping property.
pub fn replay_validate(
    initial: &WorkspaceModel,
    events: &[Event],
    expect_success: bool,
) -> Result<(), String> {
    let mut world = initial.clone();
    let mut configs: BTreeMap<RobotId, Configuration> = world
        .robots
        .iter()
        .map(|r| (r.id.clone(), r.home))
        .collect();
    let mut pending_ack: BTreeMap<RobotId, bool> = BTreeMap::new();
    let mut grasp_origin: BTreeMap<ObjectId, Point> = BTreeMap::new();
    let mut last_motion_end = 0.0_f64;
    let n_objects = world.objects.len();

    for e in events {
        if e.t_end < e.t_start {
            return Err(format!("event {}: negative duration", e.seq));
        }
        match &e.kind {
            EventKind::Motion { object: _, carried, moving_radius, waypoints } => {
                if *pending_ack.get(&e.robot).unwrap_or(&false) {
                    return Err(format!("event {}: motion before acknowledgment", e.seq));
                }
                // Turn-based coordination: no two motions overlap in time.
                if e.t_start + 1e-12 < last_motion_end {
                    return Err(format!("event {}: overlapping execution intervals", e.seq));
                }
                last_motion_end = e.t_end;
                let start = configs[&e.robot];
                let first = waypoints.first().ok_or("empty motion")?;
                if first.position().dist(&start.position()) > 1e-9 {
                    return Err(format!("event {}: discontinuous start", e.seq));
                }
                let ignore: BTreeSet<ObjectId> = carried.iter().cloned().collect();
                for w in waypoints.windows(2) {
                    let a = w[0].position();
                    let b = w[1].position();
                    let steps = (a.dist(&b) / (crate::motion::PLAN_RESOLUTION / 2.0)).ceil() as usize;
                    for i in 0..=steps {
                        let t = if steps == 0 { 0.0 } else { i as f64 / steps as f64 };
                        let p = Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
                        if !world.disc_free(&p, *moving_radius, &ignore) {
                            return Err(format!("event {}: collision along motion", e.seq));
                        }
                    }
                }
                let end = *waypoints.last().unwrap();
                configs.insert(e.robot.clone(), end);
                if let Some(obj) = carried {
                    world.object_mut(obj).ok_or("carried object vanished")?.center =
                        end.position();
                }
                pending_ack.insert(e.robot.clone(), true);
            }
            EventKind::Grasped { object } | EventKind::GraspFailed { object } => {
                let o = world.object(object).ok_or("object vanished")?;
                if o.status != ObjectStatus::OnTable {
                    return Err(format!("event {}: grasp of non-on-table object", e.seq));
                }
                if matches!(e.kind, EventKind::Grasped { .. }) {
                    grasp_origin.insert(object.clone(), o.center);
                    world.object_mut(object).unwrap().status = ObjectStatus::Grasped;
                }
                pending_ack.insert(e.robot.clone(), true);
            }
            EventKind::Placed { object, center, status } => {
                let o = world.object_mut(object).ok_or("object vanished")?;
                if o.status != ObjectStatus::Grasped {
                    return Err(format!("event {}: place of non-grasped object", e.seq));
                }
                o.center = *center;
                o.status = *status;
                if *status == ObjectStatus::RemovedToSafe
                    && !world.safe_regions.iter().any(|sr| sr.rect.contains(center))
                {
                    return Err(format!("event {}: removed object outside safe regions", e.seq));
                }
                pending_ack.insert(e.robot.clone(), true);
            }
            EventKind::PlaceFailed { object, restored_center } => {
                let origin = grasp_origin.get(object).ok_or("restore without grasp")?;
                if origin.dist(restored_center) > 1e-9 {
                    return Err(format!("event {}: restore differs from pre-action pose", e.seq));
                }
                let o = world.object_mut(object).ok_or("object vanished")?;
                o.center = *restored_center;
                o.status = ObjectStatus::OnTable;
                pending_ack.insert(e.robot.clone(), true);
            }
            EventKind::Ack { .. } => {
                pending_ack.insert(e.robot.clone(), false);
            }
            EventKind::TaskStarted { .. }
            | EventKind::Expanded { .. }
            | EventKind::TaskSolved { .. }
            | EventKind::TaskFailed { .. } => {}
        }
        // Conservation: no object ever vanishes.
        if world.objects.len() != n_objects {
            return Err("object count changed".into());
        }
    }
    if expect_success {
        if !world.targets().all(|t| t.status == ObjectStatus::Retrieved) {
            return Err("not all targets retrieved".into());
        }
        for o in &world.objects {
            if o.status == ObjectStatus::RemovedToSafe
                && !world
                    .safe_regions
                    .iter()
                    .any(|sr| sr.rect.contains_disc(&o.center, 0.0))
            {
                return Err(format!("removed object {} outside safe regions", o.id));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PI;
    use crate::world::generate_scenario;

    #[test]
    fn clutter_free_task_solves_at_depth_one() {
        let w = generate_scenario(1, 1, 1, 13).unwrap();
        let t = w.targets().next().unwrap().id.clone();
        let r = w.robots[0].id.clone();
        let mut exec = Executor::new(w.clone(), ExecutorConfig::default());
        let frag = exec.run_task(&r, &t);
        assert!(frag.solved);
        assert_eq!(frag.depth, 1);
        assert_eq!(frag.rearranged, 0);
        assert_eq!(
            exec.kb.world.object(&t).unwrap().status,
            ObjectStatus::Retrieved
        );
        replay_validate(&w, &exec.kb.log, true).unwrap();
    }

    #[test]
    fn grounding_approach_matches_grasp_pose() {
        let w = generate_scenario(1, 1, 1, 13).unwrap();
        let kb = KnowledgeBase::new(w.clone());
        let r = w.robots[0].clone();
        let t = w.targets().next().unwrap().clone();
        let action = AbstractAction::Approach { target: t.id.clone(), offset: 0.3 };
        let q = ground(&kb, &r.id, &action, PI / 18.0, 0).unwrap();
        let axis = r.base.sub(&t.center).angle();
        assert_eq!(q.goals, vec![grasp_pose(&t, axis, 0.3, r.ee_radius)]);
    }

    #[test]
    fn grounding_missing_object() {
        let w = generate_scenario(1, 1, 1, 13).unwrap();
        let kb = KnowledgeBase::new(w.clone());
        let r = w.robots[0].id.clone();
        let action = AbstractAction::Grasp { object: ObjectId::new("nope") };
        assert_eq!(
            ground(&kb, &r, &action, PI / 18.0, 0).unwrap_err(),
            GroundingError::MissingObject(ObjectId::new("nope"))
        );
    }

    #[test]
    fn retry_budget_exhaustion_fails_task() {
        let w = generate_scenario(1, 1, 1, 13).unwrap();
        let t = w.targets().next().unwrap().id.clone();
        let r = w.robots[0].id.clone();
        let cfg = ExecutorConfig {
            failure_probability: 0.95,
            retry_budget: 2,
            ..Default::default()
        };
        let mut exec = Executor::new(w.clone(), cfg);
        let frag = exec.run_task(&r, &t);
        // With p = 0.95 the run either exhausts the budget quickly or,
        // very rarely, sneaks through.
        if !frag.solved {
            assert_eq!(frag.failure_reason.as_deref(), Some("retry budget exceeded"));
        }
    }

    #[test]
    fn end_to_end_small_scenarios() {
        for seed in [7, 8, 9] {
            let w = generate_scenario(6, 2, 2, seed).unwrap();
            let report = run(&w, ExecutorConfig::default()).unwrap();
            assert!(report.success, "seed {seed} failed");
            replay_validate(&w, &report.events, true).unwrap();
        }
    }

    #[test]
    fn single_robot_two_tasks_in_schedule_order() {
        let w = generate_scenario(8, 2, 1, 23).unwrap();
        let report = run(&w, ExecutorConfig::default()).unwrap();
        assert!(report.success);
        assert_eq!(report.robots.len(), 1);
        assert_eq!(report.robots[0].tasks.len(), 2);
        replay_validate(&w, &report.events, true).unwrap();
    }

    #[test]
    fn determinism_for_fixed_seeds() {
        let w = generate_scenario(9, 2, 2, 31).unwrap();
        let a = run(&w, ExecutorConfig::default()).unwrap();
        let b = run(&w, ExecutorConfig::default()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.success, b.success);
    }

    #[test]
    fn trace_roundtrip() {
        let w = generate_scenario(6, 2, 2, 7).unwrap();
        let report = run(&w, ExecutorConfig::default()).unwrap();
        let text = trace_to_ndjson(&report.events);
        let back = trace_from_ndjson(&text).unwrap();
        assert_eq!(report.events, back);
    }
}
