//! Sampling-based motion feasibility for a free-flying end-effector disc:
//! grasp-pose construction, RRT path planning, and pick-and-place planning.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unit, wrap_angle, Point, Rect, PI};
use crate::world::{Configuration, ObjectDisc, ObjectId, ObjectKind, RobotModel, WorkspaceModel};

/// Standoff between the end-effector surface and the object surface at a
/// grasp pose.
pub const GRASP_STANDOFF: f64 = 0.005;

/// Fixed RRT extension step, meters.
pub const RRT_STEP: f64 = 0.02;
/// Probability of sampling a goal configuration instead of a uniform one.
pub const GOAL_BIAS: f64 = 0.1;
/// Spacing between collision-checked interpolants along plan segments.
pub const PLAN_RESOLUTION: f64 = 0.005;
pub const DEFAULT_MAX_ITERATIONS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub waypoints: Vec<Configuration>,
    pub resolution: f64,
}

impl MotionPlan {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].position().dist(&w[1].position()))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct MotionQuery {
    pub start: Configuration,
    pub goals: Vec<Configuration>,
    pub moving_radius: f64,
    pub ignore: BTreeSet<ObjectId>,
    pub bounds: Rect,
    pub max_iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MotionError {
    #[error("start configuration in collision")]
    StartInCollision,
    #[error("no plan found within the iteration budget")]
    Infeasible,
    #[error("no reachable collision-free grasp pose")]
    NoGraspReachable,
    #[error("transfer infeasible: {0}")]
    TransferInfeasible(String),
}

/// Side-grasp pose for `target` at angular `offset` from `axis`: the
/// end-effector disc sits just off the object surface, heading at the
/// object center.
pub fn grasp_pose(target: &ObjectDisc, axis: f64, offset: f64, ee_radius: f64) -> Configuration {
    let standoff = target.radius + ee_radius + GRASP_STANDOFF;
    let dir = axis + offset;
    let pos = target.center.add_scaled(unit(dir), standoff);
    Configuration::new(pos.x, pos.y, wrap_angle(dir + PI))
}

fn free(world: &WorkspaceModel, p: &Point, radius: f64, ignore: &BTreeSet<ObjectId>) -> bool {
    world.disc_free(p, radius, ignore)
}

fn segment_free(
    world: &WorkspaceModel,
    a: &Point,
    b: &Point,
    radius: f64,
    ignore: &BTreeSet<ObjectId>,
    resolution: f64,
) -> bool {
    let d = a.dist(b);
    let steps = (d / resolution).ceil() as usize;
    for i in 0..=steps {
        let t = if steps == 0 { 0.0 } else { i as f64 / steps as f64 };
        let p = Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
        if !free(world, &p, radius, ignore) {
            return false;
        }
    }
    true
}

/// RRT over the planar workspace. Deterministic for a fixed query seed.
pub fn plan_path(world: &WorkspaceModel, query: &MotionQuery) -> Result<MotionPlan, MotionError> {
    let start = query.start.position();
    if !free(world, &start, query.moving_radius, &query.ignore) {
        return Err(MotionError::StartInCollision);
    }
    let goals: Vec<&Configuration> = query
        .goals
        .iter()
        .filter(|g| {
            query.bounds.contains(&g.position())
                && free(world, &g.position(), query.moving_radius, &query.ignore)
        })
        .collect();
    if goals.is_empty() {
        return Err(MotionError::Infeasible);
    }
    // Straight-line shortcut before growing a tree.
    for g in &goals {
        if segment_free(
            world,
            &start,
            &g.position(),
            query.moving_radius,
            &query.ignore,
            PLAN_RESOLUTION,
        ) {
            return Ok(MotionPlan {
                waypoints: vec![query.start, **g],
                resolution: PLAN_RESOLUTION,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(query.seed);
    let mut nodes: Vec<Point> = vec![start];
    let mut parents: Vec<usize> = vec![0];
    let mut thetas: Vec<f64> = vec![query.start.theta];

    for _ in 0..query.max_iterations {
        let sample = if rng.gen_bool(GOAL_BIAS) {
            goals[rng.gen_range(0..goals.len())].position()
        } else {
            Point::new(
                rng.gen_range(query.bounds.x..=query.bounds.max_x()),
                rng.gen_range(query.bounds.y..=query.bounds.max_y()),
            )
        };
        let (near_idx, near_dist) = nodes
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.dist(&sample)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("tree non-empty");
        if near_dist < 1e-9 {
            continue;
        }
        let near = nodes[near_idx];
        let t = (RRT_STEP / near_dist).min(1.0);
        let new = Point::new(
            near.x + (sample.x - near.x) * t,
            near.y + (sample.y - near.y) * t,
        );
        if !segment_free(
            world,
            &near,
            &new,
            query.moving_radius,
            &query.ignore,
            PLAN_RESOLUTION,
        ) {
            continue;
        }
        let heading = new.sub(&near).angle();
        nodes.push(new);
        parents.push(near_idx);
        thetas.push(heading);
        let new_idx = nodes.len() - 1;
        // Goal connection attempt from the fresh node.
        for g in &goals {
            let gp = g.position();
            if new.dist(&gp) <= RRT_STEP
                && segment_free(
                    world,
                    &new,
                    &gp,
                    query.moving_radius,
                    &query.ignore,
                    PLAN_RESOLUTION,
                )
            {
                let mut rev = vec![**g];
                let mut idx = new_idx;
                loop {
                    rev.push(Configuration::new(nodes[idx].x, nodes[idx].y, thetas[idx]));
                    if idx == 0 {
                        break;
                    }
                    idx = parents[idx];
                }
                rev.reverse();
                rev[0] = query.start;
                return Ok(MotionPlan {
                    waypoints: rev,
                    resolution: PLAN_RESOLUTION,
                });
            }
        }
    }
    Err(MotionError::Infeasible)
}

/// Independent plan re-validation: endpoint contracts plus a dense
/// collision re-check at half the plan resolution.
pub fn validate_plan(
    world: &WorkspaceModel,
    plan: &MotionPlan,
    start: &Configuration,
    goals: &[Configuration],
    moving_radius: f64,
    ignore: &BTreeSet<ObjectId>,
) -> Result<(), String> {
    let first = plan.waypoints.first().ok_or("empty plan")?;
    if first.position().dist(&start.position()) > 1e-9 {
        return Err("plan does not start at the query start".into());
    }
    let last = plan.waypoints.last().unwrap();
    if !goals
        .iter()
        .any(|g| g.position().dist(&last.position()) < 1e-9)
    {
        return Err("plan does not end in the goal set".into());
    }
    for w in plan.waypoints.windows(2) {
        if !segment_free(
            world,
            &w[0].position(),
            &w[1].position(),
            moving_radius,
            ignore,
            plan.resolution / 2.0,
        ) {
            return Err("collision along plan".into());
        }
    }
    Ok(())
}

/// Candidate grasp poses for an object, ordered by increasing |offset|
/// from the target-to-robot axis. Targets admit side grasps only
/// (offsets in [-pi/2, +pi/2]); clutter may be grasped from any angle.
/// Poses are gated by the reach annulus and workspace bounds.
pub fn grasp_goal_poses(
    world: &WorkspaceModel,
    robot: &RobotModel,
    object: &ObjectDisc,
    step: f64,
) -> Vec<Configuration> {
    let axis = robot.base.sub(&object.center).angle();
    let half_range = match object.kind {
        ObjectKind::Target => PI / 2.0,
        ObjectKind::Clutter => PI,
    };
    let n = (half_range / step + 1e-9).floor() as i64;
    let mut offsets: Vec<f64> = Vec::new();
    for k in 0..=n {
        let o = k as f64 * step;
        offsets.push(o);
        if k > 0 && (object.kind == ObjectKind::Target || o < PI - 1e-9) {
            offsets.push(-o);
        }
    }
    let bounds = world.bounds();
    offsets
        .into_iter()
        .map(|off| grasp_pose(object, axis, off, robot.ee_radius))
        .filter(|pose| {
            let d = pose.position().dist(&robot.base);
            d >= robot.reach_min && d <= robot.reach_max && bounds.contains(&pose.position())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PickAndPlacePlans {
    pub approach: MotionPlan,
    pub transfer: MotionPlan,
    pub grasp: Configuration,
}

/// Plans the approach to a grasp pose of `object` and the transfer of the
/// grasped object to `destination`. The world is not mutated here.
pub fn plan_pick_and_place(
    world: &WorkspaceModel,
    robot: &RobotModel,
    start: Configuration,
    object: &ObjectDisc,
    destination: Point,
    angle_step: f64,
    seed: u64,
) -> Result<PickAndPlacePlans, MotionError> {
    let carried_radius = robot.ee_radius + object.radius;
    let carried_ignore: BTreeSet<ObjectId> = [object.id.clone()].into();
    // Placement precheck before any search.
    if !world.disc_free(&destination, carried_radius, &carried_ignore) {
        return Err(MotionError::TransferInfeasible(
            "destination occupied".into(),
        ));
    }
    let poses = grasp_goal_poses(world, robot, object, angle_step);
    if poses.is_empty() {
        return Err(MotionError::NoGraspReachable);
    }
    let bounds = world.bounds();
    // Offsets are tried in increasing |offset| by iterating poses in order.
    for (i, pose) in poses.iter().enumerate() {
        let approach = match plan_path(
            world,
            &MotionQuery {
                start,
                goals: vec![*pose],
                moving_radius: robot.ee_radius,
                ignore: BTreeSet::new(),
                bounds,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                seed: seed.wrapping_add(i as u64),
            },
        ) {
            Ok(p) => p,
            Err(MotionError::Infeasible) => continue,
            Err(e) => return Err(e),
        };
        let transfer = match plan_path(
            world,
            &MotionQuery {
                start: *pose,
                goals: vec![Configuration::new(destination.x, destination.y, pose.theta)],
                moving_radius: carried_radius,
                ignore: carried_ignore.clone(),
                bounds,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                seed: seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b97f4a7c15),
            },
        ) {
            Ok(p) => p,
            Err(MotionError::Infeasible) | Err(MotionError::StartInCollision) => continue,
            Err(e) => return Err(e),
        };
        return Ok(PickAndPlacePlans {
            approach,
            transfer,
            grasp: *pose,
        });
    }
    Err(MotionError::NoGraspReachable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenario, ObjectStatus};

    fn disc(id: &str, x: f64, y: f64, r: f64) -> ObjectDisc {
        ObjectDisc {
            id: ObjectId::new(id),
            center: Point::new(x, y),
            radius: r,
            kind: ObjectKind::Target,
            status: ObjectStatus::OnTable,
        }
    }

    #[test]
    fn grasp_pose_formula() {
        let t = disc("t", 0.0, 0.0, 0.03);
        let p = grasp_pose(&t, 0.0, 0.0, 0.02);
        assert!((p.x - 0.055).abs() < 1e-12);
        assert!(p.y.abs() < 1e-12);
        assert!((p.theta.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn grasp_pose_standoff_constant_over_offsets() {
        let t = disc("t", 0.2, 0.3, 0.03);
        for k in -9..=9 {
            let off = k as f64 * PI / 18.0;
            let p = grasp_pose(&t, 0.7, off, 0.02);
            assert!((p.position().dist(&t.center) - 0.055).abs() < 1e-12);
        }
        // offset +pi/2 is the 90-degree rotation of offset 0.
        let p0 = grasp_pose(&t, 0.0, 0.0, 0.02);
        let p90 = grasp_pose(&t, 0.0, PI / 2.0, 0.02);
        assert!((p0.position().dist(&t.center) - p90.position().dist(&t.center)).abs() < 1e-12);
    }

    #[test]
    fn open_space_plan_is_straight() {
        let w = generate_scenario(1, 1, 1, 11).unwrap();
        let q = MotionQuery {
            start: Configuration::new(-0.1, 0.1, 0.0),
            goals: vec![Configuration::new(-0.1, 0.6, 0.0)],
            moving_radius: 0.02,
            ignore: BTreeSet::new(),
            bounds: w.bounds(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 1,
        };
        let plan = plan_path(&w, &q).unwrap();
        assert_eq!(plan.waypoints.len(), 2);
        validate_plan(
            &w,
            &plan,
            &q.start,
            &q.goals,
            q.moving_radius,
            &q.ignore,
        )
        .unwrap();
    }

    #[test]
    fn start_in_collision_is_distinguished() {
        let w = generate_scenario(1, 1, 1, 11).unwrap();
        let o = &w.objects[0];
        let q = MotionQuery {
            start: Configuration::new(o.center.x, o.center.y, 0.0),
            goals: vec![Configuration::new(-0.1, 0.6, 0.0)],
            moving_radius: 0.02,
            ignore: BTreeSet::new(),
            bounds: w.bounds(),
            max_iterations: 100,
            seed: 1,
        };
        assert_eq!(plan_path(&w, &q).unwrap_err(), MotionError::StartInCollision);
    }

    #[test]
    fn seed_determinism() {
        let w = generate_scenario(16, 2, 2, 21).unwrap();
        let q = MotionQuery {
            start: Configuration::new(-0.12, 0.4, 0.0),
            goals: vec![Configuration::new(0.9, 0.7, 0.0)],
            moving_radius: 0.02,
            ignore: BTreeSet::new(),
            bounds: w.bounds(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 77,
        };
        let a = plan_path(&w, &q).unwrap();
        let b = plan_path(&w, &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pick_and_place_lone_object() {
        let w = generate_scenario(1, 1, 1, 31).unwrap();
        let robot = w.robots[0].clone();
        let object = w.objects[0].clone();
        let dest = Point::new(
            w.safe_regions[0].rect.x + 0.08,
            w.safe_regions[0].rect.y + 0.08,
        );
        let plans =
            plan_pick_and_place(&w, &robot, robot.home, &object, dest, PI / 18.0, 9).unwrap();
        validate_plan(
            &w,
            &plans.approach,
            &robot.home,
            &[plans.grasp],
            robot.ee_radius,
            &BTreeSet::new(),
        )
        .unwrap();
        let ignore: BTreeSet<_> = [object.id.clone()].into();
        validate_plan(
            &w,
            &plans.transfer,
            &plans.grasp,
            &[Configuration::new(dest.x, dest.y, plans.grasp.theta)],
            robot.ee_radius + object.radius,
            &ignore,
        )
        .unwrap();
    }

    #[test]
    fn occupied_destination_fails_precheck() {
        let w = generate_scenario(2, 1, 1, 31).unwrap();
        let robot = w.robots[0].clone();
        let object = w.objects[0].clone();
        // Destination on top of the other on-table object.
        let dest = w.objects[1].center;
        let err =
            plan_pick_and_place(&w, &robot, robot.home, &object, dest, PI / 18.0, 9).unwrap_err();
        assert!(matches!(err, MotionError::TransferInfeasible(_)));
    }
}
