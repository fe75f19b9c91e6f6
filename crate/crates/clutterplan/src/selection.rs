//! Obstacle selection: the feasible grasp-angle fan for a robot-target
//! pair, the inflated wedge it spans, and the induced rearrangement set.
//!
//! The fan is computed with all clutter ignored; an offset is valid when
//! its grasp pose lies in the robot's reach annulus and inside workspace
//! bounds. The two extreme angles bound a wedge from the target toward the
//! robot; the wedge is truncated at the farthest obstacle it touches and
//! inflated by the end-effector radius. On-table objects intersecting the
//! inflated region form the rearrangement set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unit, Point, Sector};
use crate::motion::grasp_pose;
use crate::world::{ObjectId, ObjectKind, ObjectStatus, RobotId, WorkspaceModel};

/// Default grasp-angle discretization step: 10 degrees, 19 samples across
/// the side-grasp range.
pub const DEFAULT_ANGLE_STEP: f64 = std::f64::consts::PI / 18.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspFan {
    pub robot: RobotId,
    pub target: ObjectId,
    /// Direction from the target center toward the robot base, radians.
    pub axis: f64,
    /// Valid offsets relative to the axis, ascending.
    pub valid_angles: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTriangle {
    /// Target center plus the two ray endpoints.
    pub vertices: [Point; 3],
    pub inflation: f64,
    pub selected: BTreeSet<ObjectId>,
    /// The truncated wedge the vertices outline. Membership tests use this
    /// region exactly; the vertices are its corner points.
    pub region: Sector,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("no feasible grasp angle for target {0}")]
    NoFeasibleGrasp(ObjectId),
}

/// Samples offsets over [-pi/2, +pi/2] and keeps those whose grasp pose is
/// reachable, ignoring all clutter.
pub fn feasible_grasp_angles(
    world: &WorkspaceModel,
    robot: &RobotId,
    target: &ObjectId,
    step: f64,
) -> Result<GraspFan, SelectionError> {
    assert!(step > 0.0, "step > 0");
    let robot = world.robot(robot).expect("robot exists");
    let t = world.object(target).expect("target exists");
    assert_eq!(t.status, ObjectStatus::OnTable, "target on table");
    let axis = robot.base.sub(&t.center).angle();
    let half = std::f64::consts::FRAC_PI_2;
    let n = (2.0 * half / step + 1e-9).floor() as i64;
    let bounds = world.bounds();
    let mut valid = Vec::new();
    for k in 0..=n {
        let offset = -half + k as f64 * step;
        let pose = grasp_pose(t, axis, offset, robot.ee_radius);
        let d = pose.position().dist(&robot.base);
        if d >= robot.reach_min && d <= robot.reach_max && bounds.contains(&pose.position()) {
            valid.push(offset);
        }
    }
    if valid.is_empty() {
        return Err(SelectionError::NoFeasibleGrasp(target.clone()));
    }
    Ok(GraspFan {
        robot: robot.id.clone(),
        target: t.id.clone(),
        axis,
        alpha: *valid.last().unwrap(),
        beta: valid[0],
        valid_angles: valid,
    })
}

/// Builds the inflated wedge spanned by the fan and collects the objects
/// intersecting it.
pub fn build_selection_triangle(
    world: &WorkspaceModel,
    robot: &RobotId,
    fan: &GraspFan,
) -> SelectionTriangle {
    assert!(!fan.valid_angles.is_empty());
    let robot = world.robot(robot).expect("robot exists");
    let target = world.object(&fan.target).expect("target exists");
    let ee = robot.ee_radius;
    let apex = target.center;

    // Truncation: farthest obstacle whose disc touches the (unbounded)
    // wedge padded by the inflation radius, measured as radial extent plus
    // the obstacle radius. Minimum length when nothing intersects.
    let unbounded = Sector {
        apex,
        axis: fan.axis,
        alpha: fan.alpha,
        beta: fan.beta,
        length: f64::INFINITY,
    };
    let mut length: f64 = ee;
    for o in world.on_table() {
        if o.kind == ObjectKind::Target {
            continue;
        }
        if unbounded.distance(&o.center) <= ee + o.radius {
            length = length.max(apex.dist(&o.center) + o.radius);
        }
    }

    let region = Sector {
        apex,
        axis: fan.axis,
        alpha: fan.alpha,
        beta: fan.beta,
        length,
    };
    let vertices = [
        apex,
        apex.add_scaled(unit(fan.axis + fan.alpha), length),
        apex.add_scaled(unit(fan.axis + fan.beta), length),
    ];
    // Only clutter is ever re-arranged; another robot's target must stay
    // where its own task expects it.
    let selected: BTreeSet<ObjectId> = world
        .on_table()
        .filter(|o| o.kind != ObjectKind::Target)
        .filter(|o| region.distance(&o.center) <= ee + o.radius)
        .map(|o| o.id.clone())
        .collect();
    SelectionTriangle {
        vertices,
        inflation: ee,
        selected,
        region,
    }
}

/// Composite: fan then wedge; returns the rearrangement set.
pub fn select_obstacles(
    world: &WorkspaceModel,
    robot: &RobotId,
    target: &ObjectId,
    step: f64,
) -> Result<BTreeSet<ObjectId>, SelectionError> {
    let fan = feasible_grasp_angles(world, robot, target, step)?;
    Ok(build_selection_triangle(world, robot, &fan).selected)
}

/// Full triangle for debugging / rendering.
pub fn selection_triangle(
    world: &WorkspaceModel,
    robot: &RobotId,
    target: &ObjectId,
    step: f64,
) -> Result<SelectionTriangle, SelectionError> {
    let fan = feasible_grasp_angles(world, robot, target, step)?;
    Ok(build_selection_triangle(world, robot, &fan))
}
