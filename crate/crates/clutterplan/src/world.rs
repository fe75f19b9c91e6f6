//! Geometric world model, scenario generation, and scenario persistence.
//!
//! The scenario PRNG is ChaCha8 seeded with the scenario seed, so generated
//! layouts reproduce bit-exactly across platforms.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{discs_overlap, Point, Rect};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(s: impl Into<String>) -> Self {
        ObjectId(s.into())
    }
}

impl std::fmt::Display for ObjectId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotId(pub String);

impl RobotId {
    pub fn new(s: impl Into<String>) -> Self {
        RobotId(s.into())
    }
}

impl std::fmt::Display for RobotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Target,
    Clutter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectStatus {
    OnTable,
    RemovedToSafe,
    Grasped,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDisc {
    pub id: ObjectId,
    pub center: Point,
    pub radius: f64,
    pub kind: ObjectKind,
    pub status: ObjectStatus,
}

/// Planar end-effector configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Configuration {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Configuration { x, y, theta }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub id: RobotId,
    pub base: Point,
    pub reach_min: f64,
    pub reach_max: f64,
    pub ee_radius: f64,
    pub home: Configuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeRegionOwner {
    Robot(RobotId),
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeRegion {
    pub rect: Rect,
    pub owner: SafeRegionOwner,
}

/// Placement grid pitch inside safe regions: twice the largest object
/// diameter, so any two placed objects cannot overlap.
pub const SAFE_GRID_PITCH: f64 = 0.16;

/// Largest object radius the generator will produce.
pub const MAX_OBJECT_RADIUS: f64 = 0.04;
pub const MIN_OBJECT_RADIUS: f64 = 0.02;

/// Extra clearance enforced between generated objects, on top of tangency.
const GENERATION_GAP: f64 = 0.01;

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Margin added around everything when computing the workspace bounds.
const WORKSPACE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceModel {
    pub table: Rect,
    pub objects: Vec<ObjectDisc>,
    pub robots: Vec<RobotModel>,
    pub safe_regions: Vec<SafeRegion>,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("placement failure: could not place object {0} within attempt budget")]
    PlacementFailure(usize),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl WorkspaceModel {
    /// Bounding rectangle of everything the end-effector may occupy: table,
    /// safe regions, and robot bases, expanded by a fixed margin.
    pub fn bounds(&self) -> Rect {
        let mut b = self.table;
        for sr in &self.safe_regions {
            b = b.union(&sr.rect);
        }
        for r in &self.robots {
            b = b.union(&Rect::new(r.base.x, r.base.y, 0.0, 0.0));
        }
        b.expand(WORKSPACE_MARGIN)
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectDisc> {
        self.objects.iter().find(|o| &o.id == id)
    }

    pub fn object_mut(&mut self, id: &ObjectId) -> Option<&mut ObjectDisc> {
        self.objects.iter_mut().find(|o| &o.id == id)
    }

    pub fn robot(&self, id: &RobotId) -> Option<&RobotModel> {
        self.robots.iter().find(|r| &r.id == id)
    }

    pub fn targets(&self) -> impl Iterator<Item = &ObjectDisc> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Target)
    }

    pub fn on_table(&self) -> impl Iterator<Item = &ObjectDisc> {
        self.objects
            .iter()
            .filter(|o| o.status == ObjectStatus::OnTable)
    }

    /// Safe regions usable by the given robot (owned or shared).
    pub fn safe_regions_for<'a>(
        &'a self,
        robot: &'a RobotId,
    ) -> impl Iterator<Item = &'a SafeRegion> + 'a {
        self.safe_regions.iter().filter(move |sr| match &sr.owner {
            SafeRegionOwner::Robot(r) => r == robot,
            SafeRegionOwner::Shared => true,
        })
    }

    /// True iff a disc at `center` overlaps no on-table object outside
    /// `ignore` and lies inside the workspace bounds. Touching is free.
    pub fn disc_free(&self, center: &Point, radius: f64, ignore: &BTreeSet<ObjectId>) -> bool {
        if !self.bounds().contains_disc(center, radius) {
            return false;
        }
        self.on_table()
            .filter(|o| !ignore.contains(&o.id))
            .all(|o| !discs_overlap(center, radius, &o.center, o.radius))
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), WorldError> {
        let fail = |m: &str| Err(WorldError::InvariantViolation(m.to_string()));
        for o in &self.objects {
            if o.radius <= 0.0 {
                return fail("object radius > 0");
            }
            if o.status == ObjectStatus::OnTable && !self.table.contains_disc(&o.center, o.radius)
            {
                return fail("on_table objects lie fully inside the table");
            }
            if o.status == ObjectStatus::RemovedToSafe {
                if o.kind == ObjectKind::Target {
                    return fail("targets are retrieved, not removed_to_safe");
                }
                if !self
                    .safe_regions
                    .iter()
                    .any(|sr| sr.rect.contains(&o.center))
                {
                    return fail("removed_to_safe objects lie inside a safe region");
                }
            }
        }
        let on_table: Vec<&ObjectDisc> = self.on_table().collect();
        for (i, a) in on_table.iter().enumerate() {
            for b in &on_table[i + 1..] {
                if discs_overlap(&a.center, a.radius, &b.center, b.radius) {
                    return fail("objects pairwise non-overlapping");
                }
            }
        }
        let t = self.targets().count();
        if t == 0 {
            return fail("at least one target");
        }
        if t < self.robots.len() {
            return fail("T >= R");
        }
        for r in &self.robots {
            if !(0.0 < r.reach_min && r.reach_min < r.reach_max) {
                return fail("0 < reach_min < reach_max");
            }
            if r.ee_radius <= 0.0 {
                return fail("ee_radius > 0");
            }
            if self.table.contains_strict(&r.base) {
                return fail("robot bases lie outside the table interior");
            }
        }
        let clutter = self
            .objects
            .iter()
            .filter(|o| o.kind == ObjectKind::Clutter)
            .count();
        for sr in &self.safe_regions {
            if sr.rect.intersects(&self.table) {
                return fail("safe regions disjoint from the table");
            }
            let cols = (sr.rect.w / SAFE_GRID_PITCH).floor() as usize;
            let rows = (sr.rect.h / SAFE_GRID_PITCH).floor() as usize;
            if cols * rows < clutter {
                return fail("safe region can host all clutter");
            }
        }
        if self.safe_regions.len() < self.robots.len() {
            return fail("at least one safe region per robot");
        }
        Ok(())
    }
}

/// Default table: 1.0 m x 0.8 m with the origin at the lower-left corner.
pub const TABLE: Rect = Rect::new(0.0, 0.0, 1.0, 0.8);

fn default_robots(n_robots: usize) -> Vec<RobotModel> {
    // Bases centered on opposite short edges; every robot reaches the
    // whole table so allocation is driven by clutter, not reachability.
    let spots = [Point::new(-0.12, 0.4), Point::new(1.12, 0.4)];
    (0..n_robots)
        .map(|i| {
            let base = spots[i % spots.len()];
            RobotModel {
                id: RobotId::new(format!("r{}", i + 1)),
                base,
                reach_min: 0.05,
                reach_max: 1.4,
                ee_radius: 0.02,
                home: Configuration::new(base.x, base.y, 0.0),
            }
        })
        .collect()
}

fn default_safe_regions(robots: &[RobotModel], n_clutter: usize) -> Vec<SafeRegion> {
    // Square-ish grid of cells sized for the worst case where one robot
    // removes every clutter object.
    let cells = n_clutter.max(1);
    let cols = (cells as f64).sqrt().ceil() as usize;
    let rows = cells.div_ceil(cols);
    let w = cols as f64 * SAFE_GRID_PITCH;
    let h = rows as f64 * SAFE_GRID_PITCH;
    robots
        .iter()
        .enumerate()
        .map(|(i, r)| {
            // Alternate below / above the table.
            let y = if i % 2 == 0 {
                TABLE.y - 0.05 - h
            } else {
                TABLE.max_y() + 0.05
            };
            SafeRegion {
                rect: Rect::new(TABLE.x, y, w, h),
                owner: SafeRegionOwner::Robot(r.id.clone()),
            }
        })
        .collect()
}

/// Generates a random scenario: `n_objects` discs on the table, the first
/// `n_targets` of them targets, `n_robots` robots with per-robot safe
/// regions. Deterministic for fixed arguments.
pub fn generate_scenario(
    n_objects: usize,
    n_targets: usize,
    n_robots: usize,
    seed: u64,
) -> Result<WorkspaceModel, WorldError> {
    assert!(n_robots >= 1, "n_robots >= 1");
    assert!(n_targets >= n_robots, "n_targets >= n_robots");
    assert!(n_objects >= n_targets, "n_objects >= n_targets");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(Point, f64)> = Vec::with_capacity(n_objects);
    let mut objects = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        let radius = rng.gen_range(MIN_OBJECT_RADIUS..=MAX_OBJECT_RADIUS);
        let mut found = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = rng.gen_range(TABLE.x + radius..=TABLE.max_x() - radius);
            let y = rng.gen_range(TABLE.y + radius..=TABLE.max_y() - radius);
            let c = Point::new(x, y);
            if placed
                .iter()
                .all(|(pc, pr)| !discs_overlap(&c, radius + GENERATION_GAP, pc, *pr))
            {
                found = Some(c);
                break;
            }
        }
        let center = found.ok_or(WorldError::PlacementFailure(i))?;
        placed.push((center, radius));
        let kind = if i < n_targets {
            ObjectKind::Target
        } else {
            ObjectKind::Clutter
        };
        let id = match kind {
            ObjectKind::Target => ObjectId::new(format!("t{i:02}")),
            ObjectKind::Clutter => ObjectId::new(format!("o{i:02}")),
        };
        objects.push(ObjectDisc {
            id,
            center,
            radius,
            kind,
            status: ObjectStatus::OnTable,
        });
    }
    let robots = default_robots(n_robots);
    let safe_regions = default_safe_regions(&robots, n_objects - n_targets);
    let world = WorkspaceModel {
        table: TABLE,
        objects,
        robots,
        safe_regions,
        seed,
    };
    world.validate()?;
    Ok(world)
}

// --- persistence -----------------------------------------------------------
//
// Scenario file schema (JSON): table{w,h}, objects[{id,x,y,r,kind}],
// robots[{id,bx,by,reach_min,reach_max,ee_radius}],
// safe_regions[{x,y,w,h,owner}], seed. Lengths in meters. The table origin
// is (0, 0). Object statuses are not persisted; a scenario file always
// describes an initial, all-on-table state.

#[derive(Serialize, Deserialize)]
struct TableFile {
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    id: String,
    x: f64,
    y: f64,
    r: f64,
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct RobotFile {
    id: String,
    bx: f64,
    by: f64,
    reach_min: f64,
    reach_max: f64,
    ee_radius: f64,
}

#[derive(Serialize, Deserialize)]
struct SafeRegionFile {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    owner: String,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    table: TableFile,
    objects: Vec<ObjectFile>,
    robots: Vec<RobotFile>,
    safe_regions: Vec<SafeRegionFile>,
    seed: u64,
}

pub fn scenario_to_json(world: &WorkspaceModel) -> String {
    let file = ScenarioFile {
        table: TableFile {
            w: world.table.w,
            h: world.table.h,
        },
        objects: world
            .objects
            .iter()
            .map(|o| ObjectFile {
                id: o.id.0.clone(),
                x: o.center.x,
                y: o.center.y,
                r: o.radius,
                kind: match o.kind {
                    ObjectKind::Target => "target".into(),
                    ObjectKind::Clutter => "clutter".into(),
                },
            })
            .collect(),
        robots: world
            .robots
            .iter()
            .map(|r| RobotFile {
                id: r.id.0.clone(),
                bx: r.base.x,
                by: r.base.y,
                reach_min: r.reach_min,
                reach_max: r.reach_max,
                ee_radius: r.ee_radius,
            })
            .collect(),
        safe_regions: world
            .safe_regions
            .iter()
            .map(|sr| SafeRegionFile {
                x: sr.rect.x,
                y: sr.rect.y,
                w: sr.rect.w,
                h: sr.rect.h,
                owner: match &sr.owner {
                    SafeRegionOwner::Robot(r) => r.0.clone(),
                    SafeRegionOwner::Shared => "shared".into(),
                },
            })
            .collect(),
        seed: world.seed,
    };
    serde_json::to_string_pretty(&file).expect("scenario serialization")
}

pub fn scenario_from_json(text: &str) -> Result<WorkspaceModel, WorldError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| WorldError::SchemaError {
        path: e
            .to_string()
            .split(" at ")
            .nth(1)
            .unwrap_or("?")
            .to_string(),
        message: e.to_string(),
    })?;
    let objects = file
        .objects
        .into_iter()
        .map(|o| {
            let kind = match o.kind.as_str() {
                "target" => ObjectKind::Target,
                "clutter" => ObjectKind::Clutter,
                other => {
                    return Err(WorldError::SchemaError {
                        path: format!("objects[{}].kind", o.id),
                        message: format!("unknown kind {other:?}"),
                    })
                }
            };
            Ok(ObjectDisc {
                id: ObjectId::new(o.id),
                center: Point::new(o.x, o.y),
                radius: o.r,
                kind,
                status: ObjectStatus::OnTable,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let robots: Vec<RobotModel> = file
        .robots
        .into_iter()
        .map(|r| RobotModel {
            id: RobotId::new(r.id),
            base: Point::new(r.bx, r.by),
            reach_min: r.reach_min,
            reach_max: r.reach_max,
            ee_radius: r.ee_radius,
            home: Configuration::new(r.bx, r.by, 0.0),
        })
        .collect();
    let safe_regions = file
        .safe_regions
        .into_iter()
        .map(|sr| SafeRegion {
            rect: Rect::new(sr.x, sr.y, sr.w, sr.h),
            owner: if sr.owner == "shared" {
                SafeRegionOwner::Shared
            } else {
                SafeRegionOwner::Robot(RobotId::new(sr.owner))
            },
        })
        .collect();
    let world = WorkspaceModel {
        table: Rect::new(0.0, 0.0, file.table.w, file.table.h),
        objects,
        robots,
        safe_regions,
        seed: file.seed,
    };
    world.validate()?;
    Ok(world)
}

pub fn save_scenario(world: &WorkspaceModel, path: &Path) -> Result<(), WorldError> {
    std::fs::write(path, scenario_to_json(world))?;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<WorkspaceModel, WorldError> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_regime_scenario() {
        let w = generate_scenario(6, 2, 2, 7).unwrap();
        assert_eq!(w.objects.len(), 6);
        assert_eq!(w.targets().count(), 2);
        w.validate().unwrap();
    }

    #[test]
    fn minimal_scenario() {
        let w = generate_scenario(1, 1, 1, 42).unwrap();
        assert_eq!(w.objects.len(), 1);
        assert_eq!(w.targets().count(), 1);
        w.validate().unwrap();
    }

    #[test]
    fn dense_scenario_passes_pairwise_overlap_oracle() {
        let w = generate_scenario(64, 2, 2, 3).unwrap();
        assert_eq!(w.objects.len(), 64);
        // O(n^2) overlap oracle.
        for (i, a) in w.objects.iter().enumerate() {
            for b in &w.objects[i + 1..] {
                assert!(
                    a.center.dist(&b.center) >= a.radius + b.radius,
                    "{} overlaps {}",
                    a.id,
                    b.id
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(12, 2, 2, 99).unwrap();
        let b = generate_scenario(12, 2, 2, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disc_free_conventions() {
        let w = generate_scenario(1, 1, 1, 5).unwrap();
        let o = &w.objects[0];
        let empty = BTreeSet::new();
        // Concentric with an on-table object.
        assert!(!w.disc_free(&o.center, 0.01, &empty));
        // Same disc but ignored.
        let ignore: BTreeSet<_> = [o.id.clone()].into();
        assert!(w.disc_free(&o.center, 0.01, &ignore));
        // Tangent disc is free (closed free space).
        let c = Point::new(o.center.x + o.radius + 0.02, o.center.y);
        assert!(w.disc_free(&c, 0.02, &empty));
    }

    #[test]
    fn roundtrip_is_exact() {
        let w = generate_scenario(6, 2, 2, 7).unwrap();
        let back = scenario_from_json(&scenario_to_json(&w)).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn load_rejects_overlapping_objects() {
        let mut w = generate_scenario(2, 1, 1, 7).unwrap();
        w.objects[1].center = w.objects[0].center;
        let err = scenario_from_json(&scenario_to_json(&w)).unwrap_err();
        assert!(err.to_string().contains("pairwise non-overlapping"));
    }

    #[test]
    fn load_rejects_fewer_targets_than_robots() {
        let w = generate_scenario(4, 2, 2, 7).unwrap();
        let json = scenario_to_json(&w).replacen("\"target\"", "\"clutter\"", 1);
        let err = scenario_from_json(&json).unwrap_err();
        assert!(err.to_string().contains("T >= R"));
    }
}
