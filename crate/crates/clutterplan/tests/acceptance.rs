//! Acceptance gate: one test per release criterion. Every test prints a
//! single `[PASS] criterion N` line on success, so `cargo test --test
//! acceptance -- --nocapture` reads as a checklist.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clutterplan::allocation::{
    allocate, allocate_from_sets, brute_force_allocate, corrected_count, utility,
    CorrectionMode, SetTable,
};
use clutterplan::executor::{replay_validate, run, ExecutionReport, ExecutorConfig};
use clutterplan::geometry::{unit, wrap_angle, Point, Rect, PI};
use clutterplan::harness::{linear_fit, report_rows, run_seed, spearman, MetricsTable};
use clutterplan::motion::GRASP_STANDOFF;
use clutterplan::selection::{selection_triangle, SelectionTriangle, DEFAULT_ANGLE_STEP};
use clutterplan::taskgraph::TEMPLATE_NODES;
use clutterplan::world::{
    generate_scenario, Configuration, ObjectDisc, ObjectId, ObjectKind, ObjectStatus,
    RobotId, RobotModel, SafeRegion, SafeRegionOwner, WorkspaceModel,
};

fn oid(s: &str) -> ObjectId {
    ObjectId::new(s)
}

fn rid(s: &str) -> RobotId {
    RobotId::new(s)
}

// ---------------------------------------------------------------------------
// Criterion 1: utility math exactness against a set-algebra oracle.
// ---------------------------------------------------------------------------

/// Test-side oracle: objects in `own` not contained in any set claimed by
/// the partial allocation (excluding the queried pair itself).
fn oracle_union_corrected(
    sets: &SetTable,
    partial: &[(RobotId, ObjectId)],
    robot: &RobotId,
    task: &ObjectId,
) -> Option<usize> {
    let own = sets.get(&(robot.clone(), task.clone()))?.as_ref()?;
    let mut claimed: BTreeSet<ObjectId> = BTreeSet::new();
    for (r, t) in partial {
        if r == robot && t == task {
            continue;
        }
        if let Some(Some(s)) = sets.get(&(r.clone(), t.clone())) {
            claimed.extend(s.iter().cloned());
        }
    }
    Some(own.difference(&claimed).count())
}

/// Test-side literal pairwise formula with clamp at zero.
fn oracle_pairwise_corrected(
    sets: &SetTable,
    partial: &[(RobotId, ObjectId)],
    robot: &RobotId,
    task: &ObjectId,
) -> Option<usize> {
    let own = sets.get(&(robot.clone(), task.clone()))?.as_ref()?;
    let mut count = own.len() as i64;
    for (r, t) in partial {
        if r == robot && t == task {
            continue;
        }
        if let Some(Some(s)) = sets.get(&(r.clone(), t.clone())) {
            count -= own.intersection(s).count() as i64;
        }
    }
    Some(count.max(0) as usize)
}

/// A random set system: 2-3 robots, 2-4 tasks, object universe of 12.
fn random_set_system(
    rng: &mut ChaCha8Rng,
) -> (SetTable, Vec<RobotId>, Vec<ObjectId>, Vec<(RobotId, ObjectId)>) {
    let n_robots = rng.gen_range(2..=3usize);
    let n_tasks = rng.gen_range(2..=4usize);
    let robots: Vec<RobotId> = (0..n_robots).map(|i| rid(&format!("r{i}"))).collect();
    let tasks: Vec<ObjectId> = (0..n_tasks).map(|i| oid(&format!("t{i}"))).collect();
    let universe: Vec<ObjectId> = (0..12).map(|i| oid(&format!("o{i:02}"))).collect();
    let mut sets = SetTable::new();
    for r in &robots {
        for t in &tasks {
            let set = if rng.gen_bool(0.1) {
                None
            } else {
                let mut s = BTreeSet::new();
                for o in &universe {
                    if rng.gen_bool(0.3) {
                        s.insert(o.clone());
                    }
                }
                Some(s)
            };
            sets.insert((r.clone(), t.clone()), set);
        }
    }
    // A random partial allocation covering a prefix of the tasks.
    let covered = rng.gen_range(0..=n_tasks);
    let partial: Vec<(RobotId, ObjectId)> = tasks[..covered]
        .iter()
        .map(|t| (robots[rng.gen_range(0..n_robots)].clone(), t.clone()))
        .collect();
    (sets, robots, tasks, partial)
}

#[test]
fn criterion_1_utility_exactness() {
    assert_eq!(utility(Some(0)), 1.0);
    assert_eq!(utility(Some(3)), 0.25);
    assert_eq!(utility(None), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for _ in 0..500 {
        let (sets, robots, tasks, partial) = random_set_system(&mut rng);
        for r in &robots {
            for t in &tasks {
                let got_union = corrected_count(&sets, &partial, r, t, CorrectionMode::Union);
                assert_eq!(got_union, oracle_union_corrected(&sets, &partial, r, t));
                let got_pair =
                    corrected_count(&sets, &partial, r, t, CorrectionMode::PairwiseEq1);
                assert_eq!(got_pair, oracle_pairwise_corrected(&sets, &partial, r, t));
            }
        }
    }

    // Mode agreement whenever the claimed sets are mutually disjoint.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1D);
    let mut checked = 0;
    'outer: for _ in 0..2000 {
        let (sets, robots, tasks, partial) = random_set_system(&mut rng);
        let claimed: Vec<&BTreeSet<ObjectId>> = partial
            .iter()
            .filter_map(|(r, t)| sets.get(&(r.clone(), t.clone())).and_then(|s| s.as_ref()))
            .collect();
        for i in 0..claimed.len() {
            for j in i + 1..claimed.len() {
                if claimed[i].intersection(claimed[j]).next().is_some() {
                    continue 'outer;
                }
            }
        }
        for r in &robots {
            for t in &tasks {
                // The disjointness condition concerns the overlaps that the
                // two formulas treat differently: the claimed sets pairwise.
                assert_eq!(
                    corrected_count(&sets, &partial, r, t, CorrectionMode::Union),
                    corrected_count(&sets, &partial, r, t, CorrectionMode::PairwiseEq1),
                    "modes disagree on a disjoint system"
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 500, "too few disjoint systems sampled: {checked}");
    println!("[PASS] criterion 1: utility exactness ({checked} disjoint-system checks)");
}

// ---------------------------------------------------------------------------
// Criterion 2: assignment constraint and greedy-consistency replay.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_assignment_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut done = 0;
    let mut seed = 0u64;
    while done < 1000 {
        seed += 1;
        let n = rng.gen_range(4..=14usize);
        let Ok(world) = generate_scenario(n, 2, 2, seed) else {
            continue;
        };
        let alloc = allocate(&world, DEFAULT_ANGLE_STEP, seed, CorrectionMode::Union)
            .expect("allocation succeeds");
        // Eq. 6: every task assigned to exactly one robot.
        for target in world.targets() {
            let holders: usize = world
                .robots
                .iter()
                .map(|r| alloc.x(&r.id, &target.id) as usize)
                .sum();
            assert_eq!(holders, 1, "task {} held by {holders} robots", target.id);
        }
        // Greedy-consistency replay: at every step the chosen robot attains
        // the maximum utility among that step's evaluations.
        for step in &alloc.steps {
            let max = step
                .evaluations
                .values()
                .map(|e| e.utility)
                .fold(f64::NEG_INFINITY, f64::max);
            let chosen = &step.evaluations[&step.chosen];
            assert_eq!(chosen.utility, max, "non-greedy choice at {}", step.task);
        }
        done += 1;
    }
    println!("[PASS] criterion 2: assignment constraint over {done} allocations");
}

// ---------------------------------------------------------------------------
// Criterion 3: greedy equals exhaustive search on disjoint instances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_oracle_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let robots = [rid("r0"), rid("r1")];
    let mut instances = 0;
    while instances < 120 {
        let n_tasks = rng.gen_range(2..=4usize);
        let tasks: Vec<ObjectId> = (0..n_tasks).map(|i| oid(&format!("t{i}"))).collect();
        // Disjoint sets: every (robot, task) draws from its own slice of
        // the universe, so corrections never interact; distinct utilities
        // come from distinct set sizes per column.
        let mut sets = SetTable::new();
        let mut next = 0usize;
        let mut sizes: Vec<Vec<usize>> = vec![vec![0; n_tasks]; 2];
        for (ri, r) in robots.iter().enumerate() {
            for (ti, t) in tasks.iter().enumerate() {
                let size = loop {
                    let s = rng.gen_range(0..=6usize);
                    if ti == 0 || sizes[ri][..ti].iter().all(|prev| *prev != s) {
                        break s;
                    }
                };
                sizes[ri][ti] = size;
                let set: BTreeSet<ObjectId> =
                    (next..next + size).map(|i| oid(&format!("o{i:03}"))).collect();
                next += size;
                sets.insert((r.clone(), t.clone()), Some(set));
            }
        }
        // Distinct per-column utilities so the optimum is unique.
        if (0..n_tasks).any(|ti| sizes[0][ti] == sizes[1][ti]) {
            continue;
        }
        let greedy = allocate_from_sets(&sets, &robots, &tasks, CorrectionMode::Union, 7)
            .expect("greedy succeeds");
        let matrix: Vec<Vec<f64>> = robots
            .iter()
            .map(|r| {
                tasks
                    .iter()
                    .map(|t| utility(corrected_count(&sets, &[], r, t, CorrectionMode::Union)))
                    .collect()
            })
            .collect();
        let (_, best) = brute_force_allocate(&matrix).expect("instance small");
        assert!(
            (greedy.total_utility - best).abs() < 1e-12,
            "greedy {} vs optimal {best}",
            greedy.total_utility
        );
        instances += 1;
    }
    println!("[PASS] criterion 3: greedy matches exhaustive optimum on {instances} instances");
}

// ---------------------------------------------------------------------------
// Criterion 4: selection vs a 1 mm grid geometry oracle.
// ---------------------------------------------------------------------------

const GRID: f64 = 0.001;
const BOUNDARY_MARGIN: f64 = 0.002;

/// Independent point-in-wedge test in polar coordinates.
fn grid_point_in_sector(p: &Point, tri: &SelectionTriangle) -> bool {
    let v = p.sub(&tri.region.apex);
    let rho = v.norm();
    if rho > tri.region.length {
        return false;
    }
    if rho == 0.0 {
        return true;
    }
    let rel = wrap_angle(v.angle() - tri.region.axis);
    rel >= tri.region.beta - 1e-12 && rel <= tri.region.alpha + 1e-12
}

/// Grid oracle: the object is selected iff some 1 mm grid point inside the
/// wedge lies within `inflation + radius` of the object center.
fn grid_oracle_selected(o: &ObjectDisc, tri: &SelectionTriangle, inflation: f64) -> bool {
    let reach = inflation + o.radius;
    let steps = (reach / GRID).ceil() as i64 + 1;
    for gx in -steps..=steps {
        for gy in -steps..=steps {
            let p = Point::new(o.center.x + gx as f64 * GRID, o.center.y + gy as f64 * GRID);
            if p.dist(&o.center) <= reach && grid_point_in_sector(&p, tri) {
                return true;
            }
        }
    }
    false
}

#[test]
fn criterion_4_selection_oracle() {
    let mut compared = 0;
    let mut worlds = 0;
    let mut seed = 0u64;
    while worlds < 200 {
        seed += 1;
        let Ok(world) = generate_scenario(10, 2, 2, 0xC4_000 + seed) else {
            continue;
        };
        worlds += 1;
        for robot in &world.robots {
            for target in world.targets() {
                let Ok(tri) = selection_triangle(&world, &robot.id, &target.id, DEFAULT_ANGLE_STEP)
                else {
                    continue;
                };
                let mut small: BTreeSet<ObjectId> = BTreeSet::new();
                let mut large: BTreeSet<ObjectId> = BTreeSet::new();
                for o in &world.objects {
                    if o.kind == ObjectKind::Target {
                        continue;
                    }
                    let threshold = tri.inflation + o.radius;
                    let gap = tri.region.distance(&o.center) - threshold;
                    if gap.abs() > BOUNDARY_MARGIN {
                        let oracle = grid_oracle_selected(o, &tri, tri.inflation);
                        assert_eq!(
                            oracle,
                            tri.selected.contains(&o.id),
                            "oracle mismatch for {} (world seed {})",
                            o.id,
                            world.seed
                        );
                        compared += 1;
                    }
                    if grid_oracle_selected(o, &tri, tri.inflation) {
                        small.insert(o.id.clone());
                    }
                    if grid_oracle_selected(o, &tri, 2.0 * tri.inflation) {
                        large.insert(o.id.clone());
                    }
                }
                // Inflation monotonicity: growing the inflation radius never
                // drops an object.
                assert!(
                    small.is_subset(&large),
                    "inflation monotonicity violated (world seed {})",
                    world.seed
                );
            }
        }
    }
    println!("[PASS] criterion 4: selection matches grid oracle ({compared} comparisons over {worlds} worlds)");
}

// ---------------------------------------------------------------------------
// Shared default sweep for criteria 5, 7, and 9.
// ---------------------------------------------------------------------------

struct Sweep {
    table: MetricsTable,
    runs: Vec<(WorkspaceModel, ExecutionReport)>,
}

fn default_sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let counts = [6usize, 8, 9, 12, 16, 20, 30, 49, 64];
        let reps = 3;
        let base_seed = 1u64;
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for &count in &counts {
            for rep in 0..reps {
                let seed = run_seed(base_seed, count, rep);
                let world = (0..16)
                    .find_map(|k| generate_scenario(count, 2, 2, seed + k).ok())
                    .expect("scenario generation");
                let report = run(&world, ExecutorConfig::default()).expect("allocation");
                rows.extend(report_rows(&report, count, rep, world.seed));
                runs.push((world, report));
            }
        }
        Sweep { table: MetricsTable { rows }, runs }
    })
}

#[test]
fn criterion_5_nodes_bound_and_regression() {
    let sweep = default_sweep();
    for row in &sweep.table.rows {
        assert!(
            row.nodes_visited <= TEMPLATE_NODES * row.depth as u64,
            "O(nd) bound violated: {} > {} * {}",
            row.nodes_visited,
            TEMPLATE_NODES,
            row.depth
        );
    }
    // Regress per task: every task fragment of the sweep is one point.
    let frags: Vec<_> = sweep
        .runs
        .iter()
        .flat_map(|(_, report)| report.fragments())
        .collect();
    assert!(frags.len() >= 50, "need >= 50 runs, got {}", frags.len());
    let xs: Vec<f64> = frags.iter().map(|f| f.depth as f64).collect();
    let ys: Vec<f64> = frags.iter().map(|f| f.nodes_visited as f64).collect();
    let fit = linear_fit(&xs, &ys);
    assert!(fit.r2 >= 0.95, "R^2 = {} < 0.95", fit.r2);
    println!(
        "[PASS] criterion 5: nodes_visited <= {TEMPLATE_NODES}*d on all {} rows, R^2 = {:.4}",
        sweep.table.rows.len(),
        fit.r2
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: exact depth on constructed corridor scenes.
// ---------------------------------------------------------------------------

/// A single-file corridor: one robot, one target, and `k` obstacles on the
/// straight line between them, with the reach chosen so only the head-on
/// grasp angle is feasible.
fn corridor_world(k: usize) -> WorkspaceModel {
    assert!(k <= 5);
    let base = Point::new(-0.12, 0.4);
    let target_center = Point::new(0.85, 0.4);
    let target_radius = 0.04;
    let ee = 0.02;
    let standoff = target_radius + ee + GRASP_STANDOFF;
    let dist = base.dist(&target_center);
    let mut objects = vec![ObjectDisc {
        id: oid("t00"),
        center: target_center,
        radius: target_radius,
        kind: ObjectKind::Target,
        status: ObjectStatus::OnTable,
    }];
    let axis = unit(base.sub(&target_center).angle());
    for i in 0..k {
        objects.push(ObjectDisc {
            id: oid(&format!("o{:02}", i + 1)),
            center: target_center.add_scaled(axis, 0.12 * (i + 1) as f64),
            radius: 0.03,
            kind: ObjectKind::Clutter,
            status: ObjectStatus::OnTable,
        });
    }
    let robot = RobotModel {
        id: rid("r1"),
        base,
        reach_min: 0.05,
        // Only the head-on grasp pose stays inside the annulus.
        reach_max: dist - standoff + 1e-4,
        ee_radius: ee,
        home: Configuration::new(base.x, base.y, 0.0),
    };
    let safe = SafeRegion {
        rect: Rect::new(0.0, -0.53, 0.48, 0.48),
        owner: SafeRegionOwner::Robot(rid("r1")),
    };
    let world = WorkspaceModel {
        table: Rect::new(0.0, 0.0, 1.0, 0.8),
        objects,
        robots: vec![robot],
        safe_regions: vec![safe],
        seed: 6,
    };
    world.validate().expect("corridor world valid");
    world
}

#[test]
fn criterion_6_corridor_depth() {
    for k in [0usize, 1, 2, 3, 5] {
        let world = corridor_world(k);
        let report = run(&world, ExecutorConfig::default()).expect("allocation");
        assert!(report.success, "corridor k={k} failed");
        let frags: Vec<_> = report.fragments().collect();
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0].depth, k + 1, "k={k}: depth {}", frags[0].depth);
        assert_eq!(frags[0].rearranged as usize, k, "k={k}");
        replay_validate(&world, &report.events, true).expect("replay");
    }
    println!("[PASS] criterion 6: corridor scenes give d = k+1 and rearranged = k for k in {{0,1,2,3,5}}");
}

// ---------------------------------------------------------------------------
// Criterion 7: end-to-end success rate and depth trend.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_solvability_and_trend() {
    let sweep = default_sweep();
    let rate = sweep.table.success_rate();
    assert!(rate >= 0.9, "success rate {rate} < 0.9");
    let by_count: BTreeMap<usize, f64> = sweep.table.mean_depth_by_count();
    assert!(by_count.len() >= 8, "too few successful count groups");
    let xs: Vec<f64> = by_count.keys().map(|c| *c as f64).collect();
    let ys: Vec<f64> = by_count.values().copied().collect();
    let rho = spearman(&xs, &ys);
    assert!(rho >= 0.8, "spearman rho {rho} < 0.8");
    assert!(
        ys.last().unwrap() > ys.first().unwrap(),
        "mean d not larger at 64 than at 6"
    );
    println!(
        "[PASS] criterion 7: success rate {:.1}%, spearman rho = {:.4}",
        rate * 100.0,
        rho
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: failure injection increases depth.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_failure_injection_depth() {
    let mut d0_total = 0.0;
    let mut d3_total = 0.0;
    let mut pairs = 0;
    let mut seed = 0u64;
    while pairs < 20 {
        seed += 1;
        let Ok(world) = generate_scenario(16, 2, 2, 0xC8_000 + seed) else {
            continue;
        };
        let clean = run(&world, ExecutorConfig::default()).expect("allocation");
        let noisy = run(
            &world,
            ExecutorConfig { failure_probability: 0.3, ..Default::default() },
        )
        .expect("allocation");
        if !clean.success || !noisy.success {
            continue;
        }
        d0_total += clean.mean_depth();
        d3_total += noisy.mean_depth();
        pairs += 1;
    }
    let d0 = d0_total / pairs as f64;
    let d3 = d3_total / pairs as f64;
    assert!(d3 > d0, "mean d at p=0.3 ({d3}) not above p=0 ({d0})");
    println!("[PASS] criterion 8: mean d {d3:.2} at p=0.3 > {d0:.2} at p=0 over {pairs} paired seeds");
}

// ---------------------------------------------------------------------------
// Criterion 9: offline replay safety for every successful sweep run.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_replay_safety() {
    let sweep = default_sweep();
    let mut validated = 0;
    for (world, report) in &sweep.runs {
        if !report.success {
            continue;
        }
        replay_validate(world, &report.events, true)
            .unwrap_or_else(|e| panic!("replay failed (seed {}): {e}", world.seed));
        validated += 1;
    }
    assert!(validated > 0);
    println!("[PASS] criterion 9: replay validated {validated} successful runs");
}
