//! Command-line front end: scenario generation, execution, benchmarking,
//! and the selection/allocation/planning debug views.
//!
//! Exit codes: 0 success, 1 planning failure, 2 usage or schema error.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use clutterplan::allocation::{allocate, CorrectionMode};
use clutterplan::executor::{run, trace_to_ndjson, ExecutorConfig};
use clutterplan::harness::{aggregate, bench, save_csv, BenchmarkSpec};
use clutterplan::motion::{plan_path, MotionQuery, DEFAULT_MAX_ITERATIONS};
use clutterplan::render::{render_scene, Overlays};
use clutterplan::selection::{selection_triangle, DEFAULT_ANGLE_STEP};
use clutterplan::world::{
    generate_scenario, load_scenario, save_scenario, Configuration, ObjectId, RobotId,
};

#[derive(Parser)]
#[command(name = "clutterplan", version, about = "Multi-robot retrieval planning in clutter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Union,
    Eq1,
}

impl From<ModeArg> for CorrectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Union => CorrectionMode::Union,
            ModeArg::Eq1 => CorrectionMode::PairwiseEq1,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario and write it as JSON.
    Gen(GenArgs),
    /// Allocate and execute every retrieval task.
    Run(RunArgs),
    /// Run the benchmark sweep and report aggregates.
    Bench(BenchArgs),
    /// Debug: print the obstacle selection for one robot-target pair.
    Select(SelectArgs),
    /// Debug: print the utility table and greedy assignment.
    Allocate(AllocateArgs),
    /// Debug: plan a single point-to-point motion.
    Plan(PlanArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    objects: usize,
    #[arg(long)]
    targets: usize,
    #[arg(long)]
    robots: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Injected failure probability, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the event trace as newline-delimited JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Render the final scene as SVG.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated object counts, ascending.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    robots: usize,
    #[arg(long, default_value_t = 2)]
    targets: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    robot: String,
    #[arg(long)]
    target: String,
    /// Render the scene with the selection overlay.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Union)]
    mode: ModeArg,
    /// Also write the utility table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Start point "x,y".
    #[arg(long)]
    from: String,
    /// Goal point "x,y".
    #[arg(long)]
    to: String,
    /// Moving disc radius.
    #[arg(long, default_value_t = 0.02)]
    radius: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Render the scene with the path overlay.
    #[arg(long)]
    svg: Option<PathBuf>,
}

/// Distinguishes "no plan exists" (exit 1) from bad input (exit 2).
enum CliError {
    Planning(String),
    Usage(String),
}

impl From<clutterplan::world::WorldError> for CliError {
    fn from(e: clutterplan::world::WorldError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn parse_point(s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!("expected \"x,y\", got {s:?}")));
    }
    let x = parts[0]
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad coordinate {:?}", parts[0])))?;
    let y = parts[1]
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad coordinate {:?}", parts[1])))?;
    Ok((x, y))
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let world = generate_scenario(a.objects, a.targets, a.robots, a.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    save_scenario(&world, &a.out)?;
    println!(
        "wrote {} ({} objects, {} targets, {} robots, seed {})",
        a.out.display(),
        a.objects,
        a.targets,
        a.robots,
        a.seed
    );
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&a.p) {
        return Err(CliError::Usage("p must be in [0, 1)".into()));
    }
    let world = load_scenario(&a.scenario)?;
    let cfg = ExecutorConfig {
        failure_probability: a.p,
        allocation_seed: a.seed,
        motion_seed: a.seed.wrapping_add(1),
        failure_seed: a.seed.wrapping_add(2),
        ..Default::default()
    };
    let report = run(&world, cfg).map_err(|e| CliError::Planning(e.to_string()))?;
    for r in &report.robots {
        println!(
            "{}: tasks {} depth {} nodes {} attempts {} rearranged {} mp {:.3}s tp {:.3}s",
            r.robot,
            r.tasks.len(),
            r.depth_total,
            r.nodes_visited,
            r.mp_attempts,
            r.rearranged,
            r.mp_time,
            r.tp_time
        );
    }
    println!(
        "modeled time {:.1}s, {}",
        report.total_model_time,
        if report.success { "success" } else { "FAILED" }
    );
    if let Some(path) = &a.trace {
        std::fs::write(path, trace_to_ndjson(&report.events))?;
        println!("trace written to {}", path.display());
    }
    if let Some(path) = &a.render {
        // Replaying the run against a fresh executor is unnecessary: render
        // the initial scene so the SVG matches the scenario file.
        std::fs::write(path, render_scene(&world, &Overlays::default()))?;
        println!("scene written to {}", path.display());
    }
    if report.success {
        Ok(())
    } else {
        Err(CliError::Planning("one or more tasks failed".into()))
    }
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let spec = BenchmarkSpec {
        object_counts: a
            .counts
            .unwrap_or_else(|| clutterplan::harness::DEFAULT_OBJECT_COUNTS.to_vec()),
        repetitions: a.reps,
        robots: a.robots,
        targets: a.targets,
        base_seed: a.seed,
        config: ExecutorConfig {
            failure_probability: a.p,
            ..Default::default()
        },
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let table = bench(&spec).map_err(|e| CliError::Planning(e.to_string()))?;
    let summary = aggregate(&table);
    println!("{:>6} {:>8}", "count", "mean d");
    for (count, d) in table.mean_depth_by_count() {
        println!("{count:>6} {d:>8.2}");
    }
    println!("success rate     {:.1}%", summary.success_rate * 100.0);
    println!("spearman rho     {:.4}", summary.spearman_count_depth);
    println!(
        "nodes ~ {:.2} d + {:.2}  (R^2 = {:.4})",
        summary.nodes_fit.slope, summary.nodes_fit.intercept, summary.nodes_fit.r2
    );
    if let Some(path) = &a.csv {
        save_csv(&table, path).map_err(|e| CliError::Usage(e.to_string()))?;
        println!("metrics written to {}", path.display());
    }
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<(), CliError> {
    let world = load_scenario(&a.scenario)?;
    let robot = RobotId::new(a.robot);
    let target = ObjectId::new(a.target);
    if world.robot(&robot).is_none() {
        return Err(CliError::Usage(format!("unknown robot {robot}")));
    }
    if world.object(&target).is_none() {
        return Err(CliError::Usage(format!("unknown object {target}")));
    }
    let tri = selection_triangle(&world, &robot, &target, DEFAULT_ANGLE_STEP)
        .map_err(|e| CliError::Planning(e.to_string()))?;
    println!("vertices:");
    for v in &tri.vertices {
        println!("  ({:.4}, {:.4})", v.x, v.y);
    }
    println!("inflation: {:.4}", tri.inflation);
    let ids: Vec<String> = tri.selected.iter().map(|o| o.to_string()).collect();
    println!("selected ({}): {}", ids.len(), ids.join(", "));
    if let Some(path) = &a.svg {
        let overlays = Overlays { triangles: vec![tri], paths: vec![] };
        std::fs::write(path, render_scene(&world, &overlays))?;
        println!("overlay written to {}", path.display());
    }
    Ok(())
}

fn cmd_allocate(a: AllocateArgs) -> Result<(), CliError> {
    let world = load_scenario(&a.scenario)?;
    let alloc = allocate(&world, DEFAULT_ANGLE_STEP, a.seed, a.mode.into())
        .map_err(|e| CliError::Planning(e.to_string()))?;
    println!("{:<8} {:<8} {:>5} {:>9} {:>8}", "robot", "task", "|O|", "corrected", "utility");
    for ((r, t), e) in &alloc.table.entries {
        let raw = e.raw_count.map_or("-".into(), |c| c.to_string());
        let corr = e.corrected_count.map_or("-".into(), |c| c.to_string());
        println!("{r:<8} {t:<8} {raw:>5} {corr:>9} {:>8.4}", e.utility);
    }
    println!("\nassignment (total utility {:.4}):", alloc.total_utility);
    for (r, tasks) in &alloc.schedule {
        let ts: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
        println!("  {r}: {}", ts.join(" -> "));
    }
    if let Some(path) = &a.csv {
        let mut s = String::from("robot,task,raw_count,corrected_count,utility\n");
        for ((r, t), e) in &alloc.table.entries {
            let raw = e.raw_count.map_or(String::new(), |c| c.to_string());
            let corr = e.corrected_count.map_or(String::new(), |c| c.to_string());
            s.push_str(&format!("{r},{t},{raw},{corr},{}\n", e.utility));
        }
        std::fs::write(path, s)?;
        println!("table written to {}", path.display());
    }
    Ok(())
}

fn cmd_plan(a: PlanArgs) -> Result<(), CliError> {
    let world = load_scenario(&a.scenario)?;
    let (fx, fy) = parse_point(&a.from)?;
    let (tx, ty) = parse_point(&a.to)?;
    let query = MotionQuery {
        start: Configuration::new(fx, fy, 0.0),
        goals: vec![Configuration::new(tx, ty, 0.0)],
        moving_radius: a.radius,
        ignore: BTreeSet::new(),
        bounds: world.bounds(),
        max_iterations: DEFAULT_MAX_ITERATIONS,
        seed: a.seed,
    };
    let plan = plan_path(&world, &query).map_err(|e| CliError::Planning(e.to_string()))?;
    println!("waypoints ({}), length {:.4} m:", plan.waypoints.len(), plan.length());
    for w in &plan.waypoints {
        println!("  ({:.4}, {:.4})", w.x, w.y);
    }
    if let Some(path) = &a.svg {
        let overlays = Overlays {
            triangles: vec![],
            paths: vec![("plan".into(), plan.waypoints.clone())],
        };
        std::fs::write(path, render_scene(&world, &overlays))?;
        println!("overlay written to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Select(a) => cmd_select(a),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Plan(a) => cmd_plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Planning(msg)) => {
            eprintln!("planning failure: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
