//! Benchmark harness: seeded scenario sweeps over object counts, repeated
//! runs, per-robot metric rows, CSV persistence, and aggregate statistics
//! (per-depth totals, rank correlation, node-count regression).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{run, ExecutionReport, ExecutorConfig};
use crate::world::{generate_scenario, WorkspaceModel};

pub const DEFAULT_OBJECT_COUNTS: [usize; 9] = [6, 8, 9, 12, 16, 20, 30, 49, 64];

/// Fixed, documented CSV header; `save_csv`/`load_csv` round-trip it.
pub const CSV_HEADER: &str = "count,rep,seed,robot,tasks,solved_tasks,depth,nodes_visited,mp_attempts,rearranged,executions,mp_time,tp_time,model_time,success";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Sorted ascending.
    pub object_counts: Vec<usize>,
    pub repetitions: usize,
    pub robots: usize,
    pub targets: usize,
    pub base_seed: u64,
    pub config: ExecutorConfig,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            object_counts: DEFAULT_OBJECT_COUNTS.to_vec(),
            repetitions: 3,
            robots: 2,
            targets: 2,
            base_seed: 1,
            config: ExecutorConfig::default(),
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions < 1 {
            return Err(HarnessError::InvalidSpec("repetitions >= 1".into()));
        }
        if self.object_counts.windows(2).any(|w| w[0] > w[1]) {
            return Err(HarnessError::InvalidSpec(
                "object_counts sorted ascending".into(),
            ));
        }
        if self.object_counts.iter().any(|&c| c < self.targets) {
            return Err(HarnessError::InvalidSpec(
                "object count >= targets".into(),
            ));
        }
        if self.targets < self.robots {
            return Err(HarnessError::InvalidSpec("targets >= robots".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One Table-2-shaped row: per (object count, repetition, robot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub count: usize,
    pub rep: usize,
    pub seed: u64,
    pub robot: String,
    pub tasks: usize,
    pub solved_tasks: usize,
    /// Total network depth over this robot's tasks.
    pub depth: usize,
    pub nodes_visited: u64,
    /// One attempt = one motion-planner invocation.
    pub mp_attempts: u64,
    pub rearranged: u64,
    pub executions: u64,
    /// Wall-clock seconds; reported, never asserted.
    pub mp_time: f64,
    pub tp_time: f64,
    /// Modeled execution time of the whole run (path length over nominal
    /// speed); identical across the run's rows.
    pub model_time: f64,
    /// Whole-run success flag; identical across the run's rows.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// Strips wall-clock timings, for determinism comparisons.
    pub fn without_timings(&self) -> MetricsTable {
        let rows = self
            .rows
            .iter()
            .cloned()
            .map(|mut r| {
                r.mp_time = 0.0;
                r.tp_time = 0.0;
                r
            })
            .collect();
        MetricsTable { rows }
    }

    /// Mean per-task depth of successful runs, grouped by object count.
    pub fn mean_depth_by_count(&self) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.success && r.tasks > 0) {
            let e = acc.entry(r.count).or_insert((0.0, 0.0));
            e.0 += r.depth as f64;
            e.1 += r.tasks as f64;
        }
        acc.into_iter()
            .map(|(c, (d, t))| (c, d / t))
            .collect()
    }

    pub fn success_rate(&self) -> f64 {
        let mut runs: BTreeMap<(usize, usize), bool> = BTreeMap::new();
        for r in &self.rows {
            runs.insert((r.count, r.rep), r.success);
        }
        if runs.is_empty() {
            return 0.0;
        }
        runs.values().filter(|s| **s).count() as f64 / runs.len() as f64
    }
}

/// Deterministic per-run scenario seed.
pub fn run_seed(base: u64, count: usize, rep: usize) -> u64 {
    base.wrapping_mul(0x1000_0000_1b3)
        .wrapping_add(count as u64 * 1_000_003)
        .wrapping_add(rep as u64 * 7919)
}

/// Generates the scenario for one (count, rep) cell, nudging the seed past
/// the rare rejection-sampling dead end.
pub fn bench_scenario(spec: &BenchmarkSpec, count: usize, rep: usize) -> WorkspaceModel {
    let base = run_seed(spec.base_seed, count, rep);
    for attempt in 0..16 {
        if let Ok(w) = generate_scenario(count, spec.targets, spec.robots, base + attempt) {
            return w;
        }
    }
    panic!("scenario generation failed for count {count}, rep {rep}");
}

/// Runs the full sweep. Failed runs keep their rows, marked unsuccessful.
pub fn bench(spec: &BenchmarkSpec) -> Result<MetricsTable, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &count in &spec.object_counts {
        for rep in 0..spec.repetitions {
            let world = bench_scenario(spec, count, rep);
            let report = run(&world, spec.config)
                .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
            rows.extend(report_rows(&report, count, rep, world.seed));
        }
    }
    Ok(MetricsTable { rows })
}

/// Flattens one execution report into metric rows.
pub fn report_rows(
    report: &ExecutionReport,
    count: usize,
    rep: usize,
    seed: u64,
) -> Vec<MetricsRow> {
    report
        .robots
        .iter()
        .map(|r| MetricsRow {
            count,
            rep,
            seed,
            robot: r.robot.to_string(),
            tasks: r.tasks.len(),
            solved_tasks: r.tasks.iter().filter(|f| f.solved).count(),
            depth: r.depth_total,
            nodes_visited: r.nodes_visited,
            mp_attempts: r.mp_attempts,
            rearranged: r.rearranged,
            executions: r.executions,
            mp_time: r.mp_time,
            tp_time: r.tp_time,
            model_time: report.total_model_time,
            success: report.success,
        })
        .collect()
}

pub fn to_csv(table: &MetricsTable) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.count,
            r.rep,
            r.seed,
            r.robot,
            r.tasks,
            r.solved_tasks,
            r.depth,
            r.nodes_visited,
            r.mp_attempts,
            r.rearranged,
            r.executions,
            r.mp_time,
            r.tp_time,
            r.model_time,
            r.success
        );
    }
    s
}

pub fn from_csv(text: &str) -> Result<MetricsTable, HarnessError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| HarnessError::Csv("empty".into()))?;
    if header != CSV_HEADER {
        return Err(HarnessError::Csv(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(HarnessError::Csv(format!("line {}: field count", i + 2)));
        }
        let err = |what: &str| HarnessError::Csv(format!("line {}: {what}", i + 2));
        rows.push(MetricsRow {
            count: f[0].parse().map_err(|_| err("count"))?,
            rep: f[1].parse().map_err(|_| err("rep"))?,
            seed: f[2].parse().map_err(|_| err("seed"))?,
            robot: f[3].to_string(),
            tasks: f[4].parse().map_err(|_| err("tasks"))?,
            solved_tasks: f[5].parse().map_err(|_| err("solved_tasks"))?,
            depth: f[6].parse().map_err(|_| err("depth"))?,
            nodes_visited: f[7].parse().map_err(|_| err("nodes_visited"))?,
            mp_attempts: f[8].parse().map_err(|_| err("mp_attempts"))?,
            rearranged: f[9].parse().map_err(|_| err("rearranged"))?,
            executions: f[10].parse().map_err(|_| err("executions"))?,
            mp_time: f[11].parse().map_err(|_| err("mp_time"))?,
            tp_time: f[12].parse().map_err(|_| err("tp_time"))?,
            model_time: f[13].parse().map_err(|_| err("model_time"))?,
            success: f[14].parse().map_err(|_| err("success"))?,
        });
    }
    Ok(MetricsTable { rows })
}

pub fn save_csv(table: &MetricsTable, path: &std::path::Path) -> Result<(), HarnessError> {
    std::fs::write(path, to_csv(table))?;
    Ok(())
}

pub fn load_csv(path: &std::path::Path) -> Result<MetricsTable, HarnessError> {
    from_csv(&std::fs::read_to_string(path)?)
}

/// Average ranks with ties sharing their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = mean_rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of y on x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let mut ss_res = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let e = y - (slope * x + intercept);
            ss_res += e * e;
        }
        1.0 - ss_res / syy
    };
    LinearFit { slope, intercept, r2 }
}

/// Per-depth totals, the Fig.-4-shaped aggregate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthBucket {
    pub rows: usize,
    pub nodes_visited: u64,
    pub mp_attempts: u64,
    pub mp_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub per_depth: BTreeMap<usize, DepthBucket>,
    /// Spearman rho between object count and per-count mean depth.
    pub spearman_count_depth: f64,
    /// Least-squares fit of nodes_visited on depth.
    pub nodes_fit: LinearFit,
    pub success_rate: f64,
}

pub fn aggregate(table: &MetricsTable) -> Summary {
    assert!(!table.rows.is_empty(), "table non-empty");
    let mut per_depth: BTreeMap<usize, DepthBucket> = BTreeMap::new();
    for r in &table.rows {
        let b = per_depth.entry(r.depth).or_default();
        b.rows += 1;
        b.nodes_visited += r.nodes_visited;
        b.mp_attempts += r.mp_attempts;
        b.mp_time += r.mp_time;
    }
    let by_count = table.mean_depth_by_count();
    let spearman_count_depth = if by_count.len() >= 2 {
        let xs: Vec<f64> = by_count.keys().map(|c| *c as f64).collect();
        let ys: Vec<f64> = by_count.values().copied().collect();
        spearman(&xs, &ys)
    } else {
        1.0
    };
    let xs: Vec<f64> = table.rows.iter().map(|r| r.depth as f64).collect();
    let ys: Vec<f64> = table.rows.iter().map(|r| r.nodes_visited as f64).collect();
    let nodes_fit = if xs.len() >= 2 {
        linear_fit(&xs, &ys)
    } else {
        LinearFit { slope: 0.0, intercept: ys[0], r2: 1.0 }
    };
    Summary {
        per_depth,
        spearman_count_depth,
        nodes_fit,
        success_rate: table.success_rate(),
    }
}
