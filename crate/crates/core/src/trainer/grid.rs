use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evaluate, train_downstream, train_supervised_baseline, train_upstream, DataSources, EvalReport, RunDir,
    TrainConfig,
};
use crate::dataset::{Split, Strategy};
use crate::model::{EncoderConfig, Task};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Axes of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub strategies: Vec<Strategy>,
    pub temperatures: Vec<f64>,
    pub tasks: Vec<Task>,
    pub include_supervised: bool,
    /// Adds a frozen randomly initialised encoder per task as a control.
    pub include_untrained: bool,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            temperatures: vec![0.01, 0.1, 1.0],
            tasks: Task::ALL.to_vec(),
            include_supervised: true,
            include_untrained: false,
            jobs: 0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("grid has no tasks".into()));
        }
        if (self.strategies.is_empty() || self.temperatures.is_empty()) && !self.include_supervised && !self.include_untrained {
            return Err(Error::Config("grid is empty".into()));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidTemperature(*t));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Frozen contrastively trained encoder.
    Contrastive,
    Supervised,
    Untrained,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Contrastive => "contrastive",
            CellKind::Supervised => "supervised",
            CellKind::Untrained => "untrained",
        }
    }
}

/// One result of the grid. Exactly one of `report` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub task: Task,
    pub kind: CellKind,
    pub strategy: Option<Strategy>,
    pub temperature: Option<f64>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

impl GridCell {
    fn new(task: Task, kind: CellKind, strategy: Option<Strategy>, temperature: Option<f64>, r: Result<EvalReport>) -> Self {
        let (report, error) = match r {
            Ok(rep) => (Some(rep), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            task,
            kind,
            strategy,
            temperature,
            report,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config: GridConfig,
    pub cells: Vec<GridCell>,
}

const CSV_HEADER: [&str; 11] = [
    "task", "kind", "strategy", "temperature", "rmse", "corr", "bias", "acc", "precision", "recall", "error",
];

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "undefined".into()
    } else {
        format!("{v:.4}")
    }
}

impl GridReport {
    /// One row per cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(CSV_HEADER)?;
        for c in &self.cells {
            let mut row = vec![
                c.task.to_string(),
                c.kind.as_str().to_owned(),
                c.strategy.map(|s| s.to_string()).unwrap_or_default(),
                c.temperature.map(|t| t.to_string()).unwrap_or_default(),
            ];
            let mut metrics = vec![String::new(); 6];
            if let Some(r) = &c.report {
                let offset = if c.task.is_regression() { 0 } else { 3 };
                for (i, (_, v)) in r.metrics().into_iter().enumerate() {
                    metrics[offset + i] = if v.is_nan() { String::new() } else { v.to_string() };
                }
            }
            row.extend(metrics);
            row.push(c.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn find(&self, task: Task, kind: CellKind, strategy: Option<Strategy>, temperature: Option<f64>) -> Option<&GridCell> {
        self.cells.iter().find(|c| {
            c.task == task
                && c.kind == kind
                && (kind != CellKind::Contrastive || (c.strategy == strategy && c.temperature == temperature))
        })
    }

    /// Aligned text table: one block per task, rows supervised /
    /// untrained / each temperature, columns strategies × metrics.
    /// Supervised and untrained rows do not depend on the strategy and
    /// are repeated across its columns.
    pub fn table(&self) -> String {
        let strategies = &self.config.strategies;
        let mut out = String::new();
        for &task in &self.config.tasks {
            let unit = match task {
                Task::Rt60 => " [s]",
                Task::C50 => " [dB]",
                Task::Volume => "",
            };
            let names = if task.is_regression() { ["RMSE", "CORR", "BIAS"] } else { ["ACC", "PR", "RE"] };
            let _ = write!(out, "{:<14}", format!("{task}{unit}"));
            for s in strategies {
                let _ = write!(out, " | {:^32}", s.as_str());
            }
            out.push('\n');
            let _ = write!(out, "{:<14}", "");
            for _ in strategies {
                let _ = write!(out, " | {:>10}{:>11}{:>11}", names[0], names[1], names[2]);
            }
            out.push('\n');
            let mut rows: Vec<(String, CellKind, Option<f64>)> = Vec::new();
            if self.config.include_supervised {
                rows.push(("supervised".into(), CellKind::Supervised, None));
            }
            if self.config.include_untrained {
                rows.push(("untrained".into(), CellKind::Untrained, None));
            }
            for &t in &self.config.temperatures {
                rows.push((format!("tau={t}"), CellKind::Contrastive, Some(t)));
            }
            for (label, kind, t) in rows {
                let _ = write!(out, "{label:<14}");
                for &s in strategies {
                    match self.find(task, kind, Some(s), t) {
                        Some(GridCell { report: Some(r), .. }) => {
                            let m = r.metrics();
                            let _ = write!(out, " | {:>10}{:>11}{:>11}", fmt_metric(m[0].1), fmt_metric(m[1].1), fmt_metric(m[2].1));
                        }
                        Some(_) => {
                            let _ = write!(out, " | {:>32}", "failed");
                        }
                        None => {
                            let _ = write!(out, " | {:>32}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        for c in self.cells.iter().filter(|c| c.error.is_some()) {
            let _ = writeln!(
                out,
                "failed: {} {} {} {}: {}",
                c.task,
                c.kind.as_str(),
                c.strategy.map(|s| s.to_string()).unwrap_or_default(),
                c.temperature.map(|t| t.to_string()).unwrap_or_default(),
                c.error.as_deref().unwrap_or_default()
            );
        }
        out
    }
}

fn run_dir(root: Option<&Path>, name: &str) -> Result<Option<RunDir>> {
    root.map(|r| RunDir::create(&r.join(name), true)).transpose()
}

fn temperature_tag(t: f64) -> String {
    format!("tau{t}").replace('.', "p")
}

/// Runs the grid: one upstream training per (strategy, temperature),
/// shared by all tasks; one frozen-encoder head per (upstream run, task);
/// supervised baselines and untrained controls per task. Each cell's
/// seed derives from `seed` and the cell's position. A failing cell is
/// recorded and the rest of the grid continues. With `out` set, every run
/// gets its own directory under it.
pub fn run_experiment_grid(
    upstream: &DataSources<'_>,
    downstream: &DataSources<'_>,
    model_config: &EncoderConfig,
    train_config: &TrainConfig,
    grid: &GridConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<GridReport> {
    grid.validate()?;
    train_config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let pairs: Vec<(usize, Strategy, f64)> = grid
        .strategies
        .iter()
        .flat_map(|&s| grid.temperatures.iter().map(move |&t| (s, t)))
        .enumerate()
        .map(|(i, (s, t))| (i, s, t))
        .collect();

    let encoders: Vec<Result<_>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(i, strategy, temperature)| {
                let cfg = TrainConfig {
                    strategy,
                    temperature,
                    ..train_config.clone()
                };
                let dir = run_dir(out, &format!("upstream-{strategy}-{}", temperature_tag(temperature)))?;
                let (model, _) = train_upstream(upstream, model_config, &cfg, derive_seed(seed, i as u64), dir.as_ref())?;
                Ok(model.encoder)
            })
            .collect()
    });

    enum Job {
        Contrastive(usize),
        Supervised,
        Untrained,
    }
    let mut jobs: Vec<(Task, Job)> = Vec::new();
    for &task in &grid.tasks {
        if grid.include_supervised {
            jobs.push((task, Job::Supervised));
        }
        if grid.include_untrained {
            jobs.push((task, Job::Untrained));
        }
        for p in 0..pairs.len() {
            jobs.push((task, Job::Contrastive(p)));
        }
    }

    let cells: Vec<GridCell> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(j, (task, job))| {
                let task = *task;
                let cell_seed = derive_seed(seed, (1 << 32) + j as u64);
                let test_seed = derive_seed(seed, 1 << 33);
                match job {
                    Job::Contrastive(p) => {
                        let (_, strategy, temperature) = pairs[*p];
                        let r = (|| {
                            let encoder = encoders[*p]
                                .as_ref()
                                .map_err(|e| Error::Config(format!("upstream run failed: {e}")))?
                                .clone();
                            let dir = run_dir(
                                out,
                                &format!("downstream-{task}-{strategy}-{}", temperature_tag(temperature)),
                            )?;
                            let (mut m, _) = train_downstream(encoder, downstream, task, train_config, cell_seed, dir.as_ref())?;
                            evaluate(&mut m, downstream, Split::Test, test_seed)
                        })();
                        GridCell::new(task, CellKind::Contrastive, Some(strategy), Some(temperature), r)
                    }
                    Job::Supervised => {
                        let r = (|| {
                            let dir = run_dir(out, &format!("supervised-{task}"))?;
                            let (mut m, _) =
                                train_supervised_baseline(downstream, model_config, task, train_config, cell_seed, dir.as_ref())?;
                            evaluate(&mut m, downstream, Split::Test, test_seed)
                        })();
                        GridCell::new(task, CellKind::Supervised, None, None, r)
                    }
                    Job::Untrained => {
                        let r = (|| {
                            let dir = run_dir(out, &format!("untrained-{task}"))?;
                            let encoder = downstream.new_encoder(model_config, cell_seed)?;
                            let (mut m, _) = train_downstream(encoder, downstream, task, train_config, cell_seed, dir.as_ref())?;
                            evaluate(&mut m, downstream, Split::Test, test_seed)
                        })();
                        GridCell::new(task, CellKind::Untrained, None, None, r)
                    }
                }
            })
            .collect()
    });

    for c in cells.iter().filter(|c| c.error.is_some()) {
        log::warn!("grid cell {} {} failed: {}", c.task, c.kind.as_str(), c.error.as_deref().unwrap_or_default());
    }
    let report = GridReport {
        config: grid.clone(),
        cells,
    };
    if let Some(root) = out {
        report.write_csv(&root.join("grid.csv"))?;
        let p: PathBuf = root.join("grid.txt");
        std::fs::write(&p, report.table()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
