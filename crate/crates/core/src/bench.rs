//! Repeated corrupted-factorization experiments and their reports.
//!
//! Repeat `i` corrupts the clean data with seed `base_seed + i` (or
//! `noise_seed + i` when set), then fits
//! every configured `(method, weight)` cell to that same corrupted matrix from
//! the same initialization. Reconstruction error is measured against the clean
//! data; ACC and NMI compare a k-means clustering of the rows of `H` with the
//! subject labels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, CorruptionSpec, NoiseKind};
use crate::dataset::Dataset;
use crate::engine::{solve_nmf_tracked, solve_weighted_nmf_tracked, FactorPair, InitMethod, SolveConfig};
use crate::error::{Error, Result};
use crate::io::{write_objective_csv, write_polish_csv};
use crate::metrics::{accuracy, cluster_assign, nmi, rre};
use crate::polish::{solve_target_polish, PolishConfig, RefineMapping};
use crate::weights::{SigmaSource, WeightKind, WeightScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    WeightedNmf,
    TargetPolish,
    PlainNmf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::WeightedNmf, Method::TargetPolish, Method::PlainNmf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::WeightedNmf => "weighted-nmf",
            Method::TargetPolish => "target-polish",
            Method::PlainNmf => "plain-nmf",
        }
    }

    /// Plain Fast-HALS has no weight scheme; it runs once per repeat.
    pub fn uses_weights(self) -> bool {
        self != Method::PlainNmf
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub weights: Vec<WeightKind>,
    pub noise: CorruptionSpec,
    pub repeats: usize,
    pub rank: usize,
    pub base_seed: u64,
    /// Base seed of the corruption when it should differ from `base_seed`.
    pub noise_seed: Option<u64>,
    pub n_iter_max: usize,
    pub tol: f64,
    pub init: InitMethod,
    pub cim_sigma: SigmaSource,
    pub max_step_iter: usize,
    pub slope: f64,
    pub inflexion_point: f64,
    pub refine_max_iter: usize,
    pub refine_mapping: RefineMapping,
    /// Number of k-means clusters; defaults to the dataset's subject count.
    pub clusters: Option<usize>,
    /// Where per-run trajectory CSVs go, if anywhere.
    pub trajectory_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(methods: Vec<Method>, weights: Vec<WeightKind>, noise: CorruptionSpec, rank: usize) -> Self {
        Self {
            methods,
            weights,
            noise,
            repeats: 10,
            rank,
            base_seed: 0,
            noise_seed: None,
            n_iter_max: 200,
            tol: 1e-6,
            init: InitMethod::RandomUniform,
            cim_sigma: SigmaSource::Residual,
            max_step_iter: 100,
            slope: 10.0,
            inflexion_point: 0.01,
            refine_max_iter: 20,
            refine_mapping: RefineMapping::Direct,
            clusters: None,
            trajectory_dir: None,
        }
    }

    pub fn solve_config(&self, seed: u64) -> SolveConfig {
        SolveConfig {
            rank: self.rank,
            n_iter_max: self.n_iter_max,
            tol: self.tol,
            seed,
            init: self.init,
        }
    }

    pub fn scheme(&self, kind: WeightKind) -> WeightScheme {
        WeightScheme::new(kind).with_sigma_source(self.cim_sigma)
    }

    pub fn polish_config(&self, kind: WeightKind, seed: u64) -> PolishConfig {
        PolishConfig {
            scheme: self.scheme(kind),
            max_step_iter: self.max_step_iter,
            slope: self.slope,
            inflexion_point: self.inflexion_point,
            refine_max_iter: self.refine_max_iter,
            refine_mapping: self.refine_mapping,
            solve: self.solve_config(seed),
        }
    }

    /// `(method, weight)` cells in table order.
    pub fn cells(&self) -> Vec<(Method, WeightKind)> {
        let mut cells = Vec::new();
        for &weight in &self.weights {
            for &method in &self.methods {
                if method.uses_weights() {
                    cells.push((method, weight));
                }
            }
        }
        if self.methods.contains(&Method::PlainNmf) {
            cells.push((Method::PlainNmf, WeightKind::None));
        }
        cells
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        if self.methods.iter().any(|m| m.uses_weights()) && self.weights.is_empty() {
            return Err(Error::config("no weight schemes selected"));
        }
        self.solve_config(self.base_seed)
            .validate(dataset.x.rows(), dataset.x.cols())?;
        let (h, w) = dataset.image_shape;
        self.noise.validate(h, w)?;
        let k = self.clusters.unwrap_or(dataset.n_subjects());
        if k == 0 || k > dataset.x.cols() {
            return Err(Error::config(format!("cannot form {k} clusters")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub seed: u64,
    pub method: Method,
    pub weight: WeightKind,
    pub rre: f64,
    pub acc: f64,
    pub nmi: f64,
    pub time_sec: f64,
    pub iterations: usize,
    pub trajectory_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rre: Stat,
    pub acc: Stat,
    pub nmi: Stat,
    pub time_sec: Stat,
}

impl Aggregate {
    pub fn from_repeats(repeats: &[RepeatRecord]) -> Self {
        let pick = |f: fn(&RepeatRecord) -> f64| Stat::of(&repeats.iter().map(f).collect::<Vec<_>>());
        Aggregate {
            rre: pick(|r| r.rre),
            acc: pick(|r| r.acc),
            nmi: pick(|r| r.nmi),
            time_sec: pick(|r| r.time_sec),
        }
    }
}

/// All repeats of one `(method, weight)` cell under one noise setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub weight: WeightKind,
    pub noise: CorruptionSpec,
    pub repeats: Vec<RepeatRecord>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub pixels: usize,
    pub images: usize,
    pub image_shape: (usize, usize),
    pub subjects: usize,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            name: dataset.name.clone(),
            pixels: dataset.x.rows(),
            images: dataset.x.cols(),
            image_shape: dataset.image_shape,
            subjects: dataset.n_subjects(),
        }
    }
}

/// Top-level JSON document written by the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub runs: Vec<RunReport>,
}

struct CellOutcome {
    factors: FactorPair,
    time_sec: f64,
    iterations: usize,
    trajectory_file: Option<String>,
}

fn trajectory_name(noise: NoiseKind, weight: WeightKind, method: Method, repeat: usize) -> String {
    format!("traj_{noise}_{weight}_{method}_r{repeat}.csv")
}

fn run_cell(
    cfg: &ExperimentConfig,
    x: &crate::matrix::DenseMatrix,
    clean: &crate::matrix::DenseMatrix,
    method: Method,
    weight: WeightKind,
    seed: u64,
    repeat: usize,
) -> Result<CellOutcome> {
    let solve = cfg.solve_config(seed);
    let track = cfg.trajectory_dir.as_ref().map(|_| clean);
    let file = cfg.trajectory_dir.as_ref().map(|dir| {
        let name = trajectory_name(cfg.noise.kind, weight, method, repeat);
        (dir.join(&name), name)
    });

    match method {
        Method::PlainNmf => {
            let start = Instant::now();
            let fit = match track {
                Some(c) => solve_nmf_tracked(x, &solve, c)?,
                None => crate::engine::solve_nmf(x, &solve)?,
            };
            let time_sec = start.elapsed().as_secs_f64();
            if let Some((path, _)) = &file {
                write_fit_csv(path, &fit.trajectory, fit.clean_rre.as_deref())?;
            }
            Ok(CellOutcome {
                iterations: fit.iterations(),
                factors: fit.factors,
                time_sec,
                trajectory_file: file.map(|f| f.1),
            })
        }
        Method::WeightedNmf => {
            let start = Instant::now();
            let fit = solve_weighted_nmf_tracked(x, &cfg.scheme(weight), &solve, None, track)?;
            let time_sec = start.elapsed().as_secs_f64();
            if let Some((path, _)) = &file {
                write_fit_csv(path, &fit.trajectory, fit.clean_rre.as_deref())?;
            }
            Ok(CellOutcome {
                iterations: fit.iterations(),
                factors: fit.factors,
                time_sec,
                trajectory_file: file.map(|f| f.1),
            })
        }
        Method::TargetPolish => {
            let start = Instant::now();
            let fit = solve_target_polish(x, &cfg.polish_config(weight, seed), track)?;
            let time_sec = start.elapsed().as_secs_f64();
            if let Some((path, _)) = &file {
                write_polish_csv(path, &fit.trajectory)?;
            }
            Ok(CellOutcome {
                iterations: fit.trajectory.len() + fit.refinement_iterations(),
                factors: fit.factors,
                time_sec,
                trajectory_file: file.map(|f| f.1),
            })
        }
    }
}

fn write_fit_csv(path: &Path, objective: &[f64], clean: Option<&[f64]>) -> Result<()> {
    match clean {
        None => write_objective_csv(path, objective),
        Some(c) => {
            let mut s = String::from("iter,objective,rre_clean\n");
            for (i, (o, r)) in objective.iter().zip(c).enumerate() {
                s.push_str(&format!("{},{},{}\n", i + 1, o, r));
            }
            fs::write(path, s)?;
            Ok(())
        }
    }
}

/// Runs every cell of repeat `repeat` (0-based) and returns one record per
/// cell in [`ExperimentConfig::cells`] order. Corruption, initialization and
/// k-means all use seed `base_seed + repeat`.
pub fn run_repeat(dataset: &Dataset, cfg: &ExperimentConfig, repeat: usize) -> Result<Vec<RepeatRecord>> {
    let seed = cfg.base_seed.wrapping_add(repeat as u64);
    let noise = CorruptionSpec {
        seed: cfg.noise_seed.unwrap_or(cfg.base_seed).wrapping_add(repeat as u64),
        ..cfg.noise
    };
    let corrupted = corrupt(&dataset.x, dataset.image_shape, &noise)?;
    let k = cfg.clusters.unwrap_or(dataset.n_subjects());
    if let Some(dir) = &cfg.trajectory_dir {
        fs::create_dir_all(dir)?;
    }

    cfg.cells()
        .into_iter()
        .map(|(method, weight)| {
            let out = run_cell(cfg, &corrupted, &dataset.x, method, weight, seed, repeat)?;
            let labels = cluster_assign(&out.factors.h, k, seed)?;
            Ok(RepeatRecord {
                seed,
                method,
                weight,
                rre: rre(&dataset.x, &out.factors)?,
                acc: accuracy(&labels, &dataset.labels)?,
                nmi: nmi(&labels, &dataset.labels)?,
                time_sec: out.time_sec,
                iterations: out.iterations,
                trajectory_file: out.trajectory_file,
            })
        })
        .collect()
}

/// Groups per-repeat records (outer index: repeat) into one report per cell.
pub fn assemble_reports(cfg: &ExperimentConfig, per_repeat: Vec<Vec<RepeatRecord>>) -> Vec<RunReport> {
    cfg.cells()
        .into_iter()
        .enumerate()
        .map(|(c, (method, weight))| {
            let repeats: Vec<RepeatRecord> = per_repeat.iter().map(|recs| recs[c].clone()).collect();
            RunReport {
                method,
                weight,
                noise: cfg.noise,
                aggregate: Aggregate::from_repeats(&repeats),
                repeats,
            }
        })
        .collect()
}

pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    dataset.validate()?;
    cfg.validate(dataset)?;
    let per_repeat = (0..cfg.repeats)
        .map(|i| run_repeat(dataset, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_reports(cfg, per_repeat))
}

fn noise_rank(kind: NoiseKind) -> usize {
    match kind {
        NoiseKind::Block => 0,
        NoiseKind::Salt => 1,
        NoiseKind::None => 2,
    }
}

fn sorted_for_table(reports: &[RunReport]) -> Vec<&RunReport> {
    let mut rows: Vec<&RunReport> = reports.iter().collect();
    rows.sort_by_key(|r| {
        (
            noise_rank(r.noise.kind),
            WeightKind::ALL.iter().position(|k| *k == r.weight),
            Method::ALL.iter().position(|m| *m == r.method),
        )
    });
    rows
}

pub const TABLE_HEADER: &str = "noise,weight,method,rre,acc,nmi,time_sec";

/// Companion path holding standard deviations: `table.csv` → `table_std.csv`.
pub fn std_table_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}_std{ext}"))
}

/// Writes the mean table to `path` and the standard deviations next to it.
pub fn emit_table(reports: &[RunReport], path: &Path) -> Result<()> {
    let rows = sorted_for_table(reports);
    let render = |pick: fn(&Stat) -> f64| {
        let mut s = format!("{TABLE_HEADER}\n");
        for r in &rows {
            let a = &r.aggregate;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.noise.kind,
                r.weight,
                r.method,
                pick(&a.rre),
                pick(&a.acc),
                pick(&a.nmi),
                pick(&a.time_sec)
            ));
        }
        s
    };
    fs::write(path, render(|s| s.mean))?;
    fs::write(std_table_path(path), render(|s| s.std))?;
    Ok(())
}

pub fn save_report(report: &BenchReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<BenchReport> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parsing() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("nmf".parse::<Method>().is_err());
    }

    #[test]
    fn cells_follow_table_order() {
        let cfg = ExperimentConfig::new(
            vec![Method::TargetPolish, Method::PlainNmf, Method::WeightedNmf],
            vec![WeightKind::Cim, WeightKind::Huber],
            CorruptionSpec::new(NoiseKind::Block),
            2,
        );
        assert_eq!(
            cfg.cells(),
            vec![
                (Method::TargetPolish, WeightKind::Cim),
                (Method::WeightedNmf, WeightKind::Cim),
                (Method::TargetPolish, WeightKind::Huber),
                (Method::WeightedNmf, WeightKind::Huber),
                (Method::PlainNmf, WeightKind::None),
            ]
        );
    }

    #[test]
    fn stat_values() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Stat::of(&[5.0]).std, 0.0);
    }

    #[test]
    fn std_path() {
        assert_eq!(std_table_path(Path::new("/t/table.csv")), PathBuf::from("/t/table_std.csv"));
    }
}
