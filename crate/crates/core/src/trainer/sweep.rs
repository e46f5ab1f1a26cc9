use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    baseline_metrics, eval_part, evaluate, split_for, train_on, BaselineMetrics, TrainConfig,
    TrainError,
};
use crate::dataset::Dataset;

/// Cartesian hyperparameter grid; every point is trained once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub d_hidden: Vec<usize>,
    pub d_out: Vec<usize>,
    pub layers: Vec<usize>,
    pub lr: Vec<f64>,
    /// Run `k` of a point uses seed `base.seed + k`.
    pub seeds: usize,
    /// Settings shared by every point (temperature, batch size, epochs, split).
    pub base: TrainConfig,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            d_hidden: vec![128, 256],
            d_out: vec![64, 128],
            layers: vec![1, 3, 5],
            lr: vec![1e-3, 1e-4],
            seeds: 3,
            base: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    /// 1-based position in grid order.
    pub id: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub layers: usize,
    pub lr: f64,
}

impl SweepGrid {
    /// Grid points ordered by `d_hidden`, then `d_out`, `layers` and `lr`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &d_hidden in &self.d_hidden {
            for &d_out in &self.d_out {
                for &layers in &self.layers {
                    for &lr in &self.lr {
                        out.push(SweepPoint {
                            id: out.len() + 1,
                            d_hidden,
                            d_out,
                            layers,
                            lr,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn config_for(&self, p: &SweepPoint, run: usize) -> TrainConfig {
        TrainConfig {
            d_hidden: p.d_hidden,
            d_out: p.d_out,
            layers: p.layers,
            lr: p.lr,
            seed: self.base.seed.wrapping_add(run as u64),
            ..self.base.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.seeds == 0 {
            return Err(TrainError::Config("seeds: must be ≥ 1".into()));
        }
        if self.points().is_empty() {
            return Err(TrainError::Config("grid has no points".into()));
        }
        for p in self.points() {
            self.config_for(&p, 0).validate()?;
        }
        Ok(())
    }
}

/// Outcome of one grid point across all its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub point: SweepPoint,
    /// `(cka, cca)` per seed, or the failure message.
    pub runs: Vec<Result<(f64, f64), String>>,
}

fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    Some((m, var.sqrt()))
}

impl ConfigResult {
    fn successes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.runs.iter().filter_map(|r| r.as_ref().ok().copied())
    }

    /// Mean and population standard deviation of CKA over successful seeds.
    pub fn cka(&self) -> Option<(f64, f64)> {
        mean_std(&self.successes().map(|r| r.0).collect::<Vec<_>>())
    }

    pub fn cca(&self) -> Option<(f64, f64)> {
        mean_std(&self.successes().map(|r| r.1).collect::<Vec<_>>())
    }

    pub fn failures(&self) -> Vec<&str> {
        self.runs
            .iter()
            .filter_map(|r| r.as_ref().err().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub baseline: BaselineMetrics,
    pub results: Vec<ConfigResult>,
}

/// Ids of the best and second-best points by mean of `key`.
fn podium(
    results: &[ConfigResult],
    key: impl Fn(&ConfigResult) -> Option<(f64, f64)>,
) -> [Option<usize>; 2] {
    let mut scored: Vec<(f64, usize)> = results
        .iter()
        .filter_map(|r| key(r).map(|(m, _)| (m, r.point.id)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    [scored.first().map(|s| s.1), scored.get(1).map(|s| s.1)]
}

impl SweepReport {
    pub fn cka_podium(&self) -> [Option<usize>; 2] {
        podium(&self.results, ConfigResult::cka)
    }

    pub fn cca_podium(&self) -> [Option<usize>; 2] {
        podium(&self.results, ConfigResult::cca)
    }
}

/// Trains every grid point for every seed. Individual failures are recorded in
/// their row and the sweep continues; runs execute in parallel but results are
/// gathered in grid order.
pub fn sweep(dataset: &Dataset, grid: &SweepGrid) -> Result<SweepReport, TrainError> {
    grid.validate()?;
    let parts = split_for(dataset, &grid.base)?;
    let eval = eval_part(&parts, grid.base.eval_split);
    let baseline = baseline_metrics(eval, grid.base.ridge)?;
    let points = grid.points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..grid.seeds).map(move |s| (p, s)))
        .collect();
    let outcomes: Vec<Result<(f64, f64), String>> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let cfg = grid.config_for(&points[p], s);
            let heads = train_on(&parts[0], &cfg).map_err(|e| e.to_string())?;
            let m =
                evaluate(&heads.code, &heads.audio, eval, cfg.ridge).map_err(|e| e.to_string())?;
            log::info!(
                "config {} seed {}: cka {:.4} cca {:.4}",
                points[p].id,
                cfg.seed,
                m.cka,
                m.cca
            );
            Ok((m.cka, m.cca))
        })
        .collect();
    let mut it = outcomes.into_iter();
    let results = points
        .into_iter()
        .map(|point| ConfigResult {
            point,
            runs: it.by_ref().take(grid.seeds).collect(),
        })
        .collect();
    Ok(SweepReport { baseline, results })
}

fn mark(podium: &[Option<usize>; 2], id: usize) -> &'static str {
    if podium[0] == Some(id) {
        "best"
    } else if podium[1] == Some(id) {
        "second"
    } else {
        ""
    }
}

fn cells(v: Option<(f64, f64)>) -> String {
    v.map(|(m, s)| format!("{m:.6},{s:.6}"))
        .unwrap_or_else(|| ",".into())
}

pub const SWEEP_CSV_HEADER: &str =
    "config,d_hidden,d_out,layers,lr,cka_mean,cka_std,cca_mean,cca_std,cka_mark,cca_mark,error";

/// The baseline row followed by one row per grid point.
pub fn sweep_csv(report: &SweepReport) -> String {
    let (pk, pc) = (report.cka_podium(), report.cca_podium());
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    let b = report.baseline;
    writeln!(
        s,
        "baseline,,,,,{:.6},0.000000,{:.6},0.000000,,,",
        b.cka, b.cca
    )
    .expect("write");
    for r in &report.results {
        let p = r.point;
        let err = r.failures().join("; ").replace([',', '\n', '"'], " ");
        writeln!(
            s,
            "{},{},{},{},{:e},{},{},{},{},{}",
            p.id,
            p.d_hidden,
            p.d_out,
            p.layers,
            p.lr,
            cells(r.cka()),
            cells(r.cca()),
            mark(&pk, p.id),
            mark(&pc, p.id),
            err
        )
        .expect("write");
    }
    s.lines().map(|l| format!("{}\n", l.trim_end())).collect()
}

/// Plain-text rendering; `*` marks the best and `+` the second-best mean.
pub fn sweep_table(report: &SweepReport) -> String {
    let (pk, pc) = (report.cka_podium(), report.cca_podium());
    let cell = |v: Option<(f64, f64)>, m: &str| match v {
        Some((mean, std)) => {
            let tag = match m {
                "best" => "*",
                "second" => "+",
                _ => " ",
            };
            format!("{mean:.3} ± {std:.3}{tag}")
        }
        None => "failed".into(),
    };
    let mut s = String::new();
    writeln!(
        s,
        "{:>6}  {:>8}  {:>5}  {:>2}  {:>15}  {:>14}  {:>14}",
        "config", "d_hidden", "d_out", "L", "lr", "CKA", "CCA"
    )
    .expect("write");
    let b = report.baseline;
    writeln!(
        s,
        "{:>6}  {:>8}  {:>5}  {:>2}  {:>15}  {:>14}  {:>14}",
        "--",
        "--",
        "--",
        "--",
        "before training",
        format!("{:.3} ± {:.3} ", b.cka, 0.0),
        format!("{:.3} ± {:.3} ", b.cca, 0.0)
    )
    .expect("write");
    for r in &report.results {
        let p = r.point;
        writeln!(
            s,
            "{:>6}  {:>8}  {:>5}  {:>2}  {:>15}  {:>14}  {:>14}",
            p.id,
            p.d_hidden,
            p.d_out,
            p.layers,
            format!("{:e}", p.lr),
            cell(r.cka(), mark(&pk, p.id)),
            cell(r.cca(), mark(&pc, p.id))
        )
        .expect("write");
    }
    s.lines().map(|l| format!("{}\n", l.trim_end())).collect()
}
