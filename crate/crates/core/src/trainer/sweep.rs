//! Ablation grids over the pruning threshold and the video-level mining
//! parameters.

use serde::{Deserialize, Serialize};

use super::{train_stage, Checkpoint, TrainConfig, TrainMode};
use crate::data::Dataset;
use crate::error::Result;

pub const TAU_GRID: [f64; 5] = [0.0, 0.025, 0.075, 0.095, 0.115];
pub const THETA_GRID: [f64; 3] = [0.2, 0.4, 0.6];
pub const K_GRID: [usize; 4] = [1, 2, 4, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub tau: f64,
    pub k: usize,
    pub theta: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub mode: TrainMode,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,tau,k,theta,val_accuracy,test_accuracy\n");
        for r in &self.rows {
            let test = r.test_accuracy.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.label, r.tau, r.k, r.theta, r.val_accuracy, test
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {} ({})\n\n| setting | val acc (%) | test acc (%) |\n|---|---|---|\n", self.name, self.mode);
        for r in &self.rows {
            let test = r.test_accuracy.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
            out.push_str(&format!("| {} | {:.2} | {} |\n", r.label, 100.0 * r.val_accuracy, test));
        }
        out.push('\n');
        out.push_str(&self.trend_note());
        out
    }

    /// Reports whether test accuracy is monotone over the rows. Informational
    /// only.
    pub fn trend_note(&self) -> String {
        let acc: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.test_accuracy.unwrap_or(r.val_accuracy))
            .collect();
        let up = acc.windows(2).all(|w| w[1] >= w[0]);
        let down = acc.windows(2).all(|w| w[1] <= w[0]);
        let best = self
            .rows
            .iter()
            .zip(&acc)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(r, _)| r.label.clone())
            .unwrap_or_default();
        let shape = match (up, down) {
            (true, true) => "flat",
            (true, false) => "nondecreasing",
            (false, true) => "nonincreasing",
            (false, false) => "not monotone",
        };
        format!("Trend over the grid: {shape}; best setting: {best}.\n")
    }
}

fn run_points<F>(points: Vec<(String, TrainConfig)>, parallel: bool, run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&TrainConfig) -> Result<(f64, Option<f64>)> + Sync,
{
    let row = |label: &String, cfg: &TrainConfig| -> Result<SweepRow> {
        let (val_accuracy, test_accuracy) = run(cfg)?;
        log::info!("sweep point {label}: val {val_accuracy:.4}");
        Ok(SweepRow {
            label: label.clone(),
            tau: cfg.effective_tau(),
            k: cfg.k,
            theta: cfg.theta,
            val_accuracy,
            test_accuracy,
        })
    };
    if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = points.iter().map(|(l, c)| s.spawn(move || row(l, c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        points.iter().map(|(l, c)| row(l, c)).collect()
    }
}

/// Trains the initial stage once per threshold.
pub fn sweep_tau(base: &TrainConfig, data: &Dataset, grid: &[f64], parallel: bool) -> Result<SweepTable> {
    let points = grid
        .iter()
        .map(|&tau| {
            let cfg = TrainConfig {
                tau,
                init_checkpoint: None,
                ..base.clone()
            };
            (format!("tau={tau}"), cfg)
        })
        .collect();
    let rows = run_points(points, parallel, |cfg| {
        let out = train_stage(cfg, data, None, None)?;
        Ok((out.val_accuracy, out.test_accuracy))
    })?;
    Ok(SweepTable {
        name: "pruning threshold".into(),
        mode: base.mode,
        rows,
    })
}

/// Refines `init` with video-level contrast for `θ ∈ THETA_GRID` at `K = 4`
/// and `K ∈ K_GRID` at `θ = 0.6`.
pub fn sweep_k_theta(
    base: &TrainConfig,
    data: &Dataset,
    init: &Checkpoint,
    parallel: bool,
) -> Result<(SweepTable, SweepTable)> {
    let mode = match base.mode {
        TrainMode::WeakPsp | TrainMode::WeakCpsp => TrainMode::WeakCpsp,
        _ => TrainMode::CpspV,
    };
    let make = |k: usize, theta: f64| TrainConfig {
        mode,
        k,
        theta,
        init_checkpoint: None,
        ..base.clone()
    };
    let run = |cfg: &TrainConfig| -> Result<(f64, Option<f64>)> {
        let out = train_stage(cfg, data, Some(init), None)?;
        Ok((out.val_accuracy, out.test_accuracy))
    };
    let theta_points = THETA_GRID.iter().map(|&t| (format!("K=4, theta={t}"), make(4, t))).collect();
    let k_points = K_GRID.iter().map(|&k| (format!("K={k}, theta=0.6"), make(k, 0.6))).collect();
    Ok((
        SweepTable {
            name: "margin theta".into(),
            mode,
            rows: run_points(theta_points, parallel, run)?,
        },
        SweepTable {
            name: "negatives K".into(),
            mode,
            rows: run_points(k_points, parallel, run)?,
        },
    ))
}
