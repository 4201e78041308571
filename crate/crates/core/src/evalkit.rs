//! Best-of-K displacement metrics and evaluation reports.

use std::fmt::Write as _;

use crate::datasets::{dist, Point, Scene};
use crate::error::{Error, Result};
use crate::model::{PredictParams, TrajectoryModel};

fn check_shapes(preds: &[Vec<Point>], gt: &[Point]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("prediction set is empty"));
    }
    if gt.is_empty() {
        return Err(Error::invalid("ground truth is empty"));
    }
    if let Some(k) = preds.iter().position(|p| p.len() != gt.len()) {
        return Err(Error::invalid(format!(
            "prediction {k} has {} steps, ground truth {}",
            preds[k].len(),
            gt.len()
        )));
    }
    Ok(())
}

pub fn fde(pred: &[Point], gt: &[Point]) -> f64 {
    dist(*pred.last().unwrap(), *gt.last().unwrap())
}

pub fn ade(pred: &[Point], gt: &[Point]) -> f64 {
    pred.iter().zip(gt).map(|(&p, &g)| dist(p, g)).sum::<f64>() / gt.len() as f64
}

/// Smallest endpoint error over the `K` predictions.
pub fn min_fde(preds: &[Vec<Point>], gt: &[Point]) -> Result<f64> {
    check_shapes(preds, gt)?;
    Ok(preds.iter().map(|p| fde(p, gt)).fold(f64::INFINITY, f64::min))
}

/// Smallest time-averaged displacement over the `K` predictions.
pub fn min_ade(preds: &[Vec<Point>], gt: &[Point]) -> Result<f64> {
    check_shapes(preds, gt)?;
    Ok(preds.iter().map(|p| ade(p, gt)).fold(f64::INFINITY, f64::min))
}

/// Straight-line extrapolation of the last observed velocity.
pub fn constant_velocity(scene: &Scene, t_f: usize) -> Vec<Point> {
    let p = &scene.ego_past;
    let last = p[p.len() - 1];
    let v = if p.len() >= 2 {
        let prev = p[p.len() - 2];
        [last[0] - prev[0], last[1] - prev[1]]
    } else {
        [0.0, 0.0]
    };
    (1..=t_f)
        .map(|t| [last[0] + t as f64 * v[0], last[1] + t as f64 * v[1]])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetrics {
    pub scene_id: u64,
    pub min_ade: f64,
    pub min_fde: f64,
    /// Prediction achieving `min_fde` (lowest index on ties).
    pub best_k_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub min_ade_k: f64,
    pub min_fde_k: f64,
    pub k: usize,
    pub n_scenes: usize,
    pub units: String,
    pub rows: Vec<SceneMetrics>,
}

pub fn scene_metrics(scene_id: u64, preds: &[Vec<Point>], gt: &[Point]) -> Result<SceneMetrics> {
    let min_ade = min_ade(preds, gt)?;
    let mut best_k_index = 0;
    let mut min_fde = f64::INFINITY;
    for (k, p) in preds.iter().enumerate() {
        let f = fde(p, gt);
        if f < min_fde {
            min_fde = f;
            best_k_index = k;
        }
    }
    Ok(SceneMetrics {
        scene_id,
        min_ade,
        min_fde,
        best_k_index,
    })
}

impl MetricReport {
    pub fn from_rows(rows: Vec<SceneMetrics>, k: usize, units: &str) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("a metric report needs at least one scene"));
        }
        let n = rows.len() as f64;
        Ok(Self {
            min_ade_k: rows.iter().map(|r| r.min_ade).sum::<f64>() / n,
            min_fde_k: rows.iter().map(|r| r.min_fde).sum::<f64>() / n,
            k,
            n_scenes: rows.len(),
            units: units.to_string(),
            rows,
        })
    }

    /// `scene_id,min_ade,min_fde,best_k_index` with round-tripping floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,min_ade,min_fde,best_k_index\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:?},{:?},{}", r.scene_id, r.min_ade, r.min_fde, r.best_k_index);
        }
        out
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<SceneMetrics>> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if f.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            rows.push(SceneMetrics {
                scene_id: f[0].parse().map_err(|_| bad("bad scene_id"))?,
                min_ade: f[1].parse().map_err(|_| bad("bad min_ade"))?,
                min_fde: f[2].parse().map_err(|_| bad("bad min_fde"))?,
                best_k_index: f[3].parse().map_err(|_| bad("bad best_k_index"))?,
            });
        }
        Ok(rows)
    }

    /// `key=value` lines for scripts.
    pub fn summary(&self) -> String {
        format!(
            "min_ade_{k}={:.6}\nmin_fde_{k}={:.6}\nk={k}\nn_scenes={}\nunits={}\n",
            self.min_ade_k,
            self.min_fde_k,
            self.n_scenes,
            self.units,
            k = self.k
        )
    }
}

/// Predicts every scene with the frozen model and averages best-of-K
/// errors measured in world coordinates.
pub fn evaluate(model: &TrajectoryModel, scenes: &[Scene], params: &PredictParams, units: &str) -> Result<MetricReport> {
    let preds = model.predict_many(scenes, params)?;
    let rows = scenes
        .iter()
        .zip(&preds)
        .map(|(s, p)| scene_metrics(s.id, &p.trajectories, s.future()?))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_rows(rows, model.effective_params(&params.intention).k, units)
}
