//! Fits the timing model's free parameters to a measured curve.
//!
//! Coordinate descent over fixed bounded grids, minimizing the mean
//! relative throughput error across the curve's batch sizes. The grids and
//! the scan order are fixed, so the fit is deterministic.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, CpuOverheadModel, SimConfig};
use crate::error::{Error, Result};

use super::curve::PerfCurve;

/// Fitted parameters with fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub mem_efficiency: f64,
    pub compute_efficiency: f64,
    /// Seconds per step.
    pub c0: f64,
    /// Seconds per batched request.
    pub c1: f64,
    /// Mean relative throughput error at the fitted point.
    pub residual: f64,
    /// Parameters that landed on a grid boundary.
    pub saturated_bounds: Vec<String>,
    /// Residual above [`HIGH_RESIDUAL_THRESHOLD`]: the model cannot explain
    /// the measurements well anywhere in the box.
    pub high_residual: bool,
}

/// Residual above which a fit is flagged as poor.
pub const HIGH_RESIDUAL_THRESHOLD: f64 = 0.2;

fn grid(lo: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + step * i as f64).collect()
}

struct Grids {
    mem: Vec<f64>,
    comp: Vec<f64>,
    c0: Vec<f64>,
    c1: Vec<f64>,
}

fn grids() -> Grids {
    Grids {
        // efficiencies 0.20..=1.00 step 0.05
        mem: grid(0.20, 0.05, 17),
        comp: grid(0.20, 0.05, 17),
        // c0 0..=20 ms step 1 ms
        c0: grid(0.0, 1.0e-3, 21),
        // c1 0..=0.5 ms step 0.01 ms
        c1: grid(0.0, 0.01e-3, 51),
    }
}

fn nearest(values: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (i, v) in values.iter().enumerate() {
        let d = (v - x).abs();
        if d < dist {
            dist = d;
            best = i;
        }
    }
    best
}

/// Mean relative error of simulated vs measured throughput.
fn objective(config: &SimConfig, measured: &PerfCurve, point: [f64; 4]) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.hardware.mem_efficiency = point[0];
    cfg.hardware.compute_efficiency = point[1];
    cfg.cpu_model = CpuOverheadModel {
        c0: point[2],
        c1: point[3],
    };
    let errors: Result<Vec<f64>> = measured
        .rows
        .par_iter()
        .map(|row| {
            let mut c = cfg.clone();
            c.scheduler.max_num_seqs = row.batch_size;
            let sim = run(&c, false)?;
            Ok((sim.metrics.throughput - row.throughput).abs() / row.throughput)
        })
        .collect();
    let errors = errors?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Fits (mem_efficiency, compute_efficiency, c0, c1) to a measured curve.
///
/// Requires at least four rows so the affine host model and the two
/// efficiencies are all identifiable. Descends one coordinate at a time in
/// a fixed order until no coordinate moves.
pub fn calibrate(measured: &PerfCurve, config: &SimConfig) -> Result<CalibrationResult> {
    if measured.rows.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 4 curve rows, got {}",
            measured.rows.len()
        )));
    }
    config.validate()?;
    let g = grids();
    // start from the shipped defaults, snapped onto the grid
    let mut idx = [
        nearest(&g.mem, config.hardware.mem_efficiency),
        nearest(&g.comp, config.hardware.compute_efficiency),
        nearest(&g.c0, config.cpu_model.c0),
        nearest(&g.c1, config.cpu_model.c1),
    ];
    let axes = [&g.mem, &g.comp, &g.c0, &g.c1];

    let mut cache: HashMap<[usize; 4], f64> = HashMap::new();
    let point_of = |idx: &[usize; 4]| -> [f64; 4] {
        [
            g.mem[idx[0]],
            g.comp[idx[1]],
            g.c0[idx[2]],
            g.c1[idx[3]],
        ]
    };

    let mut best_err = objective(config, measured, point_of(&idx))?;
    cache.insert(idx, best_err);

    for _round in 0..8 {
        let mut moved = false;
        for axis in 0..4 {
            // evaluate the whole line for this coordinate
            let mut todo: Vec<[usize; 4]> = Vec::new();
            for v in 0..axes[axis].len() {
                let mut candidate = idx;
                candidate[axis] = v;
                if !cache.contains_key(&candidate) {
                    todo.push(candidate);
                }
            }
            let fresh: Result<Vec<([usize; 4], f64)>> = todo
                .par_iter()
                .map(|cand| Ok((*cand, objective(config, measured, point_of(cand))?)))
                .collect();
            for (cand, err) in fresh? {
                cache.insert(cand, err);
            }
            // deterministic argmin: first index wins ties
            let mut best_v = idx[axis];
            for v in 0..axes[axis].len() {
                let mut candidate = idx;
                candidate[axis] = v;
                let err = cache[&candidate];
                if err < best_err {
                    best_err = err;
                    best_v = v;
                }
            }
            if best_v != idx[axis] {
                idx[axis] = best_v;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let point = point_of(&idx);
    let mut saturated = Vec::new();
    let names = ["mem_efficiency", "compute_efficiency", "c0", "c1"];
    for axis in 0..4 {
        if idx[axis] == 0 || idx[axis] == axes[axis].len() - 1 {
            saturated.push(names[axis].to_string());
        }
    }
    Ok(CalibrationResult {
        mem_efficiency: point[0],
        compute_efficiency: point[1],
        c0: point[2],
        c1: point[3],
        residual: best_err,
        saturated_bounds: saturated,
        high_residual: best_err > HIGH_RESIDUAL_THRESHOLD,
    })
}
