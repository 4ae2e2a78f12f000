//! Batch-size selection under a latency SLO and an efficiency floor, plus
//! memory and replica recommendations.
//!
//! The selected batch size maximizes throughput T(B) subject to
//! L(B) <= SLO and T(B) / (B * T(1)) > epsilon. The search is restricted to
//! measured rows; interpolating between benchmarked points would invent
//! feasibility. Ties break toward the smaller batch size, which holds the
//! same throughput with strictly less memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::HardwareProfile;
use crate::model::ModelGeometry;
use crate::workload::{generate_workload, WorkloadSpec};

use super::curve::PerfCurve;

/// Latency objective on inter-token latency, either absolute or relative to
/// the latency measured at a base batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SloSpec {
    /// Bound in seconds.
    Absolute { bound: f64 },
    /// `multiplier` times the latency at `base_batch`.
    Relative { multiplier: f64, base_batch: u32 },
}

impl SloSpec {
    /// Resolves to an absolute bound in seconds against a curve.
    pub fn bound(&self, curve: &PerfCurve) -> Result<f64> {
        let bound = match *self {
            SloSpec::Absolute { bound } => bound,
            SloSpec::Relative {
                multiplier,
                base_batch,
            } => {
                let row = curve.row_at(base_batch).ok_or_else(|| {
                    Error::InvalidSlo(format!(
                        "relative SLO needs batch size {base_batch} in the curve"
                    ))
                })?;
                multiplier * row.itl
            }
        };
        if !(bound > 0.0) {
            return Err(Error::InvalidSlo(format!("bound must be > 0, got {bound}")));
        }
        Ok(bound)
    }
}

/// Why a candidate batch size was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub batch_size: u32,
    pub slo_violated: bool,
    pub epsilon_violated: bool,
}

/// Outcome of the batch-size search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcaResult {
    pub feasible: bool,
    /// Selected batch size; 0 when infeasible.
    pub b_opt: u32,
    pub throughput: f64,
    pub itl: f64,
    /// T(B) / (B * T(1)) at the selected row.
    pub efficiency: f64,
    pub slo_bound: f64,
    pub epsilon: f64,
    /// Rejected candidates with their reasons.
    pub audit: Vec<AuditEntry>,
}

/// Finds the highest-throughput row satisfying both constraints.
pub fn find_bopt(curve: &PerfCurve, slo: &SloSpec, epsilon: f64) -> Result<BcaResult> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    let bound = slo.bound(curve)?;
    let t1 = curve.base_throughput();

    let mut audit = Vec::new();
    let mut best: Option<&super::curve::CurveRow> = None;
    for row in &curve.rows {
        let slo_ok = row.itl <= bound;
        let efficiency = row.throughput / (row.batch_size as f64 * t1);
        let epsilon_ok = efficiency > epsilon;
        if slo_ok && epsilon_ok {
            // strict inequality keeps the earlier (smaller) batch on ties
            if best.map_or(true, |b| row.throughput > b.throughput) {
                best = Some(row);
            }
        } else {
            audit.push(AuditEntry {
                batch_size: row.batch_size,
                slo_violated: !slo_ok,
                epsilon_violated: !epsilon_ok,
            });
        }
    }
    Ok(match best {
        Some(row) => BcaResult {
            feasible: true,
            b_opt: row.batch_size,
            throughput: row.throughput,
            itl: row.itl,
            efficiency: row.throughput / (row.batch_size as f64 * t1),
            slo_bound: bound,
            epsilon,
            audit,
        },
        None => BcaResult {
            feasible: false,
            b_opt: 0,
            throughput: 0.0,
            itl: 0.0,
            efficiency: 0.0,
            slo_bound: bound,
            epsilon,
            audit,
        },
    })
}

/// Memory sizing for a chosen batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecommendation {
    /// KV bytes to provision, block-rounded per request.
    pub kv_bytes: u64,
    /// (weights + KV + executor reserve) / device memory.
    pub device_fraction: f64,
    /// Slice of the default allocation this frees, floored at zero.
    pub freed_fraction: f64,
    /// KV demand exceeded capacity and was capped.
    pub capped: bool,
}

/// Sizes the KV allocation for `b_opt` concurrent requests whose total
/// length sits at the given percentile of the workload, block-rounded. The
/// executor reserve stays at its usual slice of device memory.
pub fn recommend_memory(
    geom: &ModelGeometry,
    hw: &HardwareProfile,
    b_opt: u32,
    workload: &WorkloadSpec,
    percentile: f64,
    block_size: u32,
) -> Result<MemoryRecommendation> {
    if b_opt == 0 {
        return Err(Error::InvalidSpec("b_opt must be >= 1".into()));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "percentile must be in (0, 1], got {percentile}"
        )));
    }
    let requests = generate_workload(workload)?;
    let mut totals: Vec<u64> = requests
        .iter()
        .map(|r| (r.input_len + r.output_len) as u64)
        .collect();
    totals.sort_unstable();
    let idx = ((percentile * totals.len() as f64).ceil() as usize).clamp(1, totals.len()) - 1;
    let tokens = totals[idx];
    let blocks = tokens.div_ceil(block_size as u64);
    let mut kv_bytes = b_opt as u64 * blocks * block_size as u64 * geom.kv_bytes_per_token;

    let capacity = hw.claimable_bytes().saturating_sub(geom.weight_bytes);
    let capped = kv_bytes > capacity;
    if capped {
        kv_bytes = capacity;
    }
    let reserve = hw.device_memory as f64 * (1.0 - hw.memory_util_fraction);
    let device_fraction =
        (geom.weight_bytes as f64 + kv_bytes as f64 + reserve) / hw.device_memory as f64;
    let freed_fraction = (hw.memory_util_fraction - device_fraction).max(0.0);
    Ok(MemoryRecommendation {
        kv_bytes,
        device_fraction,
        freed_fraction,
        capped,
    })
}

/// How many instances of `per_instance_bytes` fit in the claimable memory.
pub fn recommend_replicas(hw: &HardwareProfile, per_instance_bytes: u64) -> u32 {
    if per_instance_bytes == 0 {
        return 1;
    }
    ((hw.claimable_bytes() / per_instance_bytes) as u32).max(1)
}

/// Footprint of one serving instance at the recommended KV size. Each
/// instance carries its own executor reserve in proportion to the memory it
/// manages, so the footprint is (weights + KV) / memory_util_fraction.
pub fn instance_footprint_bytes(
    geom: &ModelGeometry,
    hw: &HardwareProfile,
    kv_bytes: u64,
) -> u64 {
    ((geom.weight_bytes + kv_bytes) as f64 / hw.memory_util_fraction) as u64
}
