//! Converts kernel-group costs into durations.
//!
//! Each group runs for max(T_C, T_M): compute time against the group's
//! compute ceiling and memory time against the attainable bandwidth.
//! Groups within a step are serialized, matching profiled timelines where
//! attention and matmul kernels execute back-to-back within a layer. Host
//! time between steps is affine in the batch size.

use serde::{Deserialize, Serialize};

use crate::costmodel::{
    decode_attention_cost, decode_matmul_cost, prefill_cost, KernelCost, KernelGroup,
};
use crate::error::Result;
use crate::hardware::HardwareProfile;
use crate::model::{ModelGeometry, ModelSpec};
use crate::scheduler::{StepKind, StepPlan};

/// Host-side overhead per step: `c0 + c1 * batched_requests` seconds for
/// decode steps, `c0` alone for prefill steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuOverheadModel {
    /// Seconds per step.
    pub c0: f64,
    /// Seconds per batched request.
    pub c1: f64,
}

impl Default for CpuOverheadModel {
    fn default() -> Self {
        // Produces a CPU share that grows toward the measured ~30% of
        // decode time at the largest batch sizes; calibration can refit.
        CpuOverheadModel {
            c0: 2.0e-3,
            c1: 0.05e-3,
        }
    }
}

impl CpuOverheadModel {
    pub fn validate(&self) -> Result<()> {
        if self.c0 < 0.0 || self.c1 < 0.0 {
            return Err(crate::error::Error::InvalidSpec(
                "cpu overhead coefficients must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn step_overhead(&self, kind: StepKind, members: usize) -> f64 {
        match kind {
            StepKind::Prefill => self.c0,
            StepKind::Decode => self.c0 + self.c1 * members as f64,
        }
    }
}

/// Memory/compute decomposition of one kernel group in one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupTiming {
    pub t_compute: f64,
    pub t_memory: f64,
    /// max(T_C, T_M); zero for groups with no work.
    pub duration: f64,
    pub flops: u64,
    pub bytes: u64,
}

impl GroupTiming {
    pub const IDLE: GroupTiming = GroupTiming {
        t_compute: 0.0,
        t_memory: 0.0,
        duration: 0.0,
        flops: 0,
        bytes: 0,
    };

    pub fn memory_bound(&self) -> bool {
        self.t_memory >= self.t_compute
    }
}

/// Per-group durations plus host time for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub matmul: GroupTiming,
    pub attention: GroupTiming,
    pub other: GroupTiming,
    pub t_cpu: f64,
    /// Sum of group durations; excludes host time.
    pub gpu_time: f64,
    /// gpu_time + t_cpu for a single replica running alone.
    pub wall: f64,
}

impl StepTiming {
    pub fn t_matmul(&self) -> f64 {
        self.matmul.duration
    }

    pub fn t_attention(&self) -> f64 {
        self.attention.duration
    }
}

/// Compute ceiling applicable to a kernel group. Attention kernels are
/// bounded by the scalar roofline ceiling; GEMMs run on the dense-matmul
/// units.
pub fn group_compute_rate(hw: &HardwareProfile, group: KernelGroup) -> f64 {
    match group {
        KernelGroup::Attention => hw.effective_peak(),
        KernelGroup::Matmul | KernelGroup::Other => hw.effective_matmul_peak(),
    }
}

/// Raw (efficiency-free) ceiling of the group's compute resource.
pub fn group_compute_ceiling(hw: &HardwareProfile, group: KernelGroup) -> f64 {
    match group {
        KernelGroup::Attention => hw.peak_flops,
        KernelGroup::Matmul | KernelGroup::Other => hw.matmul_peak(),
    }
}

fn time_group(cost: &KernelCost, hw: &HardwareProfile) -> GroupTiming {
    let t_compute = cost.flops as f64 / group_compute_rate(hw, cost.group);
    let t_memory = cost.bytes as f64 / hw.effective_bandwidth();
    GroupTiming {
        t_compute,
        t_memory,
        duration: t_compute.max(t_memory),
        flops: cost.flops,
        bytes: cost.bytes,
    }
}

/// Prices one step plan.
pub fn step_time(
    plan: &StepPlan,
    hw: &HardwareProfile,
    geom: &ModelGeometry,
    spec: &ModelSpec,
    cpu: &CpuOverheadModel,
) -> Result<StepTiming> {
    let lens: Vec<u32> = plan.members.iter().map(|m| m.seq_len).collect();
    let (matmul, attention) = match plan.kind {
        StepKind::Prefill => {
            let pc = prefill_cost(geom, spec, &lens, true)?;
            (time_group(&pc.matmul, hw), time_group(&pc.attention, hw))
        }
        StepKind::Decode => {
            let mm = decode_matmul_cost(geom, spec, plan.members.len() as u32);
            let at = decode_attention_cost(geom, spec, &lens)?;
            (time_group(&mm, hw), time_group(&at, hw))
        }
    };
    let t_cpu = cpu.step_overhead(plan.kind, plan.members.len());
    let gpu_time = matmul.duration + attention.duration;
    Ok(StepTiming {
        matmul,
        attention,
        other: GroupTiming::IDLE,
        t_cpu,
        gpu_time,
        wall: gpu_time + t_cpu,
    })
}
