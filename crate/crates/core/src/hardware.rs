//! Device capability envelope used by the roofline analysis and the timing model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Peak rates, memory capacity and efficiency derates of one GPU.
///
/// `peak_flops` is the compute ceiling used for roofline classification and
/// for attention-kernel compute time. `matmul_peak_flops`, when set, is the
/// dense-GEMM (tensor core) ceiling used for matmul timing; GEMM kernels run
/// on dedicated units whose peak is far above the scalar roofline ceiling,
/// and without the split the prefill phase would dwarf decode, which no
/// measured serving stack shows. When absent, `peak_flops` is used for all
/// kernel groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    /// Compute ceiling in FLOP/s (roofline plot ceiling; attention kernels).
    pub peak_flops: f64,
    /// Dense-GEMM compute ceiling in FLOP/s, if distinct from `peak_flops`.
    #[serde(default)]
    pub matmul_peak_flops: Option<f64>,
    /// DRAM bandwidth in bytes/s.
    pub dram_bandwidth: f64,
    /// Device memory in bytes.
    pub device_memory: u64,
    /// Fraction of `dram_bandwidth` a single kernel stream attains, in (0, 1].
    pub mem_efficiency: f64,
    /// Fraction of the compute ceiling a single kernel stream attains, in (0, 1].
    pub compute_efficiency: f64,
    /// Fraction of device memory the serving engine may claim, in (0, 1].
    #[serde(default = "default_memory_util")]
    pub memory_util_fraction: f64,
}

fn default_memory_util() -> f64 {
    0.9
}

/// Single-stream efficiency defaults: the measured attention kernels reach
/// roughly 60% of the attainable bandwidth bound, and GEMMs behave similarly.
pub const DEFAULT_MEM_EFFICIENCY: f64 = 0.65;
pub const DEFAULT_COMPUTE_EFFICIENCY: f64 = 0.6;

impl HardwareProfile {
    /// Checks all envelope invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.peak_flops > 0.0) {
            return fail(format!("peak_flops must be > 0, got {}", self.peak_flops));
        }
        if let Some(p) = self.matmul_peak_flops {
            if !(p > 0.0) {
                return fail(format!("matmul_peak_flops must be > 0, got {p}"));
            }
        }
        if !(self.dram_bandwidth > 0.0) {
            return fail(format!(
                "dram_bandwidth must be > 0, got {}",
                self.dram_bandwidth
            ));
        }
        if self.device_memory == 0 {
            return fail("device_memory must be > 0".to_string());
        }
        for (name, v) in [
            ("mem_efficiency", self.mem_efficiency),
            ("compute_efficiency", self.compute_efficiency),
            ("memory_util_fraction", self.memory_util_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        Ok(())
    }

    /// GEMM compute ceiling; falls back to `peak_flops` when not set.
    pub fn matmul_peak(&self) -> f64 {
        self.matmul_peak_flops.unwrap_or(self.peak_flops)
    }

    /// Single-stream attainable bandwidth in bytes/s.
    pub fn effective_bandwidth(&self) -> f64 {
        self.mem_efficiency * self.dram_bandwidth
    }

    /// Single-stream attainable attention compute rate in FLOP/s.
    pub fn effective_peak(&self) -> f64 {
        self.compute_efficiency * self.peak_flops
    }

    /// Single-stream attainable GEMM compute rate in FLOP/s.
    pub fn effective_matmul_peak(&self) -> f64 {
        self.compute_efficiency * self.matmul_peak()
    }

    /// Bytes of device memory the serving engine may claim.
    pub fn claimable_bytes(&self) -> u64 {
        (self.device_memory as f64 * self.memory_util_fraction) as u64
    }
}
