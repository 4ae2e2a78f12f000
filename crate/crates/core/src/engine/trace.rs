//! Trace event stream and aggregate metrics, plus their serialized forms.
//!
//! Traces are JSON lines: a `{"schema_version":1}` header line followed by
//! one event object per line. Metrics serialize as a single JSON document
//! carrying the same `schema_version`. All times are seconds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::costmodel::KernelGroup;
use crate::error::Result;
use crate::hardware::HardwareProfile;

pub const SCHEMA_VERSION: u32 = 1;

/// Activity class of a trace event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
    Cpu,
    Idle,
}

/// One interval of replica activity. Events of a replica never overlap and
/// appear in time order. `bandwidth_share` is the fraction of raw DRAM
/// bandwidth the interval consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub replica: u32,
    pub start: f64,
    pub end: f64,
    pub phase: Phase,
    pub kernel_group: Option<KernelGroup>,
    pub bytes: f64,
    pub flops: f64,
    pub bandwidth_share: f64,
}

/// Serving and utilization metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    /// (input + output tokens) per second over the whole run.
    pub throughput: f64,
    /// Mean inter-token latency in seconds.
    pub itl: f64,
    /// Mean end-to-end request latency in seconds.
    pub e2e: f64,
    pub kv_usage_peak: f64,
    pub kv_usage_mean: f64,
    /// Fraction of step wall time spent in decode steps.
    pub decode_time_fraction: f64,
    /// Fraction of step wall time spent in host gaps.
    pub cpu_time_fraction: f64,
    pub dram_util_mean: f64,
    pub dram_util_peak: f64,
    pub compute_util_mean: f64,
    pub compute_util_peak: f64,
}

/// Writes the versioned JSONL trace.
pub fn write_trace_jsonl<W: Write>(mut w: W, events: &[TraceEvent]) -> Result<()> {
    writeln!(w, "{{\"schema_version\":{SCHEMA_VERSION}}}")?;
    for e in events {
        let line = serde_json::to_string(e).expect("trace events serialize");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// One sample of the utilization time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilizationSample {
    pub start: f64,
    pub end: f64,
    pub dram_fraction: f64,
    pub compute_fraction: f64,
}

/// Utilization summary over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilizationSummary {
    pub dram_mean: f64,
    pub dram_peak: f64,
    pub compute_mean: f64,
    pub compute_peak: f64,
}

/// Piecewise-constant DRAM and compute utilization reconstructed from a
/// trace. DRAM fractions are shares of raw bandwidth; compute fractions are
/// achieved FLOP rates over the largest compute ceiling of the device.
pub fn utilization_proxies(
    trace: &[TraceEvent],
    hw: &HardwareProfile,
) -> (Vec<UtilizationSample>, UtilizationSummary) {
    let gpu_events: Vec<&TraceEvent> = trace
        .iter()
        .filter(|e| matches!(e.phase, Phase::Prefill | Phase::Decode) && e.end > e.start)
        .collect();
    let mut cuts: Vec<f64> = Vec::with_capacity(trace.len() * 2);
    let (mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in trace {
        t0 = t0.min(e.start);
        t1 = t1.max(e.end);
    }
    if !t0.is_finite() || !(t1 > t0) {
        let z = UtilizationSummary {
            dram_mean: 0.0,
            dram_peak: 0.0,
            compute_mean: 0.0,
            compute_peak: 0.0,
        };
        return (Vec::new(), z);
    }
    cuts.push(t0);
    cuts.push(t1);
    for e in &gpu_events {
        cuts.push(e.start);
        cuts.push(e.end);
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    cuts.dedup();

    let compute_ceiling = hw.matmul_peak().max(hw.peak_flops);
    let mut samples = Vec::with_capacity(cuts.len());
    let mut dram_area = 0.0;
    let mut compute_area = 0.0;
    let mut dram_peak = 0.0f64;
    let mut compute_peak = 0.0f64;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let mid = 0.5 * (a + b);
        let mut byte_rate = 0.0;
        let mut flop_rate = 0.0;
        for e in &gpu_events {
            if e.start <= mid && mid < e.end {
                let dur = e.end - e.start;
                byte_rate += e.bytes / dur;
                flop_rate += e.flops / dur;
            }
        }
        let dram_fraction = byte_rate / hw.dram_bandwidth;
        let compute_fraction = flop_rate / compute_ceiling;
        dram_peak = dram_peak.max(dram_fraction);
        compute_peak = compute_peak.max(compute_fraction);
        dram_area += dram_fraction * (b - a);
        compute_area += compute_fraction * (b - a);
        samples.push(UtilizationSample {
            start: a,
            end: b,
            dram_fraction,
            compute_fraction,
        });
    }
    let span = t1 - t0;
    let summary = UtilizationSummary {
        dram_mean: dram_area / span,
        dram_peak,
        compute_mean: compute_area / span,
        compute_peak,
    };
    (samples, summary)
}
