//! Time simulation: prices scheduler steps with the cost model, accumulates
//! metrics and traces, and co-schedules replicas under shared-GPU modes.

mod replicate;
mod timing;
mod trace;

pub use replicate::{run_replicated, ReplicaMode, ReplicatedResult};
pub use timing::{group_compute_ceiling, group_compute_rate, step_time, CpuOverheadModel, GroupTiming, StepTiming};
pub use trace::{
    utilization_proxies, write_trace_jsonl, Metrics, Phase, TraceEvent, UtilizationSample,
    UtilizationSummary, SCHEMA_VERSION,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::costmodel::KernelGroup;
use crate::error::{Error, Result};
use crate::hardware::HardwareProfile;
use crate::kvcache::{PagedAllocator, DEFAULT_BLOCK_SIZE};
use crate::model::{derive_geometry, ModelGeometry, ModelSpec};
use crate::scheduler::{Scheduler, SchedulerConfig, StepKind, StepPlan};
use crate::workload::{generate_workload, Request, WorkloadSpec};

fn default_block_size() -> u32 {
    DEFAULT_BLOCK_SIZE
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hardware: HardwareProfile,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    pub scheduler: SchedulerConfig,
    pub cpu_model: CpuOverheadModel,
    /// Tokens per KV-cache block.
    #[serde(default = "default_block_size")]
    pub block_size: u32,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.hardware.validate()?;
        self.model.validate()?;
        self.workload.validate()?;
        self.scheduler.validate()?;
        self.cpu_model.validate()?;
        if self.block_size == 0 {
            return Err(Error::InvalidSpec("block_size must be >= 1".into()));
        }
        Ok(())
    }

    /// KV capacity in bytes once weights are resident, for a replica owning
    /// `device_memory / replicas` of the device.
    pub fn kv_capacity_bytes(&self, geom: &ModelGeometry, replicas: u32) -> Result<u64> {
        let per_device = self.hardware.device_memory / replicas as u64;
        let claimable = (per_device as f64 * self.hardware.memory_util_fraction) as u64;
        claimable.checked_sub(geom.weight_bytes).ok_or_else(|| {
            Error::InsufficientMemory(format!(
                "weights need {} B but only {claimable} B are claimable per replica",
                geom.weight_bytes
            ))
        })
    }
}

/// Result of a single-replica run.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub metrics: Metrics,
    pub trace: Vec<TraceEvent>,
}

/// GPU work unit handed to the shared-device drivers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GpuSegment {
    pub group: KernelGroup,
    pub phase: Phase,
    /// Duration when running alone at the single-stream rates.
    pub solo_duration: f64,
    pub bytes: f64,
    pub flops: f64,
    /// True when the segment is bound by DRAM traffic rather than compute.
    pub memory_bound: bool,
}

/// What a replica wants to do next.
#[derive(Debug)]
pub(crate) enum Work {
    /// One scheduler step: GPU segments (in order) then a host gap.
    Step {
        segments: Vec<GpuSegment>,
        cpu: f64,
    },
    /// Nothing runnable until this arrival time.
    WaitArrival(f64),
    Finished,
}

#[derive(Debug, Default, Clone)]
struct RequestTrack {
    arrival: f64,
    last_emit: Option<f64>,
    gap_sum: f64,
    gap_count: u64,
    completed_at: Option<f64>,
}

/// Per-replica simulation state shared by the single-run and replicated
/// drivers so both price and account steps identically.
pub(crate) struct ReplicaSim {
    pub replica_id: u32,
    scheduler: Scheduler,
    geom: ModelGeometry,
    spec: ModelSpec,
    hw: HardwareProfile,
    cpu_model: CpuOverheadModel,
    current_plan: Option<StepPlan>,
    tracks: BTreeMap<u64, RequestTrack>,
    total_tokens: u64,
    // busy-time accumulators (exclude waits for the GPU line)
    prefill_busy: f64,
    decode_busy: f64,
    cpu_busy_prefill: f64,
    cpu_busy_decode: f64,
    kv_area: f64,
    kv_peak: f64,
    bytes_executed: f64,
    flops_executed: f64,
    dram_rate_peak: f64,
    compute_rate_peak: f64,
    trace: Vec<TraceEvent>,
    record_trace: bool,
    last_event_end: f64,
    stashed: Option<(Vec<GpuSegment>, f64)>,
}

impl ReplicaSim {
    pub fn new(
        config: &SimConfig,
        requests: &[Request],
        replica_id: u32,
        replicas: u32,
        record_trace: bool,
    ) -> Result<Self> {
        let geom = derive_geometry(&config.model)?;
        for r in requests {
            if r.input_len + r.output_len > config.model.max_context {
                return Err(Error::InvalidWorkload(format!(
                    "request {} needs {} tokens but max_context is {}",
                    r.id,
                    r.input_len + r.output_len,
                    config.model.max_context
                )));
            }
        }
        let capacity = config.kv_capacity_bytes(&geom, replicas)?;
        let allocator = PagedAllocator::new(capacity, config.block_size, geom.kv_bytes_per_token)?;
        let mut scheduler = Scheduler::new(config.scheduler, allocator)?;
        let mut tracks = BTreeMap::new();
        let mut total_tokens = 0u64;
        for r in requests {
            scheduler.submit(*r)?;
            tracks.insert(
                r.id,
                RequestTrack {
                    arrival: r.arrival_time,
                    ..Default::default()
                },
            );
            total_tokens += (r.input_len + r.output_len) as u64;
        }
        Ok(ReplicaSim {
            replica_id,
            scheduler,
            geom,
            spec: config.model.clone(),
            hw: config.hardware.clone(),
            cpu_model: config.cpu_model,
            current_plan: None,
            tracks,
            total_tokens,
            prefill_busy: 0.0,
            decode_busy: 0.0,
            cpu_busy_prefill: 0.0,
            cpu_busy_decode: 0.0,
            kv_area: 0.0,
            kv_peak: 0.0,
            bytes_executed: 0.0,
            flops_executed: 0.0,
            dram_rate_peak: 0.0,
            compute_rate_peak: 0.0,
            trace: Vec::new(),
            record_trace,
            last_event_end: 0.0,
            stashed: None,
        })
    }

    /// Holds a planned step while the replica waits for the GPU line.
    pub(crate) fn stash_step(&mut self, segments: Vec<GpuSegment>, cpu: f64) {
        debug_assert!(self.stashed.is_none());
        self.stashed = Some((segments, cpu));
    }

    pub(crate) fn unstash_step(&mut self) -> (Vec<GpuSegment>, f64) {
        self.stashed.take().expect("a step was stashed")
    }

    /// Plans the next step and prices it. The driver must then execute the
    /// returned segments in order, reporting times back.
    pub fn next_work(&mut self, now: f64) -> Result<Work> {
        match self.scheduler.next_step(now)? {
            Some(plan) => {
                let t = step_time(&plan, &self.hw, &self.geom, &self.spec, &self.cpu_model)?;
                let phase = match plan.kind {
                    StepKind::Prefill => Phase::Prefill,
                    StepKind::Decode => Phase::Decode,
                };
                let segments = vec![
                    GpuSegment {
                        group: KernelGroup::Matmul,
                        phase,
                        solo_duration: t.matmul.duration,
                        bytes: t.matmul.bytes as f64,
                        flops: t.matmul.flops as f64,
                        memory_bound: t.matmul.memory_bound(),
                    },
                    GpuSegment {
                        group: KernelGroup::Attention,
                        phase,
                        solo_duration: t.attention.duration,
                        bytes: t.attention.bytes as f64,
                        flops: t.attention.flops as f64,
                        memory_bound: t.attention.memory_bound(),
                    },
                ];
                self.kv_peak = self.kv_peak.max(plan.kv_usage);
                self.current_plan = Some(plan);
                Ok(Work::Step {
                    segments,
                    cpu: t.t_cpu,
                })
            }
            None => match self.scheduler.next_arrival() {
                Some(at) => Ok(Work::WaitArrival(at)),
                None => Ok(Work::Finished),
            },
        }
    }

    /// Records one executed interval of a GPU segment. `fraction` is the
    /// share of the segment's work done in this interval.
    pub fn record_gpu_interval(&mut self, seg: &GpuSegment, start: f64, end: f64, fraction: f64) {
        debug_assert!(end >= start);
        let dur = end - start;
        match seg.phase {
            Phase::Prefill => self.prefill_busy += dur,
            Phase::Decode => self.decode_busy += dur,
            _ => {}
        }
        if let Some(plan) = &self.current_plan {
            self.kv_area += plan.kv_usage * dur;
        }
        self.bytes_executed += seg.bytes * fraction;
        self.flops_executed += seg.flops * fraction;
        if dur > 0.0 {
            self.dram_rate_peak = self.dram_rate_peak.max(seg.bytes * fraction / dur);
            self.compute_rate_peak = self.compute_rate_peak.max(seg.flops * fraction / dur);
        }
        if self.record_trace && dur > 0.0 {
            let byte_rate = seg.bytes * fraction / dur;
            self.trace.push(TraceEvent {
                replica: self.replica_id,
                start,
                end,
                phase: seg.phase,
                kernel_group: Some(seg.group),
                bytes: seg.bytes * fraction,
                flops: seg.flops * fraction,
                bandwidth_share: byte_rate / self.hw.dram_bandwidth,
            });
        }
        self.last_event_end = self.last_event_end.max(end);
    }

    /// Marks the end of the step's GPU portion: tokens are emitted and
    /// completions retire at this instant.
    pub fn on_gpu_portion_done(&mut self, at: f64) {
        let plan = self.current_plan.as_ref().expect("step in flight");
        if plan.kind == StepKind::Decode {
            for m in &plan.members {
                let track = self.tracks.get_mut(&m.id).expect("tracked request");
                if let Some(last) = track.last_emit {
                    track.gap_sum += at - last;
                    track.gap_count += 1;
                }
                track.last_emit = Some(at);
            }
        }
        for id in plan.completed.clone() {
            let track = self.tracks.get_mut(&id).expect("tracked request");
            track.completed_at = Some(at);
        }
    }

    /// Records the host gap after the GPU portion.
    pub fn record_cpu(&mut self, start: f64, end: f64) {
        let dur = end - start;
        match self.current_plan.as_ref().map(|p| p.kind) {
            Some(StepKind::Prefill) => self.cpu_busy_prefill += dur,
            _ => self.cpu_busy_decode += dur,
        }
        if let Some(plan) = &self.current_plan {
            self.kv_area += plan.kv_usage * dur;
        }
        if self.record_trace && end > start {
            self.trace.push(TraceEvent {
                replica: self.replica_id,
                start,
                end,
                phase: Phase::Cpu,
                kernel_group: None,
                bytes: 0.0,
                flops: 0.0,
                bandwidth_share: 0.0,
            });
        }
        self.last_event_end = self.last_event_end.max(end);
        self.current_plan = None;
    }

    pub fn record_idle(&mut self, start: f64, end: f64) {
        if self.record_trace && end > start {
            self.trace.push(TraceEvent {
                replica: self.replica_id,
                start,
                end,
                phase: Phase::Idle,
                kernel_group: None,
                bytes: 0.0,
                flops: 0.0,
                bandwidth_share: 0.0,
            });
        }
        self.last_event_end = self.last_event_end.max(end);
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    /// Serving metrics over this replica's requests. Utilization fields are
    /// left at zero; drivers fill them from the executed timeline.
    pub fn metrics(&self, wall: f64) -> Metrics {
        let mut gap_sum = 0.0;
        let mut gap_count = 0u64;
        let mut e2e_sum = 0.0;
        let mut n = 0u64;
        for track in self.tracks.values() {
            gap_sum += track.gap_sum;
            gap_count += track.gap_count;
            if let Some(done) = track.completed_at {
                e2e_sum += done - track.arrival;
                n += 1;
            }
        }
        let cpu_busy = self.cpu_busy_prefill + self.cpu_busy_decode;
        let busy = self.prefill_busy + self.decode_busy + cpu_busy;
        Metrics {
            schema_version: SCHEMA_VERSION,
            throughput: if wall > 0.0 {
                self.total_tokens as f64 / wall
            } else {
                0.0
            },
            itl: if gap_count > 0 {
                gap_sum / gap_count as f64
            } else {
                0.0
            },
            e2e: if n > 0 { e2e_sum / n as f64 } else { 0.0 },
            kv_usage_peak: self.kv_peak,
            kv_usage_mean: if busy > 0.0 { self.kv_area / busy } else { 0.0 },
            decode_time_fraction: if busy > 0.0 {
                (self.decode_busy + self.cpu_busy_decode) / busy
            } else {
                0.0
            },
            cpu_time_fraction: if busy > 0.0 { cpu_busy / busy } else { 0.0 },
            dram_util_mean: if wall > 0.0 {
                self.bytes_executed / (self.hw.dram_bandwidth * wall)
            } else {
                0.0
            },
            dram_util_peak: self.dram_rate_peak / self.hw.dram_bandwidth,
            compute_util_mean: if wall > 0.0 {
                self.flops_executed / (self.compute_ceiling() * wall)
            } else {
                0.0
            },
            compute_util_peak: self.compute_rate_peak / self.compute_ceiling(),
        }
    }

    fn compute_ceiling(&self) -> f64 {
        self.hw.matmul_peak().max(self.hw.peak_flops)
    }

    /// Raw accumulators for cross-replica aggregation.
    pub(crate) fn accumulators(&self) -> SimAccumulators {
        let mut gap_sum = 0.0;
        let mut gap_count = 0u64;
        let mut e2e_sum = 0.0;
        let mut e2e_count = 0u64;
        for track in self.tracks.values() {
            gap_sum += track.gap_sum;
            gap_count += track.gap_count;
            if let Some(done) = track.completed_at {
                e2e_sum += done - track.arrival;
                e2e_count += 1;
            }
        }
        SimAccumulators {
            total_tokens: self.total_tokens,
            prefill_busy: self.prefill_busy,
            decode_busy: self.decode_busy,
            cpu_busy_prefill: self.cpu_busy_prefill,
            cpu_busy_decode: self.cpu_busy_decode,
            kv_area: self.kv_area,
            kv_peak: self.kv_peak,
            bytes_executed: self.bytes_executed,
            flops_executed: self.flops_executed,
            gap_sum,
            gap_count,
            e2e_sum,
            e2e_count,
        }
    }
}

/// Raw per-replica sums used to build aggregate metrics.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SimAccumulators {
    pub total_tokens: u64,
    pub prefill_busy: f64,
    pub decode_busy: f64,
    pub cpu_busy_prefill: f64,
    pub cpu_busy_decode: f64,
    pub kv_area: f64,
    pub kv_peak: f64,
    pub bytes_executed: f64,
    pub flops_executed: f64,
    pub gap_sum: f64,
    pub gap_count: u64,
    pub e2e_sum: f64,
    pub e2e_count: u64,
}

/// Runs one replica alone on the device.
pub fn run(config: &SimConfig, record_trace: bool) -> Result<SimResult> {
    config.validate()?;
    let requests = generate_workload(&config.workload)?;
    let mut sim = ReplicaSim::new(config, &requests, 0, 1, record_trace)?;

    let mut now = 0.0f64;
    loop {
        match sim.next_work(now)? {
            Work::Step { segments, cpu } => {
                for seg in &segments {
                    let end = now + seg.solo_duration;
                    sim.record_gpu_interval(seg, now, end, 1.0);
                    now = end;
                }
                sim.on_gpu_portion_done(now);
                let cpu_end = now + cpu;
                sim.record_cpu(now, cpu_end);
                now = cpu_end;
            }
            Work::WaitArrival(at) => {
                sim.record_idle(now, at);
                now = at;
            }
            Work::Finished => break,
        }
    }

    let metrics = sim.metrics(now);
    Ok(SimResult {
        metrics,
        trace: sim.take_trace(),
    })
}
