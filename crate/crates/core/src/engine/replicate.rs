//! Co-scheduling of model replicas on one device.
//!
//! Two sharing modes:
//!
//! * `Timeshared` — GPU portions of replica steps execute exclusively on a
//!   single global timeline in request order (FCFS), while a replica's host
//!   gap overlaps other replicas' GPU work.
//! * `Parallel` — fluid contention. Every active GPU segment progresses at
//!   min(its solo rate, its max-min fair share of the bottleneck resource).
//!   A single kernel stream only ever attains `efficiency * ceiling`, so
//!   its solo rate caps below the device limit; co-running streams from
//!   other replicas can raise combined utilization up to the raw ceiling,
//!   which is exactly the headroom replication exploits. Rates are
//!   recomputed at every segment boundary. Host gaps always overlap.
//!
//! Memory-bound segments contend for DRAM bandwidth; compute-bound segments
//! contend for their kernel group's compute ceiling. All replicas start at
//! t = 0 and the workload is split round-robin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{generate_workload, Request};

use super::trace::{Metrics, TraceEvent, UtilizationSummary, SCHEMA_VERSION};
use super::{GpuSegment, ReplicaSim, SimAccumulators, SimConfig, Work};
use crate::costmodel::KernelGroup;

/// GPU sharing discipline for replicated serving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplicaMode {
    Timeshared,
    Parallel,
}

/// Outcome of a replicated run.
#[derive(Debug, Clone)]
pub struct ReplicatedResult {
    pub per_replica: Vec<Metrics>,
    pub aggregate: Metrics,
    pub utilization: UtilizationSummary,
    pub trace: Vec<TraceEvent>,
}

/// Deals requests round-robin across replicas, preserving arrival order
/// within each replica.
pub fn split_round_robin(requests: &[Request], replicas: u32) -> Vec<Vec<Request>> {
    let mut out = vec![Vec::new(); replicas as usize];
    for (i, r) in requests.iter().enumerate() {
        out[i % replicas as usize].push(*r);
    }
    out
}

/// Contended resource of a GPU segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pool {
    Memory,
    ComputeMatmul,
    ComputeAttention,
}

fn pool_of(seg: &GpuSegment) -> Pool {
    if seg.memory_bound {
        Pool::Memory
    } else {
        match seg.group {
            KernelGroup::Attention => Pool::ComputeAttention,
            _ => Pool::ComputeMatmul,
        }
    }
}

#[derive(Debug)]
enum State {
    /// Needs a scheduling decision at the given time.
    Plan { at: f64 },
    /// Waiting for the exclusive GPU line (timeshared mode only).
    WaitLine,
    /// Executing GPU segments of one step.
    Gpu {
        segments: Vec<GpuSegment>,
        cpu: f64,
        idx: usize,
        /// Remaining solo-equivalent seconds of the current segment.
        remaining: f64,
        /// Solo-equivalent seconds of the current segment (for fractions).
        total: f64,
        holds_line: bool,
    },
    Cpu { until: f64 },
    WaitArrival { until: f64 },
    Done,
}

struct Replica {
    sim: ReplicaSim,
    state: State,
    end_time: f64,
}

const EPS: f64 = 1e-15;
/// A segment counts as finished once its leftover falls below this share of
/// its solo duration; absorbs floating-point dust without losing real work.
const REL_DONE: f64 = 1e-9;
/// Safety valve against event-loop pathologies.
const MAX_EVENTS: u64 = 50_000_000;

/// Runs `replicas` model instances over an equal split of device memory and
/// a round-robin split of the workload.
pub fn run_replicated(
    config: &SimConfig,
    replicas: u32,
    mode: ReplicaMode,
    record_trace: bool,
) -> Result<ReplicatedResult> {
    if replicas == 0 {
        return Err(Error::InvalidSpec("replicas must be >= 1".into()));
    }
    config.validate()?;
    let requests = generate_workload(&config.workload)?;
    let shares = split_round_robin(&requests, replicas);

    let mut reps: Vec<Replica> = Vec::with_capacity(replicas as usize);
    for (i, share) in shares.iter().enumerate() {
        let sim = ReplicaSim::new(config, share, i as u32, replicas, record_trace)?;
        reps.push(Replica {
            sim,
            state: State::Plan { at: 0.0 },
            end_time: 0.0,
        });
    }

    let inv_mem_eff = 1.0 / config.hardware.mem_efficiency;
    let inv_comp_eff = 1.0 / config.hardware.compute_efficiency;
    let bandwidth = config.hardware.dram_bandwidth;
    let compute_ceiling = config.hardware.matmul_peak().max(config.hardware.peak_flops);

    // aggregate instantaneous utilization tracking
    let mut dram_peak = 0.0f64;
    let mut compute_peak = 0.0f64;
    let mut share_violation = 0.0f64;

    let mut line_holder: Option<usize> = None;
    let mut line_queue: Vec<(f64, usize)> = Vec::new();

    let mut now = 0.0f64;
    let mut events = 0u64;
    loop {
        events += 1;
        if events > MAX_EVENTS {
            return Err(Error::StallDetected(
                "replicated simulation exceeded the event budget".into(),
            ));
        }
        // settle decisions at the current instant until the picture is stable
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..reps.len() {
                let take = match &reps[i].state {
                    State::Plan { at } if *at <= now + EPS => true,
                    State::Cpu { until } if *until <= now + EPS => true,
                    State::WaitArrival { until } if *until <= now + EPS => true,
                    _ => false,
                };
                if !take {
                    continue;
                }
                if let State::Cpu { until } = reps[i].state {
                    reps[i].end_time = reps[i].end_time.max(until);
                }
                match reps[i].sim.next_work(now)? {
                    Work::Step { segments, cpu } => {
                        let first_total = segments[0].solo_duration;
                        match mode {
                            ReplicaMode::Parallel => {
                                reps[i].state = State::Gpu {
                                    segments,
                                    cpu,
                                    idx: 0,
                                    remaining: first_total,
                                    total: first_total,
                                    holds_line: false,
                                };
                            }
                            ReplicaMode::Timeshared => {
                                if line_holder.is_none() {
                                    line_holder = Some(i);
                                    reps[i].state = State::Gpu {
                                        segments,
                                        cpu,
                                        idx: 0,
                                        remaining: first_total,
                                        total: first_total,
                                        holds_line: true,
                                    };
                                } else {
                                    line_queue.push((now, i));
                                    reps[i].state = State::WaitLine;
                                    reps[i].sim.stash_step(segments, cpu);
                                }
                            }
                        }
                        changed = true;
                    }
                    Work::WaitArrival(at) => {
                        reps[i].sim.record_idle(now, at);
                        reps[i].state = State::WaitArrival { until: at };
                        changed = true;
                    }
                    Work::Finished => {
                        reps[i].state = State::Done;
                        changed = true;
                    }
                }
            }
            // hand the free line to the earliest requester
            if line_holder.is_none() && !line_queue.is_empty() {
                line_queue.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let (since, i) = line_queue.remove(0);
                let (segments, cpu) = reps[i].sim.unstash_step();
                reps[i].sim.record_idle(since, now);
                let first_total = segments[0].solo_duration;
                line_holder = Some(i);
                reps[i].state = State::Gpu {
                    segments,
                    cpu,
                    idx: 0,
                    remaining: first_total,
                    total: first_total,
                    holds_line: true,
                };
                changed = true;
            }
        }

        if reps.iter().all(|r| matches!(r.state, State::Done)) {
            break;
        }

        // per-pool active segment counts
        let mut counts = [0usize; 3];
        for r in &reps {
            if let State::Gpu { segments, idx, .. } = &r.state {
                let p = pool_of(&segments[*idx]);
                counts[p as usize] += 1;
            }
        }
        let rel_rate = |pool: Pool| -> f64 {
            let n = counts[pool as usize] as f64;
            let inv_eff = match pool {
                Pool::Memory => inv_mem_eff,
                _ => inv_comp_eff,
            };
            (inv_eff / n).min(1.0)
        };

        // next event: earliest of segment finishes, cpu ends, arrivals
        let mut t_next = f64::INFINITY;
        for r in &reps {
            match &r.state {
                State::Gpu {
                    segments,
                    idx,
                    remaining,
                    ..
                } => {
                    let rate = match mode {
                        ReplicaMode::Parallel => rel_rate(pool_of(&segments[*idx])),
                        ReplicaMode::Timeshared => 1.0,
                    };
                    if rate > 0.0 {
                        t_next = t_next.min(now + remaining / rate);
                    }
                }
                State::Cpu { until } => t_next = t_next.min(*until),
                State::WaitArrival { until } => t_next = t_next.min(*until),
                State::Plan { at } => t_next = t_next.min(*at),
                _ => {}
            }
        }
        if !t_next.is_finite() {
            return Err(Error::StallDetected(
                "replicated simulation reached a state with no next event".into(),
            ));
        }
        let dt = (t_next - now).max(0.0);

        // advance active segments and record the interval
        if dt > 0.0 {
            let mut byte_rate_sum = 0.0f64;
            let mut flop_rate_sum = 0.0f64;
            let mut mem_share_sum = 0.0f64;
            for r in reps.iter_mut() {
                if let State::Gpu {
                    segments,
                    idx,
                    remaining,
                    total,
                    ..
                } = &mut r.state
                {
                    let seg = segments[*idx];
                    let rate = match mode {
                        ReplicaMode::Parallel => rel_rate(pool_of(&seg)),
                        ReplicaMode::Timeshared => 1.0,
                    };
                    let progressed = (dt * rate).min(*remaining);
                    let fraction = if *total > 0.0 { progressed / *total } else { 1.0 };
                    r.sim.record_gpu_interval(&seg, now, t_next, fraction);
                    *remaining -= progressed;
                    if seg.solo_duration > 0.0 {
                        let byte_rate = seg.bytes / seg.solo_duration * rate;
                        let flop_rate = seg.flops / seg.solo_duration * rate;
                        byte_rate_sum += byte_rate;
                        flop_rate_sum += flop_rate;
                        if pool_of(&seg) == Pool::Memory {
                            mem_share_sum += byte_rate / bandwidth;
                        }
                    }
                }
            }
            dram_peak = dram_peak.max(byte_rate_sum / bandwidth);
            compute_peak = compute_peak.max(flop_rate_sum / compute_ceiling);
            share_violation = share_violation.max(mem_share_sum - 1.0);
        }
        now = t_next;

        // completions at the new instant
        for i in 0..reps.len() {
            let mut advance = None;
            if let State::Gpu {
                segments,
                cpu,
                idx,
                remaining,
                total,
                holds_line,
            } = &reps[i].state
            {
                if *remaining <= (*total * REL_DONE).max(EPS) {
                    advance = Some((segments.clone(), *cpu, *idx, *holds_line));
                }
            }
            if let Some((segments, cpu, idx, holds_line)) = advance {
                if idx + 1 < segments.len() {
                    let next_total = segments[idx + 1].solo_duration;
                    reps[i].state = State::Gpu {
                        segments,
                        cpu,
                        idx: idx + 1,
                        remaining: next_total,
                        total: next_total,
                        holds_line,
                    };
                } else {
                    // step's GPU portion complete: emit tokens, release line
                    reps[i].sim.on_gpu_portion_done(now);
                    if holds_line {
                        line_holder = None;
                    }
                    let until = now + cpu;
                    reps[i].sim.record_cpu(now, until);
                    reps[i].end_time = reps[i].end_time.max(until);
                    reps[i].state = State::Cpu { until };
                }
            }
        }
    }

    debug_assert!(
        share_violation <= 1e-9,
        "bandwidth shares exceeded capacity by {share_violation}"
    );

    let wall = reps.iter().map(|r| r.end_time).fold(0.0f64, f64::max);
    let mut per_replica = Vec::with_capacity(reps.len());
    let mut totals = SimAccumulators::default();
    let mut trace = Vec::new();
    for r in reps.iter_mut() {
        per_replica.push(r.sim.metrics(r.end_time));
        let a = r.sim.accumulators();
        totals.total_tokens += a.total_tokens;
        totals.prefill_busy += a.prefill_busy;
        totals.decode_busy += a.decode_busy;
        totals.cpu_busy_prefill += a.cpu_busy_prefill;
        totals.cpu_busy_decode += a.cpu_busy_decode;
        totals.kv_area += a.kv_area;
        totals.kv_peak = totals.kv_peak.max(a.kv_peak);
        totals.bytes_executed += a.bytes_executed;
        totals.flops_executed += a.flops_executed;
        totals.gap_sum += a.gap_sum;
        totals.gap_count += a.gap_count;
        totals.e2e_sum += a.e2e_sum;
        totals.e2e_count += a.e2e_count;
        trace.extend(r.sim.take_trace());
    }
    trace.sort_by(|a, b| {
        a.start
            .partial_cmp(&b.start)
            .unwrap()
            .then(a.replica.cmp(&b.replica))
            .then(a.end.partial_cmp(&b.end).unwrap())
    });

    let cpu_busy = totals.cpu_busy_prefill + totals.cpu_busy_decode;
    let busy = totals.prefill_busy + totals.decode_busy + cpu_busy;
    let aggregate = Metrics {
        schema_version: SCHEMA_VERSION,
        throughput: if wall > 0.0 {
            totals.total_tokens as f64 / wall
        } else {
            0.0
        },
        itl: if totals.gap_count > 0 {
            totals.gap_sum / totals.gap_count as f64
        } else {
            0.0
        },
        e2e: if totals.e2e_count > 0 {
            totals.e2e_sum / totals.e2e_count as f64
        } else {
            0.0
        },
        kv_usage_peak: totals.kv_peak,
        kv_usage_mean: if busy > 0.0 { totals.kv_area / busy } else { 0.0 },
        decode_time_fraction: if busy > 0.0 {
            (totals.decode_busy + totals.cpu_busy_decode) / busy
        } else {
            0.0
        },
        cpu_time_fraction: if busy > 0.0 { cpu_busy / busy } else { 0.0 },
        dram_util_mean: if wall > 0.0 {
            totals.bytes_executed / (bandwidth * wall)
        } else {
            0.0
        },
        dram_util_peak: dram_peak,
        compute_util_mean: if wall > 0.0 {
            totals.flops_executed / (compute_ceiling * wall)
        } else {
            0.0
        },
        compute_util_peak: compute_peak,
    };
    let utilization = UtilizationSummary {
        dram_mean: aggregate.dram_util_mean,
        dram_peak,
        compute_mean: aggregate.compute_util_mean,
        compute_peak,
    };

    Ok(ReplicatedResult {
        per_replica,
        aggregate,
        utilization,
        trace,
    })
}
