//! Performance curves: batch size versus throughput, latency and KV usage.
//!
//! CSV wire format (bit-exact header, `#`-prefixed comment lines allowed):
//!
//! ```text
//! batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac
//! ```
//!
//! Inter-token latency travels in milliseconds on disk and is normalized to
//! seconds in memory.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, SimConfig};
use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "batch_size,throughput_tokens_per_s,itl_ms,e2e_s,kv_usage_frac";

/// Where a curve's numbers came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveSource {
    Simulated,
    Measured,
}

/// One benchmarked batch size. Times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub batch_size: u32,
    pub throughput: f64,
    pub itl: f64,
    pub e2e: f64,
    pub kv_usage: f64,
}

/// Throughput/latency table over strictly increasing batch sizes. A row at
/// batch size 1 is mandatory: it anchors the batching-efficiency ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfCurve {
    pub rows: Vec<CurveRow>,
    pub source: CurveSource,
}

impl PerfCurve {
    pub fn new(rows: Vec<CurveRow>, source: CurveSource) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::CurveIncomplete("curve has no rows".into()));
        }
        for w in rows.windows(2) {
            if w[1].batch_size <= w[0].batch_size {
                return Err(Error::MalformedCurve(format!(
                    "batch sizes must be strictly increasing ({} then {})",
                    w[0].batch_size, w[1].batch_size
                )));
            }
        }
        if rows[0].batch_size != 1 {
            return Err(Error::CurveIncomplete(
                "a batch_size=1 row is required as the efficiency baseline".into(),
            ));
        }
        for r in &rows {
            if !(r.throughput > 0.0) {
                return Err(Error::MalformedCurve(format!(
                    "throughput must be > 0 at batch size {}",
                    r.batch_size
                )));
            }
        }
        Ok(PerfCurve { rows, source })
    }

    pub fn row_at(&self, batch_size: u32) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.batch_size == batch_size)
    }

    /// Throughput at batch size 1 (always present).
    pub fn base_throughput(&self) -> f64 {
        self.rows[0].throughput
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::CurveParse {
        line,
        message: format!("cannot parse {what} from '{}'", s.trim()),
    })
}

/// Reads a curve from CSV. Lines starting with `#` carry provenance notes
/// and are skipped. Rows must arrive sorted by batch size.
pub fn read_curve<R: BufRead>(reader: R, source: CurveSource) -> Result<PerfCurve> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if trimmed != CURVE_HEADER {
                return Err(Error::CurveParse {
                    line: lineno,
                    message: format!("expected header '{CURVE_HEADER}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::CurveParse {
                line: lineno,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let itl_ms: f64 = parse_field(fields[2], lineno, "itl_ms")?;
        rows.push(CurveRow {
            batch_size: parse_field(fields[0], lineno, "batch_size")?,
            throughput: parse_field(fields[1], lineno, "throughput_tokens_per_s")?,
            itl: itl_ms / 1e3,
            e2e: parse_field(fields[3], lineno, "e2e_s")?,
            kv_usage: parse_field(fields[4], lineno, "kv_usage_frac")?,
        });
    }
    if !saw_header {
        return Err(Error::CurveParse {
            line: 1,
            message: format!("missing header '{CURVE_HEADER}'"),
        });
    }
    PerfCurve::new(rows, source)
}

/// Writes the CSV form (itl back in milliseconds).
pub fn write_curve<W: Write>(mut w: W, curve: &PerfCurve) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for r in &curve.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.batch_size,
            r.throughput,
            r.itl * 1e3,
            r.e2e,
            r.kv_usage
        )?;
    }
    Ok(())
}

/// Simulates the workload at every batch size in `batch_grid` and collects
/// the curve. The grid must contain 1; it is sorted and deduplicated. Runs
/// fan out across threads; each run is a pure function of its config.
pub fn build_curve(config: &SimConfig, batch_grid: &[u32]) -> Result<PerfCurve> {
    let mut grid: Vec<u32> = batch_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::CurveIncomplete("empty batch grid".into()));
    }
    if grid[0] != 1 {
        return Err(Error::CurveIncomplete(
            "batch grid must contain batch size 1".into(),
        ));
    }
    if grid.iter().any(|&b| b == 0) {
        return Err(Error::MalformedCurve("batch size 0 is invalid".into()));
    }
    let rows: Result<Vec<CurveRow>> = grid
        .par_iter()
        .map(|&b| {
            let mut cfg = config.clone();
            cfg.scheduler.max_num_seqs = b;
            let result = run(&cfg, false)?;
            Ok(CurveRow {
                batch_size: b,
                throughput: result.metrics.throughput,
                itl: result.metrics.itl,
                e2e: result.metrics.e2e,
                kv_usage: result.metrics.kv_usage_peak,
            })
        })
        .collect();
    PerfCurve::new(rows?, CurveSource::Simulated)
}
