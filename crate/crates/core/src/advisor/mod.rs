//! Batching configuration advisor: performance curves, batch-size
//! selection under constraints, memory and replica recommendations, and
//! model calibration against measurements.

mod bca;
mod calibrate;
mod curve;

pub use bca::{
    find_bopt, instance_footprint_bytes, recommend_memory, recommend_replicas, AuditEntry,
    BcaResult, MemoryRecommendation, SloSpec,
};
pub use calibrate::{calibrate, CalibrationResult, HIGH_RESIDUAL_THRESHOLD};
pub use curve::{
    build_curve, read_curve, write_curve, CurveRow, CurveSource, PerfCurve, CURVE_HEADER,
};
