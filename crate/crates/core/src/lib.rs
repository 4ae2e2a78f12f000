//! Analytical performance simulator for batched LLM serving.
//!
//! Models prefill/decode kernel costs from first principles (FLOP and byte
//! counts over a roofline), schedules requests with continuous batching
//! over a paged KV cache, and simulates step timing for one or more model
//! replicas sharing a GPU. On top of the simulator, the advisor picks the
//! batch size that maximizes throughput under a latency SLO and a batching
//! efficiency floor, then recommends memory allocation and replica counts.

pub mod advisor;
pub mod costmodel;
pub mod engine;
pub mod error;
pub mod hardware;
pub mod kvcache;
pub mod model;
pub mod presets;
pub mod scheduler;
pub mod workload;

pub use error::{Error, Result};
pub use hardware::HardwareProfile;
pub use model::{derive_geometry, ModelGeometry, ModelSpec};
pub use workload::{generate_workload, Request, WorkloadSpec};
