use batchsim_core::advisor::{build_curve, calibrate};
use batchsim_core::engine::{CpuOverheadModel, SimConfig};
use batchsim_core::presets::load_preset;
use batchsim_core::scheduler::SchedulerConfig;
use batchsim_core::workload::WorkloadSpec;

fn main() {
    let (model, hardware) = load_preset("opt-1.3b", "h100-64g").unwrap();
    let base = SimConfig {
        hardware,
        model,
        workload: WorkloadSpec::fixed(32, 64, 192, 0),
        scheduler: SchedulerConfig::default(),
        cpu_model: CpuOverheadModel::default(),
        block_size: 16,
    };
    let mut truth = base.clone();
    truth.hardware.mem_efficiency = 0.55;
    truth.hardware.compute_efficiency = 0.65;
    truth.cpu_model = CpuOverheadModel { c0: 3.0e-3, c1: 0.07e-3 };
    let curve = build_curve(&truth, &[1, 8, 32, 96]).unwrap();
    for r in &curve.rows {
        println!("B={} T={:.2} itl={:.4}ms", r.batch_size, r.throughput, r.itl*1e3);
    }
    let fitted = calibrate(&curve, &base).unwrap();
    println!("{fitted:?}");
}
