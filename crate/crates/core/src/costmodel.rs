//! FLOP/byte accounting per kernel group and roofline classification.
//!
//! Costs are exact integer counts so a brute-force reference loop reproduces
//! every closed form bit-for-bit. Byte counts cover DRAM traffic only:
//! attention books KV reads plus the current token's KV write, matmul books
//! weight streaming plus activation traffic. Q/K/V projection traffic
//! belongs to the matmul group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::HardwareProfile;
use crate::model::{ModelGeometry, ModelSpec};

/// Kernel families distinguished by the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelGroup {
    Attention,
    Matmul,
    Other,
}

impl KernelGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelGroup::Attention => "attention",
            KernelGroup::Matmul => "matmul",
            KernelGroup::Other => "other",
        }
    }
}

/// Work of one kernel group in one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCost {
    pub flops: u64,
    /// Bytes moved between DRAM and chip.
    pub bytes: u64,
    pub group: KernelGroup,
}

/// Memory- or compute-bound regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundedness {
    MemoryBound,
    ComputeBound,
}

impl Boundedness {
    pub fn as_str(&self) -> &'static str {
        match self {
            Boundedness::MemoryBound => "memory-bound",
            Boundedness::ComputeBound => "compute-bound",
        }
    }
}

/// Position of a kernel on the roofline plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub arithmetic_intensity: f64,
    pub attainable_flops: f64,
    pub boundedness: Boundedness,
}

/// FLOPs per byte moved. Errors when the kernel moves no bytes.
pub fn arithmetic_intensity(cost: &KernelCost) -> Result<f64> {
    if cost.bytes == 0 {
        return Err(Error::UndefinedIntensity);
    }
    Ok(cost.flops as f64 / cost.bytes as f64)
}

/// Arithmetic intensity at which the bandwidth and compute roofs meet,
/// computed from the raw (efficiency-free) ceilings.
pub fn ridge_point(hw: &HardwareProfile) -> f64 {
    hw.peak_flops / hw.dram_bandwidth
}

/// Places a kernel on the roofline. A tie at the ridge classifies as
/// memory-bound so the classification is deterministic.
pub fn roofline(cost: &KernelCost, hw: &HardwareProfile) -> Result<RooflinePoint> {
    let ai = arithmetic_intensity(cost)?;
    let attainable = (ai * hw.dram_bandwidth).min(hw.peak_flops);
    let boundedness = if ai <= ridge_point(hw) {
        Boundedness::MemoryBound
    } else {
        Boundedness::ComputeBound
    };
    Ok(RooflinePoint {
        arithmetic_intensity: ai,
        attainable_flops: attainable,
        boundedness,
    })
}

/// Decode-step attention cost for a batch of sequences.
///
/// `seq_lens[i]` is the KV span of sequence i at this step, counting the
/// token whose K/V are written this step. Per layer and per token of span,
/// the kernel performs the qK^T and scores*V multiply-adds (4*hidden FLOPs)
/// and moves that token's K and V once, whether read from cache or written
/// to it. Bytes therefore decompose as (span - 1) tokens read plus 1
/// written; for MHA at fp16 the intensity is exactly 2/dtype_bytes = 1
/// FLOP/byte regardless of batch size and span.
pub fn decode_attention_cost(
    geom: &ModelGeometry,
    spec: &ModelSpec,
    seq_lens: &[u32],
) -> Result<KernelCost> {
    if seq_lens.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let layers = spec.num_layers as u64;
    let hidden = spec.hidden_dim as u64;
    let mut flops = 0u64;
    let mut bytes = 0u64;
    for &s in seq_lens {
        let s = s as u64;
        flops += 4 * layers * hidden * s;
        bytes += geom.kv_bytes_per_token * s;
    }
    Ok(KernelCost {
        flops,
        bytes,
        group: KernelGroup::Attention,
    })
}

/// Activation tensor passes per layer booked against the matmul group
/// (reads plus writes of the intermediate tensors around each GEMM).
pub const ACTIVATION_PASSES_PER_LAYER: u64 = 12;

/// Activation bytes one token touches across all layers in one pass.
pub fn activation_bytes_per_token(spec: &ModelSpec) -> u64 {
    ACTIVATION_PASSES_PER_LAYER
        * spec.hidden_dim as u64
        * spec.num_layers as u64
        * spec.dtype_bytes as u64
}

/// Decode-step matmul cost at batch size `b`: every weight is streamed once
/// per step while each of the `b` tokens performs one multiply-add per
/// linear parameter plus the LM head.
pub fn decode_matmul_cost(geom: &ModelGeometry, spec: &ModelSpec, b: u32) -> KernelCost {
    let b = b as u64;
    let head_params = spec.vocab_size as u64 * spec.hidden_dim as u64;
    let flops = 2 * b * (geom.linear_param_count + head_params);
    let bytes = geom.weight_bytes + 2 * b * activation_bytes_per_token(spec);
    KernelCost {
        flops,
        bytes,
        group: KernelGroup::Matmul,
    }
}

/// Matmul and attention costs of one prefill pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefillCost {
    pub matmul: KernelCost,
    pub attention: KernelCost,
}

/// Prefill cost over a batch of prompts.
///
/// Matmul: every prompt token passes through all linear layers, and each
/// prompt evaluates the LM head once for its first output token. Attention
/// is quadratic in prompt length. With `fused` (the default) the score
/// matrix never reaches DRAM, so attention bytes are the KV writes alone; a
/// naive kernel adds one write and one read of the per-head score matrix.
pub fn prefill_cost(
    geom: &ModelGeometry,
    spec: &ModelSpec,
    prompt_lens: &[u32],
    fused: bool,
) -> Result<PrefillCost> {
    if prompt_lens.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let layers = spec.num_layers as u64;
    let hidden = spec.hidden_dim as u64;
    let head_params = spec.vocab_size as u64 * hidden;
    let n_tokens: u64 = prompt_lens.iter().map(|&s| s as u64).sum();
    let n_prompts = prompt_lens.len() as u64;

    let matmul = KernelCost {
        flops: 2 * n_tokens * geom.linear_param_count + 2 * n_prompts * head_params,
        bytes: geom.weight_bytes + 2 * n_tokens * activation_bytes_per_token(spec),
        group: KernelGroup::Matmul,
    };

    let mut attn_flops = 0u64;
    let mut attn_bytes = 0u64;
    for &s in prompt_lens {
        let s = s as u64;
        attn_flops += 4 * layers * hidden * s * s;
        attn_bytes += geom.kv_bytes_per_token * s;
        if !fused {
            attn_bytes += 2 * layers * spec.num_heads as u64 * s * s * spec.dtype_bytes as u64;
        }
    }
    let attention = KernelCost {
        flops: attn_flops,
        bytes: attn_bytes,
        group: KernelGroup::Attention,
    };

    Ok(PrefillCost { matmul, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_geometry;
    use crate::presets::{load_hardware_preset, load_model_preset};

    fn opt() -> (ModelGeometry, ModelSpec) {
        let spec = load_model_preset("opt-1.3b").unwrap();
        let geom = derive_geometry(&spec).unwrap();
        (geom, spec)
    }

    #[test]
    fn direct_ratio() {
        let c = KernelCost {
            flops: 4,
            bytes: 4,
            group: KernelGroup::Other,
        };
        assert_eq!(arithmetic_intensity(&c).unwrap(), 1.0);
    }

    #[test]
    fn zero_bytes_is_undefined() {
        let c = KernelCost {
            flops: 1,
            bytes: 0,
            group: KernelGroup::Other,
        };
        assert!(matches!(
            arithmetic_intensity(&c),
            Err(Error::UndefinedIntensity)
        ));
    }

    #[test]
    fn decode_attention_ai_is_one_for_fp16_mha() {
        let (geom, spec) = opt();
        for lens in [vec![1u32], vec![338], vec![17, 338, 2048], vec![5; 64]] {
            let c = decode_attention_cost(&geom, &spec, &lens).unwrap();
            assert_eq!(arithmetic_intensity(&c).unwrap(), 1.0);
        }
    }

    #[test]
    fn decode_attention_bytes_example() {
        let (geom, spec) = opt();
        let c = decode_attention_cost(&geom, &spec, &[338]).unwrap();
        // 2 * 24 * 2048 * 2 * 338
        assert_eq!(c.bytes, 66_453_504);
        assert_eq!(c.group, KernelGroup::Attention);
    }

    #[test]
    fn decode_attention_unit_case() {
        let spec = ModelSpec {
            name: "unit".into(),
            num_layers: 1,
            hidden_dim: 1,
            num_heads: 1,
            num_kv_heads: 1,
            head_dim: 1,
            ffn_dim: 1,
            vocab_size: 1,
            max_context: 2,
            dtype_bytes: 2,
            learned_positions: false,
            gated_ffn: false,
        };
        let geom = derive_geometry(&spec).unwrap();
        let c = decode_attention_cost(&geom, &spec, &[1]).unwrap();
        assert_eq!(c.flops, 4);
        assert_eq!(c.bytes, 4);
    }

    #[test]
    fn empty_batch_rejected() {
        let (geom, spec) = opt();
        assert!(matches!(
            decode_attention_cost(&geom, &spec, &[]),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            prefill_cost(&geom, &spec, &[], true),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn ridge_point_h100() {
        let hw = load_hardware_preset("h100-64g").unwrap();
        let r = ridge_point(&hw);
        assert!((r - 15.71).abs() < 0.01, "ridge {r}");
    }

    #[test]
    fn ridge_point_symmetric_and_linear() {
        let mut hw = load_hardware_preset("h100-64g").unwrap();
        hw.peak_flops = hw.dram_bandwidth;
        assert_eq!(ridge_point(&hw), 1.0);
        hw.peak_flops *= 2.0;
        assert_eq!(ridge_point(&hw), 2.0);
    }

    #[test]
    fn roofline_decode_attention_memory_bound() {
        let hw = load_hardware_preset("h100-64g").unwrap();
        let (geom, spec) = opt();
        let c = decode_attention_cost(&geom, &spec, &[330; 512]).unwrap();
        let p = roofline(&c, &hw).unwrap();
        assert_eq!(p.boundedness, Boundedness::MemoryBound);
        assert_eq!(p.attainable_flops, 1.63e12);
    }

    #[test]
    fn roofline_tie_breaks_memory_bound() {
        let hw = load_hardware_preset("h100-64g").unwrap();
        // construct a cost sitting exactly at the ridge
        let bytes = 1.63e12 as u64;
        let flops = 2.56e13 as u64;
        let c = KernelCost {
            flops,
            bytes,
            group: KernelGroup::Other,
        };
        let p = roofline(&c, &hw).unwrap();
        assert_eq!(p.boundedness, Boundedness::MemoryBound);
    }

    #[test]
    fn roofline_high_intensity_compute_bound() {
        let hw = load_hardware_preset("h100-64g").unwrap();
        let c = KernelCost {
            flops: 100_000,
            bytes: 1000,
            group: KernelGroup::Other,
        };
        let p = roofline(&c, &hw).unwrap();
        assert_eq!(p.boundedness, Boundedness::ComputeBound);
        assert_eq!(p.attainable_flops, hw.peak_flops);
    }

    #[test]
    fn matmul_flops_linear_in_batch() {
        let (geom, spec) = opt();
        let c1 = decode_matmul_cost(&geom, &spec, 7);
        let c2 = decode_matmul_cost(&geom, &spec, 14);
        assert_eq!(c2.flops, 2 * c1.flops);
    }

    #[test]
    fn matmul_weight_dominated_at_batch_one() {
        let (geom, spec) = opt();
        let c = decode_matmul_cost(&geom, &spec, 1);
        assert!(c.bytes >= geom.weight_bytes);
        assert!((c.bytes as f64) < 1.01 * geom.weight_bytes as f64);
        // raw-bandwidth transfer time of the weights is about 1.6 ms
        let t = geom.weight_bytes as f64 / 1.63e12;
        assert!((t - 1.6e-3).abs() < 0.1e-3, "t = {t}");
    }

    #[test]
    fn matmul_ai_ratio_large_batch() {
        let (geom, spec) = opt();
        let ai1 = arithmetic_intensity(&decode_matmul_cost(&geom, &spec, 1)).unwrap();
        let ai512 = arithmetic_intensity(&decode_matmul_cost(&geom, &spec, 512)).unwrap();
        let ratio = ai512 / ai1;
        assert!(ratio > 250.0 && ratio <= 512.0, "ratio {ratio}");
    }

    #[test]
    fn matmul_ai_strictly_increasing() {
        let (geom, spec) = opt();
        let mut prev = 0.0;
        for b in [1u32, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024] {
            let ai = arithmetic_intensity(&decode_matmul_cost(&geom, &spec, b)).unwrap();
            assert!(ai > prev, "ai({b}) = {ai} <= {prev}");
            prev = ai;
        }
    }

    #[test]
    fn decode_matmul_ai_ratio_prediction() {
        // AI crosses the ridge near batch 16 with these constants; the
        // measured kernels report lower effective intensity, which the
        // model intentionally does not imitate.
        let (geom, spec) = opt();
        let hw = load_hardware_preset("h100-64g").unwrap();
        let ai16 = arithmetic_intensity(&decode_matmul_cost(&geom, &spec, 16)).unwrap();
        assert!((ai16 - ridge_point(&hw)).abs() / ridge_point(&hw) < 0.05);
    }

    #[test]
    fn prefill_compute_bound_at_scale() {
        let hw = load_hardware_preset("h100-64g").unwrap();
        let (geom, spec) = opt();
        let lens = vec![161u32; 256];
        let pc = prefill_cost(&geom, &spec, &lens, true).unwrap();
        let p = roofline(&pc.matmul, &hw).unwrap();
        assert_eq!(p.boundedness, Boundedness::ComputeBound);
        assert!(p.arithmetic_intensity > ridge_point(&hw));
    }

    #[test]
    fn prefill_of_length_one_matches_decode_matmul() {
        let (geom, spec) = opt();
        let pc = prefill_cost(&geom, &spec, &[1], true).unwrap();
        let dm = decode_matmul_cost(&geom, &spec, 1);
        assert_eq!(pc.matmul.flops, dm.flops);
    }

    #[test]
    fn prefill_attention_quadratic() {
        let (geom, spec) = opt();
        let a = prefill_cost(&geom, &spec, &[100, 200], true).unwrap();
        let b = prefill_cost(&geom, &spec, &[200, 400], true).unwrap();
        assert_eq!(b.attention.flops, 4 * a.attention.flops);
    }

    #[test]
    fn naive_prefill_books_score_traffic() {
        let (geom, spec) = opt();
        let fused = prefill_cost(&geom, &spec, &[161], true).unwrap();
        let naive = prefill_cost(&geom, &spec, &[161], false).unwrap();
        let extra = naive.attention.bytes - fused.attention.bytes;
        assert_eq!(extra, 2 * 24 * 32 * 161 * 161 * 2);
    }

    /// Brute-force reference: per-layer, per-sequence loops must equal the
    /// closed forms exactly.
    #[test]
    fn brute_force_decode_costs() {
        let (geom, spec) = opt();
        let lens = [1u32, 17, 161, 338, 499];
        let c = decode_attention_cost(&geom, &spec, &lens).unwrap();
        let mut flops = 0u64;
        let mut bytes = 0u64;
        for &s in &lens {
            for _layer in 0..spec.num_layers {
                // qK^T and scores*V, 2 FLOPs per mul-add, per span token
                flops += 2 * spec.hidden_dim as u64 * s as u64 * 2;
                bytes +=
                    2 * (spec.num_kv_heads * spec.head_dim) as u64 * spec.dtype_bytes as u64 * s as u64;
            }
        }
        assert_eq!(c.flops, flops);
        assert_eq!(c.bytes, bytes);
    }
}
