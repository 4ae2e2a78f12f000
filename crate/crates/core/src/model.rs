//! Transformer architecture description and derived size accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture card of a decoder-only transformer.
///
/// Counts and dimensions only; no weights. `num_kv_heads < num_heads`
/// describes grouped-query attention. `gated_ffn` marks a three-matrix
/// feed-forward block (gate/up/down) as used by the Llama family; the
/// plain two-matrix block is the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: u32,
    pub hidden_dim: u32,
    pub num_heads: u32,
    pub num_kv_heads: u32,
    pub head_dim: u32,
    pub ffn_dim: u32,
    pub vocab_size: u32,
    pub max_context: u32,
    /// Bytes per element (2 for half precision).
    pub dtype_bytes: u32,
    /// Learned absolute positional embeddings contribute parameters.
    #[serde(default)]
    pub learned_positions: bool,
    /// Feed-forward uses gate/up/down (three matrices) instead of up/down.
    #[serde(default)]
    pub gated_ffn: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
            ("dtype_bytes", self.dtype_bytes),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if self.num_heads % self.num_kv_heads != 0 {
            return fail(format!(
                "num_kv_heads ({}) must divide num_heads ({})",
                self.num_kv_heads, self.num_heads
            ));
        }
        if self.hidden_dim != self.num_heads * self.head_dim {
            return fail(format!(
                "hidden_dim ({}) must equal num_heads * head_dim ({} * {})",
                self.hidden_dim, self.num_heads, self.head_dim
            ));
        }
        Ok(())
    }
}

/// Parameter counts and byte footprints derived from a [`ModelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGeometry {
    /// Parameters in per-layer projections and feed-forward blocks.
    pub linear_param_count: u64,
    /// Token embedding (plus learned positions when present).
    pub embedding_param_count: u64,
    pub total_param_count: u64,
    /// Bytes occupied by all parameters.
    pub weight_bytes: u64,
    /// Bytes of K and V stored per token across all layers.
    pub kv_bytes_per_token: u64,
}

/// Derives parameter counts and byte footprints.
///
/// Per layer: Q and O projections are `hidden^2` each, K and V shrink with
/// the KV-head ratio under GQA, and the feed-forward holds two (or three,
/// when gated) `hidden x ffn` matrices. Biases and layer norms are excluded;
/// they are well under 1% of the total and would only obscure the closed
/// forms.
pub fn derive_geometry(spec: &ModelSpec) -> Result<ModelGeometry> {
    spec.validate()?;

    let layers = spec.num_layers as u64;
    let hidden = spec.hidden_dim as u64;
    let ffn = spec.ffn_dim as u64;
    let kv_proj_cols = spec.num_kv_heads as u64 * spec.head_dim as u64;

    let attn_per_layer = 2 * hidden * hidden + 2 * hidden * kv_proj_cols;
    let ffn_matrices = if spec.gated_ffn { 3 } else { 2 };
    let ffn_per_layer = ffn_matrices * hidden * ffn;
    let linear_param_count = layers * (attn_per_layer + ffn_per_layer);

    let mut embedding_param_count = spec.vocab_size as u64 * hidden;
    if spec.learned_positions {
        embedding_param_count += spec.max_context as u64 * hidden;
    }

    let total_param_count = linear_param_count + embedding_param_count;
    let weight_bytes = total_param_count * spec.dtype_bytes as u64;
    let kv_bytes_per_token = 2 * layers * kv_proj_cols * spec.dtype_bytes as u64;

    Ok(ModelGeometry {
        linear_param_count,
        embedding_param_count,
        total_param_count,
        weight_bytes,
        kv_bytes_per_token,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opt_1_3b() -> ModelSpec {
        ModelSpec {
            name: "opt-1.3b".into(),
            num_layers: 24,
            hidden_dim: 2048,
            num_heads: 32,
            num_kv_heads: 32,
            head_dim: 64,
            ffn_dim: 8192,
            vocab_size: 50272,
            max_context: 2048,
            dtype_bytes: 2,
            learned_positions: true,
            gated_ffn: false,
        }
    }

    #[test]
    fn opt_1_3b_linear_count() {
        let g = derive_geometry(&opt_1_3b()).unwrap();
        // 24 * (4 * 2048^2 + 2 * 2048 * 8192)
        assert_eq!(g.linear_param_count, 1_207_959_552);
        // published total is ~1.3e9
        assert_eq!(g.total_param_count, 1_315_110_912);
        assert_eq!(g.weight_bytes, g.total_param_count * 2);
    }

    #[test]
    fn opt_1_3b_kv_bytes_per_token() {
        let g = derive_geometry(&opt_1_3b()).unwrap();
        assert_eq!(g.kv_bytes_per_token, 2 * 24 * 2048 * 2);
        assert_eq!(g.kv_bytes_per_token, 196_608);
    }

    #[test]
    fn degenerate_unit_spec() {
        let spec = ModelSpec {
            name: "unit".into(),
            num_layers: 1,
            hidden_dim: 1,
            num_heads: 1,
            num_kv_heads: 1,
            head_dim: 1,
            ffn_dim: 1,
            vocab_size: 1,
            max_context: 1,
            dtype_bytes: 2,
            learned_positions: false,
            gated_ffn: false,
        };
        let g = derive_geometry(&spec).unwrap();
        assert_eq!(g.linear_param_count, 6); // 4 + 2
        assert_eq!(g.kv_bytes_per_token, 4);
    }

    #[test]
    fn invalid_head_split_rejected() {
        let mut spec = opt_1_3b();
        spec.num_kv_heads = 3;
        assert!(derive_geometry(&spec).is_err());
    }

    /// Re-derive counts by brute-force per-layer summation and compare with
    /// the closed forms on randomized small specs.
    #[test]
    fn brute_force_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let heads: u32 = rng.gen_range(1..=8);
            let group: u32 = rng.gen_range(1..=heads);
            let kv_heads = heads / group;
            let kv_heads = if heads % kv_heads == 0 { kv_heads } else { heads };
            let head_dim: u32 = rng.gen_range(1..=16);
            let spec = ModelSpec {
                name: "rand".into(),
                num_layers: rng.gen_range(1..=6),
                hidden_dim: heads * head_dim,
                num_heads: heads,
                num_kv_heads: kv_heads,
                head_dim,
                ffn_dim: rng.gen_range(1..=64),
                vocab_size: rng.gen_range(1..=1000),
                max_context: rng.gen_range(1..=256),
                dtype_bytes: if rng.gen_bool(0.5) { 2 } else { 4 },
                learned_positions: rng.gen_bool(0.5),
                gated_ffn: rng.gen_bool(0.5),
            };
            let g = derive_geometry(&spec).unwrap();

            let mut linear = 0u64;
            let mut kv_per_token = 0u64;
            for _layer in 0..spec.num_layers {
                let d = spec.hidden_dim as u64;
                // q proj, o proj
                linear += d * d + d * d;
                // k and v projections
                let kv_cols = (spec.num_kv_heads * spec.head_dim) as u64;
                linear += 2 * d * kv_cols;
                // ffn matrices
                let mats = if spec.gated_ffn { 3 } else { 2 };
                linear += mats * d * spec.ffn_dim as u64;
                // k and v vectors for one token in this layer
                kv_per_token += 2 * kv_cols * spec.dtype_bytes as u64;
            }
            assert_eq!(g.linear_param_count, linear);
            assert_eq!(g.kv_bytes_per_token, kv_per_token);
        }
    }

    #[test]
    fn kv_bytes_scale_linearly() {
        let base = derive_geometry(&opt_1_3b()).unwrap();
        let mut doubled_layers = opt_1_3b();
        doubled_layers.num_layers *= 2;
        assert_eq!(
            derive_geometry(&doubled_layers).unwrap().kv_bytes_per_token,
            2 * base.kv_bytes_per_token
        );
        // halving kv heads halves the value
        let mut half_kv = opt_1_3b();
        half_kv.num_kv_heads = 16;
        assert_eq!(
            derive_geometry(&half_kv).unwrap().kv_bytes_per_token,
            base.kv_bytes_per_token / 2
        );
    }
}
