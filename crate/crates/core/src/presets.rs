//! Preset catalog: model and hardware cards shipped as TOML files.
//!
//! The files under `presets/` are embedded at compile time so the binary is
//! self-contained; they remain the single source of truth for the values.
//! Schema: a model preset carries the [`ModelSpec`] fields, a hardware
//! preset the [`HardwareProfile`] fields (see the files for examples).

use crate::error::{Error, Result};
use crate::hardware::HardwareProfile;
use crate::model::ModelSpec;

const MODEL_PRESETS: &[(&str, &str)] = &[
    ("opt-1.3b", include_str!("../presets/models/opt-1.3b.toml")),
    ("opt-2.7b", include_str!("../presets/models/opt-2.7b.toml")),
    ("llama-2-7b", include_str!("../presets/models/llama-2-7b.toml")),
    (
        "llama-2-13b",
        include_str!("../presets/models/llama-2-13b.toml"),
    ),
];

const HARDWARE_PRESETS: &[(&str, &str)] =
    &[("h100-64g", include_str!("../presets/hardware/h100-64g.toml"))];

/// Names of all shipped model presets.
pub fn model_preset_names() -> Vec<&'static str> {
    MODEL_PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Names of all shipped hardware presets.
pub fn hardware_preset_names() -> Vec<&'static str> {
    HARDWARE_PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Loads a model preset by name.
pub fn load_model_preset(name: &str) -> Result<ModelSpec> {
    let (_, text) = MODEL_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::PresetNotFound {
            name: name.to_string(),
            valid: model_preset_names().join(", "),
        })?;
    let spec: ModelSpec =
        toml::from_str(text).map_err(|e| Error::ConfigParse(format!("preset {name}: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

/// Loads a hardware preset by name.
pub fn load_hardware_preset(name: &str) -> Result<HardwareProfile> {
    let (_, text) = HARDWARE_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::PresetNotFound {
            name: name.to_string(),
            valid: hardware_preset_names().join(", "),
        })?;
    let hw: HardwareProfile =
        toml::from_str(text).map_err(|e| Error::ConfigParse(format!("preset {name}: {e}")))?;
    hw.validate()?;
    Ok(hw)
}

/// Loads a (model, hardware) preset pair.
pub fn load_preset(model: &str, hardware: &str) -> Result<(ModelSpec, HardwareProfile)> {
    Ok((load_model_preset(model)?, load_hardware_preset(hardware)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h100_64g_constants() {
        let hw = load_hardware_preset("h100-64g").unwrap();
        assert_eq!(hw.dram_bandwidth, 1.63e12);
        assert_eq!(hw.peak_flops, 2.56e13);
        assert_eq!(hw.device_memory, 64 * (1u64 << 30));
        assert_eq!(hw.memory_util_fraction, 0.9);
    }

    #[test]
    fn opt_1_3b_card() {
        let spec = load_model_preset("opt-1.3b").unwrap();
        assert_eq!(spec.num_layers, 24);
        assert_eq!(spec.hidden_dim, 2048);
        assert_eq!(spec.num_heads, 32);
        assert_eq!(spec.dtype_bytes, 2);
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = load_model_preset("nonexistent").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("opt-1.3b"));
        assert!(msg.contains("llama-2-13b"));
        assert_eq!(err.code(), "not-found");
    }

    #[test]
    fn all_presets_parse_and_validate() {
        for name in model_preset_names() {
            load_model_preset(name).unwrap();
        }
        for name in hardware_preset_names() {
            load_hardware_preset(name).unwrap();
        }
    }
}
