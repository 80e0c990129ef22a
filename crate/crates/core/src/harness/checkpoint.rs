//! JSON checkpoints. Floats are written in shortest round-trip form and
//! parsed with correct rounding, so reloading is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domains::SpecializedModule;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::translate::{GlwTranslator, LossWeights, TranslatorMode};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatorCheckpoint {
    pub format_version: u64,
    #[serde(rename = "D")]
    pub dim: usize,
    pub module_ids: Vec<String>,
    pub module_dims: Vec<usize>,
    pub mode: TranslatorMode,
    pub seed: u64,
    pub schedule_digest: String,
    pub weights: LossWeights,
    pub params: Vec<ParamRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulesCheckpoint {
    pub format_version: u64,
    pub modules: Vec<SpecializedModule>,
}

pub fn translator_checkpoint(t: &GlwTranslator, schedule_digest: &str) -> TranslatorCheckpoint {
    TranslatorCheckpoint {
        format_version: FORMAT_VERSION,
        dim: t.dim,
        module_ids: t.modules.iter().map(|m| m.id.clone()).collect(),
        module_dims: t.latent_dims(),
        mode: t.mode,
        seed: t.seed,
        schedule_digest: schedule_digest.to_string(),
        weights: t.weights,
        params: t
            .params()
            .into_iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect(),
    }
}

fn check_version(doc: &Value) -> Result<()> {
    match doc.get("format_version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(Error::checkpoint("format_version", format!("unsupported version {v}"))),
        None => Err(Error::checkpoint("format_version", "missing or not an integer")),
    }
}

fn parse_document(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::checkpoint("$", format!("malformed document: {e}")))
}

/// Rebuilds a translator, checking every recorded shape against both its
/// data and the architecture implied by the header.
pub fn translator_from_checkpoint(ck: &TranslatorCheckpoint) -> Result<GlwTranslator> {
    if ck.format_version != FORMAT_VERSION {
        return Err(Error::checkpoint(
            "format_version",
            format!("unsupported version {}", ck.format_version),
        ));
    }
    if ck.module_ids.len() != ck.module_dims.len() {
        return Err(Error::checkpoint(
            "module_dims",
            format!("{} dims for {} module ids", ck.module_dims.len(), ck.module_ids.len()),
        ));
    }
    let spec: Vec<(String, usize)> = ck.module_ids.iter().cloned().zip(ck.module_dims.iter().copied()).collect();
    let mut t = GlwTranslator::new(&spec, ck.dim, ck.mode, ck.seed)
        .map_err(|e| Error::checkpoint("D", e.to_string()))?;
    t.weights = ck.weights;
    let mut slots = t.params_mut();
    if slots.len() != ck.params.len() {
        return Err(Error::checkpoint(
            "params",
            format!("expected {} parameter arrays, found {}", slots.len(), ck.params.len()),
        ));
    }
    for (k, (slot, rec)) in slots.iter_mut().zip(&ck.params).enumerate() {
        if rec.name != slot.name {
            return Err(Error::checkpoint(
                format!("params[{k}].name"),
                format!("expected `{}`, found `{}`", slot.name, rec.name),
            ));
        }
        if rec.shape != slot.value.shape() {
            return Err(Error::checkpoint(
                format!("params[{k}].shape"),
                format!("expected {:?} for `{}`, found {:?}", slot.value.shape(), rec.name, rec.shape),
            ));
        }
        let want: usize = rec.shape.iter().product();
        if rec.data.len() != want {
            return Err(Error::checkpoint(
                format!("params[{k}].data"),
                format!("shape {:?} needs {want} values, found {}", rec.shape, rec.data.len()),
            ));
        }
        if rec.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::checkpoint(format!("params[{k}].data"), "non-finite value"));
        }
        slot.value = Tensor::new(rec.shape.clone(), rec.data.clone())?;
    }
    Ok(t)
}

pub fn translator_to_json(t: &GlwTranslator, schedule_digest: &str) -> Result<String> {
    Ok(serde_json::to_string_pretty(&translator_checkpoint(t, schedule_digest))?)
}

pub fn translator_from_json(text: &str) -> Result<GlwTranslator> {
    let doc = parse_document(text)?;
    check_version(&doc)?;
    let ck: TranslatorCheckpoint =
        serde_json::from_value(doc).map_err(|e| Error::checkpoint("$", e.to_string()))?;
    translator_from_checkpoint(&ck)
}

pub fn save_translator(path: &Path, t: &GlwTranslator, schedule_digest: &str) -> Result<()> {
    std::fs::write(path, translator_to_json(t, schedule_digest)?)?;
    Ok(())
}

pub fn load_translator(path: &Path) -> Result<GlwTranslator> {
    translator_from_json(&std::fs::read_to_string(path)?)
}

pub fn modules_to_json(modules: &[SpecializedModule]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModulesCheckpoint {
        format_version: FORMAT_VERSION,
        modules: modules.to_vec(),
    })?)
}

pub fn modules_from_json(text: &str) -> Result<Vec<SpecializedModule>> {
    let doc = parse_document(text)?;
    check_version(&doc)?;
    let ck: ModulesCheckpoint =
        serde_json::from_value(doc).map_err(|e| Error::checkpoint("modules", e.to_string()))?;
    for (k, m) in ck.modules.iter().enumerate() {
        for p in m.params() {
            let want: usize = p.value.shape().iter().product();
            if p.value.data().len() != want {
                return Err(Error::checkpoint(
                    format!("modules[{k}].{}", p.name),
                    format!("shape {:?} needs {want} values, found {}", p.value.shape(), p.value.data().len()),
                ));
            }
        }
    }
    Ok(ck.modules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::gaussian_matrix;
    use crate::numerics::rng;

    fn translator() -> GlwTranslator {
        let mods = vec![("a".to_string(), 3), ("b".to_string(), 4)];
        let mut t = GlwTranslator::new(&mods, 5, TranslatorMode::Mlp, 9).unwrap();
        // Awkward values that need all 17 significant digits.
        for p in t.params_mut() {
            p.value = p.value.map(|v| v / 3.0 + 1e-17 * v);
        }
        t
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = translator();
        let back = translator_from_json(&translator_to_json(&t, "abc").unwrap()).unwrap();
        for (p, q) in t.params().iter().zip(back.params()) {
            let same = p.value.data().iter().zip(q.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{}", p.name);
        }
        let x = gaussian_matrix(6, 3, 1.0, &mut rng(2));
        let y1 = t.translate(0, 1, &x).unwrap();
        let y2 = back.translate(0, 1, &x).unwrap();
        assert!(y1.data().iter().zip(y2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_unknown_version() {
        let text = translator_to_json(&translator(), "x").unwrap().replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        match translator_from_json(&text) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "format_version"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_inconsistent_dimension_with_field_path() {
        let mut ck = translator_checkpoint(&translator(), "x");
        ck.params[2].shape = vec![99, 1];
        match translator_from_json(&serde_json::to_string(&ck).unwrap()) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "params[2].shape"),
            other => panic!("{other:?}"),
        }
        let mut ck = translator_checkpoint(&translator(), "x");
        ck.params[1].data.pop();
        match translator_from_json(&serde_json::to_string(&ck).unwrap()) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "params[1].data"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let text = translator_to_json(&translator(), "x").unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(translator_from_json(cut), Err(Error::Checkpoint { .. })));
    }
}
