//! Parameter checkpoints: `<name>.json` carries the shape manifest and any
//! metadata, `<name>.bin` the values as consecutive little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grad::ParamShape;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "metrpo-params-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub byte_order: String,
    pub total: usize,
    pub params: Vec<ParamShape>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn save_params(
    dir: &Path,
    name: &str,
    values: &[f64],
    shapes: Vec<ParamShape>,
    metadata: serde_json::Value,
) -> Result<()> {
    let declared: usize = shapes.iter().map(ParamShape::len).sum();
    if declared != values.len() {
        return Err(Error::Checkpoint(format!(
            "{name}: manifest declares {declared} values but {} were given",
            values.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        dtype: "f64".to_string(),
        byte_order: "little".to_string(),
        total: values.len(),
        params: shapes,
        metadata,
    };
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&manifest)?)?;
    let mut blob = Vec::with_capacity(values.len() * 8);
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(format!("{name}.bin")), blob)?;
    Ok(())
}

pub fn load_params(dir: &Path, name: &str) -> Result<(CheckpointManifest, Vec<f64>)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json")))?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.dtype != "f64" || manifest.byte_order != "little" {
        return Err(Error::Checkpoint(format!("{name}: unsupported format header")));
    }
    let blob = fs::read(dir.join(format!("{name}.bin")))?;
    if blob.len() != manifest.total * 8 {
        return Err(Error::Checkpoint(format!(
            "{name}: blob holds {} bytes, manifest expects {}",
            blob.len(),
            manifest.total * 8
        )));
    }
    let declared: usize = manifest.params.iter().map(ParamShape::len).sum();
    if declared != manifest.total {
        return Err(Error::Checkpoint(format!("{name}: shapes do not cover the blob")));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, -7.25e300];
        let shapes = vec![ParamShape::new("w", vec![2, 2], 0), ParamShape::new("b", vec![1], 4)];
        save_params(dir.path(), "net", &values, shapes.clone(), serde_json::json!({"k": 1})).unwrap();
        let (manifest, loaded) = load_params(dir.path(), "net").unwrap();
        assert_eq!(manifest.params, shapes);
        assert_eq!(manifest.metadata["k"], 1);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&loaded), bits(&values));
        let raw = fs::read(dir.path().join("net.bin")).unwrap();
        assert_eq!(&raw[..8], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_params(dir.path(), "p", &[1.0, 2.0], vec![ParamShape::new("x", vec![2], 0)], serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("p.bin"), [0u8; 12]).unwrap();
        assert!(matches!(load_params(dir.path(), "p"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn shape_mismatch_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let r = save_params(dir.path(), "p", &[1.0], vec![ParamShape::new("x", vec![2], 0)], serde_json::Value::Null);
        assert!(r.is_err());
    }
}
