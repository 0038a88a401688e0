//! Weight persistence, format version 1.
//!
//! A JSON manifest (format version, architecture hash, ordered layer
//! entries with name, shape, byte offset, byte length) plus a blob of
//! little-endian f32 values in row-major order. Two layouts are supported:
//!
//! - container: one file, `u64` little-endian manifest length, manifest
//!   JSON, then the blob;
//! - pair: a `.json` manifest next to a `.bin` blob (selected by saving to
//!   a path with a `.json` extension).
//!
//! Round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{LayerParams, NetworkDef, WeightStore};
use super::{ModelError, Tensor};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format_version: u32,
    pub architecture_hash: String,
    pub layers: Vec<ManifestEntry>,
}

/// Hex sha256 of the canonical JSON architecture description.
pub fn architecture_hash(net: &NetworkDef) -> String {
    let json = serde_json::to_string(net).expect("network serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn build_manifest(net: &NetworkDef, weights: &WeightStore) -> (WeightManifest, Vec<u8>) {
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    for (&layer, params) in &weights.entries {
        for (suffix, tensor) in [("weight", &params.weight), ("bias", &params.bias)] {
            let offset = blob.len() as u64;
            for &v in &tensor.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ManifestEntry {
                name: format!("layer{layer}.{suffix}"),
                shape: tensor.shape.clone(),
                byte_offset: offset,
                byte_len: (tensor.data.len() * 4) as u64,
            });
        }
    }
    (
        WeightManifest {
            format_version: WEIGHT_FORMAT_VERSION,
            architecture_hash: architecture_hash(net),
            layers: entries,
        },
        blob,
    )
}

fn is_pair_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn blob_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Persist weights. A `.json` destination writes the manifest + `.bin`
/// pair; any other destination writes the single container file.
pub fn save_weights(net: &NetworkDef, weights: &WeightStore, path: &Path) -> Result<(), ModelError> {
    weights.validate_against(net)?;
    let (manifest, blob) = build_manifest(net, weights);
    let manifest_json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    if is_pair_path(path) {
        fs::write(path, &manifest_json).map_err(io_err(path))?;
        let bin = blob_path_for(path);
        fs::write(&bin, &blob).map_err(io_err(&bin))?;
    } else {
        let mut out = Vec::with_capacity(8 + manifest_json.len() + blob.len());
        out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        out.extend_from_slice(&blob);
        fs::write(path, &out).map_err(io_err(path))?;
    }
    Ok(())
}

fn parse_layer_name(name: &str) -> Option<(usize, bool)> {
    let rest = name.strip_prefix("layer")?;
    let (idx, suffix) = rest.split_once('.')?;
    let layer = idx.parse().ok()?;
    match suffix {
        "weight" => Some((layer, true)),
        "bias" => Some((layer, false)),
        _ => None,
    }
}

fn decode(manifest: WeightManifest, blob: &[u8], path: &Path) -> Result<(WeightManifest, WeightStore), ModelError> {
    let display = path.display().to_string();
    if manifest.format_version != WEIGHT_FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion {
            path: display,
            got: manifest.format_version,
        });
    }
    let mut halves: BTreeMap<usize, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
    for entry in &manifest.layers {
        let (layer, is_weight) = parse_layer_name(&entry.name).ok_or_else(|| ModelError::BadManifest {
            path: display.clone(),
            detail: format!("unrecognized entry name {:?}", entry.name),
        })?;
        let expected_len: usize = entry.shape.iter().product::<usize>() * 4;
        if expected_len != entry.byte_len as usize {
            return Err(ModelError::ManifestMismatch {
                path: display,
                detail: format!(
                    "entry {} declares {} bytes but shape {:?} needs {}",
                    entry.name, entry.byte_len, entry.shape, expected_len
                ),
            });
        }
        let start = entry.byte_offset as usize;
        let end = start + entry.byte_len as usize;
        if end > blob.len() {
            return Err(ModelError::TruncatedBlob {
                path: display,
                expected: end,
                got: blob.len(),
            });
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor {
            shape: entry.shape.clone(),
            data,
        };
        let slot = halves.entry(layer).or_default();
        if is_weight {
            slot.0 = Some(tensor);
        } else {
            slot.1 = Some(tensor);
        }
    }
    let mut entries = BTreeMap::new();
    for (layer, (weight, bias)) in halves {
        match (weight, bias) {
            (Some(weight), Some(bias)) => {
                entries.insert(layer, LayerParams { weight, bias });
            }
            _ => {
                return Err(ModelError::ManifestMismatch {
                    path: display,
                    detail: format!("layer {layer} is missing its weight or bias entry"),
                })
            }
        }
    }
    Ok((manifest, WeightStore { entries }))
}

/// Load a weight file in either layout, returning the manifest and store.
pub fn load_weights(path: &Path) -> Result<(WeightManifest, WeightStore), ModelError> {
    let display = path.display().to_string();
    if is_pair_path(path) {
        let manifest_json = fs::read(path).map_err(io_err(path))?;
        let manifest: WeightManifest =
            serde_json::from_slice(&manifest_json).map_err(|e| ModelError::BadManifest {
                path: display,
                detail: e.to_string(),
            })?;
        let bin = blob_path_for(path);
        let blob = fs::read(&bin).map_err(io_err(&bin))?;
        decode(manifest, &blob, path)
    } else {
        let raw = fs::read(path).map_err(io_err(path))?;
        if raw.len() < 8 {
            return Err(ModelError::TruncatedBlob {
                path: display,
                expected: 8,
                got: raw.len(),
            });
        }
        let manifest_len = u64::from_le_bytes(raw[0..8].try_into().unwrap()) as usize;
        if raw.len() < 8 + manifest_len {
            return Err(ModelError::TruncatedBlob {
                path: display,
                expected: 8 + manifest_len,
                got: raw.len(),
            });
        }
        let manifest: WeightManifest = serde_json::from_slice(&raw[8..8 + manifest_len])
            .map_err(|e| ModelError::BadManifest {
                path: display,
                detail: e.to_string(),
            })?;
        decode(manifest, &raw[8 + manifest_len..], path)
    }
}

/// Load weights and verify they belong to `net` (architecture hash and
/// per-layer shapes).
pub fn load_weights_checked(net: &NetworkDef, path: &Path) -> Result<WeightStore, ModelError> {
    let (manifest, store) = load_weights(path)?;
    let expected = architecture_hash(net);
    if manifest.architecture_hash != expected {
        return Err(ModelError::ArchitectureMismatch {
            path: path.display().to_string(),
            expected,
            got: manifest.architecture_hash,
        });
    }
    store.validate_against(net)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkDef;

    fn fixture() -> (NetworkDef, WeightStore) {
        let net = NetworkDef::simple_cnn((1, 8, 8), 10);
        let weights = WeightStore::init(&net, 3);
        (net, weights)
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let (net, weights) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.qw");
        save_weights(&net, &weights, &path).unwrap();
        let (_, loaded) = load_weights(&path).unwrap();
        assert_eq!(weights, loaded);
    }

    #[test]
    fn pair_round_trip_is_bit_exact() {
        let (net, weights) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&net, &weights, &path).unwrap();
        assert!(dir.path().join("w.bin").exists());
        let (_, loaded) = load_weights(&path).unwrap();
        assert_eq!(weights, loaded);
        let checked = load_weights_checked(&net, &path).unwrap();
        assert_eq!(weights, checked);
    }

    #[test]
    fn truncated_blob_names_lengths() {
        let (net, weights) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.qw");
        save_weights(&net, &weights, &path).unwrap();
        let mut raw = fs::read(&path).unwrap();
        raw.truncate(raw.len() - 1);
        fs::write(&path, &raw).unwrap();
        let err = load_weights(&path).unwrap_err();
        match err {
            ModelError::TruncatedBlob { expected, got, .. } => assert_eq!(expected, got + 1),
            other => panic!("expected TruncatedBlob, got {other:?}"),
        }
    }

    #[test]
    fn missing_bias_entry_is_rejected() {
        let (net, weights) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&net, &weights, &path).unwrap();
        let mut manifest: WeightManifest =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        manifest.layers.retain(|e| !e.name.ends_with("layer0.bias"));
        fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(ModelError::ManifestMismatch { .. })
        ));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (net, weights) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&net, &weights, &path).unwrap();
        let mut manifest: WeightManifest =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        manifest.format_version = 99;
        fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(ModelError::UnsupportedVersion { got: 99, .. })
        ));
    }

    #[test]
    fn architecture_mismatch_is_detected() {
        let (net, weights) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.qw");
        save_weights(&net, &weights, &path).unwrap();
        let other = NetworkDef::simple_cnn((1, 8, 8), 7);
        assert!(load_weights_checked(&other, &path).is_err());
    }
}
