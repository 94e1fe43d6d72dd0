//! Checkpoint directory layout:
//!
//! ```text
//! <dir>/manifest.json       spec, float mode, parameter table
//! <dir>/<name>.bin          one flat little-endian blob per parameter
//! ```
//!
//! Blobs hold `float_mode` values (`f32` unless the run used float64).
//! The directory is assembled next to its destination and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{FloatMode, Real, Tensor};

use super::{ModelParams, ModelSpec};

pub const CHECKPOINT_FORMAT: &str = "smoothsnn-checkpoint";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub float_mode: FloatMode,
    pub spec: ModelSpec,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint<F: Real>(
    dir: &Path,
    spec: &ModelSpec,
    params: &ModelParams<F>,
) -> Result<()> {
    params.check(spec)?;
    let staging = sibling(dir, "staging");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let mut entries = Vec::new();
    for (name, shape, values) in params.named() {
        let file = format!("{name}.bin");
        let mut bytes = Vec::with_capacity(values.len() * F::BYTES);
        for v in values {
            v.write_le(&mut bytes);
        }
        let path = staging.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ParamEntry { name, shape, file });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        version: 1,
        float_mode: F::MODE,
        spec: spec.clone(),
        params: entries,
    };
    let path = staging.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    if dir.exists() {
        let old = sibling(dir, "old");
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != 1 {
        return Err(Error::Consistency(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint<F: Real>(dir: &Path) -> Result<(ModelSpec, ModelParams<F>)> {
    let manifest = read_manifest(dir)?;
    if manifest.float_mode != F::MODE {
        return Err(Error::Consistency(format!(
            "checkpoint holds {} parameters, engine runs in {}",
            manifest.float_mode.as_str(),
            F::MODE.as_str()
        )));
    }
    let spec = manifest.spec;
    spec.validate()?;

    let mut weights = Vec::new();
    let mut betas = Vec::new();
    let mut norm_scale = Vec::new();
    let mut norm_shift = Vec::new();
    for entry in &manifest.params {
        if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
            return Err(Error::Consistency(format!("bad blob name {:?}", entry.file)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let count: usize = entry.shape.iter().product();
        if bytes.len() != count * F::BYTES {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                reason: format!(
                    "{}: expected {} bytes for shape {:?}",
                    entry.file,
                    count * F::BYTES,
                    entry.shape
                ),
            });
        }
        let values: Vec<F> = bytes.chunks_exact(F::BYTES).map(F::read_le).collect();
        let tensor = Tensor::new(entry.shape.clone(), values)?;
        let kind = entry.name.rsplit('.').next().unwrap_or_default();
        match kind {
            "weight" => weights.push(tensor),
            "beta" => betas.push(tensor.data()[0]),
            "scale" => norm_scale.push(tensor),
            "shift" => norm_shift.push(tensor),
            _ => {
                return Err(Error::Consistency(format!(
                    "unknown parameter {:?}",
                    entry.name
                )))
            }
        }
    }
    let params = ModelParams {
        weights,
        betas,
        norm_scale,
        norm_shift,
    };
    params.check(&spec)?;
    Ok((spec, params))
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.{tag}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;

    #[test]
    fn round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ckpt");
        let mut spec = ModelSpec::new(vec![5, 7, 3]).with_smoothing(true);
        spec.normalize = true;
        let mut p = ModelParams::<f32>::init(&spec, &mut RngState::new(3)).unwrap();
        p.betas[0] = -0.123_456_79;
        save_checkpoint(&dir, &spec, &p).unwrap();
        let (spec2, p2) = load_checkpoint::<f32>(&dir).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(p2, p);
        // Overwrite in place.
        p.weights[0].data_mut()[0] = 9.0;
        save_checkpoint(&dir, &spec, &p).unwrap();
        assert_eq!(load_checkpoint::<f32>(&dir).unwrap().1, p);
        assert!(!tmp.path().join(".ckpt.staging").exists());
        assert!(!tmp.path().join(".ckpt.old").exists());
    }

    #[test]
    fn float_mode_mismatch_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(vec![2, 2]);
        let p = ModelParams::<f32>::init(&spec, &mut RngState::new(3)).unwrap();
        save_checkpoint(tmp.path(), &spec, &p).unwrap();
        assert!(matches!(load_checkpoint::<f64>(tmp.path()), Err(Error::Consistency(_))));
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c");
        let spec = ModelSpec::new(vec![2, 3]);
        let p = ModelParams::<f32>::init(&spec, &mut RngState::new(3)).unwrap();
        save_checkpoint(&dir, &spec, &p).unwrap();
        let blob = dir.join("layer1.weight.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&dir), Err(Error::Format { .. })));
    }
}
