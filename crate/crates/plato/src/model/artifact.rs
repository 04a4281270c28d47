//! On-disk model: a JSON manifest plus one little-endian `f32` file holding
//! every trainable block back to back in manifest order. Frozen embeddings
//! are referenced by path and checksum, not copied.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checksum;
use crate::nn::{Activation, DenseNet, NumericMode, Real};

use super::{FrozenInputs, MlpModel, ModelError, PlatoArchitecture, PlatoModel, Regressor, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Plato,
    Mlp,
}

/// A file another artifact depends on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<PlatoArchitecture>,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub d: usize,
    pub seed: u64,
    pub numeric_mode: NumericMode,
    pub blocks: Vec<ParamBlock>,
    pub params_file: String,
    pub params_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<FileRef>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelArtifact<T: Real> {
    Plato(PlatoModel<T>),
    Mlp(MlpModel<T>),
}

fn net_blocks<T: Real>(prefix: &str, net: &DenseNet<T>, out: &mut Vec<ParamBlock>) {
    for (i, l) in net.layers().iter().enumerate().filter(|(_, l)| l.trainable) {
        out.push(ParamBlock {
            name: format!("{prefix}.{i}.weight"),
            rows: l.inputs(),
            cols: l.outputs(),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.{i}.bias"),
            rows: 1,
            cols: l.outputs(),
        });
    }
}

impl<T: Real> ModelArtifact<T> {
    fn flat(&self) -> Vec<T> {
        let mut p = Vec::new();
        match self {
            ModelArtifact::Plato(m) => m.write_params(&mut p),
            ModelArtifact::Mlp(m) => m.write_params(&mut p),
        }
        p
    }

    /// Trainable blocks in parameter-vector order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut b = Vec::new();
        match self {
            ModelArtifact::Plato(m) => {
                if let Some(a) = m.attention() {
                    net_blocks("attention", a, &mut b);
                }
                net_blocks("inference", m.inference(), &mut b);
                b.push(ParamBlock {
                    name: "first.bias".into(),
                    rows: 1,
                    cols: m.first_bias().len(),
                });
                net_blocks("head", m.head(), &mut b);
            }
            ModelArtifact::Mlp(m) => net_blocks("mlp", m.net(), &mut b),
        }
        b
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `<stem>.json` and `<stem>.params.f32` into `dir`; returns the
/// manifest path.
pub fn save_model<T: Real>(
    model: &ModelArtifact<T>,
    dir: &Path,
    stem: &str,
    seed: u64,
    embeddings: Option<FileRef>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let params = model.flat();
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_f32()).collect();
    let params_file = format!("{stem}.params.f32");
    let ppath = dir.join(&params_file);
    std::fs::write(&ppath, &bytes).map_err(io(&ppath))?;
    let (kind, architecture, layer_sizes, activation, d) = match model {
        ModelArtifact::Plato(m) => (
            ModelKind::Plato,
            Some(m.arch().clone()),
            m.arch().inference_sizes(m.inputs().c()),
            m.arch().activation,
            m.inputs().d(),
        ),
        ModelArtifact::Mlp(m) => (
            ModelKind::Mlp,
            None,
            m.net().layer_sizes(),
            m.net().activation(),
            m.net().input_dim(),
        ),
    };
    let manifest = ModelManifest {
        kind,
        architecture,
        layer_sizes,
        activation,
        d,
        seed,
        numeric_mode: T::MODE,
        blocks: model.blocks(),
        params_file,
        params_sha256: checksum::sha256_hex(&bytes),
        embeddings,
    };
    let mpath = dir.join(format!("{stem}.json"));
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, json).map_err(io(&mpath))?;
    Ok(mpath)
}

/// Reads a model written by [`save_model`]. Inferred-weight models need the
/// frozen inputs they were trained with; when the manifest references an
/// embedding file that exists, its checksum is verified too.
pub fn load_model<T: Real>(
    manifest_path: &Path,
    inputs: Option<Arc<FrozenInputs<T>>>,
) -> Result<(ModelManifest, ModelArtifact<T>)> {
    let text = std::fs::read(manifest_path).map_err(io(manifest_path))?;
    let manifest: ModelManifest =
        serde_json::from_slice(&text).map_err(|e| ModelError::Artifact(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    if let Some(r) = &manifest.embeddings {
        let p = if r.path.is_absolute() { r.path.clone() } else { base.join(&r.path) };
        if p.exists() {
            let sum = checksum::sha256_file(&p).map_err(io(&p))?;
            if sum != r.sha256 {
                return Err(ModelError::Artifact(format!("checksum mismatch for {}", p.display())));
            }
        }
    }
    let ppath = base.join(&manifest.params_file);
    let bytes = std::fs::read(&ppath).map_err(io(&ppath))?;
    if checksum::sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(ModelError::Artifact(format!("checksum mismatch for {}", ppath.display())));
    }
    let mut model = match manifest.kind {
        ModelKind::Plato => {
            let arch = manifest
                .architecture
                .clone()
                .ok_or_else(|| ModelError::Artifact("missing architecture".into()))?;
            let inputs =
                inputs.ok_or_else(|| ModelError::Artifact("model needs its frozen embeddings".into()))?;
            if inputs.d() != manifest.d {
                return Err(ModelError::Artifact(format!(
                    "model expects {} features, inputs have {}",
                    manifest.d,
                    inputs.d()
                )));
            }
            ModelArtifact::Plato(PlatoModel::new(arch, inputs, manifest.seed)?)
        }
        ModelKind::Mlp => {
            let sizes = &manifest.layer_sizes;
            if sizes.len() < 2 || sizes[0] != manifest.d {
                return Err(ModelError::Artifact("bad MLP layer sizes".into()));
            }
            let mut rng = crate::seed::rng(0, "mlp-load", 0);
            let net = DenseNet::new(sizes, manifest.activation, crate::nn::Init::Zeros, &mut rng);
            ModelArtifact::Mlp(MlpModel::from_net(net)?)
        }
    };
    if model.blocks() != manifest.blocks {
        return Err(ModelError::Artifact("parameter blocks differ from the manifest".into()));
    }
    let n = model.flat().len();
    if bytes.len() != 4 * n {
        return Err(ModelError::Artifact(format!(
            "expected {} parameter bytes, found {}",
            4 * n,
            bytes.len()
        )));
    }
    let params: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    match &mut model {
        ModelArtifact::Plato(m) => m.read_params(&params),
        ModelArtifact::Mlp(m) => m.read_params(&params),
    }
    Ok((manifest, model))
}
