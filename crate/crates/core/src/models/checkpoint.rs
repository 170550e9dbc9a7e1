//! Checkpoints: one tensor file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::element::{DType, Element};
use crate::error::{KnError, Result};
use crate::models::graph::ParamStore;
use crate::models::network::Network;
use crate::models::{Architecture, ModelSpec, NormKind};
use crate::tensor::{read_tensor_file, write_tensor_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub architecture: Architecture,
    pub norm: NormKind,
    pub seed: u64,
    pub step: u64,
    pub dtype: DType,
    pub spec: ModelSpec,
    pub params: Vec<String>,
    pub buffers: Vec<String>,
}

impl Manifest {
    pub fn new(spec: &ModelSpec, seed: u64, step: u64, dtype: DType) -> Self {
        Manifest {
            architecture: spec.architecture,
            norm: spec.norm,
            seed,
            step,
            dtype,
            spec: spec.clone(),
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }
}

fn file_name(name: &str) -> String {
    format!("{name}.knt")
}

pub fn save_checkpoint<T: Element>(dir: impl AsRef<Path>, net: &Network<T>, mut manifest: Manifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("buffers"))?;
    manifest.dtype = T::DTYPE;
    manifest.params = net.params.names().map(str::to_string).collect();
    manifest.buffers = net.buffers.names().map(str::to_string).collect();
    for (name, t) in net.params.iter() {
        write_tensor_file(t, dir.join(file_name(name)))?;
    }
    for (name, t) in net.buffers.iter() {
        write_tensor_file(t, dir.join("buffers").join(file_name(name)))?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Read the manifest and rebuild the network it describes with the stored
/// parameters.
pub fn load_checkpoint<T: Element>(dir: impl AsRef<Path>) -> Result<(Manifest, Network<T>)> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut net = crate::models::build_network::<T>(&manifest.spec, manifest.seed)?;
    let mut params = ParamStore::new();
    for name in &manifest.params {
        params.insert(name.clone(), read_tensor_file(dir.join(file_name(name)))?.into_tensor());
    }
    let mut buffers = ParamStore::new();
    for name in &manifest.buffers {
        buffers.insert(name.clone(), read_tensor_file(dir.join("buffers").join(file_name(name)))?.into_tensor());
    }
    net.params.check_compatible(&params).map_err(|e| KnError::Format(format!("checkpoint parameters: {e}")))?;
    net.buffers.check_compatible(&buffers).map_err(|e| KnError::Format(format!("checkpoint buffers: {e}")))?;
    net.params = params;
    net.buffers = buffers;
    Ok((manifest, net))
}
