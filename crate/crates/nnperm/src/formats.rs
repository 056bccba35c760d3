//! On-disk formats: binary checkpoints, TOML model specs and permutation
//! manifests, raw payload files.

use std::fs;
use std::path::{Path, PathBuf};

use nnperm_core::checkpoint::{ReadError, WriteError};
use nnperm_core::defense::PermutationManifest;
use nnperm_core::nn::ModelSpec;
use nnperm_core::{read_checkpoint, write_checkpoint, StateDict};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: ReadError,
    },
    #[error("cannot encode checkpoint: {0}")]
    Encode(#[from] WriteError),
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("cannot serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_state(path: &Path) -> Result<StateDict, FormatError> {
    read_checkpoint(&read_bytes(path)?).map_err(|source| FormatError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_state(path: &Path, state: &StateDict) -> Result<(), FormatError> {
    write_bytes(path, &write_checkpoint(state)?)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8_lossy(&bytes);
    toml::from_str(&text).map_err(|source| FormatError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    write_bytes(path, toml::to_string(value)?.as_bytes())
}

/// A model spec as TOML: `input_shape` plus one `[[layers]]` table per layer.
pub fn load_spec(path: &Path) -> Result<ModelSpec, FormatError> {
    read_toml(path)
}

pub fn save_spec(path: &Path, spec: &ModelSpec) -> Result<(), FormatError> {
    write_toml(path, spec)
}

/// A permutation manifest as TOML: mode, seed and fractions, then one
/// `[[entries]]` table per layer axis.
pub fn load_manifest(path: &Path) -> Result<PermutationManifest, FormatError> {
    read_toml(path)
}

pub fn save_manifest(path: &Path, manifest: &PermutationManifest) -> Result<(), FormatError> {
    write_toml(path, manifest)
}
