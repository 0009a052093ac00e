//! Container registry config file.

use std::path::Path;

use pourbench_core::{ContainerRegistry, RegistryEntry};
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError, FORMAT_VERSION};

/// The registry shipped with the crate.
pub const DEFAULT_REGISTRY_JSON: &str = include_str!("../config/registry.json");

pub const INVENTED_DIMENSIONS_NOTE: &str =
    "Container dimensions are invented plausible values (inner diameter d and height h in mm); they are not measurements of the original cups.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub containers: Vec<RegistryEntry>,
}

pub fn parse_registry(text: &str, origin: &str) -> Result<ContainerRegistry, FormatError> {
    let file: RegistryFile = serde_json::from_str(text).map_err(|e| FormatError::parse(origin, 0, &e))?;
    if file.format_version != FORMAT_VERSION {
        return Err(FormatError::invalid(origin, format!("unsupported format_version {}", file.format_version)));
    }
    ContainerRegistry::new(file.containers).map_err(|e| FormatError::invalid(origin, e))
}

pub fn default_registry() -> ContainerRegistry {
    parse_registry(DEFAULT_REGISTRY_JSON, "default registry").expect("shipped registry is valid")
}

pub fn load_registry(path: &Path) -> Result<ContainerRegistry, FormatError> {
    parse_registry(&format::read_to_string(path)?, &path.display().to_string())
}

pub fn registry_json(reg: &ContainerRegistry) -> Vec<u8> {
    format::to_json_bytes(&RegistryFile {
        format_version: FORMAT_VERSION,
        note: Some(INVENTED_DIMENSIONS_NOTE.to_string()),
        containers: reg.containers.clone(),
    })
}

/// First container marked as part of the training set.
pub fn training_container(reg: &ContainerRegistry) -> Option<&RegistryEntry> {
    reg.containers.iter().find(|e| e.in_training)
}
