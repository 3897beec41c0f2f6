//! IEEE test systems shipped with the crate.

use std::path::Path;

use super::{parse_case, Network};
use crate::error::{Error, Result};

pub const BUILTIN_CASES: [&str; 4] = ["ieee14", "ieee30", "ieee57", "ieee118"];

pub fn builtin_case(name: &str) -> Option<&'static str> {
    match name {
        "ieee14" => Some(include_str!("../../data/ieee14.case")),
        "ieee30" => Some(include_str!("../../data/ieee30.case")),
        "ieee57" => Some(include_str!("../../data/ieee57.case")),
        "ieee118" => Some(include_str!("../../data/ieee118.case")),
        _ => None,
    }
}

/// Loads a shipped case by name, or a case file from disk.
pub fn load_case(name_or_path: &str) -> Result<Network> {
    if let Some(text) = builtin_case(name_or_path) {
        return parse_case(text);
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut net = parse_case(&text)?;
    if net.name.is_empty() {
        net.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(net)
}
