//! Bundled benchmark cases.
//!
//! The MATPOWER-format cases carry a solved AC power flow in their bus
//! voltage columns, so the stored operating point is a physical state rather
//! than a flat start. `tb2` is the two-bus lossless line and `tb3` a
//! three-bus chain.

use std::path::Path;

use crate::error::{Error, Result};
use crate::netmodel::{parse_case, NetworkCase};
use crate::scalar::Scalar;

pub const BUILTIN: [(&str, &str); 8] = [
    ("tb2", include_str!("../data/cases/tb2.json")),
    ("tb3", include_str!("../data/cases/tb3.json")),
    ("case9", include_str!("../data/cases/case9.m")),
    ("case14", include_str!("../data/cases/case14.m")),
    ("case30", include_str!("../data/cases/case30.m")),
    ("case39", include_str!("../data/cases/case39.m")),
    ("case57", include_str!("../data/cases/case57.m")),
    ("case118", include_str!("../data/cases/case118.m")),
];

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads a bundled case by name, or parses the file at `name_or_path`.
pub fn load_case<T: Scalar>(name_or_path: &str) -> Result<NetworkCase<T>> {
    if let Some(text) = builtin_text(name_or_path) {
        return parse_case(text);
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_case(&text)
}
