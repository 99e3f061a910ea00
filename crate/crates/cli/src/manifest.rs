use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl InputFile {
    pub fn new(path: &Path, contents: &[u8]) -> Self {
        let digest = Sha256::digest(contents);
        InputFile {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: contents.len(),
        }
    }
}

/// Record of one command invocation, written next to its outputs.
/// Everything except `timestamp` is a function of the inputs and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments without `--out-dir`, for `metaprop replay`.
    pub args: Vec<String>,
    pub inputs: Vec<InputFile>,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: String,
    pub outputs: Vec<String>,
    pub settings: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp: String,
}

/// Drop `--out-dir X` / `--out-dir=X` from an argument list.
pub fn strip_out_dir(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out
}
