use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cir_audit::rank_store::{load_manifest, validate_matrix, MissingPolicy, RunMatrix, RunMatrixBuilder};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Inputs read so far, keyed by path as given, with their SHA-256.
#[derive(Debug, Default)]
pub struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest.iter() {
            write!(hex, "{b:02x}").expect("writing to a string");
        }
        self.digests.insert(path.display().to_string(), hex);
        Ok(bytes)
    }

    pub fn matrix(&mut self, manifest: &Path, runs: &[PathBuf], policy: MissingPolicy) -> Result<RunMatrix, CliError> {
        let bytes = self.read(manifest)?;
        let manifest_doc = load_manifest(bytes.as_slice()).map_err(|e| CliError::at(manifest, e))?;
        let mut builder = RunMatrixBuilder::new(manifest_doc);
        for path in runs {
            let bytes = self.read(path)?;
            builder.add_jsonl(BufReader::new(bytes.as_slice())).map_err(|e| CliError::at(path, e))?;
        }
        let matrix = builder.finish();
        let report = validate_matrix(&matrix, policy).map_err(|e| CliError::Data(e.to_string()))?;
        if !report.missing.is_empty() {
            eprintln!("note: {} missing cell(s) treated as unretrieved", report.missing.len());
        }
        Ok(matrix)
    }

    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.digests
    }
}

/// Tool version, command, effective configuration and input digests. No
/// timestamps, so reruns produce identical bytes.
pub fn provenance(command: &str, config: Value, inputs: &Inputs) -> Value {
    json!({
        "tool": "cir-audit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "inputs": inputs.digests(),
    })
}

pub struct OutDir {
    dir: PathBuf,
    provenance: Value,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn new(dir: PathBuf, provenance: Value) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            provenance,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// A JSON object with the provenance block under `generated_by`.
    pub fn json(&mut self, name: &str, body: impl Serialize) -> Result<(), CliError> {
        let mut v = serde_json::to_value(body).map_err(|e| CliError::Internal(e.to_string()))?;
        let obj = match v {
            Value::Object(ref mut m) => m,
            other => {
                v = json!({ "result": other });
                v.as_object_mut().expect("just built an object")
            }
        };
        obj.insert("generated_by".into(), self.provenance.clone());
        let mut text = serde_json::to_string_pretty(&v).expect("json serialises");
        text.push('\n');
        self.write(name, &text)
    }

    /// Line-delimited records behind a `{"provenance": ...}` header line.
    pub fn jsonl(&mut self, name: &str, lines: &str) -> Result<(), CliError> {
        let mut text = json!({ "provenance": self.provenance }).to_string();
        text.push('\n');
        text.push_str(lines);
        self.write(name, &text)
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        self.write(name, content)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
