use std::path::Path;

use jrrelp_core::Error;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A recorded artifact hash no longer matches the file on disk.
    Manifest(String),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Io { .. }) => 4,
            CliError::Core(Error::Divergence { .. }) => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Manifest(_) => "manifest",
            CliError::Usage(_) => "usage",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Manifest(m) | CliError::Usage(m) => m.clone(),
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "message": self.message(),
            "exit_code": self.exit_code(),
        });
        match self {
            CliError::Core(Error::Validation { index, .. } | Error::MissingField { index, .. }) => {
                v["record"] = json!(index);
            }
            CliError::Core(Error::Divergence { term, epoch, step, .. }) => {
                v["term"] = json!(term);
                v["epoch"] = json!(epoch);
                v["step"] = json!(step);
            }
            _ => {}
        }
        v.to_string()
    }
}
