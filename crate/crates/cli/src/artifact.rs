use std::fs;
use std::path::Path;

use rrglmm::{ColumnRoles, Fit};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A saved fit: everything needed to print, diagnose and plot it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub formula: String,
    pub link: String,
    pub roles: ColumnRoles,
    /// Rows removed by the missing-data policy.
    pub dropped: usize,
    pub fit: Fit,
}

impl FitArtifact {
    pub fn new(fit: Fit, dropped: usize) -> Self {
        FitArtifact {
            schema_version: SCHEMA_VERSION,
            formula: fit.formula().to_string(),
            link: fit.link().name().to_string(),
            roles: fit.roles().clone(),
            dropped,
            fit,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let artifact: FitArtifact = serde_json::from_str(&text).map_err(|e| {
            CliError::data(format!("{} is not a fit artifact: {e}", path.display()))
        })?;
        if artifact.schema_version != SCHEMA_VERSION {
            return Err(CliError::data(format!(
                "{} has schema version {}, expected {SCHEMA_VERSION}",
                path.display(),
                artifact.schema_version
            )));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::data(e.to_string()))?;
        text.push('\n');
        crate::write_file(path, text.as_bytes())
    }

    /// The human-readable report; identical whether printed at fit time or
    /// from a reloaded artifact.
    pub fn summary(&self) -> Result<String, CliError> {
        let mut s = rrglmm::summarize_fit(&self.fit)?;
        if self.dropped > 0 {
            s.push_str(&format!(
                "\n({} observations deleted due to missingness)\n",
                self.dropped
            ));
        }
        Ok(s)
    }
}
