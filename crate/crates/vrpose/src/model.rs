//! Versioned JSON document bundling the orientation and position models,
//! the interchange format every subcommand reads and writes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::PositionModel;
use crate::pose::OrientationModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    /// Eye height in meters; metadata only, the position process is planar.
    pub eye_height: f64,
    pub orientation: OrientationModel,
    pub position: PositionModel,
}

impl ModelDocument {
    pub fn new(orientation: OrientationModel, position: PositionModel) -> Self {
        ModelDocument { schema_version: SCHEMA_VERSION, eye_height: 1.6, orientation, position }
    }

    /// Bundled reference parameters, usable without fitting a trace first.
    pub fn reference() -> Self {
        ModelDocument::new(OrientationModel::desktop_vr(), PositionModel::placeholder())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::domain(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.eye_height > 0.0) {
            return Err(Error::domain("eye_height must be > 0"));
        }
        self.orientation.azimuth_regimes.validate()?;
        // reconstructing through the checked constructor revalidates ranges
        PositionModel::new(
            self.position.mu,
            self.position.lambda,
            self.position.c,
            self.position.v,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::domain(format!("cannot read {}: {e}", path.display())))?;
        let doc: ModelDocument = serde_json::from_str(&raw)
            .map_err(|e| Error::domain(format!("{} is not a model document: {e}", path.display())))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, json + "\n")
            .map_err(|e| Error::domain(format!("cannot write {}: {e}", path.display())))
    }
}
