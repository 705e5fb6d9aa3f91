use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::env::RingEnv;
use crate::error::{PerpError, Result};

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    /// `None` while the ego is IDM-controlled.
    pub ego_command: Option<f64>,
    pub collided: bool,
}

impl TrajectoryRecord {
    pub fn capture(env: &RingEnv, ego_command: Option<f64>) -> Self {
        Self {
            step: env.state().step,
            positions: env.state().positions.clone(),
            speeds: env.state().speeds.clone(),
            ego_command,
            collided: env.collided(),
        }
    }
}

/// JSON-lines trajectory sink.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| PerpError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| PerpError::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, record: &TrajectoryRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|e| PerpError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| PerpError::io(&self.path, e))
    }
}
