//! Stage-tagged errors and process exit codes.

use std::fmt;

/// Exit code per failing stage. `Usage` follows the BSD `EX_USAGE` value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Classify,
    Bonemesh,
    Localize,
    Io,
    Other,
    Usage,
}

impl Stage {
    pub fn code(self) -> i32 {
        match self {
            Stage::Preprocess => 1,
            Stage::Classify => 2,
            Stage::Bonemesh => 3,
            Stage::Localize => 4,
            Stage::Io => 5,
            Stage::Other => 6,
            Stage::Usage => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Classify => "classify",
            Stage::Bonemesh => "bonemesh",
            Stage::Localize => "localize",
            Stage::Io => "io",
            Stage::Other => "other",
            Stage::Usage => "usage",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    /// Patient or ROI the stage was working on, when known.
    pub input_id: Option<String>,
    pub source: anyhow::Error,
}

impl StageError {
    pub fn new(stage: Stage, input_id: Option<&str>, source: impl Into<anyhow::Error>) -> Self {
        Self { stage, input_id: input_id.map(str::to_owned), source: source.into() }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed", self.stage.name())?;
        if let Some(id) = &self.input_id {
            write!(f, " for {id}")?;
        }
        write!(f, ": {:#}", self.source)
    }
}

impl std::error::Error for StageError {}

/// Attaches a stage to any fallible result.
pub trait StageExt<T> {
    fn stage(self, stage: Stage, input_id: Option<&str>) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage, input_id: Option<&str>) -> Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, input_id, e))
    }
}
