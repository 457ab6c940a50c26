use std::path::PathBuf;

/// Failures of the file formats and pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt file at byte {offset}: {what}")]
    Corruption { offset: u64, what: String },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: String, found: String },
    #[error("report error: {0}")]
    Report(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: lfo_core::Error,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 dependency, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Dependency(_) => 3,
            HarnessError::Stage { source, .. } => match source {
                lfo_core::Error::Config(_) => 2,
                lfo_core::Error::Numeric { .. } | lfo_core::Error::Degenerate(_) => 4,
                _ => 1,
            },
            _ => 1,
        }
    }
}

/// Tags core errors with the stage that raised them.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for lfo_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| HarnessError::Stage { stage, source })
    }
}
