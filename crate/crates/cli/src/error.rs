use thiserror::Error;

/// Exit status of a successful, certified run.
pub const EXIT_OK: u8 = 0;
/// A module error or I/O failure.
pub const EXIT_CRASH: u8 = 1;
/// Unreadable or invalid configuration.
pub const EXIT_CONFIG: u8 = 2;
/// A structural assumption or damping claim was falsified.
pub const EXIT_UNCERTIFIED: u8 = 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {reason}")]
    Read { path: String, reason: String },

    #[error("malformed config JSON: {0}")]
    Parse(String),

    #[error("invalid config at `{path}`: {reason}")]
    Validation { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: relaxdamp_core::Error,
    },

    #[error("cannot write `{path}`: {reason}")]
    Io { path: String, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core { source, .. } if source.is_certification_failure() => EXIT_UNCERTIFIED,
            CliError::Core { .. } | CliError::Io { .. } => EXIT_CRASH,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(ConfigError::Read { .. }) => "ConfigRead",
            CliError::Config(ConfigError::Parse(_)) => "ParseError",
            CliError::Config(ConfigError::Validation { .. }) => "ValidationError",
            CliError::Core { source, .. } => source.kind(),
            CliError::Io { .. } => "Io",
        }
    }
}

/// Attaches the pipeline stage to core errors.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for relaxdamp_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}
