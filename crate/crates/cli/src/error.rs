use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            error: &'a str,
            kind: &'a str,
            exit_code: i32,
        }
        let msg = self.to_string();
        serde_json::to_string(&Payload {
            error: &msg,
            kind: self.kind(),
            exit_code: self.exit_code(),
        })
        .expect("error payload serializes")
    }
}

impl From<noisescreen::Error> for CliError {
    fn from(e: noisescreen::Error) -> Self {
        use noisescreen::Error as E;
        // core messages are prefixed with their category; the CLI reports the
        // bare argument/parameter message so it can be matched verbatim
        match e {
            E::Argument(m) | E::Parameter(m) | E::Validation(m) => CliError::Config(m),
            E::Dimension { .. } => CliError::Config(e.to_string()),
            E::Io(err) => CliError::Io(err.to_string()),
            E::Csv(err) => CliError::Io(format!("csv: {err}")),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(format!("csv: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
