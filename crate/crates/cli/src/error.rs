use std::fmt;
use std::io::ErrorKind;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_MALFORMED: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn missing(message: impl Into<String>) -> Self {
        CliError {
            kind: "missing_input",
            code: EXIT_MISSING_INPUT,
            message: message.into(),
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        CliError {
            kind: "malformed",
            code: EXIT_MALFORMED,
            message: message.into(),
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.code,
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<oxyauth::Error> for CliError {
    fn from(e: oxyauth::Error) -> Self {
        use oxyauth::Error as E;
        let (kind, code) = match &e {
            E::Io { source, .. } if source.kind() == ErrorKind::NotFound => {
                ("missing_input", EXIT_MISSING_INPUT)
            }
            E::Io { .. } => ("io", EXIT_OTHER),
            E::Parse { .. } | E::Json(_) | E::Csv(_) | E::Validation(_) | E::Contract(_) => {
                ("malformed", EXIT_MALFORMED)
            }
            E::InsufficientData(_) | E::Infeasible(_) => ("infeasible", EXIT_INFEASIBLE),
        };
        CliError {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::malformed(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
