//! Exit-code classification and the machine-readable error line.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            kind: FailureKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            kind: FailureKind::Data,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        match self.kind {
            FailureKind::Usage => 2,
            FailureKind::Data => 3,
            FailureKind::Numerical => 4,
        }
    }

    /// One JSON object on a single line.
    pub fn line(&self) -> String {
        let kind = match self.kind {
            FailureKind::Usage => "usage",
            FailureKind::Data => "data",
            FailureKind::Numerical => "numerical",
        };
        serde_json::json!({ "error": kind, "code": self.code(), "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<wordsel::Error> for Failure {
    fn from(e: wordsel::Error) -> Self {
        use wordsel::Error as E;
        let kind = match e {
            E::Config(_) => FailureKind::Usage,
            E::NonFinite(_) => FailureKind::Numerical,
            _ => FailureKind::Data,
        };
        Failure {
            kind,
            message: e.to_string(),
        }
    }
}
