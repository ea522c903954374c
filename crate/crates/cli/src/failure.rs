use std::fmt::Display;

use serde::Serialize;

/// Failure class; each maps to a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Config,
    Data,
    Model,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Model => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: message.into() }
    }

    pub fn model(message: impl Into<String>) -> Self {
        Self { kind: Kind::Model, message: message.into() }
    }

    /// Machine-readable error line written to stderr.
    pub fn to_json(&self, command: &str) -> String {
        serde_json::json!({
            "status": "error",
            "command": command,
            "kind": self.kind,
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

/// Tags library errors with a failure class and a short context string.
pub trait Context<T> {
    fn or_fail(self, kind: Kind, context: &str) -> Result<T>;

    fn config_err(self, context: &str) -> Result<T>
    where
        Self: Sized,
    {
        self.or_fail(Kind::Config, context)
    }

    fn data_err(self, context: &str) -> Result<T>
    where
        Self: Sized,
    {
        self.or_fail(Kind::Data, context)
    }

    fn model_err(self, context: &str) -> Result<T>
    where
        Self: Sized,
    {
        self.or_fail(Kind::Model, context)
    }
}

impl<T, E: Display> Context<T> for std::result::Result<T, E> {
    fn or_fail(self, kind: Kind, context: &str) -> Result<T> {
        self.map_err(|e| Failure { kind, message: format!("{context}: {e}") })
    }
}
