use std::fmt;

use vdea::ErrorClass;

/// What ends a run unsuccessfully: a bad invocation or a library error.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(vdea::Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Failure::Usage(_) => ErrorClass::Usage,
            Failure::Core(e) => e.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }

    /// `error[<class>]: <message>` on a single line.
    pub fn line(&self) -> String {
        let class = match self.class() {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        };
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{class}]: {msg}")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<vdea::Error> for Failure {
    fn from(e: vdea::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}
