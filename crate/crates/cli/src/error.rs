use std::fmt::Display;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, e: impl Into<anyhow::Error>) -> Self {
        Self { code, error: e.into() }
    }

    pub fn usage(msg: impl Display) -> Self {
        Self::new(EXIT_USAGE, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl Display) -> Self {
        Self::new(EXIT_DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn internal(e: impl Display) -> Self {
        Self::new(EXIT_INTERNAL, anyhow::anyhow!("{e}"))
    }
}

/// Tags an error with the exit code it should produce.
pub trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(EXIT_USAGE, e))
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(EXIT_DATA, e))
    }

    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(EXIT_INTERNAL, e))
    }
}

/// Prints the fully resolved configuration of a run on stderr.
pub fn print_resolved(value: &serde_json::Value) {
    eprintln!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}
