use std::fmt;

/// Error classes, each with its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Other,
    Usage,
    Schema,
    Ingest,
    Tuning,
    Params,
    Model,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Usage => 2,
            Kind::Schema => 3,
            Kind::Ingest => 4,
            Kind::Tuning => 5,
            Kind::Params => 6,
            Kind::Model => 7,
            Kind::Io => 8,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Failure {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<covrf::Error> for Failure {
    fn from(e: covrf::Error) -> Self {
        use covrf::Error as E;
        let kind = match &e {
            E::TuningInfeasible(_) => Kind::Tuning,
            E::InvalidParams(_) | E::InvalidControlSet(_) | E::InvalidSimulation(_) => Kind::Params,
            E::DimensionMismatch { .. } => Kind::Schema,
            E::InvalidData(_) | E::DegenerateNode { .. } => Kind::Ingest,
            E::Output(_) => Kind::Io,
            E::NonPositiveVariance { .. } | E::NotPsd => Kind::Other,
        };
        Failure::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Kind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(Kind::Other, format!("JSON encoding failed: {e}"))
    }
}
