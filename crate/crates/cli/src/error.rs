use lmtx::corpus::CorpusError;
use lmtx::encoder::EncoderError;
use lmtx::eval::EvalError;
use lmtx::index::IndexError;
use lmtx::teacher::TeacherError;
use lmtx::trainer::TrainError;
use serde_json::json;
use thiserror::Error;

use crate::config::ConfigError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_REMOTE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Data(String),
}

fn teacher_kind(e: &TeacherError) -> (&'static str, i32) {
    match e {
        TeacherError::RemoteUnavailable(_) => ("RemoteUnavailable", EXIT_REMOTE),
        TeacherError::RemoteMalformedResponse(_) => ("RemoteMalformedResponse", EXIT_REMOTE),
        TeacherError::InvalidTemplate(_) => ("InvalidTemplate", EXIT_USAGE),
        TeacherError::InvalidConfig(_) => ("InvalidTeacherConfig", EXIT_USAGE),
        TeacherError::CorruptCache { .. } => ("CorruptCache", EXIT_DATA),
        TeacherError::UnknownDocument(_) => ("UnknownDocument", EXIT_DATA),
        TeacherError::Io(_) => ("IoError", EXIT_DATA),
    }
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }

    /// Error name and process exit code.
    pub fn classify(&self) -> (&'static str, i32) {
        match self {
            Self::Config(e) => match e {
                ConfigError::UnknownKey(_) => ("UnknownKey", EXIT_USAGE),
                ConfigError::TypeMismatch { .. } => ("TypeMismatch", EXIT_USAGE),
                ConfigError::MissingRequired(_) => ("MissingRequired", EXIT_USAGE),
                ConfigError::Syntax { .. } => ("ConfigSyntax", EXIT_USAGE),
                ConfigError::Unreadable { .. } => ("ConfigUnreadable", EXIT_USAGE),
                ConfigError::MissingFile { .. } => ("MissingFile", EXIT_DATA),
            },
            Self::Usage(_) => ("Usage", EXIT_USAGE),
            Self::Corpus(_) => ("CorpusError", EXIT_DATA),
            Self::Encoder(_) => ("EncoderError", EXIT_DATA),
            Self::Index(IndexError::StaleIndex { .. }) => ("StaleIndex", EXIT_DATA),
            Self::Index(_) => ("IndexError", EXIT_DATA),
            Self::Teacher(e) | Self::Train(TrainError::Teacher(e)) => teacher_kind(e),
            Self::Train(TrainError::NoTrainingSignal { .. }) => ("NoTrainingSignal", EXIT_DATA),
            Self::Train(TrainError::InvalidConfig(_)) => ("InvalidTrainConfig", EXIT_USAGE),
            Self::Train(_) => ("TrainError", EXIT_DATA),
            Self::Eval(EvalError::MissingPredictions(_)) => ("MissingPredictions", EXIT_DATA),
            Self::Eval(_) => ("EvalError", EXIT_DATA),
            Self::Io { .. } => ("IoError", EXIT_DATA),
            Self::Data(_) => ("DataError", EXIT_DATA),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.classify().1
    }

    /// Single-line JSON error record for standard error.
    pub fn record(&self) -> String {
        let (kind, code) = self.classify();
        json!({"error": kind, "message": self.to_string(), "exit_code": code}).to_string()
    }
}
