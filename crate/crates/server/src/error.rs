use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use spl_core::api::{ErrorBody, ErrorKind};
use spl_core::harness::HarnessError;
use spl_core::library::FormatError;
use spl_core::{LibraryError, OracleError, SearchError, SelectionError};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(kind: ErrorKind, code: &str, message: impl Into<String>) -> Self {
        let status = match kind {
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Format => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
                kind,
            },
        }
    }

    pub fn validation(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, "INTERNAL", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        Self::new(ErrorKind::Format, "BAD_JSON", rejection.body_text())
    }
}

fn library_code(e: &LibraryError) -> &'static str {
    match e {
        LibraryError::KeyDimension { .. } | LibraryError::MatrixShape { .. } => {
            "DIMENSION_MISMATCH"
        }
        LibraryError::UnknownEmbedding { .. } => "UNKNOWN_EMBEDDING",
        LibraryError::DuplicateEmbeddingId(_) => "DUPLICATE_EMBEDDING",
        LibraryError::NonFiniteKey { .. } | LibraryError::NonFiniteMatrix { .. } => "NON_FINITE",
        _ => "INVALID_LIBRARY",
    }
}

impl From<LibraryError> for ApiError {
    fn from(e: LibraryError) -> Self {
        Self::validation(library_code(&e), e.to_string())
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        Self::new(ErrorKind::Format, e.code(), e.to_string())
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        let code = match e {
            SearchError::DimensionMismatch { .. } | SearchError::BatchDimensionMismatch { .. } => {
                "DIMENSION_MISMATCH"
            }
            SearchError::EmptyLibrary => "EMPTY_LIBRARY",
            SearchError::ZeroTopN => "INVALID_TOP_N",
            SearchError::NonFiniteQuery { .. } => "NON_FINITE",
        };
        Self::validation(code, e.to_string())
    }
}

impl From<OracleError> for ApiError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Table { .. } => Self::new(ErrorKind::Format, "BAD_TABLE", e.to_string()),
            OracleError::MissingProbe { .. } | OracleError::MissingRecords { .. } => {
                Self::validation("MISSING_ORACLE_DATA", e.to_string())
            }
            _ => Self::validation("ORACLE", e.to_string()),
        }
    }
}

impl From<SelectionError> for ApiError {
    fn from(e: SelectionError) -> Self {
        let code = match e {
            SelectionError::EmptyTally => "EMPTY_TALLY",
            SelectionError::ProbeRequired(_) => "PROBE_REQUIRED",
            SelectionError::Probe { .. } => "BAD_PROBE",
            SelectionError::UnknownEmbedding(_) => "UNKNOWN_EMBEDDING",
            SelectionError::InvalidProbability { .. } | SelectionError::NotNormalized { .. } => {
                "BAD_PROBABILITIES"
            }
            _ => "INVALID_SELECTION",
        };
        Self::validation(code, e.to_string())
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Library(inner) => inner.into(),
            HarnessError::Retrieval(inner) => inner.into(),
            HarnessError::Selection(inner) => inner.into(),
            HarnessError::Oracle(inner) => inner.into(),
            HarnessError::TaskKeyDimension { .. } => {
                Self::validation("DIMENSION_MISMATCH", e.to_string())
            }
            HarnessError::UnknownAxis(_) => Self::validation("UNKNOWN_AXIS", e.to_string()),
            HarnessError::InvalidAxisValue { .. } => {
                Self::validation("INVALID_AXIS_VALUE", e.to_string())
            }
            HarnessError::Fixture(_) => Self::not_found("FIXTURE_NOT_FOUND", e.to_string()),
            HarnessError::Csv(_) => Self::internal(e.to_string()),
            _ => Self::validation("INVALID_REQUEST", e.to_string()),
        }
    }
}
