//! Typed client for `spl-server`.

use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use spl_core::api::{
    AblateRequest, BuildLibraryRequest, ErrorBody, ErrorKind, EvaluateRequest, HealthResponse,
    LibrarySummary, ReplayDocument, RetrieveRequest, SearchRequest, SearchResponse, SelectRequest,
    SelectionDocument, TallyDocument,
};
use spl_core::harness::AblationTable;
use spl_core::library::LibraryManifest;
use spl_core::EvalReport;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
        kind: ErrorKind,
    },
    #[error("unexpected response ({status}): {message}")]
    Decode { status: StatusCode, message: String },
}

impl ClientError {
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Api {
                kind: ErrorKind::Validation,
                ..
            }
        )
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct SplClient {
    base: String,
    http: reqwest::Client,
}

impl SplClient {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    async fn checked(response: Response) -> Result<Response> {
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let text = response.text().await?;
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => ClientError::Api {
                status,
                code: body.code,
                message: body.message,
                kind: body.kind,
            },
            Err(_) => ClientError::Decode {
                status,
                message: text,
            },
        })
    }

    async fn decode<T: DeserializeOwned>(builder: RequestBuilder) -> Result<T> {
        let response = Self::checked(builder.send().await?).await?;
        let status = response.status();
        let bytes = response.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
            status,
            message: e.to_string(),
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.request(Method::POST, path).json(body)).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.request(Method::GET, path)).await
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        self.get("/health").await
    }

    pub async fn build_library(&self, req: &BuildLibraryRequest) -> Result<LibrarySummary> {
        self.post("/v1/libraries", req).await
    }

    pub async fn list_libraries(&self) -> Result<Vec<LibrarySummary>> {
        self.get("/v1/libraries").await
    }

    /// Uploads an encoded library file, then its manifest if one is given.
    pub async fn upload_library(
        &self,
        bytes: Vec<u8>,
        manifest: Option<&LibraryManifest>,
    ) -> Result<LibrarySummary> {
        let builder = self
            .request(Method::POST, "/v1/libraries/upload")
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(bytes);
        let summary: LibrarySummary = Self::decode(builder).await?;
        match manifest {
            Some(m) => {
                Self::decode(
                    self.request(
                        Method::PUT,
                        &format!("/v1/libraries/{}/manifest", summary.library_id),
                    )
                    .json(m),
                )
                .await
            }
            None => Ok(summary),
        }
    }

    pub async fn library(&self, id: &str) -> Result<LibrarySummary> {
        self.get(&format!("/v1/libraries/{id}")).await
    }

    pub async fn manifest(&self, id: &str) -> Result<LibraryManifest> {
        self.get(&format!("/v1/libraries/{id}/manifest")).await
    }

    /// Encoded library bytes.
    pub async fn download_library(&self, id: &str) -> Result<Vec<u8>> {
        let response = Self::checked(
            self.request(Method::GET, &format!("/v1/libraries/{id}/file"))
                .send()
                .await?,
        )
        .await?;
        Ok(response.bytes().await?.to_vec())
    }

    pub async fn delete_library(&self, id: &str) -> Result<()> {
        Self::checked(
            self.request(Method::DELETE, &format!("/v1/libraries/{id}"))
                .send()
                .await?,
        )
        .await?;
        Ok(())
    }

    pub async fn search(&self, id: &str, req: &SearchRequest) -> Result<SearchResponse> {
        self.post(&format!("/v1/libraries/{id}/search"), req).await
    }

    pub async fn retrieve(&self, id: &str, req: &RetrieveRequest) -> Result<TallyDocument> {
        self.post(&format!("/v1/libraries/{id}/retrieve"), req)
            .await
    }

    pub async fn select(&self, req: &SelectRequest) -> Result<SelectionDocument> {
        self.post("/v1/select", req).await
    }

    pub async fn evaluate(&self, id: &str, req: &EvaluateRequest) -> Result<EvalReport> {
        self.post(&format!("/v1/libraries/{id}/evaluate"), req)
            .await
    }

    pub async fn ablate(&self, req: &AblateRequest) -> Result<AblationTable> {
        self.post("/v1/ablate", req).await
    }

    pub async fn fixtures(&self) -> Result<Vec<String>> {
        self.get("/v1/fixtures").await
    }

    pub async fn replay(&self, name: &str) -> Result<ReplayDocument> {
        self.get(&format!("/v1/fixtures/{name}/replay")).await
    }
}
