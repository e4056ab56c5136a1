//! HTTP/JSON service over the source prompt library.
//!
//! Libraries are loaded into the session (built from instances or uploaded as
//! `SPLB` bytes) and addressed by id. Each keeps a ready search index, so
//! retrieval requests only pay for the scan. CPU-heavy work runs on the
//! blocking pool.

mod error;
mod handlers;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, RwLock};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

use spl_core::{MipsIndex, SearchError, Similarity, SourcePromptLibrary};

pub use error::ApiError;

/// Uploaded libraries can be large; everything else is small JSON.
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

pub struct LoadedLibrary {
    pub library: SourcePromptLibrary,
    inner_product: MipsIndex,
    cosine: OnceLock<Result<MipsIndex, SearchError>>,
}

impl LoadedLibrary {
    pub fn new(library: SourcePromptLibrary) -> Result<Self, SearchError> {
        let inner_product = MipsIndex::build(&library)?;
        Ok(Self {
            library,
            inner_product,
            cosine: OnceLock::new(),
        })
    }

    pub fn index(&self, similarity: Similarity) -> Result<&MipsIndex, SearchError> {
        match similarity {
            Similarity::InnerProduct => Ok(&self.inner_product),
            Similarity::Cosine => self
                .cosine
                .get_or_init(|| MipsIndex::build_with(&self.library, Similarity::Cosine))
                .as_ref()
                .map_err(Clone::clone),
        }
    }
}

#[derive(Default)]
pub struct AppState {
    libraries: RwLock<HashMap<String, Arc<LoadedLibrary>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn insert(&self, loaded: LoadedLibrary) -> String {
        let id = format!("lib-{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        self.libraries
            .write()
            .expect("library map poisoned")
            .insert(id.clone(), Arc::new(loaded));
        id
    }

    pub fn replace(&self, id: &str, loaded: LoadedLibrary) {
        self.libraries
            .write()
            .expect("library map poisoned")
            .insert(id.to_owned(), Arc::new(loaded));
    }

    pub fn get(&self, id: &str) -> Option<Arc<LoadedLibrary>> {
        self.libraries
            .read()
            .expect("library map poisoned")
            .get(id)
            .cloned()
    }

    pub fn remove(&self, id: &str) -> bool {
        self.libraries
            .write()
            .expect("library map poisoned")
            .remove(id)
            .is_some()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .libraries
            .read()
            .expect("library map poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(handlers::health))
        .route("/v1/libraries", post(handlers::build).get(handlers::list))
        .route("/v1/libraries/upload", post(handlers::upload))
        .route(
            "/v1/libraries/{id}",
            get(handlers::summary).delete(handlers::delete),
        )
        .route("/v1/libraries/{id}/file", get(handlers::file))
        .route(
            "/v1/libraries/{id}/manifest",
            get(handlers::manifest).put(handlers::put_manifest),
        )
        .route("/v1/libraries/{id}/search", post(handlers::search))
        .route("/v1/libraries/{id}/retrieve", post(handlers::retrieve))
        .route("/v1/libraries/{id}/evaluate", post(handlers::evaluate))
        .route("/v1/select", post(handlers::select))
        .route("/v1/ablate", post(handlers::ablate))
        .route("/v1/fixtures", get(handlers::fixtures))
        .route("/v1/fixtures/{name}/replay", get(handlers::replay))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Binds `addr` and returns the bound address with the server future.
pub async fn bind(
    addr: SocketAddr,
) -> std::io::Result<(
    SocketAddr,
    impl std::future::Future<Output = std::io::Result<()>>,
)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "listening");
    let app = router(AppState::new());
    Ok((local, async move { axum::serve(listener, app).await }))
}
