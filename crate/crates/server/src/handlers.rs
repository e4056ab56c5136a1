use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;

use spl_core::api::{
    AblateRequest, BuildLibraryRequest, EvaluateRequest, HealthResponse, LibrarySummary,
    ProviderSpec, ReplayDocument, RetrieveConfig, RetrieveRequest, SearchRequest, SearchResponse,
    SelectConfig, SelectRequest, SelectionDocument, TallyDocument,
};
use spl_core::harness::{
    builtin_fixture, evaluate as run_evaluate, replay_fixture, run_ablation, sample_queries,
    AblationTable, BUILTIN_FIXTURES,
};
use spl_core::library::{build_library, decode_library, encode_library, LibraryManifest};
use spl_core::oracle::{LmOracle, SyntheticOracle, TableLine, TableOracle};
use spl_core::selection::{aggregate_frequency, select as run_select};
use spl_core::{EvalReport, OptionProbe, DOCUMENT_VERSION};

use crate::{ApiError, AppState, LoadedLibrary};

type ApiResult<T> = Result<T, ApiError>;
type Body<T> = Result<Json<T>, JsonRejection>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn loaded(state: &AppState, id: &str) -> ApiResult<Arc<LoadedLibrary>> {
    state
        .get(id)
        .ok_or_else(|| ApiError::not_found("LIBRARY_NOT_FOUND", format!("no library `{id}`")))
}

fn summarize(id: String, loaded: &LoadedLibrary) -> LibrarySummary {
    LibrarySummary {
        library_id: id,
        manifest: LibraryManifest::describe(&loaded.library),
        entry_counts: loaded
            .library
            .entry_counts()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect(),
    }
}

pub async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        version: DOCUMENT_VERSION,
        libraries: state.ids().len(),
    })
}

pub async fn build(
    State(state): State<Arc<AppState>>,
    body: Body<BuildLibraryRequest>,
) -> ApiResult<(StatusCode, Json<LibrarySummary>)> {
    let Json(req) = body?;
    let loaded = blocking(move || {
        let library = build_library(req.embeddings, &req.instances, &req.config)?;
        let library = if req.provenance.is_empty() {
            library
        } else {
            library.with_provenance(req.provenance)
        };
        Ok(LoadedLibrary::new(library)?)
    })
    .await?;
    let summary_counts = loaded.library.len();
    let id = state.insert(loaded);
    tracing::info!(%id, entries = summary_counts, "built library");
    let entry = loaded_summary(&state, id)?;
    Ok((StatusCode::CREATED, Json(entry)))
}

fn loaded_summary(state: &AppState, id: String) -> ApiResult<LibrarySummary> {
    let lib = loaded(state, &id)?;
    Ok(summarize(id, &lib))
}

pub async fn upload(
    State(state): State<Arc<AppState>>,
    bytes: Bytes,
) -> ApiResult<(StatusCode, Json<LibrarySummary>)> {
    let loaded = blocking(move || Ok(LoadedLibrary::new(decode_library(&bytes)?)?)).await?;
    let id = state.insert(loaded);
    tracing::info!(%id, "uploaded library");
    Ok((StatusCode::CREATED, Json(loaded_summary(&state, id)?)))
}

pub async fn list(State(state): State<Arc<AppState>>) -> Json<Vec<LibrarySummary>> {
    Json(
        state
            .ids()
            .into_iter()
            .filter_map(|id| state.get(&id).map(|l| summarize(id, &l)))
            .collect(),
    )
}

pub async fn summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<LibrarySummary>> {
    Ok(Json(loaded_summary(&state, id)?))
}

pub async fn delete(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    if state.remove(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(
            "LIBRARY_NOT_FOUND",
            format!("no library `{id}`"),
        ))
    }
}

pub async fn file(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let lib = loaded(&state, &id)?;
    let bytes = blocking(move || Ok(encode_library(&lib.library)?)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}

pub async fn manifest(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<LibraryManifest>> {
    Ok(Json(LibraryManifest::describe(
        &loaded(&state, &id)?.library,
    )))
}

/// Attaches build config and provenance from a manifest written next to an
/// uploaded file. The manifest must agree with the binary header.
pub async fn put_manifest(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<LibraryManifest>,
) -> ApiResult<Json<LibrarySummary>> {
    let Json(manifest) = body?;
    let current = loaded(&state, &id)?;
    let library = manifest
        .attach(current.library.clone())
        .map_err(|m| ApiError::validation("SPLB_BAD_MANIFEST", m))?;
    let updated = blocking(move || Ok(LoadedLibrary::new(library)?)).await?;
    state.replace(&id, updated);
    Ok(Json(loaded_summary(&state, id)?))
}

pub async fn search(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<SearchRequest>,
) -> ApiResult<Json<SearchResponse>> {
    let Json(req) = body?;
    let lib = loaded(&state, &id)?;
    let hits = blocking(move || {
        Ok(lib
            .index(req.similarity)?
            .batch_search(&req.queries, req.top_n)?)
    })
    .await?;
    Ok(Json(SearchResponse { hits }))
}

pub async fn retrieve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<RetrieveRequest>,
) -> ApiResult<Json<TallyDocument>> {
    let Json(req) = body?;
    let lib = loaded(&state, &id)?;
    let doc = blocking(move || {
        if req.instances.is_empty() {
            return Err(ApiError::validation(
                "NO_INSTANCES",
                "no query instances were given",
            ));
        }
        let queries = sample_queries(&req.instances, req.query_count, req.seed)?;
        let hits = lib
            .index(req.similarity)?
            .batch_search(&queries, req.top_n)?;
        Ok(TallyDocument {
            version: DOCUMENT_VERSION,
            hard_prompt_id: req.hard_prompt_id,
            tally: aggregate_frequency(&hits),
            config: Some(RetrieveConfig {
                library_id: id,
                query_count: req.query_count,
                top_n: req.top_n,
                seed: req.seed,
                similarity: req.similarity,
                library: LibraryManifest::describe(&lib.library),
            }),
        })
    })
    .await?;
    Ok(Json(doc))
}

pub async fn select(
    State(state): State<Arc<AppState>>,
    body: Body<SelectRequest>,
) -> ApiResult<Json<SelectionDocument>> {
    let Json(req) = body?;
    let lib = req
        .library_id
        .as_deref()
        .map(|id| loaded(&state, id))
        .transpose()?;
    let doc = blocking(move || {
        let hard_prompt_id = match &req.hard_prompt_id {
            Some(hp) => Some(hp.clone()),
            None => {
                let hps: BTreeSet<&str> = req
                    .probes
                    .iter()
                    .map(|p| p.hard_prompt_id.as_str())
                    .collect();
                match hps.len() {
                    0 => None,
                    1 => hps.into_iter().next().map(str::to_owned),
                    _ => {
                        return Err(ApiError::validation(
                            "HARD_PROMPT_REQUIRED",
                            "probes cover several hard prompts; pass hard_prompt_id",
                        ))
                    }
                }
            }
        };
        let probes = (!req.probes.is_empty())
            .then(|| TableOracle::from_lines(req.probes.iter().cloned().map(TableLine::Probe)));
        let mut tally = req.tally;
        let selection = run_select(
            req.strategy,
            &mut tally,
            req.n_prime,
            probes.as_ref().map(|p| p as &dyn OptionProbe),
            hard_prompt_id.as_deref().unwrap_or_default(),
        )?;
        let prompt = lib
            .as_ref()
            .map(|l| selection.blend(&l.library))
            .transpose()?;
        Ok(SelectionDocument {
            version: DOCUMENT_VERSION,
            selection,
            tally,
            prompt,
            config: SelectConfig {
                strategy: req.strategy,
                n_prime: req.n_prime,
                hard_prompt_id,
                library_id: req.library_id,
            },
        })
    })
    .await?;
    Ok(Json(doc))
}

pub async fn evaluate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<EvaluateRequest>,
) -> ApiResult<Json<EvalReport>> {
    let Json(req) = body?;
    let lib = loaded(&state, &id)?;
    let report = blocking(move || {
        let oracle: Box<dyn LmOracle> = match req.provider {
            ProviderSpec::Synthetic { config } => Box::new(SyntheticOracle::new(config)?),
            ProviderSpec::Table { jsonl } => Box::new(TableOracle::parse(&jsonl)?),
        };
        Ok(run_evaluate(
            &req.task,
            &lib.library,
            req.strategy,
            &req.pipeline,
            &req.seeds,
            oracle.as_ref(),
            req.with_oracle,
        )?)
    })
    .await?;
    Ok(Json(report))
}

pub async fn ablate(body: Body<AblateRequest>) -> ApiResult<Json<AblationTable>> {
    let Json(req) = body?;
    let table = blocking(move || Ok(run_ablation(&req.grid, &req.base)?)).await?;
    Ok(Json(table))
}

pub async fn fixtures() -> Json<Vec<&'static str>> {
    Json(BUILTIN_FIXTURES.to_vec())
}

pub async fn replay(Path(name): Path<String>) -> ApiResult<Json<ReplayDocument>> {
    let fixture = builtin_fixture(&name)?;
    Ok(Json(ReplayDocument {
        version: DOCUMENT_VERSION,
        fixture: name,
        outcome: replay_fixture(&fixture)?,
    }))
}
