//! HTTP+JSON front end over the planner and decoder.
//!
//! Requests carry structured plans and documents; the service serializes
//! them itself and returns the exact symbolic sequences it decoded, so a
//! client can round-trip every response. Identical requests with the same
//! seed produce identical responses.

pub mod error;
pub mod registry;
pub mod stream;

use std::sync::{Arc, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use syllaform_core::corpus::annotate_line;
use syllaform_core::planner::{
    fill_document, mask_spans, masked_granularities, parse_output, serialize_generation, serialize_infilling, tree_from_outline,
    Granularity, InfillFlags, Layout, MaskSpec, SectionOutline, SegmentPair, SymbolicSequence,
};
use syllaform_core::{SongDocument, SyllableCounter};
use syllaform_decode::{execute_infill, execute_plan, realized_pairs, score_infill, DecodeParams, FnSink, Provenance, SegmentRecord};

pub use error::ApiError;
pub use registry::{LoadedModel, ModelInfo, Registry};
use stream::{Session, StreamHub};

pub const MAX_SAMPLES: usize = 16;

#[derive(Clone, Default)]
pub struct AppState {
    pub registry: Arc<RwLock<Registry>>,
    pub streams: Arc<StreamHub>,
}

impl AppState {
    pub fn with_models(models: impl IntoIterator<Item = LoadedModel>) -> Self {
        let state = Self::default();
        {
            let mut reg = state.registry.write().unwrap();
            for m in models {
                reg.insert(m, false);
            }
        }
        state
    }

    fn model(&self, name: Option<&str>) -> Result<Arc<LoadedModel>, ApiError> {
        self.registry.read().unwrap().get(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub input_text: String,
    pub plan: Vec<SectionOutline>,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub params: DecodeParams,
    #[serde(default)]
    pub seed: u64,
    /// Publishes the decode trace under this id on `/v1/generate/stream`.
    #[serde(default)]
    pub session: Option<String>,
}

fn default_layout() -> Layout {
    Layout::Back
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub model: String,
    pub layout: Layout,
    pub seed: u64,
    pub plan: SymbolicSequence,
    pub output: SymbolicSequence,
    pub provenance: Vec<Provenance>,
    /// Requested and realized syllables for every controlled span.
    pub pairs: Vec<SegmentPair>,
    pub segments: Vec<SegmentRecord>,
    pub document: Option<SongDocument>,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfillRequest {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub input_text: String,
    pub document: SongDocument,
    pub masks: Vec<MaskSpec>,
    #[serde(default)]
    pub flags: InfillFlags,
    #[serde(default)]
    pub params: DecodeParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub n_samples: usize,
    #[serde(default)]
    pub session: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillSample {
    pub seed: u64,
    pub document: SongDocument,
    pub answer: SymbolicSequence,
    pub provenance: Vec<Provenance>,
    pub pairs: Vec<SegmentPair>,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillResponse {
    pub model: String,
    pub context: SymbolicSequence,
    pub scaffold: SymbolicSequence,
    pub granularities: Vec<Granularity>,
    #[serde(flatten)]
    pub first: InfillSample,
    /// Every sample, the first included, when `n_samples > 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternatives: Option<Vec<InfillSample>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyllablesRequest {
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRequest {
    pub name: String,
    pub checkpoint: std::path::PathBuf,
    pub vocab: std::path::PathBuf,
    #[serde(default)]
    pub default: bool,
}

#[derive(Debug, Deserialize)]
pub struct StreamQuery {
    pub session: String,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/generate/stream", get(generate_stream))
        .route("/v1/infill", post(infill))
        .route("/v1/syllables", post(syllables))
        .route("/v1/models", get(models))
        .route("/v1/models/load", post(load_model))
        .with_state(state)
}

/// JSON body parsing that reports every schema problem as 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal("worker", e.to_string()))?
}

fn claim(state: &AppState, id: &Option<String>) -> Result<Option<Arc<Session>>, ApiError> {
    id.as_deref().map(|id| state.streams.begin(id)).transpose()
}

fn sink(session: &Option<Arc<Session>>) -> FnSink<impl FnMut(&syllaform_decode::TraceEvent) + '_> {
    FnSink(move |e: &syllaform_decode::TraceEvent| {
        if let Some(s) = session {
            s.push(e.to_json_line());
        }
    })
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest = parse(&body)?;
    req.params.validate()?;
    let model = state.model(req.model.as_deref())?;
    let tree = tree_from_outline("request", &req.plan)?;
    let plan = serialize_generation(&tree, req.layout)?;
    let session = claim(&state, &req.session)?;
    blocking(move || {
        let params = DecodeParams { seed: req.seed, ..req.params };
        let emb = model.embedding(&req.input_text);
        let result = execute_plan(model.session().as_mut(), &model.vocab, &plan, req.layout, emb.as_deref(), &params, &mut sink(&session));
        if let Some(s) = &session {
            s.finish();
        }
        let out = result?;
        let counter = SyllableCounter::new();
        let pairs = realized_pairs(&plan, &out.sequence, &counter).0;
        let (document, parse_error) = match req.layout {
            Layout::Front => match parse_output(&out.sequence, &counter) {
                Ok(p) => (Some(SongDocument { id: tree.song_id.clone(), ..p.document }), None),
                Err(e) => (None, Some(e.to_string())),
            },
            Layout::Back | Layout::Both => {
                let fills: Vec<String> = out.segments.iter().map(|s| s.text.clone()).collect();
                (Some(fill_document(&tree, &fills, &counter)), None)
            }
        };
        Ok(GenerateResponse {
            model: model.name.clone(),
            layout: req.layout,
            seed: req.seed,
            plan,
            output: out.sequence,
            provenance: out.provenance,
            pairs,
            segments: out.segments,
            document,
            parse_error,
        })
    })
    .await
    .map(Json)
}

async fn infill(State(state): State<AppState>, body: Bytes) -> Result<Json<InfillResponse>, ApiError> {
    let req: InfillRequest = parse(&body)?;
    req.params.validate()?;
    if !(1..=MAX_SAMPLES).contains(&req.n_samples) {
        return Err(ApiError::bad_request(format!("n_samples must lie in 1..={MAX_SAMPLES}")));
    }
    let model = state.model(req.model.as_deref())?;
    let masked = mask_spans(&req.document, &req.masks)?;
    let (context, scaffold) = serialize_infilling(&masked, req.flags)?;
    let granularities = masked_granularities(&masked);
    let session = claim(&state, &req.session)?;
    blocking(move || {
        let counter = SyllableCounter::new();
        let emb = model.embedding(&req.input_text);
        let mut samples = Vec::with_capacity(req.n_samples);
        let mut run = || -> Result<(), ApiError> {
            for k in 0..req.n_samples as u64 {
                let params = DecodeParams { seed: req.seed.wrapping_add(k), ..req.params.clone() };
                let out = execute_infill(
                    model.session().as_mut(),
                    &model.vocab,
                    &context,
                    &scaffold,
                    &granularities,
                    emb.as_deref(),
                    &params,
                    &mut sink(&session),
                )?;
                let answer = out.answer();
                let pairs = score_infill(&masked, &answer, &counter)?.0;
                let fills: Vec<String> = out.segments.iter().map(|s| s.text.clone()).collect();
                let mut document = fill_document(&masked, &fills, &counter);
                document.id = req.document.id.clone();
                document.language_tag = req.document.language_tag.clone();
                samples.push(InfillSample {
                    seed: params.seed,
                    document,
                    answer,
                    provenance: out.provenance[out.answer_start..].to_vec(),
                    pairs,
                    segments: out.segments,
                });
            }
            Ok(())
        };
        let result = run();
        if let Some(s) = &session {
            s.finish();
        }
        result?;
        let alternatives = (samples.len() > 1).then(|| samples.clone());
        Ok(InfillResponse { model: model.name.clone(), context, scaffold, granularities, first: samples.swap_remove(0), alternatives })
    })
    .await
    .map(Json)
}

async fn syllables(body: Bytes) -> Result<Json<Vec<(String, u32)>>, ApiError> {
    let req: SyllablesRequest = parse(&body)?;
    let line = annotate_line(&req.text, &SyllableCounter::new());
    Ok(Json(line.words.into_iter().map(|w| (w.text, w.syllables)).collect()))
}

async fn models(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "models": state.registry.read().unwrap().list() }))
}

async fn load_model(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: LoadRequest = parse(&body)?;
    let loaded = blocking(move || LoadedModel::load(req.name, &req.checkpoint, &req.vocab).map(|m| (m, req.default))).await?;
    let mut reg = state.registry.write().unwrap();
    reg.insert(loaded.0, loaded.1);
    Ok(Json(serde_json::json!({ "models": reg.list() })))
}

async fn generate_stream(State(state): State<AppState>, Query(q): Query<StreamQuery>) -> Response {
    let body = Body::from_stream(state.streams.follow(&q.session));
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}
