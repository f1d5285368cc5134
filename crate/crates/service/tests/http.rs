use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use syllaform_core::planner::{serialize_generation, tree_from_outline, Granularity, SectionOutline};
use syllaform_core::synth::{synth_corpus, SynthConfig};
use syllaform_core::tokenizer::{train_vocab, Vocab};
use syllaform_core::SongDocument;
use syllaform_decode::TraceEvent;
use syllaform_lm::data::slot_id;
use syllaform_lm::{checkpoint, LmConfig, Model};
use syllaform_service::{router, AppState, GenerateResponse, InfillResponse, LoadedModel};
use tower::ServiceExt;

fn docs() -> Vec<SongDocument> {
    synth_corpus(&SynthConfig { songs: 20, seed: 3, ..Default::default() })
}

fn vocab() -> Vocab {
    let texts: Vec<String> = docs().iter().map(|d| d.lyrics_text()).collect();
    train_vocab(texts.iter().map(String::as_str), 700).unwrap()
}

fn oracle_app() -> Router {
    router(AppState::with_models([LoadedModel::oracle("oracle", vocab())]))
}

fn tiny_model(vocab: &Vocab, context_len: usize) -> Model<f32> {
    let cfg = LmConfig {
        layers: 1,
        heads: 2,
        model_dim: 16,
        ff_dim: 32,
        context_len,
        embed_dim: 8,
        dropout: 0.0,
        seed: 4,
        ..LmConfig::new(vocab.len(), slot_id(vocab))
    };
    Model::new(cfg).unwrap()
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = send(app, "POST", uri, Some(body)).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn plan() -> Value {
    json!([
        { "form": "verse", "lines": [
            { "syllables": 7 },
            { "syllables": 6, "segmentation": [
                { "kind": "phrase", "syllables": 3 },
                { "kind": "word", "syllables": 1 },
                { "kind": "word", "syllables": 2 }
            ] }
        ] },
        { "form": "chorus", "syllables": 9 },
        { "form": "verse", "lines": [{ "syllables": 5 }, { "syllables": 8 }] }
    ])
}

fn exact(pairs: &[syllaform_core::planner::SegmentPair]) -> bool {
    !pairs.is_empty() && pairs.iter().all(|p| p.expected == p.realized)
}

#[tokio::test]
async fn syllables_are_counted_per_word() {
    let (s, v) = post(&oracle_app(), "/v1/syllables", json!({ "text": "hello world" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([["hello", 2], ["world", 1]]));
    let (s, _) = post(&oracle_app(), "/v1/syllables", json!({ "words": "x" })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oracle_generation_is_exact_for_every_layout() {
    let app = oracle_app();
    let sections: Vec<SectionOutline> = serde_json::from_value(plan()).unwrap();
    let tree = tree_from_outline("request", &sections).unwrap();
    for layout in ["back", "both", "front"] {
        let req = json!({ "plan": plan(), "layout": layout, "seed": 11, "input_text": "rain on the road" });
        let (s, v) = post(&app, "/v1/generate", req.clone()).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let r: GenerateResponse = serde_json::from_value(v.clone()).unwrap();
        assert!(exact(&r.pairs), "{layout}: {:?}", r.pairs);
        let grans: std::collections::BTreeSet<Granularity> = r.pairs.iter().map(|p| p.granularity).collect();
        assert_eq!(grans.len(), 4);
        assert_eq!(r.plan, serialize_generation(&tree, r.layout).unwrap());
        let doc = r.document.unwrap();
        assert_eq!(doc.paragraphs.len(), 3);
        assert_eq!(doc.paragraphs[0].lines[0].syllables(), 7);
        assert_eq!(doc.paragraphs[1].syllables(), 9);
        let (_, again) = post(&app, "/v1/generate", req).await;
        assert_eq!(v, again);
    }
}

#[tokio::test]
async fn generation_errors_map_to_status_codes() {
    let app = oracle_app();
    let cases = [
        (json!({ "plan": [] }), StatusCode::BAD_REQUEST),
        (json!({ "plan": plan(), "colour": 1 }), StatusCode::BAD_REQUEST),
        (json!({ "plan": [{ "form": "verse", "lines": [{ "syllables": 0 }] }] }), StatusCode::BAD_REQUEST),
        (json!({ "plan": [{ "form": "verse", "lines": [{ "syllables": 301 }] }] }), StatusCode::BAD_REQUEST),
        (json!({ "plan": [{ "form": "hook", "syllables": 3 }] }), StatusCode::BAD_REQUEST),
        (json!({ "plan": plan(), "params": { "top_k": 0 } }), StatusCode::BAD_REQUEST),
        (json!({ "plan": [{ "form": "verse", "lines": [{ "syllables": 200 }, { "syllables": 150 }] }] }), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({ "plan": plan(), "model": "missing" }), StatusCode::CONFLICT),
    ];
    for (req, want) in cases {
        let (s, v) = post(&app, "/v1/generate", req.clone()).await;
        assert_eq!(s, want, "{req}: {v}");
        assert!(v["error"]["kind"].is_string() && v["error"]["message"].is_string(), "{v}");
    }
    let (s, _) = send(&app, "POST", "/v1/generate", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let empty = router(AppState::default());
    let (s, v) = post(&empty, "/v1/generate", json!({ "plan": plan() })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["kind"], "no_model");
}

fn infill_request(doc: &SongDocument) -> Value {
    json!({
        "document": doc,
        "masks": [
            { "granularity": "word", "paragraph": 0, "line": 0, "words": { "start": 0, "end": 1 } },
            { "granularity": "phrase", "paragraph": 0, "line": 1, "words": { "start": 1, "end": 3 }, "syllables": 5 },
            { "granularity": "line", "paragraph": 1, "line": 0 },
            { "granularity": "paragraph", "paragraph": 2, "syllables": 12 }
        ],
        "seed": 5
    })
}

#[tokio::test]
async fn oracle_infill_is_exact_and_keeps_context() {
    let app = oracle_app();
    let doc = docs().into_iter().find(|d| d.paragraphs.len() >= 3 && d.paragraphs[0].lines[1].words.len() >= 3).unwrap();
    for flags in
        [json!({}), json!({ "same_mask": true }), json!({ "no_songform": true }), json!({ "same_mask": true, "no_songform": true })]
    {
        let mut req = infill_request(&doc);
        req["flags"] = flags;
        let (s, v) = post(&app, "/v1/infill", req).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let r: InfillResponse = serde_json::from_value(v).unwrap();
        assert!(exact(&r.first.pairs), "{:?}", r.first.pairs);
        assert_eq!(r.first.pairs.iter().map(|p| p.expected).collect::<Vec<_>>()[1], 5);
        assert_eq!(r.granularities, [Granularity::Word, Granularity::Phrase, Granularity::Line, Granularity::Paragraph]);
        assert!(r.alternatives.is_none());
        let out = &r.first.document;
        assert_eq!(out.id, doc.id);
        assert_eq!(out.paragraphs[0].lines[0].words[1..], doc.paragraphs[0].lines[0].words[1..]);
        assert_eq!(out.paragraphs[1].lines[1..], doc.paragraphs[1].lines[1..]);
        assert_eq!(out.paragraphs[2].syllables(), 12);
    }
}

#[tokio::test]
async fn infill_samples_are_alternatives_with_consecutive_seeds() {
    let app = router(AppState::with_models([LoadedModel::transformer("tiny", tiny_model(&vocab(), 512), vocab())]));
    let doc = docs().remove(0);
    let mut req = infill_request(&doc);
    req["n_samples"] = json!(3);
    req["params"] = json!({ "max_tokens_per_segment": 6 });
    let (s, v) = post(&app, "/v1/infill", req.clone()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: InfillResponse = serde_json::from_value(v.clone()).unwrap();
    let alts = r.alternatives.clone().unwrap();
    assert_eq!(alts.iter().map(|a| a.seed).collect::<Vec<_>>(), [5, 6, 7]);
    assert_eq!(alts[0], r.first);
    let (_, again) = post(&app, "/v1/infill", req.clone()).await;
    assert_eq!(v, again);
    req["n_samples"] = json!(1);
    let (_, single) = post(&app, "/v1/infill", req).await;
    let single: InfillResponse = serde_json::from_value(single).unwrap();
    assert_eq!(single.first, r.first);
}

#[tokio::test]
async fn infill_rejects_bad_masks() {
    let app = oracle_app();
    let doc = docs().remove(0);
    let mut req = infill_request(&doc);
    req["masks"] = json!([]);
    let (s, v) = post(&app, "/v1/infill", req.clone()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    for masks in [
        json!([{ "granularity": "paragraph", "paragraph": 40 }]),
        json!([{ "granularity": "word", "paragraph": 0, "line": 0, "words": { "start": 0, "end": 2 } }]),
        json!([{ "granularity": "line", "paragraph": 0, "line": 0 }, { "granularity": "paragraph", "paragraph": 0 }]),
        json!([{ "granularity": "sentence", "paragraph": 0 }]),
    ] {
        req["masks"] = masks.clone();
        let (s, _) = post(&app, "/v1/infill", req.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{masks}");
    }
    let mut req = infill_request(&doc);
    req["n_samples"] = json!(0);
    assert_eq!(post(&app, "/v1/infill", req).await.0, StatusCode::BAD_REQUEST);
    let mut req = infill_request(&doc);
    req["masks"] = json!([{ "granularity": "line", "paragraph": 0, "line": 0, "syllables": 300 }]);
    assert_eq!(post(&app, "/v1/infill", req).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn context_overflow_is_a_module_error() {
    let v = vocab();
    let app = router(AppState::with_models([LoadedModel::transformer("short", tiny_model(&v, 8), v)]));
    let (s, body) = post(&app, "/v1/generate", json!({ "plan": plan() })).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(body["error"]["kind"], "decode");
}

#[tokio::test]
async fn models_are_listed_and_loaded() {
    let app = oracle_app();
    let (s, b) = send(&app, "GET", "/v1/models", None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["models"][0]["name"], "oracle");
    assert_eq!(v["models"][0]["kind"], "oracle");
    assert_eq!(v["models"][0]["default"], true);

    let dir = tempfile::tempdir().unwrap();
    let vocab = vocab();
    let vocab_path = dir.path().join("vocab.json");
    vocab.save(&vocab_path).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    checkpoint::save(&ckpt, &tiny_model(&vocab, 512), &vocab.content_hash()).unwrap();
    let (s, v) = post(&app, "/v1/models/load", json!({ "name": "tiny", "checkpoint": ckpt, "vocab": vocab_path, "default": true })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let tiny = v["models"].as_array().unwrap().iter().find(|m| m["name"] == "tiny").unwrap().clone();
    assert_eq!(tiny["kind"], "transformer");
    assert_eq!(tiny["default"], true);
    assert_eq!(tiny["config"]["model_dim"], 16);

    let (s, v) = post(&app, "/v1/generate", json!({ "plan": plan(), "params": { "max_tokens_per_segment": 4 } })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["model"], "tiny");
    let (s, _) = post(&app, "/v1/models/load", json!({ "name": "x", "checkpoint": dir.path().join("nope"), "vocab": vocab_path })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn trace_stream_follows_a_session() {
    let app = oracle_app();
    let reader = {
        let app = app.clone();
        let req = Request::get("/v1/generate/stream?session=abc").body(Body::empty()).unwrap();
        let resp = app.oneshot(req).await.unwrap();
        assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
        tokio::spawn(async move { to_bytes(resp.into_body(), usize::MAX).await.unwrap() })
    };
    let (s, v) = post(&app, "/v1/generate", json!({ "plan": plan(), "layout": "back", "session": "abc" })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let live = String::from_utf8(reader.await.unwrap().to_vec()).unwrap();
    let events: Vec<TraceEvent> = live.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!events.is_empty());
    assert!(events.iter().enumerate().all(|(i, e)| e.step == i));
    let r: GenerateResponse = serde_json::from_value(v).unwrap();
    assert!(events.len() >= r.output.len());

    let (_, replay) = send(&app, "GET", "/v1/generate/stream?session=abc", None).await;
    assert_eq!(String::from_utf8(replay).unwrap(), live);
    let (s, _) = post(&app, "/v1/generate", json!({ "plan": plan(), "session": "abc" })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = send(&app, "GET", "/v1/generate/stream", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_requests_match_sequential_ones() {
    let v = vocab();
    let app = router(AppState::with_models([LoadedModel::transformer("tiny", tiny_model(&v, 512), v)]));
    let req = |seed: u64| json!({ "plan": plan(), "seed": seed, "params": { "max_tokens_per_segment": 5 } });
    let (a, b) = tokio::join!(post(&app, "/v1/generate", req(1)), post(&app, "/v1/generate", req(2)));
    assert_eq!(a, post(&app, "/v1/generate", req(1)).await);
    assert_eq!(b, post(&app, "/v1/generate", req(2)).await);
    assert_ne!(a.1["output"], b.1["output"]);
}

#[test]
fn schema_document_covers_every_route() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/openapi.json")).unwrap();
    let doc: Value = serde_json::from_str(&text).unwrap();
    let mut paths: Vec<(String, String)> = Vec::new();
    for (path, ops) in doc["paths"].as_object().unwrap() {
        for method in ops.as_object().unwrap().keys() {
            paths.push((method.clone(), path.clone()));
        }
    }
    paths.sort();
    let want = [
        ("get", "/v1/generate/stream"),
        ("get", "/v1/models"),
        ("post", "/v1/generate"),
        ("post", "/v1/infill"),
        ("post", "/v1/models/load"),
        ("post", "/v1/syllables"),
    ];
    assert_eq!(paths, want.map(|(m, p)| (m.to_string(), p.to_string())));
}
