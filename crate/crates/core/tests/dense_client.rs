mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use common::{closed_port, StubServer};
use serde_json::{json, Value};
use speller_core::catalog::CatalogDocument;
use speller_core::gateway::{DenseClient, RetrievalError, Retriever, RetrieverKind};
use speller_core::sparse::{build_index, Bm25Params};

fn sidecar() -> StubServer {
    let router = Router::new().route(
        "/search",
        post(|Json(req): Json<Value>| async move {
            let k = req["k"].as_u64().unwrap_or(0);
            if k < 1 {
                return (StatusCode::BAD_REQUEST, Json(json!({"error": "k must be >= 1"})));
            }
            assert!(req["query"].is_string());
            let items: Vec<Value> = [("turmeric soap bars", 0.91), ("himalaya soap bars", 0.73), ("bali soap bars", 0.52)]
                .iter()
                .map(|(t, s)| json!({"text": t, "score": s}))
                .collect();
            (StatusCode::OK, Json(json!({ "items": items })))
        }),
    );
    StubServer::start(router)
}

fn index() -> Arc<speller_core::sparse::InvertedIndex> {
    Arc::new(build_index(&[CatalogDocument::new(1, "cuisinart air fryer"), CatalogDocument::new(2, "air fryer")]).unwrap())
}

#[test]
fn dense_items_are_returned_in_rank_order() {
    let server = sidecar();
    let r = Retriever::new(Bm25Params::default()).with_dense(DenseClient::new(server.url(""), Duration::from_secs(2)));
    let ctx = r.retrieve(RetrieverKind::DenseRemote, "tumeric soap", 2).unwrap();
    assert_eq!(ctx.items, vec!["turmeric soap bars", "himalaya soap bars"]);
    assert_eq!(ctx.rendered, "turmeric soap bars,himalaya soap bars");
    assert_eq!(ctx.retriever, RetrieverKind::DenseRemote);
}

#[test]
fn client_truncates_and_reports_scores() {
    let server = sidecar();
    let items = DenseClient::new(server.url("/"), Duration::from_secs(2)).search("soap", 10).unwrap();
    assert_eq!(items.len(), 3);
    assert!(items.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn absent_sidecar_is_unreachable() {
    let client = DenseClient::new(format!("http://127.0.0.1:{}", closed_port()), Duration::from_millis(500));
    let r = Retriever::new(Bm25Params::default()).with_dense(client);
    assert!(matches!(r.retrieve(RetrieverKind::DenseRemote, "x", 3), Err(RetrievalError::SidecarUnreachable(_))));
}

#[test]
fn absent_sidecar_falls_back_to_fuzzy_bm25() {
    let client = DenseClient::new(format!("http://127.0.0.1:{}", closed_port()), Duration::from_millis(500));
    let r = Retriever::new(Bm25Params::default()).with_index(index()).with_dense(client).with_dense_fallback(true);
    let ctx = r.retrieve(RetrieverKind::DenseRemote, "air fryer cusinart", 4).unwrap();
    assert_eq!(ctx.retriever, RetrieverKind::FuzzyBm25);
    assert_eq!(ctx.items[0], "cuisinart air fryer");
}

#[test]
fn slow_sidecar_times_out_fast() {
    let router = Router::new().route(
        "/search",
        post(|| async {
            tokio::time::sleep(Duration::from_millis(1500)).await;
            Json(json!({"items": []}))
        }),
    );
    let server = StubServer::start(router);
    let r = Retriever::new(Bm25Params::default())
        .with_index(index())
        .with_dense(DenseClient::new(server.url(""), Duration::from_millis(200)))
        .with_dense_fallback(true);
    let start = std::time::Instant::now();
    let ctx = r.retrieve(RetrieverKind::DenseRemote, "air fryer", 2).unwrap();
    assert!(start.elapsed() < Duration::from_millis(1200));
    assert_eq!(ctx.retriever, RetrieverKind::FuzzyBm25);
}

#[test]
fn status_and_protocol_errors() {
    let router = Router::new()
        .route("/a/search", post(|| async { (StatusCode::CONFLICT, Json(json!({"error": "not indexed"}))) }))
        .route("/b/search", post(|| async { Json(json!({"hits": []})) }));
    let server = StubServer::start(router);
    let conflict = DenseClient::new(server.url("/a"), Duration::from_secs(1)).search("x", 1);
    assert!(matches!(conflict, Err(RetrievalError::SidecarStatus(409))));
    let garbled = DenseClient::new(server.url("/b"), Duration::from_secs(1)).search("x", 1);
    assert!(matches!(garbled, Err(RetrievalError::SidecarProtocol(_))));

    // Status errors do not trigger the fallback.
    let r = Retriever::new(Bm25Params::default())
        .with_index(index())
        .with_dense(DenseClient::new(server.url("/a"), Duration::from_secs(1)))
        .with_dense_fallback(true);
    assert!(matches!(r.retrieve(RetrieverKind::DenseRemote, "x", 1), Err(RetrievalError::SidecarStatus(409))));
}
