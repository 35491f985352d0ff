#![allow(dead_code)]

use psykit_core::features::fit_tfidf;
use psykit_core::models::{load_regressor_bundle, save_regressor_bundle, Regressor, RegressorBundle, RegressorConfig};
use psykit_core::persona::{LmVocab, TinyLm, TinyLmConfig};
use psykit_services::{schema_for, spawn, Endpoint, EndpointKind, Stub};
use serde_json::Value;
use std::net::SocketAddr;

pub fn tiny_bundle(dir: &std::path::Path) -> RegressorBundle {
    let docs = ["happy sunny day", "sad rainy night", "calm quiet evening", "happy calm morning"];
    let tfidf = fit_tfidf(&docs, 100, 1).unwrap();
    let cfg = RegressorConfig {
        hidden: 4,
        seed: 3,
        ..Default::default()
    };
    let mut model = Regressor::new(tfidf.dim(), 2, cfg).unwrap();
    let y = [0.1, 0.9, 0.2, 0.8, 0.5, 0.5, 0.7, 0.3];
    model.prepare(tfidf.transform_dense(&docs), &y).unwrap();
    let names = vec!["valence".to_string(), "arousal".to_string()];
    save_regressor_bundle(dir, "emotion", &model, &tfidf, &names, false).unwrap();
    load_regressor_bundle(dir).unwrap()
}

pub fn tiny_lm() -> TinyLm {
    let texts = ["hello there friend", "i like quiet evenings", "parties give me energy"];
    let vocab = LmVocab::build(&texts, 100).unwrap();
    let cfg = TinyLmConfig {
        embed_dim: 8,
        hidden: 8,
        context: 4,
        ..Default::default()
    };
    TinyLm::new(vocab, cfg).unwrap()
}

pub async fn start(router: axum::Router) -> SocketAddr {
    spawn(router, "127.0.0.1:0").await.unwrap().0
}

pub fn url(addr: SocketAddr) -> String {
    format!("http://{addr}")
}

pub async fn stub_predictor(name: &str, delay_ms: u64) -> Endpoint {
    let addr = start(psykit_services::stub_predictor_router(Stub::new(name, delay_ms))).await;
    Endpoint::new(name, url(addr), EndpointKind::Predictor)
}

/// An address nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    url(addr)
}

pub fn assert_valid(def: &str, instance: &Value) {
    let schema = schema_for(def);
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{def} rejected {instance}: {errors:?}");
}

pub fn is_valid(def: &str, instance: &Value) -> bool {
    jsonschema::validator_for(&schema_for(def)).unwrap().is_valid(instance)
}
