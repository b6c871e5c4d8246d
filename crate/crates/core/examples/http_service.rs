//! Drives the HTTP API in process: register a producer, insert entries,
//! query, then post both decryption shares.
//!
//! `provreg serve` exposes the same router on a TCP socket.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use provreg::hashcore::{PerceptualHash, HASH_BITS};
use provreg::mpfhe::{
    encrypt_hash, encrypt_threshold, partial_decrypt, setup, QueryMode, THRESHOLD_WIDTH,
};
use provreg::registry::{ProducerKey, RegistryStore};
use provreg::service::{
    router, QueryRequest, QueryResponse, RequestId, Service, ShareExchangeMessage,
};
use rand::SeedableRng;
use serde_json::Value;
use tower::ServiceExt;

async fn post(app: &axum::Router, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
    let (_, keys) = setup(2, 2, 77)?;
    let pk = keys.public.clone();
    let store = Arc::new(RegistryStore::create(
        dir.path().join("registry.log"),
        pk.digest,
    )?);
    let svc = Arc::new(Service::new(
        store,
        pk.clone(),
        None,
        2,
        Duration::from_secs(600),
    )?);
    let app = router(svc);

    let producer = ProducerKey::generate("studio", "Studio", &mut rng);
    let (s, _) = post(
        &app,
        "/producers",
        serde_json::to_string(&producer.identity)?,
    )
    .await;
    println!("POST /producers -> {s}");

    let stored: Vec<PerceptualHash> = (0..200)
        .map(|_| PerceptualHash::random(HASH_BITS, &mut rng))
        .collect();
    for (i, h) in stored.iter().enumerate() {
        let entry = producer.sign_entry(encrypt_hash(&pk, h, &mut rng)?, i as u64);
        let (s, v) = post(&app, "/entries", serde_json::to_string(&entry)?).await;
        if i == 0 {
            println!("POST /entries -> {s} {v}");
        }
    }

    let mut forged = producer.sign_entry(encrypt_hash(&pk, &stored[0], &mut rng)?, 1);
    forged.created_at += 1;
    let (s, v) = post(&app, "/entries", serde_json::to_string(&forged)?).await;
    println!("POST /entries (altered timestamp) -> {s} {v}");

    let req = QueryRequest::new(
        RequestId::random(&mut rng),
        &encrypt_hash(&pk, &stored[150], &mut rng)?,
        &encrypt_threshold(&pk, 8, THRESHOLD_WIDTH, &mut rng)?,
        QueryMode::Or,
    );
    let (s, v) = post(&app, "/query", serde_json::to_string(&req)?).await;
    let resp: QueryResponse = serde_json::from_value(v)?;
    println!(
        "POST /query -> {s}, {} entries, {:.1} ms",
        resp.entries, resp.timing.full_ms
    );

    let ct = resp.result_ciphertext()?;
    let uri = format!("/decrypt/{}/shares", resp.request_id);
    for share in &keys.shares {
        let msg = ShareExchangeMessage::new(resp.request_id, &partial_decrypt(share, &ct)?)
            .with_claim(&resp.claim_token);
        let (s, v) = post(&app, &uri, serde_json::to_string(&msg)?).await;
        println!("POST {uri} (party {}) -> {s} {v}", share.party.index);
    }
    Ok(())
}
