//! Wire-protocol round trips against the scripted mock completions server.
//!
//! The golden transcript in `fixtures/golden/completions_transcript.json` is
//! the reference for the echo-scoring exchange; the other tests pin the
//! error decision table documented in `docs/wire-protocol.md`.

use std::time::Duration;

use crosscheck::backend::{
    build_backend, generate_candidate, health_check, ErrorCategory, HealthStatus, ModelEndpoint,
};
use crosscheck::rng::SplitMix64;
use crosscheck_mock::{MockResponse, MockServer, RecordedRequest};
use serde_json::{json, Value};

fn endpoint(server: &MockServer) -> ModelEndpoint {
    let mut ep = ModelEndpoint::remote("mock-0", server.base_url(), "mock-model");
    ep.timeout_ms = 2_000;
    ep.transport_retry = false;
    ep
}

fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden/completions_transcript.json")
}

#[test]
fn golden_transcript_round_trip() {
    let transcript: Value = serde_json::from_slice(&std::fs::read(fixture_path()).unwrap()).unwrap();
    let context = transcript["context"].as_str().unwrap().to_string();
    let text = transcript["text"].as_str().unwrap().to_string();
    let golden_request = transcript["request"].clone();
    let golden_response = transcript["response"].clone();

    let server = MockServer::start(move |req: &RecordedRequest| {
        assert_eq!(req.method, "POST");
        assert_eq!(req.path, "/v1/completions");
        assert_eq!(req.json().unwrap(), golden_request, "request body drifted from the golden transcript");
        MockResponse::json_value(200, &golden_response)
    })
    .unwrap();

    let backend = build_backend(&endpoint(&server)).unwrap();
    let scored = backend.score(text.as_bytes(), Some(context.as_bytes())).unwrap();

    let expected_values: Vec<f64> = transcript["expected"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let expected_tokens: Vec<&str> = transcript["expected"]["token_texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let expected_count = transcript["expected"]["token_count"].as_u64().unwrap() as usize;

    // Exact equality: the transcript uses representable binary fractions.
    assert_eq!(scored.logprobs().values(), expected_values.as_slice());
    assert_eq!(scored.logprobs().token_count(), expected_count);
    assert_eq!(
        scored.token_texts().unwrap().iter().map(String::as_str).collect::<Vec<_>>(),
        expected_tokens
    );
    assert_eq!(scored.scorer_id(), "mock-0");
    assert_eq!(server.request_count(), 1);
}

#[test]
fn leading_null_is_dropped_when_context_is_empty() {
    let response = json!({
        "choices": [{
            "text": "",
            "logprobs": {
                "tokens": ["ab", "cd", "e"],
                "token_logprobs": [null, -1.5, -2.5],
                "text_offset": [0, 2, 4]
            }
        }]
    });
    let server = MockServer::start(move |_| MockResponse::json_value(200, &response)).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    let scored = backend.score(b"abcde", None).unwrap();
    assert_eq!(scored.logprobs().values(), &[-1.5, -2.5]);
    assert_eq!(scored.logprobs().token_count(), 2);
    assert_eq!(scored.token_texts().unwrap(), &["cd".to_string(), "e".to_string()]);
}

/// One deterministic tokenization shared by the mock handler and the test's
/// expectation: chunk lengths are seeded by the prompt bytes.
fn tokenize(prompt: &str) -> Vec<(usize, String)> {
    let bytes = prompt.as_bytes();
    let seed = bytes.iter().fold(0u64, |acc, &b| acc.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = SplitMix64::new(seed);
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let len = (1 + rng.below(4) as usize).min(bytes.len() - pos);
        tokens.push((pos, prompt[pos..pos + len].to_string()));
        pos += len;
    }
    tokens
}

fn echo_response_for(req: &RecordedRequest) -> MockResponse {
    let body = req.json().unwrap();
    let prompt = body["prompt"].as_str().unwrap();
    let tokens = tokenize(prompt);
    let mut rng = SplitMix64::new(prompt.len() as u64);
    let token_logprobs: Vec<Value> = tokens
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i == 0 {
                Value::Null
            } else {
                json!(-(0.25 + rng.below(16) as f64 * 0.125))
            }
        })
        .collect();
    let response = json!({
        "choices": [{
            "text": "",
            "logprobs": {
                "tokens": tokens.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
                "token_logprobs": token_logprobs,
                "text_offset": tokens.iter().map(|(o, _)| *o).collect::<Vec<_>>()
            }
        }]
    });
    MockResponse::json_value(200, &response)
}

#[test]
fn offset_isolation_over_randomized_tokenizations() {
    let server = MockServer::start(echo_response_for).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    let mut rng = SplitMix64::new(0x0FF5E7);
    let alphabet: Vec<u8> = (b' '..=b'z').collect();
    for _ in 0..60 {
        let ctx_len = rng.below(12) as usize;
        let text_len = 1 + rng.below(30) as usize;
        let context: String = (0..ctx_len).map(|_| alphabet[rng.below(alphabet.len() as u64) as usize] as char).collect();
        let text: String = (0..text_len).map(|_| alphabet[rng.below(alphabet.len() as u64) as usize] as char).collect();

        let prompt = format!("{context}{text}");
        let tokens = tokenize(&prompt);
        let expected: usize = tokens
            .iter()
            .enumerate()
            .filter(|(i, (off, _))| *off >= context.len() && !(*i == 0 && context.is_empty()))
            .count();

        let result = backend.score(text.as_bytes(), if context.is_empty() { None } else { Some(context.as_bytes()) });
        if expected == 0 {
            let err = result.unwrap_err();
            assert_eq!(err.category, ErrorCategory::Protocol, "{err}");
        } else {
            let scored = result.unwrap();
            assert_eq!(
                scored.logprobs().token_count(),
                expected,
                "context {context:?} text {text:?}: wrong suffix isolation"
            );
        }
    }
}

#[test]
fn scoring_is_repeatable_against_a_deterministic_server() {
    let server = MockServer::start(echo_response_for).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    let a = backend.score(b"let x = 1;", Some(b"// context")).unwrap();
    let b = backend.score(b"let x = 1;", Some(b"// context")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generation_round_trip_and_refusal() {
    let server = MockServer::start_queue(vec![
        MockResponse::json_value(200, &json!({"choices": [{"text": "fn add(a: i32) -> i32 { a }"}]})),
        MockResponse::json_value(200, &json!({"choices": []})),
        MockResponse::json_value(200, &json!({"choices": [{"text": ""}]})),
    ])
    .unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();

    let candidate = generate_candidate(backend.as_ref(), 0, b"write add", 64, 0.0, 7).unwrap();
    assert_eq!(candidate.text(), b"fn add(a: i32) -> i32 { a }");
    assert_eq!(candidate.producer_id(), "mock-0");

    let err = generate_candidate(backend.as_ref(), 0, b"q", 64, 0.0, 7).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Refusal);

    let err = generate_candidate(backend.as_ref(), 0, b"q", 64, 0.0, 7).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Refusal);

    // Generation requests carry the seed and omit echo/logprobs.
    let body = server.requests()[0].json().unwrap();
    assert_eq!(body["seed"], json!(7));
    assert_eq!(body["max_tokens"], json!(64));
    assert!(body.get("echo").is_none());
}

#[test]
fn http_status_maps_to_protocol() {
    let server = MockServer::start_queue(vec![MockResponse::status_only(500)]).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    let err = backend.score(b"x", None).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Protocol);
    assert!(err.detail.contains("500"), "{}", err.detail);
}

#[test]
fn malformed_bodies_map_to_protocol() {
    let cases = vec![
        MockResponse::json_text(200, "this is not json"),
        MockResponse::json_value(200, &json!({"choices": [{"text": ""}]})), // no logprobs block
        MockResponse::json_value(
            200,
            &json!({"choices": [{"text": "", "logprobs": {
                "tokens": ["a", "b"], "token_logprobs": [null, null], "text_offset": [0, 1]
            }}]}),
        ), // null beyond the first token
        MockResponse::json_value(
            200,
            &json!({"choices": [{"text": "", "logprobs": {
                "tokens": ["a", "b"], "token_logprobs": [null, 0.5], "text_offset": [0, 1]
            }}]}),
        ), // positive logprob
        MockResponse::json_value(
            200,
            &json!({"choices": [{"text": "", "logprobs": {
                "tokens": ["a"], "token_logprobs": [null, -1.0], "text_offset": [0, 1]
            }}]}),
        ), // mismatched array lengths
    ];
    let server = MockServer::start_queue(cases).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    for _ in 0..5 {
        let err = backend.score(b"ab", None).unwrap_err();
        assert_eq!(err.category, ErrorCategory::Protocol, "{err}");
    }
}

#[test]
fn timeouts_map_to_timeout() {
    let server = MockServer::start(|_| {
        MockResponse::json_value(200, &json!({"choices": []})).with_delay(Duration::from_millis(800))
    })
    .unwrap();
    let mut ep = endpoint(&server);
    ep.timeout_ms = 150;
    let backend = build_backend(&ep).unwrap();
    let err = backend.score(b"x", None).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Timeout);
}

#[test]
fn unreachable_endpoint_maps_to_transport() {
    // Bind a port and drop the listener so nothing is listening there.
    let freed = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = freed.local_addr().unwrap();
    drop(freed);
    let mut ep = ModelEndpoint::remote("gone", format!("http://{addr}"), "m");
    ep.transport_retry = false;
    ep.timeout_ms = 1_000;
    let backend = build_backend(&ep).unwrap();
    let err = backend.score(b"x", None).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Transport);
}

#[test]
fn dropped_connection_maps_to_transport_and_retries_once() {
    // Without retry: one request, transport error.
    let server = MockServer::start_queue(vec![MockResponse::drop_connection()]).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    let err = backend.score(b"x", None).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Transport);
    assert_eq!(server.request_count(), 1);

    // With retry: the second attempt succeeds and exactly two requests land.
    let server = MockServer::start_queue(vec![
        MockResponse::drop_connection(),
        MockResponse::json_value(
            200,
            &json!({"choices": [{"text": "", "logprobs": {
                "tokens": ["x"], "token_logprobs": [-1.0], "text_offset": [0]
            }}]}),
        ),
    ])
    .unwrap();
    let mut ep = endpoint(&server);
    ep.transport_retry = true;
    let backend = build_backend(&ep).unwrap();
    let scored = backend.score(b"x", None).unwrap();
    assert_eq!(scored.logprobs().values(), &[-1.0]);
    assert_eq!(server.request_count(), 2);

    // Timeouts are never retried.
    let server = MockServer::start(|_| {
        MockResponse::json_value(200, &json!({"choices": []})).with_delay(Duration::from_millis(600))
    })
    .unwrap();
    let mut ep = endpoint(&server);
    ep.transport_retry = true;
    ep.timeout_ms = 100;
    let backend = build_backend(&ep).unwrap();
    assert_eq!(backend.score(b"x", None).unwrap_err().category, ErrorCategory::Timeout);
    assert_eq!(server.request_count(), 1);
}

#[test]
fn non_utf8_text_cannot_cross_the_wire() {
    let server = MockServer::start_queue(vec![]).unwrap();
    let backend = build_backend(&endpoint(&server)).unwrap();
    let err = backend.score(&[0xFF, 0xFE], None).unwrap_err();
    assert_eq!(err.category, ErrorCategory::Protocol);
    assert_eq!(server.request_count(), 0, "nothing should be sent");
}

#[test]
fn health_check_statuses() {
    let server = MockServer::start(|req| {
        assert_eq!(req.method, "GET");
        assert_eq!(req.path, "/v1/models");
        MockResponse::json_text(200, r#"{"data": []}"#)
    })
    .unwrap();
    assert!(health_check(&endpoint(&server)).is_ok());

    let failing = MockServer::start(|_| MockResponse::status_only(500)).unwrap();
    match health_check(&endpoint(&failing)) {
        HealthStatus::Failing(e) => assert_eq!(e.category, ErrorCategory::Protocol),
        HealthStatus::Ok => panic!("expected failing"),
    }
}

#[test]
fn bearer_token_is_read_from_the_environment() {
    let server = MockServer::start(|req| {
        assert_eq!(req.header("authorization"), Some("Bearer wire-test-secret"));
        MockResponse::json_value(
            200,
            &json!({"choices": [{"text": "", "logprobs": {
                "tokens": ["x"], "token_logprobs": [-1.0], "text_offset": [0]
            }}]}),
        )
    })
    .unwrap();
    std::env::set_var("CROSSCHECK_WIRE_TEST_TOKEN", "wire-test-secret");
    let mut ep = endpoint(&server);
    if let crosscheck::backend::EndpointKind::Remote { auth_token_env, .. } = &mut ep.kind {
        *auth_token_env = Some("CROSSCHECK_WIRE_TEST_TOKEN".into());
    }
    let backend = build_backend(&ep).unwrap();
    assert!(backend.score(b"x", None).is_ok());

    let mut missing = endpoint(&server);
    missing.id = "mock-1".into();
    if let crosscheck::backend::EndpointKind::Remote { auth_token_env, .. } = &mut missing.kind {
        *auth_token_env = Some("CROSSCHECK_WIRE_TEST_TOKEN_MISSING".into());
    }
    let err = match build_backend(&missing) {
        Err(e) => e,
        Ok(_) => panic!("expected a missing-variable error"),
    };
    assert_eq!(err.category, ErrorCategory::Protocol);
    assert!(err.detail.contains("CROSSCHECK_WIRE_TEST_TOKEN_MISSING"));
}
