use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use deckagent_core::llm::{HttpConfig, Part, RetryPolicy};
use deckagent_core::{Backend, BackendError, ChatMessage, ChatRequest, HttpBackend};
use serde_json::{json, Value};

struct Captured {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves the queued `(status, body)` responses in order, one per connection.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                auth,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, seen)
}

fn backend(base: &str) -> HttpBackend {
    let mut cfg = HttpConfig::new(base, "chat-model");
    cfg.api_key = Some("secret".into());
    cfg.embed_model = "embed-model".into();
    cfg.retry = RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(5),
        jitter: 0.0,
    };
    cfg.timeout = Duration::from_secs(10);
    HttpBackend::new(cfg).unwrap()
}

fn ok_chat(text: &str) -> (u16, String) {
    (
        200,
        json!({"choices": [{"message": {"content": text}, "finish_reason": "stop"}],
               "usage": {"prompt_tokens": 7, "completion_tokens": 2}})
        .to_string(),
    )
}

#[test]
fn chat_round_trip_with_image() {
    let (base, seen) = serve(vec![ok_chat("hello")]);
    let req = ChatRequest::new(vec![
        ChatMessage::system("be brief"),
        ChatMessage::user(vec![Part::text("look"), Part::png(vec![1, 2, 3])]),
    ]);
    let out = backend(&base).complete(&req).unwrap();
    assert_eq!(out.text, "hello");
    assert_eq!(out.usage.prompt_tokens, 7);
    assert!(!out.truncated);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(seen[0].body["model"], "chat-model");
    assert_eq!(seen[0].body["temperature"], 0.0);
    assert_eq!(
        seen[0].body["messages"][1]["content"][1]["image_url"]["url"],
        "data:image/png;base64,AQID"
    );
}

#[test]
fn server_errors_are_retried() {
    let (base, seen) = serve(vec![(500, "{}".into()), (503, "{}".into()), ok_chat("third time")]);
    let out = backend(&base)
        .complete(&ChatRequest::new(vec![ChatMessage::user_text("q")]))
        .unwrap();
    assert_eq!(out.text, "third time");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded() {
    let (base, seen) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into()), (500, "d".into())]);
    let err = backend(&base)
        .complete(&ChatRequest::new(vec![ChatMessage::user_text("q")]))
        .unwrap_err();
    assert_eq!(
        err,
        BackendError::Provider {
            status: Some(500),
            body: "d".into()
        }
    );
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn auth_failures_are_not_retried() {
    let (base, seen) = serve(vec![(401, "bad key".into()), ok_chat("never")]);
    let err = backend(&base)
        .complete(&ChatRequest::new(vec![ChatMessage::user_text("q")]))
        .unwrap_err();
    assert!(matches!(err, BackendError::Auth { status: 401, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn truncation_is_flagged() {
    let body = json!({"choices": [{"message": {"content": "cut"}, "finish_reason": "length"}]}).to_string();
    let (base, _) = serve(vec![(200, body)]);
    let out = backend(&base)
        .complete(&ChatRequest::new(vec![ChatMessage::user_text("q")]))
        .unwrap();
    assert!(out.truncated);
}

#[test]
fn embeddings_are_reordered_by_index() {
    let body = json!({"data": [
        {"index": 1, "embedding": [0.0, 1.0]},
        {"index": 0, "embedding": [1.0, 0.0]},
    ]})
    .to_string();
    let (base, seen) = serve(vec![(200, body)]);
    let out = backend(&base).embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(out[0].values, vec![1.0, 0.0]);
    assert_eq!(out[1].values, vec![0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["model"], "embed-model");
}

#[test]
fn embedding_count_mismatch_is_an_error() {
    let body = json!({"data": [{"index": 0, "embedding": [1.0]}]}).to_string();
    let (base, _) = serve(vec![(200, body)]);
    let err = backend(&base).embed(&["a".into(), "b".into()]).unwrap_err();
    assert!(matches!(err, BackendError::Provider { .. }));
}

#[test]
fn blank_embedding_input_is_rejected_locally() {
    let b = backend("http://127.0.0.1:9/v1");
    assert_eq!(b.embed(&["  ".into()]).unwrap_err(), BackendError::EmptyText);
}
