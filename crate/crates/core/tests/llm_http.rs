//! HTTP client behavior against a loopback stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use scengen_core::llmio::{ChatClient, ChatMessage, ChatRequest, ClientConfig, HttpClient, LlmError};

#[derive(Clone)]
enum Reply {
    Status(u16, &'static str),
    Silent,
}

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut head = String::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap_or(0);
        }
        head.push_str(&line);
        if line == "\r\n" {
            break;
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    head + &String::from_utf8_lossy(&body)
}

/// Serves the scripted replies in order, one per connection.
fn stub(replies: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&requests);
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            seen.lock().unwrap().push(read_request(&mut stream));
            match reply {
                Reply::Status(code, body) => {
                    let text = format!(
                        "HTTP/1.1 {code} Scripted\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(text.as_bytes());
                }
                Reply::Silent => thread::sleep(Duration::from_millis(600)),
            }
        }
    });
    Stub { url, requests }
}

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;

fn config(url: &str, key_env: &str) -> ClientConfig {
    std::env::set_var(key_env, "test-key");
    ClientConfig {
        endpoint_url: url.to_string(),
        model: "stub-model".into(),
        api_key_env_name: key_env.into(),
        timeout: Duration::from_millis(300),
        max_retries: 2,
        max_inflight: 2,
        backoff_base: Duration::from_millis(5),
    }
}

fn request() -> ChatRequest {
    ChatRequest::new("stub-model", vec![ChatMessage::system("be brief"), ChatMessage::user("hi")])
}

#[test]
fn throttling_is_retried_until_success() {
    let s = stub(vec![Reply::Status(429, "{}"), Reply::Status(503, "{}"), Reply::Status(200, OK_BODY)]);
    let client = HttpClient::new(config(&s.url, "SCENGEN_TEST_KEY_RETRY")).unwrap();
    let reply = client.complete(&request()).unwrap();
    assert_eq!(reply.content, "hello");
    let seen = s.requests.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen[0].to_ascii_lowercase().contains("authorization: bearer test-key"));
    let body: serde_json::Value = serde_json::from_str(seen[0].split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][0]["role"], "system");
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(vec![Reply::Status(400, r#"{"error":"bad"}"#), Reply::Status(200, OK_BODY)]);
    let client = HttpClient::new(config(&s.url, "SCENGEN_TEST_KEY_400")).unwrap();
    match client.complete(&request()) {
        Err(LlmError::Status { status: 400, body }) => assert!(body.contains("bad")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let s = stub(vec![Reply::Status(200, "{\"choices\": ")]);
    let client = HttpClient::new(config(&s.url, "SCENGEN_TEST_KEY_MALFORMED")).unwrap();
    let err = client.complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Protocol(_)), "{err:?}");
    assert!(err.is_transport());
}

#[test]
fn persistent_server_errors_exhaust_retries() {
    let s = stub(vec![Reply::Status(500, "{}"); 3]);
    let client = HttpClient::new(config(&s.url, "SCENGEN_TEST_KEY_500")).unwrap();
    match client.complete(&request()) {
        Err(LlmError::RetriesExhausted { attempts: 3, last }) => assert!(last.contains("500")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn silence_times_out() {
    let s = stub(vec![Reply::Silent; 3]);
    let mut cfg = config(&s.url, "SCENGEN_TEST_KEY_TIMEOUT");
    cfg.max_retries = 1;
    let client = HttpClient::new(cfg).unwrap();
    match client.complete(&request()) {
        Err(LlmError::Timeout { attempts: 2 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_key_fails_before_any_connection() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let cfg = ClientConfig {
        endpoint_url: url,
        api_key_env_name: "SCENGEN_TEST_KEY_NEVER_SET".into(),
        ..ClientConfig::default()
    };
    match HttpClient::new(cfg) {
        Err(LlmError::MissingApiKey(name)) => assert_eq!(name, "SCENGEN_TEST_KEY_NEVER_SET"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    assert!(listener.accept().is_err(), "no connection should have been attempted");
}

#[test]
fn requests_without_a_system_message_are_rejected_locally() {
    let s = stub(vec![]);
    let client = HttpClient::new(config(&s.url, "SCENGEN_TEST_KEY_INVALID")).unwrap();
    let bad = ChatRequest::new("stub-model", vec![ChatMessage::user("hi")]);
    assert!(matches!(client.complete(&bad), Err(LlmError::InvalidRequest(_))));
    assert!(s.requests.lock().unwrap().is_empty());
}
