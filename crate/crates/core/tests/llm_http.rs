//! HTTP backend behaviour against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use emoroute::reasoning::{query_llm, ChatBackend, HttpChatBackend, LlmEndpointConfig, LlmError, LlmRequest};

enum Reply {
    Status(u16, String),
    Hang,
}

struct Script {
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

/// Serves `replies` in order, one per connection, then hangs.
fn serve(replies: Vec<Reply>) -> Script {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        let mut replies = replies.into_iter();
        let mut held = Vec::new();
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            log.lock().unwrap().push(read_request(&mut stream));
            match replies.next().unwrap_or(Reply::Hang) {
                Reply::Status(code, body) => {
                    let resp = format!(
                        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                }
                Reply::Hang => held.push(stream),
            }
        }
    });
    Script { url, requests }
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn config(url: &str) -> LlmEndpointConfig {
    LlmEndpointConfig {
        base_url: url.to_string(),
        model_name: "test-model".into(),
        api_key_env: Some("EMOROUTE_TEST_KEY_HTTP".into()),
        timeout_s: 2.0,
        max_retries: 3,
        backoff_ms: 5,
        ..LlmEndpointConfig::default()
    }
}

#[test]
fn response_text_passes_through() {
    std::env::set_var("EMOROUTE_TEST_KEY_HTTP", "sekrit");
    let s = serve(vec![Reply::Status(200, completion("LABEL: panic"))]);
    let reply = query_llm("describe this", &config(&s.url)).unwrap();
    assert_eq!(reply.text, "LABEL: panic");
    assert_eq!(reply.attempts, 1);
    let reqs = s.requests.lock().unwrap();
    assert!(reqs[0].starts_with("POST /chat/completions"));
    assert!(reqs[0].to_ascii_lowercase().contains("authorization: bearer sekrit"));
    assert!(reqs[0].contains("\"temperature\":0.0"));
    assert!(reqs[0].contains("describe this"));
}

#[test]
fn server_errors_are_retried() {
    let s = serve(vec![
        Reply::Status(500, "boom".into()),
        Reply::Status(500, "boom".into()),
        Reply::Status(200, completion("LABEL: calm")),
    ]);
    let backend = HttpChatBackend::new(&config(&s.url)).unwrap();
    let reply = backend.complete(&LlmRequest::new("s1", "p")).unwrap();
    assert_eq!(reply.text, "LABEL: calm");
    assert_eq!(reply.attempts, 3);
    assert_eq!(s.requests.lock().unwrap().len(), 3);
}

#[test]
fn hanging_server_times_out_without_retry() {
    let s = serve(vec![]);
    let cfg = LlmEndpointConfig {
        timeout_s: 0.2,
        ..config(&s.url)
    };
    let start = Instant::now();
    let err = HttpChatBackend::new(&cfg)
        .unwrap()
        .complete(&LlmRequest::new("s2", "p"))
        .unwrap_err();
    assert_eq!(err, LlmError::Timeout { sample_id: "s2".into() });
    assert!(start.elapsed() < Duration::from_secs(2));
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn rate_limit_exhausts_retries() {
    let s = serve((0..4).map(|_| Reply::Status(429, "slow down".into())).collect());
    let cfg = LlmEndpointConfig {
        max_retries: 2,
        ..config(&s.url)
    };
    let err = HttpChatBackend::new(&cfg)
        .unwrap()
        .complete(&LlmRequest::new("s3", "p"))
        .unwrap_err();
    assert_eq!(err.reason_code(), "rate_limited");
    assert_eq!(s.requests.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_fail_at_once() {
    let s = serve(vec![Reply::Status(401, "no key".into())]);
    let err = HttpChatBackend::new(&config(&s.url))
        .unwrap()
        .complete(&LlmRequest::new("s4", "p"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Http { status: 401, .. }));
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_a_bad_response() {
    let s = serve(vec![Reply::Status(200, "{\"choices\": []}".into())]);
    let err = HttpChatBackend::new(&config(&s.url))
        .unwrap()
        .complete(&LlmRequest::new("s5", "p"))
        .unwrap_err();
    assert_eq!(err.reason_code(), "bad_response");
}
