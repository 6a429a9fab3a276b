//! Remote annotator against a local stub service.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use prefstage::preference::annotate;
use prefstage::{Annotator, Error, RemoteAnnotator, RemoteConfig, Space};
use serde_json::Value;

/// Serves `/compare`; `respond` maps (request number, body) to status and body.
fn stub<F>(respond: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(usize, &Value) -> (u16, String) + Send + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body).unwrap();
            let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
            let (status, text) = if request.url() == "/compare" {
                respond(n, &parsed)
            } else {
                (404, String::new())
            };
            let _ = request.respond(tiny_http::Response::from_string(text).with_status_code(status));
        }
    });
    (addr, hits)
}

fn space() -> Arc<Space> {
    Arc::new(Space::build(3, 4, 0).unwrap())
}

fn config(endpoint: String) -> RemoteConfig {
    RemoteConfig {
        backoff_ms: 1,
        timeout_ms: 2_000,
        ..RemoteConfig::new(endpoint)
    }
}

#[test]
fn in_range_probability_is_returned() {
    let (addr, _) = stub(|_, _| (200, r#"{"prob_a_preferred": 0.8}"#.into()));
    let ann = RemoteAnnotator::new(space(), config(addr)).unwrap();
    assert_eq!(annotate(&ann, "x0", "y0", "y1").unwrap(), 0.8);
}

#[test]
fn out_of_range_probability_is_a_protocol_error() {
    let (addr, hits) = stub(|_, _| (200, r#"{"prob_a_preferred": 1.3}"#.into()));
    let ann = RemoteAnnotator::new(space(), config(addr)).unwrap();
    assert!(matches!(annotate(&ann, "x0", "y0", "y1"), Err(Error::Protocol(_))));
    assert_eq!(hits.load(Ordering::SeqCst), 1, "protocol errors are not retried");
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (addr, _) = stub(|_, _| (200, r#"{"p": 0.3}"#.into()));
    let ann = RemoteAnnotator::new(space(), config(addr)).unwrap();
    assert!(matches!(annotate(&ann, "x0", "y0", "y1"), Err(Error::Protocol(_))));
}

#[test]
fn request_carries_space_labels() {
    let s = space();
    let expected = (
        s.prompt_text(1).to_owned(),
        s.response_text(1, 2).to_owned(),
        s.response_text(1, 0).to_owned(),
    );
    let (addr, _) = stub(move |_, body| {
        let ok = body["prompt"] == expected.0 && body["candidate_a"] == expected.1 && body["candidate_b"] == expected.2;
        (200, format!(r#"{{"prob_a_preferred": {}}}"#, if ok { 0.25 } else { 0.0 }))
    });
    let ann = RemoteAnnotator::new(s, config(addr)).unwrap();
    assert_eq!(ann.annotate_at(1, 2, 0).unwrap(), 0.25);
}

#[test]
fn server_errors_are_retried() {
    let (addr, hits) = stub(|n, _| {
        if n < 2 {
            (503, String::new())
        } else {
            (200, r#"{"prob_a_preferred": 0.6}"#.into())
        }
    });
    let ann = RemoteAnnotator::new(space(), config(addr)).unwrap();
    assert_eq!(annotate(&ann, "x0", "y0", "y1").unwrap(), 0.6);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn exhausted_retries_name_the_pair() {
    let (addr, hits) = stub(|_, _| (500, String::new()));
    let ann = RemoteAnnotator::new(space(), config(addr)).unwrap();
    match annotate(&ann, "x2", "y3", "y1") {
        Err(Error::Annotation { prompt, a, b, .. }) => assert_eq!((prompt.as_str(), a.as_str(), b.as_str()), ("x2", "y3", "y1")),
        other => panic!("expected annotation error, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (addr, hits) = stub(|_, _| (400, String::new()));
    let ann = RemoteAnnotator::new(space(), config(addr)).unwrap();
    assert!(matches!(annotate(&ann, "x0", "y0", "y1"), Err(Error::Annotation { .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn batch_results_follow_query_order() {
    let s = space();
    let texts: Vec<String> = (0..4).map(|r| s.response_text(0, r).to_owned()).collect();
    let (addr, _) = stub(move |_, body| {
        let a = texts.iter().position(|t| body["candidate_a"] == *t).unwrap();
        (200, format!(r#"{{"prob_a_preferred": {}}}"#, a as f64 / 10.0))
    });
    let ann = RemoteAnnotator::new(s, config(addr)).unwrap();
    let queries: Vec<_> = (0..16).map(|i| (0, i % 4, (i + 1) % 4)).collect();
    let probs = ann.annotate_batch(&queries).unwrap();
    let expected: Vec<f64> = (0..16).map(|i| (i % 4) as f64 / 10.0).collect();
    assert_eq!(probs, expected);
}
