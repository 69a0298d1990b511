use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use hazardpipe::HttpNarrative;
use hazardpipe_core::domain::{GeoPoint, HazardClass, ReportId};
use hazardpipe_core::report::{narrate_with_timeout, NarrativeBackend, NarrativeError, ReportFacts, Severity};
use serde_json::Value;

fn facts() -> ReportFacts {
    ReportFacts {
        report_ids: vec![ReportId::new("rep-00000001")],
        location: GeoPoint::new(39.5, -8.2).unwrap(),
        place_name: None,
        site: None,
        hazard_summary: BTreeMap::from([(HazardClass::PlasticFoil, 2)]),
        n_confirmed: 2,
        severity: Severity::Low,
        language: "en".into(),
        tone: "neutral".into(),
    }
}

/// One-shot HTTP server answering `reply` after `delay`; sends back the
/// request line and body it saw.
fn serve_once(reply: &'static str, delay: Duration) -> (String, mpsc::Receiver<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/narrate", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let _ = tx.send((request_line.trim().to_owned(), String::from_utf8(body).unwrap()));
        thread::sleep(delay);
        let _ = write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
            reply.len()
        );
    });
    (url, rx)
}

#[test]
fn posts_facts_and_reads_plain_text() {
    let (url, seen) = serve_once("Two plastic foil items were confirmed.", Duration::ZERO);
    let backend = HttpNarrative::new(url, Duration::from_secs(5));
    let text = backend.generate(&facts(), "neutral", "en").unwrap();
    assert_eq!(text, "Two plastic foil items were confirmed.");
    let (line, body) = seen.recv().unwrap();
    assert!(line.starts_with("POST /narrate?"), "{line}");
    assert!(line.contains("tone=neutral") && line.contains("language=en"), "{line}");
    let sent: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(sent, serde_json::to_value(facts()).unwrap());
}

#[test]
fn slow_backend_times_out() {
    let (url, _seen) = serve_once("late", Duration::from_secs(3));
    let backend: Arc<dyn NarrativeBackend> = Arc::new(HttpNarrative::new(url, Duration::from_secs(10)));
    let started = Instant::now();
    let out = narrate_with_timeout(backend, &facts(), Duration::from_millis(300));
    assert!(matches!(out, Err(NarrativeError::Timeout)));
    assert!(started.elapsed() < Duration::from_secs(2));
}

#[test]
fn unreachable_backend_fails() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let backend = HttpNarrative::new(format!("http://127.0.0.1:{port}/"), Duration::from_secs(2));
    assert!(backend.generate(&facts(), "neutral", "en").is_err());
}

#[test]
fn facts_match_committed_schema() {
    let schema: Value = serde_json::from_str(include_str!("../../../schemas/report-facts.schema.json")).unwrap();
    let doc = serde_json::to_value(facts()).unwrap();
    let mut required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let mut keys: Vec<&str> = doc.as_object().unwrap().keys().map(String::as_str).collect();
    required.sort_unstable();
    keys.sort_unstable();
    assert_eq!(keys, required);
    let classes: Vec<&str> = schema["properties"]["hazard_summary"]["propertyNames"]["enum"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for c in HazardClass::ALL {
        let name = serde_json::to_value(c).unwrap();
        assert!(classes.contains(&name.as_str().unwrap()));
    }
}
