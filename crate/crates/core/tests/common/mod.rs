#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tkgcast::backends::{Backend, BackendError, BackendKind, BackendResponse, GenerationRequest, TokenDistribution};
use tkgcast::kg_store::{Dictionary, Quadruple, TemporalKg};

/// Random graph with `n_ts` timestamps; the last `test_ts` form the test split
/// and the `valid_ts` before them the valid split.
pub fn random_kg(seed: u64, n_entities: u32, n_relations: u32, n_ts: u32, per_ts: usize, valid_ts: u32, test_ts: u32) -> TemporalKg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..n_ts {
        for _ in 0..per_ts {
            let q = Quadruple::new(
                rng.gen_range(0..n_entities),
                rng.gen_range(0..n_relations),
                rng.gen_range(0..n_entities),
                t,
            );
            if t >= n_ts - test_ts {
                test.push(q);
            } else if t >= n_ts - test_ts - valid_ts {
                valid.push(q);
            } else {
                train.push(q);
            }
        }
    }
    TemporalKg::from_splits(
        "random",
        Dictionary::numeric(n_entities as usize),
        Dictionary::numeric(n_relations as usize),
        train,
        valid,
        test,
        1,
    )
    .unwrap()
}

/// Every entity `i` emits `(i, 0, (i+1) mod m, t)` at every timestamp, so
/// each collated query has exactly one gold answer in both directions.
pub fn periodic_kg(m: u32, n_ts: u32, test_ts: u32) -> TemporalKg {
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..n_ts {
        for i in 0..m {
            let q = Quadruple::new(i, 0, (i + 1) % m, t);
            if t >= n_ts - test_ts {
                test.push(q);
            } else if t + 1 == n_ts - test_ts {
                valid.push(q);
            } else {
                train.push(q);
            }
        }
    }
    TemporalKg::from_splits(
        "periodic",
        Dictionary::numeric(m as usize),
        Dictionary::numeric(2),
        train,
        valid,
        test,
        1,
    )
    .unwrap()
}

/// Ranks every gold answer first (when it has a label), then the remaining
/// labels in label order.
pub struct OracleBackend;

impl Backend<f64> for OracleBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<BackendResponse<f64>, BackendError> {
        let labels = &request.prompt.labels;
        let mut entries = Vec::new();
        for g in &request.prompt.query.gold {
            if let Some(l) = labels.label_of(*g) {
                entries.push((l.to_string(), 0.0));
            }
        }
        for (l, e) in labels.iter() {
            if !request.prompt.query.gold.contains(&e) {
                entries.push((l.to_string(), -1.0 - l as f64));
            }
        }
        Ok(BackendResponse::Distribution(TokenDistribution::new(entries)))
    }
}

/// Always predicts one fixed label.
pub struct ConstantLabelBackend(pub u32);

impl Backend<f64> for ConstantLabelBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn generate(&self, _request: &GenerationRequest<'_>) -> Result<BackendResponse<f64>, BackendError> {
        Ok(BackendResponse::Distribution(TokenDistribution::new([(self.0.to_string(), -0.1)])))
    }
}

pub type Handler = dyn Fn(&Value, usize) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one thread per connection, one request per
/// connection. The handler sees the JSON body and a global request counter.
pub struct StubServer {
    pub addr: SocketAddr,
    pub requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl StubServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (req2, stop2) = (requests.clone(), stop.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let counter = req2.clone();
                thread::spawn(move || serve(stream, &*handler, &counter));
            }
        });
        Self { addr, requests, stop }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn serve(stream: TcpStream, handler: &Handler, counter: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let n = counter.fetch_add(1, Ordering::SeqCst);
    let (status, payload) = handler(&json, n);
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = out.flush();
}

/// Legacy completion payload carrying one top-logprob map.
pub fn completion_payload(entries: &[(String, f64)]) -> String {
    let map: serde_json::Map<String, Value> = entries.iter().map(|(t, l)| (t.clone(), Value::from(*l))).collect();
    serde_json::json!({
        "choices": [{"text": entries.first().map(|e| e.0.clone()).unwrap_or_default(),
                     "logprobs": {"top_logprobs": [map]}}]
    })
    .to_string()
}

/// Counts requests per key, e.g. per prompt text.
#[derive(Default)]
pub struct AttemptLog(Mutex<HashMap<String, usize>>);

impl AttemptLog {
    pub fn bump(&self, key: &str) -> usize {
        let mut m = self.0.lock().unwrap();
        let c = m.entry(key.to_string()).or_insert(0);
        *c += 1;
        *c
    }
}

/// Exhaustive rank oracle: walk the ranking from the top, counting every
/// entity (raw) or every entity that is not another valid answer (filtered).
pub fn rank_oracle(
    gold: tkgcast::EntityId,
    ranking: &[tkgcast::EntityId],
    no_prediction: bool,
    others: &std::collections::BTreeSet<tkgcast::EntityId>,
    time_aware: bool,
    fallback: usize,
) -> usize {
    if no_prediction {
        return fallback;
    }
    let mut rank = 0;
    for e in ranking {
        if *e == gold {
            return rank + 1;
        }
        if !(time_aware && others.contains(e)) {
            rank += 1;
        }
    }
    fallback
}

/// Decode oracle written against the label map as a plain list.
pub fn decode_oracle(entries: &[(String, f64)], labels: &[(u32, tkgcast::EntityId)]) -> Vec<(tkgcast::EntityId, f64)> {
    let mut best: Vec<(u32, f64)> = Vec::new();
    for (tok, lp) in entries {
        let t = tok.trim();
        let canonical = !t.is_empty() && t.chars().all(|c| c.is_ascii_digit()) && (t == "0" || !t.starts_with('0'));
        if !canonical {
            continue;
        }
        let Ok(n) = t.parse::<u32>() else { continue };
        if !labels.iter().any(|(l, _)| *l == n) {
            continue;
        }
        match best.iter_mut().find(|(l, _)| *l == n) {
            Some(slot) => slot.1 = slot.1.max(*lp),
            None => best.push((n, *lp)),
        }
    }
    best.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    best.into_iter()
        .map(|(n, lp)| (labels.iter().find(|(l, _)| *l == n).unwrap().1, lp))
        .collect()
}

/// Random token distribution over label-like and junk tokens.
pub fn random_tokens(rng: &mut ChaCha8Rng, n_labels: u32) -> Vec<(String, f64)> {
    let n = rng.gen_range(0..30);
    (0..n)
        .map(|_| {
            let l = rng.gen_range(0..n_labels + 5);
            let tok = match rng.gen_range(0..8) {
                0 => format!(" {l}"),
                1 => format!("0{l}"),
                2 => format!("{l}."),
                3 => "abc".to_string(),
                4 => format!("{l} "),
                _ => l.to_string(),
            };
            (tok, -rng.gen_range(0.0..10.0f64))
        })
        .collect()
}

/// ACLED-style scenario: an armed group, its recent battle and
/// violence-against-civilians events, queried at t = 571.
pub fn acled_scenario() -> (TemporalKg, tkgcast::ForecastQuery) {
    let named = [
        (0, "Islamist Militia (Mozambique)"),
        (10, "Meluco"),
        (36, "Namatil"),
        (53, "Muatide"),
        (54, "Limala"),
        (55, "Nacate"),
    ];
    let entities = Dictionary::from_pairs((0..56u32).map(|i| {
        let label = named.iter().find(|n| n.0 == i).map(|n| n.1.to_string()).unwrap_or(format!("Location {i}"));
        (label, i)
    }))
    .unwrap();
    let relations = Dictionary::from_pairs((0..6u32).map(|i| {
        let label = match i {
            1 => "Battles".to_string(),
            4 => "Violence against civilians".to_string(),
            _ => format!("Event type {i}"),
        };
        (label, i)
    }))
    .unwrap();
    let train = vec![
        Quadruple::new(0, 4, 55, 540),
        Quadruple::new(0, 1, 10, 553),
        Quadruple::new(0, 4, 36, 558),
        Quadruple::new(12, 4, 0, 560),
        Quadruple::new(0, 4, 53, 563),
        Quadruple::new(0, 1, 10, 566),
        Quadruple::new(0, 4, 54, 569),
    ];
    let test = vec![Quadruple::new(0, 4, 55, 571)];
    let kg = TemporalKg::from_splits("ACLED-CD22", entities, relations, train, vec![], test, 1).unwrap();
    (kg, tkgcast::ForecastQuery::tail(0, 4, 571, [55]))
}

