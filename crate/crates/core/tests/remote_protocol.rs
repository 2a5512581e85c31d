mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{oracle, view, vp};
use posematch::backend::{Backend, DenoiseRequest, GenerationRequest};
use posematch::imaging::{add_noise, sample_noise};
use posematch::remote::{serve, RemoteBackend, RemoteConfig, ServerHandle, ServerOptions, WireTensor};
use posematch::rng::{Cursor, StreamKey};
use posematch::{Error, ImageBuffer, TensorBuffer, ViewChange};

const OBJECT: u64 = 0x5eed;

fn served(gain: f64) -> (ServerHandle, RemoteBackend) {
    let server = serve(Arc::new(oracle(gain, 32)), "127.0.0.1:0", ServerOptions::default()).unwrap();
    let client = RemoteBackend::connect(RemoteConfig::new(server.url())).unwrap();
    (server, client)
}

fn max_abs_diff(a: &TensorBuffer, b: &TensorBuffer) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

/// Answers every request with the same canned reply and counts requests.
fn canned(status: u16, body: &'static str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut sink = vec![0u8; len];
            let _ = reader.read_exact(&mut sink);
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, hits)
}

fn post_raw(url: &str, path: &str, body: &str) -> (u16, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.post(&format!("{url}{path}")).header("content-type", "application/json").send(body).unwrap();
    (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
}

#[test]
fn descriptor_and_schedule_survive_the_wire() {
    let (_server, client) = served(0.0);
    let local = oracle(0.0, 32);
    let (d, l) = (client.descriptor(), local.descriptor());
    assert_eq!(d.name, l.name);
    assert_eq!(d.working_shape, l.working_shape);
    assert_eq!(d.schedule.alpha_bar(), l.schedule.alpha_bar());
    assert_eq!(d.schedule.t_index(0.4).unwrap(), 400);
    assert!(client.health().unwrap());
}

#[test]
fn random_requests_match_in_process() {
    let (_server, client) = served(0.5);
    let local = oracle(0.5, 32);
    let mut cur = Cursor::new(StreamKey::new(42));
    for k in 0..40u64 {
        let (e, a) = (cur.range(-30.0, 70.0), cur.range(0.0, 360.0));
        let cond = view(&local, OBJECT + k % 3, e, a);
        let change = ViewChange::new(cur.range(-20.0, 20.0), cur.range(-180.0, 180.0), 0.0);
        if k % 2 == 0 {
            let req = GenerationRequest { cond: &cond, change, seed: k };
            let (r, l) = (client.generate(&req).unwrap(), local.generate(&req).unwrap());
            assert!(max_abs_diff(&r.encoding, &l.encoding) <= 1e-5);
            assert_eq!(r.image.pixels(), l.image.quantized().pixels());
        } else {
            let clean = local.render_view(OBJECT, &vp(e, a)).unwrap().encoding;
            let eps = sample_noise(k, clean.shape()).unwrap();
            let t_index = cur.below(1000) as usize;
            let noisy = add_noise(&clean, &local.descriptor().schedule, t_index, &eps).unwrap();
            let req = DenoiseRequest { noisy: &noisy, t_index, cond: &cond, change };
            assert!(max_abs_diff(&client.denoise(&req).unwrap(), &local.denoise(&req).unwrap()) <= 1e-5);
        }
    }
}

#[test]
fn batches_stay_positionally_aligned() {
    let (_server, client) = served(1.0);
    let local = oracle(1.0, 32);
    let conds: Vec<ImageBuffer> = (0..3).map(|i| view(&local, OBJECT, 20.0 + 10.0 * i as f64, 50.0 * i as f64)).collect();
    let noisy: Vec<TensorBuffer> = (0..8u64)
        .map(|s| {
            let x = local.render_view(OBJECT, &vp(30.0, 45.0 * s as f64)).unwrap().encoding;
            add_noise(&x, &local.descriptor().schedule, 400, &sample_noise(s, x.shape()).unwrap()).unwrap()
        })
        .collect();
    let reqs: Vec<DenoiseRequest> = (0..8)
        .map(|k| DenoiseRequest {
            noisy: &noisy[k],
            t_index: 400,
            cond: &conds[k % 3],
            change: ViewChange::new(5.0 * k as f64 - 20.0, 40.0 * k as f64 - 150.0, 0.0),
        })
        .collect();
    let single = client.denoise(&reqs[0]).unwrap();
    assert_eq!(client.denoise_batch(&reqs[..1]).unwrap()[0], single);

    let forward = client.denoise_batch(&reqs).unwrap();
    let order = [5, 2, 7, 0, 3, 6, 1, 4];
    let shuffled: Vec<DenoiseRequest> = order.iter().map(|&k| reqs[k]).collect();
    let back = client.denoise_batch(&shuffled).unwrap();
    for (pos, &k) in order.iter().enumerate() {
        assert_eq!(back[pos], forward[k]);
        assert!(max_abs_diff(&forward[k], &local.denoise(&reqs[k]).unwrap()) <= 1e-5);
    }
}

#[test]
fn failed_items_are_reported_per_position() {
    let (_server, client) = served(0.0);
    let local = oracle(0.0, 32);
    let good = view(&local, OBJECT, 30.0, 30.0);
    let untagged = ImageBuffer::new(32, 32, vec![0.5; 32 * 32 * 3]).unwrap();
    let x = local.render_view(OBJECT, &vp(30.0, 30.0)).unwrap().encoding;
    let reqs = [&good, &untagged, &good].map(|cond| DenoiseRequest {
        noisy: &x,
        t_index: 400,
        cond,
        change: ViewChange::default(),
    });
    match client.denoise_batch(&reqs) {
        Err(Error::PartialFailure { items }) => {
            assert_eq!(items.len(), 3);
            assert!(items[0].is_none() && items[2].is_none());
            assert!(items[1].as_deref().unwrap().contains("view tag"));
        }
        other => panic!("expected a partial failure, got {other:?}"),
    }
}

#[test]
fn malformed_and_mismatched_requests_get_400() {
    let (server, _client) = served(0.0);
    let (status, body) = post_raw(&server.url(), "/v1/denoise", "{not json");
    assert_eq!(status, 400);
    assert!(serde_json::from_str::<serde_json::Value>(&body).unwrap()["error"].is_string());

    let x = WireTensor::from_tensor(&TensorBuffer::zeros(vec![32, 32, 3]).unwrap());
    let stale = serde_json::json!({
        "version": 2, "noisy": x, "t_index": 400, "cond_png_b64": "",
        "d_elevation_deg": 0.0, "d_azimuth_deg": 0.0,
    });
    let (status, body) = post_raw(&server.url(), "/v1/denoise", &stale.to_string());
    assert_eq!(status, 400);
    assert!(body.contains("version"), "{body}");
}

#[test]
fn not_ready_server_answers_503() {
    let (server, client) = served(0.0);
    server.set_ready(false);
    assert!(!client.health().unwrap());
    let cond = view(&oracle(0.0, 32), OBJECT, 30.0, 30.0);
    let req = GenerationRequest { cond: &cond, change: ViewChange::default(), seed: 0 };
    assert!(matches!(client.generate(&req), Err(Error::ServerError { status: 503, .. })));
    server.set_ready(true);
    assert!(client.generate(&req).is_ok());
}

#[test]
fn descriptor_version_mismatch_is_fatal() {
    let (url, _) = canned(
        200,
        r#"{"version":2,"name":"future","working_shape":[4,4,3],"t_total":2,"alpha_bar":[0.999,0.5]}"#,
    );
    assert!(matches!(RemoteBackend::connect(RemoteConfig::new(url)), Err(Error::ProtocolMismatch(_))));
}

#[test]
fn server_errors_are_not_retried() {
    let (url, hits) = canned(500, r#"{"error":"out of memory"}"#);
    let cfg = RemoteConfig { retry_limit: 3, ..RemoteConfig::new(url) };
    match RemoteBackend::connect(cfg) {
        Err(Error::ServerError { status: 500, message }) => assert_eq!(message, "out of memory"),
        other => panic!("expected a server error, got {:?}", other.err()),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn closed_port_is_unreachable_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = RemoteConfig { retry_limit: 1, timeout_ms: 2000, ..RemoteConfig::new(format!("http://127.0.0.1:{port}")) };
    assert!(matches!(RemoteBackend::connect(cfg), Err(Error::Unreachable(_))));
}
