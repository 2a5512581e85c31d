use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use socket2::{Domain, Protocol, Socket, Type};
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{
    check_version, BatchItemReply, BatchReply, BatchRequest, DenoiseBody, DenoiseReply,
    DescriptorReply, ErrorReply, GenerateBody, GenerateReply, WireTensor, PROTOCOL_VERSION,
};
use crate::backend::{Backend, DenoiseRequest, GenerationRequest};
use crate::error::{Error, Result};
use crate::imaging::{ImageBuffer, TensorBuffer};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Request-handling threads.
    pub workers: usize,
    /// Poll interval for the shutdown flag.
    pub poll: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            workers: std::thread::available_parallelism().map_or(2, |n| n.get().max(2)),
            poll: Duration::from_millis(100),
        }
    }
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    ready: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// While not ready, every endpoint answers 503.
    pub fn set_ready(&self, ready: bool) {
        self.ready.store(ready, Ordering::SeqCst);
    }

    /// Stops accepting requests and joins the workers.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Serves `backend` on `addr` (port 0 picks a free port).
pub fn serve(backend: Arc<dyn Backend>, addr: &str, opts: ServerOptions) -> Result<ServerHandle> {
    let server = Server::from_listener(listener(addr)?, None)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Io(std::io::Error::other("server is not bound to an IP address")))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let ready = Arc::new(AtomicBool::new(true));
    let workers = (0..opts.workers.max(1))
        .map(|_| {
            let (server, stop, ready, backend) = (server.clone(), stop.clone(), ready.clone(), backend.clone());
            let poll = opts.poll;
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(poll) {
                        Ok(Some(req)) => handle(req, backend.as_ref(), &ready),
                        Ok(None) => {}
                        Err(e) => log::warn!("accept failed: {e}"),
                    }
                }
            })
        })
        .collect();
    log::info!("serving {} on {bound}", backend.descriptor().name);
    Ok(ServerHandle { addr: bound, stop, ready, workers })
}

/// Listener with TCP_NODELAY set; accepted sockets inherit it, which keeps
/// small replies from waiting on delayed ACKs.
fn listener(addr: &str) -> Result<TcpListener> {
    let sa = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::InvalidConfig(format!("cannot resolve {addr:?}")))?;
    let socket = Socket::new(Domain::for_address(sa), Type::STREAM, Some(Protocol::TCP))?;
    socket.set_reuse_address(true)?;
    socket.set_tcp_nodelay(true)?;
    socket.bind(&sa.into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

struct Reply {
    status: u16,
    body: Vec<u8>,
}

fn json<T: Serialize>(status: u16, value: &T) -> Reply {
    Reply {
        status,
        body: serde_json::to_vec(value).expect("reply types serialize"),
    }
}

fn error(status: u16, message: impl Into<String>) -> Reply {
    json(status, &ErrorReply { error: message.into() })
}

/// Status for a failed backend call: the client's fault unless the
/// backend itself is unavailable.
fn error_for(e: &Error) -> Reply {
    let status = match e {
        Error::BackendUnavailable(_) => 503,
        Error::Io(_) => 500,
        _ => 400,
    };
    error(status, e.to_string())
}

fn handle(mut req: Request, backend: &dyn Backend, ready: &AtomicBool) {
    let method = req.method().clone();
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let mut body = Vec::new();
    let reply = if let Err(e) = req.as_reader().read_to_end(&mut body) {
        error(400, format!("unreadable body: {e}"))
    } else if !ready.load(Ordering::SeqCst) {
        error(503, "backend not ready")
    } else {
        route(&method, &path, &body, backend)
    };
    log::debug!("{method} {path} -> {}", reply.status);
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_data(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send reply: {e}");
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> std::result::Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| error(400, format!("malformed request: {e}")))
}

fn route(method: &Method, path: &str, body: &[u8], backend: &dyn Backend) -> Reply {
    match (method, path) {
        (Method::Get, "/v1/health") => json(
            200,
            &serde_json::json!({ "status": "ok", "version": PROTOCOL_VERSION }),
        ),
        (Method::Get, "/v1/descriptor") => {
            json(200, &DescriptorReply::from_descriptor(backend.descriptor()))
        }
        (Method::Post, "/v1/generate") => match parse::<GenerateBody>(body) {
            Ok(b) => match generate(&b, backend) {
                Ok(r) => json(200, &r),
                Err(e) => error_for(&e),
            },
            Err(r) => r,
        },
        (Method::Post, "/v1/denoise") => match parse::<DenoiseBody>(body) {
            Ok(b) => match denoise(&b, backend) {
                Ok(eps) => json(200, &DenoiseReply { epsilon: WireTensor::from_tensor(&eps) }),
                Err(e) => error_for(&e),
            },
            Err(r) => r,
        },
        (Method::Post, "/v1/denoise_batch") => match parse::<BatchRequest>(body) {
            Ok(b) => match check_version(b.version) {
                Ok(()) => json(200, &denoise_batch(&b, backend)),
                Err(e) => error(400, e.to_string()),
            },
            Err(r) => r,
        },
        (_, "/v1/health" | "/v1/descriptor" | "/v1/generate" | "/v1/denoise" | "/v1/denoise_batch") => {
            error(405, format!("{method} not allowed on {path}"))
        }
        _ => error(404, format!("no route for {path}")),
    }
}

fn generate(b: &GenerateBody, backend: &dyn Backend) -> Result<GenerateReply> {
    check_version(b.version)?;
    let cond = ImageBuffer::from_png_b64(&b.cond_png_b64)?;
    let out = backend.generate(&GenerationRequest { cond: &cond, change: b.change(), seed: b.seed })?;
    GenerateReply::from_result(&out)
}

fn denoise(b: &DenoiseBody, backend: &dyn Backend) -> Result<TensorBuffer> {
    check_version(b.version)?;
    let cond = ImageBuffer::from_png_b64(&b.cond_png_b64)?;
    let noisy = b.noisy.to_tensor()?;
    backend.denoise(&DenoiseRequest {
        noisy: &noisy,
        t_index: b.t_index,
        cond: &cond,
        change: b.change(),
    })
}

fn denoise_batch(b: &BatchRequest, backend: &dyn Backend) -> BatchReply {
    let items = b
        .items
        .iter()
        .map(|item| match denoise(item, backend) {
            Ok(eps) => BatchItemReply { ok: true, epsilon: Some(WireTensor::from_tensor(&eps)), error: None },
            Err(e) => BatchItemReply { ok: false, epsilon: None, error: Some(e.to_string()) },
        })
        .collect();
    BatchReply { items }
}
