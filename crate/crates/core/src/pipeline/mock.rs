use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::backend::{Backend, CompletionRequest, HighIntensityRequest};
use super::wire::{self, ErrorBody};
use crate::context::{build_prompt_p2, ObservationMask, PromptText, SemanticMap};
use crate::envmap::png::{self, BitDepth, Transfer};
use crate::envmap::AspectPolicy;
use crate::error::{Error, Result, Stage};

/// An HTTP server speaking the backend protocol, answering from any
/// in-process [`Backend`]. Stops when dropped.
pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and serves on `threads`
    /// worker threads.
    pub fn start(addr: &str, backend: Arc<dyn Backend>, threads: usize) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Transport(format!("cannot bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Transport("server is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        serve(req, backend.as_ref());
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the worker threads exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn serve(mut req: Request, backend: &dyn Backend) {
    let transfer = req
        .headers()
        .iter()
        .find(|h| h.field.equiv(wire::ENCODING_HEADER))
        .map(|h| h.value.as_str().parse::<Transfer>());
    let outcome = match transfer {
        Some(Err(e)) => Err((400, e)),
        Some(Ok(t)) => route(&mut req, backend, t).map(|body| (body, t)),
        None => route(&mut req, backend, Transfer::default()).map(|body| (body, Transfer::default())),
    };
    let (status, body, transfer) = match outcome {
        Ok((body, t)) => (200, body, t),
        Err((status, err)) => {
            log::warn!("mock backend: {err}");
            let body = serde_json::to_string(&ErrorBody::from_error(&err)).unwrap_or_default();
            (status, body, Transfer::default())
        }
    };
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(header("content-type", "application/json"))
        .with_header(header(wire::ENCODING_HEADER, transfer.name()));
    if let Err(e) = req.respond(response) {
        log::warn!("mock backend: failed to respond: {e}");
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header is valid")
}

type Failure = (u16, Error);

fn bad_request(e: impl std::fmt::Display) -> Failure {
    (400, Error::Protocol(e.to_string()))
}

fn route(
    req: &mut Request,
    backend: &dyn Backend,
    transfer: Transfer,
) -> std::result::Result<String, Failure> {
    if *req.method() != Method::Post {
        return Err((
            405,
            Error::Protocol(format!("method {} not allowed", req.method())),
        ));
    }
    let mut body = String::new();
    req.as_reader().read_to_string(&mut body).map_err(bad_request)?;
    match req.url() {
        wire::COMPLETE_PATH => complete(&body, backend, transfer),
        wire::HIGH_INTENSITY_PATH => high_intensity(&body, backend, transfer),
        other => Err((404, Error::Protocol(format!("no route {other}")))),
    }
}

fn complete(body: &str, backend: &dyn Backend, transfer: Transfer) -> std::result::Result<String, Failure> {
    let r: wire::CompleteRequest = serde_json::from_str(body).map_err(bad_request)?;
    let decode = || -> Result<_> {
        let obs = png::decode_ldr(
            &wire::decode_b64(&r.observation_png_b64)?,
            transfer,
            AspectPolicy::Strict,
        )?;
        let mask = ObservationMask::from_png(&wire::decode_b64(&r.mask_png_b64)?)?;
        let semantics = r
            .semantics_png_b64
            .as_deref()
            .map(|s| SemanticMap::from_png(&wire::decode_b64(s)?))
            .transpose()?;
        if obs.dims() != (r.width, r.height) || mask.dims() != obs.dims() {
            return Err(Error::Protocol(format!(
                "declared {}x{}, observation {:?}, mask {:?}",
                r.width,
                r.height,
                obs.dims(),
                mask.dims()
            )));
        }
        Ok((obs, mask, semantics))
    };
    let (obs, mask, semantics) = decode().map_err(bad_request)?;
    let prompt = PromptText::from(r.prompt);
    let reply = backend
        .complete_ldr(&CompletionRequest {
            observation: &obs,
            mask: &mask,
            semantics: semantics.as_ref(),
            prompt: &prompt,
            n: r.n,
        })
        .map_err(|e| (500, e.at(Stage::LdrCompletion)))?;
    let candidates = reply
        .value
        .iter()
        .map(|c| png::encode_ldr(c, transfer).map(|b| wire::encode_b64(&b)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| (500, e.at(Stage::LdrRetrieval)))?;
    serde_json::to_string(&wire::CompleteResponse { candidates })
        .map_err(|e| (500, Error::Protocol(e.to_string())))
}

fn high_intensity(
    body: &str,
    backend: &dyn Backend,
    transfer: Transfer,
) -> std::result::Result<String, Failure> {
    let r: wire::HighIntensityRequest = serde_json::from_str(body).map_err(bad_request)?;
    let ldr = wire::decode_b64(&r.ldr_png_b64)
        .and_then(|b| png::decode_ldr(&b, transfer, AspectPolicy::Strict))
        .map_err(bad_request)?;
    let prompt = if r.prompt.is_empty() {
        build_prompt_p2()
    } else {
        PromptText::from(r.prompt)
    };
    let reply = backend
        .estimate_high_intensity(&HighIntensityRequest {
            ldr: &ldr,
            prompt: &prompt,
            sync: r.sync.as_ref(),
        })
        .map_err(|e| (500, e.at(Stage::HiEstimation)))?;
    let bytes = png::encode_high_intensity(&reply.value, BitDepth::Eight)
        .map_err(|e| (500, e.at(Stage::HiRetrieval)))?;
    serde_json::to_string(&wire::HighIntensityResponse {
        hi_png_b64: wire::encode_b64(&bytes),
    })
    .map_err(|e| (500, Error::Protocol(e.to_string())))
}
