use std::io;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::backend::{millis, Backend, CompletionRequest, HighIntensityRequest, Reply};
use super::wire::{self, ErrorBody};
use crate::envmap::png::{self, Transfer};
use crate::envmap::{AspectPolicy, EnvironmentMap, HighIntensityMap};
use crate::error::{Error, Result};

/// HTTP client for the backend protocol in [`wire`].
#[derive(Clone, Debug)]
pub struct RemoteBackend {
    agent: ureq::Agent,
    base: String,
    timeout: Duration,
    transfer: Transfer,
}

impl RemoteBackend {
    /// `timeout` bounds connecting and each whole request.
    pub fn new(endpoint: &str, timeout: Duration, transfer: Transfer) -> Result<Self> {
        if timeout.is_zero() {
            return Err(Error::InvalidParameter("backend timeout must be positive".into()));
        }
        let base = endpoint.trim_end_matches('/').to_owned();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(Error::InvalidParameter(format!(
                "endpoint {endpoint:?} is not an http(s) URL"
            )));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout(timeout)
            .build();
        Ok(Self {
            agent,
            base,
            timeout,
            transfer,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn timeout_ms(&self) -> u64 {
        self.timeout.as_millis() as u64
    }

    fn post<Q: Serialize, A: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<(A, Transfer)> {
        let text = serde_json::to_string(body).map_err(|e| Error::Protocol(e.to_string()))?;
        let resp = self
            .agent
            .post(&format!("{}{path}", self.base))
            .set("content-type", "application/json")
            .set(wire::ENCODING_HEADER, self.transfer.name())
            .send_string(&text)
            .map_err(|e| self.map_error(e))?;
        let transfer = match resp.header(wire::ENCODING_HEADER) {
            Some(name) => name.parse()?,
            None => self.transfer,
        };
        let parsed = serde_json::from_reader(resp.into_reader()).map_err(|e| match e.io_error_kind() {
            Some(io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => Error::Timeout(self.timeout_ms()),
            _ => Error::Protocol(format!("malformed response: {e}")),
        })?;
        Ok((parsed, transfer))
    }

    fn map_error(&self, err: ureq::Error) -> Error {
        match err {
            ureq::Error::Status(status, resp) => {
                let body = resp.into_string().unwrap_or_default();
                match serde_json::from_str::<ErrorBody>(&body) {
                    Ok(e) => Error::Protocol(format!(
                        "backend returned {status} {} at {}: {}",
                        e.code,
                        e.stage.as_deref().unwrap_or("unknown stage"),
                        e.message
                    )),
                    Err(_) => Error::Protocol(format!("backend returned {status}: {body}")),
                }
            }
            ureq::Error::Transport(t) => {
                if is_timeout(&t) {
                    Error::Timeout(self.timeout_ms())
                } else {
                    Error::Transport(t.to_string())
                }
            }
        }
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<io::Error>() {
            if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    false
}

impl Backend for RemoteBackend {
    fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>> {
        let start = Instant::now();
        let (width, height) = req.dims();
        let body = wire::CompleteRequest {
            prompt: req.prompt.as_str().to_owned(),
            n: req.n,
            width,
            height,
            observation_png_b64: wire::encode_b64(&png::encode_ldr(req.observation, self.transfer)?),
            mask_png_b64: wire::encode_b64(&req.mask.to_png()?),
            semantics_png_b64: req
                .semantics
                .map(|s| s.to_png())
                .transpose()?
                .map(|b| wire::encode_b64(&b)),
        };
        let upload_ms = millis(start.elapsed());

        let (resp, transfer): (wire::CompleteResponse, _) = self.post(wire::COMPLETE_PATH, &body)?;

        let start = Instant::now();
        if resp.candidates.len() != req.n {
            return Err(Error::Protocol(format!(
                "requested {} candidates, received {}",
                req.n,
                resp.candidates.len()
            )));
        }
        let maps = resp
            .candidates
            .iter()
            .map(|b64| {
                let map = png::decode_ldr(&wire::decode_b64(b64)?, transfer, AspectPolicy::Strict)?;
                if map.dims() == (width, height) {
                    Ok(map)
                } else {
                    map.resize(width, height)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Reply {
            value: maps,
            upload_ms,
            download_ms: millis(start.elapsed()),
        })
    }

    fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>> {
        let start = Instant::now();
        let body = wire::HighIntensityRequest {
            prompt: req.prompt.as_str().to_owned(),
            ldr_png_b64: wire::encode_b64(&png::encode_ldr(req.ldr, self.transfer)?),
            sync: req.sync.cloned(),
        };
        let upload_ms = millis(start.elapsed());

        let (resp, _): (wire::HighIntensityResponse, _) = self.post(wire::HIGH_INTENSITY_PATH, &body)?;

        let start = Instant::now();
        let hi = png::decode_high_intensity(&wire::decode_b64(&resp.hi_png_b64)?)?;
        if hi.dims() != req.ldr.dims() {
            return Err(Error::Protocol(format!(
                "high-intensity map is {:?}, expected {:?}",
                hi.dims(),
                req.ldr.dims()
            )));
        }
        Ok(Reply {
            value: hi,
            upload_ms,
            download_ms: millis(start.elapsed()),
        })
    }
}
