use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (DNS, refused, timeout). Always retryable.
#[derive(Debug, Clone, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Clone)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpReply, TransportError> {
        let mut req = self
            .agent
            .post(&request.url)
            .config()
            .timeout_global(Some(request.timeout))
            .build()
            .header("content-type", "application/json");
        for (k, v) in &request.headers {
            req = req.header(k, v);
        }
        let mut resp = req.send(request.body.as_bytes()).map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(format!("reading reply: {e}")))?;
        Ok(HttpReply { status, body })
    }
}
