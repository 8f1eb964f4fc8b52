//! REST transport.

use std::fmt;
use std::time::Duration;

use serde_json::Value;

pub const API_BASE: &str = "https://discord.com/api/v10";
const USER_AGENT: &str = concat!("DiscordBot (apolobot, ", env!("CARGO_PKG_VERSION"), ")");
/// Longest rate-limit pause honoured inline before reporting unavailability.
const MAX_INLINE_WAIT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
    Put,
    Patch,
    Delete,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Patch => "PATCH",
            Method::Delete => "DELETE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilePart {
    pub filename: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiRequest {
    pub method: Method,
    /// Path below the API base, starting with `/`.
    pub path: String,
    pub body: Option<Value>,
    pub files: Vec<FilePart>,
    pub audit_reason: Option<String>,
}

impl ApiRequest {
    pub fn new(method: Method, path: impl Into<String>) -> Self {
        Self { method, path: path.into(), body: None, files: Vec::new(), audit_reason: None }
    }

    pub fn json(mut self, body: Value) -> Self {
        self.body = Some(body);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    /// Parsed JSON body; `Null` for empty responses.
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("fetch failed with status {0}")]
    Status(u16),
}

pub trait DiscordHttp: Send + Sync {
    fn send(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError>;

    /// Downloads an attachment URL, used to re-upload proof images.
    fn fetch(&self, url: &str) -> Result<Vec<u8>, TransportError>;
}

/// Bot token; never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct BotToken(String);

impl BotToken {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for BotToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BotToken(***)")
    }
}

/// Blocking `reqwest` transport against the public API.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    base: String,
    token: BotToken,
}

impl fmt::Debug for ReqwestTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReqwestTransport").field("base", &self.base).finish_non_exhaustive()
    }
}

impl ReqwestTransport {
    pub fn new(token: BotToken) -> Result<Self, TransportError> {
        Self::with_base(token, API_BASE)
    }

    pub fn with_base(token: BotToken, base: impl Into<String>) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(USER_AGENT)
            .timeout(Duration::from_secs(15))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self { client, base: base.into(), token })
    }

    fn build(&self, request: &ApiRequest) -> reqwest::blocking::RequestBuilder {
        let method = match request.method {
            Method::Get => reqwest::Method::GET,
            Method::Post => reqwest::Method::POST,
            Method::Put => reqwest::Method::PUT,
            Method::Patch => reqwest::Method::PATCH,
            Method::Delete => reqwest::Method::DELETE,
        };
        let mut rb = self
            .client
            .request(method, format!("{}{}", self.base, request.path))
            .header("Authorization", format!("Bot {}", self.token.expose()));
        if let Some(reason) = &request.audit_reason {
            rb = rb.header("X-Audit-Log-Reason", encode_reason(reason));
        }
        if request.files.is_empty() {
            if let Some(body) = &request.body {
                rb = rb.json(body);
            }
            return rb;
        }
        let mut form = reqwest::blocking::multipart::Form::new();
        if let Some(body) = &request.body {
            form = form.text("payload_json", body.to_string());
        }
        for (i, file) in request.files.iter().enumerate() {
            let part = reqwest::blocking::multipart::Part::bytes(file.bytes.clone()).file_name(file.filename.clone());
            form = form.part(format!("files[{i}]"), part);
        }
        rb.multipart(form)
    }
}

/// Audit-log reasons travel in a header and must be percent-encoded.
fn encode_reason(reason: &str) -> String {
    let mut out = String::new();
    for b in reason.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~ ".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl DiscordHttp for ReqwestTransport {
    fn send(&self, request: &ApiRequest) -> Result<ApiResponse, TransportError> {
        for attempt in 0..2 {
            let resp = self.build(request).send().map_err(|e| TransportError::Network(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
            let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
            if status == 429 && attempt == 0 {
                let wait = body.get("retry_after").and_then(Value::as_f64).unwrap_or(1.0);
                if wait <= MAX_INLINE_WAIT {
                    std::thread::sleep(Duration::from_secs_f64(wait));
                    continue;
                }
            }
            return Ok(ApiResponse { status, body });
        }
        unreachable!("loop returns on the second attempt")
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        let resp = self.client.get(url).send().map_err(|e| TransportError::Network(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(TransportError::Status(resp.status().as_u16()));
        }
        resp.bytes().map(|b| b.to_vec()).map_err(|e| TransportError::Network(e.to_string()))
    }
}
