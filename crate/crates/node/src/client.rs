//! Small blocking JSON client used by the harness.

use std::fmt;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A call that did not produce a 2xx response, or failed on the way.
#[derive(Debug)]
pub enum CallError {
    Status { status: u16, body: String },
    Transport(String),
}

impl fmt::Display for CallError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallError::Status { status, body } => write!(f, "HTTP {status}: {body}"),
            CallError::Transport(e) => write!(f, "transport: {e}"),
        }
    }
}

impl std::error::Error for CallError {}

#[derive(Debug, Clone)]
pub struct JsonClient {
    http: Client,
}

impl JsonClient {
    pub fn new(timeout: Duration) -> Self {
        JsonClient {
            http: Client::builder()
                .timeout(timeout)
                .build()
                .expect("client without TLS builds"),
        }
    }

    pub fn raw(&self) -> &Client {
        &self.http
    }

    fn send<R: DeserializeOwned>(&self, req: RequestBuilder) -> Result<R, CallError> {
        let resp = req
            .send()
            .map_err(|e| CallError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| CallError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(CallError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| CallError::Transport(format!("{e}: {body}")))
    }

    pub fn post<B: Serialize + ?Sized, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, CallError> {
        self.send(self.http.post(url).json(body))
    }

    /// Like [`JsonClient::post`] but returns the raw response text.
    pub fn post_text<B: Serialize + ?Sized>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<String, CallError> {
        let resp = self
            .http
            .post(url)
            .json(body)
            .send()
            .map_err(|e| CallError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| CallError::Transport(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(CallError::Status {
                status: status.as_u16(),
                body: text,
            })
        }
    }

    pub fn get<R: DeserializeOwned>(&self, url: &str) -> Result<R, CallError> {
        self.send(self.http.get(url))
    }
}
