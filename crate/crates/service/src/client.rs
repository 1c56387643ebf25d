//! Blocking JSON client for the HTTP API, used by the CLI and tests.

use serde_json::Value;

/// A response: the HTTP status plus the decoded body.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
    pub replayed: bool,
}

impl Reply {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// Error code of a failed request or a soft outcome.
    pub fn code(&self) -> Option<&str> {
        self.body.get("code").and_then(Value::as_str)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("request to {url} failed: {source}")]
pub struct ClientError {
    url: String,
    source: ureq::Error,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    /// `base` ends in `/api/v1`.
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { base: base.into().trim_end_matches('/').to_string(), agent }
    }

    pub fn get(&self, path: &str) -> Result<Reply, ClientError> {
        let url = format!("{}{path}", self.base);
        let response = self.agent.get(&url).call();
        Self::finish(url, response)
    }

    pub fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Result<Reply, ClientError> {
        self.post_with_key(path, token, None, body)
    }

    pub fn post_with_key(
        &self,
        path: &str,
        token: Option<&str>,
        idempotency_key: Option<&str>,
        body: &Value,
    ) -> Result<Reply, ClientError> {
        let url = format!("{}{path}", self.base);
        let mut request = self.agent.post(&url);
        if let Some(t) = token {
            request = request.header("Authorization", &format!("Bearer {t}"));
        }
        if let Some(k) = idempotency_key {
            request = request.header("Idempotency-Key", k);
        }
        let response = request.send_json(body);
        Self::finish(url, response)
    }

    fn finish(url: String, response: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Reply, ClientError> {
        let mut response = response.map_err(|source| ClientError { url: url.clone(), source })?;
        let status = response.status().as_u16();
        let replayed = response.headers().get("idempotent-replayed").is_some();
        let body = response.body_mut().read_json::<Value>().unwrap_or(Value::Null);
        Ok(Reply { status, body, replayed })
    }
}
