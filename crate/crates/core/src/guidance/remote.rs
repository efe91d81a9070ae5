use std::time::Duration;

use super::wire::{decode_response, encode_request};
use super::{Guidance, GuidanceError, GuidanceRequest, GuidanceResponse};

/// Blocking HTTP client for a guidance server.
#[derive(Debug, Clone)]
pub struct RemoteGuidance {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteGuidance {
    /// `base_url` is the server root; requests go to `<base_url>/guidance`.
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let trimmed = base_url.trim_end_matches('/');
        let endpoint = if trimmed.ends_with("/guidance") { trimmed.to_string() } else { format!("{trimmed}/guidance") };
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn transport(&self, e: ureq::Error) -> GuidanceError {
        let endpoint = self.endpoint.clone();
        match e {
            ureq::Error::Timeout(_) => GuidanceError::Timeout { endpoint },
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => GuidanceError::Timeout { endpoint },
            other => GuidanceError::Connection { endpoint, message: other.to_string() },
        }
    }
}

impl Guidance for RemoteGuidance {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let body = encode_request(request);
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| self.transport(e))?;
        let status = response.status().as_u16();
        let text = response.into_body().with_config().limit(u64::MAX).read_to_string().map_err(|e| self.transport(e))?;
        match decode_response(&text, request) {
            Err(GuidanceError::Malformed(m)) if status >= 400 => Err(GuidanceError::Server(format!("HTTP {status}: {m}"))),
            other => other,
        }
    }
}
