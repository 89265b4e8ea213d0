use std::time::Duration;

use url::Url;

use super::{BackendError, Fetched, PageSource};

/// Plain HTTP GET page source. Redirects are returned to the caller, not followed.
pub struct HttpSource {
    client: reqwest::blocking::Client,
}

impl HttpSource {
    pub fn new(user_agent: &str, timeout_ms: u64) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent)
            .timeout(Duration::from_millis(timeout_ms))
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .map_err(|e| BackendError::ConnectFailed(e.to_string()))?;
        Ok(HttpSource { client })
    }
}

impl PageSource for HttpSource {
    fn get(&self, url: &Url) -> Result<Fetched, BackendError> {
        let resp = self
            .client
            .get(url.as_str())
            .send()
            .map_err(|e| BackendError::FetchFailed {
                status: e.status().map(|s| s.as_u16()),
                detail: if e.is_timeout() {
                    format!("timed out fetching {url}")
                } else {
                    format!("{url}: {e}")
                },
            })?;
        let status = resp.status().as_u16();
        let location = resp
            .headers()
            .get(reqwest::header::LOCATION)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp.text().map_err(|e| BackendError::FetchFailed {
            status: Some(status),
            detail: format!("{url}: {e}"),
        })?;
        Ok(Fetched { status, body, location })
    }
}
