//! Minimal blocking client for the HTTP API.

use std::time::Duration;

use serde_json::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    /// The body exactly as received.
    pub raw: String,
}

impl ApiResponse {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.raw).unwrap_or(Value::Null)
    }

    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Clone)]
pub struct ApiClient {
    base: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for ApiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApiClient").field("base", &self.base).finish()
    }
}

impl ApiClient {
    pub fn new(base: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { base: base.into().trim_end_matches('/').to_string(), agent }
    }

    pub fn get(&self, path: &str) -> Result<ApiResponse, String> {
        let resp = self.agent.get(&format!("{}{path}", self.base)).call().map_err(|e| e.to_string())?;
        read(resp)
    }

    pub fn post(&self, path: &str, body: &Value) -> Result<ApiResponse, String> {
        let resp = self.agent.post(&format!("{}{path}", self.base)).send_json(body).map_err(|e| e.to_string())?;
        read(resp)
    }

    pub fn session(&self, id: &str) -> Result<ApiResponse, String> {
        self.get(&format!("/v1/session/{id}"))
    }

    pub fn turn(&self, id: &str, text: &str, client_time: Option<&str>) -> Result<ApiResponse, String> {
        let mut body = serde_json::json!({ "text": text });
        if let Some(t) = client_time {
            body["client_time"] = t.into();
        }
        self.post(&format!("/v1/session/{id}/turn"), &body)
    }

    pub fn order_action(
        &self,
        id: &str,
        order_id: &str,
        action: &str,
        client_time: Option<&str>,
    ) -> Result<ApiResponse, String> {
        let body = match client_time {
            Some(t) => serde_json::json!({ "client_time": t }),
            None => serde_json::json!({}),
        };
        self.post(&format!("/v1/session/{id}/order/{order_id}/{action}"), &body)
    }
}

fn read(mut resp: ureq::http::Response<ureq::Body>) -> Result<ApiResponse, String> {
    let status = resp.status().as_u16();
    let raw = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
    Ok(ApiResponse { status, raw })
}
