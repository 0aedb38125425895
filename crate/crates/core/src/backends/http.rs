// SPDX-License-Identifier: Apache-2.0

//! Vision-language client for an Ollama-compatible `/api/generate`
//! endpoint serving a multimodal model.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::narration::{NarrationRequest, VisionLanguageModel};

pub const URL_ENV: &str = "SPEAKING_IMAGES_LLM_URL";
pub const MODEL_ENV: &str = "SPEAKING_IMAGES_LLM_MODEL";
pub const TIMEOUT_ENV: &str = "SPEAKING_IMAGES_LLM_TIMEOUT_S";

pub const DEFAULT_URL: &str = "http://localhost:11434";
pub const DEFAULT_MODEL: &str = "llama3.2-vision";

#[derive(Debug, Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    images: Vec<String>,
    stream: bool,
    options: Options,
}

#[derive(Debug, Serialize)]
struct Options {
    temperature: f64,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    response: String,
}

#[derive(Debug, Clone)]
pub struct HttpVlm {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
}

impl HttpVlm {
    pub fn new(base_url: &str, model: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            timeout: Duration::from_secs(300),
        }
    }

    pub fn from_env() -> Self {
        let url = std::env::var(URL_ENV).unwrap_or_else(|_| DEFAULT_URL.to_string());
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        let mut vlm = Self::new(&url, &model);
        if let Some(secs) = std::env::var(TIMEOUT_ENV).ok().and_then(|s| s.parse::<u64>().ok()) {
            vlm.timeout = Duration::from_secs(secs);
        }
        vlm
    }

    fn body(&self, prompt: &str, image: &[u8]) -> serde_json::Value {
        serde_json::to_value(GenerateRequest {
            model: &self.model,
            prompt,
            images: vec![base64::engine::general_purpose::STANDARD.encode(image)],
            stream: false,
            options: Options {
                temperature: 0.0,
                seed: 0,
            },
        })
        .expect("request serializes")
    }
}

impl VisionLanguageModel for HttpVlm {
    fn name(&self) -> &str {
        "http-vlm"
    }

    fn id(&self) -> String {
        format!("http-vlm:{}@{}", self.model, self.base_url)
    }

    fn describe(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        let err = |m: String| BackendError::new("http-vlm", m);
        let image = std::fs::read(&request.image_path).map_err(|e| err(format!("{}: {e}", request.image_path.display())))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(&format!("{}/api/generate", self.base_url))
            .send_json(self.body(&request.prompt, &image))
            .map_err(|e| err(e.to_string()))?;
        let parsed: GenerateResponse = resp.body_mut().read_json().map_err(|e| err(e.to_string()))?;
        Ok(parsed.response)
    }
}
