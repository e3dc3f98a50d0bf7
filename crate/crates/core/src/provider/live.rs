//! HTTP-backed providers speaking an OpenAI-style JSON API.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    prompt, CompletionProvider, CompletionRequest, Embedder, ProviderError, Synthesizer,
    Transcriber, Translator,
};
use crate::domain::{Locale, LocalePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    #[serde(default = "default_embedding_dimension")]
    pub embedding_dimension: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_embedding_model() -> String {
    "text-embedding-3-small".to_string()
}

fn default_embedding_dimension() -> usize {
    1536
}

fn default_timeout() -> u64 {
    30
}

#[derive(Clone)]
pub struct LiveClient {
    http: Client,
    config: LiveConfig,
}

impl LiveClient {
    pub fn new(config: &LiveConfig) -> Result<Self, ProviderError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(Self {
            http,
            config: config.clone(),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str) -> reqwest::blocking::RequestBuilder {
        let builder = self.http.post(self.url(path));
        match &self.config.api_key {
            Some(key) => builder.bearer_auth(key),
            None => builder,
        }
    }

    fn send_json(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let response = self
            .post(path)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ProviderError::Unavailable(format!(
                "{path} returned {status}"
            )));
        }
        response
            .json()
            .map_err(|e| ProviderError::Unavailable(format!("{path} sent an unreadable body: {e}")))
    }
}

fn missing(field: &str) -> ProviderError {
    ProviderError::Unavailable(format!("response is missing {field}"))
}

pub struct LiveCompletion {
    client: LiveClient,
}

impl LiveCompletion {
    pub fn new(client: LiveClient) -> Self {
        Self { client }
    }
}

impl CompletionProvider for LiveCompletion {
    fn complete_raw(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.client.config.model,
            "response_format": { "type": "json_object" },
            "messages": [
                { "role": "system", "content": prompt::system_prompt(request.task_tag) },
                { "role": "user", "content": prompt::user_prompt(request) },
            ],
        });
        let value = self.client.send_json("chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| missing("choices[0].message.content"))
    }
}

pub struct LiveEmbedder {
    client: LiveClient,
}

impl LiveEmbedder {
    pub fn new(client: LiveClient) -> Self {
        Self { client }
    }
}

impl Embedder for LiveEmbedder {
    fn dimension(&self) -> usize {
        self.client.config.embedding_dimension
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = json!({ "model": self.client.config.embedding_model, "input": text });
        let value = self.client.send_json("embeddings", &body)?;
        value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| missing("data[0].embedding"))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| missing("numeric embedding values"))
            })
            .collect()
    }
}

pub struct LiveTranscriber {
    client: LiveClient,
}

impl LiveTranscriber {
    pub fn new(client: LiveClient) -> Self {
        Self { client }
    }
}

impl Transcriber for LiveTranscriber {
    fn transcribe_raw(&self, audio: &[u8], locale: &Locale) -> Result<String, ProviderError> {
        let response = self
            .client
            .post(&format!(
                "audio/transcriptions?language={}",
                locale.as_str()
            ))
            .header("content-type", "application/octet-stream")
            .body(audio.to_vec())
            .send()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        if response.status().as_u16() == 422 {
            return Err(ProviderError::UnrecognizedAudio);
        }
        if !response.status().is_success() {
            return Err(ProviderError::Unavailable(format!(
                "transcription returned {}",
                response.status()
            )));
        }
        let value: Value = response
            .json()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        match value["text"].as_str() {
            Some(text) if !text.trim().is_empty() => Ok(text.trim().to_string()),
            Some(_) => Err(ProviderError::UnrecognizedAudio),
            None => Err(missing("text")),
        }
    }
}

pub struct LiveSynthesizer {
    client: LiveClient,
}

impl LiveSynthesizer {
    pub fn new(client: LiveClient) -> Self {
        Self { client }
    }
}

impl Synthesizer for LiveSynthesizer {
    fn synthesize_raw(&self, text: &str, locale: &Locale) -> Result<Vec<u8>, ProviderError> {
        let response = self
            .client
            .post("audio/speech")
            .json(&json!({ "input": text, "language": locale.as_str(), "voice": "default" }))
            .send()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ProviderError::Unavailable(format!(
                "speech returned {}",
                response.status()
            )));
        }
        response
            .bytes()
            .map(|b| b.to_vec())
            .map_err(|e| ProviderError::Unavailable(e.to_string()))
    }
}

pub struct LiveTranslator {
    client: LiveClient,
}

impl LiveTranslator {
    pub fn new(client: LiveClient) -> Self {
        Self { client }
    }
}

impl Translator for LiveTranslator {
    fn translate(&self, text: &str, locales: &LocalePair) -> Result<String, ProviderError> {
        let body = json!({
            "text": [text],
            "source_lang": locales.source.as_str(),
            "target_lang": locales.target.as_str(),
        });
        let value = self.client.send_json("translate", &body)?;
        value["translations"][0]["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| missing("translations[0].text"))
    }
}
