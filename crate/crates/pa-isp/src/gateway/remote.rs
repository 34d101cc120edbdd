//! HTTPS chat and embedding providers speaking the OpenAI-compatible JSON
//! shape. The credential is read from a named environment variable at
//! construction time.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, GatewayError};

#[derive(Debug, Clone)]
pub struct RemoteProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key, e.g. `LLM_API_KEY`.
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
    /// Over-length inputs are head-truncated to this many characters.
    pub max_input_chars: Option<usize>,
}

fn read_credential(var: &Option<String>) -> Result<Option<String>, GatewayError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| {
            GatewayError::Config(format!("credential environment variable '{name}' is not set"))
        }),
    }
}

fn http_client(timeout_secs: u64) -> Result<reqwest::blocking::Client, GatewayError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| GatewayError::Config(format!("http client: {e}")))
}

fn post_json(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    api_key: &Option<String>,
    body: &Value,
) -> Result<Value, GatewayError> {
    let mut req = client.post(endpoint).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req
        .send()
        .map_err(|e| GatewayError::Transport { attempts: 1, message: e.to_string() })?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| GatewayError::Transport { attempts: 1, message: e.to_string() })?;
    if status.is_success() {
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Provider(format!("response is not JSON: {e}")))
    } else if status.as_u16() == 429 || status.is_server_error() {
        Err(GatewayError::Transport {
            attempts: 1,
            message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
        })
    } else {
        Err(GatewayError::Provider(format!(
            "HTTP {status}: {}",
            text.chars().take(200).collect::<String>()
        )))
    }
}

/// Extract the completion text from an OpenAI-style chat response body.
pub fn parse_chat_completion(body: &Value) -> Result<String, GatewayError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Provider("no choices[0].message.content in response".into()))
}

/// Extract raw embedding rows from an OpenAI-style embeddings response body.
pub fn parse_embedding_response(body: &Value) -> Result<Vec<Vec<f32>>, GatewayError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::Provider("no data[] in embeddings response".into()))?;
    data.iter()
        .map(|row| {
            row.get("embedding")
                .and_then(Value::as_array)
                .map(|vals| vals.iter().filter_map(Value::as_f64).map(|v| v as f32).collect())
                .ok_or_else(|| GatewayError::Provider("row without embedding[]".into()))
        })
        .collect()
}

pub struct RemoteChatProvider {
    config: RemoteProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    id: String,
}

impl RemoteChatProvider {
    pub fn new(config: RemoteProviderConfig) -> Result<Self, GatewayError> {
        let api_key = read_credential(&config.credential_env)?;
        let client = http_client(config.timeout_secs)?;
        let id = format!("openai_chat:{}", config.model);
        Ok(RemoteChatProvider { config, api_key, client, id })
    }

    fn truncated_user_text<'a>(&self, request: &'a ChatRequest) -> std::borrow::Cow<'a, str> {
        match self.config.max_input_chars {
            Some(limit) if request.user_text.chars().count() > limit => {
                log::warn!(
                    "tag '{}': input of {} chars head-truncated to {limit}",
                    request.request_tag,
                    request.user_text.chars().count()
                );
                request.user_text.chars().take(limit).collect::<String>().into()
            }
            _ => (&request.user_text).into(),
        }
    }
}

impl ChatProvider for RemoteChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": self.truncated_user_text(request)}));
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let response = post_json(&self.client, &self.config.endpoint, &self.api_key, &body)?;
        parse_chat_completion(&response)
    }

    fn provider_id(&self) -> &str {
        &self.id
    }
}

pub struct RemoteEmbeddingProvider {
    config: RemoteProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    dim: usize,
    id: String,
}

impl RemoteEmbeddingProvider {
    pub fn new(config: RemoteProviderConfig, dim: usize) -> Result<Self, GatewayError> {
        let api_key = read_credential(&config.credential_env)?;
        let client = http_client(config.timeout_secs)?;
        let id = format!("openai_embedding:{}", config.model);
        Ok(RemoteEmbeddingProvider { config, api_key, client, dim, id })
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let truncated: Vec<String> = texts
            .iter()
            .map(|t| match self.config.max_input_chars {
                Some(limit) if t.chars().count() > limit => t.chars().take(limit).collect(),
                _ => t.clone(),
            })
            .collect();
        let body = json!({"model": self.config.model, "input": truncated});
        let response = post_json(&self.client, &self.config.endpoint, &self.api_key, &body)?;
        let rows = parse_embedding_response(&response)?;
        if rows.len() != texts.len() {
            return Err(GatewayError::Provider(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                rows.len()
            )));
        }
        Ok(rows
            .into_iter()
            .map(|values| EmbeddingVector::normalized(values, self.id.clone()))
            .collect())
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_completion_body_parses() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": "a summary"}}]
        });
        assert_eq!(parse_chat_completion(&body).unwrap(), "a summary");
        assert!(parse_chat_completion(&json!({"choices": []})).is_err());
    }

    #[test]
    fn embedding_body_parses() {
        let body = json!({
            "data": [
                {"embedding": [1.0, 0.0]},
                {"embedding": [0.0, 1.0]}
            ]
        });
        let rows = parse_embedding_response(&body).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(parse_embedding_response(&json!({})).is_err());
    }

    #[test]
    fn missing_credential_env_is_a_config_error() {
        let config = RemoteProviderConfig {
            endpoint: "http://localhost:1/v1/chat/completions".into(),
            model: "test".into(),
            credential_env: Some("PA_ISP_TEST_UNSET_KEY".into()),
            timeout_secs: 1,
            max_input_chars: None,
        };
        assert!(matches!(RemoteChatProvider::new(config), Err(GatewayError::Config(_))));
    }

    #[test]
    fn serves_completion_over_local_http() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let _ = stream.read(&mut buf).unwrap();
            let json = r#"{"choices":[{"message":{"content":"short summary"}}]}"#;
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{json}",
                json.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        });
        let config = RemoteProviderConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            model: "test".into(),
            credential_env: None,
            timeout_secs: 5,
            max_input_chars: Some(10_000),
        };
        let provider = RemoteChatProvider::new(config).unwrap();
        let text = provider.complete(&ChatRequest::new("summarize", "sys", "case text")).unwrap();
        assert_eq!(text, "short summary");
        server.join().unwrap();
    }
}
